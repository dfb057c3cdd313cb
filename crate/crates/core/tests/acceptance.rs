//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdc_core::analyzer::Tracer;
use stdc_core::losses::{bce_loss, detail_loss, dice_loss, grad_check, DICE_EPS};
use stdc_core::ops::conv2d;
use stdc_core::{
    generate_detail_gt, laplacian_response, network_cost, receptive_field, CostReport, DetailConfig, InferOptions,
    NetConfig, SegConfig, SegNet, Shape, StdcModuleSpec, StdcNet, WeightStore,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    ((value - target) / target).abs() <= tol
}

fn params() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, cfg, target) in [
        ("STDC1", NetConfig::stdc1(1000), 8.44e6),
        ("STDC2", NetConfig::stdc2(1000), 12.47e6),
    ] {
        let r = network_cost(&StdcNet::build(cfg).unwrap(), 224, 224).unwrap();
        let p = r.total_params as f64;
        pass &= within(p, target, 0.01);
        parts.push(format!("{name} {:.3}M ({:+.2}% vs {:.2}M)", p / 1e6, 100.0 * (p - target) / target, target / 1e6));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(1);
    outcome(pass, format!("{} in {:.0?}, tol 1%", parts.join(", "), elapsed))
}

fn macs() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, cfg, target) in [
        ("STDC1", NetConfig::stdc1(1000), 813e6),
        ("STDC2", NetConfig::stdc2(1000), 1446e6),
    ] {
        let r = network_cost(&StdcNet::build(cfg).unwrap(), 224, 224).unwrap();
        let m = r.total_macs as f64;
        pass &= within(m, target, 0.02);
        parts.push(format!("{name} {:.1}M ({:+.2}% vs {:.0}M)", m / 1e6, 100.0 * (m - target) / target, target / 1e6));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(1);
    outcome(pass, format!("{} in {:.0?}, tol 2%", parts.join(", "), elapsed))
}

fn closed_form() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut mismatches) = (0, Vec::new());
    for m in (16..=1024).step_by(16) {
        for n_ch in (16..=1024).step_by(16) {
            for n in 2..=6 {
                let spec = StdcModuleSpec::new(m, n_ch, n, 1);
                if spec.validate().is_err() {
                    continue;
                }
                let mut t = Tracer::new();
                let x = t.input(Shape::new(1, m, 4, 4));
                spec.run(&mut t, "m", &x).unwrap();
                let traced = CostReport::from_records(x.shape, t.into_records()).kernel_params_under("m.");
                if traced != spec.param_count_closed_form() {
                    mismatches.push(spec);
                }
                checked += 1;
            }
        }
    }
    outcome(
        mismatches.is_empty() && checked > 0,
        format!(
            "{checked} legal (M, N, n) specs, {} mismatches, (64, 256, 4) = {}, {:.1?}",
            mismatches.len(),
            StdcModuleSpec::new(64, 256, 4, 1).param_count_closed_form(),
            start.elapsed()
        ),
    )
}

fn receptive_fields() -> Outcome {
    let rf = |s| -> Vec<usize> {
        receptive_field(&StdcModuleSpec::new(64, 256, 4, s))
            .unwrap()
            .iter()
            .map(|r| r.r)
            .collect()
    };
    let (s1, s2) = (rf(1), rf(2));
    outcome(
        s1 == [1, 3, 5, 7] && s2 == [3, 3, 7, 11],
        format!("stride 1: {s1:?}, stride 2: {s2:?}"),
    )
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 2000;
    let mut worst = 0f64;
    for _ in 0..cases {
        let c = common::random_conv_case(&mut rng);
        let got = conv2d(&c.input, &c.spec, &c.weights, c.bias.as_deref()).unwrap();
        let want = common::conv_oracle(&c.input, &c.spec, &c.weights, c.bias.as_deref());
        worst = worst.max(common::rel_error(got.data(), &want));
    }
    outcome(worst < 1e-5, format!("{cases} random instances, max relative error {worst:.2e}, tol 1e-5"))
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0f64;
    for _ in 0..100 {
        let g: Vec<f64> = (0..rng.gen_range(1..=256)).map(|_| rng.gen_bool(0.4) as u8 as f64).collect();
        worst = worst.max(dice_loss(&g, &g, None, DICE_EPS).unwrap().0.abs());
    }
    let zero = dice_loss(&[0.0f64; 16], &[0.0; 16], None, DICE_EPS).unwrap().0;
    let hand = detail_loss(&[0.5f64; 4], &[1.0, 1.0, 0.0, 0.0], None, DICE_EPS).unwrap();
    let target = 0.25 + std::f64::consts::LN_2;
    let pass = worst <= 1e-6
        && zero.abs() <= 1e-6
        && (hand.dice - 0.25).abs() <= 1e-6
        && (hand.total - target).abs() <= 1e-6;
    outcome(
        pass,
        format!(
            "dice(p=g) max {worst:.1e}, dice(0,0) = {zero}, hand dice {:.6}, total {:.6} (want {target:.6})",
            hand.dice, hand.total
        ),
    )
}

fn grad_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = [0f64; 3];
    let mut maps = 0;
    for h in 1..=16 {
        for w in [1, 3, 8, 16] {
            let n = h * w;
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.9)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
            let checks = [
                grad_check(|q| dice_loss(q, &g, None, DICE_EPS), &p, 1e-4),
                grad_check(|q| bce_loss(q, &g, None), &p, 1e-4),
                grad_check(|q| detail_loss(q, &g, None, DICE_EPS).map(|v| (v.total, v.gradient)), &p, 1e-4),
            ];
            for (slot, c) in worst.iter_mut().zip(checks) {
                *slot = slot.max(c.unwrap().max_rel_error);
            }
            maps += 1;
        }
    }
    outcome(
        worst.iter().all(|&e| e < 1e-6),
        format!(
            "{maps} maps up to 16x16, max relative error dice {:.1e}, bce {:.1e}, sum {:.1e}, tol 1e-6, {:.1?}",
            worst[0],
            worst[1],
            worst[2],
            start.elapsed()
        ),
    )
}

fn detail_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = DetailConfig::default();
    let (maps, mut oracle_fail, mut perm_fail) = (200, 0, 0);
    for _ in 0..maps {
        let labels = common::random_labels(&mut rng, 48);
        let resp = laplacian_response(&labels, 1, &cfg).unwrap();
        let mask: Vec<bool> = resp.data().iter().map(|&v| v > cfg.binarize_threshold).collect();
        oracle_fail += (mask != common::neighbour_difference(&labels)) as usize;

        let mut ids: Vec<u32> = (0..255).collect();
        rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
        let mut relabelled = labels.clone();
        relabelled.ids.iter_mut().for_each(|v| *v = ids[*v as usize]);
        let a = generate_detail_gt(&labels, &cfg).unwrap();
        let b = generate_detail_gt(&relabelled, &cfg).unwrap();
        perm_fail += !a.map.bit_eq(&b.map) as usize;
    }
    outcome(
        oracle_fail == 0 && perm_fail == 0,
        format!("{maps} random maps: {oracle_fail} oracle mismatches, {perm_fail} permutation mismatches"),
    )
}

fn shape_contract() -> Outcome {
    let start = Instant::now();
    let net = SegNet::build(SegConfig::cityscapes(NetConfig::stdc2(1000))).unwrap();
    let (h, w) = net.config().scale.input_size();
    let weights = WeightStore::random(&net.schema(), 1);
    let image = common::random_tensor(&mut ChaCha8Rng::seed_from_u64(3), Shape::new(1, 3, h, w));
    let with = net.infer(&weights, &image, InferOptions { detail_head: true }).unwrap();
    let without = net.infer(&weights, &image, InferOptions { detail_head: false }).unwrap();
    let f = &with.features;
    let dims = |s: Shape| (s.height, s.width);
    let detail = with.detail.as_ref().map(|d| d.probs.shape());
    let pass = with.logits.shape() == Shape::new(1, 19, h, w)
        && dims(f.stage3.shape()) == (h / 8, w / 8)
        && dims(f.stage4.shape()) == (h / 16, w / 16)
        && dims(f.stage5.shape()) == (h / 32, w / 32)
        && detail == Some(Shape::new(1, 1, h / 8, w / 8))
        && with.logits.is_finite()
        && with.logits.bit_eq(&without.logits);
    outcome(
        pass,
        format!(
            "logits {}, stages {} / {} / {}, detail {}, logits bit-identical without detail head: {}, {:.1?}",
            with.logits.shape(),
            f.stage3.shape(),
            f.stage4.shape(),
            f.stage5.shape(),
            detail.map_or("none".to_string(), |s| s.to_string()),
            with.logits.bit_eq(&without.logits),
            start.elapsed()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("parameter totals at 224x224", params),
        ("MAC totals at 224x224", macs),
        ("module closed form vs layer enumeration", closed_form),
        ("per-block receptive fields", receptive_fields),
        ("convolution vs direct summation", conv_oracle),
        ("loss identities", loss_identities),
        ("loss gradients vs finite differences", grad_checks),
        ("detail ground truth vs neighbour oracle", detail_oracle),
        ("STDC2-Seg50 shape contract", shape_contract),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.pass as usize;
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!(
        "INFO [10] segmentation accuracy and frame rates need trained weights and specific GPUs; not reproduced. \
         `stdc bench` reports CPU latency without a target."
    );
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
