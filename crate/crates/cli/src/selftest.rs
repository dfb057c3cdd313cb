//! Checks that need no external data: cost totals, closed-form module
//! size, receptive fields, convolution against direct summation, loss
//! identities and gradients, detail ground truth, weight files and the
//! segmentation shape contract.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdc_core::analyzer::Tracer;
use stdc_core::detail::LabelMap;
use stdc_core::io::{decode_weights, encode_weights};
use stdc_core::losses::{bce_loss, detail_loss, dice_loss, grad_check, DICE_EPS};
use stdc_core::ops::conv2d;
use stdc_core::{
    generate_detail_gt, laplacian_response, network_cost, receptive_field, ConvSpec, CostReport, DetailConfig,
    InferOptions, NetConfig, SegConfig, SegNet, Shape, StdcModuleSpec, StdcNet, Tensor, WeightStore,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cost_totals() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, cfg, params, macs) in [
        ("stdc1", NetConfig::stdc1(1000), 8.44e6, 813e6),
        ("stdc2", NetConfig::stdc2(1000), 12.47e6, 1446e6),
    ] {
        let r = network_cost(&StdcNet::build(cfg).map_err(|e| e.to_string())?, 224, 224).map_err(|e| e.to_string())?;
        let (p, m) = (r.total_params as f64, r.total_macs as f64);
        ok &= ((p - params) / params).abs() <= 0.01 && ((m - macs) / macs).abs() <= 0.02;
        lines.push(format!("{name} {:.2}M params, {:.0}M MACs", p / 1e6, m / 1e6));
    }
    ensure(ok, lines.join("; "))
}

fn closed_form() -> Check {
    let mut checked = 0;
    for m in (16..=1024).step_by(16) {
        for n_ch in (16..=1024).step_by(16) {
            for n in 2..=6 {
                let spec = StdcModuleSpec::new(m, n_ch, n, 1);
                if spec.validate().is_err() {
                    continue;
                }
                let mut t = Tracer::new();
                let x = t.input(Shape::new(1, m, 4, 4));
                spec.run(&mut t, "m", &x).map_err(|e| e.to_string())?;
                let traced = CostReport::from_records(x.shape, t.into_records()).kernel_params_under("m.");
                if traced != spec.param_count_closed_form() {
                    return Err(format!("{spec:?}: traced {traced}, closed form {}", spec.param_count_closed_form()));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} module specs"))
}

fn receptive_fields() -> Check {
    let rf = |s| -> Result<Vec<usize>, String> {
        Ok(receptive_field(&StdcModuleSpec::new(64, 256, 4, s))
            .map_err(|e| e.to_string())?
            .iter()
            .map(|r| r.r)
            .collect())
    };
    let (a, b) = (rf(1)?, rf(2)?);
    ensure(a == [1, 3, 5, 7] && b == [3, 3, 7, 11], format!("stride 1 {a:?}, stride 2 {b:?}"))
}

fn direct_conv(x: &Tensor, spec: &ConvSpec, w: &Tensor) -> Vec<f64> {
    let is = x.shape();
    let os = spec.output_shape(is);
    let mut out = vec![0f64; os.numel()];
    let mut i = 0;
    for b in 0..os.batch {
        for o in 0..os.channels {
            for y in 0..os.height {
                for xo in 0..os.width {
                    for c in 0..is.channels {
                        for ky in 0..spec.kernel {
                            for kx in 0..spec.kernel {
                                let iy = (y * spec.stride + ky).checked_sub(spec.padding);
                                let ix = (xo * spec.stride + kx).checked_sub(spec.padding);
                                if let (Some(iy), Some(ix)) = (iy, ix) {
                                    if iy < is.height && ix < is.width {
                                        out[i] += w.at(o, c, ky, kx) as f64 * x.at(b, c, iy, ix) as f64;
                                    }
                                }
                            }
                        }
                    }
                    i += 1;
                }
            }
        }
    }
    out
}

fn conv_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0f64;
    let cases = 1000;
    for _ in 0..cases {
        let k = if rng.gen_bool(0.5) { 1 } else { 3 };
        let spec = ConvSpec::new(rng.gen_range(1..=8), rng.gen_range(1..=8), k, rng.gen_range(1..=2));
        let s = Shape::new(1, spec.in_channels, rng.gen_range(1..=8), rng.gen_range(1..=8));
        let x = Tensor::from_fn(s, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let [a, b, c, d] = spec.weight_dims();
        let w = Tensor::from_fn(Shape::new(a, b, c, d), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let got = conv2d(&x, &spec, &w, None).map_err(|e| e.to_string())?;
        let want = direct_conv(&x, &spec, &w);
        let scale = want.iter().fold(0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let err = got.data().iter().zip(&want).fold(0f64, |m, (&g, &o)| m.max((g as f64 - o).abs()));
        worst = worst.max(err / scale);
    }
    ensure(worst < 1e-5, format!("{cases} instances, max relative error {worst:.1e}"))
}

fn loss_identities() -> Check {
    let g = [1.0f64, 0.0, 1.0, 1.0];
    let same = dice_loss(&g, &g, None, DICE_EPS).map_err(|e| e.to_string())?.0;
    let zero = dice_loss(&[0.0f64; 4], &[0.0; 4], None, DICE_EPS).map_err(|e| e.to_string())?.0;
    let hand = detail_loss(&[0.5f64; 4], &[1.0, 1.0, 0.0, 0.0], None, DICE_EPS).map_err(|e| e.to_string())?;
    let want = 0.25 + std::f64::consts::LN_2;
    ensure(
        same.abs() <= 1e-6 && zero.abs() <= 1e-6 && (hand.dice - 0.25).abs() <= 1e-6 && (hand.total - want).abs() <= 1e-6,
        format!("dice(p=g) {same}, dice(0,0) {zero}, hand case {:.6}", hand.total),
    )
}

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    for side in [1, 4, 9, 16] {
        let n = side * side;
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.9)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
        for c in [
            grad_check(|q| dice_loss(q, &g, None, DICE_EPS), &p, 1e-4),
            grad_check(|q| bce_loss(q, &g, None), &p, 1e-4),
            grad_check(|q| detail_loss(q, &g, None, DICE_EPS).map(|v| (v.total, v.gradient)), &p, 1e-4),
        ] {
            worst = worst.max(c.map_err(|e| e.to_string())?.max_rel_error);
        }
    }
    ensure(worst < 1e-6, format!("max relative error {worst:.1e}"))
}

fn detail_ground_truth() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = DetailConfig::default();
    for case in 0..100 {
        let (h, w) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
        let classes = rng.gen_range(1..=4);
        let ids: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..classes)).collect();
        let labels = LabelMap::new(1, h, w, ids).map_err(|e| e.to_string())?;
        let resp = laplacian_response(&labels, 1, &cfg).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let c = labels.at(0, y, x);
                let differs = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                    .any(|ny| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|nx| labels.at(0, ny, nx) != c));
                if differs != (resp.at(0, 0, y, x) > cfg.binarize_threshold) {
                    return Err(format!("map {case}: pixel ({y}, {x}) disagrees with the neighbour oracle"));
                }
            }
        }
        let mut perm: Vec<u32> = (0..255).collect();
        perm.shuffle(&mut rng);
        let mut relabelled = labels.clone();
        relabelled.ids.iter_mut().for_each(|v| *v = perm[*v as usize]);
        let a = generate_detail_gt(&labels, &cfg).map_err(|e| e.to_string())?;
        let b = generate_detail_gt(&relabelled, &cfg).map_err(|e| e.to_string())?;
        if !a.map.bit_eq(&b.map) {
            return Err(format!("map {case}: ground truth depends on id values"));
        }
    }
    Ok("100 random maps".into())
}

fn weight_file() -> Check {
    let net = StdcNet::build(NetConfig::stdc1(10)).map_err(|e| e.to_string())?;
    let store = WeightStore::random(&net.schema(), 5);
    let bytes = encode_weights(&store);
    let back = decode_weights(&bytes).map_err(|e| e.to_string())?;
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    ensure(
        encode_weights(&back) == bytes && decode_weights(&bad).is_err() && decode_weights(&bytes[..bytes.len() - 1]).is_err(),
        format!("{} entries, {} bytes", store.len(), bytes.len()),
    )
}

fn shape_contract() -> Check {
    let net = SegNet::build(SegConfig::cityscapes(NetConfig::stdc1(1000))).map_err(|e| e.to_string())?;
    let weights = WeightStore::random(&net.schema(), 6);
    let (h, w) = (128, 256);
    let x = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, xx| ((y + 2 * xx + c) % 11) as f32 / 11.0);
    let a = net.infer(&weights, &x, InferOptions { detail_head: true }).map_err(|e| e.to_string())?;
    let b = net.infer(&weights, &x, InferOptions { detail_head: false }).map_err(|e| e.to_string())?;
    let detail = a.detail.as_ref().map(|d| d.probs.shape());
    ensure(
        a.logits.shape() == Shape::new(1, 19, h, w)
            && a.features.stage3.shape().height == h / 8
            && a.features.stage5.shape().width == w / 32
            && detail == Some(Shape::new(1, 1, h / 8, w / 8))
            && a.logits.bit_eq(&b.logits),
        format!("logits {}, detail head detached", a.logits.shape()),
    )
}

/// Runs every check and prints one line each; true when all pass.
pub fn run() -> bool {
    let checks: [(&str, fn() -> Check); 9] = [
        ("cost totals at 224x224", cost_totals),
        ("module closed form", closed_form),
        ("receptive fields", receptive_fields),
        ("convolution vs direct sum", conv_oracle),
        ("loss identities", loss_identities),
        ("loss gradients", gradients),
        ("detail ground truth", detail_ground_truth),
        ("weight file", weight_file),
        ("segmentation shapes", shape_contract),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let result = check();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(msg) => println!("ok    {name}: {msg} ({ms:.0} ms)"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} ({ms:.0} ms)");
            }
        }
    }
    println!("selftest: {} passed, {failed} failed", checks.len() - failed);
    failed == 0
}
