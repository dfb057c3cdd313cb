use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdc_core::io;
use stdc_core::losses::{bce_loss, detail_loss, dice_loss, grad_check, DICE_EPS};
use stdc_core::{
    generate_detail_gt, network_cost, ops, receptive_field, ConfigFile, InferOptions, NetConfig, SegNet, Shape,
    StdcNet, Tensor, WeightStore,
};

use crate::NetArgs;

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(ConfigFile::default()),
    }
}

impl NetArgs {
    fn resolve(&self) -> anyhow::Result<ConfigFile> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(name) = &self.net {
            cfg.backbone = NetConfig::preset(name, cfg.backbone.num_classes)?;
            cfg.seg.backbone = cfg.backbone.clone();
        }
        Ok(cfg)
    }
}

pub fn describe(net: &NetArgs, (h, w): (usize, usize), seg: bool, csv: bool) -> anyhow::Result<()> {
    let cfg = net.resolve()?;
    let report = if seg {
        network_cost(&SegNet::build(cfg.seg)?, h, w)?
    } else {
        network_cost(&StdcNet::build(cfg.backbone)?, h, w)?
    };
    if csv {
        print!("{}", report.to_csv());
    } else {
        print!("{report}");
    }
    Ok(())
}

pub fn rf(net: &NetArgs, stage: usize, csv: bool) -> anyhow::Result<()> {
    let cfg = net.resolve()?;
    if !(3..=5).contains(&stage) {
        bail!("unknown stage {stage}; STDC stages with modules are 3, 4 and 5");
    }
    let specs = &cfg.backbone.module_specs()[stage - 3];
    let n = cfg.backbone.num_blocks;
    let mut header = vec!["module".to_string(), "stride".to_string()];
    header.extend((1..=n).map(|i| format!("block{i}")));
    let mut rows = vec![header];
    for (i, spec) in specs.iter().enumerate() {
        let mut row = vec![format!("stage{stage}.{i}"), spec.stride.to_string()];
        row.extend(receptive_field(spec)?.iter().map(|r| r.r.to_string()));
        rows.push(row);
    }
    if csv {
        for r in rows {
            println!("{}", r.join(","));
        }
        return Ok(());
    }
    println!(
        "stage {stage}: {} modules, {} channels, {n} blocks; RF in pixels of the module input",
        specs.len(),
        specs[0].out_channels
    );
    for r in rows {
        let cells: Vec<String> = r.iter().enumerate().map(|(i, c)| if i == 0 { format!("{c:<10}") } else { format!("{c:>7}") }).collect();
        println!("{}", cells.join("").trim_end());
    }
    Ok(())
}

pub fn gen_detail(
    labels: &Path,
    out: &Path,
    threshold: Option<f32>,
    fusion: Option<Vec<f32>>,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let mut detail = load_config(config)?.detail;
    if let Some(t) = threshold {
        detail.threshold = t;
    }
    if let Some(f) = fusion {
        detail.fusion_weights = f;
    }
    detail.validate()?;
    let map = io::load_labels(labels, None)?;
    let gt = generate_detail_gt(&map, &detail)?;
    io::save_binary_map_png(out, &gt.map, 0)?;
    let marked = gt.map.data().iter().filter(|&&v| v > 0.5).count();
    println!(
        "{}: {marked} of {} pixels marked as detail",
        out.display(),
        gt.map.data().len()
    );
    Ok(())
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["weights", "seed"])))]
pub struct InferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight file.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Use seeded random weights instead of a weight file.
    #[arg(long)]
    seed: Option<u64>,
    /// RGB PNG.
    #[arg(long)]
    input: PathBuf,
    /// Label map output (indexed PNG, original image size).
    #[arg(long)]
    output: PathBuf,
    /// Detail probability map output (grayscale PNG).
    #[arg(long)]
    detail_output: Option<PathBuf>,
    #[arg(long)]
    skip_detail_head: bool,
    /// Network input size HxW; defaults to the configured scale.
    #[arg(long, value_parser = crate::parse_resolution)]
    resolution: Option<(usize, usize)>,
}

fn to_pixels(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn infer(args: &InferArgs) -> anyhow::Result<()> {
    if args.skip_detail_head && args.detail_output.is_some() {
        bail!("--detail-output needs the detail head; drop --skip-detail-head");
    }
    let cfg = load_config(args.config.as_deref())?;
    let (h, w) = args.resolution.unwrap_or(cfg.seg.scale.input_size());
    let net = SegNet::build(cfg.seg)?;
    let schema = net.schema();
    let weights = match (&args.weights, args.seed) {
        (Some(p), _) => io::load_weights_for(p, &schema)?,
        (None, Some(seed)) => WeightStore::random(&schema, seed),
        (None, None) => unreachable!("clap requires one weight source"),
    };
    let raw = io::load_image(&args.input, &cfg.preprocess, None)?;
    let (oh, ow) = (raw.shape().height, raw.shape().width);
    let image = if (oh, ow) == (h, w) { raw } else { ops::bilinear_upsample(&raw, h, w)? };

    let start = Instant::now();
    let out = net.infer(&weights, &image, InferOptions { detail_head: !args.skip_detail_head })?;
    let elapsed = start.elapsed();

    let labels = if (oh, ow) == (h, w) {
        out.labels
    } else {
        ops::argmax_channels(&ops::bilinear_upsample(&out.logits, oh, ow)?)
    };
    io::save_label_png(&args.output, ow, oh, &labels)?;
    if let (Some(path), Some(d)) = (&args.detail_output, &out.detail) {
        let probs = ops::bilinear_upsample(&d.probs, oh, ow)?;
        io::save_gray_png(path, ow, oh, &to_pixels(&probs))?;
    }
    println!(
        "{}: {ow}x{oh} labels from a {w}x{h} forward pass in {:.1} ms",
        args.output.display(),
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

pub fn gradcheck(tol: f64, max_side: usize, step: f64, seed: u64) -> anyhow::Result<bool> {
    if max_side == 0 || !(step > 0.0) || !(tol > 0.0) {
        bail!("--max-side, --step and --tol must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0f64; 3];
    let mut maps = 0;
    for h in 1..=max_side {
        for w in [1, max_side.div_ceil(2), max_side] {
            let n = h * w;
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.9)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
            let checks = [
                grad_check(|q| dice_loss(q, &g, None, DICE_EPS), &p, step)?,
                grad_check(|q| bce_loss(q, &g, None), &p, step)?,
                grad_check(|q| detail_loss(q, &g, None, DICE_EPS).map(|v| (v.total, v.gradient)), &p, step)?,
            ];
            for (slot, c) in worst.iter_mut().zip(&checks) {
                *slot = slot.max(c.max_rel_error);
            }
            maps += 1;
        }
    }
    println!("{maps} random maps up to {max_side}x{max_side}, step {step:e}, 64-bit");
    let mut ok = true;
    for (name, e) in ["dice", "bce", "dice+bce"].iter().zip(worst) {
        let pass = e <= tol;
        ok &= pass;
        println!("{name:<9} max relative error {e:.3e}  {}", if pass { "PASS" } else { "FAIL" });
    }
    Ok(ok)
}

pub fn bench(net: &NetArgs, (h, w): (usize, usize), seg: bool, iterations: u32) -> anyhow::Result<()> {
    let cfg = net.resolve()?;
    let image = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        ((y * 7 + x * 3 + c) % 17) as f32 / 17.0 - 0.5
    });
    let forward: Box<dyn Fn() -> stdc_core::Result<Tensor> + Sync> = if seg {
        let model = SegNet::build(cfg.seg)?;
        let weights = WeightStore::random(&model.schema(), 0);
        Box::new(move || Ok(model.infer(&weights, &image, InferOptions { detail_head: false })?.logits))
    } else {
        let model = StdcNet::build(cfg.backbone)?;
        let weights = WeightStore::random(&model.schema(), 0);
        Box::new(move || model.forward_classify(&weights, &image))
    };
    let time = |f: &(dyn Fn() -> stdc_core::Result<Tensor> + Sync)| -> anyhow::Result<(f64, Tensor)> {
        let out = f()?;
        let mut best = f64::INFINITY;
        for _ in 0..iterations {
            let start = Instant::now();
            f()?;
            best = best.min(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok((best, out))
    };
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let (t1, out1) = single.install(|| time(&*forward))?;
    let (tn, outn) = time(&*forward)?;
    let threads = rayon::current_num_threads();
    let kind = if seg { "segmentation" } else { "classifier" };
    println!("{kind} forward at {h}x{w}, best of {iterations}");
    println!("single-thread  {t1:>10.1} ms");
    println!("{:<14} {tn:>10.1} ms", format!("{threads} threads"));
    println!("outputs bit-identical across thread counts: {}", out1.bit_eq(&outn));
    Ok(())
}

