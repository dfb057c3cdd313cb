//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stdc_core::detail::LabelMap;
use stdc_core::{ConvSpec, Shape, Tensor};

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0f32..1.0))
}

/// Direct quadruple-loop convolution in f64.
pub fn conv_oracle(input: &Tensor, spec: &ConvSpec, w: &Tensor, bias: Option<&[f32]>) -> Vec<f64> {
    let is = input.shape();
    let os = spec.output_shape(is);
    let mut out = Vec::with_capacity(os.numel());
    for b in 0..os.batch {
        for o in 0..os.channels {
            for y in 0..os.height {
                for x in 0..os.width {
                    let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                    for c in 0..is.channels {
                        for ky in 0..spec.kernel {
                            for kx in 0..spec.kernel {
                                let iy = (y * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (x * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= is.height as isize || ix >= is.width as isize {
                                    continue;
                                }
                                acc += w.at(o, c, ky, kx) as f64
                                    * input.at(b, c, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// max |a - o| / max |o| over a whole output tensor.
pub fn rel_error(actual: &[f32], oracle: &[f64]) -> f64 {
    assert_eq!(actual.len(), oracle.len());
    let scale = oracle.iter().fold(0f64, |m, v| m.max(v.abs()));
    let err = actual
        .iter()
        .zip(oracle)
        .fold(0f64, |m, (&a, &o)| m.max((a as f64 - o).abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// A random small convolution instance: dims <= 8, kernel 1 or 3, stride 1 or 2.
pub struct ConvCase {
    pub input: Tensor,
    pub spec: ConvSpec,
    pub weights: Tensor,
    pub bias: Option<Vec<f32>>,
}

pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    let kernel = if rng.gen_bool(0.5) { 1 } else { 3 };
    let stride = rng.gen_range(1..=2);
    let mut spec = ConvSpec::new(rng.gen_range(1..=8), rng.gen_range(1..=8), kernel, stride);
    spec.padding = rng.gen_range(0..=kernel / 2);
    let min = kernel.saturating_sub(2 * spec.padding).max(1);
    let shape = Shape::new(
        rng.gen_range(1..=2),
        spec.in_channels,
        rng.gen_range(min..=8),
        rng.gen_range(min..=8),
    );
    let bias = rng.gen_bool(0.5).then(|| {
        spec.has_bias = true;
        (0..spec.out_channels).map(|_| rng.gen_range(-1.0..1.0)).collect()
    });
    let [a, b, c, d] = spec.weight_dims();
    ConvCase {
        input: random_tensor(rng, shape),
        weights: random_tensor(rng, Shape::new(a, b, c, d)),
        spec,
        bias,
    }
}

/// A pixel is a boundary pixel iff some in-bounds 8-neighbour has a different id.
pub fn neighbour_difference(labels: &LabelMap) -> Vec<bool> {
    let (h, w) = (labels.height, labels.width);
    let mut out = Vec::with_capacity(labels.ids.len());
    for b in 0..labels.batch {
        for y in 0..h {
            for x in 0..w {
                let c = labels.at(b, y, x);
                let mut differs = false;
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        differs |= labels.at(b, ny, nx) != c;
                    }
                }
                out.push(differs);
            }
        }
    }
    out
}

/// Random label map: either per-pixel noise or a few overlapping rectangles.
pub fn random_labels(rng: &mut ChaCha8Rng, max_side: usize) -> LabelMap {
    let (h, w) = (rng.gen_range(1..=max_side), rng.gen_range(1..=max_side));
    let classes = rng.gen_range(1..=6u32);
    if rng.gen_bool(0.3) {
        let ids: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..classes)).collect();
        return LabelMap::new(1, h, w, ids).unwrap();
    }
    let mut ids = vec![rng.gen_range(0..classes); h * w];
    for _ in 0..rng.gen_range(0..6) {
        let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (y1, x1) = (rng.gen_range(y0..h) + 1, rng.gen_range(x0..w) + 1);
        let id = rng.gen_range(0..classes);
        for y in y0..y1 {
            for x in x0..x1 {
                ids[y * w + x] = id;
            }
        }
    }
    LabelMap::new(1, h, w, ids).unwrap()
}
