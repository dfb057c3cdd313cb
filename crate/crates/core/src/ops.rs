//! Forward operators every network layer is built from.
//!
//! All operators are pure. Convolution splits work across rayon threads in
//! fixed-size output-channel chunks, so results are bit-identical for any
//! thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Batch-norm epsilon used throughout the networks.
pub const BN_EPS: f32 = 1e-5;

/// Output channels computed per parallel task in `conv2d`.
const CONV_CHANNEL_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Bias-free convolution with "same" padding `kernel / 2`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            has_bias: false,
        }
    }

    pub fn with_bias(self) -> Self {
        Self {
            has_bias: true,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("convolution channels must be >= 1".into()));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "convolution kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("convolution stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Kernel parameters only.
    pub fn kernel_params(&self) -> u64 {
        (self.out_channels * self.in_channels * self.kernel * self.kernel) as u64
    }

    pub fn output_extent(&self, extent: usize) -> usize {
        pooled_extent(extent, self.kernel, self.stride, self.padding)
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        input
            .with_channels(self.out_channels)
            .with_spatial(self.output_extent(input.height), self.output_extent(input.width))
    }
}

fn pooled_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding).saturating_sub(kernel) / stride + 1
}

/// Inference-mode batch normalization parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNormParams {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{} vs {}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&[f32]>,
) -> Result<Tensor> {
    spec.validate()?;
    let is = input.shape();
    if is.channels != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input channels {} != in_channels {}",
                is.channels, spec.in_channels
            ),
        ));
    }
    let wd = weights.shape().dims();
    let expected = spec.weight_dims();
    for (i, name) in ["out_channels", "in_channels", "kernel height", "kernel width"]
        .iter()
        .enumerate()
    {
        if wd[i] != expected[i] {
            return Err(Error::shape(
                "conv2d",
                format!("weight {name} is {}, expected {}", wd[i], expected[i]),
            ));
        }
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} != out_channels {}", b.len(), spec.out_channels),
            ));
        }
    }
    if is.height + 2 * spec.padding < spec.kernel || is.width + 2 * spec.padding < spec.kernel {
        return Err(Error::shape(
            "conv2d",
            format!("input {}x{} smaller than kernel", is.height, is.width),
        ));
    }

    let os = spec.output_shape(is);
    let k_len = spec.in_channels * spec.kernel * spec.kernel;
    let p_len = os.plane();
    let direct = spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;
    let mut out = vec![0f32; os.numel()];
    let mut col = if direct { Vec::new() } else { vec![0f32; k_len * p_len] };

    for b in 0..is.batch {
        let src = input.image(b);
        let cols: &[f32] = if direct {
            src
        } else {
            im2col(src, is, spec, os, &mut col);
            &col
        };
        let out_img = &mut out[b * os.image()..(b + 1) * os.image()];
        out_img
            .par_chunks_mut(CONV_CHANNEL_CHUNK * p_len)
            .zip(weights.data().par_chunks(CONV_CHANNEL_CHUNK * k_len))
            .for_each(|(dst, w)| {
                let rows = w.len() / k_len;
                // SAFETY: the slices are sized rows x k_len, k_len x p_len and
                // rows x p_len, matching the strides passed below.
                unsafe {
                    matrixmultiply::sgemm(
                        rows,
                        k_len,
                        p_len,
                        1.0,
                        w.as_ptr(),
                        k_len as isize,
                        1,
                        cols.as_ptr(),
                        p_len as isize,
                        1,
                        0.0,
                        dst.as_mut_ptr(),
                        p_len as isize,
                        1,
                    );
                }
            });
        if let Some(bias) = bias {
            for (plane, &bv) in out_img.chunks_mut(p_len).zip(bias) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::new(os, out)
}

/// Unfolds one image into a (C*k*k) x (H_out*W_out) column matrix.
fn im2col(src: &[f32], is: Shape, spec: &ConvSpec, os: Shape, col: &mut [f32]) {
    let k = spec.kernel;
    let p_len = os.plane();
    let (h, w) = (is.height as isize, is.width as isize);
    let pad = spec.padding as isize;
    let stride = spec.stride as isize;
    col.par_chunks_mut(p_len).enumerate().for_each(|(row, dst)| {
        let c = row / (k * k);
        let ky = (row / k % k) as isize;
        let kx = (row % k) as isize;
        let plane = &src[c * is.plane()..(c + 1) * is.plane()];
        for oy in 0..os.height {
            let iy = oy as isize * stride + ky - pad;
            let line = &mut dst[oy * os.width..(oy + 1) * os.width];
            if iy < 0 || iy >= h {
                line.fill(0.0);
                continue;
            }
            let src_row = &plane[iy as usize * is.width..(iy as usize + 1) * is.width];
            for (ox, v) in line.iter_mut().enumerate() {
                let ix = ox as isize * stride + kx - pad;
                *v = if ix < 0 || ix >= w {
                    0.0
                } else {
                    src_row[ix as usize]
                };
            }
        }
    });
}

/// y = gamma (x - mean) / sqrt(var + eps) + beta, per channel.
pub fn batch_norm_infer(input: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let s = input.shape();
    let c = s.channels;
    for (name, len) in [
        ("gamma", params.gamma.len()),
        ("beta", params.beta.len()),
        ("mean", params.mean.len()),
        ("var", params.var.len()),
    ] {
        if len != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{name} length {len} != channels {c}"),
            ));
        }
    }
    if let Some(i) = params.var.iter().position(|&v| v < 0.0) {
        return Err(Error::shape(
            "batch_norm",
            format!("negative running variance in channel {i}"),
        ));
    }
    let mut out = input.clone();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = i % c;
        let scale = params.gamma[ch] / (params.var[ch] + params.eps).sqrt();
        let (mean, beta) = (params.mean[ch], params.beta[ch]);
        chunk
            .iter_mut()
            .for_each(|v| *v = scale * (*v - mean) + beta);
    }
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Square-window average pooling. Padded cells are excluded from both the
/// sum and the divisor.
pub fn avg_pool(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("pool kernel and stride must be >= 1".into()));
    }
    let s = input.shape();
    if s.height + 2 * padding < kernel || s.width + 2 * padding < kernel {
        return Err(Error::shape("avg_pool", "input smaller than window"));
    }
    let oh = pooled_extent(s.height, kernel, stride, padding);
    let ow = pooled_extent(s.width, kernel, stride, padding);
    let os = s.with_spatial(oh, ow);
    let mut out = Vec::with_capacity(os.numel());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = input.plane(b, c);
            for oy in 0..oh {
                let y0 = (oy * stride).saturating_sub(padding);
                let y1 = (oy * stride + kernel - padding).min(s.height);
                for ox in 0..ow {
                    let x0 = (ox * stride).saturating_sub(padding);
                    let x1 = (ox * stride + kernel - padding).min(s.width);
                    let mut sum = 0f32;
                    for y in y0..y1 {
                        sum += plane[y * s.width + x0..y * s.width + x1].iter().sum::<f32>();
                    }
                    out.push(sum / ((y1 - y0) * (x1 - x0)) as f32);
                }
            }
        }
    }
    Tensor::new(os, out)
}

pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let s = input.shape();
    let n = s.plane() as f64;
    let data = input
        .data()
        .chunks(s.plane())
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
        .collect();
    Tensor::new(s.with_spatial(1, 1), data).expect("pooled shape is consistent")
}

/// Source coordinate and blend weight for half-pixel-center resizing.
fn resize_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|d| {
            let src = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f32);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers, clamped at the edges.
pub fn bilinear_upsample(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bilinear_upsample", "output size must be >= 1"));
    }
    let s = input.shape();
    let ys = resize_taps(out_h, s.height);
    let xs = resize_taps(out_w, s.width);
    let os = s.with_spatial(out_h, out_w);
    let mut out = vec![0f32; os.numel()];
    out.par_chunks_mut(os.plane())
        .zip(input.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &src[y0 * s.width..(y0 + 1) * s.width];
                let r1 = &src[y1 * s.width..(y1 + 1) * s.width];
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                    let bottom = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
                }
            }
        });
    Tensor::new(os, out)
}

/// Concatenates along channels, in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?
        .shape();
    for t in inputs {
        let s = t.shape();
        if (s.batch, s.height, s.width) != (first.batch, first.height, first.width) {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} does not match {first} in batch/spatial dims"),
            ));
        }
    }
    let channels = inputs.iter().map(|t| t.shape().channels).sum();
    let os = first.with_channels(channels);
    let mut data = Vec::with_capacity(os.numel());
    for b in 0..first.batch {
        for t in inputs {
            data.extend_from_slice(t.image(b));
        }
    }
    Tensor::new(os, data)
}

/// y = W x + b on (batch, C, 1, 1) inputs; weights are (C_out, C_in, 1, 1).
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let s = input.shape();
    if s.height != 1 || s.width != 1 {
        return Err(Error::shape(
            "fully_connected",
            format!("input spatial dims {}x{} must be 1x1", s.height, s.width),
        ));
    }
    let [c_out, c_in, kh, kw] = weights.shape().dims();
    if c_in != s.channels || kh != 1 || kw != 1 {
        return Err(Error::shape(
            "fully_connected",
            format!(
                "weights {} incompatible with {} input features",
                weights.shape(),
                s.channels
            ),
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape(
                "fully_connected",
                format!("bias length {} != outputs {c_out}", b.len()),
            ));
        }
    }
    let mut data = Vec::with_capacity(s.batch * c_out);
    for b in 0..s.batch {
        let x = input.image(b);
        for (o, row) in weights.data().chunks(c_in).enumerate() {
            let dot: f32 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            data.push(dot + bias.map_or(0.0, |b| b[o]));
        }
    }
    Tensor::new(Shape::new(s.batch, c_out, 1, 1), data)
}

/// Per-pixel softmax across channels.
pub fn softmax_channels(input: &Tensor) -> Tensor {
    let s = input.shape();
    let plane = s.plane();
    let mut out = input.clone();
    let data = out.data_mut();
    for b in 0..s.batch {
        let base = b * s.image();
        for p in 0..plane {
            let idx = |c: usize| base + c * plane + p;
            let max = (0..s.channels)
                .map(|c| data[idx(c)])
                .fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0f32;
            for c in 0..s.channels {
                let e = (data[idx(c)] - max).exp();
                data[idx(c)] = e;
                sum += e;
            }
            for c in 0..s.channels {
                data[idx(c)] /= sum;
            }
        }
    }
    out
}

/// Per-pixel index of the largest channel; ties go to the lowest index.
pub fn argmax_channels(input: &Tensor) -> Vec<u32> {
    let s = input.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.batch * plane);
    for b in 0..s.batch {
        let img = input.image(b);
        for p in 0..plane {
            let mut best = 0;
            for c in 1..s.channels {
                if img[c * plane + p] > img[best * plane + p] {
                    best = c;
                }
            }
            out.push(best as u32);
        }
    }
    out
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(x, y)| *x += y);
    Ok(out)
}

/// Adds or multiplies a (batch, C, 1, 1) tensor into every pixel of `input`.
fn broadcast_channels(
    op: &'static str,
    input: &Tensor,
    per_channel: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor> {
    let s = input.shape();
    let g = per_channel.shape();
    if g != Shape::new(s.batch, s.channels, 1, 1) {
        return Err(Error::shape(
            op,
            format!("per-channel operand {g} does not broadcast over {s}"),
        ));
    }
    let mut out = input.clone();
    for (plane, &v) in out.data_mut().chunks_mut(s.plane()).zip(per_channel.data()) {
        plane.iter_mut().for_each(|x| *x = f(*x, v));
    }
    Ok(out)
}

pub fn mul_channels(input: &Tensor, gate: &Tensor) -> Result<Tensor> {
    broadcast_channels("mul_channels", input, gate, |x, g| x * g)
}

pub fn add_channels(input: &Tensor, offset: &Tensor) -> Result<Tensor> {
    broadcast_channels("add_channels", input, offset, |x, o| x + o)
}
