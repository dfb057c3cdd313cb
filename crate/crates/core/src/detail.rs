//! Detail ground-truth generation from label maps and the detail head.
//!
//! Each stride's Laplacian response is taken on the indicator map of the
//! centre pixel's class, so a pixel responds exactly when one of its
//! 8-neighbours carries a different id, whatever the id values are. Out of
//! range neighbours replicate the border.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{convx, Exec, Forward};
use crate::losses::{self, LossValue};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Shape, Tensor};
use crate::weights::WeightStore;

pub const IGNORE_LABEL: u32 = 255;

/// Integer class ids, (batch, 1, H, W).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u32>,
    pub ignore_label: u32,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if batch == 0 || height == 0 || width == 0 {
            return Err(Error::shape("label map", "dimensions must be >= 1"));
        }
        if ids.len() != batch * height * width {
            return Err(Error::shape(
                "label map",
                format!("{} ids for {batch}x{height}x{width}", ids.len()),
            ));
        }
        Ok(Self {
            batch,
            height,
            width,
            ids,
            ignore_label: IGNORE_LABEL,
        })
    }

    pub fn from_fn(batch: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> u32) -> Self {
        let mut ids = Vec::with_capacity(batch * height * width);
        for b in 0..batch {
            for y in 0..height {
                for x in 0..width {
                    ids.push(f(b, y, x));
                }
            }
        }
        Self::new(batch, height, width, ids).expect("dimensions checked by caller")
    }

    pub fn at(&self, b: usize, y: usize, x: usize) -> u32 {
        self.ids[(b * self.height + y) * self.width + x]
    }

    /// Checks ids are below `num_classes` or equal to the ignore label.
    pub fn validate(&self, num_classes: u32) -> Result<()> {
        match self
            .ids
            .iter()
            .find(|&&id| id >= num_classes && id != self.ignore_label)
        {
            Some(id) => Err(Error::Config(format!(
                "label id {id} outside [0, {num_classes}) and not the ignore label"
            ))),
            None => Ok(()),
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.batch, 1, self.height, self.width)
    }
}

/// How per-stride responses are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionOrder {
    /// Binarize each stride's response, fuse, then threshold.
    BinarizeThenFuse,
    /// Fuse clamped responses, then threshold once.
    FuseThenThreshold,
}

/// What the Laplacian kernel is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseMode {
    /// Indicator of the centre pixel's class; depends only on id equality.
    ClassIndicator,
    /// Raw id values cast to reals.
    RawIds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetailConfig {
    pub kernel: [[f32; 3]; 3],
    pub strides: Vec<usize>,
    pub fusion_weights: Vec<f32>,
    pub fusion_bias: f32,
    pub threshold: f32,
    pub binarize_threshold: f32,
    pub order: FusionOrder,
    pub mode: ResponseMode,
}

impl Default for DetailConfig {
    fn default() -> Self {
        Self {
            kernel: [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]],
            strides: vec![1, 2, 4],
            fusion_weights: vec![1.0 / 3.0; 3],
            fusion_bias: 0.0,
            threshold: 0.1,
            binarize_threshold: 0.1,
            order: FusionOrder::BinarizeThenFuse,
            mode: ResponseMode::ClassIndicator,
        }
    }
}

impl DetailConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strides.first() != Some(&1) {
            return Err(Error::Config("detail strides must start at 1".into()));
        }
        if self.strides.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("detail strides must be strictly increasing".into()));
        }
        if self.fusion_weights.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "{} fusion weights for {} strides",
                self.fusion_weights.len(),
                self.strides.len()
            )));
        }
        for (name, t) in [
            ("threshold", self.threshold),
            ("binarize_threshold", self.binarize_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {t}")));
            }
        }
        Ok(())
    }
}

/// |Laplacian| clamped to [0, 1], sampled every `stride` pixels.
/// Output is (batch, 1, ceil(H/stride), ceil(W/stride)).
pub fn laplacian_response(labels: &LabelMap, stride: usize, config: &DetailConfig) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let (h, w) = (labels.height, labels.width);
    let oh = (h - 1) / stride + 1;
    let ow = (w - 1) / stride + 1;
    let k = &config.kernel;
    Ok(Tensor::from_fn(Shape::new(labels.batch, 1, oh, ow), |b, _, oy, ox| {
        let (cy, cx) = (oy * stride, ox * stride);
        let centre = labels.at(b, cy, cx);
        let mut acc = 0f32;
        for (dy, row) in k.iter().enumerate() {
            let y = (cy + dy).saturating_sub(1).min(h - 1);
            for (dx, &kv) in row.iter().enumerate() {
                let x = (cx + dx).saturating_sub(1).min(w - 1);
                let id = labels.at(b, y, x);
                acc += kv
                    * match config.mode {
                        ResponseMode::ClassIndicator => (id == centre) as u8 as f32,
                        ResponseMode::RawIds => id as f32,
                    };
            }
        }
        acc.abs().clamp(0.0, 1.0)
    }))
}

/// Binary detail ground truth with its loss mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailGt {
    /// (batch, 1, H, W), values in {0, 1}.
    pub map: Tensor,
    /// False where the label is the ignore label.
    pub valid: Vec<bool>,
}

pub fn generate_detail_gt(labels: &LabelMap, config: &DetailConfig) -> Result<DetailGt> {
    config.validate()?;
    let (h, w) = (labels.height, labels.width);
    let mut fused = Tensor::full(labels.shape(), config.fusion_bias);
    for (&stride, &weight) in config.strides.iter().zip(&config.fusion_weights) {
        let mut resp = laplacian_response(labels, stride, config)?;
        if config.order == FusionOrder::BinarizeThenFuse {
            let t = config.binarize_threshold;
            resp = resp.map(|v| if v > t { 1.0 } else { 0.0 });
        }
        let up = ops::bilinear_upsample(&resp, h, w)?;
        fused
            .data_mut()
            .iter_mut()
            .zip(up.data())
            .for_each(|(f, u)| *f += weight * u);
    }
    let valid: Vec<bool> = labels.ids.iter().map(|&id| id != labels.ignore_label).collect();
    let t = config.threshold;
    let map = Tensor::new(
        labels.shape(),
        fused
            .data()
            .iter()
            .zip(&valid)
            .map(|(&v, &ok)| if ok && v > t { 1.0 } else { 0.0 })
            .collect(),
    )?;
    Ok(DetailGt { map, valid })
}

/// 3x3 ConvX then a 1x1 convolution (with bias) to one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetailHead {
    pub in_channels: usize,
    pub mid_channels: usize,
}

impl DetailHead {
    pub fn new(in_channels: usize, mid_channels: usize) -> Self {
        Self {
            in_channels,
            mid_channels,
        }
    }

    pub fn run<E: Exec>(&self, e: &mut E, path: &str, x: &E::Value) -> Result<E::Value> {
        let y = convx(
            e,
            &format!("{path}.convx"),
            x,
            &ConvSpec::new(self.in_channels, self.mid_channels, 3, 1),
        )?;
        e.conv(
            &format!("{path}.out"),
            &y,
            &ConvSpec::new(self.mid_channels, 1, 1, 1).with_bias(),
        )
    }
}

/// Detail head output: logits and sigmoid probabilities, both (batch, 1, h, w).
#[derive(Clone, Debug)]
pub struct DetailPrediction {
    pub logits: Tensor,
    pub probs: Tensor,
}

impl DetailPrediction {
    pub fn from_logits(logits: Tensor) -> Self {
        let probs = ops::sigmoid(&logits);
        Self { logits, probs }
    }
}

/// Runs the detail head on a stage-3 feature map; parameters live under
/// `detail_head.*`.
pub fn detail_head_forward(head: &DetailHead, weights: &WeightStore, stage3: &Tensor) -> Result<DetailPrediction> {
    let logits = head.run(&mut Forward::new(weights), "detail_head", stage3)?;
    Ok(DetailPrediction::from_logits(logits))
}

/// Detail loss of a prediction against full-resolution ground truth. The
/// prediction logits are upsampled to the ground-truth size before the
/// sigmoid.
pub fn detail_supervision_loss(pred: &DetailPrediction, gt: &DetailGt, eps: f64) -> Result<LossValue<f32>> {
    let s = gt.map.shape();
    let up = ops::sigmoid(&ops::bilinear_upsample(&pred.logits, s.height, s.width)?);
    losses::detail_loss_tensor(&up, &gt.map, Some(&gt.valid), eps)
}
