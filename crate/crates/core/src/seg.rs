//! STDC-Seg: STDC encoder, BiSeNet-style context path with attention
//! refinement, feature fusion and segmentation head, plus the training-only
//! detail and auxiliary heads.

use crate::analyzer::{Traceable, Tracer};
use crate::backbone::{check_network_input, Features, NetConfig, StdcNet};
use crate::detail::{DetailHead, DetailPrediction};
use crate::error::{Error, Result};
use crate::graph::{convx, Exec, Forward};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Shape, Tensor};
use crate::weights::{Schema, WeightStore};

/// Named inference resolutions: "50" is 512x1024 and "75" is 768x1536.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceScale {
    Seg50,
    Seg75,
}

impl InferenceScale {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "50" => Ok(Self::Seg50),
            "75" => Ok(Self::Seg75),
            other => Err(Error::Config(format!(
                "unknown inference scale `{other}` (expected 50 or 75)"
            ))),
        }
    }

    /// (height, width)
    pub fn input_size(self) -> (usize, usize) {
        match self {
            Self::Seg50 => (512, 1024),
            Self::Seg75 => (768, 1536),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegConfig {
    pub backbone: NetConfig,
    pub num_classes: usize,
    /// Width of the context-path branches.
    pub arm_channels: usize,
    /// Output width of the feature fusion module and seg head hidden layer.
    pub ffm_channels: usize,
    /// Hidden width of the auxiliary and detail heads.
    pub aux_channels: usize,
    pub scale: InferenceScale,
}

impl SegConfig {
    pub fn new(backbone: NetConfig, num_classes: usize) -> Self {
        Self {
            backbone,
            num_classes,
            arm_channels: 128,
            ffm_channels: 256,
            aux_channels: 64,
            scale: InferenceScale::Seg50,
        }
    }

    /// 19-class preset.
    pub fn cityscapes(backbone: NetConfig) -> Self {
        Self::new(backbone, 19)
    }

    /// 11-class preset.
    pub fn camvid(backbone: NetConfig) -> Self {
        Self::new(backbone, 11)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if self.arm_channels == 0 || self.aux_channels == 0 {
            return Err(Error::Config("decoder widths must be >= 1".into()));
        }
        if self.ffm_channels < 4 {
            return Err(Error::Config("ffm_channels must be >= 4".into()));
        }
        Ok(())
    }
}

/// Attention refinement gate: global pool, 1x1 conv, BN, sigmoid, then a
/// channel-wise multiply. Output shape equals input shape.
pub fn arm<E: Exec>(e: &mut E, path: &str, x: &E::Value) -> Result<E::Value> {
    let c = e.shape(x).channels;
    let g = e.global_pool(&format!("{path}.pool"), x);
    let g = e.conv(&format!("{path}.atten"), &g, &ConvSpec::new(c, c, 1, 1))?;
    let g = e.batch_norm(&format!("{path}.atten_bn"), &g)?;
    let g = e.sigmoid(&format!("{path}.gate"), &g);
    e.mul_channels(&format!("{path}.mul"), x, &g)
}

/// Feature fusion: concat, 1x1 ConvX, squeeze-excitation gate, residual add.
pub fn ffm<E: Exec>(
    e: &mut E,
    path: &str,
    spatial: &E::Value,
    context: &E::Value,
    out_channels: usize,
) -> Result<E::Value> {
    let cat = e.concat(&format!("{path}.concat"), &[spatial, context])?;
    let in_ch = e.shape(&cat).channels;
    let feat = convx(
        e,
        &format!("{path}.convx"),
        &cat,
        &ConvSpec::new(in_ch, out_channels, 1, 1),
    )?;
    let squeeze = out_channels / 4;
    let a = e.global_pool(&format!("{path}.pool"), &feat);
    let a = e.conv(
        &format!("{path}.conv1"),
        &a,
        &ConvSpec::new(out_channels, squeeze, 1, 1),
    )?;
    let a = e.relu(&format!("{path}.relu"), &a);
    let a = e.conv(
        &format!("{path}.conv2"),
        &a,
        &ConvSpec::new(squeeze, out_channels, 1, 1),
    )?;
    let a = e.sigmoid(&format!("{path}.gate"), &a);
    let gated = e.mul_channels(&format!("{path}.mul"), &feat, &a)?;
    e.add(&format!("{path}.residual"), &feat, &gated)
}

/// 3x3 ConvX followed by a 1x1 convolution (with bias) to `out_channels`.
pub fn seg_head<E: Exec>(
    e: &mut E,
    path: &str,
    x: &E::Value,
    mid_channels: usize,
    out_channels: usize,
) -> Result<E::Value> {
    let c = e.shape(x).channels;
    let y = convx(e, &format!("{path}.convx"), x, &ConvSpec::new(c, mid_channels, 3, 1))?;
    e.conv(
        &format!("{path}.out"),
        &y,
        &ConvSpec::new(mid_channels, out_channels, 1, 1).with_bias(),
    )
}

/// Standalone attention refinement on real tensors; parameters under `path`.
pub fn arm_forward(weights: &WeightStore, path: &str, feature: &Tensor) -> Result<Tensor> {
    arm(&mut Forward::new(weights), path, feature)
}

pub fn ffm_forward(
    weights: &WeightStore,
    path: &str,
    spatial: &Tensor,
    context: &Tensor,
    out_channels: usize,
) -> Result<Tensor> {
    ffm(&mut Forward::new(weights), path, spatial, context, out_channels)
}

pub fn seg_head_forward(
    weights: &WeightStore,
    path: &str,
    feature: &Tensor,
    mid_channels: usize,
    num_classes: usize,
) -> Result<Tensor> {
    seg_head(&mut Forward::new(weights), path, feature, mid_channels, num_classes)
}

/// Which optional branches a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branches {
    pub detail_head: bool,
    pub aux_heads: bool,
}

impl Branches {
    pub const INFERENCE: Branches = Branches {
        detail_head: false,
        aux_heads: false,
    };
    pub const ALL: Branches = Branches {
        detail_head: true,
        aux_heads: true,
    };
}

/// Intermediate and final values of one decoder run.
#[derive(Clone, Debug)]
pub struct SegParts<V> {
    pub features: Features<V>,
    /// Class logits at the input resolution.
    pub logits: V,
    /// Detail logits at 1/8 resolution.
    pub detail: Option<V>,
    /// Auxiliary logits at 1/16 and 1/32 resolution.
    pub aux: Option<(V, V)>,
}

#[derive(Clone, Debug)]
pub struct SegOutput {
    pub features: Features<Tensor>,
    pub logits: Tensor,
    /// Per-pixel argmax, (batch, H, W) row-major.
    pub labels: Vec<u32>,
    pub detail: Option<DetailPrediction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferOptions {
    pub detail_head: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { detail_head: true }
    }
}

#[derive(Clone, Debug)]
pub struct SegNet {
    config: SegConfig,
    encoder: StdcNet,
    detail_head: DetailHead,
}

impl SegNet {
    pub fn build(config: SegConfig) -> Result<Self> {
        config.validate()?;
        let encoder = StdcNet::build_encoder(config.backbone.clone())?;
        let detail_head = DetailHead::new(encoder.stage_channels()[0], config.aux_channels);
        Ok(Self {
            config,
            encoder,
            detail_head,
        })
    }

    pub fn config(&self) -> &SegConfig {
        &self.config
    }

    pub fn encoder(&self) -> &StdcNet {
        &self.encoder
    }

    pub fn detail_head(&self) -> &DetailHead {
        &self.detail_head
    }

    pub fn run<E: Exec>(&self, e: &mut E, x: &E::Value, branches: Branches) -> Result<SegParts<E::Value>> {
        let c = &self.config;
        let input = e.shape(x);
        let [_, c4, c5] = self.encoder.stage_channels();
        let arm_ch = c.arm_channels;
        let features = self.encoder.run_features(e, x)?;

        let s8 = e.shape(&features.stage3);
        let s16 = e.shape(&features.stage4);

        let global = e.global_pool("context.global_pool", &features.stage5);
        let global = convx(e, "context.global_conv", &global, &ConvSpec::new(c5, arm_ch, 1, 1))?;

        let f32 = convx(e, "context.arm32.proj", &features.stage5, &ConvSpec::new(c5, arm_ch, 3, 1))?;
        let f32 = arm(e, "context.arm32", &f32)?;
        let f32 = e.add_channels("context.global_add", &f32, &global)?;
        let f32_up = e.upsample("context.up32", &f32, s16.height, s16.width)?;
        let f32_up = convx(e, "context.head32", &f32_up, &ConvSpec::new(arm_ch, arm_ch, 3, 1))?;

        let f16 = convx(e, "context.arm16.proj", &features.stage4, &ConvSpec::new(c4, arm_ch, 3, 1))?;
        let f16 = arm(e, "context.arm16", &f16)?;
        let f16 = e.add("context.sum16", &f16, &f32_up)?;
        let f16_up = e.upsample("context.up16", &f16, s8.height, s8.width)?;
        let f16_up = convx(e, "context.head16", &f16_up, &ConvSpec::new(arm_ch, arm_ch, 3, 1))?;

        let fused = ffm(e, "ffm", &features.stage3, &f16_up, c.ffm_channels)?;
        let logits = seg_head(e, "seg_head", &fused, c.ffm_channels, c.num_classes)?;
        let logits = e.upsample("seg_head.upsample", &logits, input.height, input.width)?;

        let detail = if branches.detail_head {
            Some(self.detail_head.run(e, "detail_head", &features.stage3)?)
        } else {
            None
        };
        let aux = if branches.aux_heads {
            Some((
                seg_head(e, "aux16", &f16_up, c.aux_channels, c.num_classes)?,
                seg_head(e, "aux32", &f32_up, c.aux_channels, c.num_classes)?,
            ))
        } else {
            None
        };
        Ok(SegParts {
            features,
            logits,
            detail,
            aux,
        })
    }

    /// Every parameter, including the detail and auxiliary heads.
    pub fn schema(&self) -> Schema {
        let mut t = Tracer::new();
        let x = t.input(Shape::new(1, 3, 64, 64));
        self.run(&mut t, &x, Branches::ALL)
            .expect("validated network traces");
        t.into_schema()
    }

    pub fn infer(&self, weights: &WeightStore, image: &Tensor, opts: InferOptions) -> Result<SegOutput> {
        check_network_input(image.shape())?;
        let branches = Branches {
            detail_head: opts.detail_head,
            aux_heads: false,
        };
        let parts = self.run(&mut Forward::new(weights), image, branches)?;
        let labels = ops::argmax_channels(&parts.logits);
        Ok(SegOutput {
            features: parts.features,
            labels,
            detail: parts.detail.map(DetailPrediction::from_logits),
            logits: parts.logits,
        })
    }
}

/// Costs of the inference graph (detail and auxiliary heads excluded).
impl Traceable for SegNet {
    fn trace(&self, t: &mut Tracer, input: Shape) -> Result<()> {
        check_network_input(input)?;
        let x = t.input(input);
        self.run(t, &x, Branches::INFERENCE)?;
        Ok(())
    }
}
