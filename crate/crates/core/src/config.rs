//! Plain-text configuration files (TOML: `key = value` lines under
//! `[section]` headers). Every section and key is optional.
//!
//! ```toml
//! [backbone]
//! preset = "stdc2"                     # stdc1 | stdc2
//! # stages = [[256, 4], [512, 5], [1024, 3]]   # explicit (channels, modules)
//! num_blocks = 4
//! head_channels = 1024
//! num_classes = 1000
//!
//! [seg]
//! num_classes = 19
//! arm_channels = 128
//! ffm_channels = 256
//! aux_channels = 64
//! scale = "50"                         # 50 = 512x1024, 75 = 768x1536
//!
//! [detail]
//! strides = [1, 2, 4]
//! fusion_weights = [0.3333333, 0.3333333, 0.3333333]
//! fusion_bias = 0.0
//! threshold = 0.1
//! binarize_threshold = 0.1
//! order = "binarize-then-fuse"         # or "fuse-then-threshold"
//! mode = "class-indicator"             # or "raw-ids"
//! kernel = [[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]]
//!
//! [preprocess]
//! mean = [0.485, 0.456, 0.406]
//! std = [0.229, 0.224, 0.225]
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::backbone::{NetConfig, StageSpec};
use crate::detail::{DetailConfig, FusionOrder, ResponseMode};
use crate::error::{Error, Result};
use crate::io::PreprocessSpec;
use crate::seg::{InferenceScale, SegConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    backbone: Option<RawBackbone>,
    seg: Option<RawSeg>,
    detail: Option<RawDetail>,
    preprocess: Option<RawPreprocess>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackbone {
    preset: Option<String>,
    stages: Option<Vec<(usize, usize)>>,
    num_blocks: Option<usize>,
    head_channels: Option<usize>,
    num_classes: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeg {
    num_classes: Option<usize>,
    arm_channels: Option<usize>,
    ffm_channels: Option<usize>,
    aux_channels: Option<usize>,
    scale: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetail {
    strides: Option<Vec<usize>>,
    fusion_weights: Option<Vec<f32>>,
    fusion_bias: Option<f32>,
    threshold: Option<f32>,
    binarize_threshold: Option<f32>,
    order: Option<FusionOrder>,
    mode: Option<ResponseMode>,
    kernel: Option<[[f32; 3]; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPreprocess {
    mean: Option<[f32; 3]>,
    std: Option<[f32; 3]>,
}

/// Everything a configuration file can set, with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub backbone: NetConfig,
    pub seg: SegConfig,
    pub detail: DetailConfig,
    pub preprocess: PreprocessSpec,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let backbone = NetConfig::stdc1(1000);
        Self {
            seg: SegConfig::cityscapes(backbone.clone()),
            backbone,
            detail: DetailConfig::default(),
            preprocess: PreprocessSpec::default(),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;

        let b = raw.backbone.unwrap_or_default();
        let num_classes = b.num_classes.unwrap_or(1000);
        let mut backbone = NetConfig::preset(b.preset.as_deref().unwrap_or("stdc1"), num_classes)?;
        if let Some(stages) = b.stages {
            let stages: [(usize, usize); 3] = stages.try_into().map_err(|v: Vec<_>| {
                Error::Config(format!("backbone.stages needs 3 entries, got {}", v.len()))
            })?;
            backbone.stages = stages.map(|(c, n)| StageSpec::new(c, n));
        }
        if let Some(n) = b.num_blocks {
            backbone.num_blocks = n;
        }
        if let Some(h) = b.head_channels {
            backbone.head_channels = h;
        }
        backbone.validate()?;

        let s = raw.seg.unwrap_or_default();
        let mut seg = SegConfig::new(backbone.clone(), s.num_classes.unwrap_or(19));
        if let Some(v) = s.arm_channels {
            seg.arm_channels = v;
        }
        if let Some(v) = s.ffm_channels {
            seg.ffm_channels = v;
        }
        if let Some(v) = s.aux_channels {
            seg.aux_channels = v;
        }
        if let Some(v) = s.scale {
            seg.scale = InferenceScale::parse(&v)?;
        }
        seg.validate()?;

        let d = raw.detail.unwrap_or_default();
        let mut detail = DetailConfig::default();
        if let Some(v) = d.strides {
            detail.fusion_weights = vec![1.0 / v.len().max(1) as f32; v.len()];
            detail.strides = v;
        }
        if let Some(v) = d.fusion_weights {
            detail.fusion_weights = v;
        }
        if let Some(v) = d.fusion_bias {
            detail.fusion_bias = v;
        }
        if let Some(v) = d.threshold {
            detail.threshold = v;
        }
        if let Some(v) = d.binarize_threshold {
            detail.binarize_threshold = v;
        }
        if let Some(v) = d.order {
            detail.order = v;
        }
        if let Some(v) = d.mode {
            detail.mode = v;
        }
        if let Some(v) = d.kernel {
            detail.kernel = v;
        }
        detail.validate()?;

        let p = raw.preprocess.unwrap_or_default();
        let mut preprocess = PreprocessSpec::default();
        if let Some(v) = p.mean {
            preprocess.mean = v;
        }
        if let Some(v) = p.std {
            preprocess.std = v;
        }
        preprocess.validate()?;

        Ok(Self {
            backbone,
            seg,
            detail,
            preprocess,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
