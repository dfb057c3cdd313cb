//! STDC modules and the STDC1/STDC2 classification networks.

use serde::{Deserialize, Serialize};

use crate::analyzer::Tracer;
use crate::error::{Error, Result};
use crate::graph::{convx, Exec, Forward};
use crate::ops::ConvSpec;
use crate::tensor::{Shape, Tensor};
use crate::weights::{Schema, WeightStore};

/// One Short-Term Dense Concatenate module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StdcModuleSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub num_blocks: usize,
    pub stride: usize,
}

impl StdcModuleSpec {
    pub fn new(in_channels: usize, out_channels: usize, num_blocks: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            num_blocks,
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_blocks;
        if n < 2 {
            return Err(Error::Config(format!("num_blocks must be >= 2, got {n}")));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if n > 20 || self.out_channels == 0 || !self.out_channels.is_multiple_of(1 << (n - 1)) {
            return Err(Error::Config(format!(
                "out_channels {} must be divisible by 2^(num_blocks-1) = {}",
                self.out_channels,
                1u64 << (n - 1).min(63)
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!(
                "module stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }

    /// Output channels of each block: N/2, N/4, ..., N/2^(n-1), N/2^(n-1).
    pub fn block_widths(&self) -> Vec<usize> {
        let n = self.num_blocks;
        (1..=n)
            .map(|i| self.out_channels >> i.min(n - 1))
            .collect()
    }

    /// Convolution of each block. Block 1 is 1x1; the rest are 3x3, and
    /// block 2 carries the module stride.
    pub fn block_convs(&self) -> Vec<ConvSpec> {
        let widths = self.block_widths();
        let mut in_ch = self.in_channels;
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let spec = match i {
                    0 => ConvSpec::new(in_ch, w, 1, 1),
                    1 => ConvSpec::new(in_ch, w, 3, self.stride),
                    _ => ConvSpec::new(in_ch, w, 3, 1),
                };
                in_ch = w;
                spec
            })
            .collect()
    }

    /// Runs the blocks and returns the maps that get concatenated, block 1
    /// first. With stride 2, block 1's entry is its average-pooled skip.
    pub fn run_parts<E: Exec>(&self, e: &mut E, path: &str, x: &E::Value) -> Result<Vec<E::Value>> {
        let mut parts = Vec::with_capacity(self.num_blocks);
        let mut cur = x.clone();
        for (i, spec) in self.block_convs().iter().enumerate() {
            cur = convx(e, &format!("{path}.block{}", i + 1), &cur, spec)?;
            if i == 0 && self.stride == 2 {
                parts.push(e.avg_pool(&format!("{path}.skip"), &cur, 3, 2, 1)?);
            } else {
                parts.push(cur.clone());
            }
        }
        Ok(parts)
    }

    pub fn run<E: Exec>(&self, e: &mut E, path: &str, x: &E::Value) -> Result<E::Value> {
        let parts = self.run_parts(e, path, x)?;
        let refs: Vec<&E::Value> = parts.iter().collect();
        e.concat(&format!("{path}.concat"), &refs)
    }

    /// Kernel parameter count in closed form:
    /// NM/2 + 3N^2/2 * (1 + 1/2^(2n-3)), evaluated exactly in integers.
    pub fn param_count_closed_form(&self) -> u64 {
        let (m, n_ch, n) = (
            self.in_channels as u64,
            self.out_channels as u64,
            self.num_blocks as u32,
        );
        // 3N^2/2 * 1/2^(2n-3) = 3N^2 / 2^(2n-2)
        n_ch * m / 2 + 3 * n_ch * n_ch / 2 + 3 * n_ch * n_ch / (1u64 << (2 * n - 2))
    }
}

/// A group of modules sharing an output width. The first module has stride 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub out_channels: usize,
    pub num_modules: usize,
}

impl StageSpec {
    pub const fn new(out_channels: usize, num_modules: usize) -> Self {
        Self {
            out_channels,
            num_modules,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    /// Stages 3, 4 and 5.
    pub stages: [StageSpec; 3],
    pub num_blocks: usize,
    pub head_channels: usize,
    pub num_classes: usize,
}

impl NetConfig {
    fn with_stages(stages: [StageSpec; 3], num_classes: usize) -> Self {
        Self {
            conv1: ConvSpec::new(3, 32, 3, 2),
            conv2: ConvSpec::new(32, 64, 3, 2),
            stages,
            num_blocks: 4,
            head_channels: 1024,
            num_classes,
        }
    }

    pub fn stdc1(num_classes: usize) -> Self {
        Self::with_stages(
            [
                StageSpec::new(256, 2),
                StageSpec::new(512, 2),
                StageSpec::new(1024, 2),
            ],
            num_classes,
        )
    }

    pub fn stdc2(num_classes: usize) -> Self {
        Self::with_stages(
            [
                StageSpec::new(256, 4),
                StageSpec::new(512, 5),
                StageSpec::new(1024, 3),
            ],
            num_classes,
        )
    }

    pub fn preset(name: &str, num_classes: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "stdc1" => Ok(Self::stdc1(num_classes)),
            "stdc2" => Ok(Self::stdc2(num_classes)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected stdc1 or stdc2)"
            ))),
        }
    }

    /// Module specs per stage, in execution order.
    pub fn module_specs(&self) -> Vec<Vec<StdcModuleSpec>> {
        let mut in_ch = self.conv2.out_channels;
        self.stages
            .iter()
            .map(|stage| {
                (0..stage.num_modules)
                    .map(|i| {
                        let spec = StdcModuleSpec::new(
                            in_ch,
                            stage.out_channels,
                            self.num_blocks,
                            if i == 0 { 2 } else { 1 },
                        );
                        in_ch = stage.out_channels;
                        spec
                    })
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.conv1.validate()?;
        self.conv2.validate()?;
        if self.conv1.in_channels != 3 {
            return Err(Error::Config("conv1 must take 3 input channels".into()));
        }
        if self.conv2.in_channels != self.conv1.out_channels {
            return Err(Error::Config(
                "conv2 input channels must equal conv1 output channels".into(),
            ));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.num_modules == 0 {
                return Err(Error::Config(format!("stage{} has no modules", i + 3)));
            }
        }
        for (i, stage) in self.module_specs().iter().enumerate() {
            for spec in stage {
                spec.validate()
                    .map_err(|e| Error::Config(format!("stage{}: {e}", i + 3)))?;
            }
        }
        if self.head_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "head_channels and num_classes must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Stage 3, 4 and 5 outputs (1/8, 1/16 and 1/32 resolution).
#[derive(Clone, Debug)]
pub struct Features<V> {
    pub stage3: V,
    pub stage4: V,
    pub stage5: V,
}

pub(crate) fn check_network_input(input: Shape) -> Result<()> {
    if input.channels != 3 {
        return Err(Error::shape(
            "network input",
            format!("expected 3 channels, got {}", input.channels),
        ));
    }
    if input.height < 32
        || input.width < 32
        || !input.height.is_multiple_of(32)
        || !input.width.is_multiple_of(32)
    {
        return Err(Error::shape(
            "network input",
            format!(
                "height and width must be >= 32 and divisible by 32, got {}x{}",
                input.height, input.width
            ),
        ));
    }
    Ok(())
}

/// An STDC network. Built with a classification head for ImageNet-style
/// prediction or without one when used as a segmentation encoder.
#[derive(Clone, Debug)]
pub struct StdcNet {
    config: NetConfig,
    modules: Vec<Vec<StdcModuleSpec>>,
    with_head: bool,
    prefix: String,
}

impl StdcNet {
    pub fn build(config: NetConfig) -> Result<Self> {
        Self::build_inner(config, true)
    }

    /// Stages 1-5 only, for use as an encoder.
    pub fn build_encoder(config: NetConfig) -> Result<Self> {
        Self::build_inner(config, false)
    }

    fn build_inner(config: NetConfig, with_head: bool) -> Result<Self> {
        config.validate()?;
        let modules = config.module_specs();
        Ok(Self {
            config,
            modules,
            with_head,
            prefix: "backbone".into(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn has_head(&self) -> bool {
        self.with_head
    }

    pub fn modules(&self) -> &[Vec<StdcModuleSpec>] {
        &self.modules
    }

    pub fn stage_channels(&self) -> [usize; 3] {
        self.config.stages.map(|s| s.out_channels)
    }

    pub fn run_features<E: Exec>(&self, e: &mut E, x: &E::Value) -> Result<Features<E::Value>> {
        let p = &self.prefix;
        let mut cur = convx(e, &format!("{p}.conv1"), x, &self.config.conv1)?;
        cur = convx(e, &format!("{p}.conv2"), &cur, &self.config.conv2)?;
        let mut outs = Vec::with_capacity(3);
        for (s, stage) in self.modules.iter().enumerate() {
            for (i, spec) in stage.iter().enumerate() {
                cur = spec.run(e, &format!("{p}.stage{}.{i}", s + 3), &cur)?;
            }
            outs.push(cur.clone());
        }
        let mut outs = outs.into_iter();
        Ok(Features {
            stage3: outs.next().expect("three stages"),
            stage4: outs.next().expect("three stages"),
            stage5: outs.next().expect("three stages"),
        })
    }

    /// ConvX6, global pool, FC1 + BN + ReLU, FC2. Dropout is identity at
    /// inference.
    pub fn run_classify<E: Exec>(&self, e: &mut E, x: &E::Value) -> Result<E::Value> {
        if !self.with_head {
            return Err(Error::Config(
                "network was built without a classification head".into(),
            ));
        }
        let p = &self.prefix;
        let c = &self.config;
        let feats = self.run_features(e, x)?;
        let last = c.stages[2].out_channels;
        let y = convx(
            e,
            &format!("{p}.conv6"),
            &feats.stage5,
            &ConvSpec::new(last, c.head_channels, 1, 1),
        )?;
        let y = e.global_pool(&format!("{p}.pool"), &y);
        let y = e.linear(&format!("{p}.fc1"), &y, c.head_channels, true)?;
        let y = e.batch_norm(&format!("{p}.fc1_bn"), &y)?;
        let y = e.relu(&format!("{p}.fc1_relu"), &y);
        e.linear(&format!("{p}.fc2"), &y, c.num_classes, true)
    }

    pub fn schema(&self) -> Schema {
        let mut t = Tracer::new();
        let x = t.input(Shape::new(1, 3, 64, 64));
        if self.with_head {
            self.run_classify(&mut t, &x).expect("validated network traces");
        } else {
            self.run_features(&mut t, &x).expect("validated network traces");
        }
        t.into_schema()
    }

    pub fn forward_classify(&self, weights: &WeightStore, input: &Tensor) -> Result<Tensor> {
        check_network_input(input.shape())?;
        self.run_classify(&mut Forward::new(weights), input)
    }

    pub fn extract_features(&self, weights: &WeightStore, input: &Tensor) -> Result<Features<Tensor>> {
        check_network_input(input.shape())?;
        self.run_features(&mut Forward::new(weights), input)
    }
}
