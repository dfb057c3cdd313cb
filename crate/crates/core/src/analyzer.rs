//! Static cost model: parameters, multiply-accumulates and receptive fields.
//!
//! MACs count one per multiply-accumulate of convolutions and fully
//! connected layers. Pooling, activations, normalization and elementwise ops
//! count zero MACs.

use std::fmt::{self, Write as _};

use crate::backbone::StdcModuleSpec;
use crate::error::{Error, Result};
use crate::graph::Exec;
use crate::ops::ConvSpec;
use crate::tensor::Shape;
use crate::weights::{ParamKind, ParamSpec, Schema};

/// Receptive field `r` and cumulative stride (jump) `j`, in input pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RfState {
    pub r: usize,
    pub j: usize,
}

impl RfState {
    pub const INPUT: RfState = RfState { r: 1, j: 1 };

    /// r' = r + (k - 1) j, j' = j * stride.
    pub fn step(self, kernel: usize, stride: usize) -> Self {
        Self {
            r: self.r + (kernel - 1) * self.j,
            j: self.j * stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv(ConvSpec),
    BatchNorm { channels: usize },
    Relu,
    Sigmoid,
    AvgPool { kernel: usize, stride: usize, padding: usize },
    GlobalAvgPool,
    Linear { in_features: usize, out_features: usize, bias: bool },
    Concat { channels: usize },
    Upsample { height: usize, width: usize },
    Add,
    AddChannels,
    MulChannels,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::BatchNorm { .. } => "bn",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::Linear { .. } => "fc",
            LayerKind::Concat { .. } => "concat",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::Add => "add",
            LayerKind::AddChannels => "add_bcast",
            LayerKind::MulChannels => "mul_bcast",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub params: u64,
    pub macs: u64,
    pub output: Shape,
}

/// Parameters, MACs and output shape of one primitive layer.
pub fn layer_cost(kind: &LayerKind, input: Shape) -> LayerCost {
    let zero = |output| LayerCost {
        params: 0,
        macs: 0,
        output,
    };
    match kind {
        LayerKind::Conv(spec) => {
            let output = spec.output_shape(input);
            let kernel = spec.kernel_params();
            LayerCost {
                params: kernel + if spec.has_bias { spec.out_channels as u64 } else { 0 },
                macs: kernel * (output.plane() * output.batch) as u64,
                output,
            }
        }
        LayerKind::BatchNorm { channels } => LayerCost {
            params: 2 * *channels as u64,
            macs: 0,
            output: input,
        },
        LayerKind::Linear {
            in_features,
            out_features,
            bias,
        } => {
            let w = (*in_features * *out_features) as u64;
            LayerCost {
                params: w + if *bias { *out_features as u64 } else { 0 },
                macs: w * input.batch as u64,
                output: Shape::new(input.batch, *out_features, 1, 1),
            }
        }
        LayerKind::AvgPool {
            kernel,
            stride,
            padding,
        } => {
            let ext = |e: usize| (e + 2 * padding).saturating_sub(*kernel) / stride + 1;
            zero(input.with_spatial(ext(input.height), ext(input.width)))
        }
        LayerKind::GlobalAvgPool => zero(input.with_spatial(1, 1)),
        LayerKind::Concat { channels } => zero(input.with_channels(*channels)),
        LayerKind::Upsample { height, width } => zero(input.with_spatial(*height, *width)),
        LayerKind::Relu
        | LayerKind::Sigmoid
        | LayerKind::Add
        | LayerKind::AddChannels
        | LayerKind::MulChannels => zero(input),
    }
}

/// One traced layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub path: String,
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    pub params: u64,
    pub macs: u64,
    /// `None` once global context (pooling or broadcast) has been mixed in.
    pub rf: Option<RfState>,
}

/// Symbolic value flowing through a traced graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Traced {
    pub shape: Shape,
    pub rf: Option<RfState>,
}

/// [`Exec`] implementation that records layers instead of computing them.
#[derive(Debug, Default)]
pub struct Tracer {
    records: Vec<LayerRecord>,
    schema: Schema,
}

impl Tracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&self, shape: Shape) -> Traced {
        Traced {
            shape,
            rf: Some(RfState::INPUT),
        }
    }

    pub fn records(&self) -> &[LayerRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LayerRecord> {
        self.records
    }

    pub fn into_schema(self) -> Schema {
        self.schema
    }

    fn record(&mut self, path: &str, kind: LayerKind, x: &Traced, rf: Option<RfState>) -> Traced {
        let cost = layer_cost(&kind, x.shape);
        self.records.push(LayerRecord {
            path: path.to_string(),
            kind,
            input: x.shape,
            output: cost.output,
            params: cost.params,
            macs: cost.macs,
            rf,
        });
        Traced {
            shape: cost.output,
            rf,
        }
    }

    fn declare(&mut self, path: String, dims: [usize; 4], kind: ParamKind, fan_in: usize) {
        self.schema.params.push(ParamSpec {
            path,
            dims,
            kind,
            fan_in,
        });
    }
}

fn mismatch(op: &'static str, a: Shape, b: Shape) -> Error {
    Error::shape(op, format!("{a} vs {b}"))
}

impl Exec for Tracer {
    type Value = Traced;

    fn shape(&self, v: &Traced) -> Shape {
        v.shape
    }

    fn conv(&mut self, path: &str, x: &Traced, spec: &ConvSpec) -> Result<Traced> {
        spec.validate()?;
        if x.shape.channels != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "{path}: input channels {} != in_channels {}",
                    x.shape.channels, spec.in_channels
                ),
            ));
        }
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        self.declare(format!("{path}.weight"), spec.weight_dims(), ParamKind::Weight, fan_in);
        if spec.has_bias {
            self.declare(
                format!("{path}.bias"),
                [spec.out_channels, 1, 1, 1],
                ParamKind::Bias,
                fan_in,
            );
        }
        let rf = x.rf.map(|r| r.step(spec.kernel, spec.stride));
        Ok(self.record(path, LayerKind::Conv(*spec), x, rf))
    }

    fn batch_norm(&mut self, path: &str, x: &Traced) -> Result<Traced> {
        let c = x.shape.channels;
        for (name, kind) in [
            ("weight", ParamKind::BnGamma),
            ("bias", ParamKind::BnBeta),
            ("running_mean", ParamKind::BnMean),
            ("running_var", ParamKind::BnVar),
        ] {
            self.declare(format!("{path}.{name}"), [c, 1, 1, 1], kind, 0);
        }
        Ok(self.record(path, LayerKind::BatchNorm { channels: c }, x, x.rf))
    }

    fn relu(&mut self, path: &str, x: &Traced) -> Traced {
        self.record(path, LayerKind::Relu, x, x.rf)
    }

    fn sigmoid(&mut self, path: &str, x: &Traced) -> Traced {
        self.record(path, LayerKind::Sigmoid, x, x.rf)
    }

    fn avg_pool(
        &mut self,
        path: &str,
        x: &Traced,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Traced> {
        let rf = x.rf.map(|r| r.step(kernel, stride));
        Ok(self.record(
            path,
            LayerKind::AvgPool {
                kernel,
                stride,
                padding,
            },
            x,
            rf,
        ))
    }

    fn global_pool(&mut self, path: &str, x: &Traced) -> Traced {
        self.record(path, LayerKind::GlobalAvgPool, x, None)
    }

    fn linear(&mut self, path: &str, x: &Traced, out_features: usize, bias: bool) -> Result<Traced> {
        if x.shape.plane() != 1 {
            return Err(Error::shape("fully_connected", format!("{path}: input {}", x.shape)));
        }
        let in_features = x.shape.channels;
        self.declare(
            format!("{path}.weight"),
            [out_features, in_features, 1, 1],
            ParamKind::Weight,
            in_features,
        );
        if bias {
            self.declare(
                format!("{path}.bias"),
                [out_features, 1, 1, 1],
                ParamKind::Bias,
                in_features,
            );
        }
        Ok(self.record(
            path,
            LayerKind::Linear {
                in_features,
                out_features,
                bias,
            },
            x,
            None,
        ))
    }

    fn concat(&mut self, path: &str, xs: &[&Traced]) -> Result<Traced> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let mut channels = 0;
        let mut rf = first.rf;
        for x in xs {
            let (a, b) = (x.shape, first.shape);
            if (a.batch, a.height, a.width) != (b.batch, b.height, b.width) {
                return Err(mismatch("concat_channels", a, b));
            }
            channels += a.channels;
            rf = match (rf, x.rf) {
                (Some(p), Some(q)) if p.j == q.j => Some(RfState { r: p.r.max(q.r), j: p.j }),
                _ => None,
            };
        }
        Ok(self.record(path, LayerKind::Concat { channels }, first, rf))
    }

    fn upsample(&mut self, path: &str, x: &Traced, h: usize, w: usize) -> Result<Traced> {
        let rf = if (h, w) == (x.shape.height, x.shape.width) { x.rf } else { None };
        Ok(self.record(path, LayerKind::Upsample { height: h, width: w }, x, rf))
    }

    fn add(&mut self, path: &str, a: &Traced, b: &Traced) -> Result<Traced> {
        if a.shape != b.shape {
            return Err(mismatch("add", a.shape, b.shape));
        }
        let rf = match (a.rf, b.rf) {
            (Some(p), Some(q)) if p.j == q.j => Some(RfState { r: p.r.max(q.r), j: p.j }),
            _ => None,
        };
        Ok(self.record(path, LayerKind::Add, a, rf))
    }

    fn add_channels(&mut self, path: &str, x: &Traced, v: &Traced) -> Result<Traced> {
        if v.shape != x.shape.with_spatial(1, 1) {
            return Err(mismatch("add_channels", x.shape, v.shape));
        }
        Ok(self.record(path, LayerKind::AddChannels, x, None))
    }

    fn mul_channels(&mut self, path: &str, x: &Traced, g: &Traced) -> Result<Traced> {
        if g.shape != x.shape.with_spatial(1, 1) {
            return Err(mismatch("mul_channels", x.shape, g.shape));
        }
        Ok(self.record(path, LayerKind::MulChannels, x, None))
    }
}

/// Per-layer and total cost of a network at one input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub input: Shape,
    pub rows: Vec<LayerRecord>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl CostReport {
    pub fn from_records(input: Shape, rows: Vec<LayerRecord>) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_macs = rows.iter().map(|r| r.macs).sum();
        Self {
            input,
            rows,
            total_params,
            total_macs,
        }
    }

    /// Parameters excluding batch-norm affine terms.
    pub fn params_without_bn(&self) -> u64 {
        self.rows
            .iter()
            .filter(|r| !matches!(r.kind, LayerKind::BatchNorm { .. }))
            .map(|r| r.params)
            .sum()
    }

    /// Convolution kernel parameters of rows whose path starts with `prefix`.
    pub fn kernel_params_under(&self, prefix: &str) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.path.starts_with(prefix))
            .filter_map(|r| match &r.kind {
                LayerKind::Conv(spec) => Some(spec.kernel_params()),
                _ => None,
            })
            .sum()
    }

    const HEADER: [&'static str; 7] = ["layer", "type", "output", "params", "MACs", "RF", "jump"];

    fn cells(row: &LayerRecord) -> [String; 7] {
        let o = row.output;
        let (rf, jump) = match row.rf {
            Some(s) => (s.r.to_string(), s.j.to_string()),
            None => ("global".to_string(), "-".to_string()),
        };
        [
            row.path.clone(),
            row.kind.label().to_string(),
            format!("{}x{}x{}", o.channels, o.height, o.width),
            row.params.to_string(),
            row.macs.to_string(),
            rf,
            jump,
        ]
    }

    /// Comma-separated table with the same columns as the text form and a
    /// final `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut out = Self::HEADER.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::cells(row).join(","));
            out.push('\n');
        }
        let _ = writeln!(out, "TOTAL,,,{},{},,", self.total_params, self.total_macs);
        out
    }
}

fn millions(v: u64) -> String {
    format!("{:.2}M", v as f64 / 1e6)
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<[String; 7]> = self.rows.iter().map(Self::cells).collect();
        let mut widths = Self::HEADER.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i < 3 {
                    write!(f, "{c:<w$}  ")?;
                } else {
                    write!(f, "{c:>w$}  ")?;
                }
            }
            writeln!(f)
        };
        line(f, &Self::HEADER.map(String::from))?;
        for r in &rows {
            line(f, r)?;
        }
        writeln!(
            f,
            "input {}x{}: total params {} ({}), params without BN {} ({}), MACs {} ({})",
            self.input.height,
            self.input.width,
            self.total_params,
            millions(self.total_params),
            self.params_without_bn(),
            millions(self.params_without_bn()),
            self.total_macs,
            millions(self.total_macs),
        )
    }
}

/// Anything whose graph can be traced at a given input shape.
pub trait Traceable {
    fn trace(&self, tracer: &mut Tracer, input: Shape) -> Result<()>;
}

impl Traceable for crate::backbone::StdcNet {
    fn trace(&self, t: &mut Tracer, input: Shape) -> Result<()> {
        crate::backbone::check_network_input(input)?;
        let x = t.input(input);
        if self.has_head() {
            self.run_classify(t, &x)?;
        } else {
            self.run_features(t, &x)?;
        }
        Ok(())
    }
}

/// Full cost report for one image of `height` x `width`.
pub fn network_cost(model: &impl Traceable, height: usize, width: usize) -> Result<CostReport> {
    let input = Shape::new(1, 3, height, width);
    let mut t = Tracer::new();
    model.trace(&mut t, input)?;
    Ok(CostReport::from_records(input, t.into_records()))
}

/// Receptive field of each block of one module, measured from the module
/// input. With stride 2, block 1's entry includes the 3x3 skip pool.
pub fn receptive_field(spec: &StdcModuleSpec) -> Result<Vec<RfState>> {
    spec.validate()?;
    let mut t = Tracer::new();
    // Large enough that every block has at least one output pixel.
    let x = t.input(Shape::new(1, spec.in_channels, 8, 8));
    let parts = spec.run_parts(&mut t, "module", &x)?;
    Ok(parts
        .iter()
        .map(|p| p.rf.expect("module blocks are local"))
        .collect())
}
