//! Layer-level execution.
//!
//! Network definitions are written once against [`Exec`]. Running them with
//! [`Forward`] computes activations; running them with
//! [`Tracer`](crate::analyzer::Tracer) records shapes, costs, receptive
//! fields and the parameter schema. Both views therefore describe the same
//! graph.

use crate::error::Result;
use crate::ops::{self, ConvSpec};
use crate::tensor::{Shape, Tensor};
use crate::weights::WeightStore;

pub trait Exec {
    type Value: Clone;

    fn shape(&self, v: &Self::Value) -> Shape;

    /// Convolution with parameters `{path}.weight` (and `{path}.bias`).
    fn conv(&mut self, path: &str, x: &Self::Value, spec: &ConvSpec) -> Result<Self::Value>;
    /// Inference batch norm with parameters under `path`.
    fn batch_norm(&mut self, path: &str, x: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, path: &str, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, path: &str, x: &Self::Value) -> Self::Value;
    fn avg_pool(
        &mut self,
        path: &str,
        x: &Self::Value,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;
    fn global_pool(&mut self, path: &str, x: &Self::Value) -> Self::Value;
    /// Affine map on (batch, C, 1, 1) values.
    fn linear(
        &mut self,
        path: &str,
        x: &Self::Value,
        out_features: usize,
        bias: bool,
    ) -> Result<Self::Value>;
    fn concat(&mut self, path: &str, xs: &[&Self::Value]) -> Result<Self::Value>;
    fn upsample(&mut self, path: &str, x: &Self::Value, h: usize, w: usize)
        -> Result<Self::Value>;
    fn add(&mut self, path: &str, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add_channels(&mut self, path: &str, x: &Self::Value, v: &Self::Value)
        -> Result<Self::Value>;
    fn mul_channels(&mut self, path: &str, x: &Self::Value, g: &Self::Value)
        -> Result<Self::Value>;
}

/// ConvX: convolution, batch norm, ReLU.
pub fn convx<E: Exec>(e: &mut E, path: &str, x: &E::Value, spec: &ConvSpec) -> Result<E::Value> {
    let y = e.conv(&format!("{path}.conv"), x, spec)?;
    let y = e.batch_norm(&format!("{path}.bn"), &y)?;
    Ok(e.relu(&format!("{path}.relu"), &y))
}

/// Executes layers on real tensors, reading parameters from a store.
pub struct Forward<'a> {
    weights: &'a WeightStore,
}

impl<'a> Forward<'a> {
    pub fn new(weights: &'a WeightStore) -> Self {
        Self { weights }
    }
}

impl Exec for Forward<'_> {
    type Value = Tensor;

    fn shape(&self, v: &Tensor) -> Shape {
        v.shape()
    }

    fn conv(&mut self, path: &str, x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
        let w = self.weights.get(&format!("{path}.weight"), spec.weight_dims())?;
        let b = if spec.has_bias {
            Some(self.weights.vector(&format!("{path}.bias"), spec.out_channels)?)
        } else {
            None
        };
        ops::conv2d(x, spec, w, b)
    }

    fn batch_norm(&mut self, path: &str, x: &Tensor) -> Result<Tensor> {
        let p = self.weights.batch_norm(path, x.shape().channels)?;
        ops::batch_norm_infer(x, &p)
    }

    fn relu(&mut self, _: &str, x: &Tensor) -> Tensor {
        ops::relu(x)
    }

    fn sigmoid(&mut self, _: &str, x: &Tensor) -> Tensor {
        ops::sigmoid(x)
    }

    fn avg_pool(
        &mut self,
        _: &str,
        x: &Tensor,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        ops::avg_pool(x, kernel, stride, padding)
    }

    fn global_pool(&mut self, _: &str, x: &Tensor) -> Tensor {
        ops::global_avg_pool(x)
    }

    fn linear(&mut self, path: &str, x: &Tensor, out_features: usize, bias: bool) -> Result<Tensor> {
        let in_features = x.shape().channels;
        let w = self
            .weights
            .get(&format!("{path}.weight"), [out_features, in_features, 1, 1])?;
        let b = if bias {
            Some(self.weights.vector(&format!("{path}.bias"), out_features)?)
        } else {
            None
        };
        ops::fully_connected(x, w, b)
    }

    fn concat(&mut self, _: &str, xs: &[&Tensor]) -> Result<Tensor> {
        ops::concat_channels(xs)
    }

    fn upsample(&mut self, _: &str, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        ops::bilinear_upsample(x, h, w)
    }

    fn add(&mut self, _: &str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::add(a, b)
    }

    fn add_channels(&mut self, _: &str, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        ops::add_channels(x, v)
    }

    fn mul_channels(&mut self, _: &str, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        ops::mul_channels(x, g)
    }
}
