//! Named parameter storage and the parameter schema declared by a model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{BatchNormParams, BN_EPS};
use crate::tensor::{Shape, Tensor};

/// What a parameter entry holds. Running statistics are buffers, not
/// trainable parameters, and are excluded from parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::BnMean | ParamKind::BnVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub dims: [usize; 4],
    pub kind: ParamKind,
    /// Fan-in used for random initialization of weights.
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn shape(&self) -> Shape {
        let [a, b, c, d] = self.dims;
        Shape::new(a, b, c, d)
    }
}

/// Every parameter a built model reads, in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schema {
    pub params: Vec<ParamSpec>,
}

impl Schema {
    pub fn get(&self, path: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.path == path)
    }

    pub fn trainable_count(&self) -> u64 {
        self.params
            .iter()
            .filter(|p| p.kind.is_trainable())
            .map(|p| p.numel() as u64)
            .sum()
    }
}

/// Map from parameter path to tensor. Vectors are stored as (len, 1, 1, 1)
/// and matrices as (rows, cols, 1, 1).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an entry, returning the previous tensor under that name.
    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.entries.insert(path.into(), tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get_raw(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(path)
    }

    /// Looks up `path` and checks it has the expected dimensions.
    pub fn get(&self, path: &str, dims: [usize; 4]) -> Result<&Tensor> {
        let t = self.entries.get(path).ok_or_else(|| Error::MissingWeight {
            path: path.to_string(),
        })?;
        if t.shape().dims() != dims {
            return Err(Error::WeightShape {
                path: path.to_string(),
                expected: dims.to_vec(),
                found: t.shape().dims().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn vector(&self, path: &str, len: usize) -> Result<&[f32]> {
        Ok(self.get(path, [len, 1, 1, 1])?.data())
    }

    /// Reads the four batch-norm entries under `prefix`.
    pub fn batch_norm(&self, prefix: &str, channels: usize) -> Result<BatchNormParams> {
        let v = |name: &str| -> Result<Vec<f32>> {
            Ok(self.vector(&format!("{prefix}.{name}"), channels)?.to_vec())
        };
        Ok(BatchNormParams {
            gamma: v("weight")?,
            beta: v("bias")?,
            mean: v("running_mean")?,
            var: v("running_var")?,
            eps: BN_EPS,
        })
    }

    /// Checks that every schema entry is present with its declared shape.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for p in &schema.params {
            self.get(&p.path, p.dims)?;
        }
        Ok(())
    }

    /// Deterministic random parameters for `schema`: weights uniform in
    /// [-s, s] with s = sqrt(1 / fan_in), biases zero, batch norm identity.
    pub fn random(schema: &Schema, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for p in &schema.params {
            let n = p.numel();
            let data = match p.kind {
                ParamKind::Weight => {
                    let s = (1.0 / p.fan_in.max(1) as f32).sqrt();
                    (0..n).map(|_| rng.gen_range(-s..=s)).collect()
                }
                ParamKind::BnGamma | ParamKind::BnVar => vec![1.0; n],
                ParamKind::Bias | ParamKind::BnBeta | ParamKind::BnMean => vec![0.0; n],
            };
            store.insert(p.path.clone(), Tensor::new(p.shape(), data).expect("schema dims"));
        }
        store
    }

    /// All-zero parameters except batch-norm variance, which is one.
    pub fn zeros(schema: &Schema) -> Self {
        let mut store = Self::new();
        for p in &schema.params {
            let v = if p.kind == ParamKind::BnVar { 1.0 } else { 0.0 };
            store.insert(p.path.clone(), Tensor::full(p.shape(), v));
        }
        store
    }
}
