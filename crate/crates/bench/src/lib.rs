//! Fixtures shared by the criterion benchmarks.

use stdc_core::{Shape, Tensor};

/// Deterministic input with values in [-0.5, 0.5).
pub fn input(shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |b, c, y, x| ((b * 13 + c * 7 + y * 5 + x * 3) % 29) as f32 / 29.0 - 0.5)
}
