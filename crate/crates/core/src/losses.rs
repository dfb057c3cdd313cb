//! Detail loss = dice + binary cross-entropy, with analytic gradients with
//! respect to the predicted probabilities.
//!
//! The slice functions operate on one map. Masked-out pixels (mask `false`)
//! are excluded from every sum and receive zero gradient. Generic over the
//! float type so gradient checks can run in `f64`.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Laplace smoothing term of the dice loss.
pub const DICE_EPS: f64 = 1.0;

/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] inside the BCE.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub total: T,
    pub dice: T,
    pub bce: T,
    /// d total / d p, same layout as the prediction.
    pub gradient: Vec<T>,
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("representable constant")
}

fn check_inputs<T>(op: &'static str, p: &[T], g: &[T], mask: Option<&[bool]>) -> Result<()> {
    if p.len() != g.len() {
        return Err(Error::shape(
            op,
            format!("prediction has {} pixels, target {}", p.len(), g.len()),
        ));
    }
    if let Some(m) = mask {
        if m.len() != p.len() {
            return Err(Error::shape(
                op,
                format!("mask has {} pixels, prediction {}", m.len(), p.len()),
            ));
        }
    }
    Ok(())
}

fn active(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// 1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps)
pub fn dice_loss<T: Float>(p: &[T], g: &[T], mask: Option<&[bool]>, eps: T) -> Result<(T, Vec<T>)> {
    check_inputs("dice_loss", p, g, mask)?;
    if eps <= T::zero() {
        return Err(Error::Config("dice smoothing must be > 0".into()));
    }
    let two = cast::<T>(2.0);
    let (mut inter, mut denom) = (T::zero(), eps);
    for i in 0..p.len() {
        if active(mask, i) {
            inter = inter + p[i] * g[i];
            denom = denom + p[i] * p[i] + g[i] * g[i];
        }
    }
    let numer = two * inter + eps;
    let value = T::one() - numer / denom;
    let d2 = denom * denom;
    let grad = (0..p.len())
        .map(|i| {
            if active(mask, i) {
                -(two * g[i] * denom - numer * two * p[i]) / d2
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((value, grad))
}

/// Mean over unmasked pixels of -[g ln p + (1 - g) ln(1 - p)].
pub fn bce_loss<T: Float>(p: &[T], g: &[T], mask: Option<&[bool]>) -> Result<(T, Vec<T>)> {
    check_inputs("bce_loss", p, g, mask)?;
    let count = (0..p.len()).filter(|&i| active(mask, i)).count();
    if count == 0 {
        return Ok((T::zero(), vec![T::zero(); p.len()]));
    }
    let n = T::from(count).expect("pixel count fits");
    let lo = cast::<T>(PROB_CLAMP);
    let hi = T::one() - lo;
    let mut sum = T::zero();
    let mut grad = vec![T::zero(); p.len()];
    for i in 0..p.len() {
        if !active(mask, i) {
            continue;
        }
        let pi = p[i].max(lo).min(hi);
        let gi = g[i];
        sum = sum - (gi * pi.ln() + (T::one() - gi) * (T::one() - pi).ln());
        grad[i] = (pi - gi) / (pi * (T::one() - pi)) / n;
    }
    Ok((sum / n, grad))
}

/// Dice plus BCE with unit weights.
pub fn detail_loss<T: Float>(p: &[T], g: &[T], mask: Option<&[bool]>, eps: T) -> Result<LossValue<T>> {
    let (dice, dg) = dice_loss(p, g, mask, eps)?;
    let (bce, bg) = bce_loss(p, g, mask)?;
    Ok(LossValue {
        total: dice + bce,
        dice,
        bce,
        gradient: dg.iter().zip(&bg).map(|(&a, &b)| a + b).collect(),
    })
}

/// Batched detail loss on (batch, 1, H, W) tensors: computed per image and
/// averaged, so the gradient carries a 1/batch factor.
pub fn detail_loss_tensor(p: &Tensor, g: &Tensor, mask: Option<&[bool]>, eps: f64) -> Result<LossValue<f32>> {
    if p.shape() != g.shape() {
        return Err(Error::shape(
            "detail_loss",
            format!("prediction {} vs target {}", p.shape(), g.shape()),
        ));
    }
    check_inputs("detail_loss", p.data(), g.data(), mask)?;
    let s = p.shape();
    let per = s.image();
    let inv_b = 1.0 / s.batch as f32;
    let mut out = LossValue {
        total: 0.0,
        dice: 0.0,
        bce: 0.0,
        gradient: Vec::with_capacity(s.numel()),
    };
    for b in 0..s.batch {
        let range = b * per..(b + 1) * per;
        let m = mask.map(|m| &m[range.clone()]);
        let v = detail_loss(&p.data()[range.clone()], &g.data()[range], m, eps as f32)?;
        out.dice += v.dice * inv_b;
        out.bce += v.bce * inv_b;
        out.gradient.extend(v.gradient.iter().map(|d| d * inv_b));
    }
    out.total = out.dice + out.bce;
    Ok(out)
}

/// Result of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error of one coordinate. Entries far below the gradient's
/// overall scale are compared against that scale instead of themselves.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3 * scale);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Central finite differences (f(p + h e_i) - f(p - h e_i)) / 2h against the
/// analytic gradient returned by `loss`.
pub fn grad_check<F>(loss: F, p: &[f64], h: f64) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = loss(p)?;
    let mut probe = p.to_vec();
    let mut numeric = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        probe[i] = p[i] + h;
        let (up, _) = loss(&probe)?;
        probe[i] = p[i] - h;
        let (down, _) = loss(&probe)?;
        probe[i] = p[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let scale = analytic.iter().fold(0f64, |m, v| m.max(v.abs()));
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, scale))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
