//! Segmentation and consistency losses with analytic gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fm;
use crate::volume::{Mask, Volume};
use crate::Result;

/// Smoothing term in the Dice loss denominator and numerator.
pub const DICE_EPS: f64 = 1e-5;
/// Probability clamp applied inside binary cross-entropy.
pub const CE_CLAMP: f64 = 1e-7;

/// A scalar objective together with its named components. `total` is always
/// the documented weighted sum of the components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub components: Vec<(String, f64)>,
}

impl LossValue {
    pub fn single(name: &str, value: f64) -> Self {
        Self {
            total: value,
            components: alloc::vec![(String::from(name), value)],
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

fn check_pair(pred: &Volume, target: &Mask) -> Result<()> {
    if !target.same_geometry_as_volume(pred) {
        return Err(CoreError::GeometryMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    Ok(())
}

/// Soft Dice loss `1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)`.
pub fn dice_loss(pred: &Volume, target: &Mask) -> Result<LossValue> {
    check_pair(pred, target)?;
    let p: Vec<f64> = pred.data().iter().map(|&x| x as f64).collect();
    let (v, _) = dice_with_grad(&p, target.data());
    Ok(LossValue::single("dice", v))
}

/// Mean binary cross-entropy with the prediction clamped to
/// `[CE_CLAMP, 1 - CE_CLAMP]`.
pub fn ce_loss(pred: &Volume, target: &Mask) -> Result<LossValue> {
    check_pair(pred, target)?;
    let p: Vec<f64> = pred.data().iter().map(|&x| x as f64).collect();
    let (v, _) = ce_with_grad(&p, target.data());
    Ok(LossValue::single("ce", v))
}

/// Mean squared difference between two probability volumes.
pub fn mse_consistency(student: &Volume, teacher: &Volume) -> Result<LossValue> {
    if !student.same_geometry(teacher) {
        return Err(CoreError::GeometryMismatch(format!(
            "student {:?} vs teacher {:?}",
            student.dims(),
            teacher.dims()
        )));
    }
    let a: Vec<f64> = student.data().iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = teacher.data().iter().map(|&x| x as f64).collect();
    let (v, _) = mse_with_grad(&a, &b);
    Ok(LossValue::single("mse", v))
}

/// Dice loss and its gradient with respect to the prediction.
pub(crate) fn dice_with_grad(pred: &[f64], target: &[u8]) -> (f64, Vec<f64>) {
    let mut sum_pt = 0.0;
    let mut sum_p = 0.0;
    let mut sum_t = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        sum_p += p;
        if t == 1 {
            sum_pt += p;
            sum_t += 1.0;
        }
    }
    let num = 2.0 * sum_pt + DICE_EPS;
    let den = sum_p + sum_t + DICE_EPS;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let grad: Vec<f64> = target
        .iter()
        .map(|&t| {
            let tt = t as f64;
            -(2.0 * tt * den - num) / den2
        })
        .collect();
    (loss, grad)
}

/// Mean binary cross-entropy and its gradient with respect to the
/// prediction. The gradient is zero where the clamp is active.
pub(crate) fn ce_with_grad(pred: &[f64], target: &[u8]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let clamped = p < CE_CLAMP || p > 1.0 - CE_CLAMP;
        let q = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        let tt = t as f64;
        loss -= tt * fm::ln(q) + (1.0 - tt) * fm::ln(1.0 - q);
        grad.push(if clamped {
            0.0
        } else {
            (q - tt) / (q * (1.0 - q)) / n
        });
    }
    (loss / n, grad)
}

/// Mean squared difference and its gradient with respect to the first
/// argument.
pub(crate) fn mse_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let n = a.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    (loss / n, grad)
}
