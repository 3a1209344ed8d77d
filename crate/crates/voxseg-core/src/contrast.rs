//! Contrast-aware enhancement: train a small mapper between the pre- and
//! post-contrast modality on aligned pairs, then stack the original and
//! enhanced input as a two-channel network input.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::TrainConfig;
use crate::error::CoreError;
use crate::nn::{map_backward, map_forward, mse_with_grad, sgd_step, ArchId, LossValue, ModelParams};
use crate::ssim::{ssim3d, ssim_with_grad};
use crate::volume::{resample_trilinear, zscore_normalize, ChannelVolume, Volume};
use crate::Result;

/// A pre-aligned pre-/post-contrast volume pair.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub t1: Volume,
    pub ged4: Volume,
    pub id: String,
}

impl AlignedPair {
    pub fn new(t1: Volume, ged4: Volume, id: String) -> Result<Self> {
        if !t1.same_geometry(&ged4) {
            return Err(CoreError::GeometryMismatch(format!(
                "pair {id}: t1 {:?} vs ged4 {:?}",
                t1.dims(),
                ged4.dims()
            )));
        }
        Ok(Self { t1, ged4, id })
    }
}

/// Combined reconstruction loss: `mse + lambda_ssim * (1 - ssim)`.
///
/// Components are reported as `mse` and `ssim_loss` (the `1 - ssim` term),
/// so `total = mse + lambda_ssim * ssim_loss`.
pub fn contrast_loss(pred: &Volume, target: &Volume, lambda_ssim: f64) -> Result<LossValue> {
    if !pred.same_geometry(target) {
        return Err(CoreError::GeometryMismatch(format!(
            "pred {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let a: Vec<f64> = pred.data().iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = target.data().iter().map(|&x| x as f64).collect();
    let (mse, _) = mse_with_grad(&a, &b);
    let ssim = ssim3d(pred, target)?;
    let ssim_loss = 1.0 - ssim;
    Ok(LossValue {
        total: mse + lambda_ssim * ssim_loss,
        components: alloc::vec![
            (String::from("mse"), mse),
            (String::from("ssim_loss"), ssim_loss),
        ],
    })
}

/// Loss and gradient with respect to the prediction, on f64 buffers.
pub(crate) fn contrast_loss_with_grad(
    pred: &[f64],
    target: &[f64],
    dims: [usize; 3],
    lambda_ssim: f64,
) -> (LossValue, Vec<f64>) {
    let (mse, mut grad) = mse_with_grad(pred, target);
    let (ssim, ssim_grad) = ssim_with_grad(pred, target, dims);
    for (g, s) in grad.iter_mut().zip(&ssim_grad) {
        *g -= lambda_ssim * s;
    }
    let ssim_loss = 1.0 - ssim;
    (
        LossValue {
            total: mse + lambda_ssim * ssim_loss,
            components: alloc::vec![
                (String::from("mse"), mse),
                (String::from("ssim_loss"), ssim_loss),
            ],
        },
        grad,
    )
}

/// Per-epoch mean training loss of the contrast mapper.
pub type ContrastHistory = Vec<LossValue>;

/// Train the mapper on aligned pairs with plain SGD, one step per pair per
/// epoch, polynomial learning-rate decay per epoch.
///
/// Pairs are resampled to `config.target_spacing_mm` first. With zero epochs
/// the seeded initialization is returned unchanged.
pub fn train_contrast_mapper(
    pairs: &[AlignedPair],
    config: &TrainConfig,
) -> Result<(ModelParams, ContrastHistory)> {
    if pairs.is_empty() {
        return Err(CoreError::EmptyInput("aligned pair list"));
    }
    config.validate()?;
    let resampled: Vec<(Volume, Volume)> = pairs
        .iter()
        .map(|p| {
            Ok((
                resample_trilinear(&p.t1, config.target_spacing_mm)?,
                resample_trilinear(&p.ged4, config.target_spacing_mm)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut params = ModelParams::init(ArchId::MapV1, config.seed);
    let mut history = Vec::with_capacity(config.contrast_epochs as usize);
    let epochs = config.contrast_epochs;
    for epoch in 0..epochs {
        let frac = 1.0 - epoch as f64 / epochs as f64;
        let lr = config.lr0 * crate::fm::powf(frac, config.poly_power);
        let mut mse_sum = 0.0;
        let mut ssim_sum = 0.0;
        for (t1, ged4) in &resampled {
            let (_, tape) = map_forward(&params, t1)?;
            let target: Vec<f64> = ged4.data().iter().map(|&x| x as f64).collect();
            let (loss, d_out) =
                contrast_loss_with_grad(tape.output(), &target, t1.dims(), config.lambda_ssim);
            let grads = map_backward(&params, &tape, &d_out)?;
            params = sgd_step(&params, &grads, lr)?;
            mse_sum += loss.component("mse").unwrap_or(0.0);
            ssim_sum += loss.component("ssim_loss").unwrap_or(0.0);
        }
        let n = resampled.len() as f64;
        let mse = mse_sum / n;
        let ssim_loss = ssim_sum / n;
        history.push(LossValue {
            total: mse + config.lambda_ssim * ssim_loss,
            components: alloc::vec![
                (String::from("mse"), mse),
                (String::from("ssim_loss"), ssim_loss),
            ],
        });
    }
    Ok((params, history))
}

/// Mean per-voxel squared error of the mapper on one pair, for validation.
pub fn mapper_mse(mapper: &ModelParams, pair: &AlignedPair) -> Result<f64> {
    let (pred, _) = map_forward(mapper, &pair.t1)?;
    let a: Vec<f64> = pred.data().iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = pair.ged4.data().iter().map(|&x| x as f64).collect();
    Ok(mse_with_grad(&a, &b).0)
}

/// Two-channel input: normalized original plus normalized mapper output.
pub fn enhance_and_stack(ged4: &Volume, mapper: &ModelParams) -> Result<ChannelVolume> {
    let (enhanced, _) = map_forward(mapper, ged4)?;
    ChannelVolume::from_channels(&[&zscore_normalize(ged4), &zscore_normalize(&enhanced)])
}

/// Two-channel input with the normalized original duplicated; used when the
/// contrast module is disabled.
pub fn plain_stack(ged4: &Volume) -> Result<ChannelVolume> {
    let z = zscore_normalize(ged4);
    ChannelVolume::from_channels(&[&z, &z])
}

/// Stack according to configuration.
pub fn stack_input(ged4: &Volume, mapper: Option<&ModelParams>) -> Result<ChannelVolume> {
    match mapper {
        Some(m) => enhance_and_stack(ged4, m),
        None => plain_stack(ged4),
    }
}
