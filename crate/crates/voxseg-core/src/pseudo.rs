//! Pseudo-label generation and fine-tuning on the labeled/pseudo union.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::TrainConfig;
use crate::error::CoreError;
use crate::nn::ModelParams;
use crate::teacher::{predict, run_training, LabeledCase, TrainData, TrainOutput};
use crate::volume::{threshold_mask, Mask, Volume};
use crate::Result;

/// One pool volume labeled by the model's own prediction.
#[derive(Debug, Clone)]
pub struct PseudoCase {
    pub id: String,
    pub mask: Mask,
    /// Mean predicted probability over pseudo-foreground voxels; 0 when the
    /// mask is empty.
    pub confidence: f64,
}

/// Threshold the trained student's predictions over a pool of unlabeled
/// volumes. Deterministic: regenerating from the same checkpoint yields
/// identical masks.
pub fn generate_pseudo_labels(
    student: &ModelParams,
    pool: &[(String, Volume)],
    mapper: Option<&ModelParams>,
    threshold: f64,
) -> Result<Vec<PseudoCase>> {
    let mut out = Vec::with_capacity(pool.len());
    for (id, volume) in pool {
        let probs = predict(student, volume, mapper)?;
        let mask = threshold_mask(&probs, threshold);
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (&p, &m) in probs.data().iter().zip(mask.data()) {
            if m == 1 {
                sum += p as f64;
                count += 1;
            }
        }
        let confidence = if count == 0 { 0.0 } else { sum / count as f64 };
        out.push(PseudoCase {
            id: id.clone(),
            mask,
            confidence,
        });
    }
    Ok(out)
}

/// Fine-tune with the supervised term drawn from the union of true-labeled
/// and pseudo-labeled cases (pseudo masks as hard labels); the consistency
/// term stays on the unlabeled set. Runs `config.finetune_epochs` epochs of
/// the same engine as `train` with the learning-rate schedule restarted.
/// The consistency ramp is a cold-start device, so fine-tuning starts warm
/// with the weight already at `lambda_mse_max`.
pub fn finetune(
    student: ModelParams,
    teacher: ModelParams,
    data: &TrainData,
    pool: &[(String, Volume)],
    pseudo: &[PseudoCase],
    config: &TrainConfig,
    mapper: Option<&ModelParams>,
) -> Result<TrainOutput> {
    let mut union = data.clone();
    for case in pseudo {
        if let Some(min) = config.min_confidence {
            if case.confidence < min {
                continue;
            }
        }
        let volume = pool
            .iter()
            .find(|(id, _)| id == &case.id)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| {
                CoreError::InvalidConfig(alloc::format!(
                    "pseudo case {} has no matching pool volume",
                    case.id
                ))
            })?;
        union
            .labeled
            .push(LabeledCase::new(volume, case.mask.clone(), case.id.clone())?);
    }
    if union.labeled.is_empty() {
        return Err(CoreError::EmptyInput("labeled/pseudo union"));
    }
    let warm = TrainConfig {
        rampup_epochs: 0,
        ..config.clone()
    };
    run_training(student, teacher, &union, &warm, mapper, warm.finetune_epochs)
}
