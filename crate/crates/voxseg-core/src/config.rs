//! Hyperparameter bundles for training and test-time adaptation.

use alloc::format;
use alloc::string::String;

use crate::error::CoreError;
use crate::Result;

/// Knobs for the stochastic view perturbation applied to unlabeled samples.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct AugmentConfig {
    /// Apply random histogram-matching style transfer.
    pub style: bool,
    /// Probability of blending the matched volume with the original instead
    /// of taking it outright.
    pub blend_prob: f64,
    /// Blend factor range for the matched component.
    pub blend_min: f64,
    pub blend_max: f64,
    /// Random axis flips (each axis independently with probability 0.5).
    pub flips: bool,
    /// Multiplicative intensity factor range; set to [1, 1] to disable.
    pub intensity_min: f64,
    pub intensity_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            style: true,
            blend_prob: 0.5,
            blend_min: 0.5,
            blend_max: 1.0,
            flips: true,
            intensity_min: 0.8,
            intensity_max: 1.25,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which both views reproduce the input exactly.
    pub fn identity() -> Self {
        Self {
            style: false,
            blend_prob: 0.0,
            blend_min: 1.0,
            blend_max: 1.0,
            flips: false,
            intensity_min: 1.0,
            intensity_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blend_prob) {
            return Err(CoreError::InvalidConfig(format!(
                "blend_prob {} outside [0, 1]",
                self.blend_prob
            )));
        }
        if self.blend_min > self.blend_max || self.intensity_min > self.intensity_max {
            return Err(CoreError::InvalidConfig(String::from(
                "augment ranges must satisfy min <= max",
            )));
        }
        if self.intensity_min <= 0.0 {
            return Err(CoreError::InvalidConfig(String::from(
                "intensity_min must be positive",
            )));
        }
        Ok(())
    }
}

/// Hyperparameters for supervised, semi-supervised and fine-tuning runs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct TrainConfig {
    /// EMA smoothing coefficient for the teacher, in [0, 1).
    pub alpha_ema: f64,
    /// Final consistency weight after ramp-up.
    pub lambda_mse_max: f64,
    /// Epochs over which the consistency weight ramps linearly from 0.
    pub rampup_epochs: u32,
    pub epochs: u32,
    /// Base learning rate; decays per epoch as `lr0 * (1 - e/E)^poly_power`.
    pub lr0: f64,
    pub poly_power: f64,
    /// Weight of the structural term in the contrast-mapper loss.
    pub lambda_ssim: f64,
    /// All volumes are resampled to this spacing before training.
    pub target_spacing_mm: [f64; 3],
    pub seed: u64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// Training crop size; clamped per axis to the volume dims.
    pub patch: [usize; 3],
    pub augment: AugmentConfig,
    /// Also style-transfer labeled samples (masks are unaffected).
    pub style_labeled: bool,
    /// Use the trained contrast mapper for the second input channel;
    /// otherwise the normalized input is duplicated.
    pub contrast_enabled: bool,
    pub contrast_epochs: u32,
    pub finetune_epochs: u32,
    /// Foreground threshold for predictions and pseudo-labels.
    pub threshold: f64,
    /// Optional minimum mean foreground confidence for keeping a
    /// pseudo-labeled case; disabled by default.
    pub min_confidence: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_ema: 0.99,
            lambda_mse_max: 1.0,
            rampup_epochs: 40,
            epochs: 150,
            lr0: 0.01,
            poly_power: 0.9,
            lambda_ssim: 0.8,
            target_spacing_mm: [1.0, 1.0, 2.5],
            seed: 0,
            labeled_batch: 2,
            unlabeled_batch: 4,
            patch: [32, 32, 32],
            augment: AugmentConfig::default(),
            style_labeled: true,
            contrast_enabled: true,
            contrast_epochs: 200,
            finetune_epochs: 30,
            threshold: 0.5,
            min_confidence: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha_ema) {
            return Err(CoreError::InvalidConfig(format!(
                "alpha_ema {} outside [0, 1)",
                self.alpha_ema
            )));
        }
        if self.lambda_mse_max < 0.0 {
            return Err(CoreError::InvalidConfig(String::from(
                "lambda_mse_max must be >= 0",
            )));
        }
        if !(self.lr0 > 0.0) {
            return Err(CoreError::InvalidConfig(String::from("lr0 must be > 0")));
        }
        if self
            .target_spacing_mm
            .iter()
            .any(|&s| !(s > 0.0) || !s.is_finite())
        {
            return Err(CoreError::InvalidSpacing(self.target_spacing_mm));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(CoreError::InvalidConfig(String::from(
                "batch sizes must be >= 1",
            )));
        }
        if self.patch.iter().any(|&p| p == 0) {
            return Err(CoreError::InvalidConfig(String::from(
                "patch dims must be >= 1",
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) || self.threshold <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        self.augment.validate()
    }

    /// Polynomially decayed learning rate for the given epoch.
    pub fn lr_at(&self, epoch: u32) -> f64 {
        if self.epochs == 0 {
            return self.lr0;
        }
        let frac = 1.0 - epoch as f64 / self.epochs as f64;
        self.lr0 * crate::fm::powf(frac.max(0.0), self.poly_power)
    }
}

/// Settings for continual test-time adaptation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields, default)
)]
pub struct TtaConfig {
    /// Per-parameter probability of resetting to the source snapshot after
    /// each step.
    pub restore_prob: f64,
    /// EMA coefficient of the adaptation teacher.
    pub alpha_tta: f64,
    /// Student learning rate during adaptation.
    pub lr_tta: f64,
    pub seed: u64,
    /// Average the consistency target over flip-augmented teacher passes.
    pub augment_average: bool,
    pub threshold: f64,
    /// Apply morphological trimming to the emitted masks.
    pub trim: bool,
    pub min_fraction: f64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            restore_prob: 0.01,
            alpha_tta: 0.999,
            lr_tta: 0.001,
            seed: 0,
            augment_average: false,
            threshold: 0.5,
            trim: true,
            min_fraction: 1.0,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.restore_prob) {
            return Err(CoreError::InvalidConfig(format!(
                "restore_prob {} outside [0, 1]",
                self.restore_prob
            )));
        }
        if !(0.0..1.0).contains(&self.alpha_tta) {
            return Err(CoreError::InvalidConfig(format!(
                "alpha_tta {} outside [0, 1)",
                self.alpha_tta
            )));
        }
        if self.lr_tta < 0.0 {
            return Err(CoreError::InvalidConfig(String::from(
                "lr_tta must be >= 0",
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TtaConfig::default().validate().unwrap();
        AugmentConfig::identity().validate().unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = TrainConfig::default();
        c.alpha_ema = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr0 = 0.0;
        assert!(c.validate().is_err());
        let mut t = TtaConfig::default();
        t.restore_prob = 1.5;
        assert!(t.validate().is_err());
    }

    #[test]
    fn lr_decays_polynomially() {
        let c = TrainConfig {
            epochs: 100,
            lr0: 0.01,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(0), 0.01);
        let mid = c.lr_at(50);
        assert!((mid - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-12);
        assert!(c.lr_at(99) > 0.0 && c.lr_at(99) < mid);
    }
}
