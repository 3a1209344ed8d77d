//! Continual test-time adaptation.
//!
//! The deployed student keeps learning online from a consistency MSE against
//! an EMA teacher while test volumes stream in; after every step a random
//! subset of student parameters resets to the frozen pre-adaptation snapshot,
//! which bounds drift and forgetting. The teacher's prediction is the
//! deployed output.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::TtaConfig;
use crate::contrast::stack_input;
use crate::error::CoreError;
use crate::morph::trim_mask;
use crate::nn::{mse_with_grad, seg_backward, seg_forward, sgd_step, ModelParams};
use crate::rng::{stream, STREAM_RESTORE};
use crate::volume::{flip_data, threshold_mask, ChannelVolume, Mask, Volume};
use crate::Result;

/// Online adaptation state. The source snapshot is frozen at construction
/// and never mutated afterwards.
#[derive(Debug, Clone)]
pub struct AdaptState {
    student: ModelParams,
    teacher: ModelParams,
    snapshot: ModelParams,
    steps: u64,
    config: TtaConfig,
    rng: ChaCha8Rng,
}

/// Per-step log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub l_tta: f64,
    pub restored: u64,
}

impl AdaptState {
    /// Start adaptation from a pretrained model; student, teacher and
    /// snapshot all begin as copies of it.
    pub fn new(pretrained: ModelParams, config: TtaConfig) -> Result<Self> {
        config.validate()?;
        let rng = stream(config.seed, &[STREAM_RESTORE]);
        Ok(Self {
            student: pretrained.clone(),
            teacher: pretrained.clone(),
            snapshot: pretrained,
            steps: 0,
            config,
            rng,
        })
    }

    pub fn student(&self) -> &ModelParams {
        &self.student
    }

    pub fn teacher(&self) -> &ModelParams {
        &self.teacher
    }

    pub fn snapshot(&self) -> &ModelParams {
        &self.snapshot
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &TtaConfig {
        &self.config
    }
}

/// Teacher prediction, optionally averaged over the eight axis-flip views.
fn teacher_probs(state: &AdaptState, x: &ChannelVolume) -> Result<(Volume, Vec<f64>)> {
    if !state.config.augment_average {
        let (vol, tape) = seg_forward(&state.teacher, x)?;
        return Ok((vol, tape.probs().to_vec()));
    }
    let dims = x.dims();
    let nvox = x.voxel_count();
    let mut acc = alloc::vec![0.0f64; nvox];
    let mut count = 0.0;
    for bits in 0..8u8 {
        let flips = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
        let channels: Vec<Volume> = (0..x.channels())
            .map(|c| Volume::new(dims, x.spacing_mm(), flip_data(x.channel(c), dims, flips)))
            .collect::<Result<_>>()?;
        let refs: Vec<&Volume> = channels.iter().collect();
        let flipped_input = ChannelVolume::from_channels(&refs)?;
        let (_, tape) = seg_forward(&state.teacher, &flipped_input)?;
        let unflipped = flip_data(tape.probs(), dims, flips);
        for (a, p) in acc.iter_mut().zip(&unflipped) {
            *a += p;
        }
        count += 1.0;
    }
    for a in acc.iter_mut() {
        *a /= count;
    }
    let vol = Volume::new(
        dims,
        x.spacing_mm(),
        acc.iter().map(|&p| p as f32).collect(),
    )?;
    Ok((vol, acc))
}

/// One online step: teacher prediction (no gradient), student consistency
/// step, EMA teacher update, stochastic restoration. Returns the teacher's
/// prediction for the incoming volume.
pub fn adapt_step(state: &mut AdaptState, x: &ChannelVolume) -> Result<(Volume, StepTrace)> {
    let (prediction, t_probs) = teacher_probs(state, x)?;

    let (_, s_tape) = seg_forward(&state.student, x)?;
    let (l_tta, d_prob) = mse_with_grad(s_tape.probs(), &t_probs);
    if state.config.lr_tta > 0.0 {
        let grads = seg_backward(&state.student, &s_tape, &d_prob)?;
        state.student = sgd_step(&state.student, &grads, state.config.lr_tta)?;
    }
    state.teacher = crate::teacher::ema_update(&state.teacher, &state.student, state.config.alpha_tta)?;
    let restored = stochastic_restore(state);
    state.steps += 1;
    Ok((prediction, StepTrace { l_tta, restored }))
}

/// Independently reset each student scalar to the source snapshot with
/// probability `restore_prob`; the teacher is untouched.
pub fn stochastic_restore(state: &mut AdaptState) -> u64 {
    let p = state.config.restore_prob;
    if p <= 0.0 {
        return 0;
    }
    let mut restored = 0u64;
    for ((_, t), (_, snap)) in state
        .student
        .entries_mut()
        .iter_mut()
        .zip(state.snapshot.entries())
    {
        for (v, &s) in t.data_mut().iter_mut().zip(snap.data()) {
            if state.rng.gen::<f64>() < p {
                *v = s;
                restored += 1;
            }
        }
    }
    restored
}

/// Fold `adapt_step` over an ordered stream of raw test volumes. Inputs pass
/// through the same stacking front end as training; emitted masks are the
/// teacher probabilities thresholded and, when configured, trimmed.
pub fn run_stream(
    state: &mut AdaptState,
    volumes: &[Volume],
    mapper: Option<&ModelParams>,
) -> Result<(Vec<Mask>, Vec<StepTrace>)> {
    if volumes.is_empty() {
        return Err(CoreError::EmptyInput("adaptation stream"));
    }
    let mut masks = Vec::with_capacity(volumes.len());
    let mut trace = Vec::with_capacity(volumes.len());
    for v in volumes {
        let input = stack_input(v, mapper)?;
        let (probs, t) = adapt_step(state, &input)?;
        let mask = threshold_mask(&probs, state.config.threshold);
        let mask = if state.config.trim {
            trim_mask(&mask, state.config.min_fraction)
        } else {
            mask
        };
        masks.push(mask);
        trace.push(t);
    }
    Ok((masks, trace))
}
