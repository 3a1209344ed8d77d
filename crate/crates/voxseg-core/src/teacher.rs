//! Mean-teacher semi-supervised training.
//!
//! The student is optimized on Dice + cross-entropy over labeled crops plus
//! a ramped consistency MSE between its predictions and an EMA teacher's on
//! two independently perturbed views of unlabeled crops. The teacher is
//! never touched by the optimizer; after every student step it is updated as
//! `phi <- alpha * phi + (1 - alpha) * theta`.
//!
//! Every random decision draws from a stream derived from (seed, epoch,
//! step, slot), so trajectories are bit-reproducible and independent of
//! batch composition.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::contrast::stack_input;
use crate::error::CoreError;
use crate::hist::{augment_view, StyleBank};
use crate::nn::{
    ce_with_grad, dice_with_grad, mse_with_grad, seg_backward, seg_forward, sgd_step, ArchId,
    LossValue, ModelParams,
};
use crate::rng::{stream, STREAM_AUGMENT, STREAM_CROP, STREAM_ORDER};
use crate::volume::{flip_data, ChannelVolume, Mask, Volume};
use crate::Result;

/// Exponential moving average of the student into the teacher: every element
/// becomes `alpha*phi + (1-alpha)*theta`.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, alpha: f64) -> Result<ModelParams> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(CoreError::InvalidConfig(alloc::format!(
            "alpha {alpha} outside [0, 1)"
        )));
    }
    let mut out = teacher.clone();
    out.scale(alpha);
    out.axpy(1.0 - alpha, student)?;
    Ok(out)
}

/// Linear consistency-weight ramp: `lambda_max * min(epoch / rampup, 1)`.
pub fn ramp_lambda(epoch: u32, config: &TrainConfig) -> f64 {
    if config.rampup_epochs == 0 {
        return config.lambda_mse_max;
    }
    let frac = (epoch as f64 / config.rampup_epochs as f64).min(1.0);
    config.lambda_mse_max * frac
}

/// One labeled training sample with its ground-truth mask.
#[derive(Debug, Clone)]
pub struct LabeledCase {
    pub volume: Volume,
    pub mask: Mask,
    pub id: String,
}

impl LabeledCase {
    pub fn new(volume: Volume, mask: Mask, id: String) -> Result<Self> {
        if !mask.same_geometry_as_volume(&volume) {
            return Err(CoreError::GeometryMismatch(alloc::format!(
                "case {id}: mask geometry does not match volume"
            )));
        }
        Ok(Self { volume, mask, id })
    }
}

/// In-memory training set.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub labeled: Vec<LabeledCase>,
    pub unlabeled: Vec<Volume>,
    pub bank: StyleBank,
}

/// Per-epoch mean loss components, the rows of `history.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub dice: f64,
    pub ce: f64,
    pub mse: f64,
    pub lambda: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub history: Vec<EpochStats>,
}

/// A preprocessed labeled batch member: stacked input and cropped target.
pub struct LabeledItem {
    pub input: ChannelVolume,
    pub target: Mask,
}

/// A preprocessed unlabeled batch member: two stacked views plus the flips
/// needed to map each prediction back to the common crop frame.
pub struct ConsistencyItem {
    pub student_input: ChannelVolume,
    pub student_flips: [bool; 3],
    pub teacher_input: ChannelVolume,
    pub teacher_flips: [bool; 3],
}

/// One optimization step on `L_sup + lambda * L_mse`, followed by the EMA
/// teacher update. The teacher receives no gradient.
pub fn train_step(
    student: &ModelParams,
    teacher: &ModelParams,
    labeled: &[LabeledItem],
    unlabeled: &[ConsistencyItem],
    lambda: f64,
    lr: f64,
    alpha: f64,
) -> Result<(ModelParams, ModelParams, LossValue)> {
    if labeled.is_empty() && (lambda == 0.0 || unlabeled.is_empty()) {
        return Err(CoreError::EmptyInput(
            "nothing to optimize: no labeled batch and no weighted consistency batch",
        ));
    }

    let mut grad_acc = student.zeros_like();
    let mut dice_sum = 0.0;
    let mut ce_sum = 0.0;
    let inv_nl = if labeled.is_empty() {
        0.0
    } else {
        1.0 / labeled.len() as f64
    };
    for item in labeled {
        let (_, tape) = seg_forward(student, &item.input)?;
        let (dice, d_dice) = dice_with_grad(tape.probs(), item.target.data());
        let (ce, d_ce) = ce_with_grad(tape.probs(), item.target.data());
        let d_prob: Vec<f64> = d_dice.iter().zip(&d_ce).map(|(a, b)| a + b).collect();
        let g = seg_backward(student, &tape, &d_prob)?;
        grad_acc.axpy(inv_nl, &g)?;
        dice_sum += dice;
        ce_sum += ce;
    }

    let mut mse_sum = 0.0;
    if !unlabeled.is_empty() {
        let inv_nu = 1.0 / unlabeled.len() as f64;
        for item in unlabeled {
            let dims = item.student_input.dims();
            let (_, s_tape) = seg_forward(student, &item.student_input)?;
            let (_, t_tape) = seg_forward(teacher, &item.teacher_input)?;
            // map both predictions back to the common crop frame
            let s_common = flip_data(s_tape.probs(), dims, item.student_flips);
            let t_common = flip_data(t_tape.probs(), dims, item.teacher_flips);
            let (mse, d_common) = mse_with_grad(&s_common, &t_common);
            mse_sum += mse;
            if lambda > 0.0 {
                // gradient back into the student's view frame
                let d_view = flip_data(&d_common, dims, item.student_flips);
                let g = seg_backward(student, &s_tape, &d_view)?;
                grad_acc.axpy(lambda * inv_nu, &g)?;
            }
        }
    }

    let new_student = sgd_step(student, &grad_acc, lr)?;
    let new_teacher = ema_update(teacher, &new_student, alpha)?;

    let dice = dice_sum * inv_nl;
    let ce = ce_sum * inv_nl;
    let mse = if unlabeled.is_empty() {
        0.0
    } else {
        mse_sum / unlabeled.len() as f64
    };
    let loss = LossValue {
        total: dice + ce + lambda * mse,
        components: alloc::vec![
            (String::from("dice"), dice),
            (String::from("ce"), ce),
            (String::from("mse"), mse),
        ],
    };
    Ok((new_student, new_teacher, loss))
}

/// Run the mean-teacher loop for `epochs` epochs starting from the given
/// parameters. `train` and fine-tuning both reduce to this engine; learning
/// rate and ramp schedules restart for each invocation.
pub fn run_training(
    init_student: ModelParams,
    init_teacher: ModelParams,
    data: &TrainData,
    config: &TrainConfig,
    mapper: Option<&ModelParams>,
    epochs: u32,
) -> Result<TrainOutput> {
    config.validate()?;
    let use_unlabeled = config.lambda_mse_max > 0.0 && !data.unlabeled.is_empty();
    if use_unlabeled && data.bank.is_empty() && config.augment.style {
        return Err(CoreError::EmptyStyleBank);
    }

    let mut student = init_student;
    let mut teacher = init_teacher;
    let mut history = Vec::with_capacity(epochs as usize);

    let nl = data.labeled.len();
    let nu = if use_unlabeled { data.unlabeled.len() } else { 0 };
    if nl + nu == 0 {
        return Err(CoreError::EmptyInput("no training data"));
    }
    let bl = config.labeled_batch.min(nl.max(1));
    let bu = config.unlabeled_batch.min(nu.max(1));
    let steps_l = if nl == 0 { 0 } else { nl.div_ceil(bl) };
    let steps_u = if nu == 0 { 0 } else { nu.div_ceil(bu) };
    let n_steps = steps_l.max(steps_u);

    for epoch in 0..epochs {
        let frac = 1.0 - epoch as f64 / epochs as f64;
        let lr = config.lr0 * crate::fm::powf(frac, config.poly_power);
        let lambda = ramp_lambda(epoch, config);

        let mut l_order: Vec<usize> = (0..nl).collect();
        l_order.shuffle(&mut stream(config.seed, &[STREAM_ORDER, 0, epoch as u64]));
        let mut u_order: Vec<usize> = (0..nu).collect();
        u_order.shuffle(&mut stream(config.seed, &[STREAM_ORDER, 1, epoch as u64]));

        let mut dice_acc = 0.0;
        let mut ce_acc = 0.0;
        let mut mse_acc = 0.0;
        for s in 0..n_steps {
            let mut labeled_items = Vec::new();
            if nl > 0 {
                for j in 0..bl {
                    let case = &data.labeled[l_order[(s * bl + j) % nl]];
                    labeled_items.push(prepare_labeled(
                        case,
                        data,
                        config,
                        mapper,
                        epoch,
                        s as u64,
                        j as u64,
                    )?);
                }
            }
            let mut consistency_items = Vec::new();
            if nu > 0 {
                for j in 0..bu {
                    let vol = &data.unlabeled[u_order[(s * bu + j) % nu]];
                    consistency_items.push(prepare_unlabeled(
                        vol,
                        data,
                        config,
                        mapper,
                        epoch,
                        s as u64,
                        j as u64,
                    )?);
                }
            }
            let (new_s, new_t, loss) = train_step(
                &student,
                &teacher,
                &labeled_items,
                &consistency_items,
                lambda,
                lr,
                config.alpha_ema,
            )?;
            student = new_s;
            teacher = new_t;
            dice_acc += loss.component("dice").unwrap_or(0.0);
            ce_acc += loss.component("ce").unwrap_or(0.0);
            mse_acc += loss.component("mse").unwrap_or(0.0);
        }
        history.push(EpochStats {
            epoch,
            dice: dice_acc / n_steps as f64,
            ce: ce_acc / n_steps as f64,
            mse: mse_acc / n_steps as f64,
            lambda,
            lr,
        });
    }
    Ok(TrainOutput {
        student,
        teacher,
        history,
    })
}

/// Mean-teacher training from a fresh seeded initialization.
pub fn train(
    data: &TrainData,
    config: &TrainConfig,
    mapper: Option<&ModelParams>,
) -> Result<TrainOutput> {
    if data.labeled.is_empty() {
        return Err(CoreError::EmptyInput("labeled training set"));
    }
    let student = ModelParams::init(ArchId::SegV1, config.seed);
    let teacher = student.clone();
    run_training(student, teacher, data, config, mapper, config.epochs)
}

/// Full-volume probability prediction through the stacking front end.
pub fn predict(
    params: &ModelParams,
    ged4: &Volume,
    mapper: Option<&ModelParams>,
) -> Result<Volume> {
    let input = stack_input(ged4, mapper)?;
    let (probs, _) = seg_forward(params, &input)?;
    Ok(probs)
}

fn random_crop_origin(
    dims: [usize; 3],
    patch: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> ([usize; 3], [usize; 3]) {
    let mut origin = [0usize; 3];
    let mut size = [0usize; 3];
    for a in 0..3 {
        size[a] = patch[a].min(dims[a]);
        let slack = dims[a] - size[a];
        origin[a] = if slack == 0 {
            0
        } else {
            rng.gen_range(0..=slack)
        };
    }
    (origin, size)
}

fn prepare_labeled(
    case: &LabeledCase,
    data: &TrainData,
    config: &TrainConfig,
    mapper: Option<&ModelParams>,
    epoch: u32,
    step: u64,
    slot: u64,
) -> Result<LabeledItem> {
    let mut crop_rng = stream(config.seed, &[STREAM_CROP, 0, epoch as u64, step, slot]);
    let (origin, size) = random_crop_origin(case.volume.dims(), config.patch, &mut crop_rng);
    let patch = case.volume.crop(origin, size)?;
    let target = case.mask.crop(origin, size)?;
    let patch = if config.style_labeled && config.augment.style && !data.bank.is_empty() {
        let mut aug_rng = stream(config.seed, &[STREAM_AUGMENT, 0, epoch as u64, step, slot]);
        crate::hist::random_style_transfer(
            &patch,
            &data.bank,
            config.augment.blend_prob,
            (config.augment.blend_min, config.augment.blend_max),
            &mut aug_rng,
        )?
    } else {
        patch
    };
    Ok(LabeledItem {
        input: stack_input(&patch, mapper)?,
        target,
    })
}

fn prepare_unlabeled(
    vol: &Volume,
    data: &TrainData,
    config: &TrainConfig,
    mapper: Option<&ModelParams>,
    epoch: u32,
    step: u64,
    slot: u64,
) -> Result<ConsistencyItem> {
    let mut crop_rng = stream(config.seed, &[STREAM_CROP, 1, epoch as u64, step, slot]);
    let (origin, size) = random_crop_origin(vol.dims(), config.patch, &mut crop_rng);
    let patch = vol.crop(origin, size)?;
    let mut aug_rng = stream(config.seed, &[STREAM_AUGMENT, 1, epoch as u64, step, slot]);
    let view_a = augment_view(&patch, &data.bank, &config.augment, &mut aug_rng)?;
    let view_b = augment_view(&patch, &data.bank, &config.augment, &mut aug_rng)?;
    Ok(ConsistencyItem {
        student_input: stack_input(&view_a.volume, mapper)?,
        student_flips: view_a.flips,
        teacher_input: stack_input(&view_b.volume, mapper)?,
        teacher_flips: view_b.flips,
    })
}
