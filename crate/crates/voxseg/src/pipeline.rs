//! Stage orchestration: each command reads its declared inputs, runs the
//! core engines and writes its artifacts (checkpoints, masks, CSV logs)
//! under an output directory. No artifact contains timestamps, so reruns
//! with identical inputs and seeds are byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use voxseg_core::contrast::train_contrast_mapper;
use voxseg_core::hist::random_style_transfer;
use voxseg_core::morph::trim_mask;
use voxseg_core::nn::ModelParams;
use voxseg_core::metrics::{dice_score, hausdorff_mm};
use voxseg_core::pseudo::{finetune, generate_pseudo_labels};
use voxseg_core::teacher::{predict, train, EpochStats, TrainOutput};
use voxseg_core::tta::{run_stream, AdaptState};
use voxseg_core::volume::threshold_mask;
use voxseg_core::{CoreError, Mask};

use crate::ckpt::{load_checkpoint, save_checkpoint};
use crate::dataset::DatasetRoot;
use crate::error::{PipelineError, Result};
use crate::manifest::{PseudoEntry, PseudoManifest};
use crate::mvol::{read_mask, write_mask, write_volume, read_volume, MVOL_SUFFIX};
use crate::runconfig::RunConfig;

/// Write the resolved configuration into the output directory so every run
/// leaves a reproducible record.
pub fn echo_config(config: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    config.save(&out_dir.join("config_resolved.json"))
}

/// Artifact paths produced by a training stage.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub student: PathBuf,
    pub teacher: PathBuf,
    pub history: PathBuf,
}

fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,dice,ce,mse,lambda,lr\n");
    for h in history {
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            h.epoch, h.dice, h.ce, h.mse, h.lambda, h.lr
        ));
    }
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn save_training(out: &TrainOutput, epochs: u32, out_dir: &Path) -> Result<TrainArtifacts> {
    let student = out_dir.join(format!("student_e{epochs:03}.ckpt"));
    let teacher = out_dir.join(format!("teacher_e{epochs:03}.ckpt"));
    let history = out_dir.join("history.csv");
    save_checkpoint(&out.student, &student)?;
    save_checkpoint(&out.teacher, &teacher)?;
    write_history_csv(&out.history, &history)?;
    Ok(TrainArtifacts {
        student,
        teacher,
        history,
    })
}

/// `synth`: generate the phantom dataset; returns the manifest path.
pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    echo_config(config, out_dir)?;
    crate::phantom_io::synth_dataset(&config.phantom, out_dir)
}

/// `contrast-train`: fit the enhancement mapper on aligned pairs from the
/// manifest; writes `mapper.ckpt` and `contrast_history.csv`.
pub fn cmd_contrast_train(
    config: &RunConfig,
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<PathBuf> {
    echo_config(config, out_dir)?;
    let root = DatasetRoot::load(manifest_path)?;
    let pairs = root.load_aligned_pairs(config.train.target_spacing_mm)?;
    if pairs.is_empty() {
        return Err(PipelineError::Contract(CoreError::EmptyInput(
            "no aligned pairs in manifest",
        )));
    }
    let (mapper, history) = train_contrast_mapper(&pairs, &config.train)?;
    let ckpt_path = out_dir.join("mapper.ckpt");
    save_checkpoint(&mapper, &ckpt_path)?;

    let mut text = String::from("epoch,mse,ssim_loss,total\n");
    for (e, loss) in history.iter().enumerate() {
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            e,
            loss.component("mse").unwrap_or(0.0),
            loss.component("ssim_loss").unwrap_or(0.0),
            loss.total
        ));
    }
    let hist_path = out_dir.join("contrast_history.csv");
    fs::write(&hist_path, text).map_err(|e| PipelineError::io(&hist_path, e))?;
    Ok(ckpt_path)
}

fn load_mapper(config: &RunConfig, mapper: Option<&Path>) -> Result<Option<ModelParams>> {
    if !config.train.contrast_enabled {
        return Ok(None);
    }
    mapper.map(load_checkpoint).transpose()
}

/// `train`: mean-teacher training from scratch.
pub fn cmd_train(
    config: &RunConfig,
    manifest_path: &Path,
    mapper: Option<&Path>,
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    echo_config(config, out_dir)?;
    let root = DatasetRoot::load(manifest_path)?;
    let data = root.load_train_data(&config.train)?;
    let mapper = load_mapper(config, mapper)?;
    let out = train(&data, &config.train, mapper.as_ref())?;
    save_training(&out, config.train.epochs, out_dir)
}

/// `finetune`: generate pseudo-labels on the pool with the trained student,
/// then fine-tune on the labeled/pseudo union.
pub fn cmd_finetune(
    config: &RunConfig,
    manifest_path: &Path,
    student_ckpt: &Path,
    teacher_ckpt: &Path,
    mapper: Option<&Path>,
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    echo_config(config, out_dir)?;
    let root = DatasetRoot::load(manifest_path)?;
    let data = root.load_train_data(&config.train)?;
    let pool = root.load_pool(config.train.target_spacing_mm)?;
    let student = load_checkpoint(student_ckpt)?;
    let teacher = load_checkpoint(teacher_ckpt)?;
    let mapper = load_mapper(config, mapper)?;

    let pseudo = generate_pseudo_labels(&student, &pool, mapper.as_ref(), config.train.threshold)?;
    let mut entries = Vec::with_capacity(pseudo.len());
    for case in &pseudo {
        let mask_rel = format!("{}_pseudo_mask{MVOL_SUFFIX}", case.id);
        write_mask(&case.mask, &out_dir.join(&mask_rel))?;
        let volume_rel = root
            .manifest
            .pseudo_pool
            .iter()
            .find(|e| e.id == case.id)
            .map(|e| e.ged4.clone())
            .unwrap_or_default();
        entries.push(PseudoEntry {
            id: case.id.clone(),
            volume: volume_rel,
            mask: mask_rel,
            confidence: case.confidence,
        });
    }
    PseudoManifest {
        source_checkpoint: student_ckpt.display().to_string(),
        threshold: config.train.threshold,
        cases: entries,
    }
    .save(&out_dir.join("pseudo_manifest.json"))?;

    let out = finetune(
        student,
        teacher,
        &data,
        &pool,
        &pseudo,
        &config.train,
        mapper.as_ref(),
    )?;
    save_training(&out, config.train.finetune_epochs, out_dir)
}

/// Which manifest split a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Test,
    PseudoPool,
    Unlabeled,
}

impl SplitSel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(SplitSel::Test),
            "pseudo-pool" => Ok(SplitSel::PseudoPool),
            "unlabeled" => Ok(SplitSel::Unlabeled),
            other => Err(PipelineError::Config(format!(
                "unknown split '{other}' (expected test, pseudo-pool or unlabeled)"
            ))),
        }
    }
}

/// `infer`: frozen-model inference over a split; writes one predicted mask
/// per case as `<id>_pred.mvol.json`.
pub fn cmd_infer(
    config: &RunConfig,
    manifest_path: &Path,
    model_ckpt: &Path,
    mapper: Option<&Path>,
    out_dir: &Path,
    trim: bool,
    split: SplitSel,
) -> Result<Vec<(String, PathBuf)>> {
    echo_config(config, out_dir)?;
    let root = DatasetRoot::load(manifest_path)?;
    let entries = match split {
        SplitSel::Test => &root.manifest.test,
        SplitSel::PseudoPool => &root.manifest.pseudo_pool,
        SplitSel::Unlabeled => &root.manifest.unlabeled,
    };
    let model = load_checkpoint(model_ckpt)?;
    let mapper = load_mapper(config, mapper)?;
    let mut outputs = Vec::with_capacity(entries.len());
    for entry in entries {
        let volume = root.read_ged4(entry, config.train.target_spacing_mm)?;
        let probs = predict(&model, &volume, mapper.as_ref())?;
        let mask = threshold_mask(&probs, config.train.threshold);
        let mask = if trim {
            trim_mask(&mask, config.tta.min_fraction)
        } else {
            mask
        };
        let path = out_dir.join(format!("{}_pred{MVOL_SUFFIX}", entry.id));
        write_mask(&mask, &path)?;
        outputs.push((entry.id.clone(), path));
    }
    Ok(outputs)
}

/// `adapt`: continual test-time adaptation over the test split in manifest
/// order; writes predicted masks, `tta_trace.csv` and optionally the
/// adapted parameters.
pub fn cmd_adapt(
    config: &RunConfig,
    manifest_path: &Path,
    model_ckpt: &Path,
    mapper: Option<&Path>,
    out_dir: &Path,
    save_state: bool,
) -> Result<Vec<(String, PathBuf)>> {
    echo_config(config, out_dir)?;
    let root = DatasetRoot::load(manifest_path)?;
    let model = load_checkpoint(model_ckpt)?;
    let mapper = load_mapper(config, mapper)?;
    let cases = root.load_test_volumes(config.train.target_spacing_mm)?;
    let volumes: Vec<_> = cases.iter().map(|(_, v)| v.clone()).collect();

    let mut state = AdaptState::new(model, config.tta.clone())?;
    let (masks, trace) = run_stream(&mut state, &volumes, mapper.as_ref())?;

    let mut text = String::from("step,l_tta,restored_count\n");
    for (i, t) in trace.iter().enumerate() {
        text.push_str(&format!("{},{:.8},{}\n", i, t.l_tta, t.restored));
    }
    let trace_path = out_dir.join("tta_trace.csv");
    fs::write(&trace_path, text).map_err(|e| PipelineError::io(&trace_path, e))?;

    let mut outputs = Vec::with_capacity(masks.len());
    for ((id, _), mask) in cases.iter().zip(&masks) {
        let path = out_dir.join(format!("{id}_pred{MVOL_SUFFIX}"));
        write_mask(mask, &path)?;
        outputs.push((id.clone(), path));
    }
    if save_state {
        save_checkpoint(state.student(), &out_dir.join("student_adapted.ckpt"))?;
        save_checkpoint(state.teacher(), &out_dir.join("teacher_adapted.ckpt"))?;
    }
    Ok(outputs)
}

/// One evaluation row; distances are undefined (None) when a mask is empty.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub id: String,
    pub dice_pre: f64,
    pub hd_pre: Option<f64>,
    pub dice_post: f64,
    pub hd_post: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub mean_dice_pre: f64,
    pub mean_dice_post: f64,
    pub mean_hd_pre: Option<f64>,
    pub mean_hd_post: Option<f64>,
    pub csv_path: PathBuf,
}

fn fmt_hd(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "nan".to_string(),
    }
}

/// `eval`: compare predicted masks against ground truth; reports Dice and
/// Hausdorff (mm) for the masks as given ("pre") and after morphological
/// trimming ("post").
pub fn cmd_eval(
    config: &RunConfig,
    manifest_path: &Path,
    pred_dir: &Path,
    out_dir: &Path,
) -> Result<EvalSummary> {
    echo_config(config, out_dir)?;
    let root = DatasetRoot::load(manifest_path)?;
    if root.manifest.test.is_empty() {
        return Err(PipelineError::Contract(CoreError::EmptyInput(
            "manifest test split",
        )));
    }
    let mut rows = Vec::new();
    for entry in &root.manifest.test {
        let gt = root.read_mask_of(entry)?;
        let pred_path = pred_dir.join(format!("{}_pred{MVOL_SUFFIX}", entry.id));
        let pred = read_mask(&pred_path)?;
        let trimmed = trim_mask(&pred, config.tta.min_fraction);
        rows.push(EvalRow {
            id: entry.id.clone(),
            dice_pre: dice_score(&pred, &gt)?,
            hd_pre: hausdorff_mm(&pred, &gt).ok(),
            dice_post: dice_score(&trimmed, &gt)?,
            hd_post: hausdorff_mm(&trimmed, &gt).ok(),
        });
    }

    let n = rows.len() as f64;
    let mean_dice_pre = rows.iter().map(|r| r.dice_pre).sum::<f64>() / n;
    let mean_dice_post = rows.iter().map(|r| r.dice_post).sum::<f64>() / n;
    let mean_opt = |xs: Vec<f64>| {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let mean_hd_pre = mean_opt(rows.iter().filter_map(|r| r.hd_pre).collect());
    let mean_hd_post = mean_opt(rows.iter().filter_map(|r| r.hd_post).collect());

    let csv_path = out_dir.join("eval.csv");
    let mut file = fs::File::create(&csv_path).map_err(|e| PipelineError::io(&csv_path, e))?;
    writeln!(file, "case_id,dice_pre,hd_mm_pre,dice_post,hd_mm_post")
        .map_err(|e| PipelineError::io(&csv_path, e))?;
    for r in &rows {
        writeln!(
            file,
            "{},{:.6},{},{:.6},{}",
            r.id,
            r.dice_pre,
            fmt_hd(r.hd_pre),
            r.dice_post,
            fmt_hd(r.hd_post)
        )
        .map_err(|e| PipelineError::io(&csv_path, e))?;
    }
    writeln!(
        file,
        "mean,{mean_dice_pre:.6},{},{mean_dice_post:.6},{}",
        fmt_hd(mean_hd_pre),
        fmt_hd(mean_hd_post)
    )
    .map_err(|e| PipelineError::io(&csv_path, e))?;

    Ok(EvalSummary {
        rows,
        mean_dice_pre,
        mean_dice_post,
        mean_hd_pre,
        mean_hd_post,
        csv_path,
    })
}

/// `style`: offline style transfer of one volume against a bank directory.
pub fn cmd_style(
    config: &RunConfig,
    input: &Path,
    bank_dir: &Path,
    out_path: &Path,
) -> Result<()> {
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
    }
    let volume = read_volume(input)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(bank_dir)
        .map_err(|e| PipelineError::io(bank_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(MVOL_SUFFIX))
        .collect();
    paths.sort();
    let mut refs = Vec::with_capacity(paths.len());
    for p in &paths {
        refs.push(read_volume(p)?);
    }
    let bank = voxseg_core::hist::StyleBank::from_volumes(refs.iter(), config.train.seed);
    let mut rng = voxseg_core::rng::stream(config.train.seed, &[voxseg_core::rng::STREAM_STYLE]);
    let aug = &config.train.augment;
    let styled = random_style_transfer(
        &volume,
        &bank,
        aug.blend_prob,
        (aug.blend_min, aug.blend_max),
        &mut rng,
    )?;
    write_volume(&styled, out_path)
}

/// Mean Dice of predicted masks against the manifest's test ground truth;
/// used by the ablation harness.
pub fn mean_test_dice(
    root: &DatasetRoot,
    predictions: &[(String, Mask)],
) -> Result<f64> {
    let mut total = 0.0;
    for (id, mask) in predictions {
        let entry = root
            .manifest
            .test
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| PipelineError::Config(format!("no test entry '{id}'")))?;
        let gt = root.read_mask_of(entry)?;
        total += dice_score(mask, &gt)?;
    }
    Ok(total / predictions.len() as f64)
}
