//! Command-line interface: one binary, subcommand per pipeline stage.
//!
//! Every command takes an optional `--config <json>` (defaults apply
//! otherwise) plus flag overrides; flags win. Exit codes: 0 success,
//! 2 config error, 3 I/O error, 4 contract violation.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::pipeline::{self, SplitSel};
use crate::runconfig::RunConfig;

#[derive(Parser)]
#[command(
    name = "voxseg",
    about = "Semi-supervised volumetric segmentation pipeline on synthetic phantoms",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct CommonOpts {
    /// Run configuration file (JSON); defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override every stage seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-domain phantom dataset.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train the contrast enhancement mapper on aligned pairs.
    ContrastTrain {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Mean-teacher training from scratch.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        /// Contrast mapper checkpoint for the second input channel.
        #[arg(long)]
        mapper: Option<PathBuf>,
    },
    /// Generate pseudo-labels on the pool and fine-tune on the union.
    Finetune {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        mapper: Option<PathBuf>,
    },
    /// Frozen-model inference over a manifest split.
    Infer {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mapper: Option<PathBuf>,
        /// Skip morphological trimming of the predicted masks.
        #[arg(long)]
        no_trim: bool,
        /// Which split to segment: test, pseudo-pool or unlabeled.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Continual test-time adaptation over the test stream.
    Adapt {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mapper: Option<PathBuf>,
        /// Also write the adapted student/teacher checkpoints.
        #[arg(long)]
        save_state: bool,
    },
    /// Compare predicted masks against ground truth (Dice, Hausdorff mm).
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `<case_id>_pred.mvol.json` masks.
        #[arg(long)]
        pred: PathBuf,
    },
    /// Offline histogram style transfer of one volume against a bank.
    Style {
        /// Run configuration file (JSON); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bank_dir: PathBuf,
        /// Output volume path (.mvol.json).
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(config: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut rc = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        rc.override_seed(s);
    }
    rc.validate()?;
    Ok(rc)
}

/// Execute a parsed command; prints the resolved config and a short result
/// summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let config = resolve_config(&common.config, common.seed)?;
            print_config(&config)?;
            let manifest = pipeline::cmd_synth(&config, &common.out)?;
            println!("manifest: {}", manifest.display());
        }
        Command::ContrastTrain { common, manifest } => {
            let config = resolve_config(&common.config, common.seed)?;
            print_config(&config)?;
            let ckpt = pipeline::cmd_contrast_train(&config, &manifest, &common.out)?;
            println!("mapper: {}", ckpt.display());
        }
        Command::Train {
            common,
            manifest,
            mapper,
        } => {
            let config = resolve_config(&common.config, common.seed)?;
            print_config(&config)?;
            let art = pipeline::cmd_train(&config, &manifest, mapper.as_deref(), &common.out)?;
            println!("student: {}", art.student.display());
            println!("teacher: {}", art.teacher.display());
            println!("history: {}", art.history.display());
        }
        Command::Finetune {
            common,
            manifest,
            student,
            teacher,
            mapper,
        } => {
            let config = resolve_config(&common.config, common.seed)?;
            print_config(&config)?;
            let art = pipeline::cmd_finetune(
                &config,
                &manifest,
                &student,
                &teacher,
                mapper.as_deref(),
                &common.out,
            )?;
            println!("student: {}", art.student.display());
            println!("teacher: {}", art.teacher.display());
        }
        Command::Infer {
            common,
            manifest,
            model,
            mapper,
            no_trim,
            split,
        } => {
            let config = resolve_config(&common.config, common.seed)?;
            print_config(&config)?;
            let split = SplitSel::parse(&split)?;
            let outputs = pipeline::cmd_infer(
                &config,
                &manifest,
                &model,
                mapper.as_deref(),
                &common.out,
                !no_trim,
                split,
            )?;
            println!("predicted {} masks", outputs.len());
        }
        Command::Adapt {
            common,
            manifest,
            model,
            mapper,
            save_state,
        } => {
            let config = resolve_config(&common.config, common.seed)?;
            print_config(&config)?;
            let outputs = pipeline::cmd_adapt(
                &config,
                &manifest,
                &model,
                mapper.as_deref(),
                &common.out,
                save_state,
            )?;
            println!("adapted over {} cases", outputs.len());
        }
        Command::Eval {
            common,
            manifest,
            pred,
        } => {
            let config = resolve_config(&common.config, common.seed)?;
            print_config(&config)?;
            let summary = pipeline::cmd_eval(&config, &manifest, &pred, &common.out)?;
            println!(
                "mean dice pre/post trim: {:.4} / {:.4}",
                summary.mean_dice_pre, summary.mean_dice_post
            );
            println!("eval: {}", summary.csv_path.display());
        }
        Command::Style {
            config,
            seed,
            input,
            bank_dir,
            out,
        } => {
            let config = resolve_config(&config, seed)?;
            print_config(&config)?;
            pipeline::cmd_style(&config, &input, &bank_dir, &out)?;
            println!("styled: {}", out.display());
        }
    }
    Ok(())
}

fn print_config(config: &RunConfig) -> Result<()> {
    let text = serde_json::to_string(config)
        .map_err(|e| crate::error::PipelineError::Config(e.to_string()))?;
    println!("resolved config: {text}");
    Ok(())
}
