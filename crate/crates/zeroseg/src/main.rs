//! `zeroseg` command line: corpus generation, feature precompute, training,
//! inference, evaluation, the ablation harness, and gradient checks.
//!
//! Every error path prints a single JSON object per line on stderr and exits
//! nonzero, so scripts never have to parse prose.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use zeroseg::{ablate, checkpoint, config, corpus, pipeline, store, trainer};
use zeroseg_core::gradcheck::op_catalog;
use zeroseg_core::model::model_grad_check;
use zeroseg_core::teacher::SyntheticTeacher;

#[derive(Parser)]
#[command(name = "zeroseg", version, about = "train and run a zero-shot segmenter at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; the built-in smoke preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set train.steps=500
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<config::RunConfig> {
        match &self.config {
            Some(path) => config::load_config(path, &self.overrides),
            None => config::override_config(config::RunConfig::desk_smoke(), &self.overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus: PPM images, PGM masks, class table.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 64)]
        teacher_dim: usize,
    },
    /// Encode multi-scale teacher features for every image in a directory.
    Precompute {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated grid sizes.
        #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
        grids: Vec<usize>,
        /// `synthetic` or a directory of per-image [n_views, dim] ZTF files.
        #[arg(long, default_value = "synthetic")]
        teacher: String,
        /// Feature width of the teacher.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Image size recorded in the store for file-teacher imports (the
        /// synthetic path reads it off the images).
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Re-encode images whose feature files already exist.
        #[arg(long)]
        force: bool,
    },
    /// Train; resumable bit-exactly from any checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this step even if the config trains longer.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Segment one image with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Directory holding classes.ztf + classes.txt.
        #[arg(long)]
        classes: PathBuf,
        /// Output prefix; writes <prefix>.pgm and <prefix>.json.
        #[arg(long)]
        out: PathBuf,
        /// Background threshold; the checkpoint's configured value if unset.
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one short run per setting along an axis and tabulate results.
    Ablate {
        #[arg(long)]
        axis: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every differentiable op, then the whole model, against central
    /// differences.
    Gradcheck {
        /// Skip the (slower) whole-model check.
        #[arg(long)]
        ops_only: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!("{}", json!({"error": e.to_string(), "context": chain}));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCorpus { out, seed, count, classes, size, teacher_dim } => {
            let spec = corpus::CorpusSpec {
                seed,
                count,
                num_classes: classes,
                image_size: size,
                teacher_dim,
            };
            corpus::generate(&out, &spec)?;
            println!(
                "{}",
                json!({"corpus": out, "images": count, "classes": classes, "size": size})
            );
            Ok(())
        }
        Command::Precompute { images, out, grids, teacher, dim, size, force } => {
            let report = match teacher.as_str() {
                "synthetic" => {
                    let t = SyntheticTeacher::new(dim);
                    store::precompute(&images, &out, &grids, &t, force)?
                }
                path => store::import_file_teacher(Path::new(path), &out, size, &grids, dim)?,
            };
            for (id, msg) in &report.failed {
                eprintln!("{}", json!({"error": msg, "image": id}));
            }
            println!(
                "{}",
                json!({
                    "store": out,
                    "written": report.written.len(),
                    "skipped": report.skipped.len(),
                    "failed": report.failed.len(),
                })
            );
            if !report.failed.is_empty() {
                bail!("feature encoding failed for {} image(s)", report.failed.len());
            }
            Ok(())
        }
        Command::Train { cfg, images, features, out, resume, stop_at } => {
            let run = cfg.load()?;
            let fstore = store::FeatureStore::open(&features)?;
            let set = trainer::load_training_set(&images, &fstore, &run)?;
            let outcome = trainer::train(&run, &set, &out, resume.as_deref(), stop_at)?;
            let losses = outcome.final_losses.unwrap_or_default();
            println!(
                "{}",
                json!({
                    "final_step": outcome.final_step,
                    "steps_run": outcome.steps_run,
                    "checkpoint": outcome.final_checkpoint,
                    "log": outcome.log_path,
                    "total": losses.total,
                })
            );
            Ok(())
        }
        Command::Infer { checkpoint: ckpt_dir, image, classes, out, threshold } => {
            let ckpt = checkpoint::load(&ckpt_dir)?;
            let table = corpus::read_class_table(&classes)?;
            let threshold = threshold.unwrap_or(ckpt.config.inference.threshold);
            let artifacts = pipeline::infer_to_files(
                &ckpt.params,
                &ckpt.config.model,
                &image,
                &table,
                threshold,
                &out,
            )?;
            println!(
                "{}",
                json!({"label_map": artifacts.label_map, "legend": artifacts.legend})
            );
            Ok(())
        }
        Command::Eval { pred, gt, classes, out } => {
            let table = corpus::read_class_table(&classes)?;
            let names: Vec<String> = table.names().to_vec();
            let summary = pipeline::eval_dirs(&pred, &gt, &names)?;
            let text = serde_json::to_string_pretty(&summary)?;
            println!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Ablate { axis, cfg, out } => {
            let axis = ablate::Axis::parse(&axis)?;
            let base = cfg.load()?;
            let table = ablate::run_axis(axis, &base, &out)?;
            print!("{}", ablate::render_table(&table));
            std::fs::write(
                out.join("ablation.json"),
                serde_json::to_string_pretty(&table)? + "\n",
            )?;
            Ok(())
        }
        Command::Gradcheck { ops_only } => {
            let mut failures = 0usize;
            for check in op_catalog() {
                match check.run(1e-3, 1e-3) {
                    Ok(report) if report.passed() => {
                        println!("ok   {:<22} max_rel_err {:.2e}", check.name, report.max_rel_err);
                    }
                    Ok(report) => {
                        failures += 1;
                        println!("FAIL {:<22} max_rel_err {:.2e}", check.name, report.max_rel_err);
                    }
                    Err(e) => {
                        failures += 1;
                        println!("FAIL {:<22} {e}", check.name);
                    }
                }
            }
            if !ops_only {
                // Small end-to-end config; h must sit below the scale of the
                // objective's L1 kinks (see the model gradcheck test).
                let cfg = gradcheck_model_config();
                match model_grad_check(&cfg, 9, 3, 1e-7, 1e-3) {
                    Ok(report) if report.passed() => {
                        println!("ok   {:<22} max_rel_err {:.2e}", "model", report.max_rel_err);
                    }
                    Ok(report) => {
                        failures += 1;
                        println!("FAIL {:<22} max_rel_err {:.2e}", "model", report.max_rel_err);
                    }
                    Err(e) => {
                        failures += 1;
                        println!("FAIL {:<22} {e}", "model");
                    }
                }
            }
            if failures > 0 {
                bail!("{failures} gradient check(s) failed");
            }
            Ok(())
        }
    }
}

/// The whole-model finite-difference config: small enough to replay in f64
/// quickly, with every loss head enabled.
fn gradcheck_model_config() -> zeroseg_core::model::ModelConfig {
    let mut run = config::RunConfig::default();
    run.model.backbone.image_size = 32;
    run.model.backbone.embed_dim = 32;
    run.model.backbone.encoder_layers = 2;
    run.model.backbone.decoder_layers = 1;
    run.model.backbone.decoder_dim = 16;
    run.model.seghead.layers = 3;
    run.model.seghead.grouping_after = (1, 2);
    run.model.seghead.stage_tokens = (8, 4);
    run.model.teacher_dim = 16;
    run.model.grids = vec![1, 2];
    run.model
}
