//! The `ribforge` command line: dataset generation, the training stages,
//! synthesis, evaluation, ablations, gradient checks and rendering.

pub mod config;
pub mod error;
pub mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ribforge_core::suite::{run_suite, SUITE_SEEDS};
use ribforge_core::Tensor;
use ribforge_data::{read_sample, MaskSet, Sample};
use ribforge_models::{load_weights, save_weights, GuidanceUNet, MTUNet, ModelWeights};
use ribforge_pipelines::{
    evaluate_outputs_at, predict, read_dataset, synthesize_pairs, train_guidance, train_mtunet, train_sdgan,
    write_dataset, AblationRunner, DatasetSplits, PipelineConfig, Segmenter, TrainReport,
};

pub use error::{CliError, Result};

pub const THREADS_ENV: &str = "RIBFORGE_THREADS";
pub const REPORT_FILE: &str = "report.json";
/// Wall-clock timings, kept out of the reports.
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Parser)]
#[command(name = "ribforge", version, about = "Rib segmentation with semantics-guided synthetic data on chest phantoms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Guidance,
    Sdgan,
    Mtunet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModel {
    Mtunet,
    Guidance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationKind {
    Volume,
    Modules,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset split 6:2:2.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stage.
    Train {
        #[arg(value_enum)]
        stage: Stage,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Guidance UNet weights; required by the sdgan stage.
        #[arg(long)]
        guidance_weights: Option<PathBuf>,
        /// Dataset directory whose train split is added to MTUNet training.
        #[arg(long)]
        synthetic_data: Option<PathBuf>,
        /// Overrides every stage seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize image-mask pairs from affinely transformed masks.
    Synthesize {
        #[arg(long)]
        gen_weights: PathBuf,
        /// Dataset directory whose train masks are the sources.
        #[arg(long)]
        masks_from: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a segmenter on one split.
    Eval {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalModel::Mtunet)]
        model: EvalModel,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Feed the ground truth back as the prediction.
        #[arg(long)]
        oracle: bool,
    },
    /// Synthetic-volume or module ablation.
    Ablation {
        #[arg(long, value_enum)]
        kind: AblationKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gen_weights: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients of every differentiable op.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tile a sample's image and mask overlays into a PPM panel.
    Render {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print or write the resolved configuration.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Reads the thread cap. Kernels are single-threaded, so any valid cap runs
/// on one thread.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn load_dataset(dir: &Path) -> Result<DatasetSplits> {
    Ok(read_dataset(dir)?)
}

fn load(path: &Path) -> Result<ModelWeights> {
    Ok(load_weights(path)?)
}

fn write_report(dir: &Path, report: &TrainReport) -> Result<()> {
    report.without_timing().write(&dir.join(REPORT_FILE))?;
    config::write_json(&dir.join(TIMING_FILE), &json!({ "elapsed_s": report.elapsed_s }))
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = threads_from_env()?;
    log::debug!("{THREADS_ENV}={threads}; kernels run on one thread");
    match cli.command {
        Command::GenData { config, out, n, seed } => gen_data(config.as_deref(), &out, n, seed),
        Command::Train { stage, data, config, out, guidance_weights, synthetic_data, seed } => {
            let mut cfg = config::load(config.as_deref())?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            train(stage, &data, &cfg, &out, guidance_weights.as_deref(), synthetic_data.as_deref())
        }
        Command::Synthesize { gen_weights, masks_from, n, seed, out, config } => {
            synthesize(&gen_weights, &masks_from, n, seed, &out, &config::load(config.as_deref())?)
        }
        Command::Eval { weights, data, out, config, model, split, threshold, oracle } => {
            let cfg = config::load(config.as_deref())?;
            eval(weights.as_deref(), &data, &out, &cfg, model, split, threshold, oracle)
        }
        Command::Ablation { kind, data, gen_weights, config, out } => {
            ablation(kind, &data, gen_weights.as_deref(), &config::load(config.as_deref())?, &out)
        }
        Command::Gradcheck { out } => gradcheck(out.as_deref()),
        Command::Render { sample, out } => render_sample(&sample, &out),
        Command::Config { config, out } => {
            let cfg = config::load(config.as_deref())?;
            match out {
                Some(dir) => {
                    create_dir(&dir)?;
                    config::write_echo(&dir, "config", json!({}), &cfg)
                }
                None => {
                    let text = serde_json::to_string_pretty(&config::echo("config", json!({}), &cfg)).expect("json");
                    println!("{text}");
                    Ok(())
                }
            }
        }
    }
}

pub fn gen_data(config_path: Option<&Path>, out: &Path, n: usize, seed: u64) -> Result<()> {
    let cfg = config::load(config_path)?;
    if n < ribforge_data::split::MIN_SPLIT_SAMPLES {
        return Err(ribforge_data::DataError::TooFewSamples { min: ribforge_data::split::MIN_SPLIT_SAMPLES, got: n }.into());
    }
    let splits = ribforge_pipelines::generate_dataset(n, seed, &cfg.phantom)?;
    create_dir(out)?;
    let index = write_dataset(&splits, out, seed)?;
    config::write_echo(out, "gen-data", json!({ "n": n, "seed": seed }), &cfg)?;
    log::info!("wrote {} train, {} val, {} test samples", index.train.len(), index.val.len(), index.test.len());
    Ok(())
}

pub fn train(
    stage: Stage,
    data_dir: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    guidance_weights: Option<&Path>,
    synthetic_dir: Option<&Path>,
) -> Result<()> {
    if stage == Stage::Sdgan && guidance_weights.is_none() {
        return Err(CliError::Config("train sdgan requires --guidance-weights <FILE>".into()));
    }
    let data = load_dataset(data_dir)?;
    create_dir(out)?;
    let args = |name: &str| json!({ "stage": name, "synthetic_data": synthetic_dir.is_some() });
    match stage {
        Stage::Guidance => {
            let (w, report) = train_guidance(&data, cfg)?;
            save_weights(&w, &out.join("guidance.weights"))?;
            write_report(out, &report)?;
            config::write_echo(out, "train", args("guidance"), cfg)
        }
        Stage::Sdgan => {
            let guide = load(guidance_weights.expect("checked above"))?;
            let outcome = train_sdgan(&data, &guide, cfg)?;
            save_weights(&outcome.generator, &out.join("generator.weights"))?;
            save_weights(&outcome.discriminator, &out.join("discriminator.weights"))?;
            write_report(out, &outcome.report)?;
            config::write_json(
                &out.join("guidance-digest.json"),
                &json!({ "before": outcome.guidance_digest_before, "after": outcome.guidance_digest_after }),
            )?;
            config::write_echo(out, "train", args("sdgan"), cfg)
        }
        Stage::Mtunet => {
            let synthetic = match synthetic_dir {
                Some(dir) => load_dataset(dir)?.train,
                None => Vec::new(),
            };
            let (w, report) = train_mtunet(&data.train, &synthetic, &data.val, cfg)?;
            save_weights(&w, &out.join("mtunet.weights"))?;
            write_report(out, &report)?;
            config::write_echo(out, "train", args("mtunet"), cfg)
        }
    }
}

pub fn synthesize(gen_weights: &Path, masks_from: &Path, n: usize, seed: u64, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let gen = load(gen_weights)?;
    let source = load_dataset(masks_from)?;
    let sources: Vec<MaskSet> = source.train.iter().map(|s| s.masks.clone()).collect();
    let samples = synthesize_pairs(&gen, &sources, n, seed, cfg)?;
    create_dir(out)?;
    let splits = DatasetSplits { train: samples, ..Default::default() };
    write_dataset(&splits, out, seed)?;
    config::write_echo(out, "synthesize", json!({ "n": n, "seed": seed }), cfg)
}

fn split_of(data: DatasetSplits, split: SplitName) -> Vec<Sample> {
    match split {
        SplitName::Train => data.train,
        SplitName::Val => data.val,
        SplitName::Test => data.test,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    weights: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    model: EvalModel,
    split: SplitName,
    threshold: f64,
    oracle: bool,
) -> Result<()> {
    let samples = split_of(load_dataset(data_dir)?, split);
    if samples.is_empty() {
        return Err(CliError::Config(format!("split {split:?} of {} is empty", data_dir.display())));
    }
    let outputs: Vec<Tensor<f32>> = if oracle {
        samples.iter().map(|s| s.masks.stacked()).collect()
    } else {
        let path = weights.ok_or_else(|| CliError::Config("eval requires --weights <FILE> unless --oracle is set".into()))?;
        let w = load(path)?;
        let mut net: Box<dyn Segmenter> = match model {
            EvalModel::Mtunet => {
                let mut m = MTUNet::<f32>::new(cfg.mtunet.model.clone(), 0);
                w.load_into(&mut m.store)?;
                Box::new(m)
            }
            EvalModel::Guidance => {
                let mut g = GuidanceUNet::<f32>::new(cfg.guidance.model.clone(), 0);
                w.load_into(&mut g.store)?;
                Box::new(g)
            }
        };
        let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
        predict(net.as_mut(), &images, cfg.mtunet.train.batch_size)?
    };
    let table = evaluate_outputs_at(&outputs, &samples, threshold)?;
    create_dir(out)?;
    config::write_json(&out.join("eval.json"), &serde_json::to_value(&table).expect("table serialises"))?;
    let args = json!({ "model": format!("{model:?}").to_lowercase(), "split": format!("{split:?}").to_lowercase(), "threshold": threshold, "oracle": oracle });
    config::write_echo(out, "eval", args, cfg)
}

pub fn ablation(kind: AblationKind, data_dir: &Path, gen_weights: Option<&Path>, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let data = load_dataset(data_dir)?;
    let gen = gen_weights.map(load).transpose()?;
    let start = Instant::now();
    let mut runner = AblationRunner::new(&data, gen.as_ref(), cfg)?;
    let rows = match kind {
        AblationKind::Volume => runner.volume(&cfg.ablation.multipliers)?,
        AblationKind::Modules => runner.modules()?,
    };
    create_dir(out)?;
    config::write_json(&out.join("ablation.json"), &serde_json::to_value(&rows).expect("rows serialise"))?;
    config::write_json(&out.join(TIMING_FILE), &json!({ "elapsed_s": start.elapsed().as_secs_f64() }))?;
    config::write_echo(out, "ablation", json!({ "kind": format!("{kind:?}").to_lowercase() }), cfg)
}

pub fn gradcheck(out: Option<&Path>) -> Result<()> {
    let results = run_suite(&SUITE_SEEDS).map_err(ribforge_pipelines::PipelineError::from)?;
    for r in &results {
        println!("{:<22} seed {:>3}  max rel err {:.3e}  {}", r.name, r.seed, r.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
    }
    if let Some(path) = out {
        let rows: Vec<Value> = results
            .iter()
            .map(|r| json!({ "op": r.name, "seed": r.seed, "max_rel_error": r.max_rel_error, "passed": r.passed() }))
            .collect();
        config::write_json(path, &Value::Array(rows))?;
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| format!("{}@{}", r.name, r.seed)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(failed.join(", ")))
    }
}

pub fn render_sample(sample_dir: &Path, out: &Path) -> Result<()> {
    let sample = read_sample(sample_dir)?;
    fs::write(out, render::render_panel(&sample)).map_err(CliError::io(out))
}
