//! `talkgrade`: ingest → debias → train → eval → report.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use manifest::RunManifest;
use talkgrade::corpus::FilterRules;
use talkgrade::eval::ModelId;
use talkgrade::models::{self, ModelKind, MODEL_GRADCHECK_EPS};
use talkgrade::pipeline::{self, IngestOptions, ModelChoice, TrainRequest, Workspace};
use talkgrade::training::TrainConfig;

const THREADS_ENV: &str = "TALKGRADE_THREADS";

#[derive(Parser)]
#[command(name = "talkgrade", version, about = "Predict talk rating categories from transcripts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainModel {
    WordSeq,
    DepTree,
    Svm,
    Lasso,
}

#[derive(Clone, Copy, ValueEnum)]
enum NeuralModel {
    WordSeq,
    DepTree,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalModel {
    WordSeq,
    DepTree,
    DepTreeUnscaled,
    Svm,
    Lasso,
}

impl From<EvalModel> for ModelId {
    fn from(m: EvalModel) -> Self {
        match m {
            EvalModel::WordSeq => ModelId::WordSeq,
            EvalModel::DepTree => ModelId::DepTree,
            EvalModel::DepTreeUnscaled => ModelId::DepTreeUnscaled,
            EvalModel::Svm => ModelId::LinearSvm,
            EvalModel::Lasso => ModelId::Lasso,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate and filter raw inputs into a corpus bundle.
    Ingest {
        #[arg(long)]
        talks: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        trees: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, binarize scaled and unscaled ratings, write the correlation audit.
    Debias {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Talks reserved for test [default: 150]
        #[arg(long)]
        test_n: Option<usize>,
        /// Fraction of the remaining talks used for dev [default: 0.1]
        #[arg(long)]
        dev_fraction: Option<f64>,
    },
    /// Fit one model and write its checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        model: TrainModel,
        /// Train on labels from raw counts (dep-tree only).
        #[arg(long)]
        unscaled: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Lexicon file, required for svm and lasso.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Score trained models on the test split (all trained models by default).
    Eval {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "model", value_enum)]
        models: Vec<EvalModel>,
    },
    /// Compare analytic and finite-difference gradients on a toy problem.
    Gradcheck {
        #[arg(long, value_enum)]
        model: NeuralModel,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild report.txt and metrics.csv from stored evaluations.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        config.apply_text(&text).with_context(|| format!("in {}", p.display()))?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { talks, vectors, trees, out } => {
            let ws = Workspace::new(&out);
            let mut inputs = vec![talks.clone(), vectors.clone()];
            inputs.extend(trees.clone());
            RunManifest::new("ingest", inputs, vec![ws.bundle(), ws.summary()])?.write(&ws.manifests(), "ingest")?;
            let opts = IngestOptions { talks, vectors, trees, filter: FilterRules::default() };
            let summary = pipeline::ingest(&ws, &opts)?;
            print!("{}", summary.text);
        }
        Command::Debias { out, config, seed, test_n, dev_fraction } => {
            let ws = Workspace::new(&out);
            let cfg = load_config(config.as_deref(), seed)?;
            let test_n = test_n.unwrap_or(cfg.test_n);
            let dev_fraction = dev_fraction.unwrap_or(cfg.dev_fraction);
            let mut m = RunManifest::new(
                "debias",
                vec![ws.bundle()],
                vec![ws.debias(), ws.correlation_text(), ws.correlation_csv()],
            )?;
            m.seed = Some(cfg.seed);
            m.config = Some(cfg.to_text());
            m.write(&ws.manifests(), "debias")?;
            let art = pipeline::debias(&ws, cfg.seed, test_n, dev_fraction)?;
            println!(
                "split: {} train / {} dev / {} test",
                art.split.train.len(),
                art.split.dev.len(),
                art.split.test.len()
            );
            print!("{}", std::fs::read_to_string(ws.correlation_text())?);
        }
        Command::Train { out, model, unscaled, config, seed, lexicon } => {
            let ws = Workspace::new(&out);
            let choice = match model {
                TrainModel::WordSeq => ModelChoice::WordSeq,
                TrainModel::DepTree => ModelChoice::DepTree,
                TrainModel::Svm => ModelChoice::Svm,
                TrainModel::Lasso => ModelChoice::Lasso,
            };
            let id = choice.model_id(unscaled)?;
            let cfg = load_config(config.as_deref(), seed)?;
            let mut inputs = vec![ws.bundle(), ws.debias()];
            inputs.extend(lexicon.clone());
            let mut m = RunManifest::new("train", inputs, vec![ws.checkpoint(id), ws.loss_curve(id)])?;
            m.seed = Some(cfg.seed);
            m.config = Some(cfg.to_text());
            m.write(&ws.manifests(), &format!("train-{}", id.slug()))?;
            let summary = pipeline::train(&ws, &TrainRequest { model: choice, unscaled, config: cfg, lexicon })?;
            print!("{}", summary.text);
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Command::Eval { out, models } => {
            let ws = Workspace::new(&out);
            let ids: Vec<ModelId> = models.into_iter().map(ModelId::from).collect();
            let listed = if ids.is_empty() { pipeline::trained_models(&ws) } else { ids.clone() };
            let mut inputs = vec![ws.bundle(), ws.debias()];
            inputs.extend(listed.iter().map(|&m| ws.checkpoint(m)).filter(|p| p.exists()));
            RunManifest::new("eval", inputs, vec![ws.metrics_csv(), ws.report_text()])?.write(&ws.manifests(), "eval")?;
            let report = pipeline::evaluate(&ws, &ids)?;
            print!("{}", report.text);
        }
        Command::Gradcheck { model, seed } => {
            let kind = match model {
                NeuralModel::WordSeq => ModelKind::WordSeq,
                NeuralModel::DepTree => ModelKind::DepTree,
            };
            let tol = 1e-5;
            let problem = models::toy_problem(kind, seed);
            let report = models::check_gradients(&problem, MODEL_GRADCHECK_EPS, tol)?;
            let verdict = if report.passed { "PASS" } else { "FAIL" };
            let cmp = if report.passed { "<" } else { ">=" };
            println!(
                "{}: {verdict}, max rel err {:.3e} {cmp} {tol:e} ({} coordinates, seed {seed})",
                kind.name(),
                report.max_rel_err,
                report.entries.len()
            );
            if !report.passed {
                bail!("gradient check failed");
            }
        }
        Command::Report { out } => {
            let report = pipeline::report(&Workspace::new(&out))?;
            print!("{}", report.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads().and_then(|_| run(cli)) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
