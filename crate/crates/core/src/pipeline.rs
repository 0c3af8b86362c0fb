//! File-based stages shared by the command-line tool: ingest, debias,
//! train, evaluate and report. Every stage reads and writes inside one
//! workspace directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError, BaselineModel, Lexicon, LinearKind, SolverOptions};
use crate::checkpoint::{self, CheckpointError, Container};
use crate::corpus::{self, CorpusError, Talk, TreeBank, Vocab, WordVectors, CATEGORIES, NUM_CATEGORIES};
use crate::debias::{self, DebiasError, Labels, Ratings};
use crate::eval::{self, EvalError, MetricsTable, ModelId, Report};
use crate::models::{Architecture, EncodedTree, ModelError, ModelKind, Params, TalkInput};
use crate::training::{self, Example, Split, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Debias(#[from] DebiasError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: corrupt artifact: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{what} not found at {path}; run `{stage}` first")]
    MissingStage { what: &'static str, path: PathBuf, stage: &'static str },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Paths of every artifact inside a workspace directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn bundle(&self) -> PathBuf {
        self.root.join("bundle.bin")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn debias(&self) -> PathBuf {
        self.root.join("debias.json")
    }

    pub fn correlation_text(&self) -> PathBuf {
        self.root.join("correlation.txt")
    }

    pub fn correlation_csv(&self) -> PathBuf {
        self.root.join("correlation.csv")
    }

    pub fn checkpoint(&self, model: ModelId) -> PathBuf {
        self.root.join("models").join(format!("{}.ckpt", model.slug()))
    }

    pub fn loss_curve(&self, model: ModelId) -> PathBuf {
        self.root.join("models").join(format!("{}.loss.csv", model.slug()))
    }

    pub fn lexicon_copy(&self, model: ModelId) -> PathBuf {
        self.root.join("models").join(format!("{}.lexicon.txt", model.slug()))
    }

    pub fn eval_table(&self, model: ModelId) -> PathBuf {
        self.root.join("eval").join(format!("{}.json", model.slug()))
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
}

/// Validated corpus with everything later stages need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub talks: Vec<Talk>,
    pub vectors: WordVectors,
    pub trees: Option<TreeBank>,
    pub vocab: Option<Vocab>,
}

pub const BUNDLE_MAGIC: &[u8; 8] = b"TGBUNDL1";

impl Bundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = BUNDLE_MAGIC.to_vec();
        out.extend(bincode::serialize(self).expect("bundle serializes"));
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |message: String| PipelineError::Corrupt { path: path.to_path_buf(), message };
        let body = bytes
            .strip_prefix(BUNDLE_MAGIC.as_slice())
            .ok_or_else(|| corrupt("bad magic".into()))?;
        bincode::deserialize(body).map_err(|e| corrupt(e.to_string()))
    }

    pub fn load(ws: &Workspace) -> Result<Self> {
        let path = ws.bundle();
        if !path.exists() {
            return Err(PipelineError::MissingStage { what: "corpus bundle", path, stage: "ingest" });
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Self::from_bytes(&bytes, &path)
    }

    /// Trees of one talk in sentence order.
    pub fn talk_trees<'a>(&'a self, talk_id: &str) -> Vec<&'a corpus::DepTree> {
        match &self.trees {
            Some(bank) => bank
                .range((talk_id.to_string(), 0)..=(talk_id.to_string(), usize::MAX))
                .map(|(_, t)| t)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Word-vector width from the first non-empty line.
pub fn infer_vector_dim(text: &str) -> Result<usize> {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().count().saturating_sub(1))
        .filter(|&d| d > 0)
        .ok_or_else(|| PipelineError::Usage("word-vector file has no vectors".into()))
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub talks: PathBuf,
    pub vectors: PathBuf,
    pub trees: Option<PathBuf>,
    pub filter: corpus::FilterRules,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub loaded: usize,
    pub kept: usize,
    pub text: String,
}

fn summary_text(bundle: &Bundle, loaded: usize) -> String {
    let talks = &bundle.talks;
    let mut per_category = [0u64; NUM_CATEGORIES];
    for t in talks {
        for (acc, c) in per_category.iter_mut().zip(t.rating_counts) {
            *acc += c;
        }
    }
    let total_words: usize = talks.iter().map(Talk::word_count).sum();
    let covered = talks
        .iter()
        .flat_map(Talk::tokens)
        .filter(|tok| bundle.vectors.id(tok).is_some())
        .count();
    let mut out = String::new();
    writeln!(out, "talks: {} (loaded {loaded}, filtered out {})", talks.len(), loaded - talks.len()).unwrap();
    writeln!(out, "total ratings: {}", talks.iter().map(Talk::total_ratings).sum::<u64>()).unwrap();
    writeln!(out, "total words: {total_words}").unwrap();
    writeln!(out, "total sentences: {}", talks.iter().map(|t| t.sentences.len()).sum::<usize>()).unwrap();
    writeln!(
        out,
        "word vectors: {} of dim {} (token coverage {:.1}%)",
        bundle.vectors.len(),
        bundle.vectors.dim(),
        100.0 * covered as f64 / total_words.max(1) as f64
    )
    .unwrap();
    match (&bundle.trees, &bundle.vocab) {
        (Some(trees), Some(vocab)) => writeln!(
            out,
            "dependency trees: {} ({} POS tags, {} dependency types)",
            trees.len(),
            vocab.pos_tags().len(),
            vocab.dep_types().len()
        )
        .unwrap(),
        _ => writeln!(out, "dependency trees: none").unwrap(),
    }
    writeln!(out, "rating counts per category:").unwrap();
    let w = CATEGORIES.iter().map(|c| c.len()).max().unwrap_or(0);
    for (name, count) in CATEGORIES.iter().zip(per_category) {
        writeln!(out, "  {name:<w$}  {count}").unwrap();
    }
    out
}

/// Loads, validates and filters the raw inputs and writes the bundle and a
/// text summary.
pub fn ingest(ws: &Workspace, opts: &IngestOptions) -> Result<IngestSummary> {
    let raw = corpus::load_talks(&opts.talks)?;
    let loaded = raw.len();
    let talks = corpus::filter_talks(raw, &opts.filter);
    if talks.is_empty() {
        return Err(PipelineError::Usage(format!(
            "no talks left after filtering {loaded} records (min words {}, min age {} days)",
            opts.filter.min_words, opts.filter.min_age_days
        )));
    }
    let (trees, vocab) = match &opts.trees {
        Some(path) => {
            let bank = corpus::load_dep_trees(path)?;
            let keep: std::collections::BTreeSet<&str> = talks.iter().map(|t| t.id.as_str()).collect();
            let bank: TreeBank = bank.into_iter().filter(|((id, _), _)| keep.contains(id.as_str())).collect();
            let vocab = corpus::build_vocab(bank.values());
            (Some(bank), Some(vocab))
        }
        None => (None, None),
    };
    let vector_text = read_text(&opts.vectors)?;
    let dim = infer_vector_dim(&vector_text)?;
    let all_vectors = corpus::parse_word_vectors(&vector_text, dim)?;
    let tree_tokens: Vec<String> = trees
        .iter()
        .flat_map(|b| b.values())
        .flat_map(|t| t.nodes().iter().map(|n| n.token.to_lowercase()))
        .collect();
    let vectors = all_vectors.subset(
        talks
            .iter()
            .flat_map(Talk::tokens)
            .chain(tree_tokens.iter().map(String::as_str)),
    );
    let bundle = Bundle { talks, vectors, trees, vocab };
    let text = summary_text(&bundle, loaded);
    write_file(&ws.bundle(), bundle.to_bytes())?;
    write_file(&ws.summary(), &text)?;
    Ok(IngestSummary { loaded, kept: bundle.talks.len(), text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub thresholds: Ratings,
    pub labels: Vec<Labels>,
}

/// Output of the debias stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasArtifacts {
    pub seed: u64,
    pub test_n: usize,
    pub dev_fraction: f64,
    pub talk_ids: Vec<String>,
    pub split: Split,
    /// Labels from count / total, thresholded at the training median.
    pub scaled: LabelSet,
    /// Labels from raw counts, thresholded at the training median.
    pub unscaled: LabelSet,
}

impl DebiasArtifacts {
    pub fn load(ws: &Workspace) -> Result<Self> {
        let path = ws.debias();
        if !path.exists() {
            return Err(PipelineError::MissingStage { what: "debias labels", path, stage: "debias" });
        }
        let text = read_text(&path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Corrupt { path, message: e.to_string() })
    }

    pub fn labels(&self, unscaled: bool) -> &[Labels] {
        if unscaled {
            &self.unscaled.labels
        } else {
            &self.scaled.labels
        }
    }
}

/// Splits the talks, binarizes scaled and unscaled ratings at the training
/// medians, and writes the labels plus the correlation audit.
pub fn debias(ws: &Workspace, seed: u64, test_n: usize, dev_fraction: f64) -> Result<DebiasArtifacts> {
    let bundle = Bundle::load(ws)?;
    let talks = &bundle.talks;
    let split = training::split_data(talks.len(), test_n, dev_fraction, seed)?;
    let scaled: Vec<Ratings> = talks
        .iter()
        .map(|t| debias::scale_ratings(&t.rating_counts))
        .collect::<std::result::Result<_, _>>()?;
    let raw: Vec<Ratings> = talks.iter().map(|t| debias::unscaled_ratings(&t.rating_counts)).collect();
    let (scaled_labels, scaled_t) = debias::median_binarize(&scaled, &split.train)?;
    let (raw_labels, raw_t) = debias::median_binarize(&raw, &split.train)?;
    let artifacts = DebiasArtifacts {
        seed,
        test_n,
        dev_fraction,
        talk_ids: talks.iter().map(|t| t.id.clone()).collect(),
        split,
        scaled: LabelSet { thresholds: scaled_t.0, labels: scaled_labels },
        unscaled: LabelSet { thresholds: raw_t.0, labels: raw_labels },
    };
    let report = debias::correlation_report(talks)?;
    write_file(&ws.debias(), serde_json::to_string_pretty(&artifacts).expect("serializable"))?;
    write_file(&ws.correlation_text(), report.to_text())?;
    write_file(&ws.correlation_csv(), report.to_csv())?;
    Ok(artifacts)
}

/// What `train` fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    WordSeq,
    DepTree,
    Svm,
    Lasso,
}

impl ModelChoice {
    pub const NAMES: [&'static str; 4] = ["word-seq", "dep-tree", "svm", "lasso"];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "word-seq" => Some(Self::WordSeq),
            "dep-tree" => Some(Self::DepTree),
            "svm" => Some(Self::Svm),
            "lasso" => Some(Self::Lasso),
            _ => None,
        }
    }

    /// Report row for this choice; `--unscaled` only applies to the tree
    /// model.
    pub fn model_id(self, unscaled: bool) -> Result<ModelId> {
        match (self, unscaled) {
            (Self::WordSeq, false) => Ok(ModelId::WordSeq),
            (Self::DepTree, false) => Ok(ModelId::DepTree),
            (Self::DepTree, true) => Ok(ModelId::DepTreeUnscaled),
            (Self::Svm, false) => Ok(ModelId::LinearSvm),
            (Self::Lasso, false) => Ok(ModelId::Lasso),
            (_, true) => Err(PipelineError::Usage("--unscaled applies to --model dep-tree only".into())),
        }
    }
}

fn unscaled_of(model: ModelId) -> bool {
    model == ModelId::DepTreeUnscaled
}

#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub model: ModelChoice,
    pub unscaled: bool,
    pub config: TrainConfig,
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model: ModelId,
    pub checkpoint: PathBuf,
    pub text: String,
}

/// Encoded inputs of every talk for a neural model.
pub fn encode_talks(bundle: &Bundle, kind: ModelKind) -> Result<Vec<TalkInput>> {
    match kind {
        ModelKind::WordSeq => Ok(bundle
            .talks
            .iter()
            .map(|t| TalkInput::sequences(&t.sentences, &bundle.vectors))
            .collect()),
        ModelKind::DepTree => {
            let (Some(_), Some(vocab)) = (&bundle.trees, &bundle.vocab) else {
                return Err(PipelineError::Usage(
                    "trees required: --model dep-tree needs a bundle ingested with --trees".into(),
                ));
            };
            bundle
                .talks
                .iter()
                .map(|t| {
                    let trees = bundle.talk_trees(&t.id);
                    if trees.is_empty() {
                        return Err(PipelineError::Usage(format!("trees required: no dependency trees for talk `{}`", t.id)));
                    }
                    let encoded = trees
                        .into_iter()
                        .map(|tree| EncodedTree::encode(tree, &bundle.vectors, vocab))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    Ok(TalkInput::Trees(encoded))
                })
                .collect()
        }
    }
}

fn examples(inputs: &[TalkInput], labels: &[Labels], indices: &[usize]) -> Vec<Example> {
    indices
        .iter()
        .map(|&i| Example { input: inputs[i].clone(), targets: labels[i].map(f64::from) })
        .collect()
}

fn features(bundle: &Bundle, lex: &Lexicon) -> Result<Vec<Vec<f64>>> {
    bundle
        .talks
        .par_iter()
        .map(|t| baselines::extract_features(t.tokens(), lex).map_err(PipelineError::from))
        .collect()
}

fn rows(x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x[i].clone()).collect()
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Fits one model and writes its checkpoint (plus the loss curve for
/// neural models).
pub fn train(ws: &Workspace, req: &TrainRequest) -> Result<TrainSummary> {
    let model = req.model.model_id(req.unscaled)?;
    req.config.validate().map_err(PipelineError::Usage)?;
    let bundle = Bundle::load(ws)?;
    let art = DebiasArtifacts::load(ws)?;
    let labels = art.labels(req.unscaled);
    let split = &art.split;
    let ckpt = ws.checkpoint(model);
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }

    let text = match req.model {
        ModelChoice::WordSeq | ModelChoice::DepTree => {
            let kind = if req.model == ModelChoice::WordSeq { ModelKind::WordSeq } else { ModelKind::DepTree };
            let inputs = encode_talks(&bundle, kind)?;
            let c = &req.config;
            let arch = match kind {
                ModelKind::WordSeq => Architecture::word_seq(bundle.vectors.dim(), c.hidden),
                ModelKind::DepTree => Architecture::dep_tree(
                    bundle.vectors.dim(),
                    c.hidden,
                    c.pos_dim,
                    c.dep_dim,
                    bundle.vocab.as_ref().expect("checked by encode_talks"),
                ),
            };
            let train_set = examples(&inputs, labels, &split.train);
            let dev_set = examples(&inputs, labels, &split.dev);
            let initial = Params::init(arch, c.seed);
            let meta = |epoch: usize| {
                BTreeMap::from([
                    ("model".to_string(), model.slug().to_string()),
                    ("epoch".to_string(), epoch.to_string()),
                ])
            };
            let outcome = training::train(initial, &bundle.vectors, &train_set, &dev_set, c, |epoch, params| {
                checkpoint::save_params(&ckpt, params, &meta(epoch)).map_err(|e| TrainError::Checkpoint(e.to_string()))
            })?;
            if outcome.best_epoch.is_none() {
                checkpoint::save_params(&ckpt, &outcome.best, &meta(0))?;
            }
            write_file(&ws.loss_curve(model), training::curve_csv(&outcome.curve))?;
            let mut text = format!(
                "{}: {} epochs, {} train / {} dev talks\n",
                model.slug(),
                outcome.curve.len(),
                train_set.len(),
                dev_set.len()
            );
            match outcome.best_epoch {
                Some(e) => writeln!(text, "best dev loss {:.6} at epoch {e}", outcome.curve[e - 1].dev_loss).unwrap(),
                None => writeln!(text, "no epochs run; saved initial parameters").unwrap(),
            }
            if outcome.saturated {
                writeln!(text, "stopped early: dev loss saturated").unwrap();
            }
            text
        }
        ModelChoice::Svm | ModelChoice::Lasso => {
            let lex_path = req
                .lexicon
                .as_ref()
                .ok_or_else(|| PipelineError::Usage("lexicon required: --model svm/lasso needs --lexicon".into()))?;
            let lex_text = read_text(lex_path)?;
            let lex = Lexicon::parse(&lex_text)?;
            let x = features(&bundle, &lex)?;
            let kind = if req.model == ModelChoice::Svm { LinearKind::Svm } else { LinearKind::Lasso };
            let fitted = baselines::fit_baseline(
                kind,
                &rows(&x, &split.train),
                &pick(labels, &split.train),
                &rows(&x, &split.dev),
                &pick(labels, &split.dev),
                &req.config.c_grid,
                SolverOptions::default(),
            )?;
            let mut container = fitted.to_container();
            container.meta.insert("model".into(), model.slug().into());
            container.save(&ckpt)?;
            write_file(&ws.lexicon_copy(model), &lex_text)?;
            let cs: Vec<String> = fitted.c.iter().map(|c| c.to_string()).collect();
            format!(
                "{}: {} lexicon categories, {} train / {} dev talks\nselected C per rating category: {}\n",
                model.slug(),
                lex.len(),
                split.train.len(),
                split.dev.len(),
                cs.join(" ")
            )
        }
    };
    Ok(TrainSummary { model, checkpoint: ckpt, text })
}

fn predict_test(ws: &Workspace, bundle: &Bundle, model: ModelId, test: &[usize]) -> Result<Vec<Labels>> {
    let path = ws.checkpoint(model);
    let container = Container::load(&path)?;
    match model {
        ModelId::WordSeq | ModelId::DepTree | ModelId::DepTreeUnscaled => {
            let params = checkpoint::params_from_container(&container, None)?;
            let inputs = encode_talks(bundle, params.arch().kind)?;
            test.par_iter()
                .map(|&i| {
                    let r = crate::models::predict(&params, &bundle.vectors, &inputs[i])?;
                    Ok(eval::threshold_predictions(&r))
                })
                .collect()
        }
        ModelId::LinearSvm | ModelId::Lasso => {
            let fitted = BaselineModel::from_container(&container)?;
            let lex = Lexicon::parse(&read_text(&ws.lexicon_copy(model))?)?;
            test.par_iter()
                .map(|&i| {
                    let x = baselines::extract_features(bundle.talks[i].tokens(), &lex)?;
                    Ok(fitted.predict(&x))
                })
                .collect()
        }
    }
}

/// Models that have a checkpoint in the workspace, in report order.
pub fn trained_models(ws: &Workspace) -> Vec<ModelId> {
    ModelId::ALL.into_iter().filter(|m| ws.checkpoint(*m).exists()).collect()
}

/// Scores each model on the test split, stores its table, and rewrites the
/// combined report.
pub fn evaluate(ws: &Workspace, models: &[ModelId]) -> Result<Report> {
    let models = if models.is_empty() { trained_models(ws) } else { models.to_vec() };
    if models.is_empty() {
        return Err(PipelineError::MissingStage {
            what: "model checkpoints",
            path: ws.root().join("models"),
            stage: "train",
        });
    }
    let bundle = Bundle::load(ws)?;
    let art = DebiasArtifacts::load(ws)?;
    for model in models {
        let path = ws.checkpoint(model);
        if !path.exists() {
            return Err(PipelineError::MissingStage { what: "model checkpoint", path, stage: "train" });
        }
        let preds = predict_test(ws, &bundle, model, &art.split.test)?;
        let truth = pick(art.labels(unscaled_of(model)), &art.split.test);
        let table = MetricsTable::evaluate(model, &preds, &truth)?;
        write_file(&ws.eval_table(model), serde_json::to_string_pretty(&table).expect("serializable"))?;
    }
    report(ws)
}

/// Combines every stored evaluation table into `report.txt` and
/// `metrics.csv`.
pub fn report(ws: &Workspace) -> Result<Report> {
    let mut tables = Vec::new();
    for model in ModelId::ALL {
        let path = ws.eval_table(model);
        if path.exists() {
            let text = read_text(&path)?;
            let table: MetricsTable =
                serde_json::from_str(&text).map_err(|e| PipelineError::Corrupt { path, message: e.to_string() })?;
            tables.push(table);
        }
    }
    if tables.is_empty() {
        return Err(PipelineError::MissingStage {
            what: "evaluation tables",
            path: ws.root().join("eval"),
            stage: "eval",
        });
    }
    let rep = eval::report(&tables)?;
    write_file(&ws.report_text(), &rep.text)?;
    write_file(&ws.metrics_csv(), &rep.csv)?;
    Ok(rep)
}
