//! Command-line front end. Every subcommand resolves a [`RunConfig`]
//! (defaults, then an optional `key = value` file, then flags), calls one
//! library operation and prints a single `<subcommand> ok key=value ...`
//! line. Failures print one diagnostic line and exit with 2 (usage or
//! configuration), 3 (data format) or 4 (numeric/runtime).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_features, load_labels, load_votes, majority_vote, synth_generate, write_features, write_labels, DataError,
    LabelKind, SynthConfig,
};
use crate::label_enhancement::{enhance_traced, EnhanceError, LeConfig, DEFAULT_LE_LR};
use crate::label_graph::{cooccurrence, normalize, LabelEmbeddings};
use crate::metrics::{evaluate, MetricsReport};
use crate::pseudo_labeling::{estimate_priors, generate, unreliability};
use crate::theory::{compare_risks, sample_complexity, TheoryError, TheoryParams};
use crate::trainer::{
    initial_classifier, predict, run_pipeline, train, Ablation, GcnConfig, PipelineConfig, PipelineData,
    PredictionMatrix, TrainConfig, TrainError, DEFAULT_TRAIN_LR,
};
use crate::data::format::{self, SOFT_LABELS};
use crate::label_enhancement::SoftLabelMatrix;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => CliError::Usage(e.to_string()),
            DataError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EnhanceError> for CliError {
    fn from(e: EnhanceError) -> Self {
        match e {
            EnhanceError::Config(_) => CliError::Usage(e.to_string()),
            EnhanceError::Shape(_) | EnhanceError::TooFewInstances(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Shape(_) | TrainError::Pseudo(_) | TrainError::Metric(_) => CliError::Data(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Enhance(d) => d.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::Param(_) => CliError::Usage(e.to_string()),
            TheoryError::Data(d) => d.into(),
            TheoryError::Train(t) => t.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Every recognised configuration key with its default (`None` = no default).
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("0")),
    ("n_train", Some("2000")),
    ("n_val", Some("500")),
    ("n_test", Some("500")),
    ("classes", Some("10")),
    ("dim", Some("16")),
    ("max_active", Some("3")),
    ("noise_sigma", Some("0.3")),
    ("tau", Some("0.5")),
    ("k", Some("10")),
    ("le_steps", Some("200")),
    ("le_lr", None),
    ("init_bg", None),
    ("epochs", Some("500")),
    ("lr", None),
    ("freeze_embeddings", Some("true")),
    ("ablation", Some("all")),
    ("embed_dim", Some("16")),
    ("hidden_dim", Some("512")),
    ("seeds", Some("0-9")),
    ("xi", None),
    ("c", None),
    ("dh", None),
    ("eps", None),
    ("delta", None),
    ("out_dir", None),
    ("data_dir", None),
    ("votes", None),
    ("out", None),
    ("features", None),
    ("labels", None),
    ("soft", None),
    ("val_labels", None),
    ("truth", None),
    ("normalized_out", None),
    ("targets", None),
    ("embeddings", None),
    ("predict", None),
    ("predictions", None),
    ("report", None),
    ("json", None),
];

/// Layered string configuration with typed accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if !known(k) {
            return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// defaults < config file < flags.
    pub fn resolve(file: Option<&Path>, flags: &[(&str, String)]) -> CliResult<Self> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            values.extend(parse_config_text(&text)?);
        }
        for (k, v) in flags {
            debug_assert!(known(k), "flag {k} missing from KEYS");
            values.insert(k.to_string(), v.clone());
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> CliResult<V> {
        self.opt(key)?.ok_or_else(|| CliError::Usage(format!("missing required setting {key}")))
    }

    pub fn opt<V: FromStr>(&self, key: &str) -> CliResult<Option<V>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("invalid value {v:?} for {key}"))),
        }
    }

    /// An input path, which must exist.
    pub fn input(&self, key: &str) -> CliResult<PathBuf> {
        let p = PathBuf::from(self.get::<String>(key)?);
        if !p.exists() {
            return Err(CliError::Usage(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn output(&self, key: &str) -> CliResult<PathBuf> {
        self.get::<String>(key).map(PathBuf::from)
    }

    pub fn optional_input(&self, key: &str) -> CliResult<Option<PathBuf>> {
        self.raw(key).map(|_| self.input(key)).transpose()
    }

    pub fn optional_output(&self, key: &str) -> CliResult<Option<PathBuf>> {
        self.raw(key).map(|_| self.output(key)).transpose()
    }

    pub fn synth(&self) -> CliResult<SynthConfig> {
        let cfg = SynthConfig {
            n_train: self.get("n_train")?,
            n_val: self.get("n_val")?,
            n_test: self.get("n_test")?,
            classes: self.get("classes")?,
            dim: self.get("dim")?,
            max_active: self.get("max_active")?,
            noise_sigma: self.get("noise_sigma")?,
            seed: self.get("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn le(&self) -> CliResult<LeConfig> {
        let cfg = LeConfig {
            tau: self.get("tau")?,
            k: self.get("k")?,
            steps: self.get("le_steps")?,
            lr: self.opt("le_lr")?.unwrap_or(DEFAULT_LE_LR),
            init_bg: self.opt("init_bg")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> CliResult<TrainConfig> {
        let ablation = self
            .get::<String>("ablation")?
            .parse::<Ablation>()
            .map_err(CliError::Usage)?;
        let cfg = TrainConfig {
            epochs: self.get("epochs")?,
            lr: self.opt("lr")?.unwrap_or(DEFAULT_TRAIN_LR),
            seed: self.get("seed")?,
            freeze_embeddings: self.get("freeze_embeddings")?,
            ablation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn gcn(&self) -> CliResult<GcnConfig> {
        let (embed_dim, hidden_dim): (usize, usize) = (self.get("embed_dim")?, self.get("hidden_dim")?);
        if embed_dim == 0 || hidden_dim == 0 {
            return Err(CliError::Usage("embed_dim and hidden_dim must be at least 1".into()));
        }
        Ok(GcnConfig { embed_dim, hidden_dim })
    }

    pub fn pipeline(&self) -> CliResult<PipelineConfig> {
        Ok(PipelineConfig { le: self.le()?, train: self.train()?, gcn: self.gcn()? })
    }

    /// `a-b` (inclusive range) or a comma-separated list.
    pub fn seeds(&self) -> CliResult<Vec<u64>> {
        let raw: String = self.get("seeds")?;
        let bad = || CliError::Usage(format!("invalid seeds {raw:?}"));
        if let Some((a, b)) = raw.split_once('-') {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            return Ok((a..=b).collect());
        }
        raw.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
    }
}

#[derive(Debug, Parser)]
#[command(name = "lepl", about = "Weakly-supervised multi-label learning toolkit", version)]
pub struct Cli {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every random stage derives its stream from it.
    #[arg(long, global = true)]
    pub seed: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic single-positive dataset.
    Synth {
        #[command(flatten)]
        synth: SynthFlags,
        #[arg(long)]
        out_dir: Option<String>,
    },
    /// Majority-vote annotator labels into full labels.
    Aggregate {
        #[arg(long)]
        votes: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Recover soft labels from single-positive labels.
    Enhance {
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        le: LeFlags,
    },
    /// Turn soft labels into class-prior-guided pseudo-labels.
    Pseudo {
        #[arg(long)]
        soft: Option<String>,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        val_labels: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// Full training labels, to report the unreliability degree.
        #[arg(long)]
        truth: Option<String>,
    },
    /// Export the validation label co-occurrence matrix.
    Graph {
        #[arg(long)]
        val_labels: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// Also write the normalized adjacency.
        #[arg(long)]
        normalized_out: Option<String>,
    },
    /// Train the classifier on pseudo-labels and write predictions.
    Train {
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        targets: Option<String>,
        #[arg(long)]
        val_labels: Option<String>,
        /// Label embeddings, one row per class (random when omitted).
        #[arg(long)]
        embeddings: Option<String>,
        /// Features to predict on (defaults to the training features).
        #[arg(long)]
        predict: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score predictions against full labels.
    Evaluate {
        #[arg(long)]
        predictions: Option<String>,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        report: Option<String>,
        #[arg(long)]
        json: Option<String>,
    },
    /// Run the whole pipeline on a dataset directory.
    Pipeline {
        #[arg(long)]
        data_dir: Option<String>,
        #[arg(long)]
        out_dir: Option<String>,
        #[arg(long)]
        embeddings: Option<String>,
        #[command(flatten)]
        le: LeFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Learnability calculators and experiments.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// Sample-complexity bound n0.
    N0 {
        #[arg(long)]
        xi: Option<String>,
        #[arg(long)]
        c: Option<String>,
        #[arg(long)]
        dh: Option<String>,
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        delta: Option<String>,
    },
    /// Paired pseudo-label vs single-label risk experiment.
    Compare {
        #[command(flatten)]
        synth: SynthFlags,
        #[command(flatten)]
        le: LeFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// `a-b` or `a,b,c`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out_dir: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    #[arg(long)]
    n_train: Option<String>,
    #[arg(long)]
    n_val: Option<String>,
    #[arg(long)]
    n_test: Option<String>,
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    max_active: Option<String>,
    #[arg(long)]
    noise_sigma: Option<String>,
}

#[derive(Debug, Args)]
pub struct LeFlags {
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    le_steps: Option<String>,
    #[arg(long)]
    le_lr: Option<String>,
    /// Starting probability for unobserved entries (defaults to 1/C).
    #[arg(long)]
    init_bg: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    freeze_embeddings: Option<String>,
    /// `all`, `none`, or a comma list of `enhancement`, `prior_pseudo`, `gcn`.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    hidden_dim: Option<String>,
}

macro_rules! collect_flags {
    ($out:ident; $src:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = &$src.$field { $out.push((stringify!($field), v.clone())); } )*
    };
}

impl SynthFlags {
    fn push(&self, out: &mut Vec<(&'static str, String)>) {
        collect_flags!(out; self; n_train, n_val, n_test, classes, dim, max_active, noise_sigma);
    }
}

impl LeFlags {
    fn push(&self, out: &mut Vec<(&'static str, String)>) {
        collect_flags!(out; self; tau, k, le_steps, le_lr, init_bg);
    }
}

impl TrainFlags {
    fn push(&self, out: &mut Vec<(&'static str, String)>) {
        collect_flags!(out; self; epochs, lr, freeze_embeddings, ablation, embed_dim, hidden_dim);
    }
}

/// Flag overrides as configuration key/value pairs.
fn flag_layer(command: &Command) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let mut path = |key: &'static str, v: &Option<String>| {
        if let Some(v) = v {
            out.push((key, v.clone()));
        }
    };
    match command {
        Command::Synth { out_dir, .. } => path("out_dir", out_dir),
        Command::Aggregate { votes, out } => {
            path("votes", votes);
            path("out", out);
        }
        Command::Enhance { features, labels, out, .. } => {
            path("features", features);
            path("labels", labels);
            path("out", out);
        }
        Command::Pseudo { soft, labels, val_labels, out, truth } => {
            path("soft", soft);
            path("labels", labels);
            path("val_labels", val_labels);
            path("out", out);
            path("truth", truth);
        }
        Command::Graph { val_labels, out, normalized_out } => {
            path("val_labels", val_labels);
            path("out", out);
            path("normalized_out", normalized_out);
        }
        Command::Train { features, targets, val_labels, embeddings, predict, out, .. } => {
            path("features", features);
            path("targets", targets);
            path("val_labels", val_labels);
            path("embeddings", embeddings);
            path("predict", predict);
            path("out", out);
        }
        Command::Evaluate { predictions, labels, report, json } => {
            path("predictions", predictions);
            path("labels", labels);
            path("report", report);
            path("json", json);
        }
        Command::Pipeline { data_dir, out_dir, embeddings, .. } => {
            path("data_dir", data_dir);
            path("out_dir", out_dir);
            path("embeddings", embeddings);
        }
        Command::Theory { command: TheoryCommand::N0 { xi, c, dh, eps, delta } } => {
            path("xi", xi);
            path("c", c);
            path("dh", dh);
            path("eps", eps);
            path("delta", delta);
        }
        Command::Theory { command: TheoryCommand::Compare { seeds, out_dir, .. } } => {
            path("seeds", seeds);
            path("out_dir", out_dir);
        }
    }
    match command {
        Command::Synth { synth, .. } => synth.push(&mut out),
        Command::Enhance { le, .. } => le.push(&mut out),
        Command::Train { train, .. } => train.push(&mut out),
        Command::Pipeline { le, train, .. } => {
            le.push(&mut out);
            train.push(&mut out);
        }
        Command::Theory { command: TheoryCommand::Compare { synth, le, train, .. } } => {
            synth.push(&mut out);
            le.push(&mut out);
            train.push(&mut out);
        }
        _ => {}
    }
    out
}

/// File names inside a dataset directory, as written by `synth`.
pub mod layout {
    pub const TRAIN_FEATURES: &str = "train.features";
    pub const TRAIN_LABELS: &str = "train.labels";
    pub const TRAIN_TRUE_LABELS: &str = "train_true.labels";
    pub const VAL_FEATURES: &str = "val.features";
    pub const VAL_LABELS: &str = "val.labels";
    pub const TEST_FEATURES: &str = "test.features";
    pub const TEST_LABELS: &str = "test.labels";
    pub const PREDICTIONS: &str = "predictions.txt";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const REPORT_JSON: &str = "report.json";
    pub const COMPARE_JSON: &str = "compare.json";
    pub const COMPARE_TABLE: &str = "compare.tsv";
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_synth(cfg: &RunConfig) -> CliResult<String> {
    use layout::*;
    let sc = cfg.synth()?;
    let dir = cfg.output("out_dir")?;
    ensure_dir(&dir)?;
    let data = synth_generate::<f64>(&sc)?;
    write_features(&data.train_x, &dir.join(TRAIN_FEATURES))?;
    write_labels(&data.train_partial, &dir.join(TRAIN_LABELS))?;
    write_labels(&data.train_true, &dir.join(TRAIN_TRUE_LABELS))?;
    write_features(&data.val_x, &dir.join(VAL_FEATURES))?;
    write_labels(&data.val_labels, &dir.join(VAL_LABELS))?;
    write_features(&data.test_x, &dir.join(TEST_FEATURES))?;
    write_labels(&data.test_labels, &dir.join(TEST_LABELS))?;
    Ok(format!(
        "synth ok n_train={} n_val={} n_test={} c={} d={} seed={}",
        sc.n_train, sc.n_val, sc.n_test, sc.classes, sc.dim, sc.seed
    ))
}

fn cmd_aggregate(cfg: &RunConfig) -> CliResult<String> {
    let (input, out) = (cfg.input("votes")?, cfg.output("out")?);
    let votes = load_votes(&input)?;
    let labels = majority_vote(&votes);
    write_labels(&labels, &out)?;
    let positives: usize = labels.class_counts().iter().sum();
    Ok(format!(
        "aggregate ok n={} c={} a={} positives={positives}",
        votes.n(),
        votes.classes(),
        votes.annotators()
    ))
}

fn write_soft(soft: &SoftLabelMatrix<f64>, path: &Path) -> CliResult<()> {
    Ok(format::write_real_matrix(&soft.values().to_owned(), path, SOFT_LABELS)?)
}

fn cmd_enhance(cfg: &RunConfig) -> CliResult<String> {
    let (features, labels, dest, le) = (cfg.input("features")?, cfg.input("labels")?, cfg.output("out")?, cfg.le()?);
    let x = load_features::<f64>(&features)?;
    let partial = load_labels(&labels, LabelKind::Partial)?;
    let out = enhance_traced(&x, &partial, &le)?;
    write_soft(&out.soft, &dest)?;
    Ok(format!(
        "enhance ok n={} c={} steps={} loss_initial={} loss_final={}",
        out.soft.n(),
        out.soft.classes(),
        le.steps,
        out.losses[0],
        out.losses[out.losses.len() - 1]
    ))
}

fn cmd_pseudo(cfg: &RunConfig) -> CliResult<String> {
    let (soft_path, labels, val_labels) = (cfg.input("soft")?, cfg.input("labels")?, cfg.input("val_labels")?);
    let (dest, truth) = (cfg.output("out")?, cfg.optional_input("truth")?);
    let values: ndarray::Array2<f64> = format::load_real_matrix(&soft_path, SOFT_LABELS)?;
    let partial = load_labels(&labels, LabelKind::Partial)?;
    let val = load_labels(&val_labels, LabelKind::Full)?;
    if values.dim() != partial.values().dim() {
        return Err(CliError::Data(format!(
            "soft labels are {}x{} but partial labels are {}x{}",
            values.nrows(),
            values.ncols(),
            partial.n(),
            partial.classes()
        )));
    }
    if val.classes() != partial.classes() {
        return Err(CliError::Data(format!(
            "validation labels have {} classes, training labels {}",
            val.classes(),
            partial.classes()
        )));
    }
    if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CliError::Data("soft label values must lie in [0, 1]".into()));
    }
    let clamped = partial.values().mapv(|v| v == 1);
    let soft = SoftLabelMatrix::from_logits(values.mapv(crate::scalar::logit), clamped)?;
    let priors = estimate_priors::<f64>(&val, partial.n()).map_err(TrainError::from)?;
    let pseudo = generate(&soft, &priors, &partial).map_err(TrainError::from)?;
    write_labels(&pseudo.to_label_matrix(), &dest)?;
    let positives: usize = pseudo.values().iter().map(|&v| v as usize).sum();
    let mut line = format!("pseudo ok n={} c={} positives={positives}", pseudo.n(), pseudo.classes());
    if let Some(truth) = truth {
        let truth = load_labels(&truth, LabelKind::Full)?;
        let xi: f64 = unreliability(pseudo.values(), truth.values()).map_err(TrainError::from)?;
        line.push_str(&format!(" xi={xi}"));
    }
    Ok(line)
}

fn cmd_graph(cfg: &RunConfig) -> CliResult<String> {
    let (input, dest, normalized_dest) = (cfg.input("val_labels")?, cfg.output("out")?, cfg.optional_output("normalized_out")?);
    let val = load_labels(&input, LabelKind::Full)?;
    let graph = cooccurrence::<f64>(&val);
    graph.write_cooc(&dest)?;
    if let Some(path) = normalized_dest {
        let normalized = normalize(graph.clone());
        let a_hat = normalized.a_hat().expect("normalized").to_owned();
        let g = crate::label_graph::CoOccurrenceGraph::from_matrix(a_hat).map_err(|e| CliError::Runtime(e.to_string()))?;
        g.write_cooc(&path)?;
    }
    Ok(format!("graph ok c={} n_val={}", graph.classes(), val.n()))
}

fn load_embeddings(path: Option<&Path>) -> CliResult<Option<LabelEmbeddings<f64>>> {
    Ok(path.map(LabelEmbeddings::load).transpose()?)
}

fn cmd_train(cfg: &RunConfig) -> CliResult<String> {
    let (features, targets_path, val_labels) = (cfg.input("features")?, cfg.input("targets")?, cfg.input("val_labels")?);
    let (emb_path, predict_path, dest) = (cfg.optional_input("embeddings")?, cfg.optional_input("predict")?, cfg.output("out")?);
    let pc = cfg.pipeline()?;
    let x = load_features::<f64>(&features)?;
    let targets = load_labels(&targets_path, LabelKind::Pseudo)?;
    let val = load_labels(&val_labels, LabelKind::Full)?;
    if targets.n() != x.n() {
        return Err(CliError::Data(format!("{} feature rows but {} target rows", x.n(), targets.n())));
    }
    if val.classes() != targets.classes() {
        return Err(CliError::Data(format!(
            "validation labels have {} classes, targets {}",
            val.classes(),
            targets.classes()
        )));
    }
    let embeddings = load_embeddings(emb_path.as_deref())?;
    let partial = crate::pseudo_labeling::PseudoLabelMatrix::from(targets.clone());
    let init = initial_classifier(targets.classes(), x.d(), &val, embeddings.as_ref(), &pc)?;
    let trained = train(&x, partial.to_real::<f64>().view(), init, &pc.train)?;
    let pred_x = match predict_path {
        Some(path) => load_features::<f64>(&path)?,
        None => x.clone(),
    };
    let pred = predict(&trained.classifier, &pred_x)?;
    pred.write(&dest)?;
    Ok(format!(
        "train ok n={} c={} epochs={} loss_initial={} loss_final={}",
        x.n(),
        targets.classes(),
        pc.train.epochs,
        trained.losses[0],
        trained.losses[trained.losses.len() - 1]
    ))
}

fn report_line(prefix: &str, r: &MetricsReport) -> String {
    format!(
        "{prefix} ok map={} lrl={} coverage_error={} one_error={} hamming_risk={}",
        r.map, r.lrl, r.coverage_error, r.one_error, r.hamming_risk
    )
}

fn cmd_evaluate(cfg: &RunConfig) -> CliResult<String> {
    let (pred_path, labels) = (cfg.input("predictions")?, cfg.input("labels")?);
    let (text_dest, json_dest) = (cfg.optional_output("report")?, cfg.optional_output("json")?);
    let pred = PredictionMatrix::<f64>::load(&pred_path)?;
    let truth = load_labels(&labels, LabelKind::Full)?;
    if pred.n() != truth.n() {
        return Err(CliError::Data(format!(
            "predictions have n={} rows but labels have n={}",
            pred.n(),
            truth.n()
        )));
    }
    if pred.classes() != truth.classes() {
        return Err(CliError::Data(format!(
            "predictions have c={} classes but labels have c={}",
            pred.classes(),
            truth.classes()
        )));
    }
    let report = evaluate(pred.values(), truth.values()).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(path) = text_dest {
        report.write_text(&path)?;
    }
    if let Some(path) = json_dest {
        report.write_json(&path)?;
    }
    Ok(report_line("evaluate", &report))
}

fn cmd_pipeline(cfg: &RunConfig) -> CliResult<String> {
    use layout::*;
    let dir = cfg.input("data_dir")?;
    let need = |name: &str| -> CliResult<PathBuf> {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Usage(format!("{} does not exist", p.display())))
        }
    };
    let paths = [TRAIN_FEATURES, TRAIN_LABELS, VAL_FEATURES, VAL_LABELS, TEST_FEATURES, TEST_LABELS]
        .map(need)
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?;
    let (emb_path, out_dir, pc) = (cfg.optional_input("embeddings")?, cfg.output("out_dir")?, cfg.pipeline()?);
    let train_x = load_features::<f64>(&paths[0])?;
    let train_partial = load_labels(&paths[1], LabelKind::Partial)?;
    let val_x = load_features::<f64>(&paths[2])?;
    let val_full = load_labels(&paths[3], LabelKind::Full)?;
    let test_x = load_features::<f64>(&paths[4])?;
    let test_full = load_labels(&paths[5], LabelKind::Full)?;
    let embeddings = load_embeddings(emb_path.as_deref())?;
    ensure_dir(&out_dir)?;
    let pd = PipelineData {
        train_x: &train_x,
        train_partial: &train_partial,
        val_x: &val_x,
        val_full: &val_full,
        test_x: &test_x,
        test_full: &test_full,
        embeddings: embeddings.as_ref(),
    };
    let out = run_pipeline(&pd, &pc)?;
    out.predictions.write(&out_dir.join(PREDICTIONS))?;
    out.report.write_text(&out_dir.join(REPORT_TEXT))?;
    out.report.write_json(&out_dir.join(REPORT_JSON))?;
    Ok(report_line("pipeline", &out.report) + &format!(" ablation={}", pc.train.ablation))
}

fn cmd_theory_n0(cfg: &RunConfig) -> CliResult<String> {
    let params = TheoryParams::new(
        cfg.get::<f64>("xi")?,
        cfg.get::<u64>("dh")?,
        cfg.get::<f64>("eps")?,
        cfg.get::<f64>("delta")?,
        cfg.get::<usize>("c")?,
    )?;
    let n0 = sample_complexity(&params)?;
    Ok(format!("theory-n0 ok n0={n0} theta={}", params.theta()?))
}

fn cmd_theory_compare(cfg: &RunConfig) -> CliResult<String> {
    let synth = cfg.synth()?;
    let pc = cfg.pipeline()?;
    let seeds = cfg.seeds()?;
    let out_dir = cfg.optional_output("out_dir")?;
    let result = compare_risks::<f64>(&synth, &pc, &seeds)?;
    if let Some(dir) = out_dir {
        ensure_dir(&dir)?;
        let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_text(&dir.join(layout::COMPARE_JSON), &(json + "\n"))?;
        write_text(&dir.join(layout::COMPARE_TABLE), &result.render_table())?;
    }
    Ok(format!(
        "theory-compare ok seeds={} wins_pseudo={} mean_risk_pseudo={} mean_risk_single={}",
        seeds.len(),
        result.wins_pseudo,
        result.mean_pseudo(),
        result.mean_single()
    ))
}

/// Executes a parsed command line and returns the summary line.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let mut flags = flag_layer(&cli.command);
    if let Some(seed) = &cli.seed {
        flags.push(("seed", seed.clone()));
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &flags)?;
    match &cli.command {
        Command::Synth { .. } => cmd_synth(&cfg),
        Command::Aggregate { .. } => cmd_aggregate(&cfg),
        Command::Enhance { .. } => cmd_enhance(&cfg),
        Command::Pseudo { .. } => cmd_pseudo(&cfg),
        Command::Graph { .. } => cmd_graph(&cfg),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Pipeline { .. } => cmd_pipeline(&cfg),
        Command::Theory { command: TheoryCommand::N0 { .. } } => cmd_theory_n0(&cfg),
        Command::Theory { command: TheoryCommand::Compare { .. } } => cmd_theory_compare(&cfg),
    }
}

/// Parses `args`, runs, and reports; returns the process exit status.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(&cli) {
        Ok(line) => {
            let _ = writeln!(out, "{line}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}
