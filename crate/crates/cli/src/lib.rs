//! Experiment driver behind the `ecl-lab` binary.
//!
//! One JSON file describes a whole experiment: the synthetic data, the
//! training recipe, the method, the seeds and the output directory. Every
//! command resolves and validates that file before doing any work, and writes
//! its artifacts under the output directory.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ecl_core::checkpoint::Checkpoint;
use ecl_core::data::{format_f64, generate, Split, SynthConfig};
use ecl_core::gradcheck::{self, GradcheckReport, GradcheckSettings};
use ecl_core::metrics::MetricsReport;
use ecl_core::trainer::{self, ContrastiveKind, TrainConfig};
use ecl_core::Dataset64;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Environment variable capping the number of concurrent runs in `compare`.
pub const THREADS_ENV: &str = "ECL_LAB_THREADS";

const DEFAULT_OUT: &str = "ecl-lab-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run aborted: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// Maps a library error, prefixing configuration keys with their section.
    fn from_core(section: &str, err: ecl_core::Error) -> Self {
        match err {
            ecl_core::Error::Config { key, reason } => {
                let key = if section.is_empty() {
                    key
                } else {
                    format!("{section}.{key}")
                };
                CliError::Config(format!("`{key}`: {reason}"))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Training recipe variants compared by the lab.
#[derive(
    Clone,
    Copy,
    Debug,
    Default,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    Serialize,
    Deserialize,
    JsonSchema,
)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Balanced hybrid-proxy contrastive branch plus curriculum-weighted cross-entropy.
    #[default]
    Ecl,
    /// Plain cross-entropy: no contrastive branch, every class weighted 1.
    Ce,
    /// Supervised contrastive branch (no proxies) plus unweighted cross-entropy.
    Scl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ecl => "ecl",
            Method::Ce => "ce",
            Method::Scl => "scl",
        }
    }

    /// The training configuration this method runs with.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Method::Ecl => {
                cfg.contrastive = ContrastiveKind::Bhp;
                cfg.curriculum = true;
            }
            Method::Ce => {
                cfg.contrastive = ContrastiveKind::None;
                cfg.lambda = 0.0;
                cfg.curriculum = false;
            }
            Method::Scl => {
                cfg.contrastive = ContrastiveKind::Scl;
                cfg.curriculum = false;
            }
        }
        cfg
    }
}

/// The experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for data, initialization, shuffling and augmentation.
    #[serde(default)]
    pub seed: u64,
    /// Seeds of a `compare` run; at least two.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub method: Method,
    /// Methods of a `compare` run; defaults to `[method]`.
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Existing dataset CSV; when absent the dataset is generated from `data`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<SynthConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    #[serde(default)]
    pub gradcheck: GradcheckSettings,
}

fn default_eval_split() -> Split {
    Split::Test
}

/// Command-line overrides of the experiment file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// A parsed experiment with overrides applied and relative paths resolved
/// against the directory of the config file.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(ds) = &config.dataset {
            config.dataset = Some(base.join(ds));
        }
        let out = match (&overrides.out, &config.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base.join(o),
            (None, None) => PathBuf::from(DEFAULT_OUT),
        };
        Self::new(config, out)
    }

    pub fn new(config: ExperimentConfig, out: PathBuf) -> CliResult<Self> {
        let exp = Self { config, out };
        exp.validate()?;
        Ok(exp)
    }

    fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        if let Some(data) = &c.data {
            self.synth(c.seed, data)
                .class_totals()
                .map_err(|e| CliError::from_core("data", e))?;
        }
        c.train
            .validate()
            .map_err(|e| CliError::from_core("train", e))?;
        let g = &c.gradcheck;
        if g.cases == 0 || g.max_batch < 2 || g.max_classes < 2 || g.max_dim < 2 {
            return Err(CliError::Config(
                "`gradcheck`: cases must be positive and max_batch, max_classes, max_dim at least 2".into(),
            ));
        }
        if !(g.step > 0.0 && g.step.is_finite() && g.threshold > 0.0 && g.threshold.is_finite()) {
            return Err(CliError::Config(
                "`gradcheck`: step and threshold must be positive".into(),
            ));
        }
        let mut seeds = c.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != c.seeds.len() {
            return Err(CliError::Config("`seeds`: duplicate seed".into()));
        }
        let mut methods = c.methods.clone();
        methods.sort_unstable();
        methods.dedup();
        if methods.len() != c.methods.len() {
            return Err(CliError::Config("`methods`: duplicate method".into()));
        }
        Ok(())
    }

    fn synth(&self, seed: u64, data: &SynthConfig) -> SynthConfig {
        SynthConfig {
            seed,
            ..data.clone()
        }
    }

    /// The dataset for `seed`: read from `dataset` when configured, otherwise generated.
    pub fn dataset(&self, seed: u64) -> CliResult<Dataset64> {
        match (&self.config.dataset, &self.config.data) {
            (Some(path), _) => {
                let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                let classes = self.config.data.as_ref().map(|d| d.classes);
                Dataset64::read_csv(BufReader::new(file), classes)
                    .map_err(|e| CliError::io(path, e))
            }
            (None, Some(data)) => {
                generate(&self.synth(seed, data)).map_err(|e| CliError::from_core("data", e))
            }
            (None, None) => Err(CliError::Config(
                "`data`: required unless `dataset` names a CSV file".into(),
            )),
        }
    }

    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mut cfg = method.apply(&self.config.train);
        cfg.seed = seed;
        cfg
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn dataset_csv(ds: &Dataset64) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(buf)
}

/// Writes `dataset.csv` and returns its path.
/// JSON Schema of the experiment file, as published in `config.schema.json`.
pub fn config_schema() -> serde_json::Value {
    schemars::schema_for!(ExperimentConfig).to_value()
}

pub fn cmd_generate(exp: &Experiment) -> CliResult<PathBuf> {
    if exp.config.data.is_none() {
        return Err(CliError::Config("`data`: required by generate".into()));
    }
    let ds = exp.dataset(exp.config.seed)?;
    create_dir(&exp.out)?;
    let path = exp.out.join("dataset.csv");
    write(&path, dataset_csv(&ds)?)?;
    Ok(path)
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Smallest class by training count (first on ties).
    pub minority_class: usize,
    pub test: MetricsReport,
}

impl RunSummary {
    pub fn minority_recall(&self) -> f64 {
        self.test.per_class[self.minority_class].recall
    }
}

/// Trains one method/seed pair into `dir` and evaluates the selected
/// checkpoint on the evaluation split.
pub fn train_run(exp: &Experiment, method: Method, seed: u64, dir: &Path) -> CliResult<RunSummary> {
    let ds = exp.dataset(seed)?;
    let cfg = exp.train_config(method, seed);
    create_dir(dir)?;
    if exp.config.dataset.is_none() {
        write(&dir.join("dataset.csv"), dataset_csv(&ds)?)?;
    }
    let outcome = trainer::train(&ds, &cfg).map_err(|e| CliError::from_core("train", e))?;
    write(&dir.join("history.csv"), outcome.history.to_csv())?;
    let checkpoint = Checkpoint {
        network: outcome.params,
        proxies: outcome.proxies,
    };
    let bytes = checkpoint
        .to_bytes()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&dir.join("checkpoint.bin"), bytes)?;
    let report = trainer::evaluate(&checkpoint.network, &ds, exp.config.eval_split)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_report(dir, "metrics", &report)?;
    let counts = ds.class_counts();
    let smallest = *counts.iter().min().expect("at least two classes");
    Ok(RunSummary {
        method,
        seed,
        best_epoch: outcome.history.best_epoch,
        best_val_acc: outcome.history.best_val_acc,
        minority_class: counts
            .iter()
            .position(|&n| n == smallest)
            .expect("minimum exists"),
        test: report,
    })
}

fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> CliResult<()> {
    let json = report
        .to_json()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&dir.join(format!("{stem}.json")), json + "\n")?;
    let confusion = if stem == "metrics" {
        "confusion".to_string()
    } else {
        format!("{stem}-confusion")
    };
    write(
        &dir.join(format!("{confusion}.csv")),
        report.confusion_csv(),
    )?;
    write(
        &dir.join(format!("{confusion}.svg")),
        report.confusion_svg(),
    )
}

pub fn cmd_train(exp: &Experiment) -> CliResult<RunSummary> {
    train_run(exp, exp.config.method, exp.config.seed, &exp.out)
}

/// Re-evaluates `checkpoint.bin` from the output directory on the configured
/// split and writes `eval-<split>.json` with its confusion matrix.
pub fn cmd_evaluate(exp: &Experiment) -> CliResult<MetricsReport> {
    let path = exp.out.join("checkpoint.bin");
    let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let checkpoint =
        Checkpoint::<f64>::read(BufReader::new(file)).map_err(|e| CliError::io(&path, e))?;
    let ds = match exp.config.dataset {
        Some(_) => exp.dataset(exp.config.seed)?,
        None => {
            let local = exp.out.join("dataset.csv");
            if local.exists() {
                let file = fs::File::open(&local).map_err(|e| CliError::io(&local, e))?;
                Dataset64::read_csv(BufReader::new(file), None)
                    .map_err(|e| CliError::io(&local, e))?
            } else {
                exp.dataset(exp.config.seed)?
            }
        }
    };
    let split = exp.config.eval_split;
    let report = trainer::evaluate(&checkpoint.network, &ds, split)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_report(&exp.out, &format!("eval-{}", split.as_str()), &report)?;
    Ok(report)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub const METRIC_NAMES: [&str; 5] = ["Acc", "Pre", "Sen", "F1", "AUC"];

/// Aggregated runs of one method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: Method,
    pub seeds: Vec<u64>,
    /// `(mean, sample std)` of Acc, Pre, Sen, F1 and AUC, as fractions.
    pub metrics: [(f64, f64); 5],
    pub minority_recall: (f64, f64),
}

pub fn summarize(runs: &[RunSummary]) -> Vec<MethodRow> {
    let mut methods: Vec<Method> = runs.iter().map(|r| r.method).collect();
    methods.sort_by_key(|m| m.name());
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.method == method).collect();
            let column = |f: fn(&RunSummary) -> f64| {
                mean_std(&mine.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            MethodRow {
                method,
                seeds: mine.iter().map(|r| r.seed).collect(),
                metrics: [
                    column(|r| r.test.acc),
                    column(|r| r.test.pre),
                    column(|r| r.test.sen),
                    column(|r| r.test.f1),
                    column(|r| r.test.auc),
                ],
                minority_recall: column(RunSummary::minority_recall),
            }
        })
        .collect()
}

/// Aligned text table: one row per method, cells `mean (std)` in percent.
pub fn summary_table(rows: &[MethodRow]) -> String {
    let mut cells: Vec<Vec<String>> = vec![std::iter::once("Methods".to_string())
        .chain(METRIC_NAMES.iter().map(|s| s.to_string()))
        .collect()];
    for row in rows {
        let mut line = vec![row.method.name().to_string()];
        line.extend(
            row.metrics
                .iter()
                .map(|(m, s)| format!("{:.2} ({:.2})", 100.0 * m, 100.0 * s)),
        );
        cells.push(line);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let parts: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, &w))| {
                if j == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("-|-"));
        }
    }
    out
}

pub fn summary_csv(rows: &[MethodRow]) -> String {
    let mut out = String::from("method,runs");
    for name in METRIC_NAMES
        .iter()
        .map(|n| n.to_lowercase())
        .chain(["minority_recall".to_string()])
    {
        let _ = write!(out, ",{name}_mean,{name}_std");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{},{}", row.method.name(), row.seeds.len());
        for (m, s) in row.metrics.iter().chain([&row.minority_recall]) {
            let _ = write!(out, ",{},{}", format_f64(*m), format_f64(*s));
        }
        out.push('\n');
    }
    out
}

pub fn runs_csv(runs: &[RunSummary]) -> String {
    let mut out = String::from(
        "method,seed,best_epoch,best_val_acc,acc,pre,sen,f1,auc,minority_class,minority_recall\n",
    );
    for r in runs {
        let t = &r.test;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.seed,
            r.best_epoch,
            format_f64(r.best_val_acc),
            format_f64(t.acc),
            format_f64(t.pre),
            format_f64(t.sen),
            format_f64(t.f1),
            format_f64(t.auc),
            r.minority_class,
            format_f64(r.minority_recall()),
        );
    }
    out
}

/// Number of concurrent runs: `ECL_LAB_THREADS` if set, else the available cores.
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!(
                "`{THREADS_ENV}`: expected a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    pub rows: Vec<MethodRow>,
    pub table: String,
}

/// Trains every method on every seed into `<out>/<method>/seed-<n>/`, then
/// writes `runs.csv`, `summary.csv` and `summary.txt`. Completed runs are
/// written even when another run fails; the failure is then returned.
pub fn cmd_compare(exp: &Experiment, threads: usize) -> CliResult<Comparison> {
    let c = &exp.config;
    if c.seeds.len() < 2 {
        return Err(CliError::Config(
            "`seeds`: compare needs at least two seeds".into(),
        ));
    }
    let mut methods = if c.methods.is_empty() {
        vec![c.method]
    } else {
        c.methods.clone()
    };
    methods.sort_by_key(|m| m.name());
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| c.seeds.iter().map(move |&s| (m, s)))
        .collect();
    create_dir(&exp.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<CliResult<RunSummary>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, s)| {
                let dir = exp.out.join(m.name()).join(format!("seed-{s}"));
                train_run(exp, m, s, &dir).map_err(|e| match e {
                    CliError::Runtime(msg) => {
                        CliError::Runtime(format!("{} seed {s}: {msg}", m.name()))
                    }
                    other => other,
                })
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    write(&exp.out.join("runs.csv"), runs_csv(&runs))?;
    let rows = summarize(&runs);
    let table = summary_table(&rows);
    if let Some(e) = failure {
        write(&exp.out.join("summary.partial.txt"), &table)?;
        return Err(e);
    }
    write(&exp.out.join("summary.csv"), summary_csv(&rows))?;
    write(&exp.out.join("summary.txt"), &table)?;
    Ok(Comparison { runs, rows, table })
}

/// The gradient report as written to `gradcheck.json`.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckOutput {
    pub passed: bool,
    #[serde(flatten)]
    pub report: GradcheckReport,
}

/// Runs the finite-difference suites, writes `gradcheck.json`, and fails with
/// the worst coordinate when any error exceeds the threshold. `corrupt`
/// perturbs one analytic gradient entry per suite as a negative control.
pub fn cmd_gradcheck(exp: &Experiment, corrupt: bool) -> CliResult<GradcheckOutput> {
    let settings = GradcheckSettings {
        seed: exp.config.seed,
        corrupt,
        ..exp.config.gradcheck.clone()
    };
    let report = gradcheck::run(&settings).map_err(|e| CliError::Runtime(e.to_string()))?;
    let output = GradcheckOutput {
        passed: report.passed(),
        report,
    };
    create_dir(&exp.out)?;
    let json =
        serde_json::to_string_pretty(&output).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&exp.out.join("gradcheck.json"), json + "\n")?;
    if !output.passed {
        let (name, check) = output.report.worst();
        let worst = check
            .worst
            .as_ref()
            .expect("a failing check has a worst coordinate");
        return Err(CliError::Verification(format!(
            "{name} relative error {:e} exceeds {:e} at {} (analytic {:e}, numeric {:e})",
            check.max_rel_error,
            settings.threshold,
            worst.coordinate,
            worst.analytic,
            worst.numeric
        )));
    }
    Ok(output)
}
