//! Benchmark protocol: repeated shuffled splits, grid search with k-fold
//! cross validation on the training side, a final fit per repetition, and
//! median/rank reporting across algorithms.
//!
//! Determinism contract: for a fixed master seed the recorded metrics are
//! bit-identical across runs, so `repetitions.csv` and `summary.csv`
//! contain no timing and reproduce byte for byte. Wall-clock fit times are
//! inherently run-dependent and are reported separately in `summary.json`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{lookup, FitError, Regressor};
use crate::config::{FitConfig, BENCHMARK_L1_RATIOS, BENCHMARK_MAX_TERMS};
use crate::dataset::{Dataset, DatasetError, SplitSpec};
use crate::model::Model;
use crate::synth::{synth_generate, SynthError};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("unknown algorithm '{0}'")]
    UnknownAlgorithm(String),
    #[error("benchmark spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One benchmark problem: a CSV on disk or a named synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Csv {
        path: String,
        target: String,
        #[serde(default)]
        name: Option<String>,
    },
    Synth {
        generator: String,
        rows: usize,
        #[serde(default)]
        noise_sd: f64,
        #[serde(default)]
        name: Option<String>,
    },
}

impl ProblemSpec {
    pub fn display_name(&self) -> String {
        match self {
            ProblemSpec::Csv { path, name, .. } => name.clone().unwrap_or_else(|| path.clone()),
            ProblemSpec::Synth {
                generator, name, ..
            } => name.clone().unwrap_or_else(|| generator.clone()),
        }
    }
}

/// Hyperparameter grid, expanded in declaration order (term budget
/// outermost, mixing ratio innermost). The mixing-ratio axis only applies
/// to the elastic-net algorithm; the separable algorithm collapses it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigGrid {
    #[serde(default = "default_max_terms_grid")]
    pub max_terms: Vec<usize>,
    #[serde(default = "default_bool_grid")]
    pub use_bivariate: Vec<bool>,
    #[serde(default = "default_bool_grid")]
    pub use_nonlinear: Vec<bool>,
    #[serde(default = "default_l1_grid")]
    pub l1_ratio: Vec<f64>,
}

fn default_max_terms_grid() -> Vec<usize> {
    BENCHMARK_MAX_TERMS.to_vec()
}

fn default_bool_grid() -> Vec<bool> {
    vec![false, true]
}

fn default_l1_grid() -> Vec<f64> {
    BENCHMARK_L1_RATIOS.to_vec()
}

impl Default for ConfigGrid {
    fn default() -> Self {
        ConfigGrid {
            max_terms: default_max_terms_grid(),
            use_bivariate: default_bool_grid(),
            use_nonlinear: default_bool_grid(),
            l1_ratio: default_l1_grid(),
        }
    }
}

impl ConfigGrid {
    /// Concrete configs in deterministic order. `with_l1` expands the
    /// mixing-ratio axis; otherwise a single lasso value is used.
    pub fn expand(&self, with_l1: bool) -> Vec<FitConfig> {
        let l1s: &[f64] = if with_l1 { &self.l1_ratio } else { &[1.0] };
        let mut out = Vec::new();
        for &max_terms in &self.max_terms {
            for &use_bivariate in &self.use_bivariate {
                for &use_nonlinear in &self.use_nonlinear {
                    for &l1_ratio in l1s {
                        out.push(FitConfig {
                            max_terms,
                            use_bivariate,
                            use_nonlinear,
                            l1_ratio,
                            ..Default::default()
                        });
                    }
                }
            }
        }
        out
    }
}

/// Full benchmark request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub problems: Vec<ProblemSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<String>,
    /// Per-algorithm grid overrides; algorithms not listed use the default
    /// grid.
    #[serde(default)]
    pub grids: BTreeMap<String, ConfigGrid>,
    #[serde(default)]
    pub seed: u64,
}

fn default_repetitions() -> usize {
    10
}

fn default_train_fraction() -> f64 {
    0.75
}

fn default_cv_folds() -> usize {
    5
}

fn default_algorithms() -> Vec<String> {
    vec!["ffx".into(), "ffx-nls".into()]
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.problems.is_empty() {
            return Err(BenchmarkError::InvalidSpec("no problems given".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchmarkError::InvalidSpec(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.algorithms.is_empty() {
            return Err(BenchmarkError::InvalidSpec("no algorithms given".into()));
        }
        for name in &self.algorithms {
            if lookup(name).is_none() {
                return Err(BenchmarkError::UnknownAlgorithm(name.clone()));
            }
        }
        Ok(())
    }

    fn grid_for(&self, algorithm: &str) -> ConfigGrid {
        self.grids.get(algorithm).cloned().unwrap_or_default()
    }
}

/// Stable seed derivation: FNV-1a over the label mixed with SplitMix64, so
/// reports reproduce across platforms and releases.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean squared error; any non-finite prediction scores as infinite.
pub fn mse_of(y: &nalgebra::DVector<f64>, pred: &nalgebra::DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        let d = y[i] - pred[i];
        if !d.is_finite() {
            return f64::INFINITY;
        }
        acc += d * d;
    }
    acc / y.len() as f64
}

/// Coefficient of determination; 0 when the target has no variance and the
/// predictions miss it.
pub fn r2_of(y: &nalgebra::DVector<f64>, pred: &nalgebra::DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sse: f64 = y
        .iter()
        .zip(pred.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if sst <= 0.0 {
        return if sse == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - sse / sst
}

/// Cross-validated grid search: every config is scored by its mean
/// validation MSE over the folds (a config that fails on any fold scores
/// infinity), and ties break toward the smaller term budget, then grid
/// order.
pub fn grid_search(
    train: &Dataset,
    algorithm: &dyn Regressor,
    grid: &ConfigGrid,
    cv_folds: usize,
    seed: u64,
) -> Result<FitConfig, BenchmarkError> {
    let configs = algorithm.expand_grid(grid);
    if configs.is_empty() {
        return Err(BenchmarkError::InvalidSpec("empty hyperparameter grid".into()));
    }
    let folds = train.make_folds(cv_folds, seed)?;
    let fold_data: Vec<(Dataset, Dataset)> = (0..cv_folds)
        .map(|f| {
            (
                train.select_rows(&folds.training_rows(f)),
                train.select_rows(&folds.validation_rows(f)),
            )
        })
        .collect();

    let scores: Vec<f64> = configs
        .par_iter()
        .map(|config| {
            let mut total = 0.0;
            for (cv_train, cv_val) in &fold_data {
                let score = match algorithm.fit(cv_train, config) {
                    Ok(model) => match model.evaluate(cv_val.x()) {
                        Ok(pred) => mse_of(cv_val.y(), &pred),
                        Err(_) => f64::INFINITY,
                    },
                    Err(_) => f64::INFINITY,
                };
                total += score;
                if total.is_infinite() {
                    return f64::INFINITY;
                }
            }
            total / cv_folds as f64
        })
        .collect();

    let mut best = 0usize;
    for i in 1..configs.len() {
        let better = scores[i] < scores[best]
            || (scores[i] == scores[best] && configs[i].max_terms < configs[best].max_terms);
        if better {
            best = i;
        }
    }
    Ok(configs[best].clone())
}

/// Metrics of one repetition. `fit_ms` is excluded from the deterministic
/// CSV outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RepetitionRecord {
    pub problem: String,
    pub algorithm: String,
    pub repetition: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub complexity: usize,
    pub n_terms: usize,
    pub max_terms: usize,
    pub fit_ms: f64,
}

/// Per (problem, algorithm) aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRecord {
    pub problem: String,
    pub algorithm: String,
    pub median_train_mse: f64,
    pub median_test_mse: f64,
    pub median_complexity: f64,
    pub median_n_terms: f64,
    pub median_fit_ms: f64,
    /// Rank among the algorithms on this problem by median test MSE; ties
    /// share the average rank.
    pub rank: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureRecord {
    pub problem: String,
    pub algorithm: Option<String>,
    pub repetition: Option<usize>,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<RepetitionRecord>,
    pub summaries: Vec<SummaryRecord>,
    pub failures: Vec<FailureRecord>,
}

fn load_problem(spec: &ProblemSpec, master_seed: u64) -> Result<Dataset, BenchmarkError> {
    match spec {
        ProblemSpec::Csv { path, target, .. } => Ok(Dataset::load_csv(path, target)?),
        ProblemSpec::Synth {
            generator,
            rows,
            noise_sd,
            ..
        } => {
            let seed = derive_seed(master_seed, &format!("{generator}/data"), 0);
            Ok(synth_generate(generator, *rows, *noise_sd, seed)?.data)
        }
    }
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Average ranks (1-based) of `values` ascending; ties share the mean of
/// the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Execute the full protocol. Problems that fail to load are recorded and
/// skipped; a failing (algorithm, repetition) is recorded and leaves no
/// row.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport, BenchmarkError> {
    spec.validate()?;
    let mut rows: Vec<RepetitionRecord> = Vec::new();
    let mut failures: Vec<FailureRecord> = Vec::new();

    for problem in &spec.problems {
        let problem_name = problem.display_name();
        let data = match load_problem(problem, spec.seed) {
            Ok(d) => d,
            Err(e) => {
                failures.push(FailureRecord {
                    problem: problem_name,
                    algorithm: None,
                    repetition: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        for algo_name in &spec.algorithms {
            let algorithm = lookup(algo_name).expect("validated");
            let grid = spec.grid_for(algo_name);
            // repetitions are independent given their derived seeds
            let results: Vec<Result<RepetitionRecord, FailureRecord>> = (0..spec.repetitions)
                .into_par_iter()
                .map(|rep| {
                    run_repetition(
                        &data,
                        &problem_name,
                        algorithm,
                        &grid,
                        spec,
                        rep,
                    )
                    .map_err(|e| FailureRecord {
                        problem: problem_name.clone(),
                        algorithm: Some(algo_name.clone()),
                        repetition: Some(rep),
                        message: e.to_string(),
                    })
                })
                .collect();
            for r in results {
                match r {
                    Ok(row) => rows.push(row),
                    Err(f) => failures.push(f),
                }
            }
        }
    }

    // keyed aggregation so collection order cannot matter
    rows.sort_by(|a, b| {
        (&a.problem, &a.algorithm, a.repetition).cmp(&(&b.problem, &b.algorithm, b.repetition))
    });

    let mut summaries: Vec<SummaryRecord> = Vec::new();
    let problem_names: Vec<String> = spec.problems.iter().map(|p| p.display_name()).collect();
    for problem in &problem_names {
        let mut per_algo: Vec<SummaryRecord> = Vec::new();
        for algo in &spec.algorithms {
            let recs: Vec<&RepetitionRecord> = rows
                .iter()
                .filter(|r| &r.problem == problem && &r.algorithm == algo)
                .collect();
            if recs.is_empty() {
                continue;
            }
            let med = |f: &dyn Fn(&RepetitionRecord) -> f64| {
                median(&mut recs.iter().map(|r| f(r)).collect())
            };
            per_algo.push(SummaryRecord {
                problem: problem.clone(),
                algorithm: algo.clone(),
                median_train_mse: med(&|r| r.train_mse),
                median_test_mse: med(&|r| r.test_mse),
                median_complexity: med(&|r| r.complexity as f64),
                median_n_terms: med(&|r| r.n_terms as f64),
                median_fit_ms: med(&|r| r.fit_ms),
                rank: 0.0,
            });
        }
        let ranks = average_ranks(
            &per_algo
                .iter()
                .map(|s| s.median_test_mse)
                .collect::<Vec<_>>(),
        );
        for (s, rank) in per_algo.iter_mut().zip(ranks) {
            s.rank = rank;
        }
        summaries.extend(per_algo);
    }

    Ok(BenchmarkReport {
        rows,
        summaries,
        failures,
    })
}

fn run_repetition(
    data: &Dataset,
    problem_name: &str,
    algorithm: &dyn Regressor,
    grid: &ConfigGrid,
    spec: &BenchmarkSpec,
    rep: usize,
) -> Result<RepetitionRecord, BenchmarkError> {
    let rep_seed = derive_seed(spec.seed, problem_name, rep as u64);
    let (train, test) = data.shuffle_split(&SplitSpec {
        train_fraction: spec.train_fraction,
        seed: rep_seed,
    })?;
    let best = grid_search(&train, algorithm, grid, spec.cv_folds, rep_seed)?;
    let started = Instant::now();
    let model: Model = algorithm.fit(&train, &best)?;
    let fit_ms = started.elapsed().as_secs_f64() * 1e3;
    let train_pred = model.evaluate(train.x())?;
    let test_pred = model.evaluate(test.x())?;
    Ok(RepetitionRecord {
        problem: problem_name.to_string(),
        algorithm: algorithm.name().to_string(),
        repetition: rep,
        train_mse: mse_of(train.y(), &train_pred),
        test_mse: mse_of(test.y(), &test_pred),
        complexity: model.complexity(),
        n_terms: model.n_terms(),
        max_terms: best.max_terms,
        fit_ms,
    })
}

/// Write `repetitions.csv`, `summary.csv` (both timing-free and
/// byte-reproducible under a fixed seed) and `summary.json` (everything,
/// including wall-clock fit times and failures).
pub fn write_report(report: &BenchmarkReport, dir: impl AsRef<Path>) -> std::io::Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let mut reps = std::fs::File::create(dir.join("repetitions.csv"))?;
    writeln!(
        reps,
        "problem,algorithm,repetition,train_mse,test_mse,complexity,n_terms,max_terms"
    )?;
    for r in &report.rows {
        writeln!(
            reps,
            "{},{},{},{},{},{},{},{}",
            r.problem,
            r.algorithm,
            r.repetition,
            r.train_mse,
            r.test_mse,
            r.complexity,
            r.n_terms,
            r.max_terms
        )?;
    }

    let mut summary = std::fs::File::create(dir.join("summary.csv"))?;
    writeln!(
        summary,
        "problem,algorithm,median_train_mse,median_test_mse,median_complexity,median_n_terms,rank"
    )?;
    for s in &report.summaries {
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            s.problem,
            s.algorithm,
            s.median_train_mse,
            s.median_test_mse,
            s.median_complexity,
            s.median_n_terms,
            s.rank
        )?;
    }

    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}
