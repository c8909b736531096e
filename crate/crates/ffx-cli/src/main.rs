//! `ffx` command line: train and apply symbolic-regression models, run the
//! benchmark protocol, and generate synthetic datasets.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 fit failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ffx::{
    lookup, mse_of, r2_of, BenchmarkSpec, Dataset, FitConfig, Model, SplitSpec, VpConfig,
};

#[derive(Parser)]
#[command(
    name = "ffx",
    about = "Symbolic regression via fast function extraction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV dataset.
    Train(TrainArgs),
    /// Apply a saved model to a CSV dataset and write predictions.
    Predict(PredictArgs),
    /// Score a saved model against a CSV dataset with known targets.
    Evaluate(EvaluateArgs),
    /// Run the benchmark protocol described by a JSON spec.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic dataset from a named generator.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Name of the target column.
    #[arg(long)]
    target: String,
    /// Algorithm name: `ffx` or `ffx-nls`.
    #[arg(long, default_value = "ffx-nls")]
    algorithm: String,
    /// Maximum number of base functions in the final model.
    #[arg(long, default_value_t = 10)]
    max_bases: usize,
    /// Include bivariate product bases.
    #[arg(long)]
    bivariate: bool,
    /// Include log/exp/sqrt (and abs for `ffx`) bases.
    #[arg(long)]
    nonlinear: bool,
    /// Elastic-net mixing ratio (`ffx` only; `ffx-nls` always selects with
    /// a pure lasso).
    #[arg(long, default_value_t = 0.5)]
    l1_ratio: f64,
    /// Hold out this fraction of rows before fitting (0 trains on all
    /// rows).
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the fitted model document.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Print solver iteration traces to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output CSV (single `prediction` column); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Name of a target column to drop from the input, if present.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: String,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Benchmark spec JSON (see the repository README for the schema).
    #[arg(long)]
    spec: PathBuf,
    /// Directory for repetitions.csv, summary.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator name, e.g. `log-exp-2d`.
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 500)]
    rows: usize,
    /// Gaussian noise standard deviation added to the target.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; a sidecar `<out>.meta.json` records the formula.
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Data(String),
    Fit(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Fit(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Fit(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code conventions differ; normalize usage
            // problems to 1 and let --help/--version exit 0
            if e.use_stderr() {
                let _ = e.print();
                return ExitCode::from(1);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Predict(args) => predict(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Benchmark(args) => benchmark(args),
        Command::Synth(args) => synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_dataset(path: &PathBuf, target: &str) -> Result<Dataset, CliError> {
    Dataset::load_csv(path, target).map_err(|e| CliError::Data(e.to_string()))
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let algorithm = lookup(&args.algorithm).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown algorithm '{}'; available: {}",
            args.algorithm,
            ffx::algorithm_names().join(", ")
        ))
    })?;
    let data = load_dataset(&args.input, &args.target)?;
    let (train, holdout) = if args.holdout > 0.0 {
        let (tr, te) = data
            .shuffle_split(&SplitSpec {
                train_fraction: 1.0 - args.holdout,
                seed: args.seed,
            })
            .map_err(|e| CliError::Data(e.to_string()))?;
        (tr, Some(te))
    } else {
        (data, None)
    };
    let config = FitConfig {
        max_terms: args.max_bases,
        use_bivariate: args.bivariate,
        use_nonlinear: args.nonlinear,
        l1_ratio: args.l1_ratio,
        vp: VpConfig {
            trace: args.verbose,
            ..Default::default()
        },
        seed: args.seed,
        ..Default::default()
    };
    let model = algorithm
        .fit(&train, &config)
        .map_err(|e| CliError::Fit(e.to_string()))?;
    let pred = model
        .evaluate(train.x())
        .map_err(|e| CliError::Fit(e.to_string()))?;
    println!("model: {}", model.to_text());
    println!("terms: {}", model.n_terms());
    println!("complexity: {}", model.complexity());
    println!("train_mse: {}", mse_of(train.y(), &pred));
    println!("train_r2: {}", r2_of(train.y(), &pred));
    if let Some(test) = holdout {
        let test_pred = model
            .evaluate(test.x())
            .map_err(|e| CliError::Fit(e.to_string()))?;
        println!("holdout_mse: {}", mse_of(test.y(), &test_pred));
        println!("holdout_r2: {}", r2_of(test.y(), &test_pred));
    }
    let doc = model.to_json().map_err(|e| CliError::Fit(e.to_string()))?;
    std::fs::write(&args.out, doc).map_err(|e| CliError::Data(e.to_string()))?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn read_model(path: &PathBuf) -> Result<Model, CliError> {
    let doc = std::fs::read_to_string(path).map_err(|e| CliError::Data(e.to_string()))?;
    Model::from_json(&doc).map_err(|e| CliError::Data(e.to_string()))
}

/// Load a prediction input: with a target name we reuse the dataset
/// loader, otherwise every column is a feature.
fn load_features(path: &PathBuf, target: Option<&str>) -> Result<nalgebra::DMatrix<f64>, CliError> {
    match target {
        Some(t) => Ok(load_dataset(path, t)?.x().clone()),
        None => {
            let content =
                std::fs::read_to_string(path).map_err(|e| CliError::Data(e.to_string()))?;
            let header = content
                .lines()
                .next()
                .ok_or_else(|| CliError::Data("empty input file".into()))?;
            // loading through the dataset parser keeps the validation in
            // one place: borrow the last column as a dummy target and put
            // it back afterwards
            let last = header
                .split(',')
                .next_back()
                .ok_or_else(|| CliError::Data("empty header".into()))?
                .trim()
                .to_string();
            let d = load_dataset(path, &last)?;
            let n = d.n_rows();
            let mut x = nalgebra::DMatrix::zeros(n, d.n_features() + 1);
            x.view_mut((0, 0), (n, d.n_features())).copy_from(d.x());
            x.set_column(d.n_features(), d.y());
            Ok(x)
        }
    }
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    let model = read_model(&args.model)?;
    let x = load_features(&args.input, args.target.as_deref())?;
    let pred = model
        .evaluate(&x)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(
            std::fs::File::create(path).map_err(|e| CliError::Data(e.to_string()))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    writeln!(out, "prediction").map_err(|e| CliError::Data(e.to_string()))?;
    for v in pred.iter() {
        writeln!(out, "{v}").map_err(|e| CliError::Data(e.to_string()))?;
    }
    if let Some(path) = &args.out {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let model = read_model(&args.model)?;
    let data = load_dataset(&args.input, &args.target)?;
    let pred = model
        .evaluate(data.x())
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!("mse: {}", mse_of(data.y(), &pred));
    println!("r2: {}", r2_of(data.y(), &pred));
    println!("complexity: {}", model.complexity());
    println!("terms: {}", model.n_terms());
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(&args.spec).map_err(|e| CliError::Data(e.to_string()))?;
    let spec: BenchmarkSpec =
        serde_json::from_str(&raw).map_err(|e| CliError::Data(format!("spec: {e}")))?;
    let report = ffx::run_benchmark(&spec).map_err(|e| match e {
        ffx::BenchmarkError::UnknownAlgorithm(_) | ffx::BenchmarkError::InvalidSpec(_) => {
            CliError::Usage(e.to_string())
        }
        ffx::BenchmarkError::Fit(inner) => CliError::Fit(inner.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    ffx::write_report(&report, &args.out).map_err(|e| CliError::Data(e.to_string()))?;
    for s in &report.summaries {
        println!(
            "{} {} median_test_mse={} rank={}",
            s.problem, s.algorithm, s.median_test_mse, s.rank
        );
    }
    for f in &report.failures {
        eprintln!("failure: {} {:?}: {}", f.problem, f.algorithm, f.message);
    }
    eprintln!("wrote report to {}", args.out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), CliError> {
    let s = ffx::synth_generate(&args.name, args.rows, args.noise, args.seed).map_err(|e| {
        match e {
            ffx::SynthError::UnknownGenerator { .. } => CliError::Usage(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    })?;
    let file = std::fs::File::create(&args.out).map_err(|e| CliError::Data(e.to_string()))?;
    s.data
        .write_csv(file, "y")
        .map_err(|e| CliError::Data(e.to_string()))?;
    let meta = serde_json::json!({
        "generator": s.name,
        "formula": s.formula,
        "rows": args.rows,
        "noise_sd": s.noise_sd,
        "seed": s.seed,
        "target": "y",
    });
    let meta_path = format!("{}.meta.json", args.out.display());
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| CliError::Data(e.to_string()))?;
    eprintln!("wrote {} and {}", args.out.display(), meta_path);
    Ok(())
}
