//! Symbolic regression by fast function extraction.
//!
//! Two registered algorithms share a pipeline skeleton of candidate
//! base-function generation, sparse selection, and a final fit:
//!
//! * `ffx` — fixed bases `func(x^e)` with `e in {0.5, 1, 2}`, weights from
//!   an elastic-net path with an ordinary least-squares refit on the
//!   selected support.
//! * `ffx-nls` — bases `func(a*x^p + b)` carrying free nonlinear
//!   parameters, optimized by separable nonlinear least squares (variable
//!   projection with a damped Gauss-Newton outer loop), with lasso-based
//!   base selection at frozen nonlinear parameters and an optional
//!   bivariate product round.
//!
//! The [`benchmark`] module implements the evaluation protocol used to
//! compare them: repeated shuffled 75/25 splits, per-split grid search with
//! 5-fold cross validation, and median-error ranking across problems.
//!
//! ```
//! use ffx::{synth_generate, lookup, FitConfig};
//!
//! let data = synth_generate("log-1d", 120, 0.0, 7).unwrap().data;
//! let algorithm = lookup("ffx-nls").unwrap();
//! let model = algorithm
//!     .fit(&data, &FitConfig { max_terms: 3, ..Default::default() })
//!     .unwrap();
//! assert!(model.n_terms() <= 3);
//! println!("{}", model.to_text());
//! ```

pub mod algorithm;
pub mod basis;
pub mod benchmark;
pub mod config;
pub mod dataset;
pub mod linsolve;
pub mod model;
pub mod synth;
pub mod varpro;

pub use algorithm::{
    algorithm_names, fit_ffx, fit_ffx_nls, fit_ffx_nls_traced, lookup, predict, FfxNlsRegressor,
    FfxRegressor, FitError, FitTrace, Regressor, ALGORITHMS,
};
pub use basis::{
    filter_feasible, generate_bivariate, generate_ffx_bases, generate_nls_bases, CandidateSet,
};
pub use benchmark::{
    derive_seed, grid_search, mse_of, r2_of, run_benchmark, write_report, BenchmarkError,
    BenchmarkReport, BenchmarkSpec, ConfigGrid, ProblemSpec,
};
pub use config::FitConfig;
pub use dataset::{Dataset, DatasetError, FoldAssignment, SplitSpec};
pub use linsolve::{
    elastic_net_path, lasso_select, ols, ols_on, select_support, DesignMatrix, LinsolveError,
    OlsFit, PathResult, PathSettings,
};
pub use model::{BaseFunction, FuncKind, Model, ModelError, ModelTerm, NlParam, SlotRole};
pub use synth::{generator_formula, generator_names, synth_generate, SynthDataset, SynthError};
pub use varpro::{
    jacobian, optimize, project, Projection, SeparableProblem, VarproError, VpConfig, VpResult,
};
