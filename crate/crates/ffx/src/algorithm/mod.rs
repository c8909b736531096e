//! The two regression algorithms behind a common trait, registered by name
//! and selected at runtime from the CLI or a benchmark specification.

mod ffx;
mod ffx_nls;

pub use ffx::fit_ffx;
pub use ffx_nls::{fit_ffx_nls, fit_ffx_nls_traced, FitTrace};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::config::FitConfig;
use crate::dataset::{Dataset, DatasetError};
use crate::linsolve::LinsolveError;
use crate::model::{Model, ModelError};
use crate::varpro::VarproError;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
    #[error(transparent)]
    Varpro(#[from] VarproError),
}

/// A named regression strategy over tabular data.
pub trait Regressor: Send + Sync {
    /// Registry key, also used in CLI flags and benchmark specs.
    fn name(&self) -> &'static str;

    fn fit(&self, train: &Dataset, config: &FitConfig) -> Result<Model, FitError>;

    /// Expand a hyperparameter grid into concrete configs, in the
    /// deterministic order used for tie-breaking. Dimensions an algorithm
    /// does not use collapse to a single value.
    fn expand_grid(&self, grid: &crate::benchmark::ConfigGrid) -> Vec<FitConfig>;
}

/// Fixed-basis algorithm: elastic-net over `func(x^e)` candidates.
pub struct FfxRegressor;

/// Separable algorithm: nonlinear parameters in the base-function
/// arguments, optimized by variable projection, with lasso selection.
pub struct FfxNlsRegressor;

impl Regressor for FfxRegressor {
    fn name(&self) -> &'static str {
        "ffx"
    }

    fn fit(&self, train: &Dataset, config: &FitConfig) -> Result<Model, FitError> {
        fit_ffx(train, config)
    }

    fn expand_grid(&self, grid: &crate::benchmark::ConfigGrid) -> Vec<FitConfig> {
        grid.expand(true)
    }
}

impl Regressor for FfxNlsRegressor {
    fn name(&self) -> &'static str {
        "ffx-nls"
    }

    fn fit(&self, train: &Dataset, config: &FitConfig) -> Result<Model, FitError> {
        fit_ffx_nls(train, config)
    }

    fn expand_grid(&self, grid: &crate::benchmark::ConfigGrid) -> Vec<FitConfig> {
        grid.expand(false)
    }
}

/// All registered algorithms.
pub static ALGORITHMS: &[&dyn Regressor] = &[&FfxRegressor, &FfxNlsRegressor];

/// Look up an algorithm by name. Underscores are accepted in place of
/// hyphens.
pub fn lookup(name: &str) -> Option<&'static dyn Regressor> {
    let normalized = name.replace('_', "-");
    ALGORITHMS
        .iter()
        .copied()
        .find(|a| a.name() == normalized)
}

pub fn algorithm_names() -> Vec<&'static str> {
    ALGORITHMS.iter().map(|a| a.name()).collect()
}

/// Predictions of a fitted model on a feature matrix; delegates to
/// [`Model::evaluate`].
pub fn predict(model: &Model, x: &DMatrix<f64>) -> Result<nalgebra::DVector<f64>, ModelError> {
    model.evaluate(x)
}

pub(crate) fn constant_model(y: &nalgebra::DVector<f64>) -> Model {
    Model::constant(y.sum() / y.len() as f64)
}

/// Relative contribution below which a refit term is numerically zero.
const NEGLIGIBLE_CONTRIBUTION: f64 = 1e-9;

/// Drop terms whose contribution `|w| * std(column)` is negligible against
/// the target spread; unpenalized refits put exact zeros (up to rounding)
/// on columns the data does not need, and those would otherwise inflate
/// the term count and complexity. When anything is dropped, the intercept
/// and remaining weights are re-solved so constant contributions of pruned
/// terms fold back into the intercept.
pub(crate) fn prune_negligible_terms(
    model: &mut Model,
    x: &DMatrix<f64>,
    y: &nalgebra::DVector<f64>,
) {
    let n = y.len() as f64;
    let y_mean = y.sum() / n;
    let y_std = (y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n).sqrt();
    let floor = NEGLIGIBLE_CONTRIBUTION * y_std;
    let before = model.terms.len();
    model.terms.retain(|t| {
        let col = t.base.eval_column_unchecked(x);
        let mean = col.sum() / n;
        let std = crate::linsolve::scaled_std(col.iter().copied(), mean, y.len());
        t.weight.abs() * std > floor
    });
    if model.terms.len() == before {
        return;
    }
    let mut cols = DMatrix::zeros(x.nrows(), model.terms.len());
    for (j, t) in model.terms.iter().enumerate() {
        cols.set_column(j, &t.base.eval_column_unchecked(x));
    }
    let fit = crate::linsolve::ols_on(&cols, y);
    model.intercept = fit.intercept;
    for (j, t) in model.terms.iter_mut().enumerate() {
        t.weight = fit.coefficients[j];
    }
}
