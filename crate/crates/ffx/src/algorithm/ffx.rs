//! Fixed-basis pipeline: enumerate `func(x^e)` candidates, trace an
//! elastic-net path over them, pick the densest support within the term
//! budget, and debias with an ordinary least-squares refit on that support.

use nalgebra::{DMatrix, DVector};

use super::{constant_model, FitError};
use crate::basis::{filter_feasible, generate_bivariate, generate_ffx_bases};
use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::linsolve::{ols_on, ridge_top_k, select_support, DesignMatrix};
use crate::model::{BaseFunction, Model, ModelTerm};

/// Fit the fixed-basis model. With a pure ridge penalty (`l1_ratio == 0`)
/// no coefficients hit zero, so the budget falls back to keeping the
/// largest standardized coefficients.
pub fn fit_ffx(train: &Dataset, config: &FitConfig) -> Result<Model, FitError> {
    config.validate().map_err(FitError::Config)?;
    let cs = generate_ffx_bases(train, config.use_nonlinear);
    let mut bases = cs.bases;
    if config.use_bivariate {
        let top = top_by_correlation(&bases, train.x(), train.y(), 10);
        let (products, _dropped) = filter_feasible(generate_bivariate(&top), train.x());
        bases.extend(products);
    }
    if bases.is_empty() {
        return Ok(constant_model(train.y()));
    }
    let dm = DesignMatrix::from_bases(&bases, train.x(), train.y())?;
    if dm.n_cols() == 0 {
        return Ok(constant_model(train.y()));
    }
    let support = if config.l1_ratio > 0.0 {
        select_support(
            &dm,
            train.y(),
            config.l1_ratio,
            config.max_terms,
            &config.path,
        )?
    } else {
        ridge_top_k(&dm, train.y(), config.max_terms, &config.path)?
    };
    if support.is_empty() {
        return Ok(constant_model(train.y()));
    }
    let mut model = refit_on_support(&bases, &support, train.x(), train.y());
    super::prune_negligible_terms(&mut model, train.x(), train.y());
    Ok(model)
}

/// OLS refit of the selected bases; weights come from the unpenalized
/// solve, not the shrunken path coefficients.
pub(crate) fn refit_on_support(
    bases: &[BaseFunction],
    support: &[usize],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Model {
    let mut cols = DMatrix::zeros(x.nrows(), support.len());
    for (j, &idx) in support.iter().enumerate() {
        cols.set_column(j, &bases[idx].eval_column_unchecked(x));
    }
    let fit = ols_on(&cols, y);
    Model {
        intercept: fit.intercept,
        terms: support
            .iter()
            .zip(fit.coefficients.iter())
            .map(|(&idx, &weight)| ModelTerm {
                weight,
                base: bases[idx].clone(),
            })
            .collect(),
    }
}

/// The `limit` univariate bases most correlated (in absolute value) with
/// the target, used as factors for bivariate products.
fn top_by_correlation(
    bases: &[BaseFunction],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    limit: usize,
) -> Vec<BaseFunction> {
    let n = y.len() as f64;
    let y_mean = y.sum() / n;
    let y_centered = y.map(|v| v - y_mean);
    let y_norm = y_centered.norm();
    let mut scored: Vec<(f64, usize)> = bases
        .iter()
        .enumerate()
        .map(|(idx, b)| {
            let col = b.eval_column_unchecked(x);
            let mean = col.sum() / n;
            let centered = col.map(|v| v - mean);
            let denom = centered.norm() * y_norm;
            let corr = if denom > 0.0 {
                (centered.dot(&y_centered) / denom).abs()
            } else {
                0.0
            };
            (corr, idx)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(limit)
        .map(|(_, idx)| bases[idx].clone())
        .collect()
}
