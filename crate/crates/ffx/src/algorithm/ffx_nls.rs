//! Separable pipeline: (1) generate parameterized bases, (2) optimize all
//! nonlinear and linear parameters jointly by variable projection over the
//! full candidate list, (3) freeze the nonlinear parameters and select the
//! most relevant bases with a lasso, (4) optionally expand products of the
//! top univariate survivors and repeat (2)-(3) over the combined list, then
//! re-optimize the selected subset alone and return the better of two
//! passes.

use nalgebra::{DMatrix, DVector};

use super::{constant_model, FitError};
use crate::basis::{filter_feasible, generate_bivariate, generate_nls_bases};
use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::linsolve::{lasso_select, ols_on, DesignMatrix};
use crate::model::{BaseFunction, Model, ModelTerm};
use crate::varpro::{optimize, SeparableProblem, VpConfig, VpResult};

/// Iteration cap for the variable-projection passes over the full
/// candidate list; the final passes over the few selected bases run with
/// the caller's full budget.
const FULL_SET_VP_ITERS: usize = 30;

/// Diagnostic quantities recorded along the pipeline.
#[derive(Debug, Clone)]
pub struct FitTrace {
    /// Candidate count and slot count of the univariate list.
    pub n_univariate: usize,
    pub n_slots: usize,
    /// SSE after the full-candidate optimization pass(es).
    pub full_set_sse: f64,
    /// Univariate bases surviving the first selection.
    pub n_selected_univariate: usize,
    /// Products appended for the bivariate round (0 when disabled).
    pub n_bivariate_added: usize,
    /// Bases in the final model before re-optimization.
    pub n_selected_final: usize,
    /// SSE of the frozen-parameter least-squares refit on the final
    /// support; the final optimization can only match or improve it.
    pub frozen_refit_sse: f64,
    /// SSE of the returned model on the training data.
    pub final_sse: f64,
    pub converged: bool,
}

pub fn fit_ffx_nls(train: &Dataset, config: &FitConfig) -> Result<Model, FitError> {
    fit_ffx_nls_traced(train, config).map(|(model, _)| model)
}

pub fn fit_ffx_nls_traced(
    train: &Dataset,
    config: &FitConfig,
) -> Result<(Model, FitTrace), FitError> {
    config.validate().map_err(FitError::Config)?;
    let x = train.x();
    let y = train.y();

    let cs = generate_nls_bases(train, config.use_nonlinear);
    let mut bases = cs.bases;
    let mut trace = FitTrace {
        n_univariate: bases.len(),
        n_slots: cs.n_nonlinear,
        full_set_sse: f64::NAN,
        n_selected_univariate: 0,
        n_bivariate_added: 0,
        n_selected_final: 0,
        frozen_refit_sse: f64::NAN,
        final_sse: f64::NAN,
        converged: false,
    };
    if bases.is_empty() {
        let model = constant_model(y);
        return Ok((model, trace));
    }

    // steps (2) + (3) over the univariate list; an intermediate budget of
    // 10 bounds the factor pool when a bivariate round follows
    let target = if config.use_bivariate {
        config.max_terms.min(10)
    } else {
        config.max_terms
    };
    let selected = optimize_and_select(&mut bases, x, y, config, target, &mut trace)?;
    trace.n_selected_univariate = selected.len();

    let selected = if config.use_bivariate {
        let factors: Vec<BaseFunction> =
            selected.iter().map(|&i| bases[i].clone()).collect();
        let (products, _dropped) = filter_feasible(generate_bivariate(&factors), x);
        trace.n_bivariate_added = products.len();
        bases.extend(products);
        // repeat steps (2) + (3) over the combined list
        optimize_and_select(&mut bases, x, y, config, config.max_terms, &mut trace)?
    } else {
        selected
    };

    if selected.is_empty() {
        let model = constant_model(y);
        let r = y.map(|v| v - model.intercept);
        trace.frozen_refit_sse = r.dot(&r);
        trace.final_sse = trace.frozen_refit_sse;
        trace.converged = true;
        return Ok((model, trace));
    }

    let final_bases: Vec<BaseFunction> = selected.iter().map(|&i| bases[i].clone()).collect();
    trace.n_selected_final = final_bases.len();
    trace.frozen_refit_sse = refit_sse(&final_bases, x, y);

    // step (4): re-optimize the selected subset alone; parameters are not
    // independent, so run the pass twice and keep the better result
    let first = run_final_pass(final_bases, x, y, &config.vp)?;
    let second = run_final_pass(first.problem_bases.clone(), x, y, &config.vp)?;
    let (bases_best, result) = if second.result.sse <= first.result.sse {
        (second.problem_bases, second.result)
    } else {
        (first.problem_bases, first.result)
    };

    trace.final_sse = result.sse;
    trace.converged = result.converged;
    let mut model = Model {
        intercept: result.linear[0],
        terms: bases_best
            .into_iter()
            .enumerate()
            .map(|(j, base)| ModelTerm {
                weight: result.linear[j + 1],
                base,
            })
            .collect(),
    };
    super::prune_negligible_terms(&mut model, x, y);
    Ok((model, trace))
}

struct FinalPass {
    /// Bases with slot values bound at the optimized parameters.
    problem_bases: Vec<BaseFunction>,
    result: VpResult,
}

fn run_final_pass(
    bases: Vec<BaseFunction>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    vp: &VpConfig,
) -> Result<FinalPass, FitError> {
    let problem = SeparableProblem::new(bases, x, y)?;
    let result = optimize(&problem, vp)?;
    let problem_bases = problem.bound_bases(&result.k);
    Ok(FinalPass {
        problem_bases,
        result,
    })
}

/// Variable projection over the full candidate list followed by lasso
/// selection at the frozen nonlinear parameters. Rebinds the optimized
/// slot values into `bases` and returns the selected base indices.
fn optimize_and_select(
    bases: &mut Vec<BaseFunction>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &FitConfig,
    target: usize,
    trace: &mut FitTrace,
) -> Result<Vec<usize>, FitError> {
    let step2_cfg = VpConfig {
        max_iters: config.vp.max_iters.min(FULL_SET_VP_ITERS),
        trace: false,
        ..config.vp.clone()
    };
    let problem = SeparableProblem::new(bases.clone(), x, y)?;
    let result = optimize(&problem, &step2_cfg)?;
    *bases = problem.bound_bases(&result.k);
    trace.full_set_sse = result.sse;

    let dm = DesignMatrix::from_bases(bases, x, y)?;
    if dm.n_cols() == 0 {
        return Ok(Vec::new());
    }
    let mut selected = lasso_select(&dm, y, target)?;
    selected.sort_unstable();
    Ok(selected)
}

fn refit_sse(bases: &[BaseFunction], x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let mut cols = DMatrix::zeros(x.nrows(), bases.len());
    for (j, b) in bases.iter().enumerate() {
        cols.set_column(j, &b.eval_column_unchecked(x));
    }
    let fit = ols_on(&cols, y);
    let r = y - fit.predict(&cols);
    r.dot(&r)
}
