//! Dense least squares and penalized linear regression over
//! basis-evaluation matrices.
//!
//! Ordinary least squares goes through a singular value decomposition of
//! the column-centered design, which reveals rank and returns the
//! minimum-norm solution on deficient systems. The elastic-net path is
//! plain cyclic coordinate descent on z-scored columns with warm starts
//! along a log-spaced lambda grid.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::BaseFunction;
use crate::ModelError;

/// Columns with standard deviation below this are dropped before any
/// regression.
pub const NEAR_CONSTANT_STD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinsolveError {
    #[error("max_terms must be at least 1")]
    InvalidMaxTerms,
    #[error("l1_ratio {0} outside [0, 1]")]
    InvalidL1Ratio(f64),
}

/// Non-fatal events reported alongside a path fit.
#[derive(Debug, Clone, PartialEq)]
pub enum PathWarning {
    /// Coordinate descent hit its sweep cap at this lambda.
    NoConvergence { lambda: f64 },
}

/// Solver settings for the elastic-net path.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PathSettings {
    pub n_lambdas: usize,
    /// Smallest lambda as a fraction of lambda_max.
    pub lambda_min_ratio: f64,
    /// Convergence threshold on the largest coefficient update per sweep,
    /// in standardized scale.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PathSettings {
    fn default() -> Self {
        PathSettings {
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

/// Population standard deviation scaled by the largest deviation so the
/// sum of squares cannot overflow for very wide columns (exp bases reach
/// 1e170 and beyond while staying finite).
pub(crate) fn scaled_std(
    values: impl Iterator<Item = f64> + Clone,
    mean: f64,
    n: usize,
) -> f64 {
    let max_dev = values
        .clone()
        .fold(0.0f64, |acc, v| acc.max((v - mean).abs()));
    if max_dev == 0.0 {
        return 0.0;
    }
    let sum_sq: f64 = values
        .map(|v| {
            let d = (v - mean) / max_dev;
            d * d
        })
        .sum();
    max_dev * (sum_sq / n as f64).sqrt()
}

/// Basis-evaluation matrix with per-column standardization statistics.
/// Near-constant columns are dropped on construction; `retained` maps the
/// kept columns back to the caller's original column indices.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    cols: DMatrix<f64>,
    col_means: DVector<f64>,
    col_stds: DVector<f64>,
    y_mean: f64,
    retained: Vec<usize>,
    n_dropped: usize,
}

impl DesignMatrix {
    pub fn new(raw: DMatrix<f64>, y: &DVector<f64>) -> Self {
        let n = raw.nrows();
        assert_eq!(n, y.len(), "design rows must match target length");
        let mut retained = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for j in 0..raw.ncols() {
            let col = raw.column(j);
            let mean = col.sum() / n as f64;
            let std = scaled_std(col.iter().copied(), mean, n);
            if std >= NEAR_CONSTANT_STD && std.is_finite() {
                retained.push(j);
                means.push(mean);
                stds.push(std);
            }
        }
        let cols = DMatrix::from_fn(n, retained.len(), |i, j| raw[(i, retained[j])]);
        let n_dropped = raw.ncols() - retained.len();
        DesignMatrix {
            cols,
            col_means: DVector::from_vec(means),
            col_stds: DVector::from_vec(stds),
            y_mean: y.sum() / n as f64,
            retained,
            n_dropped,
        }
    }

    /// Evaluate `bases` on `x` columnwise and build the design.
    pub fn from_bases(
        bases: &[BaseFunction],
        x: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<Self, ModelError> {
        let mut raw = DMatrix::zeros(x.nrows(), bases.len());
        for (j, b) in bases.iter().enumerate() {
            raw.set_column(j, &b.eval_column(x)?);
        }
        Ok(Self::new(raw, y))
    }

    pub fn n_rows(&self) -> usize {
        self.cols.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.ncols()
    }

    pub fn n_dropped(&self) -> usize {
        self.n_dropped
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn col_means(&self) -> &DVector<f64> {
        &self.col_means
    }

    pub fn col_stds(&self) -> &DVector<f64> {
        &self.col_stds
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.cols
    }

    /// Original (pre-drop) index of retained column `position`.
    pub fn original_index(&self, position: usize) -> usize {
        self.retained[position]
    }

    pub fn to_original(&self, positions: &[usize]) -> Vec<usize> {
        positions.iter().map(|&p| self.retained[p]).collect()
    }

    /// Original-scale submatrix of the given retained-column positions.
    pub fn submatrix(&self, positions: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), positions.len(), |i, j| {
            self.cols[(i, positions[j])]
        })
    }

    /// Z-scored copy of the retained columns.
    pub fn standardized(&self) -> DMatrix<f64> {
        let mut z = self.cols.clone();
        for j in 0..z.ncols() {
            let mean = self.col_means[j];
            let std = self.col_stds[j];
            for i in 0..z.nrows() {
                z[(i, j)] = (z[(i, j)] - mean) / std;
            }
        }
        z
    }
}

/// Least-squares fit with intercept.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    /// Numerical rank of the centered design.
    pub rank: usize,
}

impl OlsFit {
    pub fn predict(&self, cols: &DMatrix<f64>) -> DVector<f64> {
        cols * &self.coefficients + DVector::from_element(cols.nrows(), self.intercept)
    }
}

/// Minimum-norm least squares on the retained columns of `d`.
pub fn ols(d: &DesignMatrix, y: &DVector<f64>) -> OlsFit {
    ols_on(&d.cols, y)
}

/// Minimum-norm least squares of `y` on `cols` plus an intercept. The
/// intercept is handled by centering, so the reported rank is that of the
/// centered columns.
pub fn ols_on(cols: &DMatrix<f64>, y: &DVector<f64>) -> OlsFit {
    let n = cols.nrows();
    let m = cols.ncols();
    let y_mean = y.sum() / n as f64;
    if m == 0 {
        return OlsFit {
            intercept: y_mean,
            coefficients: DVector::zeros(0),
            rank: 0,
        };
    }
    let col_means = DVector::from_fn(m, |j, _| cols.column(j).sum() / n as f64);
    let mut xc = cols.clone();
    for j in 0..m {
        xc.column_mut(j).add_scalar_mut(-col_means[j]);
    }
    let yc = y.map(|v| v - y_mean);
    let svd = xc.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = sigma_max * (n.max(m) as f64) * f64::EPSILON;
    let rank = svd.rank(eps);
    let beta = svd.solve(&yc, eps).expect("svd computed with u and v");
    let intercept = y_mean - beta.dot(&col_means);
    OlsFit {
        intercept,
        coefficients: beta,
        rank,
    }
}

/// Elastic-net solutions along a descending lambda grid. Coefficients and
/// intercepts are reported in the original column scale.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub coefs: Vec<DVector<f64>>,
    pub intercepts: Vec<f64>,
    pub nnz: Vec<usize>,
    pub warnings: Vec<PathWarning>,
    /// Standardized-scale coefficients kept for support refinement and
    /// magnitude ranking.
    std_coefs: Vec<DVector<f64>>,
}

impl PathResult {
    pub fn std_coefs(&self) -> &[DVector<f64>] {
        &self.std_coefs
    }
}

/// Shared state for coordinate descent at any lambda: the problem in
/// covariance form (Gram matrix `G = Z^T Z / n` and correlations
/// `b = Z^T yc / n`), so one coordinate update costs O(m) independent of
/// the row count.
struct CdWorkspace {
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    /// ||yc||^2 / n, for the objective.
    y_sq: f64,
}

/// Coordinate-descent state: coefficients and the maintained product
/// `q = G beta`.
struct CdState {
    beta: DVector<f64>,
    q: DVector<f64>,
}

impl CdState {
    fn zeros(m: usize) -> Self {
        CdState {
            beta: DVector::zeros(m),
            q: DVector::zeros(m),
        }
    }
}

impl CdWorkspace {
    fn new(d: &DesignMatrix, y: &DVector<f64>) -> Self {
        let z = d.standardized();
        let n = z.nrows() as f64;
        let yc = y.map(|v| v - d.y_mean);
        let gram = z.tr_mul(&z) / n;
        let corr = z.tr_mul(&yc) / n;
        let y_sq = yc.dot(&yc) / n;
        CdWorkspace { gram, corr, y_sq }
    }

    fn state_for(&self, beta: DVector<f64>) -> CdState {
        let q = &self.gram * &beta;
        CdState { beta, q }
    }

    fn lambda_max(&self, l1_ratio: f64) -> f64 {
        self.corr.amax() / l1_ratio.max(1e-3)
    }

    #[cfg(debug_assertions)]
    fn objective(&self, state: &CdState, lambda: f64, l1: f64) -> f64 {
        let sse = 0.5 * (state.beta.dot(&state.q) - 2.0 * self.corr.dot(&state.beta) + self.y_sq);
        let l1_pen = state.beta.iter().map(|b| b.abs()).sum::<f64>();
        let l2_pen = state.beta.dot(&state.beta);
        sse + lambda * (l1 * l1_pen + 0.5 * (1.0 - l1) * l2_pen)
    }

    /// One cyclic pass over the coordinates in `subset`; returns the
    /// largest coefficient update.
    fn sweep(&self, state: &mut CdState, subset: &[usize], thresh: f64, ridge: f64) -> f64 {
        let mut max_delta = 0.0f64;
        for &j in subset {
            let old = state.beta[j];
            let gjj = self.gram[(j, j)];
            // partial residual correlation: (1/n) z_j . (r + z_j b_j)
            let c = self.corr[j] - state.q[j] + gjj * old;
            let new = soft_threshold(c, thresh) / (gjj + ridge);
            if new != old {
                state.q.axpy(new - old, &self.gram.column(j), 1.0);
                state.beta[j] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        max_delta
    }

    /// Cyclic coordinate descent at a single lambda, warm-started from
    /// `state` (standardized scale, updated in place). Between full passes
    /// the iteration restricts itself to the active set, the usual
    /// path-solver strategy. Returns whether the update criterion was met
    /// within the sweep cap.
    fn solve_at(&self, lambda: f64, l1_ratio: f64, state: &mut CdState, settings: &PathSettings) -> bool {
        let m = self.gram.nrows();
        let all: Vec<usize> = (0..m).collect();
        let thresh = lambda * l1_ratio;
        let ridge = lambda * (1.0 - l1_ratio);
        let mut sweeps = 0usize;
        while sweeps < settings.max_sweeps {
            #[cfg(debug_assertions)]
            let obj_before = self.objective(state, lambda, l1_ratio);
            let max_delta = self.sweep(state, &all, thresh, ridge);
            sweeps += 1;
            #[cfg(debug_assertions)]
            {
                let obj_after = self.objective(state, lambda, l1_ratio);
                debug_assert!(
                    obj_after <= obj_before + 1e-10 * (1.0 + obj_before.abs()),
                    "coordinate descent objective increased: {obj_before} -> {obj_after}"
                );
            }
            if max_delta < settings.tol {
                return true;
            }
            let active: Vec<usize> = (0..m).filter(|&j| state.beta[j] != 0.0).collect();
            if active.len() < m {
                while sweeps < settings.max_sweeps {
                    let delta = self.sweep(state, &active, thresh, ridge);
                    sweeps += 1;
                    if delta < settings.tol {
                        break;
                    }
                }
            }
        }
        false
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Coordinate-descent elastic net along a log-spaced lambda grid from
/// `lambda_max` down to `lambda_max * lambda_min_ratio`, warm-started point
/// to point.
pub fn elastic_net_path(
    d: &DesignMatrix,
    y: &DVector<f64>,
    l1_ratio: f64,
    settings: &PathSettings,
) -> Result<PathResult, LinsolveError> {
    if !(0.0..=1.0).contains(&l1_ratio) {
        return Err(LinsolveError::InvalidL1Ratio(l1_ratio));
    }
    let ws = CdWorkspace::new(d, y);
    let m = d.n_cols();
    let lambda_max = ws.lambda_max(l1_ratio);
    let k = settings.n_lambdas.max(2);
    let lambdas: Vec<f64> = if lambda_max <= 0.0 {
        // constant target: any lambda gives the all-zero solution
        vec![0.0; 1]
    } else {
        (0..k)
            .map(|i| lambda_max * settings.lambda_min_ratio.powf(i as f64 / (k - 1) as f64))
            .collect()
    };

    let mut state = CdState::zeros(m);
    let mut result = PathResult {
        lambdas: Vec::with_capacity(lambdas.len()),
        coefs: Vec::with_capacity(lambdas.len()),
        intercepts: Vec::with_capacity(lambdas.len()),
        nnz: Vec::with_capacity(lambdas.len()),
        warnings: Vec::new(),
        std_coefs: Vec::with_capacity(lambdas.len()),
    };
    for &lambda in &lambdas {
        let converged = ws.solve_at(lambda, l1_ratio, &mut state, settings);
        if !converged {
            result.warnings.push(PathWarning::NoConvergence { lambda });
        }
        push_point(&mut result, d, lambda, &state.beta);
    }
    Ok(result)
}

fn push_point(result: &mut PathResult, d: &DesignMatrix, lambda: f64, beta: &DVector<f64>) {
    let orig = DVector::from_fn(beta.len(), |j, _| beta[j] / d.col_stds[j]);
    let intercept = d.y_mean - orig.dot(&d.col_means);
    result.lambdas.push(lambda);
    result.nnz.push(beta.iter().filter(|b| **b != 0.0).count());
    result.coefs.push(orig);
    result.intercepts.push(intercept);
    result.std_coefs.push(beta.clone());
}

/// Support of the lasso path point closest to, but within, a term budget:
/// walks the path from large to small lambda, keeps the last point whose
/// support size fits, and bisects between the bracketing path points when
/// the support size jumps past the budget. Returns original column
/// indices; an empty result means even the densest admissible support is
/// empty.
pub fn lasso_select(
    d: &DesignMatrix,
    y: &DVector<f64>,
    max_terms: usize,
) -> Result<Vec<usize>, LinsolveError> {
    select_support(d, y, 1.0, max_terms, &PathSettings::default())
}

/// [`lasso_select`] generalized to any l1_ratio > 0.
pub fn select_support(
    d: &DesignMatrix,
    y: &DVector<f64>,
    l1_ratio: f64,
    max_terms: usize,
    settings: &PathSettings,
) -> Result<Vec<usize>, LinsolveError> {
    if max_terms == 0 {
        return Err(LinsolveError::InvalidMaxTerms);
    }
    if !(0.0 < l1_ratio && l1_ratio <= 1.0) {
        return Err(LinsolveError::InvalidL1Ratio(l1_ratio));
    }
    if d.n_cols() == 0 {
        return Ok(Vec::new());
    }
    let path = elastic_net_path(d, y, l1_ratio, settings)?;
    let mut admissible: Option<usize> = None;
    for i in 0..path.lambdas.len() {
        if path.nnz[i] <= max_terms {
            admissible = Some(i);
        }
    }
    let Some(i) = admissible else {
        // every path point exceeds the budget: bisect above the first point
        return Ok(d.to_original(&bisect_support(
            d,
            y,
            l1_ratio,
            max_terms,
            path.lambdas[0] * 10.0,
            path.lambdas[0],
            None,
            settings,
        )));
    };
    let mut best = support_of(&path.std_coefs[i]);
    if best.len() < max_terms && i + 1 < path.lambdas.len() {
        // the next point overshoots; refine between the two
        best = bisect_support(
            d,
            y,
            l1_ratio,
            max_terms,
            path.lambdas[i],
            path.lambdas[i + 1],
            Some((best, path.std_coefs[i].clone())),
            settings,
        );
    }
    Ok(d.to_original(&best))
}

fn support_of(beta: &DVector<f64>) -> Vec<usize> {
    (0..beta.len()).filter(|&j| beta[j] != 0.0).collect()
}

const SUPPORT_BISECTIONS: usize = 20;

/// Geometric bisection on lambda between an admissible upper bound and an
/// inadmissible lower bound, tracking the densest admissible support seen.
#[allow(clippy::too_many_arguments)]
fn bisect_support(
    d: &DesignMatrix,
    y: &DVector<f64>,
    l1_ratio: f64,
    max_terms: usize,
    mut lambda_hi: f64,
    mut lambda_lo: f64,
    seed: Option<(Vec<usize>, DVector<f64>)>,
    settings: &PathSettings,
) -> Vec<usize> {
    let ws = CdWorkspace::new(d, y);
    let (mut best, warm) = seed.unwrap_or((Vec::new(), DVector::zeros(d.n_cols())));
    let mut state = ws.state_for(warm);
    for _ in 0..SUPPORT_BISECTIONS {
        let mid = (lambda_hi * lambda_lo).sqrt();
        if !(mid.is_finite() && mid > 0.0) {
            break;
        }
        ws.solve_at(mid, l1_ratio, &mut state, settings);
        let support = support_of(&state.beta);
        if support.len() <= max_terms {
            if support.len() > best.len() {
                best = support;
            }
            lambda_hi = mid;
        } else {
            lambda_lo = mid;
        }
    }
    best
}

/// Ridge fallback for a term budget: coefficients never hit exact zero, so
/// rank columns by standardized-coefficient magnitude at the smallest
/// lambda on the path and keep the largest `max_terms`.
pub fn ridge_top_k(
    d: &DesignMatrix,
    y: &DVector<f64>,
    max_terms: usize,
    settings: &PathSettings,
) -> Result<Vec<usize>, LinsolveError> {
    if max_terms == 0 {
        return Err(LinsolveError::InvalidMaxTerms);
    }
    if d.n_cols() == 0 {
        return Ok(Vec::new());
    }
    let path = elastic_net_path(d, y, 0.0, settings)?;
    let beta = path
        .std_coefs
        .last()
        .expect("path has at least one point");
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| {
        beta[b]
            .abs()
            .partial_cmp(&beta[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order
        .into_iter()
        .take(max_terms)
        .filter(|&j| beta[j] != 0.0)
        .collect();
    kept.sort_unstable();
    Ok(d.to_original(&kept))
}
