//! Separable nonlinear least squares via variable projection.
//!
//! The model is `y ~ l_0 + sum_i l_i f_i(k, x)`: linear in the weights `l`
//! and nonlinear in the slot parameters `k` inside the base-function
//! arguments. For any `k` the optimal `l` comes from one linear
//! least-squares solve ([`project`]), so the outer loop iterates only on
//! `k` with a damped Gauss-Newton (Levenberg-Marquardt) step over the
//! projected residual. The Jacobian uses the Kaufman/Krogh single-term
//! form: column `j` is `-P_perp (dPhi/dk_j) l`, with `P_perp` the projector
//! onto the orthogonal complement of the range of `Phi`, reusing the
//! factorization of the most recent projection.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::BaseFunction;

#[derive(Debug, Error)]
pub enum VarproError {
    #[error("base {base} leaves its domain on the training data{}", slot.map(|s| format!(" (nonlinear parameter {s})")).unwrap_or_default())]
    DomainViolation { base: usize, slot: Option<usize> },
    #[error("base {base} references feature {feature} but the data has {n_features} columns")]
    FeatureOutOfRange {
        base: usize,
        feature: usize,
        n_features: usize,
    },
}

/// Position of one nonlinear parameter: which base and which flattened slot
/// within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotId {
    pub base: usize,
    pub pos: usize,
}

/// A separable fitting problem over a fixed candidate list. The slot
/// vector `k` enumerates every nonlinear parameter of every base exactly
/// once, in base order.
#[derive(Debug, Clone)]
pub struct SeparableProblem<'a> {
    bases: Vec<BaseFunction>,
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    slots: Vec<SlotId>,
}

impl<'a> SeparableProblem<'a> {
    pub fn new(
        bases: Vec<BaseFunction>,
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
    ) -> Result<Self, VarproError> {
        assert_eq!(x.nrows(), y.len(), "row count of X must match y");
        for (i, b) in bases.iter().enumerate() {
            if b.max_feature() >= x.ncols() {
                return Err(VarproError::FeatureOutOfRange {
                    base: i,
                    feature: b.max_feature(),
                    n_features: x.ncols(),
                });
            }
        }
        let mut slots = Vec::new();
        for (i, b) in bases.iter().enumerate() {
            for pos in 0..b.n_slots() {
                slots.push(SlotId { base: i, pos });
            }
        }
        Ok(SeparableProblem { bases, x, y, slots })
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn n_bases(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[BaseFunction] {
        &self.bases
    }

    pub fn slots(&self) -> &[SlotId] {
        &self.slots
    }

    /// Slot values currently stored in the bases, in slot order.
    pub fn initial_k(&self) -> DVector<f64> {
        DVector::from_fn(self.slots.len(), |j, _| {
            let s = self.slots[j];
            self.bases[s.base].slot_value(s.pos)
        })
    }

    /// Copies of the bases with slot values taken from `k`.
    pub fn bound_bases(&self, k: &DVector<f64>) -> Vec<BaseFunction> {
        let mut bound = self.bases.clone();
        for (j, s) in self.slots.iter().enumerate() {
            bound[s.base].set_slot(s.pos, k[j]);
        }
        bound
    }

    fn first_slot_of_base(&self, base: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.base == base)
    }
}

/// Result of eliminating the linear parameters at a fixed `k`.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `[intercept, w_1, ..., w_m]`, minimum-norm when `Phi` is deficient.
    pub linear: DVector<f64>,
    pub residual: DVector<f64>,
    pub sse: f64,
    pub rank: usize,
    /// Thin left singular vectors of `Phi`, descending singular values;
    /// the first `rank` columns span the range of `Phi`.
    u: DMatrix<f64>,
}

impl Projection {
    /// Apply `P_perp = I - U_r U_r^T` to a vector.
    pub fn project_out_range(&self, v: &DVector<f64>) -> DVector<f64> {
        let ur = self.u.columns(0, self.rank);
        let t = ur.tr_mul(v);
        v - ur * t
    }
}

/// Build `Phi(k) = [1 | f_1(k, .) | ... | f_m(k, .)]` and solve the linear
/// subproblem by a rank-revealing orthogonal factorization. Fails when a
/// base does not evaluate finitely at `k` (a log or sqrt argument outside
/// its domain, or an overflowing exp).
pub fn project(p: &SeparableProblem, k: &DVector<f64>) -> Result<Projection, VarproError> {
    let n = p.y.len();
    let m = p.bases.len();
    let bound = p.bound_bases(k);
    let mut phi = DMatrix::zeros(n, m + 1);
    phi.column_mut(0).fill(1.0);
    for (j, base) in bound.iter().enumerate() {
        let col = base.eval_column_unchecked(p.x);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(VarproError::DomainViolation {
                base: j,
                slot: p.first_slot_of_base(j),
            });
        }
        phi.set_column(j + 1, &col);
    }
    let svd = phi.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = sigma_max * (n.max(m + 1) as f64) * f64::EPSILON;
    let rank = svd.rank(eps);
    let linear = svd.solve(p.y, eps).expect("svd computed with u and v");
    let residual = p.y - &phi * &linear;
    let sse = residual.dot(&residual);
    Ok(Projection {
        linear,
        residual,
        sse,
        rank,
        u: svd.u.expect("u requested"),
    })
}

/// Kaufman/Krogh variable-projection Jacobian at `k`, reusing the
/// factorization in `proj`. Column `j` is `-P_perp (dPhi/dk_j) l`; bases
/// with zero linear weight contribute zero columns.
pub fn jacobian(
    p: &SeparableProblem,
    k: &DVector<f64>,
    proj: &Projection,
) -> Result<DMatrix<f64>, VarproError> {
    let bound = p.bound_bases(k);
    let mut jac = DMatrix::zeros(p.y.len(), p.slots.len());
    for (j, s) in p.slots.iter().enumerate() {
        let weight = proj.linear[s.base + 1];
        if weight == 0.0 {
            continue;
        }
        let d = bound[s.base].slot_deriv_column_unchecked(s.pos, p.x);
        if d.iter().any(|v| !v.is_finite()) {
            return Err(VarproError::DomainViolation {
                base: s.base,
                slot: Some(j),
            });
        }
        let col = proj.project_out_range(&d) * (-weight);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Levenberg-Marquardt settings for the projected problem.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VpConfig {
    pub max_iters: usize,
    /// Stop when an accepted step improves the SSE by less than this
    /// relative amount.
    pub rel_tol: f64,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub grad_tol: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Damping raises allowed per iteration before giving up on a step.
    pub max_rejects: usize,
    /// Emit one structured line per iteration on stderr.
    pub trace: bool,
}

impl Default for VpConfig {
    fn default() -> Self {
        VpConfig {
            max_iters: 100,
            rel_tol: 1e-8,
            grad_tol: 1e-10,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            max_rejects: 20,
            trace: false,
        }
    }
}

/// One accepted iteration of the outer loop.
#[derive(Debug, Clone, Copy)]
pub struct VpTrace {
    pub iteration: usize,
    pub sse: f64,
    pub damping: f64,
    pub grad_norm: f64,
}

/// Outcome of [`optimize`].
#[derive(Debug, Clone)]
pub struct VpResult {
    pub k: DVector<f64>,
    /// `[intercept, w_1, ..., w_m]` at the final `k`.
    pub linear: DVector<f64>,
    pub sse: f64,
    pub iters: usize,
    pub converged: bool,
    pub rank: usize,
    pub trace: Vec<VpTrace>,
}

impl VpResult {
    fn from_projection(
        k: DVector<f64>,
        proj: Projection,
        iters: usize,
        converged: bool,
        trace: Vec<VpTrace>,
    ) -> Self {
        VpResult {
            k,
            linear: proj.linear,
            sse: proj.sse,
            iters,
            converged,
            rank: proj.rank,
            trace,
        }
    }
}

/// Damped Gauss-Newton loop on the projected residual. Steps are accepted
/// only when they stay feasible (every base finite) and strictly decrease
/// the SSE; infeasible or uphill steps raise the damping and retry. The
/// accepted SSE sequence is therefore non-increasing.
pub fn optimize(p: &SeparableProblem, config: &VpConfig) -> Result<VpResult, VarproError> {
    let mut k = p.initial_k();
    let mut proj = project(p, &k)?;
    let mut trace = Vec::new();
    if p.n_slots() == 0 {
        return Ok(VpResult::from_projection(k, proj, 0, true, trace));
    }

    let mut damping = config.initial_damping;
    let mut converged = false;
    let mut iters = 0usize;
    for iter in 1..=config.max_iters {
        iters = iter;
        let jac = match jacobian(p, &k, &proj) {
            Ok(j) => j,
            // derivative left the domain at an otherwise feasible point;
            // keep the best point found so far
            Err(_) => break,
        };
        let gradient = jac.tr_mul(&proj.residual);
        let grad_norm = gradient.amax();
        if config.trace {
            emit_trace(iter, proj.sse, damping, grad_norm);
        }
        trace.push(VpTrace {
            iteration: iter,
            sse: proj.sse,
            damping,
            grad_norm,
        });
        if grad_norm < config.grad_tol {
            converged = true;
            break;
        }

        let jtj = jac.tr_mul(&jac);
        let diag_max = jtj.diagonal().max();
        let diag = jtj.diagonal().map(|d| d.max(diag_max * 1e-12).max(1e-300));

        let mut accepted = false;
        for _ in 0..=config.max_rejects {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += damping * diag[i];
            }
            let step = match a.clone().cholesky() {
                Some(chol) => chol.solve(&(-&gradient)),
                None => match a.lu().solve(&(-&gradient)) {
                    Some(s) => s,
                    None => {
                        damping *= config.damping_up;
                        continue;
                    }
                },
            };
            let k_new = &k + &step;
            match project(p, &k_new) {
                Ok(proj_new) if proj_new.sse < proj.sse => {
                    let improvement = proj.sse - proj_new.sse;
                    let rel = improvement / proj.sse.max(f64::MIN_POSITIVE);
                    k = k_new;
                    proj = proj_new;
                    damping = (damping * config.damping_down).max(1e-15);
                    accepted = true;
                    if rel < config.rel_tol {
                        converged = true;
                    }
                    break;
                }
                _ => damping *= config.damping_up,
            }
        }
        if !accepted {
            // damping exhausted; at the very first iteration this returns
            // the (unchanged) initial point flagged as not converged
            break;
        }
        if converged {
            break;
        }
    }
    Ok(VpResult::from_projection(k, proj, iters, converged, trace))
}

fn emit_trace(iteration: usize, sse: f64, damping: f64, grad_norm: f64) {
    eprintln!("vp_trace iteration={iteration} sse={sse:.6e} damping={damping:.3e} grad_norm={grad_norm:.3e}");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FuncKind, SlotRole};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp_basis(scale: f64) -> BaseFunction {
        BaseFunction::with_slot(FuncKind::Exp, 1.0, 0, SlotRole::ScaleA, scale)
    }

    fn log_basis(offset: f64) -> BaseFunction {
        BaseFunction::with_slot(FuncKind::Log, 1.0, 0, SlotRole::OffsetB, offset)
    }

    #[test]
    fn project_recovers_exact_linear_coefficients() {
        // y = 1 + 2*exp(0.7 x) on 50 noiseless points
        let n = 50;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64 * 3.0);
        let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * (0.7 * x[(i, 0)]).exp());
        let p = SeparableProblem::new(vec![exp_basis(0.7)], &x, &y).unwrap();
        let proj = project(&p, &DVector::from_vec(vec![0.7])).unwrap();
        assert_relative_eq!(proj.linear[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(proj.linear[1], 2.0, epsilon = 1e-9);
        let y_norm2 = y.dot(&y);
        assert!(proj.sse <= 1e-16 * y_norm2, "sse {} too large", proj.sse);
        assert_eq!(proj.rank, 2);
    }

    #[test]
    fn project_with_no_bases_is_the_mean() {
        let x = DMatrix::zeros(4, 1);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]);
        let p = SeparableProblem::new(vec![], &x, &y).unwrap();
        let proj = project(&p, &DVector::zeros(0)).unwrap();
        assert_relative_eq!(proj.linear[0], 3.0, epsilon = 1e-12);
        let var = y.iter().map(|v| (v - 3.0) * (v - 3.0)).sum::<f64>();
        assert_relative_eq!(proj.sse, var, epsilon = 1e-12);
    }

    #[test]
    fn project_reports_domain_violations() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let p = SeparableProblem::new(vec![log_basis(0.0)], &x, &y).unwrap();
        // offset -2 makes log(1 - 2) undefined on the first row
        let err = project(&p, &DVector::from_vec(vec![-2.0])).unwrap_err();
        assert!(matches!(
            err,
            VarproError::DomainViolation {
                base: 0,
                slot: Some(0)
            }
        ));
    }

    /// Central finite differences of the frozen-projection residual
    /// kappa -> P_perp(k0) (y - Phi(kappa) l(k0)), the function whose exact
    /// derivative at kappa = k0 is the Kaufman/Krogh Jacobian column.
    ///
    /// Only the perturbed base's column of Phi depends on k_j, so the
    /// difference of the two residuals reduces exactly to the difference
    /// of that single column times its weight; evaluating it that way
    /// avoids re-subtracting the unchanged terms at full magnitude.
    fn fd_jacobian(p: &SeparableProblem, k: &DVector<f64>, proj: &Projection) -> DMatrix<f64> {
        let n = proj.residual.len();
        let mut fd = DMatrix::zeros(n, k.len());
        for (j, slot) in p.slots().iter().enumerate() {
            let h = 1e-6 * (1.0 + k[j].abs());
            let mut kp = k.clone();
            kp[j] += h;
            let mut km = k.clone();
            km[j] -= h;
            let col_p = p.bound_bases(&kp)[slot.base].eval_column(p.x).unwrap();
            let col_m = p.bound_bases(&km)[slot.base].eval_column(p.x).unwrap();
            let weight = proj.linear[slot.base + 1];
            let delta = (col_p - col_m) * (-weight / (2.0 * h));
            fd.set_column(j, &proj.project_out_range(&delta));
        }
        fd
    }

    /// Seeded random problem with 2-5 bases, one per feature. Stacking
    /// several smooth bases on one feature makes the projector annihilate
    /// their derivative columns almost completely, which no finite
    /// difference at a fixed step can resolve; independent features keep
    /// the projected columns well scaled.
    pub(crate) fn random_problem(
        seed: u64,
        x_store: &mut DMatrix<f64>,
        y_store: &mut DVector<f64>,
    ) -> Vec<BaseFunction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(30..=100);
        let n_bases = rng.random_range(2..=5usize);
        *x_store = DMatrix::from_fn(n, n_bases, |_, _| rng.random_range(0.5..3.0));
        let bases: Vec<BaseFunction> = (0..n_bases)
            .map(|feature| {
                let exponent = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
                match rng.random_range(0..4) {
                    0 => BaseFunction::fixed(FuncKind::Identity, exponent, feature),
                    1 => BaseFunction::with_slot(
                        FuncKind::Log,
                        exponent,
                        feature,
                        SlotRole::OffsetB,
                        rng.random_range(0.5..2.0),
                    ),
                    2 => BaseFunction::with_slot(
                        FuncKind::Exp,
                        exponent,
                        feature,
                        SlotRole::ScaleA,
                        rng.random_range(-0.5..0.5),
                    ),
                    _ => BaseFunction::with_slot(
                        FuncKind::Sqrt,
                        exponent,
                        feature,
                        SlotRole::OffsetB,
                        rng.random_range(0.5..2.0),
                    ),
                }
            })
            .collect();
        // target: weighted sum of the bases plus deterministic wiggle so
        // the projected weights are well away from zero
        let mut y = DVector::zeros(n);
        for b in &bases {
            let w = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.5..2.0);
            y.axpy(w, &b.eval_column_unchecked(x_store), 1.0);
        }
        for i in 0..n {
            y[i] += 0.05 * ((i as f64) * 0.7).sin();
        }
        *y_store = y;
        bases
    }

    #[test]
    fn jacobian_matches_central_finite_differences() {
        for seed in 0..25u64 {
            let mut x = DMatrix::zeros(1, 1);
            let mut y = DVector::zeros(1);
            let bases = random_problem(seed, &mut x, &mut y);
            let p = SeparableProblem::new(bases, &x, &y).unwrap();
            if p.n_slots() == 0 {
                continue;
            }
            let k = p.initial_k();
            let proj = project(&p, &k).unwrap();
            let jac = jacobian(&p, &k, &proj).unwrap();
            let fd = fd_jacobian(&p, &k, &proj);
            for j in 0..k.len() {
                let diff = (jac.column(j) - fd.column(j)).norm();
                let scale = fd.column(j).norm();
                let rel = diff / scale.max(1e-30);
                assert!(
                    rel < 1e-5 || diff < 1e-12,
                    "seed {seed} column {j}: relative error {rel}"
                );
            }
        }
    }

    #[test]
    fn jacobian_of_slotless_problem_is_empty() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 4.0, 9.0]);
        let p = SeparableProblem::new(
            vec![BaseFunction::fixed(FuncKind::Identity, 2.0, 0)],
            &x,
            &y,
        )
        .unwrap();
        let k = p.initial_k();
        let proj = project(&p, &k).unwrap();
        let jac = jacobian(&p, &k, &proj).unwrap();
        assert_eq!(jac.ncols(), 0);
    }

    #[test]
    fn jacobian_column_is_zero_for_zero_weight_base() {
        // y built from the exp basis only; the log basis is orthogonalized
        // away... easier: set y so that the log basis weight is exactly 0
        // by construction of an orthogonal target is fragile. Instead bind
        // a synthetic projection with a zeroed weight.
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let p = SeparableProblem::new(vec![log_basis(1.0), exp_basis(0.3)], &x, &y).unwrap();
        let k = p.initial_k();
        let mut proj = project(&p, &k).unwrap();
        proj.linear[1] = 0.0; // zero out the log basis weight
        let jac = jacobian(&p, &k, &proj).unwrap();
        assert!(jac.column(0).iter().all(|&v| v == 0.0));
        assert!(jac.column(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn optimize_recovers_log_offset() {
        // y = 3 log(x + 2) + 1.5 on 200 noiseless points, one log basis
        let n = 200;
        let x = DMatrix::from_fn(n, 1, |i, _| -1.0 + 9.0 * i as f64 / (n - 1) as f64);
        let y = DVector::from_fn(n, |i, _| 3.0 * (x[(i, 0)] + 2.0).ln() + 1.5);
        // start away from the truth (offset 5)
        let p = SeparableProblem::new(vec![log_basis(5.0)], &x, &y).unwrap();
        let res = optimize(&p, &VpConfig::default()).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.k[0], 2.0, epsilon = 0.05);
        let sst = {
            let mean = y.sum() / n as f64;
            y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        };
        assert!(1.0 - res.sse / sst > 0.999, "r2 too low, sse {}", res.sse);
    }

    #[test]
    fn optimize_at_a_fixed_point_stops_immediately() {
        let n = 60;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.05);
        let y = DVector::from_fn(n, |i, _| 2.0 - 1.2 * (0.4 * x[(i, 0)]).exp());
        let p = SeparableProblem::new(vec![exp_basis(0.4)], &x, &y).unwrap();
        let res = optimize(&p, &VpConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iters <= 2, "took {} iterations", res.iters);
        assert_relative_eq!(res.k[0], 0.4, epsilon = 1e-9);
    }

    #[test]
    fn optimize_without_slots_equals_ols() {
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |i, j| (i as f64 + 1.0) * (j as f64 + 1.0) * 0.1);
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] - 0.7 * x[(i, 1)] + 0.3);
        let bases = vec![
            BaseFunction::fixed(FuncKind::Identity, 1.0, 0),
            BaseFunction::fixed(FuncKind::Identity, 1.0, 1),
        ];
        let p = SeparableProblem::new(bases.clone(), &x, &y).unwrap();
        let res = optimize(&p, &VpConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iters, 0);

        let dm = crate::linsolve::DesignMatrix::from_bases(&bases, &x, &y).unwrap();
        let fit = crate::linsolve::ols(&dm, &y);
        let vp_pred = {
            let mut pred = DVector::from_element(n, res.linear[0]);
            for (j, b) in bases.iter().enumerate() {
                pred.axpy(res.linear[j + 1], &b.eval_column_unchecked(&x), 1.0);
            }
            pred
        };
        let ols_pred = fit.predict(dm.columns());
        assert_relative_eq!(vp_pred, ols_pred, epsilon = 1e-10);
    }

    #[test]
    fn accepted_sse_sequence_is_non_increasing() {
        for seed in [3u64, 17, 99] {
            let mut x = DMatrix::zeros(1, 1);
            let mut y = DVector::zeros(1);
            let bases = random_problem(seed, &mut x, &mut y);
            let p = SeparableProblem::new(bases, &x, &y).unwrap();
            let res = optimize(&p, &VpConfig::default()).unwrap();
            for w in res.trace.windows(2) {
                assert!(
                    w[1].sse <= w[0].sse,
                    "sse increased across accepted iterations"
                );
            }
        }
    }

    #[test]
    fn optimize_is_deterministic() {
        let mut x = DMatrix::zeros(1, 1);
        let mut y = DVector::zeros(1);
        let bases = random_problem(7, &mut x, &mut y);
        let p = SeparableProblem::new(bases, &x, &y).unwrap();
        let a = optimize(&p, &VpConfig::default()).unwrap();
        let b = optimize(&p, &VpConfig::default()).unwrap();
        assert_eq!(a.k, b.k);
        assert_eq!(a.sse, b.sse);
        assert_eq!(a.iters, b.iters);
    }
}
