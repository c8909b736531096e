//! Candidate base-function generation.
//!
//! Two families are produced: fixed bases `func(x^e)` with
//! `e in {0.5, 1, 2}` for the purely linear-parameter variant, and
//! parameterized bases `func(a*x^p + b)` with `p in {1, 2}` whose scale and
//! offset slots are reduced through function identities (`log` and `sqrt`
//! keep only the additive offset, `exp` keeps only the multiplicative
//! scale, the identity keeps none) before a separable least-squares fit.
//! Bivariate candidates are pairwise products of univariate bases.

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::model::{BaseFunction, FuncKind, SlotRole};

/// Exponents used by fixed bases.
pub const FFX_EXPONENTS: [f64; 3] = [0.5, 1.0, 2.0];
/// Exponents used by parameterized bases.
pub const NLS_EXPONENTS: [f64; 2] = [1.0, 2.0];

/// Largest argument fed to `exp` at initial parameters; keeps the initial
/// evaluation inside f64 range (`exp(709.8)` overflows).
const EXP_ARG_LIMIT: f64 = 700.0;

/// Ordered list of candidate bases, with slots of parameterized bases
/// initialized to a feasible starting point.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub bases: Vec<BaseFunction>,
    /// Total number of nonlinear parameter slots across all bases.
    pub n_nonlinear: usize,
    /// Candidates discarded because they do not evaluate finitely on the
    /// training data.
    pub n_dropped: usize,
}

impl CandidateSet {
    fn from_bases(bases: Vec<BaseFunction>, n_dropped: usize) -> Self {
        let n_nonlinear = bases.iter().map(BaseFunction::n_slots).sum();
        CandidateSet {
            bases,
            n_nonlinear,
            n_dropped,
        }
    }
}

fn column_is_finite(base: &BaseFunction, x: &DMatrix<f64>) -> bool {
    base.eval_column_unchecked(x).iter().all(|v| v.is_finite())
}

fn dedupe_by_descriptor(bases: &mut Vec<BaseFunction>) {
    let mut seen: Vec<String> = Vec::with_capacity(bases.len());
    bases.retain(|b| {
        let d = descriptor(b);
        if seen.contains(&d) {
            false
        } else {
            seen.push(d);
            true
        }
    });
}

/// Structural key ignoring slot values: (kind, exponent, feature, partner).
fn descriptor(b: &BaseFunction) -> String {
    let own = format!("{:?}^{}@{}", b.kind, b.exponent, b.feature);
    match &b.partner {
        Some(p) => format!("{}*{}", own, descriptor(p)),
        None => own,
    }
}

/// Fixed bases for every feature: the raw powers `x^e` and, when
/// `use_nonlinear` is set, `func(x^e)` for each nonlinear function.
/// Candidates that do not evaluate finitely on the training data (for
/// example `log` over a column with non-positive values) are dropped and
/// counted.
pub fn generate_ffx_bases(d: &Dataset, use_nonlinear: bool) -> CandidateSet {
    let kinds: &[FuncKind] = if use_nonlinear {
        &[
            FuncKind::Identity,
            FuncKind::Log,
            FuncKind::Exp,
            FuncKind::Sqrt,
            FuncKind::Abs,
        ]
    } else {
        &[FuncKind::Identity]
    };
    let mut bases = Vec::new();
    let mut dropped = 0usize;
    for feature in 0..d.n_features() {
        for &kind in kinds {
            for exponent in FFX_EXPONENTS {
                let base = BaseFunction::fixed(kind, exponent, feature);
                if column_is_finite(&base, d.x()) {
                    bases.push(base);
                } else {
                    dropped += 1;
                }
            }
        }
    }
    dedupe_by_descriptor(&mut bases);
    CandidateSet::from_bases(bases, dropped)
}

/// Parameterized bases for every feature and `p in {1, 2}`: the plain
/// powers plus, when `use_nonlinear` is set, `log(x^p + b)`, `exp(a*x^p)`
/// and `sqrt(x^p + b)` with one slot each.
///
/// Offsets start at `0` when `min(x^p) > 0` and at `1 - min(x^p)`
/// otherwise, so the smallest initial argument is at least 1; scales start
/// at `1`, shrunk only when the initial `exp` would overflow.
pub fn generate_nls_bases(d: &Dataset, use_nonlinear: bool) -> CandidateSet {
    let mut bases = Vec::new();
    for feature in 0..d.n_features() {
        for exponent in NLS_EXPONENTS {
            bases.push(BaseFunction::fixed(FuncKind::Identity, exponent, feature));
        }
        if !use_nonlinear {
            continue;
        }
        for exponent in NLS_EXPONENTS {
            let (min_u, max_u) = power_range(d.x(), feature, exponent);
            let offset = if min_u > 0.0 { 0.0 } else { 1.0 - min_u };
            let scale = if max_u > EXP_ARG_LIMIT {
                EXP_ARG_LIMIT / max_u
            } else {
                1.0
            };
            bases.push(BaseFunction::with_slot(
                FuncKind::Log,
                exponent,
                feature,
                SlotRole::OffsetB,
                offset,
            ));
            bases.push(BaseFunction::with_slot(
                FuncKind::Exp,
                exponent,
                feature,
                SlotRole::ScaleA,
                scale,
            ));
            bases.push(BaseFunction::with_slot(
                FuncKind::Sqrt,
                exponent,
                feature,
                SlotRole::OffsetB,
                offset,
            ));
        }
    }
    // keep the ordering invariant: feature, then kind, then exponent
    bases.sort_by(|a, b| {
        (a.feature, a.kind)
            .cmp(&(b.feature, b.kind))
            .then(a.exponent.partial_cmp(&b.exponent).unwrap())
    });
    dedupe_by_descriptor(&mut bases);
    CandidateSet::from_bases(bases, 0)
}

fn power_range(x: &DMatrix<f64>, feature: usize, exponent: f64) -> (f64, f64) {
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    for i in 0..x.nrows() {
        let v = x[(i, feature)];
        let u = if exponent == 2.0 { v * v } else { v };
        min_u = min_u.min(u);
        max_u = max_u.max(u);
    }
    (min_u, max_u)
}

/// One product base per unordered pair of the given univariate bases.
/// Slot values of each factor are carried over as independent copies.
pub fn generate_bivariate(top: &[BaseFunction]) -> Vec<BaseFunction> {
    assert!(
        top.len() <= 10,
        "bivariate expansion expects at most 10 factor bases, got {}",
        top.len()
    );
    let mut products = Vec::with_capacity(top.len() * (top.len().saturating_sub(1)) / 2);
    for i in 0..top.len() {
        for j in (i + 1)..top.len() {
            products.push(BaseFunction::product(top[i].clone(), top[j].clone()));
        }
    }
    dedupe_by_descriptor(&mut products);
    products
}

/// Keep only bases that evaluate finitely on `x`; returns the survivors and
/// the dropped count.
pub fn filter_feasible(bases: Vec<BaseFunction>, x: &DMatrix<f64>) -> (Vec<BaseFunction>, usize) {
    let before = bases.len();
    let kept: Vec<BaseFunction> = bases
        .into_iter()
        .filter(|b| column_is_finite(b, x))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn dataset_from_col(values: &[f64]) -> Dataset {
        let x = DMatrix::from_column_slice(values.len(), 1, values);
        let y = DVector::from_fn(values.len(), |i, _| i as f64);
        Dataset::new(vec!["x1".into()], x, y).unwrap()
    }

    #[test]
    fn ffx_bases_without_nonlinear_are_the_three_powers() {
        let d = dataset_from_col(&[1.0, 2.0, 3.0]);
        let cs = generate_ffx_bases(&d, false);
        assert_eq!(cs.bases.len(), 3);
        assert_eq!(cs.n_nonlinear, 0);
        let exps: Vec<f64> = cs.bases.iter().map(|b| b.exponent).collect();
        assert_eq!(exps, vec![0.5, 1.0, 2.0]);
        assert!(cs.bases.iter().all(|b| b.kind == FuncKind::Identity));
    }

    #[test]
    fn ffx_bases_on_positive_feature_enumerate_fully() {
        let d = dataset_from_col(&[0.5, 1.5, 2.5]);
        let cs = generate_ffx_bases(&d, true);
        // 3 powers x (identity + 4 functions), nothing dropped
        assert_eq!(cs.bases.len(), 15);
        assert_eq!(cs.n_dropped, 0);
        assert_eq!(cs.n_nonlinear, 0);
    }

    #[test]
    fn ffx_bases_drop_infeasible_log_and_sqrt() {
        let d = dataset_from_col(&[-1.0, 2.0, 3.0]);
        let cs = generate_ffx_bases(&d, true);
        // x^0.5 of a negative value is NaN, so every e = 0.5 base dies, and
        // log/sqrt of x^1 die too; x^2 stays positive so log(x^2), sqrt(x^2)
        // survive along with abs and exp.
        assert!(cs
            .bases
            .iter()
            .all(|b| !(b.exponent == 0.5 || (b.kind == FuncKind::Log && b.exponent == 1.0))));
        assert!(cs
            .bases
            .iter()
            .all(|b| !(b.kind == FuncKind::Sqrt && b.exponent == 1.0)));
        assert!(cs
            .bases
            .iter()
            .any(|b| b.kind == FuncKind::Log && b.exponent == 2.0));
        assert_eq!(cs.bases.len() + cs.n_dropped, 15);
        assert_eq!(cs.n_dropped, 7);
    }

    #[test]
    fn nls_bases_counts_and_slots() {
        let x = DMatrix::from_fn(4, 3, |i, j| (i + j) as f64 + 0.5);
        let y = DVector::zeros(4);
        let d = Dataset::new(vec!["a".into(), "b".into(), "c".into()], x, y).unwrap();
        let cs = generate_nls_bases(&d, true);
        assert_eq!(cs.bases.len(), 8 * 3);
        assert_eq!(cs.n_nonlinear, 6 * 3);
        assert_eq!(cs.n_dropped, 0);

        let cs = generate_nls_bases(&d, false);
        assert_eq!(cs.bases.len(), 2 * 3);
        assert_eq!(cs.n_nonlinear, 0);
    }

    #[test]
    fn nls_offset_initialization_clears_the_domain() {
        let d = dataset_from_col(&[-5.0, 1.0, 2.0]);
        let cs = generate_nls_bases(&d, true);
        let log_p1 = cs
            .bases
            .iter()
            .find(|b| b.kind == FuncKind::Log && b.exponent == 1.0)
            .unwrap();
        assert_eq!(log_p1.offset(), 6.0);
        // p = 2: min(x^2) = 1 > 0, so no offset needed
        let log_p2 = cs
            .bases
            .iter()
            .find(|b| b.kind == FuncKind::Log && b.exponent == 2.0)
            .unwrap();
        assert_eq!(log_p2.offset(), 0.0);
        // every base is finite at its initial parameters
        for b in &cs.bases {
            assert!(
                b.eval_column_unchecked(d.x()).iter().all(|v| v.is_finite()),
                "{b:?}"
            );
        }
    }

    #[test]
    fn nls_exp_scale_shrinks_on_extreme_features() {
        let d = dataset_from_col(&[1.0, 1000.0]);
        let cs = generate_nls_bases(&d, true);
        for b in &cs.bases {
            assert!(
                b.eval_column_unchecked(d.x()).iter().all(|v| v.is_finite()),
                "{b:?}"
            );
        }
        let exp_p2 = cs
            .bases
            .iter()
            .find(|b| b.kind == FuncKind::Exp && b.exponent == 2.0)
            .unwrap();
        assert!(exp_p2.scale() < 1.0);
    }

    #[test]
    fn generation_is_deterministic_and_ordered() {
        let x = DMatrix::from_fn(5, 2, |i, j| (i as f64 + 1.0) * (j as f64 + 1.0));
        let y = DVector::zeros(5);
        let d = Dataset::new(vec!["a".into(), "b".into()], x, y).unwrap();
        let a = generate_nls_bases(&d, true);
        let b = generate_nls_bases(&d, true);
        assert_eq!(a.bases, b.bases);
        let features: Vec<usize> = a.bases.iter().map(|b| b.feature).collect();
        let mut sorted = features.clone();
        sorted.sort_unstable();
        assert_eq!(features, sorted);
    }

    #[test]
    fn bivariate_counts() {
        let d = dataset_from_col(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let kinds = [
            FuncKind::Identity,
            FuncKind::Log,
            FuncKind::Exp,
            FuncKind::Sqrt,
            FuncKind::Abs,
        ];
        let ten: Vec<BaseFunction> = (0..10)
            .map(|i| BaseFunction::fixed(kinds[i % 5], if i < 5 { 1.0 } else { 2.0 }, 0))
            .collect();
        assert_eq!(generate_bivariate(&ten).len(), 45);
        assert_eq!(generate_bivariate(&ten[..2]).len(), 1);
        let _ = d;
    }

    #[test]
    fn bivariate_products_carry_independent_slots() {
        let log = BaseFunction::with_slot(FuncKind::Log, 1.0, 0, SlotRole::OffsetB, 2.0);
        let exp = BaseFunction::with_slot(FuncKind::Exp, 1.0, 1, SlotRole::ScaleA, 0.5);
        let prods = generate_bivariate(&[log, exp]);
        assert_eq!(prods.len(), 1);
        assert_eq!(prods[0].n_slots(), 2);
        assert!(prods[0].is_bivariate());
    }
}
