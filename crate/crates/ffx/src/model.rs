//! Fitted-model representation: evaluation, symbol-count complexity,
//! text rendering and JSON (de)serialization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag written into every serialized model document.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature index {feature} out of range for input with {n_features} columns")]
    FeatureIndexOutOfRange { feature: usize, n_features: usize },
    #[error("model document violates schema: {0}")]
    SchemaViolation(String),
    #[error("model contains a non-finite parameter")]
    NonFiniteParameter,
}

/// Nonlinear function wrapped around a base-function argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuncKind {
    Identity,
    Log,
    Exp,
    Sqrt,
    Abs,
}

/// Role of a nonlinear parameter slot inside a base-function argument
/// `func(a * x^p + b)`: `ScaleA` is the multiplicative `a`, `OffsetB` the
/// additive `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRole {
    ScaleA,
    OffsetB,
}

/// One nonlinear parameter slot with its current value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlParam {
    pub role: SlotRole,
    pub value: f64,
}

/// A single candidate term: `func(a * x_feature^exponent + b)`, optionally
/// multiplied with a partner base for bivariate products.
///
/// Slots absent from `nl_params` evaluate at their neutral value
/// (`a = 1`, `b = 0`), which covers the fixed-form bases of the
/// non-parametric variant as well as reduced parameterizations where a
/// scale or offset has been absorbed into the linear part of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseFunction {
    pub kind: FuncKind,
    pub exponent: f64,
    pub feature: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nl_params: Vec<NlParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<Box<BaseFunction>>,
}

impl BaseFunction {
    /// Parameter-free base `func(x^p)`.
    pub fn fixed(kind: FuncKind, exponent: f64, feature: usize) -> Self {
        BaseFunction {
            kind,
            exponent,
            feature,
            nl_params: Vec::new(),
            partner: None,
        }
    }

    /// Base with a single nonlinear slot.
    pub fn with_slot(
        kind: FuncKind,
        exponent: f64,
        feature: usize,
        role: SlotRole,
        value: f64,
    ) -> Self {
        BaseFunction {
            kind,
            exponent,
            feature,
            nl_params: vec![NlParam { role, value }],
            partner: None,
        }
    }

    /// Product of two bases. Slot values of both factors are kept as
    /// independent copies.
    pub fn product(left: BaseFunction, right: BaseFunction) -> Self {
        BaseFunction {
            partner: Some(Box::new(right)),
            ..left
        }
    }

    pub fn is_bivariate(&self) -> bool {
        self.partner.is_some()
    }

    /// Multiplicative scale `a` (1 when no such slot exists).
    pub fn scale(&self) -> f64 {
        self.nl_params
            .iter()
            .find(|p| p.role == SlotRole::ScaleA)
            .map_or(1.0, |p| p.value)
    }

    /// Additive offset `b` (0 when no such slot exists).
    pub fn offset(&self) -> f64 {
        self.nl_params
            .iter()
            .find(|p| p.role == SlotRole::OffsetB)
            .map_or(0.0, |p| p.value)
    }

    /// Total slot count including the partner's slots.
    pub fn n_slots(&self) -> usize {
        self.nl_params.len() + self.partner.as_ref().map_or(0, |p| p.n_slots())
    }

    /// Value of the flattened slot `flat` (own slots first, then the
    /// partner's).
    pub fn slot_value(&self, flat: usize) -> f64 {
        let own = self.nl_params.len();
        if flat < own {
            self.nl_params[flat].value
        } else {
            self.partner
                .as_ref()
                .expect("flat slot index within bounds")
                .slot_value(flat - own)
        }
    }

    /// Set the flattened slot `flat`.
    pub fn set_slot(&mut self, flat: usize, value: f64) {
        let own = self.nl_params.len();
        if flat < own {
            self.nl_params[flat].value = value;
        } else {
            self.partner
                .as_mut()
                .expect("flat slot index within bounds")
                .set_slot(flat - own, value);
        }
    }

    /// Largest feature index referenced by this base (including partner).
    pub fn max_feature(&self) -> usize {
        let own = self.feature;
        match &self.partner {
            Some(p) => own.max(p.max_feature()),
            None => own,
        }
    }

    fn power(x: f64, p: f64) -> f64 {
        if p == 1.0 {
            x
        } else if p == 2.0 {
            x * x
        } else if p == 0.5 {
            x.sqrt()
        } else {
            x.powf(p)
        }
    }

    /// Value at a single feature value, ignoring the partner. Out-of-domain
    /// arguments propagate as non-finite values instead of aborting.
    pub fn eval_univariate(&self, x: f64) -> f64 {
        let arg = self.scale() * Self::power(x, self.exponent) + self.offset();
        match self.kind {
            FuncKind::Identity => arg,
            FuncKind::Log => arg.ln(),
            FuncKind::Exp => arg.exp(),
            FuncKind::Sqrt => arg.sqrt(),
            FuncKind::Abs => arg.abs(),
        }
    }

    /// Derivative of the univariate value with respect to the slot at
    /// `slot_idx` in `nl_params`, at a single feature value.
    pub fn slot_deriv_univariate(&self, slot_idx: usize, x: f64) -> f64 {
        let u = Self::power(x, self.exponent);
        let arg = self.scale() * u + self.offset();
        let fprime = match self.kind {
            FuncKind::Identity => 1.0,
            FuncKind::Log => 1.0 / arg,
            FuncKind::Exp => arg.exp(),
            FuncKind::Sqrt => 0.5 / arg.sqrt(),
            FuncKind::Abs => arg.signum(),
        };
        match self.nl_params[slot_idx].role {
            SlotRole::ScaleA => fprime * u,
            SlotRole::OffsetB => fprime,
        }
    }

    fn check_features(&self, n_features: usize) -> Result<(), ModelError> {
        if self.max_feature() >= n_features {
            return Err(ModelError::FeatureIndexOutOfRange {
                feature: self.max_feature(),
                n_features,
            });
        }
        Ok(())
    }

    /// Column of values over all rows of `x`.
    pub fn eval_column(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        self.check_features(x.ncols())?;
        Ok(self.eval_column_unchecked(x))
    }

    pub(crate) fn eval_column_unchecked(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut v = DVector::from_fn(x.nrows(), |i, _| self.eval_univariate(x[(i, self.feature)]));
        if let Some(p) = &self.partner {
            let pv = p.eval_column_unchecked(x);
            v.component_mul_assign(&pv);
        }
        v
    }

    /// Column of derivatives with respect to the flattened slot `flat`,
    /// applying the product rule across bivariate factors.
    pub(crate) fn slot_deriv_column_unchecked(
        &self,
        flat: usize,
        x: &DMatrix<f64>,
    ) -> DVector<f64> {
        let own = self.nl_params.len();
        match &self.partner {
            None => DVector::from_fn(x.nrows(), |i, _| {
                self.slot_deriv_univariate(flat, x[(i, self.feature)])
            }),
            Some(p) => {
                if flat < own {
                    let mut d = DVector::from_fn(x.nrows(), |i, _| {
                        self.slot_deriv_univariate(flat, x[(i, self.feature)])
                    });
                    d.component_mul_assign(&p.eval_column_unchecked(x));
                    d
                } else {
                    let mut d = p.slot_deriv_column_unchecked(flat - own, x);
                    let own_v = DVector::from_fn(x.nrows(), |i, _| {
                        self.eval_univariate(x[(i, self.feature)])
                    });
                    d.component_mul_assign(&own_v);
                    d
                }
            }
        }
    }

    fn complexity_nodes(&self) -> usize {
        // Canonical-tree counting: every constant, variable, unary function
        // and binary operator is one node; x^p is (pow, x, p) for p != 1;
        // neutral slot values (a == 1, b == 0) are elided from the tree.
        let func_nodes = if self.kind == FuncKind::Identity { 0 } else { 1 };
        let power_nodes = if self.exponent == 1.0 { 1 } else { 3 };
        let scale_nodes = if self
            .nl_params
            .iter()
            .any(|p| p.role == SlotRole::ScaleA && p.value != 1.0)
        {
            2
        } else {
            0
        };
        let offset_nodes = if self
            .nl_params
            .iter()
            .any(|p| p.role == SlotRole::OffsetB && p.value != 0.0)
        {
            2
        } else {
            0
        };
        let own = func_nodes + power_nodes + scale_nodes + offset_nodes;
        match &self.partner {
            Some(p) => own + 1 + p.complexity_nodes(),
            None => own,
        }
    }

    fn render(&self) -> String {
        let var = format!("x{}", self.feature + 1);
        let pow = if self.exponent == 1.0 {
            var
        } else {
            format!("{}^{}", var, fmt_sig(self.exponent))
        };
        let a = self.scale();
        let b = self.offset();
        let has_scale = self.nl_params.iter().any(|p| p.role == SlotRole::ScaleA) && a != 1.0;
        let has_offset = self.nl_params.iter().any(|p| p.role == SlotRole::OffsetB) && b != 0.0;
        let mut arg = if has_scale {
            format!("{}*{}", fmt_sig(a), pow)
        } else {
            pow
        };
        if has_offset {
            if b < 0.0 {
                arg = format!("{} - {}", arg, fmt_sig(-b));
            } else {
                arg = format!("{} + {}", arg, fmt_sig(b));
            }
        }
        let own = match self.kind {
            FuncKind::Identity => {
                if has_offset && self.partner.is_some() {
                    format!("({arg})")
                } else {
                    arg
                }
            }
            FuncKind::Log => format!("log({arg})"),
            FuncKind::Exp => format!("exp({arg})"),
            FuncKind::Sqrt => format!("sqrt({arg})"),
            FuncKind::Abs => format!("abs({arg})"),
        };
        match &self.partner {
            Some(p) => format!("{}*{}", own, p.render()),
            None => own,
        }
    }

    fn params_finite(&self) -> bool {
        self.exponent.is_finite()
            && self.nl_params.iter().all(|p| p.value.is_finite())
            && self.partner.as_ref().is_none_or(|p| p.params_finite())
    }
}

/// One weighted term of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTerm {
    pub weight: f64,
    pub base: BaseFunction,
}

/// Fitted model: `intercept + sum_i weight_i * base_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub intercept: f64,
    pub terms: Vec<ModelTerm>,
}

impl Model {
    pub fn constant(intercept: f64) -> Self {
        Model {
            intercept,
            terms: Vec::new(),
        }
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Per-row predictions. Rows where a log/sqrt argument leaves its
    /// domain produce non-finite values rather than an error, so that
    /// held-out data can still be scored.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        for t in &self.terms {
            t.base.check_features(x.ncols())?;
        }
        let mut out = DVector::from_element(x.nrows(), self.intercept);
        for t in &self.terms {
            out.axpy(t.weight, &t.base.eval_column_unchecked(x), 1.0);
        }
        Ok(out)
    }

    /// Number of syntactical symbols in the canonical expression tree.
    ///
    /// Counting rules: intercept 1; each term contributes 1 for the joining
    /// `+`, 2 for a weight different from 1 (constant and `*`), and the
    /// nodes of its base function, where `x^p` counts 3 nodes for `p != 1`,
    /// a non-identity function counts 1, each bound non-neutral slot counts
    /// 2 (constant and operator) and a bivariate product adds 1 for the
    /// multiplication between factors.
    pub fn complexity(&self) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| {
                let weight_nodes = if t.weight == 1.0 { 0 } else { 2 };
                1 + weight_nodes + t.base.complexity_nodes()
            })
            .sum::<usize>()
    }

    /// Infix rendering with parameters at 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = fmt_sig(self.intercept);
        for t in &self.terms {
            let (sign, mag) = if t.weight < 0.0 {
                (" - ", -t.weight)
            } else {
                (" + ", t.weight)
            };
            s.push_str(sign);
            if mag == 1.0 {
                s.push_str(&t.base.render());
            } else {
                s.push_str(&format!("{}*{}", fmt_sig(mag), t.base.render()));
            }
        }
        s
    }

    /// Serialize to the versioned JSON document. All parameters must be
    /// finite.
    pub fn to_json(&self) -> Result<String, ModelError> {
        if !self.intercept.is_finite()
            || !self
                .terms
                .iter()
                .all(|t| t.weight.is_finite() && t.base.params_finite())
        {
            return Err(ModelError::NonFiniteParameter);
        }
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            intercept: self.intercept,
            terms: self.terms.clone(),
        };
        serde_json::to_string_pretty(&doc)
            .map_err(|e| ModelError::SchemaViolation(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Model, ModelError> {
        let doc: ModelDocument =
            serde_json::from_str(s).map_err(|e| ModelError::SchemaViolation(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::SchemaViolation(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        let model = Model {
            intercept: doc.intercept,
            terms: doc.terms,
        };
        if !model.intercept.is_finite()
            || !model
                .terms
                .iter()
                .all(|t| t.weight.is_finite() && t.base.params_finite())
        {
            return Err(ModelError::SchemaViolation(
                "non-finite parameter value".into(),
            ));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    intercept: f64,
    terms: Vec<ModelTerm>,
}

/// Format a value with up to 9 significant digits, `%g`-style: fixed
/// notation in a moderate magnitude range, scientific outside it, trailing
/// zeros trimmed.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let decimals = (8 - mag).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let trimmed = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.')
        } else {
            &s
        };
        if trimmed == "-0" {
            "0".to_string()
        } else {
            trimmed.to_string()
        }
    } else {
        let s = format!("{v:.8e}");
        let (mantissa, exp) = s.split_once('e').expect("exponential format");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{exp}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn log_base(feature: usize, offset: f64) -> BaseFunction {
        BaseFunction::with_slot(FuncKind::Log, 1.0, feature, SlotRole::OffsetB, offset)
    }

    #[test]
    fn constant_model_evaluates_to_intercept() {
        let m = Model::constant(2.0);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = m.evaluate(&x).unwrap();
        assert!(y.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn log_identity_evaluates_by_hand() {
        // 1 + 2*log(x1 + 3) at x1 = e - 3 gives 1 + 2*1 = 3
        let m = Model {
            intercept: 1.0,
            terms: vec![ModelTerm {
                weight: 2.0,
                base: log_base(0, 3.0),
            }],
        };
        let x = DMatrix::from_row_slice(1, 1, &[std::f64::consts::E - 3.0]);
        let y = m.evaluate(&x).unwrap();
        assert_relative_eq!(y[0], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn out_of_range_feature_is_an_error() {
        let m = Model {
            intercept: 0.0,
            terms: vec![ModelTerm {
                weight: 1.0,
                base: BaseFunction::fixed(FuncKind::Identity, 1.0, 5),
            }],
        };
        let x = DMatrix::zeros(4, 2);
        assert!(matches!(
            m.evaluate(&x),
            Err(ModelError::FeatureIndexOutOfRange { feature: 5, .. })
        ));
    }

    #[test]
    fn out_of_domain_rows_are_non_finite_not_fatal() {
        let m = Model {
            intercept: 0.0,
            terms: vec![ModelTerm {
                weight: 1.0,
                base: log_base(0, 0.0),
            }],
        };
        let x = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 2.0]);
        let y = m.evaluate(&x).unwrap();
        assert!(y[0].is_finite());
        assert!(!y[1].is_finite());
        assert!(y[2].is_finite());
    }

    #[test]
    fn complexity_of_paper_style_log_model_is_six() {
        // c0 + log(x1 + c2)
        let m = Model {
            intercept: 1.3,
            terms: vec![ModelTerm {
                weight: 1.0,
                base: log_base(0, 0.7),
            }],
        };
        assert_eq!(m.complexity(), 6);
    }

    #[test]
    fn complexity_of_constant_model_is_one() {
        assert_eq!(Model::constant(4.2).complexity(), 1);
    }

    #[test]
    fn complexity_of_weighted_exp_model_is_eight() {
        // c0 + c1*exp(a*x1): c0, +, c1, *, exp, *, a, x1
        let m = Model {
            intercept: 0.5,
            terms: vec![ModelTerm {
                weight: 2.5,
                base: BaseFunction::with_slot(FuncKind::Exp, 1.0, 0, SlotRole::ScaleA, 0.7),
            }],
        };
        assert_eq!(m.complexity(), 8);
    }

    #[test]
    fn complexity_counts_powers_and_products() {
        // c0 + c1*x1^2 -> c0, +, c1, *, pow, x1, 2 = 7
        let m = Model {
            intercept: 1.0,
            terms: vec![ModelTerm {
                weight: 2.0,
                base: BaseFunction::fixed(FuncKind::Identity, 2.0, 0),
            }],
        };
        assert_eq!(m.complexity(), 7);

        // product adds one multiplication node: c0 + c1*(x1 * x2) = 1+1+2+1+1+1
        let m = Model {
            intercept: 1.0,
            terms: vec![ModelTerm {
                weight: 2.0,
                base: BaseFunction::product(
                    BaseFunction::fixed(FuncKind::Identity, 1.0, 0),
                    BaseFunction::fixed(FuncKind::Identity, 1.0, 1),
                ),
            }],
        };
        assert_eq!(m.complexity(), 7);
    }

    #[test]
    fn complexity_is_invariant_under_term_reordering() {
        let t1 = ModelTerm {
            weight: 2.0,
            base: log_base(0, 1.5),
        };
        let t2 = ModelTerm {
            weight: -0.5,
            base: BaseFunction::fixed(FuncKind::Identity, 2.0, 1),
        };
        let a = Model {
            intercept: 1.0,
            terms: vec![t1.clone(), t2.clone()],
        };
        let b = Model {
            intercept: 1.0,
            terms: vec![t2, t1],
        };
        assert_eq!(a.complexity(), b.complexity());
    }

    #[test]
    fn to_text_renders_documented_grammar() {
        let m = Model {
            intercept: 1.0,
            terms: vec![ModelTerm {
                weight: 2.0,
                base: BaseFunction::fixed(FuncKind::Identity, 2.0, 0),
            }],
        };
        assert_eq!(m.to_text(), "1 + 2*x1^2");

        let m = Model {
            intercept: 0.5,
            terms: vec![ModelTerm {
                weight: -1.5,
                base: log_base(1, 2.0),
            }],
        };
        assert_eq!(m.to_text(), "0.5 - 1.5*log(x2 + 2)");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = Model {
            intercept: 0.1 + 0.2, // deliberately non-representable decimal
            terms: vec![
                ModelTerm {
                    weight: 2.0 / 3.0,
                    base: log_base(0, 1.0 / 7.0),
                },
                ModelTerm {
                    weight: -0.5,
                    base: BaseFunction::with_slot(FuncKind::Exp, 2.0, 1, SlotRole::ScaleA, 0.3),
                },
                ModelTerm {
                    weight: 1e-17,
                    base: BaseFunction::product(
                        log_base(0, 2.0),
                        BaseFunction::with_slot(FuncKind::Exp, 1.0, 1, SlotRole::ScaleA, -0.9),
                    ),
                },
            ],
        };
        let doc = m.to_json().unwrap();
        let back = Model::from_json(&doc).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn deserialize_rejects_missing_intercept() {
        let doc = r#"{"format_version":1,"terms":[]}"#;
        assert!(matches!(
            Model::from_json(doc),
            Err(ModelError::SchemaViolation(_))
        ));
    }

    #[test]
    fn deserialize_rejects_unknown_version() {
        let doc = r#"{"format_version":99,"intercept":0.0,"terms":[]}"#;
        assert!(matches!(
            Model::from_json(doc),
            Err(ModelError::SchemaViolation(_))
        ));
    }

    #[test]
    fn serialize_rejects_non_finite_parameters() {
        let m = Model::constant(f64::NAN);
        assert!(matches!(m.to_json(), Err(ModelError::NonFiniteParameter)));
    }

    #[test]
    fn fmt_sig_examples() {
        assert_eq!(fmt_sig(2.0), "2");
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(-0.5), "-0.5");
        assert_eq!(fmt_sig(1234.56789), "1234.56789");
        assert_eq!(fmt_sig(1e-7), "1e-7");
        assert_eq!(fmt_sig(1.5e12), "1.5e12");
        assert_eq!(fmt_sig(0.0), "0");
        // rounded to 9 significant digits
        assert_eq!(fmt_sig(1.234567894), "1.23456789");
    }
}
