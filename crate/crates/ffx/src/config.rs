//! Fit hyperparameters shared by both algorithms.

use serde::{Deserialize, Serialize};

use crate::linsolve::PathSettings;
use crate::varpro::VpConfig;

/// Term budgets allowed in benchmark mode.
pub const BENCHMARK_MAX_TERMS: [usize; 6] = [3, 5, 10, 20, 30, 50];
/// Mixing ratios allowed in benchmark mode (elastic-net algorithm only).
pub const BENCHMARK_L1_RATIOS: [f64; 3] = [0.0, 0.5, 1.0];

/// Hyperparameters for a single fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Maximum number of base functions in the final model.
    pub max_terms: usize,
    /// Expand products of the top univariate bases.
    pub use_bivariate: bool,
    /// Generate log/exp/sqrt (and abs for the fixed-basis algorithm)
    /// candidates in addition to plain powers.
    pub use_nonlinear: bool,
    /// Elastic-net mixing ratio; only the fixed-basis algorithm uses it,
    /// base-function selection in the separable algorithm is always pure
    /// lasso.
    pub l1_ratio: f64,
    #[serde(default)]
    pub vp: VpConfig,
    #[serde(default)]
    pub path: PathSettings,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_terms: 10,
            use_bivariate: false,
            use_nonlinear: true,
            l1_ratio: 0.5,
            vp: VpConfig::default(),
            path: PathSettings::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_terms == 0 {
            return Err("max_terms must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(format!("l1_ratio {} outside [0, 1]", self.l1_ratio));
        }
        if self.vp.max_iters == 0 || self.path.n_lambdas < 2 {
            return Err("solver settings must be positive".into());
        }
        Ok(())
    }

    /// Additionally restrict values to the enumerated benchmark sets.
    pub fn validate_benchmark(&self) -> Result<(), String> {
        self.validate()?;
        if !BENCHMARK_MAX_TERMS.contains(&self.max_terms) {
            return Err(format!(
                "max_terms {} not in benchmark set {:?}",
                self.max_terms, BENCHMARK_MAX_TERMS
            ));
        }
        if !BENCHMARK_L1_RATIOS.contains(&self.l1_ratio) {
            return Err(format!(
                "l1_ratio {} not in benchmark set {:?}",
                self.l1_ratio, BENCHMARK_L1_RATIOS
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        FitConfig::default().validate().unwrap();
        FitConfig {
            max_terms: 10,
            l1_ratio: 0.5,
            ..Default::default()
        }
        .validate_benchmark()
        .unwrap();
    }

    #[test]
    fn benchmark_mode_rejects_off_grid_values() {
        let c = FitConfig {
            max_terms: 7,
            ..Default::default()
        };
        assert!(c.validate().is_ok());
        assert!(c.validate_benchmark().is_err());

        let c = FitConfig {
            l1_ratio: 0.3,
            ..Default::default()
        };
        assert!(c.validate_benchmark().is_err());
    }

    #[test]
    fn zero_budget_is_rejected() {
        let c = FitConfig {
            max_terms: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
