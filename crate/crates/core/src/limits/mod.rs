//! Monte Carlo limit-theorem checks and exact diagram cumulants.

pub mod diagram;
pub mod ensemble;
pub mod poisson;
pub mod stats;

pub use diagram::{diagram_cumulant, enumerate_diagrams, DiagramPartition};
pub use ensemble::{
    run_ensemble, EnsembleOptions, RawColumns, ReplicateEnsemble, Standardization, StandardizationMode,
};
pub use poisson::{poisson_limit_test, tv_to_poisson, PoissonLimitReport};
pub use stats::{
    absolute_moment, correlation, empirical_cumulants, empirical_w1_gaussian, fourth_moment_gap, mardia_kurtosis,
    w1_with_stderr, Estimate,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_W1_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointChaosReport {
    pub n: usize,
    pub w1_first: Option<f64>,
    pub w1_second: Option<f64>,
    pub correlation: Option<f64>,
    pub correlation_threshold: f64,
    pub mardia_b2: Option<f64>,
    pub mardia_statistic: Option<f64>,
    pub w1_threshold: f64,
    pub first_pass: Option<bool>,
    pub second_pass: Option<bool>,
    pub pass: bool,
    pub skipped: Vec<String>,
}

/// Marginal and joint normality of `(I1/V1, I2/V2)`.
pub fn joint_chaos_test(ensemble: &ReplicateEnsemble, w1_threshold: f64) -> Result<JointChaosReport> {
    let raw = ensemble.raw.as_ref().ok_or_else(|| invalid("joint chaos test needs raw I1 and I2"))?;
    let n = raw.i1.len();
    let scaled = |xs: &[f64], var: f64| -> Option<Vec<f64>> {
        (var > 0.0).then(|| xs.iter().map(|x| x / var.sqrt()).collect())
    };
    let a = scaled(&raw.i1, ensemble.v1_sq);
    let b = scaled(&raw.i2, ensemble.v2_sq);
    let mut skipped = Vec::new();
    if a.is_none() {
        skipped.push("first chaos: analytic variance V1^2 is zero".to_string());
    }
    if b.is_none() {
        skipped.push("second chaos: analytic variance V2^2 is zero".to_string());
    }
    let w1_first = a.as_deref().map(empirical_w1_gaussian).transpose()?;
    let w1_second = b.as_deref().map(empirical_w1_gaussian).transpose()?;
    let correlation_threshold = 3.0 / (n as f64).sqrt();
    let (corr, b2, stat) = match (&a, &b) {
        (Some(a), Some(b)) => {
            let (b2, z) = mardia_kurtosis(a, b);
            (Some(correlation(a, b)), Some(b2), Some(z))
        }
        _ => (None, None, None),
    };
    let first_pass = w1_first.map(|w| w < w1_threshold);
    let second_pass = w1_second.map(|w| w < w1_threshold);
    let pass = first_pass == Some(true)
        && second_pass == Some(true)
        && corr.is_some_and(|c| c.abs() < correlation_threshold);
    Ok(JointChaosReport {
        n,
        w1_first,
        w1_second,
        correlation: corr,
        correlation_threshold,
        mardia_b2: b2,
        mardia_statistic: stat,
        w1_threshold,
        first_pass,
        second_pass,
        pass,
        skipped,
    })
}
