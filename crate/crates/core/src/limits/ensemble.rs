//! Replicate ensembles of `(F, I1, I2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geobounds::variance_terms;
use crate::rules::RuleFamily;
use crate::sampler::{derive_seed, replicate_seeds, sample_poisson, Window};
use crate::scalar::{pairwise_sum, pairwise_sum_by};
use crate::ustat::{decompose, last_penrose, ChaosKernels, EdgeWeight, DEFAULT_QUADRATURE_POINTS};

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizationMode {
    #[default]
    Analytic,
    Empirical,
}

/// Centre and scale used for `F̃ = (F − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mode: StandardizationMode,
    pub center: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub standardization: StandardizationMode,
    pub quadrature_points: usize,
    /// Monte Carlo samples for variances without closed form.
    pub variance_samples: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            standardization: StandardizationMode::Analytic,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
            variance_samples: 200_000,
        }
    }
}

/// Per-replicate columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawColumns {
    pub f: Vec<f64>,
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
    pub n_points: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateEnsemble {
    pub values: Vec<f64>,
    pub raw: Option<RawColumns>,
    pub lambda: f64,
    pub n_replicates: usize,
    pub master_seed: u64,
    pub standardization: Standardization,
    pub mean_analytic: f64,
    pub v1_sq: f64,
    pub v2_sq: f64,
    pub exact_kernels: bool,
}

impl ReplicateEnsemble {
    pub fn var_analytic(&self) -> f64 {
        self.v1_sq + self.v2_sq
    }

    /// Largest `|F − E F − I1 − I2| / (1 + |F|)` over replicates.
    pub fn max_relative_residual(&self) -> Option<f64> {
        let raw = self.raw.as_ref()?;
        Some(
            (0..raw.f.len())
                .map(|k| (raw.f[k] - self.mean_analytic - raw.i1[k] - raw.i2[k]).abs() / (1.0 + raw.f[k].abs()))
                .fold(0.0, f64::max),
        )
    }

    /// Replace the standardization, recomputing `values` from the raw `F`.
    pub fn restandardize(&mut self, mode: StandardizationMode) -> Result<()> {
        let raw = self.raw.as_ref().ok_or_else(|| invalid("raw values are required"))?;
        let s = standardization(mode, &raw.f, self.mean_analytic, self.var_analytic())?;
        self.values = raw.f.iter().map(|f| (f - s.center) / s.scale).collect();
        self.standardization = s;
        Ok(())
    }
}

/// Sample mean and unbiased sample variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = pairwise_sum(xs) / n;
    (m, pairwise_sum_by(xs.len(), &|i| (xs[i] - m).powi(2)) / (n - 1.0))
}

fn standardization(mode: StandardizationMode, f: &[f64], mean: f64, var: f64) -> Result<Standardization> {
    let (center, scale) = match mode {
        StandardizationMode::Analytic => (mean, var.sqrt()),
        StandardizationMode::Empirical => {
            let (m, v) = mean_var(f);
            (m, v.sqrt())
        }
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("cannot standardize: scale is {scale}")));
    }
    Ok(Standardization { mode, center, scale })
}

/// Analytic `(V1², V2²)`: closed forms when the kernels have them, Monte Carlo otherwise.
pub fn analytic_variances(kernels: &ChaosKernels, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if kernels.exact {
        if let Some(v2) = kernels.second_norm_sq() {
            return Ok((kernels.first_norm_sq, v2));
        }
    }
    variance_terms(kernels.rule(), kernels.weight(), kernels.window(), kernels.lambda, samples, seed)
}

/// `n_replicates` independent Poisson patterns at intensity `lambda`, each decomposed into chaoses.
pub fn run_ensemble(
    family: &RuleFamily,
    g: &EdgeWeight,
    window: Window,
    lambda: f64,
    n_replicates: usize,
    master_seed: u64,
    options: &EnsembleOptions,
) -> Result<ReplicateEnsemble> {
    if n_replicates < MIN_REPLICATES {
        return Err(invalid(format!("need at least {MIN_REPLICATES} replicates, got {n_replicates}")));
    }
    let rule = family.at(lambda);
    let kernels = last_penrose(&rule, g, window, lambda, options.quadrature_points, derive_seed(master_seed, 1))?;
    let (v1_sq, v2_sq) = analytic_variances(&kernels, options.variance_samples, derive_seed(master_seed, 2))?;
    let samples = replicate_seeds(master_seed, n_replicates)
        .into_par_iter()
        .map(|s| decompose(&sample_poisson(window, lambda, s)?, &kernels))
        .collect::<Result<Vec<_>>>()?;
    let raw = RawColumns {
        f: samples.iter().map(|s| s.f).collect(),
        i1: samples.iter().map(|s| s.i1).collect(),
        i2: samples.iter().map(|s| s.i2).collect(),
        n_points: samples.iter().map(|s| s.n_points).collect(),
    };
    let st = standardization(options.standardization, &raw.f, kernels.mean, v1_sq + v2_sq)?;
    Ok(ReplicateEnsemble {
        values: raw.f.iter().map(|f| (f - st.center) / st.scale).collect(),
        raw: Some(raw),
        lambda,
        n_replicates,
        master_seed,
        standardization: st,
        mean_analytic: kernels.mean,
        v1_sq,
        v2_sq,
        exact_kernels: kernels.exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::ConnectionRule;

    fn disk(r: f64) -> RuleFamily {
        RuleFamily::fixed(ConnectionRule::ball(1, r).unwrap())
    }

    #[test]
    fn too_few_replicates() {
        let o = EnsembleOptions::default();
        assert!(run_ensemble(&disk(0.1), &EdgeWeight::unit(), Window::unit(1), 10.0, 0, 1, &o).is_err());
        assert!(run_ensemble(&disk(0.1), &EdgeWeight::unit(), Window::unit(1), 10.0, 99, 1, &o).is_err());
    }

    #[test]
    fn moments_match_analytic_values() {
        let o = EnsembleOptions::default();
        let e = run_ensemble(&disk(0.1), &EdgeWeight::unit(), Window::unit(1), 50.0, 4000, 7, &o).unwrap();
        let raw = e.raw.as_ref().unwrap();
        let n = e.n_replicates as f64;
        let (m, v) = mean_var(&raw.f);
        // Closed-form mean λ²(2δ − δ²).
        assert!((e.mean_analytic - 2500.0 * 0.19).abs() < 1e-9);
        assert!((m - e.mean_analytic).abs() < 3.0 * (v / n).sqrt());
        // Var of the sample variance is about 2σ⁴/(n−1) plus a kurtosis term; use the empirical fourth moment.
        let m4 = raw.f.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        let se_var = ((m4 - v * v * (n - 3.0) / (n - 1.0)) / n).sqrt();
        assert!((v - e.var_analytic()).abs() < 3.0 * se_var, "{v} vs {}", e.var_analytic());
        assert!(e.max_relative_residual().unwrap() < 1e-8);
    }

    #[test]
    fn deterministic_and_recorded() {
        let o = EnsembleOptions::default();
        let a = run_ensemble(&disk(0.2), &EdgeWeight::unit(), Window::unit(1), 30.0, 200, 11, &o).unwrap();
        let b = run_ensemble(&disk(0.2), &EdgeWeight::unit(), Window::unit(1), 30.0, 200, 11, &o).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.standardization.mode, StandardizationMode::Analytic);
        let mut c = a.clone();
        c.restandardize(StandardizationMode::Empirical).unwrap();
        assert_eq!(c.standardization.mode, StandardizationMode::Empirical);
        let (m, v) = mean_var(&c.values);
        assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
    }
}
