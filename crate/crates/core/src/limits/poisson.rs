//! Poisson-regime limit check: `F − E F` against a doubled centred Poisson variable.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, Poisson};

use crate::error::{invalid, Error, Result};
use crate::limits::ensemble::{run_ensemble, EnsembleOptions};
use crate::limits::stats::{absolute_moment, bootstrap_stderr, empirical_cumulants, empirical_w1_gaussian};
use crate::regimes::{family_profiles, classify, Regime};
use crate::rules::{RuleFamily, REGULARITY_SAMPLES};
use crate::sampler::{derive_seed, Window};
use crate::ustat::EdgeWeight;

/// Largest relative spread of `λ²ψ` along the trajectory before a warning is issued.
pub const C_SPREAD_LIMIT: f64 = 0.25;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoissonLimitReport {
    pub regime: Regime,
    pub lambdas: Vec<f64>,
    /// `λ²ψ(λ)` at each intensity.
    pub c_trajectory: Vec<f64>,
    pub c: f64,
    pub c_spread: f64,
    pub warnings: Vec<String>,
    pub lambda: f64,
    pub n_replicates: usize,
    /// k-statistics of `F − E F`, orders 1 to 4.
    pub cumulants: Vec<f64>,
    pub cumulant_stderr: Vec<f64>,
    /// `(0, 2c, 4c, 8c)`.
    pub targets: Vec<f64>,
    /// Total variation between the law of `F/2` and Poisson(`c/2`).
    pub tv_distance: f64,
    pub w1_gaussian: f64,
    /// `E|F̃|`.
    pub abs_mean: f64,
    /// `E|F̃|^{4.5}`.
    pub abs_moment_4_5: f64,
}

impl PoissonLimitReport {
    /// `|χ_m − 2^{m−1}c| / (2^{m−1}c)` for `m = 2, 3, 4`; `None` when `c = 0`.
    pub fn relative_errors(&self) -> Option<Vec<f64>> {
        if self.c <= 0.0 {
            return None;
        }
        Some((1..4).map(|m| (self.cumulants[m] - self.targets[m]).abs() / self.targets[m]).collect())
    }

    pub fn cumulants_within(&self, tol: f64) -> bool {
        self.relative_errors().is_some_and(|e| e.iter().all(|&r| r <= tol))
    }
}

/// Total variation between the empirical law of integer values and Poisson(`mean`).
pub fn tv_to_poisson(counts: &[u64], mean: f64) -> Result<f64> {
    if counts.is_empty() {
        return Err(invalid("no values"));
    }
    let n = counts.len() as f64;
    let mut hist: BTreeMap<u64, usize> = BTreeMap::new();
    for &k in counts {
        *hist.entry(k).or_default() += 1;
    }
    if mean <= 0.0 {
        return Ok(1.0 - hist.get(&0).copied().unwrap_or(0) as f64 / n);
    }
    let p = Poisson::new(mean).map_err(|e| invalid(format!("Poisson({mean}): {e}")))?;
    // Σ_k |p̂_k − p_k| over observed k, plus the Poisson mass of unobserved k.
    let mut diff = 0.0;
    let mut seen = 0.0;
    for (&k, &c) in &hist {
        let pk = p.pmf(k);
        diff += (c as f64 / n - pk).abs();
        seen += pk;
    }
    Ok(0.5 * (diff + (1.0 - seen).max(0.0)))
}

/// Compare the law of `F − E F` at the largest intensity with its Poisson-regime limit.
pub fn poisson_limit_test(family: &RuleFamily, lambdas: &[f64], n_replicates: usize, seed: u64) -> Result<PoissonLimitReport> {
    let profiles = family_profiles(family, lambdas, REGULARITY_SAMPLES, derive_seed(seed, 1), None)?;
    let verdict = classify(&profiles.iter().map(|p| (p.lambda, p.psi)).collect::<Vec<_>>())?;
    if verdict.regime != Regime::R4 {
        return Err(Error::Precondition(format!(
            "the Poisson limit needs regime R4, the family is in {:?}",
            verdict.regime
        )));
    }
    let c_trajectory: Vec<f64> = profiles.iter().map(|p| p.lambda * p.lambda * p.psi).collect();
    let top = profiles
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))
        .map(|(k, _)| k)
        .ok_or_else(|| invalid("empty lambda list"))?;
    let lambda = profiles[top].lambda;
    let c = c_trajectory[top];
    let lo = c_trajectory.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c_trajectory.iter().copied().fold(0.0, f64::max);
    let c_spread = if c > 0.0 { (hi - lo) / c } else { hi - lo };
    let mut warnings = Vec::new();
    if c_spread > C_SPREAD_LIMIT {
        warnings.push(format!(
            "lambda^2 psi varies by {:.0}% along the trajectory; the limit may hold only along a subsequence",
            100.0 * c_spread
        ));
    }

    let window = Window::unit(family.dim());
    let ens = run_ensemble(
        family,
        &EdgeWeight::unit(),
        window,
        lambda,
        n_replicates,
        derive_seed(seed, 2),
        &EnsembleOptions::default(),
    )?;
    let raw = ens.raw.as_ref().expect("run_ensemble keeps raw values");
    let centred: Vec<f64> = raw.f.iter().map(|f| f - ens.mean_analytic).collect();
    let cumulants = empirical_cumulants(&centred, 4)?;
    let cumulant_stderr = (1..=4)
        .map(|m| bootstrap_stderr(&centred, 100, derive_seed(seed, 10 + m as u64), |s| {
            empirical_cumulants(s, m).map(|k| k[m - 1]).unwrap_or(f64::NAN)
        }))
        .collect();
    let edges: Vec<u64> = raw
        .f
        .iter()
        .map(|f| (f / 2.0).round().to_u64().unwrap_or(0))
        .collect();
    Ok(PoissonLimitReport {
        regime: verdict.regime,
        lambdas: profiles.iter().map(|p| p.lambda).collect(),
        c_trajectory,
        c,
        c_spread,
        warnings,
        lambda,
        n_replicates,
        cumulants,
        cumulant_stderr,
        targets: vec![0.0, 2.0 * c, 4.0 * c, 8.0 * c],
        tv_distance: tv_to_poisson(&edges, c / 2.0)?,
        w1_gaussian: empirical_w1_gaussian(&ens.values)?,
        abs_mean: absolute_moment(&ens.values, 1.0),
        abs_moment_4_5: absolute_moment(&ens.values, 4.5),
    })
}
