//! Regime classification from occupation trajectories, rate predictions,
//! and the occupation sandwich for the geometric quantities.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geobounds::GeoEstimate;
use crate::rules::{occupation, regularity_ratio, regularity_threshold, OccupationProfile, RuleFamily};
use crate::sampler::derive_seed;
use crate::ustat::EdgeWeight;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `λψ → 0`, `λ√ψ → ∞`: second chaos dominates.
    R1,
    /// `λψ → ∞`: first chaos dominates.
    R2,
    /// `λψ ≍ 1`: both chaoses contribute.
    R3,
    /// `λ√ψ` bounded: no Gaussian limit.
    R4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DominantChaos {
    First,
    Second,
    Both,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    pub regime: Regime,
    /// `λψ` at the largest intensity of the trajectory.
    pub lambda_psi: f64,
    /// `λ√ψ` at the largest intensity of the trajectory.
    pub lambda_sqrt_psi: f64,
    /// Log-log slope of `λψ`.
    pub slope_lambda_psi: f64,
    /// Log-log slope of `λ√ψ`.
    pub slope_lambda_sqrt_psi: f64,
    pub predicted_variance_order: String,
    pub predicted_rate: String,
    pub dominant_chaos: DominantChaos,
}

/// Slope separating a flat trend from a growing or decaying one.
pub const SLOPE_THRESHOLD: f64 = 0.05;
/// Slopes this close to a threshold are reported as ambiguous.
pub const AMBIGUITY_MARGIN: f64 = 0.01;

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn describe(regime: Regime) -> (&'static str, &'static str, DominantChaos) {
    match regime {
        Regime::R1 => ("lambda^2 psi", "(lambda^2 psi)^(-1/2)", DominantChaos::Second),
        Regime::R2 => ("lambda^3 psi^2", "lambda^(-1/2)", DominantChaos::First),
        Regime::R3 => ("lambda", "lambda^(-1/2)", DominantChaos::Both),
        Regime::R4 => ("none: Poisson-type limit", "no CLT", DominantChaos::None),
    }
}

/// Classify a trajectory of `(λ, ψ(λ))` pairs by log-log trend fitting.
pub fn classify(trajectory: &[(f64, f64)]) -> Result<RegimeVerdict> {
    if trajectory.len() < 4 {
        return Err(invalid(format!("need at least 4 trajectory points, got {}", trajectory.len())));
    }
    let mut pts = trajectory.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.iter().any(|&(l, p)| !(l > 0.0 && l.is_finite() && p.is_finite() && p >= 0.0)) {
        return Err(invalid("trajectory values must be positive and finite"));
    }
    if pts.iter().any(|&(_, p)| p == 0.0) {
        return Err(Error::RegularityViolation("psi vanishes along the trajectory".into()));
    }
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    if hi < 10.0 * lo * (1.0 - 1e-12) {
        return Err(invalid(format!("trajectory spans less than one decade ({lo} to {hi})")));
    }
    let ls: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let lpsi: Vec<f64> = pts.iter().map(|&(l, p)| l * p).collect();
    let lsqrt: Vec<f64> = pts.iter().map(|&(l, p)| l * p.sqrt()).collect();
    let s1 = loglog_slope(&ls, &lpsi);
    let s2 = loglog_slope(&ls, &lsqrt);
    let (t, m) = (SLOPE_THRESHOLD, AMBIGUITY_MARGIN);
    let ambiguous = |first, second, slope| Err(Error::AmbiguousVerdict { first, second, slope });
    if (s1 - t).abs() < m {
        return ambiguous(Regime::R3, Regime::R2, s1);
    }
    if (s1 + t).abs() < m {
        return ambiguous(Regime::R3, if s2 > t { Regime::R1 } else { Regime::R4 }, s1);
    }
    let regime = if s1 > t {
        Regime::R2
    } else if s1 >= -t {
        Regime::R3
    } else {
        if (s2 - t).abs() < m {
            return ambiguous(Regime::R1, Regime::R4, s2);
        }
        if s2 > t {
            Regime::R1
        } else {
            Regime::R4
        }
    };
    let (var, rate, dom) = describe(regime);
    let last = pts.len() - 1;
    Ok(RegimeVerdict {
        regime,
        lambda_psi: lpsi[last],
        lambda_sqrt_psi: lsqrt[last],
        slope_lambda_psi: s1,
        slope_lambda_sqrt_psi: s2,
        predicted_variance_order: var.into(),
        predicted_rate: rate.into(),
        dominant_chaos: dom,
    })
}

/// Occupation profiles of a family along `lambdas`, with the regularity ratio checked at each.
pub fn family_profiles(
    family: &RuleFamily,
    lambdas: &[f64],
    samples: usize,
    seed: u64,
    threshold: Option<f64>,
) -> Result<Vec<OccupationProfile>> {
    let limit = threshold.unwrap_or_else(|| regularity_threshold(family.dim()));
    lambdas
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let prof = occupation(family, l, samples, derive_seed(seed, k as u64))?;
            let ratio = regularity_ratio(&prof)?;
            if ratio > limit {
                return Err(Error::RegularityViolation(format!(
                    "psi_hat / psi_check = {ratio:.3} exceeds {limit} at lambda = {l}; estimates unavailable"
                )));
            }
            Ok(prof)
        })
        .collect()
}

/// Regularity check followed by [`classify`].
pub fn classify_family(family: &RuleFamily, lambdas: &[f64], samples: usize, seed: u64) -> Result<RegimeVerdict> {
    let profiles = family_profiles(family, lambdas, samples, seed, None)?;
    classify(&profiles.iter().map(|p| (p.lambda, p.psi)).collect::<Vec<_>>())
}

/// Predicted distance to the Gaussian at `lambda`, with unit constant.
pub fn rate_prediction(verdict: &RegimeVerdict, lambda: f64, psi: f64) -> Result<f64> {
    match verdict.regime {
        Regime::R2 | Regime::R3 => Ok(lambda.powf(-0.5)),
        Regime::R1 => {
            if !(psi > 0.0) {
                return Err(invalid("R1 prediction needs psi > 0"));
            }
            Ok((lambda * lambda * psi).powf(-0.5))
        }
        Regime::R4 => Err(Error::NoClt(Regime::R4)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichEntry {
    pub name: String,
    pub lower: Option<f64>,
    pub value: f64,
    pub upper: f64,
    pub value_stderr: f64,
    pub lower_stderr: f64,
    pub upper_stderr: f64,
    /// `value − lower` (positive when strictly inside).
    pub slack_lower: Option<f64>,
    /// `upper − value`.
    pub slack_upper: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lambda: f64,
    pub tolerance_stderrs: f64,
    pub entries: Vec<SandwichEntry>,
}

impl SandwichReport {
    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(|e| e.holds)
    }
}

/// Check the five occupation sandwiches for a unit edge weight.
pub fn sandwich_check(
    dim: usize,
    g: &EdgeWeight,
    estimate: &GeoEstimate,
    profile: &OccupationProfile,
    tolerance_stderrs: f64,
) -> Result<SandwichReport> {
    if !g.is_unit() {
        return Err(Error::Precondition("occupation sandwiches assume g = 1".into()));
    }
    if (estimate.lambda - profile.lambda).abs() > 1e-9 * profile.lambda {
        return Err(invalid("estimate and occupation profile use different intensities"));
    }
    let f = 2f64.powi(dim as i32);
    let (pc, pcs) = (profile.psi_check, profile.psi_check_stderr);
    let (ph, phs) = (profile.psi_hat, profile.psi_hat_stderr);
    let raw = &estimate.raw;
    let se = &estimate.raw_stderr;
    // (name, value, value stderr, lower power of ψ̌ (None: no lower bound), upper power of ψ̂)
    let rows: [(&str, f64, f64, Option<i32>, i32); 5] = [
        ("lambda^-2 V2^2", 2.0 * raw.pair_sq, 2.0 * se.pair_sq, Some(1), 1),
        ("lambda^-3 C^2", raw.star3_sq, se.star3_sq, Some(2), 2),
        ("lambda^-5 A^2", raw.star5, se.star5, Some(4), 4),
        ("lambda^-4 B^2", raw.cycle4, se.cycle4, None, 3),
        ("lambda^-5 E^2", raw.path5, se.path5, Some(4), 4),
    ];
    let k = tolerance_stderrs;
    let entries = rows
        .iter()
        .map(|&(name, value, vse, lo_pow, up_pow)| {
            let upper = f * ph.powi(up_pow);
            let upper_stderr = f * up_pow as f64 * ph.powi(up_pow - 1) * phs;
            let (lower, lower_stderr) = match lo_pow {
                Some(p) => (Some(pc.powi(p) / f), p as f64 * pc.powi(p - 1) * pcs / f),
                None => (None, 0.0),
            };
            let ok_upper = value <= upper + k * (vse * vse + upper_stderr * upper_stderr).sqrt();
            let ok_lower = lower.is_none_or(|lo| value >= lo - k * (vse * vse + lower_stderr * lower_stderr).sqrt());
            SandwichEntry {
                name: name.into(),
                lower,
                value,
                upper,
                value_stderr: vse,
                lower_stderr,
                upper_stderr,
                slack_lower: lower.map(|lo| value - lo),
                slack_upper: upper - value,
                holds: ok_upper && ok_lower,
            }
        })
        .collect();
    Ok(SandwichReport { lambda: profile.lambda, tolerance_stderrs, entries })
}
