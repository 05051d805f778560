//! Connection rules and occupation coefficients.
//!
//! A stationary rule is stored through its difference set `Ĥ`: two points
//! `x != y` are connected iff `x - y ∈ Ĥ`. Built-in rules also know the exact
//! volume of `Ĥ` inside a centred box and can sample uniformly from that
//! intersection; both are used by the Monte Carlo integrators downstream.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::{derive_seed, stream};

/// Profile `f` of the flower-shaped set `{|u2| < f(|u1|), |u1| < f(|u2|)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowerKind {
    /// `f(t) = 1/t`
    Inverse,
    /// `f(t) = 1/t^2`
    InverseSquare,
}

impl FlowerKind {
    fn profile(self, t: f64) -> f64 {
        match self {
            FlowerKind::Inverse => 1.0 / t,
            FlowerKind::InverseSquare => 1.0 / (t * t),
        }
    }

    /// Area of the unscaled flower inside `[0, l]^2`.
    fn quadrant_area(self, l: f64) -> f64 {
        if l <= 1.0 {
            return l * l;
        }
        match self {
            FlowerKind::Inverse => 1.0 + 2.0 * l.ln(),
            FlowerKind::InverseSquare => 3.0 - 2.0 / l,
        }
    }

    /// Height of the quadrant region above abscissa `t`, clipped at `l`.
    fn clipped_height(self, t: f64, l: f64) -> f64 {
        if t <= 1.0 && l <= 1.0 {
            return l;
        }
        let h = match self {
            FlowerKind::Inverse => 1.0 / t,
            FlowerKind::InverseSquare => (1.0 / (t * t)).min(1.0 / t.sqrt()),
        };
        h.max(if t <= 1.0 { 1.0 } else { 0.0 }).min(l)
    }

    /// Abscissa with density proportional to `clipped_height(·, l)` on `[0, l]`.
    fn sample_abscissa(self, rng: &mut impl Rng, l: f64) -> f64 {
        if l <= 1.0 {
            return rng.random::<f64>() * l;
        }
        let total = self.quadrant_area(l);
        let a = rng.random::<f64>() * total;
        let v = rng.random::<f64>();
        match self {
            FlowerKind::Inverse => {
                if a < 1.0 {
                    v / l
                } else {
                    l.powf(2.0 * v - 1.0)
                }
            }
            FlowerKind::InverseSquare => {
                let m1 = 1.0 / l;
                let m2 = 2.0 - 2.0 / l;
                if a < m1 {
                    v / (l * l)
                } else if a < m1 + m2 {
                    let s = 1.0 / l + v * (1.0 - 1.0 / l);
                    s * s
                } else {
                    1.0 / (1.0 / l + v * (1.0 - 1.0 / l))
                }
            }
        }
    }
}

type DiffPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type PairPredicate = Arc<dyn Fn(&[f64], &[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
enum Predicate {
    Difference { pred: DiffPredicate, reach: Option<f64> },
    Pair(PairPredicate),
}

/// User-supplied rule. Stationary rules take the difference `u = x - y`,
/// others the pair `(x, y)`.
#[derive(Clone)]
pub struct CustomRule {
    name: String,
    dim: usize,
    scale: f64,
    predicate: Predicate,
}

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRule")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("scale", &self.scale)
            .field("stationary", &matches!(self.predicate, Predicate::Difference { .. }))
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum ConnectionRule {
    /// `0 < |x - y| < radius` (Euclidean).
    Ball { dim: usize, radius: f64 },
    /// Planar flower set scaled by `scale`, including the square `[-scale, scale]^2`.
    Flower { kind: FlowerKind, scale: f64 },
    Custom(CustomRule),
}

impl ConnectionRule {
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius.is_finite() && radius > 0.0) {
            return Err(invalid(format!("ball rule needs dim > 0 and radius > 0, got ({dim}, {radius})")));
        }
        Ok(ConnectionRule::Ball { dim, radius })
    }

    pub fn flower(kind: FlowerKind, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!("flower scale must be positive, got {scale}")));
        }
        Ok(ConnectionRule::Flower { kind, scale })
    }

    /// Stationary rule from a predicate on the difference `u = x - y`.
    /// `reach`, when known, bounds the sup-norm of every member of `Ĥ`.
    /// The predicate must be symmetric (`pred(u) == pred(-u)`).
    pub fn custom_difference(
        name: impl Into<String>,
        dim: usize,
        reach: Option<f64>,
        pred: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        ConnectionRule::Custom(CustomRule {
            name: name.into(),
            dim,
            scale: 1.0,
            predicate: Predicate::Difference { pred: Arc::new(pred), reach },
        })
    }

    /// Non-stationary rule from a symmetric predicate on pairs.
    pub fn custom_pair(
        name: impl Into<String>,
        dim: usize,
        pred: impl Fn(&[f64], &[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        ConnectionRule::Custom(CustomRule {
            name: name.into(),
            dim,
            scale: 1.0,
            predicate: Predicate::Pair(Arc::new(pred)),
        })
    }

    /// The empty rule: no pair is ever connected.
    pub fn null(dim: usize) -> Self {
        ConnectionRule::custom_difference("null", dim, Some(0.0), |_| false)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConnectionRule::Ball { dim, .. } => *dim,
            ConnectionRule::Flower { .. } => 2,
            ConnectionRule::Custom(c) => c.dim,
        }
    }

    pub fn is_stationary(&self) -> bool {
        !matches!(
            self,
            ConnectionRule::Custom(CustomRule { predicate: Predicate::Pair(_), .. })
        )
    }

    pub fn name(&self) -> String {
        match self {
            ConnectionRule::Ball { radius, .. } => format!("ball(r={radius})"),
            ConnectionRule::Flower { kind, scale } => format!("flower({kind:?}, scale={scale})"),
            ConnectionRule::Custom(c) => c.name.clone(),
        }
    }

    /// Sup-norm bound on the members of `Ĥ`, when the rule is bounded.
    pub fn reach(&self) -> Option<f64> {
        match self {
            ConnectionRule::Ball { radius, .. } => Some(*radius),
            ConnectionRule::Flower { .. } => None,
            ConnectionRule::Custom(c) => match &c.predicate {
                Predicate::Difference { reach, .. } => reach.map(|r| r * c.scale),
                Predicate::Pair(_) => None,
            },
        }
    }

    /// Membership of a difference vector in `Ĥ`. Always false at `u = 0`.
    /// For a non-stationary rule this is `(u, 0) ∈ H`.
    pub fn contains_difference(&self, u: &[f64]) -> bool {
        if u.iter().all(|&c| c == 0.0) {
            return false;
        }
        match self {
            ConnectionRule::Ball { radius, .. } => {
                u.iter().map(|c| c * c).sum::<f64>() < radius * radius
            }
            ConnectionRule::Flower { kind, scale } => {
                let a = (u[0] / scale).abs();
                let b = (u[1] / scale).abs();
                (a <= 1.0 && b <= 1.0) || (b < kind.profile(a) && a < kind.profile(b))
            }
            ConnectionRule::Custom(c) => {
                let v: Vec<f64> = u.iter().map(|x| x / c.scale).collect();
                match &c.predicate {
                    Predicate::Difference { pred, .. } => pred(&v),
                    Predicate::Pair(pred) => pred(&v, &vec![0.0; v.len()]),
                }
            }
        }
    }

    /// Whether `{x, y}` is an edge. Never true on the diagonal.
    pub fn connected(&self, x: &[f64], y: &[f64]) -> bool {
        if x == y {
            return false;
        }
        match self {
            ConnectionRule::Ball { radius, .. } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 < radius * radius
            }
            ConnectionRule::Custom(CustomRule { predicate: Predicate::Pair(pred), scale, .. }) => {
                let xs: Vec<f64> = x.iter().map(|v| v / scale).collect();
                let ys: Vec<f64> = y.iter().map(|v| v / scale).collect();
                pred(&xs, &ys)
            }
            _ => {
                let mut u = [0.0; 8];
                if x.len() <= u.len() {
                    for (k, (a, b)) in x.iter().zip(y).enumerate() {
                        u[k] = a - b;
                    }
                    self.contains_difference(&u[..x.len()])
                } else {
                    let u: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                    self.contains_difference(&u)
                }
            }
        }
    }

    /// The rule with `Ĥ` replaced by `factor · Ĥ`.
    pub fn scaled(&self, factor: f64) -> ConnectionRule {
        match self {
            ConnectionRule::Ball { dim, radius } => ConnectionRule::Ball { dim: *dim, radius: radius * factor },
            ConnectionRule::Flower { kind, scale } => ConnectionRule::Flower { kind: *kind, scale: scale * factor },
            ConnectionRule::Custom(c) => ConnectionRule::Custom(CustomRule { scale: c.scale * factor, ..c.clone() }),
        }
    }

    /// Exact Lebesgue measure of `Ĥ ∩ [-side/2, side/2]^d`, when available in closed form.
    pub fn box_volume(&self, side: f64) -> Option<f64> {
        let h = 0.5 * side;
        match self {
            ConnectionRule::Ball { dim, radius } => ball_box_volume(*dim, *radius, h),
            ConnectionRule::Flower { kind, scale } => Some(4.0 * scale * scale * kind.quadrant_area(h / scale)),
            ConnectionRule::Custom(c) => match c.predicate {
                Predicate::Difference { reach: Some(r), .. } if r == 0.0 => Some(0.0),
                _ => None,
            },
        }
    }

    /// Whether [`Self::sample_in_box`] draws exactly uniform points.
    pub fn has_exact_sampler(&self, side: f64) -> bool {
        self.box_volume(side).is_some_and(|v| v > 0.0)
            && matches!(self, ConnectionRule::Ball { .. } | ConnectionRule::Flower { .. })
    }

    /// Uniform draw from `Ĥ ∩ [-side/2, side/2]^d` into `out`. Returns false when
    /// the rule has no exact sampler or the intersection is empty.
    pub fn sample_in_box(&self, rng: &mut impl Rng, side: f64, out: &mut [f64]) -> bool {
        if !self.has_exact_sampler(side) {
            return false;
        }
        let h = 0.5 * side;
        match self {
            ConnectionRule::Ball { radius, .. } => {
                let m = radius.min(h);
                loop {
                    for c in out.iter_mut() {
                        *c = (2.0 * rng.random::<f64>() - 1.0) * m;
                    }
                    let r2: f64 = out.iter().map(|c| c * c).sum();
                    if r2 < radius * radius && r2 > 0.0 {
                        return true;
                    }
                }
            }
            ConnectionRule::Flower { kind, scale } => {
                let l = h / scale;
                let t = kind.sample_abscissa(rng, l);
                let s = rng.random::<f64>() * kind.clipped_height(t, l);
                let (a, b) = (t * scale, s * scale);
                out[0] = if rng.random::<bool>() { a } else { -a };
                out[1] = if rng.random::<bool>() { b } else { -b };
                true
            }
            ConnectionRule::Custom(_) => false,
        }
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = pi^{d/2} / Gamma(d/2 + 1), via the two-step recursion V_d = 2 pi / d * V_{d-2}.
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

fn ball_box_volume(dim: usize, r: f64, h: f64) -> Option<f64> {
    match dim {
        1 => Some(2.0 * r.min(h)),
        2 => {
            let q = if r <= h {
                0.25 * PI * r * r
            } else if r * r >= 2.0 * h * h {
                h * h
            } else {
                let t = (r * r - h * h).sqrt();
                let prim = |x: f64| 0.5 * (x * (r * r - x * x).max(0.0).sqrt() + r * r * (x / r).asin());
                h * t + prim(h) - prim(t)
            };
            Some(4.0 * q)
        }
        d => {
            if r <= h {
                Some(unit_ball_volume(d) * r.powi(d as i32))
            } else if r * r >= d as f64 * h * h {
                Some((2.0 * h).powi(d as i32))
            } else {
                None
            }
        }
    }
}

/// How the difference set depends on the intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scaling {
    /// `Ĥ_λ = Ĥ` for every `λ`.
    Fixed,
    /// `Ĥ_λ = λ^{-1/d} α_λ G` with `α_λ = coef · λ^exponent`.
    Stationary { coef: f64, exponent: f64 },
}

/// A one-parameter family of rules `λ ↦ Ĥ_λ`.
#[derive(Debug, Clone)]
pub struct RuleFamily {
    pub base: ConnectionRule,
    pub scaling: Scaling,
}

impl RuleFamily {
    pub fn fixed(rule: ConnectionRule) -> Self {
        RuleFamily { base: rule, scaling: Scaling::Fixed }
    }

    /// Rescaled family with `α_λ = λ^alpha_exponent`.
    pub fn stationary(base: ConnectionRule, alpha_exponent: f64) -> Self {
        RuleFamily { base, scaling: Scaling::Stationary { coef: 1.0, exponent: alpha_exponent } }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn at(&self, lambda: f64) -> ConnectionRule {
        match self.scaling {
            Scaling::Fixed => self.base.clone(),
            Scaling::Stationary { coef, exponent } => scaled_rule(&self.base, coef * lambda.powf(exponent), lambda),
        }
    }
}

/// The rule with generating set `λ^{-1/d} α G`.
pub fn scaled_rule(base: &ConnectionRule, alpha: f64, lambda: f64) -> ConnectionRule {
    base.scaled(alpha * lambda.powf(-1.0 / base.dim() as f64))
}

/// Occupation coefficients of `Ĥ_λ` on the windows `Q_1`, `W̌ = Q_{1/2^d}` and `Ŵ = Q_{2^d}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupationProfile {
    pub lambda: f64,
    pub psi: f64,
    pub psi_check: f64,
    pub psi_hat: f64,
    /// Standard error of `psi` (zero for closed forms).
    pub estimator_stderr: f64,
    pub psi_check_stderr: f64,
    pub psi_hat_stderr: f64,
    /// All three estimates vanished with zero variance.
    pub possibly_null: bool,
}

/// Side of `W̌`.
pub const CHECK_SIDE: f64 = 0.5;
/// Side of `Ŵ`.
pub const HAT_SIDE: f64 = 2.0;

/// `(volume, stderr)` of `Ĥ ∩ Q(side)`; closed form when available, hit-or-miss otherwise.
pub fn box_volume_estimate(rule: &ConnectionRule, side: f64, samples: usize, seed: u64) -> (f64, f64) {
    if let Some(v) = rule.box_volume(side) {
        return (v, 0.0);
    }
    let d = rule.dim();
    let mut rng = stream(seed);
    let mut u = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..samples {
        for c in u.iter_mut() {
            *c = (rng.random::<f64>() - 0.5) * side;
        }
        if rule.contains_difference(&u) {
            hits += 1;
        }
    }
    let vol = side.powi(d as i32);
    let p = hits as f64 / samples as f64;
    (vol * p, vol * (p * (1.0 - p) / samples as f64).sqrt())
}

pub fn occupation(family: &RuleFamily, lambda: f64, samples: usize, seed: u64) -> Result<OccupationProfile> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if samples < 1000 {
        return Err(invalid(format!("occupation needs at least 1000 samples, got {samples}")));
    }
    let rule = family.at(lambda);
    if !rule.is_stationary() {
        return Err(Error::NotStationary(rule.name()));
    }
    let (psi, se) = box_volume_estimate(&rule, 1.0, samples, derive_seed(seed, 1));
    let (psi_check, se_check) = box_volume_estimate(&rule, CHECK_SIDE, samples, derive_seed(seed, 2));
    let (psi_hat, se_hat) = box_volume_estimate(&rule, HAT_SIDE, samples, derive_seed(seed, 3));
    let possibly_null = psi == 0.0 && psi_check == 0.0 && psi_hat == 0.0 && se == 0.0 && se_hat == 0.0;
    Ok(OccupationProfile {
        lambda,
        psi,
        psi_check,
        psi_hat,
        estimator_stderr: se,
        psi_check_stderr: se_check,
        psi_hat_stderr: se_hat,
        possibly_null,
    })
}

/// Default acceptance threshold for `ψ̂/ψ̌` in dimension `d`.
pub fn regularity_threshold(dim: usize) -> f64 {
    4f64.powi(dim as i32)
}

pub const REGULARITY_SAMPLES: usize = 200_000;

/// `ψ̂(λ) / ψ̌(λ)`; the caller decides whether the ratio is acceptable.
pub fn check_regularity(family: &RuleFamily, lambda: f64) -> Result<f64> {
    let prof = occupation(family, lambda, REGULARITY_SAMPLES, 0x5EED)?;
    regularity_ratio(&prof)
}

pub fn regularity_ratio(prof: &OccupationProfile) -> Result<f64> {
    if prof.psi_check <= 0.0 {
        return Err(Error::RegularityViolation(format!(
            "psi_check vanishes at lambda = {}",
            prof.lambda
        )));
    }
    for (v, se, name) in [
        (prof.psi_check, prof.psi_check_stderr, "psi_check"),
        (prof.psi_hat, prof.psi_hat_stderr, "psi_hat"),
    ] {
        if se > 0.05 * v {
            return Err(Error::Precondition(format!(
                "{name} relative standard error {:.3} exceeds 5%",
                se / v
            )));
        }
    }
    Ok(prof.psi_hat / prof.psi_check)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn hit_or_miss(rule: &ConnectionRule, side: f64, n: usize, seed: u64) -> (f64, f64) {
        let plain = ConnectionRule::custom_difference("wrap", rule.dim(), None, {
            let r = rule.clone();
            move |u: &[f64]| r.contains_difference(u)
        });
        box_volume_estimate(&plain, side, n, seed)
    }

    #[test]
    fn ball_is_non_diagonal_and_thresholded() {
        let b = ConnectionRule::ball(1, 0.1).unwrap();
        assert!(!b.connected(&[0.3], &[0.3]));
        assert!(b.connected(&[0.0], &[0.05]));
        assert!(!b.connected(&[0.0], &[0.15]));
    }

    #[test]
    fn flower_inverse_square_hand_evaluation() {
        let f = ConnectionRule::flower(FlowerKind::InverseSquare, 1.0).unwrap();
        // |0.2| < 1/2^2 and |2| < 1/0.2^2
        assert!(f.contains_difference(&[2.0, 0.2]));
        assert!(f.contains_difference(&[-2.0, 0.2]));
        assert!(!f.contains_difference(&[2.0, 0.3]));
        assert!(!f.contains_difference(&[0.0, 0.0]));
        assert!(f.contains_difference(&[1.0, 1.0]));
    }

    #[test]
    fn scaled_ball_radius() {
        let b = ConnectionRule::ball(2, 3.0).unwrap();
        match scaled_rule(&b, 1.0, 100.0) {
            ConnectionRule::Ball { radius, .. } => assert!((radius - 0.3).abs() < 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn identity_scaling_preserves_membership() {
        let f = ConnectionRule::flower(FlowerKind::Inverse, 1.0).unwrap();
        let g = scaled_rule(&f, 1.0, 1.0);
        let mut rng = stream(1);
        for _ in 0..1000 {
            let u = [rng.random::<f64>() * 8.0 - 4.0, rng.random::<f64>() * 8.0 - 4.0];
            assert_eq!(f.contains_difference(&u), g.contains_difference(&u));
        }
    }

    #[test]
    fn composed_scaling_matches_base() {
        let lambda: f64 = 250.0;
        let f = ConnectionRule::flower(FlowerKind::Inverse, 1.0).unwrap();
        let g = scaled_rule(&f, lambda.powf(-0.5), lambda);
        let mut rng = stream(2);
        let k = lambda.sqrt() * lambda.sqrt();
        for _ in 0..1000 {
            let u = [rng.random::<f64>() * 0.1 - 0.05, rng.random::<f64>() * 0.1 - 0.05];
            let v = [u[0] * k, u[1] * k];
            assert_eq!(g.contains_difference(&u), f.contains_difference(&v));
        }
    }

    #[test]
    fn ball_occupation_interval_length() {
        let fam = RuleFamily::fixed(ConnectionRule::ball(1, 0.1).unwrap());
        for lambda in [1.0, 10.0, 1e4] {
            let p = occupation(&fam, lambda, 1000, 0).unwrap();
            assert!((p.psi - 0.2).abs() < 1e-15);
            assert_eq!(p.estimator_stderr, 0.0);
        }
    }

    #[test]
    fn null_rule_is_flagged() {
        let fam = RuleFamily::fixed(ConnectionRule::null(2));
        let p = occupation(&fam, 10.0, 1000, 0).unwrap();
        assert!(p.possibly_null);
        let empty = ConnectionRule::custom_difference("empty", 1, None, |_| false);
        let p = occupation(&RuleFamily::fixed(empty), 10.0, 5000, 0).unwrap();
        assert!(p.possibly_null);
        assert!(matches!(regularity_ratio(&p), Err(Error::RegularityViolation(_))));
    }

    #[test]
    fn flower_inverse_occupation_grows_like_log() {
        let fam = RuleFamily::stationary(ConnectionRule::flower(FlowerKind::Inverse, 1.0).unwrap(), 0.0);
        let ratios: Vec<f64> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&l| {
                let p = occupation(&fam, l, 1000, 0).unwrap();
                l * p.psi / l.ln()
            })
            .collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 1.2, "{ratios:?}");
    }

    #[test]
    fn regularity_of_small_ball_is_one() {
        let fam = RuleFamily::fixed(ConnectionRule::ball(1, 0.2).unwrap());
        assert_eq!(check_regularity(&fam, 10.0).unwrap(), 1.0);
    }

    #[test]
    fn regularity_of_flower_inverse_square() {
        let fam = RuleFamily::stationary(ConnectionRule::flower(FlowerKind::InverseSquare, 1.0).unwrap(), 0.0);
        let r = check_regularity(&fam, 1e3).unwrap();
        assert!(r.is_finite() && r < 16.0 && r >= 1.0, "{r}");
    }

    #[test]
    fn closed_form_volumes_match_hit_or_miss() {
        let cases = [
            (ConnectionRule::ball(2, 0.3).unwrap(), 1.0),
            (ConnectionRule::ball(2, 0.6).unwrap(), 1.0),
            (ConnectionRule::ball(2, 0.8).unwrap(), 1.0),
            (ConnectionRule::ball(3, 0.4).unwrap(), 1.0),
            (ConnectionRule::flower(FlowerKind::Inverse, 0.1).unwrap(), 2.0),
            (ConnectionRule::flower(FlowerKind::InverseSquare, 0.05).unwrap(), 1.0),
            (ConnectionRule::flower(FlowerKind::InverseSquare, 0.7).unwrap(), 0.5),
        ];
        for (i, (rule, side)) in cases.iter().enumerate() {
            let exact = rule.box_volume(*side).unwrap();
            let (mc, se) = hit_or_miss(rule, *side, 400_000, i as u64);
            assert!((exact - mc).abs() < 3.0 * se + 1e-12, "{rule:?}: exact {exact}, mc {mc} ± {se}");
        }
    }

    #[test]
    fn exact_sampler_is_uniform_on_intersection() {
        // Compare the mean of |u_1| under the sampler against hit-or-miss
        // restricted to the set.
        let rules = [
            ConnectionRule::flower(FlowerKind::InverseSquare, 0.05).unwrap(),
            ConnectionRule::flower(FlowerKind::Inverse, 0.02).unwrap(),
            ConnectionRule::ball(2, 0.6).unwrap(),
        ];
        for (k, rule) in rules.iter().enumerate() {
            let side = 1.0;
            let mut rng = stream(10 + k as u64);
            let mut u = [0.0; 2];
            let n = 200_000;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                assert!(rule.sample_in_box(&mut rng, side, &mut u));
                assert!(rule.contains_difference(&u), "{u:?}");
                assert!(u.iter().all(|c| c.abs() <= 0.5));
                let a = u[0].abs();
                s1 += a;
                s2 += a * a;
            }
            let m = s1 / n as f64;
            let se_sampler = ((s2 / n as f64 - m * m) / n as f64).sqrt();

            let mut rng = stream(100 + k as u64);
            let (mut t1, mut t2, mut hits) = (0.0, 0.0, 0usize);
            for _ in 0..4_000_000 {
                let v = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                if rule.contains_difference(&v) {
                    hits += 1;
                    t1 += v[0].abs();
                    t2 += v[0] * v[0];
                }
            }
            let mh = t1 / hits as f64;
            let se_hm = ((t2 / hits as f64 - mh * mh) / hits as f64).sqrt();
            let tol = 4.0 * (se_sampler * se_sampler + se_hm * se_hm).sqrt();
            assert!((m - mh).abs() < tol, "rule {k}: sampler {m} vs hit-or-miss {mh}");
        }
    }

    #[test]
    fn windows_are_nested() {
        for fam in [
            RuleFamily::stationary(ConnectionRule::flower(FlowerKind::InverseSquare, 1.0).unwrap(), 0.0),
            RuleFamily::stationary(ConnectionRule::ball(2, 2.0).unwrap(), 0.0),
            RuleFamily::fixed(ConnectionRule::custom_difference("slab", 2, Some(0.3), |u: &[f64]| u[0].abs() < 0.3 && u[1].abs() < 0.3)),
        ] {
            let p = occupation(&fam, 100.0, 100_000, 3).unwrap();
            let tol = 3.0 * (p.psi_check_stderr.powi(2) + p.estimator_stderr.powi(2) + p.psi_hat_stderr.powi(2)).sqrt();
            assert!(p.psi_check <= p.psi + tol && p.psi <= p.psi_hat + tol, "{p:?}");
        }
    }

    proptest! {
        #[test]
        fn rules_are_symmetric(x0 in -2.0f64..2.0, x1 in -2.0f64..2.0, y0 in -2.0f64..2.0, y1 in -2.0f64..2.0, s in 0.05f64..3.0) {
            let x = [x0, x1];
            let y = [y0, y1];
            for rule in [
                ConnectionRule::ball(2, s).unwrap(),
                ConnectionRule::flower(FlowerKind::Inverse, s).unwrap(),
                ConnectionRule::flower(FlowerKind::InverseSquare, s).unwrap(),
            ] {
                prop_assert_eq!(rule.connected(&x, &y), rule.connected(&y, &x));
                prop_assert!(!rule.connected(&x, &x));
            }
        }
    }
}
