//! Monte Carlo estimates of the chaos variances and the bound quantities
//! `A`–`E`, and the Wasserstein bounds assembled from them.
//!
//! One sample is a small labelled tree grown from a uniform root: four
//! children `c2..c5` of the root and one grandchild below each of `c2`, `c3`.
//! Every integral below is read off the same tree, so ratios between the
//! quantities share their noise.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rules::ConnectionRule;
use crate::sampler::{derive_seed, stream, Window};
use crate::scalar::pairwise_sum;
use crate::ustat::EdgeWeight;

/// Integration domains with diagonal restrictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiagonalSet {
    /// Pairs `(x1, x2) ∈ H`.
    Pair,
    /// `x1` joined to `x2` and `x3`.
    H1,
    /// `x1` joined to `x2, …, x5`.
    H2,
    /// The cycle `x1 x2 x3 x4`.
    H3,
    /// A path on five points.
    H4,
}

impl DiagonalSet {
    pub fn arity(self) -> usize {
        match self {
            DiagonalSet::Pair => 2,
            DiagonalSet::H1 => 3,
            DiagonalSet::H2 => 5,
            DiagonalSet::H3 => 4,
            DiagonalSet::H4 => 5,
        }
    }

    /// Edges of the defining graph (0-based labels).
    pub fn edges(self) -> &'static [(usize, usize)] {
        match self {
            DiagonalSet::Pair => &[(0, 1)],
            DiagonalSet::H1 => &[(0, 1), (0, 2)],
            DiagonalSet::H2 => &[(0, 1), (0, 2), (0, 3), (0, 4)],
            DiagonalSet::H3 => &[(0, 1), (1, 2), (2, 3), (3, 0)],
            DiagonalSet::H4 => &[(0, 1), (1, 2), (2, 3), (3, 4)],
        }
    }

    /// Membership of a tuple of points.
    pub fn contains(self, rule: &ConnectionRule, xs: &[&[f64]]) -> bool {
        xs.len() == self.arity() && self.edges().iter().all(|&(a, b)| rule.connected(xs[a], xs[b]))
    }
}

/// Raw `θ`-integrals (no powers of `λ`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RawIntegrals {
    /// `∫_{H} g²`
    pub pair_sq: f64,
    /// `∫_{H} g⁴`
    pub pair_quart: f64,
    /// `∫_{H1} g(x1,x2) g(x1,x3)`
    pub star3: f64,
    /// `∫_{H1} g²(x1,x2) g²(x1,x3)`
    pub star3_sq: f64,
    /// `∫_{H2} Π g(x1, x_i)`
    pub star5: f64,
    /// `∫_{H3} g(x1,x2) g(x3,x4) g(x1,x4) g(x2,x3)`
    pub cycle4: f64,
    /// `∫ g(x1,x2) g(x1,x3) g(x2,x4) g(x3,x5)` over the path `x4 x2 x1 x3 x5`.
    pub path5: f64,
}

pub const N_RAW: usize = 7;

impl RawIntegrals {
    fn from_array(a: [f64; N_RAW]) -> Self {
        RawIntegrals {
            pair_sq: a[0],
            pair_quart: a[1],
            star3: a[2],
            star3_sq: a[3],
            star5: a[4],
            cycle4: a[5],
            path5: a[6],
        }
    }

    pub fn to_array(self) -> [f64; N_RAW] {
        [self.pair_sq, self.pair_quart, self.star3, self.star3_sq, self.star5, self.cycle4, self.path5]
    }
}

/// Variances and bound quantities at one intensity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantities {
    pub v1_sq: f64,
    pub v2_sq: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl Quantities {
    pub fn from_raw(raw: &RawIntegrals, lambda: f64) -> Self {
        let root = |v: f64| v.max(0.0).sqrt();
        Quantities {
            v1_sq: 4.0 * lambda.powi(3) * raw.star3,
            v2_sq: 2.0 * lambda.powi(2) * raw.pair_sq,
            a: lambda.powf(2.5) * root(raw.star5),
            b: lambda.powi(2) * root(raw.cycle4),
            c: lambda.powf(1.5) * root(raw.star3_sq),
            d: lambda * root(raw.pair_quart),
            e: lambda.powf(2.5) * root(raw.path5),
        }
    }

    pub fn variance(&self) -> f64 {
        self.v1_sq + self.v2_sq
    }

    pub fn max_abcde(&self) -> f64 {
        [self.a, self.b, self.c, self.d, self.e].into_iter().fold(0.0, f64::max)
    }
}

/// `max{A, …, E} / V²`, up to a universal constant.
pub fn general_bound(q: &Quantities) -> Result<f64> {
    let v = q.variance();
    if !(v > 0.0) {
        return Err(invalid("total variance is zero"));
    }
    Ok(q.max_abcde() / v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chaos {
    First,
    Second,
}

/// Bound under domination of one chaos: `V2/V1 + A/V1²` or `V1/V2 + max{B,C,D}/V2²`.
pub fn dominating_bound(q: &Quantities, which: Chaos) -> Result<f64> {
    let (v1, v2) = (q.v1_sq.max(0.0).sqrt(), q.v2_sq.max(0.0).sqrt());
    match which {
        Chaos::First => {
            if !(v1 > 0.0 && v2 < v1) {
                return Err(Error::NotApplicable(format!("first chaos does not dominate (V1 = {v1}, V2 = {v2})")));
            }
            Ok(v2 / v1 + q.a / q.v1_sq)
        }
        Chaos::Second => {
            if !(v2 > 0.0 && v1 < v2) {
                return Err(Error::NotApplicable(format!("second chaos does not dominate (V1 = {v1}, V2 = {v2})")));
            }
            Ok(v1 / v2 + q.b.max(q.c).max(q.d) / q.v2_sq)
        }
    }
}

/// Bound summary; serializes with the fixed field list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda: f64,
    pub v1_sq: f64,
    pub v2_sq: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub bound_general: Option<f64>,
    pub bound_first: Option<f64>,
    pub bound_second: Option<f64>,
    pub stderr: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn quantities(&self) -> Quantities {
        Quantities { v1_sq: self.v1_sq, v2_sq: self.v2_sq, a: self.a, b: self.b, c: self.c, d: self.d, e: self.e }
    }
}

/// Full Monte Carlo output: raw integrals, their standard errors and the report.
#[derive(Debug, Clone)]
pub struct GeoEstimate {
    pub lambda: f64,
    pub raw: RawIntegrals,
    pub raw_stderr: RawIntegrals,
    pub report: BoundReport,
    /// Per-sample contributions, kept for rescaling and resampling.
    samples: Vec<[f64; N_RAW]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoConfig {
    pub samples: usize,
    pub seed: u64,
    pub bootstrap: usize,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig { samples: 100_000, seed: 0, bootstrap: 200 }
    }
}

const BLOCK: usize = 4096;

enum Proposal {
    /// Uniform draw from `Ĥ ∩ Q_side`.
    Exact { side: f64, mass: f64 },
    /// Uniform difference in `Q_side`, kept when it lies in `Ĥ`.
    Box { side: f64 },
    /// Uniform point of the window, kept when connected.
    Window,
    Empty,
}

struct Grower<'a> {
    rule: &'a ConnectionRule,
    window: Window,
    proposal: Proposal,
}

impl Grower<'_> {
    fn new(rule: &ConnectionRule, window: Window) -> Grower<'_> {
        let diff_side = 2.0 * window.side;
        let proposal = if rule.reach() == Some(0.0) || rule.box_volume(diff_side) == Some(0.0) {
            Proposal::Empty
        } else if rule.is_stationary() && rule.has_exact_sampler(diff_side) {
            Proposal::Exact { side: diff_side, mass: rule.box_volume(diff_side).unwrap() }
        } else if let (true, Some(r)) = (rule.is_stationary(), rule.reach()) {
            Proposal::Box { side: diff_side.min(2.0 * r) }
        } else {
            Proposal::Window
        };
        Grower { rule, window, proposal }
    }

    /// Draw a neighbour of `parent` into `out`; returns its importance weight (0 if rejected).
    fn child(&self, rng: &mut impl Rng, parent: &[f64], out: &mut [f64]) -> f64 {
        let d = parent.len();
        match self.proposal {
            Proposal::Empty => 0.0,
            Proposal::Exact { side, mass } => {
                self.rule.sample_in_box(rng, side, out);
                for k in 0..d {
                    out[k] = parent[k] - out[k];
                }
                if self.window.contains(out) {
                    mass
                } else {
                    0.0
                }
            }
            Proposal::Box { side } => {
                for c in out.iter_mut() {
                    *c = (rng.random::<f64>() - 0.5) * side;
                }
                let hit = self.rule.contains_difference(out);
                for k in 0..d {
                    out[k] = parent[k] - out[k];
                }
                if hit && self.window.contains(out) {
                    side.powi(d as i32)
                } else {
                    0.0
                }
            }
            Proposal::Window => {
                self.window.sample_uniform(rng, out);
                if self.rule.connected(parent, out) {
                    self.window.volume()
                } else {
                    0.0
                }
            }
        }
    }
}

fn one_sample(grower: &Grower, g: &EdgeWeight, rng: &mut impl Rng, buf: &mut [Vec<f64>; 7]) -> Result<[f64; N_RAW]> {
    let [x1, c2, c3, c4, c5, d2, d3] = buf;
    let vol = grower.window.volume();
    grower.window.sample_uniform(rng, x1);
    let w2 = grower.child(rng, x1, c2);
    let w3 = grower.child(rng, x1, c3);
    let w4 = grower.child(rng, x1, c4);
    let w5 = grower.child(rng, x1, c5);
    let wd2 = grower.child(rng, c2, d2);
    let wd3 = grower.child(rng, c3, d3);
    let gv = |a: &[f64], b: &[f64], w: f64| -> Result<f64> { if w == 0.0 { Ok(0.0) } else { g.eval(a, b) } };
    let g12 = gv(x1, c2, w2)?;
    let g13 = gv(x1, c3, w3)?;
    let g14 = gv(x1, c4, w4)?;
    let g15 = gv(x1, c5, w5)?;
    let g2d = gv(c2, d2, wd2)?;
    let g3d = gv(c3, d3, wd3)?;
    let closing = if w2 * w3 * wd2 != 0.0 && grower.rule.connected(d2, c3) { g.eval(d2, c3)? } else { 0.0 };
    let pair = vol * w2;
    let star3 = pair * w3;
    Ok([
        pair * g12 * g12,
        pair * g12.powi(4),
        star3 * g12 * g13,
        star3 * (g12 * g13).powi(2),
        star3 * w4 * w5 * g12 * g13 * g14 * g15,
        star3 * wd2 * g12 * closing * g13 * g2d,
        star3 * wd2 * wd3 * g12 * g13 * g2d * g3d,
    ])
}

fn column_mean(samples: &[[f64; N_RAW]], k: usize) -> f64 {
    let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
    pairwise_sum(&col) / samples.len() as f64
}

fn column_stderr(samples: &[[f64; N_RAW]], k: usize, mean: f64) -> f64 {
    let n = samples.len() as f64;
    let dev: Vec<f64> = samples.iter().map(|s| (s[k] - mean).powi(2)).collect();
    (pairwise_sum(&dev) / (n - 1.0) / n).sqrt()
}

/// Estimate every raw integral; `samples ≥ 10⁴`.
pub fn estimate_raw(
    rule: &ConnectionRule,
    g: &EdgeWeight,
    window: Window,
    samples: usize,
    seed: u64,
) -> Result<(RawIntegrals, RawIntegrals, Vec<[f64; N_RAW]>)> {
    if samples < 10_000 {
        return Err(invalid(format!("geometric integrals need at least 10^4 samples, got {samples}")));
    }
    if rule.dim() != window.dim {
        return Err(invalid("rule and window dimensions differ"));
    }
    let grower = Grower::new(rule, window);
    let blocks = samples.div_ceil(BLOCK);
    let per_block: Vec<Vec<[f64; N_RAW]>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = BLOCK.min(samples - b * BLOCK);
            let mut rng = stream(derive_seed(seed, b as u64));
            let d = window.dim;
            let mut buf: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; d]);
            (0..len).map(|_| one_sample(&grower, g, &mut rng, &mut buf)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let all: Vec<[f64; N_RAW]> = per_block.into_iter().flatten().collect();
    let mut mean = [0.0; N_RAW];
    let mut se = [0.0; N_RAW];
    for k in 0..N_RAW {
        mean[k] = column_mean(&all, k);
        se[k] = column_stderr(&all, k, mean[k]);
    }
    Ok((RawIntegrals::from_array(mean), RawIntegrals::from_array(se), all))
}

/// Standard errors of the derived quantities by the delta method.
fn quantity_stderr(raw: &RawIntegrals, se: &RawIntegrals, lambda: f64) -> Quantities {
    let root_se = |v: f64, s: f64| if v > 0.0 { s / (2.0 * v.sqrt()) } else { s.sqrt() };
    Quantities {
        v1_sq: 4.0 * lambda.powi(3) * se.star3,
        v2_sq: 2.0 * lambda.powi(2) * se.pair_sq,
        a: lambda.powf(2.5) * root_se(raw.star5, se.star5),
        b: lambda.powi(2) * root_se(raw.cycle4, se.cycle4),
        c: lambda.powf(1.5) * root_se(raw.star3_sq, se.star3_sq),
        d: lambda * root_se(raw.pair_quart, se.pair_quart),
        e: lambda.powf(2.5) * root_se(raw.path5, se.path5),
    }
}

impl GeoEstimate {
    /// The same sample re-read at another intensity (the rule is held fixed).
    pub fn at_lambda(&self, lambda: f64, bootstrap: usize, seed: u64) -> Result<GeoEstimate> {
        build(self.raw, self.raw_stderr, self.samples.clone(), lambda, bootstrap, seed)
    }

    pub fn quantities(&self) -> Quantities {
        self.report.quantities()
    }

    pub fn samples(&self) -> usize {
        self.samples.len()
    }
}

fn build(
    raw: RawIntegrals,
    raw_se: RawIntegrals,
    samples: Vec<[f64; N_RAW]>,
    lambda: f64,
    bootstrap: usize,
    seed: u64,
) -> Result<GeoEstimate> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let q = Quantities::from_raw(&raw, lambda);
    let qse = quantity_stderr(&raw, &raw_se, lambda);
    let mut stderr = BTreeMap::new();
    for (name, v) in [
        ("v1_sq", qse.v1_sq),
        ("v2_sq", qse.v2_sq),
        ("a", qse.a),
        ("b", qse.b),
        ("c", qse.c),
        ("d", qse.d),
        ("e", qse.e),
    ] {
        stderr.insert(name.to_string(), v);
    }
    let bound_general = general_bound(&q).ok();
    if bootstrap > 1 && !samples.is_empty() {
        let n = samples.len();
        let stats: Vec<(f64, f64)> = (0..bootstrap)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream(derive_seed(seed ^ 0xB007, b as u64));
                let mut acc = [0.0; N_RAW];
                for _ in 0..n {
                    let s = &samples[rng.random_range(0..n)];
                    for k in 0..N_RAW {
                        acc[k] += s[k];
                    }
                }
                let r = RawIntegrals::from_array(acc.map(|v| v / n as f64));
                let qb = Quantities::from_raw(&r, lambda);
                (qb.max_abcde(), general_bound(&qb).unwrap_or(f64::NAN))
            })
            .collect();
        let sd = |xs: Vec<f64>| {
            let xs: Vec<f64> = xs.into_iter().filter(|v| v.is_finite()).collect();
            if xs.len() < 2 {
                return f64::NAN;
            }
            let m = pairwise_sum(&xs) / xs.len() as f64;
            (xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        stderr.insert("max_abcde".into(), sd(stats.iter().map(|s| s.0).collect()));
        let bsd = sd(stats.iter().map(|s| s.1).collect());
        if bsd.is_finite() {
            stderr.insert("bound_general".into(), bsd);
        }
    }
    let report = BoundReport {
        lambda,
        v1_sq: q.v1_sq,
        v2_sq: q.v2_sq,
        a: q.a,
        b: q.b,
        c: q.c,
        d: q.d,
        e: q.e,
        bound_general,
        bound_first: dominating_bound(&q, Chaos::First).ok(),
        bound_second: dominating_bound(&q, Chaos::Second).ok(),
        stderr,
    };
    Ok(GeoEstimate { lambda, raw, raw_stderr: raw_se, report, samples })
}

/// All quantities for `rule` at intensity `lambda` from one shared sample.
pub fn geometric_bounds(
    rule: &ConnectionRule,
    g: &EdgeWeight,
    window: Window,
    lambda: f64,
    config: &GeoConfig,
) -> Result<GeoEstimate> {
    let (raw, se, samples) = estimate_raw(rule, g, window, config.samples, config.seed)?;
    build(raw, se, samples, lambda, config.bootstrap, config.seed)
}

/// `(V1², V2²)` at intensity `lambda`.
pub fn variance_terms(
    rule: &ConnectionRule,
    g: &EdgeWeight,
    window: Window,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (raw, _, _) = estimate_raw(rule, g, window, samples, seed)?;
    let q = Quantities::from_raw(&raw, lambda);
    Ok((q.v1_sq, q.v2_sq))
}

/// Hit-or-miss estimate of `∫_{W^k ∩ set} Π_{edges} g^power`, without any `λ` factor.
pub fn diagonal_integral(
    set: DiagonalSet,
    rule: &ConnectionRule,
    g: &EdgeWeight,
    power: i32,
    window: Window,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 10_000 {
        return Err(invalid(format!("diagonal integrals need at least 10^4 samples, got {samples}")));
    }
    let k = set.arity();
    let d = window.dim;
    let mut rng = stream(seed);
    let mut pts = vec![vec![0.0; d]; k];
    let vol = window.volume().powi(k as i32);
    let mut vals = Vec::with_capacity(samples);
    for _ in 0..samples {
        for p in pts.iter_mut() {
            window.sample_uniform(&mut rng, p);
        }
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let v = if set.contains(rule, &refs) {
            let mut prod = 1.0;
            for &(a, b) in set.edges() {
                prod *= g.eval(refs[a], refs[b])?.powi(power);
            }
            prod * vol
        } else {
            0.0
        };
        vals.push(v);
    }
    let n = samples as f64;
    let m = pairwise_sum(&vals) / n;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((m, (var / n).sqrt()))
}
