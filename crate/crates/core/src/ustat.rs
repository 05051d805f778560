//! Edge-counting U-statistics and their two-term chaos decomposition.
//!
//! `F` sums over *ordered* pairs of distinct points, so the undirected edge
//! count is `F / 2` and the second kernel is `f2 = g · 1_H` with no factor ½.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::numeric::{gauss_legendre, integrate_pieces};
use crate::rules::ConnectionRule;
use crate::sampler::{stream, PointPattern, Window};

type WeightFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Symmetric bounded edge weight `g`.
#[derive(Clone)]
pub struct EdgeWeight {
    name: String,
    bound: f64,
    func: Option<WeightFn>,
    constant: f64,
}

impl fmt::Debug for EdgeWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EdgeWeight({}, |g| <= {})", self.name, self.bound)
    }
}

impl Default for EdgeWeight {
    fn default() -> Self {
        EdgeWeight::unit()
    }
}

impl EdgeWeight {
    pub fn unit() -> Self {
        EdgeWeight::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        EdgeWeight { name: format!("const({c})"), bound: c.abs(), func: None, constant: c }
    }

    /// A general weight with a declared bound on `|g|`. Unbounded weights are rejected.
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        g: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(invalid(format!("edge weight bound must be finite, got {bound}")));
        }
        Ok(EdgeWeight { name: name.into(), bound, func: Some(Arc::new(g)), constant: f64::NAN })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_unit(&self) -> bool {
        self.func.is_none() && self.constant == 1.0
    }

    pub fn is_constant(&self) -> Option<f64> {
        self.func.is_none().then_some(self.constant)
    }

    pub fn is_zero(&self) -> bool {
        self.bound == 0.0
    }

    /// `g(x, y)`, with the declared bound and finiteness enforced.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match &self.func {
            None => Ok(self.constant),
            Some(f) => {
                let v = f(x, y);
                if !v.is_finite() || v.abs() > self.bound * (1.0 + 1e-12) {
                    return Err(invalid(format!(
                        "edge weight {} returned {v} outside its bound {}",
                        self.name, self.bound
                    )));
                }
                Ok(v)
            }
        }
    }
}

/// Visit every unordered connected pair `i < j` once.
pub fn for_each_edge(pattern: &PointPattern, rule: &ConnectionRule, mut visit: impl FnMut(usize, usize)) {
    let n = pattern.len();
    let d = pattern.dim();
    let side = pattern.window.side;
    let cell = rule.reach().filter(|&r| r > 0.0 && r < side);
    let per_axis = cell.map(|r| (side / r).ceil() as u64);
    let grid_ok = per_axis.is_some_and(|m| (m as f64).powi(d as i32) < 1e15) && d <= 6;
    if rule.reach() == Some(0.0) {
        return;
    }
    if !grid_ok || n < 32 {
        for i in 0..n {
            for j in i + 1..n {
                if rule.connected(pattern.point(i), pattern.point(j)) {
                    visit(i, j);
                }
            }
        }
        return;
    }
    let r = cell.unwrap();
    let m = per_axis.unwrap();
    let h = 0.5 * side;
    let coord = |x: f64| (((x + h) / r).floor().max(0.0) as u64).min(m - 1);
    let key_of = |cells: &[u64]| cells.iter().fold(0u64, |acc, &c| acc * m + c);
    let cells: Vec<Vec<u64>> = pattern.points().map(|p| p.iter().map(|&x| coord(x)).collect()).collect();
    let mut order: Vec<(u64, usize)> = cells.iter().enumerate().map(|(i, c)| (key_of(c), i)).collect();
    order.sort_unstable();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|mut k| {
            (0..d)
                .map(|_| {
                    let o = (k % 3) as i64 - 1;
                    k /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let mut nb = vec![0u64; d];
    for i in 0..n {
        'offset: for off in &offsets {
            for a in 0..d {
                let c = cells[i][a] as i64 + off[a];
                if c < 0 || c >= m as i64 {
                    continue 'offset;
                }
                nb[a] = c as u64;
            }
            let key = key_of(&nb);
            let start = order.partition_point(|&(k, _)| k < key);
            for &(k, j) in &order[start..] {
                if k != key {
                    break;
                }
                if j > i && rule.connected(pattern.point(i), pattern.point(j)) {
                    visit(i, j);
                }
            }
        }
    }
}

/// `F = Σ_{x≠y} g(x,y) 1_H(x,y)` over ordered pairs.
pub fn ustat_value(pattern: &PointPattern, rule: &ConnectionRule, g: &EdgeWeight) -> Result<f64> {
    if g.is_zero() {
        return Ok(0.0);
    }
    if let Some(c) = g.is_constant() {
        let mut edges = 0u64;
        for_each_edge(pattern, rule, |_, _| edges += 1);
        return Ok(2.0 * c * edges as f64);
    }
    let mut total = 0.0;
    let mut err = None;
    for_each_edge(pattern, rule, |i, j| {
        let (x, y) = (pattern.point(i), pattern.point(j));
        match (g.eval(x, y), g.eval(y, x)) {
            (Ok(a), Ok(b)) => total += a + b,
            (Err(e), _) | (_, Err(e)) => err = err.take().or(Some(e)),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// `D_z F`: the change in `F` when `z` is added to the pattern.
pub fn add_one_cost(pattern: &PointPattern, z: &[f64], rule: &ConnectionRule, g: &EdgeWeight) -> Result<f64> {
    if z.len() != pattern.dim() {
        return Err(invalid("point dimension does not match the pattern"));
    }
    let mut total = 0.0;
    for x in pattern.points() {
        if x == z {
            return Err(invalid(format!("added point {z:?} duplicates an existing point")));
        }
        if rule.connected(z, x) {
            total += g.eval(z, x)? + g.eval(x, z)?;
        }
    }
    Ok(total)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

/// `θ²(W² ∩ H)` for a ball of radius `r` in a box of side `s`, when known in closed form.
pub fn ball_pair_measure(dim: usize, r: f64, s: f64) -> Option<f64> {
    match dim {
        1 => Some(s * s - (s - r).max(0.0).powi(2)),
        2 if r <= s => {
            let pi = std::f64::consts::PI;
            Some(pi * r * r * s * s - 8.0 * r.powi(3) * s / 3.0 + 0.5 * r.powi(4))
        }
        _ => None,
    }
}

/// `∫_a^b min(c, √(r² − u²)) du` for `[a, b] ⊂ [−r, r]` and `c ≥ 0`.
fn clipped_chord_integral(a: f64, b: f64, c: f64, r: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let prim = |u: f64| {
        let u = u.clamp(-r, r);
        0.5 * (u * (r * r - u * u).max(0.0).sqrt() + r * r * (u / r).asin())
    };
    let arc = |lo: f64, hi: f64| if hi > lo { prim(hi) - prim(lo) } else { 0.0 };
    if c >= r {
        return arc(a, b);
    }
    let t = (r * r - c * c).sqrt();
    let flat = (b.min(t) - a.max(-t)).max(0.0) * c;
    flat + arc(a, b.min(-t)) + arc(a.max(t), b)
}

/// `ℓ(B(x, r) ∩ [−h, h]^d)` for `d ∈ {1, 2}`.
pub fn ball_window_overlap(x: &[f64], r: f64, h: f64) -> f64 {
    match x.len() {
        1 => (x[0] + h).min(r) + (h - x[0]).min(r),
        2 => {
            let a = (-h - x[0]).max(-r);
            let b = (h - x[0]).min(r);
            clipped_chord_integral(a, b, h - x[1], r) + clipped_chord_integral(a, b, h + x[1], r)
        }
        _ => unreachable!("closed-form overlap only in dimension 1 or 2"),
    }
}

#[derive(Clone)]
enum FirstKernel {
    /// Unit weight ball in `d ≤ 2`: `2λ ℓ(B(x, r) ∩ W)`.
    Ball { radius: f64 },
    /// Shared difference sample `u_k` with total mass: the inner integral is
    /// `mass / N · Σ_k 1_W(x − u_k) g(x, x − u_k)`.
    Differences { us: Vec<f64>, mass: f64 },
    /// Shared uniform sample `y_k` of the window.
    Uniform { ys: Vec<f64> },
    Zero,
}

/// Kernels `(mean, f1, f2)` of the decomposition `F = E F + I1(f1) + I2(f2)`.
#[derive(Clone)]
pub struct ChaosKernels {
    pub mean: f64,
    pub lambda: f64,
    /// `λ ∫_W f1 dθ`.
    pub first_integral: f64,
    /// `λ ∫_W f1² dθ`, the variance of the first chaos.
    pub first_norm_sq: f64,
    /// True when every ingredient is a closed form (or exact quadrature).
    pub exact: bool,
    rule: ConnectionRule,
    weight: EdgeWeight,
    window: Window,
    first: FirstKernel,
}

impl fmt::Debug for ChaosKernels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChaosKernels")
            .field("mean", &self.mean)
            .field("lambda", &self.lambda)
            .field("first_integral", &self.first_integral)
            .field("first_norm_sq", &self.first_norm_sq)
            .field("exact", &self.exact)
            .finish()
    }
}

impl ChaosKernels {
    pub fn rule(&self) -> &ConnectionRule {
        &self.rule
    }

    pub fn weight(&self) -> &EdgeWeight {
        &self.weight
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// `f1(x) = 2λ ∫_W g(x, y) 1_H(x, y) dy`.
    pub fn f1(&self, x: &[f64]) -> Result<f64> {
        let d = self.window.dim;
        let inner = match &self.first {
            FirstKernel::Zero => 0.0,
            FirstKernel::Ball { radius } => ball_window_overlap(x, *radius, self.window.half()),
            FirstKernel::Differences { us, mass } => {
                let mut acc = 0.0;
                let mut y = vec![0.0; d];
                for u in us.chunks_exact(d) {
                    for k in 0..d {
                        y[k] = x[k] - u[k];
                    }
                    if self.window.contains(&y) && self.rule.connected(x, &y) {
                        acc += self.weight.eval(x, &y)?;
                    }
                }
                acc * mass / (us.len() / d) as f64
            }
            FirstKernel::Uniform { ys } => {
                let mut acc = 0.0;
                for y in ys.chunks_exact(d) {
                    if self.rule.connected(x, y) {
                        acc += self.weight.eval(x, y)?;
                    }
                }
                acc * self.window.volume() / (ys.len() / d) as f64
            }
        };
        let scale = self.weight.is_constant().filter(|_| matches!(self.first, FirstKernel::Ball { .. }));
        Ok(2.0 * self.lambda * inner * scale.unwrap_or(1.0))
    }

    /// `f2(x, y) = g(x, y) 1_H(x, y)`.
    pub fn f2(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if self.rule.connected(x, y) {
            self.weight.eval(x, y)
        } else {
            Ok(0.0)
        }
    }

    /// `2λ² ∫∫ f2² dθ²`, the variance of the second chaos, when known in closed form.
    pub fn second_norm_sq(&self) -> Option<f64> {
        let c = self.weight.is_constant()?;
        match self.rule {
            ConnectionRule::Ball { dim, radius } => {
                ball_pair_measure(dim, radius, self.window.side).map(|m| 2.0 * self.lambda.powi(2) * c * c * m)
            }
            _ => None,
        }
    }
}

/// `E F = λ² ∫∫_{W²} g 1_H dθ²`; closed form for constant weights on balls, Monte Carlo otherwise.
pub fn campbell_mean(
    rule: &ConnectionRule,
    g: &EdgeWeight,
    window: Window,
    lambda: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_lambda(lambda)?;
    if g.is_zero() {
        return Ok(0.0);
    }
    if let (Some(c), ConnectionRule::Ball { dim, radius }) = (g.is_constant(), rule) {
        if let Some(m) = ball_pair_measure(*dim, *radius, window.side) {
            return Ok(lambda * lambda * c * m);
        }
    }
    if mc_samples < 1000 {
        return Err(invalid(format!("campbell_mean needs at least 1000 samples, got {mc_samples}")));
    }
    let d = window.dim;
    let mut rng = stream(seed);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut acc = 0.0;
    let diff_side = 2.0 * window.side;
    let mass = if rule.is_stationary() && rule.has_exact_sampler(diff_side) {
        rule.box_volume(diff_side)
    } else {
        None
    };
    for _ in 0..mc_samples {
        window.sample_uniform(&mut rng, &mut x);
        match mass {
            Some(_) => {
                rule.sample_in_box(&mut rng, diff_side, &mut y);
                for k in 0..d {
                    y[k] = x[k] - y[k];
                }
                if !window.contains(&y) {
                    continue;
                }
            }
            None => window.sample_uniform(&mut rng, &mut y),
        }
        if rule.connected(&x, &y) {
            acc += g.eval(&x, &y)?;
        }
    }
    let vol = window.volume();
    let scale = match mass {
        Some(m) => vol * m,
        None => vol * vol,
    };
    Ok(lambda * lambda * scale * acc / mc_samples as f64)
}

/// Default number of inner quadrature samples for non-closed-form kernels.
pub const DEFAULT_QUADRATURE_POINTS: usize = 10_000;

/// Last–Penrose kernels of `F` at intensity `lambda`.
pub fn last_penrose(
    rule: &ConnectionRule,
    g: &EdgeWeight,
    window: Window,
    lambda: f64,
    quadrature_points: usize,
    seed: u64,
) -> Result<ChaosKernels> {
    check_lambda(lambda)?;
    if rule.dim() != window.dim {
        return Err(invalid(format!("rule dimension {} differs from window dimension {}", rule.dim(), window.dim)));
    }
    let mut out = ChaosKernels {
        mean: 0.0,
        lambda,
        first_integral: 0.0,
        first_norm_sq: 0.0,
        exact: true,
        rule: rule.clone(),
        weight: g.clone(),
        window,
        first: FirstKernel::Zero,
    };
    if g.is_zero() {
        return Ok(out);
    }
    let d = window.dim;
    let h = window.half();
    if let (Some(c), ConnectionRule::Ball { dim, radius }) = (g.is_constant(), rule) {
        if *dim <= 2 {
            out.first = FirstKernel::Ball { radius: *radius };
            let r = *radius;
            let coef = 2.0 * lambda * c;
            let breaks = [-h + r, h - r];
            let (int1, int2) = if *dim == 1 {
                let m = |x: f64| ball_window_overlap(&[x], r, h);
                (
                    integrate_pieces(m, -h, h, &breaks, 4),
                    integrate_pieces(|x| m(x).powi(2), -h, h, &breaks, 4),
                )
            } else {
                let (xs, ws) = gauss_legendre(24);
                // Panels aligned with the kinks of the overlap in each coordinate.
                let mut cuts: Vec<f64> = vec![-h, h];
                cuts.extend(breaks.iter().copied().filter(|&t| t > -h && t < h));
                cuts.sort_by(f64::total_cmp);
                let mut panels = Vec::new();
                for w in cuts.windows(2) {
                    let k = 8;
                    for j in 0..k {
                        let lo = w[0] + (w[1] - w[0]) * j as f64 / k as f64;
                        let hi = w[0] + (w[1] - w[0]) * (j + 1) as f64 / k as f64;
                        panels.push((lo, hi));
                    }
                }
                let mut nodes = Vec::new();
                for &(lo, hi) in &panels {
                    for (x, w) in xs.iter().zip(&ws) {
                        nodes.push((0.5 * (lo + hi) + 0.5 * (hi - lo) * x, 0.5 * (hi - lo) * w));
                    }
                }
                let (mut a, mut b) = (0.0, 0.0);
                for &(x0, w0) in &nodes {
                    for &(x1, w1) in &nodes {
                        let m = ball_window_overlap(&[x0, x1], r, h);
                        a += w0 * w1 * m;
                        b += w0 * w1 * m * m;
                    }
                }
                (a, b)
            };
            out.first_integral = lambda * coef * int1;
            out.first_norm_sq = lambda * coef * coef * int2;
            out.mean = match ball_pair_measure(*dim, r, window.side) {
                Some(m) => lambda * lambda * c * m,
                None => 0.5 * out.first_integral,
            };
            out.exact = *dim == 1;
            return Ok(out);
        }
    }
    if quadrature_points < 1000 {
        return Err(invalid(format!("quadrature needs at least 1000 points, got {quadrature_points}")));
    }
    out.exact = false;
    let mut rng = stream(seed);
    let diff_side = 2.0 * window.side;
    if rule.is_stationary() && rule.has_exact_sampler(diff_side) {
        let mass = rule.box_volume(diff_side).unwrap_or(0.0);
        let mut us = vec![0.0; quadrature_points * d];
        for u in us.chunks_exact_mut(d) {
            rule.sample_in_box(&mut rng, diff_side, u);
        }
        out.first = FirstKernel::Differences { us, mass };
    } else {
        let mut ys = vec![0.0; quadrature_points * d];
        for y in ys.chunks_exact_mut(d) {
            window.sample_uniform(&mut rng, y);
        }
        out.first = FirstKernel::Uniform { ys };
    }
    let outer = (quadrature_points / 10).max(200);
    let mut x = vec![0.0; d];
    let mut s2 = 0.0;
    let mut xrng = stream(seed ^ 0x0F1E_2D3C_4B5A_6978);
    for _ in 0..outer {
        window.sample_uniform(&mut xrng, &mut x);
        let v = out.f1(&x)?;
        s2 += v * v;
    }
    out.first_norm_sq = lambda * window.volume() * s2 / outer as f64;
    out.mean = campbell_mean(rule, g, window, lambda, quadrature_points * 10, seed ^ 0xCA3B)?;
    // Fubini: λ∫f1 = 2 E F.
    out.first_integral = 2.0 * out.mean;
    Ok(out)
}

/// One replicate of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosSample {
    pub f: f64,
    pub i1: f64,
    pub i2: f64,
    pub n_points: usize,
}

impl ChaosSample {
    /// `F − E F − I1 − I2`.
    pub fn residual(&self, mean: f64) -> f64 {
        self.f - mean - self.i1 - self.i2
    }
}

/// `Σ_{x∈η} f1(x)`.
pub fn first_kernel_sum(pattern: &PointPattern, kernels: &ChaosKernels) -> Result<f64> {
    let mut terms = Vec::with_capacity(pattern.len());
    for x in pattern.points() {
        terms.push(kernels.f1(x)?);
    }
    Ok(crate::scalar::pairwise_sum(&terms))
}

/// `I1(f1) = Σ_{x∈η} f1(x) − λ ∫_W f1 dθ`.
pub fn eval_i1(pattern: &PointPattern, kernels: &ChaosKernels) -> Result<f64> {
    Ok(first_kernel_sum(pattern, kernels)? - kernels.first_integral)
}

/// `I2(f2) = Σ_{x≠y} f2 − 2λ Σ_x ∫ f2(x, ·) dθ + λ² ∫∫ f2 dθ²`.
pub fn eval_i2(pattern: &PointPattern, kernels: &ChaosKernels) -> Result<f64> {
    let f = ustat_value(pattern, &kernels.rule, &kernels.weight)?;
    Ok(f - first_kernel_sum(pattern, kernels)? + kernels.mean)
}

/// `F`, `I1`, `I2` for one pattern, sharing the work between them.
pub fn decompose(pattern: &PointPattern, kernels: &ChaosKernels) -> Result<ChaosSample> {
    let f = ustat_value(pattern, &kernels.rule, &kernels.weight)?;
    let s1 = first_kernel_sum(pattern, kernels)?;
    Ok(ChaosSample {
        f,
        i1: s1 - kernels.first_integral,
        i2: f - s1 + kernels.mean,
        n_points: pattern.len(),
    })
}
