//! Kernel calculus on product grids: star contractions, symmetrization,
//! `L^p` norms, and the contraction bound `B3`.
//!
//! A kernel of order `q` is an array over `q`-tuples of cells of a shared
//! [`CellGrid`]. Cell measures already include the intensity, so integrals
//! are plain weighted sums. All reductions use pairwise summation.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::sampler::{poisson_count, replicate_seeds, stream};
use crate::scalar::{pairwise_sum, pairwise_sum_by, Scalar};

/// Largest array a single operation may allocate.
pub const MAX_ENTRIES: usize = 10_000_000;
/// Largest number of multiply-adds a single contraction may perform.
pub const MAX_WORK: f64 = 2e10;
/// Largest order accepted by [`GridKernel::symmetrize`].
pub const MAX_SYMMETRIZE_ORDER: usize = 5;

/// Cells with their measures under `μ = λθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid<T: Scalar> {
    measures: Vec<T>,
}

impl<T: Scalar> CellGrid<T> {
    pub fn new(measures: Vec<T>) -> Result<Self> {
        if measures.is_empty() {
            return Err(invalid("grid needs at least one cell"));
        }
        if measures.iter().any(|m| !m.is_finite() || *m < T::zero()) {
            return Err(invalid("cell measures must be finite and non-negative"));
        }
        Ok(CellGrid { measures })
    }

    /// `n` cells of equal measure summing to `total`.
    pub fn uniform(n: usize, total: T) -> Result<Self> {
        CellGrid::new(vec![total / T::of(n as f64); n])
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn measure(&self, cell: usize) -> T {
        self.measures[cell]
    }

    pub fn measures(&self) -> &[T] {
        &self.measures
    }

    pub fn total(&self) -> T {
        pairwise_sum(&self.measures)
    }
}

/// A function on the `order`-fold product of a grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridKernel<T: Scalar> {
    grid: Arc<CellGrid<T>>,
    order: usize,
    values: Vec<T>,
}

fn entries(n: usize, order: usize) -> Result<usize> {
    let mut total: usize = 1;
    for _ in 0..order {
        total = total
            .checked_mul(n)
            .filter(|&t| t <= MAX_ENTRIES)
            .ok_or_else(|| Error::UnsupportedSize(format!("{n}^{order} entries exceed {MAX_ENTRIES}")))?;
    }
    Ok(total)
}

fn decode(mut lin: usize, n: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = lin % n;
        lin /= n;
    }
}

fn encode(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

impl<T: Scalar> GridKernel<T> {
    pub fn zeros(grid: Arc<CellGrid<T>>, order: usize) -> Result<Self> {
        let len = entries(grid.len(), order)?;
        Ok(GridKernel { grid, order, values: vec![T::zero(); len] })
    }

    pub fn from_values(grid: Arc<CellGrid<T>>, order: usize, values: Vec<T>) -> Result<Self> {
        let len = entries(grid.len(), order)?;
        if values.len() != len {
            return Err(invalid(format!("expected {len} values for order {order}, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("kernel values must be finite"));
        }
        Ok(GridKernel { grid, order, values })
    }

    pub fn from_fn(grid: Arc<CellGrid<T>>, order: usize, f: impl Fn(&[usize]) -> T) -> Result<Self> {
        let n = grid.len();
        let len = entries(n, order)?;
        let mut idx = vec![0; order];
        let values = (0..len)
            .map(|lin| {
                decode(lin, n, &mut idx);
                f(&idx)
            })
            .collect();
        GridKernel::from_values(grid, order, values)
    }

    pub fn grid(&self) -> &Arc<CellGrid<T>> {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.values[encode(idx, self.grid.len())]
    }

    /// Scalar value of an order-0 kernel.
    pub fn scalar(&self) -> Option<T> {
        (self.order == 0).then(|| self.values[0])
    }

    fn weight(&self, lin: usize) -> T {
        let n = self.grid.len();
        let mut lin = lin;
        let mut w = T::one();
        for _ in 0..self.order {
            w = w * self.grid.measure(lin % n);
            lin /= n;
        }
        w
    }

    /// Whether the values are invariant under swapping any two arguments.
    pub fn is_symmetric(&self, tol: T) -> bool {
        let n = self.grid.len();
        let q = self.order;
        let mut idx = vec![0; q];
        for lin in 0..self.values.len() {
            decode(lin, n, &mut idx);
            for a in 0..q.saturating_sub(1) {
                idx.swap(a, a + 1);
                let other = self.values[encode(&idx, n)];
                idx.swap(a, a + 1);
                let v = self.values[lin];
                if (v - other).abs() > tol * (T::one() + v.abs()) {
                    return false;
                }
            }
        }
        true
    }

    /// `(Σ |h|^p · Π μ)^{1/p}`.
    pub fn lp_norm(&self, p: u32) -> Result<T> {
        if !(1..=8).contains(&p) {
            return Err(invalid(format!("norm exponent {p} not supported")));
        }
        let s = pairwise_sum_by(self.values.len(), &|i| self.values[i].abs().powi(p as i32) * self.weight(i));
        Ok(s.powf(T::one() / T::of(p as f64)))
    }

    /// `⟨h, k⟩ = Σ h k Π μ`.
    pub fn inner(&self, other: &GridKernel<T>) -> Result<T> {
        if self.order != other.order || self.grid != other.grid {
            return Err(invalid("inner product needs kernels of equal order on the same grid"));
        }
        Ok(pairwise_sum_by(self.values.len(), &|i| self.values[i] * other.values[i] * self.weight(i)))
    }

    /// Average over all permutations of the arguments.
    pub fn symmetrize(&self) -> Result<GridKernel<T>> {
        let m = self.order;
        if m > MAX_SYMMETRIZE_ORDER {
            return Err(Error::UnsupportedOrder { order: m, max: MAX_SYMMETRIZE_ORDER });
        }
        let perms = permutations(m);
        let n = self.grid.len();
        let inv = T::one() / T::of(perms.len() as f64);
        let values: Vec<T> = (0..self.values.len())
            .into_par_iter()
            .map_init(
                || (vec![0; m], vec![0; m]),
                |(idx, tmp), lin| {
                    decode(lin, n, idx);
                    let terms: Vec<T> = perms
                        .iter()
                        .map(|p| {
                            for (k, &src) in p.iter().enumerate() {
                                tmp[k] = idx[src];
                            }
                            self.values[encode(tmp, n)]
                        })
                        .collect();
                    pairwise_sum(&terms) * inv
                },
            )
            .collect();
        GridKernel::from_values(self.grid.clone(), m, values)
    }

    pub fn scale(&self, c: T) -> GridKernel<T> {
        GridKernel { grid: self.grid.clone(), order: self.order, values: self.values.iter().map(|&v| v * c).collect() }
    }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..m {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

/// `f ⋆_r^l g`. The first `r` arguments of `f` and `g` are identified and the
/// first `l` of those are integrated out. The result has arguments
/// `(remaining identified, rest of f, rest of g)`; `r = l = 0` is the tensor product.
pub fn contract<T: Scalar>(f: &GridKernel<T>, g: &GridKernel<T>, r: usize, l: usize) -> Result<GridKernel<T>> {
    let (p, q) = (f.order, g.order);
    if l > r || r > p.min(q) {
        return Err(invalid(format!("contraction indices need 0 <= l <= r <= min(p, q); got r={r}, l={l}, p={p}, q={q}")));
    }
    if f.grid != g.grid {
        return Err(invalid("kernels live on different grids"));
    }
    let grid = f.grid.clone();
    let n = grid.len();
    let kept = r - l;
    let (fr, gr) = (p - r, q - r);
    let out_order = kept + fr + gr;
    let out_len = entries(n, out_order)?;
    let inner_len = (n as f64).powi(l as i32);
    if out_len as f64 * inner_len > MAX_WORK {
        return Err(Error::UnsupportedSize(format!("contraction needs {:.2e} operations", out_len as f64 * inner_len)));
    }
    let inner_len = inner_len as usize;
    let pow = |e: usize| n.pow(e as u32);
    let (f_tail, g_tail) = (pow(p - l), pow(q - l));
    let (f_rest, g_rest) = (pow(fr), pow(gr));
    let alpha_weights: Vec<T> = (0..inner_len)
        .map(|a| {
            let mut lin = a;
            let mut w = T::one();
            for _ in 0..l {
                w = w * grid.measure(lin % n);
                lin /= n;
            }
            w
        })
        .collect();
    let values: Vec<T> = (0..out_len)
        .into_par_iter()
        .map(|o| {
            let s = o % g_rest;
            let rest = o / g_rest;
            let t = rest % f_rest;
            let gamma = rest / f_rest;
            let f_off = gamma * f_rest + t;
            let g_off = gamma * g_rest + s;
            pairwise_sum_by(inner_len, &|a| {
                f.values[a * f_tail + f_off] * g.values[a * g_tail + g_off] * alpha_weights[a]
            })
        })
        .collect();
    Ok(GridKernel { grid, order: out_order, values })
}

/// Both sides of `∫ (f ⋆_r^0 g)² dμ^{p+q−r} = ∫ (f ⋆_p^{p−r} f)(g ⋆_q^{q−r} g) dμ^r`,
/// computed along separate code paths.
pub fn fubini_check<T: Scalar>(f: &GridKernel<T>, g: &GridKernel<T>, r: usize) -> Result<(T, T)> {
    let (p, q) = (f.order, g.order);
    if !(1 <= r && r <= p && p <= q) {
        return Err(invalid(format!("fubini_check needs 1 <= r <= p <= q; got r={r}, p={p}, q={q}")));
    }
    let lhs = contract(f, g, r, 0)?.lp_norm(2)?.powi(2);
    let ff = contract(f, f, p, p - r)?;
    let gg = contract(g, g, q, q - r)?;
    let rhs = ff.inner(&gg)?;
    Ok((lhs, rhs))
}

/// Input to [`b3_bound`]: kernels of strictly increasing orders and the standard deviation.
#[derive(Debug, Clone)]
pub struct B3Input<T: Scalar> {
    pub kernels: Vec<(usize, GridKernel<T>)>,
    pub sigma: T,
}

impl<T: Scalar> B3Input<T> {
    /// `σ² = Σ q_i! ‖f_i‖²`.
    pub fn consistent(kernels: Vec<(usize, GridKernel<T>)>) -> Result<Self> {
        let mut var = T::zero();
        for (q, f) in &kernels {
            var = var + T::of(factorial(*q)) * f.lp_norm(2)?.powi(2);
        }
        Ok(B3Input { kernels, sigma: var.sqrt() })
    }
}

fn factorial(q: usize) -> f64 {
    (1..=q).map(|k| k as f64).product()
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionTerm {
    pub i: usize,
    pub j: usize,
    pub r: usize,
    pub l: usize,
    pub norm: f64,
}

/// Every ingredient of `B3`, without the universal constant.
#[derive(Debug, Clone, Serialize)]
pub struct B3Breakdown {
    /// `‖f_i ⋆_r^l f_i‖` for `q_i > 1`, `1 ≤ r ≤ q_i`, `1 ≤ l ≤ min(r, q_i − 1)`.
    pub self_terms: Vec<ContractionTerm>,
    /// `‖f_i ⋆_r^l f_j‖` for `i < j`, `1 ≤ r ≤ q_i`, `1 ≤ l ≤ r`.
    pub cross_terms: Vec<ContractionTerm>,
    /// `‖f_i‖²_{L⁴}` per kernel.
    pub l4_squared: Vec<f64>,
    /// `‖f_1‖³_{L³} / ‖f_1‖_{L²}` when the lowest order is one.
    pub replacement: Option<f64>,
    pub max_self: f64,
    pub max_cross: f64,
    pub max_l4: f64,
    pub sigma: f64,
    /// `(max_self + max_cross + max_l4) / σ`, up to a universal constant.
    pub bound: f64,
}

pub fn b3_bound<T: Scalar>(input: &B3Input<T>) -> Result<B3Breakdown> {
    let ks = &input.kernels;
    if ks.is_empty() {
        return Err(invalid("B3 needs at least one kernel"));
    }
    for w in ks.windows(2) {
        if w[0].0 >= w[1].0 {
            return Err(invalid("kernel orders must be strictly increasing"));
        }
    }
    let tol = T::of(1e-9).max(T::epsilon() * T::of(64.0));
    for (q, f) in ks {
        if *q == 0 || f.order != *q {
            return Err(invalid(format!("kernel declared with order {q} has order {}", f.order)));
        }
        if !f.is_symmetric(tol) {
            return Err(invalid(format!("kernel of order {q} is not symmetric")));
        }
    }
    let sigma = input.sigma.as_f64();
    let implied = B3Input::consistent(ks.clone())?.sigma.as_f64();
    let rel_tol = 1e-6f64.max(T::epsilon().as_f64() * 1e3);
    if !(sigma > 0.0) || (sigma * sigma - implied * implied).abs() > rel_tol * implied * implied {
        return Err(invalid(format!("sigma {sigma} is inconsistent with the kernels (implied {implied})")));
    }
    let mut self_terms = Vec::new();
    for (i, (q, f)) in ks.iter().enumerate() {
        if *q < 2 {
            continue;
        }
        for r in 1..=*q {
            for l in 1..=r.min(q - 1) {
                let norm = contract(f, f, r, l)?.lp_norm(2)?.as_f64();
                self_terms.push(ContractionTerm { i, j: i, r, l, norm });
            }
        }
    }
    let mut cross_terms = Vec::new();
    for i in 0..ks.len() {
        for j in i + 1..ks.len() {
            for r in 1..=ks[i].0 {
                for l in 1..=r {
                    let norm = contract(&ks[i].1, &ks[j].1, r, l)?.lp_norm(2)?.as_f64();
                    cross_terms.push(ContractionTerm { i, j, r, l, norm });
                }
            }
        }
    }
    let l4_squared: Vec<f64> = ks.iter().map(|(_, f)| f.lp_norm(4).map(|v| v.as_f64().powi(2))).collect::<Result<_>>()?;
    let replacement = if ks[0].0 == 1 {
        let f = &ks[0].1;
        let l2 = f.lp_norm(2)?.as_f64();
        Some(if l2 > 0.0 { f.lp_norm(3)?.as_f64().powi(3) / l2 } else { 0.0 })
    } else {
        None
    };
    let fold = |xs: &mut dyn Iterator<Item = f64>| xs.fold(0.0, f64::max);
    let max_self = fold(&mut self_terms.iter().map(|t| t.norm));
    let max_cross = fold(&mut cross_terms.iter().map(|t| t.norm));
    let max_l4 = fold(&mut l4_squared.iter().enumerate().map(|(k, &v)| match (k, replacement) {
        (0, Some(rep)) => rep,
        _ => v,
    }));
    Ok(B3Breakdown {
        self_terms,
        cross_terms,
        l4_squared,
        replacement,
        max_self,
        max_cross,
        max_l4,
        sigma,
        bound: (max_self + max_cross + max_l4) / sigma,
    })
}

/// Independent Poisson counts `N_c ~ Poisson(μ_c)` for each cell.
pub fn sample_cell_counts<T: Scalar>(grid: &CellGrid<T>, rng: &mut impl Rng) -> Result<Vec<u64>> {
    grid.measures.iter().map(|m| poisson_count(rng, m.as_f64())).collect()
}

/// Pathwise `I_q(f)` for a kernel constant on cells, `q ∈ {1, 2}`:
/// `I1 = Σ f_c (N_c − μ_c)` and `I2 = Σ_{ab} f_ab ((N_a − μ_a)(N_b − μ_b) − δ_ab N_a)`.
pub fn cell_integral<T: Scalar>(f: &GridKernel<T>, counts: &[u64]) -> Result<f64> {
    let n = f.grid.len();
    if counts.len() != n {
        return Err(invalid("one count per cell is required"));
    }
    let c: Vec<f64> = counts
        .iter()
        .zip(f.grid.measures())
        .map(|(&k, m)| k as f64 - m.as_f64())
        .collect();
    match f.order {
        1 => Ok(pairwise_sum_by(n, &|a| f.values[a].as_f64() * c[a])),
        2 => Ok(pairwise_sum_by(n * n, &|lin| {
            let (a, b) = (lin / n, lin % n);
            let diag = if a == b { counts[a] as f64 } else { 0.0 };
            f.values[lin].as_f64() * (c[a] * c[b] - diag)
        })),
        q => Err(Error::UnsupportedOrder { order: q, max: 2 }),
    }
}

/// Monte Carlo comparison of `E[I_p(f) I_q(g)]` with `p! ⟨f, g⟩ 1_{p=q}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProductReport {
    pub empirical: f64,
    pub stderr: f64,
    pub predicted: f64,
}

impl ProductReport {
    pub fn within(&self, k: f64) -> bool {
        (self.empirical - self.predicted).abs() <= k * self.stderr
    }
}

pub fn product_formula_check<T: Scalar>(
    f: &GridKernel<T>,
    g: &GridKernel<T>,
    replicates: usize,
    seed: u64,
) -> Result<ProductReport> {
    if f.order > 2 || g.order > 2 || f.order == 0 || g.order == 0 {
        return Err(Error::UnsupportedOrder { order: f.order.max(g.order), max: 2 });
    }
    if f.grid != g.grid {
        return Err(invalid("kernels live on different grids"));
    }
    if replicates < 2 {
        return Err(invalid("need at least two replicates"));
    }
    let products: Vec<f64> = replicate_seeds(seed, replicates)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(s);
            let counts = sample_cell_counts(&f.grid, &mut rng)?;
            Ok(cell_integral(f, &counts)? * cell_integral(g, &counts)?)
        })
        .collect::<Result<_>>()?;
    let n = products.len() as f64;
    let mean = pairwise_sum(&products) / n;
    let var = pairwise_sum_by(products.len(), &|i| (products[i] - mean).powi(2)) / (n - 1.0);
    let predicted = if f.order == g.order {
        factorial(f.order) * f.inner(g)?.as_f64()
    } else {
        0.0
    };
    Ok(ProductReport { empirical: mean, stderr: (var / n).sqrt(), predicted })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn grid(n: usize, total: f64) -> Arc<CellGrid<f64>> {
        Arc::new(CellGrid::uniform(n, total).unwrap())
    }

    fn random_sym(g: &Arc<CellGrid<f64>>, order: usize, seed: u64) -> GridKernel<f64> {
        let mut rng = stream(seed);
        let n = g.len();
        let raw = GridKernel::from_values(
            g.clone(),
            order,
            (0..n.pow(order as u32)).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        raw.symmetrize().unwrap()
    }

    #[test]
    fn tensor_product_spot_value() {
        let g = grid(3, 3.0);
        let f = GridKernel::from_values(g.clone(), 1, vec![1.0, 2.0, 3.0]).unwrap();
        let h = GridKernel::from_values(g.clone(), 1, vec![5.0, 7.0, 11.0]).unwrap();
        let t = contract(&f, &h, 0, 0).unwrap();
        assert_eq!(t.order(), 2);
        assert_eq!(t.get(&[1, 2]), 2.0 * 11.0);
    }

    #[test]
    fn zero_kernel_contracts_to_zero() {
        let g = grid(4, 2.0);
        let z = GridKernel::zeros(g.clone(), 2).unwrap();
        let f = random_sym(&g, 2, 1);
        for (r, l) in [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)] {
            assert!(contract(&z, &f, r, l).unwrap().values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn full_contraction_of_order_one_is_inner_product() {
        let g = Arc::new(CellGrid::<f64>::new(vec![0.5, 1.5, 2.0]).unwrap());
        let f = GridKernel::from_values(g.clone(), 1, vec![1.0, -2.0, 0.5]).unwrap();
        let h = GridKernel::from_values(g.clone(), 1, vec![3.0, 1.0, 4.0]).unwrap();
        let c = contract(&f, &h, 1, 1).unwrap().scalar().unwrap();
        assert!((c - (0.5 * 3.0 - 1.5 * 2.0 + 2.0 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn bad_indices_rejected() {
        let g = grid(2, 1.0);
        let f = random_sym(&g, 1, 2);
        assert!(contract(&f, &f, 2, 1).is_err());
        assert!(contract(&f, &f, 0, 1).is_err());
    }

    #[test]
    fn symmetrize_cases() {
        let g = grid(3, 1.0);
        let s = random_sym(&g, 3, 4);
        let again = s.symmetrize().unwrap();
        for (a, b) in s.values().iter().zip(again.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let upper = GridKernel::from_fn(g.clone(), 2, |i| if i[0] < i[1] { 1.0 } else { 0.0 }).unwrap();
        let sym = upper.symmetrize().unwrap();
        assert_eq!(sym.get(&[0, 2]), 0.5);
        assert_eq!(sym.get(&[2, 0]), 0.5);
        assert_eq!(sym.get(&[1, 1]), 0.0);
        let big = GridKernel::<f64>::zeros(grid(2, 1.0), 6).unwrap();
        assert!(matches!(big.symmetrize(), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn constant_kernel_norms() {
        let g = grid(5, 2.5);
        let k = GridKernel::from_fn(g, 3, |_| 2.0).unwrap();
        for p in [2u32, 3, 4] {
            let expect = (2f64.powi(p as i32) * 2.5f64.powi(3)).powf(1.0 / p as f64);
            assert!((k.lp_norm(p).unwrap() - expect).abs() < 1e-12 * expect);
        }
        assert_eq!(GridKernel::<f64>::zeros(grid(3, 1.0), 2).unwrap().lp_norm(2).unwrap(), 0.0);
    }

    #[test]
    fn norm_matches_reverse_order_sum() {
        let g = Arc::new(CellGrid::new((1..=6).map(|k| k as f64 * 0.1).collect()).unwrap());
        let k = random_sym(&g, 3, 9);
        let n = 6;
        let mut acc = 0.0;
        for a in (0..n).rev() {
            for b in (0..n).rev() {
                for c in (0..n).rev() {
                    acc += k.get(&[a, b, c]).powi(4) * g.measure(a) * g.measure(b) * g.measure(c);
                }
            }
        }
        assert!((k.lp_norm(4).unwrap() - acc.powf(0.25)).abs() < 1e-12 * acc.powf(0.25));
    }

    #[test]
    fn fubini_zero_and_order_one() {
        let g = grid(4, 2.0);
        let z = GridKernel::zeros(g.clone(), 2).unwrap();
        let f = random_sym(&g, 2, 3);
        assert_eq!(fubini_check(&z, &f, 1).unwrap(), (0.0, 0.0));
        let a = random_sym(&g, 1, 5);
        let b = random_sym(&g, 1, 6);
        let (l, r) = fubini_check(&a, &b, 1).unwrap();
        let direct: f64 = (0..4).map(|c| a.get(&[c]).powi(2) * b.get(&[c]).powi(2) * 0.5).sum();
        assert!((l - direct).abs() < 1e-14 && (r - direct).abs() < 1e-14);
    }

    #[test]
    fn single_first_order_kernel_bound() {
        let g = Arc::new(CellGrid::new(vec![0.3, 0.7, 1.1]).unwrap());
        let f = GridKernel::from_values(g, 1, vec![1.0, -0.5, 2.0]).unwrap();
        let input = B3Input::consistent(vec![(1, f.clone())]).unwrap();
        let b = b3_bound(&input).unwrap();
        let l2: f64 = f.lp_norm(2).unwrap();
        let expect = f.lp_norm(3).unwrap().powi(3_i32) / l2 / l2;
        assert!((b.bound - expect).abs() < 1e-12);
        assert!(b.self_terms.is_empty() && b.cross_terms.is_empty());
    }

    #[test]
    fn single_cell_closed_forms() {
        // f = c on one cell of measure m (order 2), zero elsewhere.
        let (c, m) = (1.5, 0.4);
        let g = Arc::new(CellGrid::new(vec![m, 0.9]).unwrap());
        let f = GridKernel::from_fn(g, 2, |i| if i == [0, 0] { c } else { 0.0 }).unwrap();
        let input = B3Input::consistent(vec![(2, f)]).unwrap();
        let b = b3_bound(&input).unwrap();
        // ⋆_1^1: c² m on one cell of order 2 -> norm c² m · m.
        // ⋆_2^1: c² m on one cell of order 1 -> norm c² m · m^{1/2}.
        let t11 = b.self_terms.iter().find(|t| (t.r, t.l) == (1, 1)).unwrap().norm;
        let t21 = b.self_terms.iter().find(|t| (t.r, t.l) == (2, 1)).unwrap().norm;
        assert!((t11 - c * c * m * m).abs() < 1e-14);
        assert!((t21 - c * c * m * m.sqrt()).abs() < 1e-14);
        assert!((b.l4_squared[0] - c * c * m).abs() < 1e-14);
        assert!((b.sigma - (2.0f64).sqrt() * c * m).abs() < 1e-14);
    }

    #[test]
    fn inconsistent_sigma_rejected() {
        let g = grid(3, 1.0);
        let f = random_sym(&g, 2, 1);
        let input = B3Input { kernels: vec![(2, f)], sigma: 10.0 };
        assert!(b3_bound(&input).is_err());
    }

    #[test]
    fn f32_and_f64_agree() {
        let g64 = grid(5, 3.0);
        let k64 = random_sym(&g64, 2, 12);
        let g32 = Arc::new(CellGrid::<f32>::uniform(5, 3.0).unwrap());
        let k32 = GridKernel::from_values(g32, 2, k64.values().iter().map(|&v| v as f32).collect()).unwrap();
        let a = contract(&k64, &k64, 1, 1).unwrap().lp_norm(2).unwrap();
        let b = contract(&k32, &k32, 1, 1).unwrap().lp_norm(2).unwrap();
        assert!((a - b as f64).abs() < 1e-5 * a);
    }

    #[test]
    fn product_formula_first_order_and_mixed() {
        let g = Arc::new(CellGrid::new(vec![2.0, 3.0, 1.0]).unwrap());
        let f = GridKernel::from_values(g.clone(), 1, vec![1.0, -1.0, 0.5]).unwrap();
        let h = GridKernel::from_values(g.clone(), 1, vec![0.3, 0.2, 2.0]).unwrap();
        let rep = product_formula_check(&f, &h, 20_000, 1).unwrap();
        assert!(rep.within(3.0), "{rep:?}");
        let k = GridKernel::from_fn(g, 2, |i| if i[0] != i[1] { 1.0 } else { 0.3 }).unwrap();
        let rep = product_formula_check(&f, &k, 20_000, 2).unwrap();
        assert_eq!(rep.predicted, 0.0);
        assert!(rep.within(3.0), "{rep:?}");
    }

    #[test]
    fn product_formula_second_order() {
        let g = Arc::new(CellGrid::new(vec![1.0, 2.0]).unwrap());
        let f = GridKernel::from_values(g.clone(), 2, vec![1.0, 0.5, 0.5, -0.2]).unwrap();
        let h = GridKernel::from_values(g, 2, vec![0.3, 1.0, 1.0, 0.7]).unwrap();
        let rep = product_formula_check(&f, &h, 10_000, 3).unwrap();
        assert!(rep.within(3.0), "{rep:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fubini_identity_holds(seed in any::<u64>(), p in 1usize..=2, extra in 0usize..=1, r0 in 0usize..2, n in 2usize..6) {
            let q = p + extra;
            let r = 1 + r0 % p;
            let g = grid(n, 1.7);
            let f = random_sym(&g, p, seed);
            let h = random_sym(&g, q, seed ^ 1);
            let (l, rr) = fubini_check(&f, &h, r).unwrap();
            prop_assert!((l - rr).abs() <= 1e-10 * l.abs().max(rr.abs()).max(1e-300));
        }

        #[test]
        fn symmetrization_does_not_increase_norm(seed in any::<u64>(), order in 1usize..=4) {
            let g = grid(3, 2.0);
            let mut rng = stream(seed);
            let raw = GridKernel::from_values(g, order, (0..3usize.pow(order as u32)).map(|_| rng.random::<f64>() - 0.3).collect()).unwrap();
            let s = raw.symmetrize().unwrap();
            prop_assert!(s.lp_norm(2).unwrap() <= raw.lp_norm(2).unwrap() * (1.0 + 1e-12));
            prop_assert!(s.is_symmetric(1e-12));
        }

        #[test]
        fn cauchy_schwarz_for_contractions(seed in any::<u64>(), r in 1usize..=2, l0 in 0usize..=2) {
            let l = l0.min(r);
            let g = grid(4, 1.3);
            let f = random_sym(&g, 2, seed);
            let h = random_sym(&g, 2, seed.wrapping_add(7));
            let fh = contract(&f, &h, r, l).unwrap().lp_norm(2).unwrap().powi(2);
            let ff = contract(&f, &f, r, l).unwrap().lp_norm(2).unwrap();
            let hh = contract(&h, &h, r, l).unwrap().lp_norm(2).unwrap();
            prop_assert!(fh <= ff * hh * (1.0 + 1e-10) + 1e-14);
        }

        #[test]
        fn self_contraction_is_positive_semidefinite(seed in any::<u64>()) {
            // f ⋆_1^1 f viewed as a matrix in (t, s) is a Gram matrix.
            let g = grid(4, 2.0);
            let f = random_sym(&g, 2, seed);
            let c = contract(&f, &f, 1, 1).unwrap();
            let mut rng = stream(seed ^ 3);
            for _ in 0..20 {
                let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
                let mut quad = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        quad += v[a] * v[b] * c.get(&[a, b]);
                    }
                }
                prop_assert!(quad >= -1e-12);
            }
        }
    }
}
