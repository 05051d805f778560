//! Distributional statistics of replicate ensembles.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::sampler::{derive_seed, stream};
use crate::scalar::{pairwise_sum, pairwise_sum_by, Scalar};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `W1` between the empirical law of `values` and `N(0, 1)`:
/// `(1/n) Σ |x_(i) − Φ⁻¹((i − ½)/n)|`.
pub fn empirical_w1_gaussian(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("W1 needs at least one value"));
    }
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let normal = std_normal();
    let terms: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - normal.inverse_cdf((i as f64 + 0.5) / n)).abs())
        .collect();
    Ok(pairwise_sum(&terms) / n)
}

/// Unbiased k-statistics `k_1, …, k_max_order` (`max_order ≤ 4`).
pub fn empirical_cumulants<T: Scalar>(values: &[T], max_order: usize) -> Result<Vec<T>> {
    if max_order > 4 {
        return Err(Error::UnsupportedOrder { order: max_order, max: 4 });
    }
    if max_order == 0 {
        return Ok(Vec::new());
    }
    let n = values.len();
    if n <= max_order {
        return Err(invalid(format!("{max_order} cumulants need more than {max_order} values, got {n}")));
    }
    let nf = T::of(n as f64);
    let mean = pairwise_sum(values) / nf;
    // Power sums of the centred data; the shift leaves k_2.. unchanged.
    let s = |p: i32| pairwise_sum_by(n, &|i| (values[i] - mean).powi(p));
    let (s1, s2, s3, s4) = (s(1), s(2), s(3), s(4));
    let one = T::one();
    let two = T::of(2.0);
    let three = T::of(3.0);
    let mut out = vec![mean];
    if max_order >= 2 {
        out.push((nf * s2 - s1 * s1) / (nf * (nf - one)));
    }
    if max_order >= 3 {
        let k3 = (two * s1.powi(3) - three * nf * s1 * s2 + nf * nf * s3) / (nf * (nf - one) * (nf - two));
        out.push(k3);
    }
    if max_order >= 4 {
        let num = -T::of(6.0) * s1.powi(4) + T::of(12.0) * nf * s1 * s1 * s2
            - three * nf * (nf - one) * s2 * s2
            - T::of(4.0) * nf * (nf + one) * s1 * s3
            + nf * nf * (nf + one) * s4;
        out.push(num / (nf * (nf - one) * (nf - two) * (nf - three)));
    }
    Ok(out)
}

/// Central moment of order `p`.
fn central_moment(values: &[f64], mean: f64, p: i32) -> f64 {
    pairwise_sum_by(values.len(), &|i| (values[i] - mean).powi(p)) / values.len() as f64
}

/// `E[X⁴] − 3 (Var X)²` of the centred values.
pub fn fourth_moment_gap_value(values: &[f64]) -> f64 {
    let mean = pairwise_sum(values) / values.len() as f64;
    let m2 = central_moment(values, mean, 2);
    central_moment(values, mean, 4) - 3.0 * m2 * m2
}

/// Bootstrap standard error of a statistic.
pub fn bootstrap_stderr(values: &[f64], resamples: usize, seed: u64, stat: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
    let n = values.len();
    if n < 2 || resamples < 2 {
        return f64::NAN;
    }
    let stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(derive_seed(seed, b as u64));
            let sample: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            stat(&sample)
        })
        .collect();
    let m = pairwise_sum(&stats) / resamples as f64;
    (stats.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Fourth-moment gap with its bootstrap standard error.
pub fn fourth_moment_gap(values: &[f64], seed: u64) -> Result<Estimate> {
    if values.len() < 5 {
        return Err(invalid("fourth moment gap needs at least 5 values"));
    }
    Ok(Estimate {
        value: fourth_moment_gap_value(values),
        stderr: bootstrap_stderr(values, BOOTSTRAP_RESAMPLES, seed, fourth_moment_gap_value),
    })
}

/// `W1` to the Gaussian with its bootstrap standard error.
pub fn w1_with_stderr(values: &[f64], seed: u64) -> Result<Estimate> {
    let value = empirical_w1_gaussian(values)?;
    let stderr = bootstrap_stderr(values, BOOTSTRAP_RESAMPLES, seed, |s| empirical_w1_gaussian(s).unwrap_or(f64::NAN));
    Ok(Estimate { value, stderr })
}

/// `(1/n) Σ |x|^p`.
pub fn absolute_moment(values: &[f64], p: f64) -> f64 {
    pairwise_sum_by(values.len(), &|i| values[i].abs().powf(p)) / values.len() as f64
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = pairwise_sum(a) / n;
    let mb = pairwise_sum(b) / n;
    let cov = pairwise_sum_by(a.len(), &|i| (a[i] - ma) * (b[i] - mb));
    let va = pairwise_sum_by(a.len(), &|i| (a[i] - ma).powi(2));
    let vb = pairwise_sum_by(b.len(), &|i| (b[i] - mb).powi(2));
    cov / (va * vb).sqrt()
}

/// Mardia's multivariate kurtosis `b2` for bivariate data, and the statistic
/// `(b2 − 8) / √(64/n)`, approximately standard normal under bivariate normality.
pub fn mardia_kurtosis(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = pairwise_sum(a) / n;
    let mb = pairwise_sum(b) / n;
    let saa = pairwise_sum_by(a.len(), &|i| (a[i] - ma).powi(2)) / n;
    let sbb = pairwise_sum_by(a.len(), &|i| (b[i] - mb).powi(2)) / n;
    let sab = pairwise_sum_by(a.len(), &|i| (a[i] - ma) * (b[i] - mb)) / n;
    let det = saa * sbb - sab * sab;
    let (iaa, ibb, iab) = (sbb / det, saa / det, -sab / det);
    let b2 = pairwise_sum_by(a.len(), &|i| {
        let (x, y) = (a[i] - ma, b[i] - mb);
        let q = iaa * x * x + 2.0 * iab * x * y + ibb * y * y;
        q * q
    }) / n;
    (b2, (b2 - 8.0) / (64.0 / n).sqrt())
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Poisson, StandardNormal};

    use super::*;

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn cumulant_se(values: &[f64], order: usize) -> f64 {
        bootstrap_stderr(values, 100, 5, |s| empirical_cumulants(s, order).unwrap()[order - 1])
    }

    #[test]
    fn w1_of_gaussian_sample_is_small() {
        assert!(empirical_w1_gaussian(&gaussian(10_000, 1)).unwrap() < 0.03);
    }

    #[test]
    fn w1_of_constant_is_mean_absolute_normal() {
        let w = empirical_w1_gaussian(&vec![0.0; 100_000]).unwrap();
        assert!((w - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-3, "{w}");
    }

    #[test]
    fn k_statistics_match_hand_computation() {
        // Data 1, 2, 3, 4, 10: k2 = sample variance, k3/k4 from the closed forms.
        let x = [1.0f64, 2.0, 3.0, 4.0, 10.0];
        let k = empirical_cumulants(&x, 4).unwrap();
        let n = 5.0;
        let m = 4.0f64;
        let m2: f64 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3: f64 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        let m4: f64 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
        let k2 = n / (n - 1.0) * m2;
        let k3 = n * n / ((n - 1.0) * (n - 2.0)) * m3;
        let k4 = n * n * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 * m2) / ((n - 1.0) * (n - 2.0) * (n - 3.0));
        assert!((k[0] - 4.0).abs() < 1e-14);
        assert!((k[1] - k2).abs() < 1e-12);
        assert!((k[2] - k3).abs() < 1e-10);
        assert!((k[3] - k4).abs() < 1e-9);
        assert!(matches!(empirical_cumulants(&x, 5), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn gaussian_higher_cumulants_vanish() {
        let x = gaussian(20_000, 2);
        let k = empirical_cumulants(&x, 4).unwrap();
        assert!(k[2].abs() < 3.0 * cumulant_se(&x, 3));
        assert!(k[3].abs() < 3.0 * cumulant_se(&x, 4));
        let gap = fourth_moment_gap(&x, 3).unwrap();
        assert!(gap.value.abs() < 3.0 * gap.stderr, "{gap:?}");
    }

    #[test]
    fn poisson_cumulants() {
        let c = 3.0;
        let mut rng = stream(4);
        let p = Poisson::new(c).unwrap();
        let x: Vec<f64> = (0..50_000).map(|_| p.sample(&mut rng) - c).collect();
        let k = empirical_cumulants(&x, 4).unwrap();
        for m in 2..=4 {
            assert!((k[m - 1] - c).abs() < 3.0 * cumulant_se(&x, m), "k{m} = {}", k[m - 1]);
        }
        // Doubled Poisson with half the parameter: cumulants 2^{m-1} c.
        let half = Poisson::new(c / 2.0).unwrap();
        let y: Vec<f64> = (0..50_000).map(|_| 2.0 * (half.sample(&mut rng) - c / 2.0)).collect();
        let k = empirical_cumulants(&y, 4).unwrap();
        for m in 2..=4 {
            let expect = 2f64.powi(m as i32 - 1) * c;
            assert!((k[m - 1] - expect).abs() < 3.0 * cumulant_se(&y, m), "k{m} = {} vs {expect}", k[m - 1]);
        }
    }

    #[test]
    fn f32_cumulants_track_f64() {
        let x = gaussian(1000, 6);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let a = empirical_cumulants(&x, 4).unwrap();
        let b = empirical_cumulants(&x32, 4).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - *v as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn mardia_on_independent_gaussians() {
        let a = gaussian(20_000, 7);
        let b = gaussian(20_000, 8);
        let (b2, z) = mardia_kurtosis(&a, &b);
        assert!((b2 - 8.0).abs() < 0.5 && z.abs() < 4.0, "{b2} {z}");
        let r = correlation(&a, &b);
        // 4σ keeps the false alarm rate of a single fixed-seed check below 1e-4.
        assert!(r.abs() < 4.0 / (20_000f64).sqrt(), "{r}");
    }
}
