//! Scalar abstraction for the grid-kernel and estimator code.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Sum + Debug + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Pairwise (tree) summation. Error grows as O(log n) instead of O(n).
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    const BASE: usize = 64;
    if xs.len() <= BASE {
        let mut acc = T::zero();
        for &x in xs {
            acc = acc + x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise summation of `f(i)` for `i` in `0..n` without materializing the terms.
pub fn pairwise_sum_by<T: Scalar>(n: usize, f: &impl Fn(usize) -> T) -> T {
    fn go<T: Scalar>(lo: usize, hi: usize, f: &impl Fn(usize) -> T) -> T {
        if hi - lo <= 64 {
            let mut acc = T::zero();
            for i in lo..hi {
                acc = acc + f(i);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    if n == 0 {
        T::zero()
    } else {
        go(0, n, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-10);
        assert!((pairwise_sum_by(xs.len(), &|i| xs[i]) - naive).abs() < 1e-10);
    }

    #[test]
    fn pairwise_beats_naive_in_f32() {
        let n = 1_000_000;
        let xs = vec![0.1f32; n];
        let naive: f32 = xs.iter().fold(0.0, |a, &b| a + b);
        let tree = pairwise_sum(&xs);
        let exact = 0.1f64 * n as f64;
        assert!((tree as f64 - exact).abs() < (naive as f64 - exact).abs());
    }
}
