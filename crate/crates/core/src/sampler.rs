//! Poisson point patterns on centred box windows.
//!
//! Every pattern is a pure function of `(window, intensity, seed)`. Replicates
//! draw their seeds from [`replicate_seeds`], so parallel runs reproduce the
//! same ensemble regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// The box `[-side/2, side/2]^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub dim: usize,
    pub side: f64,
}

impl Window {
    pub fn new(dim: usize, side: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("window dimension must be positive"));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(invalid(format!("window side must be positive and finite, got {side}")));
        }
        Ok(Window { dim, side })
    }

    /// `Q_1`, the unit-volume window.
    pub fn unit(dim: usize) -> Self {
        Window { dim, side: 1.0 }
    }

    /// The window of volume `vol`, i.e. side `vol^{1/d}`.
    pub fn with_volume(dim: usize, vol: f64) -> Result<Self> {
        Window::new(dim, vol.powf(1.0 / dim as f64))
    }

    pub fn half(&self) -> f64 {
        0.5 * self.side
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let h = self.half();
        x.iter().all(|&c| (-h..=h).contains(&c))
    }

    /// Uniform point, coordinates drawn in axis order.
    pub fn sample_uniform(&self, rng: &mut impl Rng, out: &mut [f64]) {
        for c in out.iter_mut() {
            *c = (rng.random::<f64>() - 0.5) * self.side;
        }
    }
}

/// A realisation of the Poisson measure restricted to a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    /// Flat coordinates, `dim` per point.
    coords: Vec<f64>,
    pub window: Window,
    pub seed: u64,
    pub intensity: f64,
}

impl PointPattern {
    /// Build a pattern from explicit points. Points must be inside the window and distinct.
    pub fn from_points(window: Window, points: &[Vec<f64>], intensity: f64) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * window.dim);
        for p in points {
            if p.len() != window.dim {
                return Err(invalid(format!(
                    "point of dimension {} in a {}-dimensional window",
                    p.len(),
                    window.dim
                )));
            }
            if !window.contains(p) {
                return Err(invalid(format!("point {p:?} lies outside the window")));
            }
            coords.extend_from_slice(p);
        }
        let pattern = PointPattern { coords, window, seed: 0, intensity };
        if let Some((i, j)) = pattern.find_duplicate() {
            return Err(invalid(format!("points {i} and {j} coincide")));
        }
        Ok(pattern)
    }

    pub fn empty(window: Window, intensity: f64, seed: u64) -> Self {
        PointPattern { coords: Vec::new(), window, seed, intensity }
    }

    pub fn dim(&self) -> usize {
        self.window.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.window.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.window.dim;
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.window.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Index pair of two coinciding points, if any.
    pub fn find_duplicate(&self) -> Option<(usize, usize)> {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order
            .windows(2)
            .find(|w| self.point(w[0]) == self.point(w[1]))
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }
}

/// Deterministic generator for a 64-bit seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a named sub-stream (`tag`) of `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// `count` derived seeds. The map `i -> seed` is a bijection on `u64`,
/// so the seeds are pairwise distinct.
pub fn replicate_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    let base = splitmix64(master_seed);
    (0..count as u64)
        .map(|i| splitmix64(base.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15))))
        .collect()
}

/// Draw a Poisson count with the given mean.
pub fn poisson_count(rng: &mut impl Rng, mean: f64) -> Result<u64> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(invalid(format!("Poisson mean must be finite and non-negative, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| invalid(format!("Poisson({mean}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Poisson point pattern with intensity `intensity` times Lebesgue measure on `window`.
pub fn sample_poisson(window: Window, intensity: f64, seed: u64) -> Result<PointPattern> {
    if !(intensity.is_finite() && intensity >= 0.0) {
        return Err(invalid(format!("intensity must be finite and non-negative, got {intensity}")));
    }
    let volume = window.volume();
    if !volume.is_finite() {
        return Err(invalid("window volume is not finite"));
    }
    let mut rng = stream(seed);
    let n = poisson_count(&mut rng, intensity * volume)? as usize;
    let d = window.dim;
    let mut coords = vec![0.0; n * d];
    for p in coords.chunks_exact_mut(d) {
        window.sample_uniform(&mut rng, p);
    }
    let mut pattern = PointPattern { coords, window, seed, intensity };
    // Coincident points have probability zero; resample the later one if it happens.
    while let Some((_, j)) = pattern.find_duplicate() {
        let p = &mut pattern.coords[j * d..(j + 1) * d];
        window.sample_uniform(&mut rng, p);
    }
    Ok(pattern)
}
