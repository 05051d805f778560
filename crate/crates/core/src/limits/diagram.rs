//! Diagram formula for the cumulants of a double Poisson integral with a cell-constant kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::GridKernel;
use crate::error::{invalid, Error, Result};
use crate::scalar::{pairwise_sum, Scalar};

pub const MAX_DIAGRAM_ORDER: usize = 4;
pub const MAX_DIAGRAM_TERMS: f64 = 1e8;

/// A partition of `{0, …, 2m−1}`; elements `2i` and `2i+1` are the two arguments of copy `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiagramPartition {
    pub blocks: Vec<Vec<usize>>,
}

impl DiagramPartition {
    pub fn size(&self) -> usize {
        self.blocks.len()
    }

    /// Block index of every element.
    pub fn labels(&self) -> Vec<usize> {
        let n: usize = self.blocks.iter().map(Vec::len).sum();
        let mut out = vec![0; n];
        for (b, block) in self.blocks.iter().enumerate() {
            for &e in block {
                out[e] = b;
            }
        }
        out
    }
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

fn admissible(labels: &[usize], nblocks: usize) -> bool {
    let m = labels.len() / 2;
    let mut sizes = vec![0usize; nblocks];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().any(|&s| s < 2) {
        return false;
    }
    if (0..m).any(|i| labels[2 * i] == labels[2 * i + 1]) {
        return false;
    }
    // Copies are vertices; every block glues the copies it touches.
    let mut parent: Vec<usize> = (0..m).collect();
    let mut first = vec![usize::MAX; nblocks];
    for (e, &l) in labels.iter().enumerate() {
        let copy = e / 2;
        if first[l] == usize::MAX {
            first[l] = copy;
        } else {
            let (a, b) = (find(&mut parent, first[l]), find(&mut parent, copy));
            parent[a] = b;
        }
    }
    let root = find(&mut parent, 0);
    (1..m).all(|i| find(&mut parent, i) == root)
}

/// All admissible partitions for the `m`-th cumulant, `2 ≤ m ≤ 4`.
pub fn enumerate_diagrams(m: usize) -> Result<Vec<DiagramPartition>> {
    if !(2..=MAX_DIAGRAM_ORDER).contains(&m) {
        return Err(Error::UnsupportedOrder { order: m, max: MAX_DIAGRAM_ORDER });
    }
    let n = 2 * m;
    let mut out = Vec::new();
    // Restricted growth strings: labels[0] = 0, labels[k] ≤ 1 + max(labels[..k]).
    let mut labels = vec![0usize; n];
    fn rec(k: usize, nblocks: usize, labels: &mut Vec<usize>, out: &mut Vec<DiagramPartition>) {
        if k == labels.len() {
            if admissible(labels, nblocks) {
                let mut blocks = vec![Vec::new(); nblocks];
                for (e, &l) in labels.iter().enumerate() {
                    blocks[l].push(e);
                }
                out.push(DiagramPartition { blocks });
            }
            return;
        }
        for l in 0..=nblocks {
            labels[k] = l;
            rec(k + 1, nblocks.max(l + 1), labels, out);
        }
    }
    rec(1, 1, &mut labels, &mut out);
    Ok(out)
}

/// `m`-th cumulant of `I2(f2)` under intensity `lambda` times the grid measure:
/// `Σ_π λ^{|π|} Σ_{cells} Π_b μ(c_b) Π_i f2(c_{b(2i)}, c_{b(2i+1)})`.
/// The kernel is symmetrized first.
pub fn diagram_cumulant<T: Scalar>(m: usize, f2: &GridKernel<T>, lambda: T) -> Result<T> {
    if f2.order() != 2 {
        return Err(invalid(format!("diagram cumulants need an order-2 kernel, got order {}", f2.order())));
    }
    if !(lambda >= T::zero() && lambda.is_finite()) {
        return Err(invalid("lambda must be finite and non-negative"));
    }
    let diagrams = enumerate_diagrams(m)?;
    let cells = f2.grid().len();
    let terms: f64 = diagrams.iter().map(|d| (cells as f64).powi(d.size() as i32)).sum();
    if terms > MAX_DIAGRAM_TERMS {
        return Err(Error::UnsupportedSize(format!(
            "{terms:.3e} cell assignments exceed the cap of {MAX_DIAGRAM_TERMS:.0e}"
        )));
    }
    let f = f2.symmetrize()?;
    let mu: Vec<T> = f2.grid().measures().iter().map(|&v| v * lambda).collect();
    let parts: Vec<T> = diagrams
        .par_iter()
        .map(|d| {
            let labels = d.labels();
            let k = d.size();
            let mut assign = vec![0usize; k];
            let mut acc = Vec::with_capacity(cells.pow(k as u32));
            loop {
                let mut w = T::one();
                for &c in &assign {
                    w = w * mu[c];
                }
                for i in 0..m {
                    w = w * f.get(&[assign[labels[2 * i]], assign[labels[2 * i + 1]]]);
                }
                acc.push(w);
                // Odometer over cell assignments.
                let mut pos = 0;
                while pos < k {
                    assign[pos] += 1;
                    if assign[pos] < cells {
                        break;
                    }
                    assign[pos] = 0;
                    pos += 1;
                }
                if pos == k {
                    break;
                }
            }
            pairwise_sum(&acc)
        })
        .collect();
    Ok(pairwise_sum(&parts))
}
