//! Inter-category distance and self-tuned affinity.
//!
//! The distance between categories `i` and `j` is the root mean squared
//! Euclidean distance over all cross pairs of their samples. Expanding
//! the square shows this equals
//!
//! ```text
//! dis(i, j) = sqrt(|Q_i - Q_j|^2 + s_i^2 + s_j^2)
//! ```
//!
//! where `Q` are the category means and `s^2` the mean squared
//! distances to them ([`CategoryStats::variance_sq`]). The moment form
//! costs O(d) per pair instead of O(N_i * N_j * d); [`distance_naive`]
//! keeps the pairwise definition around as the reference.
//!
//! Affinities are locally scaled: `A[i][j] = exp(-dis(i,j) /
//! sqrt(delta_i * delta_j))` with `delta_i` the distance from `i` to its
//! `tuning_k`-th nearest other category, after Zelnik-Manor & Perona.

use ndarray::{Array2, ArrayView2};

use crate::dataio::CategoryStats;
use crate::error::{Error, Result};

/// Pairwise category affinities plus the quantities they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    /// Symmetric, unit diagonal, off-diagonal entries in (0, 1].
    pub values: Array2<f64>,
    /// `sqrt(delta_i * delta_j)` per pair; all positive.
    pub bandwidths: Array2<f64>,
    /// Inter-category distances, zero-diagonal-free (the diagonal holds
    /// `sqrt(2) * s_i`, the self-distance of a spread-out category).
    pub distances: Array2<f64>,
}

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Affinities restricted to the given categories, in their order.
    pub fn submatrix(&self, idx: &[usize]) -> Array2<f64> {
        let k = idx.len();
        Array2::from_shape_fn((k, k), |(r, c)| self.values[[idx[r], idx[c]]])
    }
}

/// Root mean squared distance over all sample pairs of two categories.
pub fn distance_naive(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidParam("category with no samples".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let mut total = 0.0f64;
    for s in a.rows() {
        for t in b.rows() {
            let mut sq = 0.0f64;
            for (&x, &y) in s.iter().zip(t.iter()) {
                let diff = f64::from(x) - f64::from(y);
                sq += diff * diff;
            }
            total += sq;
        }
    }
    Ok((total / (a.nrows() as f64 * b.nrows() as f64)).sqrt())
}

/// Same distance from first and second moments, O(d) per pair.
pub fn distance_fast(a: &CategoryStats, b: &CategoryStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: a.mean.len(),
            got: b.mean.len(),
        });
    }
    let mut sq = 0.0f64;
    for (&x, &y) in a.mean.iter().zip(b.mean.iter()) {
        let diff = x - y;
        sq += diff * diff;
    }
    // Variance terms grouped so the value is bitwise symmetric in
    // (a, b); f64 addition commutes but does not associate.
    Ok((sq + (a.variance_sq + b.variance_sq)).sqrt())
}

/// Builds the locally scaled affinity matrix over all categories.
///
/// `delta_i` is the distance from `i` to its `tuning_k`-th nearest other
/// category (the farthest other category when fewer exist). A zero
/// `delta_i` is replaced by the median positive pairwise distance; if
/// every pairwise distance is zero the affinity degenerates to all ones.
pub fn build_affinity(stats: &[CategoryStats], tuning_k: usize) -> Result<AffinityMatrix> {
    let n = stats.len();
    if n < 2 {
        return Err(Error::InvalidParam(
            "affinity needs at least 2 categories".into(),
        ));
    }
    if tuning_k == 0 {
        return Err(Error::InvalidParam("tuning_k must be >= 1".into()));
    }

    let mut distances = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let d = distance_fast(&stats[i], &stats[j])?;
            distances[[i, j]] = d;
            distances[[j, i]] = d;
        }
    }

    let mut positive: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if distances[[i, j]] > 0.0 {
                positive.push(distances[[i, j]]);
            }
        }
    }

    if positive.is_empty() {
        // Every category coincides. Nothing to scale by, so make all
        // pairs maximally similar and let the partitioner fall back.
        return Ok(AffinityMatrix {
            values: Array2::ones((n, n)),
            bandwidths: Array2::ones((n, n)),
            distances,
        });
    }
    positive.sort_by(f64::total_cmp);
    let median_pos = if positive.len() % 2 == 1 {
        positive[positive.len() / 2]
    } else {
        0.5 * (positive[positive.len() / 2 - 1] + positive[positive.len() / 2])
    };

    let mut delta = vec![0.0f64; n];
    for i in 0..n {
        let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| distances[[i, j]]).collect();
        others.sort_by(f64::total_cmp);
        let d = others[tuning_k.min(others.len()) - 1];
        delta[i] = if d > 0.0 { d } else { median_pos };
    }

    let mut bandwidths = Array2::<f64>::zeros((n, n));
    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let bw = (delta[i] * delta[j]).sqrt();
            bandwidths[[i, j]] = bw;
            values[[i, j]] = if i == j {
                1.0
            } else {
                // Clamp so extreme scale ratios cannot underflow to an
                // exact zero; entries stay strictly positive.
                (-distances[[i, j]] / bw).exp().max(f64::MIN_POSITIVE)
            };
        }
    }

    Ok(AffinityMatrix {
        values,
        bandwidths,
        distances,
    })
}
