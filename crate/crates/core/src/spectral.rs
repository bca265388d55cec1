//! Normalized spectral clustering of categories.
//!
//! Given a symmetric affinity over `n` categories, [`laplacian_embed`]
//! takes the `k` bottom eigenvectors of the symmetric normalized
//! Laplacian `L = I - D^{-1/2} A D^{-1/2}` and row-normalizes them
//! (Ng-Jordan-Weiss). [`kmeans`] then groups the embedded rows with
//! k-means++ seeding and deterministic tie-breaking; [`spectral_partition`]
//! wires the two together and guarantees a usable split even for
//! degenerate affinities.

use ndarray::{Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed};

const MAX_ITERS: usize = 300;

/// Group assignment over `n` items; group ids are dense and every group
/// is non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub n_groups: usize,
}

impl Partition {
    /// Member indices per group, in ascending item order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups];
        for (i, &g) in self.assignment.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

fn check_affinity(a: &Array2<f64>) -> Result<()> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidParam(format!(
            "affinity must be square and non-empty, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-8 * scale {
                return Err(Error::InvalidParam(format!(
                    "affinity is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    if a.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParam(
            "affinity entries must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Rows of the `k` bottom eigenvectors of the symmetric normalized
/// Laplacian, each row scaled to unit norm (zero rows stay zero, which
/// happens only for isolated zero-degree items).
pub fn laplacian_embed(affinity: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    check_affinity(affinity)?;
    let n = affinity.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidParam(format!(
            "embedding dimension {k} out of range for {n} items"
        )));
    }

    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = affinity.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();

    let mut lap = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let off = affinity[[i, j]] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            let v = if i == j { 1.0 - off } else { -off };
            lap[[i, j]] = v;
            lap[[j, i]] = v;
        }
    }

    let eig = crate::eigen::symmetric_eigen(&lap)?;
    let mut embed = Array2::<f64>::zeros((n, k));
    for j in 0..k {
        for i in 0..n {
            embed[[i, j]] = eig.vectors[[i, j]];
        }
    }
    for mut row in embed.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(embed)
}

fn dist2(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

fn kmeanspp_init(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centers = Array2::<f64>::zeros((k, d));
    let mut chosen = vec![false; n];

    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    chosen[first] = true;

    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist2(points.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            WeightedIndex::new(&d2).map(|w| w.sample(rng)).unwrap_or(0)
        } else {
            // Every point coincides with a center; take the lowest
            // index not yet used so seeding stays deterministic.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[idx] = true;
        centers.row_mut(c).assign(&points.row(idx));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(dist2(points.row(i), centers.row(c)));
        }
    }
    centers
}

/// Nearest center per point; equal distances go to the lower center id.
fn assign_points(points: &Array2<f64>, centers: &Array2<f64>) -> Vec<usize> {
    (0..points.nrows())
        .map(|i| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..centers.nrows() {
                let d = dist2(points.row(i), centers.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Gives every empty cluster one point: the point farthest from its own
/// center among clusters that can spare one, lowest index on ties.
fn repair_empty(points: &Array2<f64>, centers: &Array2<f64>, assignment: &mut [usize], k: usize) {
    let n = assignment.len();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        let mut donor_d = -1.0f64;
        for i in 0..n {
            if counts[assignment[i]] <= 1 {
                continue;
            }
            let d = dist2(points.row(i), centers.row(assignment[i]));
            if d > donor_d {
                donor_d = d;
                donor = Some(i);
            }
        }
        if let Some(i) = donor {
            counts[assignment[i]] -= 1;
            assignment[i] = c;
            counts[c] += 1;
        }
    }
}

fn update_centers(points: &Array2<f64>, assignment: &[usize], k: usize) -> Array2<f64> {
    let d = points.ncols();
    let mut centers = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        let row = points.row(i);
        for j in 0..d {
            centers[[a, j]] += row[j];
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let inv = 1.0 / count as f64;
            centers.row_mut(c).mapv_inplace(|v| v * inv);
        }
    }
    centers
}

/// Lloyd's algorithm with k-means++ seeding. Always returns exactly `k`
/// non-empty groups (empty clusters are repaired each round), stops when
/// assignments stabilize or after 300 rounds. Fully deterministic in
/// (`points`, `k`, `seed`).
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<Partition> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidParam(format!("k={k} exceeds {n} points")));
    }

    let mut rng = derive_rng(seed, "kmeans", &[]);
    let mut centers = kmeanspp_init(points, k, &mut rng);
    let mut assignment = assign_points(points, &centers);
    repair_empty(points, &centers, &mut assignment, k);

    for _ in 0..MAX_ITERS {
        centers = update_centers(points, &assignment, k);
        let mut next = assign_points(points, &centers);
        repair_empty(points, &centers, &mut next, k);
        if next == assignment {
            break;
        }
        assignment = next;
    }

    Ok(Partition {
        assignment,
        n_groups: k,
    })
}

/// Splits `n >= 2` items into at most `k` groups (at least 2) from their
/// affinity submatrix.
///
/// The embedding is clustered with a seed derived from `seed`; if the
/// result ever collapses below 2 groups the fallbacks run in order:
/// three retries with alternative seeds, k-means directly on `means`
/// when given (one row per item), and finally a round-robin split, which
/// cannot collapse.
pub fn spectral_partition(
    affinity: &Array2<f64>,
    k: usize,
    seed: u64,
    means: Option<&Array2<f64>>,
) -> Result<Partition> {
    let n = affinity.nrows();
    if n < 2 {
        return Err(Error::InvalidParam("cannot partition fewer than 2 items".into()));
    }
    if k < 2 {
        return Err(Error::InvalidParam("partition needs k >= 2".into()));
    }
    if let Some(m) = means {
        if m.nrows() != n {
            return Err(Error::InvalidParam(format!(
                "means have {} rows, affinity has {n}",
                m.nrows()
            )));
        }
    }
    let k_eff = k.min(n);

    let embed = laplacian_embed(affinity, k_eff)?;
    for attempt in 0..4u64 {
        let part = kmeans(&embed, k_eff, derive_seed(seed, "spectral", &[attempt]))?;
        if part.n_groups >= 2 {
            return Ok(part);
        }
    }
    if let Some(m) = means {
        for attempt in 0..4u64 {
            let part = kmeans(m, k_eff, derive_seed(seed, "spectral-means", &[attempt]))?;
            if part.n_groups >= 2 {
                return Ok(part);
            }
        }
    }
    Ok(Partition {
        assignment: (0..n).map(|i| i % k_eff).collect(),
        n_groups: k_eff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    /// Affinity with two tight blocks {0,1} and {2,3}.
    fn two_block_affinity() -> Array2<f64> {
        let lo = 1e-3;
        arr2(&[
            [1.0, 0.9, lo, lo],
            [0.9, 1.0, lo, lo],
            [lo, lo, 1.0, 0.9],
            [lo, lo, 0.9, 1.0],
        ])
    }

    #[test]
    fn embedding_shape_and_row_norms() {
        let a = two_block_affinity();
        let e = laplacian_embed(&a, 2).unwrap();
        assert_eq!(e.dim(), (4, 2));
        for row in e.rows() {
            let n = row.dot(&row).sqrt();
            assert!((n - 1.0).abs() < 1e-9, "row norm {n}");
        }
    }

    #[test]
    fn embedding_separates_blocks() {
        let a = two_block_affinity();
        let e = laplacian_embed(&a, 2).unwrap();
        let d = |i: usize, j: usize| dist2(e.row(i), e.row(j));
        assert!(d(0, 1) < d(0, 2));
        assert!(d(0, 1) < d(0, 3));
        assert!(d(2, 3) < d(2, 0));
    }

    #[test]
    fn partition_recovers_blocks() {
        let a = two_block_affinity();
        let p = spectral_partition(&a, 2, 7, None).unwrap();
        assert_eq!(p.n_groups, 2);
        assert_eq!(p.assignment[0], p.assignment[1]);
        assert_eq!(p.assignment[2], p.assignment[3]);
        assert_ne!(p.assignment[0], p.assignment[2]);
    }

    #[test]
    fn partition_is_permutation_consistent() {
        // Swapping items 1 and 2 must swap their groups and nothing else.
        let a = two_block_affinity();
        let perm = [0usize, 2, 1, 3];
        let mut b = Array2::<f64>::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                b[[i, j]] = a[[perm[i], perm[j]]];
            }
        }
        let pa = spectral_partition(&a, 2, 3, None).unwrap();
        let pb = spectral_partition(&b, 2, 3, None).unwrap();
        let same = |p: &Partition, i: usize, j: usize| p.assignment[i] == p.assignment[j];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(same(&pa, perm[i], perm[j]), same(&pb, i, j));
            }
        }
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let pts = arr2(&[
            [0.0, 0.0],
            [0.1, 0.0],
            [10.0, 10.0],
            [10.1, 10.0],
            [-10.0, 10.0],
            [-10.1, 10.0],
        ]);
        let p = kmeans(&pts, 3, 5).unwrap();
        assert_eq!(p.n_groups, 3);
        assert_eq!(p.assignment[0], p.assignment[1]);
        assert_eq!(p.assignment[2], p.assignment[3]);
        assert_eq!(p.assignment[4], p.assignment[5]);
        let mut groups = [p.assignment[0], p.assignment[2], p.assignment[4]];
        groups.sort_unstable();
        assert_eq!(groups, [0, 1, 2]);
    }

    #[test]
    fn kmeans_never_returns_empty_groups() {
        // All points identical: repair must still fill every cluster.
        let pts = Array2::<f64>::zeros((6, 2));
        let p = kmeans(&pts, 3, 1).unwrap();
        let groups = p.groups();
        assert_eq!(groups.len(), 3);
        assert!(groups.iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn kmeans_is_deterministic() {
        let pts = arr2(&[[0.0, 0.0], [1.0, 0.3], [5.0, 5.0], [5.5, 4.5], [0.2, 0.1]]);
        let a = kmeans(&pts, 2, 42).unwrap();
        let b = kmeans(&pts, 2, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_k_larger_than_n_is_an_error() {
        let pts = Array2::<f64>::zeros((2, 2));
        assert!(kmeans(&pts, 3, 0).is_err());
    }

    #[test]
    fn degenerate_affinity_still_splits() {
        let a = Array2::<f64>::ones((5, 5));
        let p = spectral_partition(&a, 2, 11, None).unwrap();
        assert!(p.n_groups >= 2);
        assert_eq!(p.assignment.len(), 5);
        let groups = p.groups();
        assert!(groups.iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn asymmetric_affinity_is_rejected() {
        let mut a = two_block_affinity();
        a[[0, 1]] = 0.1;
        assert!(laplacian_embed(&a, 2).is_err());
    }
}
