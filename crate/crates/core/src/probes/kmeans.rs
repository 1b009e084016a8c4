//! k-means clustering probe: k-means++ seeding, Lloyd iterations, best of
//! several restarts.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::num::Scalar;
use crate::rng;

use super::metrics::best_permutation;
use super::{ProbeError, ProbeScore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { restarts: 10, max_iterations: 300, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit<T> {
    pub centroids: Array2<T>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

fn nearest<T: Scalar>(point: ArrayView1<T>, centroids: &Array2<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, centroid) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed<T: Scalar, R: Rng>(x: ArrayView2<T>, k: usize, rng: &mut R) -> Array2<T> {
    let m = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..m)));
    let mut d2: Vec<f64> = x.outer_iter().map(|p| sq_dist(p, centroids.row(0)).as_f64()).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, p) in x.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)).as_f64());
        }
    }
    centroids
}

/// One k-means run. Empty clusters are re-seeded at the point farthest from
/// its own centroid.
pub fn kmeans<T: Scalar, R: Rng>(x: ArrayView2<T>, k: usize, config: &KMeansConfig, rng: &mut R) -> KMeansFit<T> {
    let m = x.nrows();
    let mut centroids = plus_plus_seed(x, k, rng);
    let mut assignment = vec![0usize; m];
    let mut distances = vec![T::zero(); m];
    let tolerance = T::lit(config.tolerance);
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        for (i, p) in x.outer_iter().enumerate() {
            (assignment[i], distances[i]) = nearest(p, &centroids);
        }
        let mut sums = Array2::<T>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, p) in x.outer_iter().enumerate() {
            let mut row = sums.row_mut(assignment[i]);
            row += &p;
            counts[assignment[i]] += 1;
        }
        let mut reseeded = false;
        let mut taken = vec![false; m];
        for (c, count) in counts.iter_mut().enumerate() {
            if *count == 0 {
                let far = (0..m)
                    .filter(|&i| !taken[i])
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if distances[b] >= distances[i] => Some(b),
                        _ => Some(i),
                    })
                    .unwrap_or(0);
                taken[far] = true;
                distances[far] = T::zero();
                sums.row_mut(c).assign(&x.row(far));
                *count = 1;
                reseeded = true;
            }
        }
        for (mut row, &n) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
            let scale = T::one() / T::from_usize_lossy(n);
            row.mapv_inplace(|v| v * scale);
        }
        let shift = sums
            .outer_iter()
            .zip(centroids.outer_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(T::zero(), T::max);
        centroids = sums;
        if shift < tolerance && !reseeded {
            break;
        }
    }
    for (i, p) in x.outer_iter().enumerate() {
        assignment[i] = nearest(p, &centroids).0;
    }
    KMeansFit { centroids, assignment, iterations }
}

/// Clusters all of `x` into `k` groups, maps clusters to labels by the best
/// permutation and keeps the best weighted F1 over the restarts.
pub fn kmeans_probe<T: Scalar>(
    x: ArrayView2<T>,
    y: &[usize],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<ProbeScore, ProbeError> {
    let m = x.nrows();
    if y.len() != m {
        return Err(ProbeError::LengthMismatch { left: m, right: y.len() });
    }
    if k == 0 || m < k {
        return Err(ProbeError::TooFewPoints { points: m, k });
    }
    let mut best: Option<ProbeScore> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = rng::stream(seed, &[rng::tags::KMEANS, restart as u64]);
        let fit = kmeans(x, k, config, &mut rng);
        let (_, confusion) = best_permutation(y, &fit.assignment, k)?;
        let score = ProbeScore::from_confusion(confusion, 0, m);
        if best.as_ref().is_none_or(|b| score.weighted_f1 > b.weighted_f1) {
            best = Some(score);
        }
    }
    Ok(best.expect("at least one restart"))
}
