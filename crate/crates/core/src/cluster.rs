//! k-means and k-medoids on the rows of a feature matrix.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("feature matrix contains a non-finite value at row {0}")]
    NonFinite(usize),
    #[error("restarts must be at least 1")]
    ZeroRestarts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    KMeans,
    KMedoids,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub method: Method,
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative objective change below which Lloyd iterations stop.
    pub tol: f64,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn new(k: usize) -> Self {
        ClusterConfig {
            k,
            method: Method::KMeans,
            restarts: 10,
            max_iter: 100,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster of each row, in `0..k`.
    pub labels: Vec<usize>,
    /// `k x d`; for k-medoids, copies of the medoid rows.
    pub centers: DMatrix<f64>,
    /// Sum of squared distances from each row to its center.
    pub objective: f64,
    /// Row index of each medoid (k-medoids only).
    pub medoids: Option<Vec<usize>>,
    /// Restart that produced the result.
    pub best_restart: usize,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centers.nrows()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|d| (x[(i, d)] - c[(j, d)]).powi(2)).sum()
}

fn check(x: &DMatrix<f64>, cfg: &ClusterConfig) -> Result<(), ClusterError> {
    if cfg.k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if cfg.restarts == 0 {
        return Err(ClusterError::ZeroRestarts);
    }
    if x.nrows() < cfg.k {
        return Err(ClusterError::TooFewPoints { n: x.nrows(), k: cfg.k });
    }
    for (i, row) in x.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite(i));
        }
    }
    Ok(())
}

/// Partitions the rows of `x` into `cfg.k` clusters.
///
/// Each restart draws its own seed from `cfg.seed`; the lowest objective wins
/// and ties go to the earliest restart, so the result does not depend on the
/// number of threads.
pub fn cluster(x: &DMatrix<f64>, cfg: &ClusterConfig) -> Result<Clustering, ClusterError> {
    check(x, cfg)?;
    let runs: Vec<Clustering> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let s = seed::derive_seed(cfg.seed, r as u64);
            let mut c = match cfg.method {
                Method::KMeans => lloyd(x, cfg, s).0,
                Method::KMedoids => pam(x, cfg.k, s),
            };
            c.best_restart = r;
            c
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, c| if c.objective < best.objective { c } else { best })
        .expect("at least one restart"))
}

pub fn kmeans(x: &DMatrix<f64>, k: usize, seed_value: u64) -> Result<Clustering, ClusterError> {
    cluster(x, &ClusterConfig { seed: seed_value, ..ClusterConfig::new(k) })
}

pub fn kmedoids(x: &DMatrix<f64>, k: usize, seed_value: u64) -> Result<Clustering, ClusterError> {
    cluster(
        x,
        &ClusterConfig {
            seed: seed_value,
            method: Method::KMedoids,
            ..ClusterConfig::new(k)
        },
    )
}

/// k-means++ seeding: returns row indices of the initial centers.
fn plus_plus(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, x, chosen[0])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a center.
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, x, next));
        }
    }
    chosen
}

/// Assigns each row to the nearest center, lowest index on ties.
fn assign(x: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &mut [usize]) -> (f64, Vec<f64>) {
    let mut objective = 0.0;
    let mut dist = vec![0.0; x.nrows()];
    for i in 0..x.nrows() {
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for c in 0..centers.nrows() {
            let d = sq_dist(x, i, centers, c);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        labels[i] = best;
        dist[i] = best_d;
        objective += best_d;
    }
    (objective, dist)
}

/// One Lloyd run; also returns the objective after every assignment step.
fn lloyd(x: &DMatrix<f64>, cfg: &ClusterConfig, seed_value: u64) -> (Clustering, Vec<f64>) {
    let (n, d, k) = (x.nrows(), x.ncols(), cfg.k);
    let mut rng = seed::rng(seed_value);
    let init = plus_plus(x, k, &mut rng);
    let mut centers = x.select_rows(&init);
    let mut labels = vec![0; n];
    let mut history = Vec::new();
    let (mut objective, mut dist) = assign(x, &centers, &mut labels);
    history.push(objective);
    for _ in 0..cfg.max_iter {
        // Update step, repairing empty clusters with the farthest point.
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                sums[(labels[i], j)] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n >= k leaves a cluster with two points");
                counts[labels[far]] -= 1;
                for j in 0..d {
                    sums[(labels[far], j)] -= x[(far, j)];
                    sums[(c, j)] = x[(far, j)];
                }
                counts[c] = 1;
                labels[far] = c;
                dist[far] = 0.0;
            }
        }
        for c in 0..k {
            for j in 0..d {
                centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
            }
        }
        let previous = objective;
        (objective, dist) = assign(x, &centers, &mut labels);
        history.push(objective);
        if previous - objective <= cfg.tol * previous.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let clustering = Clustering {
        labels,
        centers,
        objective,
        medoids: None,
        best_restart: 0,
    };
    (clustering, history)
}

/// PAM: greedy swaps of a medoid with a non-medoid while the summed
/// Euclidean distance decreases.
fn pam(x: &DMatrix<f64>, k: usize, seed_value: u64) -> Clustering {
    let n = x.nrows();
    let dist = DMatrix::from_fn(n, n, |i, j| sq_dist(x, i, x, j).sqrt());
    let mut rng = seed::rng(seed_value);
    let mut medoids = plus_plus(x, k, &mut rng);
    let cost = |meds: &[usize]| -> f64 {
        (0..n)
            .map(|i| meds.iter().map(|&m| dist[(i, m)]).fold(f64::INFINITY, f64::min))
            .sum()
    };
    let mut current = cost(&medoids);
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for slot in 0..k {
            for cand in 0..n {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = cost(&trial);
                if c < current - 1e-12 * current.max(1.0) && best.is_none_or(|b| c < b.0) {
                    best = Some((c, slot, cand));
                }
            }
        }
        match best {
            Some((c, slot, cand)) => {
                medoids[slot] = cand;
                current = c;
            }
            None => break,
        }
    }
    let centers = x.select_rows(&medoids);
    let mut labels = vec![0; n];
    for i in 0..n {
        let mut best = 0;
        for c in 1..k {
            if dist[(i, medoids[c])] < dist[(i, medoids[best])] {
                best = c;
            }
        }
        labels[i] = best;
    }
    let objective = (0..n).map(|i| dist[(i, medoids[labels[i]])].powi(2)).sum();
    Clustering {
        labels,
        centers,
        objective,
        medoids: Some(medoids),
        best_restart: 0,
    }
}

/// The `n x k` 0/1 membership matrix.
pub fn to_mstar(labels: &[usize], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), k, |i, c| if labels[i] == c { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs(per: usize, centers: &[[f64; 2]], spread: f64, seed_value: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = seed::rng(seed_value);
        let n = per * centers.len();
        let truth: Vec<usize> = (0..n).map(|i| i / per).collect();
        let x = DMatrix::from_fn(n, 2, |i, d| centers[truth[i]][d] + rng.random_range(-spread..spread));
        (x, truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn separated_blobs() {
        let (x, truth) = blobs(30, &[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 1.0, 1);
        for method in [Method::KMeans, Method::KMedoids] {
            let c = cluster(&x, &ClusterConfig { method, ..ClusterConfig::new(3) }).unwrap();
            assert!(same_partition(&c.labels, &truth), "{method:?}");
            assert_eq!(c.sizes(), vec![30, 30, 30]);
        }
    }

    #[test]
    fn k_equals_n_gives_zero_objective() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 5.0, 9.0]);
        let c = kmeans(&x, 4, 0).unwrap();
        assert_eq!(c.objective, 0.0);
        let mut l = c.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_points() {
        let x = DMatrix::from_row_slice(5, 1, &[1.0, 1.0, 1.0, 1.0, 2.0]);
        let c = kmeans(&x, 3, 3).unwrap();
        assert_eq!(c.objective, 0.0);
        assert!(c.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn errors() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(kmeans(&x, 3, 0).unwrap_err(), ClusterError::TooFewPoints { n: 2, k: 3 });
        assert_eq!(kmeans(&x, 0, 0).unwrap_err(), ClusterError::ZeroClusters);
        let bad = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        assert_eq!(kmeans(&bad, 1, 0).unwrap_err(), ClusterError::NonFinite(1));
    }

    #[test]
    fn deterministic_for_seed() {
        let (x, _) = blobs(20, &[[0.0, 0.0], [1.0, 1.0]], 1.0, 2);
        assert_eq!(kmeans(&x, 2, 5).unwrap(), kmeans(&x, 2, 5).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(pool.install(|| kmeans(&x, 2, 5).unwrap()), kmeans(&x, 2, 5).unwrap());
    }

    /// Every 2-partition of 8 points, by brute force.
    fn best_two_partition(x: &DMatrix<f64>) -> f64 {
        let n = x.nrows();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let mut obj = 0.0;
            for side in [true, false] {
                let idx: Vec<usize> = (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).collect();
                let sub = x.select_rows(&idx);
                let mean = sub.row_mean();
                obj += sub.row_iter().map(|r| (r - &mean).norm_squared()).sum::<f64>();
            }
            best = best.min(obj);
        }
        best
    }

    #[test]
    fn matches_exhaustive_optimum() {
        let mut rng = seed::rng(9);
        for trial in 0..25 {
            let x = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
            let c = kmeans(&x, 2, trial).unwrap();
            let opt = best_two_partition(&x);
            assert!(c.objective <= opt * (1.0 + 1e-9) + 1e-12, "{trial}: {} vs {opt}", c.objective);
        }
    }

    #[test]
    fn medoids_are_rows() {
        let (x, _) = blobs(10, &[[0.0, 0.0], [5.0, 5.0]], 1.0, 4);
        let c = kmedoids(&x, 2, 1).unwrap();
        let meds = c.medoids.unwrap();
        for (slot, &m) in meds.iter().enumerate() {
            assert_eq!(c.centers.row(slot), x.row(m));
            assert_eq!(c.labels[m], slot);
        }
    }

    #[test]
    fn mstar_rows_are_indicators() {
        let m = to_mstar(&[1, 0, 1], 2);
        assert_eq!(m, DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn lloyd_objective_never_increases(seed_value in any::<u64>(), n in 3usize..40, k in 1usize..4, d in 1usize..4) {
            prop_assume!(n >= k);
            let mut rng = seed::rng(seed_value);
            let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
            let (c, history) = lloyd(&x, &ClusterConfig::new(k), seed_value);
            for w in history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            prop_assert!(c.sizes().iter().all(|&s| s > 0));
        }

        #[test]
        fn labels_in_range_and_objective_consistent(seed_value in any::<u64>(), n in 2usize..30, k in 1usize..4) {
            prop_assume!(n >= k);
            let mut rng = seed::rng(seed_value);
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            for method in [Method::KMeans, Method::KMedoids] {
                let c = cluster(&x, &ClusterConfig { method, restarts: 2, seed: seed_value, ..ClusterConfig::new(k) }).unwrap();
                prop_assert!(c.labels.iter().all(|&l| l < k));
                let obj: f64 = (0..n).map(|i| sq_dist(&x, i, &c.centers, c.labels[i])).sum();
                prop_assert!((obj - c.objective).abs() <= 1e-9 * obj.max(1.0));
            }
        }

        #[test]
        fn relabel_invariance(seed_value in any::<u64>(), n in 2usize..30, k in 1usize..4) {
            // Permuting the rows permutes the partition found on well-separated data.
            prop_assume!(n >= k);
            let centers = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
            let mut rng = seed::rng(seed_value);
            let truth: Vec<usize> = (0..n).map(|i| i % k).collect();
            let x = DMatrix::from_fn(n, 2, |i, d| centers[truth[i]][d] + rng.random_range(-1.0..1.0));
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let a = kmeans(&x, k, 1).unwrap();
            let b = kmeans(&x.select_rows(&perm), k, 1).unwrap();
            let moved: Vec<usize> = perm.iter().map(|&p| a.labels[p]).collect();
            prop_assert!(same_partition(&moved, &b.labels));
        }
    }
}
