//! Misclustering counts under the best label permutation, and summaries
//! across replicates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("predicted has {predicted} labels, truth has {truth}")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("no labels to compare")]
    Empty,
    #[error("no reports to aggregate")]
    NoReports,
}

/// Result of comparing one predicted labeling with the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// Nodes whose matched label differs from the truth.
    pub count: usize,
    pub rate: f64,
    /// `mapping[p]` is the true label matched to predicted label `p`, or
    /// `None` when `p` has no partner (more predicted than true classes).
    pub mapping: Vec<Option<usize>>,
    /// `confusion[p][t]` counts nodes predicted `p` with truth `t`.
    pub confusion: Vec<Vec<usize>>,
}

/// Maps arbitrary label values to `0..m` in ascending order of value.
pub fn compact_labels<T: Ord + Clone>(labels: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut values: Vec<T> = labels.to_vec();
    values.sort();
    values.dedup();
    let index: BTreeMap<&T, usize> = values.iter().enumerate().map(|(i, v)| (v, i)).collect();
    (labels.iter().map(|l| index[l]).collect(), values.clone())
}

/// Minimum-cost assignment on a square cost matrix (Hungarian method with
/// potentials). Returns `assignment[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let reduced = cost[r - 1][c - 1] - u[r] - v[c];
                if reduced < minv[c] {
                    minv[c] = reduced;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for c in 1..=n {
        if owner[c] != 0 {
            assignment[owner[c] - 1] = c - 1;
        }
    }
    assignment
}

/// Counts nodes that disagree with the truth after matching predicted
/// classes to true classes so as to maximize agreement. Both labelings must
/// use values `0..m`; see [`compact_labels`] otherwise.
pub fn misclustering(predicted: &[usize], truth: &[usize]) -> Result<EvalReport, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let n = truth.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let kp = predicted.iter().max().expect("nonempty") + 1;
    let kt = truth.iter().max().expect("nonempty") + 1;
    let mut confusion = vec![vec![0usize; kt]; kp];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[p][t] += 1;
    }
    let m = kp.max(kt);
    let cost: Vec<Vec<f64>> = (0..m)
        .map(|p| {
            (0..m)
                .map(|t| {
                    let c = if p < kp && t < kt { confusion[p][t] } else { 0 };
                    -(c as f64)
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);
    let matched: usize = (0..kp)
        .filter(|&p| assignment[p] < kt)
        .map(|p| confusion[p][assignment[p]])
        .sum();
    let mapping = (0..kp)
        .map(|p| (assignment[p] < kt).then_some(assignment[p]))
        .collect();
    let count = n - matched;
    Ok(EvalReport {
        n,
        count,
        rate: count as f64 / n as f64,
        mapping,
        confusion,
    })
}

/// Mean and spread of per-replicate results. Replicates may differ in `n`;
/// `mean_rate` averages the per-replicate rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub replicates: usize,
    pub mean_count: f64,
    pub mean_rate: f64,
    /// Standard error of the mean count (sample standard deviation / √r).
    pub stderr_count: f64,
    pub stderr_rate: f64,
    pub min_count: usize,
    pub max_count: usize,
    pub mean_n: f64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let r = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / r;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Summary, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::NoReports);
    }
    let counts: Vec<f64> = reports.iter().map(|r| r.count as f64).collect();
    let rates: Vec<f64> = reports.iter().map(|r| r.rate).collect();
    let sizes: Vec<f64> = reports.iter().map(|r| r.n as f64).collect();
    let (mean_count, stderr_count) = mean_and_stderr(&counts);
    let (mean_rate, stderr_rate) = mean_and_stderr(&rates);
    Ok(Summary {
        replicates: reports.len(),
        mean_count,
        mean_rate,
        stderr_count,
        stderr_rate,
        min_count: reports.iter().map(|r| r.count).min().expect("nonempty"),
        max_count: reports.iter().map(|r| r.count).max().expect("nonempty"),
        mean_n: mean_and_stderr(&sizes).0,
    })
}
