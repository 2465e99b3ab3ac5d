//! End-to-end community detection: build the spectral matrix, take its
//! leading singular vectors, turn them into features, and cluster.
//!
//! Three ways to apply an algorithm to a graph:
//!
//! * [`run_entire`] clusters every node.
//! * [`run_core_only`] clusters only the core, the intersection of the
//!   largest components of `AAᵀ` and `AᵀA`. It still uses the singular
//!   vectors of the whole graph, restricted to core rows.
//! * [`run_intersection_attach`] clusters the core as above, then labels
//!   every other node by majority vote over its edges into the core.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, ClusterConfig, ClusterError, Method};
use crate::graph::{product_component, DirectedGraph, NodeId, NodeSet, ProductSide};
use crate::ratio::{self, RatioConfig, RatioError};
use crate::seed;
use crate::spectral::{
    self, LaplacianConfig, SingularTriple, SparseMatrix, SpectralError, SvdOptions,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Ratio(#[from] RatioError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("core has {core} nodes, fewer than K = {k}")]
    CoreTooSmall { core: usize, k: usize },
    #[error("{algorithm} needs K >= {min}, got {k}")]
    InvalidK {
        algorithm: String,
        k: usize,
        min: usize,
    },
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
}

impl PipelineError {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PipelineError::Spectral(SpectralError::NotConverged { .. })
                | PipelineError::Spectral(SpectralError::DenseFailure)
                | PipelineError::CoreTooSmall { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Ratios against the leading singular vector.
    Dscore,
    /// Rows normalized by their `ℓ_q` norm.
    DscoreQ { q: u32 },
    /// Raw singular vectors `[V, U]`.
    Opca,
}

/// A named algorithm together with its tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmSpec {
    pub family: Family,
    /// Use the regularized Laplacian instead of the adjacency matrix.
    pub regularized: bool,
    pub laplacian: LaplacianConfig,
    /// Clamp bound; `None` means the log of the number of clustered rows.
    pub threshold: Option<f64>,
    pub method: Method,
    pub restarts: usize,
    pub max_iter: usize,
    pub svd: SvdOptions,
}

impl AlgorithmSpec {
    pub fn new(family: Family, regularized: bool) -> Self {
        let template = ClusterConfig::new(1);
        AlgorithmSpec {
            family,
            regularized,
            laplacian: LaplacianConfig::default(),
            threshold: None,
            method: template.method,
            restarts: template.restarts,
            max_iter: template.max_iter,
            svd: SvdOptions::default(),
        }
    }

    /// The six algorithms compared in the simulations.
    pub fn roster() -> Vec<AlgorithmSpec> {
        ["dscore", "rdscore", "dscore2", "rdscore2", "opca", "rpca"]
            .iter()
            .map(|s| s.parse().expect("known name"))
            .collect()
    }

    pub fn min_k(&self) -> usize {
        match self.family {
            Family::Dscore => 2,
            _ => 1,
        }
    }

    fn ratio_config(&self) -> RatioConfig {
        RatioConfig {
            threshold: self.threshold,
            q: match self.family {
                Family::DscoreQ { q } => q,
                _ => 2,
            },
        }
    }

    fn cluster_config(&self, k: usize, seed_value: u64) -> ClusterConfig {
        ClusterConfig {
            k,
            method: self.method,
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: 1e-8,
            seed: seed_value,
        }
    }

    /// Width of the feature matrix for `K` communities.
    pub fn feature_dim(&self, k: usize) -> usize {
        match self.family {
            Family::Dscore => 2 * k - 2,
            Family::DscoreQ { .. } | Family::Opca => 2 * k,
        }
    }
}

impl fmt::Display for AlgorithmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = if self.regularized { "r" } else { "" };
        match self.family {
            Family::Dscore => write!(f, "{r}dscore"),
            Family::DscoreQ { q } => write!(f, "{r}dscore{q}"),
            Family::Opca if self.regularized => write!(f, "rpca"),
            Family::Opca => write!(f, "opca"),
        }
    }
}

/// Accepts `dscore`, `dscore<q>`, `opca`, and the same names prefixed with
/// `r` for the regularized variant (`rpca` for regularized oPCA).
impl FromStr for AlgorithmSpec {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let unknown = || PipelineError::UnknownAlgorithm(s.to_string());
        match lower.as_str() {
            "opca" => return Ok(AlgorithmSpec::new(Family::Opca, false)),
            "rpca" => return Ok(AlgorithmSpec::new(Family::Opca, true)),
            _ => {}
        }
        let (regularized, rest) = match lower.strip_prefix("rdscore") {
            Some(rest) => (true, rest),
            None => (false, lower.strip_prefix("dscore").ok_or_else(unknown)?),
        };
        let family = if rest.is_empty() {
            Family::Dscore
        } else {
            let q: u32 = rest.parse().map_err(|_| unknown())?;
            if q == 0 {
                return Err(unknown());
            }
            Family::DscoreQ { q }
        };
        Ok(AlgorithmSpec::new(family, regularized))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Warning {
    /// `σ_K ≈ σ_{K+1}`: the singular subspace is not well defined.
    DegenerateGap,
    RankDeficient,
    /// Rows whose leading singular vector entries are zero in `U` or `V`.
    ZeroRows(usize),
    /// Feature entries cut to the clamp bound.
    Clamped(usize),
    /// Non-core nodes with no edge into the core; they received the largest
    /// core community.
    Unreachable(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    /// Label of `nodes[i]`, in `0..K`.
    pub labels: Vec<usize>,
    /// Nodes covered by `labels`, ascending.
    pub nodes: Vec<NodeId>,
    /// Nodes clustered spectrally.
    pub core: NodeSet,
    /// Nodes labeled by attachment.
    pub attached: NodeSet,
    pub warnings: Vec<Warning>,
}

impl PipelineResult {
    /// Labels indexed by node id, or `None` for uncovered nodes.
    pub fn label_of(&self, node: NodeId) -> Option<usize> {
        self.nodes.binary_search(&node).ok().map(|i| self.labels[i])
    }
}

/// The matrix whose singular vectors drive the algorithm: the adjacency
/// matrix, or the regularized Laplacian for the `r` variants.
pub fn spectral_input(g: &DirectedGraph, spec: &AlgorithmSpec) -> Result<SparseMatrix, PipelineError> {
    Ok(if spec.regularized {
        spectral::regularized_laplacian(g, &spec.laplacian)?
    } else {
        SparseMatrix::adjacency(g)
    })
}

fn check_k(spec: &AlgorithmSpec, k: usize, n: usize) -> Result<(), PipelineError> {
    if k < spec.min_k() {
        return Err(PipelineError::InvalidK {
            algorithm: spec.to_string(),
            k,
            min: spec.min_k(),
        });
    }
    if k > n {
        return Err(PipelineError::CoreTooSmall { core: n, k });
    }
    Ok(())
}

/// Top-`K` singular triple of the algorithm's matrix. The SVD start block is
/// seeded from stream 0 of `seed_value`.
pub fn leading_vectors(
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
) -> Result<SingularTriple, PipelineError> {
    check_k(spec, k, g.node_count())?;
    let m = spectral_input(g, spec)?;
    let opts = SvdOptions {
        seed: seed::derive_seed(seed_value, 0),
        ..spec.svd
    };
    Ok(spectral::top_k_svd(&m, k, &opts)?)
}

/// Feature matrix for the given rows (all rows if `None`), with any
/// warnings it raised.
pub fn embed(
    svd: &SingularTriple,
    rows: Option<&[usize]>,
    spec: &AlgorithmSpec,
) -> Result<(DMatrix<f64>, Vec<Warning>), PipelineError> {
    let mut warnings = Vec::new();
    if svd.degenerate_gap {
        warnings.push(Warning::DegenerateGap);
    }
    if svd.rank_deficient {
        warnings.push(Warning::RankDeficient);
    }
    let all: Vec<usize>;
    let idx = match rows {
        Some(r) => r,
        None => {
            all = (0..svd.u.nrows()).collect();
            &all
        }
    };
    let zero_rows = idx
        .iter()
        .filter(|&&i| svd.u[(i, 0)] == 0.0 || svd.v[(i, 0)] == 0.0)
        .count();
    if zero_rows > 0 && spec.family == Family::Dscore {
        warnings.push(Warning::ZeroRows(zero_rows));
    }
    let cfg = spec.ratio_config();
    let data = match spec.family {
        Family::Dscore | Family::DscoreQ { .. } => {
            let r = if spec.family == Family::Dscore {
                ratio::dscore_ratio(svd, rows, &cfg)?
            } else {
                ratio::dscoreq_ratio(svd, rows, &cfg)?
            };
            if r.clamped > 0 {
                warnings.push(Warning::Clamped(r.clamped));
            }
            r.data
        }
        Family::Opca => {
            let (u, v) = (svd.u.select_rows(idx), svd.v.select_rows(idx));
            let k = u.ncols();
            let mut x = DMatrix::zeros(idx.len(), 2 * k);
            x.columns_mut(0, k).copy_from(&v);
            x.columns_mut(k, k).copy_from(&u);
            x
        }
    };
    Ok((data, warnings))
}

fn cluster_rows(
    x: &DMatrix<f64>,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
) -> Result<Vec<usize>, PipelineError> {
    let cfg = spec.cluster_config(k, seed::derive_seed(seed_value, 1));
    Ok(cluster::cluster(x, &cfg)?.labels)
}

pub fn run_entire(
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
) -> Result<PipelineResult, PipelineError> {
    let svd = leading_vectors(g, k, spec, seed_value)?;
    run_entire_with_svd(g, k, spec, seed_value, &svd)
}

/// [`run_entire`] with a precomputed singular triple.
pub fn run_entire_with_svd(
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
    svd: &SingularTriple,
) -> Result<PipelineResult, PipelineError> {
    let n = g.node_count();
    check_k(spec, k, n)?;
    let (x, warnings) = embed(svd, None, spec)?;
    let labels = cluster_rows(&x, k, spec, seed_value)?;
    Ok(PipelineResult {
        labels,
        nodes: (0..n).collect(),
        core: NodeSet::full(n),
        attached: NodeSet::from_mask(vec![false; n]),
        warnings,
    })
}

/// Intersection of the largest components of `AAᵀ` and `AᵀA`.
pub fn intersection_core(g: &DirectedGraph) -> NodeSet {
    product_component(g, ProductSide::Left).intersection(&product_component(g, ProductSide::Right))
}

pub fn run_core_only(
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
) -> Result<PipelineResult, PipelineError> {
    let svd = leading_vectors(g, k, spec, seed_value)?;
    run_core_only_with_svd(g, k, spec, seed_value, &svd, &intersection_core(g))
}

/// [`run_core_only`] with a precomputed singular triple and core.
pub fn run_core_only_with_svd(
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
    svd: &SingularTriple,
    core: &NodeSet,
) -> Result<PipelineResult, PipelineError> {
    check_k(spec, k, g.node_count())?;
    if core.len() < k {
        return Err(PipelineError::CoreTooSmall { core: core.len(), k });
    }
    let (x, warnings) = embed(svd, Some(core.members()), spec)?;
    let labels = cluster_rows(&x, k, spec, seed_value)?;
    Ok(PipelineResult {
        labels,
        nodes: core.members().to_vec(),
        core: core.clone(),
        attached: NodeSet::from_mask(vec![false; g.node_count()]),
        warnings,
    })
}

pub fn run_intersection_attach(
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
) -> Result<PipelineResult, PipelineError> {
    let svd = leading_vectors(g, k, spec, seed_value)?;
    run_intersection_attach_with_svd(g, k, spec, seed_value, &svd, &intersection_core(g))
}

pub fn run_intersection_attach_with_svd(
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
    svd: &SingularTriple,
    core: &NodeSet,
) -> Result<PipelineResult, PipelineError> {
    let core_run = run_core_only_with_svd(g, k, spec, seed_value, svd, core)?;
    let mut core_labels = vec![None; g.node_count()];
    for (&node, &label) in core_run.nodes.iter().zip(&core_run.labels) {
        core_labels[node] = Some(label);
    }
    let (labels, unreachable) = attach(g, &core_labels, k);
    let mut warnings = core_run.warnings;
    if !unreachable.is_empty() {
        warnings.push(Warning::Unreachable(unreachable));
    }
    Ok(PipelineResult {
        labels,
        nodes: (0..g.node_count()).collect(),
        attached: core.complement(),
        core: core.clone(),
        warnings,
    })
}

/// Labels every node without a core label by the community it shares the
/// most edges with (in plus out, counted over labeled nodes only). Ties go
/// to the smaller community index. Nodes with no labeled neighbor take the
/// largest core community and are returned in the second list.
pub fn attach(
    g: &DirectedGraph,
    core_labels: &[Option<usize>],
    k: usize,
) -> (Vec<usize>, Vec<NodeId>) {
    let mut sizes = vec![0usize; k];
    for &l in core_labels.iter().flatten() {
        sizes[l] += 1;
    }
    let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap_or(0);
    let mut unreachable = Vec::new();
    let labels = (0..g.node_count())
        .map(|i| {
            if let Some(l) = core_labels[i] {
                return l;
            }
            let mut votes = vec![0usize; k];
            for &j in g.out_neighbors(i).iter().chain(g.in_neighbors(i)) {
                if let Some(l) = core_labels[j] {
                    votes[l] += 1;
                }
            }
            if votes.iter().all(|&v| v == 0) {
                unreachable.push(i);
                return largest;
            }
            (0..k).max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a))).expect("k >= 1")
        })
        .collect();
    (labels, unreachable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Entire,
    IntersectionAttach,
    CoreOnly,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Entire, Approach::IntersectionAttach, Approach::CoreOnly];

    pub fn name(&self) -> &'static str {
        match self {
            Approach::Entire => "entire",
            Approach::IntersectionAttach => "intersection_attach",
            Approach::CoreOnly => "core_only",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entire" => Ok(Approach::Entire),
            "intersection_attach" | "attach" => Ok(Approach::IntersectionAttach),
            "core_only" | "core" => Ok(Approach::CoreOnly),
            other => Err(format!("unknown approach {other:?}")),
        }
    }
}

/// Dispatches on `approach`, reusing a precomputed triple and core.
pub fn run_with_svd(
    approach: Approach,
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
    svd: &SingularTriple,
    core: &NodeSet,
) -> Result<PipelineResult, PipelineError> {
    match approach {
        Approach::Entire => run_entire_with_svd(g, k, spec, seed_value, svd),
        Approach::IntersectionAttach => {
            run_intersection_attach_with_svd(g, k, spec, seed_value, svd, core)
        }
        Approach::CoreOnly => run_core_only_with_svd(g, k, spec, seed_value, svd, core),
    }
}

pub fn run(
    approach: Approach,
    g: &DirectedGraph,
    k: usize,
    spec: &AlgorithmSpec,
    seed_value: u64,
) -> Result<PipelineResult, PipelineError> {
    let svd = leading_vectors(g, k, spec, seed_value)?;
    let core = match approach {
        Approach::Entire => NodeSet::full(g.node_count()),
        _ => intersection_core(g),
    };
    run_with_svd(approach, g, k, spec, seed_value, &svd, &core)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::misclustering;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_cliques(m: usize) -> DirectedGraph {
        let mut edges = Vec::new();
        for block in 0..2 {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        edges.push((block * m + i, block * m + j));
                    }
                }
            }
        }
        DirectedGraph::from_edges(2 * m, edges).unwrap()
    }

    /// Two dense blocks with a few cross edges, so the graph is connected.
    fn noisy_blocks(m: usize, p_in: f64, p_out: f64, seed_value: u64) -> (DirectedGraph, Vec<usize>) {
        let mut rng = seed::rng(seed_value);
        let truth: Vec<usize> = (0..2 * m).map(|i| i / m).collect();
        let mut edges = Vec::new();
        for i in 0..2 * m {
            for j in 0..2 * m {
                let p = if truth[i] == truth[j] { p_in } else { p_out };
                if i != j && rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        (DirectedGraph::from_edges(2 * m, edges).unwrap(), truth)
    }

    #[test]
    fn names_round_trip() {
        for name in ["dscore", "rdscore", "dscore2", "rdscore2", "dscore1", "opca", "rpca"] {
            let spec: AlgorithmSpec = name.parse().unwrap();
            assert_eq!(spec.to_string(), name);
        }
        assert_eq!("DScore2".parse::<AlgorithmSpec>().unwrap().family, Family::DscoreQ { q: 2 });
        for bad in ["pca", "dscore0", "dscorex", "rdscorey", ""] {
            assert!(bad.parse::<AlgorithmSpec>().is_err(), "{bad}");
        }
        assert_eq!(AlgorithmSpec::roster().len(), 6);
    }

    #[test]
    fn separated_cliques_are_recovered() {
        let g = two_cliques(20);
        let truth: Vec<usize> = (0..40).map(|i| i / 20).collect();
        for spec in AlgorithmSpec::roster() {
            // Disconnected blocks make σ_1 = σ_2, so only oPCA is well posed.
            if spec.family != Family::Opca {
                continue;
            }
            let r = run_entire(&g, 2, &spec, 1).unwrap();
            assert_eq!(misclustering(&r.labels, &truth).unwrap().count, 0, "{spec}");
        }
    }

    #[test]
    fn noisy_blocks_are_recovered_by_every_algorithm() {
        let (g, truth) = noisy_blocks(40, 0.5, 0.05, 3);
        for spec in AlgorithmSpec::roster() {
            for approach in Approach::ALL {
                let r = run(approach, &g, 2, &spec, 7).unwrap();
                let t: Vec<usize> = r.nodes.iter().map(|&i| truth[i]).collect();
                assert_eq!(misclustering(&r.labels, &t).unwrap().count, 0, "{spec} {approach}");
            }
        }
    }

    #[test]
    fn feature_shapes() {
        let (g, _) = noisy_blocks(15, 0.5, 0.1, 4);
        for k in 2..4 {
            for spec in AlgorithmSpec::roster() {
                let svd = leading_vectors(&g, k, &spec, 1).unwrap();
                let (x, _) = embed(&svd, None, &spec).unwrap();
                assert_eq!(x.shape(), (30, spec.feature_dim(k)), "{spec}");
            }
        }
    }

    #[test]
    fn dscore_rejects_k_one() {
        let (g, _) = noisy_blocks(5, 0.5, 0.1, 5);
        let err = run_entire(&g, 1, &"dscore".parse().unwrap(), 0).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidK { k: 1, min: 2, .. }));
        assert!(run_entire(&g, 1, &"opca".parse().unwrap(), 0).is_ok());
    }

    #[test]
    fn regularization_changes_only_the_input_matrix() {
        let (g, _) = noisy_blocks(20, 0.4, 0.1, 6);
        let plain: AlgorithmSpec = "dscore".parse().unwrap();
        let reg: AlgorithmSpec = "rdscore".parse().unwrap();
        assert_eq!(plain.family, reg.family);
        let a = spectral_input(&g, &plain).unwrap();
        let l = spectral_input(&g, &reg).unwrap();
        assert_eq!(l, spectral::regularized_laplacian(&g, &LaplacianConfig::default()).unwrap());
        assert_eq!(a, SparseMatrix::adjacency(&g));
        // Feeding L's triple through the unregularized path reproduces rdscore.
        let opts = SvdOptions { seed: seed::derive_seed(9, 0), ..SvdOptions::default() };
        let svd = spectral::top_k_svd(&l, 2, &opts).unwrap();
        let via_plain = run_entire_with_svd(&g, 2, &plain, 9, &svd).unwrap();
        assert_eq!(via_plain.labels, run_entire(&g, 2, &reg, 9).unwrap().labels);
    }

    #[test]
    fn core_features_are_full_graph_rows() {
        let (g, _) = noisy_blocks(25, 0.3, 0.05, 7);
        let spec: AlgorithmSpec = "opca".parse().unwrap();
        let svd = leading_vectors(&g, 2, &spec, 3).unwrap();
        let core = NodeSet::new(50, (0..50).filter(|i| i % 3 != 0)).unwrap();
        let (x, _) = embed(&svd, Some(core.members()), &spec).unwrap();
        for (row, &node) in core.members().iter().enumerate() {
            assert_eq!(x.row(row).columns(0, 2), svd.v.row(node));
            assert_eq!(x.row(row).columns(2, 2), svd.u.row(node));
        }
    }

    #[test]
    fn full_core_matches_entire() {
        let (g, _) = noisy_blocks(30, 0.4, 0.1, 8);
        let core = intersection_core(&g);
        assert_eq!(core.len(), 60);
        for spec in AlgorithmSpec::roster() {
            let e = run_entire(&g, 2, &spec, 11).unwrap();
            let a = run_intersection_attach(&g, 2, &spec, 11).unwrap();
            let c = run_core_only(&g, 2, &spec, 11).unwrap();
            assert_eq!(e.labels, a.labels, "{spec}");
            assert_eq!(e.labels, c.labels, "{spec}");
            assert!(a.attached.is_empty());
        }
    }

    #[test]
    fn attach_keeps_core_labels_and_partitions_nodes() {
        let (base, _) = noisy_blocks(30, 0.3, 0.05, 9);
        // Add pendant nodes that only send edges, so they leave the core.
        let mut edges: Vec<(usize, usize)> = base.edges().collect();
        edges.extend([(60, 0), (60, 1), (61, 40), (62, 63)]);
        let g = DirectedGraph::from_edges(64, edges).unwrap();
        let spec: AlgorithmSpec = "dscore".parse().unwrap();
        let a = run_intersection_attach(&g, 2, &spec, 4).unwrap();
        let c = run_core_only(&g, 2, &spec, 4).unwrap();
        for (&node, &label) in c.nodes.iter().zip(&c.labels) {
            assert_eq!(a.labels[node], label);
        }
        assert_eq!(a.core.len() + a.attached.len(), 64);
        assert!(a.core.intersection(&a.attached).is_empty());
        assert!(!a.core.contains(60) && !a.core.contains(62));
        assert_eq!(a.labels[60], a.labels[0]);
        assert!(a.warnings.iter().any(|w| matches!(w, Warning::Unreachable(v) if v.contains(&62))));
    }

    #[test]
    fn attach_votes() {
        // Node 4 has three edges to community 0 and one to community 1.
        let g = DirectedGraph::from_edges(5, [(4, 0), (1, 4), (4, 2), (4, 3)]).unwrap();
        let core = [Some(0), Some(0), Some(0), Some(1), None];
        assert_eq!(attach(&g, &core, 2).0[4], 0);
        // Tie goes to the smaller index.
        let g = DirectedGraph::from_edges(5, [(4, 0), (4, 3)]).unwrap();
        let core = [Some(1), Some(1), Some(0), Some(0), None];
        assert_eq!(attach(&g, &core, 2).0[4], 0);
        // No edges: largest community.
        let g = DirectedGraph::empty(5);
        let (labels, unreachable) = attach(&g, &core, 2);
        assert_eq!(labels[4], 0);
        assert_eq!(unreachable, vec![4]);
        let core = [Some(1), Some(1), Some(1), Some(0), None];
        assert_eq!(attach(&g, &core, 2).0[4], 1);
    }

    #[test]
    fn core_too_small() {
        // A directed path has singleton product components.
        let g = DirectedGraph::from_edges(5, (0..4).map(|i| (i, i + 1))).unwrap();
        let err = run_core_only(&g, 2, &"opca".parse().unwrap(), 0).unwrap_err();
        assert!(matches!(err, PipelineError::CoreTooSmall { core: 1, k: 2 }));
        assert!(err.is_numerical());
    }

    #[test]
    fn deterministic_given_seed() {
        let (g, _) = noisy_blocks(20, 0.2, 0.1, 10);
        for spec in AlgorithmSpec::roster() {
            assert_eq!(run_entire(&g, 2, &spec, 5).unwrap(), run_entire(&g, 2, &spec, 5).unwrap());
        }
    }

    /// Per-node vote count from a dense adjacency matrix.
    fn dense_attach(g: &DirectedGraph, core: &[Option<usize>], k: usize) -> Vec<usize> {
        let n = g.node_count();
        let a = DMatrix::from_fn(n, n, |i, j| if g.has_edge(i, j) { 1.0 } else { 0.0 });
        let mut sizes = vec![0; k];
        core.iter().flatten().for_each(|&l| sizes[l] += 1);
        let mut largest = 0;
        for c in 0..k {
            if sizes[c] > sizes[largest] {
                largest = c;
            }
        }
        (0..n)
            .map(|i| {
                if let Some(l) = core[i] {
                    return l;
                }
                let mut best = (0.0, usize::MAX);
                for c in 0..k {
                    let s: f64 = (0..n)
                        .filter(|&j| core[j] == Some(c))
                        .map(|j| a[(i, j)] + a[(j, i)])
                        .sum();
                    if s > best.0 {
                        best = (s, c);
                    }
                }
                if best.1 == usize::MAX {
                    largest
                } else {
                    best.1
                }
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn attach_matches_dense_counts(seed_value in any::<u64>(), n in 2usize..30, k in 1usize..4, p in 0.0f64..0.3) {
            let mut rng = seed::rng(seed_value);
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|_| rng.random::<f64>() < p)
                .collect();
            let g = DirectedGraph::from_edges(n, edges).unwrap();
            let core: Vec<Option<usize>> = (0..n)
                .map(|i| if i < k || rng.random::<f64>() < 0.5 { Some(rng.random_range(0..k)) } else { None })
                .collect();
            prop_assert_eq!(attach(&g, &core, k).0, dense_attach(&g, &core, k));
        }
    }
}
