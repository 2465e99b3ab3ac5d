//! Monte Carlo and real-data experiments.
//!
//! A simulation replicate samples a graph from one of the built-in
//! scenarios, keeps its largest weakly connected component, runs every
//! requested (algorithm, approach) pair on it, and scores the labels
//! against the truth. Replicates run in parallel; the report is assembled
//! in a fixed order, so it does not depend on the thread count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{
    induced_subgraph, largest_weak_component, read_edge_list, read_label_file, DirectedGraph,
    GraphError, IndexBase, NodeId, NodeSet,
};
use crate::metrics::{self, compact_labels, EvalReport, MetricsError, Summary};
use crate::model::{self, DcbmConfig, HeterogeneitySpec, ModelError};
use crate::pipeline::{self, AlgorithmSpec, Approach, PipelineError};
use crate::seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{} nodes have no label: {}", .0.len(), preview(.0))]
    MissingLabels(Vec<NodeId>),
    #[error("plotting failed: {0}")]
    Plot(String),
    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
}

fn preview(nodes: &[NodeId]) -> String {
    let shown: Vec<String> = nodes.iter().take(10).map(|n| n.to_string()).collect();
    let more = if nodes.len() > 10 { ", ..." } else { "" };
    format!("{}{more}", shown.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Symmetric `B`, homogeneous-ish mixture, `δ = θ`.
    SbmSymmetric,
    DcbmSymmetricDense,
    /// Asymmetric `B`, independent sparse `θ` and `δ`.
    DcbmAsymmetricSparse,
    DcbmAsymmetricDense,
    RealData,
}

impl Scenario {
    pub const SIMULATED: [Scenario; 4] = [
        Scenario::SbmSymmetric,
        Scenario::DcbmSymmetricDense,
        Scenario::DcbmAsymmetricSparse,
        Scenario::DcbmAsymmetricDense,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SbmSymmetric => "sbm_symmetric",
            Scenario::DcbmSymmetricDense => "dcbm_symmetric_dense",
            Scenario::DcbmAsymmetricSparse => "dcbm_asymmetric_sparse",
            Scenario::DcbmAsymmetricDense => "dcbm_asymmetric_dense",
            Scenario::RealData => "real_data",
        }
    }

    /// Two-community model for a simulated scenario; `None` for real data.
    /// Labels are i.i.d. uniform over the two communities.
    pub fn model(&self) -> Option<DcbmConfig> {
        let symmetric = vec![1.0, 0.4, 0.4, 1.0];
        let asymmetric = vec![1.0, 0.4, 0.5, 1.0];
        let mix = |a: f64, b: f64| HeterogeneitySpec::Mixture(vec![(0.5, a), (0.1, b), (0.6, 0.4)]);
        let (b, theta, delta) = match self {
            Scenario::SbmSymmetric => (symmetric, mix(0.01, 0.05), HeterogeneitySpec::SameAsTheta),
            Scenario::DcbmSymmetricDense => (symmetric, mix(0.05, 0.05), HeterogeneitySpec::SameAsTheta),
            Scenario::DcbmAsymmetricSparse => (asymmetric, mix(0.01, 0.01), mix(0.01, 0.01)),
            Scenario::DcbmAsymmetricDense => (asymmetric, mix(0.05, 0.01), mix(0.05, 0.01)),
            Scenario::RealData => return None,
        };
        Some(DcbmConfig {
            k: 2,
            n: None,
            b,
            theta,
            delta,
            labels: Some(model::LabelSpec::Proportions(vec![0.5, 0.5])),
            seed: None,
            self_loops: true,
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::SIMULATED
            .iter()
            .chain(&[Scenario::RealData])
            .find(|sc| sc.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

fn default_grid() -> Vec<usize> {
    vec![800, 1000, 1200]
}
fn default_replicates() -> usize {
    50
}
fn default_algorithms() -> Vec<String> {
    AlgorithmSpec::roster().iter().map(|a| a.to_string()).collect()
}
fn default_approaches() -> Vec<Approach> {
    Approach::ALL.to_vec()
}
fn default_k() -> usize {
    2
}
fn default_true() -> bool {
    true
}

/// One experiment, as read from a TOML file.
///
/// ```toml
/// scenario = "dcbm_asymmetric_sparse"
/// n_grid = [800, 1000, 1200]
/// replicates = 50
/// algorithms = ["dscore", "dscore2", "opca"]
/// approaches = ["entire", "intersection_attach"]
/// seed = 1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<String>,
    #[serde(default = "default_approaches")]
    pub approaches: Vec<Approach>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Replaces the scenario's built-in model.
    #[serde(default)]
    pub model: Option<DcbmConfig>,
    #[serde(default)]
    pub edges: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Whether node ids in the data files start at 0 or 1.
    #[serde(default)]
    pub base: u8,
    /// Keep only nodes of the largest `c` labeled communities.
    #[serde(default)]
    pub top_communities: Option<usize>,
    #[serde(default = "default_true")]
    pub drop_self_loops: bool,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            n_grid: default_grid(),
            replicates: default_replicates(),
            algorithms: default_algorithms(),
            approaches: default_approaches(),
            seed: 0,
            k: default_k(),
            model: None,
            edges: None,
            labels: None,
            base: 0,
            top_communities: None,
            drop_self_loops: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.scenario != Scenario::RealData && self.n_grid.is_empty() {
            return bad("n_grid must not be empty");
        }
        if self.algorithms.is_empty() || self.approaches.is_empty() {
            return bad("at least one algorithm and one approach are required");
        }
        if self.scenario == Scenario::RealData && (self.edges.is_none() || self.labels.is_none()) {
            return bad("real_data needs both edges and labels");
        }
        if IndexBase::from_offset(self.base).is_none() {
            return bad("base must be 0 or 1");
        }
        self.specs()?;
        Ok(())
    }

    pub fn specs(&self) -> Result<Vec<AlgorithmSpec>, HarnessError> {
        self.algorithms
            .iter()
            .map(|a| a.parse().map_err(HarnessError::Pipeline))
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn index_base(&self) -> IndexBase {
        IndexBase::from_offset(self.base).expect("validated")
    }

    fn model_config(&self) -> Result<DcbmConfig, HarnessError> {
        self.model
            .clone()
            .or_else(|| self.scenario.model())
            .ok_or_else(|| HarnessError::Config("real_data has no generative model".into()))
    }
}

/// Seed of replicate `r` at grid size `n`.
pub fn replicate_seed(master: u64, n: usize, r: usize) -> u64 {
    seed::derive_seed(seed::derive_seed(master, n as u64), r as u64)
}

/// Outcome of one (replicate, algorithm, approach) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub algorithm: String,
    pub approach: Approach,
    /// Nodes in the evaluated graph (largest component).
    pub graph_nodes: usize,
    pub core_nodes: usize,
    pub result: Result<EvalReport, String>,
}

/// One cell of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub scenario: String,
    pub n: usize,
    pub algorithm: String,
    pub approach: Approach,
    pub mean_count: f64,
    pub mean_rate: f64,
    /// Standard error of the mean rate.
    pub stderr: f64,
    /// Successful replicates.
    pub replicates: usize,
    pub failed: usize,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
    pub crate_version: &'static str,
    /// Filled in by callers that want one; the library stays deterministic.
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<ReplicateRecord>,
    pub provenance: Provenance,
}

pub const CSV_HEADER: [&str; 8] = [
    "scenario",
    "n",
    "algorithm",
    "approach",
    "mean_count",
    "mean_rate",
    "stderr",
    "replicates",
];

impl ExperimentReport {
    pub fn row(&self, n: usize, algorithm: &str, approach: Approach) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.algorithm == algorithm && r.approach == approach)
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.n.to_string(),
                r.algorithm.clone(),
                r.approach.to_string(),
                format!("{:.6}", r.mean_count),
                format!("{:.6}", r.mean_rate),
                format!("{:.6}", r.stderr),
                r.replicates.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Plot(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn summarize(
    scenario: &str,
    records: &[ReplicateRecord],
    grid: &[usize],
    algorithms: &[String],
    approaches: &[Approach],
) -> Result<Vec<ReportRow>, HarnessError> {
    let mut rows = Vec::new();
    for &n in grid {
        for algorithm in algorithms {
            for &approach in approaches {
                let cell: Vec<&ReplicateRecord> = records
                    .iter()
                    .filter(|r| r.n == n && &r.algorithm == algorithm && r.approach == approach)
                    .collect();
                let ok: Vec<EvalReport> = cell.iter().filter_map(|r| r.result.clone().ok()).collect();
                let summary = if ok.is_empty() { None } else { Some(metrics::aggregate(&ok)?) };
                rows.push(ReportRow {
                    scenario: scenario.to_string(),
                    n,
                    algorithm: algorithm.clone(),
                    approach,
                    mean_count: summary.as_ref().map_or(f64::NAN, |s| s.mean_count),
                    mean_rate: summary.as_ref().map_or(f64::NAN, |s| s.mean_rate),
                    stderr: summary.as_ref().map_or(f64::NAN, |s| s.stderr_rate),
                    replicates: ok.len(),
                    failed: cell.len() - ok.len(),
                    summary,
                });
            }
        }
    }
    Ok(rows)
}

/// A graph with ground truth, ready for the pipeline.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: DirectedGraph,
    /// True community of each node, in `0..K`.
    pub truth: Vec<usize>,
    /// Original id of each node.
    pub original_ids: Vec<NodeId>,
}

/// Restricts to the largest weak component and relabels `0..m`.
pub fn largest_component(g: &DirectedGraph, truth: &[usize]) -> Result<LabeledGraph, HarnessError> {
    let lcc = largest_weak_component(g);
    let (graph, map) = induced_subgraph(g, &lcc)?;
    Ok(LabeledGraph {
        graph,
        truth: map.old_ids().iter().map(|&i| truth[i]).collect(),
        original_ids: map.old_ids().to_vec(),
    })
}

/// Samples one simulation replicate: `A₀` from the model, then its largest
/// weak component.
pub fn sample_replicate(model_cfg: &DcbmConfig, n: usize, seed_value: u64) -> Result<LabeledGraph, HarnessError> {
    let params = model_cfg.realize(Some(n), seed::derive_seed(seed_value, 0))?;
    let a0 = model::sample_adjacency(&params, seed::derive_seed(seed_value, 1), model_cfg.self_loops)?;
    largest_component(&a0, &params.labels)
}

/// Runs every (algorithm, approach) on one labeled graph. The SVD is
/// computed once per algorithm and shared across approaches.
pub fn evaluate_graph(
    lg: &LabeledGraph,
    k: usize,
    specs: &[AlgorithmSpec],
    approaches: &[Approach],
    svd_seed: u64,
    cluster_seed: u64,
) -> Vec<(String, Approach, usize, Result<EvalReport, String>)> {
    let core = pipeline::intersection_core(&lg.graph);
    let mut out = Vec::new();
    for spec in specs {
        let svd = pipeline::leading_vectors(&lg.graph, k, spec, svd_seed);
        for &approach in approaches {
            let result = svd
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|svd| {
                    let set = match approach {
                        Approach::Entire => NodeSet::full(lg.graph.node_count()),
                        _ => core.clone(),
                    };
                    pipeline::run_with_svd(approach, &lg.graph, k, spec, cluster_seed, svd, &set)
                        .map_err(|e| e.to_string())
                })
                .and_then(|res| {
                    let truth: Vec<usize> = res.nodes.iter().map(|&i| lg.truth[i]).collect();
                    metrics::misclustering(&res.labels, &truth).map_err(|e| e.to_string())
                });
            out.push((spec.to_string(), approach, core.len(), result));
        }
    }
    out
}

pub fn run_simulation(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let specs = cfg.specs()?;
    model_cfg.realize(Some(cfg.n_grid[0]), 0).and_then(|p| model::validate(&p))?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    let per_job: Vec<Result<Vec<ReplicateRecord>, HarnessError>> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let s = replicate_seed(cfg.seed, n, r);
            let lg = sample_replicate(&model_cfg, n, s)?;
            // The same seed for the SVD and clustering of every approach
            // keeps the approaches comparable within a replicate.
            let cells = evaluate_graph(&lg, cfg.k, &specs, &cfg.approaches, s, s);
            Ok(cells
                .into_iter()
                .map(|(algorithm, approach, core_nodes, result)| ReplicateRecord {
                    n,
                    replicate: r,
                    seed: s,
                    algorithm,
                    approach,
                    graph_nodes: lg.graph.node_count(),
                    core_nodes,
                    result,
                })
                .collect())
        })
        .collect();
    let mut records = Vec::new();
    for job in per_job {
        records.extend(job?);
    }
    let rows = summarize(cfg.scenario.name(), &records, &cfg.n_grid, &cfg.algorithms, &cfg.approaches)?;
    Ok(ExperimentReport {
        rows,
        records,
        provenance: Provenance {
            master_seed: cfg.seed,
            config_hash: cfg.hash(),
            crate_version: env!("CARGO_PKG_VERSION"),
            timestamp: None,
        },
    })
}

fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path).map(BufReader::new).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a labeled network: restricts to the `top` largest communities if
/// requested, then to the largest weak component.
pub fn load_real(
    edges: &Path,
    labels: &Path,
    base: IndexBase,
    drop_self_loops: bool,
    top: Option<usize>,
) -> Result<LabeledGraph, HarnessError> {
    let g = read_edge_list(open(edges)?, base, drop_self_loops)?;
    let raw = read_label_file(open(labels)?, base)?;
    prepare_real(&g, &raw, top)
}

pub fn prepare_real(
    g: &DirectedGraph,
    raw: &BTreeMap<NodeId, i64>,
    top: Option<usize>,
) -> Result<LabeledGraph, HarnessError> {
    let mut keep = NodeSet::full(g.node_count());
    if let Some(c) = top {
        let mut sizes: BTreeMap<i64, usize> = BTreeMap::new();
        for (&node, &l) in raw {
            if node < g.node_count() {
                *sizes.entry(l).or_default() += 1;
            }
        }
        let mut by_size: Vec<(i64, usize)> = sizes.into_iter().collect();
        by_size.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let chosen: Vec<i64> = by_size.iter().take(c).map(|x| x.0).collect();
        keep = NodeSet::new(
            g.node_count(),
            raw.iter()
                .filter(|(&node, l)| node < g.node_count() && chosen.contains(l))
                .map(|(&node, _)| node),
        )?;
    }
    let (sub, map) = induced_subgraph(g, &keep)?;
    let lcc = largest_weak_component(&sub);
    let (graph, lcc_map) = induced_subgraph(&sub, &lcc)?;
    let original_ids: Vec<NodeId> = lcc_map.old_ids().iter().map(|&i| map.to_old(i)).collect();
    let missing: Vec<NodeId> = original_ids.iter().filter(|i| !raw.contains_key(i)).copied().collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingLabels(missing));
    }
    let values: Vec<i64> = original_ids.iter().map(|i| raw[i]).collect();
    let (truth, _) = compact_labels(&values);
    Ok(LabeledGraph {
        graph,
        truth,
        original_ids,
    })
}

/// Runs the roster on a labeled network. The SVD is computed once; replicates
/// differ only in the clustering seed.
pub fn run_real(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let lg = load_real(
        cfg.edges.as_deref().expect("validated"),
        cfg.labels.as_deref().expect("validated"),
        cfg.index_base(),
        cfg.drop_self_loops,
        cfg.top_communities,
    )?;
    run_labeled(cfg, &lg)
}

/// [`run_real`] on an already loaded graph.
pub fn run_labeled(cfg: &ExperimentConfig, lg: &LabeledGraph) -> Result<ExperimentReport, HarnessError> {
    let specs = cfg.specs()?;
    let n = lg.graph.node_count();
    let svd_seed = seed::derive_seed(cfg.seed, 0);
    let per_rep: Vec<Vec<ReplicateRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let s = seed::derive_seed(cfg.seed, r as u64 + 1);
            evaluate_graph(lg, cfg.k, &specs, &cfg.approaches, svd_seed, s)
                .into_iter()
                .map(|(algorithm, approach, core_nodes, result)| ReplicateRecord {
                    n,
                    replicate: r,
                    seed: s,
                    algorithm,
                    approach,
                    graph_nodes: n,
                    core_nodes,
                    result,
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let rows = summarize(Scenario::RealData.name(), &records, &[n], &cfg.algorithms, &cfg.approaches)?;
    Ok(ExperimentReport {
        rows,
        records,
        provenance: Provenance {
            master_seed: cfg.seed,
            config_hash: cfg.hash(),
            crate_version: env!("CARGO_PKG_VERSION"),
            timestamp: None,
        },
    })
}

/// Scatter of the first two feature columns, one color per true community.
pub fn scatter_svg(points: &DMatrix<f64>, labels: &[usize], title: &str) -> Result<String, HarnessError> {
    use plotters::prelude::*;

    let err = |e: &dyn std::fmt::Display| HarnessError::Plot(e.to_string());
    if points.ncols() < 2 || points.nrows() != labels.len() || points.nrows() == 0 {
        return Err(HarnessError::Plot(format!(
            "need an n x 2 matrix matching {} labels, got {}x{}",
            labels.len(),
            points.nrows(),
            points.ncols()
        )));
    }
    let range = |c: usize| {
        let col = points.column(c);
        let (lo, hi) = (col.min(), col.max());
        let pad = ((hi - lo) * 0.05).max(1e-6);
        (lo - pad)..(hi + pad)
    };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(range(0), range(1))
            .map_err(|e| err(&e))?;
        chart.configure_mesh().draw().map_err(|e| err(&e))?;
        let palette = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];
        chart
            .draw_series(points.row_iter().zip(labels).map(|(row, &l)| {
                Circle::new((row[0], row[1]), 2, palette[l % palette.len()].filled())
            }))
            .map_err(|e| err(&e))?;
        root.present().map_err(|e| err(&e))?;
    }
    Ok(svg)
}
