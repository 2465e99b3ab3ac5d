//! `dscore` command-line tool.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dscore::cluster::Method;
use dscore::graph::{
    induced_subgraph, largest_weak_component, read_edge_list, read_label_file, DirectedGraph, IndexBase,
};
use dscore::harness::{self, ExperimentConfig, ExperimentReport, HarnessError, Scenario};
use dscore::metrics::{compact_labels, misclustering};
use dscore::model::{self, DcbmConfig, ModelError};
use dscore::pipeline::{self, AlgorithmSpec, Approach, PipelineError};
use dscore::ratio::{dscore_ratio, dscoreq_ratio, RatioConfig, RatioError};
use dscore::seed::derive_seed;
use dscore::spectral::SpectralError;
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "dscore", version, about = "Spectral community detection for directed networks")]
struct Cli {
    /// Worker threads for parallel stages (0 = one per core).
    #[arg(long, global = true, env = "DSCORE_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a network from a Directed-DCBM config file.
    Generate(GenerateArgs),
    /// Leading singular vectors of the adjacency matrix or regularized Laplacian.
    Svd(SvdArgs),
    /// D-SCORE or D-SCORE_q ratio features.
    Ratio(RatioArgs),
    /// Cluster a network into K communities.
    Cluster(ClusterArgs),
    /// Misclustering count of predicted labels against the truth.
    Eval(EvalArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Run a study on a labeled network.
    Realdata(RealdataArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Edge list, one `source target` pair per line.
    #[arg(long)]
    edges: PathBuf,
    /// Number of communities.
    #[arg(long)]
    k: usize,
    /// Index base of node ids in input and output files.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    base: u8,
    /// Keep `i -> i` edges.
    #[arg(long)]
    keep_self_loops: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Model config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Node count, overriding the config.
    #[arg(long)]
    n: Option<usize>,
    /// Defaults to the config's seed, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Edge list output.
    #[arg(long)]
    out: PathBuf,
    /// Community labels output.
    #[arg(long)]
    labels_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    base: u8,
    /// SVG of out-degree against in-degree, colored by community.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct SvdArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Use the regularized Laplacian.
    #[arg(long)]
    regularized: bool,
    /// Laplacian regularizer (default: mean degree).
    #[arg(long)]
    tau: Option<f64>,
    /// JSON with singular values and vectors.
    #[arg(long)]
    out: PathBuf,
    /// SVG of the first two left singular vectors.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RatioVariant {
    Dscore,
    Dscoreq,
}

#[derive(Args)]
struct RatioArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = RatioVariant::Dscore)]
    variant: RatioVariant,
    /// Norm exponent for the `dscoreq` variant.
    #[arg(long, default_value_t = 2)]
    q: u32,
    /// Clamp bound (default: log of the row count).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    regularized: bool,
    #[arg(long)]
    tau: Option<f64>,
    /// CSV with one row per node.
    #[arg(long)]
    out: PathBuf,
    /// SVG of the first two feature columns.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Kmeans,
    Kmedoids,
}

#[derive(Args)]
struct AlgorithmArgs {
    /// dscore, rdscore, dscore<q>, rdscore<q>, opca or rpca.
    #[arg(long, default_value = "dscore")]
    algo: String,
    /// Clamp bound for D-SCORE ratios.
    #[arg(long)]
    threshold: Option<f64>,
    /// Laplacian regularizer for the `r` variants.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Kmeans)]
    method: MethodArg,
    /// Clustering restarts.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
}

impl AlgorithmArgs {
    fn spec(&self) -> Result<AlgorithmSpec, Failure> {
        let mut spec: AlgorithmSpec = self.algo.parse().map_err(|e| Failure::invalid(format!("{e}")))?;
        spec.threshold = self.threshold;
        spec.laplacian.tau = self.tau;
        spec.restarts = self.restarts;
        spec.method = match self.method {
            MethodArg::Kmeans => Method::KMeans,
            MethodArg::Kmedoids => Method::KMedoids,
        };
        Ok(spec)
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    algorithm: AlgorithmArgs,
    #[arg(long, default_value = "entire")]
    approach: String,
    /// `node label` output for nodes of the largest weak component.
    #[arg(long)]
    out: PathBuf,
    /// SVG of the feature embedding colored by cluster.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted `node label` file.
    #[arg(long)]
    pred: PathBuf,
    /// True `node label` file.
    #[arg(long)]
    truth: PathBuf,
    /// Number of communities; neither file may use more labels.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    base: u8,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Comma-separated algorithms (default: full roster).
    #[arg(long, value_delimiter = ',')]
    algo: Vec<String>,
    /// Comma-separated approaches: entire, intersection_attach, core_only.
    #[arg(long, value_delimiter = ',')]
    approach: Vec<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV summary.
    #[arg(long)]
    out: PathBuf,
    /// Full report with per-replicate records and provenance.
    #[arg(long)]
    json: Option<PathBuf>,
    /// SVG of mean rate against n, one color per (algorithm, approach).
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sbm_symmetric, dcbm_symmetric_dense, dcbm_asymmetric_sparse or dcbm_asymmetric_dense.
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated node counts.
    #[arg(long, value_delimiter = ',')]
    n_grid: Vec<usize>,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct RealdataArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    k: usize,
    /// Keep only the nodes of the largest labeled communities.
    #[arg(long)]
    top: Option<usize>,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    base: u8,
    #[arg(long)]
    keep_self_loops: bool,
    #[command(flatten)]
    report: ReportArgs,
}

/// Error with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { code: if e.is_numerical() { 2 } else { 1 }, message: e.to_string() }
    }
}

impl From<SpectralError> for Failure {
    fn from(e: SpectralError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<RatioError> for Failure {
    fn from(e: RatioError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Pipeline(p) => p.into(),
            other => Failure::invalid(other.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<dscore::graph::GraphError> for Failure {
    fn from(e: dscore::graph::GraphError) -> Self {
        Failure::invalid(e.to_string())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn base(offset: u8) -> IndexBase {
    IndexBase::from_offset(offset).expect("range-checked by the parser")
}

/// The largest weak component of the input graph, with original ids.
fn load_graph(input: &InputArgs) -> Result<(DirectedGraph, Vec<usize>), Failure> {
    let g = read_edge_list(open(&input.edges)?, base(input.base), !input.keep_self_loops)?;
    let lcc = largest_weak_component(&g);
    let (sub, map) = induced_subgraph(&g, &lcc)?;
    Ok((sub, map.old_ids().to_vec()))
}

fn write_node_labels(path: &Path, ids: &[usize], labels: &[usize], offset: u8) -> Result<(), Failure> {
    let mut text = String::new();
    for (&id, &l) in ids.iter().zip(labels) {
        text.push_str(&format!("{} {l}\n", id + offset as usize));
    }
    write(path, &text)
}

fn plot(path: &Option<PathBuf>, points: &DMatrix<f64>, labels: &[usize], title: &str) -> Result<(), Failure> {
    if let Some(p) = path {
        write(p, &harness::scatter_svg(points, labels, title)?)?;
    }
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::invalid(format!("{}: {e}", args.config.display())))?;
    let cfg = DcbmConfig::from_toml(&text)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let params = cfg.realize(args.n, derive_seed(seed, 0))?;
    model::validate(&params)?;
    let g = model::sample_adjacency(&params, derive_seed(seed, 1), cfg.self_loops)?;
    write(&args.out, &g.to_edge_list(base(args.base)))?;
    if let Some(path) = &args.labels_out {
        write(path, &dscore::graph::write_labels(&params.labels, base(args.base)))?;
    }
    let (out, inn) = dscore::graph::degrees(&g);
    let points = DMatrix::from_fn(g.node_count(), 2, |i, c| if c == 0 { out[i] } else { inn[i] } as f64);
    plot(&args.plot, &points, &params.labels, "out-degree vs in-degree")?;
    eprintln!("{} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(())
}

fn spectral_spec(regularized: bool, tau: Option<f64>) -> AlgorithmSpec {
    let mut spec = AlgorithmSpec::new(pipeline::Family::Dscore, regularized);
    spec.laplacian.tau = tau;
    spec
}

fn svd(args: &SvdArgs) -> Result<(), Failure> {
    let (g, ids) = load_graph(&args.input)?;
    let spec = spectral_spec(args.regularized, args.tau);
    let t = pipeline::leading_vectors(&g, args.input.k, &spec, args.input.seed)?;
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let json = serde_json::json!({
        "nodes": ids.iter().map(|i| i + args.input.base as usize).collect::<Vec<_>>(),
        "sigma": t.sigma,
        "u": rows(&t.u),
        "v": rows(&t.v),
        "degenerate_gap": t.degenerate_gap,
        "rank_deficient": t.rank_deficient,
    });
    write(&args.out, &serde_json::to_string_pretty(&json).expect("serializable"))?;
    if args.input.k >= 2 {
        plot(&args.plot, &t.u.columns(0, 2).into_owned(), &vec![0; g.node_count()], "left singular vectors")?;
    }
    Ok(())
}

fn ratio(args: &RatioArgs) -> Result<(), Failure> {
    let (g, ids) = load_graph(&args.input)?;
    let spec = spectral_spec(args.regularized, args.tau);
    let t = pipeline::leading_vectors(&g, args.input.k, &spec, args.input.seed)?;
    let cfg = RatioConfig { threshold: args.threshold, q: args.q };
    let r = match args.variant {
        RatioVariant::Dscore => dscore_ratio(&t, None, &cfg)?,
        RatioVariant::Dscoreq => dscoreq_ratio(&t, None, &cfg)?,
    };
    let mut text = String::from("node");
    for c in 0..r.data.ncols() {
        text.push_str(&format!(",f{c}"));
    }
    text.push('\n');
    for (i, row) in r.data.row_iter().enumerate() {
        text.push_str(&(ids[i] + args.input.base as usize).to_string());
        for x in row.iter() {
            text.push_str(&format!(",{x}"));
        }
        text.push('\n');
    }
    write(&args.out, &text)?;
    if r.clamped > 0 {
        eprintln!("warning: {} entries clamped to +-{}", r.clamped, r.threshold);
    }
    if r.data.ncols() >= 2 {
        plot(&args.plot, &r.data, &vec![0; g.node_count()], "ratio features")?;
    }
    Ok(())
}

fn cluster(args: &ClusterArgs) -> Result<(), Failure> {
    let (g, ids) = load_graph(&args.input)?;
    let spec = args.algorithm.spec()?;
    let approach: Approach = args.approach.parse().map_err(Failure::invalid)?;
    let k = args.input.k;
    let result = pipeline::run(approach, &g, k, &spec, args.input.seed)?;
    for w in &result.warnings {
        eprintln!("warning: {w:?}");
    }
    let original: Vec<usize> = result.nodes.iter().map(|&i| ids[i]).collect();
    write_node_labels(&args.out, &original, &result.labels, args.input.base)?;
    if args.plot.is_some() {
        let svd = pipeline::leading_vectors(&g, k, &spec, args.input.seed)?;
        let (features, _) = pipeline::embed(&svd, None, &spec)?;
        let labels: Vec<usize> = (0..g.node_count()).map(|i| result.label_of(i).unwrap_or(0)).collect();
        if features.ncols() >= 2 {
            plot(&args.plot, &features, &labels, &format!("{} features", spec))?;
        }
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let pred = read_label_file(open(&args.pred)?, base(args.base))?;
    let truth = read_label_file(open(&args.truth)?, base(args.base))?;
    if !pred.keys().eq(truth.keys()) {
        return Err(Failure::invalid("predicted and true label files cover different nodes"));
    }
    let (p, p_values) = compact_labels(&pred.values().copied().collect::<Vec<_>>());
    let (t, t_values) = compact_labels(&truth.values().copied().collect::<Vec<_>>());
    for (name, count) in [("predicted", p_values.len()), ("true", t_values.len())] {
        if count > args.k {
            return Err(Failure::invalid(format!("{name} labels use {count} classes, more than k = {}", args.k)));
        }
    }
    let report = misclustering(&p, &t).map_err(|e| Failure::invalid(e.to_string()))?;
    println!("misclustered {}", report.count);
    println!("rate {}", report.rate);
    if let Some(path) = &args.json {
        write(path, &serde_json::to_string_pretty(&report).expect("serializable"))?;
    }
    Ok(())
}

fn apply_report_args(cfg: &mut ExperimentConfig, args: &ReportArgs) -> Result<(), Failure> {
    if !args.algo.is_empty() {
        cfg.algorithms = args.algo.clone();
    }
    if !args.approach.is_empty() {
        cfg.approaches = args
            .approach
            .iter()
            .map(|a| a.parse())
            .collect::<Result<_, String>>()
            .map_err(Failure::invalid)?;
    }
    if let Some(r) = args.reps {
        cfg.replicates = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(())
}

fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|s| chrono::DateTime::from_timestamp(s, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn emit(report: &mut ExperimentReport, args: &ReportArgs) -> Result<(), Failure> {
    report.provenance.timestamp = Some(timestamp());
    write(&args.out, &report.to_csv()?)?;
    if let Some(path) = &args.json {
        write(path, &report.to_json())?;
    }
    if args.plot.is_some() && !report.rows.is_empty() {
        let mut series: Vec<(String, Approach)> = Vec::new();
        let mut labels = Vec::new();
        for row in &report.rows {
            let key = (row.algorithm.clone(), row.approach);
            let idx = series.iter().position(|s| *s == key).unwrap_or_else(|| {
                series.push(key);
                series.len() - 1
            });
            labels.push(idx);
        }
        let points = DMatrix::from_fn(report.rows.len(), 2, |i, c| {
            if c == 0 {
                report.rows[i].n as f64
            } else {
                report.rows[i].mean_rate
            }
        });
        plot(&args.plot, &points, &labels, "mean misclustering rate by n")?;
    }
    for row in &report.rows {
        if row.failed > 0 {
            eprintln!(
                "warning: {} {} n={}: {} replicates failed",
                row.algorithm,
                row.approach.name(),
                row.n,
                row.failed
            );
        }
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let mut cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::new(name.parse::<Scenario>().map_err(Failure::invalid)?),
        (None, None) => return Err(Failure::invalid("either --config or --scenario is required")),
    };
    if let (Some(_), Some(name)) = (&args.config, &args.scenario) {
        cfg.scenario = name.parse().map_err(Failure::invalid)?;
    }
    if !args.n_grid.is_empty() {
        cfg.n_grid = args.n_grid.clone();
    }
    apply_report_args(&mut cfg, &args.report)?;
    let mut report = harness::run_simulation(&cfg)?;
    emit(&mut report, &args.report)
}

fn realdata(args: &RealdataArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig {
        k: args.k,
        edges: Some(args.edges.clone()),
        labels: Some(args.labels.clone()),
        base: args.base,
        top_communities: args.top,
        drop_self_loops: !args.keep_self_loops,
        ..ExperimentConfig::new(Scenario::RealData)
    };
    apply_report_args(&mut cfg, &args.report)?;
    let mut report = harness::run_real(&cfg)?;
    emit(&mut report, &args.report)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::invalid(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Svd(a) => svd(a),
        Command::Ratio(a) => ratio(a),
        Command::Cluster(a) => cluster(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Realdata(a) => realdata(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
