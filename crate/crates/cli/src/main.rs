//! Command-line driver for the clustering pipeline: dataset generation,
//! graph construction, the nonlinear diffusion solver, the push baseline,
//! batch experiments, and an invariant checker.
//!
//! Every artifact-producing run writes its fully resolved configuration next
//! to the outputs, so a run can be repeated bit-for-bit from that file alone
//! on the same build.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use npr_core::{
    appr_push, best_stage_cluster, build_cost_graph, build_knn_graph, continuation,
    gen_gaussian_groupings, load_cost_table, load_edge_list, load_labels, load_points,
    run_experiment, sweep_cut, write_edge_list, write_labels, write_points, write_vector_csv,
    ApprConfig, ApprError, DataError, EdgeLength, EvalError, ExperimentProtocol, GraphError,
    IncidenceOp, IotaMode, LaplacianSolver, Method, NprConfig, NprError, OperatorError,
};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to stdout and diagnostics to stderr.
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("npr: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

/// Local graph clustering via a nonlinear modified PageRank diffusion.
#[derive(Parser)]
#[command(name = "npr", version, about, max_term_width = 100)]
struct Cli {
    /// Worker threads for parallel sections (also: NPR_THREADS env var;
    /// the flag wins). Defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample Gaussian point groups on a square grid and write points + labels.
    GenGauss(GenGaussArgs),
    /// Build a kNN graph from a point cloud with a local Gaussian kernel.
    BuildKnn(BuildKnnArgs),
    /// Build a graph from a directed cost table with a cost-relative kernel.
    BuildCost(BuildCostArgs),
    /// Run the diffusion continuation from one seed vertex and sweep for the
    /// best cluster.
    Solve(SolveArgs),
    /// Run the approximate personalized PageRank push baseline from one seed.
    Appr(ApprArgs),
    /// Repeat seeded clustering runs and aggregate conductance and Fscore.
    Experiment(ExperimentArgs),
    /// Check structural and operator invariants of a graph file.
    Validate(ValidateArgs),
}

// ---------------------------------------------------------------------------
// error plumbing

enum CliError {
    Usage(String),
    Data(String),
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NprError> for CliError {
    fn from(e: NprError) -> Self {
        match e {
            NprError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            NprError::SizeExceeded { .. } | NprError::Graph(_) => CliError::Data(e.to_string()),
            NprError::LinearSolveFailure { .. } | NprError::Operator(_) => {
                CliError::Solver(e.to_string())
            }
        }
    }
}

impl From<ApprError> for CliError {
    fn from(e: ApprError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NoRepetitions => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// shared helpers

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::GenGauss(a) => gen_gauss(a),
        Command::BuildKnn(a) => build_knn(a),
        Command::BuildCost(a) => build_cost(a),
        Command::Solve(a) => solve(a),
        Command::Appr(a) => appr(a),
        Command::Experiment(a) => experiment(a),
        Command::Validate(a) => validate(a),
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let from_env = match std::env::var("NPR_THREADS") {
        Ok(s) => Some(s.parse::<usize>().map_err(|_| {
            CliError::Usage(format!("NPR_THREADS must be a positive integer, got {s:?}"))
        })?),
        Err(_) => None,
    };
    let Some(threads) = flag.or(from_env) else {
        return Ok(());
    };
    if threads == 0 {
        return Err(CliError::Usage("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn load_cfg<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_resolved<T: Serialize>(cfg: &T, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let mut text = serde_json::to_string_pretty(cfg).expect("config structs serialize");
    text.push('\n');
    write_text(&out.join("config.json"), &text)
}

fn require<T>(field: Option<T>, flag: &str) -> Result<T, CliError> {
    field.ok_or_else(|| CliError::Usage(format!("missing required value: {flag}")))
}

/// Damping presets keyed by grouping count, overridable with --beta:
/// up to 5 groups 1e-4, up to 13 groups 1e-3, larger grids 5e-3.
/// Fewer groups leave more volume per group, so the diffusion may spread
/// further before the sweep.
fn beta_preset(groups: usize) -> f64 {
    if groups <= 5 {
        1e-4
    } else if groups <= 13 {
        1e-3
    } else {
        5e-3
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeLengthArg {
    InverseWeight,
    Weight,
}

impl From<EdgeLengthArg> for EdgeLength {
    fn from(v: EdgeLengthArg) -> Self {
        match v {
            EdgeLengthArg::InverseWeight => EdgeLength::InverseWeight,
            EdgeLengthArg::Weight => EdgeLength::Weight,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IotaModeArg {
    SideAveraged,
    SymmetricMax,
}

impl From<IotaModeArg> for IotaMode {
    fn from(v: IotaModeArg) -> Self {
        match v {
            IotaModeArg::SideAveraged => IotaMode::SideAveraged,
            IotaModeArg::SymmetricMax => IotaMode::SymmetricMax,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Npr,
    Appr,
}

impl From<MethodArg> for Method {
    fn from(v: MethodArg) -> Self {
        match v {
            MethodArg::Npr => Method::Npr,
            MethodArg::Appr => Method::Appr,
        }
    }
}

fn merge<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn merge_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

// ---------------------------------------------------------------------------
// gen-gauss

#[derive(Args)]
struct GenGaussArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of Gaussian groups, laid out row by row on a square grid.
    #[arg(long)]
    groups: Option<usize>,
    /// Points per group.
    #[arg(long)]
    per_group: Option<usize>,
    /// Variance of the isotropic Gaussian noise around each centre.
    #[arg(long)]
    variance: Option<f64>,
    /// Distance between adjacent grid centres.
    #[arg(long)]
    spacing: Option<f64>,
    /// RNG seed; fixed seed reproduces points bit-for-bit.
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Output directory (points.csv, labels.txt, config.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(default)]
struct GenGaussCfg {
    groups: usize,
    per_group: usize,
    variance: f64,
    spacing: f64,
    rng_seed: u64,
    out: Option<PathBuf>,
}

impl Default for GenGaussCfg {
    fn default() -> Self {
        GenGaussCfg {
            groups: 8,
            per_group: 100,
            variance: 0.055,
            spacing: 1.0,
            rng_seed: 0,
            out: None,
        }
    }
}

fn gen_gauss(a: GenGaussArgs) -> Result<(), CliError> {
    let mut cfg: GenGaussCfg = load_cfg(a.config.as_deref())?;
    merge(&mut cfg.groups, a.groups);
    merge(&mut cfg.per_group, a.per_group);
    merge(&mut cfg.variance, a.variance);
    merge(&mut cfg.spacing, a.spacing);
    merge(&mut cfg.rng_seed, a.rng_seed);
    merge_opt(&mut cfg.out, a.out);
    if cfg.groups == 0 || cfg.per_group == 0 {
        return Err(CliError::Usage("groups and per-group must be at least 1".into()));
    }
    if !(cfg.variance > 0.0) {
        return Err(CliError::Usage(format!(
            "variance must be positive, got {}",
            cfg.variance
        )));
    }
    let out = require(cfg.out.clone(), "--out")?;

    let pc = gen_gaussian_groupings(cfg.groups, cfg.per_group, cfg.variance, cfg.spacing, cfg.rng_seed);
    write_resolved(&cfg, &out)?;
    write_points(&pc, out.join("points.csv"))?;
    write_labels(pc.labels().expect("generator labels points"), out.join("labels.txt"))?;
    println!(
        "wrote {} points in {} groups -> {}",
        pc.len(),
        cfg.groups,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build-knn

#[derive(Args)]
struct BuildKnnArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Point cloud CSV (one comma-separated coordinate row per point).
    #[arg(long)]
    points: Option<PathBuf>,
    /// Optional label file matching the points (one integer per line).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Neighbours per point before symmetrization.
    #[arg(long)]
    k: Option<usize>,
    /// Output directory (graph.tsv, kept.txt, labels.txt if given, config.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(default)]
struct BuildKnnCfg {
    points: Option<PathBuf>,
    labels: Option<PathBuf>,
    k: usize,
    out: Option<PathBuf>,
}

impl Default for BuildKnnCfg {
    fn default() -> Self {
        BuildKnnCfg {
            points: None,
            labels: None,
            k: 10,
            out: None,
        }
    }
}

fn build_knn(a: BuildKnnArgs) -> Result<(), CliError> {
    let mut cfg: BuildKnnCfg = load_cfg(a.config.as_deref())?;
    merge_opt(&mut cfg.points, a.points);
    merge_opt(&mut cfg.labels, a.labels);
    merge(&mut cfg.k, a.k);
    merge_opt(&mut cfg.out, a.out);
    let points_path = require(cfg.points.clone(), "--points")?;
    let out = require(cfg.out.clone(), "--out")?;

    let mut pc = load_points(&points_path)?;
    if let Some(labels_path) = &cfg.labels {
        let labels = load_labels(labels_path)?;
        pc = pc.with_labels(labels)?;
    }
    let total = pc.len();
    let (g, kept) = build_knn_graph(&pc, cfg.k)?;
    write_resolved(&cfg, &out)?;
    write_edge_list(&g, out.join("graph.tsv"))?;
    write_labels(&kept, out.join("kept.txt"))?;
    if let Some(labels) = pc.labels() {
        let remapped: Vec<usize> = kept.iter().map(|&i| labels[i]).collect();
        write_labels(&remapped, out.join("labels.txt"))?;
    }
    println!(
        "graph: n={} m={} (kept {} of {} points) -> {}",
        g.n(),
        g.m(),
        kept.len(),
        total,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build-cost

#[derive(Args)]
struct BuildCostArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cost table CSV with header "u,v,cost"; records are directed.
    #[arg(long)]
    costs: Option<PathBuf>,
    /// How each endpoint's mean adjacent cost enters the kernel.
    #[arg(long, value_enum)]
    iota_mode: Option<IotaModeArg>,
    /// Output directory (graph.tsv, kept.txt, config.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone, Default)]
#[serde(default)]
struct BuildCostCfg {
    costs: Option<PathBuf>,
    iota_mode: IotaMode,
    out: Option<PathBuf>,
}

fn build_cost(a: BuildCostArgs) -> Result<(), CliError> {
    let mut cfg: BuildCostCfg = load_cfg(a.config.as_deref())?;
    merge_opt(&mut cfg.costs, a.costs);
    merge(&mut cfg.iota_mode, a.iota_mode.map(IotaMode::from));
    merge_opt(&mut cfg.out, a.out);
    let costs_path = require(cfg.costs.clone(), "--costs")?;
    let out = require(cfg.out.clone(), "--out")?;

    let table = load_cost_table(&costs_path)?;
    let (g, kept) = build_cost_graph(&table, cfg.iota_mode)?;
    write_resolved(&cfg, &out)?;
    write_edge_list(&g, out.join("graph.tsv"))?;
    write_labels(&kept, out.join("kept.txt"))?;
    println!("graph: n={} m={} -> {}", g.n(), g.m(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// solve

#[derive(Args)]
struct SolveArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph edge list (tab-separated "u v w", zero-based ids).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Seed vertex the diffusion mass starts from.
    #[arg(long)]
    seed_vertex: Option<usize>,
    /// Diffusion strength in (0,1); smaller spreads further.
    #[arg(long)]
    beta: Option<f64>,
    /// Pick beta from the grouping-count preset table (see long help);
    /// ignored when --beta is given.
    #[arg(long)]
    beta_preset: Option<usize>,
    /// Smoothing constant; defaults by graph size.
    #[arg(long)]
    zeta: Option<f64>,
    /// Comma-separated strictly decreasing p values in (1,2).
    #[arg(long, value_delimiter = ',')]
    p_schedule: Option<Vec<f64>>,
    /// Value held at the pinned (furthest) vertex.
    #[arg(long)]
    fixed_value: Option<f64>,
    /// Stop when the gradient max-norm falls to this.
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Stop when the relative step length falls to this.
    #[arg(long)]
    step_tol: Option<f64>,
    /// Iteration cap per p value (accepted and rejected trials both count).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Initial damping as a fraction of the largest normal-matrix diagonal.
    #[arg(long)]
    lambda0_factor: Option<f64>,
    /// Largest vertex count the dense Jacobian path accepts.
    #[arg(long)]
    dense_threshold: Option<usize>,
    /// Edge length rule for locating the pinned vertex.
    #[arg(long, value_enum)]
    edge_length: Option<EdgeLengthArg>,
    /// Output directory (per-stage solutions/traces/sweeps, best cluster,
    /// summary.json, config.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Solver parameters shared by `solve` and `experiment`. `beta: None` means
/// "apply the preset, or the library default".
#[derive(Serialize, Deserialize, Clone)]
#[serde(default)]
struct SolveParams {
    beta: Option<f64>,
    beta_preset: Option<usize>,
    zeta: Option<f64>,
    p_schedule: Vec<f64>,
    fixed_value: f64,
    grad_tol: f64,
    step_tol: f64,
    max_iters: usize,
    lambda0_factor: f64,
    dense_threshold: usize,
    edge_length: EdgeLength,
}

impl Default for SolveParams {
    fn default() -> Self {
        let d = NprConfig::new(0);
        SolveParams {
            beta: None,
            beta_preset: None,
            zeta: d.zeta,
            p_schedule: d.p_schedule,
            fixed_value: d.fixed_value,
            grad_tol: d.grad_tol,
            step_tol: d.step_tol,
            max_iters: d.max_iters,
            lambda0_factor: d.lambda0_factor,
            dense_threshold: d.dense_threshold,
            edge_length: d.edge_length,
        }
    }
}

impl SolveParams {
    fn merge_flags(&mut self, a: &SolveArgs) {
        merge_opt(&mut self.beta, a.beta);
        merge_opt(&mut self.beta_preset, a.beta_preset);
        merge_opt(&mut self.zeta, a.zeta);
        merge(&mut self.p_schedule, a.p_schedule.clone());
        merge(&mut self.fixed_value, a.fixed_value);
        merge(&mut self.grad_tol, a.grad_tol);
        merge(&mut self.step_tol, a.step_tol);
        merge(&mut self.max_iters, a.max_iters);
        merge(&mut self.lambda0_factor, a.lambda0_factor);
        merge(&mut self.dense_threshold, a.dense_threshold);
        merge(&mut self.edge_length, a.edge_length.map(EdgeLength::from));
    }

    /// Folds the preset into a concrete beta so the emitted config is fully
    /// resolved.
    fn resolve_beta(&mut self) {
        if self.beta.is_none() {
            self.beta = Some(match self.beta_preset {
                Some(groups) => beta_preset(groups),
                None => NprConfig::new(0).beta,
            });
        }
    }

    fn to_npr_config(&self, seed_vertex: usize) -> NprConfig {
        let mut cfg = NprConfig::new(seed_vertex);
        cfg.beta = self.beta.expect("resolve_beta ran");
        cfg.zeta = self.zeta;
        cfg.p_schedule = self.p_schedule.clone();
        cfg.fixed_value = self.fixed_value;
        cfg.grad_tol = self.grad_tol;
        cfg.step_tol = self.step_tol;
        cfg.max_iters = self.max_iters;
        cfg.lambda0_factor = self.lambda0_factor;
        cfg.dense_threshold = self.dense_threshold;
        cfg.edge_length = self.edge_length;
        cfg
    }
}

#[derive(Serialize, Deserialize, Clone, Default)]
#[serde(default)]
struct SolveCfg {
    graph: Option<PathBuf>,
    seed_vertex: Option<usize>,
    #[serde(flatten)]
    params: SolveParams,
    out: Option<PathBuf>,
}

fn solve(a: SolveArgs) -> Result<(), CliError> {
    let mut cfg: SolveCfg = load_cfg(a.config.as_deref())?;
    merge_opt(&mut cfg.graph, a.graph.clone());
    merge_opt(&mut cfg.seed_vertex, a.seed_vertex);
    merge_opt(&mut cfg.out, a.out.clone());
    cfg.params.merge_flags(&a);
    cfg.params.resolve_beta();
    let graph_path = require(cfg.graph.clone(), "--graph")?;
    let seed_vertex = require(cfg.seed_vertex, "--seed-vertex")?;
    let out = require(cfg.out.clone(), "--out")?;

    let g = load_edge_list(&graph_path)?;
    let ncfg = cfg.params.to_npr_config(seed_vertex);
    write_resolved(&cfg, &out)?;
    let run = continuation(&g, &ncfg)?;

    let mut stage_rows = Vec::new();
    let mut profiles = Vec::new();
    for stage in &run.stages {
        let profile = sweep_cut(&g, &stage.x);
        write_vector_csv(&stage.x, out.join(format!("solution_p{}.csv", stage.p)))?;
        write_text(
            &out.join(format!("trace_p{}.jsonl", stage.p)),
            &stage.trace.to_json_lines(),
        )?;
        write_text(&out.join(format!("sweep_p{}.csv", stage.p)), &profile.to_csv())?;
        stage_rows.push(json!({
            "p": stage.p,
            "psi": stage.psi,
            "grad_norm": stage.grad_norm,
            "status": stage.trace.status,
            "iterations": stage.trace.iterations.len(),
            "best_phi": profile.best_phi,
            "best_j": profile.best_j,
        }));
        profiles.push(profile);
    }
    let (best_idx, best_profile) =
        best_stage_cluster(&g, &run.stages).expect("continuation returns at least one stage");
    let best_set = best_profile.best_set(&g);
    let mut members: Vec<usize> = best_set.iter().collect();
    members.sort_unstable();
    write_labels(&members, out.join("best_cluster.txt"))?;
    let summary = json!({
        "n": g.n(),
        "m": g.m(),
        "seed_vertex": seed_vertex,
        "pinned_vertex": run.pinned,
        "stages": stage_rows,
        "best": {
            "stage": best_idx,
            "p": run.stages[best_idx].p,
            "phi": best_profile.best_phi,
            "size": best_profile.best_j,
        },
    });
    write_text(
        &out.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary).expect("json value")),
    )?;
    println!(
        "best cluster: p={} phi={:.6} size={} -> {}",
        run.stages[best_idx].p,
        best_profile.best_phi,
        best_profile.best_j,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// appr

#[derive(Args)]
struct ApprArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph edge list (tab-separated "u v w", zero-based ids).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Seed vertex for the personalized restart distribution.
    #[arg(long)]
    seed_vertex: Option<usize>,
    /// Teleport probability in (0,1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Push tolerance; defaults to 1e-6 / n.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output directory (estimate.csv, residual.csv, sweep.csv, best cluster,
    /// summary.json, config.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(default)]
struct ApprCfg {
    graph: Option<PathBuf>,
    seed_vertex: Option<usize>,
    alpha: f64,
    epsilon: Option<f64>,
    out: Option<PathBuf>,
}

impl Default for ApprCfg {
    fn default() -> Self {
        let d = ApprConfig::new(0);
        ApprCfg {
            graph: None,
            seed_vertex: None,
            alpha: d.alpha,
            epsilon: d.epsilon,
            out: None,
        }
    }
}

fn appr(a: ApprArgs) -> Result<(), CliError> {
    let mut cfg: ApprCfg = load_cfg(a.config.as_deref())?;
    merge_opt(&mut cfg.graph, a.graph);
    merge_opt(&mut cfg.seed_vertex, a.seed_vertex);
    merge(&mut cfg.alpha, a.alpha);
    merge_opt(&mut cfg.epsilon, a.epsilon);
    merge_opt(&mut cfg.out, a.out);
    let graph_path = require(cfg.graph.clone(), "--graph")?;
    let seed_vertex = require(cfg.seed_vertex, "--seed-vertex")?;
    let out = require(cfg.out.clone(), "--out")?;

    let g = load_edge_list(&graph_path)?;
    let mut acfg = ApprConfig::new(seed_vertex);
    acfg.alpha = cfg.alpha;
    acfg.epsilon = cfg.epsilon;
    write_resolved(&cfg, &out)?;
    let res = appr_push(&g, &acfg)?;
    let profile = sweep_cut(&g, &res.degree_normalized(&g));
    write_vector_csv(&res.to_dense(), out.join("estimate.csv"))?;
    write_vector_csv(&res.residual_dense(), out.join("residual.csv"))?;
    write_text(&out.join("sweep.csv"), &profile.to_csv())?;
    let best_set = profile.best_set(&g);
    let mut members: Vec<usize> = best_set.iter().collect();
    members.sort_unstable();
    write_labels(&members, out.join("best_cluster.txt"))?;
    let summary = json!({
        "n": g.n(),
        "m": g.m(),
        "seed_vertex": seed_vertex,
        "alpha": cfg.alpha,
        "epsilon": acfg.resolved_epsilon(g.n()),
        "push_count": res.push_count,
        "support_size": res.support.len(),
        "best": { "phi": profile.best_phi, "size": profile.best_j },
    });
    write_text(
        &out.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary).expect("json value")),
    )?;
    println!(
        "best cluster: phi={:.6} size={} ({} pushes) -> {}",
        profile.best_phi,
        profile.best_j,
        res.push_count,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph edge list (tab-separated "u v w", zero-based ids).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Ground-truth labels, one integer per line, one per vertex.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Clustering method to evaluate.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Number of seeded repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// RNG seed for the seed-vertex draws; the same seed yields the same
    /// vertices for either method.
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Draw seed vertices only from this label class.
    #[arg(long)]
    restrict_label: Option<usize>,
    /// Diffusion strength for the npr method.
    #[arg(long)]
    beta: Option<f64>,
    /// Pick beta from the grouping-count preset table; ignored when --beta
    /// is given.
    #[arg(long)]
    beta_preset: Option<usize>,
    /// Smoothing constant for the npr method.
    #[arg(long)]
    zeta: Option<f64>,
    /// Comma-separated strictly decreasing p values in (1,2).
    #[arg(long, value_delimiter = ',')]
    p_schedule: Option<Vec<f64>>,
    /// Teleport probability for the appr method.
    #[arg(long)]
    alpha: Option<f64>,
    /// Push tolerance for the appr method; defaults to 1e-6 / n.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output directory (report.csv, report.json, config.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(default)]
struct ExperimentCfg {
    graph: Option<PathBuf>,
    labels: Option<PathBuf>,
    method: Method,
    reps: usize,
    rng_seed: u64,
    restrict_label: Option<usize>,
    npr: SolveParams,
    alpha: f64,
    epsilon: Option<f64>,
    out: Option<PathBuf>,
}

impl Default for ExperimentCfg {
    fn default() -> Self {
        let d = ApprConfig::new(0);
        ExperimentCfg {
            graph: None,
            labels: None,
            method: Method::Npr,
            reps: 50,
            rng_seed: 0,
            restrict_label: None,
            npr: SolveParams::default(),
            alpha: d.alpha,
            epsilon: d.epsilon,
            out: None,
        }
    }
}

fn experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let mut cfg: ExperimentCfg = load_cfg(a.config.as_deref())?;
    merge_opt(&mut cfg.graph, a.graph);
    merge_opt(&mut cfg.labels, a.labels);
    merge(&mut cfg.method, a.method.map(Method::from));
    merge(&mut cfg.reps, a.reps);
    merge(&mut cfg.rng_seed, a.rng_seed);
    merge_opt(&mut cfg.restrict_label, a.restrict_label);
    merge_opt(&mut cfg.npr.beta, a.beta);
    merge_opt(&mut cfg.npr.beta_preset, a.beta_preset);
    merge_opt(&mut cfg.npr.zeta, a.zeta);
    merge(&mut cfg.npr.p_schedule, a.p_schedule.clone());
    merge(&mut cfg.alpha, a.alpha);
    merge_opt(&mut cfg.epsilon, a.epsilon);
    merge_opt(&mut cfg.out, a.out);
    cfg.npr.resolve_beta();
    let graph_path = require(cfg.graph.clone(), "--graph")?;
    let labels_path = require(cfg.labels.clone(), "--labels")?;
    let out = require(cfg.out.clone(), "--out")?;

    let g = load_edge_list(&graph_path)?;
    let labels = load_labels(&labels_path)?;
    let mut protocol = ExperimentProtocol::new(cfg.method, cfg.reps, cfg.rng_seed);
    protocol.npr = cfg.npr.to_npr_config(0);
    protocol.appr.alpha = cfg.alpha;
    protocol.appr.epsilon = cfg.epsilon;
    protocol.restrict_label = cfg.restrict_label;
    write_resolved(&cfg, &out)?;
    let report = run_experiment(&g, &labels, &protocol)?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(
        &out.join("report.json"),
        &format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")),
    )?;
    let errors = report.records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{:?} x{}: mean phi={:.6} (std {:.6}), mean fscore={:.4} (std {:.4}), {} failed -> {}",
        protocol.method,
        cfg.reps,
        report.mean_phi,
        report.std_phi,
        report.mean_fscore,
        report.std_fscore,
        errors,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// validate

#[derive(Args)]
struct ValidateArgs {
    /// Graph edge list to check.
    #[arg(long)]
    graph: Option<PathBuf>,
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let graph_path = require(a.graph, "--graph")?;
    let g = load_edge_list(&graph_path)?;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        if ok {
            println!("check {name}: ok");
        } else {
            println!("check {name}: FAILED ({detail})");
            failures.push(name.to_string());
        }
    };

    // Loading already enforced simplicity, connectivity, and positive
    // weights; the checks below exercise the derived quantities and the
    // operator stack on top of them.
    let mut degree_err = 0.0_f64;
    let mut twice_weight = 0.0;
    let mut recomputed = vec![0.0; g.n()];
    for e in g.edges() {
        recomputed[e.u] += e.w;
        recomputed[e.v] += e.w;
        twice_weight += 2.0 * e.w;
    }
    for v in 0..g.n() {
        degree_err = degree_err.max((recomputed[v] - g.degree(v)).abs());
    }
    check(
        "degrees",
        degree_err <= 1e-9 * g.volume().max(1.0),
        format!("max degree mismatch {degree_err:.3e}"),
    );
    let vol_err = (g.volume() - twice_weight).abs();
    check(
        "volume",
        vol_err <= 1e-9 * twice_weight.max(1.0),
        format!("volume vs 2*sum(w) differs by {vol_err:.3e}"),
    );

    let incidence = IncidenceOp::new(&g);
    let solver = LaplacianSolver::new(&g).map_err(|e| CliError::Data(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0 = npr_core::testing::random_vector(g.n(), &mut rng);
    let z = incidence.apply(&x0);
    let back = incidence.pinv_apply(&solver, &z);
    let mean = x0.sum() / g.n() as f64;
    let centred = x0.map(|v| v - mean);
    let centering_err = (&back - &centred).amax();
    check(
        "incidence-centering",
        centering_err <= 1e-8 * centred.amax().max(1.0),
        format!("pinv(B) B x vs centred x differs by {centering_err:.3e}"),
    );

    let beta = 0.01;
    let ones = DVector::from_element(g.n(), 1.0);
    let t_ones = npr_core::apply_system(&g, beta, &ones);
    let mut t_err = 0.0_f64;
    for v in 0..g.n() {
        t_err = t_err.max((t_ones[v] - beta * g.degree(v)).abs());
    }
    check(
        "system-operator",
        t_err <= 1e-10 * (1.0 + beta * g.volume()),
        format!("T*1 vs beta*d differs by {t_err:.3e}"),
    );

    let acfg = ApprConfig::new(0);
    let res = appr_push(&g, &acfg)?;
    let mass: f64 = res.support.iter().map(|&(_, p)| p).sum::<f64>()
        + res.residual.iter().map(|&(_, r)| r).sum::<f64>();
    let mass_err = (mass - 1.0).abs();
    check(
        "push-mass",
        mass_err <= 1e-12 * res.push_count.max(1) as f64,
        format!("estimate+residual mass differs from 1 by {mass_err:.3e}"),
    );
    let eps = acfg.resolved_epsilon(g.n());
    let residual_ok = res.residual.iter().all(|&(v, r)| r < eps * g.degree(v));
    check(
        "push-residual",
        residual_ok,
        "a residual entry breaches the epsilon*degree threshold".into(),
    );

    if failures.is_empty() {
        println!("all checks passed (n={} m={})", g.n(), g.m());
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "graph failed checks: {}",
            failures.join(", ")
        )))
    }
}
