//! Local graph clustering built on a nonlinear modified PageRank diffusion.

pub mod baseline;
pub mod data;
pub mod dense;
pub mod eval;
pub mod graph;
pub mod npr;
pub mod operators;
pub mod sweep;
pub mod testing;

pub use baseline::{appr_push, ApprConfig, ApprError, ApprResult};
pub use data::{
    build_cost_graph, build_knn_graph, gen_gaussian_groupings, load_cost_table, load_edge_list,
    load_labels, load_points, write_edge_list, write_labels, write_points, write_vector_csv,
    CostTable, DataError, IotaMode, PointCloud,
};
pub use eval::{
    fscore, run_experiment, EvalError, ExperimentProtocol, ExperimentReport, Method, SeedRecord,
};
pub use graph::{conductance, furthest_vertex, EdgeLength, Graph, GraphError, VertexSet};
pub use npr::{
    continuation, k_diag, ContinuationRun, LmIteration, LmOptions, LmStatus, LmTrace, NprConfig,
    NprError, NprProblem, NprSolution, DEFAULT_P_SCHEDULE,
};
pub use operators::{
    apply_system, apply_system_transpose, min_norm_p2_init, IncidenceOp, LaplacianSolver,
    OperatorError,
};
pub use sweep::{best_stage_cluster, sweep_cut, SweepProfile};
