//! Nonlinear diffusion solver: residual, analytic Jacobian, damped
//! Gauss-Newton iteration with a pinned coordinate, and the p-continuation
//! driver that warm-starts down the schedule.

use std::cell::OnceCell;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{furthest_vertex, EdgeLength, Graph, GraphError};
use crate::operators::{
    apply_system, min_norm_p2_init, IncidenceOp, LaplacianSolver, OperatorError,
};

/// Default p schedule, strictly decreasing.
pub const DEFAULT_P_SCHEDULE: [f64; 7] = [1.95, 1.9, 1.8, 1.7, 1.6, 1.5, 1.45];

/// Damping growth cap; beyond this the solver reports a stall instead of
/// shrinking steps forever.
const LAMBDA_CAP: f64 = 1e32;

/// Errors from the nonlinear solver.
#[derive(Debug, Error)]
pub enum NprError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("graph has {n} vertices but the dense Jacobian path is capped at {threshold}")]
    SizeExceeded { n: usize, threshold: usize },
    #[error("normal equations could not be factorized (non-finite entries at iteration {iter})")]
    LinearSolveFailure { iter: usize },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Solver configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NprConfig {
    /// Damping-derived scalar in (0,1).
    pub beta: f64,
    /// Smoothing constant; `None` resolves by graph size (1e-6 from 10^4
    /// vertices upward, 1e-11 below).
    pub zeta: Option<f64>,
    /// Strictly decreasing p values in (1,2).
    pub p_schedule: Vec<f64>,
    /// Seed vertex; the mass source r is its indicator.
    pub seed_vertex: usize,
    /// Value held at the pinned (furthest) vertex.
    pub fixed_value: f64,
    /// Stop when the gradient max-norm falls to this.
    pub grad_tol: f64,
    /// Stop when the relative step falls to this.
    pub step_tol: f64,
    /// Iteration cap per p value.
    pub max_iters: usize,
    /// Initial damping is this factor times the largest normal-equation
    /// diagonal entry.
    pub lambda0_factor: f64,
    /// Largest n the dense Jacobian path accepts.
    pub dense_threshold: usize,
    /// Edge length rule for locating the pinned vertex.
    pub edge_length: EdgeLength,
}

impl NprConfig {
    /// Defaults with the given seed vertex.
    pub fn new(seed_vertex: usize) -> Self {
        NprConfig {
            beta: 0.01,
            zeta: None,
            p_schedule: DEFAULT_P_SCHEDULE.to_vec(),
            seed_vertex,
            fixed_value: 1e-12,
            grad_tol: 1e-7,
            step_tol: 1e-7,
            max_iters: 500,
            lambda0_factor: 1e-3,
            dense_threshold: 2000,
            edge_length: EdgeLength::InverseWeight,
        }
    }

    /// Checks parameter ranges against a graph.
    pub fn validate(&self, g: &Graph) -> Result<(), NprError> {
        let fail = |msg: String| Err(NprError::InvalidConfig(msg));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("beta must lie in (0,1), got {}", self.beta));
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0) {
                return fail(format!("zeta must be positive, got {z}"));
            }
        }
        if self.p_schedule.is_empty() {
            return fail("p schedule must be non-empty".into());
        }
        for pair in self.p_schedule.windows(2) {
            if pair[1] >= pair[0] {
                return fail(format!(
                    "p schedule must be strictly decreasing, got {} before {}",
                    pair[0], pair[1]
                ));
            }
        }
        for &p in &self.p_schedule {
            if !(p > 1.0 && p < 2.0) {
                return fail(format!("p values must lie in (1,2), got {p}"));
            }
        }
        if self.seed_vertex >= g.n() {
            return fail(format!(
                "seed vertex {} out of range for {} vertices",
                self.seed_vertex,
                g.n()
            ));
        }
        if !(self.fixed_value > 0.0) {
            return fail(format!("fixed value must be positive, got {}", self.fixed_value));
        }
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return fail("tolerances must be positive".into());
        }
        if self.max_iters == 0 {
            return fail("iteration cap must be at least 1".into());
        }
        if !(self.lambda0_factor > 0.0) {
            return fail(format!(
                "initial damping factor must be positive, got {}",
                self.lambda0_factor
            ));
        }
        Ok(())
    }

    /// The smoothing constant in effect for a graph on `n` vertices.
    pub fn resolved_zeta(&self, n: usize) -> f64 {
        self.zeta.unwrap_or(if n >= 10_000 { 1e-6 } else { 1e-11 })
    }
}

/// Iteration controls extracted from a config.
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iters: usize,
    pub lambda0_factor: f64,
}

impl From<&NprConfig> for LmOptions {
    fn from(cfg: &NprConfig) -> Self {
        LmOptions {
            grad_tol: cfg.grad_tol,
            step_tol: cfg.step_tol,
            max_iters: cfg.max_iters,
            lambda0_factor: cfg.lambda0_factor,
        }
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    Converged,
    IterationCap,
    StallFailure,
}

/// One trial step. `lambda` is the damping that produced the step; `psi` and
/// `grad_norm` describe the current iterate after the trial is resolved.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LmIteration {
    pub iter: usize,
    pub psi: f64,
    pub grad_norm: f64,
    pub lambda: f64,
    pub rho: f64,
    pub accepted: bool,
}

/// Full iteration history of one solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmTrace {
    pub iterations: Vec<LmIteration>,
    pub status: LmStatus,
}

impl LmTrace {
    /// Serializes the iterations as JSON lines, one object per trial.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for it in &self.iterations {
            out.push_str(&serde_json::to_string(it).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }
}

/// Solution of one p stage.
#[derive(Debug, Clone)]
pub struct NprSolution {
    /// Full-length iterate, pinned entry included.
    pub x: DVector<f64>,
    /// The p value this stage solved.
    pub p: f64,
    /// Final merit value, half the squared residual norm.
    pub psi: f64,
    /// Final gradient max-norm over the free coordinates.
    pub grad_norm: f64,
    pub trace: LmTrace,
}

/// Continuation output: one solution per scheduled p.
#[derive(Debug, Clone)]
pub struct ContinuationRun {
    pub pinned: usize,
    pub stages: Vec<NprSolution>,
}

/// Index bookkeeping for the pinned coordinate.
#[derive(Debug, Clone, Copy)]
pub struct PinnedIndexMap {
    n: usize,
    pinned: usize,
}

impl PinnedIndexMap {
    pub fn new(n: usize, pinned: usize) -> Self {
        assert!(pinned < n);
        PinnedIndexMap { n, pinned }
    }

    /// Full index of reduced coordinate `i`.
    pub fn full_index(&self, i: usize) -> usize {
        if i < self.pinned {
            i
        } else {
            i + 1
        }
    }

    /// Drops the pinned entry of a full vector.
    pub fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n - 1,
            (0..self.n - 1).map(|i| full[self.full_index(i)]),
        )
    }

    /// Rebuilds a full vector, re-inserting `fixed_value` at the pinned slot.
    pub fn embed(&self, reduced: &DVector<f64>, fixed_value: f64) -> DVector<f64> {
        let mut full = DVector::zeros(self.n);
        for i in 0..self.n - 1 {
            full[self.full_index(i)] = reduced[i];
        }
        full[self.pinned] = fixed_value;
        full
    }
}

/// Diagonal of K, the edgewise derivative of z ↦ (z²+ζ)^((p−2)/2) z.
///
/// Computed as η^((p−2)/2)·(1 + (p−2)z²/η) with η = z²+ζ. The bracket
/// equals ((p−1)z² + ζ)/η, so the whole entry is positive for p > 1, and
/// the form is exact at the two anchor cases: p = 2 gives 1, z = 0 gives
/// ζ^((p−2)/2).
pub fn k_diag(z: &DVector<f64>, p: f64, zeta: f64) -> DVector<f64> {
    z.map(|zi| {
        let eta = zi * zi + zeta;
        eta.powf((p - 2.0) / 2.0) * (1.0 + (p - 2.0) * zi * zi / eta)
    })
}

/// One diffusion problem instance: graph, rhs, smoothing, and the pinned
/// coordinate. The solver state (Laplacian factorization, dense Laplacian
/// pseudoinverse for Jacobian assembly) lives here and is built once.
pub struct NprProblem<'g> {
    g: &'g Graph,
    incidence: IncidenceOp<'g>,
    solver: LaplacianSolver,
    beta: f64,
    zeta: f64,
    r: DVector<f64>,
    pinned: usize,
    fixed_value: f64,
    dense_threshold: usize,
    lap_pinv: OnceCell<DMatrix<f64>>,
}

impl<'g> NprProblem<'g> {
    /// Builds the problem a config describes: r is the seed indicator and
    /// the pinned vertex is the furthest from the seed.
    pub fn from_config(g: &'g Graph, cfg: &NprConfig) -> Result<Self, NprError> {
        cfg.validate(g)?;
        let mut r = DVector::zeros(g.n());
        r[cfg.seed_vertex] = 1.0;
        let pinned = furthest_vertex(g, cfg.seed_vertex, cfg.edge_length);
        Self::with_rhs(
            g,
            cfg.beta,
            cfg.resolved_zeta(g.n()),
            r,
            pinned,
            cfg.fixed_value,
            cfg.dense_threshold,
        )
    }

    /// Builds a problem with an arbitrary mass-source vector. This is the
    /// manufactured-solution entry point; `from_config` is the production
    /// one.
    pub fn with_rhs(
        g: &'g Graph,
        beta: f64,
        zeta: f64,
        r: DVector<f64>,
        pinned: usize,
        fixed_value: f64,
        dense_threshold: usize,
    ) -> Result<Self, NprError> {
        assert_eq!(r.len(), g.n(), "rhs length mismatch");
        assert!(pinned < g.n(), "pinned vertex out of range");
        assert!(beta > 0.0 && beta < 1.0, "beta out of range");
        assert!(zeta > 0.0, "zeta must be positive");
        Ok(NprProblem {
            g,
            incidence: IncidenceOp::new(g),
            solver: LaplacianSolver::new(g)?,
            beta,
            zeta,
            r,
            pinned,
            fixed_value,
            dense_threshold,
            lap_pinv: OnceCell::new(),
        })
    }

    /// Swaps in an orientation with flipped incidence rows. Every public
    /// quantity must be invariant under this.
    pub fn set_edge_flips(&mut self, flips: Vec<bool>) {
        self.incidence = IncidenceOp::with_flips(self.g, flips);
    }

    pub fn graph(&self) -> &Graph {
        self.g
    }

    pub fn pinned(&self) -> usize {
        self.pinned
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// The nonlinear map f(x) = B†((Bx ∘ Bx + ζq)^((p−2)/2) ⊙ Bx).
    pub fn f_nonlinear(&self, x: &DVector<f64>, p: f64) -> DVector<f64> {
        let z = self.incidence.apply(x);
        let scaled = z.map(|zi| (zi * zi + self.zeta).powf((p - 2.0) / 2.0) * zi);
        self.incidence.pinv_apply(&self.solver, &scaled)
    }

    /// Residual g(x) = βr − T f(x).
    pub fn residual(&self, x: &DVector<f64>, p: f64) -> DVector<f64> {
        &self.r * self.beta - apply_system(self.g, self.beta, &self.f_nonlinear(x, p))
    }

    /// Merit ψ(x) = ½‖g(x)‖².
    pub fn merit(&self, x: &DVector<f64>, p: f64) -> f64 {
        0.5 * self.residual(x, p).norm_squared()
    }

    /// Dense Laplacian pseudoinverse used by Jacobian assembly, built on
    /// first use.
    fn lap_pinv_dense(&self) -> &DMatrix<f64> {
        self.lap_pinv.get_or_init(|| {
            let n = self.g.n();
            let mut m = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for j in 0..n {
                rhs.fill(-1.0 / n as f64);
                rhs[j] += 1.0;
                m.set_column(j, &self.solver.solve_mean_zero(&rhs));
            }
            m
        })
    }

    /// Analytic Jacobian of the residual, J = −T B†KB, assembled densely as
    /// −T · L† · L_K with L_K the Laplacian reweighted by `k_diag`.
    ///
    /// L_K is built from the edge list alone; the incidence signs cancel in
    /// the Gram product, which is what makes orientation invariance exact.
    pub fn jacobian(&self, x: &DVector<f64>, p: f64) -> Result<DMatrix<f64>, NprError> {
        let n = self.g.n();
        if n > self.dense_threshold {
            return Err(NprError::SizeExceeded {
                n,
                threshold: self.dense_threshold,
            });
        }
        let z = self.incidence.apply(x);
        let k = k_diag(&z, p, self.zeta);
        let pinv = self.lap_pinv_dense();

        // M = L† L_K, column by column: the column of L_K at vertex j holds
        // Σ k_e on the diagonal and −k_e at each neighbour.
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = 0.0;
            {
                let mut col = m.column_mut(j);
                for nb in self.g.neighbors(j) {
                    let ke = k[nb.edge];
                    diag += ke;
                    col.axpy(-ke, &pinv.column(nb.vertex), 1.0);
                }
                col.axpy(diag, &pinv.column(j), 1.0);
            }
        }

        let mut jac = DMatrix::zeros(n, n);
        let mut buf = DVector::zeros(n);
        for j in 0..n {
            buf.copy_from(&m.column(j));
            let tcol = apply_system(self.g, self.beta, &buf);
            jac.set_column(j, &(-tcol));
        }
        Ok(jac)
    }

    /// Drops the pinned column, leaving the full-column-rank matrix the
    /// normal equations are built from.
    pub fn reduce_full_rank(&self, jac: &DMatrix<f64>) -> (DMatrix<f64>, PinnedIndexMap) {
        let n = self.g.n();
        let map = PinnedIndexMap::new(n, self.pinned);
        let mut reduced = DMatrix::zeros(n, n - 1);
        for i in 0..n - 1 {
            reduced.set_column(i, &jac.column(map.full_index(i)));
        }
        (reduced, map)
    }

    /// Damped least-squares iteration on the reduced system
    /// (J̃ᵀJ̃ + λI) s = −J̃ᵀg with gain-ratio damping control.
    ///
    /// Accepts any step that reduces ψ; the damping shrinks by the gain
    /// polynomial on acceptance and doubles (then redoubles) on rejection.
    /// Stops on the gradient max-norm, the relative step size, or the
    /// iteration cap, whichever comes first.
    pub fn lm_solve(
        &self,
        opts: &LmOptions,
        p: f64,
        x0: &DVector<f64>,
    ) -> Result<NprSolution, NprError> {
        assert_eq!(x0.len(), self.g.n(), "x0 length mismatch");
        let mut x_c = x0.clone();
        x_c[self.pinned] = self.fixed_value;

        let mut g_c = self.residual(&x_c, p);
        let mut psi_c = 0.5 * g_c.norm_squared();
        let (mut a, mut grad, map) = self.normal_system(&x_c, p, &g_c)?;
        let mut grad_norm = grad.amax();

        let mut lambda = opts.lambda0_factor * a.diagonal().max();
        let mut nu = 2.0;
        let mut iterations = Vec::new();
        let mut status = None;

        if grad_norm <= opts.grad_tol {
            status = Some(LmStatus::Converged);
        }

        let mut iter = 0usize;
        while status.is_none() {
            if iter >= opts.max_iters {
                status = Some(LmStatus::IterationCap);
                break;
            }
            iter += 1;

            let chol = match self.damped_cholesky(&a, lambda, iter)? {
                Some(c) => c,
                None => {
                    // Indefinite in floating point; escalate as a rejection.
                    lambda *= nu;
                    nu *= 2.0;
                    if lambda > LAMBDA_CAP {
                        status = Some(LmStatus::StallFailure);
                    }
                    continue;
                }
            };
            let step = chol.solve(&(-&grad));

            let rel_step = step.norm() / x_c.norm().max(1e-30);
            if rel_step <= opts.step_tol {
                status = Some(LmStatus::Converged);
                break;
            }

            let x_t = {
                let mut x = x_c.clone();
                for i in 0..step.len() {
                    x[map.full_index(i)] += step[i];
                }
                x
            };
            let g_t = self.residual(&x_t, p);
            let psi_t = 0.5 * g_t.norm_squared();
            // Predicted reduction of the quadratic model, always positive.
            let pred = -0.5 * step.dot(&grad);
            let rho = (psi_c - psi_t) / pred;

            if psi_t.is_finite() && rho > 0.0 {
                x_c = x_t;
                g_c = g_t;
                psi_c = psi_t;
                let (na, ngrad, _) = self.normal_system(&x_c, p, &g_c)?;
                a = na;
                grad = ngrad;
                grad_norm = grad.amax();
                iterations.push(LmIteration {
                    iter,
                    psi: psi_c,
                    grad_norm,
                    lambda,
                    rho,
                    accepted: true,
                });
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                if grad_norm <= opts.grad_tol {
                    status = Some(LmStatus::Converged);
                }
            } else {
                iterations.push(LmIteration {
                    iter,
                    psi: psi_c,
                    grad_norm,
                    lambda,
                    rho: if rho.is_finite() { rho } else { f64::NAN },
                    accepted: false,
                });
                lambda *= nu;
                nu *= 2.0;
                if lambda > LAMBDA_CAP {
                    status = Some(LmStatus::StallFailure);
                }
            }
        }

        Ok(NprSolution {
            x: x_c,
            p,
            psi: psi_c,
            grad_norm,
            trace: LmTrace {
                iterations,
                status: status.unwrap_or(LmStatus::IterationCap),
            },
        })
    }

    fn normal_system(
        &self,
        x: &DVector<f64>,
        p: f64,
        g_val: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>, PinnedIndexMap), NprError> {
        let jac = self.jacobian(x, p)?;
        let (reduced, map) = self.reduce_full_rank(&jac);
        let jt = reduced.transpose();
        let a = &jt * &reduced;
        let grad = &jt * g_val;
        Ok((a, grad, map))
    }

    fn damped_cholesky(
        &self,
        a: &DMatrix<f64>,
        lambda: f64,
        iter: usize,
    ) -> Result<Option<Cholesky<f64, nalgebra::Dyn>>, NprError> {
        if !lambda.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return Err(NprError::LinearSolveFailure { iter });
        }
        let mut h = a.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += lambda;
        }
        Ok(Cholesky::new(h))
    }
}

/// Solves the whole p schedule with warm starts.
///
/// The pinned vertex is fixed once, from the seed, before the first stage;
/// the initial iterate is the q-orthogonal least-squares solution of the
/// p = 2 problem with the pinned entry overwritten. Stages that hit the
/// iteration cap or stall still pass their best iterate to the next p.
pub fn continuation(g: &Graph, cfg: &NprConfig) -> Result<ContinuationRun, NprError> {
    let problem = NprProblem::from_config(g, cfg)?;
    let mut x = min_norm_p2_init(g, cfg.beta, problem.rhs(), cfg.dense_threshold)?;
    x[problem.pinned()] = cfg.fixed_value;
    let opts = LmOptions::from(cfg);
    let mut stages = Vec::with_capacity(cfg.p_schedule.len());
    for &p in &cfg.p_schedule {
        let sol = problem.lm_solve(&opts, p, &x)?;
        x = sol.x.clone();
        stages.push(sol);
    }
    Ok(ContinuationRun {
        pinned: problem.pinned(),
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use crate::testing::{random_connected_graph, random_vector};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem<'g>(g: &'g Graph, beta: f64, zeta: f64, seed: usize) -> NprProblem<'g> {
        let mut r = DVector::zeros(g.n());
        r[seed] = 1.0;
        let pinned = furthest_vertex(g, seed, EdgeLength::InverseWeight);
        NprProblem::with_rhs(g, beta, zeta, r, pinned, 1e-12, 2000).unwrap()
    }

    #[test]
    fn k_diag_is_exactly_one_at_p_two() {
        let z = DVector::from_vec(vec![0.0, -1.5, 2.0, 1e-6]);
        let k = k_diag(&z, 2.0, 1e-11);
        for v in k.iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn k_diag_at_zero_is_zeta_power() {
        let zeta = 1e-4;
        let p = 1.5;
        let k = k_diag(&DVector::from_vec(vec![0.0]), p, zeta);
        assert_relative_eq!(k[0], zeta.powf((p - 2.0) / 2.0), epsilon = 1e-12);
    }

    #[test]
    fn k_diag_positive_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &p in &[1.01, 1.45, 1.6, 1.95, 2.0] {
            let z = random_vector(50, &mut rng) * 10.0;
            let k = k_diag(&z, p, 1e-11);
            assert!(k.min() > 0.0, "p={p}");
        }
    }

    #[test]
    fn f_at_p_two_is_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_connected_graph(15, 10, (0.5, 2.0), &mut rng);
        let pr = problem(&g, 0.01, 1e-11, 0);
        let x = random_vector(g.n(), &mut rng);
        let f = pr.f_nonlinear(&x, 2.0);
        let centered = &x - DVector::from_element(g.n(), x.mean());
        assert_relative_eq!(f, centered, epsilon = 1e-10);
    }

    #[test]
    fn f_vanishes_on_constants() {
        let g = Graph::build(3, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let pr = problem(&g, 0.01, 1e-11, 0);
        let f = pr.f_nonlinear(&DVector::from_element(3, 7.0), 1.5);
        assert!(f.amax() <= 1e-14);
    }

    #[test]
    fn f_on_single_edge_by_hand() {
        let g = Graph::build(2, &[(0, 1, 1.0)]).unwrap();
        let pr = problem(&g, 0.01, 1e-11, 0);
        let f = pr.f_nonlinear(&DVector::from_vec(vec![0.0, 1.0]), 1.5);
        // z = 1, h = (1+ζ)^(-1/4) ≈ 1, f = h·B†(1) = h·(−1/2, 1/2).
        assert_relative_eq!(f[0], -0.5, epsilon = 1e-9);
        assert_relative_eq!(f[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn residual_vanishes_at_manufactured_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_connected_graph(12, 8, (0.5, 2.0), &mut rng);
        let beta = 0.01;
        let mut y = random_vector(g.n(), &mut rng);
        let mean = y.mean();
        y.add_scalar_mut(-mean);
        let pr_probe = problem(&g, beta, 1e-11, 0);
        let r = apply_system(&g, beta, &pr_probe.f_nonlinear(&y, 1.6)) / beta;
        let pr = NprProblem::with_rhs(&g, beta, 1e-11, r, 1, 1e-12, 2000).unwrap();
        assert!(pr.residual(&y, 1.6).amax() <= 1e-12);
        assert!(pr.merit(&random_vector(g.n(), &mut rng), 1.6) >= 0.0);
    }

    #[test]
    fn residual_at_p_two_matches_linear_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_connected_graph(10, 8, (0.5, 2.0), &mut rng);
        let pr = problem(&g, 0.05, 1e-11, 2);
        let x = random_vector(g.n(), &mut rng);
        let centered = &x - DVector::from_element(g.n(), x.mean());
        let expect = pr.rhs() * 0.05 - apply_system(&g, 0.05, &centered);
        assert_relative_eq!(pr.residual(&x, 2.0), expect, epsilon = 1e-10);
    }

    fn fd_jacobian(pr: &NprProblem, x: &DVector<f64>, p: f64, h: f64) -> DMatrix<f64> {
        let n = x.len();
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let col = (pr.residual(&xp, p) - pr.residual(&xm, p)) / (2.0 * h);
            j.set_column(i, &col);
        }
        j
    }

    /// Random iterate kept away from kinks of the p-norm term so the fixed
    /// finite-difference stencil stays trustworthy.
    fn well_conditioned_point<R: Rng>(
        pr: &NprProblem,
        n: usize,
        rng: &mut R,
    ) -> DVector<f64> {
        loop {
            let x = random_vector(n, rng);
            let z = IncidenceOp::new(pr.graph()).apply(&x);
            if z.iter().all(|zi| zi.abs() >= 1e-2) {
                return x;
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_connected_graph(9, 6, (0.5, 2.0), &mut rng);
        let pr = problem(&g, 0.01, 1e-11, 0);
        for &p in &[1.95, 1.6, 1.45] {
            let x = well_conditioned_point(&pr, g.n(), &mut rng);
            let jac = pr.jacobian(&x, p).unwrap();
            let fd = fd_jacobian(&pr, &x, p, 1e-6);
            let scale = jac.amax();
            assert!(((&jac - &fd).amax() / scale) <= 1e-6, "p={p}");
        }
    }

    #[test]
    fn jacobian_with_large_zeta_smooth_near_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = random_connected_graph(8, 5, (0.5, 2.0), &mut rng);
        let pr = NprProblem::with_rhs(
            &g,
            0.01,
            1e-2,
            DVector::zeros(g.n()),
            1,
            1e-12,
            2000,
        )
        .unwrap();
        let x = random_vector(g.n(), &mut rng) * 1e-3;
        let jac = pr.jacobian(&x, 1.45).unwrap();
        let fd = fd_jacobian(&pr, &x, 1.45, 1e-6);
        assert!(((&jac - &fd).amax() / jac.amax()) <= 1e-6);
    }

    #[test]
    fn jacobian_kernel_is_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = random_connected_graph(14, 10, (0.5, 2.0), &mut rng);
        let pr = problem(&g, 0.01, 1e-11, 0);
        let x = random_vector(g.n(), &mut rng);
        let jac = pr.jacobian(&x, 1.6).unwrap();
        let q = DVector::from_element(g.n(), 1.0);
        assert!((&jac * q).amax() <= 1e-10);
    }

    #[test]
    fn jacobian_at_p_two_is_negative_centered_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let g = random_connected_graph(11, 9, (0.5, 2.0), &mut rng);
        let pr = problem(&g, 0.3, 1e-11, 0);
        let jac = pr.jacobian(&random_vector(g.n(), &mut rng), 2.0).unwrap();
        let n = g.n();
        let t = dense::system_matrix(&g, 0.3);
        let q = DMatrix::from_element(n, n, 1.0 / n as f64);
        let expect = -(&t * (DMatrix::identity(n, n) - q));
        assert_relative_eq!(jac, expect, epsilon = 1e-9);
    }

    #[test]
    fn jacobian_rejects_oversized_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = random_connected_graph(12, 6, (0.5, 2.0), &mut rng);
        let mut r = DVector::zeros(g.n());
        r[0] = 1.0;
        let pr = NprProblem::with_rhs(&g, 0.01, 1e-11, r, 1, 1e-12, 8).unwrap();
        match pr.jacobian(&DVector::zeros(g.n()), 1.6) {
            Err(NprError::SizeExceeded { n, threshold }) => {
                assert_eq!((n, threshold), (12, 8));
            }
            other => panic!("expected SizeExceeded, got {other:?}"),
        }
    }

    #[test]
    fn reduction_keeps_full_column_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let g = random_connected_graph(13, 11, (0.5, 2.0), &mut rng);
        let pr = problem(&g, 0.01, 1e-11, 0);
        let jac = pr.jacobian(&random_vector(g.n(), &mut rng), 1.6).unwrap();
        let (reduced, map) = pr.reduce_full_rank(&jac);
        assert_eq!(reduced.ncols(), g.n() - 1);
        let svals = reduced.svd(false, false).singular_values;
        assert!(svals[svals.len() - 1] > 1e-8 * svals[0]);
        // Round trip through the index map restores the pinned value.
        let reduced_x = map.restrict(&random_vector(g.n(), &mut rng));
        let full = map.embed(&reduced_x, 42.0);
        assert_eq!(full[pr.pinned()], 42.0);
        assert_eq!(map.restrict(&full), reduced_x);
    }

    #[test]
    fn dropping_any_single_column_keeps_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = random_connected_graph(8, 6, (0.5, 2.0), &mut rng);
        let pr = problem(&g, 0.01, 1e-11, 0);
        let jac = pr.jacobian(&random_vector(g.n(), &mut rng), 1.5).unwrap();
        for drop_col in 0..g.n() {
            let map = PinnedIndexMap::new(g.n(), drop_col);
            let mut reduced = DMatrix::zeros(g.n(), g.n() - 1);
            for i in 0..g.n() - 1 {
                reduced.set_column(i, &jac.column(map.full_index(i)));
            }
            let svals = reduced.svd(false, false).singular_values;
            assert!(svals[svals.len() - 1] > 1e-8 * svals[0]);
        }
    }

    fn manufactured(
        g: &Graph,
        p: f64,
        beta: f64,
        seed: u64,
    ) -> (NprProblem<'_>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pinned = 1;
        let mut y = random_vector(g.n(), &mut rng);
        let mean = y.mean();
        y.add_scalar_mut(-mean);
        y[pinned] = 1e-12;
        let probe = NprProblem::with_rhs(
            g,
            beta,
            1e-11,
            DVector::zeros(g.n()),
            pinned,
            1e-12,
            2000,
        )
        .unwrap();
        let r = apply_system(g, beta, &probe.f_nonlinear(&y, p)) / beta;
        let pr = NprProblem::with_rhs(g, beta, 1e-11, r, pinned, 1e-12, 2000).unwrap();
        (pr, y)
    }

    #[test]
    fn lm_recovers_manufactured_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let g = random_connected_graph(20, 15, (0.5, 2.0), &mut rng);
        let (pr, y) = manufactured(&g, 1.8, 0.01, 41);
        let mut x0 = &y + random_vector(g.n(), &mut rng) * 0.1;
        x0[pr.pinned()] = 1e-12;
        let opts = LmOptions {
            grad_tol: 1e-9,
            step_tol: 1e-12,
            max_iters: 100,
            lambda0_factor: 1e-3,
        };
        let sol = pr.lm_solve(&opts, 1.8, &x0).unwrap();
        assert_eq!(sol.trace.status, LmStatus::Converged);
        assert!(sol.psi <= 1e-14, "psi = {}", sol.psi);
        let accepted: Vec<f64> = sol
            .trace
            .iterations
            .iter()
            .filter(|i| i.accepted)
            .map(|i| i.psi)
            .collect();
        for pair in accepted.windows(2) {
            assert!(pair[1] < pair[0]);
        }
        assert_eq!(sol.x[pr.pinned()], 1e-12);
    }

    #[test]
    fn lm_damping_ratios_follow_update_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let g = random_connected_graph(16, 12, (0.5, 2.0), &mut rng);
        let (pr, y) = manufactured(&g, 1.45, 0.01, 47);
        let mut x0 = &y + random_vector(g.n(), &mut rng) * 50.0;
        x0[pr.pinned()] = 1e-12;
        // Near-zero initial damping forces full Gauss-Newton steps from a
        // far start, which is how rejections happen.
        let opts = LmOptions {
            grad_tol: 1e-10,
            step_tol: 1e-13,
            max_iters: 200,
            lambda0_factor: 1e-10,
        };
        let sol = pr.lm_solve(&opts, 1.45, &x0).unwrap();
        let its = &sol.trace.iterations;
        // Each entry records the damping its own trial used, so consecutive
        // ratios expose the update rule: a rejection at least doubles, an
        // acceptance multiplies by the gain polynomial clamped to [1/3, 2).
        for pair in its.windows(2) {
            let ratio = pair[1].lambda / pair[0].lambda;
            if pair[0].accepted {
                assert!(
                    ratio >= 1.0 / 3.0 - 1e-12 && ratio <= 2.0 + 1e-12,
                    "acceptance ratio {ratio}"
                );
            } else {
                assert!(ratio >= 2.0 - 1e-12, "rejection ratio {ratio}");
            }
        }
        assert!(its.iter().any(|i| i.accepted));
        assert!(its.iter().any(|i| !i.accepted), "seed chosen to force rejections");
    }

    #[test]
    fn lm_at_p_two_matches_one_shot_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let g = random_connected_graph(18, 14, (0.5, 2.0), &mut rng);
        let beta = 0.05;
        let pr = problem(&g, beta, 1e-11, 3);
        let w = min_norm_p2_init(&g, beta, pr.rhs(), 2000).unwrap();
        let opts = LmOptions {
            grad_tol: 1e-12,
            step_tol: 1e-14,
            max_iters: 300,
            lambda0_factor: 1e-3,
        };
        let x0 = DVector::zeros(g.n());
        let sol = pr.lm_solve(&opts, 2.0, &x0).unwrap();
        let centered = &sol.x - DVector::from_element(g.n(), sol.x.mean());
        assert_relative_eq!(centered, w, epsilon = 1e-6);
    }

    #[test]
    fn trace_serializes_as_json_lines() {
        let trace = LmTrace {
            iterations: vec![LmIteration {
                iter: 1,
                psi: 0.5,
                grad_norm: 0.1,
                lambda: 1e-3,
                rho: 0.9,
                accepted: true,
            }],
            status: LmStatus::Converged,
        };
        let lines = trace.to_json_lines();
        let value: serde_json::Value = serde_json::from_str(lines.trim()).unwrap();
        assert_eq!(value["iter"], 1);
        assert_eq!(value["accepted"], true);
        assert!(value["psi"].as_f64().unwrap() == 0.5);
    }

    #[test]
    fn continuation_single_stage_equals_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let g = random_connected_graph(15, 12, (0.5, 2.0), &mut rng);
        let mut cfg = NprConfig::new(2);
        cfg.p_schedule = vec![1.95];
        let run = continuation(&g, &cfg).unwrap();
        assert_eq!(run.stages.len(), 1);

        let pr = NprProblem::from_config(&g, &cfg).unwrap();
        let mut x0 = min_norm_p2_init(&g, cfg.beta, pr.rhs(), cfg.dense_threshold).unwrap();
        x0[pr.pinned()] = cfg.fixed_value;
        let direct = pr.lm_solve(&LmOptions::from(&cfg), 1.95, &x0).unwrap();
        assert_eq!(run.stages[0].x, direct.x);
        assert_eq!(run.pinned, pr.pinned());
    }

    #[test]
    fn continuation_walks_the_full_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let g = random_connected_graph(24, 20, (0.5, 2.0), &mut rng);
        let cfg = NprConfig::new(0);
        let run = continuation(&g, &cfg).unwrap();
        assert_eq!(run.stages.len(), DEFAULT_P_SCHEDULE.len());
        for (sol, &p) in run.stages.iter().zip(DEFAULT_P_SCHEDULE.iter()) {
            assert_eq!(sol.p, p);
            assert_eq!(sol.x[run.pinned], cfg.fixed_value);
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let g = Graph::build(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let ok = NprConfig::new(0);
        assert!(ok.validate(&g).is_ok());
        let mut bad = ok.clone();
        bad.beta = 1.0;
        assert!(bad.validate(&g).is_err());
        let mut bad = ok.clone();
        bad.p_schedule = vec![1.6, 1.6];
        assert!(bad.validate(&g).is_err());
        let mut bad = ok.clone();
        bad.p_schedule = vec![2.0];
        assert!(bad.validate(&g).is_err());
        let mut bad = ok.clone();
        bad.seed_vertex = 3;
        assert!(bad.validate(&g).is_err());
        let mut bad = ok;
        bad.zeta = Some(0.0);
        assert!(bad.validate(&g).is_err());
    }

    #[test]
    fn zeta_rule_switches_on_graph_size() {
        let cfg = NprConfig::new(0);
        assert_eq!(cfg.resolved_zeta(9_999), 1e-11);
        assert_eq!(cfg.resolved_zeta(10_000), 1e-6);
        let mut fixed = NprConfig::new(0);
        fixed.zeta = Some(1e-3);
        assert_eq!(fixed.resolved_zeta(10_000), 1e-3);
    }

    #[test]
    fn orientation_flips_change_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let g = random_connected_graph(14, 12, (0.5, 2.0), &mut rng);
        let mut pr = problem(&g, 0.01, 1e-11, 0);
        let x = random_vector(g.n(), &mut rng);
        let f0 = pr.f_nonlinear(&x, 1.6);
        let g0 = pr.residual(&x, 1.6);
        let j0 = pr.jacobian(&x, 1.6).unwrap();
        let flips: Vec<bool> = (0..g.m()).map(|_| rng.gen_bool(0.5)).collect();
        pr.set_edge_flips(flips);
        assert!((pr.f_nonlinear(&x, 1.6) - f0).amax() <= 1e-12);
        assert!((pr.residual(&x, 1.6) - g0).amax() <= 1e-12);
        assert!((pr.jacobian(&x, 1.6).unwrap() - j0).amax() <= 1e-12);
    }
}
