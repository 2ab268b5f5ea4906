//! Matrix-free incidence and diffusion-system operators, and the incidence
//! pseudoinverse applied through grounded Laplacian solves.

use nalgebra::DVector;
use sprs::{FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};
use thiserror::Error;

use crate::dense;
use crate::graph::Graph;

/// Errors from the pseudoinverse and least-squares paths.
#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("grounded laplacian factorization failed: {0}")]
    Factorization(String),
    #[error("least-squares iteration stalled at relative residual {residual:.3e} (tolerance {tol:.3e})")]
    LeastSquaresStall { residual: f64, tol: f64 },
}

/// Relative residual tolerance of the iterative least-squares path.
pub const LSQ_TOL: f64 = 1e-10;

/// Signed incidence operator. Each edge row carries -1 at its smaller
/// endpoint and +1 at its larger one; `flips` optionally negates rows, which
/// must leave every composite quantity unchanged.
#[derive(Debug, Clone)]
pub struct IncidenceOp<'g> {
    g: &'g Graph,
    flips: Option<Vec<bool>>,
}

impl<'g> IncidenceOp<'g> {
    /// Standard orientation.
    pub fn new(g: &'g Graph) -> Self {
        IncidenceOp { g, flips: None }
    }

    /// Orientation with the rows at `flips[e] == true` negated.
    pub fn with_flips(g: &'g Graph, flips: Vec<bool>) -> Self {
        assert_eq!(flips.len(), g.m(), "one flip flag per edge");
        IncidenceOp {
            g,
            flips: Some(flips),
        }
    }

    fn sign(&self, e: usize) -> f64 {
        match &self.flips {
            Some(f) if f[e] => -1.0,
            _ => 1.0,
        }
    }

    /// Applies B: edge differences of a vertex vector.
    ///
    /// Panics when `x` does not have one entry per vertex.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.g.n(), "vertex vector length mismatch");
        DVector::from_iterator(
            self.g.m(),
            self.g
                .edges()
                .iter()
                .enumerate()
                .map(|(e, edge)| self.sign(e) * (x[edge.v] - x[edge.u])),
        )
    }

    /// Applies the transpose: accumulates signed edge values onto endpoints.
    ///
    /// Panics when `z` does not have one entry per edge.
    pub fn apply_transpose(&self, z: &DVector<f64>) -> DVector<f64> {
        assert_eq!(z.len(), self.g.m(), "edge vector length mismatch");
        let mut y = DVector::zeros(self.g.n());
        for (e, edge) in self.g.edges().iter().enumerate() {
            let s = self.sign(e) * z[e];
            y[edge.u] -= s;
            y[edge.v] += s;
        }
        y
    }

    /// Applies the Moore-Penrose inverse of B: the mean-zero solution y of
    /// BᵀB y = Bᵀw, obtained from one grounded Laplacian solve.
    pub fn pinv_apply(&self, solver: &LaplacianSolver, w: &DVector<f64>) -> DVector<f64> {
        solver.solve_mean_zero(&self.apply_transpose(w))
    }
}

/// Factorization of the unweighted Laplacian BᵀB grounded at vertex 0.
///
/// Grounding deletes row and column 0; re-centering the padded solution makes
/// the choice of grounded vertex unobservable. Solves are reentrant, so one
/// factorization serves concurrent callers.
pub struct LaplacianSolver {
    n: usize,
    factor: Factor,
}

enum Factor {
    // A two-vertex graph grounds to a 1x1 system, below what the sparse
    // factorization accepts.
    Scalar(f64),
    Ldl(LdlNumeric<f64, usize>),
}

impl LaplacianSolver {
    /// Factors the grounded unweighted Laplacian of `g`.
    pub fn new(g: &Graph) -> Result<Self, OperatorError> {
        let n = g.n();
        if n == 2 {
            return Ok(LaplacianSolver {
                n,
                factor: Factor::Scalar(g.neighbors(1).len() as f64),
            });
        }
        let mut tri = TriMat::new((n - 1, n - 1));
        for v in 1..n {
            tri.add_triplet(v - 1, v - 1, g.neighbors(v).len() as f64);
        }
        for e in g.edges() {
            if e.u > 0 {
                tri.add_triplet(e.u - 1, e.v - 1, -1.0);
                tri.add_triplet(e.v - 1, e.u - 1, -1.0);
            }
        }
        let mat = tri.to_csc::<usize>();
        let factor = Ldl::new()
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .numeric(mat.view())
            .map_err(|e| OperatorError::Factorization(e.to_string()))?;
        Ok(LaplacianSolver {
            n,
            factor: Factor::Ldl(factor),
        })
    }

    /// Mean-zero solution of BᵀB y = rhs. Exact (up to the factorization)
    /// whenever rhs sums to zero, which holds for every rhs of the form Bᵀw.
    pub fn solve_mean_zero(&self, rhs: &DVector<f64>) -> DVector<f64> {
        assert_eq!(rhs.len(), self.n, "rhs length mismatch");
        let mut y = DVector::zeros(self.n);
        match &self.factor {
            Factor::Scalar(d) => y[1] = rhs[1] / d,
            Factor::Ldl(factor) => {
                let reduced: Vec<f64> = rhs.iter().skip(1).copied().collect();
                let sol = factor.solve(&reduced);
                y.rows_mut(1, self.n - 1).copy_from_slice(&sol);
            }
        }
        let mean = y.mean();
        y.add_scalar_mut(-mean);
        y
    }
}

/// Applies the diffusion system operator:
/// (Tx)(v) = (β d(v) + 1) x(v) − (1/d(v)) Σ w(u,v) x(u).
///
/// Panics when `x` does not have one entry per vertex.
pub fn apply_system(g: &Graph, beta: f64, x: &DVector<f64>) -> DVector<f64> {
    assert_eq!(x.len(), g.n(), "vertex vector length mismatch");
    let mut y = DVector::zeros(g.n());
    for v in 0..g.n() {
        let mut acc = 0.0;
        for nb in g.neighbors(v) {
            acc += g.weight(nb.edge) * x[nb.vertex];
        }
        y[v] = (beta * g.degree(v) + 1.0) * x[v] - acc / g.degree(v);
    }
    y
}

/// Applies the transpose of the system operator: Tᵀy = βDy + L(D⁻¹y).
pub fn apply_system_transpose(g: &Graph, beta: f64, y: &DVector<f64>) -> DVector<f64> {
    assert_eq!(y.len(), g.n(), "vertex vector length mismatch");
    let mut out = DVector::zeros(g.n());
    for v in 0..g.n() {
        let mut acc = 0.0;
        for nb in g.neighbors(v) {
            acc += g.weight(nb.edge) * y[nb.vertex] / g.degree(nb.vertex);
        }
        out[v] = beta * g.degree(v) * y[v] + y[v] - acc;
    }
    out
}

fn project_mean_zero(v: &mut DVector<f64>) {
    let mean = v.mean();
    v.add_scalar_mut(-mean);
}

/// Initial iterate for the continuation: the q-orthogonal minimiser of
/// ‖Tu − βr‖₂, which equals the minimum-norm least-squares solution of the
/// diffusion problem in its p = 2 form.
///
/// Uses a dense SVD pseudoinverse up to `dense_threshold` vertices and a
/// projected conjugate-gradient least-squares iteration above it.
pub fn min_norm_p2_init(
    g: &Graph,
    beta: f64,
    r: &DVector<f64>,
    dense_threshold: usize,
) -> Result<DVector<f64>, OperatorError> {
    assert_eq!(r.len(), g.n(), "rhs length mismatch");
    let n = g.n();
    if n <= dense_threshold {
        let t = dense::system_matrix(g, beta);
        let tq = &t * DVector::from_element(n, 1.0);
        // Y = T(I − Q/n) = T − (Tq)qᵀ/n, rank n−1.
        let mut y = t;
        for i in 0..n {
            let shift = tq[i] / n as f64;
            for j in 0..n {
                y[(i, j)] -= shift;
            }
        }
        let pinv = dense::pinv(&y, 1e-12);
        Ok(pinv * (beta * r))
    } else {
        min_norm_cgls(g, beta, r)
    }
}

/// Conjugate gradients on the q-orthogonally projected normal equations
/// P TᵀT P u = P Tᵀ(βr). The operator is positive definite on the mean-zero
/// subspace and every iterate stays inside it.
fn min_norm_cgls(g: &Graph, beta: f64, r: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
    let n = g.n();
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let mut pv = v.clone();
        project_mean_zero(&mut pv);
        let mut out = apply_system_transpose(g, beta, &apply_system(g, beta, &pv));
        project_mean_zero(&mut out);
        out
    };
    let mut b = apply_system_transpose(g, beta, &(r * beta));
    project_mean_zero(&mut b);
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut res = b.clone();
    let mut dir = res.clone();
    let mut res_sq = res.norm_squared();
    let max_iters = 40 * n;
    for _ in 0..max_iters {
        if res_sq.sqrt() <= LSQ_TOL * b_norm {
            return Ok(x);
        }
        let a_dir = apply(&dir);
        let alpha = res_sq / dir.dot(&a_dir);
        x.axpy(alpha, &dir, 1.0);
        res.axpy(-alpha, &a_dir, 1.0);
        let next_sq = res.norm_squared();
        dir = &res + &dir * (next_sq / res_sq);
        res_sq = next_sq;
    }
    if res_sq.sqrt() <= LSQ_TOL * b_norm {
        Ok(x)
    } else {
        Err(OperatorError::LeastSquaresStall {
            residual: res_sq.sqrt() / b_norm,
            tol: LSQ_TOL,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{random_connected_graph, random_vector};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_edge() -> Graph {
        Graph::build(2, &[(0, 1, 1.0)]).unwrap()
    }

    fn path3() -> Graph {
        Graph::build(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn unit_triangle() -> Graph {
        Graph::build(3, &[(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn incidence_on_single_edge() {
        let g = single_edge();
        let b = IncidenceOp::new(&g);
        let z = b.apply(&DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(z, DVector::from_vec(vec![1.0]));
        let y = b.apply_transpose(&DVector::from_vec(vec![1.0]));
        assert_eq!(y, DVector::from_vec(vec![-1.0, 1.0]));
    }

    #[test]
    fn incidence_kills_constants() {
        let g = unit_triangle();
        let b = IncidenceOp::new(&g);
        let z = b.apply(&DVector::from_element(3, 4.2));
        assert_eq!(z.amax(), 0.0);
    }

    #[test]
    fn incidence_on_path_by_hand() {
        let g = path3();
        let b = IncidenceOp::new(&g);
        let z = b.apply(&DVector::from_vec(vec![0.0, 2.0, 5.0]));
        assert_eq!(z, DVector::from_vec(vec![2.0, 3.0]));
        let y = b.apply_transpose(&DVector::from_element(2, 1.0));
        assert_eq!(y, DVector::from_vec(vec![-1.0, 0.0, 1.0]));
    }

    #[test]
    fn transpose_matches_unit_laplacian_on_triangle() {
        let g = unit_triangle();
        let b = IncidenceOp::new(&g);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let btz = b.apply_transpose(&b.apply(&x));
        let l = dense::unweighted_laplacian(&g);
        assert_relative_eq!(btz, &l * &x, epsilon = 1e-14);
    }

    #[test]
    fn flipped_rows_negate_edge_values() {
        let g = path3();
        let plain = IncidenceOp::new(&g);
        let flipped = IncidenceOp::with_flips(&g, vec![true, false]);
        let x = DVector::from_vec(vec![1.0, 4.0, 9.0]);
        let z0 = plain.apply(&x);
        let z1 = flipped.apply(&x);
        assert_eq!(z1[0], -z0[0]);
        assert_eq!(z1[1], z0[1]);
        // Bᵀ undoes the flip: the Gram action is orientation-free.
        assert_eq!(plain.apply_transpose(&z0), flipped.apply_transpose(&z1));
    }

    #[test]
    fn pinv_on_single_edge_by_hand() {
        let g = single_edge();
        let b = IncidenceOp::new(&g);
        let solver = LaplacianSolver::new(&g).unwrap();
        let y = b.pinv_apply(&solver, &DVector::from_vec(vec![1.0]));
        assert_relative_eq!(y, DVector::from_vec(vec![-0.5, 0.5]), epsilon = 1e-14);
    }

    #[test]
    fn pinv_of_incidence_image_recenters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let g = random_connected_graph(17, 12, (0.5, 2.0), &mut rng);
            let b = IncidenceOp::new(&g);
            let solver = LaplacianSolver::new(&g).unwrap();
            let x = random_vector(g.n(), &mut rng);
            let y = b.pinv_apply(&solver, &b.apply(&x));
            let centered = &x - DVector::from_element(g.n(), x.mean());
            assert_relative_eq!(y, centered, epsilon = 1e-10);
        }
    }

    #[test]
    fn pinv_annihilates_cycle_vectors() {
        let g = unit_triangle();
        let b = IncidenceOp::new(&g);
        // Signed cycle around the triangle under the fixed orientation.
        let w = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        assert_eq!(b.apply_transpose(&w).amax(), 0.0);
        let solver = LaplacianSolver::new(&g).unwrap();
        assert!(b.pinv_apply(&solver, &w).amax() <= 1e-14);
    }

    #[test]
    fn grounded_solve_matches_dense_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let g = random_connected_graph(20, 15, (0.5, 2.0), &mut rng);
            let solver = LaplacianSolver::new(&g).unwrap();
            let mut rhs = random_vector(g.n(), &mut rng);
            project_mean_zero(&mut rhs);
            let y = solver.solve_mean_zero(&rhs);
            let l = dense::unweighted_laplacian(&g);
            assert_relative_eq!(&l * &y, rhs, epsilon = 1e-9);
            assert!(y.mean().abs() <= 1e-12);
        }
    }

    #[test]
    fn system_operator_on_unit_triangle() {
        let g = unit_triangle();
        let y = apply_system(&g, 0.5, &DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_relative_eq!(y, DVector::from_vec(vec![2.0, -0.5, -0.5]), epsilon = 1e-15);
    }

    #[test]
    fn system_operator_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let g = random_connected_graph(15, 10, (0.5, 2.0), &mut rng);
            let t = dense::system_matrix(&g, 0.01);
            let x = random_vector(g.n(), &mut rng);
            assert_relative_eq!(apply_system(&g, 0.01, &x), &t * &x, epsilon = 1e-12);
            let y = random_vector(g.n(), &mut rng);
            assert_relative_eq!(
                apply_system_transpose(&g, 0.01, &y),
                t.transpose() * &y,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn system_rows_strictly_diagonally_dominant() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for beta in [0.001, 0.3, 0.99] {
            let g = random_connected_graph(18, 14, (0.2, 3.0), &mut rng);
            let t = dense::system_matrix(&g, beta);
            for i in 0..g.n() {
                let off: f64 = (0..g.n())
                    .filter(|&j| j != i)
                    .map(|j| t[(i, j)].abs())
                    .sum();
                assert!(t[(i, i)].abs() > off);
            }
        }
    }

    #[test]
    fn linear_solution_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let g = random_connected_graph(25, 20, (0.5, 1.5), &mut rng);
            let t = dense::system_matrix(&g, 0.05);
            let mut r = DVector::zeros(g.n());
            r[3] = 1.0;
            let x = dense::lu_solve(&t, &(r * 0.05)).unwrap();
            assert!(x.min() >= 0.0);
        }
    }

    #[test]
    fn min_norm_init_is_mean_zero_and_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let g = random_connected_graph(20, 18, (0.5, 2.0), &mut rng);
        let beta = 0.01;
        let mut r = DVector::zeros(g.n());
        r[2] = 1.0;
        let u = min_norm_p2_init(&g, beta, &r, 2000).unwrap();
        assert!(u.sum().abs() <= 1e-9);
        let base = (apply_system(&g, beta, &u) - &r * beta).norm();
        for _ in 0..20 {
            let mut delta = random_vector(g.n(), &mut rng);
            project_mean_zero(&mut delta);
            delta *= 1e-3 / delta.norm();
            let probe = (apply_system(&g, beta, &(&u + delta)) - &r * beta).norm();
            assert!(probe >= base - 1e-12);
        }
    }

    #[test]
    fn iterative_least_squares_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let g = random_connected_graph(40, 30, (0.5, 2.0), &mut rng);
        let mut r = DVector::zeros(g.n());
        r[7] = 1.0;
        let dense_u = min_norm_p2_init(&g, 0.01, &r, 2000).unwrap();
        let iter_u = min_norm_p2_init(&g, 0.01, &r, 0).unwrap();
        assert_relative_eq!(dense_u, iter_u, epsilon = 1e-6);
    }
}
