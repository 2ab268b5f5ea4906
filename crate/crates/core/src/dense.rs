//! Dense reference assemblies of the graph matrices.
//!
//! These build the incidence, Laplacian, and diffusion system matrices
//! entry by entry from the edge list. The solver modules never call them on
//! large graphs; they exist as an independent route for validation and for
//! the dense pseudoinverse paths.

use nalgebra::{DMatrix, DVector};

use crate::graph::Graph;

/// Signed incidence matrix, one row per edge: -1 at the smaller endpoint,
/// +1 at the larger.
pub fn incidence(g: &Graph) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(g.m(), g.n());
    for (i, e) in g.edges().iter().enumerate() {
        b[(i, e.u)] = -1.0;
        b[(i, e.v)] = 1.0;
    }
    b
}

/// Weighted adjacency matrix.
pub fn adjacency(g: &Graph) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(g.n(), g.n());
    for e in g.edges() {
        a[(e.u, e.v)] = e.w;
        a[(e.v, e.u)] = e.w;
    }
    a
}

/// Weighted Laplacian D - A.
pub fn laplacian(g: &Graph) -> DMatrix<f64> {
    let mut l = -adjacency(g);
    for v in 0..g.n() {
        l[(v, v)] = g.degree(v);
    }
    l
}

/// Unweighted Laplacian: diagonal holds neighbour counts, off-diagonal -1
/// per edge. Equals the incidence Gram matrix regardless of edge weights.
pub fn unweighted_laplacian(g: &Graph) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(g.n(), g.n());
    for e in g.edges() {
        l[(e.u, e.v)] = -1.0;
        l[(e.v, e.u)] = -1.0;
        l[(e.u, e.u)] += 1.0;
        l[(e.v, e.v)] += 1.0;
    }
    l
}

/// Diffusion system matrix beta*D + D^{-1}(D - A). Strictly diagonally
/// dominant for beta > 0, so it is invertible.
pub fn system_matrix(g: &Graph, beta: f64) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(g.n(), g.n());
    for v in 0..g.n() {
        t[(v, v)] = beta * g.degree(v) + 1.0;
    }
    for e in g.edges() {
        t[(e.u, e.v)] = -e.w / g.degree(e.u);
        t[(e.v, e.u)] = -e.w / g.degree(e.v);
    }
    t
}

/// Moore-Penrose pseudoinverse via SVD, with singular values below
/// `rank_tol` (relative to the largest) treated as zero.
pub fn pinv(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    svd.pseudo_inverse(rank_tol * max_sv)
        .expect("svd requested with both factors")
}

/// Solves the square dense system `a * x = rhs` by LU with partial pivoting.
pub fn lu_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(rhs)
}
