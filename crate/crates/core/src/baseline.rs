//! Approximate personalized PageRank by residual pushing, used as the
//! comparison baseline. Non-lazy walk; every push moves an alpha fraction
//! of a vertex's residual into the estimate and spreads the rest over its
//! neighbours.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;

#[derive(Debug, Error, PartialEq)]
pub enum ApprError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Push-method configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApprConfig {
    /// Teleport probability.
    pub alpha: f64,
    /// Push tolerance; `None` resolves to 1e-6 / n.
    pub epsilon: Option<f64>,
    pub seed_vertex: usize,
}

impl ApprConfig {
    pub fn new(seed_vertex: usize) -> Self {
        ApprConfig {
            alpha: 0.85,
            epsilon: None,
            seed_vertex,
        }
    }

    pub fn resolved_epsilon(&self, n: usize) -> f64 {
        self.epsilon.unwrap_or(1e-6 / n as f64)
    }

    fn validate(&self, g: &Graph) -> Result<(), ApprError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ApprError::InvalidConfig(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(ApprError::InvalidConfig(format!(
                    "epsilon must be positive, got {e}"
                )));
            }
        }
        if self.seed_vertex >= g.n() {
            return Err(ApprError::InvalidConfig(format!(
                "seed vertex {} out of range for {} vertices",
                self.seed_vertex,
                g.n()
            )));
        }
        Ok(())
    }
}

/// Sparse outcome of a push run.
#[derive(Debug, Clone)]
pub struct ApprResult {
    /// Nonzero estimate entries, sorted by vertex id.
    pub support: Vec<(usize, f64)>,
    /// Nonzero residual entries, sorted by vertex id.
    pub residual: Vec<(usize, f64)>,
    pub push_count: usize,
    n: usize,
}

impl ApprResult {
    pub fn to_dense(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n);
        for &(v, val) in &self.support {
            x[v] = val;
        }
        x
    }

    pub fn residual_dense(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.n);
        for &(v, val) in &self.residual {
            r[v] = val;
        }
        r
    }

    /// The estimate divided by vertex degree, the vector its sweep orders.
    pub fn degree_normalized(&self, g: &Graph) -> DVector<f64> {
        assert_eq!(g.n(), self.n, "graph size mismatch");
        let mut x = DVector::zeros(self.n);
        for &(v, val) in &self.support {
            x[v] = val / g.degree(v);
        }
        x
    }
}

/// Runs the push method from the configured seed until every residual sits
/// below epsilon times its vertex degree.
///
/// Each push conserves the total mass split between estimate and residual,
/// and removes at least alpha·epsilon·(minimum degree) of residual, so the
/// loop terminates without an iteration cap.
pub fn appr_push(g: &Graph, cfg: &ApprConfig) -> Result<ApprResult, ApprError> {
    cfg.validate(g)?;
    let n = g.n();
    let alpha = cfg.alpha;
    let eps = cfg.resolved_epsilon(n);

    let mut p = vec![0.0f64; n];
    let mut r = vec![0.0f64; n];
    r[cfg.seed_vertex] = 1.0;

    let mut queue = VecDeque::new();
    let mut queued = vec![false; n];
    if r[cfg.seed_vertex] >= eps * g.degree(cfg.seed_vertex) {
        queue.push_back(cfg.seed_vertex);
        queued[cfg.seed_vertex] = true;
    }

    let mut push_count = 0usize;
    while let Some(u) = queue.pop_front() {
        queued[u] = false;
        let ru = r[u];
        let du = g.degree(u);
        if ru < eps * du {
            continue;
        }
        push_count += 1;
        p[u] += alpha * ru;
        r[u] = 0.0;
        for nb in g.neighbors(u) {
            let v = nb.vertex;
            r[v] += (1.0 - alpha) * ru * g.weight(nb.edge) / du;
            if !queued[v] && r[v] >= eps * g.degree(v) {
                queue.push_back(v);
                queued[v] = true;
            }
        }
    }

    let support = (0..n).filter(|&v| p[v] > 0.0).map(|v| (v, p[v])).collect();
    let residual = (0..n).filter(|&v| r[v] > 0.0).map(|v| (v, r[v])).collect();
    Ok(ApprResult {
        support,
        residual,
        push_count,
        n,
    })
}
