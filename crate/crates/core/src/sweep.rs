//! Sweep-cut extraction: order vertices by a score vector, evaluate the
//! conductance of every prefix incrementally, and pick the best prefix.

use nalgebra::DVector;

use crate::graph::{Graph, VertexSet};
use crate::npr::NprSolution;

/// Conductance profile of one sweep.
#[derive(Debug, Clone)]
pub struct SweepProfile {
    /// Vertices in sweep order: score descending, ties by id ascending.
    pub order: Vec<usize>,
    /// phi[j-1] is the conductance of the first j vertices, j = 1..n-1.
    pub phi: Vec<f64>,
    /// Smallest prefix length attaining the minimum conductance.
    pub best_j: usize,
    pub best_phi: f64,
}

impl SweepProfile {
    /// The best prefix as a vertex set.
    pub fn best_set(&self, g: &Graph) -> VertexSet {
        VertexSet::from_members(g, self.order[..self.best_j].iter().copied())
    }

    /// CSV rows `j,vertex_id,phi`, one per prefix.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,vertex_id,phi\n");
        for (i, &phi) in self.phi.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, self.order[i], phi));
        }
        out
    }
}

/// Sweeps `x` over the graph. Each vertex joins the prefix in turn; the cut
/// weight is updated from its incident edges alone, so the whole profile
/// costs one pass over the adjacency.
///
/// Panics if `x` has the wrong length or contains NaN.
pub fn sweep_cut(g: &Graph, x: &DVector<f64>) -> SweepProfile {
    let n = g.n();
    assert_eq!(x.len(), n, "score vector length mismatch");
    assert!(x.iter().all(|v| !v.is_nan()), "scores must be NaN-free");

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));

    let total = g.volume();
    let mut in_set = vec![false; n];
    let mut cut = 0.0;
    let mut vol = 0.0;
    let mut phi = Vec::with_capacity(n - 1);
    for &v in order.iter().take(n - 1) {
        in_set[v] = true;
        vol += g.degree(v);
        for nb in g.neighbors(v) {
            let w = g.weight(nb.edge);
            if in_set[nb.vertex] {
                cut -= w;
            } else {
                cut += w;
            }
        }
        phi.push(cut / vol.min(total - vol));
    }

    let mut best_j = 1;
    let mut best_phi = phi[0];
    for (i, &p) in phi.iter().enumerate().skip(1) {
        if p < best_phi {
            best_phi = p;
            best_j = i + 1;
        }
    }
    SweepProfile {
        order,
        phi,
        best_j,
        best_phi,
    }
}

/// Sweeps every stage of a continuation run and returns the index of the
/// stage whose best prefix has the lowest conductance, together with that
/// stage's profile. Ties keep the earliest stage, i.e. the larger p.
pub fn best_stage_cluster(g: &Graph, stages: &[NprSolution]) -> Option<(usize, SweepProfile)> {
    let mut best: Option<(usize, SweepProfile)> = None;
    for (i, stage) in stages.iter().enumerate() {
        let profile = sweep_cut(g, &stage.x);
        let better = match &best {
            None => true,
            Some((_, b)) => profile.best_phi < b.best_phi,
        };
        if better {
            best = Some((i, profile));
        }
    }
    best
}
