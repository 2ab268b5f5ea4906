//! Deterministic random fixtures shared by tests and benchmarks.

use nalgebra::DVector;
use rand::prelude::*;
use rand_distr::StandardNormal;

use crate::graph::Graph;

/// Random connected graph: a random spanning tree plus `extra_edges` distinct
/// chords, weights uniform in `weights`. Deterministic given the rng state.
pub fn random_connected_graph<R: Rng>(
    n: usize,
    extra_edges: usize,
    weights: (f64, f64),
    rng: &mut R,
) -> Graph {
    assert!(n >= 2, "need at least two vertices");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut present = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for i in 1..n {
        let a = order[i];
        let b = order[rng.gen_range(0..i)];
        let key = (a.min(b), a.max(b));
        present.insert(key);
        edges.push((key.0, key.1, rng_range(weights, rng)));
    }
    let max_extra = n * (n - 1) / 2 - (n - 1);
    let mut remaining = extra_edges.min(max_extra);
    while remaining > 0 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if present.insert(key) {
            edges.push((key.0, key.1, rng_range(weights, rng)));
            remaining -= 1;
        }
    }
    Graph::build(n, &edges).expect("spanning tree construction is connected")
}

fn rng_range<R: Rng>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Standard normal vector of length `n`.
pub fn random_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)))
}
