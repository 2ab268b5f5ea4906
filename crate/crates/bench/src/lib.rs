//! Shared fixtures for the benchmark suite.

use rand_chacha::ChaCha8Rng;

use npr_core::testing::random_connected_graph;
use npr_core::Graph;

/// Random connected graph with roughly 3n edges, deterministic per size.
pub fn bench_graph(n: usize) -> Graph {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    random_connected_graph(n, 2 * n, (0.5, 2.0), &mut rng)
}
