//! Weighted undirected graphs in CSR form, vertex subsets, and conductance.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Errors raised while building or querying a graph.
#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge ({u}, {v}) is a self loop")]
    SelfLoop { u: usize, v: usize },
    #[error("edge ({u}, {v}) appears more than once")]
    DuplicateEdge { u: usize, v: usize },
    #[error("edge ({u}, {v}) has nonpositive weight {w}")]
    NonpositiveWeight { u: usize, v: usize, w: f64 },
    #[error("vertex {v} is out of range for a graph on {n} vertices")]
    VertexOutOfRange { v: usize, n: usize },
    #[error("graph is not connected")]
    DisconnectedGraph,
    #[error("graph must have at least one edge")]
    NoEdges,
    #[error("conductance requires a nonempty proper vertex subset")]
    EmptyOrFullSet,
}

/// Undirected weighted edge, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// One adjacency entry: the neighbour and the index of the connecting edge.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    pub vertex: usize,
    pub edge: usize,
}

/// Simple connected weighted graph.
///
/// Edges are kept sorted lexicographically by `(u, v)` with `u < v`; that
/// order fixes the edge indexing used by the incidence operators. Adjacency
/// is stored CSR-style in both directions so neighbourhood scans are cheap.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    xadj: Vec<usize>,
    adj: Vec<Neighbor>,
    degrees: Vec<f64>,
    volume: f64,
}

impl Graph {
    /// Builds a graph on `n` vertices from an undirected edge list.
    ///
    /// Endpoint order within each input pair is irrelevant. Rejects self
    /// loops, duplicate edges (either orientation), nonpositive weights,
    /// out-of-range endpoints, and disconnected graphs.
    pub fn build(n: usize, input: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if input.is_empty() {
            return Err(GraphError::NoEdges);
        }
        let mut edges = Vec::with_capacity(input.len());
        for &(a, b, w) in input {
            if a >= n {
                return Err(GraphError::VertexOutOfRange { v: a, n });
            }
            if b >= n {
                return Err(GraphError::VertexOutOfRange { v: b, n });
            }
            if a == b {
                return Err(GraphError::SelfLoop { u: a, v: b });
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(GraphError::NonpositiveWeight { u: a, v: b, w });
            }
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            edges.push(Edge { u, v, w });
        }
        edges.sort_by_key(|e| (e.u, e.v));
        for pair in edges.windows(2) {
            if pair[0].u == pair[1].u && pair[0].v == pair[1].v {
                return Err(GraphError::DuplicateEdge {
                    u: pair[0].u,
                    v: pair[0].v,
                });
            }
        }

        let mut counts = vec![0usize; n];
        for e in &edges {
            counts[e.u] += 1;
            counts[e.v] += 1;
        }
        let mut xadj = vec![0usize; n + 1];
        for v in 0..n {
            xadj[v + 1] = xadj[v] + counts[v];
        }
        let mut cursor = xadj.clone();
        let mut adj = vec![Neighbor { vertex: 0, edge: 0 }; 2 * edges.len()];
        for (idx, e) in edges.iter().enumerate() {
            adj[cursor[e.u]] = Neighbor {
                vertex: e.v,
                edge: idx,
            };
            cursor[e.u] += 1;
            adj[cursor[e.v]] = Neighbor {
                vertex: e.u,
                edge: idx,
            };
            cursor[e.v] += 1;
        }

        let mut degrees = vec![0.0f64; n];
        for e in &edges {
            degrees[e.u] += e.w;
            degrees[e.v] += e.w;
        }
        let volume = degrees.iter().sum();

        let g = Graph {
            n,
            edges,
            xadj,
            adj,
            degrees,
            volume,
        };
        if !g.is_connected() {
            return Err(GraphError::DisconnectedGraph);
        }
        Ok(g)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut visited = 1usize;
        while let Some(v) = stack.pop() {
            for nb in self.neighbors(v) {
                if !seen[nb.vertex] {
                    seen[nb.vertex] = true;
                    visited += 1;
                    stack.push(nb.vertex);
                }
            }
        }
        visited == self.n
    }

    /// Number of vertices.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of edges.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Edges sorted lexicographically; the slice index is the edge index.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Weight of edge `e`.
    pub fn weight(&self, e: usize) -> f64 {
        self.edges[e].w
    }

    /// Weighted degree of `v`: the sum of incident edge weights.
    pub fn degree(&self, v: usize) -> f64 {
        self.degrees[v]
    }

    /// All weighted degrees.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Sum of all weighted degrees, i.e. twice the total edge weight.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Adjacency entries of `v`.
    pub fn neighbors(&self, v: usize) -> &[Neighbor] {
        &self.adj[self.xadj[v]..self.xadj[v + 1]]
    }
}

/// Vertex subset stored as a bitset, with the weighted volume cached.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    bits: Vec<u64>,
    n: usize,
    len: usize,
    vol: f64,
}

impl VertexSet {
    /// Empty subset of a graph on `n` vertices.
    pub fn new(n: usize) -> Self {
        VertexSet {
            bits: vec![0u64; n.div_ceil(64)],
            n,
            len: 0,
            vol: 0.0,
        }
    }

    /// Builds a subset from member vertices, caching the volume from `g`.
    pub fn from_members<I: IntoIterator<Item = usize>>(g: &Graph, members: I) -> Self {
        let mut s = VertexSet::new(g.n());
        for v in members {
            s.insert(g, v);
        }
        s
    }

    /// Inserts `v`, updating the cached volume. No-op when already present.
    pub fn insert(&mut self, g: &Graph, v: usize) {
        assert!(v < self.n, "vertex {v} out of range");
        let (blk, bit) = (v / 64, 1u64 << (v % 64));
        if self.bits[blk] & bit == 0 {
            self.bits[blk] |= bit;
            self.len += 1;
            self.vol += g.degree(v);
        }
    }

    /// Removes `v`, updating the cached volume. No-op when absent.
    pub fn remove(&mut self, g: &Graph, v: usize) {
        assert!(v < self.n, "vertex {v} out of range");
        let (blk, bit) = (v / 64, 1u64 << (v % 64));
        if self.bits[blk] & bit != 0 {
            self.bits[blk] &= !bit;
            self.len -= 1;
            self.vol -= g.degree(v);
        }
    }

    /// Membership test.
    pub fn contains(&self, v: usize) -> bool {
        self.bits[v / 64] & (1u64 << (v % 64)) != 0
    }

    /// Number of members.
    pub fn len(&self) -> usize {
        self.len
    }

    /// True when no vertex is a member.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Cached weighted volume: the sum of member degrees.
    pub fn vol(&self) -> f64 {
        self.vol
    }

    /// Complement subset with its own cached volume.
    pub fn complement(&self, g: &Graph) -> VertexSet {
        let mut c = VertexSet::new(self.n);
        for v in 0..self.n {
            if !self.contains(v) {
                c.insert(g, v);
            }
        }
        c
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let bits = &self.bits;
        (0..self.n).filter(move |&v| bits[v / 64] & (1u64 << (v % 64)) != 0)
    }
}

/// Total weight of edges crossing from `s` to its complement.
pub fn boundary_weight(g: &Graph, s: &VertexSet) -> f64 {
    let mut cut = 0.0;
    for v in s.iter() {
        for nb in g.neighbors(v) {
            if !s.contains(nb.vertex) {
                cut += g.weight(nb.edge);
            }
        }
    }
    cut
}

/// Conductance of a nonempty proper subset: boundary weight over the smaller
/// of vol(S) and vol of the complement.
pub fn conductance(g: &Graph, s: &VertexSet) -> Result<f64, GraphError> {
    if s.is_empty() || s.len() == g.n() {
        return Err(GraphError::EmptyOrFullSet);
    }
    let denom = s.vol().min(g.volume() - s.vol());
    Ok(boundary_weight(g, s) / denom)
}

/// Edge length rule for shortest-path distances.
///
/// Inverse weight is the default: strongly tied vertices are close, so the
/// furthest vertex sits where the diffusion decays most.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeLength {
    #[default]
    InverseWeight,
    Weight,
}

impl EdgeLength {
    fn of(&self, w: f64) -> f64 {
        match self {
            EdgeLength::InverseWeight => 1.0 / w,
            EdgeLength::Weight => w,
        }
    }
}

/// Shortest-path distances from `s` under the given edge length rule.
pub fn shortest_distances(g: &Graph, s: usize, lengths: EdgeLength) -> Vec<f64> {
    assert!(s < g.n(), "source {s} out of range");
    let mut dist = vec![f64::INFINITY; g.n()];
    dist[s] = 0.0;
    // Non-negative finite distances compare correctly through their bit patterns.
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0.0f64.to_bits(), s)));
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[v] {
            continue;
        }
        for nb in g.neighbors(v) {
            let cand = d + lengths.of(g.weight(nb.edge));
            if cand < dist[nb.vertex] {
                dist[nb.vertex] = cand;
                heap.push(Reverse((cand.to_bits(), nb.vertex)));
            }
        }
    }
    dist
}

/// Vertex at maximal shortest-path distance from `s`; ties break to the
/// smallest id.
pub fn furthest_vertex(g: &Graph, s: usize, lengths: EdgeLength) -> usize {
    let dist = shortest_distances(g, s, lengths);
    let mut best = 0usize;
    for v in 1..g.n() {
        if dist[v] > dist[best] {
            best = v;
        }
    }
    best
}
