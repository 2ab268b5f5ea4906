//! Dataset builders and file ingestion: Gaussian groupings in the plane,
//! kNN similarity graphs from point clouds, cost-weighted graphs from
//! directed travel tables, and the plain-text loaders behind the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cost table is empty")]
    EmptyTable,
    #[error("cost for ({u},{v}) must be positive, got {cost}")]
    NonpositiveCost { u: usize, v: usize, cost: f64 },
    #[error("k = {k} must be at least 1 and smaller than the point count {count}")]
    InvalidK { k: usize, count: usize },
    #[error("point cloud has {points} points but {labels} labels")]
    LabelCountMismatch { points: usize, labels: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Points of uniform dimension with optional integer ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self, DataError> {
        if let Some(first) = points.first() {
            let d = first.len();
            for (i, p) in points.iter().enumerate() {
                if p.len() != d {
                    return Err(DataError::DimensionMismatch {
                        index: i,
                        got: p.len(),
                        expected: d,
                    });
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(DataError::LabelCountMismatch {
                    points: points.len(),
                    labels: l.len(),
                });
            }
        }
        Ok(PointCloud { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self, DataError> {
        if labels.len() != self.points.len() {
            return Err(DataError::LabelCountMismatch {
                points: self.points.len(),
                labels: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

/// Directed cost records (u, v, cost); possibly asymmetric, at most a
/// handful of records per ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    records: Vec<(usize, usize, f64)>,
}

impl CostTable {
    pub fn new(records: Vec<(usize, usize, f64)>) -> Result<Self, DataError> {
        for &(u, v, cost) in &records {
            if !(cost > 0.0) {
                return Err(DataError::NonpositiveCost { u, v, cost });
            }
        }
        Ok(CostTable { records })
    }

    pub fn records(&self) -> &[(usize, usize, f64)] {
        &self.records
    }
}

/// Which side's cost scale enters the kernel weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IotaMode {
    /// Evaluate the kernel with each endpoint's own scale and average the
    /// two values; keeps the weight symmetric.
    #[default]
    SideAveraged,
    /// Use the larger of the two endpoint scales in a single kernel.
    SymmetricMax,
}

/// Samples `per_group` points around each of `g_count` centres laid out on
/// a square grid, row by row. Labels are the group index. Deterministic in
/// `rng_seed`.
pub fn gen_gaussian_groupings(
    g_count: usize,
    per_group: usize,
    variance: f64,
    grid_spacing: f64,
    rng_seed: u64,
) -> PointCloud {
    assert!(g_count >= 1, "need at least one group");
    assert!(per_group >= 1, "need at least one point per group");
    assert!(variance > 0.0, "variance must be positive");
    let side = (g_count as f64).sqrt().ceil() as usize;
    let noise = Normal::new(0.0, variance.sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut points = Vec::with_capacity(g_count * per_group);
    let mut labels = Vec::with_capacity(g_count * per_group);
    for group in 0..g_count {
        let cx = grid_spacing * (group % side) as f64;
        let cy = grid_spacing * (group / side) as f64;
        for _ in 0..per_group {
            points.push(vec![cx + noise.sample(&mut rng), cy + noise.sample(&mut rng)]);
            labels.push(group);
        }
    }
    PointCloud {
        points,
        labels: Some(labels),
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds the union-symmetrized kNN graph. Edge weight is
/// exp(−4‖y(u)−y(v)‖² / ν²) with ν the larger of the two endpoints'
/// distances to their own k-th nearest neighbour, floored at 1e-12 so
/// coincident duplicates give weight 1 instead of NaN.
///
/// If the union graph is disconnected, the largest component is kept; the
/// second return value maps new vertex ids to original point indices (the
/// identity when nothing was dropped).
pub fn build_knn_graph(pc: &PointCloud, k: usize) -> Result<(Graph, Vec<usize>), DataError> {
    let n = pc.len();
    if k == 0 || k >= n {
        return Err(DataError::InvalidK { k, count: n });
    }

    // Brute-force neighbour lists; ties broken by point index.
    let lists: Vec<(Vec<usize>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist_sq(pc.point(i), pc.point(j)), j))
                .collect();
            cand.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            let nearest: Vec<usize> = cand[..k].iter().map(|&(_, j)| j).collect();
            (nearest, cand[k - 1].0.sqrt())
        })
        .collect();

    let mut pairs: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    for (i, (nearest, _)) in lists.iter().enumerate() {
        for &j in nearest {
            pairs.insert((i.min(j), i.max(j)), ());
        }
    }

    // Any kNN edge satisfies d ≤ ν, so the exponent is at least −4 and the
    // weight at least e⁻⁴; validation can never see a zero weight.
    let edges: Vec<(usize, usize, f64)> = pairs
        .keys()
        .map(|&(u, v)| {
            let nu = lists[u].1.max(lists[v].1).max(1e-12);
            let w = (-4.0 * dist_sq(pc.point(u), pc.point(v)) / (nu * nu)).exp();
            (u, v, w)
        })
        .collect();

    keep_largest_component(n, edges)
}

/// Builds the cost-kernel graph: per-pair cost is the mean of its directed
/// records, each vertex's scale is the mean cost over its incident pairs,
/// and the weight is exp(−2χ²/ι²) combined across the two endpoints per
/// `mode`.
///
/// Largest component kept as in `build_knn_graph`; vertices without any
/// record never enter the graph.
pub fn build_cost_graph(
    table: &CostTable,
    mode: IotaMode,
) -> Result<(Graph, Vec<usize>), DataError> {
    if table.records().is_empty() {
        return Err(DataError::EmptyTable);
    }
    let n = table
        .records()
        .iter()
        .map(|&(u, v, _)| u.max(v))
        .max()
        .unwrap()
        + 1;

    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for &(u, v, cost) in table.records() {
        let key = (u.min(v), u.max(v));
        let e = acc.entry(key).or_insert((0.0, 0));
        e.0 += cost;
        e.1 += 1;
    }
    let chi: BTreeMap<(usize, usize), f64> = acc
        .into_iter()
        .map(|(k, (sum, cnt))| (k, sum / cnt as f64))
        .collect();

    let mut iota_sum = vec![0.0f64; n];
    let mut iota_cnt = vec![0usize; n];
    for (&(u, v), &c) in &chi {
        iota_sum[u] += c;
        iota_cnt[u] += 1;
        iota_sum[v] += c;
        iota_cnt[v] += 1;
    }
    let iota: Vec<f64> = (0..n)
        .map(|v| {
            if iota_cnt[v] == 0 {
                0.0
            } else {
                iota_sum[v] / iota_cnt[v] as f64
            }
        })
        .collect();

    let kernel = |c: f64, scale: f64| (-2.0 * c * c / (scale * scale)).exp();
    let edges: Vec<(usize, usize, f64)> = chi
        .iter()
        .map(|(&(u, v), &c)| {
            let w = match mode {
                IotaMode::SideAveraged => 0.5 * (kernel(c, iota[u]) + kernel(c, iota[v])),
                IotaMode::SymmetricMax => kernel(c, iota[u].max(iota[v])),
            };
            (u, v, w)
        })
        .collect();

    keep_largest_component(n, edges)
}

/// Keeps the largest connected component of the edge set (ties to the
/// component holding the smallest vertex id), remaps vertices to
/// 0..kept_len, and builds the graph. Returns the new-to-old index map.
fn keep_largest_component(
    n: usize,
    edges: Vec<(usize, usize, f64)>,
) -> Result<(Graph, Vec<usize>), DataError> {
    if edges.is_empty() {
        return Err(DataError::Graph(GraphError::NoEdges));
    }
    let mut adj = vec![Vec::new(); n];
    for &(u, v, _) in &edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX || adj[start].is_empty() {
            continue;
        }
        let id = sizes.len();
        let mut size = 0usize;
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(v) = stack.pop() {
            size += 1;
            for &u in &adj[v] {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    stack.push(u);
                }
            }
        }
        sizes.push(size);
    }
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();

    let kept: Vec<usize> = (0..n).filter(|&v| comp[v] == best).collect();
    let mut new_id = vec![usize::MAX; n];
    for (new, &old) in kept.iter().enumerate() {
        new_id[old] = new;
    }
    let remapped: Vec<(usize, usize, f64)> = edges
        .iter()
        .filter(|&&(u, _, _)| comp[u] == best)
        .map(|&(u, v, w)| (new_id[u], new_id[v], w))
        .collect();
    let g = Graph::build(kept.len(), &remapped)?;
    Ok((g, kept))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads a tab-separated edge list: `u<TAB>v<TAB>w` per line, zero-based
/// ids, blank lines and `#` comments skipped. Vertex count is the largest
/// id plus one.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| parse_err(path, line_no, format!("missing {name} field")))
        };
        let u: usize = field("u")?
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad vertex id: {e}")))?;
        let v: usize = field("v")?
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad vertex id: {e}")))?;
        let w: f64 = field("w")?
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad weight: {e}")))?;
        if parts.next().is_some() {
            return Err(parse_err(path, line_no, "trailing fields after weight"));
        }
        edges.push((u, v, w));
    }
    if edges.is_empty() {
        return Err(DataError::Graph(GraphError::NoEdges));
    }
    let n = edges.iter().map(|&(u, v, _)| u.max(v)).max().unwrap() + 1;
    Ok(Graph::build(n, &edges)?)
}

/// Writes the edge list in the format `load_edge_list` reads. Weights use
/// the shortest round-trip decimal form, so load-after-write is identical.
pub fn write_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::new();
    for e in g.edges() {
        out.push_str(&format!("{}\t{}\t{}\n", e.u, e.v, e.w));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads points: one row per point, comma-separated reals.
pub fn load_points(path: impl AsRef<Path>) -> Result<PointCloud, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut expected_dim = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut coords = Vec::new();
        for piece in line.split(',') {
            let v: f64 = piece
                .trim()
                .parse()
                .map_err(|e| parse_err(path, line_no, format!("bad coordinate: {e}")))?;
            coords.push(v);
        }
        if let Some(d) = expected_dim {
            if coords.len() != d {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("point has {} coordinates, expected {d}", coords.len()),
                ));
            }
        } else {
            expected_dim = Some(coords.len());
        }
        points.push(coords);
    }
    PointCloud::new(points, None)
}

/// Writes points in the format `load_points` reads.
pub fn write_points(pc: &PointCloud, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::new();
    for i in 0..pc.len() {
        let row: Vec<String> = pc.point(i).iter().map(|c| format!("{c}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads labels: one non-negative integer per line, line i labels vertex i.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let l: usize = line
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad label: {e}")))?;
        labels.push(l);
    }
    Ok(labels)
}

/// Writes labels in the format `load_labels` reads.
pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a cost table: header line `u,v,cost`, then one directed record
/// per line.
pub fn load_cost_table(path: impl AsRef<Path>) -> Result<CostTable, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            let normalized: String = line.split(',').map(|f| f.trim()).collect::<Vec<_>>().join(",");
            if !normalized.eq_ignore_ascii_case("u,v,cost") {
                return Err(parse_err(path, line_no, "expected header line `u,v,cost`"));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 fields, got {}", fields.len()),
            ));
        }
        let u: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad vertex id: {e}")))?;
        let v: usize = fields[1]
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad vertex id: {e}")))?;
        let cost: f64 = fields[2]
            .parse()
            .map_err(|e| parse_err(path, line_no, format!("bad cost: {e}")))?;
        records.push((u, v, cost));
    }
    if !saw_header {
        return Err(DataError::EmptyTable);
    }
    CostTable::new(records)
}

/// Writes a solution vector as CSV rows `vertex_id,value`.
pub fn write_vector_csv(x: &DVector<f64>, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::from("vertex_id,value\n");
    for (v, val) in x.iter().enumerate() {
        out.push_str(&format!("{v},{val}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}
