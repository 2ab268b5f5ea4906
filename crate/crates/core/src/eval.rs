//! Cluster-recovery scoring and the repeated-random-seed experiment
//! protocol with aggregate statistics.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{appr_push, ApprConfig};
use crate::graph::{Graph, VertexSet};
use crate::npr::{continuation, NprConfig};
use crate::sweep::{best_stage_cluster, sweep_cut};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("truth set is empty")]
    EmptyTruth,
    #[error("graph has {expected} vertices but {got} labels")]
    LabelCountMismatch { expected: usize, got: usize },
    #[error("protocol needs at least one repetition")]
    NoRepetitions,
    #[error("no vertex carries label {label}")]
    EmptyLabelClass { label: usize },
}

/// Harmonic mean of precision and recall against a ground-truth set;
/// zero when the overlap is empty.
pub fn fscore(pred: &VertexSet, truth: &VertexSet) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let tp = pred.iter().filter(|&v| truth.contains(v)).count();
    if tp == 0 {
        return Ok(0.0);
    }
    let fp = pred.len() - tp;
    let fn_ = truth.len() - tp;
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Which clustering method a protocol runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Npr,
    Appr,
}

/// Experiment protocol: repetition count, seed-draw RNG, method, and the
/// per-method configurations. Seed vertices are drawn up front from the
/// RNG alone, so both methods see identical seed sequences for the same
/// `rng_seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentProtocol {
    pub repetitions: usize,
    pub rng_seed: u64,
    pub method: Method,
    pub npr: NprConfig,
    pub appr: ApprConfig,
    /// When set, seeds are drawn only from vertices carrying this label.
    pub restrict_label: Option<usize>,
}

impl ExperimentProtocol {
    pub fn new(method: Method, repetitions: usize, rng_seed: u64) -> Self {
        ExperimentProtocol {
            repetitions,
            rng_seed,
            method,
            npr: NprConfig::new(0),
            appr: ApprConfig::new(0),
            restrict_label: None,
        }
    }
}

/// One repetition's outcome. `wall_time_s` is timing bookkeeping and is
/// deliberately excluded from the CSV export, which must be reproducible
/// bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub rep: usize,
    pub seed_vertex: usize,
    /// The p value whose sweep won; absent for the baseline method.
    pub best_p: Option<f64>,
    pub phi: f64,
    pub fscore: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    /// Failure message when the repetition could not produce a cluster;
    /// such records are excluded from the aggregates.
    pub error: Option<String>,
}

/// All repetitions plus aggregate statistics over the successful ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<SeedRecord>,
    pub mean_phi: f64,
    pub std_phi: f64,
    pub mean_fscore: f64,
    pub std_fscore: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ExperimentReport {
    fn from_records(records: Vec<SeedRecord>) -> Self {
        let ok: Vec<&SeedRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let phis: Vec<f64> = ok.iter().map(|r| r.phi).collect();
        let fscores: Vec<f64> = ok.iter().map(|r| r.fscore).collect();
        let (mean_phi, std_phi) = mean_std(&phis);
        let (mean_fscore, std_fscore) = mean_std(&fscores);
        ExperimentReport {
            records,
            mean_phi,
            std_phi,
            mean_fscore,
            std_fscore,
        }
    }

    /// One row per repetition plus mean and std footer rows aligned under
    /// the phi and fscore columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rep,seed_vertex,best_p,phi,fscore,iterations,status\n");
        for r in &self.records {
            let best_p = r.best_p.map_or(String::new(), |p| format!("{p}"));
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("\"{}\"", e.replace('"', "'")),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.rep, r.seed_vertex, best_p, r.phi, r.fscore, r.iterations, status
            ));
        }
        out.push_str(&format!(",,mean,{},{},,\n", self.mean_phi, self.mean_fscore));
        out.push_str(&format!(",,std,{},{},,\n", self.std_phi, self.std_fscore));
        out
    }
}

fn truth_set(g: &Graph, labels: &[usize], seed: usize) -> VertexSet {
    let class = labels[seed];
    VertexSet::from_members(g, (0..g.n()).filter(|&v| labels[v] == class))
}

fn run_one(
    g: &Graph,
    labels: &[usize],
    protocol: &ExperimentProtocol,
    rep: usize,
    seed: usize,
) -> SeedRecord {
    let start = Instant::now();
    let truth = truth_set(g, labels, seed);
    let outcome: Result<(Option<f64>, VertexSet, f64, usize), String> = match protocol.method {
        Method::Npr => {
            let mut cfg = protocol.npr.clone();
            cfg.seed_vertex = seed;
            continuation(g, &cfg)
                .map_err(|e| e.to_string())
                .and_then(|run| {
                    let iters: usize =
                        run.stages.iter().map(|s| s.trace.iterations.len()).sum();
                    best_stage_cluster(g, &run.stages)
                        .map(|(idx, profile)| {
                            (
                                Some(run.stages[idx].p),
                                profile.best_set(g),
                                profile.best_phi,
                                iters,
                            )
                        })
                        .ok_or_else(|| "no sweep stages".to_string())
                })
        }
        Method::Appr => {
            let mut cfg = protocol.appr.clone();
            cfg.seed_vertex = seed;
            appr_push(g, &cfg).map_err(|e| e.to_string()).map(|res| {
                let profile = sweep_cut(g, &res.degree_normalized(g));
                (None, profile.best_set(g), profile.best_phi, res.push_count)
            })
        }
    };
    match outcome {
        Ok((best_p, set, phi, iterations)) => {
            let f = fscore(&set, &truth).expect("truth contains the seed");
            SeedRecord {
                rep,
                seed_vertex: seed,
                best_p,
                phi,
                fscore: f,
                iterations,
                wall_time_s: start.elapsed().as_secs_f64(),
                error: None,
            }
        }
        Err(message) => SeedRecord {
            rep,
            seed_vertex: seed,
            best_p: None,
            phi: f64::NAN,
            fscore: f64::NAN,
            iterations: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
            error: Some(message),
        },
    }
}

/// Runs the protocol: draws seed vertices, fans the repetitions over the
/// current thread pool, and aggregates. Deterministic in `rng_seed` up to
/// wall-time bookkeeping.
pub fn run_experiment(
    g: &Graph,
    labels: &[usize],
    protocol: &ExperimentProtocol,
) -> Result<ExperimentReport, EvalError> {
    if labels.len() != g.n() {
        return Err(EvalError::LabelCountMismatch {
            expected: g.n(),
            got: labels.len(),
        });
    }
    if protocol.repetitions == 0 {
        return Err(EvalError::NoRepetitions);
    }
    let pool: Vec<usize> = match protocol.restrict_label {
        None => (0..g.n()).collect(),
        Some(class) => {
            let members: Vec<usize> =
                (0..g.n()).filter(|&v| labels[v] == class).collect();
            if members.is_empty() {
                return Err(EvalError::EmptyLabelClass { label: class });
            }
            members
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.rng_seed);
    let seeds: Vec<usize> = (0..protocol.repetitions)
        .map(|_| pool[rng.gen_range(0..pool.len())])
        .collect();

    let records: Vec<SeedRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(rep, &seed)| run_one(g, labels, protocol, rep, seed))
        .collect();
    Ok(ExperimentReport::from_records(records))
}
