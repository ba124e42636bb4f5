//! Training-and-scoring harness: rank-based AUC, F1, full metric records,
//! cross-architecture sweeps and trade-off reports.
//!
//! Evaluation always scores the *original* graph's held-out test pairs; a
//! synthetic artifact only replaces the training substrate (and therefore the
//! embeddings), never the ground truth.

use crate::distill::{ArtifactAdjacency, SyntheticArtifact};
use crate::error::{Error, Result};
use crate::fairness::{delta_dp, delta_eo};
use crate::graph::{Edge, EdgeSplit};
use crate::predictor::{embed, link_prob, train_predictor, Architecture, Substrate, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

/// Metrics of one (graph, architecture, seed) evaluation. F1/AUC and both
/// gaps are reported in percentage points.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub graph_id: String,
    pub architecture: String,
    pub seed: u64,
    pub f1: f64,
    pub auc: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
    pub runtime_s: f64,
}

impl MetricsRecord {
    /// Sort key for deterministic sweep output.
    fn key(&self) -> (String, String, u64) {
        (self.graph_id.clone(), self.architecture.clone(), self.seed)
    }
}

/// Rank-based AUC in percent: `(#{pos > neg} + 0.5 ties) / (|pos| |neg|)`,
/// computed through tie-averaged ranks.
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::validation("auc requires scores on both sides"));
    }
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::validation("auc scores must be finite"));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the average
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let np = pos_scores.len() as f64;
    let nn = neg_scores.len() as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(100.0 * u / (np * nn))
}

/// F1 of the positive class in percent at the given probability threshold
/// (predict positive when `p >= threshold`); 0 when precision + recall is 0.
pub fn f1(probs: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::validation("f1: probs and labels are misaligned"));
    }
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let pred = p >= threshold;
        match (pred, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fne) as f64;
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Builds a training substrate from a synthetic artifact. Weighted artifacts
/// supervise through soft labels on `supervision_pairs` sampled pairs per
/// epoch; sparsified ones through their own binary edges.
pub fn substrate_from_artifact(artifact: &SyntheticArtifact, supervision_pairs: usize) -> Substrate {
    match &artifact.adjacency {
        ArtifactAdjacency::Weighted(a) => {
            Substrate::from_weighted(a.clone(), artifact.x.clone(), supervision_pairs)
        }
        ArtifactAdjacency::Sparsified(edges) => {
            Substrate::from_binary(artifact.x.nrows(), edges, artifact.x.clone())
        }
    }
}

/// Trains a fresh predictor on the substrate and scores the original test
/// split: F1 and AUC on test positives vs negatives, the demographic-parity
/// gap over the full candidate set, and the equal-opportunity gap over test
/// positives.
pub fn evaluate(
    graph_id: &str,
    substrate: &Substrate,
    split: &EdgeSplit,
    sensitive: &[usize],
    architecture: Architecture,
    train: &TrainConfig,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let params = train_predictor(substrate, architecture, train)?;
    let z = embed(&params, substrate);

    let pos_probs = link_prob(&z, &split.test_pos);
    let neg_probs = link_prob(&z, &split.test_neg);

    let auc_pct = auc(&pos_probs, &neg_probs)?;
    let mut probs = pos_probs.clone();
    probs.extend_from_slice(&neg_probs);
    let mut labels = vec![true; pos_probs.len()];
    labels.extend(std::iter::repeat_n(false, neg_probs.len()));
    let f1_pct = f1(&probs, &labels, 0.5)?;

    let candidates: Vec<Edge> = split
        .test_pos
        .iter()
        .chain(&split.test_neg)
        .copied()
        .collect();
    let dp = delta_dp(&probs, &candidates, sensitive)?;
    let eo = delta_eo(&pos_probs, &split.test_pos, sensitive)?;

    Ok(MetricsRecord {
        graph_id: graph_id.to_string(),
        architecture: architecture.name().to_string(),
        seed: train.seed,
        f1: f1_pct,
        auc: auc_pct,
        delta_dp: dp,
        delta_eo: eo,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Cartesian product of evaluations over architectures and seeds, sorted by
/// (graph, architecture, seed) regardless of execution order.
pub fn cross_arch_sweep(
    graph_id: &str,
    substrate: &Substrate,
    split: &EdgeSplit,
    sensitive: &[usize],
    architectures: &[Architecture],
    seeds: &[u64],
    train: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    if architectures.is_empty() || seeds.is_empty() {
        return Err(Error::validation("sweep requires architectures and seeds"));
    }
    let mut records = Vec::with_capacity(architectures.len() * seeds.len());
    for &arch in architectures {
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..train.clone()
            };
            records.push(evaluate(graph_id, substrate, split, sensitive, arch, &cfg)?);
        }
    }
    records.sort_by_key(|r| r.key());
    Ok(records)
}

/// One JSON object per line, fixed key order.
pub fn records_to_jsonl(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", serde_json::to_string(r).expect("serializable record"));
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse("<metrics>", lineno + 1, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregated trade-off table: one row per (graph, architecture) with
/// mean +/- sample std of every metric, plus per-record scatter data
/// (`delta_dp`, `auc`, label) for external plotting.
pub fn tradeoff_report(records: &[MetricsRecord]) -> Result<(String, String)> {
    if records.is_empty() {
        return Err(Error::validation("tradeoff_report requires at least one record"));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.key());

    let mut report = String::from(
        "graph_id,architecture,f1_mean,f1_std,auc_mean,auc_std,dp_mean,dp_std,eo_mean,eo_std\n",
    );
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len()
            && sorted[j].graph_id == sorted[i].graph_id
            && sorted[j].architecture == sorted[i].architecture
        {
            j += 1;
        }
        let group = &sorted[i..j];
        let col = |f: fn(&MetricsRecord) -> f64| -> (f64, f64) {
            let vals: Vec<f64> = group.iter().map(f).collect();
            mean_and_sample_std(&vals)
        };
        let (f1m, f1s) = col(|r| r.f1);
        let (aucm, aucs) = col(|r| r.auc);
        let (dpm, dps) = col(|r| r.delta_dp);
        let (eom, eos) = col(|r| r.delta_eo);
        let _ = writeln!(
            report,
            "{},{},{f1m},{f1s},{aucm},{aucs},{dpm},{dps},{eom},{eos}",
            group[0].graph_id, group[0].architecture
        );
        i = j;
    }

    let mut scatter = String::from("delta_dp,auc,label\n");
    for r in &sorted {
        let _ = writeln!(
            scatter,
            "{},{},{}:{}",
            r.delta_dp, r.auc, r.graph_id, r.architecture
        );
    }
    Ok((report, scatter))
}
