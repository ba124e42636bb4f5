//! Dyadic fairness: demographic-parity and equal-opportunity gaps over link
//! probabilities, plus the differentiable fairness loss used while learning
//! the enhanced graph.
//!
//! A pair is *intra* when both endpoints carry the same sensitive label and
//! *inter* otherwise. All metrics compare mean predicted probabilities (not
//! thresholded decisions) between the two sides and are reported in
//! percentage points.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::seeds::SeedTree;
use rand::Rng;

/// Sampled estimator of the pair expectation: `m` intra and `m` inter pairs
/// drawn uniformly with replacement from the ordered pairs of V x V (u != v).
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub intra: Vec<Edge>,
    pub inter: Vec<Edge>,
    pub seed: u64,
}

/// Draws a [`PairBatch`] from one seeded stream. Errors when a side has no
/// population (a single group, or only singleton groups).
pub fn sample_pairs(g: &Graph, m_per_side: usize, seed: u64) -> Result<PairBatch> {
    if m_per_side == 0 {
        return Err(Error::validation("m_per_side must be >= 1"));
    }
    if g.group_count() < 2 {
        return Err(Error::validation(
            "no inter-group pairs: graph has a single sensitive group",
        ));
    }
    let mut counts = vec![0usize; g.group_count()];
    for &s in g.sensitive() {
        counts[s] += 1;
    }
    if counts.iter().all(|&c| c < 2) {
        return Err(Error::validation(
            "no intra-group pairs: every sensitive group is a singleton",
        ));
    }

    let n = g.n_nodes();
    let s = g.sensitive();
    let mut rng = SeedTree::new(seed).rng("pairs", 0);
    let mut intra = Vec::with_capacity(m_per_side);
    let mut inter = Vec::with_capacity(m_per_side);
    while intra.len() < m_per_side || inter.len() < m_per_side {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        if s[u] == s[v] {
            if intra.len() < m_per_side {
                intra.push((u, v));
            }
        } else if inter.len() < m_per_side {
            inter.push((u, v));
        }
    }
    Ok(PairBatch { intra, inter, seed })
}

/// Differentiable fairness loss `|mean(probs_intra) - mean(probs_inter)|`.
/// The absolute value takes subgradient 0 at the tie.
///
/// Both means are computed relative to the first intra probability; the shift
/// cancels algebraically and leaves gradients untouched, but makes a constant
/// predictor evaluate to exactly zero regardless of the two side lengths.
pub fn fairness_loss(tape: &mut Tape, probs_intra: NodeId, probs_inter: NodeId) -> NodeId {
    assert!(
        tape.shape(probs_intra).0 > 0 && tape.shape(probs_inter).0 > 0,
        "fairness_loss: empty probability vector"
    );
    let reference = tape.value(probs_intra)[(0, 0)];
    let ci = tape.offset(probs_intra, -reference);
    let ce = tape.offset(probs_inter, -reference);
    let mi = tape.mean(ci);
    let me = tape.mean(ce);
    let d = tape.sub(mi, me);
    tape.abs(d)
}

/// `|mean(intra) - mean(inter)|` over plain probability slices, centered the
/// same way as [`fairness_loss`].
pub fn fairness_gap(intra: &[f64], inter: &[f64]) -> Result<f64> {
    if intra.is_empty() || inter.is_empty() {
        return Err(Error::validation("fairness gap over an empty side"));
    }
    let reference = intra[0];
    let mean = |v: &[f64]| v.iter().map(|p| p - reference).sum::<f64>() / v.len() as f64;
    Ok((mean(intra) - mean(inter)).abs())
}

fn split_by_side(probs: &[f64], pairs: &[Edge], s: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for (&p, &(u, v)) in probs.iter().zip(pairs) {
        if s[u] == s[v] {
            intra.push(p);
        } else {
            inter.push(p);
        }
    }
    (intra, inter)
}

/// Demographic-parity gap in percentage points over a candidate pair list:
/// `100 |mean prob intra - mean prob inter|`.
pub fn delta_dp(probs: &[f64], pairs: &[Edge], s: &[usize]) -> Result<f64> {
    if probs.len() != pairs.len() {
        return Err(Error::validation("probs and pairs are misaligned"));
    }
    let (intra, inter) = split_by_side(probs, pairs, s);
    if intra.is_empty() {
        return Err(Error::validation("delta_dp: no intra-group pairs in the candidate set"));
    }
    if inter.is_empty() {
        return Err(Error::validation("delta_dp: no inter-group pairs in the candidate set"));
    }
    Ok(100.0 * fairness_gap(&intra, &inter)?)
}

/// Equal-opportunity gap in percentage points, restricted to true edges.
pub fn delta_eo(probs: &[f64], pos_edges: &[Edge], s: &[usize]) -> Result<f64> {
    if probs.len() != pos_edges.len() {
        return Err(Error::validation("probs and edges are misaligned"));
    }
    let (intra, inter) = split_by_side(probs, pos_edges, s);
    if intra.is_empty() {
        return Err(Error::validation("delta_eo: no intra-group true edges"));
    }
    if inter.is_empty() {
        return Err(Error::validation("delta_eo: no inter-group true edges"));
    }
    Ok(100.0 * fairness_gap(&intra, &inter)?)
}
