//! Learning the fairness-enhanced graph.
//!
//! The synthetic graph keeps the input node set; its trainable state is a
//! feature matrix `x_f` and a two-layer perceptron `psi` whose sigmoid output
//! over concatenated feature pairs induces the soft adjacency `a_f`. Both are
//! optimized so that predictor gradients computed on `(a_f, x_f)` track the
//! gradients computed on the input graph (a cosine-plus-Euclidean distance),
//! while a dyadic fairness penalty shrinks the intra/inter probability gap.
//! `x_f` and `psi` alternate: `tau1` epochs of feature updates, then `tau2`
//! epochs of generator updates. The inner predictor advances one descent step
//! per epoch on the synthetic loss, with the L2 term entering through its
//! gradient `2 beta theta`.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fairness::{fairness_loss, sample_pairs};
use crate::graph::{adjacency_from_edges, sample_non_edges, Edge, EdgeSplit, Graph};
use crate::predictor::{
    encode, link_loss, load_named_tensors, pair_logits, save_named_tensors, Adam,
    Architecture, PredictorParams, TAG_PSI,
};
use crate::seeds::SeedTree;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Hidden width of the link-generator perceptron.
pub const PSI_HIDDEN: usize = 128;

/// Two-layer perceptron over concatenated feature pairs, scalar output.
#[derive(Debug, Clone)]
pub struct PsiParams {
    pub weights: Vec<(String, Tensor)>,
}

impl PsiParams {
    /// Fan-in uniform initialization of `(2D x H), (1 x H), (H x 1), (1 x 1)`.
    pub fn init(feature_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = 2 * feature_dim;
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        };
        PsiParams {
            weights: vec![
                ("w1".to_string(), uniform(input, PSI_HIDDEN, input)),
                ("b1".to_string(), uniform(1, PSI_HIDDEN, input)),
                ("w2".to_string(), uniform(PSI_HIDDEN, 1, PSI_HIDDEN)),
                ("b2".to_string(), uniform(1, 1, PSI_HIDDEN)),
            ],
        }
    }

    pub fn leaves(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.weights
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_named_tensors(path, TAG_PSI, &self.weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tag, weights) = load_named_tensors(path)?;
        if tag != TAG_PSI {
            return Err(Error::validation(format!(
                "{}: not a link-generator checkpoint (tag {tag})",
                path.display()
            )));
        }
        Ok(PsiParams { weights })
    }
}

/// The learned fairness-enhanced graph: features, link generator, and the
/// sensitive labels copied from the input graph.
#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub x_f: Tensor,
    pub psi: PsiParams,
    pub s: Vec<usize>,
    /// Edge count of the input graph; the default sparsification budget.
    pub input_edge_count: usize,
}

fn all_pairs(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut us = Vec::with_capacity(n * (n - 1) / 2);
    let mut vs = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in (u + 1)..n {
            us.push(u);
            vs.push(v);
        }
    }
    (us, vs)
}

/// Applies the generator to a pair-feature matrix (`P x 2D -> P x 1`).
fn psi_forward(tape: &mut Tape, psi: &[NodeId], pair_feats: NodeId) -> NodeId {
    let (rows, _) = tape.shape(pair_feats);
    let xw = tape.matmul(pair_feats, psi[0]);
    let b1 = tape.broadcast_row(psi[1], rows);
    let pre = tape.add(xw, b1);
    let h = tape.relu(pre);
    let hw = tape.matmul(h, psi[2]);
    let b2 = tape.broadcast_row(psi[3], rows);
    tape.add(hw, b2)
}

/// Soft adjacency on the tape:
/// `a_f[u,v] = sigmoid((psi([x_u ++ x_v]) + psi([x_v ++ x_u])) / 2)` for
/// `u != v`, zero diagonal, symmetric by construction.
pub fn soft_adjacency(tape: &mut Tape, x_f: NodeId, psi: &[NodeId], n: usize) -> NodeId {
    let (rows, _) = tape.shape(x_f);
    assert_eq!(rows, n, "soft_adjacency: feature rows != node count");
    let (us, vs) = all_pairs(n);
    let xu = tape.gather_rows(x_f, &us);
    let xv = tape.gather_rows(x_f, &vs);
    let fwd = tape.concat_cols(xu, xv);
    let rev = tape.concat_cols(xv, xu);
    let m_fwd = psi_forward(tape, psi, fwd);
    let m_rev = psi_forward(tape, psi, rev);
    let sum = tape.add(m_fwd, m_rev);
    let avg = tape.scale(sum, 0.5);
    let p = tape.sigmoid(avg);
    tape.symmetrize_pairs(p, &us, &vs, n)
}

/// Forward-only soft adjacency values.
pub fn soft_adjacency_values(sg: &SyntheticGraph) -> Tensor {
    let mut tape = Tape::new();
    let x = tape.constant(sg.x_f.clone());
    let psi: Vec<NodeId> = sg
        .psi
        .weights
        .iter()
        .map(|(_, t)| tape.constant(t.clone()))
        .collect();
    let a = soft_adjacency(&mut tape, x, &psi, sg.x_f.nrows());
    tape.value(a).clone()
}

// ---------------------------------------------------------------------------
// gradient distance
// ---------------------------------------------------------------------------

/// Combined gradient distance over matched tensor lists:
/// `sum_i [1 - cos(a_i, b_i)] + gamma * sum_i ||a_i - b_i||`.
///
/// Zero-norm rule per tensor: the cosine term is 0 when both norms vanish and
/// 1 when exactly one does; a vanishing difference contributes 0 to the
/// Euclidean part. The branch is decided from current values when the
/// expression is built.
pub fn grad_distance(tape: &mut Tape, grads_a: &[NodeId], grads_b: &[NodeId], gamma: f64) -> NodeId {
    assert_eq!(grads_a.len(), grads_b.len(), "grad_distance: key sets differ");
    assert!(gamma >= 0.0, "grad_distance: gamma must be >= 0");
    let mut total: Option<NodeId> = None;
    let push = |tape: &mut Tape, term: NodeId, acc: &mut Option<NodeId>| {
        *acc = Some(match *acc {
            None => term,
            Some(t) => tape.add(t, term),
        });
    };

    for (&a, &b) in grads_a.iter().zip(grads_b) {
        assert_eq!(tape.shape(a), tape.shape(b), "grad_distance: shape mismatch");
        // Identical tensors sit at the distance minimum where the smooth
        // formula only reproduces 0 up to rounding; emit the exact value and
        // the minimum-norm subgradient instead.
        let identical = tape.value(a) == tape.value(b);
        let norm_a_val = tape.value(a).iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_b_val = tape.value(b).iter().map(|v| v * v).sum::<f64>().sqrt();

        let cos_term = match (norm_a_val == 0.0, norm_b_val == 0.0) {
            (true, true) => tape.scalar_constant(0.0),
            (true, false) | (false, true) => tape.scalar_constant(1.0),
            (false, false) if identical => tape.scalar_constant(0.0),
            (false, false) => {
                let num = tape.dot(a, b);
                let na = tape.l2_norm(a);
                let nb = tape.l2_norm(b);
                let denom = tape.mul(na, nb);
                let inv = tape.recip(denom);
                let cos = tape.mul(num, inv);
                tape.one_minus(cos)
            }
        };
        push(tape, cos_term, &mut total);

        if gamma > 0.0 {
            let euc = if identical {
                tape.scalar_constant(0.0)
            } else {
                let diff = tape.sub(a, b);
                tape.l2_norm(diff)
            };
            let scaled = tape.scale(euc, gamma);
            push(tape, scaled, &mut total);
        }
    }
    total.expect("grad_distance: empty gradient list")
}

// ---------------------------------------------------------------------------
// the optimization
// ---------------------------------------------------------------------------

/// Hyperparameters of the enhanced-graph optimization.
#[derive(Debug, Clone)]
pub struct DistillConfig {
    /// Fairness weight alpha.
    pub alpha: f64,
    /// Inner L2 regularization weight beta.
    pub beta: f64,
    /// Euclidean trade-off gamma in the gradient distance.
    pub gamma: f64,
    /// Outer epochs per restart.
    pub t_total: usize,
    /// Feature-update block length.
    pub tau1: usize,
    /// Generator-update block length.
    pub tau2: usize,
    /// Number of fresh predictor initializations (sequential passes).
    pub restarts: usize,
    /// Inner predictor step size.
    pub inner_lr: f64,
    /// Outer step size for `x_f`.
    pub outer_lr_x: f64,
    /// Outer step size for `psi`.
    pub outer_lr_psi: f64,
    /// Fairness pairs sampled per side each epoch.
    pub m_pairs: usize,
    /// Predictor hidden width.
    pub hidden: usize,
    /// Predictor embedding width.
    pub embed: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.5,
            beta: 0.01,
            gamma: 1.0,
            t_total: 200,
            tau1: 10,
            tau2: 10,
            restarts: 1,
            inner_lr: 0.01,
            outer_lr_x: 1e-2,
            outer_lr_psi: 1e-3,
            m_pairs: 1000,
            hidden: crate::predictor::DEFAULT_HIDDEN,
            embed: crate::predictor::DEFAULT_EMBED,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::validation("alpha, beta and gamma must be >= 0"));
        }
        if self.tau1 == 0 || self.tau2 == 0 {
            return Err(Error::validation("tau1 and tau2 must be >= 1"));
        }
        if self.t_total == 0 {
            return Err(Error::validation("t_total must be >= 1"));
        }
        if self.restarts == 0 {
            return Err(Error::validation("restarts must be >= 1"));
        }
        if self.inner_lr <= 0.0 || self.outer_lr_x <= 0.0 || self.outer_lr_psi <= 0.0 {
            return Err(Error::validation("learning rates must be > 0"));
        }
        if self.m_pairs == 0 {
            return Err(Error::validation("m_pairs must be >= 1"));
        }
        Ok(())
    }
}

/// Structural spot check of the soft adjacency, run once per alternation
/// block: symmetric, zero diagonal, off-diagonal entries strictly in (0, 1).
fn check_soft_adjacency(a: &Tensor, restart: usize, epoch: usize) -> Result<()> {
    let n = a.nrows();
    for u in 0..n {
        if a[(u, u)] != 0.0 {
            return Err(Error::runtime(format!(
                "restart {restart} epoch {epoch}: a_f diagonal nonzero at {u}"
            )));
        }
        for v in (u + 1)..n {
            let w = a[(u, v)];
            if w != a[(v, u)] || !(w > 0.0 && w < 1.0) {
                return Err(Error::runtime(format!(
                    "restart {restart} epoch {epoch}: a_f[{u},{v}] = {w} broke symmetry or range"
                )));
            }
        }
    }
    Ok(())
}

/// Output of one distillation: the synthetic graph plus per-epoch diagnostics.
#[derive(Debug, Clone)]
pub struct DistillRun {
    pub synthetic: SyntheticGraph,
    /// Utility (gradient-distance) value per outer epoch, across restarts.
    pub util_trace: Vec<f64>,
    /// Fairness loss value per outer epoch (0.0 recorded when alpha = 0).
    pub fair_trace: Vec<f64>,
    pub x_updates: usize,
    pub psi_updates: usize,
}

/// Learns `(x_f, psi)` by alternating meta-gradient steps on the gradient
/// matching plus fairness objective, against an inner predictor trajectory
/// trained on the synthetic graph. Deterministic for a fixed config.
pub fn distill(
    g: &Graph,
    split: &EdgeSplit,
    architecture: Architecture,
    cfg: &DistillConfig,
) -> Result<DistillRun> {
    cfg.validate()?;
    if g.group_count() < 2 {
        return Err(Error::validation(
            "no inter-group pairs: fairness requires at least two sensitive groups",
        ));
    }
    let n = g.n_nodes();
    let d = g.feature_dim();
    let tree = SeedTree::new(cfg.seed);

    // x_f starts at the input features plus small Gaussian noise
    let x_mean = g.features().sum() / g.features().len() as f64;
    let x_std = (g.features().iter().map(|v| (v - x_mean) * (v - x_mean)).sum::<f64>()
        / g.features().len() as f64)
        .sqrt();
    let noise_sigma = 0.01 * x_std;
    let mut xf_rng = tree.rng("xf-init", 0);
    let mut x_f = g.features().clone();
    for v in x_f.iter_mut() {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut xf_rng);
        *v += noise_sigma * z;
    }

    let mut psi_rng = tree.rng("psi-init", 0);
    let mut psi = PsiParams::init(d, &mut psi_rng);

    let mut adam_x = Adam::new(cfg.outer_lr_x, &[(n, d)]);
    let psi_shapes: Vec<(usize, usize)> = psi
        .weights
        .iter()
        .map(|(_, t)| (t.nrows(), t.ncols()))
        .collect();
    let mut adam_psi = Adam::new(cfg.outer_lr_psi, &psi_shapes);

    let adj_real = adjacency_from_edges(n, &split.train_pos);
    let x_real = g.features().clone();
    let edge_set = g.edge_set();
    let block = cfg.tau1 + cfg.tau2;

    let mut run = DistillRun {
        synthetic: SyntheticGraph {
            x_f: x_f.clone(),
            psi: psi.clone(),
            s: g.sensitive().to_vec(),
            input_edge_count: g.n_edges(),
        },
        util_trace: Vec::with_capacity(cfg.restarts * cfg.t_total),
        fair_trace: Vec::with_capacity(cfg.restarts * cfg.t_total),
        x_updates: 0,
        psi_updates: 0,
    };

    for restart in 0..cfg.restarts {
        let mut init_rng = tree.rng("init", restart as u64);
        let mut theta =
            PredictorParams::init(architecture, d, cfg.hidden, cfg.embed, &mut init_rng);

        for t in 0..cfg.t_total {
            let epoch = (restart * cfg.t_total + t) as u64;
            let mut neg_rng = tree.rng("negatives", epoch);
            let negs = sample_non_edges(n, &edge_set, split.train_pos.len(), &mut neg_rng)?;

            // gradients on the input graph, as plain values
            let grads_real: Vec<Tensor> = {
                let mut tape = Tape::new();
                let adj = tape.constant(adj_real.clone());
                let x = tape.constant(x_real.clone());
                let leaves = theta.leaves(&mut tape);
                let loss = link_loss(
                    &mut tape,
                    architecture,
                    &leaves,
                    Some(adj),
                    x,
                    &split.train_pos,
                    &negs,
                    None,
                )?;
                tape.grad(loss, &leaves)
            };

            // synthetic side: same pairs and labels, encoder inputs (a_f, x_f)
            let mut tape = Tape::new();
            let x_f_node = tape.leaf(x_f.clone());
            let psi_nodes = psi.leaves(&mut tape);
            let theta_nodes = theta.leaves(&mut tape);
            let a_f = soft_adjacency(&mut tape, x_f_node, &psi_nodes, n);
            if t % block == 0 {
                check_soft_adjacency(tape.value(a_f), restart, t)?;
            }
            let z = encode(&mut tape, architecture, &theta_nodes, Some(a_f), x_f_node);

            let pairs: Vec<Edge> = split.train_pos.iter().chain(&negs).copied().collect();
            let mut labels = vec![1.0; split.train_pos.len()];
            labels.extend(std::iter::repeat_n(0.0, negs.len()));
            let logits = pair_logits(&mut tape, z, &pairs);
            let loss_f = crate::predictor::bce_loss(&mut tape, logits, &labels)?;
            let grad_f_nodes = tape.grad_graph(loss_f, &theta_nodes);

            let grads_real_nodes: Vec<NodeId> = grads_real
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect();
            let util = grad_distance(&mut tape, &grads_real_nodes, &grad_f_nodes, cfg.gamma);

            let (outer, fair_val) = if cfg.alpha > 0.0 {
                let batch = sample_pairs(g, cfg.m_pairs, tree.derive("pairs", epoch))?;
                let li = pair_logits(&mut tape, z, &batch.intra);
                let le = pair_logits(&mut tape, z, &batch.inter);
                let pi = tape.sigmoid(li);
                let pe = tape.sigmoid(le);
                let fair = fairness_loss(&mut tape, pi, pe);
                let weighted = tape.scale(fair, cfg.alpha);
                (tape.add(util, weighted), tape.scalar(fair))
            } else {
                (util, 0.0)
            };

            let outer_val = tape.scalar(outer);
            if !outer_val.is_finite() {
                return Err(Error::runtime(format!(
                    "distillation diverged at restart {restart} epoch {t}: objective is not finite"
                )));
            }
            run.util_trace.push(tape.scalar(util));
            run.fair_trace.push(fair_val);

            // alternating outer step
            if t % block < cfg.tau1 {
                let meta = tape.grad(outer, &[x_f_node]);
                let mut vars = vec![x_f.clone()];
                adam_x.step(&mut vars, &meta);
                x_f = vars.pop().unwrap();
                run.x_updates += 1;
            } else {
                let meta = tape.grad(outer, &psi_nodes);
                let mut vars: Vec<Tensor> = psi.weights.iter().map(|(_, t)| t.clone()).collect();
                adam_psi.step(&mut vars, &meta);
                for ((_, slot), v) in psi.weights.iter_mut().zip(vars) {
                    *slot = v;
                }
                run.psi_updates += 1;
            }
            if x_f.iter().any(|v| !v.is_finite()) {
                return Err(Error::runtime(format!(
                    "distillation diverged at restart {restart} epoch {t}: x_f is not finite"
                )));
            }

            // inner descent step on the synthetic loss, with L2 decay 2 beta theta
            let grad_f_vals: Vec<Tensor> = grad_f_nodes
                .iter()
                .map(|id| tape.value(*id).clone())
                .collect();
            for ((_, w), gf) in theta.weights.iter_mut().zip(&grad_f_vals) {
                ndarray::Zip::from(&mut *w).and(gf).for_each(|wi, &gi| {
                    *wi -= cfg.inner_lr * (gi + 2.0 * cfg.beta * *wi);
                });
            }
            if !theta.is_finite() {
                return Err(Error::runtime(format!(
                    "distillation diverged at restart {restart} epoch {t}: theta is not finite"
                )));
            }
        }
    }

    run.synthetic.x_f = x_f;
    run.synthetic.psi = psi;
    Ok(run)
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportMode {
    /// Dense soft adjacency.
    Weighted,
    /// Top-k binarized edges.
    Sparsified,
}

impl std::str::FromStr for ExportMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weighted" => Ok(ExportMode::Weighted),
            "sparsified" => Ok(ExportMode::Sparsified),
            other => Err(Error::validation(format!(
                "unknown export mode {other:?} (expected weighted or sparsified)"
            ))),
        }
    }
}

/// A synthetic graph materialized for downstream training.
#[derive(Debug, Clone)]
pub struct SyntheticArtifact {
    pub adjacency: ArtifactAdjacency,
    pub x: Tensor,
    pub s: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum ArtifactAdjacency {
    Weighted(Tensor),
    Sparsified(Vec<Edge>),
}

/// Materializes the synthetic graph. Sparsified mode keeps the strongest
/// `target_edge_count` symmetric entries (default: the input graph's edge
/// count), ties broken toward the lexicographically smaller pair.
pub fn export_synthetic(
    sg: &SyntheticGraph,
    mode: ExportMode,
    target_edge_count: Option<usize>,
) -> Result<SyntheticArtifact> {
    let a_f = soft_adjacency_values(sg);
    let n = a_f.nrows();
    let adjacency = match mode {
        ExportMode::Weighted => ArtifactAdjacency::Weighted(a_f),
        ExportMode::Sparsified => {
            let target = target_edge_count.unwrap_or(sg.input_edge_count);
            let max_edges = n * (n - 1) / 2;
            if target > max_edges {
                return Err(Error::validation(format!(
                    "target_edge_count {target} exceeds the {max_edges} available pairs"
                )));
            }
            let mut scored: Vec<(f64, Edge)> = Vec::with_capacity(max_edges);
            for u in 0..n {
                for v in (u + 1)..n {
                    scored.push((a_f[(u, v)], (u, v)));
                }
            }
            scored.sort_by(|(wa, ea), (wb, eb)| {
                wb.partial_cmp(wa).unwrap().then_with(|| ea.cmp(eb))
            });
            let mut edges: Vec<Edge> = scored.into_iter().take(target).map(|(_, e)| e).collect();
            edges.sort_unstable();
            ArtifactAdjacency::Sparsified(edges)
        }
    };
    Ok(SyntheticArtifact {
        adjacency,
        x: sg.x_f.clone(),
        s: sg.s.clone(),
    })
}

/// Writes an artifact directory: `features.csv`, `psi.bin`, `sensitive.csv`,
/// the adjacency (`adjacency.csv` or `edges.tsv`), and a `meta` key-value
/// file.
pub fn write_artifact(
    sg: &SyntheticGraph,
    artifact: &SyntheticArtifact,
    meta: &BTreeMap<String, String>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))
    };
    write("features.csv", crate::graph::features_to_csv(&artifact.x))?;
    write("sensitive.csv", crate::graph::sensitive_to_csv(&artifact.s))?;
    sg.psi.save(&dir.join("psi.bin"))?;
    match &artifact.adjacency {
        ArtifactAdjacency::Weighted(a) => {
            write("adjacency.csv", crate::graph::features_to_csv(a))?;
        }
        ArtifactAdjacency::Sparsified(edges) => {
            write("edges.tsv", crate::graph::edges_to_tsv(edges))?;
        }
    }
    let mut text = String::new();
    for (k, v) in meta {
        text.push_str(&format!("{k} = {v}\n"));
    }
    write("meta", text)
}

/// Loads an artifact directory written by [`write_artifact`].
pub fn load_artifact(dir: &Path) -> Result<(SyntheticArtifact, BTreeMap<String, String>)> {
    let x = crate::graph::load_features(&dir.join("features.csv"))?;
    let s = crate::graph::load_sensitive(&dir.join("sensitive.csv"))?;
    let adjacency = if dir.join("adjacency.csv").exists() {
        let a = crate::graph::load_features(&dir.join("adjacency.csv"))?;
        if a.nrows() != a.ncols() {
            return Err(Error::validation(format!(
                "{}: adjacency is {}x{}, expected square",
                dir.display(),
                a.nrows(),
                a.ncols()
            )));
        }
        ArtifactAdjacency::Weighted(a)
    } else if dir.join("edges.tsv").exists() {
        let raw = crate::graph::load_edge_list(&dir.join("edges.tsv"))?;
        let mut edges: Vec<Edge> = raw.into_iter().map(|(u, v)| (u.min(v), u.max(v))).collect();
        edges.sort_unstable();
        edges.dedup();
        ArtifactAdjacency::Sparsified(edges)
    } else {
        return Err(Error::validation(format!(
            "{}: neither adjacency.csv nor edges.tsv found",
            dir.display()
        )));
    };
    let meta_text = std::fs::read_to_string(dir.join("meta")).unwrap_or_default();
    let mut meta = BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok((SyntheticArtifact { adjacency, x, s }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, split_edges, SbmConfig};
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;

    fn zero_output_psi(d: usize) -> PsiParams {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut psi = PsiParams::init(d, &mut rng);
        psi.weights[2].1.fill(0.0);
        psi.weights[3].1.fill(0.0);
        psi
    }

    #[test]
    fn zero_generator_gives_half_everywhere() {
        let n = 5;
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sg = SyntheticGraph {
            x_f: Tensor::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0)),
            psi: zero_output_psi(d),
            s: vec![0, 0, 1, 1, 1],
            input_edge_count: 4,
        };
        let a = soft_adjacency_values(&sg);
        for u in 0..n {
            for v in 0..n {
                if u == v {
                    assert_eq!(a[(u, v)], 0.0);
                } else {
                    assert_eq!(a[(u, v)], 0.5);
                }
            }
        }
    }

    #[test]
    fn soft_adjacency_is_exactly_symmetric() {
        let n = 7;
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sg = SyntheticGraph {
            x_f: Tensor::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0)),
            psi: PsiParams::init(d, &mut rng),
            s: vec![0; 7],
            input_edge_count: 4,
        };
        let a = soft_adjacency_values(&sg);
        for u in 0..n {
            assert_eq!(a[(u, u)], 0.0);
            for v in 0..n {
                assert_eq!(a[(u, v)], a[(v, u)]);
                if u != v {
                    assert!(a[(u, v)] > 0.0 && a[(u, v)] < 1.0);
                }
            }
        }
    }

    #[test]
    fn soft_adjacency_matches_hand_evaluation() {
        // one hidden unit: psi(h) = w2 * relu(h . w1 + b1) + b2
        let d = 1;
        let psi = PsiParams {
            weights: vec![
                ("w1".to_string(), Tensor::from_shape_vec((2, PSI_HIDDEN), {
                    let mut v = vec![0.0; 2 * PSI_HIDDEN];
                    v[0] = 1.0; // first hidden unit reads x_u
                    v[PSI_HIDDEN] = -0.5; // and -x_v/2
                    v
                }).unwrap()),
                ("b1".to_string(), Tensor::from_shape_vec((1, PSI_HIDDEN), {
                    let mut v = vec![0.0; PSI_HIDDEN];
                    v[0] = 0.25;
                    v
                }).unwrap()),
                ("w2".to_string(), Tensor::from_shape_vec((PSI_HIDDEN, 1), {
                    let mut v = vec![0.0; PSI_HIDDEN];
                    v[0] = 2.0;
                    v
                }).unwrap()),
                ("b2".to_string(), Tensor::from_elem((1, 1), -0.3)),
            ],
        };
        let xs = [0.6, -0.2, 1.1];
        let sg = SyntheticGraph {
            x_f: Tensor::from_shape_vec((3, d), xs.to_vec()).unwrap(),
            psi,
            s: vec![0, 1, 1],
            input_edge_count: 2,
        };
        let a = soft_adjacency_values(&sg);
        let m = |xu: f64, xv: f64| 2.0 * (xu - 0.5 * xv + 0.25).max(0.0) - 0.3;
        for u in 0..3 {
            for v in (u + 1)..3 {
                let logit = 0.5 * (m(xs[u], xs[v]) + m(xs[v], xs[u]));
                let expect = 1.0 / (1.0 + (-logit).exp());
                assert!(
                    (a[(u, v)] - expect).abs() < 1e-12,
                    "a[{u},{v}] = {} vs {expect}",
                    a[(u, v)]
                );
            }
        }
    }

    #[test]
    fn grad_distance_identity_and_orthogonal() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_shape_vec((2, 1), vec![0.3, -1.2]).unwrap());
        let d = grad_distance(&mut tape, &[a], &[a], 1.0);
        assert_eq!(tape.scalar(d), 0.0);

        let e1 = tape.constant(Tensor::from_shape_vec((2, 1), vec![1.0, 0.0]).unwrap());
        let e2 = tape.constant(Tensor::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap());
        let d = grad_distance(&mut tape, &[e1], &[e2], 1.0);
        assert!((tape.scalar(d) - (1.0 + 2.0f64.sqrt())).abs() < 1e-12);
        assert!((tape.scalar(d) - 2.41421).abs() < 1e-5);
    }

    #[test]
    fn grad_distance_gamma_zero_is_summed_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, rng: &mut ChaCha8Rng| {
            tape.constant(Tensor::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0)))
        };
        let a1 = mk(&mut tape, &mut rng);
        let a2 = mk(&mut tape, &mut rng);
        let b1 = mk(&mut tape, &mut rng);
        let b2 = mk(&mut tape, &mut rng);
        let d = grad_distance(&mut tape, &[a1, a2], &[b1, b2], 0.0);

        let cos = |x: &Tensor, y: &Tensor| {
            let num: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            num / (nx * ny)
        };
        let expect = (1.0 - cos(tape.value(a1), tape.value(b1)))
            + (1.0 - cos(tape.value(a2), tape.value(b2)));
        assert!((tape.scalar(d) - expect).abs() < 1e-12);
    }

    #[test]
    fn grad_distance_zero_norm_rules() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros((2, 1)));
        let nz = tape.constant(Tensor::from_shape_vec((2, 1), vec![1.0, 1.0]).unwrap());
        // both zero: cosine term 0, euclidean 0
        let d = grad_distance(&mut tape, &[z], &[z], 1.0);
        assert_eq!(tape.scalar(d), 0.0);
        // exactly one zero: cosine term 1
        let d = grad_distance(&mut tape, &[z], &[nz], 1.0);
        assert!((tape.scalar(d) - (1.0 + 2.0f64.sqrt())).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn grad_distance_nonnegative_and_zero_iff_equal(
            a in proptest::collection::vec(-3.0f64..3.0, 6),
            b in proptest::collection::vec(-3.0f64..3.0, 6),
        ) {
            let mut tape = Tape::new();
            let ta = tape.constant(Tensor::from_shape_vec((3, 2), a.clone()).unwrap());
            let tb = tape.constant(Tensor::from_shape_vec((3, 2), b.clone()).unwrap());
            let d = grad_distance(&mut tape, &[ta], &[tb], 1.0);
            let val = tape.scalar(d);
            prop_assert!(val >= -1e-12);
            if a == b {
                prop_assert!(val.abs() < 1e-12);
            } else if val.abs() < 1e-15 {
                prop_assert_eq!(a, b);
            }
        }
    }

    fn tiny_setup() -> (Graph, EdgeSplit) {
        let g = generate_sbm(&SbmConfig {
            n_nodes: 16,
            group_sizes: vec![8, 8],
            p_intra: 0.6,
            p_inter: 0.1,
            feature_dim: 3,
            feature_signal: 1.5,
            seed: 17,
        })
        .unwrap();
        let split = split_edges(&g, (0.7, 0.15, 0.15), 1.0, 17).unwrap();
        (g, split)
    }

    fn tiny_cfg() -> DistillConfig {
        DistillConfig {
            t_total: 4,
            tau1: 1,
            tau2: 1,
            m_pairs: 50,
            hidden: 8,
            embed: 4,
            seed: 23,
            ..DistillConfig::default()
        }
    }

    #[test]
    fn distill_is_bitwise_deterministic() {
        let (g, split) = tiny_setup();
        let cfg = DistillConfig {
            alpha: 0.0,
            gamma: 0.0,
            restarts: 1,
            t_total: 3,
            ..tiny_cfg()
        };
        let a = distill(&g, &split, Architecture::Sage, &cfg).unwrap();
        let b = distill(&g, &split, Architecture::Sage, &cfg).unwrap();
        assert_eq!(a.synthetic.x_f, b.synthetic.x_f);
        for ((_, ta), (_, tb)) in a.synthetic.psi.weights.iter().zip(&b.synthetic.psi.weights) {
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn alternation_schedule_counts_updates() {
        let (g, split) = tiny_setup();
        let cfg = DistillConfig {
            t_total: 2,
            tau1: 1,
            tau2: 1,
            restarts: 1,
            ..tiny_cfg()
        };
        let run = distill(&g, &split, Architecture::Mlp, &cfg).unwrap();
        assert_eq!(run.x_updates, 1);
        assert_eq!(run.psi_updates, 1);

        let cfg2 = DistillConfig {
            t_total: 10,
            tau1: 3,
            tau2: 2,
            restarts: 2,
            ..tiny_cfg()
        };
        let run = distill(&g, &split, Architecture::Mlp, &cfg2).unwrap();
        assert_eq!(run.x_updates, 2 * 6);
        assert_eq!(run.psi_updates, 2 * 4);
    }

    #[test]
    fn single_group_graph_is_rejected() {
        let x = Tensor::zeros((6, 2));
        let g = Graph::new(vec![(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)], x, vec![0; 6]).unwrap();
        let split = split_edges(&g, (0.6, 0.2, 0.2), 1.0, 1).unwrap();
        let err = distill(&g, &split, Architecture::Mlp, &tiny_cfg()).unwrap_err();
        assert!(err.to_string().contains("inter-group"), "{err}");
    }

    #[test]
    fn synthetic_a_f_stays_symmetric_in_range_after_training() {
        let (g, split) = tiny_setup();
        let run = distill(&g, &split, Architecture::Sage, &tiny_cfg()).unwrap();
        let a = soft_adjacency_values(&run.synthetic);
        for u in 0..g.n_nodes() {
            assert_eq!(a[(u, u)], 0.0);
            for v in 0..g.n_nodes() {
                assert_eq!(a[(u, v)], a[(v, u)]);
                if u != v {
                    assert!(a[(u, v)] > 0.0 && a[(u, v)] < 1.0);
                }
            }
        }
    }

    #[test]
    fn sparsified_export_counts_and_ties() {
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sg = SyntheticGraph {
            x_f: Tensor::from_shape_fn((6, d), |_| rng.gen_range(-1.0..1.0)),
            psi: zero_output_psi(d),
            s: vec![0, 0, 0, 1, 1, 1],
            input_edge_count: 4,
        };
        // zero generator: every off-diagonal weight ties at 0.5, so the
        // lexicographically smallest pairs win
        let art = export_synthetic(&sg, ExportMode::Sparsified, Some(4)).unwrap();
        match art.adjacency {
            ArtifactAdjacency::Sparsified(edges) => {
                assert_eq!(edges, vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
            }
            _ => panic!("expected sparsified adjacency"),
        }
        // default budget = input_edge_count
        let art = export_synthetic(&sg, ExportMode::Sparsified, None).unwrap();
        match art.adjacency {
            ArtifactAdjacency::Sparsified(edges) => assert_eq!(edges.len(), 4),
            _ => panic!("expected sparsified adjacency"),
        }
        // too many edges requested
        assert!(export_synthetic(&sg, ExportMode::Sparsified, Some(16)).is_err());
    }

    #[test]
    fn weighted_export_round_trips_exactly() {
        let (g, split) = tiny_setup();
        let run = distill(&g, &split, Architecture::Mlp, &tiny_cfg()).unwrap();
        let art = export_synthetic(&run.synthetic, ExportMode::Weighted, None).unwrap();
        let dir = tempfile::TempDir::new().unwrap();
        let meta = BTreeMap::from([("seed".to_string(), "23".to_string())]);
        write_artifact(&run.synthetic, &art, &meta, dir.path()).unwrap();
        let (loaded, meta2) = load_artifact(dir.path()).unwrap();
        match (&art.adjacency, &loaded.adjacency) {
            (ArtifactAdjacency::Weighted(a), ArtifactAdjacency::Weighted(b)) => {
                let max = a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(max <= 1e-15, "adjacency drifted by {max}");
            }
            _ => panic!("expected weighted adjacency"),
        }
        assert_eq!(loaded.s, run.synthetic.s);
        assert_eq!(meta2.get("seed").unwrap(), "23");
        // psi checkpoint reloads identically
        let psi = PsiParams::load(&dir.path().join("psi.bin")).unwrap();
        for ((_, ta), (_, tb)) in run.synthetic.psi.weights.iter().zip(&psi.weights) {
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn meta_gradients_match_finite_differences_small() {
        // one distillation epoch's objective as a function of x_f and psi
        let (g, split) = tiny_setup();
        let negs = {
            let mut rng = SeedTree::new(7).rng("negatives", 0);
            sample_non_edges(g.n_nodes(), &g.edge_set(), split.train_pos.len(), &mut rng).unwrap()
        };
        let mut init_rng = SeedTree::new(7).rng("init", 0);
        let theta = PredictorParams::init(Architecture::Sage, 3, 4, 3, &mut init_rng);
        let mut psi_rng = SeedTree::new(7).rng("psi-init", 0);
        let psi = PsiParams::init(3, &mut psi_rng);
        let batch = sample_pairs(&g, 30, 7).unwrap();
        let (alpha, gamma) = (0.5, 1.0);

        let objective = |x_f: &Tensor, psi_w: &[(String, Tensor)]| -> (f64, Vec<Tensor>, Vec<Tensor>) {
            let mut tape = Tape::new();
            let adj = tape.constant(g.dense_adjacency());
            let x = tape.constant(g.features().clone());
            let th_real = theta.leaves(&mut tape);
            let loss_g = link_loss(
                &mut tape,
                Architecture::Sage,
                &th_real,
                Some(adj),
                x,
                &split.train_pos,
                &negs,
                None,
            )
            .unwrap();
            let gg = tape.grad(loss_g, &th_real);

            let xf_node = tape.leaf(x_f.clone());
            let psi_nodes: Vec<NodeId> = psi_w.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
            let th_syn = theta.leaves(&mut tape);
            let a_f = soft_adjacency(&mut tape, xf_node, &psi_nodes, g.n_nodes());
            let z = encode(&mut tape, Architecture::Sage, &th_syn, Some(a_f), xf_node);
            let pairs: Vec<Edge> = split.train_pos.iter().chain(&negs).copied().collect();
            let mut labels = vec![1.0; split.train_pos.len()];
            labels.extend(std::iter::repeat_n(0.0, negs.len()));
            let logits = pair_logits(&mut tape, z, &pairs);
            let loss_f = crate::predictor::bce_loss(&mut tape, logits, &labels).unwrap();
            let gf = tape.grad_graph(loss_f, &th_syn);
            let gg_nodes: Vec<NodeId> = gg.iter().map(|t| tape.constant(t.clone())).collect();
            let util = grad_distance(&mut tape, &gg_nodes, &gf, gamma);
            let li = pair_logits(&mut tape, z, &batch.intra);
            let le = pair_logits(&mut tape, z, &batch.inter);
            let pi = tape.sigmoid(li);
            let pe = tape.sigmoid(le);
            let fair = fairness_loss(&mut tape, pi, pe);
            let weighted = tape.scale(fair, alpha);
            let outer = tape.add(util, weighted);
            let meta_x = tape.grad(outer, &[xf_node]);
            let meta_psi = tape.grad(outer, &psi_nodes);
            (tape.scalar(outer), meta_x, meta_psi)
        };

        let x_f = g.features().clone();
        let (_, meta_x, meta_psi) = objective(&x_f, &psi.weights);

        let h = 1e-4;
        // a handful of x_f coordinates
        for idx in [0usize, 7, 20, 33, 47] {
            let mut plus = x_f.clone();
            let mut minus = x_f.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let fd = (objective(&plus, &psi.weights).0 - objective(&minus, &psi.weights).0) / (2.0 * h);
            let an = meta_x[0].as_slice().unwrap()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel <= 1e-4, "x_f idx {idx}: {an} vs {fd} (rel {rel:.2e})");
        }
        // a handful of psi coordinates across tensors
        for (wi, idx) in [(0usize, 3usize), (1, 5), (2, 20), (3, 0)] {
            let mut plus = psi.weights.clone();
            let mut minus = psi.weights.clone();
            plus[wi].1.as_slice_mut().unwrap()[idx] += h;
            minus[wi].1.as_slice_mut().unwrap()[idx] -= h;
            let fd = (objective(&x_f, &plus).0 - objective(&x_f, &minus).0) / (2.0 * h);
            let an = meta_psi[wi].as_slice().unwrap()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel <= 1e-4, "psi[{wi}] idx {idx}: {an} vs {fd} (rel {rel:.2e})");
        }
    }
}
