//! Link predictors: GNN encoders over (adjacency, features), the dot-product
//! decoder, link cross-entropy, and plain full-batch training.
//!
//! All encoders are two layers with hidden width 64 and embedding width 32 by
//! default. Adjacency enters as edge weights, so the same code paths serve the
//! binary input graph and the soft synthetic adjacency; the self-loop weight
//! is fixed at 1.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{pack, sample_non_edges, Edge, EdgeSplit, Graph};
use crate::seeds::SeedTree;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED: usize = 32;

/// Probability floor/ceiling applied before logarithms in the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

/// Encoder family of a link predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    Sage,
    Gcn,
    Mlp,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Sage, Architecture::Gcn, Architecture::Mlp];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Sage => "sage",
            Architecture::Gcn => "gcn",
            Architecture::Mlp => "mlp",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Architecture::Sage => 0,
            Architecture::Gcn => 1,
            Architecture::Mlp => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Architecture::Sage),
            1 => Some(Architecture::Gcn),
            2 => Some(Architecture::Mlp),
            _ => None,
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sage" | "graphsage" => Ok(Architecture::Sage),
            "gcn" => Ok(Architecture::Gcn),
            "mlp" => Ok(Architecture::Mlp),
            other => Err(Error::validation(format!(
                "unknown architecture {other:?} (expected sage, gcn or mlp)"
            ))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Named parameter tensors of one predictor, in canonical order.
#[derive(Debug, Clone)]
pub struct PredictorParams {
    pub architecture: Architecture,
    pub weights: Vec<(String, Tensor)>,
}

/// Fills a tensor with Glorot-uniform values in +/- sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl PredictorParams {
    /// Draws theta_0 for the given architecture from a seeded stream.
    pub fn init(
        architecture: Architecture,
        in_dim: usize,
        hidden: usize,
        embed: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut w = |r, c| glorot_uniform(r, c, rng);
        let weights = match architecture {
            Architecture::Sage => vec![
                ("w1_self".to_string(), w(in_dim, hidden)),
                ("w1_nb".to_string(), w(in_dim, hidden)),
                ("w2_self".to_string(), w(hidden, embed)),
                ("w2_nb".to_string(), w(hidden, embed)),
            ],
            Architecture::Gcn | Architecture::Mlp => vec![
                ("w1".to_string(), w(in_dim, hidden)),
                ("w2".to_string(), w(hidden, embed)),
            ],
        };
        PredictorParams {
            architecture,
            weights,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.iter().map(|(_, t)| t).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// True when every weight is finite and small enough that forward products
    /// cannot overflow; used as the divergence check during training.
    fn in_numeric_range(&self) -> bool {
        self.weights
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite() && v.abs() < 1e150))
    }

    /// Registers every weight as a trainable leaf, in canonical order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.weights
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_named_tensors(path, self.architecture.tag(), &self.weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tag, weights) = load_named_tensors(path)?;
        let architecture = Architecture::from_tag(tag)
            .ok_or_else(|| Error::validation(format!("unknown architecture tag {tag}")))?;
        Ok(PredictorParams {
            architecture,
            weights,
        })
    }
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 5] = b"FLNK1";

/// Tag value used for non-encoder tensors (the link-generator psi).
pub const TAG_PSI: u8 = 3;

/// Writes named tensors in the binary checkpoint container: magic "FLNK1",
/// a tag byte, then per tensor a name, shape and row-major f64-LE values.
pub fn save_named_tensors(path: &Path, tag: u8, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(tag);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a checkpoint written by [`save_named_tensors`].
pub fn load_named_tensors(path: &Path) -> Result<(u8, Vec<(String, Tensor)>)> {
    let name = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&name, e))?;
    let bad = |msg: &str| Error::validation(format!("{name}: {msg}"));

    if bytes.len() < 10 || &bytes[..5] != MAGIC {
        return Err(bad("not a FLNK1 checkpoint"));
    }
    let tag = bytes[5];
    let mut pos = 6;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(bad("truncated checkpoint"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let tname = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| bad("bad tensor name"))?;
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        let t = Tensor::from_shape_vec((rows, cols), data).map_err(|_| bad("bad tensor shape"))?;
        tensors.push((tname, t));
    }
    Ok((tag, tensors))
}

// ---------------------------------------------------------------------------
// encoders
// ---------------------------------------------------------------------------

/// Symmetrically normalized adjacency with self-loops,
/// `D^{-1/2} (A + I) D^{-1/2}`, with weighted degrees for soft adjacency.
fn gcn_normalize(tape: &mut Tape, adj: NodeId) -> NodeId {
    let (n, _) = tape.shape(adj);
    let eye = tape.constant(Tensor::eye(n));
    let a_hat = tape.add(adj, eye);
    let deg = tape.row_sum(a_hat);
    let root = tape.sqrt(deg);
    let inv = tape.recip(root);
    let inv_t = tape.transpose(inv);
    let outer = tape.matmul(inv, inv_t);
    tape.mul(a_hat, outer)
}

/// Weighted mean over neighbors: `(A h) / rowsum(A)`, zero rows guarded.
fn weighted_mean_agg(tape: &mut Tape, adj: NodeId, h: NodeId) -> NodeId {
    let (_, cols) = tape.shape(h);
    let s = tape.matmul(adj, h);
    let deg = tape.row_sum(adj);
    let guarded = tape.offset(deg, 1e-12);
    let inv = tape.recip(guarded);
    let spread = tape.broadcast_col(inv, cols);
    tape.mul(s, spread)
}

/// Two-layer encoder producing `N x H` embeddings on the tape.
///
/// - GCN: `Z = A_hat ReLU(A_hat X W1) W2`
/// - SAGE: per layer `ReLU(H Wself + mean_w(H) Wnb)`, second layer linear
/// - MLP: `Z = ReLU(X W1) W2`, adjacency ignored
pub fn encode(
    tape: &mut Tape,
    architecture: Architecture,
    weights: &[NodeId],
    adj: Option<NodeId>,
    x: NodeId,
) -> NodeId {
    match architecture {
        Architecture::Gcn => {
            let adj = adj.expect("gcn encoder requires an adjacency");
            let a_hat = gcn_normalize(tape, adj);
            let xw = tape.matmul(x, weights[0]);
            let h_pre = tape.matmul(a_hat, xw);
            let h = tape.relu(h_pre);
            let hw = tape.matmul(h, weights[1]);
            tape.matmul(a_hat, hw)
        }
        Architecture::Sage => {
            let adj = adj.expect("sage encoder requires an adjacency");
            let agg1 = weighted_mean_agg(tape, adj, x);
            let self1 = tape.matmul(x, weights[0]);
            let nb1 = tape.matmul(agg1, weights[1]);
            let pre1 = tape.add(self1, nb1);
            let h = tape.relu(pre1);
            let agg2 = weighted_mean_agg(tape, adj, h);
            let self2 = tape.matmul(h, weights[2]);
            let nb2 = tape.matmul(agg2, weights[3]);
            tape.add(self2, nb2)
        }
        Architecture::Mlp => {
            let xw = tape.matmul(x, weights[0]);
            let h = tape.relu(xw);
            tape.matmul(h, weights[1])
        }
    }
}

// ---------------------------------------------------------------------------
// decoder and loss
// ---------------------------------------------------------------------------

/// Dot-product logits for a pair list: `logit_k = z_u . z_v`, as `P x 1`.
pub fn pair_logits(tape: &mut Tape, z: NodeId, pairs: &[Edge]) -> NodeId {
    let us: Vec<usize> = pairs.iter().map(|&(u, _)| u).collect();
    let vs: Vec<usize> = pairs.iter().map(|&(_, v)| v).collect();
    let zu = tape.gather_rows(z, &us);
    let zv = tape.gather_rows(z, &vs);
    tape.row_dot(zu, zv)
}

/// Link probabilities `sigmoid(z_u . z_v)` without tape bookkeeping.
pub fn link_prob(z: &Tensor, pairs: &[Edge]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(u, v)| {
            let dot = z.row(u).dot(&z.row(v));
            1.0 / (1.0 + (-dot).exp())
        })
        .collect()
}

/// Mean binary cross-entropy of sigmoid(logits) against labels in [0, 1].
/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before the logs.
pub fn bce_loss(tape: &mut Tape, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
    let (m, _) = tape.shape(logits);
    if m == 0 || labels.is_empty() {
        return Err(Error::validation("cross-entropy over an empty pair list"));
    }
    assert_eq!(m, labels.len(), "bce_loss: label count mismatch");
    let y = tape.constant(Tensor::from_shape_vec((m, 1), labels.to_vec()).unwrap());
    let p_raw = tape.sigmoid(logits);
    let p = tape.clamp(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q_raw = tape.one_minus(p_raw);
    let q = tape.clamp(q_raw, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let ln_p = tape.ln(p);
    let ln_q = tape.ln(q);
    let y_comp = tape.one_minus(y);
    let pos_term = tape.mul(y, ln_p);
    let neg_term = tape.mul(y_comp, ln_q);
    let total = tape.add(pos_term, neg_term);
    let s = tape.sum(total);
    Ok(tape.scale(s, -1.0 / m as f64))
}

/// Builds the link-prediction loss for an encoder: positives labeled 1,
/// negatives 0, unless explicit soft labels are supplied for all pairs.
#[allow(clippy::too_many_arguments)]
pub fn link_loss(
    tape: &mut Tape,
    architecture: Architecture,
    weights: &[NodeId],
    adj: Option<NodeId>,
    x: NodeId,
    pos_pairs: &[Edge],
    neg_pairs: &[Edge],
    soft_labels: Option<&[f64]>,
) -> Result<NodeId> {
    if pos_pairs.is_empty() && neg_pairs.is_empty() {
        return Err(Error::validation("link_loss requires a non-empty pair list"));
    }
    let z = encode(tape, architecture, weights, adj, x);
    let pairs: Vec<Edge> = pos_pairs.iter().chain(neg_pairs).copied().collect();
    let labels: Vec<f64> = match soft_labels {
        Some(l) => {
            if l.len() != pairs.len() {
                return Err(Error::validation(format!(
                    "soft label count {} != pair count {}",
                    l.len(),
                    pairs.len()
                )));
            }
            l.to_vec()
        }
        None => {
            let mut l = vec![1.0; pos_pairs.len()];
            l.extend(std::iter::repeat_n(0.0, neg_pairs.len()));
            l
        }
    };
    let logits = pair_logits(tape, z, &pairs);
    bce_loss(tape, logits, &labels)
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction; L2 weight decay is added to the gradient.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    let mh = mi / bc1;
                    let vh = vi / bc2;
                    *pi -= self.lr * mh / (vh.sqrt() + self.eps);
                });
        }
    }
}

// ---------------------------------------------------------------------------
// training substrates
// ---------------------------------------------------------------------------

/// One epoch's supervision: positive pairs, negative pairs, and optional soft
/// labels covering their concatenation.
type EpochPairs = (Vec<Edge>, Vec<Edge>, Option<Vec<f64>>);

/// What a predictor trains on: a binary graph with split supervision, or a
/// weighted synthetic adjacency supervising through its own soft link values.
#[derive(Debug, Clone)]
pub enum Substrate {
    Split {
        adj: Tensor,
        x: Tensor,
        train_pos: Vec<Edge>,
        /// Full positive edge set; resampled negatives must avoid it.
        edge_set: HashSet<u64>,
    },
    Soft {
        adj: Tensor,
        x: Tensor,
        pairs_per_epoch: usize,
    },
}

impl Substrate {
    /// Message passing over train edges only; held-out edges never enter the
    /// adjacency.
    pub fn from_graph(g: &Graph, split: &EdgeSplit) -> Substrate {
        Substrate::Split {
            adj: crate::graph::adjacency_from_edges(g.n_nodes(), &split.train_pos),
            x: g.features().clone(),
            train_pos: split.train_pos.clone(),
            edge_set: g.edge_set(),
        }
    }

    /// A standalone binary graph (e.g. a sparsified synthetic artifact); all
    /// of its edges supervise training.
    pub fn from_binary(n: usize, edges: &[Edge], x: Tensor) -> Substrate {
        Substrate::Split {
            adj: crate::graph::adjacency_from_edges(n, edges),
            x,
            train_pos: edges.to_vec(),
            edge_set: edges.iter().map(|&(u, v)| pack(u, v)).collect(),
        }
    }

    /// A weighted soft adjacency; pairs are sampled uniformly each epoch and
    /// labeled by the adjacency entry.
    pub fn from_weighted(adj: Tensor, x: Tensor, pairs_per_epoch: usize) -> Substrate {
        Substrate::Soft {
            adj,
            x,
            pairs_per_epoch,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.x().nrows()
    }

    pub fn adj(&self) -> &Tensor {
        match self {
            Substrate::Split { adj, .. } | Substrate::Soft { adj, .. } => adj,
        }
    }

    pub fn x(&self) -> &Tensor {
        match self {
            Substrate::Split { x, .. } | Substrate::Soft { x, .. } => x,
        }
    }

    /// Supervision pairs for one epoch: positives + fresh negatives for a
    /// split substrate, uniform soft-labeled pairs for a weighted one.
    fn epoch_pairs(&self, rng: &mut ChaCha8Rng) -> Result<EpochPairs> {
        match self {
            Substrate::Split {
                train_pos,
                edge_set,
                ..
            } => {
                let negs = sample_non_edges(self.n_nodes(), edge_set, train_pos.len(), rng)?;
                Ok((train_pos.clone(), negs, None))
            }
            Substrate::Soft {
                adj,
                pairs_per_epoch,
                ..
            } => {
                let n = adj.nrows();
                let mut pairs = Vec::with_capacity(*pairs_per_epoch);
                let mut labels = Vec::with_capacity(*pairs_per_epoch);
                while pairs.len() < *pairs_per_epoch {
                    let u = rng.gen_range(0..n);
                    let v = rng.gen_range(0..n);
                    if u == v {
                        continue;
                    }
                    let (u, v) = (u.min(v), u.max(v));
                    pairs.push((u, v));
                    labels.push(adj[(u, v)]);
                }
                Ok((pairs, Vec::new(), Some(labels)))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Hyperparameters of plain (non-debiased) predictor training.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub embed: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.01,
            weight_decay: 5e-4,
            hidden: DEFAULT_HIDDEN,
            embed: DEFAULT_EMBED,
            seed: 0,
        }
    }
}

/// Full-batch training with Adam and L2 weight decay; negatives (or soft
/// pairs) are resampled every epoch from a seeded stream. Deterministic for a
/// fixed config.
pub fn train_predictor(
    substrate: &Substrate,
    architecture: Architecture,
    cfg: &TrainConfig,
) -> Result<PredictorParams> {
    if cfg.epochs == 0 {
        return Err(Error::validation("epochs must be >= 1"));
    }
    let tree = SeedTree::new(cfg.seed);
    let mut init_rng = tree.rng("init", 0);
    let mut params = PredictorParams::init(
        architecture,
        substrate.x().ncols(),
        cfg.hidden,
        cfg.embed,
        &mut init_rng,
    );
    let shapes: Vec<(usize, usize)> = params
        .weights
        .iter()
        .map(|(_, t)| (t.nrows(), t.ncols()))
        .collect();
    let mut adam = Adam::new(cfg.lr, &shapes);

    for epoch in 0..cfg.epochs {
        let mut rng = tree.rng("negatives", epoch as u64);
        let (pos, neg, soft) = substrate.epoch_pairs(&mut rng)?;

        let mut tape = Tape::new();
        let adj = tape.constant(substrate.adj().clone());
        let x = tape.constant(substrate.x().clone());
        let leaves = params.leaves(&mut tape);
        let loss = link_loss(
            &mut tape,
            architecture,
            &leaves,
            Some(adj),
            x,
            &pos,
            &neg,
            soft.as_deref(),
        )?;
        let loss_val = tape.scalar(loss);
        if !loss_val.is_finite() {
            return Err(Error::runtime(format!(
                "training diverged at epoch {epoch}: loss is not finite"
            )));
        }
        let grads = tape.grad(loss, &leaves);

        let mut tensors: Vec<Tensor> = params.weights.iter().map(|(_, t)| t.clone()).collect();
        let decayed: Vec<Tensor> = grads
            .iter()
            .zip(&tensors)
            .map(|(g, p)| g + &(p * cfg.weight_decay))
            .collect();
        adam.step(&mut tensors, &decayed);
        for ((_, slot), t) in params.weights.iter_mut().zip(tensors) {
            *slot = t;
        }
        if !params.in_numeric_range() {
            return Err(Error::runtime(format!(
                "training diverged at epoch {epoch}: parameters left the numeric range"
            )));
        }
    }
    Ok(params)
}

/// Embeddings of a trained predictor on a substrate (forward only).
pub fn embed(params: &PredictorParams, substrate: &Substrate) -> Tensor {
    let mut tape = Tape::new();
    let adj = tape.constant(substrate.adj().clone());
    let x = tape.constant(substrate.x().clone());
    let leaves = params.leaves(&mut tape);
    let z = encode(&mut tape, params.architecture, &leaves, Some(adj), x);
    tape.value(z).clone()
}
