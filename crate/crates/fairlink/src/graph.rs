//! Attributed undirected graphs, benchmark generation, dataset I/O and edge
//! splitting.
//!
//! Graphs are immutable after construction: a canonical `u < v` edge list, an
//! `N x D` feature matrix and one categorical sensitive attribute per node.
//! Dense adjacency materialization is allowed up to desk scale (N <= 5000).

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seeds::SeedTree;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

/// Undirected node pair, canonically ordered `u < v`.
pub type Edge = (usize, usize);

/// Immutable attributed graph with categorical sensitive labels.
#[derive(Debug, Clone)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<Edge>,
    features: Tensor,
    sensitive: Vec<usize>,
    group_count: usize,
}

impl Graph {
    /// Builds a validated graph. Edges are canonicalized to `u < v`, sorted
    /// and deduplicated (reversed duplicates collapse to one undirected edge).
    pub fn new(edges: Vec<(usize, usize)>, features: Tensor, sensitive: Vec<usize>) -> Result<Self> {
        let n_nodes = features.nrows();
        if sensitive.len() != n_nodes {
            return Err(Error::validation(format!(
                "sensitive vector has {} entries for {} nodes",
                sensitive.len(),
                n_nodes
            )));
        }
        if n_nodes == 0 {
            return Err(Error::validation("graph has no nodes"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature matrix contains non-finite values"));
        }

        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u == v {
                return Err(Error::validation(format!("self-loop at node {u}")));
            }
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::validation(format!(
                    "edge ({u}, {v}) references a node >= {n_nodes}"
                )));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();

        let group_count = match sensitive.iter().max() {
            Some(&m) => m + 1,
            None => return Err(Error::validation("graph has no nodes")),
        };
        let mut seen = vec![false; group_count];
        for &s in &sensitive {
            seen[s] = true;
        }
        if let Some(missing) = seen.iter().position(|&x| !x) {
            return Err(Error::validation(format!(
                "group ids must be contiguous: group {missing} has no nodes"
            )));
        }

        Ok(Graph {
            n_nodes,
            edges: canon,
            features,
            sensitive,
            group_count,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `u < v` edge list, lexicographically sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn sensitive(&self) -> &[usize] {
        &self.sensitive
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Group with the fewest nodes (ties broken by smaller id); the protected
    /// group convention for reporting.
    pub fn minority_group(&self) -> usize {
        let mut counts = vec![0usize; self.group_count];
        for &s in &self.sensitive {
            counts[s] += 1;
        }
        counts
            .iter()
            .enumerate()
            .min_by_key(|(g, c)| (**c, *g))
            .map(|(g, _)| g)
            .unwrap_or(0)
    }

    /// Packed set of canonical edges for O(1) membership tests.
    pub fn edge_set(&self) -> HashSet<u64> {
        self.edges.iter().map(|&(u, v)| pack(u, v)).collect()
    }

    /// Dense symmetric 0/1 adjacency with zero diagonal.
    pub fn dense_adjacency(&self) -> Tensor {
        adjacency_from_edges(self.n_nodes, &self.edges)
    }
}

/// Packs a canonical edge into a set key.
pub fn pack(u: usize, v: usize) -> u64 {
    debug_assert!(u < v);
    ((u as u64) << 32) | v as u64
}

/// Dense symmetric adjacency for an arbitrary canonical edge list.
pub fn adjacency_from_edges(n: usize, edges: &[Edge]) -> Tensor {
    let mut a = Tensor::zeros((n, n));
    for &(u, v) in edges {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    a
}

/// SHA-256 over the canonical serialization of a graph, as lowercase hex.
pub fn graph_checksum(g: &Graph) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(edges_to_tsv(g.edges()).as_bytes());
    hasher.update(features_to_csv(g.features()).as_bytes());
    hasher.update(sensitive_to_csv(g.sensitive()).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// dataset I/O
// ---------------------------------------------------------------------------

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a graph from an edge list (`u<TAB>v` per line, `#` comments), a
/// feature CSV (row i = node i) and a sensitive CSV (one group id per line).
pub fn load_graph(edge_path: &Path, feature_path: &Path, sensitive_path: &Path) -> Result<Graph> {
    let features = load_features(feature_path)?;
    let sensitive = load_sensitive(sensitive_path)?;
    let edges = load_edge_list(edge_path)?;
    Graph::new(edges, features, sensitive)
}

/// Parses an edge list file; returns raw (possibly duplicated) pairs.
pub fn load_edge_list(path: &Path) -> Result<Vec<Edge>> {
    let text = read_to_string(path)?;
    let name = path.display().to_string();
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(Error::parse(&name, lineno + 1, "expected exactly two fields"));
            }
        };
        let u: usize = u
            .parse()
            .map_err(|_| Error::parse(&name, lineno + 1, format!("bad node index {u:?}")))?;
        let v: usize = v
            .parse()
            .map_err(|_| Error::parse(&name, lineno + 1, format!("bad node index {v:?}")))?;
        if u == v {
            return Err(Error::validation(format!(
                "{name} line {}: self-loop at node {u}",
                lineno + 1
            )));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Parses a headerless CSV of real features, one row per node.
pub fn load_features(path: &Path) -> Result<Tensor> {
    let text = read_to_string(path)?;
    let name = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(&name, lineno + 1, format!("bad real value {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "{name} line {}: non-finite feature value",
                    lineno + 1
                )));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    &name,
                    lineno + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::validation(format!("{name}: empty feature file")));
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / d;
    Tensor::from_shape_vec((n, d), flat)
        .map_err(|e| Error::validation(format!("{name}: {e}")))
}

/// Parses a CSV of one integer group id per line.
pub fn load_sensitive(path: &Path) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|_| Error::parse(&name, lineno + 1, format!("bad group id {line:?}")))?;
        out.push(v);
    }
    Ok(out)
}

/// Canonical edge list text: one `u<TAB>v` line per edge, sorted.
pub fn edges_to_tsv(edges: &[Edge]) -> String {
    let mut out = String::new();
    for &(u, v) in edges {
        let _ = writeln!(out, "{u}\t{v}");
    }
    out
}

/// Feature CSV text with shortest round-trip float formatting.
pub fn features_to_csv(features: &Tensor) -> String {
    let mut out = String::new();
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

pub fn sensitive_to_csv(sensitive: &[usize]) -> String {
    let mut out = String::new();
    for s in sensitive {
        let _ = writeln!(out, "{s}");
    }
    out
}

/// Writes `edges.tsv`, `features.csv` and `sensitive.csv` into a directory.
pub fn save_graph(g: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))
    };
    write("edges.tsv", edges_to_tsv(g.edges()))?;
    write("features.csv", features_to_csv(g.features()))?;
    write("sensitive.csv", sensitive_to_csv(g.sensitive()))
}

/// Loads a graph saved by [`save_graph`].
pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    load_graph(
        &dir.join("edges.tsv"),
        &dir.join("features.csv"),
        &dir.join("sensitive.csv"),
    )
}

// ---------------------------------------------------------------------------
// stochastic block model benchmark
// ---------------------------------------------------------------------------

/// Configuration of the planted-bias benchmark generator.
#[derive(Debug, Clone)]
pub struct SbmConfig {
    pub n_nodes: usize,
    pub group_sizes: Vec<usize>,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    pub feature_signal: f64,
    pub seed: u64,
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::validation("group_sizes must all be >= 1"));
        }
        if self.group_sizes.iter().sum::<usize>() != self.n_nodes {
            return Err(Error::validation(format!(
                "group_sizes sum {} != n_nodes {}",
                self.group_sizes.iter().sum::<usize>(),
                self.n_nodes
            )));
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.feature_dim == 0 {
            return Err(Error::validation("feature_dim must be >= 1"));
        }
        if !self.feature_signal.is_finite() || self.feature_signal < 0.0 {
            return Err(Error::validation("feature_signal must be >= 0"));
        }
        Ok(())
    }
}

/// Generates a stochastic block model graph with group-separated Gaussian
/// features.
///
/// Edge draws are organized per block class (one seeded stream per class,
/// keyed by the class kind and the sorted pair of group sizes, with pairs
/// enumerated by within-group rank). Permuting groups of distinct sizes in
/// the config therefore yields the relabeled version of the same graph.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let tree = SeedTree::new(cfg.seed);
    let k = cfg.group_sizes.len();

    let offsets: Vec<usize> = cfg
        .group_sizes
        .iter()
        .scan(0usize, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();

    let mut edges: Vec<Edge> = Vec::new();
    let mut class_occurrence: std::collections::HashMap<String, u64> =
        std::collections::HashMap::new();
    let mut class_rng = |key: String| -> ChaCha8Rng {
        let occ = class_occurrence.entry(key.clone()).or_insert(0);
        let rng = tree.rng(&format!("sbm-edges/{key}/{occ}"), 0);
        *occ += 1;
        rng
    };

    // intra-group classes, in group order
    for (&size, &off) in cfg.group_sizes.iter().zip(&offsets) {
        let mut rng = class_rng(format!("intra/{size}"));
        for r1 in 0..size {
            for r2 in (r1 + 1)..size {
                if rng.gen::<f64>() < cfg.p_intra {
                    edges.push((off + r1, off + r2));
                }
            }
        }
    }
    // inter-group classes, in (i, j) order with the smaller-size group first
    for i in 0..k {
        for j in (i + 1)..k {
            let (si, sj) = (cfg.group_sizes[i], cfg.group_sizes[j]);
            let (first, second) = if sj < si { (j, i) } else { (i, j) };
            let (sa, sb) = (cfg.group_sizes[first], cfg.group_sizes[second]);
            let mut rng = class_rng(format!("inter/{sa}/{sb}"));
            for ra in 0..sa {
                for rb in 0..sb {
                    if rng.gen::<f64>() < cfg.p_inter {
                        let (u, v) = (offsets[first] + ra, offsets[second] + rb);
                        edges.push((u.min(v), u.max(v)));
                    }
                }
            }
        }
    }

    // unit-variance Gaussian features; group means spread linearly so that a
    // two-group config puts them at +/- feature_signal / 2
    let mut frng = tree.rng("sbm-features", 0);
    let mut features = Tensor::zeros((cfg.n_nodes, cfg.feature_dim));
    let mut sensitive = vec![0usize; cfg.n_nodes];
    for (g, (&size, &off)) in cfg.group_sizes.iter().zip(&offsets).enumerate() {
        let mean = if k > 1 {
            cfg.feature_signal * (g as f64 / (k - 1) as f64 - 0.5)
        } else {
            0.0
        };
        for node in off..off + size {
            sensitive[node] = g;
            for d in 0..cfg.feature_dim {
                let z: f64 = StandardNormal.sample(&mut frng);
                features[(node, d)] = mean + z;
            }
        }
    }

    Graph::new(edges, features, sensitive)
}

// ---------------------------------------------------------------------------
// edge splitting and negative sampling
// ---------------------------------------------------------------------------

/// Train/val/test partition of the edge set plus held-out negative pairs.
#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub train_neg: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub seed: u64,
}

impl EdgeSplit {
    pub fn n_pos(&self) -> usize {
        self.train_pos.len() + self.val_pos.len() + self.test_pos.len()
    }
}

/// Uniform non-edge pairs, sampled without replacement.
///
/// Falls back from rejection sampling to full enumeration once the request
/// covers more than half of the available non-edges; both paths draw from the
/// same stream, and the path choice is a pure function of the inputs.
pub fn sample_non_edges(
    n: usize,
    edge_set: &HashSet<u64>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Edge>> {
    let total_pairs = n * (n - 1) / 2;
    let available = total_pairs - edge_set.len();
    if count > available {
        return Err(Error::validation(format!(
            "insufficient non-edges: requested {count}, only {available} exist"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if count * 2 > available {
        let mut pool: Vec<Edge> = Vec::with_capacity(available);
        for u in 0..n {
            for v in (u + 1)..n {
                if !edge_set.contains(&pack(u, v)) {
                    pool.push((u, v));
                }
            }
        }
        shuffle(&mut pool, rng);
        pool.truncate(count);
        Ok(pool)
    } else {
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u == v {
                continue;
            }
            let key = pack(u.min(v), u.max(v));
            if edge_set.contains(&key) || !chosen.insert(key) {
                continue;
            }
            out.push((u.min(v), u.max(v)));
        }
        Ok(out)
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Partitions the edge set by a seeded shuffle and samples matched negatives.
///
/// Positive counts are `floor(ratio * |E|)` for val and test with the
/// remainder assigned to train; each negative list holds
/// `round(neg_ratio * positives)` pairs drawn uniformly from non-edges
/// without replacement.
pub fn split_edges(
    g: &Graph,
    ratios: (f64, f64, f64),
    neg_ratio: f64,
    seed: u64,
) -> Result<EdgeSplit> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 {
        return Err(Error::validation("split ratios must be positive"));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split ratios must sum to 1, got {}",
            tr + va + te
        )));
    }
    if !neg_ratio.is_finite() || neg_ratio <= 0.0 {
        return Err(Error::validation("neg_ratio must be > 0"));
    }

    let tree = SeedTree::new(seed);
    let mut rng = tree.rng("split", 0);
    let mut edges = g.edges().to_vec();
    shuffle(&mut edges, &mut rng);

    let m = edges.len();
    let n_val = (va * m as f64).floor() as usize;
    let n_test = (te * m as f64).floor() as usize;
    let n_train = m - n_val - n_test;

    let train_pos = edges[..n_train].to_vec();
    let val_pos = edges[n_train..n_train + n_val].to_vec();
    let test_pos = edges[n_train + n_val..].to_vec();

    let want = |pos: usize| -> usize { (neg_ratio * pos as f64).round() as usize };
    let (w_tr, w_va, w_te) = (want(n_train), want(n_val), want(n_test));
    let edge_set = g.edge_set();
    let mut nrng = tree.rng("split-negatives", 0);
    let all_neg = sample_non_edges(g.n_nodes(), &edge_set, w_tr + w_va + w_te, &mut nrng)?;

    Ok(EdgeSplit {
        train_pos,
        val_pos,
        test_pos,
        train_neg: all_neg[..w_tr].to_vec(),
        val_neg: all_neg[w_tr..w_tr + w_va].to_vec(),
        test_neg: all_neg[w_tr + w_va..].to_vec(),
        seed,
    })
}

/// Writes the six split lists as TSV files into a directory.
pub fn save_split(split: &EdgeSplit, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let parts: [(&str, &[Edge]); 6] = [
        ("train_pos.tsv", &split.train_pos),
        ("val_pos.tsv", &split.val_pos),
        ("test_pos.tsv", &split.test_pos),
        ("train_neg.tsv", &split.train_neg),
        ("val_neg.tsv", &split.val_neg),
        ("test_neg.tsv", &split.test_neg),
    ];
    for (name, list) in parts {
        let p = dir.join(name);
        std::fs::write(&p, edges_to_tsv(list)).map_err(|e| Error::io(p.display().to_string(), e))?;
    }
    let p = dir.join("split.meta");
    std::fs::write(&p, format!("seed = {}\n", split.seed))
        .map_err(|e| Error::io(p.display().to_string(), e))
}

/// Loads a split saved by [`save_split`].
pub fn load_split(dir: &Path) -> Result<EdgeSplit> {
    let list = |name: &str| -> Result<Vec<Edge>> { load_edge_list(&dir.join(name)) };
    let meta = read_to_string(&dir.join("split.meta"))?;
    let seed = meta
        .lines()
        .find_map(|l| l.strip_prefix("seed = "))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::validation("split.meta missing seed"))?;
    Ok(EdgeSplit {
        train_pos: list("train_pos.tsv")?,
        val_pos: list("val_pos.tsv")?,
        test_pos: list("test_pos.tsv")?,
        train_neg: list("train_neg.tsv")?,
        val_neg: list("val_neg.tsv")?,
        test_neg: list("test_neg.tsv")?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::TempDir;

    fn write_file(dir: &TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    fn toy_files(dir: &TempDir, edges: &str) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        (
            write_file(dir, "edges.tsv", edges),
            write_file(dir, "features.csv", "0.5,1.0\n-0.25,0\n2,3\n"),
            write_file(dir, "sensitive.csv", "0\n0\n1\n"),
        )
    }

    #[test]
    fn load_toy_graph() {
        let dir = TempDir::new().unwrap();
        let (e, f, s) = toy_files(&dir, "0\t1\n1\t2\n");
        let g = load_graph(&e, &f, &s).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.group_count(), 2);
        assert_eq!(g.minority_group(), 1);
    }

    #[test]
    fn self_loop_is_rejected() {
        let dir = TempDir::new().unwrap();
        let (e, f, s) = toy_files(&dir, "0\t1\n2\t2\n");
        let err = load_graph(&e, &f, &s).unwrap_err();
        assert!(err.to_string().contains("self-loop"), "{err}");
    }

    #[test]
    fn reversed_duplicate_collapses() {
        let dir = TempDir::new().unwrap();
        let (e, f, s) = toy_files(&dir, "0\t1\n1\t0\n");
        let g = load_graph(&e, &f, &s).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = TempDir::new().unwrap();
        let (e, f, s) = toy_files(&dir, "0\t1\nnope\n");
        let err = load_graph(&e, &f, &s).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn out_of_range_index_rejected() {
        let dir = TempDir::new().unwrap();
        let (e, f, s) = toy_files(&dir, "0\t9\n");
        let err = load_graph(&e, &f, &s).unwrap_err();
        assert!(err.to_string().contains(">= 3"), "{err}");
    }

    #[test]
    fn non_finite_feature_rejected() {
        let dir = TempDir::new().unwrap();
        let e = write_file(&dir, "e.tsv", "0\t1\n");
        let f = write_file(&dir, "f.csv", "0.5,inf\n1,2\n");
        let s = write_file(&dir, "s.csv", "0\n1\n");
        let err = load_graph(&e, &f, &s).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn gap_in_group_ids_rejected() {
        let dir = TempDir::new().unwrap();
        let e = write_file(&dir, "e.tsv", "0\t1\n");
        let f = write_file(&dir, "f.csv", "0.5\n1\n");
        let s = write_file(&dir, "s.csv", "0\n2\n");
        let err = load_graph(&e, &f, &s).unwrap_err();
        assert!(err.to_string().contains("contiguous"), "{err}");
    }

    #[test]
    fn save_load_round_trip_is_byte_exact() {
        let cfg = SbmConfig {
            n_nodes: 30,
            group_sizes: vec![14, 16],
            p_intra: 0.4,
            p_inter: 0.1,
            feature_dim: 3,
            feature_signal: 0.8,
            seed: 11,
        };
        let g = generate_sbm(&cfg).unwrap();
        let dir = TempDir::new().unwrap();
        save_graph(&g, dir.path()).unwrap();
        let edges1 = std::fs::read(dir.path().join("edges.tsv")).unwrap();
        let feats1 = std::fs::read(dir.path().join("features.csv")).unwrap();

        let g2 = load_graph_dir(dir.path()).unwrap();
        let dir2 = TempDir::new().unwrap();
        save_graph(&g2, dir2.path()).unwrap();
        assert_eq!(edges1, std::fs::read(dir2.path().join("edges.tsv")).unwrap());
        assert_eq!(feats1, std::fs::read(dir2.path().join("features.csv")).unwrap());
        assert_eq!(g.sensitive(), g2.sensitive());
    }

    #[test]
    fn sbm_zero_probability_gives_empty_graph() {
        let cfg = SbmConfig {
            n_nodes: 20,
            group_sizes: vec![10, 10],
            p_intra: 0.0,
            p_inter: 0.0,
            feature_dim: 2,
            feature_signal: 1.0,
            seed: 3,
        };
        assert_eq!(generate_sbm(&cfg).unwrap().n_edges(), 0);
    }

    #[test]
    fn sbm_probability_one_gives_complete_graph() {
        let cfg = SbmConfig {
            n_nodes: 40,
            group_sizes: vec![25, 15],
            p_intra: 1.0,
            p_inter: 1.0,
            feature_dim: 2,
            feature_signal: 0.0,
            seed: 3,
        };
        assert_eq!(generate_sbm(&cfg).unwrap().n_edges(), 40 * 39 / 2);
    }

    #[test]
    fn sbm_edge_count_matches_expectation() {
        // E = 2 C(150,2) p_intra + 150^2 p_inter = 2235 + 225 = 2460,
        // sigma = sqrt(sum p(1-p)) ~ 47.3; assert the seeded draw within 4 sigma.
        let cfg = SbmConfig {
            n_nodes: 300,
            group_sizes: vec![150, 150],
            p_intra: 0.1,
            p_inter: 0.01,
            feature_dim: 4,
            feature_signal: 1.0,
            seed: 7,
        };
        let g = generate_sbm(&cfg).unwrap();
        let mean = 2.0 * (150.0 * 149.0 / 2.0) * 0.1 + 150.0 * 150.0 * 0.01;
        let sigma =
            (2.0f64 * (150.0 * 149.0 / 2.0) * 0.1 * 0.9 + 150.0 * 150.0 * 0.01 * 0.99).sqrt();
        let got = g.n_edges() as f64;
        assert!(
            (got - mean).abs() <= 4.0 * sigma,
            "edge count {got} outside {mean} +/- {:.1}",
            4.0 * sigma
        );
    }

    #[test]
    fn sbm_is_deterministic() {
        let cfg = SbmConfig {
            n_nodes: 50,
            group_sizes: vec![20, 30],
            p_intra: 0.3,
            p_inter: 0.05,
            feature_dim: 3,
            feature_signal: 1.0,
            seed: 42,
        };
        let a = generate_sbm(&cfg).unwrap();
        let b = generate_sbm(&cfg).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn sbm_group_permutation_is_isomorphic() {
        // distinct sizes permuted: group g of cfg1 corresponds to group 1-g of
        // cfg2, and per-group sorted degree sequences must match exactly
        let base = SbmConfig {
            n_nodes: 90,
            group_sizes: vec![30, 60],
            p_intra: 0.25,
            p_inter: 0.05,
            feature_dim: 2,
            feature_signal: 0.5,
            seed: 9,
        };
        let mut permuted = base.clone();
        permuted.group_sizes = vec![60, 30];
        let g1 = generate_sbm(&base).unwrap();
        let g2 = generate_sbm(&permuted).unwrap();
        assert_eq!(g1.n_edges(), g2.n_edges());

        let degseq = |g: &Graph, group: usize| -> Vec<usize> {
            let mut deg = vec![0usize; g.n_nodes()];
            for &(u, v) in g.edges() {
                deg[u] += 1;
                deg[v] += 1;
            }
            let mut d: Vec<usize> = (0..g.n_nodes())
                .filter(|&i| g.sensitive()[i] == group)
                .map(|i| deg[i])
                .collect();
            d.sort_unstable();
            d
        };
        assert_eq!(degseq(&g1, 0), degseq(&g2, 1));
        assert_eq!(degseq(&g1, 1), degseq(&g2, 0));
    }

    fn sbm_100() -> Graph {
        generate_sbm(&SbmConfig {
            n_nodes: 100,
            group_sizes: vec![50, 50],
            p_intra: 0.2,
            p_inter: 0.05,
            feature_dim: 3,
            feature_signal: 1.0,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let g = sbm_100();
        let m = g.n_edges();
        let s = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 13).unwrap();
        assert_eq!(s.val_pos.len(), (0.1 * m as f64).floor() as usize);
        assert_eq!(s.test_pos.len(), (0.1 * m as f64).floor() as usize);
        assert_eq!(s.train_pos.len(), m - s.val_pos.len() - s.test_pos.len());
        assert_eq!(s.train_neg.len(), s.train_pos.len());
        assert_eq!(s.val_neg.len(), s.val_pos.len());
        assert_eq!(s.test_neg.len(), s.test_pos.len());
    }

    #[test]
    fn split_is_deterministic() {
        let g = sbm_100();
        let a = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 13).unwrap();
        let b = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 13).unwrap();
        assert_eq!(a.train_pos, b.train_pos);
        assert_eq!(a.test_neg, b.test_neg);
    }

    #[test]
    fn split_partitions_edges_and_avoids_edges_in_negatives() {
        let g = sbm_100();
        let s = split_edges(&g, (0.6, 0.2, 0.2), 1.0, 99).unwrap();
        let mut all: Vec<Edge> = s
            .train_pos
            .iter()
            .chain(&s.val_pos)
            .chain(&s.test_pos)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, g.edges());

        let edge_set = g.edge_set();
        let mut seen = HashSet::new();
        for &(u, v) in s.train_neg.iter().chain(&s.val_neg).chain(&s.test_neg) {
            assert!(u < v, "negatives must be canonical");
            assert!(!edge_set.contains(&pack(u, v)), "negative is a real edge");
            assert!(seen.insert(pack(u, v)), "duplicate negative");
        }
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let cfg = SbmConfig {
            n_nodes: 12,
            group_sizes: vec![6, 6],
            p_intra: 1.0,
            p_inter: 1.0,
            feature_dim: 2,
            feature_signal: 0.0,
            seed: 1,
        };
        let g = generate_sbm(&cfg).unwrap();
        let err = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 4).unwrap_err();
        assert!(err.to_string().contains("insufficient non-edges"), "{err}");
    }

    #[test]
    fn bad_ratios_rejected() {
        let g = sbm_100();
        assert!(split_edges(&g, (0.5, 0.2, 0.2), 1.0, 1).is_err());
        assert!(split_edges(&g, (1.0, 0.0, 0.0), 1.0, 1).is_err());
        assert!(split_edges(&g, (0.8, 0.1, 0.1), 0.0, 1).is_err());
    }

    #[test]
    fn split_round_trip() {
        let g = sbm_100();
        let s = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 13).unwrap();
        let dir = TempDir::new().unwrap();
        save_split(&s, dir.path()).unwrap();
        let r = load_split(dir.path()).unwrap();
        assert_eq!(s.train_pos, r.train_pos);
        assert_eq!(s.val_neg, r.val_neg);
        assert_eq!(s.seed, r.seed);
    }
}
