//! Reverse-mode differentiation over dense 64-bit tensors.
//!
//! The engine records an eagerly-evaluated expression graph (a tape). The
//! backward pass does not accumulate raw numbers: it appends new nodes to the
//! same tape, so every gradient is itself a differentiable expression. Calling
//! [`Tape::grad_graph`] on a scalar built from gradient nodes therefore yields
//! mixed second-order derivatives (the meta-gradients needed when an objective
//! contains model gradients).
//!
//! The operator set is closed and fixed: every operator has a derivative rule
//! expressed in terms of the same operator set, and a finite-difference test.
//! Adding an operator means adding both.
//!
//! Conventions:
//! - everything is a row-major `Array2<f64>`; scalars are `1x1`, column
//!   vectors `n x 1`;
//! - shape mismatches and non-scalar differentiation targets are programmer
//!   errors and panic;
//! - in debug builds every produced value is checked to be finite.

use ndarray::{s, Array2};
use std::rc::Rc;

/// Dense 64-bit tensor. Scalars are `1x1`.
pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Index list shared between a gather/scatter node and its adjoint.
type Indices = Rc<Vec<usize>>;

// Operand scalars (offsets, clamp bounds, broadcast extents) are evaluated
// eagerly at record time; they stay in the op so diagnostics can print the
// full recorded expression.
#[allow(dead_code)]
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Clamp(NodeId, f64, f64),
    // Piecewise-constant masks used by derivative rules; their own derivative
    // is zero everywhere it exists, so they terminate gradient flow.
    PosMask(NodeId),
    SignMask(NodeId),
    RangeMask(NodeId, f64, f64),
    Sum(NodeId),
    RowSum(NodeId),
    ColSum(NodeId),
    BroadcastScalar(NodeId, usize, usize),
    BroadcastCol(NodeId, usize),
    BroadcastRow(NodeId, usize),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Indices),
    ScatterRows(NodeId, Indices, usize),
    /// Pair vector `p` (len P) into a symmetric `n x n` matrix: value `p[k]`
    /// is added at `(us[k], vs[k])` and `(vs[k], us[k])`; diagonal stays zero.
    SymmetrizePairs(NodeId, Indices, Indices, usize),
    /// Adjoint of `SymmetrizePairs`: `out[k] = m[us[k], vs[k]] + m[vs[k], us[k]]`.
    GatherPairsSym(NodeId, Indices, Indices),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Eagerly evaluated expression tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.nrows(), t.ncols())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        self.val(id)
    }

    /// Branch pattern of every kinked operator (ReLU, Abs, Clamp) in
    /// recording order. Two evaluations of the same expression with equal
    /// signatures lie on one smooth piece, which is what a finite-difference
    /// probe of a derivative requires.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) | Op::Abs(a) => {
                    sig.extend(self.nodes[a.0].value.iter().map(|&v| v > 0.0));
                }
                Op::Clamp(a, lo, hi) => {
                    sig.extend(self.nodes[a.0].value.iter().map(|&v| v > lo && v < hi));
                }
                _ => {}
            }
        }
        sig
    }

    /// Forward value of a `1x1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.val(id);
        assert_eq!(dims(v), (1, 1), "scalar() on a non-scalar node");
        v[(0, 0)]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        dims(self.val(id))
    }

    // ---- leaves ------------------------------------------------------

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn scalar_constant(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::from_elem((1, 1), value))
    }

    // ---- elementwise -------------------------------------------------

    fn binary_shapes(&self, name: &str, a: NodeId, b: NodeId) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{name}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_shapes("add", a, b);
        let v = self.val(a) + self.val(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_shapes("sub", a, b);
        let v = self.val(a) - self.val(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_shapes("mul", a, b);
        let v = self.val(a) * self.val(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.val(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    /// Elementwise `a + c`.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.val(a) + c;
        self.push(Op::Offset(a, c), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).mapv(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).mapv(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).mapv(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).mapv(f64::recip);
        self.push(Op::Recip(a), v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.val(a).mapv(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    fn pos_mask(&mut self, a: NodeId) -> NodeId {
        // ReLU subgradient at 0 is defined as 0, hence the strict inequality.
        let v = self.val(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.push(Op::PosMask(a), v)
    }

    fn sign_mask(&mut self, a: NodeId) -> NodeId {
        // |x| subgradient at the tie is 0.
        let v = self
            .val(a)
            .mapv(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
        self.push(Op::SignMask(a), v)
    }

    fn range_mask(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self
            .val(a)
            .mapv(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
        self.push(Op::RangeMask(a, lo, hi), v)
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul: inner dimensions {ar}x{ac} vs {br}x{bc}");
        let v = self.val(a).dot(self.val(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    // ---- reductions and broadcasts -------------------------------------

    /// Sum of all elements, as a `1x1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::from_elem((1, 1), self.val(a).sum());
        self.push(Op::Sum(a), v)
    }

    /// `n x m -> n x 1` row sums.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let src = self.val(a);
        let mut v = Tensor::zeros((src.nrows(), 1));
        for (i, row) in src.rows().into_iter().enumerate() {
            v[(i, 0)] = row.sum();
        }
        self.push(Op::RowSum(a), v)
    }

    /// `n x m -> 1 x m` column sums.
    pub fn col_sum(&mut self, a: NodeId) -> NodeId {
        let src = self.val(a);
        let mut v = Tensor::zeros((1, src.ncols()));
        for (j, col) in src.columns().into_iter().enumerate() {
            v[(0, j)] = col.sum();
        }
        self.push(Op::ColSum(a), v)
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.shape(a), (1, 1), "broadcast_scalar: input must be 1x1");
        let v = Tensor::from_elem((rows, cols), self.val(a)[(0, 0)]);
        self.push(Op::BroadcastScalar(a, rows, cols), v)
    }

    /// `n x 1 -> n x m` by repeating the column.
    pub fn broadcast_col(&mut self, a: NodeId, cols: usize) -> NodeId {
        let (n, c) = self.shape(a);
        assert_eq!(c, 1, "broadcast_col: input must be a column vector");
        let src = self.val(a);
        let mut v = Tensor::zeros((n, cols));
        for i in 0..n {
            let x = src[(i, 0)];
            v.row_mut(i).fill(x);
        }
        self.push(Op::BroadcastCol(a, cols), v)
    }

    /// `1 x m -> n x m` by repeating the row.
    pub fn broadcast_row(&mut self, a: NodeId, rows: usize) -> NodeId {
        let (r, m) = self.shape(a);
        assert_eq!(r, 1, "broadcast_row: input must be a row vector");
        let src = self.val(a);
        let mut v = Tensor::zeros((rows, m));
        for mut row in v.rows_mut() {
            row.assign(&src.row(0));
        }
        self.push(Op::BroadcastRow(a, rows), v)
    }

    // ---- structure ----------------------------------------------------

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ar, br, "concat_cols: row mismatch {ar} vs {br}");
        let mut v = Tensor::zeros((ar, ac + bc));
        v.slice_mut(s![.., ..ac]).assign(self.val(a));
        v.slice_mut(s![.., ac..]).assign(self.val(b));
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let (_, ac) = self.shape(a);
        assert!(start < end && end <= ac, "slice_cols: bad range {start}..{end} of {ac}");
        let v = self.val(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start, end), v)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let (n, m) = self.shape(a);
        assert!(indices.iter().all(|&i| i < n), "gather_rows: index out of range");
        let src = self.val(a);
        let mut v = Tensor::zeros((indices.len(), m));
        for (k, &i) in indices.iter().enumerate() {
            v.row_mut(k).assign(&src.row(i));
        }
        self.push(Op::GatherRows(a, Rc::new(indices.to_vec())), v)
    }

    fn gather_rows_rc(&mut self, a: NodeId, indices: Indices) -> NodeId {
        let src = self.val(a);
        let mut v = Tensor::zeros((indices.len(), src.ncols()));
        for (k, &i) in indices.iter().enumerate() {
            v.row_mut(k).assign(&src.row(i));
        }
        self.push(Op::GatherRows(a, indices), v)
    }

    /// Rows of `a` added into an `n_rows x m` zero matrix at `indices`
    /// (duplicate indices accumulate).
    pub fn scatter_rows(&mut self, a: NodeId, indices: &[usize], n_rows: usize) -> NodeId {
        self.scatter_rows_rc(a, Rc::new(indices.to_vec()), n_rows)
    }

    fn scatter_rows_rc(&mut self, a: NodeId, indices: Indices, n_rows: usize) -> NodeId {
        let (r, m) = self.shape(a);
        assert_eq!(r, indices.len(), "scatter_rows: row count mismatch");
        assert!(indices.iter().all(|&i| i < n_rows), "scatter_rows: index out of range");
        let src = self.val(a).clone();
        let mut v = Tensor::zeros((n_rows, m));
        for (k, &i) in indices.iter().enumerate() {
            let mut row = v.row_mut(i);
            row += &src.row(k);
        }
        self.push(Op::ScatterRows(a, indices, n_rows), v)
    }

    /// Pair values `p` (`P x 1`) into a symmetric `n x n` matrix with zero
    /// diagonal: `p[k]` is added at `(us[k], vs[k])` and its mirror.
    pub fn symmetrize_pairs(&mut self, p: NodeId, us: &[usize], vs: &[usize], n: usize) -> NodeId {
        self.symmetrize_pairs_rc(p, Rc::new(us.to_vec()), Rc::new(vs.to_vec()), n)
    }

    fn symmetrize_pairs_rc(&mut self, p: NodeId, us: Indices, vs: Indices, n: usize) -> NodeId {
        let (pr, pc) = self.shape(p);
        assert_eq!(pc, 1, "symmetrize_pairs: p must be a column vector");
        assert_eq!(pr, us.len(), "symmetrize_pairs: pair count mismatch");
        assert_eq!(us.len(), vs.len(), "symmetrize_pairs: pair count mismatch");
        assert!(
            us.iter().zip(vs.iter()).all(|(&u, &v)| u != v && u < n && v < n),
            "symmetrize_pairs: self-loop or index out of range"
        );
        let src = self.val(p).clone();
        let mut v = Tensor::zeros((n, n));
        for k in 0..us.len() {
            v[(us[k], vs[k])] += src[(k, 0)];
            v[(vs[k], us[k])] += src[(k, 0)];
        }
        self.push(Op::SymmetrizePairs(p, us, vs, n), v)
    }

    fn gather_pairs_sym(&mut self, m: NodeId, us: Indices, vs: Indices) -> NodeId {
        let (n, nc) = self.shape(m);
        assert_eq!(n, nc, "gather_pairs_sym: matrix must be square");
        let src = self.val(m);
        let mut v = Tensor::zeros((us.len(), 1));
        for k in 0..us.len() {
            v[(k, 0)] = src[(us[k], vs[k])] + src[(vs[k], us[k])];
        }
        self.push(Op::GatherPairsSym(m, us, vs), v)
    }

    // ---- composites ----------------------------------------------------

    /// Mean of all elements, as a `1x1` node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Full dot product of two equally-shaped tensors, as a `1x1` node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let m = self.mul(a, b);
        self.sum(m)
    }

    /// Per-row dot product: `n x m, n x m -> n x 1`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let m = self.mul(a, b);
        self.row_sum(m)
    }

    /// Euclidean norm of all elements, as a `1x1` node.
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let sq = self.dot(a, a);
        self.sqrt(sq)
    }

    /// Elementwise `1 - a`.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    /// Rows rescaled to unit Euclidean norm (eps-guarded at zero rows).
    pub fn row_normalize(&mut self, a: NodeId) -> NodeId {
        let (_, m) = self.shape(a);
        let sq = self.mul(a, a);
        let rs = self.row_sum(sq);
        let guarded = self.offset(rs, 1e-24);
        let norm = self.sqrt(guarded);
        let inv = self.recip(norm);
        let spread = self.broadcast_col(inv, m);
        self.mul(a, spread)
    }

    // ---- differentiation ------------------------------------------------

    /// Reverse-accumulated gradient values of scalar `y` w.r.t. `wrt`.
    /// Leaves `y` does not depend on get a zero tensor of their shape.
    pub fn grad(&mut self, y: NodeId, wrt: &[NodeId]) -> Vec<Tensor> {
        self.grad_graph(y, wrt)
            .into_iter()
            .map(|id| self.val(id).clone())
            .collect()
    }

    /// Like [`Tape::grad`], but returns gradients as tape nodes so they can be
    /// differentiated again (higher-order reverse accumulation).
    pub fn grad_graph(&mut self, y: NodeId, wrt: &[NodeId]) -> Vec<NodeId> {
        assert_eq!(self.shape(y), (1, 1), "grad: target must be scalar");
        let horizon = y.0 + 1;

        // needs[i]: node i transitively depends on some wrt leaf. Adjoints are
        // only propagated through needed nodes.
        let mut needs = vec![false; horizon];
        for w in wrt {
            if w.0 < horizon {
                needs[w.0] = true;
            }
        }
        for i in 0..horizon {
            if !needs[i] {
                needs[i] = self.inputs_of(i).iter().any(|p| needs[p.0]);
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; horizon];
        if needs[y.0] {
            let one = self.constant(Tensor::from_elem((1, 1), 1.0));
            adjoint[y.0] = Some(one);
        }

        for i in (0..horizon).rev() {
            let Some(g) = adjoint[i] else { continue };
            for (input, contrib) in self.vjp(i, g, &needs) {
                adjoint[input.0] = Some(match adjoint[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib),
                });
            }
        }

        wrt.iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(id) => id,
                None => {
                    let (r, c) = self.shape(*w);
                    self.constant(Tensor::zeros((r, c)))
                }
            })
            .collect()
    }

    fn inputs_of(&self, i: usize) -> Vec<NodeId> {
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Transpose(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Clamp(a, _, _)
            | Op::PosMask(a)
            | Op::SignMask(a)
            | Op::RangeMask(a, _, _)
            | Op::Sum(a)
            | Op::RowSum(a)
            | Op::ColSum(a)
            | Op::BroadcastScalar(a, _, _)
            | Op::BroadcastCol(a, _)
            | Op::BroadcastRow(a, _)
            | Op::SliceCols(a, _, _)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _, _)
            | Op::SymmetrizePairs(a, _, _, _)
            | Op::GatherPairsSym(a, _, _) => vec![*a],
        }
    }

    /// Emits the vector-Jacobian product of node `i` for upstream adjoint `g`,
    /// returning `(input, contribution)` pairs. Contributions are themselves
    /// tape nodes, which is what makes second-order accumulation possible.
    /// Inputs outside the needed set are skipped before their (possibly
    /// expensive) contribution is materialized.
    fn vjp(&mut self, i: usize, g: NodeId, needs: &[bool]) -> Vec<(NodeId, NodeId)> {
        let this = NodeId(i);
        let want = |id: NodeId| id.0 < needs.len() && needs[id.0];
        let mut out = Vec::with_capacity(2);
        match self.nodes[i].op.clone() {
            Op::Leaf | Op::Constant => {}
            Op::PosMask(_) | Op::SignMask(_) | Op::RangeMask(_, _, _) => {}
            Op::Add(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    let neg = self.scale(g, -1.0);
                    out.push((b, neg));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    let da = self.mul(g, b);
                    out.push((a, da));
                }
                if want(b) {
                    let db = self.mul(g, a);
                    out.push((b, db));
                }
            }
            Op::Scale(a, c) => {
                if want(a) {
                    let d = self.scale(g, c);
                    out.push((a, d));
                }
            }
            Op::Offset(a, _) => {
                if want(a) {
                    out.push((a, g));
                }
            }
            Op::MatMul(a, b) => {
                if want(a) {
                    let bt = self.transpose(b);
                    let da = self.matmul(g, bt);
                    out.push((a, da));
                }
                if want(b) {
                    let at = self.transpose(a);
                    let db = self.matmul(at, g);
                    out.push((b, db));
                }
            }
            Op::Transpose(a) => {
                if want(a) {
                    let d = self.transpose(g);
                    out.push((a, d));
                }
            }
            Op::Sigmoid(a) => {
                if want(a) {
                    // y' = y(1 - y), reusing the forward value node.
                    let om = self.one_minus(this);
                    let d = self.mul(this, om);
                    let c = self.mul(g, d);
                    out.push((a, c));
                }
            }
            Op::Relu(a) => {
                if want(a) {
                    let m = self.pos_mask(a);
                    let c = self.mul(g, m);
                    out.push((a, c));
                }
            }
            Op::Abs(a) => {
                if want(a) {
                    let m = self.sign_mask(a);
                    let c = self.mul(g, m);
                    out.push((a, c));
                }
            }
            Op::Ln(a) => {
                if want(a) {
                    let r = self.recip(a);
                    let c = self.mul(g, r);
                    out.push((a, c));
                }
            }
            Op::Sqrt(a) => {
                if want(a) {
                    let r = self.recip(this);
                    let h = self.mul(g, r);
                    let c = self.scale(h, 0.5);
                    out.push((a, c));
                }
            }
            Op::Recip(a) => {
                if want(a) {
                    let sq = self.mul(this, this);
                    let h = self.mul(g, sq);
                    let c = self.scale(h, -1.0);
                    out.push((a, c));
                }
            }
            Op::Clamp(a, lo, hi) => {
                if want(a) {
                    let m = self.range_mask(a, lo, hi);
                    let c = self.mul(g, m);
                    out.push((a, c));
                }
            }
            Op::Sum(a) => {
                if want(a) {
                    let (r, c) = self.shape(a);
                    let d = self.broadcast_scalar(g, r, c);
                    out.push((a, d));
                }
            }
            Op::RowSum(a) => {
                if want(a) {
                    let (_, c) = self.shape(a);
                    let d = self.broadcast_col(g, c);
                    out.push((a, d));
                }
            }
            Op::ColSum(a) => {
                if want(a) {
                    let (r, _) = self.shape(a);
                    let d = self.broadcast_row(g, r);
                    out.push((a, d));
                }
            }
            Op::BroadcastScalar(a, _, _) => {
                if want(a) {
                    let d = self.sum(g);
                    out.push((a, d));
                }
            }
            Op::BroadcastCol(a, _) => {
                if want(a) {
                    let d = self.row_sum(g);
                    out.push((a, d));
                }
            }
            Op::BroadcastRow(a, _) => {
                if want(a) {
                    let d = self.col_sum(g);
                    out.push((a, d));
                }
            }
            Op::ConcatCols(a, b) => {
                let (_, ac) = self.shape(a);
                if want(a) {
                    let da = self.slice_cols(g, 0, ac);
                    out.push((a, da));
                }
                if want(b) {
                    let (_, bc) = self.shape(b);
                    let db = self.slice_cols(g, ac, ac + bc);
                    out.push((b, db));
                }
            }
            Op::SliceCols(a, start, end) => {
                if want(a) {
                    let (rows, ac) = self.shape(a);
                    // Pad the adjoint back to the source width with zero blocks.
                    let mut d = g;
                    if start > 0 {
                        let z = self.constant(Tensor::zeros((rows, start)));
                        d = self.concat_cols(z, d);
                    }
                    if end < ac {
                        let z = self.constant(Tensor::zeros((rows, ac - end)));
                        d = self.concat_cols(d, z);
                    }
                    out.push((a, d));
                }
            }
            Op::GatherRows(a, idx) => {
                if want(a) {
                    let (n, _) = self.shape(a);
                    let d = self.scatter_rows_rc(g, idx, n);
                    out.push((a, d));
                }
            }
            Op::ScatterRows(a, idx, _) => {
                if want(a) {
                    let d = self.gather_rows_rc(g, idx);
                    out.push((a, d));
                }
            }
            Op::SymmetrizePairs(p, us, vs, _) => {
                if want(p) {
                    let d = self.gather_pairs_sym(g, us, vs);
                    out.push((p, d));
                }
            }
            Op::GatherPairsSym(m, us, vs) => {
                if want(m) {
                    let (n, _) = self.shape(m);
                    let d = self.symmetrize_pairs_rc(g, us, vs, n);
                    out.push((m, d));
                }
            }
        }
        out
    }
}
