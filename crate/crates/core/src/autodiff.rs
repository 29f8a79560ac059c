//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so [`Tape::backward`] is a single reverse sweep. Leaves
//! created with [`Tape::param`] accumulate gradients across calls; everything
//! else is recomputed per sweep.
//!
//! Sequence-shaped operands use a "block" layout: `T` vectors of width `w` for
//! each of `B` samples are stored as one `B x (T*w)` matrix, so reshaping to
//! `(B*T) x w` is free.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Reshape(Var),
    RowDots { seq: Var, query: Var, width: usize },
    MaskedSoftmax(Var),
    WeightedSum { seq: Var, weights: Var, width: usize },
    Gather { seq: Var, index: Vec<usize>, width: usize },
    SoftmaxXent { logits: Var, targets: Vec<usize>, weights: Vec<F>, probs: Matrix<F> },
    SumSquares(Var),
}

struct Node<F> {
    value: Matrix<F>,
    op: Op<F>,
    needs_grad: bool,
    grad: Option<Matrix<F>>,
}

/// Recorded compute graph.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(op: &'static str, a: &Matrix<impl Real>, b: &Matrix<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Numerically stable softmax of `row` restricted to entries where `valid` holds.
pub(crate) fn masked_softmax_row<F: Real>(row: &[F], valid: impl Fn(usize) -> bool, out: &mut [F]) -> bool {
    let mut max = F::neg_infinity();
    for (t, &x) in row.iter().enumerate() {
        if valid(t) && x > max {
            max = x;
        }
    }
    if max == F::neg_infinity() {
        return false;
    }
    let mut total = F::zero();
    for (t, &x) in row.iter().enumerate() {
        out[t] = if valid(t) {
            let e = (x - max).exp();
            total += e;
            e
        } else {
            F::zero()
        };
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
    true
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf; its gradient is kept after [`Tape::backward`].
    pub fn param(&mut self, value: Matrix<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (inputs, masks, fixed encodings).
    pub fn constant(&mut self, value: Matrix<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, &b) in value.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *x += b;
            }
        }
        let ng = self.needs(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, alpha: F) -> Var {
        let value = self.value(a).scale(alpha);
        let ng = self.needs(&[a]);
        self.push(value, Op::Scale(a, alpha), ng)
    }

    /// `1 - a` element-wise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| F::one() - x);
        let ng = self.needs(&[a]);
        self.push(value, Op::OneMinus(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let ng = self.needs(&[a]);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(&[a]);
        self.push(value, Op::Sigmoid(a), ng)
    }

    /// Concatenates along columns (feature axis): `[a | b | ...]`.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat", "operands differ in row count"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let out = value.row_mut(r);
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{} of {} columns", start + len, av.cols()),
            ));
        }
        let value = Matrix::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        let ng = self.needs(&[a]);
        Ok(self.push(value, Op::Slice { src: a, start }, ng))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshaped(rows, cols)?;
        let ng = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Per-sample dot products of `query` (`B x w`) with every block of `seq`
    /// (`B x (T*w)`), giving `B x T`.
    pub fn row_dots(&mut self, seq: Var, query: Var, width: usize) -> Result<Var> {
        let (sv, qv) = (self.value(seq), self.value(query));
        if width == 0 || qv.cols() != width || sv.rows() != qv.rows() || sv.cols() % width != 0 {
            return Err(Error::shape(
                "row_dots",
                format!("seq {:?}, query {:?}, width {width}", sv.shape(), qv.shape()),
            ));
        }
        let steps = sv.cols() / width;
        let value = Matrix::from_fn(sv.rows(), steps, |b, t| {
            crate::matrix::dot(&sv.row(b)[t * width..(t + 1) * width], qv.row(b))
        });
        let ng = self.needs(&[seq, query]);
        Ok(self.push(value, Op::RowDots { seq, query, width }, ng))
    }

    /// Row-wise softmax over entries where `mask` is nonzero; masked entries are exactly 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &Matrix<F>) -> Result<Var> {
        let av = self.value(a);
        check_same("masked_softmax", av, mask)?;
        let mut value = Matrix::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let m = mask.row(r);
            if !masked_softmax_row(av.row(r), |t| m[t] != F::zero(), value.row_mut(r)) {
                return Err(Error::AllMasked {
                    op: "masked_softmax",
                    row: r,
                });
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(value, Op::MaskedSoftmax(a), ng))
    }

    /// `sum_t weights[b, t] * seq[b, block t]`, giving `B x w`.
    pub fn weighted_sum(&mut self, seq: Var, weights: Var, width: usize) -> Result<Var> {
        let (sv, wv) = (self.value(seq), self.value(weights));
        if width == 0 || sv.rows() != wv.rows() || sv.cols() != wv.cols() * width {
            return Err(Error::shape(
                "weighted_sum",
                format!("seq {:?}, weights {:?}, width {width}", sv.shape(), wv.shape()),
            ));
        }
        let mut value = Matrix::zeros(sv.rows(), width);
        for b in 0..sv.rows() {
            let row = sv.row(b);
            let out = value.row_mut(b);
            for (t, &w) in wv.row(b).iter().enumerate() {
                if w == F::zero() {
                    continue;
                }
                for (o, &x) in out.iter_mut().zip(&row[t * width..(t + 1) * width]) {
                    *o += w * x;
                }
            }
        }
        let ng = self.needs(&[seq, weights]);
        Ok(self.push(value, Op::WeightedSum { seq, weights, width }, ng))
    }

    /// Picks block `index[b]` of width `width` from each row of `seq`.
    pub fn gather(&mut self, seq: Var, index: &[usize], width: usize) -> Result<Var> {
        let sv = self.value(seq);
        if width == 0 || index.len() != sv.rows() || index.iter().any(|&i| (i + 1) * width > sv.cols()) {
            return Err(Error::shape(
                "gather",
                format!("seq {:?}, {} indices, width {width}", sv.shape(), index.len()),
            ));
        }
        let value = Matrix::from_fn(sv.rows(), width, |b, c| sv.get(b, index[b] * width + c));
        let ng = self.needs(&[seq]);
        Ok(self.push(
            value,
            Op::Gather {
                seq,
                index: index.to_vec(),
                width,
            },
            ng,
        ))
    }

    /// `sum_b weights[b] * -log softmax(logits[b])[targets[b]]` as a `1 x 1` node.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() || weights.len() != lv.rows() {
            return Err(Error::shape(
                "softmax_xent",
                format!("logits {:?}, {} targets", lv.shape(), targets.len()),
            ));
        }
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut loss = F::zero();
        for b in 0..lv.rows() {
            if targets[b] >= lv.cols() {
                return Err(Error::TokenOutOfRange {
                    id: targets[b],
                    size: lv.cols(),
                });
            }
            masked_softmax_row(lv.row(b), |_| true, probs.row_mut(b));
            if weights[b] != F::zero() {
                let row = lv.row(b);
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
                loss += weights[b] * (lse - row[targets[b]]);
            }
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            ng,
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum_squares());
        let ng = self.needs(&[a]);
        self.push(value, Op::SumSquares(a), ng)
    }

    /// Sums equally shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::shape("sum", "no operands"))?;
        let mut acc = first;
        for &p in rest {
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a `1 x 1` node. Parameter gradients accumulate
    /// across repeated calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Matrix<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, F::one()));
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        F::gemm(m, n, k, F::one(), g.as_slice(), (n, 1), bv.as_slice(), (1, n), F::one(), ga.as_mut_slice(), (k, 1));
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        F::gemm(k, m, n, F::one(), av.as_slice(), (1, k), g.as_slice(), (n, 1), F::one(), gb.as_mut_slice(), (n, 1));
                    }
                }
                Op::Add(a, b) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.add_assign(&g);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        gb.add_assign(&g);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.add_assign(&g);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        gb.axpy(-F::one(), &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, &gi), &y) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(bv.as_slice()) {
                            *o += gi * y;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for ((o, &gi), &x) in gb.as_mut_slice().iter_mut().zip(g.as_slice()).zip(av.as_slice()) {
                            *o += gi * x;
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.add_assign(&g);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *bias) {
                        for r in 0..g.rows() {
                            for (o, &x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Scale(a, alpha) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.axpy(*alpha, &g);
                    }
                }
                Op::OneMinus(a) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.axpy(-F::one(), &g);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, &gi), &yi) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y.as_slice()) {
                            *o += gi * (F::one() - yi * yi);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((o, &gi), &yi) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y.as_slice()) {
                            *o += gi * yi * (F::one() - yi);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols();
                        if let Some(gp) = slot(&mut grads, nodes, *p) {
                            for r in 0..g.rows() {
                                for (o, &x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                    *o += x;
                                }
                            }
                        }
                        off += w;
                    }
                }
                Op::Slice { src, start } => {
                    if let Some(gs) = slot(&mut grads, nodes, *src) {
                        for r in 0..g.rows() {
                            for (o, &x) in gs.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for (o, &x) in ga.as_mut_slice().iter_mut().zip(g.as_slice()) {
                            *o += x;
                        }
                    }
                }
                Op::RowDots { seq, query, width } => {
                    let w = *width;
                    let (sv, qv) = (&nodes[seq.0].value, &nodes[query.0].value);
                    if let Some(gs) = slot(&mut grads, nodes, *seq) {
                        for b in 0..g.rows() {
                            let q = qv.row(b);
                            let out = gs.row_mut(b);
                            for (t, &gt) in g.row(b).iter().enumerate() {
                                for (o, &qi) in out[t * w..(t + 1) * w].iter_mut().zip(q) {
                                    *o += gt * qi;
                                }
                            }
                        }
                    }
                    if let Some(gq) = slot(&mut grads, nodes, *query) {
                        for b in 0..g.rows() {
                            let s = sv.row(b);
                            let out = gq.row_mut(b);
                            for (t, &gt) in g.row(b).iter().enumerate() {
                                for (o, &si) in out.iter_mut().zip(&s[t * w..(t + 1) * w]) {
                                    *o += gt * si;
                                }
                            }
                        }
                    }
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value;
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for r in 0..g.rows() {
                            let (yr, gr) = (y.row(r), g.row(r));
                            let inner: F = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                            for ((o, &yi), &gi) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                                *o += yi * (gi - inner);
                            }
                        }
                    }
                }
                Op::WeightedSum { seq, weights, width } => {
                    let w = *width;
                    let (sv, wv) = (&nodes[seq.0].value, &nodes[weights.0].value);
                    if let Some(gs) = slot(&mut grads, nodes, *seq) {
                        for b in 0..g.rows() {
                            let gr = g.row(b);
                            let out = gs.row_mut(b);
                            for (t, &wt) in wv.row(b).iter().enumerate() {
                                for (o, &gi) in out[t * w..(t + 1) * w].iter_mut().zip(gr) {
                                    *o += wt * gi;
                                }
                            }
                        }
                    }
                    if let Some(gw) = slot(&mut grads, nodes, *weights) {
                        for b in 0..g.rows() {
                            let (gr, sr) = (g.row(b), sv.row(b));
                            for (t, o) in gw.row_mut(b).iter_mut().enumerate() {
                                *o += crate::matrix::dot(gr, &sr[t * w..(t + 1) * w]);
                            }
                        }
                    }
                }
                Op::Gather { seq, index, width } => {
                    let w = *width;
                    if let Some(gs) = slot(&mut grads, nodes, *seq) {
                        for (b, &ix) in index.iter().enumerate() {
                            for (o, &x) in gs.row_mut(b)[ix * w..(ix + 1) * w].iter_mut().zip(g.row(b)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::SoftmaxXent { logits, targets, weights, probs } => {
                    let g0 = g.get(0, 0);
                    if let Some(gl) = slot(&mut grads, nodes, *logits) {
                        for b in 0..probs.rows() {
                            let scale = g0 * weights[b];
                            if scale == F::zero() {
                                continue;
                            }
                            for (c, (o, &p)) in gl.row_mut(b).iter_mut().zip(probs.row(b)).enumerate() {
                                let y = if c == targets[b] { F::one() } else { F::zero() };
                                *o += scale * (p - y);
                            }
                        }
                    }
                }
                Op::SumSquares(a) => {
                    let g0 = g.get(0, 0);
                    let av = &nodes[a.0].value;
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.axpy(g0 + g0, av);
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, created on first use; `None` if `v` needs no gradient.
fn slot<'a, F: Real>(grads: &'a mut [Option<Matrix<F>>], nodes: &[Node<F>], v: Var) -> Option<&'a mut Matrix<F>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    let (r, c) = n.value.shape();
    Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let ones = Matrix::filled(1, 2, 1.0);
        let a = tape.constant(m(&[vec![0.0, 0.0]]));
        let s = tape.masked_softmax(a, &ones).unwrap();
        assert_eq!(tape.value(s).as_slice(), &[0.5, 0.5]);

        let b = tape.constant(m(&[vec![1f64.ln(), 3f64.ln()]]));
        let s = tape.masked_softmax(b, &ones).unwrap();
        let v = tape.value(s).as_slice();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);

        let c = tape.constant(m(&[vec![5.0, 9.0]]));
        let s = tape.masked_softmax(c, &m(&[vec![1.0, 0.0]])).unwrap();
        assert_eq!(tape.value(s).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn all_masked_row_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Matrix::zeros(2, 3));
        let mut mask = Matrix::filled(2, 3, 1.0);
        mask.row_mut(1).fill(0.0);
        assert!(matches!(
            tape.masked_softmax(a, &mask),
            Err(Error::AllMasked { row: 1, .. })
        ));
    }

    #[test]
    fn linear_map_gradient_is_input_broadcast() {
        // loss = sum(x W) with x fixed: dL/dW_ij = x_i for every output j.
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 * 0.1));
        let x = tape.constant(m(&[vec![1.0, -2.0, 0.5]]));
        let y = tape.matmul(x, w).unwrap();
        let ones = tape.constant(Matrix::filled(2, 1, 1.0));
        let loss = tape.matmul(y, ones).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(w).unwrap();
        for (r, xr) in [1.0, -2.0, 0.5].iter().enumerate() {
            assert_eq!(g.row(r), &[*xr, *xr]);
        }
    }

    #[test]
    fn tanh_squared_has_zero_gradient_at_origin() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Matrix::zeros(1, 1));
        let t = tape.tanh(w);
        let loss = tape.mul(t, t).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(m(&[vec![3.0, 4.0]]));
        let loss = tape.sum_squares(w);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().as_slice(), &[12.0, 16.0]);
        tape.zero_grads();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(
            tape.backward(w),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Matrix::zeros(2, 2));
        let b = tape.param(Matrix::zeros(2, 3));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
        assert!(tape.matmul(b, a).is_err());
    }
}
