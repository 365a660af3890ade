//! A small reverse-mode tape over matrix-valued nodes.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably, records operations while a
//! model runs forward, and [`Graph::backward`] accumulates parameter
//! gradients into a [`Gradients`] buffer. One graph is built per sentence;
//! inference simply drops the graph after reading values.

use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{log_softmax_rows, matmul_acc, softmax_rows, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Input,
    Param(ParamId),
    Embed(ParamId, Vec<usize>),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, F),
    Gelu(NodeId),
    LayerNorm(NodeId, F),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    MeanRows(NodeId),
    Transpose(NodeId),
    /// `-sum_i w_i * x[i, t_i]`
    WeightedNll(NodeId, Vec<usize>, Vec<F>),
}

struct Node<F> {
    op: Op<F>,
    // `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<F>>,
}

pub struct Graph<'p, F: Scalar> {
    store: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new(store: &'p ParamStore<F>) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(128),
        }
    }

    pub fn store(&self) -> &'p ParamStore<F> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (_, Some(v)) => v,
            (Op::Param(p), None) => self.store.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<F>) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Row lookup into an embedding table parameter.
    pub fn embed(&mut self, table: ParamId, indices: &[usize]) -> NodeId {
        let t = self.store.get(table);
        let mut out = Tensor::zeros(indices.len(), t.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(Op::Embed(table, indices.to_vec()), out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a @ b^T`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(Op::MatMulT(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        let mut v = self.value(a).clone();
        assert_eq!(r.shape(), (1, v.cols()), "add_row expects a 1×{} row", v.cols());
        let r = r.data();
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(r) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), v)
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        let mut v = self.value(a).clone();
        assert_eq!(r.shape(), (1, v.cols()), "mul_row expects a 1×{} row", v.cols());
        let r = r.data();
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(r) {
                *x *= b;
            }
        }
        self.push(Op::MulRow(a, row), v)
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let c = F::of(GELU_C);
        let k = F::of(GELU_A);
        let half = F::of(0.5);
        let v = self
            .value(a)
            .map(|x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh()));
        self.push(Op::Gelu(a), v)
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: NodeId, eps: F) -> NodeId {
        let mut v = self.value(a).clone();
        let n = F::of(v.cols() as f64);
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        self.push(Op::LayerNorm(a, eps), v)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), v)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmax(a), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[off..off + src.cols()].copy_from_slice(src.row(r));
                off += src.cols();
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let src = self.value(a);
        let mut out = Tensor::zeros(src.rows(), end - start);
        for r in 0..src.rows() {
            out.row_mut(r).copy_from_slice(&src.row(r)[start..end]);
        }
        self.push(Op::SliceCols(a, start, end), out)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let src = self.value(a);
        let mut out = Tensor::zeros(indices.len(), src.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        self.push(Op::GatherRows(a, indices.to_vec()), out)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let n = F::of(src.rows() as f64);
        let mut out = Tensor::zeros(1, src.cols());
        for r in 0..src.rows() {
            for (o, &x) in out.row_mut(0).iter_mut().zip(src.row(r)) {
                *o += x;
            }
        }
        for o in out.data_mut() {
            *o /= n;
        }
        self.push(Op::MeanRows(a), out)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Weighted negative log-likelihood over rows of a log-probability
    /// matrix. Returns a `1×1` node.
    pub fn weighted_nll(&mut self, logp: NodeId, targets: &[usize], weights: &[F]) -> NodeId {
        let lp = self.value(logp);
        assert_eq!(targets.len(), lp.rows(), "one target per row");
        assert_eq!(weights.len(), lp.rows(), "one weight per row");
        let mut total = F::zero();
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w != F::zero() {
                total -= w * lp.get(r, t);
            }
        }
        self.push(
            Op::WeightedNll(logp, targets.to_vec(), weights.to_vec()),
            Tensor::scalar(total),
        )
    }

    /// Reverse pass from a `1×1` root, accumulating parameter gradients into
    /// `grads`.
    pub fn backward(&self, root: NodeId, grads: &mut Gradients<F>) {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be 1×1");
        let mut adj: Vec<Option<Tensor<F>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Tensor::scalar(F::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => grads.accumulate(*p, &g),
                Op::Embed(p, indices) => {
                    let shape = self.store.get(*p).shape();
                    let slot = grads.slot_mut(*p, shape);
                    for (r, &i) in indices.iter().enumerate() {
                        for (s, &x) in slot.row_mut(i).iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = av.shape();
                    let n = bv.cols();
                    // dA = G @ B^T
                    let bt = bv.transpose();
                    let mut ga = Tensor::zeros(m, k);
                    matmul_acc(g.data(), bt.data(), ga.data_mut(), m, n, k);
                    acc(&mut adj, *a, ga);
                    // dB = A^T @ G
                    let at = av.transpose();
                    let mut gb = Tensor::zeros(k, n);
                    matmul_acc(at.data(), g.data(), gb.data_mut(), k, m, n);
                    acc(&mut adj, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // out = A B^T ; dA = G B ; dB = G^T A
                    acc(&mut adj, *a, g.matmul(bv));
                    acc(&mut adj, *b, g.t_matmul(av));
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, g);
                }
                Op::MulRow(a, row) => {
                    let av = self.value(*a);
                    let rv = self.value(*row);
                    let mut gr = Tensor::zeros(1, g.cols());
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let gr_row = gr.row_mut(0);
                        for c in 0..g.cols() {
                            gr_row[c] += g.get(r, c) * av.get(r, c);
                        }
                        for (x, &w) in ga.row_mut(r).iter_mut().zip(rv.data()) {
                            *x *= w;
                        }
                    }
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, ga);
                }
                Op::Scale(a, s) => acc(&mut adj, *a, g.scale(*s)),
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let c = F::of(GELU_C);
                    let k = F::of(GELU_A);
                    let half = F::of(0.5);
                    let three = F::of(3.0);
                    let mut ga = g;
                    for (gx, &x) in ga.data_mut().iter_mut().zip(xv.data()) {
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let du = c * (F::one() + three * k * x * x);
                        let d = half * (F::one() + t) + half * x * (F::one() - t * t) * du;
                        *gx *= d;
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::LayerNorm(a, eps) => {
                    let xv = self.value(*a);
                    let y = node.value.as_ref().unwrap();
                    let n = F::of(xv.cols() as f64);
                    let mut ga = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let x = xv.row(r);
                        let mean = x.iter().copied().sum::<F>() / n;
                        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
                        let inv = F::one() / (var + *eps).sqrt();
                        let gy = g.row(r);
                        let yr = y.row(r);
                        let mg = gy.iter().copied().sum::<F>() / n;
                        let mgy = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<F>() / n;
                        for ((o, &gi), &yi) in ga.row_mut(r).iter_mut().zip(gy).zip(yr) {
                            *o = inv * (gi - mg - yi * mgy);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot = g.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum::<F>();
                        for ((o, &gi), &yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yi * (gi - dot);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gs = g.row(r).iter().copied().sum::<F>();
                        for ((o, &gi), &yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = gi - yi.exp() * gs;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(&mut adj, p, gp);
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::GatherRows(a, indices) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let inv = F::one() / F::of(rows as f64);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = x * inv;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Transpose(a) => acc(&mut adj, *a, g.transpose()),
                Op::WeightedNll(logp, targets, weights) => {
                    let (rows, cols) = self.value(*logp).shape();
                    let seed = g.item();
                    let mut ga = Tensor::zeros(rows, cols);
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        ga.set(r, t, -w * seed);
                    }
                    acc(&mut adj, *logp, ga);
                }
            }
        }
    }
}

fn acc<F: Scalar>(adj: &mut [Option<Tensor<F>>], id: NodeId, g: Tensor<F>) {
    match &mut adj[id.0] {
        Some(a) => a.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of every op against the tape.
    fn check<Fwd>(store: &mut ParamStore<f64>, fwd: Fwd)
    where
        Fwd: Fn(&mut Graph<'_, f64>) -> NodeId,
    {
        let mut grads = Gradients::new(store);
        {
            let mut g = Graph::new(store);
            let root = fwd(&mut g);
            g.backward(root, &mut grads);
        }
        let eval = |s: &ParamStore<f64>| {
            let mut g = Graph::new(s);
            let r = fwd(&mut g);
            g.value(r).item()
        };
        let ids: Vec<_> = store.ids().collect();
        let h = 1e-6;
        for id in ids {
            let len = store.get(id).data().len();
            for k in 0..len {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + h;
                let up = eval(store);
                store.get_mut(id).data_mut()[k] = orig - h;
                let down = eval(store);
                store.get_mut(id).data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
                let denom = numeric.abs().max(analytic.abs()).max(1e-7);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "{} [{k}]: numeric {numeric} analytic {analytic}",
                    store.param(id).name
                );
            }
        }
    }

    fn rand_param(store: &mut ParamStore<f64>, name: &str, r: usize, c: usize, rng: &mut ChaCha8Rng) -> ParamId {
        store.add(name, Tensor::randn(r, c, 1.0, rng), ParamGroup::Head)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let x = rand_param(&mut store, "x", 3, 4, &mut rng);
        let w = rand_param(&mut store, "w", 4, 4, &mut rng);
        let row = rand_param(&mut store, "row", 1, 4, &mut rng);
        let gain = rand_param(&mut store, "gain", 1, 4, &mut rng);
        let table = rand_param(&mut store, "table", 5, 4, &mut rng);
        check(&mut store, |g| {
            let xn = g.param(x);
            let wn = g.param(w);
            let e = g.embed(table, &[4, 0, 4]);
            let h = g.matmul(xn, wn);
            let h = g.add(h, e);
            let rn = g.param(row);
            let h = g.add_row(h, rn);
            let h = g.layer_norm(h, 1e-5);
            let gn = g.param(gain);
            let h = g.mul_row(h, gn);
            let h = g.gelu(h);
            let a = g.slice_cols(h, 0, 2);
            let b = g.slice_cols(h, 2, 4);
            let s = g.matmul_t(a, b);
            let s = g.scale(s, 0.7);
            let p = g.softmax(s);
            let o = g.matmul(p, b);
            let cat = g.concat_cols(&[o, a]);
            let t = g.transpose(cat);
            let t = g.gather_rows(t, &[3, 0, 0]);
            let m = g.mean_rows(t);
            let mt = g.transpose(m);
            let wide = g.concat_cols(&[t, mt]);
            let lp = g.log_softmax(wide);
            g.weighted_nll(lp, &[0, 3, 2], &[1.0, 0.5, 0.0])
        });
    }
}
