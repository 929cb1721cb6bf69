use super::tensor::{Scalar, Tensor};
use super::NumError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add { a: Var, b: Var },
    AddConst { x: Var },
    Relu { x: Var },
    MaskedSoftmax { x: Var, mask: Vec<bool> },
    ScaleRows { p: Var, m: Var },
    Conv1d { x: Var, w: Var, b: Var },
    MaxPoolTime { x: Var, argmax: Vec<usize> },
    CrossEntropy { logits: Var, target: usize },
    Concat { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    PadRows { x: Var },
    GatherRows { table: Var, ids: Vec<usize> },
    MaskedMeanRows { x: Var, mask: Vec<bool> },
    Mean { parts: Vec<Var> },
    Reshape { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Linear record of executed operations for reverse-mode differentiation.
///
/// Every operation validates shapes, computes its output eagerly and
/// rejects non-finite results. Values are never modified after they are
/// recorded. The tape also folds every piecewise decision (ReLU sign,
/// max-pool argmax) into a running signature so that finite-difference
/// checks can detect perturbations that cross a kink.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    decisions: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), decisions: FNV_OFFSET }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every ReLU sign pattern and max-pool argmax taken so far.
    pub fn decision_signature(&self) -> u64 {
        self.decisions
    }

    fn mix(&mut self, v: u64) {
        self.decisions = (self.decisions ^ v).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op, inputs: &[Var]) -> Result<Var, NumError> {
        if !value.all_finite() {
            return Err(NumError::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var, NumError> {
        if !value.all_finite() {
            return Err(NumError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, NumError> {
        self.leaf(value, false)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Standard matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + aip * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul { a, b }, &[a, b])
    }

    /// `x · wᵀ + b` for `x` of shape `[in]` or `[n×in]` and `w` of shape `[out×in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.rank() > 2 || xv.cols() != wv.shape()[1] {
            return Err(shape_err("linear", format!("x {:?}, w {:?}", xv.shape(), wv.shape())));
        }
        let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [out_dim] {
                return Err(shape_err("linear", format!("bias {bs:?} for output {out_dim}")));
            }
        }
        let n = xv.rows();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * out_dim];
        for i in 0..n {
            let xr = &xv.data()[i * in_dim..(i + 1) * in_dim];
            for o in 0..out_dim {
                let wr = &wv.data()[o * in_dim..(o + 1) * in_dim];
                let mut acc = bias.map_or(T::zero(), |bd| bd[o]);
                for (&xk, &wk) in xr.iter().zip(wr) {
                    acc = acc + xk * wk;
                }
                out[i * out_dim + o] = acc;
            }
        }
        let shape = if xv.rank() == 1 { vec![out_dim] } else { vec![n, out_dim] };
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", value, Op::Linear { x, w, b }, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    /// Adds a fixed tensor; gradient flows to `x` only.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.shape() != c.shape() {
            return Err(shape_err("add_const", format!("{:?} + {:?}", xv.shape(), c.shape())));
        }
        let data = xv.data().iter().zip(c.data()).map(|(&a, &b)| a + b).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("add_const", value, Op::AddConst { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumError> {
        let xv = self.value(x);
        let data: Vec<T> = xv.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let mut sig = 0u64;
        for (i, v) in value.data().iter().enumerate() {
            if *v > T::zero() {
                sig = sig.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            }
        }
        self.mix(sig);
        self.push("relu", value, Op::Relu { x }, &[x])
    }

    /// Softmax over the entries of `x` where `mask` is true; masked entries are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.len() != mask.len() {
            return Err(shape_err("masked_softmax", format!("{} logits, {} mask entries", xv.len(), mask.len())));
        }
        let data = masked_softmax_values(xv.data(), mask)?;
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("masked_softmax", value, Op::MaskedSoftmax { x, mask: mask.to_vec() }, &[x])
    }

    /// Row `i` of `m` multiplied by `p[i]`.
    pub fn scale_rows(&mut self, p: Var, m: Var) -> Result<Var, NumError> {
        let (pv, mv) = (self.value(p), self.value(m));
        if mv.rank() != 2 || pv.len() != mv.rows() {
            return Err(shape_err("scale_rows", format!("p {:?}, m {:?}", pv.shape(), mv.shape())));
        }
        let d = mv.cols();
        let mut data = mv.data().to_vec();
        for (i, &w) in pv.data().iter().enumerate() {
            for v in &mut data[i * d..(i + 1) * d] {
                *v = *v * w;
            }
        }
        let value = Tensor::new(mv.shape().to_vec(), data)?;
        self.push("scale_rows", value, Op::ScaleRows { p, m }, &[p, m])
    }

    /// Valid (unpadded) 1-D convolution over the row axis.
    ///
    /// `x: [L×d]`, `w: [h×d×f]`, `b: [f]` gives `[(L−h+1)×f]`.
    pub fn conv1d_valid(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 3 || wv.shape()[1] != xv.shape()[1] || bv.shape() != [wv.shape()[2]] {
            return Err(shape_err(
                "conv1d_valid",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (len, d) = (xv.shape()[0], xv.shape()[1]);
        let (h, f) = (wv.shape()[0], wv.shape()[2]);
        if len < h {
            return Err(NumError::TooShort { len, window: h });
        }
        let out_len = len - h + 1;
        let hd = h * d;
        let mut out = Vec::with_capacity(out_len * f);
        for p in 0..out_len {
            out.extend_from_slice(bv.data());
            let orow = &mut out[p * f..(p + 1) * f];
            let window = &xv.data()[p * d..p * d + hd];
            for (k, &xk) in window.iter().enumerate() {
                if xk == T::zero() {
                    continue;
                }
                let wrow = &wv.data()[k * f..(k + 1) * f];
                for (o, &wk) in orow.iter_mut().zip(wrow) {
                    *o = *o + xk * wk;
                }
            }
        }
        let value = Tensor::new(vec![out_len, f], out)?;
        self.push("conv1d_valid", value, Op::Conv1d { x, w, b }, &[x, w, b])
    }

    /// Column-wise max over rows; ties resolve to the lowest row.
    pub fn maxpool_time(&mut self, x: Var) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(shape_err("maxpool_time", format!("{:?}", xv.shape())));
        }
        let (len, f) = (xv.shape()[0], xv.shape()[1]);
        let mut out = xv.row(0).to_vec();
        let mut argmax = vec![0usize; f];
        for r in 1..len {
            for (j, &v) in xv.row(r).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = r;
                }
            }
        }
        let sig = argmax
            .iter()
            .enumerate()
            .fold(0u64, |s, (j, &r)| s.wrapping_add(((j * len + r) as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9)));
        self.mix(sig);
        let value = Tensor::vector(out);
        self.push("maxpool_time", value, Op::MaxPoolTime { x, argmax }, &[x])
    }

    /// `−log softmax(logits)[target]`, evaluated in log space.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NumError> {
        let lv = self.value(logits);
        if target >= lv.len() {
            return Err(NumError::Target { target, len: lv.len() });
        }
        let lse = log_sum_exp(lv.data());
        let value = Tensor::scalar(lse - lv.data()[target]);
        self.push("cross_entropy", value, Op::CrossEntropy { logits, target }, &[logits])
    }

    /// Concatenates vectors, or matrices with equal column counts along rows.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = parts.first().ok_or(NumError::Empty { op: "concat" })?;
        let rank = self.value(*first).rank();
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != rank || (rank == 2 && pv.cols() != cols) || rank > 2 {
                return Err(shape_err("concat", format!("{:?} vs {:?}", self.shape(*first), pv.shape())));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let shape = if rank == 1 { vec![data.len()] } else { vec![rows, cols] };
        let value = Tensor::new(shape, data)?;
        self.push("concat", value, Op::Concat { parts: parts.to_vec() }, parts)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.rank() != 2 || len == 0 || start + len > xv.rows() {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {:?}", start + len, xv.shape())));
        }
        let c = xv.cols();
        let value = Tensor::new(vec![len, c], xv.data()[start * c..(start + len) * c].to_vec())?;
        self.push("slice_rows", value, Op::SliceRows { x, start }, &[x])
    }

    /// Appends zero rows until the matrix has `len` rows.
    pub fn pad_rows(&mut self, x: Var, len: usize) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.rank() != 2 || len < xv.rows() {
            return Err(shape_err("pad_rows", format!("pad {:?} to {len} rows", xv.shape())));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        data.resize(len * c, T::zero());
        let value = Tensor::new(vec![len, c], data)?;
        self.push("pad_rows", value, Op::PadRows { x }, &[x])
    }

    /// Rows `ids` of a `[V×E]` table, as `[n×E]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let tv = self.value(table);
        if tv.rank() != 2 || ids.is_empty() {
            return Err(shape_err("gather_rows", format!("table {:?}, {} ids", tv.shape(), ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(NumError::Target { target: bad, len: tv.rows() });
        }
        let mut data = Vec::with_capacity(ids.len() * tv.cols());
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let value = Tensor::new(vec![ids.len(), tv.cols()], data)?;
        self.push("gather_rows", value, Op::GatherRows { table, ids: ids.to_vec() }, &[table])
    }

    /// Mean of the rows selected by `mask`; all-zero vector when none are.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.rank() != 2 || mask.len() != xv.rows() {
            return Err(shape_err("masked_mean_rows", format!("{:?} with {} mask entries", xv.shape(), mask.len())));
        }
        let c = xv.cols();
        let count = mask.iter().filter(|&&m| m).count();
        let mut out = vec![T::zero(); c];
        if count > 0 {
            let inv = T::one() / T::of(count as f64);
            for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                    *o = *o + v * inv;
                }
            }
        }
        let value = Tensor::vector(out);
        self.push("masked_mean_rows", value, Op::MaskedMeanRows { x, mask: mask.to_vec() }, &[x])
    }

    /// Same elements under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let value = self.value(x).reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape { x }, &[x])
    }

    /// Arithmetic mean of scalar values.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::Empty { op: "mean" });
        }
        let mut acc = T::zero();
        for &p in parts {
            let pv = self.value(p);
            if pv.len() != 1 {
                return Err(shape_err("mean", format!("non-scalar part {:?}", pv.shape())));
            }
            acc = acc + pv.item();
        }
        let value = Tensor::scalar(acc / T::of(parts.len() as f64));
        self.push("mean", value, Op::Mean { parts: parts.to_vec() }, parts)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backprop(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = self.slot(*a, grads) {
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            let grow = &g[r * n..(r + 1) * n];
                            ga[r * k + p] = ga[r * k + p] + dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let arp = av.data()[r * k + p];
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o = *o + arp * gv;
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                let n = xv.rows();
                if let Some(gx) = self.slot(*x, grads) {
                    for r in 0..n {
                        let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go == T::zero() {
                                continue;
                            }
                            for (d, &wk) in gxr.iter_mut().zip(&wv.data()[o * in_dim..(o + 1) * in_dim]) {
                                *d = *d + go * wk;
                            }
                        }
                    }
                }
                if let Some(gw) = self.slot(*w, grads) {
                    for r in 0..n {
                        let xr = &xv.data()[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go == T::zero() {
                                continue;
                            }
                            for (d, &xk) in gw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(xr) {
                                *d = *d + go * xk;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(*b, grads) {
                        for r in 0..n {
                            for (d, &go) in gb.iter_mut().zip(&g[r * out_dim..(r + 1) * out_dim]) {
                                *d = *d + go;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(v, grads) {
                        add_into(gv, g);
                    }
                }
            }
            Op::AddConst { x } => {
                if let Some(gx) = self.slot(*x, grads) {
                    add_into(gx, g);
                }
            }
            Op::Relu { x } => {
                let out = node.value.data();
                if let Some(gx) = self.slot(*x, grads) {
                    for ((d, &gv), &y) in gx.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                let s = node.value.data();
                if let Some(gx) = self.slot(*x, grads) {
                    let inner: T = s.iter().zip(g).map(|(&sv, &gv)| sv * gv).sum();
                    for (j, d) in gx.iter_mut().enumerate() {
                        if mask[j] {
                            *d = *d + s[j] * (g[j] - inner);
                        }
                    }
                }
            }
            Op::ScaleRows { p, m } => {
                let (pv, mv) = (self.value(*p), self.value(*m));
                let d = mv.cols();
                if let Some(gp) = self.slot(*p, grads) {
                    for (r, gr) in gp.iter_mut().enumerate() {
                        *gr = *gr + dot(&g[r * d..(r + 1) * d], mv.row(r));
                    }
                }
                if let Some(gm) = self.slot(*m, grads) {
                    for (r, &w) in pv.data().iter().enumerate() {
                        for (o, &gv) in gm[r * d..(r + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o = *o + w * gv;
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let d = xv.shape()[1];
                let (h, f) = (wv.shape()[0], wv.shape()[2]);
                let out_len = node.value.shape()[0];
                let hd = h * d;
                if let Some(gx) = self.slot(*x, grads) {
                    for p in 0..out_len {
                        let grow = &g[p * f..(p + 1) * f];
                        for k in 0..hd {
                            let wrow = &wv.data()[k * f..(k + 1) * f];
                            gx[p * d + k] = gx[p * d + k] + dot(grow, wrow);
                        }
                    }
                }
                if let Some(gw) = self.slot(*w, grads) {
                    for p in 0..out_len {
                        let grow = &g[p * f..(p + 1) * f];
                        let window = &xv.data()[p * d..p * d + hd];
                        for (k, &xk) in window.iter().enumerate() {
                            if xk == T::zero() {
                                continue;
                            }
                            for (o, &gv) in gw[k * f..(k + 1) * f].iter_mut().zip(grow) {
                                *o = *o + xk * gv;
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for p in 0..out_len {
                        add_into(gb, &g[p * f..(p + 1) * f]);
                    }
                }
            }
            Op::MaxPoolTime { x, argmax } => {
                let f = argmax.len();
                if let Some(gx) = self.slot(*x, grads) {
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[r * f + j] = gx[r * f + j] + g[j];
                    }
                }
            }
            Op::CrossEntropy { logits, target } => {
                let lv = self.value(*logits);
                if let Some(gl) = self.slot(*logits, grads) {
                    let lse = log_sum_exp(lv.data());
                    for (j, (d, &z)) in gl.iter_mut().zip(lv.data()).enumerate() {
                        let mut s = (z - lse).exp();
                        if j == *target {
                            s = s - T::one();
                        }
                        *d = *d + g[0] * s;
                    }
                }
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.slot(p, grads) {
                        add_into(gp, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).cols();
                if let Some(gx) = self.slot(*x, grads) {
                    add_into(&mut gx[start * c..start * c + g.len()], g);
                }
            }
            Op::PadRows { x } => {
                let n = self.value(*x).len();
                if let Some(gx) = self.slot(*x, grads) {
                    add_into(gx, &g[..n]);
                }
            }
            Op::GatherRows { table, ids } => {
                let c = self.value(*table).cols();
                if let Some(gt) = self.slot(*table, grads) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::MaskedMeanRows { x, mask } => {
                let c = self.value(*x).cols();
                let count = mask.iter().filter(|&&m| m).count();
                if count == 0 {
                    return;
                }
                let inv = T::one() / T::of(count as f64);
                if let Some(gx) = self.slot(*x, grads) {
                    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        for (d, &gv) in gx[r * c..(r + 1) * c].iter_mut().zip(g) {
                            *d = *d + gv * inv;
                        }
                    }
                }
            }
            Op::Mean { parts } => {
                let share = g[0] / T::of(parts.len() as f64);
                for &p in parts {
                    if let Some(gp) = self.slot(p, grads) {
                        gp[0] = gp[0] + share;
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = self.slot(*x, grads) {
                    add_into(gx, g);
                }
            }
        }
    }

    /// Gradient buffer for `v`, allocated on first use; `None` when `v` needs no gradient.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum: T = xs.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Max-subtracted softmax restricted to `mask`.
pub fn masked_softmax_values<T: Scalar>(xs: &[T], mask: &[bool]) -> Result<Vec<T>, NumError> {
    if !mask.iter().any(|&m| m) {
        return Err(NumError::EmptyMask);
    }
    let max = xs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(T::neg_infinity(), |acc, (&v, _)| acc.max(v));
    let mut out: Vec<T> = xs
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - max).exp() } else { T::zero() })
        .collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / total;
    }
    Ok(out)
}

/// Plain softmax over all entries.
pub fn softmax_values<T: Scalar>(xs: &[T]) -> Vec<T> {
    masked_softmax_values(xs, &vec![true; xs.len()]).expect("non-empty logits")
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Raw gradient buffer, `None` if no gradient reached `v`.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape<T>) -> Tensor<T> {
        let shape = tape.shape(v).to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shaped like its value"),
            None => Tensor::zeros(&shape),
        }
    }
}
