use super::kernels::{add_into, axpy, dot, log_sum_exp, softmax_into};
use super::{oneplus, sigmoid, AutodiffError, Real, Result, EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a * x + b` for constants `a`, `b`.
    ScaleShift(Var, T),
    /// Every entry of `x` times the one-element `s`.
    MulScalar(Var, Var),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Outer(Var, Var),
    Concat(Vec<Var>),
    /// Contiguous range of the flat buffer starting at the offset.
    Slice(Var, usize),
    /// Rows of the source picked by index; `usize` is the row length.
    Gather(Var, Vec<usize>, usize),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Oneplus(Var),
    Softmax(Var),
    Sum(Var),
    CumProdExclusive(Var),
    CosineRows(Var, Var),
    CrossEntropy(Var, usize),
    LinkUpdate(Var, Var, Var),
    EraseWrite(Var, Var, Var, Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    tracked: bool,
}

/// Append-only record of a computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// a reverse sweep visits each node after all of its consumers.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `var`, if `var` is a tracked leaf
    /// that the loss depends on.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Handles from before the call are invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First entry of `v`; convenient for scalars.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(shape_err("leaf", &shape, &[value.len()]));
        }
        Ok(self.push(shape, value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        self.leaf(shape, value, false)
    }

    pub fn vector(&mut self, value: Vec<T>) -> Var {
        let n = value.len();
        self.push(vec![n], value, Op::Leaf, false)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = numel(&shape);
        self.push(shape, vec![T::zero(); n], Op::Leaf, false)
    }

    fn binary_same(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape != nb.shape {
            return Err(shape_err(op_name, &na.shape, &nb.shape));
        }
        let value = na.value.iter().zip(&nb.value).map(|(x, y)| f(*x, *y)).collect();
        let shape = na.shape.clone();
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(shape, value, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (a, b) = (T::lit(scale), T::lit(shift));
        let node = &self.nodes[x.0];
        let value = node.value.iter().map(|v| a * *v + b).collect();
        let shape = node.shape.clone();
        let tracked = node.tracked;
        self.push(shape, value, Op::ScaleShift(x, a), tracked)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.scale_shift(x, scale, 0.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.scale_shift(x, -1.0, 1.0)
    }

    /// Broadcasts the single entry of `s` over `x`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ns = &self.nodes[s.0];
        if ns.value.len() != 1 {
            return Err(shape_err("mul_scalar", &self.nodes[x.0].shape, &ns.shape));
        }
        let k = ns.value[0];
        let nx = &self.nodes[x.0];
        let value = nx.value.iter().map(|v| *v * k).collect();
        let shape = nx.shape.clone();
        let tracked = self.tracked(&[x, s]);
        Ok(self.push(shape, value, Op::MulScalar(x, s), tracked))
    }

    fn matrix_dims(&self, op: &'static str, w: Var, other: Var) -> Result<(usize, usize)> {
        let s = &self.nodes[w.0].shape;
        if s.len() != 2 {
            return Err(shape_err(op, s, &self.nodes[other.0].shape));
        }
        Ok((s[0], s[1]))
    }

    /// `W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("matvec", w, x)?;
        if self.nodes[x.0].shape != [n] {
            return Err(shape_err("matvec", &[m, n], &self.nodes[x.0].shape));
        }
        let (wv, xv) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        let value = wv.chunks_exact(n).map(|row| dot(row, xv)).collect();
        let tracked = self.tracked(&[w, x]);
        Ok(self.push(vec![m], value, Op::MatVec(w, x), tracked))
    }

    /// `Wᵀ x` for `W: [m, n]`, `x: [m]`.
    pub fn mat_t_vec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("mat_t_vec", w, x)?;
        if self.nodes[x.0].shape != [m] {
            return Err(shape_err("mat_t_vec", &[m, n], &self.nodes[x.0].shape));
        }
        let (wv, xv) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        let mut value = vec![T::zero(); n];
        for (row, xi) in wv.chunks_exact(n).zip(xv) {
            axpy(*xi, row, &mut value);
        }
        let tracked = self.tracked(&[w, x]);
        Ok(self.push(vec![n], value, Op::MatTVec(w, x), tracked))
    }

    /// `A B` for `A: [m, k]`, `B: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a, b)?;
        let sb = &self.nodes[b.0].shape;
        if sb.len() != 2 || sb[0] != k {
            return Err(shape_err("matmul", &[m, k], sb));
        }
        let n = sb[1];
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut value = vec![T::zero(); m * n];
        for (arow, out) in av.chunks_exact(k).zip(value.chunks_exact_mut(n)) {
            for (aik, brow) in arow.iter().zip(bv.chunks_exact(n)) {
                axpy(*aik, brow, out);
            }
        }
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), tracked))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("affine", w, x)?;
        if self.nodes[x.0].shape != [n] {
            return Err(shape_err("affine", &[m, n], &self.nodes[x.0].shape));
        }
        if self.nodes[b.0].shape != [m] {
            return Err(shape_err("affine", &[m, n], &self.nodes[b.0].shape));
        }
        let (wv, xv, bv) = (&self.nodes[w.0].value, &self.nodes[x.0].value, &self.nodes[b.0].value);
        let value = wv.chunks_exact(n).zip(bv).map(|(row, bi)| dot(row, xv) + *bi).collect();
        let tracked = self.tracked(&[w, x, b]);
        Ok(self.push(vec![m], value, Op::Affine(w, x, b), tracked))
    }

    /// `a bᵀ` for vectors `a: [m]`, `b: [n]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 1 || sb.len() != 1 {
            return Err(shape_err("outer", sa, sb));
        }
        let (m, n) = (sa[0], sb[0]);
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut value = Vec::with_capacity(m * n);
        for ai in av {
            value.extend(bv.iter().map(|bj| *ai * *bj));
        }
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(vec![m, n], value, Op::Outer(a, b), tracked))
    }

    /// Concatenation along the leading axis. Trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(AutodiffError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        };
        let tail = self.nodes[first.0].shape[1..].to_vec();
        let mut lead = 0;
        let mut value = Vec::new();
        for p in parts {
            let s = &self.nodes[p.0].shape;
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err("concat", &self.nodes[first.0].shape, s));
            }
            lead += s[0];
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let tracked = self.tracked(parts);
        Ok(self.push(shape, value, Op::Concat(parts.to_vec()), tracked))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = &self.nodes[x.0].shape;
        if s.is_empty() || len == 0 || start + len > s[0] {
            return Err(shape_err("slice", s, &[start, len]));
        }
        let row: usize = s[1..].iter().product();
        let mut shape = s.clone();
        shape[0] = len;
        let value = self.nodes[x.0].value[start * row..(start + len) * row].to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(shape, value, Op::Slice(x, start * row), tracked))
    }

    /// Splits a leading axis into consecutive pieces of the given lengths.
    pub fn split(&mut self, x: Var, lens: &[usize]) -> Result<Vec<Var>> {
        let total: usize = lens.iter().sum();
        let s = &self.nodes[x.0].shape;
        if s.is_empty() || total != s[0] {
            return Err(shape_err("split", s, lens));
        }
        let mut start = 0;
        lens.iter()
            .map(|&len| {
                let v = self.slice(x, start, len);
                start += len;
                v
            })
            .collect()
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let node = &self.nodes[x.0];
        if numel(&shape) != node.value.len() {
            return Err(shape_err("reshape", &node.shape, &shape));
        }
        let value = node.value.clone();
        let tracked = node.tracked;
        Ok(self.push(shape, value, Op::Slice(x, 0), tracked))
    }

    /// Rows of `src` (leading axis) picked by `indices`; output `[k, rest..]`.
    /// Indices are constants and receive no gradient.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let s = self.nodes[src.0].shape.clone();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&s[1..]);
        self.gather_with_shape(src, indices, shape)
    }

    /// One row of `src`, with the leading axis dropped.
    pub fn row(&mut self, src: Var, index: usize) -> Result<Var> {
        let s = self.nodes[src.0].shape.clone();
        let shape = if s.len() > 1 { s[1..].to_vec() } else { vec![] };
        self.gather_with_shape(src, &[index], shape)
    }

    fn gather_with_shape(&mut self, src: Var, indices: &[usize], shape: Vec<usize>) -> Result<Var> {
        let s = &self.nodes[src.0].shape;
        if s.is_empty() || indices.is_empty() {
            return Err(shape_err("gather", s, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(AutodiffError::Invalid {
                op: "gather",
                msg: format!("index {bad} out of range for leading extent {}", s[0]),
            });
        }
        let row: usize = s[1..].iter().product();
        let src_val = &self.nodes[src.0].value;
        let mut value = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            value.extend_from_slice(&src_val[i * row..(i + 1) * row]);
        }
        let tracked = self.tracked(&[src]);
        Ok(self.push(shape, value, Op::Gather(src, indices.to_vec(), row), tracked))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let node = &self.nodes[x.0];
        let value = node.value.iter().map(|v| f(*v)).collect();
        let shape = node.shape.clone();
        let tracked = node.tracked;
        self.push(shape, value, op, tracked)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x))
    }

    /// `1 + softplus(x)`; strictly greater than one.
    pub fn oneplus(&mut self, x: Var) -> Var {
        self.unary(x, oneplus, Op::Oneplus(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let node = &self.nodes[x.0];
        if node.shape.len() != 1 || node.value.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "softmax",
                msg: format!("expected a non-empty vector, got shape {:?}", node.shape),
            });
        }
        let mut value = vec![T::zero(); node.value.len()];
        softmax_into(&node.value, &mut value);
        let shape = node.shape.clone();
        let tracked = node.tracked;
        Ok(self.push(shape, value, Op::Softmax(x), tracked))
    }

    /// Sum of all entries, as a scalar of shape `[]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let node = &self.nodes[x.0];
        let total = node.value.iter().copied().sum();
        let tracked = node.tracked;
        self.push(vec![], vec![total], Op::Sum(x), tracked)
    }

    /// `y[j] = x[0] * .. * x[j-1]`, with `y[0] = 1`.
    pub fn cumprod_exclusive(&mut self, x: Var) -> Result<Var> {
        let node = &self.nodes[x.0];
        if node.shape.len() != 1 {
            return Err(shape_err("cumprod_exclusive", &node.shape, &[]));
        }
        let mut acc = T::one();
        let value = node
            .value
            .iter()
            .map(|v| {
                let out = acc;
                acc *= *v;
                out
            })
            .collect();
        let shape = node.shape.clone();
        let tracked = node.tracked;
        Ok(self.push(shape, value, Op::CumProdExclusive(x), tracked))
    }

    /// Cosine similarity of every row of `m: [n, d]` against `k: [d]`.
    pub fn cosine_rows(&mut self, m: Var, k: Var) -> Result<Var> {
        let (sm, sk) = (&self.nodes[m.0].shape, &self.nodes[k.0].shape);
        if sm.len() != 2 || sk.len() != 1 || sm[1] != sk[0] {
            return Err(shape_err("cosine_rows", sm, sk));
        }
        let n = sm[0];
        let (mv, kv) = (&self.nodes[m.0].value, &self.nodes[k.0].value);
        let nk = dot(kv, kv).sqrt();
        let eps = T::lit(EPS);
        let value = mv
            .chunks_exact(kv.len())
            .map(|row| dot(row, kv) / (dot(row, row).sqrt() * nk + eps))
            .collect();
        let tracked = self.tracked(&[m, k]);
        Ok(self.push(vec![n], value, Op::CosineRows(m, k), tracked))
    }

    /// Cosine similarity of two equal-length vectors, as a scalar.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.nodes[a.0].shape.clone(), self.nodes[b.0].shape.clone());
        if sa.len() != 1 || sa != sb {
            return Err(shape_err("cosine_similarity", &sa, &sb));
        }
        let row = self.reshape(a, vec![1, sa[0]])?;
        let sim = self.cosine_rows(row, b)?;
        self.nodes[sim.0].shape = vec![];
        Ok(sim)
    }

    /// `logsumexp(logits) - logits[target]`, as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let node = &self.nodes[logits.0];
        if node.shape.len() != 1 || target >= node.value.len() {
            return Err(AutodiffError::Invalid {
                op: "cross_entropy",
                msg: format!("target {target} for logits of shape {:?}", node.shape),
            });
        }
        let loss = log_sum_exp(&node.value) - node.value[target];
        let tracked = node.tracked;
        Ok(self.push(vec![], vec![loss], Op::CrossEntropy(logits, target), tracked))
    }

    /// Temporal link update:
    /// `L[i,j] = (1 - w[i] - w[j]) L_prev[i,j] + w[i] p[j]`, zero diagonal,
    /// clamped to `[0, 1]`.
    pub fn link_update(&mut self, link: Var, precedence: Var, write: Var) -> Result<Var> {
        let n = self.nodes[write.0].value.len();
        let (sl, sp, sw) = (
            &self.nodes[link.0].shape,
            &self.nodes[precedence.0].shape,
            &self.nodes[write.0].shape,
        );
        if sl != &[n, n] || sp != &[n] || sw != &[n] {
            return Err(shape_err("link_update", sl, sw));
        }
        let (lv, pv, wv) = (
            &self.nodes[link.0].value,
            &self.nodes[precedence.0].value,
            &self.nodes[write.0].value,
        );
        let mut value = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = (T::one() - wv[i] - wv[j]) * lv[i * n + j] + wv[i] * pv[j];
                value[i * n + j] = v.max(T::zero()).min(T::one());
            }
        }
        let tracked = self.tracked(&[link, precedence, write]);
        Ok(self.push(vec![n, n], value, Op::LinkUpdate(link, precedence, write), tracked))
    }

    /// Erase-then-add memory write:
    /// `M = M_prev ∘ (1 - w eᵀ) + w vᵀ`.
    pub fn erase_write(&mut self, mem: Var, w: Var, erase: Var, add: Var) -> Result<Var> {
        let sm = self.nodes[mem.0].shape.clone();
        if sm.len() != 2
            || self.nodes[w.0].shape != [sm[0]]
            || self.nodes[erase.0].shape != [sm[1]]
            || self.nodes[add.0].shape != [sm[1]]
        {
            return Err(shape_err("erase_write", &sm, &self.nodes[w.0].shape));
        }
        let d = sm[1];
        let (mv, wv, ev, av) = (
            &self.nodes[mem.0].value,
            &self.nodes[w.0].value,
            &self.nodes[erase.0].value,
            &self.nodes[add.0].value,
        );
        let mut value = Vec::with_capacity(mv.len());
        for (row, wi) in mv.chunks_exact(d).zip(wv) {
            for ((m, e), a) in row.iter().zip(ev).zip(av) {
                value.push(*m * (T::one() - *wi * *e) + *wi * *a);
            }
        }
        let tracked = self.tracked(&[mem, w, erase, add]);
        Ok(self.push(sm, value, Op::EraseWrite(mem, w, erase, add), tracked))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(root.shape.clone()));
        }
        let root_tracked = root.tracked;
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        if !root_tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| -> &[T] { &nodes[v.0].value };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        add_into(&g, ga);
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        add_into(&g, gb);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        add_into(&g, ga);
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        axpy(-T::one(), &g, gb);
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(val(*b)) {
                            *o += *gi * *bi;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(val(*a)) {
                            *o += *gi * *ai;
                        }
                    }
                }
                Op::Div(a, b) => {
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(val(*b)) {
                            *o += *gi / *bi;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        for (((o, gi), ai), bi) in gb.iter_mut().zip(&g).zip(val(*a)).zip(val(*b)) {
                            *o -= *gi * *ai / (*bi * *bi);
                        }
                    }
                }
                Op::ScaleShift(x, a) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        axpy(*a, &g, gx);
                    }
                }
                Op::MulScalar(x, s) => {
                    let k = val(*s)[0];
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        axpy(k, &g, gx);
                    }
                    if let Some(gs) = slot(&mut grads, &nodes, *s) {
                        gs[0] += dot(&g, val(*x));
                    }
                }
                Op::MatVec(w, x) => {
                    let n = val(*x).len();
                    if let Some(gw) = slot(&mut grads, &nodes, *w) {
                        for (grow, gi) in gw.chunks_exact_mut(n).zip(&g) {
                            axpy(*gi, val(*x), grow);
                        }
                    }
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for (row, gi) in val(*w).chunks_exact(n).zip(&g) {
                            axpy(*gi, row, gx);
                        }
                    }
                }
                Op::MatTVec(w, x) => {
                    let n = g.len();
                    if let Some(gw) = slot(&mut grads, &nodes, *w) {
                        for (grow, xi) in gw.chunks_exact_mut(n).zip(val(*x)) {
                            axpy(*xi, &g, grow);
                        }
                    }
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for (o, row) in gx.iter_mut().zip(val(*w).chunks_exact(n)) {
                            *o += dot(row, &g);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let k = nodes[a.0].shape[1];
                    let n = nodes[b.0].shape[1];
                    // dA = G Bᵀ, dB = Aᵀ G
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        for (garow, grow) in ga.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                            for (o, brow) in garow.iter_mut().zip(val(*b).chunks_exact(n)) {
                                *o += dot(grow, brow);
                            }
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        for (arow, grow) in val(*a).chunks_exact(k).zip(g.chunks_exact(n)) {
                            for (aik, gbrow) in arow.iter().zip(gb.chunks_exact_mut(n)) {
                                axpy(*aik, grow, gbrow);
                            }
                        }
                    }
                }
                Op::Affine(w, x, b) => {
                    let n = val(*x).len();
                    if let Some(gw) = slot(&mut grads, &nodes, *w) {
                        for (grow, gi) in gw.chunks_exact_mut(n).zip(&g) {
                            axpy(*gi, val(*x), grow);
                        }
                    }
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for (row, gi) in val(*w).chunks_exact(n).zip(&g) {
                            axpy(*gi, row, gx);
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        add_into(&g, gb);
                    }
                }
                Op::Outer(a, b) => {
                    let n = val(*b).len();
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        for (o, grow) in ga.iter_mut().zip(g.chunks_exact(n)) {
                            *o += dot(grow, val(*b));
                        }
                    }
                    if let Some(gb) = slot(&mut grads, &nodes, *b) {
                        for (ai, grow) in val(*a).iter().zip(g.chunks_exact(n)) {
                            axpy(*ai, grow, gb);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(gp) = slot(&mut grads, &nodes, *p) {
                            add_into(&g[offset..offset + len], gp);
                        }
                        offset += len;
                    }
                }
                Op::Slice(x, offset) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        add_into(&g, &mut gx[*offset..*offset + g.len()]);
                    }
                }
                Op::Gather(src, indices, row) => {
                    if let Some(gs) = slot(&mut grads, &nodes, *src) {
                        for (k, &i) in indices.iter().enumerate() {
                            add_into(&g[k * row..(k + 1) * row], &mut gs[i * row..(i + 1) * row]);
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for ((o, gi), y) in gx.iter_mut().zip(&g).zip(&node.value) {
                            *o += *gi * *y * (T::one() - *y);
                        }
                    }
                }
                Op::Tanh(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for ((o, gi), y) in gx.iter_mut().zip(&g).zip(&node.value) {
                            *o += *gi * (T::one() - *y * *y);
                        }
                    }
                }
                Op::Exp(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for ((o, gi), y) in gx.iter_mut().zip(&g).zip(&node.value) {
                            *o += *gi * *y;
                        }
                    }
                }
                Op::Log(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for ((o, gi), xi) in gx.iter_mut().zip(&g).zip(val(*x)) {
                            *o += *gi / *xi;
                        }
                    }
                }
                Op::Oneplus(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        for ((o, gi), xi) in gx.iter_mut().zip(&g).zip(val(*x)) {
                            *o += *gi * sigmoid(*xi);
                        }
                    }
                }
                Op::Softmax(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        let y = &node.value;
                        let gy = dot(&g, y);
                        for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                            *o += *yi * (*gi - gy);
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        gx.iter_mut().for_each(|o| *o += g[0]);
                    }
                }
                Op::CumProdExclusive(x) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        // gx[i] = y[i] * S[i], S[i] = g[i+1] + x[i+1] S[i+1], S[n-1] = 0.
                        let (xv, y) = (val(*x), &node.value);
                        let n = xv.len();
                        let mut s = T::zero();
                        for i in (0..n).rev() {
                            gx[i] += y[i] * s;
                            s = g[i] + xv[i] * s;
                        }
                    }
                }
                Op::CosineRows(m, k) => {
                    let (mv, kv) = (val(*m), val(*k));
                    let d = kv.len();
                    let nk = dot(kv, kv).sqrt();
                    let eps = T::lit(EPS);
                    let rows: Vec<(T, T, T)> = mv
                        .chunks_exact(d)
                        .map(|row| {
                            let nm = dot(row, row).sqrt();
                            (dot(row, kv), nm, nm * nk + eps)
                        })
                        .collect();
                    if let Some(gm) = slot(&mut grads, &nodes, *m) {
                        for ((gm_row, row), (gi, (dt, nm, den))) in
                            gm.chunks_exact_mut(d).zip(mv.chunks_exact(d)).zip(g.iter().zip(&rows))
                        {
                            axpy(*gi / *den, kv, gm_row);
                            if *nm > T::zero() {
                                let c = -*gi * *dt * nk / (*den * *den * *nm);
                                axpy(c, row, gm_row);
                            }
                        }
                    }
                    if let Some(gk) = slot(&mut grads, &nodes, *k) {
                        for (row, (gi, (dt, nm, den))) in mv.chunks_exact(d).zip(g.iter().zip(&rows)) {
                            axpy(*gi / *den, row, gk);
                            if nk > T::zero() {
                                let c = -*gi * *dt * *nm / (*den * *den * nk);
                                axpy(c, kv, gk);
                            }
                        }
                    }
                }
                Op::CrossEntropy(x, target) => {
                    if let Some(gx) = slot(&mut grads, &nodes, *x) {
                        let xv = val(*x);
                        let mut p = vec![T::zero(); xv.len()];
                        softmax_into(xv, &mut p);
                        p[*target] -= T::one();
                        axpy(g[0], &p, gx);
                    }
                }
                Op::LinkUpdate(l, p, w) => {
                    let (lv, pv, wv) = (val(*l), val(*p), val(*w));
                    let n = wv.len();
                    let y = &node.value;
                    let active = |i: usize, j: usize| {
                        let raw = (T::one() - wv[i] - wv[j]) * lv[i * n + j] + wv[i] * pv[j];
                        i != j && raw == y[i * n + j]
                    };
                    if let Some(gl) = slot(&mut grads, &nodes, *l) {
                        for i in 0..n {
                            for j in 0..n {
                                if active(i, j) {
                                    gl[i * n + j] += g[i * n + j] * (T::one() - wv[i] - wv[j]);
                                }
                            }
                        }
                    }
                    if let Some(gp) = slot(&mut grads, &nodes, *p) {
                        for i in 0..n {
                            for j in 0..n {
                                if active(i, j) {
                                    gp[j] += g[i * n + j] * wv[i];
                                }
                            }
                        }
                    }
                    if let Some(gw) = slot(&mut grads, &nodes, *w) {
                        for i in 0..n {
                            for j in 0..n {
                                if active(i, j) {
                                    let gij = g[i * n + j];
                                    gw[i] += gij * (pv[j] - lv[i * n + j]);
                                    gw[j] -= gij * lv[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::EraseWrite(m, w, e, a) => {
                    let (mv, wv, ev, av) = (val(*m), val(*w), val(*e), val(*a));
                    let d = ev.len();
                    if let Some(gm) = slot(&mut grads, &nodes, *m) {
                        for ((gm_row, g_row), wi) in gm.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(wv) {
                            for ((o, gi), ej) in gm_row.iter_mut().zip(g_row).zip(ev) {
                                *o += *gi * (T::one() - *wi * *ej);
                            }
                        }
                    }
                    if let Some(gw) = slot(&mut grads, &nodes, *w) {
                        for ((o, g_row), m_row) in gw.iter_mut().zip(g.chunks_exact(d)).zip(mv.chunks_exact(d)) {
                            let mut acc = T::zero();
                            for (((gi, mij), ej), aj) in g_row.iter().zip(m_row).zip(ev).zip(av) {
                                acc += *gi * (*aj - *mij * *ej);
                            }
                            *o += acc;
                        }
                    }
                    if let Some(ge) = slot(&mut grads, &nodes, *e) {
                        for ((g_row, m_row), wi) in g.chunks_exact(d).zip(mv.chunks_exact(d)).zip(wv) {
                            for ((o, gi), mij) in ge.iter_mut().zip(g_row).zip(m_row) {
                                *o -= *gi * *mij * *wi;
                            }
                        }
                    }
                    if let Some(ga) = slot(&mut grads, &nodes, *a) {
                        for (g_row, wi) in g.chunks_exact(d).zip(wv) {
                            axpy(*wi, g_row, ga);
                        }
                    }
                }
            }
        }
        // Only leaves keep their gradients.
        for (g, node) in grads.iter_mut().zip(&nodes) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.tracked {
        return None;
    }
    let n = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
}
