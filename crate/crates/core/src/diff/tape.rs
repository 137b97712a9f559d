//! Reverse-mode tape.
//!
//! Every forward op appends a node holding its output value and the ids of
//! its inputs. `backward` walks the nodes from the loss back to the first
//! node, which is a valid reverse topological order because inputs always
//! precede the ops that consume them.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_raw, Real, Tensor};
use super::DiffError;

type Result<T> = std::result::Result<T, DiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, T),
    Exp(usize),
    Log(usize),
    SoftmaxRows(usize),
    SegmentSoftmax(usize, Rc<[usize]>),
    SegmentSum(usize, Rc<[usize]>),
    GatherRows(usize, Rc<[usize]>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize, usize),
    SumAll(usize),
    MeanAll(usize),
    SqNormRows(usize),
    Trilinear {
        w: usize,
        hs: usize,
        r: usize,
        ho: usize,
    },
    Clamp(usize, T, T),
    Select(usize, usize, Rc<[bool]>),
    Reshape(usize),
    Index(usize, usize),
    MulScalarVar(usize, usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records forward computations for a later backward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<HashMap<ParamId, Var>>,
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Borrow the value held by `v`.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    fn push(&self, op: &'static str, value: Tensor<T>, kind: Op<T>, inputs: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|&i| nodes[i].needs_grad);
        nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn val(&self, v: Var) -> Ref<'_, Tensor<T>> {
        self.value(v)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op: "constant" });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Binds parameter `id` from `store`. Binding the same id twice returns
    /// the same node, so gradients from every use land in one place.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.borrow().get(&id) {
            return v;
        }
        let trainable = store.is_trainable(id);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            needs_grad: trainable,
        });
        let v = Var(nodes.len() - 1);
        self.bound.borrow_mut().insert(id, v);
        v
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (av, bv) = (self.val(a), self.val(b));
            if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
                return Err(shape_err(
                    "matmul",
                    format!("{:?} x {:?}", av.shape(), bv.shape()),
                ));
            }
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            Tensor::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?
        };
        self.push("matmul", value, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = {
            let av = self.val(a);
            if av.ndim() != 2 {
                return Err(shape_err("transpose", format!("{:?}", av.shape())));
            }
            av.transpose2()
        };
        self.push("transpose", value, Op::Transpose(a.0), &[a.0])
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        Tensor::new(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    /// Adds vector `b` (length n) to every row of `a` (m×n).
    pub fn add_row(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (av, bv) = (self.val(a), self.val(b));
            let n = av.cols();
            if av.ndim() != 2 || bv.numel() != n {
                return Err(shape_err("add_row", format!("{:?} + {:?}", av.shape(), bv.shape())));
            }
            let mut out = av.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (o, &x) in row.iter_mut().zip(bv.data()) {
                    *o += x;
                }
            }
            out
        };
        self.push("add_row", value, Op::AddRow(a.0, b.0), &[a.0, b.0])
    }

    /// Scales row i of `a` (m×n) by `c[i]` (`c` has m elements).
    pub fn mul_col(&self, a: Var, c: Var) -> Result<Var> {
        let value = {
            let (av, cv) = (self.val(a), self.val(c));
            let (m, n) = (av.rows(), av.cols());
            if av.ndim() != 2 || cv.numel() != m {
                return Err(shape_err("mul_col", format!("{:?} * {:?}", av.shape(), cv.shape())));
            }
            let mut out = av.clone();
            for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
                let s = cv.data()[i];
                for o in row {
                    *o *= s;
                }
            }
            out
        };
        self.push("mul_col", value, Op::MulCol(a.0, c.0), &[a.0, c.0])
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let value = self.val(a).map(|x| x * c);
        self.push("scale", value, Op::Scale(a.0, c), &[a.0])
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let value = self.val(a).map(|x| x + c);
        self.push("add_scalar", value, Op::AddScalar(a.0), &[a.0])
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let value = self.val(a).map(Real::sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let value = self.val(a).map(Real::tanh);
        self.push("tanh", value, Op::Tanh(a.0), &[a.0])
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        let s = T::lit(slope);
        let value = self.val(a).map(|x| if x >= T::ZERO { x } else { s * x });
        self.push("leaky_relu", value, Op::LeakyRelu(a.0, s), &[a.0])
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let value = self.val(a).map(Real::exp);
        self.push("exp", value, Op::Exp(a.0), &[a.0])
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let value = self.val(a).map(Real::ln);
        self.push("log", value, Op::Log(a.0), &[a.0])
    }

    /// Softmax along the last axis (each row of a matrix, or a whole vector).
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let value = {
            let av = self.val(a);
            let n = if av.ndim() >= 2 { av.cols() } else { av.numel() };
            if n == 0 {
                return Err(shape_err("softmax", format!("{:?}", av.shape())));
            }
            let mut out = av.clone();
            for row in out.data_mut().chunks_mut(n) {
                softmax_in_place(row);
            }
            out
        };
        self.push("softmax", value, Op::SoftmaxRows(a.0), &[a.0])
    }

    /// Softmax within contiguous segments of a flat vector. `offsets` has
    /// one more entry than there are segments; segment s spans
    /// `offsets[s]..offsets[s+1]`.
    pub fn segment_softmax(&self, a: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let value = {
            let av = self.val(a);
            check_offsets("segment_softmax", &offsets, av.numel())?;
            let mut out = av.clone();
            for w in offsets.windows(2) {
                softmax_in_place(&mut out.data_mut()[w[0]..w[1]]);
            }
            out
        };
        self.push("segment_softmax", value, Op::SegmentSoftmax(a.0, offsets), &[a.0])
    }

    /// Sums rows of `a` (E×n) within each segment, producing S×n.
    pub fn segment_sum(&self, a: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let value = {
            let av = self.val(a);
            if av.ndim() != 2 {
                return Err(shape_err("segment_sum", format!("{:?}", av.shape())));
            }
            check_offsets("segment_sum", &offsets, av.rows())?;
            let n = av.cols();
            let segs = offsets.len() - 1;
            let mut out = vec![T::ZERO; segs * n];
            for (s, w) in offsets.windows(2).enumerate() {
                let orow = &mut out[s * n..(s + 1) * n];
                for e in w[0]..w[1] {
                    for (o, &x) in orow.iter_mut().zip(av.row(e)) {
                        *o += x;
                    }
                }
            }
            Tensor::new(vec![segs, n], out)?
        };
        self.push("segment_sum", value, Op::SegmentSum(a.0, offsets), &[a.0])
    }

    /// Selects rows of `a` (m×n) by index; indices may repeat.
    pub fn gather_rows(&self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let value = {
            let av = self.val(a);
            if av.ndim() != 2 {
                return Err(shape_err("gather_rows", format!("{:?}", av.shape())));
            }
            let (m, n) = (av.rows(), av.cols());
            let mut out = Vec::with_capacity(idx.len() * n);
            for &i in idx.iter() {
                if i >= m {
                    return Err(shape_err("gather_rows", format!("row {i} of {m}")));
                }
                out.extend_from_slice(av.row(i));
            }
            Tensor::new(vec![idx.len(), n], out)?
        };
        self.push("gather_rows", value, Op::GatherRows(a.0, idx), &[a.0])
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.val(p)).collect();
            let m = vals.first().map(|v| v.rows()).ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
            if vals.iter().any(|v| v.ndim() != 2 || v.rows() != m) {
                let shapes: Vec<_> = vals.iter().map(|v| v.shape().to_vec()).collect();
                return Err(shape_err("concat_cols", format!("{shapes:?}")));
            }
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut out = Vec::with_capacity(m * total);
            for i in 0..m {
                for v in &vals {
                    out.extend_from_slice(v.row(i));
                }
            }
            Tensor::new(vec![m, total], out)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat_cols", value, Op::ConcatCols(ids.clone()), &ids)
    }

    /// Stacks inputs along the first axis. 1-D inputs are concatenated into a vector.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.val(p)).collect();
            let first = vals.first().ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
            if first.ndim() == 1 {
                if vals.iter().any(|v| v.ndim() != 1) {
                    return Err(shape_err("concat_rows", "mixed ranks".into()));
                }
                Tensor::vector(vals.iter().flat_map(|v| v.data().iter().copied()).collect())
            } else {
                let n = first.cols();
                if vals.iter().any(|v| v.ndim() != 2 || v.cols() != n) {
                    let shapes: Vec<_> = vals.iter().map(|v| v.shape().to_vec()).collect();
                    return Err(shape_err("concat_rows", format!("{shapes:?}")));
                }
                let m: usize = vals.iter().map(|v| v.rows()).sum();
                let data = vals.iter().flat_map(|v| v.data().iter().copied()).collect();
                Tensor::new(vec![m, n], data)?
            }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat_rows", value, Op::ConcatRows(ids.clone()), &ids)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = {
            let av = self.val(a);
            if av.ndim() != 2 || start >= end || end > av.cols() {
                return Err(shape_err("slice_cols", format!("{:?}[.., {start}..{end}]", av.shape())));
            }
            let m = av.rows();
            let mut out = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                out.extend_from_slice(&av.row(i)[start..end]);
            }
            Tensor::new(vec![m, end - start], out)?
        };
        self.push("slice_cols", value, Op::SliceCols(a.0, start, end), &[a.0])
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.val(a).data().iter().copied().sum());
        self.push("sum", value, Op::SumAll(a.0), &[a.0])
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let value = {
            let av = self.val(a);
            if av.numel() == 0 {
                return Err(shape_err("mean", "empty tensor".into()));
            }
            Tensor::scalar(av.data().iter().copied().sum::<T>() / T::lit(av.numel() as f64))
        };
        self.push("mean", value, Op::MeanAll(a.0), &[a.0])
    }

    /// Squared L2 norm of every row (m×n → m).
    pub fn sq_norm_rows(&self, a: Var) -> Result<Var> {
        let value = {
            let av = self.val(a);
            let rows = if av.ndim() >= 2 { av.rows() } else { 1 };
            let n = av.numel() / rows.max(1);
            Tensor::vector(
                av.data()
                    .chunks(n.max(1))
                    .map(|r| r.iter().map(|&x| x * x).sum())
                    .collect(),
            )
        };
        self.push("sq_norm_rows", value, Op::SqNormRows(a.0), &[a.0])
    }

    /// Batched mode-1/2/3 contraction `W ×₁ hs ×₂ r ×₃ ho`.
    ///
    /// `w` is d_s×d_r×d_o, `hs` is B×d_s, `r` is K×d_r and `ho` is B×d_o.
    /// The result is B×K with entry (b, k) = Σ W[i,j,l]·hs[b,i]·r[k,j]·ho[b,l].
    pub fn trilinear(&self, w: Var, hs: Var, r: Var, ho: Var) -> Result<Var> {
        let value = {
            let (wv, hv, rv, ov) = (self.val(w), self.val(hs), self.val(r), self.val(ho));
            let ws = wv.shape();
            if ws.len() != 3
                || hv.ndim() != 2
                || rv.ndim() != 2
                || ov.ndim() != 2
                || hv.cols() != ws[0]
                || rv.cols() != ws[1]
                || ov.cols() != ws[2]
                || hv.rows() != ov.rows()
            {
                return Err(shape_err(
                    "trilinear",
                    format!(
                        "W {:?}, subject {:?}, relation {:?}, object {:?}",
                        ws,
                        hv.shape(),
                        rv.shape(),
                        ov.shape()
                    ),
                ));
            }
            let (ds, dr, d_o) = (ws[0], ws[1], ws[2]);
            let (b, k) = (hv.rows(), rv.rows());
            let mut out = vec![T::ZERO; b * k];
            let mut t = vec![T::ZERO; dr * d_o];
            let mut u = vec![T::ZERO; dr];
            for bi in 0..b {
                trilinear_partials(wv.data(), hv.row(bi), ov.row(bi), ds, dr, d_o, &mut t, &mut u);
                for ki in 0..k {
                    out[bi * k + ki] = rv.row(ki).iter().zip(&u).map(|(&x, &y)| x * y).sum();
                }
            }
            Tensor::new(vec![b, k], out)?
        };
        self.push(
            "trilinear",
            value,
            Op::Trilinear {
                w: w.0,
                hs: hs.0,
                r: r.0,
                ho: ho.0,
            },
            &[w.0, hs.0, r.0, ho.0],
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let value = self.val(a).map(|x| x.max(lo).min(hi));
        self.push("clamp", value, Op::Clamp(a.0, lo, hi), &[a.0])
    }

    /// Elementwise choice: `take_a[i]` picks `a[i]`, otherwise `b[i]`.
    pub fn select(&self, a: Var, b: Var, take_a: Rc<[bool]>) -> Result<Var> {
        let value = {
            let (av, bv) = (self.val(a), self.val(b));
            if av.shape() != bv.shape() || take_a.len() != av.numel() {
                return Err(shape_err("select", format!("{:?} / {:?} / mask {}", av.shape(), bv.shape(), take_a.len())));
            }
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .zip(take_a.iter())
                .map(|((&x, &y), &t)| if t { x } else { y })
                .collect();
            Tensor::new(av.shape().to_vec(), data)?
        };
        self.push("select", value, Op::Select(a.0, b.0, take_a), &[a.0, b.0])
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.val(a).clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(a.0), &[a.0])
    }

    /// Flat element `i` as a length-1 tensor.
    pub fn index(&self, a: Var, i: usize) -> Result<Var> {
        let value = {
            let av = self.val(a);
            if i >= av.numel() {
                return Err(shape_err("index", format!("{i} of {:?}", av.shape())));
            }
            Tensor::scalar(av.data()[i])
        };
        self.push("index", value, Op::Index(a.0, i), &[a.0])
    }

    /// Multiplies every element of `a` by the single element of `s`.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let value = {
            let (av, sv) = (self.val(a), self.val(s));
            if sv.numel() != 1 {
                return Err(shape_err("mul_scalar", format!("{:?}", sv.shape())));
            }
            let c = sv.item();
            av.map(|x| x * c)
        };
        self.push("mul_scalar", value, Op::MulScalarVar(a.0, s.0), &[a.0, s.0])
    }

    /// Gradients of the scalar `loss` with respect to every bound trainable parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut grads = Gradients::new();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into an existing gradient set.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients<T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() || loss.0 >= nodes.len() {
            return Err(DiffError::State("backward called before any forward computation on this tape".into()));
        }
        if nodes[loss.0].value.numel() != 1 {
            return Err(DiffError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::ONE));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let y = &node.value;
            let mut send = |target: usize, grad: Tensor<T>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut adj[target] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => grads.insert_or_add(*pid, g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if nodes[*a].needs_grad {
                        let bt = bv.transpose2();
                        send(*a, Tensor::new(vec![m, k], matmul_raw(g.data(), bt.data(), m, n, k))?);
                    }
                    if nodes[*b].needs_grad {
                        let at = av.transpose2();
                        send(*b, Tensor::new(vec![k, n], matmul_raw(at.data(), g.data(), k, m, n))?);
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose2()),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    send(*a, zip(&g, bv, |x, y| x * y));
                    send(*b, zip(&g, av, |x, y| x * y));
                }
                Op::AddRow(a, b) => {
                    let n = g.cols();
                    let mut db = vec![T::ZERO; n];
                    for row in g.data().chunks(n) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    let bshape = nodes[*b].value.shape().to_vec();
                    send(*b, Tensor::new(bshape, db)?);
                    send(*a, g);
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (&nodes[*a].value, &nodes[*c].value);
                    let n = g.cols();
                    let mut da = g.clone();
                    let mut dc = vec![T::ZERO; cv.numel()];
                    for (i, row) in da.data_mut().chunks_mut(n).enumerate() {
                        let s = cv.data()[i];
                        let arow = av.row(i);
                        let mut acc = T::ZERO;
                        for (j, d) in row.iter_mut().enumerate() {
                            acc += *d * arow[j];
                            *d *= s;
                        }
                        dc[i] = acc;
                    }
                    send(*a, da);
                    send(*c, Tensor::new(cv.shape().to_vec(), dc)?);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|x| x * c));
                }
                Op::AddScalar(a) => send(*a, g),
                Op::Sigmoid(a) => send(*a, zip(&g, y, |d, s| d * s * (T::ONE - s))),
                Op::Tanh(a) => send(*a, zip(&g, y, |d, t| d * (T::ONE - t * t))),
                Op::LeakyRelu(a, s) => {
                    let s = *s;
                    send(*a, zip(&g, &nodes[*a].value, |d, x| if x >= T::ZERO { d } else { d * s }));
                }
                Op::Exp(a) => send(*a, zip(&g, y, |d, e| d * e)),
                Op::Log(a) => send(*a, zip(&g, &nodes[*a].value, |d, x| d / x)),
                Op::SoftmaxRows(a) => {
                    let n = if y.ndim() >= 2 { y.cols() } else { y.numel() };
                    let mut dx = g.clone();
                    for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        softmax_backward(drow, yrow);
                    }
                    send(*a, dx);
                }
                Op::SegmentSoftmax(a, offsets) => {
                    let mut dx = g.clone();
                    for w in offsets.windows(2) {
                        softmax_backward(&mut dx.data_mut()[w[0]..w[1]], &y.data()[w[0]..w[1]]);
                    }
                    send(*a, dx);
                }
                Op::SegmentSum(a, offsets) => {
                    let av = &nodes[*a].value;
                    let n = av.cols();
                    let mut dx = vec![T::ZERO; av.numel()];
                    for (s, w) in offsets.windows(2).enumerate() {
                        for e in w[0]..w[1] {
                            dx[e * n..(e + 1) * n].copy_from_slice(g.row(s));
                        }
                    }
                    send(*a, Tensor::new(av.shape().to_vec(), dx)?);
                }
                Op::GatherRows(a, idx) => {
                    let av = &nodes[*a].value;
                    let n = av.cols();
                    let mut dx = vec![T::ZERO; av.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, &x) in dx[i * n..(i + 1) * n].iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    send(*a, Tensor::new(av.shape().to_vec(), dx)?);
                }
                Op::ConcatCols(parts) => {
                    let m = g.rows();
                    let total = g.cols();
                    let mut start = 0;
                    for &p in parts {
                        let c = nodes[p].value.cols();
                        let mut part = Vec::with_capacity(m * c);
                        for i in 0..m {
                            part.extend_from_slice(&g.data()[i * total + start..i * total + start + c]);
                        }
                        send(p, Tensor::new(nodes[p].value.shape().to_vec(), part)?);
                        start += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = nodes[p].value.numel();
                        let part = g.data()[start..start + len].to_vec();
                        send(p, Tensor::new(nodes[p].value.shape().to_vec(), part)?);
                        start += len;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let av = &nodes[*a].value;
                    let n = av.cols();
                    let w = end - start;
                    let mut dx = vec![T::ZERO; av.numel()];
                    for i in 0..av.rows() {
                        dx[i * n + start..i * n + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    send(*a, Tensor::new(av.shape().to_vec(), dx)?);
                }
                Op::SumAll(a) => {
                    let d = g.item();
                    send(*a, Tensor::full(nodes[*a].value.shape(), d));
                }
                Op::MeanAll(a) => {
                    let n = nodes[*a].value.numel();
                    let d = g.item() / T::lit(n as f64);
                    send(*a, Tensor::full(nodes[*a].value.shape(), d));
                }
                Op::SqNormRows(a) => {
                    let av = &nodes[*a].value;
                    let rows = g.numel();
                    let n = av.numel() / rows.max(1);
                    let mut dx = av.data().to_vec();
                    for (i, chunk) in dx.chunks_mut(n.max(1)).enumerate() {
                        let two_g = T::lit(2.0) * g.data()[i];
                        for x in chunk {
                            *x *= two_g;
                        }
                    }
                    send(*a, Tensor::new(av.shape().to_vec(), dx)?);
                }
                Op::Trilinear { w, hs, r, ho } => {
                    let (wv, hv, rv, ov) = (&nodes[*w].value, &nodes[*hs].value, &nodes[*r].value, &nodes[*ho].value);
                    let ws = wv.shape();
                    let (ds, dr, d_o) = (ws[0], ws[1], ws[2]);
                    let (bsz, k) = (hv.rows(), rv.rows());
                    let mut dw = vec![T::ZERO; wv.numel()];
                    let mut dhs = vec![T::ZERO; hv.numel()];
                    let mut dr_ = vec![T::ZERO; rv.numel()];
                    let mut dho = vec![T::ZERO; ov.numel()];
                    let mut t = vec![T::ZERO; dr * d_o];
                    let mut u = vec![T::ZERO; dr];
                    let mut du = vec![T::ZERO; dr];
                    let mut dt = vec![T::ZERO; dr * d_o];
                    for b in 0..bsz {
                        let hrow = hv.row(b);
                        let orow = ov.row(b);
                        trilinear_partials(wv.data(), hrow, orow, ds, dr, d_o, &mut t, &mut u);
                        du.iter_mut().for_each(|x| *x = T::ZERO);
                        for ki in 0..k {
                            let gk = g.data()[b * k + ki];
                            let rrow = rv.row(ki);
                            for j in 0..dr {
                                du[j] += gk * rrow[j];
                                dr_[ki * dr + j] += gk * u[j];
                            }
                        }
                        for j in 0..dr {
                            let trow = &t[j * d_o..(j + 1) * d_o];
                            let dtrow = &mut dt[j * d_o..(j + 1) * d_o];
                            for l in 0..d_o {
                                dho[b * d_o + l] += du[j] * trow[l];
                                dtrow[l] = du[j] * orow[l];
                            }
                        }
                        for i in 0..ds {
                            let wslab = &wv.data()[i * dr * d_o..(i + 1) * dr * d_o];
                            let dwslab = &mut dw[i * dr * d_o..(i + 1) * dr * d_o];
                            let hi = hrow[i];
                            let mut acc = T::ZERO;
                            for ((dwx, &wx), &dtx) in dwslab.iter_mut().zip(wslab).zip(&dt) {
                                *dwx += hi * dtx;
                                acc += wx * dtx;
                            }
                            dhs[b * ds + i] = acc;
                        }
                    }
                    send(*w, Tensor::new(wv.shape().to_vec(), dw)?);
                    send(*hs, Tensor::new(hv.shape().to_vec(), dhs)?);
                    send(*r, Tensor::new(rv.shape().to_vec(), dr_)?);
                    send(*ho, Tensor::new(ov.shape().to_vec(), dho)?);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(*a, zip(&g, &nodes[*a].value, |d, x| if x >= lo && x <= hi { d } else { T::ZERO }));
                }
                Op::Select(a, b, mask) => {
                    let mut da = g.clone();
                    let mut db = g;
                    for (i, &t) in mask.iter().enumerate() {
                        if t {
                            db.data_mut()[i] = T::ZERO;
                        } else {
                            da.data_mut()[i] = T::ZERO;
                        }
                    }
                    send(*a, da);
                    send(*b, db);
                }
                Op::Reshape(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    send(*a, g.reshaped(&shape)?);
                }
                Op::Index(a, i) => {
                    let mut dx = Tensor::zeros(nodes[*a].value.shape());
                    dx.data_mut()[*i] = g.item();
                    send(*a, dx);
                }
                Op::MulScalarVar(a, s) => {
                    let (av, sv) = (&nodes[*a].value, &nodes[*s].value);
                    let c = sv.item();
                    let ds: T = g.data().iter().zip(av.data()).map(|(&d, &x)| d * x).sum();
                    send(*a, g.map(|d| d * c));
                    send(*s, Tensor::new(sv.shape().to_vec(), vec![ds])?);
                }
            }
        }
        Ok(())
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn check_offsets(op: &'static str, offsets: &[usize], len: usize) -> Result<()> {
    let ok = offsets.len() >= 2
        && offsets[0] == 0
        && *offsets.last().unwrap() == len
        && offsets.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(shape_err(op, format!("bad segment offsets for length {len}")))
    }
}

/// Max-subtracted softmax of a slice.
pub(crate) fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let m = xs.iter().copied().fold(xs[0], Real::max);
    let mut z = T::ZERO;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x = *x / z;
    }
}

fn softmax_backward<T: Real>(d: &mut [T], y: &[T]) {
    let dot: T = d.iter().zip(y).map(|(&a, &b)| a * b).sum();
    for (di, &yi) in d.iter_mut().zip(y) {
        *di = yi * (*di - dot);
    }
}

/// Fills `t[j,l] = Σ_i hs[i]·W[i,j,l]` and `u[j] = Σ_l t[j,l]·ho[l]`.
#[allow(clippy::too_many_arguments)]
fn trilinear_partials<T: Real>(
    w: &[T],
    hs: &[T],
    ho: &[T],
    ds: usize,
    dr: usize,
    d_o: usize,
    t: &mut [T],
    u: &mut [T],
) {
    t.iter_mut().for_each(|x| *x = T::ZERO);
    for i in 0..ds {
        let hi = hs[i];
        if hi == T::ZERO {
            continue;
        }
        let slab = &w[i * dr * d_o..(i + 1) * dr * d_o];
        for (tx, &wx) in t.iter_mut().zip(slab) {
            *tx += hi * wx;
        }
    }
    for j in 0..dr {
        u[j] = t[j * d_o..(j + 1) * d_o].iter().zip(ho).map(|(&a, &b)| a * b).sum();
    }
}
