//! Reverse-mode differentiation over an append-only operation tape.
//!
//! A [`Tape`] owns the nodes of one computation graph; [`Var`] is a copyable
//! handle into it. Parents always precede children, so walking node ids in
//! reverse order is an exact reverse-topological sweep. A graph and its tape
//! are confined to one thread; independent graphs may run in parallel.

use std::cell::RefCell;

use crate::conv::{
    conv2d_backward_bias, conv2d_backward_input, conv2d_backward_weight, conv2d_forward,
    pool_max2d_forward, ConvGeom, PoolGeom,
};
use crate::error::{Result, TensorError};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Silu,
    Exp,
    Atan,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone)]
struct BnSaved<T: Scalar> {
    /// Normalized input, same layout as x.
    xhat: Vec<T>,
    /// Per-channel 1/sqrt(var + eps) actually used in the forward pass.
    invstd: Vec<T>,
    /// Batch statistics (training) vs running statistics (eval); the input
    /// gradient differs between the two.
    train: bool,
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Unary(UnaryKind),
    Scale(T),
    AddScalar(T),
    Binary(BinKind),
    /// Elementwise add/mul where parent 0 has the full shape and parent 1 is
    /// broadcast over singleton H and/or W.
    BroadcastBinary(BinKind),
    Conv2d(ConvGeom),
    BatchNorm(BnSaved<T>),
    PoolAvgH,
    PoolAvgW,
    PoolMax { argmax: Vec<i64> },
    Concat { axis: usize },
    SliceAxis { axis: usize, start: usize },
    Reshape,
    Index { flat: usize },
    SliceChannels { start: usize },
    SumAll,
    MeanAll,
    BceWithLogits,
    Detach,
}

#[derive(Debug)]
struct Node<T: Scalar> {
    shape: Vec<usize>,
    value: Vec<T>,
    parents: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
    detached: bool,
}

/// Recorded computation graph for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    tape: &'g Tape<T>,
    id: usize,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn wrt_tensor(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.wrt(v)
            .map(|g| Tensor::new(v.shape(), g.to_vec()).expect("gradient shape"))
    }
}

/// Batch statistics computed by a training-mode batch norm, for the caller
/// to fold into running statistics.
#[derive(Debug, Clone)]
pub struct BnBatchStats<T: Scalar> {
    pub mean: Vec<T>,
    /// Biased variance (divides by the reduce count).
    pub var: Vec<T>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<T>,
        parents: Vec<usize>,
        op: Op<T>,
        requires_grad: bool,
        detached: bool,
    ) -> Var<'_, T> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            parents,
            op,
            requires_grad,
            detached,
        });
        Var { tape: self, id }
    }

    fn parents_require_grad(&self, parents: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        parents.iter().any(|&p| nodes[p].requires_grad)
    }

    /// New leaf taking `requires_grad` from the tensor.
    pub fn leaf(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Vec::new(),
            Op::Leaf,
            t.requires_grad(),
            false,
        )
    }

    /// New differentiable leaf.
    pub fn leaf_grad(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Vec::new(),
            Op::Leaf,
            true,
            false,
        )
    }

    /// New constant (no gradient) leaf.
    pub fn constant(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Vec::new(),
            Op::Leaf,
            false,
            false,
        )
    }

    /// Single-element constant.
    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.push(vec![1], vec![v], Vec::new(), Op::Leaf, false, false)
    }

    /// Concatenates along `axis`; non-axis dims must match.
    pub fn concat<'g>(&'g self, vars: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        if vars.is_empty() {
            return Err(TensorError::arg("tensors", "concat of zero tensors"));
        }
        for v in vars {
            v.check_tape(self)?;
        }
        let first = vars[0].shape();
        if axis >= first.len() {
            return Err(TensorError::arg("axis", format!("axis {axis} out of rank")));
        }
        let mut axis_total = 0usize;
        for v in vars {
            let s = v.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    context: "concat",
                    expected: first.clone(),
                    got: s,
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![T::ZERO; numel(&out_shape)];
        {
            let nodes = self.nodes.borrow();
            let mut dst = 0usize;
            for o in 0..outer {
                for v in vars {
                    let n = &nodes[v.id];
                    let len = n.shape[axis] * inner;
                    let src = o * len;
                    out[dst..dst + len].copy_from_slice(&n.value[src..src + len]);
                    dst += len;
                }
            }
        }
        let parents: Vec<usize> = vars.iter().map(|v| v.id).collect();
        let rg = self.parents_require_grad(&parents);
        Ok(self.push(out_shape, out, parents, Op::Concat { axis }, rg, false))
    }

    /// Gradient of the scalar `root` with respect to every node that needs one.
    /// Two backward passes over the same graph yield bit-identical gradients.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        root.check_tape(self)?;
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(TensorError::arg(
                "root",
                format!(
                    "backward root must be scalar, got shape {:?}",
                    nodes[root.id].shape
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![T::ONE]);
        for id in (0..=root.id).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &nodes[id];
            if node.detached || node.parents.is_empty() || !node.requires_grad {
                continue;
            }
            let g = grads[id].clone().expect("checked above");
            scatter(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

/// Adds `contrib` into the gradient slot of `pid`.
fn add_grad<T: Scalar>(grads: &mut [Option<Vec<T>>], pid: usize, contrib: Vec<T>) {
    match &mut grads[pid] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(&contrib) {
                *a += *c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn channel_blocks(shape: &[usize]) -> (usize, usize, usize) {
    // (N, C, spatial) of an NCHW tensor
    (shape[0], shape[1], shape[2] * shape[3])
}

#[allow(clippy::too_many_lines)]
fn scatter<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    let wants = |pid: usize| nodes[pid].requires_grad;
    match &node.op {
        Op::Leaf | Op::Detach => {}
        Op::Unary(kind) => {
            let pid = node.parents[0];
            if !wants(pid) {
                return;
            }
            let x = &nodes[pid].value;
            let y = &node.value;
            let contrib: Vec<T> = match kind {
                UnaryKind::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > T::ZERO { gi } else { T::ZERO })
                    .collect(),
                UnaryKind::Sigmoid => g
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * yi * (T::ONE - yi))
                    .collect(),
                UnaryKind::Silu => g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| {
                        let s = sigmoid(xi);
                        gi * s * (T::ONE + xi * (T::ONE - s))
                    })
                    .collect(),
                UnaryKind::Exp => g.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect(),
                UnaryKind::Atan => g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| gi / (T::ONE + xi * xi))
                    .collect(),
                UnaryKind::Neg => g.iter().map(|&gi| -gi).collect(),
            };
            add_grad(grads, pid, contrib);
        }
        Op::Scale(c) => {
            let pid = node.parents[0];
            if wants(pid) {
                add_grad(grads, pid, g.iter().map(|&gi| gi * *c).collect());
            }
        }
        Op::AddScalar(_) => {
            let pid = node.parents[0];
            if wants(pid) {
                add_grad(grads, pid, g.to_vec());
            }
        }
        Op::Binary(kind) => {
            let (pa, pb) = (node.parents[0], node.parents[1]);
            let a = &nodes[pa].value;
            let b = &nodes[pb].value;
            if wants(pa) {
                let contrib: Vec<T> = match kind {
                    BinKind::Add => g.to_vec(),
                    BinKind::Sub => g.to_vec(),
                    BinKind::Mul => g.iter().zip(b).map(|(&gi, &bi)| gi * bi).collect(),
                    BinKind::Div => g.iter().zip(b).map(|(&gi, &bi)| gi / bi).collect(),
                    // Ties route to the left operand.
                    BinKind::Min => g
                        .iter()
                        .zip(a.iter().zip(b))
                        .map(|(&gi, (&ai, &bi))| if ai <= bi { gi } else { T::ZERO })
                        .collect(),
                    BinKind::Max => g
                        .iter()
                        .zip(a.iter().zip(b))
                        .map(|(&gi, (&ai, &bi))| if ai >= bi { gi } else { T::ZERO })
                        .collect(),
                };
                add_grad(grads, pa, contrib);
            }
            if wants(pb) {
                let contrib: Vec<T> = match kind {
                    BinKind::Add => g.to_vec(),
                    BinKind::Sub => g.iter().map(|&gi| -gi).collect(),
                    BinKind::Mul => g.iter().zip(a).map(|(&gi, &ai)| gi * ai).collect(),
                    BinKind::Div => g
                        .iter()
                        .zip(node.value.iter().zip(b))
                        .map(|(&gi, (&yi, &bi))| -gi * yi / bi)
                        .collect(),
                    BinKind::Min => g
                        .iter()
                        .zip(a.iter().zip(b))
                        .map(|(&gi, (&ai, &bi))| if ai <= bi { T::ZERO } else { gi })
                        .collect(),
                    BinKind::Max => g
                        .iter()
                        .zip(a.iter().zip(b))
                        .map(|(&gi, (&ai, &bi))| if ai >= bi { T::ZERO } else { gi })
                        .collect(),
                };
                add_grad(grads, pb, contrib);
            }
        }
        Op::BroadcastBinary(kind) => {
            let (pf, ps) = (node.parents[0], node.parents[1]);
            let full = &nodes[pf].value;
            let small = &nodes[ps].value;
            let fs = &nodes[pf].shape;
            let ss = &nodes[ps].shape;
            let (n, c, h, w) = (fs[0], fs[1], fs[2], fs[3]);
            let (sh, sw) = (ss[2], ss[3]);
            let sidx = |ni: usize, ci: usize, hi: usize, wi: usize| {
                let hh = if sh == 1 { 0 } else { hi };
                let ww = if sw == 1 { 0 } else { wi };
                ((ni * c + ci) * sh + hh) * sw + ww
            };
            if wants(pf) {
                let contrib: Vec<T> = match kind {
                    BinKind::Add => g.to_vec(),
                    BinKind::Mul => {
                        let mut out = vec![T::ZERO; full.len()];
                        let mut i = 0;
                        for ni in 0..n {
                            for ci in 0..c {
                                for hi in 0..h {
                                    for wi in 0..w {
                                        out[i] = g[i] * small[sidx(ni, ci, hi, wi)];
                                        i += 1;
                                    }
                                }
                            }
                        }
                        out
                    }
                    _ => unreachable!("broadcast limited to add/mul"),
                };
                add_grad(grads, pf, contrib);
            }
            if wants(ps) {
                let mut contrib = vec![T::ZERO; small.len()];
                let mut i = 0;
                for ni in 0..n {
                    for ci in 0..c {
                        for hi in 0..h {
                            for wi in 0..w {
                                let si = sidx(ni, ci, hi, wi);
                                match kind {
                                    BinKind::Add => contrib[si] += g[i],
                                    BinKind::Mul => contrib[si] += g[i] * full[i],
                                    _ => unreachable!(),
                                }
                                i += 1;
                            }
                        }
                    }
                }
                add_grad(grads, ps, contrib);
            }
        }
        Op::Conv2d(geom) => {
            let px = node.parents[0];
            let pw = node.parents[1];
            if wants(px) {
                add_grad(grads, px, conv2d_backward_input(g, &nodes[pw].value, geom));
            }
            if wants(pw) {
                add_grad(grads, pw, conv2d_backward_weight(g, &nodes[px].value, geom));
            }
            if node.parents.len() == 3 {
                let pb = node.parents[2];
                if wants(pb) {
                    add_grad(grads, pb, conv2d_backward_bias(g, geom));
                }
            }
        }
        Op::BatchNorm(saved) => {
            let (px, pg, pb) = (node.parents[0], node.parents[1], node.parents[2]);
            let (n, c, sp) = channel_blocks(&nodes[px].shape);
            let gamma = &nodes[pg].value;
            let count = T::from_f64((n * sp) as f64);
            // Per-channel reductions shared by all three gradients.
            let mut sum_g = vec![T::ZERO; c];
            let mut sum_gx = vec![T::ZERO; c];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * sp;
                    let mut sg = T::ZERO;
                    let mut sgx = T::ZERO;
                    for i in base..base + sp {
                        sg += g[i];
                        sgx += g[i] * saved.xhat[i];
                    }
                    sum_g[ci] += sg;
                    sum_gx[ci] += sgx;
                }
            }
            if wants(px) {
                let mut gx = vec![T::ZERO; nodes[px].value.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * sp;
                        let k = gamma[ci] * saved.invstd[ci];
                        if saved.train {
                            let mg = sum_g[ci] / count;
                            let mgx = sum_gx[ci] / count;
                            for i in base..base + sp {
                                gx[i] = k * (g[i] - mg - saved.xhat[i] * mgx);
                            }
                        } else {
                            for i in base..base + sp {
                                gx[i] = k * g[i];
                            }
                        }
                    }
                }
                add_grad(grads, px, gx);
            }
            if wants(pg) {
                add_grad(grads, pg, sum_gx);
            }
            if wants(pb) {
                add_grad(grads, pb, sum_g);
            }
        }
        Op::PoolAvgH => {
            let pid = node.parents[0];
            if !wants(pid) {
                return;
            }
            let (n, c, h, w) = {
                let s = &nodes[pid].shape;
                (s[0], s[1], s[2], s[3])
            };
            let scale = T::ONE / T::from_f64(w as f64);
            let mut gx = vec![T::ZERO; nodes[pid].value.len()];
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        let gv = g[(ni * c + ci) * h + hi] * scale;
                        let base = ((ni * c + ci) * h + hi) * w;
                        for wi in 0..w {
                            gx[base + wi] = gv;
                        }
                    }
                }
            }
            add_grad(grads, pid, gx);
        }
        Op::PoolAvgW => {
            let pid = node.parents[0];
            if !wants(pid) {
                return;
            }
            let (n, c, h, w) = {
                let s = &nodes[pid].shape;
                (s[0], s[1], s[2], s[3])
            };
            let scale = T::ONE / T::from_f64(h as f64);
            let mut gx = vec![T::ZERO; nodes[pid].value.len()];
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        let base = ((ni * c + ci) * h + hi) * w;
                        for wi in 0..w {
                            gx[base + wi] = g[(ni * c + ci) * w + wi] * scale;
                        }
                    }
                }
            }
            add_grad(grads, pid, gx);
        }
        Op::PoolMax { argmax } => {
            let pid = node.parents[0];
            if !wants(pid) {
                return;
            }
            let mut gx = vec![T::ZERO; nodes[pid].value.len()];
            for (i, &a) in argmax.iter().enumerate() {
                if a >= 0 {
                    gx[a as usize] += g[i];
                }
            }
            add_grad(grads, pid, gx);
        }
        Op::Concat { axis } => {
            let axis = *axis;
            let outer: usize = node.shape[..axis].iter().product();
            let inner: usize = node.shape[axis + 1..].iter().product();
            let total = node.shape[axis] * inner;
            let mut offset = 0usize;
            for &pid in &node.parents {
                let len = nodes[pid].shape[axis] * inner;
                if wants(pid) {
                    let mut contrib = vec![T::ZERO; nodes[pid].value.len()];
                    for o in 0..outer {
                        let src = o * total + offset;
                        contrib[o * len..(o + 1) * len].copy_from_slice(&g[src..src + len]);
                    }
                    add_grad(grads, pid, contrib);
                }
                offset += len;
            }
        }
        Op::SliceAxis { axis, start } => {
            let pid = node.parents[0];
            if !wants(pid) {
                return;
            }
            let pshape = &nodes[pid].shape;
            let outer: usize = pshape[..*axis].iter().product();
            let inner: usize = pshape[*axis + 1..].iter().product();
            let total = pshape[*axis] * inner;
            let len = node.shape[*axis] * inner;
            let mut gx = vec![T::ZERO; nodes[pid].value.len()];
            for o in 0..outer {
                let dst = o * total + start * inner;
                gx[dst..dst + len].copy_from_slice(&g[o * len..(o + 1) * len]);
            }
            add_grad(grads, pid, gx);
        }
        Op::Reshape => {
            let pid = node.parents[0];
            if wants(pid) {
                add_grad(grads, pid, g.to_vec());
            }
        }
        Op::Index { flat } => {
            let pid = node.parents[0];
            if !wants(pid) {
                return;
            }
            let mut gx = vec![T::ZERO; nodes[pid].value.len()];
            gx[*flat] = g[0];
            add_grad(grads, pid, gx);
        }
        Op::SliceChannels { start } => {
            let pid = node.parents[0];
            if !wants(pid) {
                return;
            }
            let ps = &nodes[pid].shape;
            let (n, c, sp) = channel_blocks(ps);
            let cn = node.shape[1];
            let mut gx = vec![T::ZERO; nodes[pid].value.len()];
            for ni in 0..n {
                let src = ni * cn * sp;
                let dst = (ni * c + *start) * sp;
                gx[dst..dst + cn * sp].copy_from_slice(&g[src..src + cn * sp]);
            }
            add_grad(grads, pid, gx);
        }
        Op::SumAll => {
            let pid = node.parents[0];
            if wants(pid) {
                add_grad(grads, pid, vec![g[0]; nodes[pid].value.len()]);
            }
        }
        Op::MeanAll => {
            let pid = node.parents[0];
            if wants(pid) {
                let n = nodes[pid].value.len();
                add_grad(grads, pid, vec![g[0] / T::from_f64(n as f64); n]);
            }
        }
        Op::BceWithLogits => {
            let (px, pz) = (node.parents[0], node.parents[1]);
            let x = &nodes[px].value;
            let z = &nodes[pz].value;
            if wants(px) {
                let contrib: Vec<T> = g
                    .iter()
                    .zip(x.iter().zip(z))
                    .map(|(&gi, (&xi, &zi))| gi * (sigmoid(xi) - zi))
                    .collect();
                add_grad(grads, px, contrib);
            }
            if wants(pz) {
                let contrib: Vec<T> = g.iter().zip(x).map(|(&gi, &xi)| -gi * xi).collect();
                add_grad(grads, pz, contrib);
            }
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// The tape this variable lives on.
    pub fn tape(&self) -> &'g Tape<T> {
        self.tape
    }

    fn check_tape(&self, tape: &Tape<T>) -> Result<()> {
        if std::ptr::eq(self.tape, tape) {
            Ok(())
        } else {
            Err(TensorError::arg(
                "tensor",
                "operands belong to different tapes",
            ))
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn value(&self) -> Tensor<T> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape")
    }

    pub fn value_vec(&self) -> Vec<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Value of a single-element node.
    pub fn item(&self) -> Result<T> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        if n.value.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                context: "item",
                expected: vec![1],
                got: n.shape.clone(),
            });
        }
        Ok(n.value[0])
    }

    fn unary(self, kind: UnaryKind) -> Var<'g, T> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let value: Vec<T> = match kind {
                UnaryKind::Relu => n.value.iter().map(|&v| v.maximum(T::ZERO)).collect(),
                UnaryKind::Sigmoid => n.value.iter().map(|&v| sigmoid(v)).collect(),
                UnaryKind::Silu => n.value.iter().map(|&v| v * sigmoid(v)).collect(),
                UnaryKind::Exp => n.value.iter().map(|&v| v.exp()).collect(),
                UnaryKind::Atan => n.value.iter().map(|&v| v.atan()).collect(),
                UnaryKind::Neg => n.value.iter().map(|&v| -v).collect(),
            };
            (n.shape.clone(), value)
        };
        let rg = self.requires_grad();
        self.tape
            .push(shape, value, vec![self.id], Op::Unary(kind), rg, false)
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(UnaryKind::Relu)
    }
    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(UnaryKind::Sigmoid)
    }
    pub fn silu(self) -> Var<'g, T> {
        self.unary(UnaryKind::Silu)
    }
    pub fn exp(self) -> Var<'g, T> {
        self.unary(UnaryKind::Exp)
    }
    pub fn atan(self) -> Var<'g, T> {
        self.unary(UnaryKind::Atan)
    }
    pub fn neg(self) -> Var<'g, T> {
        self.unary(UnaryKind::Neg)
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&v| v * c).collect())
        };
        let rg = self.requires_grad();
        self.tape
            .push(shape, value, vec![self.id], Op::Scale(c), rg, false)
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&v| v + c).collect())
        };
        let rg = self.requires_grad();
        self.tape
            .push(shape, value, vec![self.id], Op::AddScalar(c), rg, false)
    }

    fn binary(self, rhs: Var<'g, T>, kind: BinKind) -> Result<Var<'g, T>> {
        rhs.check_tape(self.tape)?;
        let sa = self.shape();
        let sb = rhs.shape();
        if sa == sb {
            let value: Vec<T> = {
                let nodes = self.tape.nodes.borrow();
                let a = &nodes[self.id].value;
                let b = &nodes[rhs.id].value;
                match kind {
                    BinKind::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
                    BinKind::Sub => a.iter().zip(b).map(|(&x, &y)| x - y).collect(),
                    BinKind::Mul => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
                    BinKind::Div => a.iter().zip(b).map(|(&x, &y)| x / y).collect(),
                    BinKind::Min => a.iter().zip(b).map(|(&x, &y)| x.minimum(y)).collect(),
                    BinKind::Max => a.iter().zip(b).map(|(&x, &y)| x.maximum(y)).collect(),
                }
            };
            let parents = vec![self.id, rhs.id];
            let rg = self.tape.parents_require_grad(&parents);
            return Ok(self.tape.push(sa, value, parents, Op::Binary(kind), rg, false));
        }
        if !matches!(kind, BinKind::Add | BinKind::Mul) {
            return Err(TensorError::ShapeMismatch {
                context: "elementwise",
                expected: sa,
                got: sb,
            });
        }
        // H/W-singleton broadcasting; one operand must carry the full shape.
        let (full, small) = if is_hw_broadcast(&sa, &sb) {
            (self, rhs)
        } else if is_hw_broadcast(&sb, &sa) {
            (rhs, self)
        } else {
            return Err(TensorError::ShapeMismatch {
                context: "elementwise broadcast",
                expected: sa,
                got: sb,
            });
        };
        let fshape = full.shape();
        let value: Vec<T> = {
            let nodes = self.tape.nodes.borrow();
            let fv = &nodes[full.id].value;
            let sv = &nodes[small.id].value;
            let ss = &nodes[small.id].shape;
            let (n, c, h, w) = (fshape[0], fshape[1], fshape[2], fshape[3]);
            let (sh, sw) = (ss[2], ss[3]);
            let mut out = Vec::with_capacity(fv.len());
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        let hh = if sh == 1 { 0 } else { hi };
                        for wi in 0..w {
                            let ww = if sw == 1 { 0 } else { wi };
                            let s = sv[((ni * c + ci) * sh + hh) * sw + ww];
                            let f = fv[((ni * c + ci) * h + hi) * w + wi];
                            out.push(match kind {
                                BinKind::Add => f + s,
                                BinKind::Mul => f * s,
                                _ => unreachable!(),
                            });
                        }
                    }
                }
            }
            out
        };
        let parents = vec![full.id, small.id];
        let rg = self.tape.parents_require_grad(&parents);
        Ok(self
            .tape
            .push(fshape, value, parents, Op::BroadcastBinary(kind), rg, false))
    }

    pub fn add(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, BinKind::Add)
    }
    pub fn sub(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, BinKind::Sub)
    }
    pub fn mul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, BinKind::Mul)
    }
    pub fn div(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, BinKind::Div)
    }
    pub fn minimum(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, BinKind::Min)
    }
    pub fn maximum(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(rhs, BinKind::Max)
    }

    /// 2-D convolution over NCHW input with OIHW weight.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Option<Var<'g, T>>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var<'g, T>> {
        weight.check_tape(self.tape)?;
        if let Some(b) = &bias {
            b.check_tape(self.tape)?;
        }
        let geom = ConvGeom::new(&self.shape(), &weight.shape(), stride, padding, dilation)?;
        if let Some(b) = &bias {
            let bs = b.shape();
            if bs != vec![geom.cout] {
                return Err(TensorError::ShapeMismatch {
                    context: "conv2d bias",
                    expected: vec![geom.cout],
                    got: bs,
                });
            }
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let w = &nodes[weight.id].value;
            let b = bias.as_ref().map(|b| nodes[b.id].value.as_slice());
            conv2d_forward(x, w, b, &geom)
        };
        let mut parents = vec![self.id, weight.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        let rg = self.tape.parents_require_grad(&parents);
        Ok(self
            .tape
            .push(geom.out_shape(), value, parents, Op::Conv2d(geom), rg, false))
    }

    fn batch_norm_common(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        mean: &[T],
        var: &[T],
        eps: T,
        train: bool,
    ) -> Result<Var<'g, T>> {
        gamma.check_tape(self.tape)?;
        beta.check_tape(self.tape)?;
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                context: "batch_norm input",
                expected: vec![4],
                got: vec![shape.len()],
            });
        }
        let c = shape[1];
        for (name, v) in [("gamma", &gamma), ("beta", &beta)] {
            let s = v.shape();
            if s != vec![c] {
                return Err(TensorError::ShapeMismatch {
                    context: if name == "gamma" {
                        "batch_norm gamma"
                    } else {
                        "batch_norm beta"
                    },
                    expected: vec![c],
                    got: s,
                });
            }
        }
        if mean.len() != c || var.len() != c {
            return Err(TensorError::ShapeMismatch {
                context: "batch_norm stats",
                expected: vec![c],
                got: vec![mean.len(), var.len()],
            });
        }
        let (out, saved) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let gv = &nodes[gamma.id].value;
            let bv = &nodes[beta.id].value;
            let (n, _, sp) = channel_blocks(&shape);
            let invstd: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::ZERO; x.len()];
            let mut out = vec![T::ZERO; x.len()];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * sp;
                    let (m, is, ga, be) = (mean[ci], invstd[ci], gv[ci], bv[ci]);
                    for i in base..base + sp {
                        let h = (x[i] - m) * is;
                        xhat[i] = h;
                        out[i] = ga * h + be;
                    }
                }
            }
            (
                out,
                BnSaved {
                    xhat,
                    invstd,
                    train,
                },
            )
        };
        let parents = vec![self.id, gamma.id, beta.id];
        let rg = self.tape.parents_require_grad(&parents);
        Ok(self
            .tape
            .push(shape, out, parents, Op::BatchNorm(saved), rg, false))
    }

    /// Batch norm with statistics computed from the batch; also returns those
    /// statistics so the caller can update its running buffers.
    pub fn batch_norm_train(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        eps: T,
    ) -> Result<(Var<'g, T>, BnBatchStats<T>)> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                context: "batch_norm input",
                expected: vec![4],
                got: vec![shape.len()],
            });
        }
        let (n, c, sp) = channel_blocks(&shape);
        let count = T::from_f64((n * sp) as f64);
        let (mean, var) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut mean = vec![T::ZERO; c];
            let mut var = vec![T::ZERO; c];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * sp;
                    let mut s = T::ZERO;
                    for i in base..base + sp {
                        s += x[i];
                    }
                    mean[ci] += s;
                }
            }
            for m in mean.iter_mut() {
                *m = *m / count;
            }
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * sp;
                    let m = mean[ci];
                    let mut s = T::ZERO;
                    for i in base..base + sp {
                        let d = x[i] - m;
                        s += d * d;
                    }
                    var[ci] += s;
                }
            }
            for v in var.iter_mut() {
                *v = *v / count;
            }
            (mean, var)
        };
        let out = self.batch_norm_common(gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BnBatchStats { mean, var }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var<'g, T>> {
        self.batch_norm_common(gamma, beta, running_mean, running_var, eps, false)
    }

    /// Mean over width: `[N,C,H,W] -> [N,C,H,1]`.
    pub fn pool_avg_h(self) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                context: "pool_avg_h input",
                expected: vec![4],
                got: vec![shape.len()],
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let scale = T::ONE / T::from_f64(w as f64);
            let mut out = Vec::with_capacity(n * c * h);
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        let base = ((ni * c + ci) * h + hi) * w;
                        let mut s = T::ZERO;
                        for i in base..base + w {
                            s += x[i];
                        }
                        out.push(s * scale);
                    }
                }
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(vec![n, c, h, 1], value, vec![self.id], Op::PoolAvgH, rg, false))
    }

    /// Mean over height: `[N,C,H,W] -> [N,C,1,W]`.
    pub fn pool_avg_w(self) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                context: "pool_avg_w input",
                expected: vec![4],
                got: vec![shape.len()],
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let scale = T::ONE / T::from_f64(h as f64);
            let mut out = vec![T::ZERO; n * c * w];
            for ni in 0..n {
                for ci in 0..c {
                    for hi in 0..h {
                        let base = ((ni * c + ci) * h + hi) * w;
                        let obase = (ni * c + ci) * w;
                        for wi in 0..w {
                            out[obase + wi] += x[base + wi];
                        }
                    }
                }
            }
            for v in out.iter_mut() {
                *v = *v * scale;
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(vec![n, c, 1, w], value, vec![self.id], Op::PoolAvgW, rg, false))
    }

    /// Max pooling with -inf padding semantics; gradient routes to the argmax
    /// element, ties to the lowest linear index.
    pub fn pool_max2d(self, kernel: usize, stride: usize, padding: usize) -> Result<Var<'g, T>> {
        let geom = PoolGeom::new(&self.shape(), kernel, stride, padding)?;
        let (value, argmax) = {
            let nodes = self.tape.nodes.borrow();
            pool_max2d_forward(&nodes[self.id].value, &geom)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            geom.out_shape(),
            value,
            vec![self.id],
            Op::PoolMax { argmax },
            rg,
            false,
        ))
    }

    /// Reinterprets the buffer with a new shape of equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'g, T>> {
        if numel(&shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                context: "reshape",
                expected: vec![self.numel()],
                got: vec![numel(&shape)],
            });
        }
        let value = self.value_vec();
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(shape, value, vec![self.id], Op::Reshape, rg, false))
    }

    /// Splits along `axis` into chunks of the given sizes.
    pub fn split(self, sizes: &[usize], axis: usize) -> Result<Vec<Var<'g, T>>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::arg("axis", format!("axis {axis} out of rank")));
        }
        if sizes.iter().sum::<usize>() != shape[axis] {
            return Err(TensorError::arg(
                "sizes",
                format!("split sizes {:?} do not sum to dim {}", sizes, shape[axis]),
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(TensorError::arg("sizes", "zero-size split chunk"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let total = shape[axis] * inner;
        let rg = self.requires_grad();
        let mut outs = Vec::with_capacity(sizes.len());
        let mut start = 0usize;
        for &sz in sizes {
            let mut out_shape = shape.clone();
            out_shape[axis] = sz;
            let len = sz * inner;
            let value = {
                let nodes = self.tape.nodes.borrow();
                let x = &nodes[self.id].value;
                let mut v = vec![T::ZERO; outer * len];
                for o in 0..outer {
                    let src = o * total + start * inner;
                    v[o * len..(o + 1) * len].copy_from_slice(&x[src..src + len]);
                }
                v
            };
            outs.push(self.tape.push(
                out_shape,
                value,
                vec![self.id],
                Op::SliceAxis { axis, start },
                rg,
                false,
            ));
            start += sz;
        }
        Ok(outs)
    }

    /// Extracts the single element at flat offset `flat` as a `[1]` tensor.
    pub fn index(self, flat: usize) -> Result<Var<'g, T>> {
        if flat >= self.numel() {
            return Err(TensorError::arg(
                "flat",
                format!("index {flat} out of {}", self.numel()),
            ));
        }
        let value = vec![self.tape.nodes.borrow()[self.id].value[flat]];
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(vec![1], value, vec![self.id], Op::Index { flat }, rg, false))
    }

    /// Channel range `[start, end)` of an NCHW tensor.
    pub fn slice_channels(self, start: usize, end: usize) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                context: "slice_channels input",
                expected: vec![4],
                got: vec![shape.len()],
            });
        }
        if start >= end || end > shape[1] {
            return Err(TensorError::arg(
                "channels",
                format!("range {start}..{end} out of {}", shape[1]),
            ));
        }
        let (n, c, sp) = channel_blocks(&shape);
        let cn = end - start;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut v = vec![T::ZERO; n * cn * sp];
            for ni in 0..n {
                let src = (ni * c + start) * sp;
                v[ni * cn * sp..(ni + 1) * cn * sp].copy_from_slice(&x[src..src + cn * sp]);
            }
            v
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            vec![n, cn, shape[2], shape[3]],
            value,
            vec![self.id],
            Op::SliceChannels { start },
            rg,
            false,
        ))
    }

    pub fn sum_all(self) -> Var<'g, T> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let mut s = T::ZERO;
            for v in &nodes[self.id].value {
                s += *v;
            }
            vec![s]
        };
        let rg = self.requires_grad();
        self.tape
            .push(vec![1], value, vec![self.id], Op::SumAll, rg, false)
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let xs = &nodes[self.id].value;
            let mut s = T::ZERO;
            for v in xs {
                s += *v;
            }
            vec![s / T::from_f64(xs.len() as f64)]
        };
        let rg = self.requires_grad();
        self.tape
            .push(vec![1], value, vec![self.id], Op::MeanAll, rg, false)
    }

    /// Elementwise binary cross-entropy on logits against targets in [0,1],
    /// computed in the stable `max(x,0) - x z + ln(1 + exp(-|x|))` form.
    pub fn bce_with_logits(self, targets: Var<'g, T>) -> Result<Var<'g, T>> {
        targets.check_tape(self.tape)?;
        let sa = self.shape();
        let sb = targets.shape();
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                context: "bce_with_logits",
                expected: sa,
                got: sb,
            });
        }
        let value: Vec<T> = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let z = &nodes[targets.id].value;
            x.iter()
                .zip(z)
                .map(|(&xi, &zi)| {
                    xi.maximum(T::ZERO) - xi * zi + (T::ONE + (-xi.abs()).exp()).ln()
                })
                .collect()
        };
        let parents = vec![self.id, targets.id];
        let rg = self.tape.parents_require_grad(&parents);
        Ok(self
            .tape
            .push(sa, value, parents, Op::BceWithLogits, rg, false))
    }

    /// Same values, but contributes zero gradient to its ancestors.
    pub fn detach(self) -> Var<'g, T> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.clone())
        };
        self.tape
            .push(shape, value, vec![self.id], Op::Detach, false, true)
    }
}

fn is_hw_broadcast(full: &[usize], small: &[usize]) -> bool {
    full.len() == 4
        && small.len() == 4
        && full[0] == small[0]
        && full[1] == small[1]
        && (small[2] == full[2] || small[2] == 1)
        && (small[3] == full[3] || small[3] == 1)
        && (small[2] != full[2] || small[3] != full[3])
        && full[2] >= 1
        && full[3] >= 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        assert_eq!(x.sigmoid().item().unwrap(), 0.5);
    }

    #[test]
    fn silu_value_and_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf_grad(&Tensor::scalar(0.0f64));
        let y = x.silu();
        assert_eq!(y.item().unwrap(), 0.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0.5]);
    }

    #[test]
    fn mul_broadcast_row_scaling() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let gh = tape.constant(&t(&[1, 1, 2, 1], &[10.0, 100.0]));
        let y = x.mul(gh).unwrap();
        assert_eq!(y.value_vec(), vec![10.0, 20.0, 300.0, 400.0]);
    }

    #[test]
    fn broadcast_col_scaling_and_grad() {
        let tape = Tape::new();
        let x = tape.leaf_grad(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let gw = tape.leaf_grad(&t(&[1, 1, 1, 2], &[2.0, 3.0]));
        let y = x.mul(gw).unwrap();
        assert_eq!(y.value_vec(), vec![2.0, 6.0, 6.0, 12.0]);
        let loss = y.sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0, 3.0, 2.0, 3.0]);
        // d/d gw = column sums of x
        assert_eq!(grads.wrt(gw).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn two_sided_broadcast_rejected() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(&Tensor::zeros(&[1, 1, 2, 1]));
        let b = tape.constant(&Tensor::zeros(&[1, 1, 1, 3]));
        assert!(a.mul(b).is_err());
    }

    #[test]
    fn sub_requires_same_shape() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(&Tensor::zeros(&[1, 1, 2, 2]));
        let b = tape.constant(&Tensor::zeros(&[1, 1, 2, 1]));
        assert!(a.sub(b).is_err());
    }

    #[test]
    fn product_rule_with_one_factor_detached() {
        // d/dx [x * detach(x)] at x=3 is 3, not 6.
        let tape = Tape::new();
        let x = tape.leaf_grad(&Tensor::scalar(3.0f64));
        let y = x.mul(x.detach()).unwrap();
        assert_eq!(y.item().unwrap(), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[3.0]);
    }

    #[test]
    fn detach_only_path_gives_no_ancestor_grads() {
        let tape = Tape::new();
        let x = tape.leaf_grad(&Tensor::scalar(2.0f64));
        let y = x.detach().scale(5.0).add_scalar(1.0);
        assert_eq!(y.item().unwrap(), 11.0);
        let grads = tape.backward(y).unwrap();
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn split_concat_round_trip_bit_exact() {
        let tape = Tape::new();
        let a = tape.constant(&t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(&t(&[1, 2, 3, 1], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let cat = tape.concat(&[a, b], 2).unwrap();
        assert_eq!(cat.shape(), vec![1, 2, 5, 1]);
        let parts = cat.split(&[2, 3], 2).unwrap();
        assert_eq!(parts[0].value_vec(), a.value_vec());
        assert_eq!(parts[1].value_vec(), b.value_vec());
    }

    #[test]
    fn concat_grad_routes_to_slices() {
        let tape = Tape::new();
        let a = tape.leaf_grad(&t(&[1, 1, 2, 1], &[1.0, 2.0]));
        let b = tape.leaf_grad(&t(&[1, 1, 3, 1], &[3.0, 4.0, 5.0]));
        let cat = tape.concat(&[a, b], 2).unwrap();
        let loss = cat.sum_all();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(grads.wrt(b).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn pool_avg_means() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let h = x.pool_avg_h().unwrap();
        assert_eq!(h.shape(), vec![1, 1, 1, 1]);
        assert_eq!(h.value_vec(), vec![2.5]);
    }

    #[test]
    fn pool_avg_composition_is_global_mean() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let x = tape.constant(&Tensor::new(vec![2, 3, 4, 5], data.clone()).unwrap());
        let m = x.pool_avg_h().unwrap().pool_avg_w().unwrap();
        assert_eq!(m.shape(), vec![2, 3, 1, 1]);
        for n in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                for i in 0..20 {
                    s += data[(n * 3 + c) * 20 + i];
                }
                let got = m.value_vec()[n * 3 + c];
                assert!((got - s / 20.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_constant_input_stays_constant() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[1, 1, 4, 4], 7.0f64));
        let y = x.pool_max2d(3, 1, 1).unwrap();
        assert!(y.value_vec().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn backward_is_deterministic() {
        let tape = Tape::new();
        let x = tape.leaf_grad(&t(&[1, 1, 2, 2], &[0.3, -0.7, 1.9, 0.01]));
        let y = x.silu().sigmoid().sum_all();
        let g1 = tape.backward(y).unwrap();
        let g2 = tape.backward(y).unwrap();
        let a = g1.wrt(x).unwrap();
        let b = g2.wrt(x).unwrap();
        for (x1, x2) in a.iter().zip(b) {
            assert_eq!(x1.to_bits(), x2.to_bits());
        }
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf_grad(&t(&[2], &[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn index_extracts_and_scatters() {
        let tape = Tape::new();
        let x = tape.leaf_grad(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let v = x.index(2).unwrap();
        assert_eq!(v.item().unwrap(), 3.0);
        let grads = tape.backward(v).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[3], &[0.0, 2.0, -3.0]));
        let z = tape.constant(&t(&[3], &[0.0, 1.0, 1.0]));
        let l = x.bce_with_logits(z).unwrap();
        let expect = [
            (1.0f64 + 1.0f64).ln(),              // -ln sigmoid(0) with z=0
            (1.0f64 + (-2.0f64).exp()).ln(),      // -ln sigmoid(2)
            3.0 + (1.0f64 + (-3.0f64).exp()).ln() // -ln sigmoid(-3)
        ];
        for (got, want) in l.value_vec().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn mixed_tape_operands_rejected() {
        let t1 = Tape::<f64>::new();
        let t2 = Tape::<f64>::new();
        let a = t1.scalar(1.0);
        let b = t2.scalar(2.0);
        assert!(a.add(b).is_err());
    }

    #[test]
    fn slice_channels_round_trip() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| i as f64).collect();
        let x = tape.leaf_grad(&Tensor::new(vec![2, 3, 2, 2], data).unwrap());
        let mid = x.slice_channels(1, 2).unwrap();
        assert_eq!(mid.shape(), vec![2, 1, 2, 2]);
        assert_eq!(mid.value_vec(), vec![4.0, 5.0, 6.0, 7.0, 16.0, 17.0, 18.0, 19.0]);
        let grads = tape.backward(mid.sum_all()).unwrap();
        let gx = grads.wrt(x).unwrap();
        let expect: Vec<f64> = (0..24)
            .map(|i| {
                let c = (i / 4) % 3;
                if c == 1 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(gx, &expect[..]);
    }
}
