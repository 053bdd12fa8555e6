//! Minimal dense-tensor arithmetic with reverse-mode automatic
//! differentiation.
//!
//! Tensors are row-major buffers wrapped in shared graph nodes. Forward
//! ops record parents and a backward closure; [`Tensor::backward`]
//! topologically sorts the graph and visits each node exactly once.
//! There is no broadcasting beyond the leading-batch dimension: an op
//! either requires exact shapes or is explicitly row-wise.

mod gradcheck;
pub mod kernels;
mod scalar;

pub use gradcheck::{
    grad_check, grad_check_f32_vs_f64, grad_check_f32_vs_f64_sampled, grad_check_sampled, GradFn,
};
pub use scalar::Scalar;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::{Error, Result};

/// Additive mask value for disallowed attention positions. Large enough
/// to zero the softmax weight, small enough to stay finite in f32.
const MASK_NEG: f64 = -1.0e9;

type BackwardFn<T> = Box<dyn Fn(&[T], &[T])>;

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Shared handle to a graph node. Cloning is cheap and aliases the node.
pub struct Tensor<T: Scalar = f32> {
    inner: Rc<RefCell<Node<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.inner.borrow();
        write!(f, "Tensor(op={}, shape={:?})", n.op, n.shape)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    // ── Constructors ────────────────────────────────────────────────

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("from_vec", format!("zero extent in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} wants {} elements, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Self::new_leaf(shape.to_vec(), data, false))
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_leaf(shape.to_vec(), vec![T::zero(); numel(shape)], false)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_leaf(vec![1], vec![v], false)
    }

    fn new_leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                requires_grad,
                op: "leaf",
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let backward = if requires_grad { Some(backward) } else { None };
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                requires_grad,
                op,
                parents,
                backward,
            })),
        }
    }

    // ── Accessors ───────────────────────────────────────────────────

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Toggle gradient participation of a leaf (freezing/unfreezing
    /// parameters between training phases).
    pub fn set_requires_grad(&self, flag: bool) {
        let mut n = self.inner.borrow_mut();
        n.requires_grad = flag;
        if !flag {
            n.grad = None;
        }
    }

    pub fn op_name(&self) -> &'static str {
        self.inner.borrow().op
    }

    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.inner.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let n = self.inner.borrow();
        assert_eq!(n.data.len(), 1, "item() on non-scalar tensor");
        n.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the data buffer (optimizer updates, finite-difference probes).
    pub fn set_data(&self, data: &[T]) {
        let mut n = self.inner.borrow_mut();
        assert_eq!(n.data.len(), data.len(), "set_data length mismatch");
        n.data.copy_from_slice(data);
    }

    /// In-place mutation of the data buffer.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.borrow_mut().data);
    }

    fn ptr(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// (rows, cols) view treating the last axis as columns.
    fn as_2d(&self) -> (usize, usize) {
        let n = self.inner.borrow();
        let cols = *n.shape.last().expect("nonempty shape");
        (n.data.len() / cols, cols)
    }

    fn accum_grad(&self, contrib: &[T]) {
        let mut n = self.inner.borrow_mut();
        if !n.requires_grad {
            return;
        }
        let len = n.data.len();
        debug_assert_eq!(len, contrib.len());
        let g = n.grad.get_or_insert_with(|| vec![T::zero(); len]);
        for (gv, &cv) in g.iter_mut().zip(contrib) {
            *gv += cv;
        }
    }

    pub fn is_finite(&self) -> bool {
        kernels::all_finite(&self.inner.borrow().data)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse-mode pass from a scalar output. Accumulates into leaf
    /// `grad` buffers; call [`Tensor::zero_grad`] between optimizer steps.
    pub fn backward(&self) -> Result<()> {
        {
            let mut n = self.inner.borrow_mut();
            if n.data.len() != 1 {
                return Err(Error::shape(
                    "backward",
                    format!("expected scalar output, got shape {:?}", n.shape),
                ));
            }
            n.grad = Some(vec![T::one()]);
        }
        let order = self.topo_order();
        for node in order.iter().rev() {
            let inner = node.inner.borrow();
            if !inner.requires_grad {
                continue;
            }
            if let (Some(bw), Some(g)) = (&inner.backward, &inner.grad) {
                bw(g, &inner.data);
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx == 0 && visited.contains(&node.ptr()) {
                continue;
            }
            let parent = {
                let inner = node.inner.borrow();
                inner.parents.get(child_idx).cloned()
            };
            match parent {
                Some(p) => {
                    stack.push((node, child_idx + 1));
                    stack.push((p, 0));
                }
                None => {
                    if visited.insert(node.ptr()) {
                        order.push(node);
                    }
                }
            }
        }
        order
    }

    // ── Elementwise ops ─────────────────────────────────────────────

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        let a = self.inner.borrow();
        let b = other.inner.borrow();
        if a.shape != b.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Self::from_op(
            "add",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                pa.accum_grad(g);
                pb.accum_grad(g);
            }),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Self::from_op(
            "sub",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                pa.accum_grad(g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                pb.accum_grad(&neg);
            }),
        ))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Self::from_op(
            "mul",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                if pa.requires_grad() {
                    let contrib: Vec<T> = {
                        let b = pb.data();
                        g.iter().zip(b.iter()).map(|(&gv, &bv)| gv * bv).collect()
                    };
                    pa.accum_grad(&contrib);
                }
                if pb.requires_grad() {
                    let contrib: Vec<T> = {
                        let a = pa.data();
                        g.iter().zip(a.iter()).map(|(&gv, &av)| gv * av).collect()
                    };
                    pb.accum_grad(&contrib);
                }
            }),
        ))
    }

    pub fn scale(&self, c: T) -> Self {
        let data: Vec<T> = self.data().iter().map(|&v| v * c).collect();
        let p = self.clone();
        Self::from_op(
            "scale",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let contrib: Vec<T> = g.iter().map(|&v| v * c).collect();
                p.accum_grad(&contrib);
            }),
        )
    }

    pub fn add_scalar(&self, c: T) -> Self {
        let data: Vec<T> = self.data().iter().map(|&v| v + c).collect();
        let p = self.clone();
        Self::from_op(
            "add_scalar",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| p.accum_grad(g)),
        )
    }

    pub fn relu(&self) -> Self {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let p = self.clone();
        Self::from_op(
            "relu",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let contrib: Vec<T> = g
                    .iter()
                    .zip(out.iter())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                p.accum_grad(&contrib);
            }),
        )
    }

    pub fn sigmoid(&self) -> Self {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&v| {
                // stable logistic: never exponentiate a positive argument
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        let p = self.clone();
        Self::from_op(
            "sigmoid",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let contrib: Vec<T> = g
                    .iter()
                    .zip(out.iter())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                p.accum_grad(&contrib);
            }),
        )
    }

    pub fn exp(&self) -> Self {
        let data: Vec<T> = self.data().iter().map(|&v| v.exp()).collect();
        let p = self.clone();
        Self::from_op(
            "exp",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let contrib: Vec<T> = g.iter().zip(out.iter()).map(|(&gv, &y)| gv * y).collect();
                p.accum_grad(&contrib);
            }),
        )
    }

    pub fn log(&self) -> Self {
        let data: Vec<T> = self.data().iter().map(|&v| v.ln()).collect();
        let p = self.clone();
        Self::from_op(
            "log",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let contrib: Vec<T> = {
                    let x = p.data();
                    g.iter().zip(x.iter()).map(|(&gv, &xv)| gv / xv).collect()
                };
                p.accum_grad(&contrib);
            }),
        )
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&v| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            })
            .collect();
        let p = self.clone();
        Self::from_op(
            "clamp",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let contrib: Vec<T> = {
                    let x = p.data();
                    g.iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| if xv > lo && xv < hi { gv } else { T::zero() })
                        .collect()
                };
                p.accum_grad(&contrib);
            }),
        )
    }

    /// Elementwise minimum. Grad routes to the smaller input; ties go to `self`.
    pub fn min_elem(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "min_elem")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| if a <= b { a } else { b })
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Self::from_op(
            "min_elem",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let (ca, cb): (Vec<T>, Vec<T>) = {
                    let a = pa.data();
                    let b = pb.data();
                    let mut ca = vec![T::zero(); g.len()];
                    let mut cb = vec![T::zero(); g.len()];
                    for i in 0..g.len() {
                        if a[i] <= b[i] {
                            ca[i] = g[i];
                        } else {
                            cb[i] = g[i];
                        }
                    }
                    (ca, cb)
                };
                pa.accum_grad(&ca);
                pb.accum_grad(&cb);
            }),
        ))
    }

    /// Elementwise maximum. Grad routes to the larger input; ties go to `self`.
    pub fn max_elem(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "max_elem")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| if a >= b { a } else { b })
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Self::from_op(
            "max_elem",
            self.shape(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let (ca, cb): (Vec<T>, Vec<T>) = {
                    let a = pa.data();
                    let b = pb.data();
                    let mut ca = vec![T::zero(); g.len()];
                    let mut cb = vec![T::zero(); g.len()];
                    for i in 0..g.len() {
                        if a[i] >= b[i] {
                            ca[i] = g[i];
                        } else {
                            cb[i] = g[i];
                        }
                    }
                    (ca, cb)
                };
                pa.accum_grad(&ca);
                pb.accum_grad(&cb);
            }),
        ))
    }

    // ── Row-structured ops ──────────────────────────────────────────

    /// Softmax over the last axis.
    pub fn softmax_rows(&self) -> Self {
        let (_, cols) = self.as_2d();
        let mut data = self.to_vec();
        kernels::softmax_rows_inplace(&mut data, cols);
        let p = self.clone();
        Self::from_op(
            "softmax_rows",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                // dx = y ⊙ (g − <g, y>) per row
                let mut contrib = vec![T::zero(); g.len()];
                for r in 0..g.len() / cols {
                    let o = &out[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mut dot = T::zero();
                    for i in 0..cols {
                        dot += gr[i] * o[i];
                    }
                    let c = &mut contrib[r * cols..(r + 1) * cols];
                    for i in 0..cols {
                        c[i] = o[i] * (gr[i] - dot);
                    }
                }
                p.accum_grad(&contrib);
            }),
        )
    }

    /// Layer normalization over the last axis, without affine parameters.
    pub fn layer_norm(&self, eps: T) -> Self {
        let (rows, cols) = self.as_2d();
        let mut data = self.to_vec();
        // inv_std per row is needed in backward; cheap to keep
        let mut inv_stds = Vec::with_capacity(rows);
        let n = T::of(cols as f64);
        for row in data.chunks_mut(cols) {
            let mut mean = T::zero();
            for &v in row.iter() {
                mean += v;
            }
            mean = mean / n;
            let mut var = T::zero();
            for &v in row.iter() {
                let d = v - mean;
                var += d * d;
            }
            var = var / n;
            let inv_std = T::one() / (var + eps).sqrt();
            inv_stds.push(inv_std);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
        }
        let p = self.clone();
        Self::from_op(
            "layer_norm",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let mut contrib = vec![T::zero(); g.len()];
                for r in 0..g.len() / cols {
                    let y = &out[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mut mean_g = T::zero();
                    let mut mean_gy = T::zero();
                    for i in 0..cols {
                        mean_g += gr[i];
                        mean_gy += gr[i] * y[i];
                    }
                    mean_g = mean_g / n;
                    mean_gy = mean_gy / n;
                    let c = &mut contrib[r * cols..(r + 1) * cols];
                    for i in 0..cols {
                        c[i] = inv_stds[r] * (gr[i] - mean_g - y[i] * mean_gy);
                    }
                }
                p.accum_grad(&contrib);
            }),
        )
    }

    /// Adds a `[cols]` vector to every row of a `[rows x cols]` tensor.
    pub fn add_rowwise(&self, v: &Self) -> Result<Self> {
        let (rows, cols) = self.as_2d();
        if v.numel() != cols {
            return Err(Error::shape(
                "add_rowwise",
                format!("vector {:?} vs row width {}", v.shape(), cols),
            ));
        }
        let data: Vec<T> = {
            let x = self.data();
            let vv = v.data();
            (0..rows * cols).map(|i| x[i] + vv[i % cols]).collect()
        };
        let (pa, pv) = (self.clone(), v.clone());
        Ok(Self::from_op(
            "add_rowwise",
            self.shape(),
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |g, _| {
                pa.accum_grad(g);
                if pv.requires_grad() {
                    let mut contrib = vec![T::zero(); cols];
                    for (i, &gv) in g.iter().enumerate() {
                        contrib[i % cols] += gv;
                    }
                    pv.accum_grad(&contrib);
                }
            }),
        ))
    }

    /// Multiplies every row of a `[rows x cols]` tensor by a `[cols]` vector.
    pub fn mul_rowwise(&self, v: &Self) -> Result<Self> {
        let (rows, cols) = self.as_2d();
        if v.numel() != cols {
            return Err(Error::shape(
                "mul_rowwise",
                format!("vector {:?} vs row width {}", v.shape(), cols),
            ));
        }
        let data: Vec<T> = {
            let x = self.data();
            let vv = v.data();
            (0..rows * cols).map(|i| x[i] * vv[i % cols]).collect()
        };
        let (pa, pv) = (self.clone(), v.clone());
        Ok(Self::from_op(
            "mul_rowwise",
            self.shape(),
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |g, _| {
                if pa.requires_grad() {
                    let contrib: Vec<T> = {
                        let vv = pv.data();
                        g.iter()
                            .enumerate()
                            .map(|(i, &gv)| gv * vv[i % cols])
                            .collect()
                    };
                    pa.accum_grad(&contrib);
                }
                if pv.requires_grad() {
                    let contrib: Vec<T> = {
                        let x = pa.data();
                        let mut c = vec![T::zero(); cols];
                        for (i, &gv) in g.iter().enumerate() {
                            c[i % cols] += gv * x[i];
                        }
                        c
                    };
                    pv.accum_grad(&contrib);
                }
            }),
        ))
    }

    // ── Matrix ops ──────────────────────────────────────────────────

    /// `[m x k] @ [k x n]`
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.as_2d();
        let (k2, n) = other.as_2d();
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} @ {:?}", self.shape(), other.shape()),
            ));
        }
        let data = kernels::matmul(&self.data(), &other.data(), m, k, n);
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Self::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                if pa.requires_grad() {
                    let contrib = {
                        let b = pb.data();
                        kernels::matmul_nt(g, &b, m, n, k)
                    };
                    pa.accum_grad(&contrib);
                }
                if pb.requires_grad() {
                    let contrib = {
                        let a = pa.data();
                        kernels::matmul_tn(&a, g, m, k, n)
                    };
                    pb.accum_grad(&contrib);
                }
            }),
        ))
    }

    /// `[m x k] @ [n x k]^T`
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.as_2d();
        let (n, k2) = other.as_2d();
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} @ {:?}^T", self.shape(), other.shape()),
            ));
        }
        let data = kernels::matmul_nt(&self.data(), &other.data(), m, k, n);
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Self::from_op(
            "matmul_nt",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                if pa.requires_grad() {
                    // dA = G @ B, G: [m x n], B: [n x k]
                    let contrib = {
                        let b = pb.data();
                        kernels::matmul(g, &b, m, n, k)
                    };
                    pa.accum_grad(&contrib);
                }
                if pb.requires_grad() {
                    // dB = G^T @ A, G: [m x n], A: [m x k]
                    let contrib = {
                        let a = pa.data();
                        kernels::matmul_tn(g, &a, m, n, k)
                    };
                    pb.accum_grad(&contrib);
                }
            }),
        ))
    }

    // ── Shape ops ───────────────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        let p = self.clone();
        Ok(Self::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| p.accum_grad(g)),
        ))
    }

    /// Stack 2D tensors along axis 0. All parts must share the column width.
    pub fn concat_rows(parts: &[Self]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let (_, cols) = parts[0].as_2d();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.as_2d();
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column widths differ: {} vs {}", cols, c),
                ));
            }
            row_counts.push(r);
            data.extend_from_slice(&p.data());
        }
        let total_rows: usize = row_counts.iter().sum();
        let parents: Vec<Tensor<T>> = parts.to_vec();
        let handles = parents.clone();
        Ok(Self::from_op(
            "concat_rows",
            vec![total_rows, cols],
            data,
            parents,
            Box::new(move |g, _| {
                let mut offset = 0;
                for (p, &r) in handles.iter().zip(&row_counts) {
                    p.accum_grad(&g[offset..offset + r * cols]);
                    offset += r * cols;
                }
            }),
        ))
    }

    /// Concatenate 2D tensors along the last axis. All parts share row count.
    pub fn concat_cols(parts: &[Self]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let (rows, _) = parts[0].as_2d();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.as_2d();
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", rows, r),
                ));
            }
            widths.push(c);
        }
        let total_cols: usize = widths.iter().sum();
        let mut data = vec![T::zero(); rows * total_cols];
        {
            let mut col_offset = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                let src = p.data();
                for r in 0..rows {
                    data[r * total_cols + col_offset..r * total_cols + col_offset + w]
                        .copy_from_slice(&src[r * w..(r + 1) * w]);
                }
                col_offset += w;
            }
        }
        let parents: Vec<Tensor<T>> = parts.to_vec();
        let handles = parents.clone();
        Ok(Self::from_op(
            "concat_cols",
            vec![rows, total_cols],
            data,
            parents,
            Box::new(move |g, _| {
                let mut col_offset = 0;
                for (p, &w) in handles.iter().zip(&widths) {
                    if p.requires_grad() {
                        let mut contrib = vec![T::zero(); rows * w];
                        for r in 0..rows {
                            contrib[r * w..(r + 1) * w].copy_from_slice(
                                &g[r * total_cols + col_offset..r * total_cols + col_offset + w],
                            );
                        }
                        p.accum_grad(&contrib);
                    }
                    col_offset += w;
                }
            }),
        ))
    }

    /// Rows `r0..r1` of a 2D tensor.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Self> {
        let (rows, cols) = self.as_2d();
        if r0 >= r1 || r1 > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("range {r0}..{r1} on {rows} rows"),
            ));
        }
        let data = self.data()[r0 * cols..r1 * cols].to_vec();
        let p = self.clone();
        let total = rows * cols;
        Ok(Self::from_op(
            "slice_rows",
            vec![r1 - r0, cols],
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut contrib = vec![T::zero(); total];
                contrib[r0 * cols..r0 * cols + g.len()].copy_from_slice(g);
                p.accum_grad(&contrib);
            }),
        ))
    }

    /// Columns `c0..c1` of a 2D tensor.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Self> {
        let (rows, cols) = self.as_2d();
        if c0 >= c1 || c1 > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("range {c0}..{c1} on {cols} cols"),
            ));
        }
        let w = c1 - c0;
        let mut data = vec![T::zero(); rows * w];
        {
            let src = self.data();
            for r in 0..rows {
                data[r * w..(r + 1) * w].copy_from_slice(&src[r * cols + c0..r * cols + c1]);
            }
        }
        let p = self.clone();
        Ok(Self::from_op(
            "slice_cols",
            vec![rows, w],
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut contrib = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    contrib[r * cols + c0..r * cols + c1].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                p.accum_grad(&contrib);
            }),
        ))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum_all(&self) -> Self {
        let s: T = self.data().iter().copied().sum();
        let p = self.clone();
        let len = self.numel();
        Self::from_op(
            "sum_all",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| {
                let contrib = vec![g[0]; len];
                p.accum_grad(&contrib);
            }),
        )
    }

    pub fn mean_all(&self) -> Self {
        let len = self.numel();
        let s: T = self.data().iter().copied().sum();
        let inv = T::one() / T::of(len as f64);
        let p = self.clone();
        Self::from_op(
            "mean_all",
            vec![1],
            vec![s * inv],
            vec![self.clone()],
            Box::new(move |g, _| {
                let contrib = vec![g[0] * inv; len];
                p.accum_grad(&contrib);
            }),
        )
    }

    // ── Sequence-model ops ──────────────────────────────────────────

    /// Rows of `self` (the `[vocab x dim]` table) selected by `ids`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Self> {
        let (vocab, dim) = self.as_2d();
        if ids.is_empty() {
            return Err(Error::shape("embedding", "empty id list"));
        }
        for (i, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::Index(format!(
                    "embedding id {id} at position {i} out of range (vocab {vocab})"
                )));
            }
        }
        let mut data = vec![T::zero(); ids.len() * dim];
        {
            let table = self.data();
            for (r, &id) in ids.iter().enumerate() {
                data[r * dim..(r + 1) * dim].copy_from_slice(&table[id * dim..(id + 1) * dim]);
            }
        }
        let p = self.clone();
        let ids_owned = ids.to_vec();
        Ok(Self::from_op(
            "embedding",
            vec![ids.len(), dim],
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut contrib = vec![T::zero(); vocab * dim];
                for (r, &id) in ids_owned.iter().enumerate() {
                    let dst = &mut contrib[id * dim..(id + 1) * dim];
                    let src = &g[r * dim..(r + 1) * dim];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                p.accum_grad(&contrib);
            }),
        ))
    }

    /// Additive causal mask on a square score matrix: positions with
    /// `col > row` are replaced by a large negative constant.
    pub fn causal_mask(&self) -> Result<Self> {
        let (rows, cols) = self.as_2d();
        if rows != cols {
            return Err(Error::shape(
                "causal_mask",
                format!("expected square scores, got {rows}x{cols}"),
            ));
        }
        let neg = T::of(MASK_NEG);
        let mut data = self.to_vec();
        for r in 0..rows {
            for c in (r + 1)..cols {
                data[r * cols + c] = neg;
            }
        }
        let p = self.clone();
        Ok(Self::from_op(
            "causal_mask",
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut contrib = vec![T::zero(); g.len()];
                for r in 0..rows {
                    contrib[r * cols..r * cols + r + 1].copy_from_slice(&g[r * cols..r * cols + r + 1]);
                }
                p.accum_grad(&contrib);
            }),
        ))
    }

    /// Per-row log-probability of the target id: `log softmax(row)[id]`.
    pub fn gather_log_probs(&self, ids: &[usize]) -> Result<Self> {
        let (rows, cols) = self.as_2d();
        if ids.len() != rows {
            return Err(Error::shape(
                "gather_log_probs",
                format!("{} ids for {} rows", ids.len(), rows),
            ));
        }
        for (i, &id) in ids.iter().enumerate() {
            if id >= cols {
                return Err(Error::Index(format!(
                    "target {id} at row {i} out of range (vocab {cols})"
                )));
            }
        }
        let mut log_probs = self.to_vec();
        kernels::log_softmax_rows_inplace(&mut log_probs, cols);
        let data: Vec<T> = ids
            .iter()
            .enumerate()
            .map(|(r, &id)| log_probs[r * cols + id])
            .collect();
        // softmax rows are needed in backward; derive from the log-probs
        let probs: Vec<T> = log_probs.iter().map(|&v| v.exp()).collect();
        let p = self.clone();
        let ids_owned = ids.to_vec();
        Ok(Self::from_op(
            "gather_log_probs",
            vec![rows],
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut contrib = vec![T::zero(); rows * cols];
                for (r, &id) in ids_owned.iter().enumerate() {
                    let gr = g[r];
                    if gr == T::zero() {
                        continue;
                    }
                    let row = &mut contrib[r * cols..(r + 1) * cols];
                    let pr = &probs[r * cols..(r + 1) * cols];
                    for (c, item) in row.iter_mut().enumerate() {
                        *item = -gr * pr[c];
                    }
                    row[id] += gr;
                }
                p.accum_grad(&contrib);
            }),
        ))
    }
}

/// Mean of `-log softmax(logits)[target]` over rows.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<Tensor<T>> {
    let weights = vec![T::one(); targets.len()];
    cross_entropy_weighted(logits, targets, &weights)
}

/// Weighted mean of per-row cross-entropy: `Σ w_i · (-log p_i) / Σ w_i`.
/// Rows with zero weight contribute neither loss nor gradient.
pub fn cross_entropy_weighted<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    weights: &[T],
) -> Result<Tensor<T>> {
    let (rows, cols) = logits.as_2d();
    if targets.len() != rows || weights.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!(
                "{} targets / {} weights for {} rows",
                targets.len(),
                weights.len(),
                rows
            ),
        ));
    }
    for (i, &t) in targets.iter().enumerate() {
        if t >= cols {
            return Err(Error::Index(format!(
                "target {t} at row {i} out of range (vocab {cols})"
            )));
        }
    }
    let total_w: T = weights.iter().copied().sum();
    if total_w <= T::zero() {
        return Err(Error::Numeric("cross_entropy: total weight is zero".into()));
    }
    let mut log_probs = logits.to_vec();
    kernels::log_softmax_rows_inplace(&mut log_probs, cols);
    let mut loss = T::zero();
    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        loss += -w * log_probs[r * cols + t];
    }
    loss = loss / total_w;

    let probs: Vec<T> = log_probs.iter().map(|&v| v.exp()).collect();
    let p = logits.clone();
    let targets_owned = targets.to_vec();
    let weights_owned = weights.to_vec();
    Ok(Tensor::from_op(
        "cross_entropy",
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |g, _| {
            let scale = g[0] / total_w;
            let mut contrib = vec![T::zero(); rows * cols];
            for (r, (&t, &w)) in targets_owned.iter().zip(&weights_owned).enumerate() {
                if w == T::zero() {
                    continue;
                }
                let row = &mut contrib[r * cols..(r + 1) * cols];
                let pr = &probs[r * cols..(r + 1) * cols];
                let ws = w * scale;
                for (c, item) in row.iter_mut().enumerate() {
                    *item = ws * pr[c];
                }
                row[t] -= ws;
            }
            p.accum_grad(&contrib);
        }),
    ))
}
