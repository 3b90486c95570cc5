//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The graph is built define-by-run: every differentiable operation records
//! its parents and a backward rule on the output tensor. Calling
//! [`Tensor::backward`] on a scalar walks the recorded graph once in reverse
//! topological order and accumulates gradients into every `requires_grad`
//! leaf. The graph is dropped with the tensors that own it, so each
//! forward/backward pass uses a fresh tape.
//!
//! Tensors are immutable after creation except for gradient accumulation and
//! explicit parameter updates between passes ([`Tensor::set_data`]). A graph
//! and its tensors belong to one thread; independent graphs may run in
//! parallel threads.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Dense n-dimensional f64 array, row-major, participating in a gradient tape.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    /// Constant leaf tensor.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::build(vec![], vec![v], false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the raw data (row-major).
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrite a leaf's values in place. Used by the optimizer between
    /// passes; graphs built from old values must not be reused afterwards.
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), values.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    /// New constant leaf with the same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    fn tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    fn result(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, backward: BackwardFn) -> Tensor {
        if parents.iter().any(Tensor::tracked) {
            Tensor::build(shape, data, false, Some(Node { parents, backward }))
        } else {
            Tensor::build(shape, data, false, None)
        }
    }

    // ----- elementwise ops -----

    /// Elementwise sum. The right operand may be a trailing-dimension
    /// broadcast of the left (bias-add pattern), e.g. `[N,K] + [K]`.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self, other);
        if a.shape() == b.shape() {
            let out: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data().iter())
                .map(|(x, y)| x + y)
                .collect();
            let shape = a.shape().to_vec();
            return Ok(Tensor::result(
                shape,
                out,
                vec![a.clone(), b.clone()],
                Box::new(|g| vec![g.to_vec(), g.to_vec()]),
            ));
        }
        // suffix broadcast: b repeats over a's leading dims
        let (ra, rb) = (a.rank(), b.rank());
        if rb < ra && a.shape()[ra - rb..] == *b.shape() {
            let inner = b.len();
            let out: Vec<f64> = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + b.data()[i % inner])
                .collect();
            let shape = a.shape().to_vec();
            return Ok(Tensor::result(
                shape,
                out,
                vec![a.clone(), b.clone()],
                Box::new(move |g| {
                    let mut gb = vec![0.0; inner];
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % inner] += gi;
                    }
                    vec![g.to_vec(), gb]
                }),
            ));
        }
        Err(Error::shape(format!(
            "add: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )))
    }

    pub fn neg(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| -x).collect();
        Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g| vec![g.iter().map(|x| -x).collect()]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.neg())
    }

    /// Elementwise product (same shapes only).
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "mul: incompatible shapes {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(x, y)| x * y)
            .collect();
        let a = self.clone();
        let b = other.clone();
        let (ad, bd) = (self.to_vec(), other.to_vec());
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    g.iter().zip(bd.iter()).map(|(gi, y)| gi * y).collect(),
                    g.iter().zip(ad.iter()).map(|(gi, x)| gi * x).collect(),
                ]
            }),
        ))
    }

    /// Multiply every element by a finite scalar.
    pub fn scalar_mul(&self, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::arg(format!("scalar_mul: non-finite factor {c}")));
        }
        let out: Vec<f64> = self.data().iter().map(|x| x * c).collect();
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| vec![g.iter().map(|gi| gi * c).collect()]),
        ))
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.max(0.0)).collect();
        let input = self.to_vec();
        Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                // subgradient 0 at exactly 0
                vec![g
                    .iter()
                    .zip(input.iter())
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect()]
            }),
        )
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.len();
        Tensor::result(
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![vec![g[0]; n]]),
        )
    }

    // ----- shape ops -----

    /// Collapse all but the first dimension.
    pub fn flatten(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::shape(format!(
                "flatten: need rank >= 2, got shape {:?}",
                self.shape()
            )));
        }
        let n = self.shape()[0];
        let rest = self.len() / n;
        Ok(Tensor::result(
            vec![n, rest],
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g| vec![g.to_vec()]),
        ))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::shape(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::result(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g| vec![g.to_vec()]),
        ))
    }

    // ----- matmul -----

    /// `[m,k] x [k,n] -> [m,n]` matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul: need rank-2 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions differ, {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let out = mm(&self.data(), &other.data(), m, k, n, false, false);
        let (ad, bd) = (self.to_vec(), other.to_vec());
        Ok(Tensor::result(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = dC . B^T, dB = A^T . dC
                let da = mm(g, &bd, m, n, k, false, true);
                let db = mm(&ad, g, k, m, n, true, false);
                vec![da, db]
            }),
        ))
    }

    // ----- softmax -----

    /// Log-softmax over the last axis, stabilized by max subtraction.
    /// `axis` must name the last axis of the tensor.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        if self.rank() == 0 || axis != self.rank() - 1 {
            return Err(Error::arg(format!(
                "log_softmax: axis {} must be the last axis of shape {:?}",
                axis,
                self.shape()
            )));
        }
        let k = *self.shape().last().unwrap();
        let rows = self.len() / k;
        let mut out = vec![0.0; self.len()];
        {
            let d = self.data();
            for r in 0..rows {
                let row = &d[r * k..(r + 1) * k];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                for (j, x) in row.iter().enumerate() {
                    out[r * k + j] = x - lse;
                }
            }
        }
        let probs: Vec<f64> = out.iter().map(|l| l.exp()).collect();
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                // d/dx_j = g_j - softmax_j * sum(g)
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gs: f64 = g[r * k..(r + 1) * k].iter().sum();
                    for j in 0..k {
                        let i = r * k + j;
                        gx[i] = g[i] - probs[i] * gs;
                    }
                }
                vec![gx]
            }),
        ))
    }

    // ----- conv / pool -----

    /// 2-D cross-correlation of `[N,C,H,W]` input with `[F,C,kh,kw]` kernel.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        if self.rank() != 4 || kernel.rank() != 4 {
            return Err(Error::shape(format!(
                "conv2d: need [N,C,H,W] input and [F,C,kh,kw] kernel, got {:?} and {:?}",
                self.shape(),
                kernel.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::arg("conv2d: stride must be >= 1"));
        }
        let [n, c, h, w] = [self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]];
        let [f, ck, kh, kw] = [
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        ];
        if ck != c {
            return Err(Error::shape(format!(
                "conv2d: channel mismatch, input C={c} kernel C={ck}"
            )));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeom { n, c, h, w, f, kh, kw, oh, ow, stride, padding };

        let xd = self.to_vec();
        let kd = kernel.to_vec();
        let mut out = vec![0.0; n * f * oh * ow];
        let col_rows = c * kh * kw;
        let mut cols = vec![0.0; col_rows * oh * ow];
        for i in 0..n {
            im2col(&xd[i * c * h * w..(i + 1) * c * h * w], &geom, &mut cols);
            // [f, col_rows] x [col_rows, oh*ow]
            let o = mm(&kd, &cols, f, col_rows, oh * ow, false, false);
            out[i * f * oh * ow..(i + 1) * f * oh * ow].copy_from_slice(&o);
        }

        Ok(Tensor::result(
            vec![n, f, oh, ow],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g| {
                let col_rows = geom.c * geom.kh * geom.kw;
                let plane = geom.oh * geom.ow;
                let mut dk = vec![0.0; geom.f * col_rows];
                let mut dx = vec![0.0; geom.n * geom.c * geom.h * geom.w];
                let mut cols = vec![0.0; col_rows * plane];
                for i in 0..geom.n {
                    let gi = &g[i * geom.f * plane..(i + 1) * geom.f * plane];
                    im2col(&xd[i * geom.c * geom.h * geom.w..(i + 1) * geom.c * geom.h * geom.w], &geom, &mut cols);
                    // dK += dOut . cols^T
                    let dki = mm(gi, &cols, geom.f, plane, col_rows, false, true);
                    for (a, b) in dk.iter_mut().zip(dki.iter()) {
                        *a += b;
                    }
                    // dCols = K^T . dOut
                    let dcols = mm(&kd, gi, col_rows, geom.f, plane, true, false);
                    col2im(
                        &dcols,
                        &geom,
                        &mut dx[i * geom.c * geom.h * geom.w..(i + 1) * geom.c * geom.h * geom.w],
                    );
                }
                vec![dx, dk]
            }),
        ))
    }

    /// Non-overlapping max pooling with square window `size`. Spatial
    /// dimensions must divide evenly; there is no implicit padding.
    pub fn max_pool2d(&self, size: usize) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(Error::shape(format!(
                "max_pool2d: need [N,C,H,W], got {:?}",
                self.shape()
            )));
        }
        if size == 0 {
            return Err(Error::arg("max_pool2d: window must be >= 1"));
        }
        let [n, c, h, w] = [self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]];
        if h % size != 0 || w % size != 0 {
            return Err(Error::shape(format!(
                "max_pool2d: window {size} does not divide spatial size {h}x{w}"
            )));
        }
        let (oh, ow) = (h / size, w / size);
        let d = self.to_vec();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        for nc in 0..n * c {
            let plane = &d[nc * h * w..(nc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = (oy * size + dy) * w + ox * size + dx;
                            if plane[i] > best {
                                best = plane[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = nc * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = nc * h * w + best_i;
                }
            }
        }
        let in_len = self.len();
        Ok(Tensor::result(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; in_len];
                for (o, gi) in g.iter().enumerate() {
                    gx[argmax[o]] += gi;
                }
                vec![gx]
            }),
        ))
    }

    // ----- backward -----

    /// Reverse pass from a scalar loss. Gradients accumulate additively into
    /// every `requires_grad` leaf reachable from the loss.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::arg(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape()
            )));
        }
        // post-order DFS, then reverse = topological order from the loss
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.inner.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.tracked() && !seen.contains(&p.inner.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.inner.id, vec![1.0]);
        for t in order.iter().rev() {
            let g = match grads.remove(&t.inner.id) {
                Some(g) => g,
                None => continue,
            };
            if t.inner.requires_grad {
                let mut slot = t.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g.iter()) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g.clone()),
                }
            }
            if let Some(node) = &t.inner.node {
                let parent_grads = (node.backward)(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(parent_grads.into_iter()) {
                    if !p.tracked() {
                        continue;
                    }
                    match grads.get_mut(&p.inner.id) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(pg.iter()) {
                                *a += b;
                            }
                        }
                        None => {
                            grads.insert(p.inner.id, pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

/// Unfold one image `[C,H,W]` into a `[C*kh*kw, oh*ow]` column matrix.
fn im2col(img: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let plane = g.oh * g.ow;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        let v = if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w
                        {
                            img[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                        cols[row * plane + oy * g.ow + ox] = v;
                    }
                }
            }
        }
    }
}

/// Fold a column-matrix gradient back onto the image, accumulating overlaps.
fn col2im(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let plane = g.oh * g.ow;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        img[(c * g.h + iy as usize) * g.w + ix as usize] +=
                            cols[row * plane + oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Row-major `[m,k] x [k,n]` product with optional transposes of the stored
/// operands (strides only, no copies).
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Max relative error between the analytic gradient of `f` at `x` and a
/// central finite difference with the given step.
///
/// The error measure per element is `|analytic - numeric| /
/// max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let leaf = Tensor::param(x.shape(), x.to_vec())?;
    let loss = f(&leaf)?;
    if !loss.is_scalar() {
        return Err(Error::arg("grad_check: f must be scalar-valued"));
    }
    loss.backward()?;
    let analytic = leaf
        .grad()
        .ok_or_else(|| Error::arg("grad_check: f does not depend on x"))?;

    let base = x.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..base.len() {
        let eval = |v: f64| -> Result<f64> {
            let mut d = base.clone();
            d[i] = v;
            Ok(f(&Tensor::from_vec(x.shape(), d)?)?.item())
        };
        let numeric = (eval(base[i] + step)? - eval(base[i] - step)?) / (2.0 * step);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}
