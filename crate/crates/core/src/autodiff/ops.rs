//! Primitive differentiable operations.
//!
//! Each op computes its forward value eagerly and knows how to express its
//! vector-Jacobian product in terms of other ops on the same tape, so the
//! backward pass stays differentiable.

use super::{Tape, Tensor, Var};
use ndarray::{ArrayD, Axis, IxDyn, Zip};

pub(crate) trait Op {
    fn name(&self) -> &'static str;
    fn boxed_clone(&self) -> Box<dyn Op>;
    /// Gradient contribution for each parent (None when the parent does not
    /// require gradients). `node` is this op's output node id.
    fn vjp(
        &self,
        tape: &Tape,
        node: usize,
        parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>>;
}

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast: {:?} vs {:?}",
            a,
            b
        );
        out[i] = da.max(db);
    }
    out
}

fn bcast(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        t.clone()
    } else {
        t.broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", t.shape(), shape))
            .to_owned()
    }
}

/// Reduce `t` down to `shape` by summing over broadcast axes.
fn reduce_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let mut cur = t.clone();
    while cur.ndim() > shape.len() {
        cur = cur.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if shape[ax] == 1 && cur.shape()[ax] != 1 {
            let summed = cur.sum_axis(Axis(ax));
            cur = summed.insert_axis(Axis(ax));
        }
    }
    assert_eq!(cur.shape(), shape, "reduce_to shape mismatch");
    cur
}

fn binary_forward(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let shape = broadcast_shapes(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).unwrap();
    let bv = b.broadcast(IxDyn(&shape)).unwrap();
    let mut out = ArrayD::zeros(IxDyn(&shape));
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

/// Sum a var down to a (broadcast-compatible) shape; no-op when equal.
fn sum_to(v: &Var, shape: &[usize]) -> Var {
    if v.shape() == shape {
        v.clone()
    } else {
        v.sum_to(shape)
    }
}

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone)]
pub(crate) struct Binary {
    pub kind: BinKind,
}

impl Op for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        tape: &Tape,
        _node: usize,
        parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        let a = tape.var(parents[0]);
        let b = tape.var(parents[1]);
        let (sa, sb) = (a.shape(), b.shape());
        match self.kind {
            BinKind::Add => vec![
                needs[0].then(|| sum_to(adj, &sa)),
                needs[1].then(|| sum_to(adj, &sb)),
            ],
            BinKind::Sub => vec![
                needs[0].then(|| sum_to(adj, &sa)),
                needs[1].then(|| sum_to(&adj.neg(), &sb)),
            ],
            BinKind::Mul => vec![
                needs[0].then(|| sum_to(&adj.mul(&b), &sa)),
                needs[1].then(|| sum_to(&adj.mul(&a), &sb)),
            ],
            BinKind::Div => {
                let da = needs[0].then(|| sum_to(&adj.div(&b), &sa));
                let db = needs[1].then(|| {
                    // -adj * a / b^2
                    let t = adj.mul(&a).div(&b.square()).neg();
                    sum_to(&t, &sb)
                });
                vec![da, db]
            }
        }
    }
}

// ---------------------------------------------------------------------------
// affine: a*x + b with f64 coefficients
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct Affine {
    pub a: f64,
    pub b: f64,
}

impl Op for Affine {
    fn name(&self) -> &'static str {
        "affine"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.scale(self.a))]
    }
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
pub(crate) enum UnKind {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    LeakyRelu(f64),
    Square,
}

#[derive(Clone)]
pub(crate) struct Unary {
    pub kind: UnKind,
}

pub(crate) fn unary_forward(kind: UnKind, x: &Tensor) -> Tensor {
    let f: Box<dyn Fn(f64) -> f64> = match kind {
        UnKind::Exp => Box::new(f64::exp),
        UnKind::Ln => Box::new(f64::ln),
        UnKind::Sqrt => Box::new(f64::sqrt),
        UnKind::Sin => Box::new(f64::sin),
        UnKind::Cos => Box::new(f64::cos),
        UnKind::Tanh => Box::new(f64::tanh),
        UnKind::Sigmoid => Box::new(|v| 1.0 / (1.0 + (-v).exp())),
        // Numerically stable log(1+e^x).
        UnKind::Softplus => Box::new(|v| if v > 30.0 { v } else { v.exp().ln_1p() }),
        UnKind::Relu => Box::new(|v| v.max(0.0)),
        UnKind::LeakyRelu(a) => Box::new(move |v| if v > 0.0 { v } else { a * v }),
        UnKind::Square => Box::new(|v| v * v),
    };
    x.mapv(|v| f(v))
}

impl Op for Unary {
    fn name(&self) -> &'static str {
        match self.kind {
            UnKind::Exp => "exp",
            UnKind::Ln => "ln",
            UnKind::Sqrt => "sqrt",
            UnKind::Sin => "sin",
            UnKind::Cos => "cos",
            UnKind::Tanh => "tanh",
            UnKind::Sigmoid => "sigmoid",
            UnKind::Softplus => "softplus",
            UnKind::Relu => "relu",
            UnKind::LeakyRelu(_) => "leaky_relu",
            UnKind::Square => "square",
        }
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        tape: &Tape,
        node: usize,
        parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        if !needs[0] {
            return vec![None];
        }
        let x = tape.var(parents[0]);
        let y = tape.var(node);
        let g = match self.kind {
            UnKind::Exp => adj.mul(&y),
            UnKind::Ln => adj.div(&x),
            UnKind::Sqrt => adj.scale(0.5).div(&y),
            UnKind::Sin => adj.mul(&x.cos()),
            UnKind::Cos => adj.mul(&x.sin()).neg(),
            UnKind::Tanh => adj.mul(&y.square().neg().add_scalar(1.0)),
            UnKind::Sigmoid => adj.mul(&y).mul(&y.neg().add_scalar(1.0)),
            UnKind::Softplus => adj.mul(&x.sigmoid()),
            UnKind::Relu => {
                let mask = tape.constant(x.with_value(|v| v.mapv(|e| (e > 0.0) as u8 as f64)));
                adj.mul(&mask)
            }
            UnKind::LeakyRelu(a) => {
                let mask =
                    tape.constant(x.with_value(|v| v.mapv(|e| if e > 0.0 { 1.0 } else { a })));
                adj.mul(&mask)
            }
            UnKind::Square => adj.mul(&x).scale(2.0),
        };
        vec![Some(g)]
    }
}

// ---------------------------------------------------------------------------
// matmul with transpose flags (2D only)
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct Matmul {
    pub ta: bool,
    pub tb: bool,
}

pub(crate) fn matmul_forward(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let a2 = a
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("matmul: lhs not 2D");
    let b2 = b
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("matmul: rhs not 2D");
    let out = match (ta, tb) {
        (false, false) => a2.dot(&b2),
        (true, false) => a2.t().dot(&b2),
        (false, true) => a2.dot(&b2.t()),
        (true, true) => a2.t().dot(&b2.t()),
    };
    out.into_dyn()
}

impl Op for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        tape: &Tape,
        _node: usize,
        parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        let a = tape.var(parents[0]);
        let b = tape.var(parents[1]);
        let (ta, tb) = (self.ta, self.tb);
        let da = needs[0].then(|| match (ta, tb) {
            (false, false) => adj.matmul_flags(&b, false, true),
            (true, false) => b.matmul_flags(adj, false, true),
            (false, true) => adj.matmul_flags(&b, false, false),
            (true, true) => b.matmul_flags(adj, true, true),
        });
        let db = needs[1].then(|| match (ta, tb) {
            (false, false) => a.matmul_flags(adj, true, false),
            (true, false) => a.matmul_flags(adj, false, false),
            (false, true) => adj.matmul_flags(&a, true, false),
            (true, true) => adj.matmul_flags(&a, true, true),
        });
        vec![da, db]
    }
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct Reshape {
    pub from: Vec<usize>,
}

impl Op for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.reshape(&self.from))]
    }
}

#[derive(Clone)]
pub(crate) struct SumTo {
    pub from: Vec<usize>,
}

impl Op for SumTo {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.broadcast_to(&self.from))]
    }
}

#[derive(Clone)]
pub(crate) struct BroadcastTo {
    pub from: Vec<usize>,
}

impl Op for BroadcastTo {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.sum_to(&self.from))]
    }
}

#[derive(Clone)]
pub(crate) struct SumAll;

impl Op for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        tape: &Tape,
        _node: usize,
        parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        let from = tape.var(parents[0]).shape();
        vec![needs[0].then(|| adj.broadcast_to(&from))]
    }
}

#[derive(Clone)]
pub(crate) struct Concat {
    pub axis: usize,
    pub sizes: Vec<usize>,
}

impl Op for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        let mut out = Vec::with_capacity(needs.len());
        let mut start = 0;
        for (i, &sz) in self.sizes.iter().enumerate() {
            out.push(needs[i].then(|| adj.narrow(self.axis, start, sz)));
            start += sz;
        }
        out
    }
}

#[derive(Clone)]
pub(crate) struct Narrow {
    pub axis: usize,
    pub start: usize,
    pub len: usize,
    pub from_len: usize,
}

impl Op for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| {
            adj.zero_pad(
                self.axis,
                self.start,
                self.from_len - self.start - self.len,
            )
        })]
    }
}

#[derive(Clone)]
pub(crate) struct ZeroPad {
    pub axis: usize,
    pub before: usize,
    pub after: usize,
}

impl Op for ZeroPad {
    fn name(&self) -> &'static str {
        "zero_pad"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        tape: &Tape,
        node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        let padded_len = tape.var(node).shape()[self.axis];
        vec![needs[0].then(|| {
            adj.narrow(
                self.axis,
                self.before,
                padded_len - self.before - self.after,
            )
        })]
    }
}

// ---------------------------------------------------------------------------
// gather / scatter on axis 0
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct TakeRows {
    pub indices: Vec<usize>,
    pub n_rows: usize,
}

impl Op for TakeRows {
    fn name(&self) -> &'static str {
        "take_rows"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.scatter_rows(self.n_rows, &self.indices))]
    }
}

#[derive(Clone)]
pub(crate) struct ScatterRows {
    pub indices: Vec<usize>,
    pub from_rows: usize,
}

impl Op for ScatterRows {
    fn name(&self) -> &'static str {
        "scatter_rows"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.take_rows(&self.indices))]
    }
}

// ---------------------------------------------------------------------------
// elementwise min / max (equal shapes)
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct MinMax {
    pub is_min: bool,
}

impl Op for MinMax {
    fn name(&self) -> &'static str {
        if self.is_min {
            "minimum"
        } else {
            "maximum"
        }
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        tape: &Tape,
        _node: usize,
        parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        let a = tape.var(parents[0]);
        let b = tape.var(parents[1]);
        // Ties route the gradient to the first argument.
        let mask_val = a.with_value(|av| {
            b.with_value(|bv| {
                let mut m = ArrayD::zeros(IxDyn(av.shape()));
                Zip::from(&mut m).and(av).and(bv).for_each(|o, &x, &y| {
                    let take_a = if self.is_min { x <= y } else { x >= y };
                    *o = take_a as u8 as f64;
                });
                m
            })
        });
        let mask = tape.constant(mask_val);
        let da = needs[0].then(|| adj.mul(&mask));
        let db = needs[1].then(|| adj.mul(&mask.neg().add_scalar(1.0)));
        vec![da, db]
    }
}

// ---------------------------------------------------------------------------
// im2col / col2im ([c,h,w] <-> [c*k*k, oh*ow])
// ---------------------------------------------------------------------------

/// Output spatial size of a convolution.
pub fn conv2d_shape(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1)
}

#[derive(Clone)]
pub(crate) struct Im2col {
    pub in_shape: [usize; 3],
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub(crate) fn im2col_forward(
    x: &Tensor,
    [c, h, w]: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (oh, ow) = conv2d_shape(h, w, k, stride, pad);
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().unwrap();
    let mut out = ArrayD::zeros(IxDyn(&[c * k * k, oh * ow]));
    let os = out.as_slice_mut().unwrap();
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        os[base + oy * ow + ox] =
                            xs[ci * h * w + iy as usize * w + ix as usize];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn col2im_forward(
    cols: &Tensor,
    [c, h, w]: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (oh, ow) = conv2d_shape(h, w, k, stride, pad);
    let cols_std = cols.as_standard_layout();
    let cs = cols_std.as_slice().unwrap();
    let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
    let os = out.as_slice_mut().unwrap();
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        os[ci * h * w + iy as usize * w + ix as usize] +=
                            cs[base + oy * ow + ox];
                    }
                }
            }
        }
    }
    out
}

impl Op for Im2col {
    fn name(&self) -> &'static str {
        "im2col"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.col2im(self.in_shape, self.k, self.stride, self.pad))]
    }
}

#[derive(Clone)]
pub(crate) struct Col2im {
    pub in_shape: [usize; 3],
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Op for Col2im {
    fn name(&self) -> &'static str {
        "col2im"
    }
    fn boxed_clone(&self) -> Box<dyn Op> {
        Box::new(self.clone())
    }
    fn vjp(
        &self,
        _tape: &Tape,
        _node: usize,
        _parents: &[usize],
        adj: &Var,
        needs: &[bool],
    ) -> Vec<Option<Var>> {
        vec![needs[0].then(|| adj.im2col(self.in_shape, self.k, self.stride, self.pad))]
    }
}

// ---------------------------------------------------------------------------
// Var API
// ---------------------------------------------------------------------------

impl Var {
    fn binary(&self, other: &Var, kind: BinKind) -> Var {
        let value = self.with_value(|a| {
            other.with_value(|b| match kind {
                BinKind::Add => binary_forward(a, b, |x, y| x + y),
                BinKind::Sub => binary_forward(a, b, |x, y| x - y),
                BinKind::Mul => binary_forward(a, b, |x, y| x * y),
                BinKind::Div => binary_forward(a, b, |x, y| x / y),
            })
        });
        self.tape()
            .apply(Box::new(Binary { kind }), &[self, other], value)
    }

    pub fn add(&self, other: &Var) -> Var {
        self.binary(other, BinKind::Add)
    }
    pub fn sub(&self, other: &Var) -> Var {
        self.binary(other, BinKind::Sub)
    }
    pub fn mul(&self, other: &Var) -> Var {
        self.binary(other, BinKind::Mul)
    }
    pub fn div(&self, other: &Var) -> Var {
        self.binary(other, BinKind::Div)
    }

    pub fn affine(&self, a: f64, b: f64) -> Var {
        let value = self.with_value(|v| v.mapv(|x| a * x + b));
        self.tape().apply(Box::new(Affine { a, b }), &[self], value)
    }
    pub fn scale(&self, a: f64) -> Var {
        self.affine(a, 0.0)
    }
    pub fn add_scalar(&self, b: f64) -> Var {
        self.affine(1.0, b)
    }
    pub fn neg(&self) -> Var {
        self.affine(-1.0, 0.0)
    }

    fn unary(&self, kind: UnKind) -> Var {
        let value = self.with_value(|v| unary_forward(kind, v));
        self.tape().apply(Box::new(Unary { kind }), &[self], value)
    }

    pub fn exp(&self) -> Var {
        self.unary(UnKind::Exp)
    }
    pub fn ln(&self) -> Var {
        self.unary(UnKind::Ln)
    }
    pub fn sqrt(&self) -> Var {
        self.unary(UnKind::Sqrt)
    }
    pub fn sin(&self) -> Var {
        self.unary(UnKind::Sin)
    }
    pub fn cos(&self) -> Var {
        self.unary(UnKind::Cos)
    }
    pub fn tanh(&self) -> Var {
        self.unary(UnKind::Tanh)
    }
    pub fn sigmoid(&self) -> Var {
        self.unary(UnKind::Sigmoid)
    }
    pub fn softplus(&self) -> Var {
        self.unary(UnKind::Softplus)
    }
    pub fn relu(&self) -> Var {
        self.unary(UnKind::Relu)
    }
    pub fn leaky_relu(&self, slope: f64) -> Var {
        self.unary(UnKind::LeakyRelu(slope))
    }
    pub fn square(&self) -> Var {
        self.unary(UnKind::Square)
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.matmul_flags(other, false, false)
    }

    /// Matrix product with optional transposes applied to either operand.
    pub fn matmul_flags(&self, other: &Var, ta: bool, tb: bool) -> Var {
        let value = self.with_value(|a| other.with_value(|b| matmul_forward(a, b, ta, tb)));
        self.tape()
            .apply(Box::new(Matmul { ta, tb }), &[self, other], value)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let from = self.shape();
        let value = self.with_value(|v| {
            v.clone()
                .into_shape_with_order(IxDyn(shape))
                .expect("reshape: size mismatch")
        });
        self.tape().apply(Box::new(Reshape { from }), &[self], value)
    }

    pub fn sum(&self) -> Var {
        let value = self.with_value(|v| super::scalar(v.sum()));
        self.tape().apply(Box::new(SumAll), &[self], value)
    }

    pub fn mean(&self) -> Var {
        let n = self.shape().iter().product::<usize>().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var {
        let from = self.shape();
        if from == shape {
            return self.clone();
        }
        let value = self.with_value(|v| reduce_to(v, shape));
        self.tape().apply(Box::new(SumTo { from }), &[self], value)
    }

    /// Sum over one axis, keeping it as size 1.
    pub fn sum_axis_keep(&self, axis: usize) -> Var {
        let mut target = self.shape();
        target[axis] = 1;
        self.sum_to(&target)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        let from = self.shape();
        if from == shape {
            return self.clone();
        }
        let value = self.with_value(|v| bcast(v, shape));
        self.tape()
            .apply(Box::new(BroadcastTo { from }), &[self], value)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let from_len = self.shape()[axis];
        assert!(start + len <= from_len, "narrow out of bounds");
        let value = self.with_value(|v| {
            v.slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
                .to_owned()
        });
        self.tape().apply(
            Box::new(Narrow {
                axis,
                start,
                len,
                from_len,
            }),
            &[self],
            value,
        )
    }

    pub fn zero_pad(&self, axis: usize, before: usize, after: usize) -> Var {
        let mut shape = self.shape();
        shape[axis] += before + after;
        let value = self.with_value(|v| {
            let mut out = ArrayD::zeros(IxDyn(&shape));
            out.slice_axis_mut(
                Axis(axis),
                ndarray::Slice::from(before..before + v.shape()[axis]),
            )
            .assign(v);
            out
        });
        self.tape().apply(
            Box::new(ZeroPad {
                axis,
                before,
                after,
            }),
            &[self],
            value,
        )
    }

    /// Gather rows (axis 0) by index; indices may repeat.
    pub fn take_rows(&self, indices: &[usize]) -> Var {
        let n_rows = self.shape()[0];
        let value = self.with_value(|v| {
            let views: Vec<_> = indices
                .iter()
                .map(|&i| v.index_axis(Axis(0), i).insert_axis(Axis(0)))
                .collect();
            ndarray::concatenate(
                Axis(0),
                &views.iter().map(|x| x.view()).collect::<Vec<_>>(),
            )
            .unwrap()
        });
        self.tape().apply(
            Box::new(TakeRows {
                indices: indices.to_vec(),
                n_rows,
            }),
            &[self],
            value,
        )
    }

    /// Adjoint of [`Var::take_rows`]: rows scatter-added into `n_rows` slots.
    pub fn scatter_rows(&self, n_rows: usize, indices: &[usize]) -> Var {
        let from_rows = self.shape()[0];
        assert_eq!(from_rows, indices.len());
        let value = self.with_value(|v| {
            let mut shape = v.shape().to_vec();
            shape[0] = n_rows;
            let mut out = ArrayD::zeros(IxDyn(&shape));
            for (i, &dst) in indices.iter().enumerate() {
                let mut o = out.index_axis_mut(Axis(0), dst);
                o += &v.index_axis(Axis(0), i);
            }
            out
        });
        self.tape().apply(
            Box::new(ScatterRows {
                indices: indices.to_vec(),
                from_rows,
            }),
            &[self],
            value,
        )
    }

    pub fn minimum(&self, other: &Var) -> Var {
        assert_eq!(self.shape(), other.shape(), "minimum: shape mismatch");
        let value =
            self.with_value(|a| other.with_value(|b| binary_forward(a, b, |x, y| x.min(y))));
        self.tape()
            .apply(Box::new(MinMax { is_min: true }), &[self, other], value)
    }

    pub fn maximum(&self, other: &Var) -> Var {
        assert_eq!(self.shape(), other.shape(), "maximum: shape mismatch");
        let value =
            self.with_value(|a| other.with_value(|b| binary_forward(a, b, |x, y| x.max(y))));
        self.tape()
            .apply(Box::new(MinMax { is_min: false }), &[self, other], value)
    }

    pub fn im2col(&self, in_shape: [usize; 3], k: usize, stride: usize, pad: usize) -> Var {
        let value = self.with_value(|v| im2col_forward(v, in_shape, k, stride, pad));
        self.tape().apply(
            Box::new(Im2col {
                in_shape,
                k,
                stride,
                pad,
            }),
            &[self],
            value,
        )
    }

    pub fn col2im(&self, in_shape: [usize; 3], k: usize, stride: usize, pad: usize) -> Var {
        let value = self.with_value(|v| col2im_forward(v, in_shape, k, stride, pad));
        self.tape().apply(
            Box::new(Col2im {
                in_shape,
                k,
                stride,
                pad,
            }),
            &[self],
            value,
        )
    }
}

/// Concatenate along an axis.
pub fn concat(vars: &[&Var], axis: usize) -> Var {
    assert!(!vars.is_empty());
    let tape = vars[0].tape().clone();
    let sizes: Vec<usize> = vars.iter().map(|v| v.shape()[axis]).collect();
    let values: Vec<Tensor> = vars.iter().map(|v| v.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let value = ndarray::concatenate(Axis(axis), &views).expect("concat: shape mismatch");
    tape.apply(Box::new(Concat { axis, sizes }), vars, value)
}
