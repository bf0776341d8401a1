//! Neural building blocks on top of the autodiff tape.
//!
//! Parameters live in a [`ParamSet`] as plain tensors; each training step
//! re-enters them onto a fresh tape as leaves (`leaves`), builds the loss,
//! takes gradients, and applies an optimizer update back onto the raw
//! tensors. Buffers (non-trainable state such as spectral-norm power
//! iteration vectors) share the registry so checkpoints capture them.

use crate::autodiff::{concat, conv2d_shape, Tape, Tensor, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;

/// Index of a tensor inside a [`ParamSet`].
pub type ParamId = usize;

#[derive(Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.register(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.register(name, value, false)
    }

    fn register(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        self.trainable.push(trainable);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Enter every tensor onto `tape`: trainable ones as grad leaves, buffers
    /// as constants.
    pub fn leaves(&self, tape: &Tape) -> Vec<Var> {
        self.values
            .iter()
            .zip(&self.trainable)
            .map(|(v, &t)| {
                if t {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect()
    }

    /// Enter every tensor as a constant (inference / frozen passes).
    pub fn leaves_frozen(&self, tape: &Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.constant(v.clone())).collect()
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam optimizer over a [`ParamSet`]; skips buffers.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m = params.values.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        let v = params.values.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    /// One update from per-parameter gradients (`None` means zero gradient,
    /// in which case the parameter is left untouched).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if !params.trainable[id] {
                continue;
            }
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let p = &mut params.values[id];
            let (lr, eps) = (self.lr, self.eps);
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    *pi -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                });
        }
    }

    pub fn state_tensors(&self) -> (&[Tensor], &[Tensor], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore_state(&mut self, m: Vec<Tensor>, v: Vec<Tensor>, t: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.t = t;
    }
}

// ---------------------------------------------------------------------------
// initializers
// ---------------------------------------------------------------------------

pub fn uniform_init(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

pub fn zeros(shape: &[usize]) -> Tensor {
    ArrayD::zeros(IxDyn(shape))
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

/// Fully connected layer; weight stored as `[in, out]` so the forward pass is
/// `x @ w + b`.
#[derive(Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = ps.add(&format!("{name}.w"), uniform_init(rng, &[in_dim, out_dim], bound));
        let b = ps.add(&format!("{name}.b"), uniform_init(rng, &[out_dim], bound));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// `x`: `[n, in]` -> `[n, out]`.
    pub fn forward(&self, leaves: &[Var], x: &Var) -> Var {
        x.matmul(&leaves[self.w]).add(&leaves[self.b])
    }
}

/// 2D convolution over a single `[c, h, w]` sample via im2col + matmul.
#[derive(Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = ps.add(
            &format!("{name}.w"),
            uniform_init(rng, &[out_ch, in_ch, k, k], bound),
        );
        let b = ps.add(&format!("{name}.b"), uniform_init(rng, &[out_ch], bound));
        Conv2d {
            w,
            b,
            in_ch,
            out_ch,
            k,
            stride,
            pad,
        }
    }

    /// `x`: `[c, h, w]` -> `[oc, oh, ow]`. Pass an explicit weight var so
    /// spectrally normalized variants can substitute `w / sigma`.
    pub fn forward_with_weight(&self, leaves: &[Var], w: &Var, x: &Var) -> Var {
        let shape = x.shape();
        assert_eq!(shape[0], self.in_ch, "conv2d: channel mismatch");
        let (h, w_in) = (shape[1], shape[2]);
        let (oh, ow) = conv2d_shape(h, w_in, self.k, self.stride, self.pad);
        let cols = x.im2col([self.in_ch, h, w_in], self.k, self.stride, self.pad);
        let w2 = w.reshape(&[self.out_ch, self.in_ch * self.k * self.k]);
        let y = w2.matmul(&cols); // [oc, oh*ow]
        let b = leaves[self.b].reshape(&[self.out_ch, 1]);
        y.add(&b).reshape(&[self.out_ch, oh, ow])
    }

    pub fn forward(&self, leaves: &[Var], x: &Var) -> Var {
        self.forward_with_weight(leaves, &leaves[self.w], x)
    }
}

/// Single LSTM cell (used by the learned ray marcher).
#[derive(Clone)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = ps.add(
            &format!("{name}.w"),
            uniform_init(rng, &[in_dim + hidden, 4 * hidden], bound),
        );
        // Forget-gate bias starts at 1 (standard trick for stable recurrence).
        let mut b0 = uniform_init(rng, &[4 * hidden], bound);
        for i in hidden..2 * hidden {
            b0[i] += 1.0;
        }
        let b = ps.add(&format!("{name}.b"), b0);
        LstmCell {
            w,
            b,
            in_dim,
            hidden,
        }
    }

    /// One step over a batch of rays: `x [n, in]`, state `(h, c)` each `[n, hidden]`.
    pub fn step(&self, leaves: &[Var], x: &Var, h: &Var, c: &Var) -> (Var, Var) {
        let xh = concat(&[x, h], 1);
        let gates = xh.matmul(&leaves[self.w]).add(&leaves[self.b]);
        let hd = self.hidden;
        let i = gates.narrow(1, 0, hd).sigmoid();
        let f = gates.narrow(1, hd, hd).sigmoid();
        let g = gates.narrow(1, 2 * hd, hd).tanh();
        let o = gates.narrow(1, 3 * hd, hd).sigmoid();
        let c_next = f.mul(c).add(&i.mul(&g));
        let h_next = o.mul(&c_next.tanh());
        (h_next, c_next)
    }

    pub fn zero_state(&self, tape: &Tape, n: usize) -> (Var, Var) {
        (
            tape.constant(zeros(&[n, self.hidden])),
            tape.constant(zeros(&[n, self.hidden])),
        )
    }
}

// ---------------------------------------------------------------------------
// spectral normalization
// ---------------------------------------------------------------------------

/// One power-iteration refresh of `u` for weight matrix `w` (flattened 2D view
/// `[rows, cols]`); returns the matching right vector `v` and the estimate of
/// the spectral norm. Mutates `u` in place.
pub fn power_iteration_update(w2: &ndarray::ArrayView2<f64>, u: &mut Tensor) -> (Tensor, f64) {
    let u1 = u
        .view()
        .into_dimensionality::<ndarray::Ix1>()
        .expect("u must be 1D");
    let mut v = w2.t().dot(&u1);
    let vn = v.dot(&v).sqrt().max(1e-12);
    v.mapv_inplace(|x| x / vn);
    let mut un = w2.dot(&v);
    let un_norm = un.dot(&un).sqrt().max(1e-12);
    un.mapv_inplace(|x| x / un_norm);
    let sigma = un.dot(&w2.dot(&v));
    u.assign(&un.into_dyn());
    (v.into_dyn(), sigma)
}

/// Spectrally normalized weight as a tape expression: `w / (u^T w v)` with
/// `u`, `v` entering as constants so gradients treat them as fixed.
pub fn spectral_normalize(tape: &Tape, w: &Var, rows: usize, cols: usize, u: &Tensor, v: &Tensor) -> Var {
    let w2 = w.reshape(&[rows, cols]);
    let uc = tape.constant(u.clone()).reshape(&[1, rows]);
    let vc = tape.constant(v.clone()).reshape(&[cols, 1]);
    let sigma = uc.matmul(&w2).matmul(&vc).reshape(&[]);
    let shape = w.shape();
    w.div(&sigma.broadcast_to(&shape))
}

// ---------------------------------------------------------------------------
// conv trunk shared by image encoders
// ---------------------------------------------------------------------------

/// Stack of stride-2 convolutions with ReLU, ending in global average pooling.
pub struct ConvTrunk {
    pub convs: Vec<Conv2d>,
    pub feat_dim: usize,
}

impl ConvTrunk {
    /// `widths` are output channel counts per stage; input is RGBA.
    pub fn new(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, widths: &[usize]) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 4;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2d::new(
                ps,
                rng,
                &format!("{name}.conv{i}"),
                in_ch,
                w,
                3,
                2,
                1,
            ));
            in_ch = w;
        }
        ConvTrunk {
            convs,
            feat_dim: in_ch,
        }
    }

    /// `[4, h, w]` image -> `[1, feat_dim]` pooled features.
    pub fn forward(&self, leaves: &[Var], x: &Var) -> Var {
        let mut cur = x.clone();
        for conv in &self.convs {
            cur = conv.forward(leaves, &cur).relu();
        }
        let shape = cur.shape();
        let spatial = shape[1] * shape[2];
        cur.reshape(&[shape[0], spatial])
            .sum_axis_keep(1)
            .scale(1.0 / spatial as f64)
            .reshape(&[1, shape[0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_conv_lstm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParamSet::new();
        let lin = Linear::new(&mut ps, &mut rng, "lin", 6, 3);
        let conv = Conv2d::new(&mut ps, &mut rng, "conv", 2, 3, 3, 2, 1);
        let lstm = LstmCell::new(&mut ps, &mut rng, "lstm", 4, 5);
        let x_lin = uniform_init(&mut rng, &[2, 6], 1.0);
        let x_img = uniform_init(&mut rng, &[2, 6, 6], 1.0);
        let x_seq = uniform_init(&mut rng, &[3, 4], 1.0);

        let params: Vec<Tensor> = (0..ps.len()).map(|i| ps.value(i).clone()).collect();
        let err = finite_diff_check(
            |t, vs| {
                let a = lin.forward(vs, &t.constant(x_lin.clone())).tanh().sum();
                let b = conv
                    .forward(vs, &t.constant(x_img.clone()))
                    .sigmoid()
                    .sum();
                let (h, c) = lstm.zero_state(t, 3);
                let (h1, c1) = lstm.step(vs, &t.constant(x_seq.clone()), &h, &c);
                let (h2, _c2) = lstm.step(vs, &t.constant(x_seq.clone()), &h1, &c1);
                a.add(&b).add(&h2.square().sum())
            },
            &params,
            1e-5,
        );
        assert!(err < 1e-6, "layer gradients err {err}");
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut ps = ParamSet::new();
        let id = ps.add("x", ndarray::ArrayD::from_elem(ndarray::IxDyn(&[2]), 3.0));
        let mut opt = Adam::new(&ps, 0.1, 0.0, 0.9);
        for _ in 0..300 {
            let tape = Tape::new();
            let leaves = ps.leaves(&tape);
            let loss = leaves[id].square().sum();
            let g = grad(&loss, &[&leaves[id]])[0].value();
            opt.step(&mut ps, &[Some(g)]);
        }
        // Without momentum Adam hovers near the optimum at ~lr amplitude.
        assert!(ps.value(id).iter().all(|v| v.abs() < 0.15));
    }

    #[test]
    fn spectral_norm_bounds_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = uniform_init(&mut rng, &[8, 5], 2.0);
        let mut u = uniform_init(&mut rng, &[8], 1.0);
        let w2 = w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        // Warm up the power iteration, then normalize.
        let mut v = zeros(&[5]);
        let mut sigma = 0.0;
        for _ in 0..30 {
            let (vi, si) = power_iteration_update(&w2, &mut u);
            v = vi;
            sigma = si;
        }
        let tape = Tape::new();
        let wv = tape.param(w.clone());
        let wn = spectral_normalize(&tape, &wv, 8, 5, &u, &v);
        // True largest singular value of the normalized weight must be ~1.
        let wn_val = wn.value();
        let wn2 = wn_val.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut u2 = uniform_init(&mut rng, &[8], 1.0);
        let mut true_sigma = 0.0;
        for _ in 0..60 {
            let (_v, s) = power_iteration_update(&wn2, &mut u2);
            true_sigma = s;
        }
        assert!((true_sigma - 1.0).abs() < 1e-3, "sigma {true_sigma}");
        assert!(sigma > 0.0);
    }
}
