//! Implicit shape and texture fields, positional encoding, and the
//! hypernetwork that emits per-instance field parameters from latent codes.
//!
//! The shape field is a softplus MLP mapping encoded 3D points to a scalar
//! SDF; its last hidden activation doubles as the shape feature that
//! conditions the texture field. Field parameters are either raw tensors
//! (`FieldParams`, for pretraining and fast inference) or tape expressions
//! (`FieldParamsVar`, emitted by the hypernetwork during training).

use crate::autodiff::{concat, Tape, Tensor, Var};
use crate::nn::{uniform_init, Adam, Linear, ParamSet};
use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Structural hyperparameters of the implicit fields and their hypernetwork.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldArchitecture {
    pub latent_dim: usize,
    pub pe_frequencies: usize,
    pub shape_hidden: Vec<usize>,
    pub texture_hidden: usize,
    pub hypernet_hidden: usize,
    pub hypernet_layers: usize,
}

impl Default for FieldArchitecture {
    fn default() -> Self {
        FieldArchitecture {
            latent_dim: 256,
            pe_frequencies: 6,
            shape_hidden: vec![64, 64, 64, 64, 32],
            texture_hidden: 128,
            hypernet_hidden: 512,
            hypernet_layers: 6,
        }
    }
}

impl FieldArchitecture {
    /// Encoded point width: raw coordinates plus sin/cos per frequency.
    pub fn pe_dim(&self) -> usize {
        3 + 6 * self.pe_frequencies
    }

    /// Width of the feature tap that conditions the texture field (the shape
    /// MLP's last hidden layer).
    pub fn shape_feature_dim(&self) -> usize {
        *self.shape_hidden.last().expect("shape_hidden empty")
    }

    /// (in, out) of every shape MLP layer, ending in the scalar SDF head.
    pub fn shape_layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.pe_dim();
        for &h in &self.shape_hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, 1));
        dims
    }

    /// (in, out) of every texture MLP layer (conditioned on shape features).
    pub fn texture_layer_dims(&self) -> Vec<(usize, usize)> {
        vec![
            (self.pe_dim() + self.shape_feature_dim(), self.texture_hidden),
            (self.texture_hidden, 3),
        ]
    }

    pub fn shape_param_count(&self) -> usize {
        self.shape_layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    pub fn texture_param_count(&self) -> usize {
        self.texture_layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

// ---------------------------------------------------------------------------
// positional encoding
// ---------------------------------------------------------------------------

/// `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]`
/// per coordinate; output width `3 + 6L`.
pub fn positional_encode(points: &Array2<f64>, frequencies: usize) -> Array2<f64> {
    let n = points.nrows();
    let mut out = Array2::zeros((n, 3 + 6 * frequencies));
    out.slice_mut(ndarray::s![.., 0..3]).assign(points);
    for f in 0..frequencies {
        let scale = 2f64.powi(f as i32) * std::f64::consts::PI;
        for c in 0..3 {
            for r in 0..n {
                let v = scale * points[[r, c]];
                out[[r, 3 + 6 * f + c]] = v.sin();
                out[[r, 3 + 6 * f + 3 + c]] = v.cos();
            }
        }
    }
    out
}

/// Tape version of [`positional_encode`]; identical layout.
pub fn positional_encode_var(points: &Var, frequencies: usize) -> Var {
    let mut parts = vec![points.clone()];
    for f in 0..frequencies {
        let scale = 2f64.powi(f as i32) * std::f64::consts::PI;
        let scaled = points.scale(scale);
        parts.push(scaled.sin());
        parts.push(scaled.cos());
    }
    let refs: Vec<&Var> = parts.iter().collect();
    concat(&refs, 1)
}

// ---------------------------------------------------------------------------
// field parameters
// ---------------------------------------------------------------------------

/// Raw per-instance field parameters (weights stored `[in, out]`).
#[derive(Clone, Debug)]
pub struct FieldParams {
    pub shape: Vec<(Array2<f64>, Array1<f64>)>,
    pub texture: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Tape-resident field parameters, e.g. hypernetwork outputs.
#[derive(Clone)]
pub struct FieldParamsVar {
    pub shape: Vec<(Var, Var)>,
    pub texture: Vec<(Var, Var)>,
}

impl FieldParams {
    /// Enter raw parameters onto a tape, optionally as gradient leaves.
    pub fn to_vars(&self, tape: &Tape, trainable: bool) -> FieldParamsVar {
        let lift = |w: &Array2<f64>, b: &Array1<f64>| {
            let wv = w.clone().into_dyn();
            let bv = b.clone().into_dyn();
            if trainable {
                (tape.param(wv), tape.param(bv))
            } else {
                (tape.constant(wv), tape.constant(bv))
            }
        };
        FieldParamsVar {
            shape: self.shape.iter().map(|(w, b)| lift(w, b)).collect(),
            texture: self.texture.iter().map(|(w, b)| lift(w, b)).collect(),
        }
    }

    pub fn random(arch: &FieldArchitecture, rng: &mut impl Rng) -> Self {
        fn build(dims: &[(usize, usize)], rng: &mut impl Rng) -> Vec<(Array2<f64>, Array1<f64>)> {
            dims.iter()
                .map(|&(i, o)| {
                    let bound = 1.0 / (i as f64).sqrt();
                    let w = uniform_init(rng, &[i, o], bound)
                        .into_dimensionality::<ndarray::Ix2>()
                        .unwrap();
                    let b = uniform_init(rng, &[o], bound)
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap();
                    (w, b)
                })
                .collect::<Vec<_>>()
        }
        FieldParams {
            shape: build(&arch.shape_layer_dims(), rng),
            texture: build(&arch.texture_layer_dims(), rng),
        }
    }

    pub fn shape_param_count(&self) -> usize {
        self.shape.iter().map(|(w, b)| w.len() + b.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// field evaluation
// ---------------------------------------------------------------------------

/// Shape field forward (tape): returns `(sdf [n,1], features [n,feat])`.
pub fn eval_shape_field_var(params: &FieldParamsVar, points: &Var, arch: &FieldArchitecture) -> (Var, Var) {
    let mut h = positional_encode_var(points, arch.pe_frequencies);
    let n_layers = params.shape.len();
    let mut feat = None;
    for (i, (w, b)) in params.shape.iter().enumerate() {
        h = h.matmul(w).add(b);
        if i + 1 < n_layers {
            h = h.softplus();
            if i + 2 == n_layers {
                feat = Some(h.clone());
            }
        }
    }
    (h, feat.expect("shape MLP needs at least one hidden layer"))
}

/// Texture field forward (tape): bounded RGB in [0,1], `[n,3]`.
pub fn eval_texture_field_var(
    params: &FieldParamsVar,
    points: &Var,
    shape_features: &Var,
    arch: &FieldArchitecture,
) -> Var {
    let pe = positional_encode_var(points, arch.pe_frequencies);
    let mut h = concat(&[&pe, shape_features], 1);
    let n_layers = params.texture.len();
    for (i, (w, b)) in params.texture.iter().enumerate() {
        h = h.matmul(w).add(b);
        if i + 1 < n_layers {
            h = h.relu();
        }
    }
    h.sigmoid()
}

/// Raw (no-tape) shape field forward for grid sampling and inference.
pub fn eval_shape_field(
    params: &FieldParams,
    points: &Array2<f64>,
    arch: &FieldArchitecture,
) -> (Array1<f64>, Array2<f64>) {
    let mut h = positional_encode(points, arch.pe_frequencies);
    let n_layers = params.shape.len();
    let mut feat = Array2::zeros((points.nrows(), arch.shape_feature_dim()));
    for (i, (w, b)) in params.shape.iter().enumerate() {
        let mut y = h.dot(w);
        y += &b.view().insert_axis(Axis(0));
        if i + 1 < n_layers {
            y.mapv_inplace(|v| if v > 30.0 { v } else { v.exp().ln_1p() });
            if i + 2 == n_layers {
                feat.assign(&y);
            }
        }
        h = y;
    }
    (h.index_axis(Axis(1), 0).to_owned(), feat)
}

/// Raw texture field forward.
pub fn eval_texture_field(
    params: &FieldParams,
    points: &Array2<f64>,
    shape_features: &Array2<f64>,
    arch: &FieldArchitecture,
) -> Array2<f64> {
    let pe = positional_encode(points, arch.pe_frequencies);
    let mut h = ndarray::concatenate(Axis(1), &[pe.view(), shape_features.view()]).unwrap();
    let n_layers = params.texture.len();
    for (i, (w, b)) in params.texture.iter().enumerate() {
        let mut y = h.dot(w);
        y += &b.view().insert_axis(Axis(0));
        if i + 1 < n_layers {
            y.mapv_inplace(|v| v.max(0.0));
        }
        h = y;
    }
    h.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp()));
    h
}

// ---------------------------------------------------------------------------
// hypernetwork
// ---------------------------------------------------------------------------

/// One MLP head per emitted field layer: latent code -> that layer's
/// flattened weights and bias.
pub struct HyperNetwork {
    pub arch: FieldArchitecture,
    shape_heads: Vec<HyperHead>,
    texture_heads: Vec<HyperHead>,
}

struct HyperHead {
    layers: Vec<Linear>,
    target: (usize, usize),
}

impl HyperHead {
    fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        latent: usize,
        hidden: usize,
        depth: usize,
        target: (usize, usize),
    ) -> Self {
        let (t_in, t_out) = target;
        let out_dim = (t_in + 1) * t_out;
        let mut layers = Vec::new();
        let mut prev = latent;
        for i in 0..depth - 1 {
            layers.push(Linear::new(ps, rng, &format!("{name}.l{i}"), prev, hidden));
            prev = hidden;
        }
        let last = Linear::new(ps, rng, &format!("{name}.l{}", depth - 1), prev, out_dim);
        // Zero final layer: emitted parameters start exactly at the bias
        // pathway, so every instance begins from the installed sphere
        // initialization. The first optimizer step breaks the symmetry.
        *ps.value_mut(last.w) = ArrayD::zeros(IxDyn(&[prev, out_dim]));
        *ps.value_mut(last.b) = ArrayD::zeros(IxDyn(&[out_dim]));
        layers.push(last);
        HyperHead { layers, target }
    }

    fn forward(&self, leaves: &[Var], code: &Var) -> (Var, Var) {
        let mut h = code.clone();
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(leaves, &h);
            if i + 1 < n {
                h = h.relu();
            }
        }
        let (t_in, t_out) = self.target;
        let w = h.narrow(1, 0, t_in * t_out).reshape(&[t_in, t_out]);
        let b = h.narrow(1, t_in * t_out, t_out).reshape(&[t_out]);
        (w, b)
    }

    /// Point the bias pathway at existing layer tensors.
    fn install_bias(&self, ps: &mut ParamSet, w: &Array2<f64>, b: &Array1<f64>) {
        let last = self.layers.last().unwrap();
        let (t_in, t_out) = self.target;
        assert_eq!(w.dim(), (t_in, t_out));
        let mut flat = Vec::with_capacity((t_in + 1) * t_out);
        flat.extend(w.iter().copied());
        flat.extend(b.iter().copied());
        *ps.value_mut(last.b) = ArrayD::from_shape_vec(IxDyn(&[(t_in + 1) * t_out]), flat).unwrap();
    }
}

impl HyperNetwork {
    pub fn new(ps: &mut ParamSet, rng: &mut impl Rng, arch: &FieldArchitecture) -> Self {
        let shape_heads = arch
            .shape_layer_dims()
            .into_iter()
            .enumerate()
            .map(|(i, target)| {
                HyperHead::new(
                    ps,
                    rng,
                    &format!("hypernet.shape{i}"),
                    arch.latent_dim,
                    arch.hypernet_hidden,
                    arch.hypernet_layers,
                    target,
                )
            })
            .collect();
        let texture_heads = arch
            .texture_layer_dims()
            .into_iter()
            .enumerate()
            .map(|(i, target)| {
                HyperHead::new(
                    ps,
                    rng,
                    &format!("hypernet.texture{i}"),
                    arch.latent_dim,
                    arch.hypernet_hidden,
                    arch.hypernet_layers,
                    target,
                )
            })
            .collect();
        HyperNetwork {
            arch: arch.clone(),
            shape_heads,
            texture_heads,
        }
    }

    /// Emit per-instance field parameters from latent codes (`[1, l]` each).
    /// Shape heads consume the shape code, texture heads the texture code.
    pub fn forward(&self, leaves: &[Var], shape_code: &Var, texture_code: &Var) -> FieldParamsVar {
        FieldParamsVar {
            shape: self
                .shape_heads
                .iter()
                .map(|h| h.forward(leaves, shape_code))
                .collect(),
            texture: self
                .texture_heads
                .iter()
                .map(|h| h.forward(leaves, texture_code))
                .collect(),
        }
    }

    /// Bias the hypernetwork so zero latent codes emit exactly
    /// `sphere_params` for the shape field (Appendix-style sphere start).
    pub fn install_sphere_init(&self, ps: &mut ParamSet, sphere_params: &FieldParams) {
        for (head, (w, b)) in self.shape_heads.iter().zip(&sphere_params.shape) {
            head.install_bias(ps, w, b);
        }
        for (head, (w, b)) in self.texture_heads.iter().zip(&sphere_params.texture) {
            head.install_bias(ps, w, b);
        }
    }
}

// ---------------------------------------------------------------------------
// sphere pretraining
// ---------------------------------------------------------------------------

/// Fit raw field parameters to the analytic sphere SDF `|x| - radius` by
/// regression over uniform samples in [-1,1]^3. Returns the fitted params and
/// the final mean absolute error.
pub fn pretrain_sphere(
    params: &mut FieldParams,
    arch: &FieldArchitecture,
    radius: f64,
    iters: usize,
    seed: u64,
) -> f64 {
    if iters == 0 {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Flatten the shape layers into a ParamSet for Adam.
    let mut ps = ParamSet::new();
    let ids: Vec<(usize, usize)> = params
        .shape
        .iter()
        .enumerate()
        .map(|(i, (w, b))| {
            let wi = ps.add(&format!("w{i}"), w.clone().into_dyn());
            let bi = ps.add(&format!("b{i}"), b.clone().into_dyn());
            (wi, bi)
        })
        .collect();
    let mut opt = Adam::new(&ps, 3e-3, 0.9, 0.999);
    let batch = 512;
    let n_uniform = batch / 2;
    let n_origin = batch / 4;
    let n_surface = batch - n_uniform - n_origin;
    let mut err = f64::NAN;
    for it in 0..iters {
        // Cosine decay keeps late iterations from bouncing around the optimum.
        let progress = it as f64 / iters as f64;
        opt.lr = 2e-4 + (3e-3 - 2e-4) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        // Half uniform cube samples, with extra mass near the origin and the
        // surface where the radial SDF is hardest to fit.
        let mut pts_vec: Vec<f64> = Vec::with_capacity(batch * 3);
        for _ in 0..n_uniform * 3 {
            pts_vec.push(rng.gen_range(-1.0..1.0));
        }
        for _ in 0..n_origin * 3 {
            pts_vec.push((0.22 * rng.sample::<f64, _>(rand_distr::StandardNormal)).clamp(-1.0, 1.0));
        }
        for _ in 0..n_surface {
            let dir: [f64; 3] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
            let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-9);
            let r = radius * (1.0 + 0.15 * rng.sample::<f64, _>(rand_distr::StandardNormal));
            for d in dir {
                pts_vec.push((r * d / n).clamp(-1.0, 1.0));
            }
        }
        let pts = Array2::from_shape_vec((batch, 3), pts_vec).unwrap();
        let target: Array1<f64> = pts
            .rows()
            .into_iter()
            .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() - radius)
            .collect();

        let tape = Tape::new();
        let leaves = ps.leaves(&tape);
        let fp = FieldParamsVar {
            shape: ids.iter().map(|&(w, b)| (leaves[w].clone(), leaves[b].clone())).collect(),
            texture: vec![],
        };
        let pv = tape.constant(pts.into_dyn());
        let (sdf, _) = eval_shape_field_var(&fp, &pv, arch);
        let tv = tape.constant(target.insert_axis(Axis(1)).into_dyn());
        let diff = sdf.sub(&tv);
        let loss = diff.square().mean();
        if it + 1 == iters {
            err = diff.value().iter().map(|v| v.abs()).sum::<f64>() / batch as f64;
        }
        let leaf_refs: Vec<&Var> = leaves.iter().collect();
        let grads = crate::autodiff::grad(&loss, &leaf_refs);
        let gvals: Vec<Option<Tensor>> = grads.iter().map(|g| Some(g.value())).collect();
        opt.step(&mut ps, &gvals);
    }
    for (i, &(wi, bi)) in ids.iter().enumerate() {
        params.shape[i].0 = ps
            .value(wi)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        params.shape[i].1 = ps
            .value(bi)
            .clone()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
    }
    err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pe_layout_and_values() {
        let pts = Array2::from_shape_vec((2, 3), vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0]).unwrap();
        let pe = positional_encode(&pts, 6);
        assert_eq!(pe.ncols(), 39); // 3 + 6*6
        // Zero point: raw part 0, all sin terms 0, all cos terms 1.
        for f in 0..6 {
            for c in 0..3 {
                assert_eq!(pe[[0, 3 + 6 * f + c]], 0.0);
                assert_eq!(pe[[0, 3 + 6 * f + 3 + c]], 1.0);
            }
        }
        // x = 0.5 at the first frequency: sin(pi/2) = 1, cos(pi/2) = 0.
        assert!((pe[[1, 3]] - 1.0).abs() < 1e-12);
        assert!(pe[[1, 6]].abs() < 1e-12);
    }

    #[test]
    fn pe_var_matches_raw() {
        let pts = Array2::from_shape_vec((3, 3), vec![0.1, -0.4, 0.9, 0.0, 0.2, -0.7, 1.0, 0.5, 0.3])
            .unwrap();
        let raw = positional_encode(&pts, 4);
        let tape = Tape::new();
        let pv = tape.constant(pts.into_dyn());
        let var = positional_encode_var(&pv, 4).value();
        for (a, b) in raw.iter().zip(var.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_param_count_matches_architecture() {
        let arch = FieldArchitecture::default();
        // 39*64+64 + 3*(64*64+64) + 64*32+32 + 32*1+1
        let expect = 39 * 64 + 64 + 3 * (64 * 64 + 64) + 64 * 32 + 32 + 32 + 1;
        assert_eq!(arch.shape_param_count(), expect);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = FieldParams::random(&arch, &mut rng);
        assert_eq!(params.shape_param_count(), expect);
    }

    #[test]
    fn field_eval_raw_matches_tape_and_permutes() {
        let arch = FieldArchitecture { latent_dim: 8, hypernet_hidden: 16, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = FieldParams::random(&arch, &mut rng);
        let pts = Array2::from_shape_vec(
            (4, 3),
            vec![0.1, 0.2, 0.3, -0.5, 0.0, 0.4, 0.9, -0.9, 0.2, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let (sdf_raw, feat_raw) = eval_shape_field(&params, &pts, &arch);
        let tape = Tape::new();
        let fp = params.to_vars(&tape, false);
        let pv = tape.constant(pts.clone().into_dyn());
        let (sdf_var, feat_var) = eval_shape_field_var(&fp, &pv, &arch);
        let sv = sdf_var.value();
        for i in 0..4 {
            assert!((sdf_raw[i] - sv[[i, 1 - 1]]).abs() < 1e-12);
        }
        let fv = feat_var.value();
        for (a, b) in feat_raw.iter().zip(fv.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Permuting input rows permutes outputs identically.
        let perm = [2usize, 0, 3, 1];
        let pts_perm = ndarray::stack(
            Axis(0),
            &perm.iter().map(|&i| pts.row(i)).collect::<Vec<_>>(),
        )
        .unwrap();
        let (sdf_perm, _) = eval_shape_field(&params, &pts_perm, &arch);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(sdf_perm[k], sdf_raw[i]);
        }
        // Texture outputs bounded and deterministic.
        let rgb = eval_texture_field(&params, &pts, &feat_raw, &arch);
        assert!(rgb.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let rgb2 = eval_texture_field(&params, &pts, &feat_raw, &arch);
        assert_eq!(rgb, rgb2);
    }

    #[test]
    fn texture_conditions_on_shape_parameters() {
        let arch = FieldArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = FieldParams::random(&arch, &mut rng);
        let pts = Array2::from_shape_vec((2, 3), vec![0.3, 0.1, -0.2, -0.4, 0.5, 0.0]).unwrap();
        let (_, feat) = eval_shape_field(&params, &pts, &arch);
        let rgb_before = eval_texture_field(&params, &pts, &feat, &arch);
        // Perturb theta_S only; colors must change through the feature tap.
        params.shape[0].0[[0, 0]] += 0.5;
        let (_, feat2) = eval_shape_field(&params, &pts, &arch);
        let rgb_after = eval_texture_field(&params, &pts, &feat2, &arch);
        let diff: f64 = rgb_before
            .iter()
            .zip(rgb_after.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-8, "texture ignored shape parameters");
    }

    #[test]
    fn hypernet_zero_code_hits_bias_pathway() {
        let arch = FieldArchitecture {
            latent_dim: 8,
            hypernet_hidden: 32,
            hypernet_layers: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let hn = HyperNetwork::new(&mut ps, &mut rng, &arch);
        let sphere = FieldParams::random(&arch, &mut rng);
        hn.install_sphere_init(&mut ps, &sphere);

        let tape = Tape::new();
        let leaves = ps.leaves(&tape);
        let zero = tape.constant(ArrayD::zeros(IxDyn(&[1, 8])));
        let fp = hn.forward(&leaves, &zero, &zero);
        // With zero codes and relu hiddens, output = final bias = installed params.
        for ((w, b), (sw, sb)) in fp.shape.iter().zip(&sphere.shape) {
            let wv = w.value();
            for (a, e) in wv.iter().zip(sw.iter()) {
                assert!((a - e).abs() < 1e-12);
            }
            let bv = b.value();
            for (a, e) in bv.iter().zip(sb.iter()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
        // Different shape codes change theta_S but leave theta_T untouched.
        // Kick the final head layers off their zero init first, as a trained
        // hypernetwork would be.
        for i in 0..ps.len() {
            if ps.name(i).starts_with("hypernet") && ps.name(i).ends_with(&format!("l{}.w", arch.hypernet_layers - 1)) {
                let shape = ps.value(i).shape().to_vec();
                *ps.value_mut(i) = uniform_init(&mut rng, &shape, 1e-2);
            }
        }
        let tape = Tape::new();
        let leaves = ps.leaves(&tape);
        let s1 = tape.constant(uniform_init(&mut rng, &[1, 8], 1.0));
        let s2 = tape.constant(uniform_init(&mut rng, &[1, 8], 1.0));
        let t = tape.constant(uniform_init(&mut rng, &[1, 8], 1.0));
        let fp1 = hn.forward(&leaves, &s1, &t);
        let fp2 = hn.forward(&leaves, &s2, &t);
        let w_diff: f64 = fp1.shape[0]
            .0
            .value()
            .iter()
            .zip(fp2.shape[0].0.value().iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(w_diff > 0.0);
        for (l1, l2) in fp1.texture.iter().zip(&fp2.texture) {
            let d: f64 = l1
                .0
                .value()
                .iter()
                .zip(l2.0.value().iter())
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert_eq!(d, 0.0, "texture params must not depend on the shape code");
        }
    }

    #[test]
    fn sphere_pretraining_fits_oracle() {
        let arch = FieldArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = FieldParams::random(&arch, &mut rng);
        let err = pretrain_sphere(&mut params, &arch, 0.5, 2000, 7);
        assert!(err < 1e-2, "sphere fit error {err}");
        // Sign pattern and pointwise accuracy at the canonical probes.
        let pts = Array2::from_shape_vec(
            (3, 3),
            vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let (sdf, _) = eval_shape_field(&params, &pts, &arch);
        assert!((sdf[0] + 0.5).abs() < 1e-2, "center {}", sdf[0]);
        assert!(sdf[1].abs() < 1e-2, "surface {}", sdf[1]);
        assert!(sdf[2] > 0.0, "outside {}", sdf[2]);
    }

    #[test]
    fn zero_iters_leaves_params_unchanged() {
        let arch = FieldArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = FieldParams::random(&arch, &mut rng);
        let before = params.shape[0].0.clone();
        pretrain_sphere(&mut params, &arch, 0.5, 0, 7);
        assert_eq!(params.shape[0].0, before);
    }
}
