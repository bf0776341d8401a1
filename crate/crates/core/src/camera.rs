//! Viewpoint representation and camera geometry.
//!
//! A viewpoint is the trigonometric encoding of three Euler angles,
//! `v = [cos g1, cos g2, cos g3, sin g1, sin g2, sin g3]`, with the rotation
//! assembled as `Rz(g3) * Ry(g2) * Rx(g1)` mapping world (canonical) space
//! into camera space: `x_cam = R x_world + (0, 0, distance)`. The camera
//! looks at the origin from `distance` along its optical axis. Axis roles:
//! g1 tilts about x (elevation-like), g2 spins about y (azimuth), g3 rolls
//! about z (in-plane tilt). Positive *prior* elevation places the camera
//! above the horizon (g1 = -elevation).

use crate::autodiff::{concat, Tape, Var};
use crate::nn::{ConvTrunk, Linear, ParamSet};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("degenerate (cos, sin) pair at angle {index}: both within 1e-8 of zero")]
    DegeneratePair { index: usize },
}

/// Viewpoint: raw trigonometric 6-vector plus camera distance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ViewPose {
    /// `[cos g1, cos g2, cos g3, sin g1, sin g2, sin g3]`, not necessarily normalized.
    pub v: [f64; 6],
    pub distance: f64,
}

impl ViewPose {
    pub fn rotation(&self) -> Result<[[f64; 3]; 3], CameraError> {
        view_to_rotation(&self.v)
    }

    pub fn angles(&self) -> Result<[f64; 3], CameraError> {
        let mut out = [0.0; 3];
        for i in 0..3 {
            let (c, s) = (self.v[i], self.v[i + 3]);
            if c.abs() < 1e-8 && s.abs() < 1e-8 {
                return Err(CameraError::DegeneratePair { index: i });
            }
            out[i] = s.atan2(c);
        }
        Ok(out)
    }
}

/// Build a pose from Euler angles in radians.
pub fn angles_to_view(gamma: [f64; 3], distance: f64) -> ViewPose {
    ViewPose {
        v: [
            gamma[0].cos(),
            gamma[1].cos(),
            gamma[2].cos(),
            gamma[0].sin(),
            gamma[1].sin(),
            gamma[2].sin(),
        ],
        distance,
    }
}

/// Build a pose from prior-space angles in degrees (elevation, azimuth, tilt).
pub fn pose_from_prior_deg(elevation: f64, azimuth: f64, tilt: f64, distance: f64) -> ViewPose {
    let d2r = std::f64::consts::PI / 180.0;
    angles_to_view([-elevation * d2r, azimuth * d2r, tilt * d2r], distance)
}

/// Normalize each (cos, sin) pair and assemble the rotation matrix.
pub fn view_to_rotation(v: &[f64; 6]) -> Result<[[f64; 3]; 3], CameraError> {
    let mut c = [0.0; 3];
    let mut s = [0.0; 3];
    for i in 0..3 {
        let n = (v[i] * v[i] + v[i + 3] * v[i + 3]).sqrt();
        if n < 1e-8 {
            return Err(CameraError::DegeneratePair { index: i });
        }
        c[i] = v[i] / n;
        s[i] = v[i + 3] / n;
    }
    Ok(rotation_from_trig(c, s))
}

fn rotation_from_trig(c: [f64; 3], s: [f64; 3]) -> [[f64; 3]; 3] {
    let (c1, c2, c3) = (c[0], c[1], c[2]);
    let (s1, s2, s3) = (s[0], s[1], s[2]);
    [
        [c3 * c2, c3 * s2 * s1 - s3 * c1, c3 * s2 * c1 + s3 * s1],
        [s3 * c2, s3 * s2 * s1 + c3 * c1, s3 * s2 * c1 - c3 * s1],
        [-s2, c2 * s1, c2 * c1],
    ]
}

// ---------------------------------------------------------------------------
// view priors
// ---------------------------------------------------------------------------

/// Distribution over one Euler angle, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleDist {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl AngleDist {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            AngleDist::Fixed(v) => v,
            AngleDist::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
            AngleDist::Gaussian { mean, std } => {
                if std == 0.0 {
                    mean
                } else {
                    mean + std * rng.sample::<f64, _>(rand_distr::StandardNormal)
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            AngleDist::Uniform { lo, hi } if hi < lo => {
                Err(format!("uniform range not ordered: [{lo}, {hi}]"))
            }
            AngleDist::Gaussian { std, .. } if std < 0.0 => {
                Err(format!("gaussian std negative: {std}"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-angle viewpoint prior (degrees) used for random-view rendering and
/// synthetic datasets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPrior {
    pub azimuth: AngleDist,
    pub elevation: AngleDist,
    pub tilt: AngleDist,
}

impl Default for ViewPrior {
    fn default() -> Self {
        // Azimuth uniform over the full circle; elevation uniform in [20, 40].
        ViewPrior {
            azimuth: AngleDist::Uniform { lo: 0.0, hi: 360.0 },
            elevation: AngleDist::Uniform { lo: 20.0, hi: 40.0 },
            tilt: AngleDist::Fixed(0.0),
        }
    }
}

pub fn sample_view_prior(prior: &ViewPrior, rng: &mut impl Rng, distance: f64) -> ViewPose {
    let az = prior.azimuth.sample(rng);
    let el = prior.elevation.sample(rng);
    let ti = prior.tilt.sample(rng);
    pose_from_prior_deg(el, az, ti, distance)
}

// ---------------------------------------------------------------------------
// rays
// ---------------------------------------------------------------------------

/// One ray per pixel, row-major over the image.
#[derive(Clone, Debug)]
pub struct RayBundle {
    pub origins: Array2<f64>,
    pub dirs: Array2<f64>,
    pub height: usize,
    pub width: usize,
}

/// Camera-space unit directions for a square pinhole image.
fn camera_dirs(image_size: usize, fov_deg: f64) -> Array2<f64> {
    let n = image_size * image_size;
    let f = (image_size as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
    let mut dirs = Array2::zeros((n, 3));
    for i in 0..image_size {
        for j in 0..image_size {
            let du = (j as f64 + 0.5 - image_size as f64 / 2.0) / f;
            let dv = (i as f64 + 0.5 - image_size as f64 / 2.0) / f;
            let norm = (du * du + dv * dv + 1.0).sqrt();
            let r = i * image_size + j;
            dirs[[r, 0]] = du / norm;
            dirs[[r, 1]] = -dv / norm;
            dirs[[r, 2]] = 1.0 / norm;
        }
    }
    dirs
}

/// Pinhole rays through every pixel, in world space.
pub fn generate_rays(
    pose: &ViewPose,
    image_size: usize,
    fov_deg: f64,
) -> Result<RayBundle, CameraError> {
    let rot = pose.rotation()?;
    let cam = camera_dirs(image_size, fov_deg);
    let n = cam.nrows();
    let mut dirs = Array2::zeros((n, 3));
    // dir_world = R^T dir_cam, i.e. row * R.
    for r in 0..n {
        for col in 0..3 {
            dirs[[r, col]] = cam[[r, 0]] * rot[0][col] + cam[[r, 1]] * rot[1][col]
                + cam[[r, 2]] * rot[2][col];
        }
    }
    let center = [
        -pose.distance * rot[2][0],
        -pose.distance * rot[2][1],
        -pose.distance * rot[2][2],
    ];
    let mut origins = Array2::zeros((n, 3));
    for r in 0..n {
        for col in 0..3 {
            origins[[r, col]] = center[col];
        }
    }
    Ok(RayBundle {
        origins,
        dirs,
        height: image_size,
        width: image_size,
    })
}

/// Tape version of the rotation assembly so ray geometry stays differentiable
/// with respect to a predicted viewpoint 6-vector.
pub fn rotation_var(v6: &Var) -> Var {
    assert_eq!(v6.shape(), vec![6]);
    let mut c = Vec::with_capacity(3);
    let mut s = Vec::with_capacity(3);
    for i in 0..3 {
        let ci = v6.narrow(0, i, 1);
        let si = v6.narrow(0, i + 3, 1);
        let norm = ci.square().add(&si.square()).sqrt();
        c.push(ci.div(&norm));
        s.push(si.div(&norm));
    }
    let (c1, c2, c3) = (&c[0], &c[1], &c[2]);
    let (s1, s2, s3) = (&s[0], &s[1], &s[2]);
    let entries = [
        c3.mul(c2),
        c3.mul(s2).mul(s1).sub(&s3.mul(c1)),
        c3.mul(s2).mul(c1).add(&s3.mul(s1)),
        s3.mul(c2),
        s3.mul(s2).mul(s1).add(&c3.mul(c1)),
        s3.mul(s2).mul(c1).sub(&c3.mul(s1)),
        s2.neg(),
        c2.mul(s1),
        c2.mul(c1),
    ];
    let refs: Vec<&Var> = entries.iter().collect();
    concat(&refs, 0).reshape(&[3, 3])
}

/// Differentiable rays from a raw viewpoint 6-vector: returns `(origins, dirs)`
/// each `[n, 3]`.
pub fn generate_rays_var(
    tape: &Tape,
    v6: &Var,
    image_size: usize,
    fov_deg: f64,
    distance: f64,
) -> (Var, Var) {
    let rot = rotation_var(v6);
    let cam = camera_dirs(image_size, fov_deg);
    let n = cam.nrows();
    let cam_var = tape.constant(cam.into_dyn());
    let dirs = cam_var.matmul(&rot); // rows: d^T R = (R^T d)^T
    let origins = rot.narrow(0, 2, 1).scale(-distance).broadcast_to(&[n, 3]);
    (origins, dirs)
}

// ---------------------------------------------------------------------------
// viewpoint prediction network
// ---------------------------------------------------------------------------

/// Convolutional viewpoint predictor `V(I) -> v in R^6` (raw, unnormalized).
pub struct ViewpointNet {
    trunk: ConvTrunk,
    fc1: Linear,
    out: Linear,
}

impl ViewpointNet {
    pub fn new(ps: &mut ParamSet, rng: &mut impl Rng, widths: &[usize]) -> Self {
        let trunk = ConvTrunk::new(ps, rng, "viewnet.trunk", widths);
        let fc1 = Linear::new(ps, rng, "viewnet.fc1", trunk.feat_dim, 64);
        let out = Linear::new(ps, rng, "viewnet.out", 64, 6);
        // Start near the canonical pose: small weights, cos-part bias at 1.
        let bound = 1e-2;
        *ps.value_mut(out.w) = crate::nn::uniform_init(rng, &[64, 6], bound);
        *ps.value_mut(out.b) =
            ArrayD::from_shape_vec(IxDyn(&[6]), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        ViewpointNet { trunk, fc1, out }
    }

    /// `image`: `[4, h, w]` var in [0,1] -> raw 6-vector var.
    pub fn forward(&self, leaves: &[Var], image: &Var) -> Var {
        let feat = self.trunk.forward(leaves, image);
        let h = self.fc1.forward(leaves, &feat).relu();
        self.out.forward(leaves, &h).reshape(&[6])
    }
}

/// Ground-truth pose file payload (evaluation only).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseJson {
    /// `[elevation, azimuth, tilt]` in degrees, prior-space convention.
    pub euler_deg: [f64; 3],
    pub distance: f64,
}

impl PoseJson {
    pub fn to_pose(&self) -> ViewPose {
        pose_from_prior_deg(
            self.euler_deg[0],
            self.euler_deg[1],
            self.euler_deg[2],
            self.distance,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat_close(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3], tol: f64) -> bool {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(x, y)| (x - y).abs() < tol)
    }

    const EYE: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn zero_angles_give_identity() {
        let p = angles_to_view([0.0; 3], 2.7);
        assert_eq!(p.v, [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(mat_close(&p.rotation().unwrap(), &EYE, 1e-12));
    }

    #[test]
    fn quarter_turn_first_axis() {
        let p = angles_to_view([std::f64::consts::FRAC_PI_2, 0.0, 0.0], 2.7);
        let v = p.v;
        assert!((v[0]).abs() < 1e-12 && (v[3] - 1.0).abs() < 1e-12);
        let expect = [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
        assert!(mat_close(&p.rotation().unwrap(), &expect, 1e-12));
    }

    #[test]
    fn angle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let g = [
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-3.1..3.1),
            ];
            let back = angles_to_view(g, 2.7).angles().unwrap();
            for i in 0..3 {
                let mut d = (back[i] - g[i]) % std::f64::consts::TAU;
                if d > std::f64::consts::PI {
                    d -= std::f64::consts::TAU;
                }
                assert!(d.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_scale_invariant_and_orthonormal() {
        let r = view_to_rotation(&[2.0, 2.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(mat_close(&r, &EYE, 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let v: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let Ok(r) = view_to_rotation(&v) else { continue };
            // R^T R = I and det = +1
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-6);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_pair_rejected() {
        assert!(view_to_rotation(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rotations_compose_about_shared_axis() {
        let g1 = 0.7;
        let delta = 0.4;
        let a = angles_to_view([g1 + delta, 0.0, 0.0], 2.7).rotation().unwrap();
        let d = angles_to_view([delta, 0.0, 0.0], 2.7).rotation().unwrap();
        let b = angles_to_view([g1, 0.0, 0.0], 2.7).rotation().unwrap();
        let mut db = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                db[i][j] = (0..3).map(|k| d[i][k] * b[k][j]).sum();
            }
        }
        assert!(mat_close(&a, &db, 1e-12));
    }

    #[test]
    fn prior_sampling_statistics() {
        let prior = ViewPrior::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut az_sum = 0.0;
        for _ in 0..n {
            let az = prior.azimuth.sample(&mut rng);
            let el = prior.elevation.sample(&mut rng);
            az_sum += az;
            assert!((20.0..=40.0).contains(&el));
        }
        let mean = az_sum / n as f64;
        assert!((mean - 180.0).abs() < 5.0, "azimuth mean {mean}");

        let gauss = AngleDist::Gaussian { mean: 10.0, std: 5.0 };
        let mut sum = 0.0;
        for _ in 0..n {
            sum += gauss.sample(&mut rng);
        }
        let gm = sum / n as f64;
        assert!((gm - 10.0).abs() < 0.5, "gaussian mean {gm}");
    }

    #[test]
    fn uniform_bounds_hold() {
        let dist = AngleDist::Uniform { lo: 20.0, hi: 40.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100_000 {
            let v = dist.sample(&mut rng);
            assert!((20.0..=40.0).contains(&v));
        }
    }

    #[test]
    fn center_ray_hits_origin_and_norms_unit() {
        let pose = pose_from_prior_deg(30.0, 40.0, 10.0, 2.7);
        let rays = generate_rays(&pose, 9, 30.0).unwrap();
        for r in 0..rays.dirs.nrows() {
            let n: f64 = (0..3).map(|c| rays.dirs[[r, c]].powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        // Odd image size: the center pixel looks straight down the axis.
        let c = 4 * 9 + 4;
        let o = [rays.origins[[c, 0]], rays.origins[[c, 1]], rays.origins[[c, 2]]];
        let d = [rays.dirs[[c, 0]], rays.dirs[[c, 1]], rays.dirs[[c, 2]]];
        // Closest approach of the ray to the origin.
        let t = -(o[0] * d[0] + o[1] * d[1] + o[2] * d[2]);
        let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
        let dist = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        assert!(dist < 1e-6, "center ray misses origin by {dist}");
    }

    #[test]
    fn orbit_invariance() {
        // Changing azimuth by delta rotates all ray origins rigidly: by the
        // y rotation conjugated through the (fixed) first-axis angle, since
        // Rx is the innermost factor of the world-to-camera composition.
        let elev = 25.0;
        let p1 = pose_from_prior_deg(elev, 50.0, 0.0, 2.7);
        let p2 = pose_from_prior_deg(elev, 80.0, 0.0, 2.7);
        let r1 = generate_rays(&p1, 5, 30.0).unwrap();
        let r2 = generate_rays(&p2, 5, 30.0).unwrap();
        let d2r = std::f64::consts::PI / 180.0;
        let g1 = -elev * d2r;
        let rx_neg = angles_to_view([-g1, 0.0, 0.0], 2.7).rotation().unwrap();
        let ry = angles_to_view([0.0, -30.0 * d2r, 0.0], 2.7).rotation().unwrap();
        let rx_pos = angles_to_view([g1, 0.0, 0.0], 2.7).rotation().unwrap();
        let matmul3 = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            out
        };
        let conj = matmul3(&rx_neg, &matmul3(&ry, &rx_pos));
        let o1 = [r1.origins[[0, 0]], r1.origins[[0, 1]], r1.origins[[0, 2]]];
        let o2 = [r2.origins[[0, 0]], r2.origins[[0, 1]], r2.origins[[0, 2]]];
        for c in 0..3 {
            let rotated: f64 = (0..3).map(|k| conj[c][k] * o1[k]).sum();
            assert!((rotated - o2[c]).abs() < 1e-10, "axis {c}: {rotated} vs {}", o2[c]);
        }
    }

    #[test]
    fn tape_rays_match_reference() {
        let pose = pose_from_prior_deg(33.0, 120.0, 5.0, 2.7);
        let rays = generate_rays(&pose, 7, 30.0).unwrap();
        let tape = Tape::new();
        let v6 = tape.param(ArrayD::from_shape_vec(IxDyn(&[6]), pose.v.to_vec()).unwrap());
        let (origins, dirs) = generate_rays_var(&tape, &v6, 7, 30.0, 2.7);
        let ov = origins.value();
        let dv = dirs.value();
        for r in 0..49 {
            for c in 0..3 {
                assert!((ov[[r, c]] - rays.origins[[r, c]]).abs() < 1e-12);
                assert!((dv[[r, c]] - rays.dirs[[r, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rays_differentiable_wrt_pose() {
        let pose = pose_from_prior_deg(20.0, 45.0, 0.0, 2.7);
        let v0 = ArrayD::from_shape_vec(IxDyn(&[6]), pose.v.to_vec()).unwrap();
        let err = crate::autodiff::finite_diff_check(
            |t, vs| {
                let (origins, dirs) = generate_rays_var(t, &vs[0], 3, 30.0, 2.7);
                origins.square().sum().add(&dirs.mul(&dirs).sum())
            },
            &[v0],
            1e-6,
        );
        assert!(err < 1e-5, "ray gradient err {err}");
    }
}
