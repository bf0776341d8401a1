//! Engine-level gradient checks: every primitive against central finite
//! differences, plus second-order (gradient-of-gradient) behaviour.

use mcsv_core::autodiff::{concat, finite_diff_check, grad, scalar, Tape, Tensor};
use ndarray::{ArrayD, IxDyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

#[test]
fn elementwise_and_broadcast_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, &[3, 4]);
    let b = randn(&mut rng, &[4]);
    let err = finite_diff_check(
        |_t, vs| {
            let x = &vs[0];
            let y = &vs[1];
            x.mul(y)
                .add(&x.div(&y.square().add_scalar(2.0)))
                .sub(&y.scale(0.3))
                .sum()
        },
        &[a, b],
        1e-5,
    );
    assert!(err < 1e-6, "broadcast binary grads err {err}");
}

#[test]
fn unary_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Keep values positive where ln/sqrt need them.
    let x = randn(&mut rng, &[2, 5]).mapv(|v| v.abs() + 0.3);
    let err = finite_diff_check(
        |_t, vs| {
            let x = &vs[0];
            let mut s = x.exp().mean();
            s = s.add(&x.ln().mean());
            s = s.add(&x.sqrt().mean());
            s = s.add(&x.sin().mul(&x.cos()).mean());
            s = s.add(&x.tanh().mean());
            s = s.add(&x.sigmoid().mean());
            s = s.add(&x.softplus().mean());
            s = s.add(&x.square().mean());
            s = s.add(&x.add_scalar(-0.9).relu().mean());
            s = s.add(&x.add_scalar(-0.9).leaky_relu(0.2).mean());
            s
        },
        &[x],
        1e-6,
    );
    assert!(err < 1e-5, "unary grads err {err}");
}

#[test]
fn matmul_all_transpose_flags() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { [4, 3] } else { [3, 4] };
        let b_shape = if tb { [5, 4] } else { [4, 5] };
        let a = randn(&mut rng, &a_shape);
        let b = randn(&mut rng, &b_shape);
        let err = finite_diff_check(
            |_t, vs| vs[0].matmul_flags(&vs[1], ta, tb).square().sum(),
            &[a, b],
            1e-5,
        );
        assert!(err < 1e-6, "matmul ta={ta} tb={tb} err {err}");
    }
}

#[test]
fn shape_op_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[3, 6]);
    let y = randn(&mut rng, &[2, 6]);
    let err = finite_diff_check(
        |_t, vs| {
            let a = vs[0].reshape(&[6, 3]).narrow(0, 1, 4);
            let b = concat(&[&vs[0], &vs[1]], 0).sum_axis_keep(0);
            let c = vs[1].take_rows(&[1, 0, 1]).scatter_rows(2, &[0, 0, 1]);
            a.square().sum().add(&b.square().sum()).add(&c.square().sum())
        },
        &[x, y],
        1e-5,
    );
    assert!(err < 1e-6, "shape op grads err {err}");
}

#[test]
fn min_max_grads_route_to_winner() {
    let t = Tape::new();
    let a = t.param(ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, 5.0, 2.0]).unwrap());
    let b = t.param(ArrayD::from_shape_vec(IxDyn(&[3]), vec![2.0, 3.0, 2.0]).unwrap());
    let y = a.minimum(&b).sum();
    let gs = grad(&y, &[&a, &b]);
    assert_eq!(gs[0].value().as_slice().unwrap(), &[1.0, 0.0, 1.0]); // tie -> a
    assert_eq!(gs[1].value().as_slice().unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn im2col_col2im_adjoint_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&mut rng, &[2, 5, 5]);
    let err = finite_diff_check(
        |_t, vs| {
            let cols = vs[0].im2col([2, 5, 5], 3, 2, 1);
            cols.square().sum()
        },
        &[x],
        1e-5,
    );
    assert!(err < 1e-6, "im2col grad err {err}");

    // col2im must be the exact adjoint of im2col: <im2col(x), y> == <x, col2im(y)>.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = randn(&mut rng, &[2, 5, 5]);
    let t = Tape::new();
    let xv = t.constant(x.clone());
    let cols = xv.im2col([2, 5, 5], 3, 2, 1);
    let y = randn(&mut rng, &cols.shape());
    let yv = t.constant(y.clone());
    let lhs = cols.mul(&yv).sum().scalar_value();
    let rhs = yv
        .col2im([2, 5, 5], 3, 2, 1)
        .mul(&xv)
        .sum()
        .scalar_value();
    assert!((lhs - rhs).abs() < 1e-10, "adjoint identity {lhs} vs {rhs}");
}

#[test]
fn second_order_gradients() {
    // f(x) = sum(x^3); df/dx = 3x^2; d(sum(df/dx))/dx = 6x.
    let t = Tape::new();
    let x = t.param(ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, -2.0, 0.5]).unwrap());
    let y = x.square().mul(&x).sum();
    let g = &grad(&y, &[&x])[0];
    let gsum = g.sum();
    let gg = &grad(&gsum, &[&x])[0];
    let expect = [6.0, -12.0, 3.0];
    for (a, e) in gg.value().iter().zip(expect) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
}

#[test]
fn second_order_through_input_gradient_penalty() {
    // Discriminator-style double backward: p(w) = || d/dx [sum(tanh(x*w))] ||^2,
    // checked against finite differences in w.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = randn(&mut rng, &[4, 3]);
    let x0 = randn(&mut rng, &[2, 4]);
    let err = finite_diff_check(
        |t, vs| {
            let x = t.param(x0.clone());
            let out = x.matmul(&vs[0]).tanh().sum();
            let gx = &grad(&out, &[&x])[0];
            gx.square().sum()
        },
        &[w],
        1e-5,
    );
    assert!(err < 1e-6, "double-backward err {err}");
}

#[test]
fn detach_blocks_gradient() {
    let t = Tape::new();
    let x = t.param(scalar(2.0));
    let y = x.detach().mul(&x); // d/dx = detached(x) = 2
    let g = &grad(&y, &[&x])[0];
    assert_eq!(g.scalar_value(), 2.0);
}

#[test]
fn unreachable_input_gets_zeros() {
    let t = Tape::new();
    let x = t.param(scalar(1.0));
    let z = t.param(ArrayD::zeros(IxDyn(&[2, 2])));
    let y = x.square();
    let gs = grad(&y, &[&x, &z]);
    assert_eq!(gs[0].scalar_value(), 2.0);
    assert!(gs[1].value().iter().all(|&v| v == 0.0));
}
