#[test]
fn probe_radial_profile() {
    use mcsv_core::fields::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    let arch = FieldArchitecture::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut params = FieldParams::random(&arch, &mut rng);
    let err = pretrain_sphere(&mut params, &arch, 0.5, 2000, 7);
    println!("final MAE {err}");
    let mut pts = Vec::new();
    for i in 0..19 { let t = i as f64 * 0.05; pts.extend([t, 0.0, 0.0]); }
    let pts = Array2::from_shape_vec((19, 3), pts).unwrap();
    let (sdf, _) = eval_shape_field(&params, &pts, &arch);
    for i in 0..19 {
        let t = i as f64 * 0.05;
        println!("r={:.2} f={:+.4} target={:+.4}", t, sdf[i], t - 0.5);
    }
}
