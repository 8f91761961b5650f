use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpreg::field::{encode, field_eval, EncodingSpec, FieldArch, FieldParams, Input};
use warpreg::geometry::RayBatch;
use warpreg::linalg::Vec3;
use warpreg::renderer::{composite, hierarchical_resample, render_backward, render_rays, stratified_samples, SampleSet};

fn one_ray(near: f64, far: f64) -> RayBatch<f64> {
    RayBatch::new(vec![Vec3::zero()], vec![Vec3::new(0.0, 0.0, -1.0)], near, far).unwrap()
}

fn random_rays(rng: &mut ChaCha8Rng, n: usize, near: f64, far: f64) -> RayBatch<f64> {
    let origins = (0..n).map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(2.0..3.0))).collect();
    let dirs = (0..n)
        .map(|_| Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -1.0))
        .collect();
    RayBatch::new(origins, dirs, near, far).unwrap()
}

/// Transmittance through a homogeneous medium, from bin-center samples.
fn homogeneous_residual(sigma: f64, n: usize, near: f64, far: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = stratified_samples(&one_ray(near, far), n, false, &mut rng).unwrap();
    let (r, _) = composite(&vec![sigma; n], &vec![0.5; 3 * n], &s, [0.0; 3]);
    r.residual[0]
}

#[test]
fn homogeneous_medium_converges_to_beer_lambert() {
    let (near, far, sigma) = (2.0f64, 6.0, 0.25);
    let exact = (-sigma * (far - near)).exp();
    let errs: Vec<f64> = [128, 256, 512, 1024].iter().map(|&n| (homogeneous_residual(sigma, n, near, far) - exact).abs()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] / exact < 1e-3, "relative error {}", errs[3] / exact);
}

#[test]
fn weights_and_residual_partition_unity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 16;
    let rays = 10_000;
    let s = stratified_samples(&random_rays(&mut rng, rays, 0.5, 4.0), n, true, &mut rng).unwrap();
    let sigma: Vec<f64> = (0..rays * n).map(|_| rng.gen_range(0.0..3.0f64).powi(3)).collect();
    let rgb: Vec<f64> = (0..rays * n * 3).map(|_| rng.gen()).collect();
    let (r, trans) = composite(&sigma, &rgb, &s, [1.0; 3]);
    for ray in 0..rays {
        let w: f64 = r.weights[ray * n..(ray + 1) * n].iter().sum();
        assert!((w + r.residual[ray] - 1.0).abs() < 1e-6);
        let a = &trans[ray * n..(ray + 1) * n];
        assert!(a.windows(2).all(|p| p[1] <= p[0]));
        assert!(r.residual[ray] <= a[n - 1]);
        if r.residual[ray] < 0.5 {
            let d = r.depth[ray] / (1.0 - r.residual[ray]);
            assert!((0.5..=4.0).contains(&d));
        }
    }
}

#[test]
fn concentrated_weights_draw_fine_samples_into_their_bin() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 16;
    let s = stratified_samples(&one_ray(1.0, 5.0), n, false, &mut rng).unwrap();
    let mut w = vec![1e-4; n];
    w[6] = 1.0;
    let f = hierarchical_resample(&w, &s, 200, &mut rng).unwrap();
    let fine: Vec<f64> = f.t.iter().copied().filter(|t| !s.t.contains(t)).collect();
    assert_eq!(fine.len(), 200);
    // bin 6 spans [near + 6h, near + 7h]
    let h = 4.0 / n as f64;
    let inside = fine.iter().filter(|&&t| t >= 1.0 + 6.0 * h && t <= 1.0 + 7.0 * h).count();
    assert!(inside as f64 >= 0.9 * 200.0, "{inside}");
}

#[test]
fn uniform_weights_give_uniform_fine_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 32;
    let (near, far) = (2.0, 6.0);
    let s = stratified_samples(&one_ray(near, far), n, false, &mut rng).unwrap();
    let f = hierarchical_resample(&vec![0.3; n], &s, 10_000, &mut rng).unwrap();
    let mut fine: Vec<f64> = f.t.iter().copied().filter(|t| !s.t.contains(t)).collect();
    fine.sort_by(f64::total_cmp);
    let m = fine.len() as f64;
    let ks = fine
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let cdf = (t - near) / (far - near);
            (cdf - i as f64 / m).abs().max((cdf - (i + 1) as f64 / m).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "KS statistic {ks}");
}

fn tiny_field(seed: u64) -> (FieldParams<f64>, EncodingSpec) {
    let enc = EncodingSpec { num_freqs_pos: 3, num_freqs_dir: 2, ..Default::default() };
    let arch = FieldArch { pos_dim: enc.pos_dim(), dir_dim: enc.dir_dim(), depth: 2, width: 10, head_width: 6 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = FieldParams::init(arch, &mut rng).unwrap();
    // push densities up so both sides of the compositing matter
    for v in p.params.iter_mut() {
        *v *= 1.5;
    }
    (p, enc)
}

#[test]
fn render_rays_parameter_gradient_matches_finite_difference() {
    let (mut field, enc) = tiny_field(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rays = random_rays(&mut rng, 4, 0.5, 3.5);
    let samples = stratified_samples(&rays, 8, true, &mut rng).unwrap();
    let step = 100_000;
    let gc: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gd: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ga: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |f: &FieldParams<f64>| {
        let (r, _) = render_rays(f, &enc, &rays, &samples, step, [0.3, 0.6, 0.9]).unwrap();
        let c: f64 = r.color.iter().zip(&gc).map(|(a, b)| a * b).sum();
        let d: f64 = r.depth.iter().zip(&gd).map(|(a, b)| a * b).sum();
        let a: f64 = r.residual.iter().zip(&ga).map(|(a, b)| a * b).sum();
        c + d + a
    };
    let (_, cache) = render_rays(&field, &enc, &rays, &samples, step, [0.3, 0.6, 0.9]).unwrap();
    let mut grads = vec![0.0; field.num_params()];
    render_backward(&field, &cache, &gc, &gd, Some(&ga), &mut grads);
    let n = field.num_params();
    let (mut ok, mut total) = (0, 0);
    for _ in 0..200 {
        let i = rng.gen_range(0..n);
        let h = 1e-5;
        let orig = field.params[i];
        field.params[i] = orig + h;
        let up = loss(&field);
        field.params[i] = orig - h;
        let down = loss(&field);
        field.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        total += 1;
        if (fd - grads[i]).abs() <= 1e-4 * fd.abs().max(grads[i].abs()).max(1e-6) {
            ok += 1;
        }
    }
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total} coordinates within tolerance");
}

#[test]
fn density_ignores_view_direction() {
    let (field, enc) = tiny_field(6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let xe = encode(x, &enc, 20_000, Input::Position);
        let d1 = Vec3::new(rng.gen(), rng.gen(), rng.gen::<f64>()).normalized().to_array();
        let d2 = Vec3::new(-rng.gen::<f64>(), rng.gen(), -rng.gen::<f64>()).normalized().to_array();
        let (_, s1) = field_eval(&field, &xe, &encode(d1, &enc, 20_000, Input::Direction)).unwrap();
        let (_, s2) = field_eval(&field, &xe, &encode(d2, &enc, 20_000, Input::Direction)).unwrap();
        assert_eq!(s1, s2);
    }
}

#[test]
fn density_parameter_gradient_matches_finite_difference() {
    let (mut field, enc) = tiny_field(8);
    let xe = encode([0.2, -0.4, 0.7], &enc, 20_000, Input::Position);
    let de = encode([0.0, 0.6, 0.8], &enc, 20_000, Input::Direction);
    let (_, cache) = field.forward(&xe, &de, 1).unwrap();
    let mut grads = vec![0.0; field.num_params()];
    field.backward(&cache, &[1.0], &[0.0; 3], &mut grads);
    let eps = 1e-4;
    let (mut ok, mut total) = (0, 0);
    for i in 0..field.num_params() {
        let orig = field.params[i];
        field.params[i] = orig + eps;
        let up = field_eval(&field, &xe, &de).unwrap().1;
        field.params[i] = orig - eps;
        let down = field_eval(&field, &xe, &de).unwrap().1;
        field.params[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        if fd == 0.0 && grads[i] == 0.0 {
            continue;
        }
        total += 1;
        if (fd - grads[i]).abs() <= 1e-4 * fd.abs().max(grads[i].abs()) {
            ok += 1;
        }
    }
    assert!(total > 20);
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}

#[test]
fn annealing_window_endpoints() {
    let enc = EncodingSpec::default();
    let x = [0.3, -0.2, 0.9];
    let at0 = encode::<f64>(x, &enc, 0, Input::Position);
    assert_eq!(&at0[..3], &x);
    assert!(at0[3..].iter().all(|&v| v == 0.0));
    let full = encode::<f64>(x, &enc, 15_000, Input::Position);
    let unannealed = encode::<f64>(x, &EncodingSpec { anneal_positions: false, ..enc.clone() }, 0, Input::Position);
    assert_eq!(full, unannealed);
    assert_eq!(encode::<f64>(x, &enc, 7_000, Input::Position), encode::<f64>(x, &enc, 7_000, Input::Position));
}

#[test]
fn sample_sets_record_intervals_to_far() {
    let s = SampleSet::from_t(1, 3, vec![1.0, 2.0, 4.0], 0.5, 5.0, false).unwrap();
    assert_eq!(s.deltas, vec![1.0, 2.0, 1.0]);
}
