use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpreg::consistency::{masked_consistency_loss, pixel_loss, FeatureExtractor};
use warpreg::data::{psnr, ssim};
use warpreg::field::{anneal_alpha, band_weights, encode, EncodingSpec, Input};
use warpreg::geometry::{occlusion_mask, warp_image, Camera, MaskMetric, OcclusionMask};
use warpreg::image::Image;
use warpreg::linalg::{Mat3, Vec3};
use warpreg::renderer::{composite, SampleSet};
use warpreg::trainer::optim::{clip_gradients, global_norm};
use warpreg::trainer::{cons_weight_at, lr_at, TrainConfig};

fn image_strategy(w: usize, h: usize, c: usize) -> impl Strategy<Value = Image<f64>> {
    prop::collection::vec(0.0..1.0f64, w * h * c).prop_map(move |d| Image::from_vec(w, h, c, d).unwrap())
}

fn camera(rx: f64, ry: f64, pos: [f64; 3]) -> Camera<f64> {
    let k = Camera::intrinsics(20.0, 20.0, 6.0, 6.0);
    Camera::from_parts(k, Mat3::rot_y(ry).mul_mat(&Mat3::rot_x(rx)), Vec3::new(pos[0], pos[1], pos[2]), 12, 12).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_warp_returns_the_source(
        src in image_strategy(12, 12, 3),
        depth in prop::collection::vec(0.5..5.0f64, 144),
        rx in -0.3..0.3f64,
        ry in -0.3..0.3f64,
    ) {
        let cam = camera(rx, ry, [0.1, -0.2, 0.3]);
        let depth = Image::from_vec(12, 12, 1, depth).unwrap();
        let b = warp_image(&src, &depth, &cam, &cam).unwrap();
        for p in 0..144 {
            prop_assert!(b.in_bounds[p]);
            for c in 0..3 {
                prop_assert!((b.warped.data[3 * p + c] - src.data[3 * p + c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn masks_grow_with_the_threshold(
        dj in prop::collection::vec(1.0..4.0f64, 144),
        di in prop::collection::vec(1.0..4.0f64, 144),
        t1 in 0.0..1.0f64,
        t2 in 0.0..1.0f64,
        point_metric in any::<bool>(),
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let cj = camera(0.0, 0.0, [0.0, 0.0, 0.0]);
        let ci = camera(0.05, -0.1, [0.2, 0.0, 0.1]);
        let dj = Image::from_vec(12, 12, 1, dj).unwrap();
        let di = Image::from_vec(12, 12, 1, di).unwrap();
        let metric = if point_metric { MaskMetric::PointDistance } else { MaskMetric::DepthDifference };
        let a = occlusion_mask(&dj, &di, &cj, &ci, lo, metric).unwrap();
        let b = occlusion_mask(&dj, &di, &cj, &ci, hi, metric).unwrap();
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| !*x || *y));
        let same = occlusion_mask(&dj, &dj, &cj, &cj, 1e-6, metric).unwrap();
        prop_assert_eq!(same.count(), 144);
    }

    #[test]
    fn compositing_partitions_unity(
        sigma in prop::collection::vec(0.0..50.0f64, 12),
        gaps in prop::collection::vec(0.01..0.5f64, 12),
    ) {
        let mut t = Vec::with_capacity(12);
        let mut acc = 1.0;
        for g in &gaps {
            acc += g;
            t.push(acc);
        }
        let far = acc + 0.3;
        let s = SampleSet::from_t(1, 12, t, 1.0, far, false).unwrap();
        let (r, trans) = composite(&sigma, &vec![0.5; 36], &s, [1.0; 3]);
        let w: f64 = r.weights.iter().sum();
        prop_assert!((w + r.residual[0] - 1.0).abs() < 1e-9);
        prop_assert!(r.weights.iter().all(|&w| w >= 0.0));
        prop_assert!(trans.windows(2).all(|p| p[1] <= p[0]));
        // depth is a weighted mean of the sample positions
        prop_assert!(r.depth[0] <= (1.0 - r.residual[0]) * far + 1e-9);
    }

    #[test]
    fn image_metrics_are_symmetric(a in image_strategy(11, 11, 3), b in image_strategy(11, 11, 3)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!(s1 <= 1.0 + 1e-12);
    }

    #[test]
    fn consistency_losses_are_nonnegative_and_vanish_at_equality(
        a in image_strategy(8, 8, 3),
        b in image_strategy(8, 8, 3),
        mask in prop::collection::vec(any::<bool>(), 64),
    ) {
        let mask = OcclusionMask::from_values(8, 8, mask).unwrap();
        let ext = FeatureExtractor::<f64>::new("random-small", None).unwrap();
        prop_assert!(masked_consistency_loss(&ext, &a, &b, &mask).unwrap().value >= 0.0);
        prop_assert_eq!(masked_consistency_loss(&ext, &a, &a, &mask).unwrap().value, 0.0);
        prop_assert!(pixel_loss(&a, &b, &mask).unwrap().0 >= 0.0);
        prop_assert_eq!(pixel_loss(&a, &a, &mask).unwrap().0, 0.0);
    }
}

proptest! {
    #[test]
    fn clipping_bounds_values_and_norm(
        mut a in prop::collection::vec(-10.0..10.0f64, 1..40),
        mut b in prop::collection::vec(-10.0..10.0f64, 0..40),
        cv in 0.01..5.0f64,
        cn in 0.01..5.0f64,
    ) {
        let pre = global_norm(&[a.as_mut_slice(), b.as_mut_slice()]);
        let reported = clip_gradients(&mut [a.as_mut_slice(), b.as_mut_slice()], cv, cn);
        prop_assert_eq!(pre, reported);
        prop_assert!(a.iter().chain(&b).all(|g| g.abs() <= cv + 1e-12));
        prop_assert!(global_norm(&[a.as_mut_slice(), b.as_mut_slice()]) <= cn * (1.0 + 1e-9));
    }

    #[test]
    fn encoding_is_deterministic_and_annealing_is_monotone(
        x in prop::array::uniform3(-2.0..2.0f64),
        s1 in 0usize..20_000,
        s2 in 0usize..20_000,
    ) {
        let spec = EncodingSpec::default();
        prop_assert_eq!(encode(x, &spec, s1, Input::Position), encode(x, &spec, s1, Input::Position));
        let m = spec.num_freqs_pos;
        prop_assert_eq!(anneal_alpha::<f64>(m, 15_000, 0), 0.0);
        prop_assert_eq!(anneal_alpha::<f64>(m, 15_000, 15_000), m as f64);
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let (wl, wh) = (band_weights::<f64>(m, 15_000, lo), band_weights::<f64>(m, 15_000, hi));
        prop_assert!(wl.iter().zip(&wh).all(|(a, b)| (0.0..=1.0).contains(a) && a <= b));
    }

    #[test]
    fn schedules_stay_in_range(t in 0usize..80_000) {
        let cfg = TrainConfig::default();
        let lr = lr_at(t, &cfg);
        prop_assert!((0.0..=cfg.lr_peak).contains(&lr));
        if t >= cfg.lr_warmup_steps {
            prop_assert!(lr >= cfg.lr_min);
        }
        prop_assert!(cons_weight_at(t + 1, &cfg) <= cons_weight_at(t, &cfg));
        prop_assert!(cons_weight_at(t, &cfg) <= cfg.cons_weight_base);
    }
}

#[test]
fn density_is_view_invariant_for_random_models() {
    use rand::Rng;
    use warpreg::field::{field_eval, FieldArch, FieldParams};
    let spec = EncodingSpec { num_freqs_pos: 4, num_freqs_dir: 2, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let arch = FieldArch { pos_dim: spec.pos_dim(), dir_dim: spec.dir_dim(), depth: 3, width: 12, head_width: 6 };
        let f = FieldParams::<f64>::init(arch, &mut rng).unwrap();
        let x = encode([rng.gen(), rng.gen(), rng.gen()], &spec, 20_000, Input::Position);
        let s: Vec<f64> = (0..5)
            .map(|_| {
                let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0).normalized().to_array();
                field_eval(&f, &x, &encode(d, &spec, 20_000, Input::Direction)).unwrap().1
            })
            .collect();
        assert!(s.iter().all(|&v| v == s[0]));
    }
}
