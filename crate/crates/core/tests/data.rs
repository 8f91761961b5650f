use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use warpreg::data::io::{read_depth_png16, read_png, write_depth_png16, write_png};
use warpreg::data::llff::{row_from_camera, write_poses_bounds};
use warpreg::data::{
    avg_err, load_blender, load_llff, make_synthetic_scene, psnr, ssim, BlenderOptions, LlffOptions, SceneDataset,
    SceneKind, SyntheticOptions,
};
use warpreg::geometry::Camera;
use warpreg::image::Image;
use warpreg::linalg::Vec3;
use warpreg::trainer::{load_dataset, TrainConfig};
use warpreg::Error;

fn scene(kind: SceneKind, n_train: usize, n_test: usize, seed: u64) -> SceneDataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    make_synthetic_scene(SyntheticOptions { kind, n_train, n_test, resolution: 24 }, &mut rng).unwrap().0
}

fn same_camera(a: &Camera<f64>, b: &Camera<f64>) {
    assert_eq!((a.width, a.height), (b.width, b.height));
    for p in [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.3, -0.2), Vec3::zero()] {
        match (a.project(p), b.project(p)) {
            (Some(x), Some(y)) => assert!((x[0] - y[0]).abs() < 1e-6 && (x[1] - y[1]).abs() < 1e-6, "{x:?} vs {y:?}"),
            (x, y) => assert_eq!(x.is_some(), y.is_some()),
        }
    }
}

fn max_diff(a: &Image<f64>, b: &Image<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn write_blender_split(dir: &Path, split: &str, ds: &SceneDataset<f64>, views: &[usize]) {
    std::fs::create_dir_all(dir.join(split)).unwrap();
    let cam0 = &ds.cameras[views[0]];
    let fov = 2.0 * (0.5 * cam0.width as f64 / cam0.fx()).atan();
    let mut frames = Vec::new();
    for (k, &v) in views.iter().enumerate() {
        // RGBA with full alpha over the left half and none over the right
        let img = &ds.images[v];
        let rgba = Image::from_fn(img.width, img.height, 4, |x, y, c| {
            if c < 3 {
                img.at(x, y, c)
            } else if x < img.width / 2 {
                1.0
            } else {
                0.0
            }
        });
        write_png(&dir.join(format!("{split}/r_{k}.png")), &rgba).unwrap();
        frames.push(serde_json::json!({
            "file_path": format!("./{split}/r_{k}"),
            "transform_matrix": ds.cameras[v].pose_matrix(),
        }));
    }
    let manifest = serde_json::json!({ "camera_angle_x": fov, "frames": frames });
    std::fs::write(dir.join(format!("transforms_{split}.json")), manifest.to_string()).unwrap();
}

#[test]
fn blender_layout_round_trip() {
    let ds = scene(SceneKind::TexturedCube, 4, 2, 3);
    let dir = tempfile::tempdir().unwrap();
    write_blender_split(dir.path(), "train", &ds, &ds.train);
    write_blender_split(dir.path(), "test", &ds, &ds.test);
    let opts = BlenderOptions { n_train: 4, background: [0.0, 0.5, 1.0], ..Default::default() };
    let loaded = load_blender(dir.path(), &opts).unwrap();
    assert_eq!(loaded.train.len(), 4);
    assert_eq!(loaded.test.len(), 2);
    assert_eq!((loaded.near, loaded.far), (2.0, 6.0));
    for &t in &loaded.test {
        let src = ds.test[t - 4];
        same_camera(&loaded.cameras[t], &ds.cameras[src]);
        let (img, want) = (&loaded.images[t], &ds.images[src]);
        for y in 0..img.height {
            for x in 0..img.width {
                for c in 0..3 {
                    let expect = if x < img.width / 2 { want.at(x, y, c) } else { opts.background[c] };
                    assert!((img.at(x, y, c) - expect).abs() <= 0.5 / 255.0 + 1e-12);
                }
            }
        }
    }
    let capped = load_blender(dir.path(), &BlenderOptions { max_test: Some(1), n_train: 2, ..opts.clone() }).unwrap();
    assert_eq!((capped.train.len(), capped.test.len()), (2, 1));
    assert_eq!(capped.content_hash(), load_blender(dir.path(), &BlenderOptions { max_test: Some(1), n_train: 2, ..opts }).unwrap().content_hash());

    std::fs::remove_file(dir.path().join("test/r_1.png")).unwrap();
    assert!(load_blender(dir.path(), &BlenderOptions::default()).is_err());
    std::fs::remove_file(dir.path().join("transforms_test.json")).unwrap();
    assert!(matches!(load_blender(dir.path(), &BlenderOptions::default()), Err(Error::MissingFile(_))));
}

#[test]
fn llff_layout_round_trip() {
    let ds = scene(SceneKind::TwoPlaneOccluder, 9, 0, 4);
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    let rows: Vec<[f64; 17]> = ds.cameras.iter().map(|c| row_from_camera(c, 1.0, 5.0)).collect();
    write_poses_bounds(&dir.path().join("poses_bounds.npy"), &rows).unwrap();
    for (i, img) in ds.images.iter().enumerate() {
        write_png(&dir.path().join(format!("images/img_{i:03}.png")), img).unwrap();
    }
    let loaded = load_llff(dir.path(), &LlffOptions { n_train: 3, seed: 1, factor: 1 }).unwrap();
    assert_eq!(loaded.train.len(), 3);
    // captures 0 and 8 are held out
    assert_eq!(loaded.test.len(), 2);
    same_camera(&loaded.cameras[loaded.test[0]], &ds.cameras[0]);
    same_camera(&loaded.cameras[loaded.test[1]], &ds.cameras[8]);
    assert!(max_diff(&loaded.images[loaded.test[1]], &ds.images[8]) <= 0.5 / 255.0 + 1e-12);
    assert!(loaded.near < 1.0 && loaded.far > 5.0);

    let half = load_llff(dir.path(), &LlffOptions { n_train: 3, seed: 1, factor: 2 }).unwrap();
    assert_eq!(half.width(), 12);
    assert!((half.cameras[0].fx() - 0.5 * loaded.cameras[0].fx()).abs() < 1e-9);

    std::fs::remove_file(dir.path().join("images/img_004.png")).unwrap();
    assert!(matches!(load_llff(dir.path(), &LlffOptions::default()), Err(Error::Format { .. })));
}

#[test]
fn synthetic_scenes_are_seed_determined() {
    for kind in [SceneKind::TexturedPlane, SceneKind::TwoPlaneOccluder, SceneKind::TexturedCube] {
        let a = scene(kind, 3, 2, 7);
        assert_eq!(a.content_hash(), scene(kind, 3, 2, 7).content_hash());
        assert_ne!(a.content_hash(), scene(kind, 3, 2, 8).content_hash());
        a.validate().unwrap();
        assert!(a.images.iter().all(|i| i.data.iter().all(|v| (0.0..=1.0).contains(v))));
    }
    let cfg = TrainConfig { resolution: 24, ..TrainConfig::desk() };
    assert_eq!(load_dataset(&cfg).unwrap().content_hash(), load_dataset(&cfg).unwrap().content_hash());
}

#[test]
fn extra_training_views_keep_the_test_split() {
    let three = scene(SceneKind::TexturedCube, 3, 4, 11);
    let six = scene(SceneKind::TexturedCube, 6, 4, 11);
    for (a, b) in three.test.iter().zip(&six.test) {
        assert_eq!(three.images[*a].data, six.images[*b].data);
    }
}

#[test]
fn image_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(5, 4, 3, |x, y, c| ((x + 2 * y + c) % 7) as f64 / 6.0);
    let p = dir.path().join("a.png");
    write_png(&p, &img).unwrap();
    let back: Image<f64> = read_png(&p).unwrap();
    assert!(max_diff(&img, &back) <= 0.5 / 255.0 + 1e-12);

    let depth = Image::from_fn(5, 4, 1, |x, y, _| 2.0 + 0.1 * (x + y) as f64);
    let q = dir.path().join("d.png");
    write_depth_png16(&q, &depth, 1.0, 5.0).unwrap();
    let back: Image<f64> = read_depth_png16(&q, 1.0, 5.0).unwrap();
    assert!(max_diff(&depth, &back) <= 4.0 / 65535.0);
}

#[test]
fn metrics_behave() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Image::from_fn(16, 16, 3, |_, _, _| rand::Rng::gen::<f64>(&mut rng));
    let b = a.map(|v| (v + 0.1).min(1.0));
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(psnr(&a, &a).unwrap().is_infinite());
    assert!((avg_err(19.23, 0.866, Some(0.201)) - 0.096).abs() < 0.002);
}
