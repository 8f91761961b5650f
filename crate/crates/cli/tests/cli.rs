use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "resolution=32",
    "n_test_views=1",
    "net_depth=2",
    "net_width=16",
    "head_width=8",
    "n_coarse=8",
    "n_fine=8",
    "obs_rays=64",
    "patch_size=6",
    "reg_patch_size=4",
    "mask_grid_max=8",
    "num_freqs_pos=3",
    "num_freqs_dir=1",
    "log_every=2",
];

fn warpreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warpreg")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_tiny(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap(), "--steps", "4", "--scene", "textured-plane"];
    for s in TINY {
        args.extend(["--set", s]);
    }
    args.extend_from_slice(extra);
    warpreg(&args)
}

#[test]
fn usage_errors_exit_with_code_2() {
    assert_eq!(warpreg(&[]).status.code(), Some(2));
    assert_eq!(warpreg(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(warpreg(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(warpreg(&["train", "--loss-mode", "sometimes"]).status.code(), Some(2));
    assert!(warpreg(&["--help"]).status.success());
}

#[test]
fn bad_overrides_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), &["--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn train_then_eval_render_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train_tiny(&run, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("step 4"));
    for f in ["config.toml", "metrics.csv", "eval.csv", "ckpt_00000004"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let ckpt = run.join("ckpt_00000004");
    let ckpt = ckpt.to_str().unwrap();

    let eval_csv = dir.path().join("eval.csv");
    let o = warpreg(&["eval", "--checkpoint", ckpt, "--out", eval_csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&eval_csv).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert_eq!(std::fs::read_to_string(run.join("eval.csv")).unwrap(), text);

    let renders = dir.path().join("renders");
    let o = warpreg(&["render", "--checkpoint", ckpt, "--out", renders.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["view_003.png", "depth_003.png", "depth_003.txt"] {
        assert!(renders.join(f).exists(), "missing {f}");
    }

    let inspect = dir.path().join("inspect");
    let o = warpreg(&["warp-inspect", "--checkpoint", ckpt, "--out", inspect.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["1_gt.png", "2_rendered.png", "3_warped.png", "4_mask.png", "5_masked_warp.png"] {
        assert!(inspect.join(f).exists(), "missing {f}");
    }
}

#[test]
fn baseline_arm_trains_without_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), &["--loss-mode", "none"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let header: Vec<&str> = metrics.lines().next().unwrap().split(',').collect();
    let cons = header.iter().position(|h| *h == "cons").unwrap();
    for line in metrics.lines().skip(1) {
        assert_eq!(line.split(',').nth(cons), Some(""));
    }
}

#[test]
fn resume_continues_to_the_same_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let full = train_tiny(&a, &[]);
    let half = train_tiny(&b, &["--stop-after", "2"]);
    assert!(half.status.success());
    let rest = train_tiny(&b, &["--resume"]);
    assert!(rest.status.success(), "{}", String::from_utf8_lossy(&rest.stderr));
    let hash = |o: &Output| stdout(o).lines().next().unwrap().split_whitespace().last().unwrap().to_string();
    assert_eq!(hash(&full), hash(&rest));
}

#[test]
fn warp_command_uses_json_cameras() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let eye = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let mut moved = eye;
    moved[0][3] = 0.1;
    let cam = |pose: [[f64; 4]; 4]| {
        serde_json::json!({ "fx": 16.0, "fy": 16.0, "cx": 8.0, "cy": 8.0, "width": 16, "height": 16, "pose": pose })
    };
    let spec = serde_json::json!({ "near": 1.0, "far": 5.0, "target": cam(eye), "source": cam(moved) });
    std::fs::write(d.join("cams.json"), spec.to_string()).unwrap();
    let src = warpreg::image::Image::<f64>::from_fn(16, 16, 3, |x, y, c| ((x + y + c) % 5) as f64 / 4.0);
    warpreg::data::io::write_png(&d.join("src.png"), &src).unwrap();
    let depth = warpreg::image::Image::<f64>::filled(16, 16, 1, 2.0);
    warpreg::data::io::write_depth_png16(&d.join("depth.png"), &depth, 1.0, 5.0).unwrap();
    let p = |n: &str| d.join(n).to_str().unwrap().to_string();
    let out = p("out");
    let o = warpreg(&[
        "warp",
        "--source",
        &p("src.png"),
        "--target-depth",
        &p("depth.png"),
        "--source-depth",
        &p("depth.png"),
        "--cameras",
        &p("cams.json"),
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mask fill"));
    for f in ["warped.png", "in_bounds.png", "mask.png"] {
        assert!(d.join("out").join(f).exists(), "missing {f}");
    }
}
