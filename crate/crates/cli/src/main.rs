use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use warpreg::data::io::{read_depth_png16, read_image, write_depth_png16, write_png};
use warpreg::data::metrics::MetricsRow;
use warpreg::geometry::{occlusion_mask, warp_image, Camera, MaskMetric};
use warpreg::image::Image;
use warpreg::linalg::Vec3;
use warpreg::trainer::run::write_metrics_rows;
use warpreg::trainer::step::prepare_consistency_patch;
use warpreg::trainer::{
    evaluate, load_checkpoint, load_dataset, render_view, sweep_views, train, LossMode, SweepArm, TrainConfig,
    TrainContext, TrainOptions,
};

#[derive(Parser)]
#[command(name = "warpreg", version, about = "Few-view radiance fields with warped-feature consistency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metrics.csv and eval.csv.
    Train(TrainArgs),
    /// Render views of a checkpoint to PNG color and 16-bit PNG depth.
    Render(RenderArgs),
    /// Evaluate a checkpoint on the held-out views.
    Eval(EvalArgs),
    /// Dump GT, rendered, warped, mask and masked-warp panels for one patch.
    WarpInspect(InspectArgs),
    /// Train over several input-view counts and collect one metrics row per run.
    SweepViews(SweepArgs),
    /// Warp an image file into another view using a depth map (debugging aid).
    Warp(WarpArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file (flat, one key per field).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset when no config file is given.
    #[arg(long, default_value = "desk", value_parser = ["desk", "full"])]
    preset: String,
    /// Override any config key, e.g. `--set lr_peak=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_parser = ["feature", "pixel", "none"])]
    loss_mode: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic scene id (textured-plane, two-plane-occluder, textured-cube).
    #[arg(long)]
    scene: Option<String>,
    /// Number of input views.
    #[arg(long)]
    views: Option<usize>,
    /// Disable the occlusion mask.
    #[arg(long)]
    no_mask: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let base = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None if self.preset == "full" => TrainConfig::default(),
            None => TrainConfig::desk(),
        };
        let mut sets = self.overrides.clone();
        if let Some(m) = &self.loss_mode {
            sets.push(format!("loss_mode=\"{m}\""));
        }
        if let Some(s) = self.steps {
            sets.push(format!("total_steps={s}"));
        }
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        if let Some(s) = &self.scene {
            sets.push(format!("synthetic_scene=\"{s}\""));
        }
        if let Some(v) = self.views {
            sets.push(format!("n_train_views={v}"));
        }
        if self.no_mask {
            sets.push("mask_enabled=false".into());
        }
        Ok(base.with_overrides(&sets)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    /// Resume from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop early at this step (a checkpoint is written).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config used for training; defaults to config.toml next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl CheckpointArgs {
    fn config(&self) -> Result<TrainConfig> {
        let path = match &self.config {
            Some(p) => p.clone(),
            None => self.checkpoint.parent().unwrap_or(Path::new(".")).join("config.toml"),
        };
        let cfg = TrainConfig::load(&path).with_context(|| format!("loading config {}", path.display()))?;
        Ok(cfg.with_overrides(&self.overrides)?)
    }
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Which views to render.
    #[arg(long, default_value = "test", value_parser = ["test", "train", "all"])]
    views: String,
    #[arg(long, default_value = "renders")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// CSV destination; defaults to eval.csv next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Held-out view used as the target (index into the test split).
    #[arg(long, default_value_t = 0)]
    target: usize,
    /// Training view to warp (index into the train split); nearest by default.
    #[arg(long)]
    source: Option<usize>,
    /// Step used for annealing; defaults to the checkpoint step.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "inspect")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "3,6,15")]
    counts: Vec<usize>,
    /// Also run the arm without consistency loss.
    #[arg(long)]
    with_baseline: bool,
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct WarpArgs {
    /// Source image (PNG or JPEG).
    #[arg(long)]
    source: PathBuf,
    /// Target-view depth as 16-bit PNG mapped from [near, far].
    #[arg(long)]
    target_depth: PathBuf,
    /// Source-view depth (enables the occlusion mask).
    #[arg(long)]
    source_depth: Option<PathBuf>,
    /// JSON with `near`, `far`, `target` and `source` cameras.
    #[arg(long)]
    cameras: PathBuf,
    /// Mask threshold; defaults to 5% of far - near.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value = "warp")]
    out: PathBuf,
}

#[derive(Deserialize)]
struct CameraSpec {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// Camera-to-world, looking down -z.
    pose: [[f64; 4]; 4],
}

impl CameraSpec {
    fn camera(&self) -> Result<Camera<f64>> {
        Ok(Camera::new(Camera::intrinsics(self.fx, self.fy, self.cx, self.cy), self.pose, self.width, self.height)?)
    }
}

#[derive(Deserialize)]
struct WarpCameras {
    near: f64,
    far: f64,
    target: CameraSpec,
    source: CameraSpec,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::WarpInspect(a) => cmd_inspect(a),
        Command::SweepViews(a) => cmd_sweep(a),
        Command::Warp(a) => cmd_warp(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let dataset = load_dataset(&cfg).context("loading dataset")?;
    let resume = if a.resume { warpreg::trainer::latest_checkpoint(&a.out)? } else { None };
    if a.resume && resume.is_none() {
        log::warn!("no checkpoint in {}, starting fresh", a.out.display());
    }
    let opts = TrainOptions { resume, stop_after: a.stop_after };
    let s = train(&cfg, &dataset, &a.out, &opts)?;
    println!("step {} checkpoint {} params {}", s.step, s.checkpoint.display(), s.param_hash);
    if let Some(m) = s.eval {
        print_row(&m);
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let cfg = a.ckpt.config()?;
    let dataset = load_dataset(&cfg)?.cast::<f32>();
    let (state, header) = load_checkpoint::<f32>(&a.ckpt.checkpoint)?;
    let views: Vec<usize> = match a.views.as_str() {
        "train" => dataset.train.clone(),
        "test" => dataset.test.clone(),
        _ => (0..dataset.images.len()).collect(),
    };
    std::fs::create_dir_all(&a.out)?;
    let (near, far) = (dataset.near, dataset.far);
    for v in views {
        let (img, depth) = render_view(&state.model, &dataset.cameras[v], near, far, header.step, cfg.render_chunk)?;
        write_png(&a.out.join(format!("view_{v:03}.png")), &img)?;
        write_depth_png16(&a.out.join(format!("depth_{v:03}.png")), &depth, near as f64, far as f64)?;
        std::fs::write(
            a.out.join(format!("depth_{v:03}.txt")),
            format!("near {near}\nfar {far}\nvalue = round((depth - near) / (far - near) * 65535), clamped\n"),
        )?;
    }
    println!("wrote renders to {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.ckpt.config()?;
    let dataset = load_dataset(&cfg)?.cast::<f32>();
    let (state, header) = load_checkpoint::<f32>(&a.ckpt.checkpoint)?;
    let rows = evaluate(&state.model, &dataset, header.step, cfg.render_chunk, &cfg.hash())?;
    let out = a.out.unwrap_or_else(|| a.ckpt.checkpoint.parent().unwrap_or(Path::new(".")).join("eval.csv"));
    write_metrics_rows(&out, &rows)?;
    for r in &rows {
        print_row(r);
    }
    Ok(())
}

fn print_row(r: &MetricsRow) {
    let view = r.view.map_or_else(|| "mean".to_string(), |v| v.to_string());
    println!(
        "{} views={} view={view} psnr={:.3} ssim={:.4} avg={:.4}",
        r.scene, r.n_views, r.psnr, r.ssim, r.avg_err
    );
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    // the panels do not need the feature extractor
    let mut cfg = a.ckpt.config()?;
    cfg.loss_mode = LossMode::Pixel;
    let dataset = load_dataset(&cfg)?;
    let ctx = TrainContext::<f32>::new(&cfg, &dataset)?;
    let ds = &ctx.dataset;
    let (state, header) = load_checkpoint::<f32>(&a.ckpt.checkpoint)?;
    let &target = ds.test.get(a.target).with_context(|| format!("test view {} of {}", a.target, ds.test.len()))?;
    let source = match a.source {
        Some(i) => *ds.train.get(i).with_context(|| format!("train view {i} of {}", ds.train.len()))?,
        None => nearest_view(&ds.train, &ds.cameras, &ds.cameras[target]),
    };
    let foot = cfg.patch_size * cfg.patch_stride;
    let cam = &ds.cameras[target];
    let origin = [(cam.width - foot) / 2, (cam.height - foot) / 2];
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(a.seed ^ 1);
    let step = a.step.unwrap_or(header.step);
    let cp = prepare_consistency_patch(&state.model, &ctx, step, source, cam, Some(origin), &mut rng, &mut mask_rng)?;
    let gt = ds.images[target].crop(origin[0], origin[1], foot, foot)?;
    let mask = cp.mask.to_image();
    let masked = Image::from_fn(foot, foot, 3, |x, y, c| cp.bundle.warped.at(x, y, c) * mask.at(x, y, 0));
    std::fs::create_dir_all(&a.out)?;
    write_png(&a.out.join("1_gt.png"), &gt)?;
    write_png(&a.out.join("2_rendered.png"), &cp.render.color_full())?;
    write_png(&a.out.join("3_warped.png"), &cp.bundle.warped)?;
    write_png(&a.out.join("4_mask.png"), &mask)?;
    write_png(&a.out.join("5_masked_warp.png"), &masked)?;
    println!(
        "target view {target}, source view {source}, patch at {origin:?}, mask fill {:.3}; panels in {}",
        cp.mask.fill_ratio(),
        a.out.display()
    );
    Ok(())
}

fn nearest_view(candidates: &[usize], cameras: &[Camera<f32>], target: &Camera<f32>) -> usize {
    let dist = |i: usize| -> f32 {
        let d: Vec3<f32> = cameras[i].position - target.position;
        d.norm()
    };
    *candidates.iter().min_by(|&&a, &&b| dist(a).total_cmp(&dist(b))).expect("at least one training view")
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let mut arms = vec![SweepArm { label: "full".into(), cfg: cfg.clone() }];
    if a.with_baseline {
        let baseline = cfg.with_overrides(&["loss_mode=\"none\"", "reg_weight=0"])?;
        arms.push(SweepArm { label: "baseline".into(), cfg: baseline });
    }
    if a.counts.is_empty() {
        bail!("no view counts given");
    }
    let rows = sweep_views(&arms, &a.counts, &a.out)?;
    for r in &rows {
        print_row(r);
    }
    Ok(())
}

fn cmd_warp(a: WarpArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.cameras).with_context(|| format!("reading {}", a.cameras.display()))?;
    let cams: WarpCameras = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.cameras.display()))?;
    let (cam_j, cam_i) = (cams.target.camera()?, cams.source.camera()?);
    let image = read_image::<f64>(&a.source)?;
    let depth_j = read_depth_png16::<f64>(&a.target_depth, cams.near, cams.far)?;
    let bundle = warp_image(&image, &depth_j, &cam_j, &cam_i)?;
    std::fs::create_dir_all(&a.out)?;
    write_png(&a.out.join("warped.png"), &bundle.warped)?;
    let in_bounds = Image::from_vec(cam_j.width, cam_j.height, 1, bundle.in_bounds.iter().map(|&b| f64::from(u8::from(b))).collect())?;
    write_png(&a.out.join("in_bounds.png"), &in_bounds)?;
    if let Some(p) = &a.source_depth {
        let depth_i = read_depth_png16::<f64>(p, cams.near, cams.far)?;
        let tau = a.tau.unwrap_or(0.05 * (cams.far - cams.near));
        let mask = occlusion_mask(&depth_j, &depth_i, &cam_j, &cam_i, tau, MaskMetric::PointDistance)?;
        write_png(&a.out.join("mask.png"), &mask.to_image())?;
        println!("mask fill {:.4}", mask.fill_ratio());
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
