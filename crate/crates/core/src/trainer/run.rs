//! Training orchestration: checkpoints, metrics CSV, held-out evaluation and sweeps.

use super::checkpoint::{checkpoint_path, load_checkpoint, param_hash, save_checkpoint};
use super::schedule::{cons_weight_at, lr_at};
use super::step::{train_step, TrainContext, TrainState};
use super::{LossMode, TrainConfig};
use crate::data::metrics::{avg_err, psnr, ssim, MetricsRow};
use crate::data::{load_blender, load_llff, make_synthetic_scene, BlenderOptions, LlffOptions, SceneDataset, SceneKind, SyntheticOptions};
use crate::geometry::{Camera, RayBatch};
use crate::image::{DepthMap, Image};
use crate::renderer::RadianceModel;
use crate::{Error, Result, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Seed for the hierarchical sampling done while rendering for evaluation.
const EVAL_SEED: u64 = 0xe7a1;

/// Builds the dataset named by the config.
pub fn load_dataset(cfg: &TrainConfig) -> Result<SceneDataset<f64>> {
    match cfg.dataset.as_str() {
        "synthetic" => {
            let opts = SyntheticOptions {
                kind: SceneKind::parse(&cfg.synthetic_scene)?,
                n_train: cfg.n_train_views,
                n_test: cfg.n_test_views,
                resolution: cfg.resolution,
            };
            Ok(make_synthetic_scene(opts, &mut ChaCha8Rng::seed_from_u64(cfg.data_seed))?.0)
        }
        "blender" => load_blender(
            Path::new(&cfg.data_dir),
            &BlenderOptions {
                n_train: cfg.n_train_views,
                seed: cfg.data_seed,
                background: [1.0; 3],
                downscale: cfg.downscale,
                max_test: (cfg.max_test_views > 0).then_some(cfg.max_test_views),
            },
        ),
        "llff" => load_llff(
            Path::new(&cfg.data_dir),
            &LlffOptions { n_train: cfg.n_train_views, seed: cfg.data_seed, factor: cfg.downscale },
        ),
        other => Err(Error::Config(format!("unknown dataset {other:?}"))),
    }
}

/// Renders every pixel of `camera`: color and expected depth.
pub fn render_view<T: Scalar>(
    model: &RadianceModel<T>,
    camera: &Camera<T>,
    near: T,
    far: T,
    step: usize,
    chunk: usize,
) -> Result<(Image<T>, DepthMap<T>)> {
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<[T; 2]> = (0..h)
        .flat_map(|y| (0..w).map(move |x| [T::of_usize(x) + T::of(0.5), T::of_usize(y) + T::of(0.5)]))
        .collect();
    let rays = RayBatch::through_pixels(camera, &pixels, near, far)?;
    let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED);
    let (color, depth) = model.render_chunked(&rays, step, chunk, &mut rng)?;
    Ok((Image::from_vec(w, h, 3, color)?, Image::from_vec(w, h, 1, depth)?))
}

/// One row per test view plus a mean row (`view = None`).
pub fn evaluate<T: Scalar>(
    model: &RadianceModel<T>,
    dataset: &SceneDataset<T>,
    step: usize,
    chunk: usize,
    config_hash: &str,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::with_capacity(dataset.test.len() + 1);
    for &v in &dataset.test {
        let (img, _) = render_view(model, &dataset.cameras[v], dataset.near, dataset.far, step, chunk)?;
        let gt = &dataset.images[v];
        let p = psnr(&img, gt)?;
        let s = ssim(&img, gt)?;
        rows.push(MetricsRow {
            scene: dataset.name.clone(),
            view: Some(v),
            n_views: dataset.train.len(),
            psnr: p,
            ssim: s,
            lpips: None,
            avg_err: avg_err(p, s, None),
            config_hash: config_hash.to_string(),
        });
    }
    if let Some(mean) = mean_row(&rows) {
        rows.push(mean);
    }
    Ok(rows)
}

/// Mean of per-view rows.
pub fn mean_row(rows: &[MetricsRow]) -> Option<MetricsRow> {
    let views: Vec<&MetricsRow> = rows.iter().filter(|r| r.view.is_some()).collect();
    let first = views.first()?;
    let n = views.len() as f64;
    let mean = |f: fn(&MetricsRow) -> f64| views.iter().map(|r| f(r)).sum::<f64>() / n;
    Some(MetricsRow {
        view: None,
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        avg_err: mean(|r| r.avg_err),
        ..(*first).clone()
    })
}

pub fn write_metrics_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("csv", format!("{}: {other:?}", path.display())),
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub lr: f64,
    pub lambda_cons: f64,
    pub obs: f64,
    pub cons: Option<f64>,
    pub reg: f64,
    pub psnr_holdout: Option<f64>,
}

pub fn read_train_rows(path: &Path) -> Result<Vec<TrainRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| csv_error(path, e))
}

fn write_train_rows(path: &Path, rows: &[TrainRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Stop (with a checkpoint) once this step is reached, before `total_steps`.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub step: usize,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    /// Written only when training reached `total_steps`.
    pub eval_csv: Option<PathBuf>,
    pub param_hash: String,
    /// Mean held-out metrics when the run finished.
    pub eval: Option<MetricsRow>,
}

/// Trains in f32, writing `config.toml`, `metrics.csv`, checkpoints and, at the end,
/// `eval.csv` into `out_dir`.
pub fn train(cfg: &TrainConfig, dataset: &SceneDataset<f64>, out_dir: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let hash = cfg.hash();
    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;
    let ctx = TrainContext::<f32>::new(cfg, dataset)?;
    let metrics_csv = out_dir.join("metrics.csv");

    let (mut state, mut rows) = match &opts.resume {
        Some(path) => {
            let (state, header) = load_checkpoint::<f32>(path)?;
            if header.config_hash != hash {
                return Err(Error::ConfigHashMismatch { checkpoint: header.config_hash, current: hash });
            }
            let mut rows = if metrics_csv.exists() { read_train_rows(&metrics_csv)? } else { Vec::new() };
            rows.retain(|r| r.step <= state.step);
            (state, rows)
        }
        None => (TrainState::new(cfg, ctx.dataset.background)?, Vec::new()),
    };
    write_train_rows(&metrics_csv, &rows)?;

    let chunk = cfg.render_chunk;
    let end = opts.stop_after.map_or(cfg.total_steps, |s| s.min(cfg.total_steps));
    if state.step == 0 && cfg.total_steps == 0 {
        let mean = mean_row(&evaluate(&state.model, &ctx.dataset, 0, chunk, &hash)?);
        rows.push(TrainRow {
            step: 0,
            lr: lr_at(0, cfg),
            lambda_cons: cons_weight_at(0, cfg),
            obs: 0.0,
            cons: None,
            reg: 0.0,
            psnr_holdout: mean.as_ref().map(|m| m.psnr),
        });
        write_train_rows(&metrics_csv, &rows)?;
    }

    let mut final_rows = None;
    while state.step < end {
        let t = state.step;
        train_step(&mut state, &ctx).inspect_err(|e| log::error!("halting: {e}"))?;
        let s = state.step;
        let finished = s == cfg.total_steps;
        let eval_now = finished || (cfg.eval_every > 0 && s % cfg.eval_every == 0);
        if s % cfg.log_every == 0 || eval_now || s == end {
            let psnr_holdout = if eval_now {
                let rows = evaluate(&state.model, &ctx.dataset, s, chunk, &hash)?;
                let p = mean_row(&rows).map(|m| m.psnr);
                if finished {
                    final_rows = Some(rows);
                }
                p
            } else {
                None
            };
            let r = &state.running;
            let row = TrainRow {
                step: s,
                lr: lr_at(t, cfg),
                lambda_cons: if cfg.loss_mode == LossMode::None { 0.0 } else { cons_weight_at(t, cfg) },
                obs: r.mean_obs(),
                cons: r.mean_cons(),
                reg: r.mean_reg(),
                psnr_holdout,
            };
            log::info!(
                "step {s}: obs {:.5} cons {:?} reg {:.5} lr {:.2e} holdout {:?}",
                row.obs,
                row.cons,
                row.reg,
                row.lr,
                row.psnr_holdout
            );
            rows.push(row);
            write_train_rows(&metrics_csv, &rows)?;
            state.running = Default::default();
        }
        if (cfg.ckpt_every > 0 && s % cfg.ckpt_every == 0) && s != end {
            save_checkpoint(&checkpoint_path(out_dir, s), &state, &hash)?;
        }
    }

    let checkpoint = checkpoint_path(out_dir, state.step);
    save_checkpoint(&checkpoint, &state, &hash)?;
    let (eval_csv, eval) = if state.step == cfg.total_steps {
        let rows = match final_rows {
            Some(r) => r,
            None => evaluate(&state.model, &ctx.dataset, state.step, chunk, &hash)?,
        };
        let path = out_dir.join("eval.csv");
        write_metrics_rows(&path, &rows)?;
        (Some(path), rows.last().filter(|r| r.view.is_none()).cloned())
    } else {
        (None, None)
    };
    Ok(TrainSummary { step: state.step, checkpoint, metrics_csv, eval_csv, param_hash: param_hash(&state.model), eval })
}

/// A named configuration in a view-count sweep.
#[derive(Clone, Debug)]
pub struct SweepArm {
    pub label: String,
    pub cfg: TrainConfig,
}

/// Trains every arm for every input-view count and returns one mean row per run,
/// also written to `out_dir/sweep.csv`. The `scene` column reads `name:label`.
pub fn sweep_views(arms: &[SweepArm], counts: &[usize], out_dir: &Path) -> Result<Vec<MetricsRow>> {
    let mut out = Vec::new();
    for &n in counts {
        for arm in arms {
            let cfg = TrainConfig { n_train_views: n, ..arm.cfg.clone() };
            cfg.validate()?;
            let dataset = load_dataset(&cfg)?;
            let dir = out_dir.join(format!("views_{n:02}_{}", arm.label));
            log::info!("sweep: {} views, arm {}", n, arm.label);
            let summary = train(&cfg, &dataset, &dir, &TrainOptions::default())?;
            let mut row = summary.eval.ok_or_else(|| Error::InvalidArgument("dataset has no test views".into()))?;
            row.scene = format!("{}:{}", dataset.name, arm.label);
            row.n_views = n;
            out.push(row);
            write_metrics_rows(&out_dir.join("sweep.csv"), &out)?;
        }
    }
    Ok(out)
}
