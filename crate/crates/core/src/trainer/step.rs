//! One optimization step: observation, smoothness and warped-consistency terms.

use super::optim::{clip_gradients, Adam, AdamParams};
use super::schedule::{cons_weight_at, lr_at};
use super::{LossMode, TrainConfig};
use crate::consistency::{disparity_smoothness, masked_consistency_loss_grad, pixel_loss, FeatureExtractor, LossReport};
use crate::data::SceneDataset;
use crate::field::EncodingSpec;
use crate::geometry::{
    make_patch_rays, occlusion_mask, upsample_strided, warp_image, warp_image_depth_backward, Camera, OcclusionMask,
    PoseSampler, RayBatch, WarpBundle,
};
use crate::image::{DepthMap, Image};
use crate::renderer::{render_patch, render_patch_backward, LevelGrad, ModelGrads, PatchRender, RadianceModel};
use crate::{Error, Result, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Loss sums since the last reset, for logging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningLoss {
    pub steps: usize,
    pub obs: f64,
    pub cons: f64,
    pub reg: f64,
    /// Steps that evaluated a consistency term.
    pub cons_evals: usize,
}

impl RunningLoss {
    fn add(&mut self, r: &LossReport) {
        self.steps += 1;
        self.obs += r.obs_loss;
        self.reg += r.reg_loss;
        if let Some(c) = r.cons_loss.or(r.pix_loss) {
            self.cons += c;
            self.cons_evals += 1;
        }
    }

    pub fn mean_obs(&self) -> f64 {
        self.obs / self.steps.max(1) as f64
    }

    pub fn mean_reg(&self) -> f64 {
        self.reg / self.steps.max(1) as f64
    }

    pub fn mean_cons(&self) -> Option<f64> {
        (self.cons_evals > 0).then(|| self.cons / self.cons_evals as f64)
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub step: usize,
    pub model: RadianceModel<T>,
    pub optimizer: Adam<T>,
    /// Draws one seed per step; sub-generators for each loss term derive from it.
    pub rng: ChaCha8Rng,
    pub running: RunningLoss,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh state: the network is initialized from `cfg.seed`.
    pub fn new(cfg: &TrainConfig, background: [T; 3]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = RadianceModel::new(
            encoding_spec(cfg),
            cfg.net_depth,
            cfg.net_width,
            cfg.head_width,
            cfg.n_coarse,
            cfg.n_fine,
            background,
            &mut rng,
        )?;
        let optimizer = Adam::new(model.num_params(), adam_params(cfg));
        Ok(Self { step: 0, model, optimizer, rng, running: RunningLoss::default() })
    }
}

pub fn encoding_spec(cfg: &TrainConfig) -> EncodingSpec {
    EncodingSpec {
        num_freqs_pos: cfg.num_freqs_pos,
        num_freqs_dir: cfg.num_freqs_dir,
        anneal_steps: cfg.anneal_steps,
        include_identity: true,
        anneal_positions: cfg.anneal_positions,
        anneal_directions: cfg.anneal_directions,
    }
}

pub fn adam_params(cfg: &TrainConfig) -> AdamParams {
    AdamParams { beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps }
}

/// Read-only inputs to [`train_step`].
#[derive(Clone, Debug)]
pub struct TrainContext<T> {
    pub cfg: TrainConfig,
    pub dataset: SceneDataset<T>,
    pub extractor: Option<FeatureExtractor<T>>,
    pub sampler: PoseSampler<T>,
}

/// Extractor weight path from the config, else from `FEATURE_WEIGHTS`.
pub fn feature_weights_path(cfg: &TrainConfig) -> Option<PathBuf> {
    if !cfg.feature_weights.is_empty() {
        return Some(PathBuf::from(&cfg.feature_weights));
    }
    std::env::var_os("FEATURE_WEIGHTS").filter(|v| !v.is_empty()).map(PathBuf::from)
}

impl<T: Scalar> TrainContext<T> {
    pub fn new(cfg: &TrainConfig, dataset: &SceneDataset<f64>) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        if dataset.train.is_empty() {
            return Err(Error::InvalidArgument("dataset has no training views".into()));
        }
        let (w, h) = (dataset.width(), dataset.height());
        let foot = cfg.patch_size * cfg.patch_stride;
        let reg_foot = cfg.reg_patch_size * cfg.patch_stride;
        if foot > w || foot > h || reg_foot > w || reg_foot > h {
            return Err(Error::Config(format!("patch footprint {foot} px (reg {reg_foot} px) does not fit {w}x{h} images")));
        }
        if cfg.known_view_consistency && cfg.loss_mode != LossMode::None && dataset.train.len() < 2 {
            return Err(Error::Config("known-view consistency needs at least two training views".into()));
        }
        let extractor = match cfg.loss_mode {
            LossMode::Feature => Some(FeatureExtractor::new(&cfg.extractor, feature_weights_path(cfg).as_deref())?),
            _ => None,
        };
        let dataset: SceneDataset<T> = dataset.cast();
        let start = if cfg.progressive_pose { cfg.pose_range_start } else { cfg.pose_range_end };
        let sampler = PoseSampler::new(dataset.train_cameras(), T::of(start), T::of(cfg.pose_range_end), cfg.total_steps)?
            .with_orbit_center(dataset.scene_center);
        Ok(Self { cfg: cfg.clone(), dataset, extractor, sampler })
    }

    fn near_far(&self) -> (T, T) {
        (self.dataset.near, self.dataset.far)
    }
}

/// Independent generator for one loss term of one step.
fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_OBS: u64 = 1;
const STREAM_REG: u64 = 2;
const STREAM_CONS: u64 = 3;
const STREAM_MASK: u64 = 4;

/// Whether step `t` (0-based) evaluates the consistency term.
pub fn is_consistency_step(t: usize, cfg: &TrainConfig) -> bool {
    cfg.loss_mode != LossMode::None && (t + 1) % cfg.reg_step_period == 0
}

/// Runs one step and applies the update. On a non-finite loss or gradient, the state
/// is left untouched and an error carrying per-term diagnostics is returned.
pub fn train_step<T: Scalar>(state: &mut TrainState<T>, ctx: &TrainContext<T>) -> Result<LossReport> {
    let t = state.step;
    let cfg = &ctx.cfg;
    let rng_before = state.rng.clone();
    let seed: u64 = state.rng.gen();
    let mut grads = state.model.zero_grads();
    let mut report = LossReport::default();

    let outcome = accumulate(state, ctx, t, seed, &mut grads, &mut report).map_err(|e| match e {
        // NaN depths come from a diverged model, not from bad input
        Error::InvalidDepth { value, .. } if !value.is_finite() => Error::NonFinite { step: t, diagnostics: e.to_string() },
        e => e,
    });
    let finite_grads = grads.iter().all(|g| g.is_finite());
    if let Err(e) = outcome.and_then(|_| check_finite(t, &report, finite_grads)) {
        state.rng = rng_before;
        return Err(e);
    }

    let mut slices: Vec<&mut [T]> = vec![grads.coarse.as_mut_slice(), grads.fine.as_mut_slice()];
    report.grad_norm = clip_gradients(&mut slices, cfg.clip_value, cfg.clip_norm);
    let lr = lr_at(t, cfg);
    let grad_refs: Vec<&[T]> = vec![grads.coarse.as_slice(), grads.fine.as_slice()];
    let mut params = state.model.param_slices_mut();
    if params.len() == 1 {
        // no fine network: the fine gradient slice is empty
        state.optimizer.update(&mut params, &grad_refs[..1], lr);
    } else {
        state.optimizer.update(&mut params, &grad_refs, lr);
    }
    state.step += 1;
    state.running.add(&report);
    Ok(report)
}

fn check_finite(step: usize, r: &LossReport, finite_grads: bool) -> Result<()> {
    if r.is_valid() && finite_grads {
        return Ok(());
    }
    Err(Error::NonFinite {
        step,
        diagnostics: format!(
            "obs={} cons={:?} pix={:?} reg={} total={} finite_grads={finite_grads}",
            r.obs_loss, r.cons_loss, r.pix_loss, r.reg_loss, r.total
        ),
    })
}

fn accumulate<T: Scalar>(
    state: &TrainState<T>,
    ctx: &TrainContext<T>,
    t: usize,
    seed: u64,
    grads: &mut ModelGrads<T>,
    report: &mut LossReport,
) -> Result<()> {
    let cfg = &ctx.cfg;
    let model = &state.model;

    // the novel pose is drawn first so observation rays can optionally share its view
    let cons_step = is_consistency_step(t, cfg);
    let mut cons_rng = sub_rng(seed, STREAM_CONS);
    let mut cons_plan = None;
    if cons_step {
        cons_plan = Some(plan_consistency(ctx, t, &mut cons_rng)?);
    }

    let obs_view = match (&cons_plan, cfg.obs_from_reference_view) {
        (Some(p), true) => Some(p.source),
        _ => None,
    };
    report.obs_loss = observation_term(model, ctx, t, obs_view, &mut sub_rng(seed, STREAM_OBS), grads)?;
    report.total = report.obs_loss;

    if cfg.reg_weight > 0.0 {
        let reg = smoothness_term(model, ctx, t, &mut sub_rng(seed, STREAM_REG), grads)?;
        report.reg_loss = reg;
        report.total += cfg.reg_weight * reg;
    }

    if let Some(plan) = cons_plan {
        let lambda = cons_weight_at(t, cfg);
        let mut mask_rng = sub_rng(seed, STREAM_MASK);
        let c = consistency_term(model, ctx, t, plan, lambda, &mut cons_rng, &mut mask_rng, grads)?;
        match cfg.loss_mode {
            LossMode::Feature => report.cons_loss = Some(c.value),
            LossMode::Pixel => report.pix_loss = Some(c.value),
            LossMode::None => unreachable!("consistency step with loss_mode none"),
        }
        report.layers = c.layers;
        report.mask_fill = Some(c.mask_fill);
        report.total += lambda * c.value;
        if let Some(r) = c.novel_reg {
            report.reg_loss += r;
            report.total += cfg.reg_weight * r;
        }
    }
    Ok(())
}

/// Mean squared color error over random training rays, summed over both levels.
fn observation_term<T: Scalar, R: Rng>(
    model: &RadianceModel<T>,
    ctx: &TrainContext<T>,
    t: usize,
    only_view: Option<usize>,
    rng: &mut R,
    grads: &mut ModelGrads<T>,
) -> Result<f64> {
    let ds = &ctx.dataset;
    let (w, h) = (ds.width(), ds.height());
    let n = ctx.cfg.obs_rays;
    let (near, far) = ctx.near_far();
    let mut origins = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let view = only_view.unwrap_or_else(|| ds.train[rng.gen_range(0..ds.train.len())]);
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let cam = &ds.cameras[view];
        origins.push(cam.position);
        dirs.push(cam.ray_direction(T::of_usize(x) + T::of(0.5), T::of_usize(y) + T::of(0.5)));
        target.extend_from_slice(ds.images[view].pixel(x, y));
    }
    let rays = RayBatch::new(origins, dirs, near, far)?;
    let out = model.render(&rays, t, true, true, rng)?;
    let scale = T::one() / T::of_usize(3 * n);
    let mut total = 0.0;
    let mut level_grads = Vec::new();
    for level in out.levels() {
        let mut g = LevelGrad::zeros(n);
        let mut sum = T::zero();
        for (i, (&c, &gt)) in level.result.color.iter().zip(&target).enumerate() {
            let d = c - gt;
            sum += d * d;
            g.color[i] = T::of(2.0) * d * scale;
        }
        total += (sum * scale).as_f64();
        level_grads.push(g);
    }
    let fine = level_grads.get(1);
    model.backward(&out, Some(&level_grads[0]), fine, grads)?;
    Ok(total)
}

fn random_origin<R: Rng>(rng: &mut R, w: usize, h: usize, foot: usize) -> [usize; 2] {
    [rng.gen_range(0..=w - foot), rng.gen_range(0..=h - foot)]
}

/// Edge-aware disparity smoothness on a patch of a training view.
fn smoothness_term<T: Scalar, R: Rng>(
    model: &RadianceModel<T>,
    ctx: &TrainContext<T>,
    t: usize,
    rng: &mut R,
    grads: &mut ModelGrads<T>,
) -> Result<f64> {
    let ds = &ctx.dataset;
    let cfg = &ctx.cfg;
    let view = ds.train[rng.gen_range(0..ds.train.len())];
    let foot = cfg.reg_patch_size * cfg.patch_stride;
    let origin = random_origin(rng, ds.width(), ds.height(), foot);
    let (near, far) = ctx.near_far();
    let size = [cfg.reg_patch_size; 2];
    let render = render_patch(model, &ds.cameras[view], origin, size, cfg.patch_stride, near, far, t, true, rng)?;
    let gt = ds.images[view].crop(origin[0], origin[1], foot, foot)?;
    let (loss, d_depth) = disparity_smoothness(&render.depth_full, &gt)?;
    let d_depth = d_depth.map(|g| g * T::of(cfg.reg_weight));
    render_patch_backward(model, &render, None, Some(&d_depth), grads)?;
    Ok(loss.as_f64())
}

/// Target camera and source view of a consistency step.
struct ConsistencyPlan<T> {
    /// Training view whose image is warped.
    source: usize,
    /// Training view used as the target in known-view mode.
    known_target: Option<usize>,
    target: Camera<T>,
}

fn plan_consistency<T: Scalar, R: Rng>(ctx: &TrainContext<T>, t: usize, rng: &mut R) -> Result<ConsistencyPlan<T>> {
    let ds = &ctx.dataset;
    if ctx.cfg.known_view_consistency {
        let a = rng.gen_range(0..ds.train.len());
        let mut b = rng.gen_range(0..ds.train.len() - 1);
        if b >= a {
            b += 1;
        }
        let (source, target) = (ds.train[a], ds.train[b]);
        return Ok(ConsistencyPlan { source, known_target: Some(target), target: ds.cameras[target].clone() });
    }
    let pose = ctx.sampler.sample(t.min(ctx.sampler.total_steps), rng)?;
    Ok(ConsistencyPlan { source: ds.train[pose.reference], known_target: None, target: pose.camera })
}

/// Value and parameter gradient of the consistency term for an explicit target view,
/// weighted by `lambda`. Runs the same path as [`train_step`].
#[allow(clippy::too_many_arguments)]
pub fn consistency_gradients<T: Scalar, R: Rng, M: Rng>(
    model: &RadianceModel<T>,
    ctx: &TrainContext<T>,
    t: usize,
    source: usize,
    target: &Camera<T>,
    known_target: Option<usize>,
    lambda: f64,
    rng: &mut R,
    mask_rng: &mut M,
) -> Result<(f64, ModelGrads<T>)> {
    if ctx.cfg.loss_mode == LossMode::None {
        return Err(Error::Config("no consistency loss configured".into()));
    }
    let mut grads = model.zero_grads();
    let plan = ConsistencyPlan { source, known_target, target: target.clone() };
    let out = consistency_term(model, ctx, t, plan, lambda, rng, mask_rng, &mut grads)?;
    Ok((out.value, grads))
}

struct ConsistencyOutcome {
    value: f64,
    layers: Vec<crate::consistency::LayerTerm>,
    mask_fill: f64,
    novel_reg: Option<f64>,
}

/// What the consistency term compares and where its gradient enters.
pub struct ConsistencyPatch<T> {
    pub render: PatchRender<T>,
    /// Target camera cropped to the patch footprint.
    pub target_crop: Camera<T>,
    pub bundle: WarpBundle<T>,
    pub mask: OcclusionMask<T>,
}

/// Renders the target patch, warps the source image into it and builds the mask.
#[allow(clippy::too_many_arguments)]
pub fn prepare_consistency_patch<T: Scalar, R: Rng, M: Rng>(
    model: &RadianceModel<T>,
    ctx: &TrainContext<T>,
    t: usize,
    source: usize,
    target: &Camera<T>,
    origin: Option<[usize; 2]>,
    rng: &mut R,
    mask_rng: &mut M,
) -> Result<ConsistencyPatch<T>> {
    let cfg = &ctx.cfg;
    let ds = &ctx.dataset;
    let (near, far) = ctx.near_far();
    let foot = cfg.patch_size * cfg.patch_stride;
    let origin = match origin {
        Some(o) => o,
        None => random_origin(rng, target.width, target.height, foot),
    };
    let render = render_patch(model, target, origin, [cfg.patch_size; 2], cfg.patch_stride, near, far, t, true, rng)?;
    let target_crop = target.crop(origin[0], origin[1], foot, foot)?;
    let source_cam = &ds.cameras[source];
    let bundle = warp_image(&ds.images[source], &render.depth_full, &target_crop, source_cam)?;
    let mask = if cfg.mask_enabled {
        match source_depth_crop(model, ctx, t, source_cam, &bundle, mask_rng)? {
            Some((crop_cam, depth_i)) => {
                let tau = T::of(cfg.mask_threshold(near.as_f64(), far.as_f64()));
                occlusion_mask(&render.depth_full, &depth_i, &target_crop, &crop_cam, tau, cfg.mask_metric)?
                    .and(&bundle.in_bounds)?
            }
            None => OcclusionMask::filled(foot, foot, false),
        }
    } else {
        OcclusionMask::from_values(foot, foot, bundle.in_bounds.clone())?
    };
    Ok(ConsistencyPatch { render, target_crop, bundle, mask })
}

/// Forward-only surface depth of the source view over the bounding box of the warp's
/// sampling coordinates, on a grid of at most `mask_grid_max` rays per side.
fn source_depth_crop<T: Scalar, R: Rng>(
    model: &RadianceModel<T>,
    ctx: &TrainContext<T>,
    t: usize,
    cam: &Camera<T>,
    bundle: &WarpBundle<T>,
    rng: &mut R,
) -> Result<Option<(Camera<T>, DepthMap<T>)>> {
    let (w, h) = (cam.width, cam.height);
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    for (uv, _) in bundle.coords.iter().zip(&bundle.in_bounds).filter(|(_, &ok)| ok) {
        let uv = uv.expect("in-bounds pixels have coordinates");
        for a in 0..2 {
            let base = (uv[a] - T::of(0.5)).floor().to_usize().unwrap_or(0);
            lo[a] = lo[a].min(base);
            hi[a] = hi[a].max(base + 1);
        }
    }
    if lo[0] == usize::MAX {
        return Ok(None);
    }
    hi = [hi[0].min(w - 1), hi[1].min(h - 1)];
    let span = (hi[0] - lo[0] + 1).max(hi[1] - lo[1] + 1);
    let stride = span.div_ceil(ctx.cfg.mask_grid_max).max(1);
    let mut grid = [0usize; 2];
    let mut origin = [0usize; 2];
    for a in 0..2 {
        let extent = [w, h][a];
        grid[a] = ((hi[a] - lo[a]).div_ceil(stride) + 1).min(extent / stride).max(1);
        origin[a] = lo[a].min(extent - grid[a] * stride);
    }
    let (near, far) = ctx.near_far();
    let patch = make_patch_rays(cam, origin, grid, stride, near, far)?;
    let out = model.render(&patch.rays, t, false, false, rng)?;
    let res = out.result();
    let surface: Vec<T> = res.depth.iter().zip(&res.residual).map(|(&d, &a)| d + a * far).collect();
    let depth = upsample_strided(&Image::from_vec(grid[0], grid[1], 1, surface)?, stride);
    let crop = cam.crop(origin[0], origin[1], grid[0] * stride, grid[1] * stride)?;
    Ok(Some((crop, depth)))
}

#[allow(clippy::too_many_arguments)]
fn consistency_term<T: Scalar, R: Rng, M: Rng>(
    model: &RadianceModel<T>,
    ctx: &TrainContext<T>,
    t: usize,
    plan: ConsistencyPlan<T>,
    lambda: f64,
    rng: &mut R,
    mask_rng: &mut M,
    grads: &mut ModelGrads<T>,
) -> Result<ConsistencyOutcome> {
    let cfg = &ctx.cfg;
    let cp = prepare_consistency_patch(model, ctx, t, plan.source, &plan.target, None, rng, mask_rng)?;
    let lam = T::of(lambda);
    let rendered = cp.render.color_full();
    let mask_fill = cp.mask.fill_ratio();

    if let Some(j) = plan.known_target {
        // known view: the warped source is compared with ground truth and the gradient
        // reaches geometry through the sampling coordinates
        let [x0, y0] = cp.render.patch.origin;
        let (fw, fh) = cp.render.patch.footprint();
        let gt = ctx.dataset.images[j].crop(x0, y0, fw, fh)?;
        let (value, layers, d_warped) = compare(ctx, &gt, &cp.bundle.warped, &cp.mask)?;
        let d_depth = warp_image_depth_backward(&cp.bundle, &ctx.dataset.images[plan.source], &cp.render.depth_full, &d_warped)?;
        let d_depth = d_depth.map(|g| g * lam);
        render_patch_backward(model, &cp.render, None, Some(&d_depth), grads)?;
        return Ok(ConsistencyOutcome { value, layers, mask_fill, novel_reg: None });
    }

    // novel view: the warped branch is a constant target for the rendered patch
    let (value, layers, d_rendered) = compare(ctx, &cp.bundle.warped, &rendered, &cp.mask)?;
    let d_color = d_rendered.map(|g| g * lam);
    let mut novel_reg = None;
    let mut d_depth = None;
    if cfg.reg_at_novel_views && cfg.reg_weight > 0.0 {
        let detached = rendered.clone();
        let (r, dd) = disparity_smoothness(&cp.render.depth_full, &detached)?;
        novel_reg = Some(r.as_f64());
        d_depth = Some(dd.map(|g| g * T::of(cfg.reg_weight)));
    }
    render_patch_backward(model, &cp.render, Some(&d_color), d_depth.as_ref(), grads)?;
    Ok(ConsistencyOutcome { value, layers, mask_fill, novel_reg })
}

/// The configured masked distance and its gradient with respect to `b`.
fn compare<T: Scalar>(
    ctx: &TrainContext<T>,
    a: &Image<T>,
    b: &Image<T>,
    mask: &OcclusionMask<T>,
) -> Result<(f64, Vec<crate::consistency::LayerTerm>, Image<T>)> {
    match ctx.cfg.loss_mode {
        LossMode::Feature => {
            let ext = ctx.extractor.as_ref().expect("feature mode builds an extractor");
            let (loss, d) = masked_consistency_loss_grad(ext, a, b, mask)?;
            Ok((loss.value.as_f64(), loss.layers, d))
        }
        LossMode::Pixel => {
            let (v, d) = pixel_loss(a, b, mask)?;
            Ok((v.as_f64(), Vec::new(), d))
        }
        LossMode::None => Err(Error::Config("no consistency loss configured".into())),
    }
}
