//! Training configuration: a flat TOML table with one key per field.

use crate::data::dataset_hex as hex;
use crate::geometry::MaskMetric;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Masked multi-layer feature distance.
    Feature,
    /// Masked mean absolute color difference.
    Pixel,
    /// No consistency term (plain radiance-field training).
    None,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(Self::Feature),
            "pixel" => Ok(Self::Pixel),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown loss_mode {other:?} (feature, pixel, none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    // data
    /// `synthetic`, `blender` or `llff`.
    pub dataset: String,
    /// Scene directory for on-disk datasets.
    pub data_dir: String,
    /// Generator scene for `dataset = "synthetic"`.
    pub synthetic_scene: String,
    pub resolution: usize,
    pub n_train_views: usize,
    pub n_test_views: usize,
    pub data_seed: u64,
    pub downscale: usize,
    /// Cap on loaded test views (0 keeps all).
    pub max_test_views: usize,

    // optimization
    pub seed: u64,
    pub total_steps: usize,
    pub lr_warmup_steps: usize,
    pub lr_peak: f64,
    pub lr_min: f64,
    pub clip_value: f64,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    // loss weights
    pub cons_weight_base: f64,
    pub cons_decay_scale: f64,
    pub reg_weight: f64,
    /// Also apply the smoothness term on the novel-view patch.
    pub reg_at_novel_views: bool,
    pub loss_mode: LossMode,
    pub reg_step_period: usize,

    // field
    pub num_freqs_pos: usize,
    pub num_freqs_dir: usize,
    pub anneal_steps: usize,
    pub anneal_positions: bool,
    pub anneal_directions: bool,
    pub net_depth: usize,
    pub net_width: usize,
    pub head_width: usize,
    pub n_coarse: usize,
    pub n_fine: usize,

    // rays and patches
    pub obs_rays: usize,
    /// Draw observation rays from the consistency step's reference view only.
    pub obs_from_reference_view: bool,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub reg_patch_size: usize,
    /// Largest grid side rendered for the source-view depth used by the mask.
    pub mask_grid_max: usize,

    // consistency
    pub progressive_pose: bool,
    pub pose_range_start: f64,
    pub pose_range_end: f64,
    pub mask_enabled: bool,
    /// Mask threshold as a fraction of `far - near`.
    pub mask_threshold_rel: f64,
    pub mask_metric: MaskMetric,
    pub known_view_consistency: bool,
    pub extractor: String,
    /// Weight file for the pretrained extractor (falls back to `FEATURE_WEIGHTS`).
    pub feature_weights: String,

    // bookkeeping
    pub log_every: usize,
    /// Held-out evaluation period (0: only at the end).
    pub eval_every: usize,
    /// Checkpoint period (0: only at the end).
    pub ckpt_every: usize,
    pub render_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            data_dir: String::new(),
            synthetic_scene: "textured-cube".into(),
            resolution: 64,
            n_train_views: 3,
            n_test_views: 8,
            data_seed: 0,
            downscale: 1,
            max_test_views: 0,
            seed: 0,
            total_steps: 70_000,
            lr_warmup_steps: 5_000,
            lr_peak: 5e-4,
            lr_min: 5e-6,
            clip_value: 0.1,
            clip_norm: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            cons_weight_base: 1.0,
            cons_decay_scale: 20_000.0,
            reg_weight: 0.01,
            reg_at_novel_views: false,
            loss_mode: LossMode::Feature,
            reg_step_period: 1,
            num_freqs_pos: 10,
            num_freqs_dir: 4,
            anneal_steps: 15_000,
            anneal_positions: true,
            anneal_directions: false,
            net_depth: 4,
            net_width: 128,
            head_width: 64,
            n_coarse: 32,
            n_fine: 32,
            obs_rays: 1024,
            obs_from_reference_view: false,
            patch_size: 60,
            patch_stride: 2,
            reg_patch_size: 16,
            mask_grid_max: 64,
            progressive_pose: true,
            pose_range_start: 3.0,
            pose_range_end: 9.0,
            mask_enabled: true,
            mask_threshold_rel: 0.05,
            mask_metric: MaskMetric::PointDistance,
            known_view_consistency: false,
            extractor: "vgg19".into(),
            feature_weights: String::new(),
            log_every: 100,
            eval_every: 0,
            ckpt_every: 0,
            render_chunk: 4096,
        }
    }
}

/// Scales a step count from the 70k-step schedule to `total`.
fn scaled(steps: usize, total: usize) -> usize {
    ((steps as f64 * total as f64 / 70_000.0).round() as usize).max(1)
}

impl TrainConfig {
    /// Small CPU preset: 64x64 synthetic cube, 3 views, 2k steps, small network, random
    /// feature extractor, schedules compressed in proportion to the step budget.
    pub fn desk() -> Self {
        let total = 2_000;
        Self {
            total_steps: total,
            lr_warmup_steps: scaled(5_000, total),
            lr_peak: 5e-3,
            lr_min: 5e-5,
            cons_decay_scale: scaled(20_000, total) as f64,
            anneal_steps: scaled(15_000, total),
            num_freqs_pos: 6,
            num_freqs_dir: 2,
            net_depth: 3,
            net_width: 64,
            head_width: 32,
            n_coarse: 24,
            n_fine: 24,
            obs_rays: 256,
            patch_size: 12,
            reg_patch_size: 8,
            mask_grid_max: 16,
            extractor: "random-small".into(),
            log_every: 50,
            eval_every: 0,
            ckpt_every: 0,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// Applies `key=value` overrides. Values are parsed as TOML scalars, falling back to
    /// a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim();
            if !table.contains_key(key) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
            table.insert(key.to_string(), parse_value(value.trim()));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("resolution", self.resolution),
            ("n_train_views", self.n_train_views),
            ("downscale", self.downscale),
            ("lr_warmup_steps", self.lr_warmup_steps),
            ("anneal_steps", self.anneal_steps),
            ("net_depth", self.net_depth),
            ("net_width", self.net_width),
            ("head_width", self.head_width),
            ("obs_rays", self.obs_rays),
            ("patch_size", self.patch_size),
            ("patch_stride", self.patch_stride),
            ("reg_patch_size", self.reg_patch_size),
            ("mask_grid_max", self.mask_grid_max),
            ("reg_step_period", self.reg_step_period),
            ("log_every", self.log_every),
            ("render_chunk", self.render_chunk),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{k} must be positive"));
        }
        if self.n_coarse < 2 {
            return bad("n_coarse must be at least 2".into());
        }
        let weights = [
            ("lr_peak", self.lr_peak),
            ("lr_min", self.lr_min),
            ("clip_value", self.clip_value),
            ("clip_norm", self.clip_norm),
            ("cons_weight_base", self.cons_weight_base),
            ("reg_weight", self.reg_weight),
            ("mask_threshold_rel", self.mask_threshold_rel),
            ("pose_range_start", self.pose_range_start),
        ];
        if let Some((k, v)) = weights.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("{k} = {v} must be a finite non-negative number"));
        }
        if self.lr_min > self.lr_peak {
            return bad("lr_min exceeds lr_peak".into());
        }
        if !(self.cons_decay_scale > 0.0) {
            return bad("cons_decay_scale must be positive".into());
        }
        if self.pose_range_end < self.pose_range_start {
            return bad("pose_range_end is below pose_range_start".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam parameters out of range".into());
        }
        if !["synthetic", "blender", "llff"].contains(&self.dataset.as_str()) {
            return bad(format!("unknown dataset {:?}", self.dataset));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization (fields in declaration order).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn mask_threshold(&self, near: f64, far: f64) -> f64 {
        self.mask_threshold_rel * (far - near)
    }
}

fn parse_value(v: &str) -> toml::Value {
    let probe = format!("v = {v}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").expect("probe key"),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig::desk();
        let back = TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn overrides() {
        let cfg = TrainConfig::default()
            .with_overrides(&["loss_mode=none", "lr_peak=1e-3", "extractor=random-small", "mask_enabled=false"])
            .unwrap();
        assert_eq!(cfg.loss_mode, LossMode::None);
        assert_eq!(cfg.lr_peak, 1e-3);
        assert_eq!(cfg.extractor, "random-small");
        assert!(!cfg.mask_enabled);
        assert_ne!(cfg.hash(), TrainConfig::default().hash());
        assert!(TrainConfig::default().with_overrides(&["no_such_key=1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["loss_mode=bogus"]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(TrainConfig::from_toml_str("total_steps = 10\nfoo = 1").is_err());
        let cfg = TrainConfig::from_toml_str("total_steps = 10").unwrap();
        assert_eq!(cfg.total_steps, 10);
    }

    #[test]
    fn invalid_values() {
        assert!(TrainConfig::default().with_overrides(&["reg_weight=-1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["patch_stride=0"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["pose_range_end=1"]).is_err());
    }
}
