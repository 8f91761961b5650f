//! Learning-rate and consistency-weight schedules.

use super::TrainConfig;
use std::f64::consts::PI;

/// Linear warmup from 0 to `lr_peak`, then cosine decay to `lr_min` at `total_steps`.
/// Steps past the end stay at `lr_min`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.lr_warmup_steps;
    if step < warm {
        return cfg.lr_peak * step as f64 / warm as f64;
    }
    if cfg.total_steps <= warm {
        return cfg.lr_peak;
    }
    let progress = ((step - warm) as f64 / (cfg.total_steps - warm) as f64).min(1.0);
    // convex blend so both endpoints are hit exactly
    let c = 0.5 * (1.0 + (PI * progress).cos());
    cfg.lr_min * (1.0 - c) + cfg.lr_peak * c
}

/// `lambda_0 * exp(-t / scale)`.
pub fn cons_weight_at(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.cons_weight_base * (-(step as f64) / cfg.cons_decay_scale).exp()
}
