//! Feature extractors and the losses built on them.

mod features;
mod losses;

pub use features::{ExtractorKind, FeatureCache, FeatureExtractor, FeaturePyramid};
pub use losses::{
    disparity_smoothness, masked_consistency_loss, masked_consistency_loss_grad, pixel_loss, ConsistencyLoss, LayerTerm,
    LossReport,
};
