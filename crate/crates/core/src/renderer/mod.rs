//! Volume rendering: sampling along rays, compositing, and strided patches.

mod model;
mod patch;
mod samples;
mod volume;

pub use model::{LevelGrad, LevelOutput, ModelGrads, ModelOutput, RadianceModel};
pub use patch::{render_patch, render_patch_backward, PatchRender};
pub use samples::{hierarchical_resample, stratified_samples, SampleSet};
pub use volume::{composite, composite_backward, render_backward, render_rays, RenderCache, RenderResult};
