//! Differentiable CPU splatting of Gaussian head fields: perspective + EWA
//! projection, depth-sorted front-to-back compositing into RGB, depth, and
//! transmittance, and a full hand-written backward pass to every Gaussian
//! attribute.

pub mod png;
pub mod project;
pub mod render;

pub use project::{project, project_backward, Projected, ProjectOutcome};
pub use render::{
    composite_pixel, render, render_backward, render_var, split_render, RenderGrads,
    RenderOptions, RenderOutput, RenderStats, SplatInputs,
};
