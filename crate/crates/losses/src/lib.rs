//! Training losses and evaluation metrics: pixel and structural terms,
//! softmax-cosine contrastive decoupling losses, a frozen random-feature
//! perceptual proxy, and the depth geometry regularizer.

pub mod compose;
pub mod contrastive;
pub mod geo;
pub mod metrics;
pub mod perceptual;

pub use compose::{adapt_loss, c2f_loss, pretrain_loss, LossWeights, TermLog};
pub use contrastive::{cosine_sim, nc_loss_adapt, nc_loss_pretrain, sc_loss};
pub use geo::geo_loss;
pub use metrics::{dssim_loss, l1_loss, psnr, ssim, ssim_value};
pub use perceptual::PerceptualProxy;
