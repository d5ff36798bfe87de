//! Trainable model components: the dual-branch control-signal pipeline, the
//! general/individual deformation field stack, and the coarse-to-fine image
//! refiner.

pub mod deform;
pub mod refiner;
pub mod signals;

pub use deform::{
    combine_apply, deform_frame, ActivatedSplats, AttributeSet, DeformField, DeformRouting,
    FieldDelta, FieldSizes, FieldStack, FrameDeltas, StaticVars,
};
pub use refiner::{train_refiner, Refiner, RefinerTrainConfig, RefinerTrainReport};
pub use signals::{
    motion_difference, region_enhance, SignalPipeline, AUDIO_COLS, AUDIO_ROWS, MOTION_SIZE,
    SIGNAL_DIM,
};
