//! Procedures on top of trained predictors: scoring, reconstruction error,
//! generation, frame filling, order and layout diagnostics, and
//! visualizations of what the models learned.

mod diagnose;
mod filling;
mod generate;
mod predict;
mod rmse;
mod viz;

pub use diagnose::{diagnose_static_dynamic, CONDITIONS};
pub use filling::{
    fill, fill_examples, fill_frames, linear_interpolation_baseline, train_filling_model, FillExample, FillingModel,
    DEFAULT_FILL_HIDDEN, DEFAULT_FILL_ITERS, FILL_RING, FILL_SLOTS,
};
pub use generate::{generate, GenerateConfig, Generation};
pub use predict::{evaluate, video_nats, EvalReport, FramePredictor, OraclePredictor, Visit};
pub use rmse::{model_rmse, RmseReport};
pub use viz::{centroid_strip, embedding_neighbors, hits_image, top_activating_patches, UnitHit};
