//! Video language modeling: grayscale video is quantized into a dictionary of
//! 8×8 patch atoms, and count-based, neural and recurrent-convolutional models
//! predict the next atom at every location. On top of the predictors sit
//! evaluation (bits/patch, perplexity, RMSE), multi-frame generation and
//! iterative frame filling.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod neural_lms;
pub mod ngram;
pub mod numerics;
pub mod quantizer;
pub mod rcnn;
pub mod synth;
pub mod tasks;

pub use error::{Error, Result};
