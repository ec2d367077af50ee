//! Patch quantization: preprocessing, k-means codebooks, frame encode/decode,
//! shift-averaged reconstruction and quantization error.

mod codebook;
mod kmeans;
mod shift;
mod video;

pub use codebook::{
    decode_grid, encode_frame, encode_video, encode_video_at, sq_dist, AtomGrid, Codebook, QuantizedVideo,
    CODEBOOK_MAGIC, FORMAT_VERSION, QUANTIZED_MAGIC,
};
pub use kmeans::{fit_codebook, sample_patches, FitTrace, PatchSet};
pub use shift::{
    offsets, quantization_rmse, quantize_reconstruct_frame, rmse_0_255, shift_average_reconstruct,
    ShiftAccumulator,
};
pub use video::{crop_frame, preprocess, Video};
