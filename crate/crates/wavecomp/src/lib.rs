//! Compress grayscale document images into a resolution-progressive wavelet
//! codestream, decode it fully or partially, classify documents from the
//! partially decoded coefficients with a small CNN, and benchmark the
//! decode/classify pipeline.

pub mod archive;
pub mod bench;
pub mod codec;
pub mod image;
pub mod classifier;
pub mod metrics;
pub mod nn;
pub mod wavelet;
