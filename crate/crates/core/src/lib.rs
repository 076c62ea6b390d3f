//! CPU inference engine for the YOLOv10-nano detector.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: NCHW tensors and numeric kernels (conv, pooling, attention matmuls).
//! - [`blocks`]: YOLOv10 building blocks on BatchNorm-folded weights.
//! - [`graph`]: the nano topology, forward execution and parameter/FLOP accounting.
//! - [`weights`]: the FWC1 weight container and graph binding.
//! - [`prepost`]: letterbox preprocessing and NMS-free one2one decoding.
//! - [`metrics`]: COCO-style AP, mAP50 and mAP50:95.
//! - [`pipeline`]: frame sources, detection/counting, benchmarking and the CLI commands.

pub mod blocks;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod prepost;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
