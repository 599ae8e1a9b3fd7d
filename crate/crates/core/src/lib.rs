//! Multi-axis external weights (MEW) blocks and the MEW-UNet segmentation
//! network, on top of a small reverse-mode tensor engine.
//!
//! Module map:
//! - [`tensor`]: dense NCHW tensors, the recording graph, parameters;
//! - [`spectral`]: FFTs, axis-pair real transforms, spectral modulation;
//! - [`mew`]: the four-branch mixer, weight generator, and transformer block;
//! - [`unet`]: the five-stage encoder/decoder and checkpoint files;
//! - [`metrics`]: overlap scores and HD95;
//! - [`data`]: PGM I/O, synthetic datasets, augmentation, batching;
//! - [`train`]: loss, optimizers, schedule, training and evaluation loops.

pub mod check;
pub mod data;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod mew;
pub mod nn;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{MewError, Result};
pub use spectral::{AxisPair, HalfSpectrum};
pub use data::{Dataset, Manifest, Sample, Split};
pub use metrics::{MetricsReport, SegmentationMask};
pub use tensor::{Graph, ParamId, ParamStore, Session, Tensor, Var};
pub use train::{TrainConfig, Trainer};
pub use unet::{Checkpoint, MewUnet, NetworkConfig};
