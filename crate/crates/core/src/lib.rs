//! Self-supervised HDR reconstruction from dynamic multi-exposure LDR
//! triplets.
//!
//! The pipeline builds its own supervision from the inputs: a color component
//! (flow-aligned weighted merge of the linearized exposures, [`supervision`])
//! and a structure component (the output of a structure-focused network
//! trained against the color component and the reference frame). A
//! reconstruction network is then trained under masked tone-mapped losses
//! against both components ([`losses`], [`training`]) and deployed flow-free
//! at test time.
//!
//! Modules follow the processing order: [`radiometry`] (elementwise
//! transforms), [`alignment`] (optical flow and warping), [`supervision`]
//! (components and masks), [`models`] (the merging CNN), [`training`] (the
//! two phases), [`data`] (scene I/O and the synthetic oracle) and
//! [`metrics`] (evaluation).

pub mod alignment;
pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod radiometry;
pub mod supervision;
pub mod training;

pub(crate) mod filters;

pub use alignment::{AlignedStack, FlowAlgorithm, FlowEstimatorSpec, FlowField};
pub use config::PipelineConfig;
pub use error::Error;
pub use image::{ExposureImage, HdrImage, HdrRole, LinearImage, Mask, WeightMap};
pub use losses::{FeatureExtractor, LossConfig};
pub use metrics::{MetricReport, MetricValues};
pub use models::{build_model, Model, ModelSpec, NetworkInput};
pub use radiometry::RadiometryConfig;
pub use supervision::ThresholdConfig;
pub use training::{PhaseReport, TrainConfig, TrainingSample};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
