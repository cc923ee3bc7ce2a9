//! BasisFormer: time-series forecasting with learnable, interpretable bases.
//!
//! A basis network maps a window's timestamp to `N` reference sequences
//! spanning history and horizon. A bidirectional cross-attention network
//! scores how similar each series is to each basis over its history, and the
//! forecast is the coefficient-weighted sum of the bases' future parts.

pub mod ablation;
pub mod autodiff;
pub mod basis;
pub mod checkpoint;
pub mod coef;
pub mod config;
pub mod data;
pub mod error;
pub mod forecast;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use ablation::{run_ablation, AblationGrid, AblationTable, LossArm, Variant};
pub use autodiff::{grad_check, Activation, Graph, Var};
pub use basis::{BasisKind, BasisTensor};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use losses::{LossComponents, LossWeights};
pub use model::BasisFormer;
pub use optim::{AdaBelief, AdaBeliefConfig};
pub use tensor::Tensor;
pub use train::{evaluate, train, Metrics, StopReason, TrainOutcome, TrainReport};
pub use data::{Dataset, Normalizer, RawSeries, Split, SynthSpec};
