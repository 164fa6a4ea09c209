//! Historical data reuse for conversion-rate prediction under promotion
//! shift: synthetic clickstream, day-vector retrieval, label-shift correction,
//! TransBlock fine-tuning, metrics and the daily simulation pipeline.

pub mod checkpoint;
pub mod cvrmodel;
pub mod dayvec;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod shiftcorr;
pub mod store;
pub mod synthgen;
pub mod transblock;

pub use checkpoint::Checkpoint;
pub use cvrmodel::{CvrModel, Example, HiddenSource, ModelConfig, TrainConfig, Trainer};
pub use dayvec::{DayVector, RetrievalResult};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use pipeline::{Arm, ExperimentConfig, ExperimentReport, Simulation, Variant};
pub use shiftcorr::{ShiftConfig, ShiftEstimate, ShiftMode};
pub use store::{DayLog, DayStore, MemoryStore};
pub use synthgen::{ClickEvent, DayType, Features, GeneratorConfig, GroundTruth, PromotionCalendar};
pub use transblock::{FinetuneConfig, FinetunedModel, Predictor, TransBlock};
