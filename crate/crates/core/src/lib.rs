//! Coupled aging dictionaries: learning from same-subject face pairs of
//! neighbouring age groups, and chained age-progression synthesis.

pub mod dataset;
pub mod dictionary_learning;
pub mod error;
pub mod model;
pub mod model_store;
pub mod planted;
pub mod projection;
pub mod sparse_coding;
pub mod synthesis;

pub use dataset::{AverageFaceSet, DatasetBundle, DatasetDims, FacePairSet};
pub use dictionary_learning::{train, TrainOutput};
pub use error::{Error, Result};
pub use model::{AgingDictionary, AgingModel, HyperParams, TrainingLogRow};
pub use projection::ProjectionBasis;
pub use synthesis::{synthesize_sequence, synthesize_step, AgingSequence, SignConvention, SynthesisRequest};
