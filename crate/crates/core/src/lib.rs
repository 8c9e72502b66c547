//! Interactive classification: a Bayesian belief over labels that is refined
//! by asking the most informative clarification question each turn, with a
//! small learned controller deciding when to stop and predict.

pub mod belief;
pub mod dataset;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod math;
pub mod policy;
pub mod selection;
pub mod service;
pub mod simulator;

pub use belief::{Answer, BeliefState, LikelihoodTable, ResponseConfig, ResponseModel};
pub use dataset::{AnnotationRecord, Corpus, Label, LabelCatalog, Question, QuestionBank, QuestionKind, Split};
pub use encoder::{EncoderModel, TrainConfig};
pub use engine::Engine;
pub use error::{Error, Result};
pub use policy::{PolicyModel, PolicyTrainConfig, RewardConfig};
pub use simulator::SimulatorModel;
