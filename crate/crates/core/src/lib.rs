//! Knowledge-graph embeddings with variational quantum circuits, simulated on
//! dense statevectors, plus classical tensor-factorization baselines.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod circuits;
pub mod error;
pub mod evalrank;
pub mod inference;
pub mod kgdata;
pub mod model;
pub mod qsim;
pub mod qtree;
pub mod rng;
pub mod scoring;
pub mod training;

pub use baselines::{ClassicalModel, LossKind};
pub use checkpoint::ModelCheckpoint;
pub use circuits::{CircuitSpec, CompiledCircuit, ParamStore};
pub use error::{Error, Result};
pub use evalrank::{evaluate, Direction, EvalOptions, Metrics, RankResult};
pub use kgdata::{KnowledgeGraph, Split, Triple, Vocab};
pub use model::{EntityRepr, Model, ModelKind, QuantumContext, QuantumModel};
pub use qsim::{EulerGate, Mat2, StateVector, C64};
pub use qtree::AmplitudeTree;
pub use scoring::TripleScore;
pub use training::{fit, init_model, train_epoch, TrainConfig};
