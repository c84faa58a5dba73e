//! Neural cellular automata that grow and drive modular robots, optimized with
//! CMA-ES and CMA-ME.
//!
//! The crate is organised bottom-up:
//!
//! * [`nca`] grows a body on a grid and later routes sensor values to wheels.
//! * [`morphology`] turns a grown grid into typed modules and checks validity.
//! * [`sim`] provides the top-down physics, task scenarios and fitness.
//! * [`cmaes`] and [`cmame`] are the optimizers.
//! * [`harness`] wires everything into training, evaluation and rendering runs.

pub mod binio;
pub mod cmaes;
pub mod cmame;
pub mod config;
pub mod error;
pub mod genome_io;
pub mod harness;
pub mod morphology;
pub mod nca;
pub mod rng;
pub mod sim;
pub mod task;

pub use cmaes::{CmaConfig, CmaState};
pub use cmame::{describe, Archive, CmaMe, Elite, FeatureDescriptor, InsertOutcome, QdMetrics};
pub use config::{Optimizer, RunConfig};
pub use error::{Error, Result};
pub use morphology::{ModuleKind, Morphology, ValidityReport};
pub use nca::{genome_length, Activation, CellGrid, ChannelLayout, Genome, Nca};
pub use sim::episode::{evaluate_genome, EvalSettings, FitnessReport};
pub use task::Task;
