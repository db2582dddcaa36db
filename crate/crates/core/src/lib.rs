pub mod config;
pub mod cli;
pub mod dataset;
pub mod desk;
pub mod encoder;
pub mod error;
pub mod evalsuite;
pub mod negatives;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod plot;
pub mod seeding;
pub mod trainer;
pub mod viewgen;

pub use error::{Error, Result};
