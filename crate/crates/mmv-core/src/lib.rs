//! Particle toolkit for fully coupled two-scale McKean-Vlasov systems.
//!
//! The crate simulates interacting slow–fast particle systems whose
//! coefficients read the empirical laws of both components, estimates the
//! self-consistent invariant-measure family of the frozen fast equation,
//! builds the corrected (and, for contrast, the naive) averaged dynamics,
//! and fits the convergence rates that separate them.

pub mod averaging;
pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod frozen;
pub mod iteration;
pub mod measure;
pub mod model;
pub mod rng;

pub use error::{MmvError, Result};
pub use measure::EmpiricalMeasure;
pub use model::ModelSpec;
