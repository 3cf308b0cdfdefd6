//! Lasso paths whose candidate set grows with hierarchically discovered
//! interactions, restarting each enlarged path from the latest grid point
//! where the KKT conditions of the enlarged problem still hold.

pub mod cv;
pub mod design;
pub mod engine;
pub mod error;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod multinomial;
pub mod simulation;
pub mod theory;
pub mod truth;
pub mod variables;

pub use design::{RawDesign, ResponseVector, Standardizer, WorkingDesign};
pub use error::{Error, Result};
pub use lasso::{CoefficientVector, KktReport, LambdaGrid, SolverConfig};
pub use variables::{CandidateSet, VariableId};
