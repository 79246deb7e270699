//! Identification of the 6x6 compliance (and stiffness) matrix of an elastic
//! body from nodal displacement fields of virtual loading experiments.
//!
//! Units are fixed throughout: mm, N, N·mm and rad.

pub mod compliance;
pub mod deflection;
pub mod error;
pub mod field;
pub mod gauss;
pub mod io;
pub mod pipeline;
pub mod stats;
pub mod studies;
pub mod synthetic;

pub use compliance::{ComplianceMatrix, Experiment, Wrench, WrenchComponent};
pub use deflection::{AngleExtraction, Deflection, Estimator, FitResult, RotationMatrix};
pub use error::{Error, Result};
pub use field::{Axis, DisplacementField, Node, SensorRegion, SensorShape};
