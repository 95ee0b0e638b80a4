//! Steady incompressible Navier-Stokes with Brinkman penalization on
//! structured Q2/Q1 meshes, and tools to calibrate the maximum inverse
//! permeability against mesh size and flow conditions.

pub mod analysis;
pub mod calibration;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod solver;

pub use error::{AnalysisError, CalibrationError, FemError, MeshError, SolveError};
