//! Q2/Q1 finite element discretization of the Brinkman-penalized steady
//! Navier-Stokes equations.

pub mod assembly;
pub mod element;
pub mod params;
pub mod quadrature;
pub mod shape;

pub use assembly::{
    apply_constraints, apply_dirichlet, assemble_system, dirichlet_conditions, inlet_profile,
    Assembler, CscMatrix, DirichletSet, LinearizedSystem, StateField,
};
pub use element::{element_matrices, ElementMatrices};
pub use params::{alpha_of_rho, BrinkmanParams, FlowParams};
pub use shape::{jacobian, q1_shape, q2_shape, Jacobian};
