//! Finite element assembly of the cell model operators.

pub mod discretization;
pub mod operators;

pub use discretization::{Discretization, Field, LocalValues, Sources};
pub use operators::{
    assemble_convection_pfield, assemble_mass, assemble_ofield_operators,
    assemble_pfield_jacobian_blocks, assemble_pfield_nonlinears, assemble_stiffness,
    assemble_stokes, OfieldOperators, PfieldNonlinears, StokesOperators,
};
