//! LMI problem representation and assembly.

mod assemble;
mod layout;
mod problem;

pub use assemble::{
    assemble_theorem, assemble_theorem1, assemble_theorem2, expand_polytopic, rr_g_factor, xi_dim, TheoremVars,
};
pub use layout::{DecisionLayout, VarId, VarKind, VarSpec};
pub use problem::{
    evaluate_constraints, AffineBuilder, Constraint, LmiParams, LmiProblem, Sense, Theorem, VarRef, STRICT_MARGIN,
};
