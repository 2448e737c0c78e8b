//! LMI feasibility: problem container, interior-point solver and the stabilizability
//! and detectability assemblers.

pub mod assemble;
pub mod problem;
pub mod solver;

pub use assemble::*;
pub use problem::{AffineLmiProblem, Assignment, Constraint, Recheck, Term, VarId, VarKind, Variable, DEFAULT_EPSILON};
pub use solver::{
    solve_feasibility, solve_feasibility_with, FeasibilityResult, FeasibilityStatus, SolverOptions, DEFAULT_BUDGET,
};
