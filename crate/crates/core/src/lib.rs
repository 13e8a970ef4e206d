//! Matrix-free solvers for time-space fractional diffusion problems with the
//! spectral fractional Laplacian on rectangular domains.
//!
//! Spatial operators (linear FEM, fourth-order compact differences, second
//! order differences) are diagonalized by the discrete sine transform, so
//! fractional powers, steady solves and implicit time steps all reduce to a
//! pair of DSTs and a pointwise multiply. The Caputo derivative is
//! discretized with the fast L1 scheme based on a sum-of-exponentials
//! approximation of the kernel.

pub mod dst;
pub mod error;
pub mod fast_l1;
pub mod grid;
pub mod harness;
pub mod problems;
pub mod spectral;

pub use dst::{dst_1d, dst_nd, idst_1d, idst_nd, Dst1, DstPlan};
pub use error::{Error, Result};
pub use fast_l1::{
    direct_l1_reference, fast_l1_scalar, kappa_coefficients, run, soe_build, Checkpoint,
    EvolutionParams, EvolutionSolver, FastL1, FastL1State, RunOutput, Snapshot, SoeQuadrature,
    StepTiming,
};
pub use grid::{
    discrete_l2_norm, discrete_max_norm, hadamard, mode_apply, Axis, Grid, TensorField,
};
pub use problems::{
    caputo_power, example_4_1, example_4_2, example_4_3, example_4_4, run_cahn_hilliard,
    CahnHilliardSpec, ProblemSpec, TimeProfile,
};
pub use spectral::{
    apply_fractional_op, apply_symbol, assemble_rhs, build_h, build_v, mode_eigenvalues,
    solve_steady, RhsMode, SchemeKind, SpectralSymbol, SteadyParams, SteadySolver,
};
