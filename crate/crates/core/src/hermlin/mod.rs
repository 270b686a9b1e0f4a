//! Hermitian linear algebra and the SDP-side primal machinery.

mod dual;
mod hermitian;
mod rank1;
mod subproblem;
mod voltage_set;

pub use dual::{dual_evaluate, dual_value, DualEvaluation};
pub use hermitian::{eigh, project_psd, HermitianMatrix, SpectralDecomposition, HERMITIAN_TOL};
pub use rank1::rank1_extract;
pub use subproblem::{
    solve_v_subproblem, SdpCost, SubproblemOptions, VObjective, VSolution, VSolver,
};
pub use voltage_set::{project_voltage_set, project_voltage_set_newton, Membership, VoltageSet};
