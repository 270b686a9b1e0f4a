//! The dual function `q(λ) = min_{V,u} L(V, u, λ)`.

use super::hermitian::HermitianMatrix;
use super::subproblem::{SubproblemOptions, VSolver};
use crate::capability::SetPoint;
use crate::controller::{balance_residual, ControlProblem};
use crate::error::Result;

/// `q(λ)` with the minimizers that attain it.
#[derive(Clone, Debug)]
pub struct DualEvaluation {
    pub value: f64,
    pub v: HermitianMatrix,
    pub u: Vec<SetPoint>,
    /// `h(V[λ]) + C u[λ] + D d`, the gradient of `q` at `λ`.
    pub gradient: Vec<f64>,
    /// Projected-gradient residual certified for `V[λ]`.
    pub v_residual: f64,
}

/// Evaluate `q` at `lambda`, reusing `solver`'s warm-start state.
pub fn dual_evaluate(
    lambda: &[f64],
    problem: &ControlProblem,
    solver: &mut VSolver,
) -> Result<DualEvaluation> {
    problem.check_lambda(lambda)?;
    let sol = solver.solve(lambda, &problem.matrices, &problem.sdp, &problem.voltage)?;
    let u = problem.u_update(lambda)?;
    let value = sol.objective + problem.u_lagrangian(lambda, &u);
    let gradient = balance_residual(&sol.v, &u, problem)?;
    Ok(DualEvaluation {
        value,
        v: sol.v,
        u,
        gradient,
        v_residual: sol.pg_residual,
    })
}

/// `q(λ)` from a cold start.
pub fn dual_value(lambda: &[f64], problem: &ControlProblem, tol: f64) -> Result<f64> {
    let mut solver = VSolver::new(SubproblemOptions {
        tol,
        ..SubproblemOptions::default()
    });
    Ok(dual_evaluate(lambda, problem, &mut solver)?.value)
}
