//! Optimality residuals of a candidate `(V, u, λ)`.

use serde::Serialize;

use crate::capability::{project, SetPoint};
use crate::controller::{balance_residual, ControlProblem};
use crate::error::{Error, Result};
use crate::hermlin::{HermitianMatrix, Membership, SubproblemOptions, VObjective};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KktReport {
    /// `‖h(V) + C u + D d‖₂`.
    pub balance: f64,
    /// `‖uᵢ − uᵢ(λ)‖₂` per inverter, zero at a fixed point of the set-point update.
    pub fixed_point_gaps: Vec<f64>,
    /// Projected-gradient residual of `V` in the V-subproblem at `λ`.
    pub v_residual: f64,
    pub voltage_membership: Membership,
    /// Distance from each `uᵢ` to its capability set.
    pub capability_membership: Vec<f64>,
}

impl KktReport {
    pub fn max_fixed_point_gap(&self) -> f64 {
        self.fixed_point_gaps.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_capability_violation(&self) -> f64 {
        self.capability_membership
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Largest of all reported residuals.
    pub fn worst(&self) -> f64 {
        [
            self.balance,
            self.max_fixed_point_gap(),
            self.v_residual,
            self.voltage_membership.worst(),
            self.max_capability_violation(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn kkt_report(
    v: &HermitianMatrix,
    u: &[SetPoint],
    lambda: &[f64],
    problem: &ControlProblem,
    options: &SubproblemOptions,
) -> Result<KktReport> {
    if u.len() != problem.agent_count() {
        return Err(Error::Shape(format!(
            "{} set-points for {} inverters",
            u.len(),
            problem.agent_count()
        )));
    }
    let balance = balance_residual(v, u, problem)?
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let target = problem.u_update(lambda)?;
    let fixed_point_gaps = u.iter().zip(&target).map(|(a, b)| a.dist(b)).collect();
    let objective = VObjective::new(lambda, &problem.matrices, &problem.sdp)?;
    let v_residual = objective.pg_residual(v, &problem.voltage, options)?;
    let capability_membership = u
        .iter()
        .zip(&problem.caps)
        .map(|(p, cap)| p.dist(&project(cap, p)))
        .collect();
    Ok(KktReport {
        balance,
        fixed_point_gaps,
        v_residual,
        voltage_membership: problem.voltage.membership(v)?,
        capability_membership,
    })
}
