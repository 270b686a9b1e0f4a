//! The sampled dual ε-subgradient controller.
//!
//! Every slot the controller reads the inverter outputs, moves the
//! multipliers along the node-balance residual, re-solves the voltage
//! subproblem, and commands new set-points:
//!
//! ```text
//! λ[k+1] = λ[k] + α_{k+1} (h(V[k]) + C y[k] + D d)
//! V[k+1] = argmin_V  H(V) + λ[k+1]ᵀ h(V)
//! u[k+1] = argmin_u  ½uᵀAu + bᵀu + λ[k+1]ᵀ C u
//! ```

mod agent;
mod certify;
mod closed_loop;
mod schedule;

use nalgebra::Vector2;

pub use agent::{lambda_tilde, primal_u_update, Preimage, QuadraticAgentCost, INTERIOR_MARGIN};
pub use certify::{
    block_sensitivity, epsilon_certificate, tracking_certificate, BoundConstants,
    EpsilonCertificate, ProbeOutcome, TrackingCertificate, EPSILON_TOL, FIT_MARGIN, PROBE_TOL,
};
pub use closed_loop::{
    step_closed_loop, ClosedLoop, ControllerIterate, LoopSettings, SlotDiagnostics,
};
pub use schedule::{ScheduleReport, StepsizeSchedule, Verdict};

use crate::capability::{InverterCapability, SetPoint};
use crate::error::{Error, Result};
use crate::hermlin::{HermitianMatrix, SdpCost, VoltageSet};
use crate::netmodel::{
    build_admittance, build_injection_matrices, to_per_unit, FeederModel, PowerFlowMatrices,
};

/// Everything the controller needs, in per-unit.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub matrices: PowerFlowMatrices,
    pub sdp: SdpCost,
    pub voltage: VoltageSet,
    pub caps: Vec<InverterCapability>,
    pub agents: Vec<QuadraticAgentCost>,
    /// Per-node demand `dᵢ = (P̄ᵢ, Q̄ᵢ)`.
    pub loads: Vec<Vector2<f64>>,
}

impl ControlProblem {
    /// `caps` must already be per-unit; the feeder may be in either unit system.
    pub fn new(
        feeder: &FeederModel,
        caps: Vec<InverterCapability>,
        agents: Vec<QuadraticAgentCost>,
        sdp: SdpCost,
    ) -> Result<Self> {
        feeder.validate()?;
        sdp.validate()?;
        let pu = to_per_unit(feeder)?;
        let n = pu.agent_count();
        if caps.len() != n {
            return Err(Error::config(
                "capabilities",
                format!("expected {n} entries, got {}", caps.len()),
            ));
        }
        if agents.len() != n {
            return Err(Error::config(
                "agents",
                format!("expected {n} entries, got {}", agents.len()),
            ));
        }
        for c in &caps {
            c.validate()?;
        }
        for a in &agents {
            a.validate()?;
        }
        let matrices = build_injection_matrices(&build_admittance(&pu)?)?;
        let voltage = VoltageSet::from_magnitudes(pu.vmin, pu.vmax, 0, pu.slack_magnitude)?;
        Ok(Self {
            matrices,
            sdp,
            voltage,
            caps,
            agents,
            loads: pu.loads.iter().map(|l| Vector2::new(l.p, l.q)).collect(),
        })
    }

    pub fn agent_count(&self) -> usize {
        self.caps.len()
    }

    /// Set-points minimizing the agents' Lagrangian terms at `lambda`.
    pub fn u_update(&self, lambda: &[f64]) -> Result<Vec<SetPoint>> {
        self.check_lambda(lambda)?;
        (0..self.agent_count())
            .map(|i| primal_u_update(&pair(lambda, i), &self.agents[i], &self.caps[i]))
            .collect()
    }

    /// `Σᵢ ½uᵢᵀAᵢuᵢ + bᵢᵀuᵢ + λᵢᵀ(Cᵢuᵢ + Dᵢdᵢ)`.
    pub fn u_lagrangian(&self, lambda: &[f64], u: &[SetPoint]) -> f64 {
        (0..self.agent_count())
            .map(|i| self.agents[i].lagrangian(&u[i], &pair(lambda, i), &self.loads[i]))
            .sum()
    }

    /// Regularized primal cost `H(V) + (ρ/2)‖V‖² + Σᵢ ½uᵢᵀAᵢuᵢ + bᵢᵀuᵢ`.
    pub fn primal_cost(&self, v: &HermitianMatrix, u: &[SetPoint]) -> f64 {
        let agents: f64 = u
            .iter()
            .zip(&self.agents)
            .map(|(ui, a)| {
                let x = Vector2::new(ui.p, ui.q);
                0.5 * x.dot(&(a.a_matrix() * x)) + a.b_vector().dot(&x)
            })
            .sum();
        self.sdp.substation_cost(self.matrices.substation_power(v))
            + 0.5 * self.sdp.rho * v.trace_product(v)
            + agents
    }

    pub(crate) fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != 2 * self.agent_count() {
            return Err(Error::Shape(format!(
                "multiplier has length {}, expected {}",
                lambda.len(),
                2 * self.agent_count()
            )));
        }
        Ok(())
    }
}

pub(crate) fn pair(x: &[f64], i: usize) -> Vector2<f64> {
    Vector2::new(x[2 * i], x[2 * i + 1])
}

/// `h(V) + C y + D d`, stacked per inverter as `(P, Q)` pairs.
pub fn balance_residual(
    v: &HermitianMatrix,
    y: &[SetPoint],
    problem: &ControlProblem,
) -> Result<Vec<f64>> {
    let n = problem.agent_count();
    if y.len() != n || v.dim() != problem.matrices.dim() {
        return Err(Error::Shape(
            "balance residual: inconsistent dimensions".into(),
        ));
    }
    let h = problem.matrices.h(v);
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let a = &problem.agents[i];
        let g = a.c_matrix() * Vector2::new(y[i].p, y[i].q) + a.d_matrix() * problem.loads[i];
        out.push(h[2 * i] + g[0]);
        out.push(h[2 * i + 1] + g[1]);
    }
    Ok(out)
}

/// `λ + α·(h(V) + C y + D d)`; the multipliers are unconstrained.
pub fn dual_ascent(
    lambda: &[f64],
    alpha: f64,
    v: &HermitianMatrix,
    y: &[SetPoint],
    problem: &ControlProblem,
) -> Result<Vec<f64>> {
    problem.check_lambda(lambda)?;
    let r = balance_residual(v, y, problem)?;
    Ok(lambda.iter().zip(&r).map(|(l, s)| l + alpha * s).collect())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn diff_norm(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn setpoint_gap(x: &[SetPoint], y: &[SetPoint]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| a.dist(b).powi(2))
        .sum::<f64>()
        .sqrt()
}
