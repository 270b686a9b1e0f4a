//! Runtime checks of the ε-subgradient and tracking bounds.
//!
//! With `y[t_k]` the sampled outputs and `s = h(V[t_k]) + C y[t_k] + D d`,
//! the slack
//!
//! ```text
//! ε[t_k] = L_u(y[t_k]; λ[t_k]) − min_u L_u(u; λ[t_k])
//! ```
//!
//! makes `s` an ε-subgradient of `q` at `λ[t_k]`:
//! `q(μ) ≤ q(λ[t_k]) + sᵀ(μ − λ[t_k]) + ε` for every `μ`. For any `λ̃` with
//! `y = u(λ̃)` it equals `q_u(λ̃) − q_u(λ) + g(y)ᵀ(λ − λ̃)`, the agents' part of
//! the textbook expression; the network part of that expression is
//! nonpositive by concavity and is reported separately.

use serde::Serialize;

use super::{ControlProblem, ControllerIterate};
use crate::error::Result;
use crate::hermlin::{dual_evaluate, VSolver};

/// Bound constants fitted on a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundConstants {
    /// Bound on the sampled gradient norm.
    pub g: f64,
    /// Lipschitz-type constant relating `‖λ − λ̃‖` to the last dual step.
    pub g_tilde: f64,
    pub epsilon_history: Vec<f64>,
}

/// Safety factor applied to fitted maxima.
pub const FIT_MARGIN: f64 = 1.25;

impl BoundConstants {
    /// `G = 1.25·max‖s‖`, `G̃ = 1.25·max ‖λ − λ̃‖/‖λ − λ_prev‖`.
    pub fn fit(records: &[ControllerIterate]) -> Self {
        let g = FIT_MARGIN
            * records
                .iter()
                .map(|r| r.diagnostics.grad_norm)
                .fold(0.0, f64::max);
        let mut ratio: f64 = 0.0;
        for r in records {
            let d = &r.diagnostics;
            if let Some(step) = d.step_norm {
                if step > 0.0 {
                    ratio = ratio.max(d.tilde_gap / step);
                } else if d.tilde_gap > 0.0 {
                    ratio = f64::INFINITY;
                }
            }
        }
        Self {
            g,
            g_tilde: FIT_MARGIN * ratio,
            epsilon_history: records.iter().map(|r| r.diagnostics.epsilon_est).collect(),
        }
    }

    /// Fill in `epsilon_bound = 2α_kG̃G²` and `tracking_bound = ‖A⁻¹Cᵀ‖G̃Gα_k`.
    pub fn annotate(&self, records: &mut [ControllerIterate], sensitivity: f64) {
        for r in records {
            if let Some(alpha) = r.diagnostics.alpha {
                r.diagnostics.epsilon_bound = Some(2.0 * alpha * self.g_tilde * self.g * self.g);
                r.diagnostics.tracking_bound = Some(sensitivity * self.g_tilde * self.g * alpha);
            }
        }
    }
}

/// Spectral norm of the block-diagonal map `λ ↦ A⁻¹Cᵀλ`.
pub fn block_sensitivity(problem: &ControlProblem) -> f64 {
    problem
        .agents
        .iter()
        .map(|a| a.sensitivity())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeOutcome {
    /// `sᵀ(μ − λ) − (q(μ) − q(λ) − ε)`; nonnegative when the inequality holds.
    pub slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonCertificate {
    pub k: usize,
    pub epsilon: f64,
    pub bound: Option<f64>,
    /// `q(λ̃) − q(λ) + sᵀ(λ − λ̃)` with the full dual function.
    pub full_expression: f64,
    pub nonnegative: bool,
    pub within_bound: bool,
    pub probes: Vec<ProbeOutcome>,
}

impl EpsilonCertificate {
    pub fn holds(&self) -> bool {
        self.nonnegative && self.within_bound && self.probes.iter().all(|p| p.holds)
    }
}

pub const EPSILON_TOL: f64 = 1e-8;
pub const PROBE_TOL: f64 = 1e-6;

/// Check the ε-subgradient inequality at `iter` against every probe.
///
/// `solver` is warm-started from `iter.v`; `bounds` supplies `G`, `G̃`.
pub fn epsilon_certificate(
    iter: &ControllerIterate,
    bounds: &BoundConstants,
    problem: &ControlProblem,
    probes: &[Vec<f64>],
    solver: &mut VSolver,
) -> Result<EpsilonCertificate> {
    let lambda = &iter.lambda;
    let eps = iter.diagnostics.epsilon_est;
    solver.warm_start(&iter.v);
    let q_lambda = match iter.diagnostics.v_objective {
        Some(obj) => obj + problem.u_lagrangian(lambda, &iter.u),
        None => dual_evaluate(lambda, problem, solver)?.value,
    };
    let s = &iter.residual;
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        s.iter()
            .zip(a.iter().zip(b))
            .map(|(si, (x, y))| si * (x - y))
            .sum()
    };

    let mut outcomes = Vec::with_capacity(probes.len());
    for mu in probes {
        solver.warm_start(&iter.v);
        let q_mu = dual_evaluate(mu, problem, solver)?.value;
        let slack = dot(mu, lambda) - (q_mu - q_lambda - eps);
        outcomes.push(ProbeOutcome {
            slack,
            holds: slack >= -PROBE_TOL,
        });
    }

    solver.warm_start(&iter.v);
    let q_tilde = dual_evaluate(&iter.lambda_tilde, problem, solver)?.value;
    let full_expression = q_tilde - q_lambda + dot(lambda, &iter.lambda_tilde);

    let bound = iter
        .diagnostics
        .alpha
        .map(|a| 2.0 * a * bounds.g_tilde * bounds.g * bounds.g);
    Ok(EpsilonCertificate {
        k: iter.k,
        epsilon: eps,
        bound,
        full_expression,
        nonnegative: eps >= -EPSILON_TOL,
        within_bound: bound.is_none_or(|b| eps <= b + EPSILON_TOL),
        probes: outcomes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackingCertificate {
    pub k: usize,
    pub error: f64,
    pub bound: Option<f64>,
    pub holds: bool,
}

/// `‖y[t_k] − u[t_k]‖₂ ≤ ‖A⁻¹Cᵀ‖₂·G̃·G·α_k`.
pub fn tracking_certificate(
    iter: &ControllerIterate,
    bounds: &BoundConstants,
    problem: &ControlProblem,
) -> TrackingCertificate {
    let bound = iter
        .diagnostics
        .alpha
        .map(|a| block_sensitivity(problem) * bounds.g_tilde * bounds.g * a);
    let error = iter.diagnostics.tracking_err;
    TrackingCertificate {
        k: iter.k,
        error,
        bound,
        holds: bound.is_none_or(|b| error <= b + EPSILON_TOL),
    }
}
