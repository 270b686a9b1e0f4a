use serde::{Deserialize, Serialize};

use super::{
    balance_residual, diff_norm, lambda_tilde, norm, setpoint_gap, ControlProblem, Preimage,
    StepsizeSchedule,
};
use crate::capability::SetPoint;
use crate::error::{Error, Result};
use crate::hermlin::{HermitianMatrix, SubproblemOptions, VSolver};
use crate::plant::{evolve, sample, PlantModel, PlantState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSettings {
    pub schedule: StepsizeSchedule,
    /// Seconds between controller updates.
    pub sampling_interval: f64,
    pub plant: PlantModel,
    /// Feed the commanded set-points back in place of plant samples
    /// (perfect time-scale separation).
    #[serde(default)]
    pub ideal: bool,
}

impl LoopSettings {
    pub fn validate(&self) -> Result<()> {
        self.schedule.check()?;
        self.plant.validate()?;
        if !(self.sampling_interval > 0.0 && self.sampling_interval.is_finite()) {
            return Err(Error::config("sampling_interval", "must be positive"));
        }
        Ok(())
    }
}

/// Per-slot quantities behind the certificates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotDiagnostics {
    /// `α_k`, the step that produced `λ[t_k]` (absent at `k = 0`).
    pub alpha: Option<f64>,
    /// `‖h(V[t_k]) + C y[t_k] + D d‖₂`.
    pub grad_norm: f64,
    /// `‖λ[t_k] − λ[t_{k−1}]‖₂`.
    pub step_norm: Option<f64>,
    /// `‖λ[t_k] − λ̃[t_k]‖₂` for the nearest multiplier reproducing `y[t_k]`.
    pub tilde_gap: f64,
    pub preimage_unique: bool,
    /// Suboptimality of the sampled outputs in the agents' Lagrangian at `λ[t_k]`.
    pub epsilon_est: f64,
    pub epsilon_bound: Option<f64>,
    /// `‖y[t_k] − u[t_k]‖₂`.
    pub tracking_err: f64,
    pub tracking_bound: Option<f64>,
    /// Certified projected-gradient residual of `V[t_k]` (absent for the initial guess).
    pub v_residual: Option<f64>,
    /// Minimized V-Lagrangian at `λ[t_k]` (absent for the initial guess).
    pub v_objective: Option<f64>,
}

/// The controller state at one sampling instant together with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControllerIterate {
    pub k: usize,
    pub t: f64,
    pub lambda: Vec<f64>,
    #[serde(skip)]
    pub v: HermitianMatrix,
    pub u: Vec<SetPoint>,
    pub y_sampled: Vec<SetPoint>,
    /// `h(V[t_k]) + C y[t_k] + D d`, the direction of the next dual step.
    pub residual: Vec<f64>,
    #[serde(skip)]
    pub lambda_tilde: Vec<f64>,
    pub diagnostics: SlotDiagnostics,
}

/// Mutable state of one closed-loop run.
#[derive(Clone, Debug)]
pub struct ClosedLoop<'a> {
    problem: &'a ControlProblem,
    settings: LoopSettings,
    k: usize,
    t0: f64,
    lambda: Vec<f64>,
    prev_lambda: Option<Vec<f64>>,
    v: HermitianMatrix,
    v_solution: Option<(f64, f64)>,
    u: Vec<SetPoint>,
    plant: PlantState,
    solver: VSolver,
}

impl<'a> ClosedLoop<'a> {
    /// Start from `λ[0]`, `V[0]`, and the plant state; `u[0]` is the
    /// set-point update at `λ[0]`.
    pub fn new(
        problem: &'a ControlProblem,
        settings: LoopSettings,
        lambda0: Vec<f64>,
        v0: HermitianMatrix,
        plant0: PlantState,
        options: SubproblemOptions,
    ) -> Result<Self> {
        settings.validate()?;
        problem.check_lambda(&lambda0)?;
        problem.voltage.check_dim(v0.dim())?;
        if v0.dim() != problem.matrices.dim() {
            return Err(Error::Shape("V[0] does not match the network".into()));
        }
        if plant0.outputs.len() != problem.agent_count()
            || settings.plant.tau.len() != problem.agent_count()
        {
            return Err(Error::Shape(
                "plant size does not match the inverter count".into(),
            ));
        }
        let u = problem.u_update(&lambda0)?;
        let mut solver = VSolver::new(options);
        solver.warm_start(&v0);
        Ok(Self {
            problem,
            settings,
            k: 0,
            t0: plant0.t,
            lambda: lambda0,
            prev_lambda: None,
            v: v0,
            v_solution: None,
            u,
            plant: plant0,
            solver,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `t_k = t_0 + k·Δt`.
    pub fn time(&self) -> f64 {
        self.t0 + self.k as f64 * self.settings.sampling_interval
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn settings(&self) -> &LoopSettings {
        &self.settings
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    /// Sample the outputs and assemble the record for the current slot.
    pub fn observe(&self) -> Result<ControllerIterate> {
        let p = self.problem;
        let y = if self.settings.ideal {
            self.u.clone()
        } else {
            sample(&self.plant)
        };
        let residual = balance_residual(&self.v, &y, p)?;
        let (tilde, kinds) = lambda_tilde(&y, Some(&self.lambda), &p.agents, &p.caps)?;
        let epsilon_est =
            (p.u_lagrangian(&self.lambda, &y) - p.u_lagrangian(&self.lambda, &self.u)).max(0.0);
        let alpha = if self.k == 0 {
            None
        } else {
            Some(self.settings.schedule.stepsize(self.k)?)
        };
        let diagnostics = SlotDiagnostics {
            alpha,
            grad_norm: norm(&residual),
            step_norm: self
                .prev_lambda
                .as_ref()
                .map(|l| diff_norm(&self.lambda, l)),
            tilde_gap: diff_norm(&self.lambda, &tilde),
            preimage_unique: kinds.iter().all(|k| *k == Preimage::Unique),
            epsilon_est,
            epsilon_bound: None,
            tracking_err: setpoint_gap(&y, &self.u),
            tracking_bound: None,
            v_residual: self.v_solution.map(|s| s.1),
            v_objective: self.v_solution.map(|s| s.0),
        };
        Ok(ControllerIterate {
            k: self.k,
            t: self.time(),
            lambda: self.lambda.clone(),
            v: self.v.clone(),
            u: self.u.clone(),
            y_sampled: y,
            residual,
            lambda_tilde: tilde,
            diagnostics,
        })
    }

    /// Dual step along `current.residual`, new `V` and `u`, then hold `u`
    /// on the plant for one sampling interval.
    pub fn advance(&mut self, current: &ControllerIterate) -> Result<()> {
        let alpha = self.settings.schedule.stepsize(self.k + 1)?;
        let next: Vec<f64> = self
            .lambda
            .iter()
            .zip(&current.residual)
            .map(|(l, s)| l + alpha * s)
            .collect();
        let sol = self.solver.solve(
            &next,
            &self.problem.matrices,
            &self.problem.sdp,
            &self.problem.voltage,
        )?;
        let u = self.problem.u_update(&next)?;
        self.plant = evolve(
            &self.plant,
            &u,
            self.settings.sampling_interval,
            &self.settings.plant,
        )?;
        self.prev_lambda = Some(std::mem::replace(&mut self.lambda, next));
        self.v = sol.v;
        self.v_solution = Some((sol.objective, sol.pg_residual));
        self.u = u;
        self.k += 1;
        Ok(())
    }
}

/// Record the current slot, then advance one slot.
pub fn step_closed_loop(state: &mut ClosedLoop<'_>) -> Result<ControllerIterate> {
    let record = state.observe()?;
    state.advance(&record)?;
    Ok(record)
}
