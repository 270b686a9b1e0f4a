//! Exact dual gradient iteration with the primal minimizers fed back,
//! i.e. perfect time-scale separation. Its fixed point is the reference
//! optimum for every closed-loop comparison.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ScenarioConfig;
use crate::capability::SetPoint;
use crate::controller::{balance_residual, ControlProblem, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::hermlin::{dual_evaluate, rank1_extract, HermitianMatrix, SubproblemOptions, VSolver};

/// One iterate `(λ_k, V_k, u_k)` with `s_k = h(V_k) + C u_k + D d`.
#[derive(Clone, Debug)]
pub struct DualGradientIterate {
    pub k: usize,
    pub lambda: Vec<f64>,
    pub v: HermitianMatrix,
    pub u: Vec<SetPoint>,
    pub gradient: Vec<f64>,
}

/// Run `steps` updates of
/// `λ_{k+1} = λ_k + α_{k+1} s_k`, `V_{k+1} = V(λ_{k+1})`, `u_{k+1} = u(λ_{k+1})`.
pub fn dual_gradient_iterates(
    problem: &ControlProblem,
    schedule: &StepsizeSchedule,
    lambda0: Vec<f64>,
    v0: HermitianMatrix,
    options: SubproblemOptions,
    steps: usize,
) -> Result<Vec<DualGradientIterate>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut walker = Walker::new(problem, lambda0, v0, options)?;
    loop {
        let it = walker.current()?;
        let done = it.k == steps;
        let s = it.gradient.clone();
        out.push(it);
        if done {
            return Ok(out);
        }
        walker.step(schedule.stepsize(walker.k + 1)?, &s)?;
    }
}

struct Walker<'a> {
    problem: &'a ControlProblem,
    solver: VSolver,
    k: usize,
    lambda: Vec<f64>,
    v: HermitianMatrix,
    u: Vec<SetPoint>,
}

impl<'a> Walker<'a> {
    fn new(
        problem: &'a ControlProblem,
        lambda: Vec<f64>,
        v: HermitianMatrix,
        options: SubproblemOptions,
    ) -> Result<Self> {
        let u = problem.u_update(&lambda)?;
        let mut solver = VSolver::new(options);
        solver.warm_start(&v);
        Ok(Self {
            problem,
            solver,
            k: 0,
            lambda,
            v,
            u,
        })
    }

    fn current(&self) -> Result<DualGradientIterate> {
        Ok(DualGradientIterate {
            k: self.k,
            lambda: self.lambda.clone(),
            v: self.v.clone(),
            u: self.u.clone(),
            gradient: balance_residual(&self.v, &self.u, self.problem)?,
        })
    }

    fn step(&mut self, alpha: f64, s: &[f64]) -> Result<()> {
        for (l, g) in self.lambda.iter_mut().zip(s) {
            *l += alpha * g;
        }
        let p = self.problem;
        self.v = self
            .solver
            .solve(&self.lambda, &p.matrices, &p.sdp, &p.voltage)?
            .v;
        self.u = p.u_update(&self.lambda)?;
        self.k += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOptions {
    pub schedule: StepsizeSchedule,
    pub max_iter: usize,
    /// Stop once both the last step `‖λ_k − λ_{k−1}‖/α_k` and the current
    /// balance residual fall below this.
    pub tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            schedule: oracle_schedule(),
            max_iter: 20_000,
            tol: 1e-8,
        }
    }
}

/// `α_k = 40/(k + 2000)`: the first step stays below `2/L` of the dual
/// function of the built-in feeder while `Σα_k` grows fast enough to reach
/// the optimal prices in a few thousand iterations.
pub fn oracle_schedule() -> StepsizeSchedule {
    StepsizeSchedule::Harmonic {
        c: 40.0,
        shift: 2000.0,
    }
}

/// Real and imaginary parts of a Hermitian matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixParts {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixParts {
    pub fn from_matrix(v: &HermitianMatrix) -> Self {
        let n = v.dim();
        Self {
            re: (0..n)
                .map(|i| (0..n).map(|j| v.get(i, j).re).collect())
                .collect(),
            im: (0..n)
                .map(|i| (0..n).map(|j| v.get(i, j).im).collect())
                .collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<HermitianMatrix> {
        let n = self.re.len();
        if self.im.len() != n || self.re.iter().chain(&self.im).any(|r| r.len() != n) {
            return Err(Error::Shape(
                "matrix parts must be square and of equal size".into(),
            ));
        }
        let m =
            nalgebra::DMatrix::from_fn(n, n, |i, j| Complex64::new(self.re[i][j], self.im[i][j]));
        HermitianMatrix::new(m)
    }
}

/// The fixed point of the exact dual gradient iteration, all in per-unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub lambda: Vec<f64>,
    pub u: Vec<SetPoint>,
    pub v: MatrixParts,
    /// Primal cost at `(V*, u*)`.
    pub cost: f64,
    /// `q(λ*)` from a cold solve.
    pub dual_value: f64,
    pub balance_residual: f64,
    pub rank_ratio: f64,
    pub iterations: usize,
    pub options: OracleOptions,
}

impl OracleSolution {
    pub fn v_matrix(&self) -> Result<HermitianMatrix> {
        self.v.to_matrix()
    }

    pub fn duality_gap(&self) -> f64 {
        (self.dual_value - self.cost).abs()
    }
}

/// Iterate from the scenario's initial `λ` and `V` until the dual step and
/// the balance residual are both below `options.tol`.
pub fn oracle_solve(config: &ScenarioConfig, options: &OracleOptions) -> Result<OracleSolution> {
    options.schedule.check()?;
    if !(options.tol > 0.0) {
        return Err(Error::config("oracle.tol", "must be positive"));
    }
    let problem = config.problem()?;
    let mut walker = Walker::new(
        &problem,
        config.initial_lambda(),
        config.initial_voltage(),
        config.subproblem,
    )?;
    let mut history = Vec::new();
    let mut last_step = f64::INFINITY;
    loop {
        let it = walker.current()?;
        let residual = norm(&it.gradient);
        history.push(residual);
        if residual < options.tol && last_step < options.tol {
            return finish(&problem, config, it, residual, options);
        }
        if walker.k >= options.max_iter {
            return Err(Error::Convergence {
                method: "oracle dual gradient",
                iterations: walker.k,
                residual,
                history,
            });
        }
        let alpha = options.schedule.stepsize(walker.k + 1)?;
        walker.step(alpha, &it.gradient)?;
        last_step = residual;
    }
}

fn finish(
    problem: &ControlProblem,
    config: &ScenarioConfig,
    it: DualGradientIterate,
    residual: f64,
    options: &OracleOptions,
) -> Result<OracleSolution> {
    let mut fresh = VSolver::new(config.subproblem);
    let q = dual_evaluate(&it.lambda, problem, &mut fresh)?.value;
    let (_, rank_ratio) = rank1_extract(&it.v)?;
    Ok(OracleSolution {
        cost: problem.primal_cost(&it.v, &it.u),
        dual_value: q,
        balance_residual: residual,
        rank_ratio,
        iterations: it.k,
        v: MatrixParts::from_matrix(&it.v),
        lambda: it.lambda,
        u: it.u,
        options: options.clone(),
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
