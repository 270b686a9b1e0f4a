use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::hermitian::{project_psd, HermitianMatrix};
use super::voltage_set::{project_voltage_set_newton, VoltageSet};
use crate::error::{Error, Result};
use crate::netmodel::PowerFlowMatrices;

/// Substation cost `H(V) = (a/2)·Tr(Φ₀V)² + b·Tr(Φ₀V)` plus the Frobenius
/// regularizer `(ρ/2)‖V‖²` that makes the V-minimizer unique.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdpCost {
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    1e-6
}

impl SdpCost {
    pub fn new(a: f64, b: f64, rho: f64) -> Result<Self> {
        let c = Self { a, b, rho };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::config("sdp_cost.a", "must be positive"));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::config("sdp_cost.b", "must be nonnegative"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::config("sdp_cost.rho", "must be nonnegative"));
        }
        Ok(())
    }

    /// `H` as a function of the substation power `p0 = Tr(Φ₀V)`.
    pub fn substation_cost(&self, p0: f64) -> f64 {
        0.5 * self.a * p0 * p0 + self.b * p0
    }
}

/// Tolerances and caps for [`VSolver`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubproblemOptions {
    /// Projected-gradient residual accepted at return.
    pub tol: f64,
    pub max_iter: usize,
    /// Stopping tolerance of the voltage-set projections used for polishing
    /// and for the residual itself.
    pub projection_tol: f64,
    pub projection_max_iter: usize,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 20_000,
            projection_tol: 1e-15,
            projection_max_iter: 200,
        }
    }
}

/// The V-subproblem at a fixed multiplier:
/// `min H(V) + Σᵢ λ_{P,i}Tr(ΦᵢV) + λ_{Q,i}Tr(ΨᵢV) + (ρ/2)‖V‖²` over the voltage set.
#[derive(Clone, Debug)]
pub struct VObjective {
    phi0: HermitianMatrix,
    /// `b·Φ₀ + Σᵢ(λ_{P,i}Φᵢ + λ_{Q,i}Ψᵢ)`.
    linear: HermitianMatrix,
    a: f64,
    rho: f64,
}

impl VObjective {
    pub fn new(lambda: &[f64], m: &PowerFlowMatrices, cost: &SdpCost) -> Result<Self> {
        let n_agents = m.agent_count();
        if lambda.len() != 2 * n_agents {
            return Err(Error::Shape(format!(
                "multiplier has length {}, expected {}",
                lambda.len(),
                2 * n_agents
            )));
        }
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                context: "non-finite multiplier passed to the V-subproblem".into(),
                dump: format!("{lambda:?}"),
            });
        }
        let mut linear = m.phi[0].scale(cost.b);
        for i in 1..=n_agents {
            linear.add_scaled(lambda[2 * (i - 1)], &m.phi[i]);
            linear.add_scaled(lambda[2 * (i - 1) + 1], &m.psi[i]);
        }
        Ok(Self {
            phi0: m.phi[0].clone(),
            linear,
            a: cost.a,
            rho: cost.rho,
        })
    }

    pub fn value(&self, v: &HermitianMatrix) -> f64 {
        let p0 = self.phi0.trace_product(v);
        0.5 * self.a * p0 * p0 + self.linear.trace_product(v) + 0.5 * self.rho * v.trace_product(v)
    }

    pub fn gradient(&self, v: &HermitianMatrix) -> HermitianMatrix {
        let p0 = self.phi0.trace_product(v);
        let mut g = self.linear.axpy(self.rho, v);
        g.add_scaled(self.a * p0, &self.phi0);
        g
    }

    /// Projected-gradient residual `‖V − Π(V − ∇f)‖_F`, zero exactly at the minimizer.
    ///
    /// Points farther than `PROJECTION_REACH` from `V` are not projected
    /// reliably, so for large gradients (or a failed projection) the step is
    /// shortened to `t` and `‖V − Π(V − t∇f)‖_F / t` is returned instead.
    /// That quotient is nonincreasing in `t`, so the value is never below the
    /// unit-step residual.
    pub fn pg_residual(
        &self,
        v: &HermitianMatrix,
        vs: &VoltageSet,
        opts: &SubproblemOptions,
    ) -> Result<f64> {
        let g = self.gradient(v);
        if !g.is_finite() {
            return Err(Error::Numerical {
                context: "non-finite gradient in the V-subproblem".into(),
                dump: format!("{v:?}"),
            });
        }
        let mut t = (PROJECTION_REACH / g.frobenius_norm()).min(1.0);
        loop {
            match project_voltage_set_newton(
                &v.axpy(-t, &g),
                vs,
                opts.projection_tol,
                opts.projection_max_iter,
            ) {
                Ok(p) => return Ok((v - &p).frobenius_norm() / t),
                Err(Error::Convergence { .. }) if t * g.frobenius_norm() > 1.0 => t *= 0.1,
                Err(e) => return Err(e),
            }
        }
    }
}

/// What a V-subproblem solve returns.
#[derive(Clone, Debug)]
pub struct VSolution {
    pub v: HermitianMatrix,
    pub objective: f64,
    pub pg_residual: f64,
    /// Splitting iterations spent on this solve.
    pub iterations: usize,
    /// Objective after each accepted projected-gradient polish step.
    pub polish_trace: Vec<f64>,
}

#[derive(Clone, Debug)]
struct SplitState {
    z: HermitianMatrix,
    u: HermitianMatrix,
    sigma: f64,
}

/// Warm-startable V-subproblem solver.
///
/// Runs an operator splitting between the diagonal box (where the substation
/// quadratic is minimized exactly by a one-dimensional root find) and the
/// PSD cone, then polishes with Armijo projected-gradient steps until the
/// projected-gradient residual is below `tol`. The splitting state carries
/// over between calls, so consecutive nearby multipliers solve quickly.
#[derive(Clone, Debug)]
pub struct VSolver {
    pub options: SubproblemOptions,
    state: Option<SplitState>,
}

const OVER_RELAX: f64 = 1.6;
const SIGMA_UPDATE_EVERY: usize = 25;
const PROJECTION_REACH: f64 = 100.0;
const POLISH_STEPS: usize = 50;

impl VSolver {
    pub fn new(options: SubproblemOptions) -> Self {
        Self {
            options,
            state: None,
        }
    }

    /// Start the next solve from `v` (dual state reset).
    pub fn warm_start(&mut self, v: &HermitianMatrix) {
        let sigma = self.state.as_ref().map(|s| s.sigma);
        self.state = Some(SplitState {
            z: v.clone(),
            u: HermitianMatrix::zeros(v.dim()),
            sigma: sigma.unwrap_or(0.0),
        });
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn solve(
        &mut self,
        lambda: &[f64],
        m: &PowerFlowMatrices,
        cost: &SdpCost,
        vs: &VoltageSet,
    ) -> Result<VSolution> {
        cost.validate()?;
        let n = m.dim();
        vs.check_dim(n)?;
        let obj = VObjective::new(lambda, m, cost)?;
        let opts = self.options;

        let mut st = match self.state.take() {
            Some(s) if s.z.dim() == n => s,
            _ => SplitState {
                z: vs.project_box(&HermitianMatrix::identity(n)),
                u: HermitianMatrix::zeros(n),
                sigma: 0.0,
            },
        };
        if !(st.sigma > 0.0) {
            st.sigma = initial_sigma(&obj);
        }

        let mut eps = (opts.tol * 0.1).max(1e-13);
        let mut iterations = 0usize;
        let mut last_residual;
        let mut history = Vec::new();
        loop {
            let (x, z, used) = split_until(&obj, vs, &mut st, eps, opts.max_iter - iterations)?;
            iterations += used;
            let start =
                project_voltage_set_newton(&z, vs, opts.projection_tol, opts.projection_max_iter)
                    .or_else(|_| {
                    project_voltage_set_newton(
                        &x,
                        vs,
                        opts.projection_tol,
                        opts.projection_max_iter,
                    )
                })?;
            let (v, residual, trace) = polish(&obj, vs, &opts, start)?;
            last_residual = residual;
            history.push(residual);
            if residual < opts.tol {
                self.state = Some(st);
                return Ok(VSolution {
                    objective: obj.value(&v),
                    v,
                    pg_residual: residual,
                    iterations,
                    polish_trace: trace,
                });
            }
            if iterations >= opts.max_iter {
                break;
            }
            eps = (eps * 0.1).max(1e-15);
        }
        self.state = Some(st);
        Err(Error::Convergence {
            method: "V-subproblem",
            iterations,
            residual: last_residual,
            history,
        })
    }
}

impl Default for VSolver {
    fn default() -> Self {
        Self::new(SubproblemOptions::default())
    }
}

/// Cold-start solve returning only the minimizer.
pub fn solve_v_subproblem(
    lambda: &[f64],
    m: &PowerFlowMatrices,
    cost: &SdpCost,
    vs: &VoltageSet,
    tol: f64,
) -> Result<HermitianMatrix> {
    let mut solver = VSolver::new(SubproblemOptions {
        tol,
        ..SubproblemOptions::default()
    });
    Ok(solver.solve(lambda, m, cost, vs)?.v)
}

fn initial_sigma(obj: &VObjective) -> f64 {
    obj.linear
        .frobenius_norm()
        .max(obj.a * obj.phi0.trace_product(&obj.phi0).sqrt())
        .max(1.0)
}

/// Splitting iterations until primal and dual residuals are below `eps`
/// (or `budget` runs out). Returns the box iterate, the PSD iterate, and the
/// iteration count.
///
/// The iteration is a fixed-point map on `v = z + u`, the input of the PSD
/// step, and is accelerated by Anderson mixing. An extrapolated point whose
/// residual is worse than its predecessor's is replaced by the plain step.
fn split_until(
    obj: &VObjective,
    vs: &VoltageSet,
    st: &mut SplitState,
    eps: f64,
    budget: usize,
) -> Result<(HermitianMatrix, HermitianMatrix, usize)> {
    let scale = 1.0 + st.z.frobenius_norm();
    let mut v = &st.z + &st.u;
    let mut mixer = Anderson::new(ANDERSON_MEMORY);
    let mut z_prev = st.z.clone();
    let mut prev_residual = f64::INFINITY;
    let mut plain: Option<HermitianMatrix> = None;
    let budget = budget.max(1);
    let mut it = 0;
    loop {
        it += 1;
        let mut x = box_step(obj, vs, &(&st.z - &st.u), st.sigma);
        let mut r_primal = (&x - &st.z).frobenius_norm();
        if let Some(fallback) = plain.take() {
            if !(r_primal <= prev_residual) {
                v = fallback;
                st.z = project_psd(&v)?;
                st.u = &v - &st.z;
                mixer.reset();
                x = box_step(obj, vs, &(&st.z - &st.u), st.sigma);
                r_primal = (&x - &st.z).frobenius_norm();
            }
        }
        let r_dual = st.sigma * (&st.z - &z_prev).frobenius_norm();
        if !r_primal.is_finite() || !r_dual.is_finite() {
            return Err(Error::Numerical {
                context: "V-subproblem splitting diverged".into(),
                dump: format!("{:?}", st.z),
            });
        }
        if it > 1 && r_primal < eps * scale && r_dual < eps * scale * st.sigma.max(1.0) {
            return Ok((x, st.z.clone(), it));
        }
        if it >= budget {
            return Ok((x, st.z.clone(), it));
        }

        let stepped = x
            .scale(OVER_RELAX)
            .axpy(1.0 - OVER_RELAX, &st.z)
            .axpy(1.0, &st.u);
        let g = &stepped - &v;
        let next = match mixer.extrapolate(&v, &g) {
            Some(mixed) => {
                plain = Some(stepped);
                mixed
            }
            None => stepped,
        };
        prev_residual = r_primal;
        z_prev = std::mem::replace(&mut st.z, project_psd(&next)?);
        st.u = &next - &st.z;
        v = next;

        if it % SIGMA_UPDATE_EVERY == 0 {
            let rd = r_dual / st.sigma;
            if r_primal > 10.0 * rd {
                st.sigma *= 2.0;
                st.u = st.u.scale(0.5);
            } else if rd > 10.0 * r_primal {
                st.sigma *= 0.5;
                st.u = st.u.scale(2.0);
            } else {
                continue;
            }
            v = &st.z + &st.u;
            plain = None;
            mixer.reset();
        }
    }
}

const ANDERSON_MEMORY: usize = 5;

/// Type-II Anderson mixing for a fixed-point map `v ↦ v + g(v)`.
struct Anderson {
    memory: usize,
    last: Option<(DVector<f64>, DVector<f64>)>,
    dv: Vec<DVector<f64>>,
    dg: Vec<DVector<f64>>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            last: None,
            dv: Vec::new(),
            dg: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.last = None;
        self.dv.clear();
        self.dg.clear();
    }

    /// Record `(v, g)` and return the mixed next point, if the history allows one.
    fn extrapolate(&mut self, v: &HermitianMatrix, g: &HermitianMatrix) -> Option<HermitianMatrix> {
        let (vv, gv) = (flatten(v), flatten(g));
        if let Some((lv, lg)) = self.last.take() {
            if self.dv.len() == self.memory {
                self.dv.remove(0);
                self.dg.remove(0);
            }
            self.dv.push(&vv - lv);
            self.dg.push(&gv - lg);
        }
        self.last = Some((vv.clone(), gv.clone()));
        if self.dg.is_empty() {
            return None;
        }
        let dg = DMatrix::from_columns(&self.dg);
        let mut normal = dg.transpose() * &dg;
        let reg = 1e-10 * normal.trace().max(f64::MIN_POSITIVE);
        for i in 0..normal.nrows() {
            normal[(i, i)] += reg;
        }
        let gamma = normal.cholesky()?.solve(&(dg.transpose() * &gv));
        let dv = DMatrix::from_columns(&self.dv);
        let mixed = vv + gv - (dv + dg) * gamma;
        mixed
            .iter()
            .all(|x| x.is_finite())
            .then(|| unflatten(&mixed, v.dim()))
    }
}

fn flatten(m: &HermitianMatrix) -> DVector<f64> {
    let a = m.as_matrix();
    DVector::from_iterator(2 * a.len(), a.iter().flat_map(|c| [c.re, c.im]))
}

fn unflatten(x: &DVector<f64>, n: usize) -> HermitianMatrix {
    let m = DMatrix::from_iterator(
        n,
        n,
        x.as_slice().chunks(2).map(|c| Complex64::new(c[0], c[1])),
    );
    HermitianMatrix::hermitian_part(&m)
}

/// `argmin_X f(X) + (σ/2)‖X − W‖²` over the diagonal box.
///
/// For fixed `s = a·Tr(Φ₀X)` the minimizer is the box projection of
/// `C − sκΦ₀` with `C = (σW − K)/(σ+ρ)`, `κ = 1/(σ+ρ)`. The consistency
/// equation in `s` is piecewise linear and strictly increasing, so it is
/// solved exactly by scanning its breakpoints.
fn box_step(obj: &VObjective, vs: &VoltageSet, w: &HermitianMatrix, sigma: f64) -> HermitianMatrix {
    let kappa = 1.0 / (sigma + obj.rho);
    let c = w.scale(sigma * kappa).axpy(-kappa, &obj.linear);
    let n = c.dim();
    let phi = &obj.phi0;

    // off-diagonal contribution: off0 − s·κ·‖Φ₀_off‖²
    let mut off0 = phi.trace_product(&c);
    let mut phi_off_sq = phi.trace_product(phi);
    let mut diag_terms = Vec::with_capacity(n);
    for i in 0..n {
        let p = phi.diag(i);
        off0 -= p * c.diag(i);
        phi_off_sq -= p * p;
        if p != 0.0 {
            let (lo, hi) = if i == vs.slack_index {
                (vs.slack_sq, vs.slack_sq)
            } else {
                (vs.vmin_sq, vs.vmax_sq)
            };
            diag_terms.push((p, c.diag(i), lo, hi));
        }
    }
    let trace_at = |s: f64| -> f64 {
        let mut t = off0 - s * kappa * phi_off_sq;
        for &(p, ci, lo, hi) in &diag_terms {
            t += p * (ci - s * kappa * p).clamp(lo, hi);
        }
        t
    };
    let g = |s: f64| s - obj.a * trace_at(s);

    let mut breaks: Vec<f64> = Vec::with_capacity(2 * diag_terms.len());
    for &(p, ci, lo, hi) in &diag_terms {
        if lo < hi {
            breaks.push((ci - lo) / (kappa * p));
            breaks.push((ci - hi) / (kappa * p));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    // find the linear piece containing the root
    let (s0, s1) = if breaks.is_empty() {
        (0.0, 1.0)
    } else {
        match breaks.iter().position(|&b| g(b) >= 0.0) {
            Some(0) => (breaks[0] - 1.0, breaks[0]),
            Some(k) => (breaks[k - 1], breaks[k]),
            None => {
                let last = *breaks.last().unwrap();
                (last, last + 1.0)
            }
        }
    };
    let (g0, g1) = (g(s0), g(s1));
    let s = if g1 == g0 {
        s0
    } else {
        s0 - g0 * (s1 - s0) / (g1 - g0)
    };

    let shifted = c.axpy(-s * kappa, phi);
    vs.project_box(&shifted)
}

/// Armijo projected-gradient polish starting from a feasible point. Stops
/// as soon as the unit-step residual is below `tol`; each accepted step
/// decreases the objective.
fn polish(
    obj: &VObjective,
    vs: &VoltageSet,
    opts: &SubproblemOptions,
    start: HermitianMatrix,
) -> Result<(HermitianMatrix, f64, Vec<f64>)> {
    let mut v = start;
    let mut f = obj.value(&v);
    let mut trace = vec![f];
    let mut residual = obj.pg_residual(&v, vs, opts)?;
    let lipschitz = obj.a * obj.phi0.trace_product(&obj.phi0) + obj.rho;
    for _ in 0..POLISH_STEPS {
        if residual < opts.tol {
            break;
        }
        let g = obj.gradient(&v);
        let mut step = 1.0 / lipschitz.max(1e-12);
        let mut accepted = None;
        for _ in 0..40 {
            let trial = project_voltage_set_newton(
                &v.axpy(-step, &g),
                vs,
                opts.projection_tol,
                opts.projection_max_iter,
            )?;
            let d = &trial - &v;
            let ft = obj.value(&trial);
            if ft <= f + g.trace_product(&d) + d.trace_product(&d) / (2.0 * step) {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else { break };
        if ft > f {
            break;
        }
        v = trial;
        f = ft;
        trace.push(f);
        residual = obj.pg_residual(&v, vs, opts)?;
    }
    Ok((v, residual, trace))
}
