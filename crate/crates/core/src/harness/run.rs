//! Closed-loop runs and their certificates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::ScenarioConfig;
use crate::controller::{
    block_sensitivity, epsilon_certificate, step_closed_loop, tracking_certificate, BoundConstants,
    ClosedLoop, ControlProblem, ControllerIterate, EpsilonCertificate, TrackingCertificate,
};
use crate::error::{Error, Result};
use crate::hermlin::VSolver;

/// Runs longer than this certify every tenth slot only.
pub const DENSE_CERTIFICATION_LIMIT: usize = 500;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Check the ε-subgradient inequality against random probes.
    pub probes: bool,
    /// Extra probe, normally the optimal multiplier.
    pub reference: Option<Vec<f64>>,
}

/// Everything one run produced. A failed run keeps the slots recorded
/// before the failure.
#[derive(Debug)]
pub struct Trajectory {
    pub scenario: ScenarioConfig,
    pub sampling_interval: f64,
    pub records: Vec<ControllerIterate>,
    pub bounds: BoundConstants,
    /// `‖A⁻¹Cᵀ‖₂` of the block-diagonal set-point map.
    pub sensitivity: f64,
    pub tracking: Vec<TrackingCertificate>,
    pub epsilon: Vec<EpsilonCertificate>,
    pub failure: Option<Error>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&ControllerIterate> {
        self.records.last()
    }

    pub fn summary(&self) -> CertificateSummary {
        let probes = self.epsilon.iter().flat_map(|c| &c.probes);
        CertificateSummary {
            slots: self.records.len(),
            g: self.bounds.g,
            g_tilde: self.bounds.g_tilde,
            tracking_checked: self.tracking.iter().filter(|c| c.bound.is_some()).count(),
            tracking_violations: self.tracking.iter().filter(|c| !c.holds).count(),
            epsilon_checked: self.epsilon.len(),
            epsilon_violations: self
                .epsilon
                .iter()
                .filter(|c| !(c.nonnegative && c.within_bound))
                .count(),
            probes_checked: probes.clone().count(),
            probe_violations: probes.clone().filter(|p| !p.holds).count(),
            worst_probe_slack: probes.map(|p| p.slack).fold(f64::INFINITY, f64::min),
            max_epsilon: self.epsilon.iter().map(|c| c.epsilon).fold(0.0, f64::max),
        }
    }

    /// Turn a recorded failure into an error.
    pub fn into_result(mut self) -> Result<Self> {
        match self.failure.take() {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub slots: usize,
    pub g: f64,
    pub g_tilde: f64,
    pub tracking_checked: usize,
    pub tracking_violations: usize,
    pub epsilon_checked: usize,
    pub epsilon_violations: usize,
    pub probes_checked: usize,
    pub probe_violations: usize,
    pub worst_probe_slack: f64,
    pub max_epsilon: f64,
}

impl CertificateSummary {
    pub fn holds(&self) -> bool {
        self.tracking_violations == 0 && self.epsilon_violations == 0 && self.probe_violations == 0
    }
}

/// Run the scenario for its horizon with bound fitting and tracking
/// certificates only.
pub fn run_closed_loop(config: &ScenarioConfig) -> Result<Trajectory> {
    run_with(config, &RunOptions::default())
}

/// Run the scenario. Errors are returned for invalid configurations only;
/// failures during the run are kept in [`Trajectory::failure`].
pub fn run_with(config: &ScenarioConfig, options: &RunOptions) -> Result<Trajectory> {
    let problem = config.problem()?;
    let settings = config.loop_settings()?;
    let sampling_interval = settings.sampling_interval;
    let mut state = ClosedLoop::new(
        &problem,
        settings,
        config.initial_lambda(),
        config.initial_voltage(),
        config.initial_plant(),
        config.subproblem,
    )?;
    let horizon = config.horizon_slots();
    let mut records = Vec::with_capacity(horizon + 1);
    let mut failure = None;
    while state.k() < horizon {
        match step_closed_loop(&mut state) {
            Ok(r) => records.push(r),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if failure.is_none() {
        match state.observe() {
            Ok(r) => records.push(r),
            Err(e) => failure = Some(e),
        }
    }

    let bounds = BoundConstants::fit(&records);
    let sensitivity = block_sensitivity(&problem);
    bounds.annotate(&mut records, sensitivity);
    let tracking = records
        .iter()
        .map(|r| tracking_certificate(r, &bounds, &problem))
        .collect();
    let mut traj = Trajectory {
        scenario: config.clone(),
        sampling_interval,
        records,
        bounds,
        sensitivity,
        tracking,
        epsilon: Vec::new(),
        failure,
    };
    if options.probes && traj.failure.is_none() {
        if let Err(e) = certify_epsilon(&mut traj, &problem, options.reference.as_deref()) {
            traj.failure = Some(e);
        }
    }
    Ok(traj)
}

/// Whether slot `k` of a run with `slots` records is ε-certified.
///
/// The initial slot carries the starting guess for `V`, not a minimizer,
/// so certification starts at `k = 1`.
pub fn is_certified_slot(k: usize, slots: usize) -> bool {
    k >= 1 && (slots <= DENSE_CERTIFICATION_LIMIT + 1 || k.is_multiple_of(10))
}

/// Gaussian probes around `λ` with per-coordinate scale `0.1·(1 + |λⱼ|)`.
pub fn draw_probes(lambda: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            lambda
                .iter()
                .map(|&l| {
                    let z: f64 = StandardNormal.sample(rng);
                    l + 0.1 * (1.0 + l.abs()) * z
                })
                .collect()
        })
        .collect()
}

/// Fill `traj.epsilon` on the certified slots.
pub fn certify_epsilon(
    traj: &mut Trajectory,
    problem: &ControlProblem,
    reference: Option<&[f64]>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(traj.scenario.seed);
    let mut solver = VSolver::new(traj.scenario.subproblem);
    let n = traj.records.len();
    let mut out = Vec::new();
    for r in traj.records.iter().filter(|r| is_certified_slot(r.k, n)) {
        let mut probes = draw_probes(&r.lambda, traj.scenario.probes, &mut rng);
        if let Some(l) = reference {
            probes.push(l.to_vec());
        }
        out.push(epsilon_certificate(
            r,
            &traj.bounds,
            problem,
            &probes,
            &mut solver,
        )?);
    }
    traj.epsilon = out;
    Ok(())
}
