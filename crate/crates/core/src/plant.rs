//! Averaged inverter power dynamics.
//!
//! Each inverter tracks its commanded set-point through a first-order lag on
//! both channels, `ẏ = (u − y)/τ`. With the set-point held constant over an
//! interval the update is exact:
//!
//! ```text
//! y(t + Δt) = u + (y(t) − u)·exp(−Δt/τ)
//! ```

use serde::{Deserialize, Serialize};

use crate::capability::{project, InverterCapability, SetPoint};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    /// Time constant of each inverter, seconds.
    pub tau: Vec<f64>,
    /// Clamp outputs to the capability sets after every step (model-mismatch studies).
    #[serde(default)]
    pub clamp_to: Option<Vec<InverterCapability>>,
}

impl PlantModel {
    pub fn uniform(n: usize, tau: f64) -> Result<Self> {
        let m = Self {
            tau: vec![tau; n],
            clamp_to: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &t) in self.tau.iter().enumerate() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(
                    format!("plant.tau[{i}]"),
                    "time constant must be positive",
                ));
            }
        }
        if let Some(caps) = &self.clamp_to {
            if caps.len() != self.tau.len() {
                return Err(Error::config(
                    "plant.clamp_to",
                    "one capability per inverter",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: f64,
    pub outputs: Vec<SetPoint>,
}

impl PlantState {
    pub fn zeros(n: usize) -> Self {
        Self {
            t: 0.0,
            outputs: vec![SetPoint::default(); n],
        }
    }
}

/// Advance the plant by `dt` seconds with `u` held constant.
pub fn evolve(
    state: &PlantState,
    u: &[SetPoint],
    dt: f64,
    model: &PlantModel,
) -> Result<PlantState> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!(
            "plant step must be nonnegative, got {dt}"
        )));
    }
    if u.len() != state.outputs.len() || model.tau.len() != state.outputs.len() {
        return Err(Error::Shape(format!(
            "plant has {} inverters, got {} set-points and {} time constants",
            state.outputs.len(),
            u.len(),
            model.tau.len()
        )));
    }
    let outputs = state
        .outputs
        .iter()
        .zip(u)
        .zip(&model.tau)
        .enumerate()
        .map(|(i, ((y, r), &tau))| {
            let gain = -(-dt / tau).exp_m1();
            let next = SetPoint::new(y.p + (r.p - y.p) * gain, y.q + (r.q - y.q) * gain);
            match &model.clamp_to {
                Some(caps) => project(&caps[i], &next),
                None => next,
            }
        })
        .collect();
    Ok(PlantState {
        t: state.t + dt,
        outputs,
    })
}

/// The measured outputs are the states themselves.
pub fn sample(state: &PlantState) -> Vec<SetPoint> {
    state.outputs.clone()
}
