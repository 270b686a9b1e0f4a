//! Stepsize sequences for the dual update.
//!
//! The convergence argument asks for envelopes `γ_k ≤ α_k ≤ η_k` with
//!
//! * (s1) `γ_k → 0` and `Σ γ_k = ∞`,
//! * (s2) the sandwich itself,
//! * (s3) `η_k ↓ 0` and `Σ η_k² < ∞`.
//!
//! For the closed-form kinds the envelopes are the sequence itself, so the
//! conditions reduce to p-series tests on the exponent of `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepsizeSchedule {
    /// `α_k = c / (k + shift)`.
    Harmonic {
        c: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `α_k = c / √k`.
    InverseSqrt { c: f64 },
    /// `α_k = table[k − 1]`; indices past the table are an error.
    Custom { table: Vec<f64> },
}

/// Outcome of checking one condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Violated,
    /// A finite table says nothing about tails.
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub s1: Verdict,
    pub s2: Verdict,
    pub s3: Verdict,
    pub warnings: Vec<String>,
}

impl ScheduleReport {
    /// True when every condition provably holds.
    pub fn compliant(&self) -> bool {
        [self.s1, self.s2, self.s3]
            .iter()
            .all(|v| *v == Verdict::Holds)
    }
}

/// `Σ k^(−p)` diverges iff `p ≤ 1`.
fn p_series_diverges(p: f64) -> bool {
    p <= 1.0
}

impl StepsizeSchedule {
    pub fn inverse_sqrt(c: f64) -> Self {
        StepsizeSchedule::InverseSqrt { c }
    }

    pub fn harmonic(c: f64) -> Self {
        StepsizeSchedule::Harmonic { c, shift: 0.0 }
    }

    /// Exponent `p` with `α_k ~ k^(−p)`, for the closed-form kinds.
    fn decay_exponent(&self) -> Option<f64> {
        match self {
            StepsizeSchedule::Harmonic { .. } => Some(1.0),
            StepsizeSchedule::InverseSqrt { .. } => Some(0.5),
            StepsizeSchedule::Custom { .. } => None,
        }
    }

    /// Structural checks: positive scale, nonnegative shift, positive nonincreasing table.
    pub fn check(&self) -> Result<()> {
        match self {
            StepsizeSchedule::Harmonic { c, shift } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::config("schedule.c", "must be positive"));
                }
                if !(*shift >= 0.0 && shift.is_finite()) {
                    return Err(Error::config("schedule.shift", "must be nonnegative"));
                }
            }
            StepsizeSchedule::InverseSqrt { c } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::config("schedule.c", "must be positive"));
                }
            }
            StepsizeSchedule::Custom { table } => {
                if table.is_empty() {
                    return Err(Error::config("schedule.table", "must not be empty"));
                }
                for (i, w) in table.windows(2).enumerate() {
                    if w[1] > w[0] {
                        return Err(Error::config(
                            format!("schedule.table[{}]", i + 1),
                            "must be nonincreasing",
                        ));
                    }
                }
                if let Some(i) = table.iter().position(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(Error::config(
                        format!("schedule.table[{i}]"),
                        "must be positive",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Report whether (s1)–(s3) provably hold.
    ///
    /// For `c·k^(−p)` take `γ_k = η_k = α_k`: (s1) is the divergence of the
    /// p-series (`p ≤ 1`), (s3) the convergence of the 2p-series (`2p > 1`).
    pub fn validate(&self) -> ScheduleReport {
        let mut warnings = Vec::new();
        if let Err(e) = self.check() {
            warnings.push(e.to_string());
            return ScheduleReport {
                s1: Verdict::Violated,
                s2: Verdict::Violated,
                s3: Verdict::Violated,
                warnings,
            };
        }
        let Some(p) = self.decay_exponent() else {
            warnings.push("a finite table cannot certify the tail conditions".into());
            return ScheduleReport {
                s1: Verdict::Undetermined,
                s2: Verdict::Holds,
                s3: Verdict::Undetermined,
                warnings,
            };
        };
        let s1 = if p > 0.0 && p_series_diverges(p) {
            Verdict::Holds
        } else {
            warnings.push(format!("Σ k^(-{p}) converges, violates (s1)"));
            Verdict::Violated
        };
        let s3 = if p_series_diverges(2.0 * p) {
            warnings.push(format!(
                "Σ (k^(-{p}))² = Σ k^(-{}) diverges, violates (s3)",
                2.0 * p
            ));
            Verdict::Violated
        } else {
            Verdict::Holds
        };
        ScheduleReport {
            s1,
            s2: Verdict::Holds,
            s3,
            warnings,
        }
    }

    /// `α_k` for `k ≥ 1`.
    pub fn stepsize(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Contract("stepsizes are indexed from k = 1".into()));
        }
        let kf = k as f64;
        match self {
            StepsizeSchedule::Harmonic { c, shift } => Ok(c / (kf + shift)),
            StepsizeSchedule::InverseSqrt { c } => Ok(c / kf.sqrt()),
            StepsizeSchedule::Custom { table } => table.get(k - 1).copied().ok_or_else(|| {
                Error::Contract(format!(
                    "custom schedule has {} entries, asked for k = {k}",
                    table.len()
                ))
            }),
        }
    }
}
