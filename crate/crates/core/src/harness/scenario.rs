//! Scenario configuration: JSON files and the built-in `paper-5node`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::capability::{InverterCapability, SetPoint};
use crate::controller::{ControlProblem, LoopSettings, QuadraticAgentCost, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::hermlin::{HermitianMatrix, SdpCost, SubproblemOptions};
use crate::netmodel::{Bases, FeederModel, Load};
use crate::plant::{PlantModel, PlantState};

/// Sampling interval, either absolute or relative to the plant time constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Seconds(f64),
    /// Multiple of the time constant of the first inverter.
    TauMultiple(f64),
}

impl FromStr for Sampling {
    type Err = Error;

    /// `"9.9"` is seconds, `"9x-tau"` (or `"9xtau"`) a multiple of τ.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || {
            Error::config(
                "sampling",
                format!("expected <seconds> or <N>x-tau, got `{s}`"),
            )
        };
        let parsed = if let Some(n) = s.strip_suffix("x-tau").or_else(|| s.strip_suffix("xtau")) {
            Sampling::TauMultiple(n.trim().parse().map_err(|_| bad())?)
        } else {
            Sampling::Seconds(s.parse().map_err(|_| bad())?)
        };
        let v = match parsed {
            Sampling::Seconds(v) | Sampling::TauMultiple(v) => v,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::config("sampling", "must be positive"));
        }
        Ok(parsed)
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampling::Seconds(s) => write!(f, "{s}"),
            Sampling::TauMultiple(n) => write!(f, "{n}x-tau"),
        }
    }
}

impl Serialize for Sampling {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Sampling::Seconds(v) => s.serialize_f64(*v),
            Sampling::TauMultiple(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Sampling {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Sampling::from_str(&v.to_string()),
            Raw::Text(t) => Sampling::from_str(&t),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialVoltage {
    /// `V[0] = I`.
    #[default]
    Identity,
    /// `V[0] = |V₀|²·11ᵀ`, the no-load flat profile.
    Flat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    /// `λ[0]`; zeros when absent.
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    #[serde(default)]
    pub voltage: InitialVoltage,
    /// Inverter outputs at `t = 0` in the feeder's power units; zeros when absent.
    #[serde(default)]
    pub outputs: Option<Vec<SetPoint>>,
}

fn default_probes() -> usize {
    16
}

/// A complete, validated description of one closed-loop experiment.
///
/// Power quantities (`capabilities`, `initial.outputs`, loads) share the
/// feeder's unit system: watts and VA unless `feeder.per_unit` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub feeder: FeederModel,
    pub capabilities: Vec<InverterCapability>,
    pub agents: Vec<QuadraticAgentCost>,
    pub sdp_cost: SdpCost,
    pub schedule: StepsizeSchedule,
    pub sampling: Sampling,
    /// Plant time constants in seconds, one per inverter.
    pub tau: Vec<f64>,
    /// Number of controller updates; derived from the sampling interval when absent.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub initial: InitialState,
    /// Seed for the certificate probes.
    #[serde(default)]
    pub seed: u64,
    /// Random probes per certified slot.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub subproblem: SubproblemOptions,
    /// Feed commanded set-points back instead of plant samples.
    #[serde(default)]
    pub ideal: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Default runs cover the same simulated span as 60 slots at 9τ.
const DEFAULT_SPAN_TAU: f64 = 540.0;

impl ScenarioConfig {
    /// The five-node feeder with every value from the original experiment.
    pub fn five_node() -> Self {
        let loads_p = [1100.0, 1100.0, 1100.0, 1090.0, 1100.0];
        let loads_q = [826.0, 828.0, 829.0, 821.0, 830.0];
        let s_rating = [4660.0, 4830.0, 7620.0, 7620.0, 7620.0];
        let p_av = [1910.0, 1950.0, 3240.0, 3240.0, 3240.0];
        let loads = loads_p
            .iter()
            .zip(&loads_q)
            .map(|(&p, &q)| Load { p, q })
            .collect();
        let feeder = FeederModel::chain(
            Complex64::new(0.0135, 0.0045),
            loads,
            Bases::default(),
            0.95,
            1.05,
        );
        Self {
            name: "paper-5node".into(),
            feeder,
            capabilities: p_av
                .iter()
                .zip(&s_rating)
                .map(|(&p, &s)| InverterCapability {
                    p_av: p,
                    s_rating: s,
                    tan_theta: f64::INFINITY,
                })
                .collect(),
            agents: vec![QuadraticAgentCost::builtin(); 5],
            sdp_cost: SdpCost {
                a: 2.0,
                b: 10.0,
                rho: 1e-6,
            },
            schedule: StepsizeSchedule::inverse_sqrt(0.1),
            sampling: Sampling::TauMultiple(9.0),
            tau: vec![1.1; 5],
            horizon: None,
            initial: InitialState::default(),
            seed: 0,
            probes: default_probes(),
            subproblem: SubproblemOptions::default(),
            ideal: false,
            output: None,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "paper-5node" => Some(Self::five_node()),
            _ => None,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.feeder.agent_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.feeder
            .validate()
            .map_err(|e| Error::config("feeder", e.to_string()))?;
        let n = self.agent_count();
        let count = |field: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("expected {n} entries, got {len}"),
                ))
            }
        };
        count("capabilities", self.capabilities.len())?;
        count("agents", self.agents.len())?;
        count("tau", self.tau.len())?;
        for (i, c) in self.capabilities.iter().enumerate() {
            c.validate()
                .map_err(|e| prefix(e, &format!("capabilities[{i}]")))?;
        }
        for (i, a) in self.agents.iter().enumerate() {
            a.validate()
                .map_err(|e| prefix(e, &format!("agents[{i}]")))?;
        }
        self.sdp_cost.validate()?;
        self.schedule.check()?;
        self.plant_model()?.validate()?;
        if let Some(l) = &self.initial.lambda {
            count("initial.lambda", l.len() / 2)?;
            if l.len() % 2 != 0 || l.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(
                    "initial.lambda",
                    "need 2 finite entries per inverter",
                ));
            }
        }
        if let Some(o) = &self.initial.outputs {
            count("initial.outputs", o.len())?;
        }
        if !(self.subproblem.tol > 0.0) || self.subproblem.max_iter == 0 {
            return Err(Error::config(
                "subproblem",
                "tol must be positive and max_iter nonzero",
            ));
        }
        Ok(())
    }

    /// Sampling interval in seconds.
    pub fn sampling_interval(&self) -> f64 {
        match self.sampling {
            Sampling::Seconds(s) => s,
            Sampling::TauMultiple(n) => n * self.tau.first().copied().unwrap_or(1.0),
        }
    }

    /// Explicit horizon, or enough slots to span 540 time constants.
    pub fn horizon_slots(&self) -> usize {
        self.horizon.unwrap_or_else(|| {
            let tau = self.tau.first().copied().unwrap_or(1.0);
            let slots = DEFAULT_SPAN_TAU * tau / self.sampling_interval();
            let r = slots.round();
            if (slots - r).abs() < 1e-9 * r.max(1.0) {
                r as usize
            } else {
                slots.ceil() as usize
            }
        })
    }

    /// Power base used to normalize capabilities and outputs.
    fn power_scale(&self) -> f64 {
        if self.feeder.per_unit {
            1.0
        } else {
            self.feeder.bases.s_base_va
        }
    }

    pub fn capabilities_pu(&self) -> Vec<InverterCapability> {
        let s = self.power_scale();
        self.capabilities
            .iter()
            .map(|c| InverterCapability {
                p_av: c.p_av / s,
                s_rating: c.s_rating / s,
                tan_theta: c.tan_theta,
            })
            .collect()
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        self.validate()?;
        ControlProblem::new(
            &self.feeder,
            self.capabilities_pu(),
            self.agents.clone(),
            self.sdp_cost,
        )
    }

    pub fn plant_model(&self) -> Result<PlantModel> {
        let m = PlantModel {
            tau: self.tau.clone(),
            clamp_to: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn loop_settings(&self) -> Result<LoopSettings> {
        Ok(LoopSettings {
            schedule: self.schedule.clone(),
            sampling_interval: self.sampling_interval(),
            plant: self.plant_model()?,
            ideal: self.ideal,
        })
    }

    pub fn initial_lambda(&self) -> Vec<f64> {
        self.initial
            .lambda
            .clone()
            .unwrap_or_else(|| vec![0.0; 2 * self.agent_count()])
    }

    pub fn initial_voltage(&self) -> HermitianMatrix {
        let n = self.feeder.node_count;
        match self.initial.voltage {
            InitialVoltage::Identity => HermitianMatrix::identity(n),
            InitialVoltage::Flat => {
                let m2 = self.feeder.slack_magnitude.powi(2);
                let ones = nalgebra::DVector::from_element(n, Complex64::new(m2.sqrt(), 0.0));
                HermitianMatrix::outer(&ones)
            }
        }
    }

    pub fn initial_plant(&self) -> PlantState {
        let s = self.power_scale();
        match &self.initial.outputs {
            Some(o) => PlantState {
                t: 0.0,
                outputs: o.iter().map(|p| SetPoint::new(p.p / s, p.q / s)).collect(),
            },
            None => PlantState::zeros(self.agent_count()),
        }
    }
}

fn prefix(e: Error, path: &str) -> Error {
    match e {
        Error::Config { path: p, message } => Error::config(
            format!("{path}.{}", p.rsplit('.').next().unwrap_or(&p)),
            message,
        ),
        other => other,
    }
}

/// Resolve `name` as a built-in scenario name or a JSON file path, then validate.
pub fn load_scenario(name: &str) -> Result<ScenarioConfig> {
    if let Some(c) = ScenarioConfig::builtin(name) {
        return Ok(c);
    }
    let path = Path::new(name);
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(
            "scenario",
            format!("`{name}` is neither a built-in scenario nor a readable file: {e}"),
        )
    })?;
    parse_scenario(&text, name)
}

/// Parse and validate scenario JSON; `origin` labels error messages.
pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioConfig> {
    if text.trim().is_empty() {
        return Err(Error::config(origin, "scenario file is empty"));
    }
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.into(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
