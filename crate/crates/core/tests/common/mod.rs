#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use sdp_feedback::controller::ControlProblem;
use sdp_feedback::harness::{OracleSolution, ScenarioConfig};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// The frozen reference optimum of the built-in scenario.
pub fn frozen_oracle() -> OracleSolution {
    let text = std::fs::read_to_string(fixture("paper-5node-oracle.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn builtin() -> (ScenarioConfig, ControlProblem) {
    let cfg = ScenarioConfig::five_node();
    let p = cfg.problem().unwrap();
    (cfg, p)
}

/// Multipliers spread over the operating range: active prices in `[0, 20]`,
/// reactive prices in `[-2, 2]`.
pub fn random_lambda(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..2 * n)
        .map(|j| {
            if j % 2 == 0 {
                rng.random_range(0.0..20.0)
            } else {
                rng.random_range(-2.0..2.0)
            }
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
