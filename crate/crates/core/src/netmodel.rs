//! Balanced single-phase feeder model.
//!
//! Node 0 is the substation (slack). A line segment is a π-model: a series
//! impedance plus a shunt admittance split evenly between its two ends. The
//! admittance matrix `Y` maps nodal voltage phasors to injected currents,
//! `i = Y v`, and the per-node matrices
//!
//! ```text
//! Yᵢ = eᵢ eᵢᵀ Y      Φᵢ = (Yᵢ + Yᵢᴴ)/2      Ψᵢ = j(Yᵢ − Yᵢᴴ)/2      Υᵢ = eᵢ eᵢᵀ
//! ```
//!
//! turn net injections into linear functions of the outer product
//! `V = v vᴴ`: `pᵢ = Tr(Φᵢ V)`, `qᵢ = Tr(Ψᵢ V)`, `|Vᵢ|² = Tr(Υᵢ V)`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermlin::HermitianMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSegment {
    pub from: usize,
    pub to: usize,
    /// Ohms, or per-unit once the feeder is normalized.
    pub series_impedance: Complex64,
    /// Total shunt admittance of the segment (siemens, or per-unit).
    #[serde(default)]
    pub shunt_admittance: Complex64,
}

/// Per-unit bases. `z_base = v_base² / s_base`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bases {
    pub s_base_va: f64,
    pub v_base_volts: f64,
}

impl Bases {
    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_volts * self.v_base_volts / self.s_base_va
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_base_va > 0.0 && self.s_base_va.is_finite()) {
            return Err(Error::config("bases.s_base_va", "must be positive"));
        }
        if !(self.v_base_volts > 0.0 && self.v_base_volts.is_finite()) {
            return Err(Error::config("bases.v_base_volts", "must be positive"));
        }
        Ok(())
    }
}

impl Default for Bases {
    fn default() -> Self {
        Self {
            s_base_va: 10_000.0,
            v_base_volts: 240.0,
        }
    }
}

/// Constant-power demand at one node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    /// Watts, or per-unit.
    pub p: f64,
    /// VAr, or per-unit.
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederModel {
    /// Number of nodes including the substation.
    pub node_count: usize,
    pub segments: Vec<LineSegment>,
    /// Loads for nodes `1..node_count`, in order.
    pub loads: Vec<Load>,
    #[serde(default)]
    pub bases: Bases,
    /// Voltage magnitude limits, per-unit.
    pub vmin: f64,
    pub vmax: f64,
    /// Fixed substation voltage magnitude, per-unit.
    #[serde(default = "unit_magnitude")]
    pub slack_magnitude: f64,
    /// True once impedances and loads are expressed in per-unit.
    #[serde(default)]
    pub per_unit: bool,
}

fn unit_magnitude() -> f64 {
    1.0
}

impl FeederModel {
    /// Radial chain `0–1–…–n` with identical segments.
    pub fn chain(
        segment_impedance: Complex64,
        loads: Vec<Load>,
        bases: Bases,
        vmin: f64,
        vmax: f64,
    ) -> Self {
        let n = loads.len();
        let segments = (0..n)
            .map(|k| LineSegment {
                from: k,
                to: k + 1,
                series_impedance: segment_impedance,
                shunt_admittance: Complex64::new(0.0, 0.0),
            })
            .collect();
        Self {
            node_count: n + 1,
            segments,
            loads,
            bases,
            vmin,
            vmax,
            slack_magnitude: 1.0,
            per_unit: false,
        }
    }

    /// Number of non-substation nodes (one inverter each).
    pub fn agent_count(&self) -> usize {
        self.node_count.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.bases.validate()?;
        if self.node_count < 2 {
            return Err(Error::Model(
                "a feeder needs the substation and at least one node".into(),
            ));
        }
        if self.loads.len() != self.node_count - 1 {
            return Err(Error::Model(format!(
                "expected {} loads (one per non-substation node), got {}",
                self.node_count - 1,
                self.loads.len()
            )));
        }
        if !(0.0 < self.vmin && self.vmin < self.vmax) {
            return Err(Error::Model(format!(
                "voltage limits must satisfy 0 < vmin < vmax, got {} and {}",
                self.vmin, self.vmax
            )));
        }
        if !(self.vmin <= self.slack_magnitude && self.slack_magnitude <= self.vmax) {
            return Err(Error::Model(format!(
                "slack magnitude {} outside [{}, {}]",
                self.slack_magnitude, self.vmin, self.vmax
            )));
        }
        for (k, s) in self.segments.iter().enumerate() {
            if s.from >= self.node_count || s.to >= self.node_count {
                return Err(Error::Model(format!(
                    "segment {k} references a missing node"
                )));
            }
            if s.from == s.to {
                return Err(Error::Model(format!(
                    "segment {k} is a self-loop at node {}",
                    s.from
                )));
            }
            if !(s.series_impedance.re > 0.0) {
                return Err(Error::Model(format!(
                    "segment {k} needs a strictly positive series resistance, got {}",
                    s.series_impedance
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::Model("segments do not connect every node".into()));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.node_count;
        let mut adj = vec![Vec::new(); n];
        for s in &self.segments {
            adj[s.from].push(s.to);
            adj[s.to].push(s.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(a) = queue.pop_front() {
            for &b in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Normalize impedances, admittances, and loads by the feeder's bases.
/// Already-normalized input is returned unchanged.
pub fn to_per_unit(feeder: &FeederModel) -> Result<FeederModel> {
    feeder.bases.validate()?;
    if feeder.per_unit {
        return Ok(feeder.clone());
    }
    let z_base = feeder.bases.z_base_ohm();
    let s_base = feeder.bases.s_base_va;
    let mut out = feeder.clone();
    for s in &mut out.segments {
        s.series_impedance /= z_base;
        s.shunt_admittance *= z_base;
    }
    for l in &mut out.loads {
        l.p /= s_base;
        l.q /= s_base;
    }
    out.per_unit = true;
    Ok(out)
}

/// Inverse of [`to_per_unit`].
pub fn to_si(feeder: &FeederModel) -> Result<FeederModel> {
    feeder.bases.validate()?;
    if !feeder.per_unit {
        return Ok(feeder.clone());
    }
    let z_base = feeder.bases.z_base_ohm();
    let s_base = feeder.bases.s_base_va;
    let mut out = feeder.clone();
    for s in &mut out.segments {
        s.series_impedance *= z_base;
        s.shunt_admittance /= z_base;
    }
    for l in &mut out.loads {
        l.p *= s_base;
        l.q *= s_base;
    }
    out.per_unit = false;
    Ok(out)
}

/// Per-unit bus admittance matrix.
pub fn build_admittance(feeder: &FeederModel) -> Result<DMatrix<Complex64>> {
    feeder.validate()?;
    let pu = to_per_unit(feeder)?;
    let n = pu.node_count;
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for s in &pu.segments {
        let ys = Complex64::new(1.0, 0.0) / s.series_impedance;
        let half_shunt = s.shunt_admittance * 0.5;
        y[(s.from, s.from)] += ys + half_shunt;
        y[(s.to, s.to)] += ys + half_shunt;
        y[(s.from, s.to)] -= ys;
        y[(s.to, s.from)] -= ys;
    }
    Ok(y)
}

/// `Y` together with the per-node Hermitian matrices `Φᵢ`, `Ψᵢ`, `Υᵢ`.
#[derive(Clone, Debug)]
pub struct PowerFlowMatrices {
    pub y: DMatrix<Complex64>,
    pub phi: Vec<HermitianMatrix>,
    pub psi: Vec<HermitianMatrix>,
    pub upsilon: Vec<HermitianMatrix>,
}

pub fn build_injection_matrices(y: &DMatrix<Complex64>) -> Result<PowerFlowMatrices> {
    if !y.is_square() {
        return Err(Error::Shape(format!(
            "admittance matrix must be square, got {}x{}",
            y.nrows(),
            y.ncols()
        )));
    }
    let n = y.nrows();
    let j_half = Complex64::new(0.0, 0.5);
    let mut phi = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    let mut upsilon = Vec::with_capacity(n);
    for i in 0..n {
        let mut yi = DMatrix::<Complex64>::zeros(n, n);
        yi.set_row(i, &y.row(i));
        let yh = yi.adjoint();
        phi.push(HermitianMatrix::hermitian_part(
            &((&yi + &yh) * Complex64::new(0.5, 0.0)),
        ));
        psi.push(HermitianMatrix::hermitian_part(&((&yi - &yh) * j_half)));
        upsilon.push(HermitianMatrix::unit(n, i));
    }
    Ok(PowerFlowMatrices {
        y: y.clone(),
        phi,
        psi,
        upsilon,
    })
}

/// Net injections and squared magnitude at one node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NodeQuantities {
    pub p_net: f64,
    pub q_net: f64,
    pub vmag_sq: f64,
}

impl PowerFlowMatrices {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    /// Non-substation node count.
    pub fn agent_count(&self) -> usize {
        self.dim() - 1
    }

    fn check(&self, v: &HermitianMatrix) -> Result<()> {
        if v.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "V is {}x{} but the network has {} nodes",
                v.dim(),
                v.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `(Tr(ΦᵢV), Tr(ΨᵢV), Tr(ΥᵢV))` for every node, substation first.
    pub fn injected_quantities(&self, v: &HermitianMatrix) -> Result<Vec<NodeQuantities>> {
        self.check(v)?;
        Ok((0..self.dim())
            .map(|i| NodeQuantities {
                p_net: self.phi[i].trace_product(v),
                q_net: self.psi[i].trace_product(v),
                vmag_sq: v.diag(i),
            })
            .collect())
    }

    /// Stacked `[Tr(Φ₁V), Tr(Ψ₁V), …, Tr(Φ_NV), Tr(Ψ_NV)]`.
    pub fn h(&self, v: &HermitianMatrix) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.agent_count());
        for i in 1..self.dim() {
            out.push(self.phi[i].trace_product(v));
            out.push(self.psi[i].trace_product(v));
        }
        out
    }

    /// Active power drawn from the substation, `Tr(Φ₀V)`.
    pub fn substation_power(&self, v: &HermitianMatrix) -> f64 {
        self.phi[0].trace_product(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn chain_feeder() -> FeederModel {
        let loads = [
            (1100.0, 826.0),
            (1100.0, 828.0),
            (1100.0, 829.0),
            (1090.0, 821.0),
            (1100.0, 830.0),
        ]
        .iter()
        .map(|&(p, q)| Load { p, q })
        .collect();
        FeederModel::chain(c(0.0135, 0.0045), loads, Bases::default(), 0.95, 1.05)
    }

    fn random_feeder(rng: &mut impl Rng, n: usize, shunt: bool) -> FeederModel {
        // random tree plus one chord
        let mut segments = Vec::new();
        for k in 1..n {
            let parent = rng.random_range(0..k);
            segments.push(LineSegment {
                from: parent,
                to: k,
                series_impedance: c(rng.random_range(0.01..0.1), rng.random_range(0.0..0.1)),
                shunt_admittance: if shunt {
                    c(0.0, rng.random_range(0.0..0.05))
                } else {
                    c(0.0, 0.0)
                },
            });
        }
        if n > 2 {
            segments.push(LineSegment {
                from: 0,
                to: n - 1,
                series_impedance: c(0.05, 0.02),
                shunt_admittance: c(0.0, 0.0),
            });
        }
        FeederModel {
            node_count: n,
            segments,
            loads: vec![Load::default(); n - 1],
            bases: Bases {
                s_base_va: 1.0,
                v_base_volts: 1.0,
            },
            vmin: 0.9,
            vmax: 1.1,
            slack_magnitude: 1.0,
            per_unit: true,
        }
    }

    fn random_voltage(rng: &mut impl Rng, n: usize) -> DVector<Complex64> {
        DVector::from_fn(n, |_, _| {
            Complex64::from_polar(rng.random_range(0.9..1.1), rng.random_range(-0.3..0.3))
        })
    }

    #[test]
    fn per_unit_examples() {
        let mut f = FeederModel::chain(
            c(5.76, 0.0),
            vec![Load { p: 1100.0, q: 0.0 }],
            Bases::default(),
            0.95,
            1.05,
        );
        let pu = to_per_unit(&f).unwrap();
        assert!((pu.segments[0].series_impedance - c(1.0, 0.0)).norm() < 1e-12);
        assert!((pu.loads[0].p - 0.110).abs() < 1e-12);
        assert_eq!(to_per_unit(&pu).unwrap(), pu);
        let back = to_si(&pu).unwrap();
        assert!(
            (back.segments[0].series_impedance - f.segments[0].series_impedance).norm() < 1e-12
        );
        assert!((back.loads[0].p - 1100.0).abs() < 1e-9);
        f.bases.s_base_va = 0.0;
        assert!(matches!(to_per_unit(&f), Err(Error::Config { .. })));
    }

    #[test]
    fn two_node_identity_case() {
        let mut f = random_feeder(&mut ChaCha8Rng::seed_from_u64(0), 2, false);
        f.segments[0].series_impedance = c(1.0, 0.0);
        let y = build_admittance(&f).unwrap();
        let expect = DMatrix::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)],
        );
        assert!((y - expect).norm() < 1e-14);
    }

    #[test]
    fn chain_feeder_is_tridiagonal() {
        let f = chain_feeder();
        let y = build_admittance(&f).unwrap();
        let z_pu = c(0.0135, 0.0045) / 5.76;
        let ys = c(1.0, 0.0) / z_pu;
        for i in 0..6usize {
            for j in 0..6usize {
                let expect = if i == j {
                    if i == 0 || i == 5 {
                        ys
                    } else {
                        ys * 2.0
                    }
                } else if i.abs_diff(j) == 1usize {
                    -ys
                } else {
                    c(0.0, 0.0)
                };
                assert!((y[(i, j)] - expect).norm() < 1e-9 * ys.norm(), "({i},{j})");
            }
        }
    }

    #[test]
    fn row_sums_are_shunt_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for shunt in [false, true] {
            let f = random_feeder(&mut rng, 7, shunt);
            let y = build_admittance(&f).unwrap();
            let mut expected = [c(0.0, 0.0); 7];
            for s in &f.segments {
                expected[s.from] += s.shunt_admittance * 0.5;
                expected[s.to] += s.shunt_admittance * 0.5;
            }
            for i in 0..7 {
                let row: Complex64 = y.row(i).iter().sum();
                assert!((row - expected[i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn model_errors() {
        let mut f = chain_feeder();
        f.segments[2].series_impedance = c(0.0, 0.0);
        assert!(matches!(build_admittance(&f), Err(Error::Model(_))));

        let mut f = chain_feeder();
        f.segments.remove(2);
        assert!(matches!(build_admittance(&f), Err(Error::Model(_))));

        let mut f = chain_feeder();
        f.segments[0].to = 0;
        assert!(matches!(build_admittance(&f), Err(Error::Model(_))));

        let mut f = chain_feeder();
        f.vmin = 1.1;
        assert!(matches!(build_admittance(&f), Err(Error::Model(_))));
    }

    #[test]
    fn real_diagonal_y() {
        let y = DMatrix::<Complex64>::identity(2, 2);
        let m = build_injection_matrices(&y).unwrap();
        for i in 0..2 {
            assert!(m.phi[i].max_abs_diff(&HermitianMatrix::unit(2, i)) < 1e-15);
            assert!(m.psi[i].frobenius_norm() < 1e-15);
        }
        let total = m
            .upsilon
            .iter()
            .fold(HermitianMatrix::zeros(2), |acc, u| &acc + u);
        assert!(total.max_abs_diff(&HermitianMatrix::identity(2)) == 0.0);
    }

    #[test]
    fn matrices_are_hermitian_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DMatrix::from_fn(5, 5, |_, _| {
            c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
        });
        let m = build_injection_matrices(&y).unwrap();
        let mut sum_phi = HermitianMatrix::zeros(5);
        let mut sum_psi = HermitianMatrix::zeros(5);
        for i in 0..5 {
            assert!(m.phi[i].hermitian_defect() < 1e-12);
            assert!(m.psi[i].hermitian_defect() < 1e-12);
            sum_phi = &sum_phi + &m.phi[i];
            sum_psi = &sum_psi + &m.psi[i];
        }
        let yh = y.adjoint();
        let sym = (&y + &yh) * c(0.5, 0.0);
        let skew = (&y - &yh) * c(0.0, 0.5);
        assert!((sum_phi.as_matrix() - sym).norm() < 1e-12);
        assert!((sum_psi.as_matrix() - skew).norm() < 1e-12);
        // Y is recovered from Φ and Ψ: Σ(Φᵢ − jΨᵢ) = Y
        let mut recon = DMatrix::<Complex64>::zeros(5, 5);
        for i in 0..5 {
            recon += m.phi[i].as_matrix() - m.psi[i].as_matrix() * c(0.0, 1.0);
        }
        assert!((recon - &y).norm() < 1e-12);
    }

    #[test]
    fn traces_match_circuit_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let f = random_feeder(&mut rng, 6, true);
            let y = build_admittance(&f).unwrap();
            let m = build_injection_matrices(&y).unwrap();
            let v = random_voltage(&mut rng, 6);
            let cur = &y * &v;
            let vv = HermitianMatrix::outer(&v);
            let q = m.injected_quantities(&vv).unwrap();
            for i in 0..6 {
                let s = v[i] * cur[i].conj();
                let scale = s.norm().max(1.0);
                assert!((q[i].p_net - s.re).abs() < 1e-10 * scale);
                assert!((q[i].q_net - s.im).abs() < 1e-10 * scale);
                assert!((q[i].vmag_sq - v[i].norm_sqr()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn total_injection_equals_series_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let f = random_feeder(&mut rng, 6, false);
            let y = build_admittance(&f).unwrap();
            let m = build_injection_matrices(&y).unwrap();
            let v = random_voltage(&mut rng, 6);
            let vv = HermitianMatrix::outer(&v);
            let total: f64 = m
                .injected_quantities(&vv)
                .unwrap()
                .iter()
                .map(|q| q.p_net)
                .sum();
            let loss: f64 = f
                .segments
                .iter()
                .map(|s| {
                    let i = (v[s.from] - v[s.to]) / s.series_impedance;
                    i.norm_sqr() * s.series_impedance.re
                })
                .sum();
            assert!((total - loss).abs() < 1e-8);
        }
    }

    #[test]
    fn flat_profile_and_identity() {
        let f = chain_feeder();
        let m = build_injection_matrices(&build_admittance(&f).unwrap()).unwrap();
        let ones = DVector::from_element(6, c(1.0, 0.0));
        for q in m
            .injected_quantities(&HermitianMatrix::outer(&ones))
            .unwrap()
        {
            assert!(q.p_net.abs() < 1e-9 && q.q_net.abs() < 1e-9);
        }
        for q in m
            .injected_quantities(&HermitianMatrix::identity(6))
            .unwrap()
        {
            assert_eq!(q.vmag_sq, 1.0);
        }
        assert!(m
            .injected_quantities(&HermitianMatrix::identity(4))
            .is_err());
    }
}
