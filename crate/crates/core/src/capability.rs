//! Inverter operating regions and projections onto them.
//!
//! The region of one inverter is
//!
//! ```text
//! 𝒴 = { (P, Q) : 0 ≤ P ≤ P_av,  P² + Q² ≤ S²,  |Q| ≤ tanθ · P }
//! ```
//!
//! with the power-factor cone switched off when `tan_theta` is infinite.

use nalgebra::Matrix2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SetPoint {
    pub p: f64,
    pub q: f64,
}

impl SetPoint {
    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q }
    }

    pub fn dist(&self, other: &SetPoint) -> f64 {
        (self.p - other.p).hypot(self.q - other.q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterCapability {
    pub p_av: f64,
    pub s_rating: f64,
    /// `+∞` disables the power-factor cone; serialized as `null`.
    #[serde(
        default = "unbounded",
        serialize_with = "ser_slope",
        deserialize_with = "de_slope"
    )]
    pub tan_theta: f64,
}

fn unbounded() -> f64 {
    f64::INFINITY
}

fn ser_slope<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_some(x)
    } else {
        s.serialize_none()
    }
}

fn de_slope<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Relative slack used when deciding whether a candidate is feasible.
const FEAS_EPS: f64 = 1e-12;

impl InverterCapability {
    pub fn new(p_av: f64, s_rating: f64, tan_theta: f64) -> Result<Self> {
        let c = Self {
            p_av,
            s_rating,
            tan_theta,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_rating > 0.0 && self.s_rating.is_finite()) {
            return Err(Error::config(
                "capability.s_rating",
                "must be positive and finite",
            ));
        }
        if !(self.p_av >= 0.0 && self.p_av <= self.s_rating) {
            return Err(Error::config(
                "capability.p_av",
                format!(
                    "need 0 <= p_av <= s_rating, got {} and {}",
                    self.p_av, self.s_rating
                ),
            ));
        }
        if !(self.tan_theta >= 0.0) {
            return Err(Error::config("capability.tan_theta", "must be nonnegative"));
        }
        Ok(())
    }

    /// Largest |Q| allowed at active power `p` (assumes `0 ≤ p ≤ p_av`).
    fn q_limit(&self, p: f64) -> f64 {
        let disk = (self.s_rating * self.s_rating - p * p).max(0.0).sqrt();
        if self.tan_theta.is_finite() {
            disk.min(self.tan_theta * p)
        } else {
            disk
        }
    }

    fn feasible(&self, pt: &SetPoint) -> bool {
        let slack = FEAS_EPS * self.s_rating;
        pt.p >= -slack
            && pt.p <= self.p_av + slack
            && pt.p.hypot(pt.q) <= self.s_rating + slack
            && (!self.tan_theta.is_finite() || pt.q.abs() <= self.tan_theta * pt.p + slack)
    }
}

/// True iff every constraint of the region holds within `tol`.
pub fn contains(cap: &InverterCapability, pt: &SetPoint, tol: f64) -> bool {
    pt.p >= -tol
        && pt.p <= cap.p_av + tol
        && pt.p.hypot(pt.q) <= cap.s_rating + tol
        && (!cap.tan_theta.is_finite() || pt.q.abs() <= cap.tan_theta * pt.p + tol)
}

/// Euclidean projection onto the region.
pub fn project(cap: &InverterCapability, pt: &SetPoint) -> SetPoint {
    project_in_metric(cap, pt, &Matrix2::identity())
}

/// Projection in the metric `‖x‖²_A = xᵀAx` for symmetric positive definite `A`:
/// `argmin_{z ∈ 𝒴} ½(z − x)ᵀA(z − x)`.
///
/// The minimizer is found by enumerating the faces of the region: the
/// point itself, the two vertical lines, the cone rays, the disk arc, and
/// their corners. Ties go to the smaller `p`, then the smaller `|q|`.
pub fn project_in_metric(cap: &InverterCapability, pt: &SetPoint, a: &Matrix2<f64>) -> SetPoint {
    if cap.feasible(pt) {
        return *pt;
    }
    let dist = |z: &SetPoint| {
        let (dp, dq) = (z.p - pt.p, z.q - pt.q);
        a[(0, 0)] * dp * dp + 2.0 * a[(0, 1)] * dp * dq + a[(1, 1)] * dq * dq
    };
    let mut candidates: Vec<SetPoint> = Vec::with_capacity(16);

    // vertical lines p = 0 and p = p_av
    for p in [0.0, cap.p_av] {
        let lim = cap.q_limit(p);
        let q = pt.q - a[(0, 1)] * (p - pt.p) / a[(1, 1)];
        candidates.push(SetPoint::new(p, q.clamp(-lim, lim)));
        candidates.push(SetPoint::new(p, lim));
        candidates.push(SetPoint::new(p, -lim));
    }

    // cone rays q = ±t·p
    if cap.tan_theta.is_finite() {
        let t = cap.tan_theta;
        let p_end = cap.p_av.min(cap.s_rating / (1.0 + t * t).sqrt());
        for sign in [1.0, -1.0] {
            let d = (1.0, sign * t);
            // minimize over s ≥ 0 of ½(s·d − x)ᵀA(s·d − x)
            let ad = (
                a[(0, 0)] * d.0 + a[(0, 1)] * d.1,
                a[(1, 0)] * d.0 + a[(1, 1)] * d.1,
            );
            let s = (ad.0 * pt.p + ad.1 * pt.q) / (ad.0 * d.0 + ad.1 * d.1);
            let s = s.clamp(0.0, p_end);
            candidates.push(SetPoint::new(s, sign * t * s));
            candidates.push(SetPoint::new(p_end, sign * t * p_end));
        }
    }

    // disk arc
    if let Some(z) = arc_point(cap.s_rating, pt, a) {
        candidates.push(z);
    }

    let mut best: Option<(f64, SetPoint)> = None;
    for c in candidates.into_iter().filter(|c| cap.feasible(c)) {
        let d = dist(&c);
        best = match best {
            None => Some((d, c)),
            Some((bd, bc)) => {
                let tie = (d - bd).abs() <= 1e-15 * bd.max(1e-300);
                let better = if tie {
                    (c.p, c.q.abs()) < (bc.p, bc.q.abs())
                } else {
                    d < bd
                };
                if better {
                    Some((d, c))
                } else {
                    Some((bd, bc))
                }
            }
        };
    }
    // the origin is always feasible, so some candidate survives
    best.map(|(_, c)| c).unwrap_or_default()
}

/// Outward normals of the constraints active at `pt` (slack at most `margin`).
///
/// Empty when `pt` is strictly interior. The normal cone of the region at
/// `pt` is the conic hull of the returned vectors.
pub fn active_normals(cap: &InverterCapability, pt: &SetPoint, margin: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    if pt.p <= margin {
        out.push([-1.0, 0.0]);
    }
    if pt.p >= cap.p_av - margin {
        out.push([1.0, 0.0]);
    }
    let r = pt.p.hypot(pt.q);
    if r >= cap.s_rating - margin && r > 0.0 {
        out.push([pt.p / r, pt.q / r]);
    }
    if cap.tan_theta.is_finite() {
        let t = cap.tan_theta;
        let norm = t.hypot(1.0);
        if pt.q >= t * pt.p - margin * norm {
            out.push([-t / norm, 1.0 / norm]);
        }
        if -pt.q >= t * pt.p - margin * norm {
            out.push([-t / norm, -1.0 / norm]);
        }
    }
    out
}

/// The point `(A + 2μI)⁻¹ A x` of norm `s` with `μ ≥ 0`, if `‖x‖ > s`.
fn arc_point(s: f64, pt: &SetPoint, a: &Matrix2<f64>) -> Option<SetPoint> {
    let r = pt.p.hypot(pt.q);
    if r <= s {
        return None;
    }
    let ax = (
        a[(0, 0)] * pt.p + a[(0, 1)] * pt.q,
        a[(1, 0)] * pt.p + a[(1, 1)] * pt.q,
    );
    let at = |mu: f64| {
        let m = Matrix2::new(
            a[(0, 0)] + 2.0 * mu,
            a[(0, 1)],
            a[(1, 0)],
            a[(1, 1)] + 2.0 * mu,
        );
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        SetPoint::new(
            (m[(1, 1)] * ax.0 - m[(0, 1)] * ax.1) / det,
            (m[(0, 0)] * ax.1 - m[(1, 0)] * ax.0) / det,
        )
    };
    let norm = |z: &SetPoint| z.p.hypot(z.q);
    let mut lo = 0.0;
    let mut hi = a.norm().max(1.0);
    while norm(&at(hi)) > s {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm(&at(mid)) > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // land exactly on the circle
    let z = at(hi);
    let k = s / norm(&z);
    Some(SetPoint::new(z.p * k, z.q * k))
}
