//! Per-inverter cost, the closed-form set-point update and its inverse.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::capability::{active_normals, project_in_metric, InverterCapability, SetPoint};
use crate::error::{Error, Result};

/// `½uᵀAu + bᵀu` with the coupling `Cu + Dd` into the node balance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticAgentCost {
    /// Row-major, symmetric positive definite.
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    #[serde(default = "neg_identity")]
    pub c: [[f64; 2]; 2],
    #[serde(default = "identity")]
    pub d: [[f64; 2]; 2],
}

fn identity() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 1.0]]
}

fn neg_identity() -> [[f64; 2]; 2] {
    [[-1.0, 0.0], [0.0, -1.0]]
}

fn mat(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

impl QuadraticAgentCost {
    pub fn new(a: [[f64; 2]; 2], b: [f64; 2]) -> Result<Self> {
        let c = Self {
            a,
            b,
            c: neg_identity(),
            d: identity(),
        };
        c.validate()?;
        Ok(c)
    }

    /// `A = diag(1, 0.01)`, `b = (10, 0.1)`.
    pub fn builtin() -> Self {
        Self {
            a: [[1.0, 0.0], [0.0, 0.01]],
            b: [10.0, 0.1],
            c: neg_identity(),
            d: identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.a_matrix();
        if (a[(0, 1)] - a[(1, 0)]).abs() > 1e-12 * a.norm() {
            return Err(Error::config("agent.a", "must be symmetric"));
        }
        let ev = a.symmetric_eigenvalues();
        if !(ev.min() > 0.0) {
            return Err(Error::config("agent.a", "must be positive definite"));
        }
        if !self.b.iter().all(|x| x.is_finite()) {
            return Err(Error::config("agent.b", "must be finite"));
        }
        if self.c_matrix().determinant().abs() < 1e-300
            || !self.c_matrix().iter().all(|x| x.is_finite())
        {
            return Err(Error::config("agent.c", "must be invertible"));
        }
        Ok(())
    }

    pub fn a_matrix(&self) -> Matrix2<f64> {
        mat(&self.a)
    }

    pub fn b_vector(&self) -> Vector2<f64> {
        Vector2::new(self.b[0], self.b[1])
    }

    pub fn c_matrix(&self) -> Matrix2<f64> {
        mat(&self.c)
    }

    pub fn d_matrix(&self) -> Matrix2<f64> {
        mat(&self.d)
    }

    /// Spectral norm of `A⁻¹Cᵀ`, the Lipschitz constant of `λᵢ ↦ uᵢ`.
    pub fn sensitivity(&self) -> f64 {
        let a_inv = self.a_matrix().try_inverse().unwrap_or_else(Matrix2::zeros);
        (a_inv * self.c_matrix().transpose())
            .singular_values()
            .max()
    }

    /// `½uᵀAu + bᵀu + λᵀ(Cu + Dd)`.
    pub fn lagrangian(&self, u: &SetPoint, lambda: &Vector2<f64>, d: &Vector2<f64>) -> f64 {
        let uv = Vector2::new(u.p, u.q);
        0.5 * uv.dot(&(self.a_matrix() * uv))
            + self.b_vector().dot(&uv)
            + lambda.dot(&(self.c_matrix() * uv + self.d_matrix() * d))
    }
}

/// Minimizer of `½uᵀAu + bᵀu + λᵀCu` over the capability region:
/// the `A`-metric projection of `−A⁻¹(Cᵀλ + b)`.
pub fn primal_u_update(
    lambda: &Vector2<f64>,
    cost: &QuadraticAgentCost,
    cap: &InverterCapability,
) -> Result<SetPoint> {
    let a = cost.a_matrix();
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::config("agent.a", "singular"))?;
    let target = -a_inv * (cost.c_matrix().transpose() * lambda + cost.b_vector());
    Ok(project_in_metric(
        cap,
        &SetPoint::new(target[0], target[1]),
        &a,
    ))
}

/// Whether the multiplier that produces a given output is unique.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preimage {
    /// Output strictly inside the region; the inverse map is single-valued.
    Unique,
    /// Output on the boundary; a whole cone of multipliers maps onto it and
    /// the one nearest the reference was chosen.
    Nearest,
}

/// Interior margin used to decide identifiability.
pub const INTERIOR_MARGIN: f64 = 1e-7;

/// A multiplier `λ̃ᵢ` with `yᵢ = primal_u_update(λ̃ᵢ)`, for every inverter.
///
/// Off the boundary it is `−C⁻ᵀ(Ay + b)`. On the boundary every
/// `−C⁻ᵀ(Ay + b + n)` with `n` in the normal cone works; the one closest to
/// `reference` is returned (or `n = 0` without a reference).
pub fn lambda_tilde(
    y: &[SetPoint],
    reference: Option<&[f64]>,
    costs: &[QuadraticAgentCost],
    caps: &[InverterCapability],
) -> Result<(Vec<f64>, Vec<Preimage>)> {
    if costs.len() != y.len()
        || caps.len() != y.len()
        || reference.is_some_and(|r| r.len() != 2 * y.len())
    {
        return Err(Error::Shape(
            "lambda_tilde: inconsistent inverter counts".into(),
        ));
    }
    let mut out = Vec::with_capacity(2 * y.len());
    let mut kinds = Vec::with_capacity(y.len());
    for (i, yi) in y.iter().enumerate() {
        let cost = &costs[i];
        let c_inv_t = cost
            .c_matrix()
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::config("agent.c", "singular"))?;
        let yv = Vector2::new(yi.p, yi.q);
        let base = -c_inv_t * (cost.a_matrix() * yv + cost.b_vector());
        let normals = active_normals(&caps[i], yi, INTERIOR_MARGIN);
        let (lam, kind) = if normals.is_empty() {
            (base, Preimage::Unique)
        } else {
            let lam = match reference {
                Some(r) => {
                    let gens: Vec<Vector2<f64>> = normals
                        .iter()
                        .map(|g| -c_inv_t * Vector2::new(g[0], g[1]))
                        .collect();
                    let target = Vector2::new(r[2 * i], r[2 * i + 1]);
                    base + project_onto_cone(&(target - base), &gens)
                }
                None => base,
            };
            (lam, Preimage::Nearest)
        };
        out.push(lam[0]);
        out.push(lam[1]);
        kinds.push(kind);
    }
    Ok((out, kinds))
}

/// Euclidean projection of `w` onto the planar cone generated by `gens`.
fn project_onto_cone(w: &Vector2<f64>, gens: &[Vector2<f64>]) -> Vector2<f64> {
    for (i, g) in gens.iter().enumerate() {
        for h in &gens[i + 1..] {
            let m = Matrix2::from_columns(&[*g, *h]);
            if let Some(inv) = m.try_inverse() {
                let coef = inv * w;
                if coef[0] >= 0.0 && coef[1] >= 0.0 {
                    return *w;
                }
            }
        }
    }
    let mut best = Vector2::zeros();
    let mut best_d = w.norm_squared();
    for g in gens {
        let s = (w.dot(g) / g.norm_squared()).max(0.0);
        let cand = g * s;
        let d = (w - cand).norm_squared();
        if d < best_d {
            best = cand;
            best_d = d;
        }
    }
    best
}
