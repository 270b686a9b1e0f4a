use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::hermitian::{eigh, project_psd, HermitianMatrix, SpectralDecomposition};
use crate::error::{Error, Result};

/// The relaxed voltage region: `V ⪰ 0`, `vmin² ≤ V_ii ≤ vmax²` for every
/// node, and the slack diagonal pinned to `slack_sq`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageSet {
    pub vmin_sq: f64,
    pub vmax_sq: f64,
    pub slack_index: usize,
    pub slack_sq: f64,
}

/// How far a matrix is from [`VoltageSet`] membership.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    /// `max(0, −λ_min(V))`.
    pub psd: f64,
    /// Largest violation of the diagonal box.
    pub diagonal: f64,
    /// `|V_ss − slack_sq|`.
    pub slack: f64,
}

impl Membership {
    pub fn worst(&self) -> f64 {
        self.psd.max(self.diagonal).max(self.slack)
    }
}

impl VoltageSet {
    pub fn new(vmin_sq: f64, vmax_sq: f64, slack_index: usize, slack_sq: f64) -> Result<Self> {
        if !(vmin_sq > 0.0 && vmin_sq <= vmax_sq) {
            return Err(Error::config(
                "voltage_set",
                format!("need 0 < vmin_sq <= vmax_sq, got {vmin_sq} and {vmax_sq}"),
            ));
        }
        if !(vmin_sq <= slack_sq && slack_sq <= vmax_sq) {
            return Err(Error::config(
                "voltage_set.slack_sq",
                format!("slack_sq {slack_sq} outside [{vmin_sq}, {vmax_sq}]"),
            ));
        }
        Ok(Self {
            vmin_sq,
            vmax_sq,
            slack_index,
            slack_sq,
        })
    }

    /// From magnitude limits in per-unit.
    pub fn from_magnitudes(
        vmin: f64,
        vmax: f64,
        slack_index: usize,
        slack_mag: f64,
    ) -> Result<Self> {
        Self::new(vmin * vmin, vmax * vmax, slack_index, slack_mag * slack_mag)
    }

    /// Exact Frobenius projection onto the diagonal box (with the slack pin).
    pub fn project_box(&self, m: &HermitianMatrix) -> HermitianMatrix {
        let mut out = m.clone();
        for i in 0..m.dim() {
            let target = if i == self.slack_index {
                self.slack_sq
            } else {
                m.diag(i).clamp(self.vmin_sq, self.vmax_sq)
            };
            out.set_diag(i, target);
        }
        out
    }

    pub fn membership(&self, m: &HermitianMatrix) -> Result<Membership> {
        let psd = (-eigh(m)?.min_eigenvalue()).max(0.0);
        let mut diagonal = 0.0f64;
        for i in 0..m.dim() {
            let d = m.diag(i);
            diagonal = diagonal.max(self.vmin_sq - d).max(d - self.vmax_sq);
        }
        let slack = (m.diag(self.slack_index) - self.slack_sq).abs();
        Ok(Membership {
            psd,
            diagonal: diagonal.max(0.0),
            slack,
        })
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        if self.slack_index >= n {
            return Err(Error::Shape(format!(
                "slack index {} out of range for dimension {n}",
                self.slack_index
            )));
        }
        Ok(())
    }
}

/// Dykstra's alternating projection between the PSD cone and the diagonal
/// box. Stops once consecutive iterates move less than `tol` in Frobenius
/// norm; the result is the Frobenius projection onto their intersection.
pub fn project_voltage_set(
    m: &HermitianMatrix,
    vs: &VoltageSet,
    tol: f64,
    max_iter: usize,
) -> Result<HermitianMatrix> {
    vs.check_dim(m.dim())?;
    let n = m.dim();
    let mut x = m.clone();
    let mut p = HermitianMatrix::zeros(n);
    let mut q = HermitianMatrix::zeros(n);
    let mut history = Vec::new();
    for it in 0..max_iter {
        let xp = &x + &p;
        let y = project_psd(&xp)?;
        p = &xp - &y;
        let yq = &y + &q;
        let next = vs.project_box(&yq);
        q = &yq - &next;
        let step = (&next - &x).frobenius_norm();
        x = next;
        if !step.is_finite() {
            return Err(Error::Numerical {
                context: "voltage-set projection produced non-finite iterate".into(),
                dump: format!("{x:?}"),
            });
        }
        if step < tol {
            return Ok(x);
        }
        if it % 1000 == 0 {
            history.push(step);
        }
        if it + 1 == max_iter {
            return Err(Error::Convergence {
                method: "dykstra voltage-set projection",
                iterations: max_iter,
                residual: step,
                history,
            });
        }
    }
    Err(Error::Convergence {
        method: "dykstra voltage-set projection",
        iterations: max_iter,
        residual: f64::INFINITY,
        history,
    })
}

/// Frobenius projection onto the voltage set by a Newton method on the
/// diagonal multipliers.
///
/// The projection is `Π_psd(M + Diag(y))` where `y` minimizes the convex dual
///
/// ```text
/// ψ(y) = ½‖Π_psd(M + Diag(y))‖² − Σᵢ min(lᵢ yᵢ, uᵢ yᵢ)
/// ```
///
/// with `[lᵢ, uᵢ]` the diagonal bounds. The second term is linear on each
/// orthant, so the method takes Newton steps within the current orthant
/// (using the generalized Jacobian of the PSD projection) and clips steps
/// that would cross a coordinate axis. Unlike alternating projections, the
/// work does not grow with the distance of `m` from the set.
///
/// `tol` applies to the optimality residual `‖d − P_box(d − y)‖` and is
/// relative to `max(1, ‖m‖_F)`, since rounding limits what can be resolved
/// for far-away points. Requests below `64·ε` are raised to that floor.
pub fn project_voltage_set_newton(
    m: &HermitianMatrix,
    vs: &VoltageSet,
    tol: f64,
    max_iter: usize,
) -> Result<HermitianMatrix> {
    vs.check_dim(m.dim())?;
    let n = m.dim();
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            if i == vs.slack_index {
                (vs.slack_sq, vs.slack_sq)
            } else {
                (vs.vmin_sq, vs.vmax_sq)
            }
        })
        .collect();
    // below a few dozen ulps the residual is rounding noise
    let tol = tol.max(64.0 * f64::EPSILON) * m.frobenius_norm().max(1.0);
    let eval = |y: &[f64]| -> Result<DualPoint> {
        let mut w = m.clone();
        for i in 0..n {
            w.set_diag(i, m.diag(i) + y[i]);
        }
        let eig = eigh(&w)?;
        let d = psd_diagonal(&eig);
        let mut psi = 0.5
            * eig
                .eigenvalues
                .iter()
                .map(|w| w.max(0.0).powi(2))
                .sum::<f64>();
        let mut residual = 0.0;
        for i in 0..n {
            let (lo, hi) = bounds[i];
            psi -= (lo * y[i]).min(hi * y[i]);
            residual += (d[i] - (d[i] - y[i]).clamp(lo, hi)).powi(2);
        }
        if !psi.is_finite() {
            return Err(Error::Numerical {
                context: "voltage-set projection produced a non-finite multiplier".into(),
                dump: format!("{m:?}"),
            });
        }
        Ok(DualPoint {
            y: y.to_vec(),
            d,
            psi,
            residual: residual.sqrt(),
            eig,
        })
    };

    let mut cur = eval(&vec![0.0; n])?;
    let mut history = Vec::new();
    for _ in 0..max_iter {
        if cur.residual < tol {
            let mut x = cur.eig.reconstruct_with(|w| w.max(0.0));
            for (i, &(lo, hi)) in bounds.iter().enumerate() {
                x.set_diag(i, x.diag(i).clamp(lo, hi));
            }
            return Ok(x);
        }
        history.push(cur.residual);

        // orthant and pseudo-gradient of ψ
        let mut orthant = vec![0.0; n];
        let mut grad = vec![0.0; n];
        for i in 0..n {
            let (lo, hi) = bounds[i];
            let d = cur.d[i];
            let y = cur.y[i];
            if lo == hi {
                orthant[i] = 1.0;
                grad[i] = d - lo;
            } else if y > 0.0 || (y == 0.0 && d < lo) {
                orthant[i] = if y == 0.0 { 1.0 } else { y.signum() };
                grad[i] = d - lo;
            } else if y < 0.0 || (y == 0.0 && d > hi) {
                orthant[i] = -1.0;
                grad[i] = d - hi;
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| orthant[i] != 0.0).collect();
        let jac = psd_diagonal_jacobian(&cur.eig);
        let k = free.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut g = DVector::<f64>::zeros(k);
        let scale = (0..k)
            .map(|a| jac[(free[a], free[a])])
            .fold(0.0, f64::max)
            .max(1e-300);
        for a in 0..k {
            g[a] = grad[free[a]];
            for b in 0..k {
                h[(a, b)] = jac[(free[a], free[b])];
            }
            h[(a, a)] += 1e-14 * scale;
        }
        let mut step = vec![0.0; n];
        if let Some(ch) = h.cholesky() {
            let s = ch.solve(&(-g));
            if s.iter().all(|x| x.is_finite()) {
                for a in 0..k {
                    step[free[a]] = s[a];
                }
            }
        }
        // keep only components that descend along the pseudo-gradient
        for i in 0..n {
            if step[i] * grad[i] > 0.0 {
                step[i] = 0.0;
            }
        }

        let slope: f64 = (0..n).map(|i| step[i] * grad[i]).sum();
        let mut accepted = None;
        if slope < 0.0 {
            let mut t = 1.0;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..n)
                    .map(|i| {
                        let v = cur.y[i] + t * step[i];
                        let (lo, hi) = bounds[i];
                        // never cross an axis in one step
                        if lo < hi && v * orthant[i] < 0.0 {
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect();
                let cand = eval(&trial)?;
                let moved: f64 = (0..n).map(|i| (trial[i] - cur.y[i]) * grad[i]).sum();
                // near the solution ψ differences drown in rounding, so a
                // full step that halves the residual is also accepted
                let full_step_progress = t == 1.0 && cand.residual < 0.5 * cur.residual;
                if full_step_progress || (moved < 0.0 && cand.psi <= cur.psi + 1e-4 * moved) {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
        }
        cur = match accepted {
            Some(c) => c,
            // proximal-gradient step; the unit step never increases ψ, and
            // longer steps are tried while they keep decreasing it
            None => {
                let prox = |t: f64| -> Vec<f64> {
                    (0..n)
                        .map(|i| {
                            let (lo, hi) = bounds[i];
                            let d = cur.d[i];
                            let z = cur.y[i] - t * d;
                            z - t * (z / t).clamp(-hi, -lo)
                        })
                        .collect()
                };
                let mut best = eval(&prox(1.0))?;
                let mut t = 2.0;
                while t < 1e12 {
                    let cand = eval(&prox(t))?;
                    if cand.psi < best.psi {
                        best = cand;
                        t *= 2.0;
                    } else {
                        break;
                    }
                }
                best
            }
        };
    }
    Err(Error::Convergence {
        method: "newton voltage-set projection",
        iterations: max_iter,
        residual: cur.residual,
        history,
    })
}

struct DualPoint {
    y: Vec<f64>,
    d: Vec<f64>,
    psi: f64,
    residual: f64,
    eig: SpectralDecomposition,
}

/// Diagonal of `U diag(max(w, 0)) Uᴴ`.
fn psd_diagonal(eig: &SpectralDecomposition) -> Vec<f64> {
    let n = eig.eigenvalues.len();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|a| eig.eigenvalues[a].max(0.0) * eig.eigenvectors[(k, a)].norm_sqr())
                .sum()
        })
        .collect()
}

/// `J[k][j] = ∂ diag(Π_psd(W))_k / ∂ W_jj` from the first divided differences
/// of `max(·, 0)` over the spectrum.
fn psd_diagonal_jacobian(eig: &SpectralDecomposition) -> DMatrix<f64> {
    let n = eig.eigenvalues.len();
    let w = &eig.eigenvalues;
    let u = &eig.eigenvectors;
    let omega = DMatrix::from_fn(n, n, |a, b| {
        let (pa, pb) = (w[a].max(0.0), w[b].max(0.0));
        if (w[a] - w[b]).abs() > 1e-14 * (1.0 + w[a].abs().max(w[b].abs())) {
            (pa - pb) / (w[a] - w[b])
        } else if w[a] > 0.0 {
            1.0
        } else {
            0.0
        }
    });
    DMatrix::from_fn(n, n, |k, j| {
        let t: Vec<Complex64> = (0..n).map(|a| u[(k, a)] * u[(j, a)].conj()).collect();
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                acc += omega[(a, b)] * (t[a] * t[b].conj()).re;
            }
        }
        acc
    })
}
