use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CovarianceTrajectory, FilterProblem, PSD_CLIP};
use crate::error::{Error, Result};
use crate::operators::{clip_psd, LinearMap};

/// Fixed-interval smoother covariance `P(τ|t)` and its gain family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmootherResult {
    pub tau: f64,
    pub t: f64,
    pub tau_index: usize,
    pub t_index: usize,
    /// `P(τ|t)`.
    pub covariance: LinearMap,
    /// `(s, K_s(s))` for observed nodes `s ∈ (τ, t]`, with
    /// `K_s(s) = P(τ|τ) Ψ(s,τ)ᵀ H(s)ᵀ S(s)⁻¹`.
    pub gains: Vec<(usize, LinearMap)>,
}

/// `P(τ|t) = P(τ|τ) − Σ_{s∈(τ,t]} P(τ|τ) Ψ(s,τ)ᵀ H_sᵀ S_s⁻¹ H_s Ψ(s,τ) P(τ|τ)`
/// where `Ψ(τ+1,τ) = Φ_τ` and `Ψ(s+1,τ) = Φ_s (I − K_s H_s) Ψ(s,τ)` carries an
/// error at `τ` to the predicted error at `s`, and `S_s` is the innovation
/// covariance. Arguments are node indices.
pub fn smoother_covariance(fp: &FilterProblem, cov: &CovarianceTrajectory, tau: usize, t: usize) -> Result<SmootherResult> {
    let grid = *fp.grid();
    if cov.grid != grid {
        return Err(Error::Grid("covariance trajectory from a different grid".into()));
    }
    if tau > t {
        return Err(Error::Ordering(format!("smoothing time index {tau} lies after {t}")));
    }
    if t > grid.steps() {
        return Err(Error::Grid(format!("node {t} beyond the grid")));
    }
    let n = fp.state_dim();
    let p_tau = cov.posterior[tau].matrix();
    let mut psi = DMatrix::<f64>::identity(n, n);
    let mut reduction = DMatrix::<f64>::zeros(n, n);
    let mut gains = Vec::new();
    for s in tau + 1..=t {
        psi = fp.transition.step(s - 1) * psi;
        if let Some(s_inv) = &cov.innovation_inv[s] {
            let h = fp.observation.at_node(s).matrix();
            // P_τ Ψᵀ Hᵀ
            let cross = p_tau * (h * &psi).transpose();
            let gain = &cross * s_inv.matrix();
            reduction += &gain * cross.transpose();
            gains.push((s, LinearMap::new(gain)?));
            psi = (DMatrix::identity(n, n) - cov.step_gains[s].matrix() * h) * psi;
        }
    }
    let mut covariance = p_tau - reduction;
    clip_psd(&mut covariance, PSD_CLIP);
    Ok(SmootherResult {
        tau: grid.node(tau),
        t: grid.node(t),
        tau_index: tau,
        t_index: t,
        covariance: LinearMap::new(covariance)?,
        gains,
    })
}
