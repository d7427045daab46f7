use super::FilterProblem;
use crate::error::{Error, Result};
use crate::lq_riccati::{CostQuadrature, LQProblem};
use crate::operators::{sqrt_psd, LinearMap, OpValuedFunction};

/// The control problem dual to `fp` under time reversal `s ↦ t0 + b − s`:
/// `T(t,s) = M(b−s, b−t)ᵀ`, `B(s) = H(b−s)ᵀ`, `C(s) = Q(b−s)^{1/2}`,
/// `F(s) = Δt R_d(b−s)` (which is `R(b−s)` under the intensity convention),
/// `G = P(t0|t−1)`, with the running cost sampled at right endpoints.
///
/// Its Riccati solution reproduces the filter covariance, `Π(t_{N−k}) = P(t_k|t_k)`.
pub fn dual_lq_problem(fp: &FilterProblem) -> Result<LQProblem> {
    fp.validate()?;
    if fp.observe_initial {
        return Err(Error::InvalidInput("duality needs the filter to start from the prior (no update at t0)".into()));
    }
    let grid = *fp.grid();
    let steps = grid.steps();
    let dt = grid.dt();
    let input = OpValuedFunction::from_fn_indexed(grid, |j| Ok(fp.observation.at_node(steps - j).transpose()))?;
    let output = OpValuedFunction::from_fn_indexed(grid, |j| LinearMap::new(sqrt_psd(&fp.state_noise(steps - j), 1e-10)?))?;
    let control_weight = OpValuedFunction::from_fn_indexed(grid, |j| LinearMap::new(fp.discrete_obs_noise(steps - j) * dt))?;
    Ok(LQProblem::new(fp.transition.time_reversed_adjoint(), input, output, control_weight, fp.prior.clone())?
        .with_quadrature(CostQuadrature::RightEndpoint))
}
