use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{smoother_covariance, CovarianceTrajectory, FilterProblem};
use crate::error::{Error, Result};
use crate::operators::{sqrt_psd, LinearMap, OpValuedFunction};

pub const MIN_MONTE_CARLO_SAMPLES: usize = 100;

/// Known control forcing `x_{k+1} = Φ_k (x_k + Δt B_k u_k + w_k)`.
#[derive(Clone, Debug)]
pub struct ControlInput {
    pub operator: OpValuedFunction,
    /// One control per node; the last one is unused.
    pub values: Vec<DVector<f64>>,
}

/// Filter estimates `x̂(t_k|t_k)` with the innovations that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterEstimate {
    pub filtered: Vec<DVector<f64>>,
    /// `x̂(t_k|t_{k−1})`; the first entry is the prior mean.
    pub predicted: Vec<DVector<f64>>,
    /// `y_k − H_k x̂(t_k|t_{k−1})` at observed nodes.
    pub innovations: Vec<Option<DVector<f64>>>,
}

/// Number of observation samples `run_filter_estimate` expects: one per
/// node after `t0`, plus one at `t0` when the problem observes it.
fn expected_observations(fp: &FilterProblem) -> usize {
    fp.grid().steps() + usize::from(fp.observe_initial)
}

fn observation_at<'a>(fp: &FilterProblem, observations: &'a [DVector<f64>], k: usize) -> &'a DVector<f64> {
    if fp.observe_initial {
        &observations[k]
    } else {
        &observations[k - 1]
    }
}

/// Runs `x̂(t_k|t_k) = x̂⁻_k + K_k (y_k − H_k x̂⁻_k)` with the update weights
/// stored in `cov`, starting from `x̂(t0|t−1) = prior_mean`.
pub fn run_filter_estimate(
    fp: &FilterProblem,
    cov: &CovarianceTrajectory,
    observations: &[DVector<f64>],
    prior_mean: &DVector<f64>,
    controls: Option<&ControlInput>,
) -> Result<FilterEstimate> {
    let grid = *fp.grid();
    let n = fp.state_dim();
    if cov.grid != grid {
        return Err(Error::Grid("covariance trajectory from a different grid".into()));
    }
    if observations.len() != expected_observations(fp) {
        return Err(Error::Shape(format!(
            "{} observations, expected {}",
            observations.len(),
            expected_observations(fp)
        )));
    }
    if let Some(i) = observations.iter().position(|y| y.len() != fp.obs_dim()) {
        return Err(Error::Shape(format!("observation {i} has length {}, expected {}", observations[i].len(), fp.obs_dim())));
    }
    if prior_mean.len() != n {
        return Err(Error::Shape(format!("prior mean has length {}, expected {n}", prior_mean.len())));
    }
    if let Some(c) = controls {
        if *c.operator.grid() != grid || c.operator.rows() != n {
            return Err(Error::Shape("control operator does not match the filter problem".into()));
        }
        if c.values.len() != grid.len() || c.values.iter().any(|u| u.len() != c.operator.cols()) {
            return Err(Error::Shape("controls must give one vector per grid node".into()));
        }
    }

    let dt = grid.dt();
    let mut filtered: Vec<DVector<f64>> = Vec::with_capacity(grid.len());
    let mut predicted = Vec::with_capacity(grid.len());
    let mut innovations = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let prior = if k == 0 {
            prior_mean.clone()
        } else {
            let mut x = filtered[k - 1].clone();
            if let Some(c) = controls {
                x += c.operator.at_node(k - 1).matrix() * &c.values[k - 1] * dt;
            }
            fp.transition.step(k - 1) * x
        };
        if cov.innovation_inv[k].is_some() {
            let eps = observation_at(fp, observations, k) - fp.observation.at_node(k).matrix() * &prior;
            filtered.push(&prior + cov.step_gains[k].matrix() * &eps);
            innovations.push(Some(eps));
        } else {
            filtered.push(prior.clone());
            innovations.push(None);
        }
        predicted.push(prior);
    }
    Ok(FilterEstimate { filtered, predicted, innovations })
}

/// `x̂(τ|t) = x̂(τ|τ) + Σ_{s∈(τ,t]} K_s(s) ε_s` from stored innovations.
pub fn run_smoother_estimate(
    fp: &FilterProblem,
    cov: &CovarianceTrajectory,
    estimate: &FilterEstimate,
    tau: usize,
    t: usize,
) -> Result<DVector<f64>> {
    let sm = smoother_covariance(fp, cov, tau, t)?;
    Ok(apply_smoother_gains(&sm.gains, estimate, tau))
}

fn apply_smoother_gains(gains: &[(usize, LinearMap)], estimate: &FilterEstimate, tau: usize) -> DVector<f64> {
    let mut x = estimate.filtered[tau].clone();
    for (s, gain) in gains {
        if let Some(eps) = &estimate.innovations[*s] {
            x += gain.matrix() * eps;
        }
    }
    x
}

/// Square roots of every noise covariance, computed once per problem.
pub(crate) struct NoiseRoots {
    prior: DMatrix<f64>,
    state: Vec<DMatrix<f64>>,
    obs: Vec<Option<DMatrix<f64>>>,
}

impl NoiseRoots {
    pub(crate) fn new(fp: &FilterProblem) -> Result<Self> {
        let dt = fp.grid().dt();
        let steps = fp.grid().steps();
        let state = (0..steps).map(|k| sqrt_psd(&(fp.state_noise(k) * dt), 1e-10)).collect::<Result<_>>()?;
        let obs = (0..=steps)
            .map(|k| {
                if !fp.observes_at(k) {
                    return Ok(None);
                }
                let chol = fp.discrete_obs_noise(k).cholesky().ok_or(Error::Coercivity { node: k })?;
                Ok(Some(chol.l()))
            })
            .collect::<Result<_>>()?;
        Ok(NoiseRoots { prior: sqrt_psd(fp.prior.matrix(), 1e-10)?, state, obs })
    }
}

fn normal_vector(rng: &mut ChaCha20Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// One draw of states on every node and observations in the layout
/// `run_filter_estimate` expects, from a zero-mean prior. The stream is fixed
/// by `(seed, index)`.
pub(crate) fn sample_path(fp: &FilterProblem, roots: &NoiseRoots, seed: u64, index: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = fp.state_dim();
    let p = fp.obs_dim();
    let steps = fp.grid().steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut observations = Vec::with_capacity(steps + 1);
    let observe = |k: usize, x: &DVector<f64>, rng: &mut ChaCha20Rng| match &roots.obs[k] {
        Some(l) => fp.observation.at_node(k).matrix() * x + l * normal_vector(rng, p),
        None => DVector::zeros(p),
    };
    let x0 = &roots.prior * normal_vector(&mut rng, n);
    if fp.observe_initial {
        observations.push(observe(0, &x0, &mut rng));
    }
    states.push(x0);
    for k in 0..steps {
        let w = &roots.state[k] * normal_vector(&mut rng, n);
        let x = fp.transition.step(k) * (&states[k] + w);
        observations.push(observe(k + 1, &x, &mut rng));
        states.push(x);
    }
    (states, observations)
}

/// Sample statistics of filter and smoother errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n_samples: usize,
    pub seed: u64,
    /// `E[x̃ x̃ᵀ]` at each node (the error mean is zero, so no centring).
    pub empirical: Vec<LinearMap>,
    /// `‖emp − P‖_F / ‖P‖_F` at nodes with `P(t_k|t_k) ≠ 0`.
    pub deviations: Vec<Option<f64>>,
    pub max_deviation: f64,
    /// Largest `|corr(x̃_i(b), ε_j(s))|` over components and observed nodes `s`.
    pub max_innovation_correlation: f64,
    /// `3/√n_samples`.
    pub correlation_band: f64,
    /// `E[(x(t0) − x̂(t0|b))(…)ᵀ]`.
    pub smoother_empirical: LinearMap,
    pub smoother_deviation: Option<f64>,
}

fn relative_deviation(empirical: &DMatrix<f64>, reference: &DMatrix<f64>) -> Option<f64> {
    let scale = reference.norm();
    (scale > 0.0).then(|| (empirical - reference).norm() / scale)
}

/// Simulates truth and observations `n_samples` times, runs the filter
/// (prior mean 0) and compares error statistics with the recursions.
pub fn monte_carlo_error_cov(fp: &FilterProblem, n_samples: usize, seed: u64) -> Result<MonteCarloReport> {
    if n_samples < MIN_MONTE_CARLO_SAMPLES {
        return Err(Error::InvalidInput(format!("need at least {MIN_MONTE_CARLO_SAMPLES} samples, got {n_samples}")));
    }
    let cov = super::filter_covariance(fp)?;
    let roots = NoiseRoots::new(fp)?;
    let grid = *fp.grid();
    let n = fp.state_dim();
    let p = fp.obs_dim();
    let steps = grid.steps();
    let smoother = smoother_covariance(fp, &cov, 0, steps)?;
    let observed: Vec<usize> = (0..=steps).filter(|&k| cov.innovation_inv[k].is_some()).collect();
    let zero_mean = DVector::zeros(n);

    let mut second = vec![DMatrix::<f64>::zeros(n, n); grid.len()];
    let mut smooth_second = DMatrix::<f64>::zeros(n, n);
    let mut cross = vec![DMatrix::<f64>::zeros(n, p); observed.len()];
    let mut innov_sq = vec![DVector::<f64>::zeros(p); observed.len()];
    for i in 0..n_samples {
        let (states, observations) = sample_path(fp, &roots, seed, i as u64);
        let est = run_filter_estimate(fp, &cov, &observations, &zero_mean, None)?;
        for k in 0..grid.len() {
            let e = &states[k] - &est.filtered[k];
            second[k] += &e * e.transpose();
        }
        let e_final = &states[steps] - &est.filtered[steps];
        for (slot, &s) in observed.iter().enumerate() {
            let eps = est.innovations[s].as_ref().expect("observed node has an innovation");
            cross[slot] += &e_final * eps.transpose();
            innov_sq[slot] += eps.component_mul(eps);
        }
        let e0 = &states[0] - apply_smoother_gains(&smoother.gains, &est, 0);
        smooth_second += &e0 * e0.transpose();
    }

    let scale = 1.0 / n_samples as f64;
    let empirical: Vec<DMatrix<f64>> = second.into_iter().map(|m| m * scale).collect();
    let deviations: Vec<Option<f64>> =
        empirical.iter().zip(&cov.posterior).map(|(e, p)| relative_deviation(e, p.matrix())).collect();
    let max_deviation = deviations.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let final_var = empirical[steps].diagonal();
    let mut max_corr = 0.0f64;
    for (c, sq) in cross.iter().zip(&innov_sq) {
        for a in 0..n {
            for b in 0..p {
                let denom = (final_var[a] * sq[b] * scale).sqrt();
                if denom > 0.0 {
                    max_corr = max_corr.max((c[(a, b)] * scale).abs() / denom);
                }
            }
        }
    }
    let smooth_emp = smooth_second * scale;
    Ok(MonteCarloReport {
        n_samples,
        seed,
        smoother_deviation: relative_deviation(&smooth_emp, smoother.covariance.matrix()),
        smoother_empirical: LinearMap::new(smooth_emp)?,
        empirical: empirical.into_iter().map(LinearMap::new).collect::<Result<_>>()?,
        deviations,
        max_deviation,
        max_innovation_correlation: max_corr,
        correlation_band: 3.0 / (n_samples as f64).sqrt(),
    })
}
