//! Kalman filter and smoother covariance recursions on a time grid.
//!
//! The sampled model is
//!
//! ```text
//! x_{k+1} = Φ_k (x_k + Δt B_k u_k + w_k),   w_k ~ N(0, Δt Q_k)
//! y_k     = H_k x_k + v_k,                  v_k ~ N(0, R_d(t_k))
//! ```
//!
//! with `Q = D W Dᵀ`, `R = E V Eᵀ` and `R_d` given by the [`NoiseConvention`].

mod duality;
mod estimate;
mod smoother;

pub use duality::dual_lq_problem;
pub use estimate::{
    monte_carlo_error_cov, run_filter_estimate, run_smoother_estimate, ControlInput, FilterEstimate,
    MonteCarloReport, MIN_MONTE_CARLO_SAMPLES,
};
pub use smoother::{smoother_covariance, SmootherResult};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{EvolutionOperator, LinearDynamics};
use crate::operators::{clip_psd, format_f64, nuclear_norm, operator_norm, psd_check, LinearMap, OpValuedFunction, TimeGrid};

/// Eigenvalues of a covariance iterate in `[-PSD_CLIP·(1+‖P‖), 0)` are zeroed.
pub const PSD_CLIP: f64 = 1e-12;

/// How the observation-noise covariance `R = E V Eᵀ` is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    /// `R` is a white-noise intensity; the per-sample covariance is `R/Δt`.
    #[default]
    Intensity,
    /// `R` is already the covariance of each observation sample.
    PerStep,
}

/// `(M, D, W, H, E, V, P0)` on a common grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterProblem {
    pub transition: EvolutionOperator,
    /// `D(t)`: state noise to state.
    pub noise_input: OpValuedFunction,
    /// `W(t)`: state noise covariance.
    pub noise_cov: OpValuedFunction,
    /// `H(t)`: state to observation.
    pub observation: OpValuedFunction,
    /// `E(t)`: observation noise to observation.
    pub obs_noise_input: OpValuedFunction,
    /// `V(t)`: observation noise covariance.
    pub obs_noise_cov: OpValuedFunction,
    /// `P(t0|t−1)`.
    pub prior: LinearMap,
    #[serde(default)]
    pub convention: NoiseConvention,
    /// Update with an observation at `t0` as well.
    #[serde(default)]
    pub observe_initial: bool,
}

impl FilterProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        transition: EvolutionOperator,
        noise_input: OpValuedFunction,
        noise_cov: OpValuedFunction,
        observation: OpValuedFunction,
        obs_noise_input: OpValuedFunction,
        obs_noise_cov: OpValuedFunction,
        prior: LinearMap,
    ) -> Result<Self> {
        let fp = FilterProblem {
            transition,
            noise_input,
            noise_cov,
            observation,
            obs_noise_input,
            obs_noise_cov,
            prior,
            convention: NoiseConvention::default(),
            observe_initial: false,
        };
        fp.validate()?;
        Ok(fp)
    }

    /// Shorthand with `D = I`, `E = I`, so `Q = W` and `R = V`.
    pub fn with_covariances(
        transition: EvolutionOperator,
        q: OpValuedFunction,
        observation: OpValuedFunction,
        r: OpValuedFunction,
        prior: LinearMap,
    ) -> Result<Self> {
        let grid = *transition.grid();
        let n = transition.dim();
        let p = observation.rows();
        Self::new(
            transition,
            OpValuedFunction::constant(grid, LinearMap::identity(n)),
            q,
            observation,
            OpValuedFunction::constant(grid, LinearMap::identity(p)),
            r,
            prior,
        )
    }

    pub fn with_convention(mut self, convention: NoiseConvention) -> Result<Self> {
        self.convention = convention;
        self.validate()?;
        Ok(self)
    }

    pub fn with_observe_initial(mut self, observe_initial: bool) -> Self {
        self.observe_initial = observe_initial;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        self.transition.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.transition.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.rows()
    }

    /// `Q(t_k) = D W Dᵀ`.
    pub fn state_noise(&self, k: usize) -> DMatrix<f64> {
        let d = self.noise_input.at_node(k).matrix();
        d * self.noise_cov.at_node(k).matrix() * d.transpose()
    }

    /// `R(t_k) = E V Eᵀ`.
    pub fn obs_noise(&self, k: usize) -> DMatrix<f64> {
        let e = self.obs_noise_input.at_node(k).matrix();
        e * self.obs_noise_cov.at_node(k).matrix() * e.transpose()
    }

    /// Covariance of the observation sample at `t_k`.
    pub fn discrete_obs_noise(&self, k: usize) -> DMatrix<f64> {
        match self.convention {
            NoiseConvention::Intensity => self.obs_noise(k) / self.grid().dt(),
            NoiseConvention::PerStep => self.obs_noise(k),
        }
    }

    /// Whether an update happens at node `k`.
    pub fn observes_at(&self, k: usize) -> bool {
        (k > 0 || self.observe_initial) && self.observation.at_node(k).matrix().iter().any(|&v| v != 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = *self.grid();
        let named = [
            ("D", &self.noise_input),
            ("W", &self.noise_cov),
            ("H", &self.observation),
            ("E", &self.obs_noise_input),
            ("V", &self.obs_noise_cov),
        ];
        for (name, f) in named {
            if *f.grid() != grid {
                return Err(Error::Grid(format!("{name} sampled on a different grid")));
            }
        }
        let n = self.state_dim();
        let p = self.obs_dim();
        let shape_err = |what: &str| Err(Error::Shape(what.to_string()));
        if self.noise_input.rows() != n {
            return shape_err("D must map into the state space");
        }
        if self.noise_cov.rows() != self.noise_input.cols() || self.noise_cov.cols() != self.noise_input.cols() {
            return shape_err("W must be square on the domain of D");
        }
        if self.observation.cols() != n {
            return shape_err("H must act on the state space");
        }
        if self.obs_noise_input.rows() != p {
            return shape_err("E must map into the observation space");
        }
        if self.obs_noise_cov.rows() != self.obs_noise_input.cols() || self.obs_noise_cov.cols() != self.obs_noise_input.cols() {
            return shape_err("V must be square on the domain of E");
        }
        if self.prior.shape() != (n, n) {
            return shape_err("prior covariance must be square on the state space");
        }
        if !psd_check(&self.prior, 1e-10)?.is_psd {
            return Err(Error::NotPsd("prior covariance".into()));
        }
        for k in 0..grid.len() {
            if !psd_check(&self.state_noise(k), 1e-10)?.is_psd {
                return Err(Error::NotPsd(format!("state noise covariance at node {k}")));
            }
            if self.discrete_obs_noise(k).cholesky().is_none() {
                return Err(Error::Coercivity { node: k });
            }
        }
        Ok(())
    }

    /// Same problem with a different observation operator.
    pub fn with_observation(&self, observation: OpValuedFunction) -> Result<Self> {
        let mut fp = self.clone();
        fp.observation = observation;
        fp.validate()?;
        Ok(fp)
    }
}

/// Filter covariances, gains and the closed-loop error evolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceTrajectory {
    pub grid: TimeGrid,
    /// `P(t_k|t_k)`.
    pub posterior: Vec<LinearMap>,
    /// `P(t_k|t_{k−1})`; the first entry is the prior.
    pub predicted: Vec<LinearMap>,
    /// `K(t_k) = P(t_k|t_k) H(t_k)ᵀ R(t_k)⁻¹`.
    pub gains: Vec<LinearMap>,
    /// Update weights actually applied, `P⁻Hᵀ(H P⁻ Hᵀ + R_d)⁻¹`; zero where
    /// nothing is observed.
    pub step_gains: Vec<LinearMap>,
    /// `(H P⁻ Hᵀ + R_d)⁻¹` where an update happens.
    pub innovation_inv: Vec<Option<LinearMap>>,
    /// `M_K` with step factors `(I − K_{k+1} H_{k+1}) Φ_k`.
    pub error_evolution: EvolutionOperator,
}

impl CovarianceTrajectory {
    pub fn final_posterior(&self) -> &LinearMap {
        self.posterior.last().expect("grid has at least two nodes")
    }

    /// CSV with header `t,trace,op_norm,nuclear_norm`, one row per node.
    pub fn summary_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["t", "trace", "op_norm", "nuclear_norm"])?;
        for (k, p) in self.posterior.iter().enumerate() {
            writer.write_record([
                format_f64(self.grid.node(k)),
                format_f64(p.trace()),
                format_f64(operator_norm(p)?),
                format_f64(nuclear_norm(p)?),
            ])?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

struct Update {
    posterior: DMatrix<f64>,
    gain: DMatrix<f64>,
    innovation_inv: DMatrix<f64>,
}

/// Joseph-form measurement update of `P⁻`.
fn update(fp: &FilterProblem, k: usize, predicted: &DMatrix<f64>) -> Result<Update> {
    let h = fp.observation.at_node(k).matrix();
    let r_d = fp.discrete_obs_noise(k);
    let s = h * predicted * h.transpose() + &r_d;
    let s_inv = s.cholesky().ok_or(Error::Coercivity { node: k })?.inverse();
    let gain = predicted * h.transpose() * &s_inv;
    let n = fp.state_dim();
    let a = DMatrix::identity(n, n) - &gain * h;
    let mut posterior = &a * predicted * a.transpose() + &gain * r_d * gain.transpose();
    clip_psd(&mut posterior, PSD_CLIP);
    Ok(Update { posterior, gain, innovation_inv: s_inv })
}

/// `P⁻_{k+1} = Φ_k (P_k + Δt Q_k) Φ_kᵀ`.
fn predict(fp: &FilterProblem, k: usize, posterior: &DMatrix<f64>) -> DMatrix<f64> {
    let phi = fp.transition.step(k);
    let mut p = phi * (posterior + fp.state_noise(k) * fp.grid().dt()) * phi.transpose();
    clip_psd(&mut p, PSD_CLIP);
    p
}

/// Forward covariance recursion from `P(t0|t−1)`.
pub fn filter_covariance(fp: &FilterProblem) -> Result<CovarianceTrajectory> {
    fp.validate()?;
    let grid = *fp.grid();
    let n = fp.state_dim();
    let p_dim = fp.obs_dim();
    let len = grid.len();

    let mut posterior = Vec::with_capacity(len);
    let mut predicted = Vec::with_capacity(len);
    let mut step_gains = Vec::with_capacity(len);
    let mut innovation_inv = Vec::with_capacity(len);

    let mut current = fp.prior.matrix().clone();
    for k in 0..len {
        if k > 0 {
            current = predict(fp, k - 1, &posterior[k - 1]);
        }
        predicted.push(current.clone());
        if fp.observes_at(k) {
            let up = update(fp, k, &current)?;
            posterior.push(up.posterior);
            step_gains.push(up.gain);
            innovation_inv.push(Some(up.innovation_inv));
        } else {
            posterior.push(current.clone());
            step_gains.push(DMatrix::zeros(n, p_dim));
            innovation_inv.push(None);
        }
    }

    let error_evolution = EvolutionOperator::from_fn(grid, |k| {
        let h = fp.observation.at_node(k + 1).matrix();
        LinearMap::new((DMatrix::identity(n, n) - &step_gains[k + 1] * h) * fp.transition.step(k))
    })?;
    let gains = (0..len)
        .map(|k| {
            let r_inv = fp.obs_noise(k).cholesky().ok_or(Error::Coercivity { node: k })?.inverse();
            LinearMap::new(&posterior[k] * fp.observation.at_node(k).matrix().transpose() * r_inv)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CovarianceTrajectory {
        grid,
        posterior: posterior.into_iter().map(LinearMap::new).collect::<Result<_>>()?,
        predicted: predicted.into_iter().map(LinearMap::new).collect::<Result<_>>()?,
        gains,
        step_gains: step_gains.into_iter().map(LinearMap::new).collect::<Result<_>>()?,
        innovation_inv: innovation_inv.into_iter().map(|s| s.map(LinearMap::new).transpose()).collect::<Result<_>>()?,
        error_evolution,
    })
}
