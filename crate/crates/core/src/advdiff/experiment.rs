use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::config::AdvDiffConfig;
use super::model::AdvDiffModel;
use crate::error::{Error, Result};
use crate::evolution::LinearDynamics;
use crate::placement::{Criterion, PlacementModel};

/// Candidate sensor locations: centres of the configured horizontal grid at
/// the configured height, in lexicographic order.
pub fn candidate_locations(cfg: &AdvDiffConfig) -> Vec<Vec<f64>> {
    let c = &cfg.candidates;
    let (hx, hy) = (cfg.domain[0] / c.nx as f64, cfg.domain[1] / c.ny as f64);
    (0..c.nx).flat_map(|i| (0..c.ny).map(move |j| vec![(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy, c.z])).collect()
}

/// Single-sensor placement on the advection-diffusion model without model
/// error. With `P(t0|t−1) = L Lᵀ`, one scalar observation `y = h_r x(t_j) + ν`
/// and `u = Lᵀ M(t_j, t0)ᵀ h_rᵀ`,
///
/// ```text
/// ‖P(b|b)‖₁  = ‖M(b, t0) L‖²_F − ‖M(b, t0) L u‖² / (‖u‖² + R)
/// ‖P(t0|b)‖₁ = ‖L‖²_F          − ‖L u‖²          / (‖u‖² + R)
/// ```
///
/// so each candidate costs one adjoint propagation (plus one forward
/// propagation for the filter), and `‖M(b, t0) L‖²_F` is computed once.
#[derive(Debug)]
pub struct SingleSensorExperiment {
    model: AdvDiffModel,
    criterion: Criterion,
    factor: DMatrix<f64>,
    node: usize,
    variance: f64,
    threads: usize,
    propagated_trace: OnceLock<f64>,
}

impl SingleSensorExperiment {
    pub fn new(cfg: &AdvDiffConfig, criterion: Criterion) -> Result<Self> {
        if !matches!(criterion, Criterion::FilterNuclear | Criterion::SmootherNuclear) {
            return Err(Error::InvalidInput(format!("sensor placement needs a filter or smoother criterion, got {criterion}")));
        }
        let model = AdvDiffModel::new(cfg)?;
        let factor = model.prior_factor()?;
        Ok(SingleSensorExperiment {
            node: model.observation_node(),
            variance: cfg.observation.noise_variance,
            model,
            criterion,
            factor,
            threads: 1,
            propagated_trace: OnceLock::new(),
        })
    }

    /// Workers used for the one-off trace propagation.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn model(&self) -> &AdvDiffModel {
        &self.model
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn candidates(&self) -> Vec<Vec<f64>> {
        candidate_locations(self.model.config())
    }

    /// `‖P(t0|t−1)‖₁`.
    pub fn prior_trace(&self) -> f64 {
        self.factor.norm_squared()
    }

    /// `‖M(b, t0) L‖²_F`: the filter cost without any observation.
    pub fn propagated_trace(&self) -> f64 {
        *self.propagated_trace.get_or_init(|| {
            let steps = self.model.grid().steps();
            let cols = self.factor.ncols();
            let column = |j: usize| self.model.propagate(0, steps, &self.factor.column(j).into_owned()).norm_squared();
            let threads = self.threads.clamp(1, cols.max(1));
            let norms: Vec<f64> = if threads == 1 {
                (0..cols).map(column).collect()
            } else {
                let chunk = cols.div_ceil(threads);
                std::thread::scope(|s| {
                    let handles: Vec<_> = (0..cols)
                        .step_by(chunk)
                        .map(|start| s.spawn(move || (start..(start + chunk).min(cols)).map(column).collect::<Vec<_>>()))
                        .collect();
                    handles.into_iter().flat_map(|h| h.join().expect("trace worker panicked")).collect()
                })
            };
            norms.iter().sum()
        })
    }

    fn base_trace(&self) -> f64 {
        match self.criterion {
            Criterion::FilterNuclear => self.propagated_trace(),
            _ => self.prior_trace(),
        }
    }

    /// `(u, a)` with `u = Lᵀ M(t_j,t0)ᵀ h_rᵀ` and `a` the update direction:
    /// `M(b,t0) L u` for the filter, `L u` for the smoother.
    fn update(&self, r: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let dim = self.model.state_dim();
        let mut h = DVector::zeros(dim);
        for (idx, w) in self.model.observation_weights(r)? {
            h[idx] = w;
        }
        let adj = self.model.propagate_transpose(0, self.node, &h);
        let u = self.factor.tr_mul(&adj);
        let lu = &self.factor * &u;
        let a = match self.criterion {
            Criterion::FilterNuclear => self.model.propagate(0, self.model.grid().steps(), &lu),
            _ => lu,
        };
        Ok((u, a))
    }

    /// `‖h_r − h_{r0}‖`.
    fn row_distance(&self, r: &[f64], r0: &[f64]) -> Result<f64> {
        let mut diff = DVector::<f64>::zeros(self.model.cells());
        for (idx, w) in self.model.observation_weights(r)? {
            diff[idx] += w;
        }
        for (idx, w) in self.model.observation_weights(r0)? {
            diff[idx] -= w;
        }
        Ok(diff.norm())
    }
}

impl PlacementModel for SingleSensorExperiment {
    fn criterion(&self) -> Criterion {
        self.criterion
    }

    fn cost(&self, r: &[f64]) -> Result<f64> {
        let (u, a) = self.update(r)?;
        Ok(self.base_trace() - a.norm_squared() / (u.norm_squared() + self.variance))
    }

    fn operator_deviation(&self, r: &[f64], r0: &[f64]) -> Result<f64> {
        self.row_distance(r, r0)
    }

    /// `‖a₀a₀ᵀ/β₀ − a aᵀ/β‖₁` for the two rank-one reductions, from the
    /// eigenvalues of the 2×2 matrix `K ZᵀZ` with `Z = [a₀, a]` and
    /// `K = diag(1/β₀, −1/β)`.
    fn solution_deviation(&self, r: &[f64], r0: &[f64]) -> Result<f64> {
        let (u, a) = self.update(r)?;
        let (u0, a0) = self.update(r0)?;
        let (k0, k1) = (1.0 / (u0.norm_squared() + self.variance), -1.0 / (u.norm_squared() + self.variance));
        let (g00, g01, g11) = (a0.norm_squared(), a0.dot(&a), a.norm_squared());
        let (m00, m01, m10, m11) = (k0 * g00, k0 * g01, k1 * g01, k1 * g11);
        let trace = m00 + m11;
        let det = m00 * m11 - m01 * m10;
        let disc = (0.25 * trace * trace - det).max(0.0).sqrt();
        Ok((0.5 * trace + disc).abs() + (0.5 * trace - disc).abs())
    }
}
