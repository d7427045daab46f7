//! Mild evolution operators on a time grid.
//!
//! An [`EvolutionOperator`] stores only the one-step factors
//! `Φ(t_{k+1}, t_k)`; `Φ(t_j, t_i)` is their ordered product, so the cocycle
//! identity holds by construction on grid nodes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{operator_norm, LinearMap, OpValuedFunction, TimeGrid};

/// Anything that advances a state vector across the steps of a grid.
///
/// Dense [`EvolutionOperator`]s implement it, and so do matrix-free models
/// (the advection-diffusion transition never materializes its step matrix).
pub trait LinearDynamics {
    fn state_dim(&self) -> usize;

    fn grid(&self) -> &TimeGrid;

    /// `Φ(t_{k+1}, t_k) x`.
    fn apply_step(&self, k: usize, x: &DVector<f64>) -> DVector<f64>;

    /// `Φ(t_{k+1}, t_k)ᵀ y`.
    fn apply_step_transpose(&self, k: usize, y: &DVector<f64>) -> DVector<f64>;

    /// `Φ(t_to, t_from) x` for `from ≤ to`.
    fn propagate(&self, from: usize, to: usize, x: &DVector<f64>) -> DVector<f64> {
        (from..to).fold(x.clone(), |acc, k| self.apply_step(k, &acc))
    }

    /// `Φ(t_to, t_from)ᵀ y` for `from ≤ to`.
    fn propagate_transpose(&self, from: usize, to: usize, y: &DVector<f64>) -> DVector<f64> {
        (from..to).rev().fold(y.clone(), |acc, k| self.apply_step_transpose(k, &acc))
    }
}

/// Two-parameter transition family realized by its one-step factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOperator {
    grid: TimeGrid,
    step_maps: Vec<LinearMap>,
}

impl EvolutionOperator {
    pub fn new(grid: TimeGrid, step_maps: Vec<LinearMap>) -> Result<Self> {
        if step_maps.len() != grid.steps() {
            return Err(Error::Grid(format!("{} step maps for {} steps", step_maps.len(), grid.steps())));
        }
        let n = step_maps[0].rows();
        if let Some(k) = step_maps.iter().position(|m| m.rows() != n || m.cols() != n) {
            return Err(Error::Shape(format!("step map {k} is not {n}x{n}")));
        }
        Ok(EvolutionOperator { grid, step_maps })
    }

    pub fn time_invariant(grid: TimeGrid, step: LinearMap) -> Result<Self> {
        Self::new(grid, vec![step; grid.steps()])
    }

    pub fn identity(grid: TimeGrid, n: usize) -> Self {
        EvolutionOperator { grid, step_maps: vec![LinearMap::identity(n); grid.steps()] }
    }

    pub fn from_fn<F>(grid: TimeGrid, mut f: F) -> Result<Self>
    where
        F: FnMut(usize) -> Result<LinearMap>,
    {
        let steps = (0..grid.steps()).map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(grid, steps)
    }

    /// Dense materialization of any [`LinearDynamics`] (columns of the
    /// identity pushed through each step).
    pub fn materialize<D: LinearDynamics + ?Sized>(dynamics: &D) -> Result<Self> {
        let n = dynamics.state_dim();
        let grid = *dynamics.grid();
        Self::from_fn(grid, |k| {
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                m.set_column(j, &dynamics.apply_step(k, &e));
            }
            LinearMap::new(m)
        })
    }

    pub fn dim(&self) -> usize {
        self.step_maps[0].rows()
    }

    pub fn step_maps(&self) -> &[LinearMap] {
        &self.step_maps
    }

    pub fn step(&self, k: usize) -> &DMatrix<f64> {
        self.step_maps[k].matrix()
    }

    /// `Φ(t_j, t_i) = step_{j-1} ⋯ step_i`; the identity when `i == j`.
    pub fn eval(&self, j: usize, i: usize) -> Result<DMatrix<f64>> {
        if i > j || j > self.grid.steps() {
            return Err(Error::Ordering(format!("cannot evaluate Φ(t_{j}, t_{i})")));
        }
        let mut acc = DMatrix::identity(self.dim(), self.dim());
        for k in i..j {
            acc = self.step(k) * acc;
        }
        Ok(acc)
    }

    /// Evaluation at grid times.
    pub fn eval_at(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let j = self.grid.index_of(t).ok_or_else(|| Error::Grid(format!("{t} is not a grid node")))?;
        let i = self.grid.index_of(s).ok_or_else(|| Error::Grid(format!("{s} is not a grid node")))?;
        self.eval(j, i)
    }

    /// The adjoint family under time reversal, `U(t, s) = Φ*(b − s, b − t)`:
    /// step factors transposed and taken in reverse order. Applying it twice
    /// returns the original operator.
    pub fn time_reversed_adjoint(&self) -> Self {
        let step_maps = self.step_maps.iter().rev().map(LinearMap::transpose).collect();
        EvolutionOperator { grid: self.grid, step_maps }
    }

    /// `max ‖Φ(t_j, t_i)‖` over every node pair (O(steps²) products).
    pub fn sup_norm(&self) -> f64 {
        let n = self.dim();
        let mut best: f64 = 1.0;
        for i in 0..self.grid.steps() {
            let mut acc = DMatrix::identity(n, n);
            for k in i..self.grid.steps() {
                acc = self.step(k) * acc;
                best = best.max(operator_norm(&acc).unwrap_or(f64::INFINITY));
            }
        }
        best
    }

    /// Dumps step maps as CSV blocks, one `# step k` header per factor.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = String::new();
        for (k, m) in self.step_maps.iter().enumerate() {
            out.push_str(&format!("# step {k}\n"));
            out.push_str(&m.to_csv_string()?);
        }
        Ok(out)
    }
}

impl LinearDynamics for EvolutionOperator {
    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn apply_step(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        self.step(k) * x
    }

    fn apply_step_transpose(&self, k: usize, y: &DVector<f64>) -> DVector<f64> {
        self.step(k).tr_mul(y)
    }
}

/// Result of [`verify_evolution_axioms`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxiomReport {
    /// `max ‖Φ(t,t) − I‖` over nodes.
    pub identity_residual: f64,
    /// `max ‖Φ(t,r)Φ(r,s) − Φ(t,s)‖` over sampled triples.
    pub cocycle_residual: f64,
    /// Sampled uniform bound `λ̂ = max ‖Φ(t,s)‖`.
    pub lambda_hat: f64,
    pub triples_checked: usize,
    pub violations: Vec<String>,
    /// Strong continuity has no content on a finite grid.
    pub strong_continuity_testable: bool,
}

/// Checks `Φ(t,t) = I` and the cocycle identity on sampled node triples
/// `s ≤ r ≤ t`, and estimates the uniform bound.
pub fn verify_evolution_axioms(phi: &EvolutionOperator, sample_triples: usize, tol: f64) -> AxiomReport {
    let n = phi.dim();
    let steps = phi.grid.steps();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut violations = Vec::new();

    let identity_residual = (0..=steps)
        .map(|k| phi.eval(k, k).map(|m| (m - &eye).norm()).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    if identity_residual > tol {
        violations.push(format!("Φ(t,t) deviates from I by {identity_residual:e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut cocycle_residual: f64 = 0.0;
    let mut lambda_hat: f64 = 1.0;
    for _ in 0..sample_triples {
        let mut idx = [rng.gen_range(0..=steps), rng.gen_range(0..=steps), rng.gen_range(0..=steps)];
        idx.sort_unstable();
        let [s, r, t] = idx;
        let (Ok(tr), Ok(rs), Ok(ts)) = (phi.eval(t, r), phi.eval(r, s), phi.eval(t, s)) else {
            continue;
        };
        let res = (&tr * &rs - &ts).norm() / (1.0 + ts.norm());
        cocycle_residual = cocycle_residual.max(res);
        for m in [&tr, &rs, &ts] {
            lambda_hat = lambda_hat.max(operator_norm(m).unwrap_or(f64::INFINITY));
        }
        if res > tol {
            violations.push(format!("cocycle residual {res:e} at (t,r,s) = ({t},{r},{s})"));
        }
    }
    if let Ok(full) = phi.eval(steps, 0) {
        lambda_hat = lambda_hat.max(operator_norm(&full).unwrap_or(f64::INFINITY));
    }

    AxiomReport {
        identity_residual,
        cocycle_residual,
        lambda_hat,
        triples_checked: sample_triples,
        violations,
        strong_continuity_testable: false,
    }
}

fn check_perturbation(phi: &EvolutionOperator, d: &OpValuedFunction) -> Result<()> {
    if phi.grid != *d.grid() {
        return Err(Error::Grid("perturbation sampled on a different grid".into()));
    }
    if d.rows() != phi.dim() || d.cols() != phi.dim() {
        return Err(Error::Shape(format!(
            "perturbation is {}x{}, state dimension is {}",
            d.rows(),
            d.cols(),
            phi.dim()
        )));
    }
    Ok(())
}

/// Perturbed evolution `Φ_D` solving the discrete Duhamel equation
/// `Φ_D(t_j,t_i) = Φ(t_j,t_i) + Σ_{k=i}^{j-1} Δt Φ(t_j,t_k) D(t_k) Φ_D(t_k,t_i)`,
/// realized by the step factors `Φ(t_{k+1},t_k)(I + Δt D(t_k))`.
pub fn perturb_evolution(phi: &EvolutionOperator, d: &OpValuedFunction) -> Result<EvolutionOperator> {
    check_perturbation(phi, d)?;
    let dt = phi.grid.dt();
    let n = phi.dim();
    EvolutionOperator::from_fn(phi.grid, |k| {
        let factor = DMatrix::identity(n, n) + d.at_node(k).matrix() * dt;
        LinearMap::new(phi.step(k) * factor)
    })
}

/// Diagnostics of the Picard series behind [`perturb_evolution`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub series_terms_used: usize,
    /// `‖Σ_n T_{D,n}(b,t0) − Φ_D(b,t0)‖`.
    pub residual: f64,
    /// `λ̂ exp(λ̂ λ_D (b − t0))`.
    pub bound_estimate: f64,
    /// `‖T_{D,n}(b,t0)‖` per term.
    pub term_norms: Vec<f64>,
    /// `λ̂ (λ̂ λ_D)^n (b − t0)^n / n!` per term.
    pub term_bounds: Vec<f64>,
}

/// Sums the Picard series `T_{D,0} = Φ`,
/// `T_{D,n+1}(t_j,t_0) = Σ_k Δt Φ(t_j,t_k) D(t_k) T_{D,n}(t_k,t_0)` at `(b, t0)`
/// until a term drops below `tol` (relative) and compares the sum with the
/// step-factor construction.
pub fn perturbation_series(
    phi: &EvolutionOperator,
    d: &OpValuedFunction,
    max_terms: usize,
    tol: f64,
) -> Result<PerturbationReport> {
    check_perturbation(phi, d)?;
    let steps = phi.grid.steps();
    let dt = phi.grid.dt();
    let n = phi.dim();
    let horizon = phi.grid.end() - phi.grid.t0();
    let lambda = phi.sup_norm();
    let lambda_d = d.sup_norm();

    // term[k] = T_{D,current}(t_k, t_0) for every node k.
    let mut term: Vec<DMatrix<f64>> = (0..=steps).map(|k| phi.eval(k, 0)).collect::<Result<_>>()?;
    let mut total = term[steps].clone();
    let mut term_norms = vec![operator_norm(&term[steps])?];
    let mut term_bounds = vec![lambda];
    let mut factorial = 1.0;
    let mut used = 1;
    while used < max_terms {
        let mut next = vec![DMatrix::zeros(n, n); steps + 1];
        for k in 0..steps {
            next[k + 1] = phi.step(k) * (&next[k] + d.at_node(k).matrix() * &term[k] * dt);
        }
        term = next;
        total += &term[steps];
        factorial *= used as f64;
        let norm = operator_norm(&term[steps])?;
        term_norms.push(norm);
        term_bounds.push(lambda * (lambda * lambda_d * horizon).powi(used as i32) / factorial);
        used += 1;
        if norm <= tol * (1.0 + operator_norm(&total)?) {
            break;
        }
    }
    let direct = perturb_evolution(phi, d)?.eval(steps, 0)?;
    Ok(PerturbationReport {
        series_terms_used: used,
        residual: operator_norm(&(total - direct))?,
        bound_estimate: lambda * (lambda * lambda_d * horizon).exp(),
        term_norms,
        term_bounds,
    })
}

/// `‖Φ_D(t_j,t_i)x − Φ(t_j,t_i)x − Σ_k Δt Φ(t_j,t_k)D(t_k)Φ_D(t_k,t_i)x‖`.
pub fn duhamel_residual(
    phi: &EvolutionOperator,
    d: &OpValuedFunction,
    phi_d: &EvolutionOperator,
    j: usize,
    i: usize,
    x: &DVector<f64>,
) -> Result<f64> {
    let dt = phi.grid.dt();
    let mut rhs = phi.eval(j, i)? * x;
    for k in i..j {
        rhs += phi.eval(j, k)? * d.at_node(k).matrix() * (phi_d.eval(k, i)? * x) * dt;
    }
    Ok((phi_d.eval(j, i)? * x - rhs).norm())
}
