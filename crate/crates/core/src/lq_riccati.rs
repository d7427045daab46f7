//! Finite-horizon linear-quadratic control on a time grid.
//!
//! The sampled problem is
//!
//! ```text
//! x_{k+1} = Φ_k (x_k + Δt B_k u_k)
//! J = ⟨x_N, G x_N⟩ + Σ_k Δt ( w_l ‖C_k x_k‖² + w_r ‖C_{k+1} x_{k+1}‖² + ⟨u_k, F_k u_k⟩ )
//! ```
//!
//! with `Φ_k = T(t_{k+1}, t_k)` and quadrature weights `(w_l, w_r)`. Both
//! Riccati solvers return its exact discrete optimum, so cost identities
//! hold to round-off and the two solvers agree to the iteration tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{perturb_evolution, EvolutionOperator};
use crate::operators::{clip_psd, format_f64, nuclear_norm, operator_norm, psd_check, LinearMap, OpValuedFunction, TimeGrid};

/// Eigenvalues of a Riccati iterate in `[-PSD_CLIP·(1+‖Π‖), 0)` are zeroed.
pub const PSD_CLIP: f64 = 1e-12;

/// How the running state cost is sampled on each interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostQuadrature {
    /// Half weight at each end of the interval; second order.
    #[default]
    Trapezoidal,
    /// Full weight at the right end. This is the exact dual of the Kalman
    /// filter recursion.
    RightEndpoint,
}

impl CostQuadrature {
    /// `(w_l, w_r)`.
    pub fn weights(self) -> (f64, f64) {
        match self {
            CostQuadrature::Trapezoidal => (0.5, 0.5),
            CostQuadrature::RightEndpoint => (0.0, 1.0),
        }
    }
}

/// `(T, B, C, F, G)` on a common grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LQProblem {
    pub transition: EvolutionOperator,
    /// `B(t)`: control to state.
    pub input: OpValuedFunction,
    /// `C(t)`: state to output.
    pub output: OpValuedFunction,
    /// `F(t)`: symmetric positive definite control weight.
    pub control_weight: OpValuedFunction,
    /// `G`: symmetric PSD terminal weight.
    pub terminal_weight: LinearMap,
    #[serde(default)]
    pub quadrature: CostQuadrature,
}

impl LQProblem {
    pub fn new(
        transition: EvolutionOperator,
        input: OpValuedFunction,
        output: OpValuedFunction,
        control_weight: OpValuedFunction,
        terminal_weight: LinearMap,
    ) -> Result<Self> {
        let p = LQProblem { transition, input, output, control_weight, terminal_weight, quadrature: CostQuadrature::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_quadrature(mut self, quadrature: CostQuadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        use crate::evolution::LinearDynamics;
        self.transition.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.transition.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.input.cols()
    }

    /// Shape and grid consistency, and `G` symmetric PSD.
    pub fn validate(&self) -> Result<()> {
        let grid = *self.grid();
        let n = self.state_dim();
        for (name, f) in [("B", &self.input), ("C", &self.output), ("F", &self.control_weight)] {
            if *f.grid() != grid {
                return Err(Error::Grid(format!("{name} sampled on a different grid")));
            }
        }
        if self.input.rows() != n {
            return Err(Error::Shape(format!("B has {} rows, state dimension is {n}", self.input.rows())));
        }
        if self.output.cols() != n {
            return Err(Error::Shape(format!("C has {} columns, state dimension is {n}", self.output.cols())));
        }
        let m = self.control_dim();
        if self.control_weight.rows() != m || self.control_weight.cols() != m {
            return Err(Error::Shape(format!("F must be {m}x{m}")));
        }
        if self.terminal_weight.shape() != (n, n) {
            return Err(Error::Shape(format!("G must be {n}x{n}")));
        }
        let report = psd_check(&self.terminal_weight, 1e-10)?;
        if !report.is_psd {
            return Err(Error::NotPsd(format!("terminal weight (λ_min = {:e})", report.min_eigenvalue)));
        }
        Ok(())
    }

    /// Same problem with a different control operator.
    pub fn with_input(&self, input: OpValuedFunction) -> Result<Self> {
        let mut p = self.clone();
        p.input = input;
        p.validate()?;
        Ok(p)
    }
}

/// Riccati trajectory `Π(t_k)`, gains `L(t_k)` and the closed-loop evolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// Indexed by node; `pi[N] = G`.
    pub pi: Vec<LinearMap>,
    /// Indexed by node; the gain at the final node is zero.
    pub gains: Vec<LinearMap>,
    /// `T_Π` with step factors `Φ_k (I − Δt B_k L_k)`.
    pub closed_loop: EvolutionOperator,
    /// Outer iterations used (1 for the direct backward recursion).
    pub iterations: usize,
}

impl RiccatiSolution {
    pub fn initial(&self) -> &LinearMap {
        &self.pi[0]
    }

    /// CSV with header `t,op_norm,nuclear_norm`, one row per node.
    pub fn summary_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["t", "op_norm", "nuclear_norm"])?;
        for (k, pi) in self.pi.iter().enumerate() {
            writer.write_record([
                format_f64(self.grid.node(k)),
                format_f64(operator_norm(pi)?),
                format_f64(nuclear_norm(pi)?),
            ])?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// State and control samples on every grid node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    /// The control at the final node has no effect and is kept for shape.
    pub controls: Vec<DVector<f64>>,
}

fn ctc(p: &LQProblem, k: usize) -> DMatrix<f64> {
    let c = p.output.at_node(k).matrix();
    c.tr_mul(c)
}

fn check_control_weight(p: &LQProblem, k: usize) -> Result<()> {
    if p.control_weight.at_node(k).matrix().clone().cholesky().is_none() {
        return Err(Error::Conditioning { what: "control weight F".into(), node: k });
    }
    Ok(())
}

/// `X_k = Φ_kᵀ(Π_{k+1} + w_r Δt C_{k+1}ᵀC_{k+1})Φ_k`.
fn propagated_weight(p: &LQProblem, k: usize, pi_next: &DMatrix<f64>) -> DMatrix<f64> {
    let (_, wr) = p.quadrature.weights();
    let dt = p.grid().dt();
    let phi = p.transition.step(k);
    let inner = if wr > 0.0 { pi_next + ctc(p, k + 1) * (wr * dt) } else { pi_next.clone() };
    phi.tr_mul(&(inner * phi))
}

/// Greedy gain `L_k = (F_k + Δt B_kᵀ X_k B_k)⁻¹ B_kᵀ X_k`.
fn greedy_gain(p: &LQProblem, k: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_control_weight(p, k)?;
    let dt = p.grid().dt();
    let b = p.input.at_node(k).matrix();
    let btx = b.tr_mul(x);
    let gamma = p.control_weight.at_node(k).matrix() + &btx * b * dt;
    let chol = gamma.cholesky().ok_or_else(|| Error::Conditioning { what: "F + Δt BᵀXB".into(), node: k })?;
    Ok(chol.solve(&btx))
}

fn closed_loop(p: &LQProblem, gains: &[DMatrix<f64>]) -> Result<EvolutionOperator> {
    let d = OpValuedFunction::new(
        *p.grid(),
        gains
            .iter()
            .enumerate()
            .map(|(k, l)| LinearMap::new(-(p.input.at_node(k).matrix() * l)))
            .collect::<Result<Vec<_>>>()?,
    )?;
    perturb_evolution(&p.transition, &d)
}

fn finish(p: &LQProblem, pi: Vec<DMatrix<f64>>, gains: Vec<DMatrix<f64>>, iterations: usize) -> Result<RiccatiSolution> {
    let closed_loop = closed_loop(p, &gains)?;
    Ok(RiccatiSolution {
        grid: *p.grid(),
        pi: pi.into_iter().map(LinearMap::new).collect::<Result<_>>()?,
        gains: gains.into_iter().map(LinearMap::new).collect::<Result<_>>()?,
        closed_loop,
        iterations,
    })
}

/// Backward recursion for the first integral Riccati equation.
///
/// One step is the exact minimization over `u_k`:
/// `Π_k = w_l Δt C_kᵀC_k + X_k − Δt X_k B_k (F_k + Δt B_kᵀX_kB_k)⁻¹ B_kᵀ X_k`.
pub fn solve_ire1(p: &LQProblem) -> Result<RiccatiSolution> {
    p.validate()?;
    let steps = p.grid().steps();
    let dt = p.grid().dt();
    let (wl, _) = p.quadrature.weights();
    let (n, m) = (p.state_dim(), p.control_dim());

    let mut pi = vec![DMatrix::zeros(n, n); steps + 1];
    let mut gains = vec![DMatrix::zeros(m, n); steps + 1];
    pi[steps] = p.terminal_weight.matrix().clone();
    for k in (0..steps).rev() {
        let x = propagated_weight(p, k, &pi[k + 1]);
        let gain = greedy_gain(p, k, &x)?;
        let b = p.input.at_node(k).matrix();
        let mut next = &x - (&x * b) * &gain * dt;
        if wl > 0.0 {
            next += ctc(p, k) * (wl * dt);
        }
        clip_psd(&mut next, PSD_CLIP);
        pi[k] = next;
        gains[k] = gain;
    }
    finish(p, pi, gains, 1)
}

/// Settings for [`solve_ire2`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ire2Options {
    pub max_iters: usize,
    /// Relative change `max_k ‖Π⁽ⁱ⁾_k − Π⁽ⁱ⁻¹⁾_k‖ / (1 + ‖Π⁽ⁱ⁾_k‖)` at which to stop.
    pub tol: f64,
}

impl Default for Ire2Options {
    fn default() -> Self {
        Ire2Options { max_iters: 50, tol: 1e-10 }
    }
}

/// Cost-to-go of a fixed feedback `u_k = −L_k x_k`, i.e. the right-hand side
/// of the second IRE accumulated along the closed loop `T_Π`:
/// `Π_k = T_Πᵀ(b,t_k) G T_Π(b,t_k) + Σ_s Δt T_Πᵀ(s,t_k)[CᵀC + LᵀFL](s) T_Π(s,t_k)`,
/// evaluated in nested (Horner) form.
pub fn evaluate_feedback(p: &LQProblem, closed: &EvolutionOperator, gains: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let steps = p.grid().steps();
    let dt = p.grid().dt();
    let (wl, wr) = p.quadrature.weights();
    let n = p.state_dim();
    let mut pi = vec![DMatrix::zeros(n, n); steps + 1];
    pi[steps] = p.terminal_weight.matrix().clone();
    for k in (0..steps).rev() {
        let a = closed.step(k);
        let mut inner = pi[k + 1].clone();
        if wr > 0.0 {
            inner += ctc(p, k + 1) * (wr * dt);
        }
        let mut next = a.tr_mul(&(inner * a));
        if wl > 0.0 {
            next += ctc(p, k) * (wl * dt);
        }
        let l = &gains[k];
        next += l.tr_mul(&(p.control_weight.at_node(k).matrix() * l)) * dt;
        clip_psd(&mut next, PSD_CLIP);
        pi[k] = next;
    }
    pi
}

/// Second integral Riccati equation by outer fixed-point iteration on the
/// feedback gain (policy evaluation along `T_Π`, then greedy improvement),
/// starting from the zero gain.
pub fn solve_ire2(p: &LQProblem, opts: Ire2Options) -> Result<RiccatiSolution> {
    p.validate()?;
    let steps = p.grid().steps();
    let (n, m) = (p.state_dim(), p.control_dim());
    for k in 0..steps {
        check_control_weight(p, k)?;
    }

    let mut gains = vec![DMatrix::zeros(m, n); steps + 1];
    let mut previous: Option<Vec<DMatrix<f64>>> = None;
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iters {
        let closed = closed_loop(p, &gains)?;
        let pi = evaluate_feedback(p, &closed, &gains);
        if let Some(prev) = &previous {
            residual = pi
                .iter()
                .zip(prev)
                .map(|(a, b)| operator_norm(&(a - b)).unwrap_or(f64::INFINITY) / (1.0 + operator_norm(a).unwrap_or(0.0)))
                .fold(0.0, f64::max);
        }
        let mut improved = vec![DMatrix::zeros(m, n); steps + 1];
        for k in 0..steps {
            improved[k] = greedy_gain(p, k, &propagated_weight(p, k, &pi[k + 1]))?;
        }
        if residual < opts.tol {
            return finish(p, pi, improved, iteration);
        }
        gains = improved;
        previous = Some(pi);
    }
    Err(Error::Iteration { iterations: opts.max_iters, residual })
}

fn check_controls(p: &LQProblem, controls: &[DVector<f64>]) -> Result<()> {
    let len = p.grid().len();
    if controls.len() != len {
        return Err(Error::Shape(format!("{} controls for {len} grid nodes", controls.len())));
    }
    if let Some(k) = controls.iter().position(|u| u.len() != p.control_dim()) {
        return Err(Error::Shape(format!("control {k} has length {}, expected {}", controls[k].len(), p.control_dim())));
    }
    Ok(())
}

/// Mild solution with left-endpoint quadrature of the input integral:
/// `x_{k+1} = Φ_k (x_k + Δt B_k u_k)`.
pub fn simulate_mild(p: &LQProblem, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Result<Trajectory> {
    if x0.len() != p.state_dim() {
        return Err(Error::Shape(format!("initial state has length {}, expected {}", x0.len(), p.state_dim())));
    }
    check_controls(p, controls)?;
    let dt = p.grid().dt();
    let mut states = Vec::with_capacity(controls.len());
    states.push(x0.clone());
    for k in 0..p.grid().steps() {
        let forced = &states[k] + p.input.at_node(k).matrix() * &controls[k] * dt;
        states.push(p.transition.step(k) * forced);
    }
    Ok(Trajectory { states, controls: controls.to_vec() })
}

/// Trajectory under the optimal feedback `u_k = −L_k x_k`.
pub fn simulate_closed_loop(p: &LQProblem, sol: &RiccatiSolution, x0: &DVector<f64>) -> Result<Trajectory> {
    if x0.len() != p.state_dim() {
        return Err(Error::Shape(format!("initial state has length {}, expected {}", x0.len(), p.state_dim())));
    }
    let dt = p.grid().dt();
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(p.grid().len());
    for k in 0..p.grid().steps() {
        let u = -(sol.gains[k].matrix() * &states[k]);
        let forced = &states[k] + p.input.at_node(k).matrix() * &u * dt;
        states.push(p.transition.step(k) * forced);
        controls.push(u);
    }
    controls.push(DVector::zeros(p.control_dim()));
    Ok(Trajectory { states, controls })
}

/// Sampled cost `⟨x_N, G x_N⟩ + Σ Δt(‖C x‖² + ⟨u, F u⟩)` with the problem's
/// state-cost quadrature.
pub fn lq_cost(p: &LQProblem, traj: &Trajectory) -> Result<f64> {
    let len = p.grid().len();
    if traj.states.len() != len || traj.controls.len() != len {
        return Err(Error::Shape("trajectory is not sampled on the problem grid".into()));
    }
    let dt = p.grid().dt();
    let (wl, wr) = p.quadrature.weights();
    let steps = p.grid().steps();
    let output_sq = |k: usize| (p.output.at_node(k).matrix() * &traj.states[k]).norm_squared();
    let x_n = &traj.states[steps];
    let mut cost = x_n.dot(&(p.terminal_weight.matrix() * x_n));
    for k in 0..steps {
        let u = &traj.controls[k];
        cost += dt * (wl * output_sq(k) + wr * output_sq(k + 1) + u.dot(&(p.control_weight.at_node(k).matrix() * u)));
    }
    Ok(cost)
}
