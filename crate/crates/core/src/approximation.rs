//! Projection hierarchies, residual checks for the approximation
//! assumptions, and refinement studies of optimal costs and locations.
//!
//! The finest level of a hierarchy is the reference ("truth"): every
//! convergence statement here is relative to it.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::advdiff::AdvDiffConfig;
use crate::error::{Error, Result};
use crate::evolution::{EvolutionOperator, LinearDynamics};
use crate::kalman::FilterProblem;
use crate::lq_riccati::LQProblem;
use crate::operators::{format_f64, LinearMap, OpValuedFunction};
use crate::placement::{sweep_costs, BaseProblem, Criterion, DenseEvaluator, LocationFamily, LocationKind, PlacementModel, PlacementResult};

/// Largest entry of `project ∘ lift − I` accepted when building a level.
pub const PROJECT_LIFT_TOLERANCE: f64 = 1e-12;

/// Relative cost change under which two consecutive levels count as stable.
pub const STABILITY_TOLERANCE: f64 = 0.05;

/// One level `X_n`: `project` maps reference vectors onto it and `lift`
/// embeds it back. Both are absent on a level that is the reference itself.
#[derive(Clone, Debug)]
pub struct ProjectionLevel {
    dim: usize,
    project: Option<DMatrix<f64>>,
    lift: Option<DMatrix<f64>>,
}

impl ProjectionLevel {
    pub fn new(project: DMatrix<f64>, lift: DMatrix<f64>) -> Result<Self> {
        let n = project.nrows();
        if lift.shape() != (project.ncols(), n) {
            return Err(Error::Hierarchy(format!(
                "project is {}x{} but lift is {}x{}",
                n,
                project.ncols(),
                lift.nrows(),
                lift.ncols()
            )));
        }
        let level = ProjectionLevel { dim: n, project: Some(project), lift: Some(lift) };
        let residual = level.project_lift_residual();
        if residual > PROJECT_LIFT_TOLERANCE {
            return Err(Error::Hierarchy(format!("project ∘ lift differs from the identity by {residual:e}")));
        }
        Ok(level)
    }

    pub fn identity(dim: usize) -> Self {
        ProjectionLevel { dim, project: None, lift: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        self.project.is_none()
    }

    /// Largest entry of `project ∘ lift − I`.
    pub fn project_lift_residual(&self) -> f64 {
        match (&self.project, &self.lift) {
            (Some(p), Some(l)) => (p * l - DMatrix::<f64>::identity(self.dim, self.dim)).amax(),
            _ => 0.0,
        }
    }
}

/// Nested levels of increasing dimension over a common reference space.
#[derive(Clone, Debug)]
pub struct ProjectionHierarchy {
    reference_dim: usize,
    levels: Vec<ProjectionLevel>,
    description: String,
}

impl ProjectionHierarchy {
    pub fn new(reference_dim: usize, levels: Vec<ProjectionLevel>, description: impl Into<String>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Hierarchy("a hierarchy needs at least one level".into()));
        }
        for (i, level) in levels.iter().enumerate() {
            let cols = level.project.as_ref().map_or(level.dim, |p| p.ncols());
            if cols != reference_dim {
                return Err(Error::Hierarchy(format!("level {i} projects from {cols} dimensions, reference has {reference_dim}")));
            }
        }
        if levels.windows(2).any(|w| w[0].dim >= w[1].dim) {
            return Err(Error::Hierarchy("level dimensions must increase strictly".into()));
        }
        Ok(ProjectionHierarchy { reference_dim, levels, description: description.into() })
    }

    /// Truncations of an orthonormal basis: level `n` keeps the first `n`
    /// columns of `basis`.
    pub fn from_orthonormal_basis(basis: &DMatrix<f64>, dims: &[usize]) -> Result<Self> {
        let reference = basis.nrows();
        if basis.ncols() != reference {
            return Err(Error::Hierarchy("basis must be square".into()));
        }
        let gram_error = (basis.transpose() * basis - DMatrix::<f64>::identity(reference, reference)).amax();
        if gram_error > 1e-10 {
            return Err(Error::Hierarchy(format!("basis is not orthonormal (Gram error {gram_error:e})")));
        }
        let levels = dims
            .iter()
            .map(|&n| {
                if n == 0 || n > reference {
                    return Err(Error::Hierarchy(format!("level dimension {n} outside 1..={reference}")));
                }
                let lift = basis.columns(0, n).into_owned();
                ProjectionLevel::new(lift.transpose(), lift)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(reference, levels, format!("orthonormal truncations {dims:?}"))
    }

    /// Factor-2 horizontal coarsenings of the advection-diffusion grid, the
    /// finest level being `cfg` itself. Projection is cell averaging over
    /// both blocks of the extended state and lift is piecewise-constant
    /// injection, so `project` is the orthogonal projection for the
    /// volume-weighted inner product and `lift` preserves that norm.
    pub fn cell_average(cfg: &AdvDiffConfig, levels: usize) -> Result<Self> {
        let resolutions = coarsened_resolutions(cfg, levels)?;
        let (nx, ny, nz) = (cfg.nx, cfg.ny, cfg.nz);
        let fine = nx * ny * nz;
        let mut out = Vec::with_capacity(levels);
        for &(cx, cy) in &resolutions {
            if cx == nx {
                out.push(ProjectionLevel::identity(2 * fine));
                continue;
            }
            let (fx, fy) = (nx / cx, ny / cy);
            let coarse = cx * cy * nz;
            let mut project = DMatrix::zeros(2 * coarse, 2 * fine);
            let mut lift = DMatrix::zeros(2 * fine, 2 * coarse);
            let weight = 1.0 / (fx * fy) as f64;
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let f = i + nx * (j + ny * k);
                        let c = i / fx + cx * (j / fy + cy * k);
                        for block in 0..2 {
                            project[(c + block * coarse, f + block * fine)] = weight;
                            lift[(f + block * fine, c + block * coarse)] = 1.0;
                        }
                    }
                }
            }
            out.push(ProjectionLevel::new(project, lift)?);
        }
        Self::new(2 * fine, out, format!("cell-average coarsenings {resolutions:?} x {nz} layers, extended state"))
    }

    pub fn reference_dim(&self) -> usize {
        self.reference_dim
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[ProjectionLevel] {
        &self.levels
    }

    pub fn dims(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.dim).collect()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    fn level(&self, level: usize) -> Result<&ProjectionLevel> {
        self.levels
            .get(level)
            .ok_or_else(|| Error::Hierarchy(format!("level {level} does not exist ({} levels)", self.levels.len())))
    }

    /// `P_n` as a matrix, `dim × reference_dim`.
    pub fn project_matrix(&self, level: usize) -> Result<Cow<'_, DMatrix<f64>>> {
        let l = self.level(level)?;
        Ok(match &l.project {
            Some(p) => Cow::Borrowed(p),
            None => Cow::Owned(DMatrix::identity(l.dim, l.dim)),
        })
    }

    /// The embedding `X_n → X`, `reference_dim × dim`.
    pub fn lift_matrix(&self, level: usize) -> Result<Cow<'_, DMatrix<f64>>> {
        let l = self.level(level)?;
        Ok(match &l.lift {
            Some(m) => Cow::Borrowed(m),
            None => Cow::Owned(DMatrix::identity(l.dim, l.dim)),
        })
    }

    pub fn project(&self, level: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x.len(), self.reference_dim)?;
        let l = self.level(level)?;
        Ok(l.project.as_ref().map_or_else(|| x.clone(), |p| p * x))
    }

    pub fn lift(&self, level: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let l = self.level(level)?;
        self.check_len(x.len(), l.dim)?;
        Ok(l.lift.as_ref().map_or_else(|| x.clone(), |m| m * x))
    }

    /// The map from `level` to `level + 1`: lift, then project.
    pub fn inter_level(&self, level: usize) -> Result<DMatrix<f64>> {
        if level + 1 >= self.levels.len() {
            return Err(Error::Hierarchy(format!("level {level} has no finer neighbour")));
        }
        Ok(self.project_matrix(level + 1)?.as_ref() * self.lift_matrix(level)?.as_ref())
    }

    fn check_len(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Hierarchy(format!("vector of length {got}, expected {want}")));
        }
        Ok(())
    }
}

/// Horizontal resolutions of `levels` factor-2 coarsenings, coarsest first.
pub fn coarsened_resolutions(cfg: &AdvDiffConfig, levels: usize) -> Result<Vec<(usize, usize)>> {
    if levels == 0 {
        return Err(Error::Hierarchy("at least one level is needed".into()));
    }
    let factor = 1usize.checked_shl(levels as u32 - 1).unwrap_or(0);
    if factor == 0 || !cfg.nx.is_multiple_of(factor) || !cfg.ny.is_multiple_of(factor) {
        return Err(Error::Hierarchy(format!("{}x{} cells cannot be halved {} times", cfg.nx, cfg.ny, levels - 1)));
    }
    Ok((0..levels).rev().map(|l| (cfg.nx >> l, cfg.ny >> l)).collect())
}

fn congruence(p: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<LinearMap> {
    let mut m = p * g * p.transpose();
    crate::operators::symmetrize(&mut m);
    LinearMap::new(m)
}

fn project_evolution(phi: &EvolutionOperator, p: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<EvolutionOperator> {
    EvolutionOperator::from_fn(*phi.grid(), |k| LinearMap::new(p * phi.step(k) * l))
}

fn left(f: &OpValuedFunction, p: &DMatrix<f64>) -> Result<OpValuedFunction> {
    f.map(|_, m| LinearMap::new(p * m.matrix()))
}

fn right(f: &OpValuedFunction, l: &DMatrix<f64>) -> Result<OpValuedFunction> {
    f.map(|_, m| LinearMap::new(m.matrix() * l))
}

/// Galerkin restriction of a reference problem to a level: `T_n = P_n T`
/// step by step on `X_n`, `B_n = P_n B`, `D_n = P_n D`, `C_n = C P_n`,
/// `H_n = H P_n` (a level vector acts through its lift), and the terminal
/// weight or prior by congruence `P_n G P_nᵀ`. The reference level returns
/// the problem unchanged.
pub fn project_problem(problem: &BaseProblem, hierarchy: &ProjectionHierarchy, level: usize) -> Result<BaseProblem> {
    let reference = match problem {
        BaseProblem::Lq(p) => p.state_dim(),
        BaseProblem::Filter(fp) => fp.state_dim(),
    };
    if reference != hierarchy.reference_dim() {
        return Err(Error::Hierarchy(format!(
            "problem has state dimension {reference}, hierarchy reference {}",
            hierarchy.reference_dim()
        )));
    }
    if hierarchy.level(level)?.is_identity() {
        return Ok(problem.clone());
    }
    let p = hierarchy.project_matrix(level)?;
    let l = hierarchy.lift_matrix(level)?;
    Ok(match problem {
        BaseProblem::Lq(q) => {
            let projected = LQProblem::new(
                project_evolution(&q.transition, &p, &l)?,
                left(&q.input, &p)?,
                right(&q.output, &l)?,
                q.control_weight.clone(),
                congruence(&p, q.terminal_weight.matrix())?,
            )?
            .with_quadrature(q.quadrature);
            BaseProblem::Lq(projected)
        }
        BaseProblem::Filter(fp) => {
            let projected = FilterProblem {
                transition: project_evolution(&fp.transition, &p, &l)?,
                noise_input: left(&fp.noise_input, &p)?,
                noise_cov: fp.noise_cov.clone(),
                observation: right(&fp.observation, &l)?,
                obs_noise_input: fp.obs_noise_input.clone(),
                obs_noise_cov: fp.obs_noise_cov.clone(),
                prior: congruence(&p, fp.prior.matrix())?,
                convention: fp.convention,
                observe_initial: fp.observe_initial,
            };
            projected.validate()?;
            BaseProblem::Filter(projected)
        }
    })
}

/// The location family seen from a level: `B_{r,n} = P_n B_r` or
/// `H_{r,n} = H_r P_n`.
pub fn project_family(family: LocationFamily, hierarchy: &ProjectionHierarchy, level: usize) -> Result<LocationFamily> {
    if hierarchy.level(level)?.is_identity() {
        return Ok(family);
    }
    let kind = family.kind;
    Ok(match kind {
        LocationKind::Actuator => {
            let p = hierarchy.project_matrix(level)?.into_owned();
            LocationFamily::new(kind, move |r| left(&family.operator(r)?, &p))
        }
        LocationKind::Sensor => {
            let l = hierarchy.lift_matrix(level)?.into_owned();
            LocationFamily::new(kind, move |r| right(&family.operator(r)?, &l))
        }
    })
}

/// Largest residuals of the approximation assumptions over the sampled
/// probes, each relative to the probe norm. Vectors are compared in the
/// reference space (level vectors through their lift) so that levels of
/// different dimension are measured alike.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub level: usize,
    pub dim: usize,
    /// `‖T_n(t,s) P_n x − P_n T(t,s) x‖`.
    pub evolution: f64,
    /// `‖T_n(t,s)ᵀ P_n x − P_n T(t,s)ᵀ x‖`.
    pub evolution_adjoint: f64,
    /// `‖B_n u − P_n B u‖` (or `D`).
    pub input: f64,
    /// `‖B_nᵀ P_n x − Bᵀ x‖` (or `D`).
    pub input_adjoint: f64,
    /// `‖C_n P_n x − C x‖` (or `H`).
    pub output: f64,
    /// `‖C_nᵀ y − P_n Cᵀ y‖` (or `H`).
    pub output_adjoint: f64,
    /// `‖G_n P_n x − P_n G x‖` (or the prior).
    pub terminal: f64,
    /// `sup ‖T_n(t,s)‖` over the sampled pairs, by power iteration.
    pub evolution_bound: f64,
    /// `sup_t ‖B_n(t)‖`.
    pub input_bound: f64,
    /// `sup_t ‖C_n(t)‖`.
    pub output_bound: f64,
}

/// Node pairs `(s, t)` checked by the residual reports.
pub fn residual_pairs(steps: usize) -> Vec<(usize, usize)> {
    let mut pairs = vec![(0, steps), (0, steps / 2), (steps / 2, steps), (steps.saturating_sub(1), steps)];
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn unit_probes(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| {
            let v = DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut *rng));
            let norm = v.norm();
            v / norm
        })
        .collect()
}

/// How far one level is from commuting with the reference problem: the
/// evolution, input, output and terminal (or prior) residuals, each in
/// forward and adjoint form.
pub fn assumption_residuals(
    hierarchy: &ProjectionHierarchy,
    reference: &BaseProblem,
    level: usize,
    probes: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if probes == 0 {
        return Err(Error::InvalidInput("at least one probe is needed".into()));
    }
    let projected = project_problem(reference, hierarchy, level)?;
    let (phi, phi_n, input, input_n, output, output_n, terminal, terminal_n) = match (reference, &projected) {
        (BaseProblem::Lq(a), BaseProblem::Lq(b)) => (
            &a.transition,
            &b.transition,
            &a.input,
            &b.input,
            &a.output,
            &b.output,
            a.terminal_weight.matrix(),
            b.terminal_weight.matrix(),
        ),
        (BaseProblem::Filter(a), BaseProblem::Filter(b)) => (
            &a.transition,
            &b.transition,
            &a.noise_input,
            &b.noise_input,
            &a.observation,
            &b.observation,
            a.prior.matrix(),
            b.prior.matrix(),
        ),
        _ => unreachable!("projection keeps the problem kind"),
    };
    let p = hierarchy.project_matrix(level)?;
    let l = hierarchy.lift_matrix(level)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = unit_probes(hierarchy.reference_dim(), probes, &mut rng);
    let us = unit_probes(input.cols(), probes, &mut rng);
    let ys = unit_probes(output.rows(), probes, &mut rng);
    let dim = hierarchy.level(level)?.dim;
    let mut report = AssumptionReport { level, dim, ..AssumptionReport::default() };

    let pairs = residual_pairs(phi.grid().steps());
    report.evolution = evolution_residuals(phi, phi_n, hierarchy, level, &xs, &pairs)?;
    report.evolution_adjoint = adjoint_evolution_residuals(phi, phi_n, hierarchy, level, &xs, &pairs)?;
    for &(s, t) in &pairs {
        let m = phi_n.eval(t, s)?;
        report.evolution_bound = report.evolution_bound.max(crate::operators::operator_norm(&m)?);
    }
    let lifted = |v: DVector<f64>| l.as_ref() * v;
    for k in 0..phi.grid().len() {
        let (b, bn) = (input.at_node(k).matrix(), input_n.at_node(k).matrix());
        let (c, cn) = (output.at_node(k).matrix(), output_n.at_node(k).matrix());
        report.input_bound = report.input_bound.max(crate::operators::operator_norm(bn)?);
        report.output_bound = report.output_bound.max(crate::operators::operator_norm(cn)?);
        for u in &us {
            report.input = report.input.max((lifted(bn * u) - lifted(p.as_ref() * (b * u))).norm());
        }
        for x in &xs {
            let px = p.as_ref() * x;
            report.input_adjoint = report.input_adjoint.max((bn.transpose() * &px - b.transpose() * x).norm());
            report.output = report.output.max((cn * &px - c * x).norm());
        }
        for y in &ys {
            report.output_adjoint = report.output_adjoint.max((lifted(cn.transpose() * y) - lifted(p.as_ref() * (c.transpose() * y))).norm());
        }
    }
    for x in &xs {
        let px = p.as_ref() * x;
        report.terminal = report.terminal.max((lifted(terminal_n * px) - lifted(p.as_ref() * (terminal * x))).norm());
    }
    Ok(report)
}

/// `max ‖T_n(t,s) P_n x − P_n T(t,s) x‖ / ‖x‖` over probes and node pairs,
/// measured after lifting. `reference` runs on the hierarchy's reference
/// space and `coarse` on the level; either may be matrix-free.
pub fn evolution_residuals<R, C>(
    reference: &R,
    coarse: &C,
    hierarchy: &ProjectionHierarchy,
    level: usize,
    probes: &[DVector<f64>],
    pairs: &[(usize, usize)],
) -> Result<f64>
where
    R: LinearDynamics + ?Sized,
    C: LinearDynamics + ?Sized,
{
    residuals_with(reference, coarse, hierarchy, level, probes, pairs, |d, s, t, x| d.propagate(s, t, x))
}

/// The adjoint twin `‖T_n(t,s)ᵀ P_n x − P_n T(t,s)ᵀ x‖ / ‖x‖`.
pub fn adjoint_evolution_residuals<R, C>(
    reference: &R,
    coarse: &C,
    hierarchy: &ProjectionHierarchy,
    level: usize,
    probes: &[DVector<f64>],
    pairs: &[(usize, usize)],
) -> Result<f64>
where
    R: LinearDynamics + ?Sized,
    C: LinearDynamics + ?Sized,
{
    residuals_with(reference, coarse, hierarchy, level, probes, pairs, |d, s, t, x| d.propagate_transpose(s, t, x))
}

#[allow(clippy::too_many_arguments)]
fn residuals_with<R, C, F>(
    reference: &R,
    coarse: &C,
    hierarchy: &ProjectionHierarchy,
    level: usize,
    probes: &[DVector<f64>],
    pairs: &[(usize, usize)],
    run: F,
) -> Result<f64>
where
    R: LinearDynamics + ?Sized,
    C: LinearDynamics + ?Sized,
    F: Fn(&dyn LinearDynamics, usize, usize, &DVector<f64>) -> DVector<f64>,
{
    if reference.state_dim() != hierarchy.reference_dim() || coarse.state_dim() != hierarchy.level(level)?.dim {
        return Err(Error::Hierarchy("dynamics do not match the hierarchy dimensions".into()));
    }
    if reference.grid().steps() != coarse.grid().steps() {
        return Err(Error::Hierarchy("reference and level run on different time grids".into()));
    }
    let steps = reference.grid().steps();
    let mut worst = 0.0f64;
    for x in probes {
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        let px = hierarchy.project(level, x)?;
        for &(s, t) in pairs {
            if s > t || t > steps {
                return Err(Error::Ordering(format!("cannot propagate from node {s} to node {t}")));
            }
            let a = run(&DynRef(coarse), s, t, &px);
            let b = hierarchy.project(level, &run(&DynRef(reference), s, t, x))?;
            let diff = hierarchy.lift(level, &(a - b))?;
            worst = worst.max(diff.norm() / norm);
        }
    }
    Ok(worst)
}

/// Lets an unsized `LinearDynamics` be passed where `&dyn` is expected.
struct DynRef<'a, D: ?Sized>(&'a D);

impl<D: LinearDynamics + ?Sized> LinearDynamics for DynRef<'_, D> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn grid(&self) -> &crate::operators::TimeGrid {
        self.0.grid()
    }

    fn apply_step(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        self.0.apply_step(k, x)
    }

    fn apply_step_transpose(&self, k: usize, y: &DVector<f64>) -> DVector<f64> {
        self.0.apply_step_transpose(k, y)
    }

    fn propagate(&self, from: usize, to: usize, x: &DVector<f64>) -> DVector<f64> {
        self.0.propagate(from, to, x)
    }

    fn propagate_transpose(&self, from: usize, to: usize, y: &DVector<f64>) -> DVector<f64> {
        self.0.propagate_transpose(from, to, y)
    }
}

/// Optimal cost and location found at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub level: usize,
    pub dim: usize,
    /// `ℓ̂_n` or `ℓ̂_{1,n}`; absent when the level failed.
    pub cost: Option<f64>,
    /// `r̂_n`.
    pub location: Option<Vec<f64>>,
    /// Candidates evaluated successfully.
    pub evaluated: usize,
    /// Candidates whose evaluation failed.
    pub failed: usize,
    /// Candidates tied with the optimum.
    pub ties: usize,
    /// `|ℓ̂_n − ℓ̂_{n−1}| / ℓ̂_{n−1}` against the previous level.
    pub relative_change: Option<f64>,
    /// `‖r̂_n − r̂_{n−1}‖`.
    pub displacement: Option<f64>,
    /// Why the level failed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub criterion: Criterion,
    pub hierarchy: String,
    pub records: Vec<RefinementRecord>,
}

/// One [`PlacementModel`] per level, coarsest first.
pub type LevelBuilder<'a> = dyn Fn(usize) -> Result<Box<dyn PlacementModel>> + Sync + 'a;

/// Sweeps the candidates at every level and records `(ℓ̂_n, r̂_n)` with the
/// successive differences. Failing levels are recorded and the study goes
/// on; the full sweeps are returned alongside.
pub fn refinement_study(
    dims: &[usize],
    build: &LevelBuilder<'_>,
    criterion: Criterion,
    candidates: &[Vec<f64>],
    threads: usize,
    hierarchy: &str,
) -> Result<(RefinementStudy, Vec<Option<PlacementResult>>)> {
    if dims.len() < 2 {
        return Err(Error::Hierarchy("a refinement study needs at least two levels".into()));
    }
    let mut records = Vec::with_capacity(dims.len());
    let mut sweeps = Vec::with_capacity(dims.len());
    for (level, &dim) in dims.iter().enumerate() {
        let outcome = build(level).and_then(|model| {
            if model.criterion() != criterion {
                return Err(Error::InvalidInput(format!("level {level} prices {} instead of {criterion}", model.criterion())));
            }
            sweep_costs(model.as_ref(), candidates, threads)
        });
        let mut record = RefinementRecord {
            level,
            dim,
            cost: None,
            location: None,
            evaluated: 0,
            failed: 0,
            ties: 0,
            relative_change: None,
            displacement: None,
            error: None,
        };
        match outcome {
            Ok(result) => {
                record.cost = Some(result.best.cost);
                record.location = Some(result.best.location.clone());
                record.evaluated = result.costs.iter().filter(|c| c.cost.is_some()).count();
                record.failed = result.costs.len() - record.evaluated;
                record.ties = result.best.ties.len();
                sweeps.push(Some(result));
            }
            Err(e) => {
                record.error = Some(e.to_string());
                sweeps.push(None);
            }
        }
        if let Some(prev) = records.last() {
            fill_changes(prev, &mut record);
        }
        records.push(record);
    }
    Ok((RefinementStudy { criterion, hierarchy: hierarchy.to_string(), records }, sweeps))
}

fn fill_changes(prev: &RefinementRecord, record: &mut RefinementRecord) {
    if let (Some(a), Some(b)) = (prev.cost, record.cost) {
        record.relative_change = Some((b - a).abs() / a.abs());
    }
    if let (Some(a), Some(b)) = (&prev.location, &record.location) {
        record.displacement = Some(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
    }
}

/// Levels of a generic problem obtained by [`project_problem`] and
/// [`project_family`]; `family` is rebuilt for each level.
pub fn projected_levels<'a, F>(
    reference: &'a BaseProblem,
    hierarchy: &'a ProjectionHierarchy,
    family: F,
    criterion: Criterion,
) -> impl Fn(usize) -> Result<Box<dyn PlacementModel>> + Sync + 'a
where
    F: Fn() -> LocationFamily + Sync + 'a,
{
    move |level| {
        let base = project_problem(reference, hierarchy, level)?;
        let fam = project_family(family(), hierarchy, level)?;
        Ok(Box::new(DenseEvaluator::with_default_time(fam, base, criterion)?) as Box<dyn PlacementModel>)
    }
}

impl RefinementStudy {
    /// Same location on the two finest levels and a relative cost change of
    /// at most [`STABILITY_TOLERANCE`] between them.
    pub fn stable(&self) -> bool {
        let n = self.records.len();
        if n < 2 {
            return false;
        }
        let (a, b) = (&self.records[n - 2], &self.records[n - 1]);
        match (&a.location, &b.location, b.relative_change) {
            (Some(ra), Some(rb), Some(change)) => ra == rb && change <= STABILITY_TOLERANCE,
            _ => false,
        }
    }

    /// Costs strictly increase from level to level.
    pub fn strictly_increasing(&self) -> bool {
        let costs: Option<Vec<f64>> = self.records.iter().map(|r| r.cost).collect();
        costs.is_some_and(|c| c.windows(2).all(|w| w[1] > w[0]))
    }

    fn location_dim(&self) -> usize {
        self.records.iter().find_map(|r| r.location.as_ref().map(Vec::len)).unwrap_or(0)
    }

    /// Columns `level,dim,cost,r0..,evaluated,failed,ties,relative_change,
    /// displacement,status`; empty cells for absent values.
    pub fn to_csv_string(&self) -> Result<String> {
        let d = self.location_dim();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["level".to_string(), "dim".into(), "cost".into()];
        header.extend((0..d).map(|i| format!("r{i}")));
        header.extend(["evaluated", "failed", "ties", "relative_change", "displacement", "status"].map(String::from));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.level.to_string(), r.dim.to_string(), opt(r.cost)];
            match &r.location {
                Some(loc) => row.extend(loc.iter().map(|v| format_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            row.extend([r.evaluated.to_string(), r.failed.to_string(), r.ties.to_string()]);
            row.extend([opt(r.relative_change), opt(r.displacement)]);
            row.push(r.error.clone().unwrap_or_else(|| "ok".into()));
            w.write_record(&row)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Reads the records written by [`Self::to_csv_string`].
    pub fn records_from_csv(text: &str) -> Result<Vec<RefinementRecord>> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let col = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| Error::InvalidInput(format!("missing column {name}")))
        };
        let (level, dim, cost) = (col("level")?, col("dim")?, col("cost")?);
        let (evaluated, failed, ties) = (col("evaluated")?, col("failed")?, col("ties")?);
        let (change, displacement, status) = (col("relative_change")?, col("displacement")?, col("status")?);
        let coords: Vec<usize> = (0..).map_while(|i| header.iter().position(|h| h == format!("r{i}"))).collect();
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::InvalidInput(format!("bad number {s:?}")))
            }
        };
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad count {s:?}")));
        let mut out = Vec::new();
        for row in reader.records() {
            let row = row?;
            let location: Option<Vec<f64>> = coords.iter().map(|&i| parse_opt(&row[i])).collect::<Result<Option<Vec<_>>>>()?;
            out.push(RefinementRecord {
                level: parse_usize(&row[level])?,
                dim: parse_usize(&row[dim])?,
                cost: parse_opt(&row[cost])?,
                location: location.filter(|l| !l.is_empty()),
                evaluated: parse_usize(&row[evaluated])?,
                failed: parse_usize(&row[failed])?,
                ties: parse_usize(&row[ties])?,
                relative_change: parse_opt(&row[change])?,
                displacement: parse_opt(&row[displacement])?,
                error: Some(row[status].to_string()).filter(|s| s != "ok"),
            });
        }
        Ok(out)
    }
}
