//! Experiment configuration files.
//!
//! A configuration is a JSON document. The model is either an inline
//! time-invariant LQ or filter problem, an advection-diffusion configuration,
//! or a reference to a file holding one.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use placeopt_core::advdiff::{AdvDiffConfig, PriorSpec};
use placeopt_core::kalman::{FilterProblem, NoiseConvention};
use placeopt_core::lq_riccati::{CostQuadrature, LQProblem};
use placeopt_core::operators::{LinearMap, OpValuedFunction, TimeGrid};
use placeopt_core::evolution::EvolutionOperator;
use placeopt_core::placement::{Criterion, LocationFamily, LocationKind};
use placeopt_core::Error;
use serde::{Deserialize, Serialize};

/// A configuration problem, naming the offending field by its path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }

    /// Splits a core validation message of the form `field: reason` and
    /// prefixes the field with `scope`.
    fn from_core(scope: &str, err: Error) -> Self {
        let text = match err {
            Error::InvalidInput(msg) => msg,
            other => return ConfigError::new(scope, other.to_string()),
        };
        match text.split_once(": ") {
            Some((field, reason)) if !field.contains(' ') => ConfigError::new(format!("{scope}.{field}"), reason),
            _ => ConfigError::new(scope, text),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Row-major dense matrix as nested arrays.
pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Lq(LqSpec),
    Filter(FilterSpec),
    Advdiff(AdvDiffConfig),
    /// Path to a JSON advection-diffusion configuration, relative to the
    /// experiment configuration.
    AdvdiffFile(PathBuf),
}

/// `x' = A x + B u` with output `C`, control weight `F` and terminal weight `G`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LqSpec {
    pub horizon: [f64; 2],
    pub steps: usize,
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    /// Identity when absent.
    #[serde(default)]
    pub f: Option<Rows>,
    /// Zero when absent.
    #[serde(default)]
    pub g: Option<Rows>,
    #[serde(default)]
    pub quadrature: CostQuadrature,
}

/// `x' = A x + D w`, `y = H x + E v` with noise covariances `W`, `V` and prior `P0`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub horizon: [f64; 2],
    pub steps: usize,
    pub a: Rows,
    /// Identity when absent.
    #[serde(default)]
    pub d: Option<Rows>,
    pub w: Rows,
    pub h: Rows,
    /// Identity when absent.
    #[serde(default)]
    pub e: Option<Rows>,
    pub v: Rows,
    pub p0: Rows,
    #[serde(default)]
    pub convention: NoiseConvention,
    #[serde(default)]
    pub observe_initial: bool,
}

/// Gaussian-weighted single sensor or actuator for inline problems: state
/// component `i` sits at `centers[i]` and couples with weight
/// `exp(−‖r − centers[i]‖² / (2 width²))`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: LocationKind,
    pub centers: Rows,
    pub width: f64,
    /// Box of admissible locations, one `[low, high]` per coordinate.
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    #[default]
    Ire1,
    Ire2,
    /// Both, with their largest disagreement reported.
    Both,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub method: SolverMethod,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { method: SolverMethod::Ire1, max_iters: 50, tol: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub samples: usize,
}

/// Continuity probe around a location: `r0 + ρ·direction` for every radius.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Defaults to the optimal location of the sweep.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    pub direction: Vec<f64>,
    pub radii: Vec<f64>,
}

/// Priors of the three refinement figures.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureSpec {
    pub identity_prior: PriorSpec,
    pub nuclear_prior: PriorSpec,
}

impl Default for FigureSpec {
    fn default() -> Self {
        FigureSpec { identity_prior: PriorSpec::scaled_identity(), nuclear_prior: PriorSpec::default() }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub criterion: Option<Criterion>,
    /// Candidate locations; advection-diffusion models default to their
    /// candidate grid.
    #[serde(default)]
    pub candidates: Option<Rows>,
    /// Location family of inline problems.
    #[serde(default)]
    pub family: Option<FamilySpec>,
    /// Sensor location for single filter or smoother runs on the
    /// advection-diffusion model.
    #[serde(default)]
    pub sensor: Option<Vec<f64>>,
    /// Number of factor-2 refinement levels of an advection-diffusion model.
    #[serde(default)]
    pub levels: Option<usize>,
    /// Level dimensions (coordinate truncations) for inline problems.
    #[serde(default)]
    pub hierarchy_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Smoother window `[τ, t]` as node indices; the whole horizon by default.
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
    #[serde(default)]
    pub figures: FigureSpec,
    /// Probe vectors drawn for assumption residuals.
    #[serde(default = "default_residual_probes")]
    pub residual_probes: usize,
}

fn default_residual_probes() -> usize {
    3
}

/// The model after files are resolved and specs are turned into problems.
#[derive(Clone, Debug)]
pub enum Model {
    Lq(LQProblem),
    Filter(FilterProblem),
    Advdiff(AdvDiffConfig),
}

impl ExperimentConfig {
    /// Parses `text`, reporting the path of the first offending field.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." || path == "?" { "config".to_string() } else { path };
            ConfigError::new(field, e.inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ConfigError> {
        let bytes = std::fs::read(path).map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| ConfigError::new("--config", "file is not UTF-8"))?;
        Ok((Self::parse(text)?, bytes))
    }

    /// Builds the model, resolving `advdiff-file` relative to `base_dir`.
    pub fn model(&self, base_dir: &Path) -> Result<Model, ConfigError> {
        match &self.model {
            ModelSpec::Lq(spec) => spec.build().map(Model::Lq),
            ModelSpec::Filter(spec) => spec.build().map(Model::Filter),
            ModelSpec::Advdiff(cfg) => {
                cfg.validate().map_err(|e| ConfigError::from_core("model.advdiff", e))?;
                Ok(Model::Advdiff(cfg.clone()))
            }
            ModelSpec::AdvdiffFile(file) => {
                let field = "model.advdiff-file";
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::new(field, format!("{}: {e}", path.display())))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let cfg: AdvDiffConfig = serde_path_to_error::deserialize(de)
                    .map_err(|e| ConfigError::new(format!("{field}:{}", e.path()), e.inner().to_string()))?;
                cfg.validate().map_err(|e| ConfigError::from_core(field, e))?;
                Ok(Model::Advdiff(cfg))
            }
        }
    }
}

fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(ConfigError::new(field, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(ConfigError::new(format!("{field}[{i}]"), format!("expected {c} columns")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn shaped(field: &str, rows: &Rows, shape: (usize, usize)) -> Result<DMatrix<f64>, ConfigError> {
    let m = matrix(field, rows)?;
    if m.shape() != shape {
        return Err(ConfigError::new(field, format!("expected a {}x{} matrix, got {}x{}", shape.0, shape.1, m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn grid(scope: &str, horizon: [f64; 2], steps: usize) -> Result<TimeGrid, ConfigError> {
    TimeGrid::new(horizon[0], horizon[1], steps).map_err(|e| ConfigError::new(format!("{scope}.horizon"), e.to_string()))
}

fn constant(scope: &str, field: &str, grid: TimeGrid, m: DMatrix<f64>) -> Result<OpValuedFunction, ConfigError> {
    let map = LinearMap::new(m).map_err(|e| ConfigError::new(format!("{scope}.{field}"), e.to_string()))?;
    Ok(OpValuedFunction::constant(grid, map))
}

fn linear_map(field: &str, m: DMatrix<f64>) -> Result<LinearMap, ConfigError> {
    LinearMap::new(m).map_err(|e| ConfigError::new(field, e.to_string()))
}

/// `Φ = exp(A Δt)`, the exact transition of the time-invariant generator.
fn transition(scope: &str, grid: TimeGrid, a: &DMatrix<f64>) -> Result<EvolutionOperator, ConfigError> {
    let step = linear_map(&format!("{scope}.a"), (a * grid.dt()).exp())?;
    EvolutionOperator::time_invariant(grid, step).map_err(|e| ConfigError::new(format!("{scope}.a"), e.to_string()))
}

impl LqSpec {
    pub fn build(&self) -> Result<LQProblem, ConfigError> {
        let s = "model.lq";
        let grid = grid(s, self.horizon, self.steps)?;
        let a = matrix(&format!("{s}.a"), &self.a)?;
        let n = a.nrows();
        let a = shaped(&format!("{s}.a"), &self.a, (n, n))?;
        let b = matrix(&format!("{s}.b"), &self.b)?;
        let b = shaped(&format!("{s}.b"), &self.b, (n, b.ncols()))?;
        let m = b.ncols();
        let c = matrix(&format!("{s}.c"), &self.c)?;
        let c = shaped(&format!("{s}.c"), &self.c, (c.nrows(), n))?;
        let f = match &self.f {
            Some(rows) => shaped(&format!("{s}.f"), rows, (m, m))?,
            None => DMatrix::identity(m, m),
        };
        if (&f - f.transpose()).amax() > 1e-10 * (1.0 + f.amax()) || f.clone().cholesky().is_none() {
            return Err(ConfigError::new(format!("{s}.f"), "control weight must be symmetric positive definite"));
        }
        let g = match &self.g {
            Some(rows) => shaped(&format!("{s}.g"), rows, (n, n))?,
            None => DMatrix::zeros(n, n),
        };
        let problem = LQProblem::new(
            transition(s, grid, &a)?,
            constant(s, "b", grid, b)?,
            constant(s, "c", grid, c)?,
            constant(s, "f", grid, f)?,
            linear_map(&format!("{s}.g"), g)?,
        )
        .map_err(|e| core_field(s, e))?;
        Ok(problem.with_quadrature(self.quadrature))
    }
}

/// Attributes a core validation error to the field it talks about.
fn core_field(scope: &str, e: Error) -> ConfigError {
    let text = e.to_string();
    let lowered = text.to_lowercase();
    let field = [
        ("control weight", "f"),
        ("terminal weight", "g"),
        ("observation noise", "v"),
        ("prior", "p0"),
        ("noise covariance", "w"),
    ]
    .iter()
    .find(|(needle, _)| lowered.contains(needle))
    .map_or_else(|| scope.to_string(), |(_, f)| format!("{scope}.{f}"));
    ConfigError::new(field, text)
}

impl FilterSpec {
    pub fn build(&self) -> Result<FilterProblem, ConfigError> {
        let s = "model.filter";
        let grid = grid(s, self.horizon, self.steps)?;
        let a = matrix(&format!("{s}.a"), &self.a)?;
        let n = a.nrows();
        let a = shaped(&format!("{s}.a"), &self.a, (n, n))?;
        let d = match &self.d {
            Some(rows) => {
                let d = matrix(&format!("{s}.d"), rows)?;
                shaped(&format!("{s}.d"), rows, (n, d.ncols()))?
            }
            None => DMatrix::identity(n, n),
        };
        let w = shaped(&format!("{s}.w"), &self.w, (d.ncols(), d.ncols()))?;
        let h = matrix(&format!("{s}.h"), &self.h)?;
        let h = shaped(&format!("{s}.h"), &self.h, (h.nrows(), n))?;
        let p = h.nrows();
        let e = match &self.e {
            Some(rows) => {
                let e = matrix(&format!("{s}.e"), rows)?;
                shaped(&format!("{s}.e"), rows, (p, e.ncols()))?
            }
            None => DMatrix::identity(p, p),
        };
        let v = shaped(&format!("{s}.v"), &self.v, (e.ncols(), e.ncols()))?;
        let p0 = shaped(&format!("{s}.p0"), &self.p0, (n, n))?;
        let fp = FilterProblem::new(
            transition(s, grid, &a)?,
            constant(s, "d", grid, d)?,
            constant(s, "w", grid, w)?,
            constant(s, "h", grid, h)?,
            constant(s, "e", grid, e)?,
            constant(s, "v", grid, v)?,
            linear_map(&format!("{s}.p0"), p0)?,
        )
        .and_then(|fp| fp.with_convention(self.convention))
        .map_err(|e| core_field(s, e))?;
        Ok(fp.with_observe_initial(self.observe_initial))
    }
}

impl FamilySpec {
    pub fn validate(&self, state_dim: usize) -> Result<(), ConfigError> {
        if self.centers.len() != state_dim {
            return Err(ConfigError::new("family.centers", format!("need one centre per state component ({state_dim})")));
        }
        let d = self.bounds.len();
        if d == 0 {
            return Err(ConfigError::new("family.bounds", "need at least one coordinate"));
        }
        if let Some(i) = self.centers.iter().position(|c| c.len() != d) {
            return Err(ConfigError::new(format!("family.centers[{i}]"), format!("expected {d} coordinates")));
        }
        if let Some(i) = self.bounds.iter().position(|b| !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1])) {
            return Err(ConfigError::new(format!("family.bounds[{i}]"), "need low <= high"));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(ConfigError::new("family.width", "must be positive"));
        }
        Ok(())
    }

    /// The operator family on `grid`.
    pub fn family(&self, grid: TimeGrid) -> LocationFamily {
        let centers = self.centers.clone();
        let width = self.width;
        let bounds = self.bounds.clone();
        let kind = self.kind;
        LocationFamily::new(kind, move |r: &[f64]| {
            if r.len() != bounds.len() || r.iter().zip(&bounds).any(|(x, b)| !(*x >= b[0] && *x <= b[1])) {
                return Err(Error::Domain(format!("location {r:?} outside the admissible box")));
            }
            let weights: Vec<f64> = centers
                .iter()
                .map(|c| (-c.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * width * width)).exp())
                .collect();
            let n = weights.len();
            let m = match kind {
                LocationKind::Sensor => DMatrix::from_row_slice(1, n, &weights),
                LocationKind::Actuator => DMatrix::from_column_slice(n, 1, &weights),
            };
            Ok(OpValuedFunction::constant(grid, LinearMap::new(m)?))
        })
    }
}
