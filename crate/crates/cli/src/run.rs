//! The six experiment commands and their artifacts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use placeopt_core::advdiff::{
    candidate_locations, cell_average_projection, AdvDiffConfig, AdvDiffModel, PriorSpec, SingleSensorExperiment,
};
use placeopt_core::approximation::{
    adjoint_evolution_residuals, assumption_residuals, coarsened_resolutions, evolution_residuals, projected_levels,
    refinement_study, residual_pairs, AssumptionReport, ProjectionHierarchy, RefinementStudy,
};
use placeopt_core::kalman::{filter_covariance, monte_carlo_error_cov, smoother_covariance};
use placeopt_core::lq_riccati::{solve_ire1, solve_ire2, Ire2Options};
use placeopt_core::operators::{format_f64, min_eigenvalue, nuclear_norm, operator_norm, TimeGrid};
use placeopt_core::placement::{
    continuity_probe, sweep_costs, BaseProblem, Criterion, DenseEvaluator, PlacementModel, PlacementResult,
};
use placeopt_core::Error;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ExperimentConfig, Model, SolverMethod};
use crate::svg::emit_figure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Riccati,
    Filter,
    Smoother,
    Place,
    Refine,
    Figures,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

type Outcome<T> = std::result::Result<T, RunError>;

/// A named output file.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

fn text(name: &str, body: String) -> Artifact {
    Artifact { name: name.into(), bytes: body.into_bytes() }
}

fn json_artifact<T: Serialize>(name: &str, value: &T) -> Outcome<Artifact> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    Ok(text(name, body))
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// What a finished run wrote.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: Command,
    pub config: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub versions: serde_json::Value,
    pub artifacts: Vec<serde_json::Value>,
    /// The only fields that differ between repeated runs.
    pub started_unix_seconds: u64,
    pub wall_time_seconds: f64,
}

/// Runs one experiment and writes its artifacts and `manifest.json` to the
/// output directory.
pub fn run_experiment(opts: &RunOptions) -> Outcome<Manifest> {
    let clock = Instant::now();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let (cfg, raw) = ExperimentConfig::load(&opts.config)?;
    let base_dir = opts.config.parent().unwrap_or(Path::new("."));
    let model = cfg.model(base_dir)?;
    let seed = opts.seed.or(cfg.seed);
    let ctx = Context { cfg: &cfg, seed, threads: opts.threads.max(1) };
    let mut artifacts = match opts.command {
        Command::Riccati => ctx.riccati(&model)?,
        Command::Filter => ctx.filter(&model)?,
        Command::Smoother => ctx.smoother(&model)?,
        Command::Place => ctx.place(&model)?,
        Command::Refine => ctx.refine(&model)?,
        Command::Figures => ctx.figures(&model)?,
    };
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    std::fs::create_dir_all(&opts.out)?;
    let mut listed = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        std::fs::write(opts.out.join(&a.name), &a.bytes)?;
        listed.push(json!({ "file": a.name, "bytes": a.bytes.len(), "sha256": sha256_hex(&a.bytes) }));
    }
    let manifest = Manifest {
        command: opts.command,
        config: opts.config.display().to_string(),
        config_sha256: sha256_hex(&raw),
        seed,
        threads: ctx.threads,
        versions: json!({ "placeopt": env!("CARGO_PKG_VERSION"), "placeopt-core": placeopt_core::VERSION }),
        artifacts: listed,
        started_unix_seconds: started,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
    };
    let m = json_artifact("manifest.json", &manifest)?;
    std::fs::write(opts.out.join(&m.name), &m.bytes)?;
    Ok(manifest)
}

/// A study, its per-level sweeps and the prior trace of every level.
type LevelStudy = (RefinementStudy, Vec<Option<PlacementResult>>, Vec<Option<f64>>);

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    seed: Option<u64>,
    threads: usize,
}

/// `t,m_0_0,m_0_1,…` with one row per node.
fn matrix_series_csv(grid: &TimeGrid, mats: &[&DMatrix<f64>]) -> String {
    let (r, c) = mats.first().map_or((0, 0), |m| m.shape());
    let mut out = String::from("t");
    for i in 0..r {
        for j in 0..c {
            out.push_str(&format!(",m_{i}_{j}"));
        }
    }
    out.push('\n');
    for (k, m) in mats.iter().enumerate() {
        out.push_str(&format_f64(grid.node(k)));
        for i in 0..r {
            for j in 0..c {
                out.push(',');
                out.push_str(&format_f64(m[(i, j)]));
            }
        }
        out.push('\n');
    }
    out
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn wrong_model(command: &str, wanted: &str) -> RunError {
    RunError::Config(ConfigError::new("model", format!("{command} needs {wanted}")))
}

fn sensor_experiment(cfg: &AdvDiffConfig, criterion: Criterion, threads: usize) -> Outcome<SingleSensorExperiment> {
    match SingleSensorExperiment::new(cfg, criterion) {
        Ok(e) => Ok(e.with_threads(threads)),
        Err(Error::InvalidInput(msg)) => Err(ConfigError::new("criterion", msg).into()),
        Err(e) => Err(e.into()),
    }
}

fn domain_bounds(cfg: &AdvDiffConfig) -> Vec<(f64, f64)> {
    cfg.domain.iter().map(|&l| (0.0, l)).collect()
}

type Field<'a> = dyn Fn(f64, f64, f64) -> f64 + 'a;

/// Smooth fields on the finest grid used to probe the evolution residuals.
fn smooth_probes(cfg: &AdvDiffConfig) -> Outcome<Vec<DVector<f64>>> {
    let [lx, ly, lz] = cfg.domain;
    let fields: [(&Field<'_>, &Field<'_>); 2] = [
        (&|x, _, z| (2.0 * PI * x / lx).cos() * (1.0 + 0.3 * z / lz), &|_, y, _| 1.0 + 0.5 * (2.0 * PI * y / ly).sin()),
        (&|x, y, _| (2.0 * PI * (x / lx + y / ly)).sin(), &|x, _, _| 1.0 + 0.5 * (2.0 * PI * x / lx).cos()),
    ];
    fields
        .iter()
        .map(|(c, e)| {
            let c = cell_average_projection(c, cfg)?;
            let e = cell_average_projection(e, cfg)?;
            Ok(DVector::from_iterator(2 * c.len(), c.into_iter().chain(e)))
        })
        .collect()
}

impl Context<'_> {
    fn candidates(&self, fallback: Option<&AdvDiffConfig>) -> Outcome<Vec<Vec<f64>>> {
        match (&self.cfg.candidates, fallback) {
            (Some(c), _) if c.is_empty() => Err(ConfigError::new("candidates", "must not be empty").into()),
            (Some(c), _) => Ok(c.clone()),
            (None, Some(cfg)) => Ok(candidate_locations(cfg)),
            (None, None) => Err(ConfigError::new("candidates", "required for inline problems").into()),
        }
    }

    fn riccati(&self, model: &Model) -> Outcome<Vec<Artifact>> {
        let Model::Lq(p) = model else { return Err(wrong_model("riccati", "an lq model")) };
        let opts = Ire2Options { max_iters: self.cfg.solver.max_iters, tol: self.cfg.solver.tol };
        let (sol, agreement) = match self.cfg.solver.method {
            SolverMethod::Ire1 => (solve_ire1(p)?, None),
            SolverMethod::Ire2 => (solve_ire2(p, opts)?, None),
            SolverMethod::Both => {
                let a = solve_ire1(p)?;
                let b = solve_ire2(p, opts)?;
                let mut worst = 0.0f64;
                for (x, y) in a.pi.iter().zip(&b.pi) {
                    worst = worst.max(operator_norm(&(x.matrix() - y.matrix()))? / (1.0 + operator_norm(x)?));
                }
                (a, Some(worst))
            }
        };
        let mats: Vec<&DMatrix<f64>> = sol.pi.iter().map(|m| m.matrix()).collect();
        let pi0 = sol.initial().matrix();
        let summary = json!({
            "method": self.cfg.solver.method,
            "pi0": rows_of(pi0),
            "op_norm0": operator_norm(pi0)?,
            "nuclear_norm0": nuclear_norm(pi0)?,
            "iterations": sol.iterations,
            "relative_disagreement": agreement,
        });
        Ok(vec![
            text("riccati.csv", matrix_series_csv(&sol.grid, &mats)),
            text("riccati_summary.csv", sol.summary_csv()?),
            json_artifact("riccati.json", &summary)?,
        ])
    }

    fn filter(&self, model: &Model) -> Outcome<Vec<Artifact>> {
        match model {
            Model::Filter(fp) => {
                let cov = filter_covariance(fp)?;
                let mats: Vec<&DMatrix<f64>> = cov.posterior.iter().map(|m| m.matrix()).collect();
                let last = cov.final_posterior().matrix();
                let mut out = vec![
                    text("filter.csv", matrix_series_csv(&cov.grid, &mats)),
                    text("filter_summary.csv", cov.summary_csv()?),
                    json_artifact(
                        "filter.json",
                        &json!({
                            "final_trace": last.trace(),
                            "final_op_norm": operator_norm(last)?,
                            "final_nuclear_norm": nuclear_norm(last)?,
                        }),
                    )?,
                ];
                if let Some(mc) = self.cfg.monte_carlo {
                    let seed = self
                        .seed
                        .ok_or_else(|| ConfigError::new("seed", "monte_carlo sampling needs --seed or a seed field"))?;
                    let report = monte_carlo_error_cov(fp, mc.samples, seed).map_err(|e| match e {
                        Error::InvalidInput(msg) => RunError::Config(ConfigError::new("monte_carlo.samples", msg)),
                        other => other.into(),
                    })?;
                    out.push(json_artifact("monte_carlo.json", &report)?);
                }
                Ok(out)
            }
            Model::Advdiff(cfg) => self.advdiff_single(cfg, Criterion::FilterNuclear, "filter"),
            Model::Lq(_) => Err(wrong_model("filter", "a filter or advdiff model")),
        }
    }

    fn smoother(&self, model: &Model) -> Outcome<Vec<Artifact>> {
        match model {
            Model::Filter(fp) => {
                let steps = fp.grid().steps();
                let [tau, t] = self.cfg.window.unwrap_or([0, steps]);
                if tau > t || t > steps {
                    return Err(ConfigError::new("window", format!("need tau <= t <= {steps}")).into());
                }
                let cov = filter_covariance(fp)?;
                let sm = smoother_covariance(fp, &cov, tau, t)?;
                let filtered = cov.posterior[tau].matrix();
                let smoothed = sm.covariance.matrix();
                let summary = json!({
                    "tau": sm.tau,
                    "t": sm.t,
                    "trace": smoothed.trace(),
                    "nuclear_norm": nuclear_norm(smoothed)?,
                    "filter_trace": filtered.trace(),
                    "min_decrement_eigenvalue": min_eigenvalue(&(filtered - smoothed)),
                });
                Ok(vec![text("smoother.csv", sm.covariance.to_csv_string()?), json_artifact("smoother.json", &summary)?])
            }
            Model::Advdiff(cfg) => self.advdiff_single(cfg, Criterion::SmootherNuclear, "smoother"),
            Model::Lq(_) => Err(wrong_model("smoother", "a filter or advdiff model")),
        }
    }

    fn advdiff_single(&self, cfg: &AdvDiffConfig, criterion: Criterion, stem: &str) -> Outcome<Vec<Artifact>> {
        let sensor = self
            .cfg
            .sensor
            .clone()
            .ok_or_else(|| ConfigError::new("sensor", "advdiff filter and smoother runs need a sensor location"))?;
        let exp = sensor_experiment(cfg, criterion, self.threads)?;
        let cost = exp.cost(&sensor)?;
        let mut csv: String = (0..sensor.len()).map(|i| format!("r{i},")).collect();
        csv.push_str("cost\n");
        for v in &sensor {
            csv.push_str(&format_f64(*v));
            csv.push(',');
        }
        csv.push_str(&format_f64(cost));
        csv.push('\n');
        let summary = json!({
            "criterion": criterion,
            "sensor": sensor,
            "cost": cost,
            "state_dim": exp.state_dim(),
            "prior_trace": exp.prior_trace(),
            "propagated_prior_trace": exp.propagated_trace(),
        });
        Ok(vec![text(&format!("{stem}.csv"), csv), json_artifact(&format!("{stem}.json"), &summary)?])
    }

    fn dense_evaluator(&self, model: &Model, criterion: Criterion) -> Outcome<(DenseEvaluator, Vec<(f64, f64)>)> {
        let family = self.cfg.family.as_ref().ok_or_else(|| ConfigError::new("family", "required for inline problems"))?;
        let (base, grid, n) = match model {
            Model::Lq(p) => (BaseProblem::Lq(p.clone()), *p.grid(), p.state_dim()),
            Model::Filter(fp) => (BaseProblem::Filter(fp.clone()), *fp.grid(), fp.state_dim()),
            Model::Advdiff(_) => unreachable!("handled by the caller"),
        };
        family.validate(n)?;
        let bounds = family.bounds.iter().map(|b| (b[0], b[1])).collect();
        let eval = DenseEvaluator::with_default_time(family.family(grid), base, criterion)
            .map_err(|e| ConfigError::new("criterion", e.to_string()))?;
        Ok((eval, bounds))
    }

    fn default_criterion(&self, model: &Model) -> Criterion {
        self.cfg.criterion.unwrap_or(match model {
            Model::Lq(_) => Criterion::LqNuclear,
            _ => Criterion::FilterNuclear,
        })
    }

    fn place(&self, model: &Model) -> Outcome<Vec<Artifact>> {
        let criterion = self.default_criterion(model);
        let (evaluator, bounds, candidates): (Box<dyn PlacementModel>, _, _) = match model {
            Model::Advdiff(cfg) => {
                let exp = sensor_experiment(cfg, criterion, self.threads)?;
                (Box::new(exp), domain_bounds(cfg), self.candidates(Some(cfg))?)
            }
            _ => {
                let (eval, bounds) = self.dense_evaluator(model, criterion)?;
                (Box::new(eval), bounds, self.candidates(None)?)
            }
        };
        if let Some(i) = candidates.iter().position(|c| c.len() != bounds.len()) {
            return Err(ConfigError::new(format!("candidates[{i}]"), format!("expected {} coordinates", bounds.len())).into());
        }
        let result = sweep_costs(evaluator.as_ref(), &candidates, self.threads)?;
        let mut out = vec![text("placement.csv", result.to_csv_string()?), json_artifact("placement.json", &placement_summary(&result))?];
        if let Some(probe) = &self.cfg.probe {
            let center = probe.center.clone().unwrap_or_else(|| result.best.location.clone());
            if center.len() != bounds.len() || probe.direction.len() != bounds.len() {
                return Err(ConfigError::new("probe", format!("center and direction need {} coordinates", bounds.len())).into());
            }
            let report = continuity_probe(evaluator.as_ref(), &bounds, &center, &probe.direction, &probe.radii)
                .map_err(|e| match e {
                    Error::Domain(msg) | Error::InvalidInput(msg) | Error::Empty(msg) => RunError::Config(ConfigError::new("probe", msg)),
                    other => other.into(),
                })?;
            out.push(text("continuity.csv", report.to_csv_string()?));
            out.push(json_artifact("continuity.json", &json!({ "monotone": report.monotone(), "report": report }))?);
        }
        Ok(out)
    }

    fn refine(&self, model: &Model) -> Outcome<Vec<Artifact>> {
        let criterion = self.default_criterion(model);
        match model {
            Model::Advdiff(cfg) => {
                let levels = self.levels()?;
                let (study, sweeps, traces) = self.advdiff_study(cfg, criterion, levels)?;
                let hierarchy = ProjectionHierarchy::cell_average(cfg, levels)?;
                let residuals = self.advdiff_residuals(cfg, &hierarchy)?;
                let mut out = study_artifacts("refinement", &study, &sweeps)?;
                out.push(text("residuals.csv", residual_csv(&residuals)));
                out.push(json_artifact(
                    "refinement.json",
                    &json!({
                        "study": study,
                        "stable": study.stable(),
                        "strictly_increasing": study.strictly_increasing(),
                        "prior_traces": traces,
                        "residuals": residuals,
                    }),
                )?);
                Ok(out)
            }
            _ => {
                let dims = self.cfg.hierarchy_dims.clone().ok_or_else(|| ConfigError::new("hierarchy_dims", "required for inline problems"))?;
                let seed = self.seed.ok_or_else(|| ConfigError::new("seed", "assumption residuals draw random probes; pass --seed or a seed field"))?;
                let (base, grid, n) = match model {
                    Model::Lq(p) => (BaseProblem::Lq(p.clone()), *p.grid(), p.state_dim()),
                    Model::Filter(fp) => (BaseProblem::Filter(fp.clone()), *fp.grid(), fp.state_dim()),
                    Model::Advdiff(_) => unreachable!(),
                };
                if dims.last() != Some(&n) {
                    return Err(ConfigError::new("hierarchy_dims", format!("the finest level must be the state dimension {n}")).into());
                }
                let hierarchy = ProjectionHierarchy::from_orthonormal_basis(&DMatrix::identity(n, n), &dims)
                    .map_err(|e| ConfigError::new("hierarchy_dims", e.to_string()))?;
                let family = self.cfg.family.clone().ok_or_else(|| ConfigError::new("family", "required for inline problems"))?;
                family.validate(n)?;
                let candidates = self.candidates(None)?;
                let build = projected_levels(&base, &hierarchy, move || family.family(grid), criterion);
                let (study, sweeps) = refinement_study(&dims, &build, criterion, &candidates, self.threads, hierarchy.description())?;
                let reports = (0..hierarchy.len())
                    .map(|l| assumption_residuals(&hierarchy, &base, l, self.cfg.residual_probes.max(1), seed))
                    .collect::<Result<Vec<AssumptionReport>, _>>()?;
                let mut out = study_artifacts("refinement", &study, &sweeps)?;
                out.push(json_artifact(
                    "refinement.json",
                    &json!({
                        "study": study,
                        "stable": study.stable(),
                        "strictly_increasing": study.strictly_increasing(),
                        "assumption_residuals": reports,
                    }),
                )?);
                Ok(out)
            }
        }
    }

    fn levels(&self) -> Outcome<usize> {
        match self.cfg.levels.unwrap_or(3) {
            l if l >= 2 => Ok(l),
            _ => Err(ConfigError::new("levels", "a refinement study needs at least two levels").into()),
        }
    }

    /// Refinement study of the single-sensor experiment over factor-2
    /// coarsenings of `cfg`; each level builds its own discretization and
    /// prior.
    fn advdiff_study(
        &self,
        cfg: &AdvDiffConfig,
        criterion: Criterion,
        levels: usize,
    ) -> Outcome<LevelStudy> {
        let resolutions = coarsened_resolutions(cfg, levels).map_err(|e| ConfigError::new("levels", e.to_string()))?;
        if !matches!(criterion, Criterion::FilterNuclear | Criterion::SmootherNuclear) {
            return Err(ConfigError::new("criterion", "advdiff refinement needs a filter or smoother criterion").into());
        }
        let candidates = self.candidates(Some(cfg))?;
        let dims: Vec<usize> = resolutions.iter().map(|(x, y)| 2 * x * y * cfg.nz).collect();
        let traces = std::sync::Mutex::new(vec![None; levels]);
        let threads = self.threads;
        let build = |level: usize| -> placeopt_core::Result<Box<dyn PlacementModel>> {
            let (nx, ny) = resolutions[level];
            let exp = SingleSensorExperiment::new(&cfg.at_resolution(nx, ny), criterion)?.with_threads(threads);
            traces.lock().expect("trace table poisoned")[level] = Some(exp.prior_trace());
            Ok(Box::new(exp))
        };
        let description = format!("cell-average coarsenings {resolutions:?} x {} layers", cfg.nz);
        let (study, sweeps) = refinement_study(&dims, &build, criterion, &candidates, threads, &description)?;
        Ok((study, sweeps, traces.into_inner().expect("trace table poisoned")))
    }

    fn advdiff_residuals(&self, cfg: &AdvDiffConfig, hierarchy: &ProjectionHierarchy) -> Outcome<Vec<(usize, usize, f64, f64)>> {
        let reference = AdvDiffModel::new(cfg)?;
        let probes = smooth_probes(cfg)?;
        let pairs = residual_pairs(cfg.steps());
        let resolutions = coarsened_resolutions(cfg, hierarchy.len())?;
        resolutions
            .iter()
            .enumerate()
            .map(|(level, &(nx, ny))| {
                let coarse = AdvDiffModel::new(&cfg.at_resolution(nx, ny))?;
                let fwd = evolution_residuals(&reference, &coarse, hierarchy, level, &probes, &pairs)?;
                let adj = adjoint_evolution_residuals(&reference, &coarse, hierarchy, level, &probes, &pairs)?;
                Ok((level, hierarchy.dims()[level], fwd, adj))
            })
            .collect()
    }

    fn figures(&self, model: &Model) -> Outcome<Vec<Artifact>> {
        let Model::Advdiff(cfg) = model else { return Err(wrong_model("figures", "an advdiff model")) };
        let levels = self.levels()?;
        let specs = self.cfg.figures;
        let runs: [(&str, &str, PriorSpec, Criterion); 3] = [
            ("filter_identity_prior", "Kalman filter, scaled identity prior", specs.identity_prior, Criterion::FilterNuclear),
            ("filter_nuclear_prior", "Kalman filter, nuclear prior", specs.nuclear_prior, Criterion::FilterNuclear),
            ("smoother_nuclear_prior", "Kalman smoother, nuclear prior", specs.nuclear_prior, Criterion::SmootherNuclear),
        ];
        let mut out = Vec::new();
        let mut summary = Vec::new();
        for (stem, title, prior, criterion) in runs {
            let level_cfg = AdvDiffConfig { prior, ..cfg.clone() };
            level_cfg.validate().map_err(|e| ConfigError::new("figures", e.to_string()))?;
            let (study, _, traces) = self.advdiff_study(&level_cfg, criterion, levels)?;
            let csv = study.to_csv_string()?;
            let label = match criterion {
                Criterion::SmootherNuclear => "trace P(t0|b)",
                _ => "trace P(b|b)",
            };
            let svg = emit_figure(&csv, title, label)?;
            summary.push(json!({
                "name": stem,
                "title": title,
                "criterion": criterion,
                "prior": prior,
                "stable": study.stable(),
                "strictly_increasing": study.strictly_increasing(),
                "prior_traces": traces,
                "records": study.records,
            }));
            out.push(text(&format!("{stem}.csv"), csv));
            out.push(text(&format!("{stem}.svg"), svg));
        }
        out.push(json_artifact("figures.json", &summary)?);
        Ok(out)
    }
}

fn placement_summary(result: &PlacementResult) -> serde_json::Value {
    json!({
        "criterion": result.criterion,
        "best": result.best,
        "evaluated": result.costs.iter().filter(|c| c.cost.is_some()).count(),
        "failed": result.costs.iter().filter(|c| c.cost.is_none()).count(),
    })
}

fn study_artifacts(stem: &str, study: &RefinementStudy, sweeps: &[Option<PlacementResult>]) -> Outcome<Vec<Artifact>> {
    let mut out = vec![text(&format!("{stem}.csv"), study.to_csv_string()?)];
    for (level, sweep) in sweeps.iter().enumerate() {
        if let Some(s) = sweep {
            out.push(text(&format!("{stem}_level{level}_placement.csv"), s.to_csv_string()?));
        }
    }
    Ok(out)
}

fn residual_csv(rows: &[(usize, usize, f64, f64)]) -> String {
    let mut out = String::from("level,dim,evolution,evolution_adjoint\n");
    for (level, dim, fwd, adj) in rows {
        out.push_str(&format!("{level},{dim},{},{}\n", format_f64(*fwd), format_f64(*adj)));
    }
    out
}
