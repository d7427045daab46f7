//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits non-zero if any check fails. Reference values come from
//! closed forms or from oracles written here, independent of the library
//! recursions they check.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use placeopt_core::advdiff::{
    cell_average_projection, crank_nicolson_step, lax_wendroff_step, AdvDiffConfig, AdvDiffModel, Axis, DiffusionProfile,
    EmissionBackground, ExtendedState, Geometry, Hotspot, PriorSpec, SingleSensorExperiment,
};
use placeopt_core::approximation::{refinement_study, RefinementStudy};
use placeopt_core::evolution::EvolutionOperator;
use placeopt_core::kalman::{
    dual_lq_problem, filter_covariance, monte_carlo_error_cov, smoother_covariance, FilterProblem, NoiseConvention,
};
use placeopt_core::lq_riccati::{solve_ire1, solve_ire2, Ire2Options, LQProblem};
use placeopt_core::operators::{min_eigenvalue, operator_norm, LinearMap, OpValuedFunction, TimeGrid};
use placeopt_core::placement::{continuity_probe, Criterion, PlacementModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type NamedCheck = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent <= budget, || format!("took {:.1}s, budget {:.0}s", spent.as_secs_f64(), budget.as_secs_f64()))
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    operator_norm(m).expect("finite matrix")
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s))
}

/// Time-varying LQ problem with `exp` steps of a drifting generator.
fn seeded_lq(seed: u64) -> LQProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=n.min(2));
    let steps = 40;
    let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
    let a = random_matrix(&mut rng, n, n, 1.0);
    let b = random_matrix(&mut rng, n, m, 1.0);
    let c = random_matrix(&mut rng, n, n, 1.0);
    let f = random_matrix(&mut rng, m, m, 0.5);
    let g = random_matrix(&mut rng, n, n, 0.7);
    let dt = grid.dt();
    let transition =
        EvolutionOperator::from_fn(grid, |k| LinearMap::new((&a * ((1.0 + 0.3 * (k as f64 * dt).sin()) * dt)).exp())).unwrap();
    let input = OpValuedFunction::from_fn(grid, |t| LinearMap::new(&b * (1.0 + 0.5 * t))).unwrap();
    let output = OpValuedFunction::constant(grid, LinearMap::new(c).unwrap());
    let weight = OpValuedFunction::constant(grid, LinearMap::new(&f * f.transpose() + DMatrix::identity(m, m)).unwrap());
    LQProblem::new(transition, input, output, weight, LinearMap::new(&g * g.transpose()).unwrap()).unwrap()
}

fn seeded_filter(seed: u64, n: usize, p: usize, steps: usize) -> FilterProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
    let a = random_matrix(&mut rng, n, n, 1.0);
    let d = random_matrix(&mut rng, n, n, 1.0);
    let h = random_matrix(&mut rng, p, n, 1.0);
    let e = random_matrix(&mut rng, p, p, 0.3) + DMatrix::identity(p, p);
    let p0 = random_matrix(&mut rng, n, n, 1.0);
    let w = random_matrix(&mut rng, n, n, 0.5);
    let transition = EvolutionOperator::time_invariant(grid, LinearMap::new((a * grid.dt()).exp()).unwrap()).unwrap();
    FilterProblem::new(
        transition,
        OpValuedFunction::from_fn(grid, |t| LinearMap::new(&d * (1.0 + 0.3 * t))).unwrap(),
        OpValuedFunction::constant(grid, LinearMap::new(&w * w.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()),
        OpValuedFunction::from_fn(grid, |t| LinearMap::new(&h * (1.0 - 0.4 * t))).unwrap(),
        OpValuedFunction::constant(grid, LinearMap::new(e).unwrap()),
        OpValuedFunction::constant(grid, LinearMap::identity(p)),
        LinearMap::new(&p0 * p0.transpose()).unwrap(),
    )
    .unwrap()
}

/// Covariances of the whole sampled model written as linear maps of one
/// Gaussian vector `z = (x0, w_0.., v_..)`, conditioned by the textbook
/// formula `Σxx − Σxy Σyy⁻¹ Σyx`.
struct JointGaussian {
    states: Vec<DMatrix<f64>>,
    observations: Vec<(usize, DMatrix<f64>)>,
    sigma: DMatrix<f64>,
}

impl JointGaussian {
    fn new(fp: &FilterProblem) -> Self {
        let grid = fp.grid();
        let (n, p, steps, dt) = (fp.transition.dim(), fp.observation.rows(), grid.steps(), grid.dt());
        let observed: Vec<usize> = (0..=steps).filter(|&k| k > 0 || fp.observe_initial).collect();
        let dim = n + steps * n + observed.len() * p;
        let mut sigma = DMatrix::zeros(dim, dim);
        sigma.view_mut((0, 0), (n, n)).copy_from(fp.prior.matrix());
        for k in 0..steps {
            let d = fp.noise_input.at_node(k).matrix();
            let q = d * fp.noise_cov.at_node(k).matrix() * d.transpose();
            sigma.view_mut((n + k * n, n + k * n), (n, n)).copy_from(&(q * dt));
        }
        let v0 = n + steps * n;
        for (i, &k) in observed.iter().enumerate() {
            let e = fp.obs_noise_input.at_node(k).matrix();
            let mut r = e * fp.obs_noise_cov.at_node(k).matrix() * e.transpose();
            if fp.convention == NoiseConvention::Intensity {
                r /= dt;
            }
            sigma.view_mut((v0 + i * p, v0 + i * p), (p, p)).copy_from(&r);
        }
        let mut x = DMatrix::zeros(n, dim);
        x.view_mut((0, 0), (n, n)).fill_with_identity();
        let mut states = vec![x.clone()];
        for k in 0..steps {
            let mut w = DMatrix::zeros(n, dim);
            w.view_mut((0, n + k * n), (n, n)).fill_with_identity();
            x = fp.transition.step(k) * (x + w);
            states.push(x.clone());
        }
        let observations = observed
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut y = fp.observation.at_node(k).matrix() * &states[k];
                y.view_mut((0, v0 + i * p), (p, p)).fill_with_identity();
                (k, y)
            })
            .collect();
        JointGaussian { states, observations, sigma }
    }

    /// Covariance of `x_tau` given every observation at nodes `<= upto`.
    fn conditional(&self, tau: usize, upto: usize) -> DMatrix<f64> {
        let x = &self.states[tau];
        let sxx = x * &self.sigma * x.transpose();
        let rows: Vec<&DMatrix<f64>> = self.observations.iter().filter(|(k, _)| *k <= upto).map(|(_, m)| m).collect();
        if rows.is_empty() {
            return sxx;
        }
        let total = rows.iter().map(|m| m.nrows()).sum();
        let mut y = DMatrix::zeros(total, self.sigma.ncols());
        let mut r = 0;
        for m in rows {
            y.view_mut((r, 0), m.shape()).copy_from(m);
            r += m.nrows();
        }
        let sxy = x * &self.sigma * y.transpose();
        let syy = &y * &self.sigma * y.transpose();
        sxx - &sxy * syy.try_inverse().expect("observations are non-degenerate") * sxy.transpose()
    }
}

fn scalar_tanh(steps: usize) -> LQProblem {
    let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
    let one = || OpValuedFunction::constant(grid, LinearMap::identity(1));
    LQProblem::new(EvolutionOperator::identity(grid, 1), one(), one(), one(), LinearMap::zeros(1, 1)).unwrap()
}

fn tanh_closed_form() -> Check {
    let start = Instant::now();
    let p = scalar_tanh(1000);
    let exact = 1f64.tanh();
    let e1 = (solve_ire1(&p).map_err(|e| e.to_string())?.initial().matrix()[(0, 0)] - exact).abs();
    let e2 = (solve_ire2(&p, Ire2Options::default()).map_err(|e| e.to_string())?.initial().matrix()[(0, 0)] - exact).abs();
    ensure(e1 <= 1e-4 && e2 <= 1e-4, || format!("|Π(0) − tanh 1| = {e1:.2e} (first), {e2:.2e} (second)"))?;
    within_budget(start, Duration::from_secs(1))?;
    Ok(format!("errors {e1:.2e} and {e2:.2e}"))
}

fn solver_agreement() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let p = seeded_lq(seed);
        let a = solve_ire1(&p).map_err(|e| format!("seed {seed}: {e}"))?;
        let b = solve_ire2(&p, Ire2Options { max_iters: 100, tol: 1e-13 }).map_err(|e| format!("seed {seed}: {e}"))?;
        for (x, y) in a.pi.iter().zip(&b.pi) {
            let rel = op_norm(&(x.matrix() - y.matrix())) / (1.0 + op_norm(x));
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-8, || format!("largest relative gap {worst:.2e}"))?;
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("20 problems, largest relative gap {worst:.2e}"))
}

fn duality() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let n = 1 + (seed as usize % 4);
        let fp = seeded_filter(100 + seed, n, 1 + seed as usize % 2, 30);
        let cov = filter_covariance(&fp).map_err(|e| e.to_string())?;
        let dual = solve_ire1(&dual_lq_problem(&fp).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let steps = fp.grid().steps();
        for k in 0..=steps {
            let p = cov.posterior[k].matrix();
            let rel = op_norm(&(p - dual.pi[steps - k].matrix())) / (1.0 + op_norm(p));
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-8, || format!("largest relative gap {worst:.2e}"))?;
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("10 problems, largest relative gap {worst:.2e}"))
}

fn conditioning_problems() -> Vec<FilterProblem> {
    let mut out = Vec::new();
    for seed in 0..8u64 {
        let n = 1 + seed as usize % 3;
        let p = 1 + seed as usize % 2;
        let steps = 2 + seed as usize % 3;
        let mut fp = seeded_filter(200 + seed, n, p, steps).with_observe_initial(seed % 2 == 1);
        if seed % 4 == 3 {
            fp = fp.with_convention(NoiseConvention::PerStep).unwrap();
        }
        out.push(fp);
    }
    out
}

fn gaussian_conditioning() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for fp in conditioning_problems() {
        let oracle = JointGaussian::new(&fp);
        let cov = filter_covariance(&fp).map_err(|e| e.to_string())?;
        let steps = fp.grid().steps();
        for t in 0..=steps {
            let reference = oracle.conditional(t, t);
            worst = worst.max((cov.posterior[t].matrix() - &reference).abs().max());
            for tau in 0..=t {
                let sm = smoother_covariance(&fp, &cov, tau, t).map_err(|e| e.to_string())?;
                worst = worst.max((sm.covariance.matrix() - oracle.conditional(tau, t)).abs().max());
                compared += 1;
            }
        }
    }
    ensure(worst <= 1e-9, || format!("largest entry gap {worst:.2e}"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("{compared} smoother pairs and all filter nodes, largest entry gap {worst:.2e}"))
}

fn scalar_monte_carlo_problem() -> FilterProblem {
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let c = |v: f64| OpValuedFunction::constant(grid, LinearMap::from_diagonal(&[v]).unwrap());
    let phi = EvolutionOperator::time_invariant(grid, LinearMap::from_diagonal(&[(-0.5 * grid.dt()).exp()]).unwrap()).unwrap();
    FilterProblem::with_covariances(phi, c(1.0), c(1.0), c(0.5), LinearMap::identity(1)).unwrap()
}

fn planar_monte_carlo_problem() -> FilterProblem {
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, -0.3]);
    let phi = EvolutionOperator::time_invariant(grid, LinearMap::new((a * grid.dt()).exp()).unwrap()).unwrap();
    FilterProblem::with_covariances(
        phi,
        OpValuedFunction::constant(grid, LinearMap::from_diagonal(&[0.4, 0.2]).unwrap()),
        OpValuedFunction::constant(grid, LinearMap::from_row_slice(1, 2, &[1.0, 0.0]).unwrap()),
        OpValuedFunction::constant(grid, LinearMap::from_diagonal(&[0.1]).unwrap()),
        LinearMap::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]).unwrap(),
    )
    .unwrap()
}

fn monte_carlo() -> Check {
    let start = Instant::now();
    let mut filter_worst = 0.0f64;
    let mut smoother_worst = 0.0f64;
    for (i, fp) in [scalar_monte_carlo_problem(), planar_monte_carlo_problem()].iter().enumerate() {
        let report = monte_carlo_error_cov(fp, 20_000, 41 + i as u64).map_err(|e| e.to_string())?;
        let cov = filter_covariance(fp).map_err(|e| e.to_string())?;
        for (emp, p) in report.empirical.iter().zip(&cov.posterior) {
            let scale = p.matrix().norm();
            if scale > 0.0 {
                filter_worst = filter_worst.max((emp.matrix() - p.matrix()).norm() / scale);
            }
        }
        let steps = fp.grid().steps();
        let sm = smoother_covariance(fp, &cov, 0, steps).map_err(|e| e.to_string())?;
        let s = sm.covariance.matrix();
        smoother_worst = smoother_worst.max((report.smoother_empirical.matrix() - s).norm() / s.norm());
    }
    ensure(filter_worst <= 0.05 && smoother_worst <= 0.05, || {
        format!("relative Frobenius deviation {filter_worst:.3} (filter), {smoother_worst:.3} (smoother)")
    })?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("deviation {filter_worst:.4} (filter), {smoother_worst:.4} (smoother)"))
}

fn smoother_improvement() -> Check {
    let start = Instant::now();
    let mut problems = conditioning_problems();
    problems.extend((0..10).map(|seed| seeded_filter(100 + seed, 1 + (seed as usize % 4), 1 + seed as usize % 2, 30)));
    problems.push(scalar_monte_carlo_problem());
    problems.push(planar_monte_carlo_problem());
    let mut lowest = f64::INFINITY;
    let mut pairs = 0;
    for fp in &problems {
        let cov = filter_covariance(fp).map_err(|e| e.to_string())?;
        let steps = fp.grid().steps();
        for t in 0..=steps {
            for tau in 0..=t {
                let sm = smoother_covariance(fp, &cov, tau, t).map_err(|e| e.to_string())?;
                lowest = lowest.min(min_eigenvalue(&(cov.posterior[tau].matrix() - sm.covariance.matrix())));
                pairs += 1;
            }
        }
    }
    ensure(lowest >= -1e-10, || format!("smallest eigenvalue of the decrement {lowest:.2e}"))?;
    Ok(format!("{} problems, {pairs} pairs, smallest eigenvalue {lowest:.2e} ({:.1}s)", problems.len(), start.elapsed().as_secs_f64()))
}

fn hotspot_config(nx: usize, dt: f64, prior: PriorSpec) -> AdvDiffConfig {
    AdvDiffConfig {
        nx,
        ny: nx,
        nz: 3,
        dt,
        prior,
        emission_background: EmissionBackground {
            period: 12.0,
            hotspot: Some(Hotspot { x: 2.2, y: 2.3, width: 0.8 }),
            ..EmissionBackground::default()
        },
        ..AdvDiffConfig::default()
    }
}

fn strang_final_state(dt: f64) -> Result<Vec<f64>, String> {
    let cfg = hotspot_config(10, dt, PriorSpec::default());
    let model = AdvDiffModel::new(&cfg).map_err(|e| e.to_string())?;
    let tau = std::f64::consts::TAU;
    let c = cell_average_projection(|x, y, z| (tau * x / 5.0).sin() * (tau * y / 5.0).cos() + (std::f64::consts::PI * z).cos(), &cfg)
        .map_err(|e| e.to_string())?;
    let e = cell_average_projection(|x, y, _| 0.5 + 0.2 * (tau * (x + y) / 5.0).cos(), &cfg).map_err(|e| e.to_string())?;
    let mut state = ExtendedState::new(c, e).map_err(|e| e.to_string())?;
    for k in 0..cfg.steps() {
        state = model.strang_transition(&state, k).map_err(|e| e.to_string())?;
    }
    Ok(state.to_vector().iter().copied().collect())
}

fn splitting_order_and_conservation() -> Check {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (x1, x2, x3) = (strang_final_state(0.02)?, strang_final_state(0.01)?, strang_final_state(0.005)?);
    let ratio = dist(&x1, &x2) / dist(&x2, &x3);
    ensure((3.2..=4.8).contains(&ratio), || format!("self-convergence ratio {ratio:.3}"))?;

    let cfg = AdvDiffConfig { nx: 7, ny: 4, nz: 5, ..AdvDiffConfig::default() };
    let geom = Geometry::new(&cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut field: Vec<f64> = (0..geom.cells()).map(|_| rng.gen_range(0.0..2.0)).collect();
    let mut advection_drift = 0.0f64;
    for step in 0..50 {
        let axis = if step % 2 == 0 { Axis::X } else { Axis::Y };
        let next = lax_wendroff_step(&field, &geom, if step % 3 == 0 { -0.9 } else { 0.6 }, 0.4, axis).map_err(|e| e.to_string())?;
        advection_drift = advection_drift.max((geom.mass(&next) - geom.mass(&field)).abs());
        field = next;
    }
    let kz = DiffusionProfile::Linear { bottom: 0.8, top: 0.1 };
    let mut column_drift = 0.0f64;
    for _ in 0..50 {
        let next = crank_nicolson_step(&field, &geom, &kz, 0.05).map_err(|e| e.to_string())?;
        for h in 0..geom.plane() {
            let column = |f: &[f64]| (0..geom.nz).map(|k| geom.layer_thickness(k) * f[k * geom.plane() + h]).sum::<f64>();
            column_drift = column_drift.max((column(&next) - column(&field)).abs());
        }
        field = next;
    }
    ensure(advection_drift <= 1e-12 && column_drift <= 1e-12, || {
        format!("mass drift per step {advection_drift:.2e} (advection), {column_drift:.2e} (columns)")
    })?;
    Ok(format!("ratio {ratio:.3}, mass drift {advection_drift:.1e} / {column_drift:.1e} per step"))
}

fn study(prior: PriorSpec, criterion: Criterion) -> Result<RefinementStudy, String> {
    let levels = [5usize, 10, 20];
    let dims: Vec<usize> = levels.iter().map(|n| 2 * n * n * 3).collect();
    let threads = threads();
    let build = |level: usize| -> placeopt_core::Result<Box<dyn PlacementModel>> {
        let cfg = hotspot_config(levels[level], 0.01, prior);
        Ok(Box::new(SingleSensorExperiment::new(&cfg, criterion)?.with_threads(threads)))
    };
    let candidates = placeopt_core::advdiff::candidate_locations(&hotspot_config(20, 0.01, prior));
    let (study, _) =
        refinement_study(&dims, &build, criterion, &candidates, threads, "nx = ny in {5, 10, 20}").map_err(|e| e.to_string())?;
    if let Some(r) = study.records.iter().find(|r| r.error.is_some()) {
        return Err(format!("level {} failed: {}", r.level, r.error.as_deref().unwrap_or_default()));
    }
    Ok(study)
}

fn costs(study: &RefinementStudy) -> String {
    study.records.iter().map(|r| format!("{:.4}", r.cost.unwrap_or(f64::NAN))).collect::<Vec<_>>().join(", ")
}

fn identity_prior_diverges() -> Check {
    let start = Instant::now();
    let s = study(PriorSpec::scaled_identity(), Criterion::FilterNuclear)?;
    ensure(s.records.len() >= 3 && s.strictly_increasing(), || format!("costs not strictly increasing: {}", costs(&s)))?;
    ensure(!s.stable(), || format!("unexpectedly stable: {}", costs(&s)))?;
    within_budget(start, Duration::from_secs(600))?;
    let change = s.records.last().and_then(|r| r.relative_change).unwrap_or(f64::NAN);
    Ok(format!("costs {} (last change {:.0}%)", costs(&s), 100.0 * change))
}

fn nuclear_prior_converges() -> Check {
    let start = Instant::now();
    let mut lines = Vec::new();
    for criterion in [Criterion::FilterNuclear, Criterion::SmootherNuclear] {
        let s = study(PriorSpec::default(), criterion)?;
        let last = s.records.last().expect("three levels");
        let change = last.relative_change.unwrap_or(f64::INFINITY);
        ensure(s.stable(), || format!("{criterion}: costs {}, locations {:?}", costs(&s), s.records.iter().map(|r| &r.location).collect::<Vec<_>>()))?;
        lines.push(format!("{criterion}: r = {:?}, change {:.2}%", last.location.as_deref().unwrap_or_default(), 100.0 * change));
    }
    within_budget(start, Duration::from_secs(1200))?;
    Ok(lines.join("; "))
}

fn placement_continuity() -> Check {
    let cfg = hotspot_config(10, 0.01, PriorSpec::default());
    let exp = SingleSensorExperiment::new(&cfg, Criterion::FilterNuclear).map_err(|e| e.to_string())?.with_threads(threads());
    let bounds: Vec<(f64, f64)> = cfg.domain.iter().map(|&l| (0.0, l)).collect();
    let direction = [0.8, 0.6, 0.0];
    let report = continuity_probe(&exp, &bounds, &[2.5, 2.5, 0.0], &direction, &[0.4, 0.2, 0.1, 0.05]).map_err(|e| e.to_string())?;
    let rows = &report.rows;
    ensure(report.monotone(), || format!("deviations grew at radii {:?}", report.flagged))?;
    let cost_growth = rows.windows(2).any(|w| w[1].cost_deviation > 1.1 * w[0].cost_deviation + 1e-15);
    ensure(!cost_growth, || format!("cost deviations {:?}", rows.iter().map(|r| r.cost_deviation).collect::<Vec<_>>()))?;
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    ensure(last.operator_deviation < 0.25 * first.operator_deviation && last.cost_deviation < 0.25 * first.cost_deviation, || {
        format!("deviations did not shrink: first {first:?}, last {last:?}")
    })?;
    Ok(format!(
        "operator {:.2e} → {:.2e}, cost {:.2e} → {:.2e}",
        first.operator_deviation, last.operator_deviation, first.cost_deviation, last.cost_deviation
    ))
}

const DETERMINISM_CONFIGS: [(&str, &str, &str); 8] = [
    ("riccati", "tanh.json", r#"{"model": {"lq": {"horizon": [0, 1], "steps": 200, "a": [[0]], "b": [[1]], "c": [[1]]}}, "solver": {"method": "both"}}"#),
    ("filter", "filter.json", FILTER_CONFIG),
    ("smoother", "filter.json", FILTER_CONFIG),
    ("place", "filter.json", FILTER_CONFIG),
    ("refine", "filter.json", FILTER_CONFIG),
    ("place", "advdiff.json", ADVDIFF_CONFIG),
    ("refine", "advdiff.json", ADVDIFF_CONFIG),
    ("figures", "advdiff.json", ADVDIFF_CONFIG),
];

const FILTER_CONFIG: &str = r#"{
  "model": {"filter": {
    "horizon": [0, 1], "steps": 10,
    "a": [[-0.2, 0.5], [0.0, -0.4]], "w": [[0.2, 0.0], [0.0, 0.2]],
    "h": [[1.0, 0.0]], "v": [[0.05]], "p0": [[1.0, 0.0], [0.0, 1.0]]
  }},
  "family": {"kind": "sensor", "centers": [[0.0], [1.0]], "width": 0.6, "bounds": [[0.0, 1.0]]},
  "candidates": [[0.0], [0.25], [0.5], [0.75], [1.0]],
  "hierarchy_dims": [1, 2],
  "probe": {"direction": [1.0], "radii": [0.1, 0.05]},
  "monte_carlo": {"samples": 500},
  "seed": 19
}"#;

const ADVDIFF_CONFIG: &str = r#"{
  "model": {"advdiff": {"nx": 10, "ny": 10, "nz": 3, "dt": 0.02,
    "emission_background": {"period": 12, "hotspot": {"x": 2.2, "y": 2.3, "width": 0.8}}}},
  "levels": 2,
  "candidates": [[1.5, 1.5, 0.0], [2.5, 2.5, 0.0], [3.5, 2.5, 0.0]],
  "probe": {"direction": [1.0, 0.0, 0.0], "radii": [0.2, 0.1]}
}"#;

fn artifacts(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        if entry.file_name() != "manifest.json" {
            out.insert(entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path()).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn determinism() -> Check {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let mut files = 0;
    for (i, (command, name, body)) in DETERMINISM_CONFIGS.iter().enumerate() {
        let cfg = tmp.path().join(name);
        std::fs::write(&cfg, body).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for (run, threads) in ["1", "3"].iter().enumerate() {
            let out = tmp.path().join(format!("{i}_{command}_{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_placeopt"))
                .args([*command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads])
                .output()
                .map_err(|e| e.to_string())?;
            ensure(status.status.success(), || format!("{command} failed: {}", String::from_utf8_lossy(&status.stderr)))?;
            outputs.push(artifacts(&out)?);
        }
        ensure(!outputs[0].is_empty() && outputs[0] == outputs[1], || format!("{command} on {name}: artifacts differ"))?;
        files += outputs[0].len();
    }
    Ok(format!("{} runs repeated, {files} artifacts identical", DETERMINISM_CONFIGS.len()))
}

fn main() {
    let checks: [NamedCheck; 11] = [
        ("scalar Riccati matches tanh", tanh_closed_form),
        ("integral Riccati solvers agree", solver_agreement),
        ("filter covariance equals dual Riccati", duality),
        ("filter and smoother match Gaussian conditioning", gaussian_conditioning),
        ("Monte Carlo error covariances", monte_carlo),
        ("smoother never worse than filter", smoother_improvement),
        ("splitting order and mass conservation", splitting_order_and_conservation),
        ("identity prior: cost grows, location unstable", identity_prior_diverges),
        ("nuclear prior: cost and location settle", nuclear_prior_converges),
        ("placement cost is continuous in the location", placement_continuity),
        ("repeated runs are byte-identical", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
