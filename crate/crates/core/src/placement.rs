//! Exhaustive optimal placement over a finite candidate set.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{filter_covariance, smoother_covariance, FilterProblem};
use crate::lq_riccati::{solve_ire1, LQProblem};
use crate::operators::{format_f64, nuclear_norm, operator_norm, OpValuedFunction};

/// Relative gap under which two costs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Slack allowed when checking that deviations shrink with the radius.
pub const MONOTONE_SLACK: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// `ℓ = ‖Π_r(t)‖`.
    LqOpNorm,
    /// `ℓ₁ = ‖Π_r(t)‖₁`.
    LqNuclear,
    /// `ℓ₁^f = ‖P_r(t|t)‖₁`.
    FilterNuclear,
    /// `ℓ₁^s = ‖P_r(τ|t)‖₁`.
    SmootherNuclear,
}

impl Criterion {
    pub fn kind(self) -> LocationKind {
        match self {
            Criterion::LqOpNorm | Criterion::LqNuclear => LocationKind::Actuator,
            Criterion::FilterNuclear | Criterion::SmootherNuclear => LocationKind::Sensor,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::LqOpNorm => "lq-op-norm",
            Criterion::LqNuclear => "lq-nuclear",
            Criterion::FilterNuclear => "filter-nuclear",
            Criterion::SmootherNuclear => "smoother-nuclear",
        }
    }

    /// The norm used for costs and for deviations between solutions.
    pub fn norm(self, m: &DMatrix<f64>) -> Result<f64> {
        match self {
            Criterion::LqOpNorm => operator_norm(m),
            _ => nuclear_norm(m),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Criterion::LqOpNorm, Criterion::LqNuclear, Criterion::FilterNuclear, Criterion::SmootherNuclear]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown criterion {s:?}")))
    }
}

/// Whether locations move `B_r` or `H_r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocationKind {
    Actuator,
    Sensor,
}

/// Something that can price a location and compare two of them.
pub trait PlacementModel: Sync {
    fn criterion(&self) -> Criterion;

    fn cost(&self, r: &[f64]) -> Result<f64>;

    /// `‖B_r − B_{r0}‖∞` or `‖H_r − H_{r0}‖∞`.
    fn operator_deviation(&self, r: &[f64], r0: &[f64]) -> Result<f64>;

    /// The criterion's norm of the difference of the two Riccati or
    /// covariance solutions at the evaluation time.
    fn solution_deviation(&self, r: &[f64], r0: &[f64]) -> Result<f64>;
}

type Builder = dyn Fn(&[f64]) -> Result<OpValuedFunction> + Send + Sync;

/// `r ↦ B_r` or `r ↦ H_r`.
pub struct LocationFamily {
    pub kind: LocationKind,
    build: Box<Builder>,
}

impl LocationFamily {
    pub fn new<F>(kind: LocationKind, build: F) -> Self
    where
        F: Fn(&[f64]) -> Result<OpValuedFunction> + Send + Sync + 'static,
    {
        LocationFamily { kind, build: Box::new(build) }
    }

    pub fn operator(&self, r: &[f64]) -> Result<OpValuedFunction> {
        (self.build)(r)
    }
}

impl fmt::Debug for LocationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocationFamily").field("kind", &self.kind).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum BaseProblem {
    Lq(LQProblem),
    Filter(FilterProblem),
}

/// Where a criterion is read off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTime {
    /// A single node: `Π(t_k)` or `P(t_k|t_k)`.
    Node(usize),
    /// Smoothing window `(τ, t)` as node indices.
    Window(usize, usize),
}

/// Evaluates the criterion by solving the full dense Riccati or covariance
/// recursion for every location.
#[derive(Debug)]
pub struct DenseEvaluator {
    family: LocationFamily,
    base: BaseProblem,
    criterion: Criterion,
    eval: EvalTime,
}

impl DenseEvaluator {
    pub fn new(family: LocationFamily, base: BaseProblem, criterion: Criterion, eval: EvalTime) -> Result<Self> {
        if family.kind != criterion.kind() {
            return Err(Error::InvalidInput(format!("{criterion} needs a {:?} family", criterion.kind())));
        }
        let (steps, lq) = match &base {
            BaseProblem::Lq(p) => (p.grid().steps(), true),
            BaseProblem::Filter(fp) => (fp.grid().steps(), false),
        };
        let fits = match (criterion, eval) {
            (Criterion::LqOpNorm | Criterion::LqNuclear, EvalTime::Node(k)) => lq && k <= steps,
            (Criterion::FilterNuclear, EvalTime::Node(k)) => !lq && k <= steps,
            (Criterion::SmootherNuclear, EvalTime::Window(tau, t)) => !lq && tau <= t && t <= steps,
            _ => false,
        };
        if !fits {
            return Err(Error::InvalidInput(format!("evaluation time {eval:?} does not fit {criterion} on this problem")));
        }
        Ok(DenseEvaluator { family, base, criterion, eval })
    }

    /// The conventional evaluation time: `t0` for control, the final node for
    /// the filter and `(t0, b)` for the smoother.
    pub fn with_default_time(family: LocationFamily, base: BaseProblem, criterion: Criterion) -> Result<Self> {
        let steps = match &base {
            BaseProblem::Lq(p) => p.grid().steps(),
            BaseProblem::Filter(fp) => fp.grid().steps(),
        };
        let eval = match criterion {
            Criterion::LqOpNorm | Criterion::LqNuclear => EvalTime::Node(0),
            Criterion::FilterNuclear => EvalTime::Node(steps),
            Criterion::SmootherNuclear => EvalTime::Window(0, steps),
        };
        Self::new(family, base, criterion, eval)
    }

    /// `Π_r`, `P_r(t|t)` or `P_r(τ|t)` at the evaluation time.
    pub fn solution(&self, r: &[f64]) -> Result<DMatrix<f64>> {
        let op = self.family.operator(r)?;
        match (&self.base, self.eval) {
            (BaseProblem::Lq(p), EvalTime::Node(k)) => Ok(solve_ire1(&p.with_input(op)?)?.pi[k].matrix().clone()),
            (BaseProblem::Filter(fp), eval) => {
                let fp = fp.with_observation(op)?;
                let cov = filter_covariance(&fp)?;
                match eval {
                    EvalTime::Node(k) => Ok(cov.posterior[k].matrix().clone()),
                    EvalTime::Window(tau, t) => Ok(smoother_covariance(&fp, &cov, tau, t)?.covariance.into_matrix()),
                }
            }
            (BaseProblem::Lq(_), EvalTime::Window(..)) => unreachable!("rejected at construction"),
        }
    }
}

impl PlacementModel for DenseEvaluator {
    fn criterion(&self) -> Criterion {
        self.criterion
    }

    fn cost(&self, r: &[f64]) -> Result<f64> {
        self.criterion.norm(&self.solution(r)?)
    }

    fn operator_deviation(&self, r: &[f64], r0: &[f64]) -> Result<f64> {
        self.family.operator(r)?.sup_distance(&self.family.operator(r0)?)
    }

    fn solution_deviation(&self, r: &[f64], r0: &[f64]) -> Result<f64> {
        self.criterion.norm(&(self.solution(r)? - self.solution(r0)?))
    }
}

/// One evaluated candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateCost {
    pub location: Vec<f64>,
    pub cost: Option<f64>,
    /// Solver error message when the evaluation failed.
    pub error: Option<String>,
}

/// The chosen location, its cost and every location tied with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub location: Vec<f64>,
    pub cost: f64,
    pub ties: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub criterion: Criterion,
    /// Sorted lexicographically by location.
    pub costs: Vec<CandidateCost>,
    pub best: Selection,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Minimum cost with the lexicographically smallest location among ties
/// (relative gap ≤ [`TIE_TOLERANCE`]). Failed candidates are ignored.
pub fn select_optimal(costs: &[CandidateCost]) -> Result<Selection> {
    let valid: Vec<(&[f64], f64)> = costs.iter().filter_map(|c| c.cost.map(|v| (c.location.as_slice(), v))).collect();
    let min = valid
        .iter()
        .map(|(_, v)| *v)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::Empty("no evaluated candidates to select from".into()))?;
    let tol = TIE_TOLERANCE * min.abs();
    let mut ties: Vec<Vec<f64>> = valid.iter().filter(|(_, v)| *v - min <= tol).map(|(r, _)| r.to_vec()).collect();
    ties.sort_by(|a, b| lexicographic(a, b));
    let location = ties[0].clone();
    let cost = valid.iter().find(|(r, _)| *r == location.as_slice()).map(|(_, v)| *v).expect("tie is a candidate");
    Ok(Selection { location, cost, ties })
}

/// Evaluates every candidate with up to `threads` workers. Per-candidate
/// failures are recorded; the sweep fails only when nothing succeeds. The
/// result does not depend on `threads`.
pub fn sweep_costs<M: PlacementModel + ?Sized>(model: &M, candidates: &[Vec<f64>], threads: usize) -> Result<PlacementResult> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate locations".into()));
    }
    let evaluate = |r: &Vec<f64>| match model.cost(r) {
        Ok(v) if v.is_finite() => CandidateCost { location: r.clone(), cost: Some(v), error: None },
        Ok(v) => CandidateCost { location: r.clone(), cost: None, error: Some(format!("non-finite cost {v}")) },
        Err(e) => CandidateCost { location: r.clone(), cost: None, error: Some(e.to_string()) },
    };
    let threads = threads.clamp(1, candidates.len());
    let mut costs: Vec<CandidateCost> = if threads == 1 {
        candidates.iter().map(evaluate).collect()
    } else {
        let chunk = candidates.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> =
                candidates.chunks(chunk).map(|part| s.spawn(move || part.iter().map(evaluate).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("placement worker panicked")).collect()
        })
    };
    costs.sort_by(|a, b| lexicographic(&a.location, &b.location));
    let best = select_optimal(&costs).map_err(|_| {
        let first = costs.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        Error::SweepFailed(first)
    })?;
    Ok(PlacementResult { criterion: model.criterion(), costs, best })
}

impl PlacementResult {
    /// Columns `r0..r{d−1},cost,status`; `status` is `ok` or the error message.
    pub fn to_csv_string(&self) -> Result<String> {
        let dim = self.costs.first().map_or(0, |c| c.location.len());
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..dim).map(|i| format!("r{i}")).collect();
        header.extend(["cost".to_string(), "status".to_string()]);
        writer.write_record(&header)?;
        for c in &self.costs {
            let mut row: Vec<String> = c.location.iter().map(|v| format_f64(*v)).collect();
            row.push(c.cost.map(format_f64).unwrap_or_default());
            row.push(c.error.clone().unwrap_or_else(|| "ok".into()));
            writer.write_record(&row)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Reads back the table written by [`to_csv_string`](Self::to_csv_string).
    pub fn from_csv_str(criterion: Criterion, text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let dim = reader.headers()?.len().checked_sub(2).ok_or_else(|| Error::InvalidInput("missing cost/status columns".into()))?;
        let mut costs = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")));
            let location = (0..dim).map(|i| parse(&record[i])).collect::<Result<Vec<_>>>()?;
            let cost = if record[dim].is_empty() { None } else { Some(parse(&record[dim])?) };
            let status = &record[dim + 1];
            costs.push(CandidateCost { location, cost, error: (status != "ok").then(|| status.to_string()) });
        }
        let best = select_optimal(&costs)?;
        Ok(PlacementResult { criterion, costs, best })
    }

    pub fn failures(&self) -> usize {
        self.costs.iter().filter(|c| c.cost.is_none()).count()
    }
}

/// One probe `r = r0 + ρ·d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub radius: f64,
    pub location: Vec<f64>,
    pub operator_deviation: f64,
    /// Norm of the difference of the solutions.
    pub solution_deviation: f64,
    /// `|ℓ(r) − ℓ(r0)|`.
    pub cost_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub criterion: Criterion,
    pub center: Vec<f64>,
    pub direction: Vec<f64>,
    /// Ordered by decreasing radius.
    pub rows: Vec<ProbeRow>,
    /// Radii at which a deviation grew by more than [`MONOTONE_SLACK`]
    /// relative to the next larger radius.
    pub flagged: Vec<f64>,
}

impl ContinuityReport {
    pub fn monotone(&self) -> bool {
        self.flagged.is_empty()
    }

    /// Columns `radius,r0..,operator_deviation,solution_deviation,cost_deviation`.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["radius".to_string()];
        header.extend((0..self.center.len()).map(|i| format!("r{i}")));
        header.extend(["operator_deviation", "solution_deviation", "cost_deviation"].map(String::from));
        writer.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![format_f64(row.radius)];
            rec.extend(row.location.iter().map(|v| format_f64(*v)));
            rec.extend([row.operator_deviation, row.solution_deviation, row.cost_deviation].map(format_f64));
            writer.write_record(&rec)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Probes `r0 + ρ d` for each radius `ρ` and tabulates how far the operator
/// and the solution move. Every probe must stay inside `bounds`.
pub fn continuity_probe<M: PlacementModel + ?Sized>(
    model: &M,
    bounds: &[(f64, f64)],
    r0: &[f64],
    direction: &[f64],
    radii: &[f64],
) -> Result<ContinuityReport> {
    if r0.len() != bounds.len() || direction.len() != bounds.len() {
        return Err(Error::Shape("location, direction and bounds must have the same dimension".into()));
    }
    if radii.is_empty() {
        return Err(Error::Empty("no probe radii".into()));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    let base_cost = model.cost(r0)?;
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in &radii {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidInput(format!("probe radius {radius} must be finite and nonnegative")));
        }
        let location: Vec<f64> = r0.iter().zip(direction).map(|(c, d)| c + radius * d).collect();
        if let Some(i) = location.iter().zip(bounds).position(|(v, (lo, hi))| !(*lo <= *v && *v <= *hi)) {
            return Err(Error::Domain(format!("probe at radius {radius} leaves the box in coordinate {i}")));
        }
        rows.push(ProbeRow {
            radius,
            operator_deviation: model.operator_deviation(&location, r0)?,
            solution_deviation: model.solution_deviation(&location, r0)?,
            cost_deviation: (model.cost(&location)? - base_cost).abs(),
            location,
        });
    }
    let grew = |now: f64, before: f64| now > (1.0 + MONOTONE_SLACK) * before + 1e-15;
    let flagged = rows
        .windows(2)
        .filter(|w| grew(w[1].operator_deviation, w[0].operator_deviation) || grew(w[1].solution_deviation, w[0].solution_deviation))
        .map(|w| w[1].radius)
        .collect();
    Ok(ContinuityReport { criterion: model.criterion(), center: r0.to_vec(), direction: direction.to_vec(), rows, flagged })
}
