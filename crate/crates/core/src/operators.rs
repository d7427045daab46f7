//! Dense linear maps, time grids and time-sampled operator-valued functions.
//!
//! Everything in the crate that represents an operator on the discretized
//! state space is a [`LinearMap`]: a finite, non-empty dense matrix. Time
//! dependent operators are sampled once per grid node and evaluated with
//! piecewise-constant-left interpolation, which is the convention every
//! recursion in the crate quadratures against.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this dimension norms switch from a full SVD to iterative methods.
pub const DENSE_NORM_LIMIT: usize = 512;

/// Default relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A finite dense real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearMapRepr", into = "LinearMapRepr")]
pub struct LinearMap(DMatrix<f64>);

#[derive(Serialize, Deserialize)]
struct LinearMapRepr {
    rows: usize,
    cols: usize,
    /// Row-major.
    entries: Vec<f64>,
}

impl TryFrom<LinearMapRepr> for LinearMap {
    type Error = Error;

    fn try_from(repr: LinearMapRepr) -> Result<Self> {
        if repr.entries.len() != repr.rows * repr.cols {
            return Err(Error::Shape(format!(
                "{} entries for a {}x{} map",
                repr.entries.len(),
                repr.rows,
                repr.cols
            )));
        }
        LinearMap::new(DMatrix::from_row_slice(repr.rows, repr.cols, &repr.entries))
    }
}

impl From<LinearMap> for LinearMapRepr {
    fn from(map: LinearMap) -> Self {
        let (rows, cols) = map.0.shape();
        let entries = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| map.0[(i, j)])
            .collect();
        LinearMapRepr { rows, cols, entries }
    }
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidInput("linear map with an empty dimension".into()));
        }
        ensure_finite(&matrix)?;
        Ok(LinearMap(matrix))
    }

    pub fn from_row_slice(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!("{} entries for a {rows}x{cols} map", entries.len())));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn identity(n: usize) -> Self {
        LinearMap(DMatrix::identity(n, n))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        LinearMap(DMatrix::zeros(rows, cols))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> LinearMap {
        LinearMap(self.0.transpose())
    }

    /// One matrix row per CSV record.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for row in self.0.row_iter() {
            writer.write_record(row.iter().map(|v| format_f64(*v)))?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader =
            csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut entries = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for record in reader.records() {
            let record = record?;
            let width = record.len();
            if *cols.get_or_insert(width) != width {
                return Err(Error::Shape(format!("ragged CSV row {rows}")));
            }
            for field in record.iter() {
                let value: f64 = field
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("not a number: {field:?}")))?;
                entries.push(value);
            }
            rows += 1;
        }
        Self::from_row_slice(rows, cols.unwrap_or(0), &entries)
    }
}

impl Deref for LinearMap {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Shortest representation that parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn ensure_finite(m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::InvalidInput(format!("non-finite entry at ({r}, {c})")));
    }
    Ok(())
}

/// Largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> Result<f64> {
    ensure_finite(a)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    if a.nrows().max(a.ncols()) <= DENSE_NORM_LIMIT {
        let sv = a.singular_values();
        Ok(sv.iter().cloned().fold(0.0, f64::max))
    } else {
        Ok(power_iteration_norm(a, 1e-13, 10_000))
    }
}

/// Power iteration on `AᵀA`. Exposed so tests can use it as an oracle at
/// small dimension.
pub fn power_iteration_norm(a: &DMatrix<f64>, tol: f64, max_iters: usize) -> f64 {
    let n = a.ncols();
    // Deterministic, generic starting vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut sigma_sq = 0.0;
    for _ in 0..max_iters {
        let w = a.tr_mul(&(a * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - sigma_sq).abs() <= tol * next {
            sigma_sq = next;
            break;
        }
        sigma_sq = next;
    }
    sigma_sq.sqrt()
}

/// Sum of singular values (trace norm).
pub fn nuclear_norm(a: &DMatrix<f64>) -> Result<f64> {
    ensure_finite(a)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    if a.is_square() && asymmetry(a) <= 1e-12 {
        let eig = SymmetricEigen::new(symmetric_part(a));
        return Ok(eig.eigenvalues.iter().map(|l| l.abs()).sum());
    }
    Ok(a.singular_values().iter().sum())
}

/// Outcome of [`psd_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub is_psd: bool,
    /// Smallest eigenvalue of the symmetric part.
    pub min_eigenvalue: f64,
    /// `‖A − Aᵀ‖ / ‖A‖` (Frobenius), zero for the zero matrix.
    pub asymmetry: f64,
}

/// True iff `A` is symmetric to `tol` (relative) and `λ_min(sym A) ≥ −tol`.
pub fn psd_check(a: &DMatrix<f64>, tol: f64) -> Result<PsdReport> {
    if !a.is_square() {
        return Err(Error::Shape(format!("psd check needs a square map, got {}x{}", a.nrows(), a.ncols())));
    }
    ensure_finite(a)?;
    let asym = asymmetry(a);
    let min_eigenvalue = min_eigenvalue(&symmetric_part(a));
    Ok(PsdReport { is_psd: asym <= tol && min_eigenvalue >= -tol, min_eigenvalue, asymmetry: asym })
}

pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.norm();
    if scale == 0.0 {
        0.0
    } else {
        (a - a.transpose()).norm() / scale
    }
}

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Symmetrizes `a` in place and zeroes eigenvalues in `[-tol·(1+‖a‖), 0)`.
///
/// Larger negative eigenvalues are left alone so that genuine loss of
/// semidefiniteness stays visible to callers.
pub fn clip_psd(a: &mut DMatrix<f64>, tol: f64) {
    symmetrize(a);
    if a.clone().cholesky().is_some() {
        return;
    }
    let eig = SymmetricEigen::new(a.clone());
    let floor = -tol * (1.0 + eig.eigenvalues.amax());
    if !eig.eigenvalues.iter().any(|&l| l < 0.0 && l >= floor) {
        return;
    }
    let clipped = eig.eigenvalues.map(|l| if l < 0.0 && l >= floor { 0.0 } else { l });
    *a = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(a);
}

/// Symmetric PSD square root.
pub fn sqrt_psd(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Shape("square root of a non-square map".into()));
    }
    ensure_finite(a)?;
    let eig = SymmetricEigen::new(symmetric_part(a));
    let scale = 1.0 + eig.eigenvalues.amax();
    if let Some(l) = eig.eigenvalues.iter().find(|&&l| l < -tol * scale) {
        return Err(Error::NotPsd(format!("eigenvalue {l:e} below tolerance")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    symmetrize(&mut root);
    Ok(root)
}

/// Uniform time grid `t_k = t0 + k·Δt`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeGridRepr", into = "TimeGridRepr")]
pub struct TimeGrid {
    t0: f64,
    b: f64,
    steps: usize,
}

#[derive(Serialize, Deserialize)]
struct TimeGridRepr {
    t0: f64,
    b: f64,
    steps: usize,
}

impl TryFrom<TimeGridRepr> for TimeGrid {
    type Error = Error;
    fn try_from(r: TimeGridRepr) -> Result<Self> {
        TimeGrid::new(r.t0, r.b, r.steps)
    }
}

impl From<TimeGrid> for TimeGridRepr {
    fn from(g: TimeGrid) -> Self {
        TimeGridRepr { t0: g.t0, b: g.b, steps: g.steps }
    }
}

impl TimeGrid {
    pub fn new(t0: f64, b: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && b.is_finite()) || t0 >= b {
            return Err(Error::Grid(format!("need t0 < b, got [{t0}, {b}]")));
        }
        if steps == 0 {
            return Err(Error::Grid("need at least one step".into()));
        }
        Ok(TimeGrid { t0, b, steps })
    }

    /// Grid on `[t0, b]` whose step is `dt` (which must divide the horizon).
    pub fn with_step(t0: f64, b: f64, dt: f64) -> Result<Self> {
        let ratio = (b - t0) / dt;
        let steps = ratio.round();
        if dt.is_nan() || dt <= 0.0 || steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Grid(format!("step {dt} does not divide [{t0}, {b}]")));
        }
        Self::new(t0, b, steps as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.b
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        (self.b - self.t0) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.b
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node at time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.dt();
        let k = x.round();
        if k < 0.0 || k > self.steps as f64 || (x - k).abs() > 1e-7 {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Index of the interval containing `t` (piecewise-constant-left).
    pub fn interval_of(&self, t: f64) -> usize {
        let x = (t - self.t0) / self.dt() + 1e-9;
        (x.floor().max(0.0) as usize).min(self.steps)
    }

    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.t0, self.b, self.steps * factor)
    }
}

/// Operator-valued function sampled at every node of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpValuedFunction {
    grid: TimeGrid,
    samples: Vec<LinearMap>,
}

impl OpValuedFunction {
    pub fn new(grid: TimeGrid, samples: Vec<LinearMap>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::Grid(format!("{} samples for {} grid nodes", samples.len(), grid.len())));
        }
        let shape = samples[0].shape();
        if let Some(k) = samples.iter().position(|s| s.shape() != shape) {
            return Err(Error::Shape(format!("sample {k} has shape {:?}, expected {shape:?}", samples[k].shape())));
        }
        Ok(OpValuedFunction { grid, samples })
    }

    pub fn constant(grid: TimeGrid, value: LinearMap) -> Self {
        OpValuedFunction { grid, samples: vec![value; grid.len()] }
    }

    pub fn from_fn<F>(grid: TimeGrid, mut f: F) -> Result<Self>
    where
        F: FnMut(f64) -> Result<LinearMap>,
    {
        let samples = grid.nodes().into_iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(grid, samples)
    }

    /// Like [`from_fn`](Self::from_fn) but keyed by node index.
    pub fn from_fn_indexed<F>(grid: TimeGrid, f: F) -> Result<Self>
    where
        F: FnMut(usize) -> Result<LinearMap>,
    {
        let samples = (0..grid.len()).map(f).collect::<Result<Vec<_>>>()?;
        Self::new(grid, samples)
    }

    pub fn zeros(grid: TimeGrid, rows: usize, cols: usize) -> Self {
        Self::constant(grid, LinearMap::zeros(rows, cols))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[LinearMap] {
        &self.samples
    }

    pub fn rows(&self) -> usize {
        self.samples[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.samples[0].cols()
    }

    pub fn at_node(&self, k: usize) -> &LinearMap {
        &self.samples[k]
    }

    /// Piecewise-constant-left evaluation.
    pub fn at(&self, t: f64) -> &LinearMap {
        &self.samples[self.grid.interval_of(t)]
    }

    /// `‖F‖∞`: the largest sample operator norm.
    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().map(|s| operator_norm(s).unwrap_or(f64::NAN)).fold(0.0, f64::max)
    }

    /// Pointwise map of every sample.
    pub fn map<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &LinearMap) -> Result<LinearMap>,
    {
        let samples = self.samples.iter().enumerate().map(|(k, s)| f(k, s)).collect::<Result<Vec<_>>>()?;
        Self::new(self.grid, samples)
    }

    /// Node reversal `s ↦ t0 + b − s`.
    pub fn time_reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        OpValuedFunction { grid: self.grid, samples }
    }

    /// Sup over nodes of the operator norm of the difference.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Grid("operator functions on different grids".into()));
        }
        if self.samples[0].shape() != other.samples[0].shape() {
            return Err(Error::Shape("operator functions of different shapes".into()));
        }
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| operator_norm(&(a.matrix() - b.matrix())))
            .try_fold(0.0f64, |acc, n| n.map(|n| acc.max(n)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn operator_norm_trivial_cases() {
        assert_eq!(operator_norm(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        assert!((operator_norm(&d).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn operator_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 5, 5);
        let oracle = power_iteration_norm(&a, 1e-15, 100_000);
        assert!((operator_norm(&a).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn nuclear_norm_trivial_cases() {
        assert!((nuclear_norm(&DMatrix::identity(4, 4)).unwrap() - 4.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]));
        assert!((nuclear_norm(&d).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn nuclear_norm_of_gram_is_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 6, 6);
        let gram = a.transpose() * &a;
        // Trace computed directly from the entries.
        let trace: f64 = (0..6).map(|i| (0..6).map(|k| a[(k, i)] * a[(k, i)]).sum::<f64>()).sum();
        assert!((nuclear_norm(&gram).unwrap() - trace).abs() < 1e-10);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let mut m = DMatrix::identity(2, 2);
        m[(1, 0)] = f64::NAN;
        assert!(matches!(operator_norm(&m), Err(Error::InvalidInput(_))));
        assert!(matches!(nuclear_norm(&m), Err(Error::InvalidInput(_))));
        assert!(LinearMap::new(m).is_err());
    }

    #[test]
    fn psd_check_cases() {
        let r = psd_check(&DMatrix::identity(3, 3), SYMMETRY_TOL).unwrap();
        assert!(r.is_psd);
        assert!((r.min_eigenvalue - 1.0).abs() < 1e-14);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let r = psd_check(&d, SYMMETRY_TOL).unwrap();
        assert!(!r.is_psd);
        assert!((r.min_eigenvalue + 1.0).abs() < 1e-14);

        assert!(matches!(psd_check(&DMatrix::zeros(2, 3), 1e-10), Err(Error::Shape(_))));
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 4, 7);
        let gram = a.transpose() * &a;
        let report = psd_check(&gram, 1e-10).unwrap();
        assert!(report.is_psd);
        // Independent oracle: a Cholesky factorization of a slightly shifted
        // Gram matrix exists.
        assert!((gram + DMatrix::identity(7, 7) * 1e-12).cholesky().is_some());
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 3);
        let p = &a * a.transpose();
        let root = sqrt_psd(&p, 1e-12).unwrap();
        assert!((&root * &root - &p).norm() < 1e-12);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(sqrt_psd(&neg, 1e-12), Err(Error::NotPsd(_))));
    }

    #[test]
    fn clip_psd_removes_roundoff_negatives_only() {
        let mut m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-14]));
        clip_psd(&mut m, 1e-12);
        assert!(min_eigenvalue(&m) >= 0.0);
        let mut m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3]));
        clip_psd(&mut m, 1e-12);
        assert!(min_eigenvalue(&m) < -1e-4);
    }

    #[test]
    fn serialization_formats() {
        let m = LinearMap::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.5, -6.25]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"rows":2,"cols":3,"entries":[1.0,2.0,3.0,4.0,5.5,-6.25]}"#);
        let back: LinearMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let csv = m.to_csv_string().unwrap();
        assert_eq!(csv, "1.0,2.0,3.0\n4.0,5.5,-6.25\n");
        assert_eq!(LinearMap::from_csv_str(&csv).unwrap(), m);
        assert!(serde_json::from_str::<LinearMap>(r#"{"rows":2,"cols":2,"entries":[1.0]}"#).is_err());
    }

    #[test]
    fn time_grid_basics() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.node(4), 1.0);
        assert_eq!(g.index_of(0.5), Some(2));
        assert_eq!(g.index_of(0.3), None);
        assert_eq!(g.interval_of(0.3), 1);
        assert_eq!(g.interval_of(1.0), 4);
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert_eq!(TimeGrid::with_step(0.0, 3.0, 0.01).unwrap().steps(), 300);
        assert!(TimeGrid::with_step(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn op_valued_function_sampling() {
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let f = OpValuedFunction::from_fn(g, |t| LinearMap::from_row_slice(1, 1, &[t])).unwrap();
        assert_eq!(f.at(0.7)[(0, 0)], 0.5);
        assert_eq!(f.at(0.2)[(0, 0)], 0.0);
        assert_eq!(f.sup_norm(), 1.0);
        assert_eq!(f.time_reversed().at_node(0)[(0, 0)], 1.0);
        assert_eq!(f.time_reversed().time_reversed(), f);
        let bad = OpValuedFunction::new(g, vec![LinearMap::identity(1), LinearMap::identity(2), LinearMap::identity(1)]);
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
            proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
        }

        proptest! {
            #[test]
            fn operator_norm_bounded_by_nuclear(a in matrix(4)) {
                prop_assert!(operator_norm(&a).unwrap() <= nuclear_norm(&a).unwrap() + 1e-12);
            }

            #[test]
            fn rank_one_norms_coincide(u in proptest::collection::vec(-2.0f64..2.0, 3),
                                       v in proptest::collection::vec(-2.0f64..2.0, 3)) {
                let a = DVector::from_vec(u) * DVector::from_vec(v).transpose();
                let (op, nuc) = (operator_norm(&a).unwrap(), nuclear_norm(&a).unwrap());
                prop_assert!((op - nuc).abs() <= 1e-10 * (1.0 + op));
            }

            #[test]
            fn nuclear_norm_is_subadditive(a in matrix(3), b in matrix(3)) {
                let lhs = nuclear_norm(&(&a + &b)).unwrap();
                prop_assert!(lhs <= nuclear_norm(&a).unwrap() + nuclear_norm(&b).unwrap() + 1e-10);
            }

            #[test]
            fn operator_norm_is_submultiplicative(a in matrix(3), b in matrix(3)) {
                let lhs = operator_norm(&(&a * &b)).unwrap();
                prop_assert!(lhs <= operator_norm(&a).unwrap() * operator_norm(&b).unwrap() + 1e-10);
            }

            #[test]
            fn gram_is_always_psd(a in matrix(4)) {
                let gram = a.transpose() * &a;
                prop_assert!(psd_check(&gram, 1e-10).unwrap().is_psd);
            }
        }
    }
}
