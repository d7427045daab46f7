use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertical diffusion coefficient `K(z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffusionProfile {
    Constant { value: f64 },
    /// `K(z) = bottom + (top − bottom) z / Lz`.
    Linear { bottom: f64, top: f64 },
}

impl DiffusionProfile {
    pub fn eval(&self, z: f64, lz: f64) -> f64 {
        match *self {
            DiffusionProfile::Constant { value } => value,
            DiffusionProfile::Linear { bottom, top } => bottom + (top - bottom) * z / lz,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DiffusionProfile::Constant { value } => value.is_finite() && value >= 0.0,
            DiffusionProfile::Linear { bottom, top } => bottom.is_finite() && top.is_finite() && bottom >= 0.0 && top >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("kz: diffusion coefficient must be finite and nonnegative".into()))
        }
    }
}

impl Default for DiffusionProfile {
    fn default() -> Self {
        DiffusionProfile::Linear { bottom: 0.05, top: 0.02 }
    }
}

/// Gaussian envelope `exp(−d²/(2 width²))` around `(x, y)`, with `d` the
/// periodic (minimum image) horizontal distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hotspot {
    pub x: f64,
    pub y: f64,
    pub width: f64,
}

/// Background emission
/// `e_b(t, x, y) = base + amplitude · g(x, y) · sin(2πt/period + 2π(wave_x·x/Lx + wave_y·y/Ly))`
/// where `g` is the hotspot envelope, or 1 without one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionBackground {
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
    pub wave_x: f64,
    pub wave_y: f64,
    pub hotspot: Option<Hotspot>,
}

impl Default for EmissionBackground {
    fn default() -> Self {
        EmissionBackground { base: 1.0, amplitude: 0.5, period: 3.0, wave_x: 0.0, wave_y: 0.0, hotspot: None }
    }
}

fn periodic_gap(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

impl EmissionBackground {
    pub fn eval(&self, t: f64, x: f64, y: f64, lx: f64, ly: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let envelope = match self.hotspot {
            Some(h) => {
                let (dx, dy) = (periodic_gap(x, h.x, lx), periodic_gap(y, h.y, ly));
                (-(dx * dx + dy * dy) / (2.0 * h.width * h.width)).exp()
            }
            None => 1.0,
        };
        self.base
            + self.amplitude * envelope * (tau * t / self.period + tau * (self.wave_x * x / lx + self.wave_y * y / ly)).sin()
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.base, self.amplitude, self.period, self.wave_x, self.wave_y].iter().all(|v| v.is_finite());
        if !finite || self.period <= 0.0 {
            return Err(Error::InvalidInput("emission_background: fields must be finite with period > 0".into()));
        }
        if let Some(h) = self.hotspot {
            if !(h.x.is_finite() && h.y.is_finite() && h.width.is_finite() && h.width > 0.0) {
                return Err(Error::InvalidInput("emission_background.hotspot: need finite centre and width > 0".into()));
            }
        }
        if self.base <= self.amplitude.abs() {
            return Err(Error::InvalidInput("emission_background: base must exceed |amplitude| so e_b > 0".into()));
        }
        Ok(())
    }
}

/// Orthonormal family `{e_i}` behind the nuclear prior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// Unit vectors in extended-state index order.
    CellIndicator,
    /// Cell averages of `cos(πk_x x/Lx) cos(πk_y y/Ly) cos(πk_z z/Lz)`.
    Cosine,
    /// Cell averages of periodic horizontal harmonics times `cos(πk_z z/Lz)`.
    #[default]
    Fourier,
}

/// Prior covariance `P(t0|t−1)` on the extended state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    /// `scale · I`.
    ScaledIdentity {
        #[serde(default = "default_identity_scale")]
        scale: f64,
    },
    /// `Σ_i e^{−i²} e_i e_iᵀ`, truncated after `terms` modes.
    Nuclear {
        #[serde(default)]
        basis: BasisKind,
        #[serde(default = "default_nuclear_terms")]
        terms: usize,
    },
}

fn default_identity_scale() -> f64 {
    (-8f64).exp()
}

/// `e^{−81}` is below `1e−35`; later terms cannot change any cost in
/// double precision.
fn default_nuclear_terms() -> usize {
    8
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Nuclear { basis: BasisKind::default(), terms: default_nuclear_terms() }
    }
}

impl PriorSpec {
    pub fn scaled_identity() -> Self {
        PriorSpec::ScaledIdentity { scale: default_identity_scale() }
    }

    pub fn nuclear(basis: BasisKind) -> Self {
        PriorSpec::Nuclear { basis, terms: default_nuclear_terms() }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::ScaledIdentity { scale } if !(scale.is_finite() && scale >= 0.0) => {
                Err(Error::InvalidInput("prior.scale: must be finite and nonnegative".into()))
            }
            PriorSpec::Nuclear { terms: 0, .. } => Err(Error::InvalidInput("prior.terms: must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Tensor quadrature used for cell averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum QuadratureRule {
    /// Composite midpoint rule with `per_axis` equal sub-intervals per axis.
    Midpoint { per_axis: usize },
    /// Gauss-Legendre with `points` nodes per axis (1 to 5).
    GaussLegendre { points: usize },
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule::Midpoint { per_axis: 2 }
    }
}

impl QuadratureRule {
    /// Nodes and weights on `[0, 1]`; weights sum to 1.
    pub fn unit_rule(&self) -> Result<Vec<(f64, f64)>> {
        match *self {
            QuadratureRule::Midpoint { per_axis } if per_axis >= 1 => {
                let h = 1.0 / per_axis as f64;
                Ok((0..per_axis).map(|i| ((i as f64 + 0.5) * h, h)).collect())
            }
            QuadratureRule::GaussLegendre { points } => {
                let (nodes, weights): (&[f64], &[f64]) = match points {
                    1 => (&[0.0], &[2.0]),
                    2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
                    3 => (&[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4], &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]),
                    4 => (
                        &[-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6],
                        &[0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9],
                    ),
                    5 => (
                        &[-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664],
                        &[
                            0.236_926_885_056_189_1,
                            0.478_628_670_499_366_5,
                            0.568_888_888_888_888_9,
                            0.478_628_670_499_366_5,
                            0.236_926_885_056_189_1,
                        ],
                    ),
                    _ => return Err(Error::InvalidInput("quadrature.points: must be between 1 and 5".into())),
                };
                Ok(nodes.iter().zip(weights).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect())
            }
            QuadratureRule::Midpoint { .. } => Err(Error::InvalidInput("quadrature.per_axis: must be at least 1".into())),
        }
    }
}

/// The single observation of the placement experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSpec {
    /// Observation time; defaults to the end of the horizon.
    pub time: Option<f64>,
    /// Variance of the observation error.
    pub noise_variance: f64,
    /// Edge lengths of the averaging box `Ω_r` centred at the sensor.
    pub footprint: [f64; 3],
}

impl Default for ObservationSpec {
    fn default() -> Self {
        ObservationSpec { time: None, noise_variance: 1.0, footprint: [1.0, 1.0, 0.5] }
    }
}

/// Candidate sensor locations: centres of an `nx × ny` horizontal grid at height `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateSpec {
    pub nx: usize,
    pub ny: usize,
    pub z: f64,
}

impl Default for CandidateSpec {
    fn default() -> Self {
        CandidateSpec { nx: 5, ny: 5, z: 0.0 }
    }
}

/// Everything that defines one discretized advection-diffusion model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvDiffConfig {
    /// Box `(0, Lx) × (0, Ly) × (0, Lz)`.
    pub domain: [f64; 3],
    pub horizon: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    /// Number of vertical layers, including both boundary layers.
    pub nz: usize,
    pub vx: f64,
    pub vy: f64,
    pub kz: DiffusionProfile,
    pub emission_background: EmissionBackground,
    pub dt: f64,
    pub prior: PriorSpec,
    /// Known uniform deposition rate `δd`.
    pub deposition: f64,
    pub quadrature: QuadratureRule,
    pub observation: ObservationSpec,
    pub candidates: CandidateSpec,
}

impl Default for AdvDiffConfig {
    fn default() -> Self {
        AdvDiffConfig {
            domain: [5.0, 5.0, 1.0],
            horizon: [0.0, 3.0],
            nx: 10,
            ny: 10,
            nz: 3,
            vx: 0.3,
            vy: 0.2,
            kz: DiffusionProfile::default(),
            emission_background: EmissionBackground::default(),
            dt: 0.01,
            prior: PriorSpec::default(),
            deposition: 0.0,
            quadrature: QuadratureRule::default(),
            observation: ObservationSpec::default(),
            candidates: CandidateSpec::default(),
        }
    }
}

impl AdvDiffConfig {
    /// Same configuration at a different horizontal resolution.
    pub fn at_resolution(&self, nx: usize, ny: usize) -> Self {
        AdvDiffConfig { nx, ny, ..self.clone() }
    }

    pub fn steps(&self) -> usize {
        ((self.horizon[1] - self.horizon[0]) / self.dt).round() as usize
    }

    /// Checks every invariant except the CFL condition, which the model
    /// builder reports as a stability error.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidInput(format!("{field}: {why}")));
        if self.domain.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad("domain", "extents must be positive");
        }
        if !(self.horizon[0].is_finite() && self.horizon[1].is_finite() && self.horizon[0] < self.horizon[1]) {
            return bad("horizon", "need t0 < b");
        }
        if self.nx == 0 || self.ny == 0 {
            return bad("nx", "horizontal cell counts must be positive");
        }
        if self.nz < 2 {
            return bad("nz", "need at least two layers");
        }
        if !(self.vx.is_finite() && self.vy.is_finite()) {
            return bad("vx", "velocities must be finite");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", "time step must be positive");
        }
        let span = self.horizon[1] - self.horizon[0];
        if (span / self.dt - (span / self.dt).round()).abs() > 1e-9 * (span / self.dt) {
            return bad("dt", "must divide the horizon into a whole number of steps");
        }
        if !self.deposition.is_finite() {
            return bad("deposition", "must be finite");
        }
        self.kz.validate()?;
        self.emission_background.validate()?;
        self.prior.validate()?;
        self.quadrature.unit_rule()?;
        let obs = &self.observation;
        if !(obs.noise_variance.is_finite() && obs.noise_variance > 0.0) {
            return bad("observation.noise_variance", "must be positive");
        }
        if obs.footprint.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("observation.footprint", "edge lengths must be positive");
        }
        if obs.footprint[0] > self.domain[0] || obs.footprint[1] > self.domain[1] {
            return bad("observation.footprint", "horizontal edges cannot exceed the domain");
        }
        if let Some(t) = obs.time {
            if !(t >= self.horizon[0] && t <= self.horizon[1]) {
                return bad("observation.time", "must lie in the horizon");
            }
        }
        let c = &self.candidates;
        if c.nx == 0 || c.ny == 0 {
            return bad("candidates", "grid must be non-empty");
        }
        if !(c.z >= 0.0 && c.z <= self.domain[2]) {
            return bad("candidates.z", "must lie in the domain");
        }
        Ok(())
    }
}
