use super::config::DiffusionProfile;
use super::grid::Geometry;
use crate::error::{Error, Result};

/// Horizontal axis of a Lax-Wendroff sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn label(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
        }
    }
}

/// Courant number `|v| τ / Δ` of a sweep over time `τ`; errors above 1.
pub fn courant(geom: &Geometry, v: f64, tau: f64, axis: Axis) -> Result<f64> {
    let h = match axis {
        Axis::X => geom.dx,
        Axis::Y => geom.dy,
    };
    let c = v * tau / h;
    if c.abs() > 1.0 {
        return Err(Error::Stability { axis: axis.label(), courant: c.abs() });
    }
    Ok(c)
}

/// `out = (I + τA + τ²/2 A²) src` along `axis`, with `A = −v ∂` the periodic
/// centred difference and `nu = vτ/Δ` the signed Courant number. Passing
/// `−nu` applies the transpose.
pub(crate) fn lax_wendroff_apply(geom: &Geometry, nu: f64, axis: Axis, src: &[f64], out: &mut [f64]) {
    let (len, stride) = match axis {
        Axis::X => (geom.nx, 1),
        Axis::Y => (geom.ny, geom.nx),
    };
    let first = 0.5 * nu;
    let second = 0.125 * nu * nu;
    let lines = src.len() / len;
    for line in 0..lines {
        // start index of the line: lines run over every other coordinate
        let base = match axis {
            Axis::X => line * geom.nx,
            Axis::Y => (line / geom.nx) * geom.nx * geom.ny + line % geom.nx,
        };
        let at = |p: usize| src[base + (p % len) * stride];
        for p in 0..len {
            let (pp, p2, mp, m2) = (p + 1, p + 2, p + len - 1, p + 2 * len - 2);
            let c = at(p);
            out[base + p * stride] = c - first * (at(pp) - at(mp)) + second * (at(p2) - 2.0 * c + at(m2));
        }
    }
}

/// One Lax-Wendroff half of the split advection: `(I + τA + τ²/2 A²) field`
/// with `τ = dt`, on the concentration block (or any stack of planes).
pub fn lax_wendroff_step(field: &[f64], geom: &Geometry, v: f64, dt: f64, axis: Axis) -> Result<Vec<f64>> {
    if !field.len().is_multiple_of(geom.plane()) {
        return Err(Error::Shape(format!("field of length {} is not a stack of {}-cell planes", field.len(), geom.plane())));
    }
    let nu = courant(geom, v, dt, axis)?;
    let mut out = vec![0.0; field.len()];
    lax_wendroff_apply(geom, nu, axis, field, &mut out);
    Ok(out)
}

/// Tridiagonal matrix acting on vertical columns; `sub[0]` and `sup[nz−1]` are unused.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        if n > 1 {
            sub[1..].copy_from_slice(&self.sup[..n - 1]);
            sup[..n - 1].copy_from_slice(&self.sub[1..]);
        }
        Tridiagonal { sub, diag: self.diag.clone(), sup }
    }

    /// `I + s·self`.
    pub fn shifted_identity(&self, s: f64) -> Self {
        Tridiagonal {
            sub: self.sub.iter().map(|v| s * v).collect(),
            diag: self.diag.iter().map(|v| 1.0 + s * v).collect(),
            sup: self.sup.iter().map(|v| s * v).collect(),
        }
    }

    /// Applies the matrix to every column of a stack of `len()` planes.
    pub fn apply_columns(&self, plane: usize, src: &[f64], out: &mut [f64]) {
        let n = self.len();
        for k in 0..n {
            let row = &mut out[k * plane..(k + 1) * plane];
            for (h, o) in row.iter_mut().enumerate() {
                let mut v = self.diag[k] * src[k * plane + h];
                if k > 0 {
                    v += self.sub[k] * src[(k - 1) * plane + h];
                }
                if k + 1 < n {
                    v += self.sup[k] * src[(k + 1) * plane + h];
                }
                *o = v;
            }
        }
    }

    pub fn factor(&self) -> Result<ThomasFactor> {
        let n = self.len();
        let mut inv_pivot = vec![0.0; n];
        let mut sup_mod = vec![0.0; n];
        for k in 0..n {
            let pivot = self.diag[k] - if k > 0 { self.sub[k] * sup_mod[k - 1] } else { 0.0 };
            if pivot.abs() <= f64::EPSILON * self.diag[k].abs().max(1.0) || !pivot.is_finite() {
                return Err(Error::Solver(format!("zero pivot in tridiagonal solve at layer {k}")));
            }
            inv_pivot[k] = 1.0 / pivot;
            sup_mod[k] = if k + 1 < n { self.sup[k] * inv_pivot[k] } else { 0.0 };
        }
        Ok(ThomasFactor { sub: self.sub.clone(), inv_pivot, sup_mod })
    }
}

/// Precomputed Thomas elimination of a [`Tridiagonal`].
#[derive(Clone, Debug)]
pub struct ThomasFactor {
    sub: Vec<f64>,
    inv_pivot: Vec<f64>,
    sup_mod: Vec<f64>,
}

impl ThomasFactor {
    /// Solves in place for every column of a stack of planes.
    pub fn solve_columns(&self, plane: usize, rhs: &mut [f64]) {
        let n = self.inv_pivot.len();
        for k in 0..n {
            let (before, rest) = rhs.split_at_mut(k * plane);
            let row = &mut rest[..plane];
            if k == 0 {
                row.iter_mut().for_each(|v| *v *= self.inv_pivot[0]);
            } else {
                let prev = &before[(k - 1) * plane..];
                for (v, p) in row.iter_mut().zip(prev) {
                    *v = (*v - self.sub[k] * p) * self.inv_pivot[k];
                }
            }
        }
        for k in (0..n.saturating_sub(1)).rev() {
            let (head, tail) = rhs.split_at_mut((k + 1) * plane);
            let row = &mut head[k * plane..];
            for (v, next) in row.iter_mut().zip(&tail[..plane]) {
                *v -= self.sup_mod[k] * next;
            }
        }
    }
}

/// Flux-form `D_z = ∂_z(K ∂_z)` with Neumann ends: layer `k` exchanges
/// `K(z_k ± Δz/2)(c_{k±1} − c_k)/Δz` with its neighbours and divides by its
/// thickness, so `Σ_k w_k (D c)_k = 0`.
pub fn vertical_operator(geom: &Geometry, kz: &DiffusionProfile) -> Tridiagonal {
    let nz = geom.nz;
    let lz = geom.lengths[2];
    let flux: Vec<f64> = (0..nz - 1).map(|k| kz.eval(geom.layer_height(k) + 0.5 * geom.dz, lz) / geom.dz).collect();
    let mut sub = vec![0.0; nz];
    let mut diag = vec![0.0; nz];
    let mut sup = vec![0.0; nz];
    for k in 0..nz {
        let w = geom.layer_thickness(k);
        if k + 1 < nz {
            sup[k] = flux[k] / w;
        }
        if k > 0 {
            sub[k] = flux[k - 1] / w;
        }
        diag[k] = -(sup[k] + sub[k]);
    }
    Tridiagonal { sub, diag, sup }
}

/// `(I − τD)⁻¹(I + τD)` and its pieces, for `τ = Δt/2`.
#[derive(Clone, Debug)]
pub struct CrankNicolson {
    pub(crate) explicit: Tridiagonal,
    pub(crate) explicit_t: Tridiagonal,
    pub(crate) implicit: ThomasFactor,
    pub(crate) implicit_t: ThomasFactor,
}

impl CrankNicolson {
    pub fn new(d: &Tridiagonal, dt: f64) -> Result<Self> {
        let tau = 0.5 * dt;
        let explicit = d.shifted_identity(tau);
        let implicit = d.shifted_identity(-tau);
        Ok(CrankNicolson {
            explicit_t: explicit.transpose(),
            explicit,
            implicit_t: implicit.transpose().factor()?,
            implicit: implicit.factor()?,
        })
    }

    /// `out = (I − τD)⁻¹(I + τD) src`.
    pub fn apply(&self, plane: usize, src: &[f64], out: &mut [f64]) {
        self.explicit.apply_columns(plane, src, out);
        self.implicit.solve_columns(plane, out);
    }

    /// `out = (I + τD)ᵀ(I − τD)⁻ᵀ src`; `scratch` receives `(I − τD)⁻ᵀ src`.
    pub fn apply_transpose(&self, plane: usize, src: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        scratch.copy_from_slice(src);
        self.implicit_t.solve_columns(plane, scratch);
        self.explicit_t.apply_columns(plane, scratch, out);
    }
}

/// One Crank-Nicolson step `(I − Δt/2 D)⁻¹(I + Δt/2 D)` on the concentration block.
pub fn crank_nicolson_step(field: &[f64], geom: &Geometry, kz: &DiffusionProfile, dt: f64) -> Result<Vec<f64>> {
    if field.len() != geom.cells() {
        return Err(Error::Shape(format!("field of length {}, expected {}", field.len(), geom.cells())));
    }
    let cn = CrankNicolson::new(&vertical_operator(geom, kz), dt)?;
    let mut out = vec![0.0; field.len()];
    cn.apply(geom.plane(), field, &mut out);
    Ok(out)
}
