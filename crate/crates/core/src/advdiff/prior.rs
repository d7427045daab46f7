use std::cmp::Reverse;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::config::{BasisKind, PriorSpec, QuadratureRule};
use super::grid::Geometry;
use crate::error::{Error, Result};

/// Highest wavenumber per axis considered when building smooth bases.
const MAX_WAVENUMBER: usize = 8;

/// Degree of a periodic harmonic index: 0 is the constant, `2m − 1` and `2m`
/// are `cos` and `sin` of wavenumber `m`.
fn harmonic_degree(idx: usize) -> usize {
    idx.div_ceil(2)
}

fn harmonic(idx: usize, s: f64, len: f64) -> f64 {
    if idx == 0 {
        return 1.0;
    }
    let arg = 2.0 * PI * harmonic_degree(idx) as f64 * s / len;
    if idx % 2 == 1 {
        arg.cos()
    } else {
        arg.sin()
    }
}

/// Smooth modes of one block, ordered by total degree and, within a degree,
/// by descending index triple.
fn mode_indices(kind: BasisKind) -> Vec<(usize, usize, usize)> {
    let horizontal = match kind {
        BasisKind::Fourier => 2 * MAX_WAVENUMBER,
        _ => MAX_WAVENUMBER,
    };
    let degree = |m: &(usize, usize, usize)| match kind {
        BasisKind::Fourier => harmonic_degree(m.0) + harmonic_degree(m.1) + m.2,
        _ => m.0 + m.1 + m.2,
    };
    let mut modes: Vec<_> = (0..=horizontal)
        .flat_map(|a| (0..=horizontal).flat_map(move |b| (0..=MAX_WAVENUMBER).map(move |c| (a, b, c))))
        .collect();
    modes.sort_by_key(|m| (degree(m), Reverse(*m)));
    modes
}

fn mode_function(kind: BasisKind, m: (usize, usize, usize), lengths: [f64; 3]) -> impl Fn(f64, f64, f64) -> f64 {
    move |x, y, z| {
        let vertical = (PI * m.2 as f64 * z / lengths[2]).cos();
        match kind {
            BasisKind::Fourier => harmonic(m.0, x, lengths[0]) * harmonic(m.1, y, lengths[1]) * vertical,
            _ => (PI * m.0 as f64 * x / lengths[0]).cos() * (PI * m.1 as f64 * y / lengths[1]).cos() * vertical,
        }
    }
}

/// The first `count` Euclidean-orthonormal vectors obtained from cell
/// averages of the smooth modes by Gram-Schmidt; modes the grid cannot
/// resolve (numerically dependent on earlier ones) are skipped.
pub fn smooth_block_basis(kind: BasisKind, geom: &Geometry, rule: QuadratureRule, count: usize) -> Result<Vec<DVector<f64>>> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(count);
    for m in mode_indices(kind) {
        if basis.len() == count {
            break;
        }
        let mut v = DVector::from_vec(geom.cell_average(rule, mode_function(kind, m, geom.lengths))?);
        let original = v.norm();
        if original == 0.0 {
            continue;
        }
        // two passes keep the vectors orthonormal to rounding
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 * original {
            basis.push(v / norm);
        }
    }
    if basis.len() < count {
        return Err(Error::InvalidInput(format!(
            "grid resolves only {} independent modes, {count} requested",
            basis.len()
        )));
    }
    Ok(basis)
}

/// Factor `L` with `P(t0|t−1) = L Lᵀ` over the extended state `(δc, δe)`.
///
/// For the nuclear prior column `i` (1-based) is `e^{−i²/2} e_i`. With the
/// smooth bases odd `i` are concentration modes and even `i` emission modes,
/// each block taking its modes in order; the cell-indicator basis takes unit
/// vectors in extended-index order.
pub fn prior_factor(spec: &PriorSpec, geom: &Geometry, rule: QuadratureRule) -> Result<DMatrix<f64>> {
    let n = geom.cells();
    match *spec {
        PriorSpec::ScaledIdentity { scale } => Ok(DMatrix::identity(2 * n, 2 * n) * scale.sqrt()),
        PriorSpec::Nuclear { basis, terms } => {
            if terms > 2 * n {
                return Err(Error::InvalidInput(format!("{terms} prior terms exceed the state dimension {}", 2 * n)));
            }
            let weight = |i: usize| (-((i * i) as f64) / 2.0).exp();
            let mut l = DMatrix::zeros(2 * n, terms);
            match basis {
                BasisKind::CellIndicator => {
                    for t in 0..terms {
                        l[(t, t)] = weight(t + 1);
                    }
                }
                kind => {
                    let modes = smooth_block_basis(kind, geom, rule, terms.div_ceil(2))?;
                    for t in 0..terms {
                        let offset = if t % 2 == 0 { 0 } else { n };
                        l.view_mut((offset, t), (n, 1)).copy_from(&(&modes[t / 2] * weight(t + 1)));
                    }
                }
            }
            Ok(l)
        }
    }
}
