use super::config::{AdvDiffConfig, QuadratureRule};
use crate::error::{Error, Result};

/// Cell layout of the discretized box. Horizontal cells are `Lx/nx × Ly/ny`
/// with centres at `(i + ½)Δx`; vertical layers sit at `z_k = kΔz` with
/// `Δz = Lz/(nz − 1)` and own `[z_k − Δz/2, z_k + Δz/2] ∩ [0, Lz]`, so the two
/// boundary layers are half as thick. Index `i + nx(j + ny k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lengths: [f64; 3],
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Geometry {
    pub fn new(cfg: &AdvDiffConfig) -> Result<Self> {
        if cfg.nx == 0 || cfg.ny == 0 || cfg.nz < 2 {
            return Err(Error::InvalidInput("need nx, ny ≥ 1 and nz ≥ 2".into()));
        }
        let [lx, ly, lz] = cfg.domain;
        Ok(Geometry {
            nx: cfg.nx,
            ny: cfg.ny,
            nz: cfg.nz,
            lengths: cfg.domain,
            dx: lx / cfg.nx as f64,
            dy: ly / cfg.ny as f64,
            dz: lz / (cfg.nz - 1) as f64,
        })
    }

    /// Cells per horizontal plane.
    pub fn plane(&self) -> usize {
        self.nx * self.ny
    }

    /// Cells in the concentration (or emission) block.
    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        (idx % self.nx, (idx / self.nx) % self.ny, idx / self.plane())
    }

    pub fn x_bounds(&self, i: usize) -> (f64, f64) {
        (i as f64 * self.dx, (i + 1) as f64 * self.dx)
    }

    pub fn y_bounds(&self, j: usize) -> (f64, f64) {
        (j as f64 * self.dy, (j + 1) as f64 * self.dy)
    }

    pub fn z_bounds(&self, k: usize) -> (f64, f64) {
        let z = k as f64 * self.dz;
        ((z - 0.5 * self.dz).max(0.0), (z + 0.5 * self.dz).min(self.lengths[2]))
    }

    pub fn layer_height(&self, k: usize) -> f64 {
        k as f64 * self.dz
    }

    pub fn layer_thickness(&self, k: usize) -> f64 {
        let (lo, hi) = self.z_bounds(k);
        hi - lo
    }

    pub fn center(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.coords(idx);
        [(i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy, self.layer_height(k)]
    }

    pub fn volume(&self, idx: usize) -> f64 {
        self.dx * self.dy * self.layer_thickness(self.coords(idx).2)
    }

    /// `Σ V_i c_i` over one block.
    pub fn mass(&self, field: &[f64]) -> f64 {
        field.iter().enumerate().map(|(idx, c)| self.volume(idx) * c).sum()
    }

    /// Cell means `(1/V_i) ∫_{Ω_i} f` by a tensor rule on every cell.
    pub fn cell_average<F: Fn(f64, f64, f64) -> f64>(&self, rule: QuadratureRule, f: F) -> Result<Vec<f64>> {
        let unit = rule.unit_rule()?;
        let mut out = Vec::with_capacity(self.cells());
        for idx in 0..self.cells() {
            let (i, j, k) = self.coords(idx);
            let bounds = [self.x_bounds(i), self.y_bounds(j), self.z_bounds(k)];
            let mut acc = 0.0;
            for &(ux, wx) in &unit {
                let x = bounds[0].0 + ux * (bounds[0].1 - bounds[0].0);
                for &(uy, wy) in &unit {
                    let y = bounds[1].0 + uy * (bounds[1].1 - bounds[1].0);
                    for &(uz, wz) in &unit {
                        let z = bounds[2].0 + uz * (bounds[2].1 - bounds[2].0);
                        acc += wx * wy * wz * f(x, y, z);
                    }
                }
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Horizontal cell means `(1/(ΔxΔy)) ∫ f dx dy`, one per plane cell.
    pub fn plane_average<F: Fn(f64, f64) -> f64>(&self, rule: QuadratureRule, f: F) -> Result<Vec<f64>> {
        let unit = rule.unit_rule()?;
        let mut out = Vec::with_capacity(self.plane());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (x0, y0) = (i as f64 * self.dx, j as f64 * self.dy);
                let mut acc = 0.0;
                for &(ux, wx) in &unit {
                    for &(uy, wy) in &unit {
                        acc += wx * wy * f(x0 + ux * self.dx, y0 + uy * self.dy);
                    }
                }
                out.push(acc);
            }
        }
        Ok(out)
    }
}

/// `(P_n f)_i`: the cell-average projection of a continuous field onto the
/// grid of `cfg`, using its quadrature rule.
pub fn cell_average_projection<F: Fn(f64, f64, f64) -> f64>(f: F, cfg: &AdvDiffConfig) -> Result<Vec<f64>> {
    Geometry::new(cfg)?.cell_average(cfg.quadrature, f)
}

/// Length of `[a, b] ∩ [c, d]` with `[a, b]` wrapped onto a circle of
/// circumference `period` (requires `b − a ≤ period`).
pub(crate) fn periodic_overlap(a: f64, b: f64, c: f64, d: f64, period: f64) -> f64 {
    (-1..=1)
        .map(|m| {
            let shift = m as f64 * period;
            ((b + shift).min(d) - (a + shift).max(c)).max(0.0)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(nx: usize, ny: usize, nz: usize) -> AdvDiffConfig {
        AdvDiffConfig { nx, ny, nz, ..AdvDiffConfig::default() }
    }

    #[test]
    fn layers_have_half_cells_at_the_boundary() {
        let g = Geometry::new(&cfg(4, 3, 3)).unwrap();
        let thickness: Vec<f64> = (0..3).map(|k| g.layer_thickness(k)).collect();
        assert_eq!(thickness, vec![0.25, 0.5, 0.25]);
        assert_eq!(g.center(g.index(1, 2, 1)), [1.875, 25.0 / 6.0, 0.5]);
        let total: f64 = (0..g.cells()).map(|i| g.volume(i)).sum();
        assert!((total - 25.0).abs() < 1e-12);
        for idx in 0..g.cells() {
            let (i, j, k) = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn constants_and_linear_fields_are_reproduced() {
        let c = cfg(5, 4, 3);
        let g = Geometry::new(&c).unwrap();
        assert!(cell_average_projection(|_, _, _| 2.5, &c).unwrap().iter().all(|&v| (v - 2.5).abs() < 1e-14));
        let avg = cell_average_projection(|x, y, _| 3.0 * x - y + 1.0, &c).unwrap();
        for (idx, v) in avg.iter().enumerate() {
            let [x, y, _] = g.center(idx);
            assert!((v - (3.0 * x - y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_cell_averages_match_closed_form() {
        let mut c = cfg(10, 10, 3);
        c.quadrature = QuadratureRule::GaussLegendre { points: 5 };
        let g = Geometry::new(&c).unwrap();
        let k = std::f64::consts::TAU / 5.0;
        let avg = cell_average_projection(|x, _, _| (k * x).sin(), &c).unwrap();
        for (idx, v) in avg.iter().enumerate() {
            let (x0, x1) = g.x_bounds(g.coords(idx).0);
            let exact = ((k * x0).cos() - (k * x1).cos()) / (k * g.dx);
            assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
        }
    }

    #[test]
    fn wrapped_overlaps() {
        assert_eq!(periodic_overlap(-0.5, 0.5, 0.0, 1.0, 5.0), 0.5);
        assert_eq!(periodic_overlap(-0.5, 0.5, 4.0, 5.0, 5.0), 0.5);
        assert_eq!(periodic_overlap(1.0, 2.0, 3.0, 4.0, 5.0), 0.0);
        assert_eq!(periodic_overlap(0.0, 5.0, 2.0, 3.0, 5.0), 1.0);
    }
}
