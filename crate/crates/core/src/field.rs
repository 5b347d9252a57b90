//! Uniform cubic grids and cell-centred scalar fields.
//!
//! The domain is `[0, L]^3` split into `n` cells per axis. Cell `i` covers
//! `[i h, (i + 1) h)` per axis with `h = L / n`; samples live at cell centres.
//! Values are stored z-fastest: `index = (ix * n + iy) * n + iz`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub extent: f64,
    pub n: usize,
}

impl Grid3 {
    pub fn new(extent: f64, n: usize) -> Result<Self> {
        let grid = Self { extent, n };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidParams(format!(
                "grid needs at least 4 cells per axis, got {}",
                self.n
            )));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::InvalidParams(format!(
                "grid extent must be positive and finite, got {}",
                self.extent
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.extent / self.n as f64
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        let h = self.h();
        h * h * h
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let h = self.h();
        [
            (ix as f64 + 0.5) * h,
            (iy as f64 + 0.5) * h,
            (iz as f64 + 0.5) * h,
        ]
    }

    /// Cell index of a coordinate along one axis. Cells are right-open; the
    /// top boundary `x = L` folds into the last cell.
    #[inline]
    pub fn axis_cell(&self, x: f64) -> usize {
        let i = (x / self.h()).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n - 1)
        }
    }

    #[inline]
    pub fn contains(&self, x: &Vec3) -> bool {
        x.iter().all(|&c| (0.0..=self.extent).contains(&c))
    }

    /// Flat cell index of a point, or `None` if it lies outside the closed domain.
    #[inline]
    pub fn locate(&self, x: &Vec3) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(self.index(
            self.axis_cell(x[0]),
            self.axis_cell(x[1]),
            self.axis_cell(x[2]),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField3 {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl ScalarField3 {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field on a {n}^3 grid needs {} values, got {}",
                grid.len(),
                values.len(),
                n = grid.n
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "field value at index {i} is not finite"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid3, f: impl Fn(Vec3) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let n = grid.n;
        let mut values = vec![0.0; grid.len()];
        values
            .par_chunks_mut(n * n)
            .enumerate()
            .for_each(|(ix, plane)| {
                for iy in 0..n {
                    for iz in 0..n {
                        plane[iy * n + iz] = f(grid.cell_center(ix, iy, iz));
                    }
                }
            });
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.grid.index(ix, iy, iz)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Riemann sum `sum(values) * h^3`.
    pub fn integral(&self) -> f64 {
        self.sum() * self.grid.cell_volume()
    }

    pub fn argmax(&self) -> [usize; 3] {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.grid.unravel(best)
    }

    pub fn same_grid(&self, other: &ScalarField3) -> bool {
        self.grid == other.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_tiny_or_bad_extent() {
        assert!(Grid3::new(100.0, 3).is_err());
        assert!(Grid3::new(0.0, 10).is_err());
        assert!(Grid3::new(f64::NAN, 10).is_err());
        let g = Grid3::new(100.0, 50).unwrap();
        assert_eq!(g.h(), 2.0);
    }

    #[test]
    fn layout_is_z_fastest() {
        let g = Grid3::new(1.0, 5).unwrap();
        assert_eq!(g.index(0, 0, 1), 1);
        assert_eq!(g.index(0, 1, 0), 5);
        assert_eq!(g.index(1, 0, 0), 25);
        for idx in [0, 7, 33, 124] {
            let [a, b, c] = g.unravel(idx);
            assert_eq!(g.index(a, b, c), idx);
        }
    }

    #[test]
    fn top_boundary_folds_into_last_cell() {
        let g = Grid3::new(10.0, 10).unwrap();
        assert_eq!(g.axis_cell(10.0), 9);
        assert_eq!(g.axis_cell(0.0), 0);
        assert_eq!(g.axis_cell(3.0), 3);
        assert_eq!(g.axis_cell(2.999_999), 2);
        assert!(g.locate(&[10.0, 0.0, 5.0]).is_some());
        assert!(g.locate(&[10.000_001, 0.0, 5.0]).is_none());
    }

    #[test]
    fn field_constructor_checks_length_and_finiteness() {
        let g = Grid3::new(1.0, 4).unwrap();
        assert!(ScalarField3::new(g, vec![0.0; 63]).is_err());
        let mut v = vec![0.0; 64];
        v[10] = f64::INFINITY;
        assert!(ScalarField3::new(g, v).is_err());
        assert!(ScalarField3::new(g, vec![1.0; 64]).is_ok());
    }
}
