//! Interpolation of cell-centred fields and the interface the particle engine
//! uses to obtain drift gradients.
//!
//! The classical interpolant is the piecewise trilinear blend of the eight
//! surrounding cell centres. Its gradient is the exact derivative of that
//! blend. Outside the hull of cell centres positions are clamped onto the
//! hull for values, while gradients keep the slope of the outermost cell.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ScalarField3, Vec3};

/// Values and gradients of an interpolant at a batch of points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterpQuery {
    pub values: Vec<f64>,
    pub gradients: Vec<Vec3>,
}

/// Anything that turns a grid concentration into an everywhere
/// differentiable surrogate and evaluates it at particle positions.
pub trait Interpolator: Sync {
    fn name(&self) -> &str;
    fn query(&self, field: &ScalarField3, points: &[Vec3]) -> Result<InterpQuery>;
}

/// A regular lattice of sample nodes: node `(i, j, k)` sits at
/// `origin + h (i, j, k)`, values stored z-fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub origin: Vec3,
    pub h: f64,
    pub dims: [usize; 3],
}

impl Lattice {
    /// The cell-centre lattice of a field.
    pub fn of_field(field: &ScalarField3) -> Self {
        let h = field.grid.h();
        let n = field.grid.n;
        Self { origin: [0.5 * h; 3], h, dims: [n; 3] }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True if `x` lies in the closed hull of the nodes.
    pub fn covers(&self, x: &Vec3) -> bool {
        (0..3).all(|a| {
            let s = (x[a] - self.origin[a]) / self.h;
            s >= 0.0 && s <= (self.dims[a] - 1) as f64
        })
    }

    #[inline]
    fn locate(&self, x: f64, axis: usize) -> (usize, f64) {
        let top = (self.dims[axis] - 1) as f64;
        let mut s = ((x - self.origin[axis]) / self.h).clamp(0.0, top);
        // absorb the rounding of (x - origin) / h so nodes are hit exactly
        let r = s.round();
        if (s - r).abs() <= 8.0 * f64::EPSILON * r.max(1.0) {
            s = r;
        }
        let i = (s.floor() as usize).min(self.dims[axis] - 2);
        (i, s - i as f64)
    }

    /// Trilinear value and its analytic gradient at `x`.
    #[inline]
    pub fn eval(&self, values: &[f64], x: &Vec3) -> (f64, Vec3) {
        let (i, tx) = self.locate(x[0], 0);
        let (j, ty) = self.locate(x[1], 1);
        let (k, tz) = self.locate(x[2], 2);
        let [_, ny, nz] = self.dims;
        let at = |a: usize, b: usize, c: usize| values[((i + a) * ny + j + b) * nz + k + c];
        let (c000, c001, c010, c011) = (at(0, 0, 0), at(0, 0, 1), at(0, 1, 0), at(0, 1, 1));
        let (c100, c101, c110, c111) = (at(1, 0, 0), at(1, 0, 1), at(1, 1, 0), at(1, 1, 1));
        // blend along z, then y, then x
        // anchored on the nearer node: exact at t = 0 and t = 1, and exact for
        // equal end values
        let lerp = |a: f64, b: f64, t: f64| if t < 0.5 { a + t * (b - a) } else { b - (1.0 - t) * (b - a) };
        let c00 = lerp(c000, c001, tz);
        let c01 = lerp(c010, c011, tz);
        let c10 = lerp(c100, c101, tz);
        let c11 = lerp(c110, c111, tz);
        let c0 = lerp(c00, c01, ty);
        let c1 = lerp(c10, c11, ty);
        let value = lerp(c0, c1, tx);
        let inv_h = 1.0 / self.h;
        let gx = (c1 - c0) * inv_h;
        let gy = ((1.0 - tx) * (c01 - c00) + tx * (c11 - c10)) * inv_h;
        let dz0 = (1.0 - ty) * (c001 - c000) + ty * (c011 - c010);
        let dz1 = (1.0 - ty) * (c101 - c100) + ty * (c111 - c110);
        let gz = ((1.0 - tx) * dz0 + tx * dz1) * inv_h;
        (value, [gx, gy, gz])
    }
}

pub fn interp_value(field: &ScalarField3, x: &Vec3) -> f64 {
    Lattice::of_field(field).eval(&field.values, x).0
}

pub fn interp_gradient(field: &ScalarField3, x: &Vec3) -> Vec3 {
    Lattice::of_field(field).eval(&field.values, x).1
}

/// Evaluate a lattice interpolant at many points in parallel.
pub fn lattice_query(lattice: &Lattice, values: &[f64], points: &[Vec3]) -> InterpQuery {
    let (values, gradients) = points.par_iter().map(|x| lattice.eval(values, x)).unzip();
    InterpQuery { values, gradients }
}

pub fn batch_query(field: &ScalarField3, points: &[Vec3]) -> Result<InterpQuery> {
    let extent = field.grid.extent;
    if let Some(i) = points.iter().position(|x| !field.grid.contains(x)) {
        return Err(Error::OutsideDomain { index: i, position: points[i], extent });
    }
    Ok(lattice_query(&Lattice::of_field(field), &field.values, points))
}

/// The classical trilinear interpolator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Trilinear;

impl Interpolator for Trilinear {
    fn name(&self) -> &str {
        "trilinear"
    }

    fn query(&self, field: &ScalarField3, points: &[Vec3]) -> Result<InterpQuery> {
        batch_query(field, points)
    }
}
