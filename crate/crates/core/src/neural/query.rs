//! Concentration queries through the network on the active sub-box.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ScalarField3, Vec3};
use crate::interp::{batch_query, InterpQuery, Interpolator, Lattice};

use super::conv::Volume;
use super::model::CnnModel;

pub const DEFAULT_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_PAD: usize = 4;

/// Half-open cell ranges `lo[a]..hi[a]` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl ActiveBox {
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a])
    }
}

/// Bounding box of the cells above `threshold * max`, padded by `pad` cells
/// and clipped to the grid. `None` if the field has no positive maximum.
pub fn active_box(conc: &ScalarField3, threshold: f64, pad: usize) -> Option<ActiveBox> {
    let max = conc.max();
    if !(max > 0.0) {
        return None;
    }
    let cut = threshold * max;
    let n = conc.grid.n;
    let (lo, hi) = conc
        .values
        .par_iter()
        .enumerate()
        .filter(|(_, v)| **v > cut)
        .map(|(i, _)| {
            let c = conc.grid.unravel(i);
            (c, c)
        })
        .reduce(
            || ([usize::MAX; 3], [0; 3]),
            |(alo, ahi), (blo, bhi)| ([0, 1, 2].map(|a| alo[a].min(blo[a])), [0, 1, 2].map(|a| ahi[a].max(bhi[a]))),
        );
    if lo[0] == usize::MAX {
        return None;
    }
    Some(ActiveBox {
        lo: lo.map(|l| l.saturating_sub(pad)),
        hi: hi.map(|h| (h + 1 + pad).min(n)),
    })
}

/// The network output on an active box, rescaled to concentration units,
/// with its central-difference gradient.
#[derive(Debug, Clone)]
pub struct Refined {
    pub active: ActiveBox,
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub gradients: [Vec<f64>; 3],
}

impl Refined {
    pub fn eval(&self, x: &Vec3) -> (f64, Vec3) {
        let v = self.lattice.eval(&self.values, x).0;
        let g = [0, 1, 2].map(|a| self.lattice.eval(&self.gradients[a], x).0);
        (v, g)
    }
}

/// Central differences with spacing `h`, one-sided on the box faces.
fn central_gradient(values: &[f64], dims: [usize; 3], h: f64) -> [Vec<f64>; 3] {
    let [_, ny, nz] = dims;
    let idx = |c: [usize; 3]| (c[0] * ny + c[1]) * nz + c[2];
    let axis = |a: usize| -> Vec<f64> {
        (0..values.len())
            .into_par_iter()
            .map(|i| {
                let c = [i / (ny * nz), (i / nz) % ny, i % nz];
                let n = dims[a];
                let (mut lo, mut hi) = (c, c);
                lo[a] = c[a].saturating_sub(1);
                hi[a] = (c[a] + 1).min(n - 1);
                (values[idx(hi)] - values[idx(lo)]) / ((hi[a] - lo[a]) as f64 * h)
            })
            .collect()
    };
    [axis(0), axis(1), axis(2)]
}

/// Run the network once on the active box of `conc`. The box is scaled by the
/// field maximum on the way in and back out. `None` when the field is zero or
/// the box is thinner than 3 cells on some axis.
pub fn refine(model: &CnnModel, conc: &ScalarField3, threshold: f64, pad: usize) -> Result<Option<Refined>> {
    let Some(active) = active_box(conc, threshold, pad) else {
        return Ok(None);
    };
    let dims = active.dims();
    if dims.iter().any(|d| *d < 3) {
        log::warn!("active box {dims:?} is degenerate; using trilinear interpolation");
        return Ok(None);
    }
    let max = conc.max();
    let scale = 1.0 / max;
    let mut dense = Vec::with_capacity(dims.iter().product());
    for x in active.lo[0]..active.hi[0] {
        for y in active.lo[1]..active.hi[1] {
            for z in active.lo[2]..active.hi[2] {
                dense.push((conc.at(x, y, z) * scale) as f32);
            }
        }
    }
    let out = model.forward(&Volume::from_dense(1, dims, &dense))?;
    let values: Vec<f64> = out.to_dense().into_iter().map(|v| v as f64 * max).collect();
    let h = conc.grid.h();
    let origin = conc.grid.cell_center(active.lo[0], active.lo[1], active.lo[2]);
    let gradients = central_gradient(&values, dims, h);
    Ok(Some(Refined { active, lattice: Lattice { origin, h, dims }, values, gradients }))
}

/// Values and gradients of `conc` at `points` through the network. Points
/// outside the refined box, and every point when no box can be formed, use
/// trilinear interpolation of the raw field.
pub fn neural_query(
    model: &CnnModel,
    conc: &ScalarField3,
    points: &[Vec3],
    threshold: f64,
    pad: usize,
) -> Result<InterpQuery> {
    if let Some(i) = points.iter().position(|x| !conc.grid.contains(x)) {
        return Err(Error::OutsideDomain { index: i, position: points[i], extent: conc.grid.extent });
    }
    let Some(refined) = refine(model, conc, threshold, pad)? else {
        return batch_query(conc, points);
    };
    let raw = Lattice::of_field(conc);
    let (values, gradients) = points
        .par_iter()
        .map(|x| if refined.lattice.covers(x) { refined.eval(x) } else { raw.eval(&conc.values, x) })
        .unzip();
    Ok(InterpQuery { values, gradients })
}

/// [`Interpolator`] backed by a trained network.
#[derive(Debug, Clone)]
pub struct NeuralInterpolator {
    pub model: CnnModel,
    pub threshold: f64,
    pub pad: usize,
}

impl NeuralInterpolator {
    pub fn new(model: CnnModel) -> Result<Self> {
        model.validate()?;
        Ok(Self { model, threshold: DEFAULT_THRESHOLD, pad: DEFAULT_PAD })
    }
}

impl Interpolator for NeuralInterpolator {
    fn name(&self) -> &str {
        "neural"
    }

    fn query(&self, field: &ScalarField3, points: &[Vec3]) -> Result<InterpQuery> {
        neural_query(&self.model, field, points, self.threshold, self.pad)
    }
}
