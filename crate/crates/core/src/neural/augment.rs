//! Training patches and the degradations applied to their inputs.

use crate::error::{Error, Result};
use crate::rng::RngCursor;

use super::conv::Volume;

/// A single-channel dense block, z-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

impl Patch {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!("patch {dims:?} needs {} values, got {}", dims.iter().product::<usize>(), data.len())));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_volume(&self) -> Volume {
        Volume::from_dense(1, self.dims, &self.data)
    }
}

/// A degraded input and the clean patch it should be restored to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPatch {
    pub input: Patch,
    pub target: Patch,
}

/// Average 2x2x2 blocks, then copy each average back over its block.
pub fn downsample_upsample(p: &Patch) -> Result<Patch> {
    if p.dims.iter().any(|d| d % 2 != 0) {
        return Err(Error::Shape(format!("patch {:?} is not divisible by 2", p.dims)));
    }
    let [nx, ny, nz] = p.dims;
    let mut out = p.clone();
    for bx in (0..nx).step_by(2) {
        for by in (0..ny).step_by(2) {
            for bz in (0..nz).step_by(2) {
                let mut s = 0.0f64;
                for d in 0..8 {
                    s += p.data[p.idx(bx + d / 4, by + (d / 2) % 2, bz + d % 2)] as f64;
                }
                let avg = (s / 8.0) as f32;
                for d in 0..8 {
                    let i = p.idx(bx + d / 4, by + (d / 2) % 2, bz + d % 2);
                    out.data[i] = avg;
                }
            }
        }
    }
    Ok(out)
}

/// Circular shift by `shift` cells per axis.
pub fn circular_shift(p: &Patch, shift: [i64; 3]) -> Patch {
    let [nx, ny, nz] = p.dims;
    let wrap = |i: usize, s: i64, n: usize| (i as i64 - s).rem_euclid(n as i64) as usize;
    let mut out = p.clone();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let i = out.idx(x, y, z);
                out.data[i] = p.data[p.idx(wrap(x, shift[0], nx), wrap(y, shift[1], ny), wrap(z, shift[2], nz))];
            }
        }
    }
    out
}

/// Normalised 5-tap Gaussian weights for offsets -2..=2.
pub fn blur_kernel(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *w = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|w| w / s)
}

/// Separable Gaussian blur with circular padding.
pub fn gaussian_blur(p: &Patch, sigma: f64) -> Patch {
    let k = blur_kernel(sigma);
    let mut cur: Vec<f64> = p.data.iter().map(|v| *v as f64).collect();
    let dims = p.dims;
    for axis in 0..3 {
        let mut next = vec![0.0; cur.len()];
        let n = dims[axis];
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    let c = [x, y, z];
                    let mut s = 0.0;
                    for (t, w) in k.iter().enumerate() {
                        let mut q = c;
                        q[axis] = (c[axis] as i64 + t as i64 - 2).rem_euclid(n as i64) as usize;
                        s += w * cur[(q[0] * dims[1] + q[1]) * dims[2] + q[2]];
                    }
                    next[(x * dims[1] + y) * dims[2] + z] = s;
                }
            }
        }
        cur = next;
    }
    Patch { dims, data: cur.into_iter().map(|v| v as f32).collect() }
}

/// Degrade `clean` by an independent coin flip per operation: 2x
/// down/up-sampling, a circular shift of at most 2 cells per axis, a blur with
/// `sigma` uniform in `[0.5, 1.5]`, applied in that order.
pub fn augment_patch(clean: &Patch, rng: &mut RngCursor) -> Result<TrainingPatch> {
    if clean.dims.iter().any(|d| d % 2 != 0) {
        return Err(Error::Shape(format!("patch {:?} is not divisible by 2", clean.dims)));
    }
    let mut input = clean.clone();
    if rng.coin() {
        input = downsample_upsample(&input)?;
    }
    if rng.coin() {
        let s = [0; 3].map(|_| rng.range_inclusive(-2, 2));
        input = circular_shift(&input, s);
    }
    if rng.coin() {
        let sigma = 0.5 + rng.uniform();
        input = gaussian_blur(&input, sigma);
    }
    Ok(TrainingPatch { input, target: clean.clone() })
}
