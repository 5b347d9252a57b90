//! Helpers shared by the integration tests.
#![allow(dead_code)]

use phks_core::neural::conv::Volume;
use phks_core::neural::model::{ChannelPlan, CnnModel};
use phks_core::rng::{RngStream, Stream};

/// Loss and the sign pattern of every pre-activation, from a direct f64
/// evaluation of the network with parameters `params` (model order).
pub fn naive_loss(plan: ChannelPlan, params: &[f64], input: &[f64], target: &[f64], dims: [usize; 3]) -> (f64, Vec<bool>) {
    let [nx, ny, nz] = dims;
    let vox = nx * ny * nz;
    let p = plan.0;
    let mut offset = 0;
    let mut layer_params = Vec::new();
    for l in 0..6 {
        let (ci, co) = (p[l], p[l + 1]);
        let w = &params[offset..offset + co * ci * 27];
        offset += co * ci * 27;
        let b = &params[offset..offset + co];
        offset += co;
        layer_params.push((ci, co, w, b));
    }
    let mut signs = Vec::new();
    let mut conv = |x: &[f64], l: usize| -> Vec<f64> {
        let (ci, co, w, b) = layer_params[l];
        let mut out = vec![0.0; co * vox];
        for o in 0..co {
            for ix in 0..nx {
                for iy in 0..ny {
                    for iz in 0..nz {
                        let mut s = b[o];
                        for i in 0..ci {
                            for k in 0..27 {
                                let (a, bb, c) = (ix + k / 9, iy + (k / 3) % 3, iz + k % 3);
                                if a == 0 || bb == 0 || c == 0 || a > nx || bb > ny || c > nz {
                                    continue;
                                }
                                let idx = ((i * nx + a - 1) * ny + bb - 1) * nz + c - 1;
                                s += w[(o * ci + i) * 27 + k] * x[idx];
                            }
                        }
                        signs.push(s > 0.0);
                        out[((o * nx + ix) * ny + iy) * nz + iz] = s.max(0.0);
                    }
                }
            }
        }
        out
    };
    let a1 = conv(input, 0);
    let a2 = conv(&a1, 1);
    let a3 = conv(&a2, 2);
    let a4 = conv(&a3, 3);
    let s: Vec<f64> = a4.iter().zip(&a2).map(|(a, b)| a + b).collect();
    let a5 = conv(&s, 4);
    let y = conv(&a5, 5);
    let loss = y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / vox as f64;
    (loss, signs)
}

/// A tiny model with normal weights and biases skewed positive so most
/// units are active.
pub fn random_tiny_model(seed: u64) -> CnnModel {
    let rng = RngStream::new(seed);
    let mut m = CnnModel::init(ChannelPlan::TINY, &rng).unwrap();
    for (l, layer) in m.layers.iter_mut().enumerate() {
        for (i, b) in layer.bias.iter_mut().enumerate() {
            *b = 0.05 + 0.25 * rng.uniform(Stream::Init, 50 + l as u64, i as u64, 0) as f32;
        }
    }
    m
}

pub fn uniform_patch(dims: [usize; 3], seed: u64, lane: u64) -> Vec<f32> {
    let r = RngStream::new(seed);
    let n: usize = dims.iter().product();
    (0..n as u64).map(|i| r.uniform(Stream::Sample, lane, i, 0) as f32).collect()
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub compared: usize,
    pub below_threshold: usize,
    pub kinks: usize,
    pub failures: Vec<(usize, f64, f64)>,
    pub worst_rel: f64,
}

/// Compare the analytic gradient of `model` with central differences of the
/// f64 reference loss, step `eps`, relative tolerance `tol` where the
/// gradient exceeds `floor`.
pub fn gradient_check(model: &CnnModel, dims: [usize; 3], seed: u64, eps: f64, tol: f64, floor: f64) -> GradCheck {
    let x = uniform_patch(dims, seed, 1);
    let t = uniform_patch(dims, seed, 2);
    let input = Volume::from_dense(1, dims, &x);
    let target = Volume::from_dense(1, dims, &t);
    let (_, grads) = model.backward(&input, &target).unwrap();
    let analytic: Vec<f64> = grads.iter().map(|v| *v as f64).collect();
    let plan = model.plan();
    let base: Vec<f64> = model.params().map(|v| *v as f64).collect();
    let xf: Vec<f64> = x.iter().map(|v| *v as f64).collect();
    let tf: Vec<f64> = t.iter().map(|v| *v as f64).collect();
    let mut report = GradCheck::default();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        let (lp, sp) = naive_loss(plan, &p, &xf, &tf, dims);
        p[i] = base[i] - eps;
        let (lm, sm) = naive_loss(plan, &p, &xf, &tf, dims);
        let fd = (lp - lm) / (2.0 * eps);
        let a = analytic[i];
        if sp != sm {
            // a unit switches on or off inside [-eps, eps]: differences are not a derivative there
            let scale = fd.abs().max(a.abs());
            if scale > floor && (a - fd).abs() / scale > tol {
                report.kinks += 1;
                continue;
            }
        }
        let scale = fd.abs().max(a.abs());
        if scale <= floor {
            report.below_threshold += 1;
            continue;
        }
        report.compared += 1;
        let rel = (a - fd).abs() / scale;
        report.worst_rel = report.worst_rel.max(rel);
        if rel > tol {
            report.failures.push((i, a, fd));
        }
    }
    report
}
