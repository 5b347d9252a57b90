//! The six-layer convolutional network, its backward pass and the weight file.
//!
//! ```text
//! a1 = relu(K1 * x  + b1)        a4 = relu(K4 * a3 + b4)
//! a2 = relu(K2 * a1 + b2)        s  = a4 + a2
//! a3 = relu(K3 * a2 + b3)        a5 = relu(K5 * s  + b5)
//!                                y  = relu(K6 * a5 + b6)
//! ```
//!
//! All kernels are 3x3x3 with zero same-padding, weights stored `[co][ci][k]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::Reader;
use crate::rng::{RngStream, Stream};

use super::conv::{conv_bias_grad, conv_forward, conv_weight_grad, Packed, Volume};

pub const LAYERS: usize = 6;
pub const MODEL_MAGIC: &[u8; 4] = b"PHKW";
pub const MODEL_VERSION: u32 = 1;

/// Channel counts `[input, l1, .., l6]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelPlan(pub [usize; LAYERS + 1]);

impl ChannelPlan {
    pub const DEFAULT: ChannelPlan = ChannelPlan([1, 16, 32, 32, 32, 16, 1]);
    /// Two channels per hidden layer, for tests.
    pub const TINY: ChannelPlan = ChannelPlan([1, 2, 2, 2, 2, 2, 1]);

    pub fn validate(&self) -> Result<()> {
        let p = self.0;
        if p[0] != 1 || p[LAYERS] != 1 {
            return Err(Error::Shape(format!("plan {p:?} must start and end with one channel")));
        }
        if p.contains(&0) {
            return Err(Error::Shape(format!("plan {p:?} has an empty layer")));
        }
        if p[2] != p[4] {
            return Err(Error::Shape(format!("plan {p:?}: skip connection needs layers 2 and 4 to match")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.0.windows(2).map(|w| 27 * w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub c_out: usize,
    pub c_in: usize,
    /// `[co][ci][27]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self { c_out, c_in, weights: vec![0.0; c_out * c_in * 27], bias: vec![0.0; c_out] }
    }

    #[inline]
    pub fn w(&self, co: usize, ci: usize, k: usize) -> f32 {
        self.weights[(co * self.c_in + ci) * 27 + k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub layers: Vec<ConvLayer>,
}

/// Activations kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Volume,
    /// `[a1, a2, a3, a4, s, a5, y]`.
    pub acts: Vec<Volume>,
}

/// Parameter-shaped container for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `(weights, bias)` per layer, shaped like the model.
    pub layers: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Self {
            layers: model.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f32) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, o)| *a += scale * o);
            b.iter_mut().zip(ob).for_each(|(a, o)| *a += scale * o);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f32> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn max_abs(&self) -> f32 {
        self.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

fn relu_mask(grad: &mut Volume, act: &Volume) {
    for (g, a) in grad.raw_mut().iter_mut().zip(act.raw()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl CnnModel {
    pub fn zeros(plan: ChannelPlan) -> Result<Self> {
        plan.validate()?;
        Ok(Self { layers: (0..LAYERS).map(|l| ConvLayer::zeros(plan.0[l + 1], plan.0[l])).collect() })
    }

    /// Fan-in scaled normal weights (`std = sqrt(2 / (27 c_in))`), zero biases.
    pub fn init(plan: ChannelPlan, rng: &RngStream) -> Result<Self> {
        let mut m = Self::zeros(plan)?;
        for (l, layer) in m.layers.iter_mut().enumerate() {
            let std = (2.0 / (27.0 * layer.c_in as f64)).sqrt();
            let mut cur = rng.cursor(Stream::Init, l as u64, 0);
            for w in &mut layer.weights {
                *w = (std * cur.normal()) as f32;
            }
        }
        Ok(m)
    }

    /// A model that maps non-negative inputs to themselves: a centre tap
    /// routes channel 0 through layers 1, 2, 5 and 6, the middle pair is zero
    /// so the skip connection carries the signal.
    pub fn identity(plan: ChannelPlan) -> Result<Self> {
        let mut m = Self::zeros(plan)?;
        for l in [0, 1, 4, 5] {
            m.layers[l].weights[13] = 1.0;
        }
        Ok(m)
    }

    pub fn plan(&self) -> ChannelPlan {
        let mut p = [0; LAYERS + 1];
        p[0] = self.layers.first().map_or(0, |l| l.c_in);
        for (i, l) in self.layers.iter().enumerate().take(LAYERS) {
            p[i + 1] = l.c_out;
        }
        ChannelPlan(p)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != LAYERS {
            return Err(Error::Shape(format!("model has {} layers, expected {LAYERS}", self.layers.len())));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].c_out != w[1].c_in {
                return Err(Error::Shape(format!("layer {} emits {} channels, layer {} takes {}", i + 1, w[0].c_out, i + 2, w[1].c_in)));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.c_out * l.c_in * 27 || l.bias.len() != l.c_out {
                return Err(Error::Shape(format!("layer {} parameter arrays do not match {}x{}x27", i + 1, l.c_out, l.c_in)));
            }
        }
        self.plan().validate()
    }

    fn check_input(&self, input: &Volume) -> Result<()> {
        self.validate()?;
        if input.channels != 1 {
            return Err(Error::Shape(format!("network input needs 1 channel, got {}", input.channels)));
        }
        if input.dims.iter().any(|d| *d < 3) {
            return Err(Error::Shape(format!("network input needs at least 3 cells per axis, got {:?}", input.dims)));
        }
        Ok(())
    }

    fn conv(&self, l: usize, x: &Volume) -> Volume {
        let layer = &self.layers[l];
        conv_forward(x, &Packed::forward(&layer.weights, layer.c_out, layer.c_in), Some(&layer.bias), true)
    }

    /// Forward pass that frees activations as soon as they are consumed.
    pub fn forward(&self, input: &Volume) -> Result<Volume> {
        self.check_input(input)?;
        let a2 = self.conv(1, &self.conv(0, input));
        let mut s = self.conv(3, &self.conv(2, &a2));
        for (v, k) in s.raw_mut().iter_mut().zip(a2.raw()) {
            *v += k;
        }
        drop(a2);
        Ok(self.conv(5, &self.conv(4, &s)))
    }

    pub fn forward_trace(&self, input: &Volume) -> Result<Trace> {
        self.check_input(input)?;
        let a1 = self.conv(0, input);
        let a2 = self.conv(1, &a1);
        let a3 = self.conv(2, &a2);
        let a4 = self.conv(3, &a3);
        let mut s = a4.clone();
        for (v, k) in s.raw_mut().iter_mut().zip(a2.raw()) {
            *v += k;
        }
        let a5 = self.conv(4, &s);
        let y = self.conv(5, &a5);
        Ok(Trace { input: input.clone(), acts: vec![a1, a2, a3, a4, s, a5, y] })
    }

    /// Mean squared error over voxels and its parameter gradient.
    pub fn backward(&self, input: &Volume, target: &Volume) -> Result<(f64, Gradients)> {
        if target.dims != input.dims || target.channels != 1 {
            return Err(Error::Shape(format!(
                "target {:?}x{} does not match input {:?}",
                target.dims, target.channels, input.dims
            )));
        }
        let trace = self.forward_trace(input)?;
        let y = &trace.acts[6];
        let voxels = input.voxels() as f64;
        let mut loss = 0.0f64;
        let mut dy = Volume::zeros(1, input.dims);
        let scale = (2.0 / voxels) as f32;
        for ((d, p), t) in dy.raw_mut().iter_mut().zip(y.raw()).zip(target.raw()) {
            let r = p - t;
            loss += (r as f64) * (r as f64);
            *d = scale * r;
        }
        loss /= voxels;
        Ok((loss, self.backprop(&trace, dy)))
    }

    /// Reverse pass from the gradient of the loss with respect to the output.
    pub fn backprop(&self, trace: &Trace, dy: Volume) -> Gradients {
        let [a1, a2, a3, a4, s, a5, y] = &trace.acts[..] else { unreachable!() };
        let mut grads = Gradients::zeros_like(self);
        let back = |l: usize, dpre: &Volume| {
            let layer = &self.layers[l];
            conv_forward(dpre, &Packed::transposed(&layer.weights, layer.c_out, layer.c_in), None, false)
        };
        let mut record = |l: usize, dpre: &Volume, input: &Volume| {
            grads.layers[l] = (conv_weight_grad(dpre, input), conv_bias_grad(dpre));
        };
        let mut d6 = dy;
        relu_mask(&mut d6, y);
        record(5, &d6, a5);
        let mut d5 = back(5, &d6);
        relu_mask(&mut d5, a5);
        record(4, &d5, s);
        let ds = back(4, &d5);
        let mut d4 = ds.clone();
        relu_mask(&mut d4, a4);
        record(3, &d4, a3);
        let mut d3 = back(3, &d4);
        relu_mask(&mut d3, a3);
        record(2, &d3, a2);
        let mut d2 = back(2, &d3);
        for (v, k) in d2.raw_mut().iter_mut().zip(ds.raw()) {
            *v += k;
        }
        relu_mask(&mut d2, a2);
        record(1, &d2, a1);
        let mut d1 = back(1, &d2);
        relu_mask(&mut d1, a1);
        record(0, &d1, &trace.input);
        grads
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f32> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_model(model: &CnnModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * model.param_count() + 28 * LAYERS);
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    put_u32(&mut out, model.layers.len() as u32);
    for l in &model.layers {
        for d in [l.c_out, l.c_in, 3, 3, 3] {
            put_u32(&mut out, d as u32);
        }
        for w in &l.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        put_u32(&mut out, l.c_out as u32);
        for b in &l.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<CnnModel> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let count = r.u32()? as usize;
    if count != LAYERS {
        return Err(Error::Format(format!("model file has {count} layers, expected {LAYERS}")));
    }
    let mut layers = Vec::with_capacity(LAYERS);
    for i in 0..LAYERS {
        let shape: Vec<usize> = (0..5).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        if shape[2..] != [3, 3, 3] || shape[0] == 0 || shape[1] == 0 || shape[0] > 4096 || shape[1] > 4096 {
            return Err(Error::Format(format!("layer {} has kernel shape {shape:?}", i + 1)));
        }
        let (c_out, c_in) = (shape[0], shape[1]);
        let weights = r.f32s(c_out * c_in * 27)?;
        let nb = r.u32()? as usize;
        if nb != c_out {
            return Err(Error::Format(format!("layer {} declares {nb} biases for {c_out} channels", i + 1)));
        }
        let bias = r.f32s(c_out)?;
        layers.push(ConvLayer { c_out, c_in, weights, bias });
    }
    r.expect_payload(0)?;
    let model = CnnModel { layers };
    model.validate().map_err(|e| Error::Format(format!("inconsistent model file: {e}")))?;
    if model.params().any(|v| !v.is_finite()) {
        return Err(Error::Format("model file contains non-finite parameters".into()));
    }
    Ok(model)
}

pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    decode_model(&std::fs::read(path)?)
}

/// Load and insist on a particular channel plan.
pub fn load_model_with_plan(path: impl AsRef<Path>, plan: ChannelPlan) -> Result<CnnModel> {
    let m = load_model(path)?;
    check_plan(&m, plan)?;
    Ok(m)
}

pub fn check_plan(model: &CnnModel, plan: ChannelPlan) -> Result<()> {
    let found = model.plan();
    if found != plan {
        return Err(Error::PlanMismatch { expected: plan.0.to_vec(), found: found.0.to_vec() });
    }
    Ok(())
}
