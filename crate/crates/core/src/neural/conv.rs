//! 3x3x3 same-padded convolutions in 32-bit floats.
//!
//! Activations live in [`Volume`]s: every channel is stored with a one-cell
//! zero halo, `(X + 2)(Y + 2)(Z + 2)` floats, z-fastest; the whole buffer has
//! a little slack on both ends so that vector loads may run past the last
//! voxel. Within one x-plane the interior voxels `(y, 1..=Z)` of consecutive
//! rows form a contiguous run interrupted only by two halo cells, so the
//! kernels sweep contiguous index ranges, write the halo cells too and zero
//! them afterwards.
//!
//! An AVX-512 path is chosen at run time when the CPU supports it; otherwise
//! a portable scalar path computes the same sums in the same order (apart
//! from fused multiply-add rounding).

use rayon::prelude::*;

/// Floats of padding before and after the voxel data.
pub const SLACK: usize = 64;
/// Rows of one x-plane handled per task; sized so a task's input stays in L2.
const TILE_ROWS: usize = 16;
/// Input channels per pass over a tile; keeps one weight block in L1.
const CI_GROUP: usize = 16;
/// Voxels per chunk of the weight-gradient sweep.
const Q_TILE: usize = 1024;
/// Input channels per weight-gradient task.
const WG_CI: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub channels: usize,
    pub dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        let mut v = Self { channels, dims, data: Vec::new() };
        v.data = vec![0.0; 2 * SLACK + channels * v.channel_len()];
        v
    }

    /// Build from unpadded z-fastest data laid out `[channel][x][y][z]`.
    pub fn from_dense(channels: usize, dims: [usize; 3], dense: &[f32]) -> Self {
        let mut v = Self::zeros(channels, dims);
        let [x, y, z] = dims;
        assert_eq!(dense.len(), channels * x * y * z, "dense buffer size");
        for c in 0..channels {
            for ix in 0..x {
                for iy in 0..y {
                    let src = ((c * x + ix) * y + iy) * z;
                    let dst = v.offset(c, ix, iy, 0);
                    v.data[dst..dst + z].copy_from_slice(&dense[src..src + z]);
                }
            }
        }
        v
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let [x, y, z] = self.dims;
        let mut out = Vec::with_capacity(self.channels * x * y * z);
        for c in 0..self.channels {
            for ix in 0..x {
                for iy in 0..y {
                    let s = self.offset(c, ix, iy, 0);
                    out.extend_from_slice(&self.data[s..s + z]);
                }
            }
        }
        out
    }

    #[inline]
    pub fn padded(&self) -> [usize; 3] {
        self.dims.map(|d| d + 2)
    }

    #[inline]
    pub fn channel_len(&self) -> usize {
        self.padded().iter().product()
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Buffer index of interior voxel `(x, y, z)` (0-based, unpadded) of channel `c`.
    #[inline]
    pub fn offset(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        let [_, py, pz] = self.padded();
        SLACK + c * self.channel_len() + ((x + 1) * py + y + 1) * pz + z + 1
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.offset(c, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: f32) {
        let i = self.offset(c, x, y, z);
        self.data[i] = v;
    }

    /// The padded data of one channel, halo included.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.channel_len();
        &self.data[SLACK + c * n..SLACK + (c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.channel_len();
        &mut self.data[SLACK + c * n..SLACK + (c + 1) * n]
    }

    /// All channels, halos included, without the slack.
    pub fn raw(&self) -> &[f32] {
        &self.data[SLACK..self.data.len() - SLACK]
    }

    pub fn raw_mut(&mut self) -> &mut [f32] {
        let n = self.data.len();
        &mut self.data[SLACK..n - SLACK]
    }

    /// Iterate interior voxels over all channels.
    pub fn interior(&self) -> impl Iterator<Item = f32> + '_ {
        let [x, y, z] = self.dims;
        (0..self.channels).flat_map(move |c| {
            (0..x).flat_map(move |ix| (0..y).flat_map(move |iy| (0..z).map(move |iz| self.get(c, ix, iy, iz))))
        })
    }

    /// Relative offsets of the 27 stencil neighbours, `k = (kx * 3 + ky) * 3 + kz`.
    pub fn stencil(&self) -> [isize; 27] {
        let [_, py, pz] = self.padded();
        let mut off = [0isize; 27];
        for kx in 0..3 {
            for ky in 0..3 {
                for kz in 0..3 {
                    off[(kx * 3 + ky) * 3 + kz] =
                        (kx as isize - 1) * (py * pz) as isize + (ky as isize - 1) * pz as isize + kz as isize - 1;
                }
            }
        }
        off
    }

    fn ptr(&self) -> *const f32 {
        // SAFETY: SLACK < data.len()
        unsafe { self.data.as_ptr().add(SLACK) }
    }

    fn mut_ptr(&mut self) -> *mut f32 {
        // SAFETY: SLACK < data.len()
        unsafe { self.data.as_mut_ptr().add(SLACK) }
    }
}

/// Convolution weights rearranged for the kernels: output channels in blocks
/// of up to 8, each block stored `[ci][k][b]`.
#[derive(Debug, Clone)]
pub struct Packed {
    pub c_out: usize,
    pub c_in: usize,
    blocks: Vec<(usize, usize, usize)>, // (first output channel, width, data offset)
    data: Vec<f32>,
}

fn split_blocks(c: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for w in [8, 4, 2, 1] {
        while c - start >= w {
            out.push((start, w));
            start += w;
        }
    }
    out
}

impl Packed {
    fn build(c_out: usize, c_in: usize, w: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut blocks = Vec::new();
        let mut data = Vec::with_capacity(c_out * c_in * 27);
        for (start, width) in split_blocks(c_out) {
            blocks.push((start, width, data.len()));
            for ci in 0..c_in {
                for k in 0..27 {
                    for b in 0..width {
                        data.push(w(start + b, ci, k));
                    }
                }
            }
        }
        Self { c_out, c_in, blocks, data }
    }

    /// For the forward pass of `weights[co][ci][k]`.
    pub fn forward(weights: &[f32], c_out: usize, c_in: usize) -> Self {
        assert_eq!(weights.len(), c_out * c_in * 27);
        Self::build(c_out, c_in, |o, i, k| weights[(o * c_in + i) * 27 + k])
    }

    /// For propagating gradients back to the input: channels swapped and the
    /// stencil mirrored.
    pub fn transposed(weights: &[f32], c_out: usize, c_in: usize) -> Self {
        assert_eq!(weights.len(), c_out * c_in * 27);
        Self::build(c_in, c_out, |o, i, k| weights[(i * c_in + o) * 27 + 26 - k])
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f32);
// SAFETY: tasks write disjoint index ranges through the pointer.
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

#[inline]
fn avx512() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx512f")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `relu?(W * input + bias)` with zero-halo same padding.
pub fn conv_forward(input: &Volume, w: &Packed, bias: Option<&[f32]>, relu: bool) -> Volume {
    assert_eq!(input.channels, w.c_in, "input channels");
    if let Some(b) = bias {
        assert_eq!(b.len(), w.c_out);
    }
    let [x, y, _] = input.dims;
    let [_, py, pz] = input.padded();
    let mut out = Volume::zeros(w.c_out, input.dims);
    let chan = input.channel_len();
    let off = input.stencil();
    let in_ptr = SendPtr(input.ptr() as *mut f32);
    let out_ptr = SendPtr(out.mut_ptr());
    let use_simd = avx512();
    let tasks: Vec<(usize, usize)> =
        (1..=x).flat_map(|ix| (1..=y).step_by(TILE_ROWS).map(move |y0| (ix, y0))).collect();
    tasks.par_iter().for_each(|&(ix, y0)| {
        let y1 = (y0 + TILE_ROWS).min(y + 1);
        let start = (ix * py + y0) * pz + 1;
        let end = (ix * py + y1 - 1) * pz + pz - 1;
        let (inp, outp) = (in_ptr, out_ptr);
        for ci0 in (0..w.c_in).step_by(CI_GROUP) {
            let ci1 = (ci0 + CI_GROUP).min(w.c_in);
            for &(co0, width, doff) in &w.blocks {
                let wp = &w.data[doff..doff + width * w.c_in * 27];
                let zero = [0.0f32; 8];
                let bias_b = match bias {
                    Some(b) => &b[co0..co0 + width],
                    None => &zero[..width],
                };
                // SAFETY: ranges lie inside the padded channels, loads stay in the slack.
                unsafe {
                    let outs = outp.0.add(co0 * chan);
                    run_block(use_simd, width, inp.0, chan, (ci0, ci1, w.c_in), wp, bias_b, outs, start, end, &off, relu);
                }
            }
        }
        for &(co0, width, _) in &w.blocks {
            // SAFETY: the halo cells between rows of this tile belong to this task.
            unsafe {
                let outs = outp.0.add(co0 * chan);
                for c in 0..width {
                    let o = outs.add(c * chan);
                    for iy in y0..y1 - 1 {
                        let row_end = (ix * py + iy) * pz + pz - 1;
                        *o.add(row_end) = 0.0;
                        *o.add(row_end + 1) = 0.0;
                    }
                }
            }
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
unsafe fn run_block(
    simd: bool,
    width: usize,
    inp: *const f32,
    chan: usize,
    c_in: (usize, usize, usize),
    w: &[f32],
    bias: &[f32],
    out: *mut f32,
    start: usize,
    end: usize,
    off: &[isize; 27],
    relu: bool,
) {
    #[cfg(target_arch = "x86_64")]
    if simd {
        match width {
            8 => return x86::fwd::<8>(inp, chan, c_in, w, bias, out, start, end, off, relu),
            4 => return x86::fwd::<4>(inp, chan, c_in, w, bias, out, start, end, off, relu),
            2 => return x86::fwd::<2>(inp, chan, c_in, w, bias, out, start, end, off, relu),
            _ => return x86::fwd::<1>(inp, chan, c_in, w, bias, out, start, end, off, relu),
        }
    }
    let _ = simd;
    scalar_fwd(width, inp, chan, c_in, w, bias, out, start, end, off, relu);
}

#[allow(clippy::too_many_arguments)]
unsafe fn scalar_fwd(
    width: usize,
    inp: *const f32,
    chan: usize,
    ci: (usize, usize, usize),
    w: &[f32],
    bias: &[f32],
    out: *mut f32,
    start: usize,
    end: usize,
    off: &[isize; 27],
    relu: bool,
) {
    let (ci0, ci1, c_in) = ci;
    let _ = c_in;
    let mut acc = [0.0f32; 8];
    for q in start..end {
        for b in 0..width {
            acc[b] = if ci0 == 0 { bias[b] } else { *out.add(b * chan + q) };
        }
        for ci in ci0..ci1 {
            let ip = inp.add(ci * chan + q);
            let wp = &w[ci * 27 * width..];
            for k in 0..27 {
                let v = *ip.offset(off[k]);
                for b in 0..width {
                    acc[b] += wp[k * width + b] * v;
                }
            }
        }
        for b in 0..width {
            let a = if relu && ci1 == c_in { acc[b].max(0.0) } else { acc[b] };
            *out.add(b * chan + q) = a;
        }
    }
}

/// `dW[co][ci][k] = sum_x dpre[co](x) input[ci](x + off_k)`. `dpre` must have
/// a zero halo.
pub fn conv_weight_grad(dpre: &Volume, input: &Volume) -> Vec<f32> {
    assert_eq!(dpre.dims, input.dims);
    let (c_out, c_in) = (dpre.channels, input.channels);
    let [x, y, z] = input.dims;
    let chan = input.channel_len();
    let off = input.stencil();
    let start = input.offset(0, 0, 0, 0) - SLACK;
    let end = input.offset(0, x - 1, y - 1, z - 1) - SLACK + 1;
    let d_ptr = SendPtr(dpre.ptr() as *mut f32);
    let i_ptr = SendPtr(input.ptr() as *mut f32);
    let simd = avx512();
    let blocks = split_blocks(c_out);
    let tasks: Vec<(usize, usize, usize, usize)> = blocks
        .iter()
        .flat_map(|&(s, w)| (0..c_in).step_by(WG_CI).map(move |ci| (s, w, ci, (ci + WG_CI).min(c_in) - ci)))
        .collect();
    let parts: Vec<Vec<f32>> = tasks
        .par_iter()
        .map(|&(co0, width, ci0, n_ci)| {
            let mut g = vec![0.0f32; n_ci * width * 27];
            let (d, i) = (d_ptr, i_ptr);
            // SAFETY: as for the forward pass.
            unsafe {
                let dp = d.0.add(co0 * chan);
                let ip = i.0.add(ci0 * chan);
                run_wgrad(simd, width, dp, ip, chan, n_ci, start, end, &off, &mut g);
            }
            g
        })
        .collect();
    let mut grad = vec![0.0f32; c_out * c_in * 27];
    for (&(co0, width, ci0, n_ci), g) in tasks.iter().zip(parts) {
        for ci in 0..n_ci {
            for b in 0..width {
                let dst = ((co0 + b) * c_in + ci0 + ci) * 27;
                let src = (ci * width + b) * 27;
                grad[dst..dst + 27].copy_from_slice(&g[src..src + 27]);
            }
        }
    }
    grad
}

#[allow(clippy::too_many_arguments)]
unsafe fn run_wgrad(
    simd: bool,
    width: usize,
    d: *const f32,
    inp: *const f32,
    chan: usize,
    n_ci: usize,
    start: usize,
    end: usize,
    off: &[isize; 27],
    g: &mut [f32],
) {
    #[cfg(target_arch = "x86_64")]
    if simd {
        match width {
            8 => return x86::wgrad::<8>(d, inp, chan, n_ci, start, end, off, g),
            4 => return x86::wgrad::<4>(d, inp, chan, n_ci, start, end, off, g),
            2 => return x86::wgrad::<2>(d, inp, chan, n_ci, start, end, off, g),
            _ => return x86::wgrad::<1>(d, inp, chan, n_ci, start, end, off, g),
        }
    }
    let _ = simd;
    for ci in 0..n_ci {
        for b in 0..width {
            for k in 0..27 {
                let mut s = 0.0f32;
                for q in start..end {
                    s += *d.add(b * chan + q) * *inp.offset((ci * chan + q) as isize + off[k]);
                }
                g[(ci * width + b) * 27 + k] = s;
            }
        }
    }
}

/// `dB[co] = sum_x dpre[co](x)`, accumulated in f64.
pub fn conv_bias_grad(dpre: &Volume) -> Vec<f32> {
    (0..dpre.channels)
        .map(|c| dpre.channel(c).iter().map(|v| *v as f64).sum::<f64>() as f32)
        .collect()
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    #[inline]
    fn mask(rem: usize) -> u16 {
        if rem >= 16 {
            0xFFFF
        } else {
            ((1u32 << rem) - 1) as u16
        }
    }

    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn fwd<const B: usize>(
        inp: *const f32,
        chan: usize,
        (ci0, ci1, c_in): (usize, usize, usize),
        w: &[f32],
        bias: &[f32],
        out: *mut f32,
        start: usize,
        end: usize,
        off: &[isize; 27],
        relu: bool,
    ) {
        let zero = _mm512_setzero_ps();
        let wbase = w.as_ptr();
        let (first, last) = (ci0 == 0, ci1 == c_in);
        let mut q = start;
        while q < end {
            let rem = end - q;
            let m0 = mask(rem);
            let m1 = if rem > 16 { mask(rem - 16) } else { 0 };
            let mut acc = [[zero; 2]; B];
            for b in 0..B {
                acc[b] = if first {
                    let v = _mm512_set1_ps(bias[b]);
                    [v, v]
                } else {
                    let o = out.add(b * chan + q);
                    [_mm512_loadu_ps(o), _mm512_loadu_ps(o.add(16))]
                };
            }
            for ci in ci0..ci1 {
                let ip = inp.add(ci * chan + q);
                let wp = wbase.add(ci * 27 * B);
                for k in 0..27 {
                    let p = ip.offset(off[k]);
                    let x0 = _mm512_loadu_ps(p);
                    let x1 = _mm512_loadu_ps(p.add(16));
                    let wk = wp.add(k * B);
                    for b in 0..B {
                        let wv = _mm512_set1_ps(*wk.add(b));
                        acc[b][0] = _mm512_fmadd_ps(wv, x0, acc[b][0]);
                        acc[b][1] = _mm512_fmadd_ps(wv, x1, acc[b][1]);
                    }
                }
            }
            for b in 0..B {
                let (mut a0, mut a1) = (acc[b][0], acc[b][1]);
                if relu && last {
                    a0 = _mm512_max_ps(a0, zero);
                    a1 = _mm512_max_ps(a1, zero);
                }
                let o = out.add(b * chan + q);
                _mm512_mask_storeu_ps(o, m0, a0);
                if m1 != 0 {
                    _mm512_mask_storeu_ps(o.add(16), m1, a1);
                }
            }
            q += 32;
        }
    }

    /// Partial sums are kept per lane in `lanes` (`[ci][b][k][16]`) across
    /// tiles of `Q_TILE` voxels so the tile's data stays in cache while all
    /// input channels and stencil rows pass over it.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn wgrad<const B: usize>(
        d: *const f32,
        inp: *const f32,
        chan: usize,
        n_ci: usize,
        start: usize,
        end: usize,
        off: &[isize; 27],
        g: &mut [f32],
    ) {
        let zero = _mm512_setzero_ps();
        let mut lanes = vec![zero; n_ci * B * 27];
        let mut t0 = start;
        while t0 < end {
            let t1 = (t0 + super::Q_TILE).min(end);
            for ci in 0..n_ci {
                let ib = inp.add(ci * chan);
                for kxy in 0..9 {
                    let o = [off[kxy * 3], off[kxy * 3 + 1], off[kxy * 3 + 2]];
                    let mut acc = [[zero; 3]; B];
                    for b in 0..B {
                        for kz in 0..3 {
                            acc[b][kz] = lanes[(ci * B + b) * 27 + kxy * 3 + kz];
                        }
                    }
                    let mut q = t0;
                    while q < t1 {
                        let m = mask(t1 - q);
                        let ip = ib.add(q);
                        let x = [
                            _mm512_loadu_ps(ip.offset(o[0])),
                            _mm512_loadu_ps(ip.offset(o[1])),
                            _mm512_loadu_ps(ip.offset(o[2])),
                        ];
                        for b in 0..B {
                            let dv = _mm512_maskz_loadu_ps(m, d.add(b * chan + q));
                            for kz in 0..3 {
                                acc[b][kz] = _mm512_fmadd_ps(dv, x[kz], acc[b][kz]);
                            }
                        }
                        q += 16;
                    }
                    for b in 0..B {
                        for kz in 0..3 {
                            lanes[(ci * B + b) * 27 + kxy * 3 + kz] = acc[b][kz];
                        }
                    }
                }
            }
            t0 = t1;
        }
        for (i, v) in lanes.iter().enumerate() {
            g[i] = _mm512_reduce_add_ps(*v);
        }
    }
}
