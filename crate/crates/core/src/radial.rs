//! Finite differences for the radially symmetric system in three dimensions:
//!
//! ```text
//! rho_t = gamma (rho_rr + 2/r rho_r) - chi (rho_r c_r + rho c_rr + 2/r rho c_r)
//! c_t   = -c rho
//! ```
//!
//! on `r_j = j dr`, `j = 0..m`, with zero-flux ghost reflection at both ends
//! and the removable singularity `(2/r) f_r -> 2 f_rr` at the origin. These
//! profiles are the cheap training corpus for the neural interpolator.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{Grid3, ScalarField3, Vec3};
use crate::scenario::{ConcInit, ScenarioSpec, SimParams};

pub const DEFAULT_POINTS: usize = 512;
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RadialState {
    pub dr: f64,
    pub rho: Vec<f64>,
    pub conc: Vec<f64>,
    pub time: f64,
}

impl RadialState {
    pub fn from_profiles(
        m: usize,
        dr: f64,
        rho: impl Fn(f64) -> f64,
        conc: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let s = Self {
            dr,
            rho: (0..m).map(|j| rho(j as f64 * dr)).collect(),
            conc: (0..m).map(|j| conc(j as f64 * dr)).collect(),
            time: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.rho.len();
        if m < MIN_POINTS || self.conc.len() != m {
            return Err(Error::Shape(format!(
                "radial state needs >= {MIN_POINTS} points and matching arrays (rho {m}, conc {})",
                self.conc.len()
            )));
        }
        if !(self.dr > 0.0 && self.dr.is_finite()) {
            return Err(Error::InvalidArgument(format!("radial spacing {} must be > 0", self.dr)));
        }
        if self.rho.iter().chain(&self.conc).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("radial profiles must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.dr
    }

    pub fn r_max(&self) -> f64 {
        self.r(self.len() - 1)
    }

    /// Discrete mass `4 pi sum_j rho_j r_j^2 dr`.
    pub fn mass(&self) -> f64 {
        4.0 * PI * self.rho.iter().enumerate().map(|(j, v)| v * self.r(j).powi(2)).sum::<f64>() * self.dr
    }
}

/// Largest explicit step keeping diffusion monotone at the origin (where the
/// radial Laplacian stencil weight is `6 / dr^2`) and the drift CFL below 1/2.
pub fn stable_dt(state: &RadialState, params: &SimParams) -> f64 {
    let dr = state.dr;
    let mut dt = f64::INFINITY;
    if params.gamma > 0.0 {
        dt = dt.min(dr * dr / (6.0 * params.gamma));
    }
    let m = state.len();
    let max_cr = (1..m - 1)
        .map(|j| ((state.conc[j + 1] - state.conc[j - 1]) / (2.0 * dr)).abs())
        .fold(0.0, f64::max);
    if params.chi * max_cr > 0.0 {
        dt = dt.min(0.5 * dr / (params.chi * max_cr));
    }
    dt
}

#[inline]
fn derivs(f: &[f64], j: usize, dr: f64) -> (f64, f64) {
    let m = f.len();
    // ghost points f[-1] = f[1], f[m] = f[m-2]
    let left = if j == 0 { f[1] } else { f[j - 1] };
    let right = if j == m - 1 { f[m - 2] } else { f[j + 1] };
    ((right - left) / (2.0 * dr), (right - 2.0 * f[j] + left) / (dr * dr))
}

/// One explicit Euler step of size `dt_r`.
pub fn radial_step(state: &RadialState, params: &SimParams, dt_r: f64) -> Result<RadialState> {
    let m = state.len();
    if m < MIN_POINTS || state.conc.len() != m {
        return Err(Error::Shape(format!("radial state has {m} points, need >= {MIN_POINTS}")));
    }
    let dr = state.dr;
    let (gamma, chi) = (params.gamma, params.chi);
    let mut rho = vec![0.0; m];
    let mut conc = vec![0.0; m];
    for j in 0..m {
        let (rr, rrr) = derivs(&state.rho, j, dr);
        let (cr, crr) = derivs(&state.conc, j, dr);
        let p = state.rho[j];
        let (diff, drift) = if j == 0 {
            (3.0 * rrr, 3.0 * p * crr)
        } else {
            let inv_r = 2.0 / state.r(j);
            (rrr + inv_r * rr, rr * cr + p * crr + inv_r * p * cr)
        };
        rho[j] = p + dt_r * (gamma * diff - chi * drift);
        conc[j] = state.conc[j] - dt_r * state.conc[j] * p;
    }
    let time = state.time + dt_r;
    if let Some(j) = rho.iter().chain(&conc).position(|v| !v.is_finite() || *v < 0.0) {
        let (what, j) = if j < m { ("rho", j) } else { ("c", j - m) };
        let v = if what == "rho" { rho[j] } else { conc[j] };
        return Err(Error::Stability {
            step: 0,
            time,
            detail: format!("{what}[{j}] = {v:e} after radial step dt = {dt_r:e}"),
        });
    }
    Ok(RadialState { dr, rho, conc, time })
}

/// Advance to `t_target` with adaptive stable steps, landing exactly on it.
pub fn integrate_to(mut state: RadialState, params: &SimParams, t_target: f64) -> Result<RadialState> {
    let mut steps = 0usize;
    while state.time < t_target {
        let remaining = t_target - state.time;
        let dt = stable_dt(&state, params);
        let last = dt >= remaining * (1.0 - 1e-12);
        state = radial_step(&state, params, if last { remaining } else { dt }).map_err(|e| match e {
            Error::Stability { time, detail, .. } => Error::Stability { step: steps, time, detail },
            other => other,
        })?;
        if last {
            state.time = t_target;
        }
        steps += 1;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialSolution {
    pub states: Vec<RadialState>,
    pub params: SimParams,
    /// Symmetry centre, used when lifting profiles back onto a 3D grid.
    pub center: Vec3,
}

impl RadialSolution {
    pub fn new(states: Vec<RadialState>, params: SimParams, center: Vec3) -> Result<Self> {
        if states.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidArgument("snapshot times must increase strictly".into()));
        }
        Ok(Self { states, params, center })
    }
}

/// The radial initial data of a scenario made of one density blob and one
/// concentration blob sharing a centre.
pub fn radial_initial_state(spec: &ScenarioSpec, m: usize) -> Result<(RadialState, Vec3)> {
    let [blob] = spec.rho0.as_slice() else {
        return Err(Error::InvalidScenario("radial solver needs exactly one density blob".into()));
    };
    let ConcInit::Blobs(cblobs) = &spec.c0 else {
        return Err(Error::InvalidScenario("radial solver needs a blob concentration, not annuli".into()));
    };
    let [cblob] = cblobs.as_slice() else {
        return Err(Error::InvalidScenario("radial solver needs exactly one concentration blob".into()));
    };
    if blob.center != cblob.center {
        return Err(Error::InvalidScenario("density and concentration blobs are not concentric".into()));
    }
    if m < MIN_POINTS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_POINTS} radial points")));
    }
    let r_max = spec.grid.extent * 3f64.sqrt() / 2.0;
    let dr = r_max / (m - 1) as f64;
    let (s, w, mass) = (blob.sigma, blob.weight, spec.params.mass);
    let norm = mass * w / (2.0 * PI * s * s).powf(1.5);
    let (cs, amp) = (cblob.sigma, cblob.amplitude);
    let state = RadialState::from_profiles(
        m,
        dr,
        |r| norm * (-r * r / (2.0 * s * s)).exp(),
        |r| amp * (-r * r / (2.0 * cs * cs)).exp(),
    )?;
    Ok((state, blob.center))
}

/// Integrate a radial scenario and keep snapshots at `save_times`.
pub fn run_radial(spec: &ScenarioSpec, m: usize, save_times: &[f64]) -> Result<RadialSolution> {
    spec.params.validate()?;
    let (mut state, center) = radial_initial_state(spec, m)?;
    let mut times: Vec<f64> = save_times.to_vec();
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidArgument("save times must be finite and >= 0".into()));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut states = Vec::with_capacity(times.len());
    for t in times {
        state = integrate_to(state, &spec.params, t)?;
        states.push(state.clone());
    }
    RadialSolution::new(states, spec.params, center)
}

#[inline]
fn sample_profile(profile: &[f64], dr: f64, r: f64) -> f64 {
    let m = profile.len();
    let s = r / dr;
    let j = s.floor() as usize;
    if j >= m - 1 {
        return profile[m - 1];
    }
    let t = s - j as f64;
    profile[j] * (1.0 - t) + profile[j + 1] * t
}

/// Linear interpolation of a radial profile pair onto cell centres.
/// Returns `(rho, c)`.
pub fn lift_radial_to_3d(state: &RadialState, grid: &Grid3, center: &Vec3) -> (ScalarField3, ScalarField3) {
    let lift = |profile: &[f64]| {
        ScalarField3::from_fn(*grid, |x| {
            let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
            sample_profile(profile, state.dr, (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
        })
    };
    (lift(&state.rho), lift(&state.conc))
}

pub fn lift_concentration(state: &RadialState, grid: &Grid3, center: &Vec3) -> ScalarField3 {
    ScalarField3::from_fn(*grid, |x| {
        let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
        sample_profile(&state.conc, state.dr, (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
    })
}
