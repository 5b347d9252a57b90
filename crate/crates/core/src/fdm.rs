//! Explicit finite-volume reference solver on the full 3D grid.
//!
//! Each interior face between cells `L` and `R` carries
//!
//! ```text
//! F = gamma (rho_R - rho_L) / h - chi rho_up (c_R - c_L) / h
//! ```
//!
//! where `rho_up` is the donor cell picked by the drift direction. A cell
//! gains `dt F / h` through its upper face and loses it through its lower
//! face; faces on the domain boundary carry nothing. Both neighbours evaluate
//! a face with the same arguments, so the flux telescopes and mass is
//! conserved to rounding.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::ScalarField3;
use crate::scenario::{discretize, Quantity, ScenarioSpec, SimParams};

/// Safety factor applied to every explicit stability bound.
pub const SAFETY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct FdmState {
    pub rho: ScalarField3,
    pub conc: ScalarField3,
    pub time: f64,
}

impl FdmState {
    pub fn new(rho: ScalarField3, conc: ScalarField3, time: f64) -> Result<Self> {
        if !rho.same_grid(&conc) {
            return Err(Error::Shape("density and concentration live on different grids".into()));
        }
        if rho.values.iter().chain(&conc.values).any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("fields must be >= 0".into()));
        }
        Ok(Self { rho, conc, time })
    }

    pub fn initial(spec: &ScenarioSpec) -> Self {
        Self {
            rho: discretize(spec, Quantity::Density),
            conc: discretize(spec, Quantity::Concentration),
            time: 0.0,
        }
    }

    /// Discrete mass `sum(rho) h^3`.
    pub fn mass(&self) -> f64 {
        self.rho.integral()
    }
}

#[inline]
fn face_flux(gamma: f64, chi: f64, inv_h: f64, rl: f64, rr: f64, cl: f64, cr: f64) -> f64 {
    let v = chi * (cr - cl) * inv_h;
    let donor = if v > 0.0 { rl } else { rr };
    gamma * (rr - rl) * inv_h - v * donor
}

/// Largest step allowed by the positivity bound of the upwind scheme, the
/// positivity of the concentration update and the scenario step `dt`.
pub fn stable_dt(state: &FdmState, params: &SimParams) -> f64 {
    let grid = state.rho.grid;
    let (n, h) = (grid.n, grid.h());
    let c = &state.conc.values;
    let max_dc = (0..n)
        .into_par_iter()
        .map(|ix| {
            let mut m: f64 = 0.0;
            for iy in 0..n {
                for iz in 0..n {
                    let i = grid.index(ix, iy, iz);
                    if ix + 1 < n {
                        m = m.max((c[i + n * n] - c[i]).abs());
                    }
                    if iy + 1 < n {
                        m = m.max((c[i + n] - c[i]).abs());
                    }
                    if iz + 1 < n {
                        m = m.max((c[i + 1] - c[i]).abs());
                    }
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max);
    let outflow_rate = 6.0 * params.gamma / (h * h) + 6.0 * params.chi * max_dc / (h * h);
    let mut dt = params.dt.min(SAFETY / outflow_rate);
    let max_rho = state.rho.max();
    if max_rho > 0.0 {
        dt = dt.min(SAFETY / max_rho);
    }
    dt
}

/// One explicit step of size `dt_f`.
pub fn fdm_step(state: &FdmState, params: &SimParams, dt_f: f64) -> Result<FdmState> {
    let grid = state.rho.grid;
    if !state.rho.same_grid(&state.conc) {
        return Err(Error::Shape("density and concentration live on different grids".into()));
    }
    let n = grid.n;
    let inv_h = 1.0 / grid.h();
    let (gamma, chi) = (params.gamma, params.chi);
    let rho = &state.rho.values;
    let c = &state.conc.values;
    let strides = [n * n, n, 1];
    let mut new_rho = vec![0.0; grid.len()];
    new_rho.par_chunks_mut(n * n).enumerate().for_each(|(ix, plane)| {
        for iy in 0..n {
            for iz in 0..n {
                let i = grid.index(ix, iy, iz);
                let coord = [ix, iy, iz];
                let mut net = 0.0;
                for axis in 0..3 {
                    let s = strides[axis];
                    if coord[axis] + 1 < n {
                        net += face_flux(gamma, chi, inv_h, rho[i], rho[i + s], c[i], c[i + s]);
                    }
                    if coord[axis] > 0 {
                        net -= face_flux(gamma, chi, inv_h, rho[i - s], rho[i], c[i - s], c[i]);
                    }
                }
                plane[iy * n + iz] = rho[i] + dt_f * net * inv_h;
            }
        }
    });
    let new_conc: Vec<f64> = c.par_iter().zip(rho.par_iter()).map(|(c, r)| c - dt_f * c * r).collect();
    let time = state.time + dt_f;
    let bad = new_rho
        .par_iter()
        .position_first(|v| !v.is_finite() || *v < 0.0)
        .map(|i| ("rho", i, new_rho[i]))
        .or_else(|| {
            new_conc
                .par_iter()
                .position_first(|v| !v.is_finite() || *v < 0.0)
                .map(|i| ("c", i, new_conc[i]))
        });
    if let Some((what, i, v)) = bad {
        return Err(Error::Stability {
            step: 0,
            time,
            detail: format!("{what} at cell {:?} = {v:e} after dt_f = {dt_f:e}", grid.unravel(i)),
        });
    }
    Ok(FdmState {
        rho: ScalarField3 { grid, values: new_rho },
        conc: ScalarField3 { grid, values: new_conc },
        time,
    })
}

/// Bookkeeping of a finished run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FdmStats {
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub wall_seconds: f64,
}

/// One stable step towards `t_target`, shortened so it lands exactly on it.
pub fn step_towards(state: &FdmState, params: &SimParams, t_target: f64, stats: &mut FdmStats) -> Result<FdmState> {
    let remaining = t_target - state.time;
    let dt = stable_dt(state, params);
    let last = dt >= remaining * (1.0 - 1e-12);
    let dt = if last { remaining } else { dt };
    let mut next = fdm_step(state, params, dt).map_err(|e| match e {
        Error::Stability { time, detail, .. } => Error::Stability { step: stats.steps, time, detail },
        other => other,
    })?;
    if last {
        next.time = t_target;
    }
    if stats.steps == 0 {
        stats.dt_min = dt;
        stats.dt_max = dt;
    } else {
        if !last {
            stats.dt_min = stats.dt_min.min(dt);
        }
        stats.dt_max = stats.dt_max.max(dt);
    }
    stats.steps += 1;
    Ok(next)
}

pub fn run_fdm(spec: &ScenarioSpec, save_times: &[f64]) -> Result<Vec<FdmState>> {
    run_fdm_with_stats(spec, save_times).map(|(s, _)| s)
}

pub fn run_fdm_with_stats(spec: &ScenarioSpec, save_times: &[f64]) -> Result<(Vec<FdmState>, FdmStats)> {
    run_fdm_observed(spec, save_times, |_| {})
}

/// Like [`run_fdm`], calling `observer` on the initial state and after every step.
pub fn run_fdm_observed(
    spec: &ScenarioSpec,
    save_times: &[f64],
    mut observer: impl FnMut(&FdmState),
) -> Result<(Vec<FdmState>, FdmStats)> {
    spec.validate()?;
    let mut times = save_times.to_vec();
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidArgument("save times must be finite and >= 0".into()));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let started = Instant::now();
    let mut stats = FdmStats::default();
    let mut state = FdmState::initial(spec);
    observer(&state);
    let mut out = Vec::with_capacity(times.len());
    for t in times {
        while state.time < t {
            state = step_towards(&state, &spec.params, t, &mut stats)?;
            observer(&state);
        }
        out.push(state.clone());
    }
    stats.wall_seconds = started.elapsed().as_secs_f64();
    Ok((out, stats))
}
