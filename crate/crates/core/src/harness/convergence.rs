//! Convergence studies in particle count and time step.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Interpolator;
use crate::rng::RngStream;
use crate::scenario::ScenarioSpec;
use crate::sipf::{run_sipf_with, SipfOptions, SipfState};

use super::metrics::{fit_loglog_slope, relative_l2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Particles,
    Timestep,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Particles => "particles",
            Axis::Timestep => "timestep",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "particles" => Ok(Axis::Particles),
            "timestep" => Ok(Axis::Timestep),
            other => Err(Error::InvalidArgument(format!("unknown axis '{other}' (particles|timestep)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSample {
    /// `P` or `dt`.
    pub level: f64,
    pub err_rho: f64,
    pub err_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub axis: Axis,
    pub samples: Vec<ConvergenceSample>,
    pub slope_rho: Option<f64>,
    pub slope_c: Option<f64>,
}

impl ConvergenceReport {
    pub fn from_samples(axis: Axis, samples: Vec<ConvergenceSample>) -> Self {
        let levels: Vec<f64> = samples.iter().map(|s| s.level).collect();
        let rho: Vec<f64> = samples.iter().map(|s| s.err_rho).collect();
        let c: Vec<f64> = samples.iter().map(|s| s.err_c).collect();
        Self { axis, slope_rho: fit_loglog_slope(&levels, &rho), slope_c: fit_loglog_slope(&levels, &c), samples }
    }

    /// One row per level, then a `slope` row (empty cells when no fit exists).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["level", "err_rho", "err_c"])?;
        for s in &self.samples {
            w.write_record([s.level.to_string(), format!("{:e}", s.err_rho), format!("{:e}", s.err_c)])?;
        }
        let opt = |v: Option<f64>| v.map(|s| s.to_string()).unwrap_or_default();
        w.write_record(["slope".to_string(), opt(self.slope_rho), opt(self.slope_c)])?;
        w.flush()?;
        Ok(())
    }
}

fn final_state(spec: &ScenarioSpec, particles: usize, interp: &dyn Interpolator, substeps: u32) -> Result<SipfState> {
    let options = SipfOptions { save_times: vec![spec.params.t_end], noise_substeps: substeps };
    let mut states = run_sipf_with(spec, particles, interp, &options, |_| Ok(()))?;
    states.pop().ok_or_else(|| Error::InvalidArgument("run produced no final state".into()))
}

fn compare(level: f64, run: &SipfState, reference: &SipfState) -> Result<ConvergenceSample> {
    Ok(ConvergenceSample {
        level,
        err_rho: relative_l2(&run.rho_hist, &reference.rho_hist)?,
        err_c: relative_l2(&run.conc, &reference.conc)?,
    })
}

/// Seed of the run with `particles` particles: derived from the scenario
/// seed so that different particle counts draw independent ensembles.
pub fn particle_seed(spec: &ScenarioSpec, particles: usize) -> u64 {
    RngStream::new(spec.params.seed).derive(particles as u64).seed()
}

/// Error at `t_end` of runs with each particle count against one run with
/// `reference_particles`, all at step `dt`.
pub fn converge_particles(
    spec: &ScenarioSpec,
    interp: &dyn Interpolator,
    particle_list: &[usize],
    reference_particles: usize,
    dt: f64,
) -> Result<ConvergenceReport> {
    if particle_list.is_empty() {
        return Err(Error::InvalidArgument("no particle counts given".into()));
    }
    if particle_list.iter().any(|p| *p >= reference_particles) {
        return Err(Error::InvalidArgument(format!(
            "reference particle count {reference_particles} must exceed every study level"
        )));
    }
    let with = |p: usize| {
        let mut s = spec.clone();
        s.params.dt = dt;
        s.params.seed = particle_seed(spec, p);
        s
    };
    let reference = final_state(&with(reference_particles), reference_particles, interp, 1)?;
    let mut samples = Vec::with_capacity(particle_list.len());
    for &p in particle_list {
        let run = final_state(&with(p), p, interp, 1)?;
        samples.push(compare(p as f64, &run, &reference)?);
        log::info!("P = {p}: err_rho {:.4e}, err_c {:.4e}", samples.last().unwrap().err_rho, samples.last().unwrap().err_c);
    }
    Ok(ConvergenceReport::from_samples(Axis::Particles, samples))
}

/// Number of reference steps per step of size `dt`.
fn ratio(dt: f64, reference_dt: f64) -> Result<u32> {
    let k = (dt / reference_dt).round();
    if k < 1.0 || ((dt / reference_dt) - k).abs() > 1e-9 * k {
        return Err(Error::InvalidArgument(format!("dt {dt} is not a multiple of the reference step {reference_dt}")));
    }
    Ok(k as u32)
}

/// Error at `t_end` of runs with each step against one run at `reference_dt`.
/// Every run uses the same seed and the Brownian path of the reference run,
/// summed over the reference steps inside each coarse step.
pub fn converge_timestep(
    spec: &ScenarioSpec,
    interp: &dyn Interpolator,
    dt_list: &[f64],
    reference_dt: f64,
    particles: usize,
) -> Result<ConvergenceReport> {
    if dt_list.is_empty() {
        return Err(Error::InvalidArgument("no time steps given".into()));
    }
    if dt_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("time steps must be listed in decreasing order".into()));
    }
    let ks: Vec<u32> = dt_list.iter().map(|dt| ratio(*dt, reference_dt)).collect::<Result<_>>()?;
    let with = |dt: f64| {
        let mut s = spec.clone();
        s.params.dt = dt;
        s
    };
    let reference = final_state(&with(reference_dt), particles, interp, 1)?;
    let mut samples = Vec::with_capacity(dt_list.len());
    for (&dt, &k) in dt_list.iter().zip(&ks) {
        let run = final_state(&with(dt), particles, interp, k)?;
        samples.push(compare(dt, &run, &reference)?);
        log::info!("dt = {dt}: err_rho {:.4e}, err_c {:.4e}", samples.last().unwrap().err_rho, samples.last().unwrap().err_c);
    }
    Ok(ConvergenceReport::from_samples(Axis::Timestep, samples))
}
