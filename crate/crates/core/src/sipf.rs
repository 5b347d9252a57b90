//! The stochastic interacting particle-field loop.
//!
//! Density is carried by `P` equal-mass particles and concentration by a grid
//! field on the histogram cells. Iteration 0 samples the particles, sets
//! `c = c0` and bins. Each later iteration
//!
//! 1. decays the concentration, `c <- c (1 - dt rho_hist)`, cell by cell;
//! 2. hands the concentration from before that update to the interpolator and
//!    reads gradients at the particle positions;
//! 3. moves every particle by one Euler-Maruyama step with reflection at the
//!    walls;
//! 4. re-bins the particles.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Grid3, ScalarField3, Vec3};
use crate::interp::Interpolator;
use crate::rng::{RngStream, Stream};
use crate::scenario::{discretize, steps_for, Quantity, ScenarioSpec, SimParams};

/// Consecutive out-of-domain draws tolerated per particle before sampling gives up.
pub const MAX_REJECTIONS: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<Vec3>,
    /// Total mass `M0` shared equally by the particles.
    pub mass: f64,
    /// Edge length of the domain the particles live in.
    pub extent: f64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Per-axis sample mean and (population) variance.
    pub fn moments(&self) -> (Vec3, Vec3) {
        let p = self.len() as f64;
        let mut mean = [0.0; 3];
        for x in &self.positions {
            for a in 0..3 {
                mean[a] += x[a];
            }
        }
        mean = mean.map(|m| m / p);
        let mut var = [0.0; 3];
        for x in &self.positions {
            for a in 0..3 {
                var[a] += (x[a] - mean[a]).powi(2);
            }
        }
        (mean, var.map(|v| v / p))
    }
}

/// Draw `count` particles from the initial density mixture.
///
/// Particle `p`, attempt `a` uses the counter key `(Sample, a, p)`: a uniform
/// picks the blob by weight, three normals place the particle. Draws outside
/// the domain are repeated with the next attempt.
pub fn sample_particles(spec: &ScenarioSpec, count: usize, rng: &RngStream) -> Result<ParticleEnsemble> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if spec.rho0.is_empty() {
        return Err(Error::InvalidScenario("no density blobs".into()));
    }
    let total: f64 = spec.rho0.iter().map(|b| b.weight).sum();
    let grid = spec.grid;
    let positions = (0..count as u64)
        .into_par_iter()
        .map(|p| {
            for attempt in 0..=MAX_REJECTIONS {
                let mut cur = rng.cursor(Stream::Sample, attempt, p);
                let u = cur.uniform() * total;
                let mut acc = 0.0;
                let mut blob = spec.rho0.last().unwrap();
                for b in &spec.rho0 {
                    acc += b.weight;
                    if u < acc {
                        blob = b;
                        break;
                    }
                }
                let x = [0, 1, 2].map(|a| blob.center[a] + blob.sigma * cur.normal());
                if grid.contains(&x) {
                    return Ok(x);
                }
            }
            Err(Error::InvalidScenario(format!(
                "particle {p}: more than {MAX_REJECTIONS} consecutive draws fell outside the domain"
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleEnsemble { positions, mass: spec.params.mass, extent: grid.extent })
}

/// Histogram density: each cell holds `(M0 / P) count / h^3`.
pub fn bin_particles(ensemble: &ParticleEnsemble, grid: &Grid3) -> Result<ScalarField3> {
    let cells: Vec<Option<usize>> = ensemble.positions.par_iter().map(|x| grid.locate(x)).collect();
    let mut counts = vec![0u32; grid.len()];
    for (i, c) in cells.iter().enumerate() {
        match c {
            Some(c) => counts[*c] += 1,
            None => {
                return Err(Error::OutsideDomain {
                    index: i,
                    position: ensemble.positions[i],
                    extent: grid.extent,
                })
            }
        }
    }
    let unit = ensemble.mass / (ensemble.len() as f64 * grid.cell_volume());
    Ok(ScalarField3 {
        grid: *grid,
        values: counts.into_par_iter().map(|k| k as f64 * unit).collect(),
    })
}

/// `c (1 - dt rho)` per cell. Requires `dt max(rho) <= 1`.
pub fn update_concentration(conc: &ScalarField3, rho_hist: &ScalarField3, dt: f64) -> Result<ScalarField3> {
    if !conc.same_grid(rho_hist) {
        return Err(Error::Shape("concentration and density live on different grids".into()));
    }
    let peak = rho_hist.max();
    if dt * peak > 1.0 {
        return Err(Error::Precondition(format!(
            "dt * max(rho_hist) = {:.4} exceeds 1; the histogram peak {peak:.4e} grows like M0 / (P h^3) \
             per particle, so reduce dt or increase the particle count",
            dt * peak
        )));
    }
    Ok(ScalarField3 {
        grid: conc.grid,
        values: conc
            .values
            .par_iter()
            .zip(rho_hist.values.par_iter())
            .map(|(c, r)| c * (1.0 - dt * r))
            .collect(),
    })
}

/// Source of the Gaussian increments of the particle walk.
///
/// With `substeps = k` the increment of move `m` is the normalised sum of the
/// `k` draws a run with step `dt / k` would use over the same interval, so
/// runs at different step sizes share one Brownian path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianNoise {
    pub rng: RngStream,
    pub substeps: u32,
}

impl BrownianNoise {
    pub fn new(rng: RngStream) -> Self {
        Self { rng, substeps: 1 }
    }

    pub fn coarsened(rng: RngStream, substeps: u32) -> Self {
        Self { rng, substeps: substeps.max(1) }
    }

    /// Standard normal vector for a particle at 0-based move `m`.
    #[inline]
    pub fn increment(&self, m: u64, p: u64) -> Vec3 {
        let k = self.substeps as u64;
        if k == 1 {
            return self.rng.normal3(Stream::Brownian, m, p);
        }
        let mut s = [0.0; 3];
        for j in 0..k {
            let z = self.rng.normal3(Stream::Brownian, m * k + j, p);
            for a in 0..3 {
                s[a] += z[a];
            }
        }
        let scale = 1.0 / (k as f64).sqrt();
        s.map(|v| v * scale)
    }
}

/// Mirror a coordinate back into `[0, extent]`, as often as needed.
#[inline]
pub fn reflect(x: f64, extent: f64) -> f64 {
    if (0.0..=extent).contains(&x) {
        return x;
    }
    let y = x.rem_euclid(2.0 * extent);
    if y > extent {
        2.0 * extent - y
    } else {
        y
    }
}

/// One Euler-Maruyama move, `X + chi grad c dt + sqrt(2 gamma dt) N`.
pub fn step_particles(
    ensemble: &ParticleEnsemble,
    gradc: &[Vec3],
    params: &SimParams,
    move_index: u64,
    noise: &BrownianNoise,
) -> Result<ParticleEnsemble> {
    if gradc.len() != ensemble.len() {
        return Err(Error::SizeMismatch { expected: ensemble.len(), found: gradc.len() });
    }
    if let Some(p) = gradc.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument(format!("gradient at particle {p} is not finite")));
    }
    let drift = params.chi * params.dt;
    let diff = (2.0 * params.gamma * params.dt).sqrt();
    let extent = ensemble.extent;
    let positions = ensemble
        .positions
        .par_iter()
        .zip(gradc.par_iter())
        .enumerate()
        .map(|(p, (x, g))| {
            let z = noise.increment(move_index, p as u64);
            [0, 1, 2].map(|a| reflect(x[a] + drift * g[a] + diff * z[a], extent))
        })
        .collect();
    Ok(ParticleEnsemble { positions, mass: ensemble.mass, extent })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SipfState {
    pub ensemble: ParticleEnsemble,
    pub conc: ScalarField3,
    pub rho_hist: ScalarField3,
    /// Number of particle moves performed so far.
    pub step: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SipfOptions {
    pub save_times: Vec<f64>,
    /// Brownian coarsening factor, see [`BrownianNoise`].
    pub noise_substeps: u32,
}

impl SipfOptions {
    pub fn at(save_times: &[f64]) -> Self {
        Self { save_times: save_times.to_vec(), noise_substeps: 1 }
    }
}

pub fn run_sipf(
    spec: &ScenarioSpec,
    particles: usize,
    interp: &dyn Interpolator,
    save_times: &[f64],
) -> Result<Vec<SipfState>> {
    run_sipf_with(spec, particles, interp, &SipfOptions::at(save_times), |_| Ok(()))
}

fn check_step(prev: &ScalarField3, next: &SipfState) -> Result<()> {
    let bad = |detail: String| Err(Error::Stability { step: next.step, time: next.time, detail });
    if let Some(i) = next.rho_hist.values.iter().position(|v| *v < 0.0) {
        return bad(format!("negative histogram density at cell {i}"));
    }
    if let Some(i) = next.conc.values.iter().position(|v| !(*v >= 0.0)) {
        return bad(format!("concentration {} at cell {i}", next.conc.values[i]));
    }
    if let Some(i) = next.conc.values.iter().zip(&prev.values).position(|(a, b)| a > b) {
        return bad(format!("concentration increased at cell {i}"));
    }
    Ok(())
}

/// The full loop. `observer` sees the initial state and the state after every
/// move; an error from it aborts the run.
pub fn run_sipf_with(
    spec: &ScenarioSpec,
    particles: usize,
    interp: &dyn Interpolator,
    options: &SipfOptions,
    mut observer: impl FnMut(&SipfState) -> Result<()>,
) -> Result<Vec<SipfState>> {
    spec.validate()?;
    let params = spec.params;
    let n_moves = params.step_count()?;
    let mut saves = Vec::with_capacity(options.save_times.len());
    for &t in &options.save_times {
        if !(t >= 0.0 && t <= params.t_end * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument(format!(
                "save time {t} outside [0, {}]",
                params.t_end
            )));
        }
        saves.push(steps_for(t, params.dt)?);
    }
    saves.sort_unstable();
    saves.dedup();

    let rng = RngStream::new(params.seed);
    let noise = BrownianNoise::coarsened(rng, options.noise_substeps);
    let grid = spec.grid;
    let ensemble = sample_particles(spec, particles, &rng)?;
    let rho_hist = bin_particles(&ensemble, &grid)?;
    let mut state = SipfState {
        ensemble,
        conc: discretize(spec, Quantity::Concentration),
        rho_hist,
        step: 0,
        time: 0.0,
    };
    observer(&state)?;
    let mut out = Vec::with_capacity(saves.len());
    let mut next_save = saves.iter().peekable();
    if next_save.peek() == Some(&&0) {
        out.push(state.clone());
        next_save.next();
    }
    for m in 1..=n_moves {
        let conc = update_concentration(&state.conc, &state.rho_hist, params.dt)?;
        let q = interp.query(&state.conc, &state.ensemble.positions)?;
        let ensemble = step_particles(&state.ensemble, &q.gradients, &params, (m - 1) as u64, &noise)?;
        let rho_hist = bin_particles(&ensemble, &grid)?;
        let next = SipfState { ensemble, conc, rho_hist, step: m, time: m as f64 * params.dt };
        check_step(&state.conc, &next)?;
        state = next;
        observer(&state)?;
        if next_save.peek() == Some(&&m) {
            out.push(state.clone());
            next_save.next();
        }
    }
    Ok(out)
}
