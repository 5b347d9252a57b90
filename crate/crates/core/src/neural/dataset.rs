//! Training patches cut from lifted radial solutions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Grid3, ScalarField3};
use crate::radial::{lift_concentration, run_radial, RadialSolution, DEFAULT_POINTS};
use crate::rng::{RngStream, Stream};
use crate::scenario::{builtin, ConcInit, ScenarioSpec};

use super::augment::{augment_patch, Patch, TrainingPatch};

/// A patch is kept only if some voxel exceeds this fraction of the snapshot maximum.
pub const ACTIVE_FRACTION: f64 = 1e-6;
pub const DEFAULT_PATCHES: usize = 200;
pub const DEFAULT_PATCH_SIZE: usize = 32;
pub const SNAPSHOTS_PER_SOLUTION: usize = 10;
const MAX_CORNER_TRIES: usize = 1000;

/// Concentric one-blob variants used for the default corpus: several
/// concentration widths at unit mass, plus a heavy blob that carves a
/// depression into `c`.
pub fn corpus_scenarios() -> Vec<ScenarioSpec> {
    let variant = |sigma: f64, mass: f64| {
        let mut s = builtin::one_blob();
        s.params.mass = mass;
        if let ConcInit::Blobs(b) = &mut s.c0 {
            b[0].sigma = sigma;
        }
        s
    };
    vec![variant(3.0, 1.0), variant(6.0, 1.0), variant(10.0, 1.0), variant(14.0, 1.0), variant(10.0, 400.0)]
}

/// `count` sorted times drawn uniformly from `(0, t_end]`.
pub fn snapshot_times(count: usize, t_end: f64, rng: &RngStream, key: u64) -> Vec<f64> {
    let mut cur = rng.cursor(Stream::Snapshot, key, 0);
    let mut t: Vec<f64> = (0..count).map(|_| t_end * (1.0 - cur.uniform())).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Radial solutions with random snapshot times for every corpus scenario.
pub fn default_corpus(m: usize, rng: &RngStream) -> Result<Vec<RadialSolution>> {
    corpus_scenarios()
        .par_iter()
        .enumerate()
        .map(|(k, spec)| {
            let times = snapshot_times(SNAPSHOTS_PER_SOLUTION, spec.params.t_end, rng, k as u64);
            run_radial(spec, m, &times)
        })
        .collect()
}

/// Snapshot drawn for each patch, uniformly over `n_snapshots`.
pub fn plan_draws(n_snapshots: usize, n_patches: usize, rng: &RngStream) -> Vec<usize> {
    (0..n_patches).map(|i| rng.cursor(Stream::Dataset, i as u64, 0).below(n_snapshots)).collect()
}

fn crop(field: &ScalarField3, corner: [usize; 3], edge: usize, scale: f64) -> Patch {
    let mut data = Vec::with_capacity(edge * edge * edge);
    for x in 0..edge {
        for y in 0..edge {
            for z in 0..edge {
                data.push((field.at(corner[0] + x, corner[1] + y, corner[2] + z) * scale) as f32);
            }
        }
    }
    Patch { dims: [edge; 3], data }
}

/// Cut `n_patches` augmented patches of edge `patch_size` from the lifted
/// concentration of randomly chosen snapshots. Each snapshot is normalised by
/// its maximum. Patches are returned in draw order; draws that cannot be
/// served are skipped with a warning.
pub fn build_dataset(
    solutions: &[RadialSolution],
    grid: &Grid3,
    n_patches: usize,
    patch_size: usize,
    rng: &RngStream,
) -> Result<Vec<TrainingPatch>> {
    grid.validate()?;
    if patch_size == 0 || patch_size > grid.n {
        return Err(Error::InvalidArgument(format!("patch size {patch_size} does not fit a grid of {} cells", grid.n)));
    }
    if n_patches == 0 {
        return Ok(Vec::new());
    }
    let snapshots: Vec<(usize, usize)> =
        solutions.iter().enumerate().flat_map(|(s, sol)| (0..sol.states.len()).map(move |k| (s, k))).collect();
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("no radial snapshots to cut patches from".into()));
    }
    let draws = plan_draws(snapshots.len(), n_patches, rng);
    let mut out: Vec<(usize, TrainingPatch)> = Vec::with_capacity(n_patches);
    let span = grid.n - patch_size + 1;
    for (snap, &(s, k)) in snapshots.iter().enumerate() {
        let mine: Vec<usize> = (0..n_patches).filter(|i| draws[*i] == snap).collect();
        if mine.is_empty() {
            continue;
        }
        let sol = &solutions[s];
        let state = &sol.states[k];
        let field = lift_concentration(state, grid, &sol.center);
        let max = field.max();
        if !(max.is_finite() && max > 0.0) {
            log::warn!("snapshot {snap} (t = {}) has no active region; skipping {} patches", state.time, mine.len());
            continue;
        }
        let scale = 1.0 / max;
        let made: Vec<Result<Option<(usize, TrainingPatch)>>> = mine
            .par_iter()
            .map(|&i| {
                let mut cur = rng.cursor(Stream::Dataset, i as u64, 0);
                let _ = cur.below(snapshots.len());
                for _ in 0..MAX_CORNER_TRIES {
                    let corner = [cur.below(span), cur.below(span), cur.below(span)];
                    let patch = crop(&field, corner, patch_size, scale);
                    if patch.data.iter().any(|v| *v as f64 > ACTIVE_FRACTION) {
                        let t = augment_patch(&patch, &mut rng.cursor(Stream::Augment, i as u64, 0))?;
                        return Ok(Some((i, t)));
                    }
                }
                log::warn!("no active patch found for draw {i} in snapshot {snap}; skipping");
                Ok(None)
            })
            .collect();
        for m in made {
            if let Some(p) = m? {
                out.push(p);
            }
        }
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

/// The default dataset on the builtin 100^3 grid.
pub fn default_dataset(n_patches: usize, patch_size: usize, rng: &RngStream) -> Result<Vec<TrainingPatch>> {
    let corpus = default_corpus(DEFAULT_POINTS, rng)?;
    let grid = builtin::one_blob().grid;
    build_dataset(&corpus, &grid, n_patches, patch_size, rng)
}
