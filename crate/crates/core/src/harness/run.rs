//! Single runs with their field and particle dumps.

use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fdm::run_fdm_with_stats;
use crate::interp::{Interpolator, Trilinear};
use crate::io::{write_csv, write_field, write_particles};
use crate::scenario::ScenarioSpec;
use crate::sipf::{run_sipf_with, SipfOptions};

use super::bench::Method;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub steps: usize,
    pub wall_seconds: f64,
    pub snapshots: usize,
}

fn stamp(t: f64) -> String {
    format!("t{t:.4}")
}

/// Run `method` on `spec`, writing under `out`:
/// `rho_<t>.phks` and `c_<t>.phks` per save time, `particles_<t>.phkp` for the
/// particle methods, `metrics.csv` (one row per snapshot) and `run.csv`.
pub fn run_method(
    spec: &ScenarioSpec,
    method: Method,
    particles: usize,
    neural: Option<&dyn Interpolator>,
    save_times: &[f64],
    out: &Path,
) -> Result<RunSummary> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut metrics: Vec<Vec<String>> = Vec::new();
    let (steps, snapshots, dt_min, dt_max) = match method {
        Method::Fdm => {
            let (states, stats) = run_fdm_with_stats(spec, save_times)?;
            for s in &states {
                write_field(&s.rho, out.join(format!("rho_{}.phks", stamp(s.time))))?;
                write_field(&s.conc, out.join(format!("c_{}.phks", stamp(s.time))))?;
                metrics.push(
                    [s.time, s.rho.integral(), s.rho.max(), s.conc.max(), f64::NAN, f64::NAN, f64::NAN]
                        .map(|v| v.to_string())
                        .to_vec(),
                );
            }
            (stats.steps, states.len(), stats.dt_min, stats.dt_max)
        }
        Method::SipfClassical | Method::SipfNeural => {
            let interp: &dyn Interpolator = match method {
                Method::SipfNeural => neural.ok_or_else(|| Error::InvalidArgument("sipf-neural needs a model".into()))?,
                _ => &Trilinear,
            };
            let states = run_sipf_with(spec, particles, interp, &SipfOptions::at(save_times), |_| Ok(()))?;
            for s in &states {
                let tag = stamp(s.time);
                write_particles(&s.ensemble.positions, s.time, out.join(format!("particles_{tag}.phkp")))?;
                write_field(&s.rho_hist, out.join(format!("rho_{tag}.phks")))?;
                write_field(&s.conc, out.join(format!("c_{tag}.phks")))?;
                let (_, var) = s.ensemble.moments();
                metrics.push(
                    [s.time, s.rho_hist.integral(), s.rho_hist.max(), s.conc.max(), var[0], var[1], var[2]]
                        .map(|v| v.to_string())
                        .to_vec(),
                );
            }
            let steps = spec.params.step_count()?;
            (steps, states.len(), spec.params.dt, spec.params.dt)
        }
    };
    let wall_seconds = start.elapsed().as_secs_f64();
    write_csv(out.join("metrics.csv"), &["time", "mass", "rho_max", "c_max", "var_x", "var_y", "var_z"], metrics)?;
    let p = if method == Method::Fdm { 0 } else { particles };
    write_csv(
        out.join("run.csv"),
        &["method", "n", "P", "steps", "dt_min", "dt_max", "wall_seconds"],
        [[
            method.to_string(),
            spec.grid.n.to_string(),
            p.to_string(),
            steps.to_string(),
            dt_min.to_string(),
            dt_max.to_string(),
            format!("{wall_seconds:.6}"),
        ]],
    )?;
    Ok(RunSummary { method, steps, wall_seconds, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{read_field, read_particles};
    use crate::scenario::builtin;

    #[test]
    fn sipf_run_writes_dumps_and_metrics() {
        let spec = builtin::one_blob().with_resolution(12).unwrap();
        let mut spec = spec;
        spec.params.t_end = 0.5;
        let dir = tempfile::tempdir().unwrap();
        let s = run_method(&spec, Method::SipfClassical, 300, None, &[0.0, 0.5], dir.path()).unwrap();
        assert_eq!((s.steps, s.snapshots), (5, 2));
        let (pos, t) = read_particles(dir.path().join("particles_t0.5000.phkp")).unwrap();
        assert_eq!((pos.len(), t), (300, 0.5));
        let rho = read_field(dir.path().join("rho_t0.5000.phks")).unwrap();
        assert!((rho.integral() - 1.0).abs() < 1e-12);
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 3);
        assert!(dir.path().join("run.csv").exists());
    }

    #[test]
    fn fdm_run_writes_fields() {
        let mut spec = builtin::one_blob().with_resolution(10).unwrap();
        spec.params.t_end = 0.2;
        let dir = tempfile::tempdir().unwrap();
        let s = run_method(&spec, Method::Fdm, 0, None, &[0.2], dir.path()).unwrap();
        assert_eq!(s.snapshots, 1);
        assert!(read_field(dir.path().join("c_t0.2000.phks")).is_ok());
        assert!(run_method(&spec, Method::SipfNeural, 10, None, &[0.2], dir.path()).is_err());
    }
}
