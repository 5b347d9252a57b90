//! Wall-clock benchmarks of the three solvers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::run_fdm_with_stats;
use crate::interp::{Interpolator, Trilinear};
use crate::scenario::ScenarioSpec;
use crate::sipf::run_sipf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Fdm,
    SipfClassical,
    SipfNeural,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fdm, Method::SipfClassical, Method::SipfNeural];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Fdm => "fdm",
            Method::SipfClassical => "sipf-classical",
            Method::SipfNeural => "sipf-neural",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}' (fdm|sipf-classical|sipf-neural)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    /// 0 for the grid solver.
    pub particles: usize,
    pub seconds: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "n", "P", "seconds", "steps"])?;
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.n.to_string(),
                r.particles.to_string(),
                format!("{:.6}", r.seconds),
                r.steps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Time one full run of `method` on `spec` as given.
pub fn time_run(method: Method, spec: &ScenarioSpec, particles: usize, neural: Option<&dyn Interpolator>) -> Result<BenchRow> {
    let start = Instant::now();
    let steps = match method {
        Method::Fdm => run_fdm_with_stats(spec, &[spec.params.t_end])?.1.steps,
        Method::SipfClassical => {
            run_sipf(spec, particles, &Trilinear, &[spec.params.t_end])?;
            spec.params.step_count()?
        }
        Method::SipfNeural => {
            let interp = neural.ok_or_else(|| Error::InvalidArgument("sipf-neural needs a model".into()))?;
            run_sipf(spec, particles, interp, &[spec.params.t_end])?;
            spec.params.step_count()?
        }
    };
    let seconds = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    let particles = if method == Method::Fdm { 0 } else { particles };
    Ok(BenchRow { method, n: spec.grid.n, particles, seconds, steps })
}

/// Time every method at every resolution with `dt = 0.1` up to `t_end`.
pub fn bench(
    spec: &ScenarioSpec,
    methods: &[Method],
    resolutions: &[usize],
    particles: usize,
    t_end: f64,
    neural: Option<&dyn Interpolator>,
) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &n in resolutions {
        let mut s = spec.with_resolution(n)?;
        s.params.dt = 0.1;
        s.params.t_end = t_end;
        s.validate()?;
        for &m in methods {
            let row = time_run(m, &s, particles, neural)?;
            log::info!("{} n={} P={}: {:.3} s over {} steps", row.method, row.n, row.particles, row.seconds, row.steps);
            report.rows.push(row);
        }
    }
    Ok(report)
}
