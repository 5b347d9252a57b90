//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! The heavy runs (three NSIPF runs at n = 100, T = 40) are shared between
//! tests through `OnceLock` caches, and a global lock keeps the tests from
//! competing for the CPU so wall-clock comparisons stay meaningful.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use phks_core::fdm::run_fdm_observed;
use phks_core::field::{dist2, ScalarField3, Vec3};
use phks_core::harness::{converge_particles, converge_timestep, relative_l2};
use phks_core::interp::{Interpolator, Trilinear};
use phks_core::io::encode_particles;
use phks_core::neural::dataset::{DEFAULT_PATCHES, DEFAULT_PATCH_SIZE};
use phks_core::neural::{default_dataset, default_model, train, ChannelPlan, NeuralInterpolator, TrainConfig};
use phks_core::radial::{lift_radial_to_3d, run_radial, DEFAULT_POINTS};
use phks_core::scenario::{builtin, ConcInit, ScenarioSpec};
use phks_core::sipf::{run_sipf_with, SipfOptions, SipfState};
use phks_core::RngStream;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    // bypass the test harness capture so the line always reaches the log
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn neural() -> &'static NeuralInterpolator {
    static NN: OnceLock<NeuralInterpolator> = OnceLock::new();
    NN.get_or_init(|| NeuralInterpolator::new(default_model().expect("bundled weights")).expect("valid model"))
}

/// Everything the criteria need from one particle run.
#[derive(Debug, Clone)]
struct ParticleRecord {
    outcome: Result<(), String>,
    wall: f64,
    moves: usize,
    max_mass_error: f64,
    count_constant: bool,
    sign_violations: Vec<String>,
    start: Vec<Vec3>,
    end: Vec<Vec3>,
}

fn record_particles(spec: &ScenarioSpec, particles: usize, interp: &dyn Interpolator) -> ParticleRecord {
    let mut rec = ParticleRecord {
        outcome: Ok(()),
        wall: 0.0,
        moves: 0,
        max_mass_error: 0.0,
        count_constant: true,
        sign_violations: Vec::new(),
        start: Vec::new(),
        end: Vec::new(),
    };
    let mass = spec.params.mass;
    let mut prev: Option<ScalarField3> = None;
    let t = Instant::now();
    let result = run_sipf_with(spec, particles, interp, &SipfOptions::at(&[]), |s: &SipfState| {
        rec.moves = s.step;
        rec.max_mass_error = rec.max_mass_error.max((s.rho_hist.integral() - mass).abs() / mass);
        rec.count_constant &= s.ensemble.len() == particles;
        if rec.sign_violations.len() < 5 {
            if s.rho_hist.min() < 0.0 {
                rec.sign_violations.push(format!("rho < 0 at step {}", s.step));
            }
            if s.conc.min() < 0.0 {
                rec.sign_violations.push(format!("c < 0 at step {}", s.step));
            }
            if let Some(p) = &prev {
                if s.conc.values.iter().zip(&p.values).any(|(a, b)| a > b) {
                    rec.sign_violations.push(format!("c increased at step {}", s.step));
                }
            }
        }
        prev = Some(s.conc.clone());
        if s.step == 0 {
            rec.start = s.ensemble.positions.clone();
        }
        rec.end = s.ensemble.positions.clone();
        Ok(())
    });
    rec.wall = t.elapsed().as_secs_f64();
    rec.outcome = result.map(|_| ()).map_err(|e| e.to_string());
    rec
}

fn cached(cache: &'static OnceLock<Mutex<HashMap<String, ParticleRecord>>>, key: &str, make: impl FnOnce() -> ParticleRecord) -> ParticleRecord {
    let map = cache.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = map.lock().unwrap().get(key) {
        return r.clone();
    }
    let r = make();
    map.lock().unwrap().insert(key.to_string(), r.clone());
    r
}

/// NSIPF with P = 20000 on a builtin scenario at its default n = 100, T = 40.
fn nsipf_run(name: &str) -> ParticleRecord {
    static CACHE: OnceLock<Mutex<HashMap<String, ParticleRecord>>> = OnceLock::new();
    cached(&CACHE, name, || record_particles(&builtin::by_name(name).unwrap(), 20_000, neural()))
}

/// Classical SIPF with P = 20000 on a builtin scenario.
fn classical_run(name: &str) -> ParticleRecord {
    static CACHE: OnceLock<Mutex<HashMap<String, ParticleRecord>>> = OnceLock::new();
    cached(&CACHE, name, || record_particles(&builtin::by_name(name).unwrap(), 20_000, &Trilinear))
}

#[derive(Debug, Clone)]
struct FdmRecord {
    outcome: Result<(), String>,
    max_mass_error: f64,
    sign_violations: Vec<String>,
}

fn fdm_run(name: &str) -> FdmRecord {
    static CACHE: OnceLock<Mutex<HashMap<String, FdmRecord>>> = OnceLock::new();
    let map = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = map.lock().unwrap().get(name) {
        return r.clone();
    }
    let spec = builtin::by_name(name).unwrap();
    let mass = spec.params.mass;
    let mut rec = FdmRecord { outcome: Ok(()), max_mass_error: 0.0, sign_violations: Vec::new() };
    let mut prev: Option<ScalarField3> = None;
    let result = run_fdm_observed(&spec, &[spec.params.t_end], |s| {
        rec.max_mass_error = rec.max_mass_error.max((s.rho.integral() - mass).abs() / mass);
        if rec.sign_violations.len() < 5 {
            if s.rho.min() < 0.0 || s.conc.min() < 0.0 {
                rec.sign_violations.push(format!("negative value at t = {}", s.time));
            }
            if let Some(p) = &prev {
                if s.conc.values.iter().zip(&p.values).any(|(a, b)| a > b) {
                    rec.sign_violations.push(format!("c increased at t = {}", s.time));
                }
            }
        }
        prev = Some(s.conc.clone());
    });
    rec.outcome = result.map(|_| ()).map_err(|e| e.to_string());
    map.lock().unwrap().insert(name.to_string(), rec.clone());
    rec
}

/// The scenario of the convergence and determinism studies.
fn study_spec() -> ScenarioSpec {
    let mut s = builtin::one_blob().with_resolution(50).unwrap();
    s.params.t_end = 10.0;
    s
}

#[test]
fn criterion_01_mass_conservation() {
    let _g = serial();
    let r = nsipf_run("one_blob");
    let f = fdm_run("one_blob");
    let pass = r.outcome.is_ok()
        && r.moves == 400
        && r.count_constant
        && r.max_mass_error < 1e-12
        && f.outcome.is_ok()
        && f.max_mass_error < 1e-10;
    let detail = format!(
        "NSIPF {:?}, {} moves, particle count constant {}, max histogram mass error {:.2e}; FDM {:?}, max mass error {:.2e}",
        r.outcome, r.moves, r.count_constant, r.max_mass_error, f.outcome, f.max_mass_error
    );
    verdict(1, "mass conservation", pass, &detail);
}

#[test]
fn criterion_02_non_negativity() {
    let _g = serial();
    let mut problems = Vec::new();
    for (name, _) in builtin::all() {
        for (method, r) in [("sipf-neural", nsipf_run(name)), ("sipf-classical", classical_run(name))] {
            if let Err(e) = &r.outcome {
                problems.push(format!("{name}/{method}: {e}"));
            }
            problems.extend(r.sign_violations.iter().map(|v| format!("{name}/{method}: {v}")));
        }
        let f = fdm_run(name);
        if let Err(e) = &f.outcome {
            problems.push(format!("{name}/fdm: {e}"));
        }
        problems.extend(f.sign_violations.iter().map(|v| format!("{name}/fdm: {v}")));
    }
    let detail = if problems.is_empty() {
        "rho >= 0, c >= 0, c non-increasing at every step for 3 scenarios x 3 methods".to_string()
    } else {
        problems.join("; ")
    };
    verdict(2, "non-negativity", problems.is_empty(), &detail);
}

#[test]
fn criterion_03_diffusion_statistics() {
    let _g = serial();
    let mut spec = builtin::one_blob();
    spec.params.chi = 0.0;
    spec.params.t_end = 10.0;
    let p = 20_000usize;
    let states = run_sipf_with(&spec, p, &Trilinear, &SipfOptions::at(&[10.0]), |_| Ok(())).unwrap();
    let pos = &states[0].ensemble.positions;
    let mut pass = true;
    let mut parts = Vec::new();
    for a in 0..3 {
        let mean = pos.iter().map(|x| x[a]).sum::<f64>() / p as f64;
        let var = pos.iter().map(|x| (x[a] - mean).powi(2)).sum::<f64>() / p as f64;
        let m4 = pos.iter().map(|x| (x[a] - mean).powi(4)).sum::<f64>() / p as f64;
        let se = ((m4 - var * var) / p as f64).sqrt();
        let z = (var - 45.0) / se;
        pass &= z.abs() < 3.0;
        parts.push(format!("axis {a}: var {var:.3} (se {se:.3}, z {z:+.2})"));
    }
    verdict(3, "diffusion statistics", pass, &parts.join(", "));
}

#[test]
fn criterion_04_radial_cross_validation() {
    let _g = serial();
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, chi) in [("chi = 0", 0.0), ("full", 1.0)] {
        let mut spec = builtin::one_blob();
        spec.params.chi = chi;
        spec.params.t_end = 1.0;
        let fdm = phks_core::run_fdm(&spec, &[1.0]).unwrap().pop().unwrap();
        let sol = run_radial(&spec, DEFAULT_POINTS, &[1.0]).unwrap();
        let (rho, c) = lift_radial_to_3d(&sol.states[0], &spec.grid, &sol.center);
        let er = relative_l2(&fdm.rho, &rho).unwrap();
        let ec = relative_l2(&fdm.conc, &c).unwrap();
        pass &= er < 0.02 && ec < 0.02;
        parts.push(format!("{label}: rho {er:.3e}, c {ec:.3e}"));
    }
    verdict(4, "radial/3D cross-validation", pass, &parts.join("; "));
}

#[test]
fn criterion_05_cnn_gradient_check() {
    let _g = serial();
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in [1, 2, 3] {
        let model = common::random_tiny_model(seed);
        let r = common::gradient_check(&model, [4, 4, 4], seed, 1e-3, 1e-3, 1e-6);
        pass &= r.failures.is_empty() && r.compared > 0;
        parts.push(format!(
            "model {seed}: {} compared, worst rel {:.1e}, {} failures, {} at ReLU kinks",
            r.compared,
            r.worst_rel,
            r.failures.len(),
            r.kinks
        ));
    }
    verdict(5, "CNN gradient check", pass, &parts.join("; "));
}

#[test]
fn criterion_06_training_decay() {
    let _g = serial();
    let rng = RngStream::new(builtin::default_params().seed);
    let data = default_dataset(DEFAULT_PATCHES, DEFAULT_PATCH_SIZE, &rng).unwrap();
    let cfg = TrainConfig::default();
    let (_, curve) = train(&data, ChannelPlan::DEFAULT, &cfg, &rng, |_, _| {}).unwrap();
    let (first, last) = (curve[0], *curve.last().unwrap());
    let pass = curve.len() == 100 && last < 0.5 * first && last > 0.0;
    let detail = format!("{} patches, {} epochs: first {first:.4e}, final {last:.4e}, ratio {:.3}", data.len(), curve.len(), last / first);
    verdict(6, "training decay", pass, &detail);
}

#[test]
fn criterion_07_timestep_convergence() {
    let _g = serial();
    let r = converge_timestep(&study_spec(), neural(), &[0.1, 0.05, 0.025, 0.0125], 0.00625, 20_000).unwrap();
    let slope = r.slope_c.unwrap_or(f64::NAN);
    let errs: Vec<String> = r.samples.iter().map(|s| format!("{}: c {:.3e} rho {:.3e}", s.level, s.err_c, s.err_rho)).collect();
    let detail = format!("c slope {slope:.3} (rho slope {:.3}); {}", r.slope_rho.unwrap_or(f64::NAN), errs.join(", "));
    verdict(7, "convergence in dt", (0.7..=1.1).contains(&slope), &detail);
}

#[test]
fn criterion_08_particle_convergence() {
    let _g = serial();
    let spec = study_spec();
    let r = converge_particles(&spec, neural(), &[1000, 2500, 5000, 10000, 25000], 50_000, spec.params.dt).unwrap();
    let slope = r.slope_rho.unwrap_or(f64::NAN);
    let errs: Vec<String> = r.samples.iter().map(|s| format!("{}: rho {:.3e}", s.level, s.err_rho)).collect();
    let detail = format!("rho slope {slope:.3} (c slope {:.3}); {}", r.slope_c.unwrap_or(f64::NAN), errs.join(", "));
    verdict(8, "convergence in P", (-0.65..=-0.30).contains(&slope), &detail);
}

#[test]
fn criterion_09_runtime_orderings() {
    let _g = serial();
    let (nn, cl) = (nsipf_run("one_blob"), classical_run("one_blob"));
    let a = nn.wall < cl.wall;
    let spec = builtin::one_blob();
    let wall = |p: usize, interp: &dyn Interpolator| record_particles(&spec, p, interp).wall;
    let (n1, n10) = (wall(1000, neural()), wall(10_000, neural()));
    let (c1, c10) = (wall(1000, &Trilinear), wall(10_000, &Trilinear));
    let b = n10 < 2.0 * n1;
    let c = c10 >= 3.0 * c1;
    let detail = format!(
        "(a) {} neural {:.1} s vs classical {:.1} s at P = 20000; (b) {} neural P=10000 {n10:.1} s vs P=1000 {n1:.1} s; (c) {} classical P=10000 {c10:.2} s vs P=1000 {c1:.2} s (ratio {:.2})",
        if a { "ok" } else { "violated" },
        nn.wall,
        cl.wall,
        if b { "ok" } else { "violated" },
        if c { "ok" } else { "violated" },
        c10 / c1
    );
    verdict(9, "runtime orderings", a && b && c, &detail);
}

#[test]
fn criterion_10_aggregation() {
    let _g = serial();
    let two = nsipf_run("two_blob");
    let frac = |pos: &[Vec3]| pos.iter().filter(|x| dist2(x, &builtin::CENTER) < 15.0 * 15.0).count() as f64 / pos.len() as f64;
    let (f0, f1) = (frac(&two.start), frac(&two.end));
    let ann = nsipf_run("annuli");
    let ConcInit::Annuli(rings) = builtin::annuli().c0 else { unreachable!() };
    let mean_dist = |pos: &[Vec3]| {
        pos.iter().map(|x| rings.iter().map(|r| r.distance(x)).fold(f64::INFINITY, f64::min)).sum::<f64>() / pos.len() as f64
    };
    let (d0, d1) = (mean_dist(&ann.start), mean_dist(&ann.end));
    let pass = two.outcome.is_ok() && ann.outcome.is_ok() && f1 > f0 && d1 < d0;
    let detail = format!(
        "two_blob fraction within 15 of centre {f0:.4} -> {f1:.4}; annuli mean ring distance {d0:.3} -> {d1:.3}"
    );
    verdict(10, "aggregation behaviour", pass, &detail);
}

#[test]
fn criterion_11_determinism() {
    let _g = serial();
    let spec = study_spec();
    let dump = |threads: usize| -> Vec<Vec<u8>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run_sipf_with(&spec, 20_000, neural(), &SipfOptions::at(&[0.0, 5.0, 10.0]), |_| Ok(()))
                .unwrap()
                .iter()
                .map(|s| encode_particles(&s.ensemble.positions, s.time))
                .collect()
        })
    };
    let (a, b) = (dump(1), dump(4));
    let same = a == b && a.len() == 3;
    let detail = format!("{} dumps compared between 1 and 4 worker threads, identical: {same}", a.len());
    verdict(11, "determinism", same, &detail);
}
