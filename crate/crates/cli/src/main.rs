use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use phks_core::harness::{bench, converge_particles, converge_timestep, run_method, Axis, Method};
use phks_core::interp::{Interpolator, Trilinear};
use phks_core::io::write_radial_solution;
use phks_core::neural::dataset::{snapshot_times, DEFAULT_PATCHES, DEFAULT_PATCH_SIZE};
use phks_core::neural::{
    default_dataset, default_model, load_model, save_model, train, write_loss_curve, ChannelPlan, NeuralInterpolator,
    TrainConfig,
};
use phks_core::radial::DEFAULT_POINTS;
use phks_core::{builtin, run_radial, RngStream, ScenarioSpec};

#[derive(Parser, Debug)]
#[command(name = "phks", version, about = "Keller-Segel chemotaxis solvers, particle methods and CNN interpolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a concentric one-blob scenario with the radial solver.
    GenRadial(GenRadialArgs),
    /// Train the restoration network on lifted radial solutions.
    Train(TrainArgs),
    /// Run one solver and write snapshots and metrics.
    Run(RunArgs),
    /// Convergence study in particle count or time step.
    Converge(ConvergeArgs),
    /// Wall-clock comparison of the solvers.
    Bench(BenchArgs),
}

/// Options shared by every scenario-driven subcommand.
#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario JSON file or builtin name (one_blob, two_blob, annuli).
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    dt: Option<f64>,
    /// Grid cells per axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

impl ScenarioArgs {
    fn load(&self) -> anyhow::Result<ScenarioSpec> {
        let path = Path::new(&self.scenario);
        let mut spec = if path.is_file() {
            ScenarioSpec::load(path).with_context(|| format!("loading scenario {}", path.display()))?
        } else if let Some(s) = builtin::by_name(&self.scenario) {
            s
        } else {
            bail!("scenario '{}' is neither a file nor a builtin name", self.scenario);
        };
        if let Some(n) = self.grid {
            spec = spec.with_resolution(n)?;
        }
        if let Some(dt) = self.dt {
            spec.params.dt = dt;
        }
        if let Some(t) = self.t_end {
            spec.params.t_end = t;
        }
        if let Some(s) = self.seed {
            spec.params.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
struct GenRadialArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// Radial grid points.
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    points: usize,
    /// Snapshot times; 50 uniform random times in (0, T] when omitted.
    #[arg(long = "save-times", value_delimiter = ',')]
    save_times: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch)]
    batch: usize,
    #[arg(long, default_value_t = DEFAULT_PATCHES)]
    patches: usize,
    #[arg(long = "patch-size", default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    #[arg(long, default_value_t = builtin::default_params().seed)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    #[arg(long, default_value = "sipf-neural")]
    method: Method,
    #[arg(long, default_value_t = 20_000)]
    particles: usize,
    /// Weights file; the bundled network when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Snapshot times; 0 and T when omitted.
    #[arg(long = "save-times", value_delimiter = ',')]
    save_times: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    #[arg(long)]
    axis: Axis,
    /// Interpolator inside the particle loop.
    #[arg(long, default_value = "sipf-neural")]
    method: Method,
    /// Particle counts studied (particles axis).
    #[arg(long = "particle-list", value_delimiter = ',', default_values_t = [1000, 2500, 5000, 10000, 25000])]
    particle_list: Vec<usize>,
    #[arg(long = "reference-particles", default_value_t = 50_000)]
    reference_particles: usize,
    /// Time steps studied (timestep axis), decreasing.
    #[arg(long = "dt-list", value_delimiter = ',', default_values_t = [0.1, 0.05, 0.025, 0.0125])]
    dt_list: Vec<f64>,
    #[arg(long = "reference-dt", default_value_t = 0.00625)]
    reference_dt: f64,
    /// Particle count of the timestep study.
    #[arg(long, default_value_t = 20_000)]
    particles: usize,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_values_t = [25, 50, 100])]
    resolutions: Vec<usize>,
    #[arg(long, default_value_t = 20_000)]
    particles: usize,
    #[arg(long)]
    model: Option<PathBuf>,
}

fn neural(model: &Option<PathBuf>) -> anyhow::Result<NeuralInterpolator> {
    let m = match model {
        Some(p) => load_model(p).with_context(|| format!("loading weights {}", p.display()))?,
        None => default_model()?,
    };
    Ok(NeuralInterpolator::new(m)?)
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_gen_radial(a: &GenRadialArgs) -> anyhow::Result<()> {
    let spec = a.common.load()?;
    create_out(&a.common.out)?;
    let times = match &a.save_times {
        Some(t) => t.clone(),
        None => snapshot_times(50, spec.params.t_end, &RngStream::new(spec.params.seed), 0),
    };
    let sol = run_radial(&spec, a.points, &times)?;
    write_radial_solution(&sol, &a.common.out)?;
    info!("wrote {} radial snapshots to {}", sol.states.len(), a.common.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    create_out(&a.out)?;
    let rng = RngStream::new(a.seed);
    let data = default_dataset(a.patches, a.patch_size, &rng)?;
    info!("dataset: {} patches of edge {}", data.len(), a.patch_size);
    let cfg = TrainConfig { epochs: a.epochs, lr: a.lr, batch: a.batch, ..TrainConfig::default() };
    let (model, curve) = train(&data, ChannelPlan::DEFAULT, &cfg, &rng, |e, l| info!("epoch {e}: mean mse {l:.6e}"))?;
    save_model(&model, a.out.join("model.phkw"))?;
    write_loss_curve(&curve, a.out.join("loss_curve.csv"))?;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> anyhow::Result<()> {
    let spec = a.common.load()?;
    let times = a.save_times.clone().unwrap_or_else(|| vec![0.0, spec.params.t_end]);
    let nn = if a.method == Method::SipfNeural { Some(neural(&a.model)?) } else { None };
    let s = run_method(&spec, a.method, a.particles, nn.as_ref().map(|n| n as &dyn Interpolator), &times, &a.common.out)?;
    info!("{}: {} steps in {:.2} s, {} snapshots", s.method, s.steps, s.wall_seconds, s.snapshots);
    Ok(())
}

fn cmd_converge(a: &ConvergeArgs) -> anyhow::Result<()> {
    let spec = a.common.load()?;
    create_out(&a.common.out)?;
    let nn;
    let interp: &dyn Interpolator = match a.method {
        Method::SipfNeural => {
            nn = neural(&a.model)?;
            &nn
        }
        Method::SipfClassical => &Trilinear,
        Method::Fdm => bail!("convergence studies need a particle method"),
    };
    let report = match a.axis {
        Axis::Particles => converge_particles(&spec, interp, &a.particle_list, a.reference_particles, spec.params.dt)?,
        Axis::Timestep => converge_timestep(&spec, interp, &a.dt_list, a.reference_dt, a.particles)?,
    };
    report.write_csv(a.common.out.join("convergence.csv"))?;
    info!("{} slopes: rho {:?}, c {:?}", report.axis, report.slope_rho, report.slope_c);
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let spec = a.common.load()?;
    create_out(&a.common.out)?;
    let nn = if a.methods.contains(&Method::SipfNeural) { Some(neural(&a.model)?) } else { None };
    let report = bench(
        &spec,
        &a.methods,
        &a.resolutions,
        a.particles,
        spec.params.t_end,
        nn.as_ref().map(|n| n as &dyn Interpolator),
    )?;
    report.write_csv(a.common.out.join("bench.csv"))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenRadial(a) => cmd_gen_radial(a),
        Command::Train(a) => cmd_train(a),
        Command::Run(a) => cmd_run(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
