//! Command-line front end: forward runs, controls, weights, tensors,
//! reconstruction, sweeps and synthetic data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use incimg::control::{cutoff_beta, synthesize_control, ControlProblem};
use incimg::error::{Error, Result};
use incimg::forward::{run_perturbed, run_reference, trace_difference, ForwardOptions};
use incimg::harness::config::{load_json, ExperimentConfig};
use incimg::harness::io::{
    image_to_csv, read_trace, spectrum_to_csv, write_atomic, write_json, write_trace, FileDigest, Manifest,
};
use incimg::harness::noise::{add_noise, NoiseModel};
use incimg::harness::sweep::run_sweep;
use incimg::identify::{detect_peaks, estimate_tensors, invert_spectrum, sample_spectrum, Peak, ReconstructionResult, SampleStatus, SpectralGrid};
use incimg::model::{validate_scenario, GridSpec, InclusionShape, PlaneWaveProbe, Scenario};
use incimg::potentials::{shape_tensor, DerivativeSide};
use incimg::weights::solve_theta;

#[derive(Parser, Debug)]
#[command(name = "incimg", version, about = "Time-domain imaging of small permeability inclusions")]
struct Cli {
    /// Worker threads for lattice sampling and sweeps.
    #[arg(long, global = true, env = "INCIMG_WORKERS")]
    workers: Option<usize>,
    /// Seed for every random perturbation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Setup {
    /// Experiment config; supplies scenario, grid, probe and pipeline settings.
    #[arg(long, conflicts_with_all = ["scenario", "grid"])]
    config: Option<PathBuf>,
    #[arg(long, requires = "grid")]
    scenario: Option<PathBuf>,
    #[arg(long, requires = "scenario")]
    grid: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Boundary curl trace of one plane-wave probe.
    Forward {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, value_parser = parse_pair)]
        eta: Option<[f64; 2]>,
        /// Write the difference against the homogeneous medium instead.
        #[arg(long)]
        difference: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Boundary control driving the cut-off probe to rest.
    Control {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, value_parser = parse_pair)]
        eta: Option<[f64; 2]>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weight function of a stored control.
    Weights {
        #[arg(long)]
        control: PathBuf,
        #[arg(long)]
        abs_eta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Polarization tensor of a reference shape.
    Tensor {
        #[arg(long, value_enum)]
        shape: ShapeArg,
        #[arg(long)]
        contrast: f64,
        #[arg(long, default_value_t = 256)]
        nodes: usize,
        /// Minor over major semi-axis of the ellipse.
        #[arg(long, default_value_t = 0.5)]
        aspect: f64,
        #[arg(long, value_enum, default_value_t = ConventionArg::Inside)]
        convention: ConventionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectrum sampling, inversion, localization and tensor fit.
    Reconstruct {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        eta_max: Option<f64>,
        #[arg(long)]
        eta_n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter sweep with a log-log slope fit.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noisy measurement difference for one probe.
    Synth {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, value_parser = parse_pair)]
        eta: Option<[f64; 2]>,
        /// Relative noise level; the config's noise model when absent.
        #[arg(long)]
        noise_level: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeArg {
    Disk,
    Ellipse,
    Star,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConventionArg {
    Inside,
    Outside,
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected kx,ky, got '{s}'"));
    }
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    Ok([p(parts[0])?, p(parts[1])?])
}

/// Any failure while reading or validating inputs.
fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

struct Inputs {
    config: ExperimentConfig,
    files: Vec<PathBuf>,
}

fn load_setup(setup: &Setup) -> Result<Inputs> {
    match (&setup.config, &setup.scenario, &setup.grid) {
        (Some(c), _, _) => Ok(Inputs {
            config: ExperimentConfig::load(c).map_err(config_err)?,
            files: vec![c.clone()],
        }),
        (None, Some(s), Some(g)) => {
            let scenario: Scenario = load_json(s)?;
            let grid: GridSpec = load_json(g)?;
            validate_scenario(&scenario).into_result().map_err(config_err)?;
            grid.check_cfl(&scenario).map_err(config_err)?;
            Ok(Inputs {
                config: ExperimentConfig::new(scenario, grid),
                files: vec![s.clone(), g.clone()],
            })
        }
        _ => Err(Error::Config("give either --config or both --scenario and --grid".into())),
    }
}

fn probe_of(inputs: &Inputs, eta: Option<[f64; 2]>) -> Result<PlaneWaveProbe> {
    let eta = eta
        .or(inputs.config.probe)
        .ok_or_else(|| Error::Config("no wave vector: pass --eta or set probe in the config".into()))?;
    PlaneWaveProbe::new(eta, &inputs.config.scenario.domain).map_err(config_err)
}

/// Output of `reconstruct`; deterministic for fixed inputs.
#[derive(Serialize)]
struct ReconstructionReport {
    spectral: SpectralGrid,
    peaks: Vec<Peak>,
    result: ReconstructionResult,
    samples_failed: usize,
    max_control_iterations: usize,
    max_control_ratio: f64,
    inputs: Vec<FileDigest>,
}

struct Run {
    manifest: Manifest,
    started: Instant,
    primary: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(cli: &Cli, name: &str, primary: &Path, workers: usize) -> Self {
        Self {
            manifest: Manifest::new(name, std::env::args().skip(1).collect(), cli.seed, workers),
            started: Instant::now(),
            primary: primary.to_path_buf(),
            outputs: Vec::new(),
        }
    }

    fn inputs(&mut self, files: &[PathBuf]) -> Result<()> {
        for f in files {
            self.manifest.inputs.push(FileDigest::of(f)?);
        }
        Ok(())
    }

    fn wrote(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn finish(mut self) -> Result<()> {
        for p in &self.outputs {
            self.manifest.outputs.push(FileDigest::of(p)?);
        }
        self.manifest.elapsed_seconds = self.started.elapsed().as_secs_f64();
        write_json(&Manifest::path_for(&self.primary), &self.manifest)
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn ensure_parent(out: &Path) -> Result<()> {
    if let Some(p) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn run(cli: &Cli, workers: usize) -> Result<()> {
    match &cli.command {
        Command::Forward {
            setup,
            eta,
            difference,
            out,
        } => {
            let inputs = load_setup(setup)?;
            let probe = probe_of(&inputs, *eta)?;
            let mut r = Run::new(cli, "forward", out, workers);
            r.inputs(&inputs.files)?;
            let (s, g) = (&inputs.config.scenario, &inputs.config.grid);
            let mut trace = run_perturbed(s, g, &probe, &ForwardOptions::default())?.trace;
            if *difference {
                trace = trace_difference(&trace, &run_reference(s, g, &probe)?)?;
            }
            ensure_parent(out)?;
            write_trace(out, &trace)?;
            r.wrote(out.clone());
            r.finish()
        }
        Command::Control {
            setup,
            eta,
            tol,
            max_iters,
            margin,
            out,
        } => {
            let inputs = load_setup(setup)?;
            let probe = probe_of(&inputs, *eta)?;
            let c = &inputs.config.control;
            let (tol, max_iters, margin) = (tol.unwrap_or(c.tol), max_iters.unwrap_or(c.max_iters), margin.unwrap_or(c.margin));
            let s = &inputs.config.scenario;
            let mut r = Run::new(cli, "control", out, workers);
            r.inputs(&inputs.files)?;
            let beta = cutoff_beta(&s.domain, &s.inclusions, margin).map_err(config_err)?;
            let cp = ControlProblem::new(s.domain.clone(), probe, beta);
            let grid = c.grid.unwrap_or(inputs.config.grid);
            let ctrl = synthesize_control(&cp, &grid, tol, max_iters)?;
            if !ctrl.converged {
                log::warn!("control stopped at ratio {:.3e} after {} iterations", ctrl.ratio, ctrl.iterations);
            }
            ensure_parent(out)?;
            write_trace(out, &ctrl.g)?;
            let sidecar = sibling(out, ".summary.json");
            write_json(&sidecar, &ctrl.summary())?;
            r.wrote(out.clone());
            r.wrote(sidecar);
            r.finish()
        }
        Command::Weights { control, abs_eta, out } => {
            if !(*abs_eta >= 0.0 && abs_eta.is_finite()) {
                return Err(Error::Config(format!("--abs-eta must be non-negative, got {abs_eta}")));
            }
            let g = read_trace(control).map_err(config_err)?;
            if g.n_times() < 3 {
                return Err(Error::Config("the control needs at least 3 time samples".into()));
            }
            let mut r = Run::new(cli, "weights", out, workers);
            r.inputs(std::slice::from_ref(control))?;
            let w = solve_theta(&g, *abs_eta);
            ensure_parent(out)?;
            write_trace(out, &w.theta)?;
            r.wrote(out.clone());
            r.finish()
        }
        Command::Tensor {
            shape,
            contrast,
            nodes,
            aspect,
            convention,
            out,
        } => {
            if !(*contrast > 0.0 && contrast.is_finite()) {
                return Err(Error::Config(format!("--contrast must be positive, got {contrast}")));
            }
            let shape = match shape {
                ShapeArg::Disk => InclusionShape::disk(1.0),
                ShapeArg::Ellipse => InclusionShape::ellipse(1.0, *aspect),
                ShapeArg::Star => InclusionShape::star(1.0, 0.2, 5),
            };
            let side = match convention {
                ConventionArg::Inside => DerivativeSide::Inside,
                ConventionArg::Outside => DerivativeSide::Outside,
            };
            let mut r = Run::new(cli, "tensor", out, workers);
            let t = shape_tensor(&shape, *contrast, *nodes, side).map_err(|e| match e {
                Error::DegenerateShape(_) => config_err(e),
                other => other,
            })?;
            ensure_parent(out)?;
            write_json(out, &t)?;
            r.wrote(out.clone());
            r.finish()
        }
        Command::Reconstruct {
            setup,
            eta_max,
            eta_n,
            out,
        } => {
            let mut inputs = load_setup(setup)?;
            if let Some(seed) = cli.seed {
                inputs.config.noise.seed = seed;
            }
            let cfg = &inputs.config;
            let base = cfg.spectral.unwrap_or(SpectralGrid { eta_max: 8.0, n: 17 });
            let grid = SpectralGrid {
                eta_max: eta_max.unwrap_or(base.eta_max),
                n: eta_n.unwrap_or(base.n),
            };
            grid.validate().map_err(config_err)?;
            let s = &cfg.scenario;
            let alpha = s
                .inclusions
                .first()
                .map(|i| i.alpha)
                .ok_or_else(|| Error::Config("the scenario has no inclusion to set the scale alpha".into()))?;
            let mut r = Run::new(cli, "reconstruct", out, workers);
            r.inputs(&inputs.files)?;
            let samples = sample_spectrum(s, &cfg.grid, &grid, &cfg.pipeline_params())?;
            let img = invert_spectrum(&samples, &grid, &s.domain.rect)?;
            let peaks = detect_peaks(&img, cfg.reconstruction.rel_threshold, cfg.min_separation());
            if peaks.is_empty() {
                return Err(Error::InvalidArgument("no peak above the threshold".into()));
            }
            let centers: Vec<[f64; 2]> = peaks.iter().map(|p| p.center).collect();
            let result = estimate_tensors(&samples, &centers, alpha, s.domain.mu0)?;
            let prov: Vec<_> = samples.iter().filter_map(|x| x.provenance.as_ref()).collect();
            let report = ReconstructionReport {
                spectral: grid,
                peaks,
                result,
                samples_failed: samples.iter().filter(|x| matches!(x.status, SampleStatus::Failed(_))).count(),
                max_control_iterations: prov.iter().map(|p| p.control_iterations).max().unwrap_or(0),
                max_control_ratio: prov.iter().map(|p| p.control_ratio).fold(0.0, f64::max),
                inputs: r.manifest.inputs.clone(),
            };
            ensure_parent(out)?;
            write_json(out, &report)?;
            let spectrum = sibling(out, ".spectrum.csv");
            write_atomic(&spectrum, &spectrum_to_csv(&samples)?)?;
            let image = sibling(out, ".image.csv");
            write_atomic(&image, &image_to_csv(&img)?)?;
            r.wrote(out.clone());
            r.wrote(spectrum);
            r.wrote(image);
            r.finish()
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::load(config).map_err(config_err)?;
            let spec = cfg
                .sweep
                .clone()
                .ok_or_else(|| Error::Config("the config has no sweep section".into()))?;
            let mut r = Run::new(cli, "sweep", out, workers);
            r.inputs(std::slice::from_ref(config))?;
            let report = run_sweep(&cfg.scenario, &cfg.grid, &spec, &cfg.pipeline_params())?;
            ensure_parent(out)?;
            write_json(out, &report)?;
            r.wrote(out.clone());
            r.finish()?;
            match report.failure {
                Some(why) => Err(Error::InvalidArgument(format!("sweep aborted: {why}"))),
                None => Ok(()),
            }
        }
        Command::Synth {
            setup,
            eta,
            noise_level,
            out,
        } => {
            let inputs = load_setup(setup)?;
            let probe = probe_of(&inputs, *eta)?;
            let cfg = &inputs.config;
            let mut nm = match noise_level {
                Some(l) => NoiseModel::gaussian(*l, cfg.noise.seed),
                None => cfg.noise,
            };
            if let Some(seed) = cli.seed {
                nm.seed = seed;
            }
            nm.validate().map_err(config_err)?;
            let mut r = Run::new(cli, "synth", out, workers);
            r.inputs(&inputs.files)?;
            let (s, g) = (&cfg.scenario, &cfg.grid);
            let measured = run_perturbed(s, g, &probe, &ForwardOptions::default())?.trace;
            let dm = trace_difference(&measured, &run_reference(s, g, &probe)?)?;
            ensure_parent(out)?;
            write_trace(out, &add_noise(&dm, &nm))?;
            r.wrote(out.clone());
            r.finish()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        log::warn!("worker pool: {e}");
    }
    match run(&cli, workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_) | Error::Json(_)) { 2 } else { 1 })
        }
    }
}
