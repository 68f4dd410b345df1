use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{error::ErrorKind, CommandFactory, Parser, ValueEnum};
use log::error;

use phasefield_core::adapt::{self, AdaptError, CycleSummary, StepView};
use phasefield_core::output::{
    write_cycles_csv, write_estimator_dump, write_qoi_csv, write_vtk, RunManifest,
};
use phasefield_core::qoi::QoiRecord;
use phasefield_core::scenarios::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Uniform,
    Adaptive,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Uniform => "uniform",
            Mode::Adaptive => "adaptive",
        }
    }
}

fn eps_factor(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if [2.0, 1.0, 0.5].contains(&v) {
        Ok(v)
    } else {
        Err("must be one of 2.0, 1.0, 0.5".into())
    }
}

/// Quasi-static phase-field fracture on the slit square with space-time adaptivity.
#[derive(Debug, Parser)]
#[command(name = "phasefield", version)]
struct Args {
    /// Benchmark preset.
    #[arg(long, value_parser = ["shear", "tension"])]
    scenario: String,
    #[arg(long, value_enum, default_value_t = Mode::Adaptive)]
    mode: Mode,
    /// Number of adaptive solve sweeps over the horizon.
    #[arg(long)]
    cycles: Option<u32>,
    /// Uniform refinements of the coarse mesh (uniform mode).
    #[arg(long)]
    uniform_levels: Option<u32>,
    /// ε = eps_factor · h_start.
    #[arg(long, value_parser = eps_factor)]
    eps_factor: Option<f64>,
    /// Dörfler marking fraction.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Uniform refinements giving the start mesh and h_start.
    #[arg(long)]
    pre_refinements: Option<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// File of `key = value` overrides, applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write per-node estimator contributions for every step.
    #[arg(long)]
    dump_estimator: bool,
    /// Write the mesh of every step.
    #[arg(long)]
    dump_mesh: bool,
    /// Write a VTK file every K steps (0: never).
    #[arg(long, default_value_t = 0)]
    vtk_every: usize,
}

fn build_config(args: &Args) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::preset(&args.scenario)?;
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_overrides(&text)
            .with_context(|| format!("in {}", path.display()))?;
        if cfg.scenario.name() != args.scenario {
            bail!(
                "config file selects scenario '{}' but --scenario is '{}'",
                cfg.scenario,
                args.scenario
            );
        }
    }
    if let Some(p) = args.pre_refinements {
        cfg.set_pre_refinements(p);
    }
    if let Some(c) = args.cycles {
        cfg.cycles = c;
    }
    if let Some(l) = args.uniform_levels {
        cfg.uniform_levels = Some(l);
    }
    if let Some(e) = args.eps_factor {
        cfg.eps_factor = e;
    }
    if let Some(t) = args.theta {
        cfg.theta = t;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(t) = args.t_end {
        cfg.t_end = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Run {
    manifest: RunManifest,
    records: Vec<QoiRecord>,
    io_error: Option<io::Error>,
}

impl Run {
    fn write_step(&mut self, v: &StepView, args: &Args) -> io::Result<()> {
        let tag = format!("step_{:04}_cycle{}", v.step, v.cycle);
        if args.vtk_every > 0 && v.step.is_multiple_of(args.vtk_every) {
            let mut f = self.manifest.create(format!("vtk/{tag}.vtk"))?;
            write_vtk(v.state, Some(v.report), &mut f)?;
            f.flush()?;
        }
        if args.dump_estimator {
            let mut f = self.manifest.create(format!("estimator/{tag}.txt"))?;
            write_estimator_dump(v.state, v.report, &mut f)?;
            f.flush()?;
        }
        if args.dump_mesh {
            let mut f = self.manifest.create(format!("mesh/{tag}.txt"))?;
            f.write_all(v.state.space.mesh().dump().as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    fn finish(&mut self, cycles: &[CycleSummary], status: String) -> io::Result<()> {
        let mut f = self.manifest.create("qoi.csv")?;
        write_qoi_csv(&self.records, &mut f)?;
        f.flush()?;
        let mut f = self.manifest.create("cycles.csv")?;
        write_cycles_csv(cycles, &mut f)?;
        f.flush()?;
        self.manifest.status = status;
        self.manifest.save()
    }
}

fn execute(args: &Args, cfg: &ScenarioConfig) -> Result<bool> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut run = Run {
        manifest: RunManifest::new(&args.out, cfg, args.mode.name()),
        records: Vec::new(),
        io_error: None,
    };
    run.manifest
        .save()
        .with_context(|| format!("writing to {}", args.out.display()))?;

    let mut cycles = Vec::new();
    let mut observer = |v: &StepView| {
        run.records.push(v.qoi.clone());
        if run.io_error.is_none() {
            if let Err(e) = run.write_step(v, args) {
                run.io_error = Some(e);
            }
        }
    };
    let outcome: Result<(), AdaptError> = match args.mode {
        Mode::Adaptive => adapt::run_adaptive(cfg, &mut observer).map(|(_, s)| cycles = s),
        Mode::Uniform => {
            let levels = cfg.uniform_levels.unwrap_or(cfg.pre_refinements);
            adapt::run_uniform(cfg, levels, &mut observer).map(|(_, s)| cycles = vec![s])
        }
    };
    if let Some(e) = run.io_error.take() {
        return Err(e).context("writing step output");
    }
    let status = match &outcome {
        Ok(()) => "completed".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    run.finish(&cycles, status).context("writing results")?;
    if let Err(e) = outcome {
        error!("{e}");
        eprintln!(
            "error: {e} (partial results kept in {})",
            args.out.display()
        );
        return Ok(false);
    }
    Ok(true)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.mode == Mode::Uniform && args.cycles.is_some() {
        Args::command()
            .error(
                ErrorKind::ArgumentConflict,
                "--cycles cannot be used with --mode uniform",
            )
            .exit();
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = build_config(&args).and_then(|cfg| execute(&args, &cfg));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
