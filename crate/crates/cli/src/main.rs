//! `mobctl`: optimal control and guidance of mobile actuators for a 2D
//! diffusion-advection process.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mobctl_core::bench::{
    convergence_study, snapshots, solve_guidance, strategy_table, Scenario, Strategy,
};
use mobctl_core::config::{load_config, ScenarioConfig};
use mobctl_core::exec::Exec;
use mobctl_core::export::ResultWriter;
use mobctl_core::spectral::BoundaryCondition;
use mobctl_core::sweep::optimize;
use mobctl_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(
    name = "mobctl",
    version,
    about = "Joint LQR control and actuator guidance for a 2D diffusion-advection process"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    /// Log more (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Scenario file (TOML). Missing keys take the preset's values.
    #[arg(long, global = true, env = "MOBCTL_CONFIG")]
    config: Option<PathBuf>,

    /// Start from a named preset instead of the config file.
    #[arg(long, global = true, env = "MOBCTL_PRESET", conflicts_with = "config")]
    preset: Option<String>,

    #[arg(long, global = true, env = "MOBCTL_BC", value_enum)]
    bc: Option<Bc>,

    /// Simulate strategies without the moving disturbance.
    #[arg(long, global = true, env = "MOBCTL_NO_DISTURBANCE")]
    no_disturbance: bool,

    /// Time steps over the horizon.
    #[arg(long, global = true, env = "MOBCTL_GRID_STEPS")]
    grid_steps: Option<usize>,

    #[arg(long, global = true, env = "MOBCTL_MAX_ITERS")]
    max_iters: Option<usize>,

    /// Basis functions per axis.
    #[arg(long, global = true, env = "MOBCTL_N_MODES")]
    n_modes: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Bc {
    Dirichlet,
    Neumann,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the guidance and export trajectory, guidance and control.
    Solve {
        #[arg(long, env = "MOBCTL_OUT", default_value = "out/solve")]
        out: PathBuf,
    },
    /// Compare the five strategies; exits nonzero if their ordering breaks.
    Bench {
        #[arg(long, env = "MOBCTL_OUT", default_value = "out/bench")]
        out: PathBuf,
    },
    /// Optimal cost against the number of basis functions per axis.
    Converge {
        #[arg(long, env = "MOBCTL_OUT", default_value = "out/converge")]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        min_modes: usize,
        #[arg(long, default_value_t = 20)]
        max_modes: usize,
        /// Start every size from p ≡ 0 instead of the optimum at the configured size.
        #[arg(long)]
        cold: bool,
        /// Iteration cap per size (defaults to the optimizer's `max_iters`).
        #[arg(long)]
        polish_iters: Option<usize>,
    },
    /// Load and validate the scenario, then print it with its hash.
    Validate,
}

impl Overrides {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => ScenarioConfig::preset(name)?,
            (None, None) => ScenarioConfig::default(),
        };
        if let Some(bc) = self.bc {
            cfg.boundary = match bc {
                Bc::Dirichlet => BoundaryCondition::Dirichlet,
                Bc::Neumann => BoundaryCondition::Neumann,
            };
        }
        if self.no_disturbance {
            cfg.disturbance = false;
        }
        if let Some(k) = self.grid_steps {
            cfg.grid_steps = k;
        }
        if let Some(n) = self.max_iters {
            cfg.optimizer.max_iters = n;
        }
        if let Some(n) = self.n_modes {
            cfg.modes = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOBCTL_LOG", level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Validate => {
            println!("# config_hash={}", cfg.hash());
            print!("{}", cfg.to_toml_string());
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve { out } => cmd_solve(&cfg, out),
        Command::Bench { out } => cmd_bench(&cfg, out),
        Command::Converge {
            out,
            min_modes,
            max_modes,
            cold,
            polish_iters,
        } => cmd_converge(&cfg, out, min_modes, max_modes, cold, polish_iters),
    }
}

fn cmd_solve(cfg: &ScenarioConfig, out: PathBuf) -> Result<ExitCode> {
    let start = Instant::now();
    let problem = cfg.problem(Exec::default())?;
    let (sol, stalled) = match optimize(&problem, &problem.zero_guidance(), &cfg.optimizer) {
        Ok(sol) => (sol, None),
        Err(Error::Stalled {
            iteration,
            objective,
            gradient_norm,
            best,
        }) => (*best, Some((iteration, objective, gradient_norm))),
        Err(e) => return Err(e.into()),
    };
    let mut w = ResultWriter::create(&out, cfg)?;
    w.write_solution(&sol, &problem.fleet)?;
    w.write_metadata(&[
        ("command", "solve".into()),
        ("iterations", sol.iterations.to_string()),
        ("converged", sol.converged.to_string()),
        ("objective", sol.objective.to_string()),
        ("pde_cost", sol.pde_cost.to_string()),
        ("mobility_cost", sol.mobility_cost.to_string()),
        ("gradient_norm", sol.gradient_norm.to_string()),
        ("wall_seconds", start.elapsed().as_secs_f64().to_string()),
    ])?;
    println!(
        "objective {:.6} (pde {:.6}, mobility {:.6}) after {} iterations; wrote {}",
        sol.objective,
        sol.pde_cost,
        sol.mobility_cost,
        sol.iterations,
        out.display()
    );
    if let Some((iteration, objective, gradient_norm)) = stalled {
        eprintln!(
            "optimizer stalled at iteration {iteration}: objective {objective:.6e}, projected-gradient norm {gradient_norm:.3e}; best iterate exported"
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(cfg: &ScenarioConfig, out: PathBuf) -> Result<ExitCode> {
    let start = Instant::now();
    let scenario = Scenario::from_config(cfg, Exec::default())?;
    let sol = solve_guidance(&scenario.problem, None, &cfg.optimizer)?;
    let table = strategy_table(&scenario, &sol)?;

    let mut w = ResultWriter::create(&out, cfg)?;
    w.write_table(&table)?;
    w.write_norms(&table.runs)?;
    w.write_solution(&sol, &scenario.problem.fleet)?;
    w.write_run_control("control_feedback.csv", table.run(Strategy::OptFeedback))?;
    for s in [Strategy::OptFeedback, Strategy::NoControl] {
        let snaps = snapshots(
            &table.run(s).sim,
            &scenario.problem.basis,
            &cfg.output.snapshot_times,
            cfg.output.raster,
        )?;
        w.write_snapshots(&format!("field_{}", s.name()), &snaps)?;
    }
    let ordering = table.ordering_holds();
    w.write_metadata(&[
        ("command", "bench".into()),
        ("iterations", sol.iterations.to_string()),
        ("converged", sol.converged.to_string()),
        ("ordering_holds", ordering.to_string()),
        ("wall_seconds", start.elapsed().as_secs_f64().to_string()),
    ])?;

    println!(
        "{:<14} {:>12} {:>12} {:>12} {:>8}",
        "strategy", "pde", "mobility", "total", "%"
    );
    for r in &table.rows {
        println!(
            "{:<14} {:>12.4} {:>12.4} {:>12.4} {:>7.1}%",
            r.strategy.name(),
            r.pde_cost,
            r.mobility_cost,
            r.total,
            r.normalized_percent
        );
    }
    if !ordering {
        for (a, b) in table.ordering_violations() {
            eprintln!("ordering violated: {a} is not cheaper than {b}");
        }
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_converge(
    cfg: &ScenarioConfig,
    out: PathBuf,
    min: usize,
    max: usize,
    cold: bool,
    polish_iters: Option<usize>,
) -> Result<ExitCode> {
    if min == 0 || min > max {
        bail!("need 1 ≤ min-modes ≤ max-modes, got {min}..{max}");
    }
    let start = Instant::now();
    let warm = if cold {
        None
    } else {
        let problem = cfg.problem(Exec::default())?;
        Some(
            solve_guidance(&problem, None, &cfg.optimizer)
                .context("warm-start solve")?
                .guidance,
        )
    };
    let sizes: Vec<usize> = (min..=max).collect();
    let mut per_size = cfg.optimizer;
    if let Some(n) = polish_iters {
        per_size.max_iters = n;
    }
    per_size.check()?;
    let report = convergence_study(cfg, &sizes, warm.as_ref(), &per_size, Exec::default())?;
    let mut w = ResultWriter::create(&out, cfg)?;
    w.write_convergence(&report)?;
    w.write_metadata(&[
        ("command", "converge".into()),
        ("warm_start", (!cold).to_string()),
        ("iterations_per_size", per_size.max_iters.to_string()),
        ("wall_seconds", start.elapsed().as_secs_f64().to_string()),
    ])?;
    for r in &report.rows {
        println!(
            "N = {:>2}: {:.6} ({:.3}%)",
            r.modes, r.objective, r.normalized_percent
        );
    }
    Ok(ExitCode::SUCCESS)
}
