use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use usv_doe::adaptive::BorderRule;
use usv_doe::experiment::{
    fit_from_csv, fit_from_runs, grid_command, indices_command, run_adaptive, run_factorial, simulate_command,
    validation, ExperimentConfig, ExperimentError, ProcedureKind, SimRunner, Store,
};
use usv_doe::indices::IndexKind;
use usv_doe::kriging::{KrigingModel, TrendBasis};

#[derive(Parser, Debug)]
#[command(name = "usv-doe", version, about = "Path-following experiments and adaptive kriging designs")]
struct Cli {
    /// Experiment configuration (TOML); shipped defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Grid points per axis.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Response index.
    #[arg(long, global = true, value_parser = parse_index)]
    index: Option<IndexKind>,
    /// Kriging regression basis.
    #[arg(long, global = true, value_enum)]
    basis: Option<Basis>,
    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_default: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Basis {
    Const,
    Linear,
    Quad,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one design point and store its record and telemetry.
    Simulate {
        #[arg(long)]
        x1: f64,
        #[arg(long)]
        x2: f64,
    },
    /// Score a telemetry CSV, or tabulate every stored run.
    Indices {
        #[arg(long, requires_all = ["x1", "x2"])]
        telemetry: Option<PathBuf>,
        #[arg(long)]
        x1: Option<f64>,
        #[arg(long)]
        x2: Option<f64>,
    },
    /// Fit a model to a CSV of x1, x2, response, or to every stored run.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Write prediction and MSE grids with heatmaps.
    Grid {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Worst-performance two-step design.
    Wp,
    /// Best-prediction two-step design.
    Bp,
    /// Full factorial (or the manual design when the config asks for one).
    Ff,
    /// Run the oracle checks.
    Validate,
}

fn parse_index(s: &str) -> Result<IndexKind, String> {
    IndexKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = IndexKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown index '{s}', expected one of {}", names.join(", "))
    })
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.output = o.clone();
    }
    if let Some(r) = cli.resolution {
        c.grid.resolution = r;
    }
    if let Some(i) = cli.index {
        c.index = i;
    }
    if let Some(b) = cli.basis {
        c.kriging.basis = match b {
            Basis::Const => TrendBasis::Constant,
            Basis::Linear => TrendBasis::Linear,
            Basis::Quad => TrendBasis::Quadratic,
        };
    }
    if let Some(j) = cli.jobs {
        c.jobs = j;
    }
    match cli.command {
        Some(Command::Wp) => c.procedure = ProcedureKind::Wp,
        Some(Command::Bp) => c.procedure = ProcedureKind::Bp,
        Some(Command::Ff) if c.procedure != ProcedureKind::Manual => c.procedure = ProcedureKind::FullFactorial,
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

fn describe_model(m: &KrigingModel) -> String {
    format!("{} sites, theta {:?}, sigma2 {:.6e}", m.sites().len(), m.theta(), m.sigma2())
}

fn execute(cli: &Cli) -> Result<(), ExperimentError> {
    let config = load_config(cli)?;
    let Some(command) = &cli.command else {
        return Err(ExperimentError::Config("no command given; see --help".into()));
    };
    if let Command::Validate = command {
        let checks = validation::run_suite(config.seed);
        let failed = checks.iter().filter(|c| !c.passed).count();
        for c in &checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        return if failed == 0 {
            Ok(())
        } else {
            Err(ExperimentError::Numeric(format!("{failed} check(s) failed")))
        };
    }
    let store = Store::open(&config.output, &config)?;
    let runner = BorderRule::new(SimRunner::new(&config, Some(&store)));
    config.with_pool(|| -> Result<(), ExperimentError> {
        match command {
            Command::Simulate { x1, x2 } => {
                let p = config.point(*x1, *x2)?;
                let r = simulate_command(&config, &store, p)?;
                let rec = r.scores.record;
                println!("run {} ({} samples)", r.run_id, r.phases.iter().map(|p| p.samples).sum::<usize>());
                println!("D_A {} D_H {} xte_mean {} thrust_energy {}", rec.d_a, rec.d_h, rec.xte_mean, rec.thrust_energy);
            }
            Command::Indices { telemetry, x1, x2 } => {
                let given = match (telemetry, x1, x2) {
                    (Some(t), Some(a), Some(b)) => Some((t.as_path(), config.point(*a, *b)?)),
                    _ => None,
                };
                let rows = indices_command(&config, &store, given)?;
                for (p, r) in rows {
                    println!("{p} D_A {} D_H {} {} {}", r.d_a, r.d_h, config.index.as_str(), r.value(config.index));
                }
            }
            Command::Fit { input } => {
                let m = match input {
                    Some(path) => fit_from_csv(&config, &store, path)?,
                    None => fit_from_runs(&config, &store)?,
                };
                println!("model: {}", describe_model(&m));
            }
            Command::Grid { model } => {
                let (name, field) = grid_command(&config, &store, model.as_deref())?;
                let max = field.prediction.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                println!("grids/{name}_prediction.csv: {0}x{0}, max prediction {max}", field.spec.resolution);
            }
            Command::Wp | Command::Bp => {
                let r = run_adaptive(&config, &store, &runner)?;
                println!("step 1: {} points, step 2: {} points", r.step1.len(), r.step2.len());
                println!("model: {}", describe_model(&r.model));
                if let Some(e) = r.estimate {
                    println!("maximum {} at ({}, {})", e.value, e.at[0], e.at[1]);
                }
                if let Some(at) = r.diagnostics.max_mse_location {
                    println!("largest interim MSE at ({}, {})", at[0], at[1]);
                }
            }
            Command::Ff => {
                let r = run_factorial(&config, &store, &runner)?;
                println!("{} points, model: {}", r.design.len(), describe_model(&r.model));
                println!("maximum {} at ({}, {})", r.estimate.value, r.estimate.at[0], r.estimate.at[1]);
            }
            Command::Validate => unreachable!(),
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.print_default {
        print!("{}", ExperimentConfig::default().to_toml());
        return ExitCode::SUCCESS;
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
