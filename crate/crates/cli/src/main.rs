use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mcga_cli::config::{read_settings, Experiment, ExperimentConfig};
use mcga_cli::experiments::parse_assignment;
use mcga_cli::output::manifest;
use mcga_cli::{run, RunContext};

/// Monte Carlo gradient approximation: particle solvers for the electric
/// field, a finite-difference comparator and the variance study.
#[derive(Parser, Debug)]
#[command(name = "mcga", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write its result bundle.
    Run(RunArgs),
    /// Print the resolved configuration without running.
    Config(RunArgs),
    /// List the files a run would write.
    Manifest(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment to run.
    #[arg(value_enum)]
    experiment: Experiment,

    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Root seed of every random stream.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for replicates and resolutions (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,

    /// Multiply particle and replicate counts by this factor.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,

    /// Coupling treatment: neglect, exact or both.
    #[arg(long)]
    mode: Option<String>,

    /// Output directory (default: results/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Particles per simulated field.
    #[arg(long = "n", alias = "n-particles")]
    n_particles: Option<usize>,

    /// Independent replicates.
    #[arg(long)]
    replicates: Option<usize>,

    /// Variance-study resolutions, e.g. 11,21,41.
    #[arg(long)]
    resolutions: Option<String>,

    /// Cells per side of the grid.
    #[arg(long)]
    cells: Option<usize>,

    #[arg(long)]
    t0: Option<f64>,

    #[arg(long)]
    t_end: Option<f64>,

    #[arg(long)]
    dt: Option<f64>,

    /// Diffusion scale D of the built-in problems.
    #[arg(long)]
    diffusion: Option<f64>,

    /// Particles injected per source cell and step.
    #[arg(long)]
    n_per_cell: Option<usize>,

    /// Roulette threshold as a fraction of the median weight.
    #[arg(long)]
    w_cap: Option<f64>,

    /// Population control starts above this multiple of N.
    #[arg(long)]
    population_trigger: Option<f64>,

    /// Average the reported fields over this many trailing steps.
    #[arg(long)]
    average_window: Option<usize>,

    /// Write the final particle ensembles as CSV.
    #[arg(long)]
    dump_ensembles: bool,

    /// Any config key, e.g. --set custom.diffusion="0.1 0 0 0 0 0".
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("mode", self.mode.clone());
        put("n_particles", self.n_particles.map(|v| v.to_string()));
        put("replicates", self.replicates.map(|v| v.to_string()));
        put("resolutions", self.resolutions.clone());
        put("cells", self.cells.map(|v| v.to_string()));
        put("t0", self.t0.map(|v| v.to_string()));
        put("t_end", self.t_end.map(|v| v.to_string()));
        put("dt", self.dt.map(|v| v.to_string()));
        put("diffusion", self.diffusion.map(|v| v.to_string()));
        put("n_per_cell", self.n_per_cell.map(|v| v.to_string()));
        put("w_cap", self.w_cap.map(|v| v.to_string()));
        put("population_trigger", self.population_trigger.map(|v| v.to_string()));
        put("average_window", self.average_window.map(|v| v.to_string()));
        put("dump_ensembles", self.dump_ensembles.then(|| "true".to_string()));
        out.extend(self.set.iter().cloned());
        out
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::defaults(self.experiment);
        if let Some(path) = &self.config {
            config.apply(&read_settings(path)?)?;
        }
        config.apply(&self.overrides())?;
        config.scale(self.scale)?;
        config.validate()?;
        Ok(config)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Run(args) => {
            let config = args.resolve()?;
            let jobs = args
                .jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            let ctx = RunContext {
                out: args
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("results").join(config.experiment.name())),
                jobs,
                scale: args.scale,
            };
            run(&config, &ctx)?;
            println!("{}", ctx.out.display());
        }
        Command::Config(args) => print!("{}", args.resolve()?.to_file_text()),
        Command::Manifest(args) => {
            for file in manifest(&args.resolve()?) {
                println!("{file}");
            }
        }
    }
    Ok(())
}
