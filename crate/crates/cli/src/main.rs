use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pwgf_cli::check::run_checks;
use pwgf_cli::config::{load_config, RunConfig};
use pwgf_cli::oracle::{ou_json, particles_csv, w2_report, zkb_csv};
use pwgf_cli::plotdata::emit_plotdata;
use pwgf_cli::presets::preset;
use pwgf_cli::scenario::run_scenario_with;
use pwgf_cli::CliError;

#[derive(Parser)]
#[command(name = "pwgf", version, about = "Parameterized Wasserstein gradient flow solver")]
struct Cli {
    /// Worker threads (falls back to PWGF_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Named preset, e.g. aggregation-ci.
    #[arg(long)]
    preset: Option<String>,

    /// Dotted-path override, e.g. integrator.h=0.01 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,

        /// Output directory (default: output.dir from the config, else runs/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,

        /// Print the resolved config and exit.
        #[arg(long)]
        dry_run: bool,

        /// Suppress per-step progress.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Generate oracle data.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Derive plot-ready CSVs from a finished run directory.
    Plotdata {
        /// Run directory.
        dir: PathBuf,
    },
    /// Run the quick invariant suite.
    Check,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exact ZKB samples at time t.
    Zkb {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// OU mean and variance at time t.
    Ou {
        /// Initial mean, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        m0: Vec<f64>,
        #[arg(long)]
        var0: f64,
        #[arg(long, default_value_t = 1.0)]
        diffusion: f64,
        #[arg(long)]
        t: f64,
    },
    /// Direct particle simulation of an interaction scenario.
    Particles {
        #[command(flatten)]
        config: ConfigArgs,
        /// Record ring statistics every this many steps.
        #[arg(long, default_value_t = 100)]
        every: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical W2 distance between two point files.
    W2 {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let base = match (&args.config, &args.preset) {
        (Some(path), None) => load_config(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(CliError::Config("one of --config or --preset is required".into())),
        (Some(_), Some(_)) => return Err(CliError::Config("--config and --preset are exclusive".into())),
    };
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    base.with_overrides(&overrides)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => say(text),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("PWGF_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("PWGF_THREADS must be a positive integer, got '{v}'"))),
        _ => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(CliError::Config("--threads must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run {
            config,
            out,
            dry_run,
            quiet,
        } => {
            let cfg = resolve(&config)?;
            if dry_run {
                return say(&(cfg.to_canonical_json() + "\n"));
            }
            let dir = out
                .or_else(|| cfg.output.dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.scenario));
            let every = (cfg.integrator.steps / 20).max(1);
            let run = run_scenario_with(&cfg, &dir, |(step, t, energy)| {
                if !quiet && step % every == 0 {
                    eprintln!("step {step:>6}  t = {t:.4}  energy = {energy:.6}");
                }
            })?;
            eprintln!(
                "completed {} steps; artifacts in {}",
                run.output.state.step,
                run.dir.display()
            );
            Ok(())
        }
        Command::Oracle { which } => match which {
            OracleCommand::Zkb {
                dim,
                m,
                t,
                n,
                seed,
                out,
            } => emit(out.as_deref(), &zkb_csv(dim, m, t, n, seed)?),
            OracleCommand::Ou {
                m0,
                var0,
                diffusion,
                t,
            } => emit(None, &(ou_json(&m0, var0, diffusion, t)? + "\n")),
            OracleCommand::Particles { config, every, out } => {
                let cfg = resolve(&config)?;
                emit(out.as_deref(), &particles_csv(&cfg, every)?)
            }
            OracleCommand::W2 { a, b, seed } => emit(None, &w2_report(&a, &b, seed)?),
        },
        Command::Plotdata { dir } => {
            let listing: String = emit_plotdata(&dir)?
                .iter()
                .map(|p| format!("{}\n", p.display()))
                .collect();
            say(&listing)
        }
        Command::Check => {
            let results = run_checks();
            let mut failed = 0;
            let mut report = String::new();
            for r in &results {
                report += &format!("{} {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            say(&report)?;
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} check(s) failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
