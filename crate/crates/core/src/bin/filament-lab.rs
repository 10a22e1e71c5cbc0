use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use filament_lab::harness::{self, error_exit_code, ExperimentConfig, ExperimentKind};

/// Corner-formation experiments for the binormal flow.
#[derive(Debug, Parser)]
#[command(name = "filament-lab", version)]
struct Cli {
    /// profile, angle-sweep, nls-validate, recover, rates, or sweep
    kind: String,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out`, then runs/<kind>
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; FILAMENT_LAB_THREADS is used when absent
    #[arg(long)]
    threads: Option<usize>,
    /// key=value with dotted keys, e.g. grid.n=4096
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn threads(cli: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = cli {
        return Ok(Some(n));
    }
    match std::env::var("FILAMENT_LAB_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| format!("FILAMENT_LAB_THREADS={v} is not a count")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match threads(cli.threads) {
        Ok(Some(n)) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: {e}");
                return ExitCode::from(3);
            }
        }
        Ok(Some(_)) => {
            eprintln!("error: thread count must be positive");
            return ExitCode::from(2);
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match ExperimentConfig::load(&cli.config, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(error_exit_code(&e) as u8);
        }
    };
    let is_sweep = cli.kind == "sweep";
    match ExperimentKind::parse(&cli.kind) {
        Some(k) if k == cfg.kind => {}
        Some(k) => {
            eprintln!("error: command {} does not match config kind {}", k.name(), cfg.kind.name());
            return ExitCode::from(2);
        }
        None if is_sweep => {}
        None => {
            eprintln!("error: unknown experiment kind `{}`", cli.kind);
            return ExitCode::from(2);
        }
    }
    let base_dir = cli.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = cli.out.clone().unwrap_or_else(|| harness::output_dir(&cfg, &base_dir));
    if is_sweep {
        match harness::sweep(&cfg, &out, &base_dir) {
            Ok(rep) => {
                println!("{} sub-runs, results in {}", rep.runs.len(), out.join("sweep.csv").display());
                ExitCode::from(rep.exit_code() as u8)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(error_exit_code(&e) as u8)
            }
        }
    } else {
        match harness::run(&cfg, &out, &base_dir) {
            Ok(rep) => {
                for c in &rep.checks {
                    println!("{:<5} {:<32} {:.6e}", format!("{:?}", c.status).to_lowercase(), c.name, c.measured);
                }
                for n in &rep.notes {
                    println!("note  {n}");
                }
                println!("report: {}", out.join("report.json").display());
                ExitCode::from(rep.exit_code() as u8)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(error_exit_code(&e) as u8)
            }
        }
    }
}
