use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use turnpike_cli::commands::{self, CliError, Overrides, EXIT_ERROR};

/// Turnpike analysis of nonlinear optimal control problems.
#[derive(Parser)]
#[command(name = "turnpike", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Output directory (overrides TURNPIKE_OUT and the config)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Relative integration tolerance
    #[arg(long, global = true)]
    rtol: Option<f64>,
    /// Absolute integration tolerance
    #[arg(long, global = true)]
    atol: Option<f64>,
    /// Sampling grid for profiles and CSVs
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Worker threads for horizon sweeps (default: available parallelism)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, certify and write artifacts; exit 0 Certified, 2 Inconclusive, 1 error
    Run { config: PathBuf },
    /// Steady optimization only
    Sop { config: PathBuf },
    /// Stable and unstable manifolds of a scalar plant
    Portrait { config: PathBuf },
    /// Stabilizing Riccati solution; matrices as "a b; c d"
    Riccati {
        #[arg(long = "A", alias = "a", allow_hyphen_values = true)]
        a: String,
        #[arg(long = "B", alias = "b", allow_hyphen_values = true)]
        b: String,
        #[arg(long = "C", alias = "c", allow_hyphen_values = true)]
        c: String,
    },
    /// Check a config against the schema without solving
    Validate { config: PathBuf },
}

// A closed pipe (`| head`) is not an error worth a panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = cli.global;
    let o = Overrides { out_dir: g.out_dir, rtol: g.rtol, atol: g.atol, grid: g.grid, jobs: g.jobs };
    match dispatch(cli.command, &o) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn dispatch(command: Command, o: &Overrides) -> Result<i32, CliError> {
    match command {
        Command::Run { config } => {
            let report = commands::run(&config, o)?;
            out!("verdict: {}", report.verdict);
            for p in &report.artifacts {
                out!("wrote {}", p.display());
            }
            if let Some(f) = &report.failure {
                eprintln!("error: {f}");
            }
            Ok(report.exit_code)
        }
        Command::Sop { config } => {
            let (doc, path) = commands::sop(&config, o)?;
            out!("{}", serde_json::to_string_pretty(&doc).expect("json"));
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
        Command::Portrait { config } => {
            for p in commands::portrait(&config, o)? {
                out!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Riccati { a, b, c } => {
            out!("{}", serde_json::to_string_pretty(&commands::riccati(&a, &b, &c)?).expect("json"));
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = commands::validate(&config, o)?;
            out!("ok: {} {:?}, horizons {:?}", cfg.system_label, cfg.problem.kind(), cfg.problem.horizons);
            Ok(0)
        }
    }
}
