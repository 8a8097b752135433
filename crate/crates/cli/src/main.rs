use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

/// Quasi-periodic solutions of `i u_t + u_xx = |u|^{2p} u` by multiscale
/// Newton iteration on a Z⁴ Fourier lattice.
#[derive(Parser, Debug)]
#[command(name = "quasinls", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random choice (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the Newton scheme at the configured parameter point.
    Solve,
    /// Classify sampled parameter points stage by stage.
    Scan {
        /// Override `scan.samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Check a solution file against the PDE and the size estimates.
    Verify {
        solution: PathBuf,
        /// Grid points per axis.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        x_max: Option<f64>,
    },
    /// List lattice sites whose divisor vanishes identically.
    Divisors {
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        h1: [i32; 2],
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        h2: [i32; 2],
        /// Box radius.
        #[arg(long = "box", default_value_t = 3)]
        radius: i32,
    },
    /// Summarize the artifacts in an output directory.
    Report {
        /// Directory to read (defaults to --out).
        dir: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> Result<[i32; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated integers, got {s:?}"));
    }
    let p = |t: &str| t.parse::<i32>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(parts[0])?, p(parts[1])?])
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_CONFIG } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(commands::EXIT_CONFIG);
        }
    }
    let g = commands::Globals {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    let code = match cli.cmd {
        Cmd::Solve => commands::solve(&g),
        Cmd::Scan { samples } => commands::scan(&g, samples),
        Cmd::Verify {
            solution,
            grid,
            t_max,
            x_max,
        } => commands::verify(&g, &solution, grid, t_max, x_max),
        Cmd::Divisors { h1, h2, radius } => commands::divisors(&g, h1, h2, radius),
        Cmd::Report { dir } => commands::report(&g, dir),
    };
    ExitCode::from(code)
}
