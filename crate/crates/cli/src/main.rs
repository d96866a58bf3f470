use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alphasde::presets;
use alphasde_cli::{config::RunConfig, exit_code_for, experiments, EXIT_NUMERICAL, EXIT_VALIDATION};

#[derive(Parser)]
#[command(
    name = "alphasde",
    version,
    about = "Alpha-parameterized SDE integration and Fokker-Planck experiments",
    long_about = "Runs JSON-configured experiments: path ensembles, W dW sampling, \
                  density evolution, operator dumps, steady states, kernel reversal \
                  tests, and a built-in check battery. Artifacts are CSV plus a \
                  manifest.json per run."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to the JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (wins over the config and ALPHASDE_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (wins over the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for path ensembles (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the built-in model presets and their parameters.
    Presets,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Presets => {
            print_presets();
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => run(config, out, seed, threads),
    }
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> ExitCode {
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    }
    let cfg = match RunConfig::from_file(&config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e) as u8);
        }
    };
    match experiments::run(&cfg, &experiments::Overrides { out, seed }) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for a in &outcome.artifacts {
                if !emit_line(&outcome.out_dir.join(a).display().to_string()) {
                    break;
                }
            }
            if outcome.checks_failed > 0 {
                eprintln!("error: {} check(s) failed; see report.csv", outcome.checks_failed);
                ExitCode::from(EXIT_NUMERICAL as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}

/// Write one line to stdout. Returns false once the reader has closed
/// the pipe (`alphasde presets | head`), after which callers should stop
/// writing; everything that decides the exit code still runs.
fn emit_line(line: &str) -> bool {
    let mut out = std::io::stdout().lock();
    match out
        .write_all(line.as_bytes())
        .and_then(|()| out.write_all(b"\n"))
    {
        Ok(()) => true,
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => false,
        Err(e) => {
            eprintln!("error: cannot write to stdout: {e}");
            false
        }
    }
}

fn print_presets() {
    for info in presets::registry() {
        let mut lines = vec![
            format!("{}  ({}-D)", info.name, info.state_dim),
            format!("    {}", info.summary),
        ];
        let domain: Vec<String> = info
            .default_domain
            .iter()
            .map(|(lo, hi)| format!("[{lo}, {hi}]"))
            .collect();
        lines.push(format!("    domain: {}", domain.join(" x ")));
        for p in info.params {
            lines.push(format!("    {} = {}  — {}", p.name, p.default, p.doc));
        }
        for line in lines {
            if !emit_line(&line) {
                return;
            }
        }
    }
}
