//! `parametrix <command> --config <manifest.toml> [--out <dir>] [--threads <n>] [--force]`
//!
//! Exit codes: 0 success, 2 configuration error, 3 guard rail (non-Dini
//! field, horizon, contraction witness, leakage), 4 verification failure,
//! 5 I/O error.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::error::CliError;
use crate::manifest::{Command, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "parametrix", version, about = "Fundamental solutions of non-divergence parabolic operators")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Run manifest (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the manifest's `out`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    /// Continue past the Dini guard by switching to the finite-difference oracle.
    #[arg(long)]
    force: bool,
}

fn run(args: &Args) -> Result<String, CliError> {
    let manifest = RunManifest::load(&args.config)?;
    if let Some(cmd) = manifest.command {
        if cmd != args.command {
            return Err(CliError::Config(format!(
                "command: manifest says `{}` but `{}` was requested",
                cmd.as_str(),
                args.command.as_str()
            )));
        }
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // a second initialization only happens in-process; keep the first
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let base_dir = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let out = args
        .out
        .clone()
        .or_else(|| manifest.out.as_ref().map(|o| base_dir.join(o)))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let field = manifest
        .field
        .build(Some(&base_dir))
        .map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(out.join("manifest.toml"), manifest.to_toml())?;
    let ctx = commands::Ctx {
        manifest,
        field,
        out,
        base_dir,
        force: args.force,
    };
    commands::run(args.command, &ctx)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("parametrix {}: {e}", args.command.as_str());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
