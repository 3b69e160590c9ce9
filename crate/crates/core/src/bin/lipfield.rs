use std::path::PathBuf;

use clap::{Parser, Subcommand};
use lipfield::cli;

/// Lip-field damage simulator (2D plane strain).
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// Log more (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Staggered damage simulation under a load program
    Run { config: PathBuf },
    /// L² Lipschitz projection benchmark on refined meshes
    Project { config: PathBuf },
    /// Critical opening and force versus crack length for a two-half specimen
    Griffith { config: PathBuf },
    /// Summary of an MSH 2.2 mesh
    MeshInfo { mesh: PathBuf },
}

fn main() {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match args.command {
        Command::Run { config } => cli::exit_code(cli::cmd_run(&config)),
        Command::Project { config } => cli::exit_code(cli::cmd_project(&config)),
        Command::Griffith { config } => cli::exit_code(cli::cmd_griffith(&config)),
        Command::MeshInfo { mesh } => match cli::cmd_mesh_info(&mesh) {
            Ok(s) => {
                print!("{s}");
                cli::EXIT_OK
            }
            Err(e) => cli::exit_code(Err(e)),
        },
    };
    std::process::exit(code);
}
