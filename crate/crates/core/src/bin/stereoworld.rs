use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stereoworld::harness::{execute, parse_run_config, Command};

#[derive(Parser)]
#[command(name = "stereoworld", version, about = "Stereo video attention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Top,
}

#[derive(Subcommand)]
enum Top {
    #[command(flatten)]
    Direct(Command),
    /// Run the command described by a JSON file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> stereoworld::Result<stereoworld::harness::Outcome> {
    let cmd = match cli.command {
        Top::Direct(c) => c,
        Top::Run { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| stereoworld::Error::Format(format!("{}: {e}", config.display())))?;
            parse_run_config(&text)?
        }
    };
    execute(&cmd)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
