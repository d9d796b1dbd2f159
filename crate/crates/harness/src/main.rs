use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emflows_harness::commands::{cmd_certify, cmd_compare, cmd_run};
use emflows_harness::Options;

#[derive(Parser)]
#[command(name = "emflows", version, about = "Run EM-type schemes and check their convergence guarantees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Particle seed, overriding `algorithm.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip SVG plots.
    #[arg(long)]
    no_svg: bool,
    /// Write 0 in the `wall_nanos` column so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

impl Common {
    fn options(&self) -> Options {
        Options {
            out: self.out.clone(),
            seed: self.seed,
            no_svg: self.no_svg,
            no_timing: self.no_timing,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, bounds.csv, checks.json and overlay.svg.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run several experiments on the same model and align their gap curves.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the certified xLSI constant and the bound constants.
    Certify { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMFLOWS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common } => cmd_run(config, &common.options()),
        Command::Compare { configs, common } => cmd_compare(configs, &common.options()),
        Command::Certify { config } => cmd_certify(config),
    };
    match result {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
