use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hire::experiment::{self, ExperimentConfig, Mode};
use hire::instance::{gen_instance, write_instance, Spectrum};
use hire::HireError;

#[derive(Parser)]
#[command(name = "hire", version, about = "Approximate top-k retrieval experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config; flags override config fields.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long = "kprime")]
        k_prime: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        shards: Option<usize>,
        #[arg(long = "group-size")]
        group_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded random instance (matrix and query vector).
    GenInstance {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SpectrumArg::Flat)]
        spectrum: SpectrumArg,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        vector: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SpectrumArg {
    Flat,
    Decaying,
}

fn dispatch(cli: Cli) -> hire::Result<()> {
    match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            k,
            k_prime,
            rank,
            shards,
            group_size,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(m) = mode {
                cfg.mode = Some(Mode::parse(&m)?);
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.k = k.unwrap_or(cfg.k);
            cfg.k_prime = k_prime.unwrap_or(cfg.k_prime);
            cfg.rank = rank.unwrap_or(cfg.rank);
            cfg.shards = shards.unwrap_or(cfg.shards);
            cfg.g = group_size.unwrap_or(cfg.g);
            if out.is_some() {
                cfg.out = out;
            }
            for path in experiment::run(&cfg)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::GenInstance {
            d,
            l,
            seed,
            spectrum,
            matrix,
            vector,
        } => {
            let spectrum = match spectrum {
                SpectrumArg::Flat => Spectrum::Flat,
                SpectrumArg::Decaying => Spectrum::Decaying,
            };
            if d == 0 || l == 0 {
                return Err(HireError::InvalidParameter("d and l must be positive".into()));
            }
            write_instance(&gen_instance(d, l, seed, spectrum)?, &matrix, &vector)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
