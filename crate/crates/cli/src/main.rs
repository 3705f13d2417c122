use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod cmd;
mod config;
mod keyfile;
mod script;

#[derive(Debug, Parser)]
#[command(name = "mfreplay", version, about = "Simulate a contactless memory card and replay recorded sessions against it")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackName {
    #[value(name = "read-sector0")]
    ReadSector0,
    ReadSector,
    Write,
    DiscoverCommands,
    Extend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyName {
    Fixed,
    Spam,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Run a genuine reader script against a card and record the trace.
    Simulate {
        #[arg(long)]
        card: PathBuf,
        #[arg(long)]
        script: PathBuf,
        /// Directory for trace.txt and reads.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reader nonce seed (overrides the card file).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Nonce statistics of a card's generator.
    NonceStats {
        #[arg(long)]
        card: PathBuf,
        #[arg(long, default_value_t = 65_536)]
        draws: u64,
        /// Power-up jitter in bit periods (overrides the card file).
        #[arg(long)]
        jitter: Option<u32>,
        /// Jitter seed (overrides the card file).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an attack against a fresh card with the given personalization.
    Attack {
        #[arg(long)]
        card: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        attack: AttackName,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Jitter seed (overrides the card file).
        #[arg(long)]
        seed: Option<u64>,
        /// A block of the attacked sector with known contents, `N:hex`.
        #[arg(long)]
        known_block: Option<String>,
        /// Block to write.
        #[arg(long)]
        block: Option<usize>,
        /// Data to write, 16 bytes of hex.
        #[arg(long)]
        data: Option<String>,
        /// Value block used by extension (and by write when no keystream is given).
        #[arg(long)]
        value_block: Option<usize>,
        /// Block that command discovery may overwrite.
        #[arg(long)]
        scratch: Option<usize>,
        #[arg(long, default_value_t = 1)]
        iterations: usize,
        /// Keystream file to start from.
        #[arg(long)]
        keystream: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StrategyName::Fixed)]
        strategy: StrategyName,
        /// Nonce requests per replay.
        #[arg(long)]
        budget: Option<u64>,
        /// Assumed bytes 5..10 of block 0, hex.
        #[arg(long)]
        mfr1: Option<String>,
    },
    /// Decrypt a trace as far as a keystream allows.
    Decrypt {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        keystream: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Sub::Simulate { card, script, out, seed } => cmd::simulate(&card, &script, out.as_deref(), seed),
        Sub::NonceStats { card, draws, jitter, seed, out } => cmd::nonce_stats(&card, draws, jitter, seed, out.as_deref()),
        Sub::Attack {
            card,
            trace,
            attack,
            out,
            seed,
            known_block,
            block,
            data,
            value_block,
            scratch,
            iterations,
            keystream,
            strategy,
            budget,
            mfr1,
        } => cmd::attack(&cmd::AttackArgs {
            card,
            trace,
            attack,
            out,
            seed,
            known_block,
            block,
            data,
            value_block,
            scratch,
            iterations,
            keystream,
            strategy,
            budget,
            mfr1,
        }),
        Sub::Decrypt { trace, keystream } => cmd::decrypt(&trace, &keystream),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
