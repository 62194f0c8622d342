//! `cloakvit` command-line interface.
//!
//! Exit codes: 0 success, 2 validation or usage error, 3 I/O or format
//! error, 4 equivalence verification failure.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cloakvit_core::{Error, ShuffleMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Environment variable holding a hex key, used when `--key` is absent.
pub const KEY_ENV: &str = "CLOAKVIT_KEY";

/// Version of the `--json` output records.
pub const JSON_SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cloakvit", version, about = "Keyed block-wise image encryption for ViT inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a 256-bit key file.
    Keygen {
        /// Output path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Derive the key from a seed instead of OS entropy.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encrypt a PNG image (or a directory of them with --dir).
    Encrypt(CryptArgs),
    /// Decrypt an image produced by `encrypt`.
    Decrypt(CryptArgs),
    /// Transform a model so it classifies images encrypted with the key.
    TransformModel {
        #[command(flatten)]
        key: KeyArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Mixed)]
        mode: ModeArg,
        input: PathBuf,
        output: PathBuf,
    },
    /// Classify an image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Text file with one class name per line.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Check that the transformed model on encrypted images reproduces the
    /// plain model on plain images.
    VerifyEquivalence {
        #[command(flatten)]
        key: KeyArg,
        /// Plain model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Trials; trial 0 uses --image, the rest use seeded random images.
        #[arg(long, default_value_t = 1)]
        trials: u32,
        #[arg(long, value_enum, default_value_t = ModeArg::Mixed)]
        mode: ModeArg,
        #[arg(long)]
        json: bool,
    },
    /// Print log2 of the key space size.
    Keyspace {
        #[arg(long, default_value_t = 16)]
        block_size: usize,
        #[arg(long, default_value_t = 224)]
        image_size: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Mixed)]
        mode: ModeArg,
        #[arg(long)]
        json: bool,
    },
    /// Clothing-category manifest tools.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Describe a weights file.
    WeightsInfo {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write a randomly initialized model (for fixtures and demos).
    InitModel {
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        preset: Preset,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct KeyArg {
    /// Key file (64 hex characters). Falls back to $CLOAKVIT_KEY.
    #[arg(long)]
    pub key: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CryptArgs {
    #[command(flatten)]
    pub key: KeyArg,
    #[arg(long, value_enum, default_value_t = Scheme::Vit)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 16)]
    pub block_size: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Mixed)]
    pub mode: ModeArg,
    /// Treat INPUT and OUTPUT as directories and process every *.png.
    #[arg(long)]
    pub dir: bool,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Map source labels to clo categories.
    Remap {
        /// JSON rule list; the bundled DeepFashion mapping when omitted.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Lines of `image_path<TAB>source_label`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Unmatched::Error)]
        unmatched: Unmatched,
    },
    /// Seeded train/test split.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Per-class counts.
    Summarize {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated clo values for the four categories.
        #[arg(long, value_delimiter = ',')]
        clo_values: Option<Vec<f64>>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Vit,
    PixelBased,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mixed,
    PerChannel,
}

impl From<ModeArg> for ShuffleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mixed => ShuffleMode::ChannelMixing,
            ModeArg::PerChannel => ShuffleMode::PerChannel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Unmatched {
    Error,
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Toy,
    VitS16,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VERIFY,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_validation() { EXIT_USAGE } else { EXIT_IO },
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
