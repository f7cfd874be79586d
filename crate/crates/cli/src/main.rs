//! `mwcnn`: train, run and inspect multi-level wavelet CNN denoisers.

mod commands;
mod dump;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mwcnn::model::Downsampler;
use mwcnn::wavelet::BankKind;

#[derive(Parser, Debug)]
#[command(
    name = "mwcnn",
    version,
    about = "Multi-level wavelet CNN for image denoising"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a denoiser on a directory of PNM images.
    Train(TrainArgs),
    /// Restore one noisy image with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Add noise to clean images, denoise them and report PSNR/SSIM.
    Eval(EvalArgs),
    /// Multi-level wavelet packet decomposition and reconstruction.
    Wavelet {
        #[command(subcommand)]
        op: WaveletOp,
    },
    /// Write the receptive-field mask of one output pixel as a PGM.
    Rfmask(RfmaskArgs),
    /// Run the oracle suite; exits 1 if any check fails.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the dwt, sum_pool and dilated_chain variants on one budget.
    Ablate(AblateArgs),
    /// Write a seeded synthetic training corpus.
    Corpus(CorpusArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key=value configuration file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint to write (rewritten after every epoch).
    #[arg(long)]
    out: PathBuf,
    /// Training log; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Write plain-text P2 instead of binary P5.
    #[arg(long)]
    ascii: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of clean reference images.
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum WaveletOp {
    /// Dump every leaf subband as an 8-bit preview plus exact coefficients.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Bank::Haar)]
        bank: Bank,
        #[arg(long, default_value_t = 1)]
        levels: usize,
    },
    /// Rebuild an image from a decompose dump.
    Reconstruct {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Bank {
    Haar,
    Db2,
}

impl From<Bank> for BankKind {
    fn from(b: Bank) -> Self {
        match b {
            Bank::Haar => BankKind::Haar,
            Bank::Db2 => BankKind::Db2,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    Dwt,
    SumPool,
    DilatedChain,
}

impl From<Variant> for Downsampler {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Dwt => Downsampler::Dwt,
            Variant::SumPool => Downsampler::SumPool,
            Variant::DilatedChain => Downsampler::DilatedChain,
        }
    }
}

#[derive(Args, Debug)]
struct RfmaskArgs {
    /// Model settings; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    chain_depth: Option<usize>,
    #[arg(long)]
    chain_dilation: Option<usize>,
    /// Side of the square input.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Output pixel as `row,col`; defaults to the centre.
    #[arg(long)]
    pixel: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 24)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    mwcnn::par::init_from_env();
    let result = match cli.command {
        Command::Train(a) => commands::train(
            &a.config,
            &a.corpus,
            &a.out,
            a.log.as_deref(),
            a.resume.as_deref(),
        ),
        Command::Denoise(a) => commands::denoise(&a.checkpoint, &a.input, &a.output, a.ascii),
        Command::Eval(a) => commands::eval(&a.checkpoint, &a.clean, a.sigma, a.seed),
        Command::Wavelet { op } => match op {
            WaveletOp::Decompose {
                input,
                out_dir,
                bank,
                levels,
            } => dump::decompose(&input, &out_dir, bank.into(), levels),
            WaveletOp::Reconstruct { in_dir, output } => dump::reconstruct(&in_dir, &output),
        },
        Command::Rfmask(a) => commands::rfmask(commands::RfmaskOpts {
            config: a.config,
            variant: a.variant.map(Into::into),
            levels: a.levels,
            chain_depth: a.chain_depth,
            chain_dilation: a.chain_dilation,
            size: a.size,
            pixel: a.pixel,
            output: a.output,
        }),
        Command::Selfcheck { seed } => commands::selfcheck(seed),
        Command::Ablate(a) => commands::ablate(&a.config, &a.corpus, a.out.as_deref()),
        Command::Corpus(a) => commands::corpus(&a.out_dir, a.count, a.height, a.width, a.seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
