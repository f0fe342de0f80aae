//! `srpgan` command-line interface.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error,
//! 3 numeric failure (divergence, checksum mismatch, failed gradient
//! check). `SRPGAN_THREADS` caps internal parallelism.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use srpgan::commands;
use srpgan::config::{Config, Overrides};

#[derive(Parser)]
#[command(
    name = "srpgan",
    version,
    about = "CPU single-image super-resolution: adversarially trained U-Net refinement of bicubic upscaling"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Super-resolution factor (2, 4, or 8)
    #[arg(long)]
    scale: Option<usize>,
    /// Config file (flat `key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (initialization, patch sampling, augmentation)
    #[arg(long)]
    seed: Option<u64>,
    /// Train: manifest file. Sr: input image. Eval: image directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run/output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint file; eval also accepts the literal `bicubic`
    #[arg(long)]
    checkpoint: Option<String>,
    /// Total training iterations
    #[arg(long)]
    iters: Option<u64>,
    /// Desk-scale preset (small model, short schedule, minutes on one core)
    #[arg(long)]
    desk: bool,
}

impl CommonArgs {
    fn resolve(&self) -> srpgan::Result<Config> {
        let flags = Overrides {
            scale: self.scale,
            seed: self.seed,
            iters: self.iters,
            data: self.data.clone(),
            out: self.out.clone(),
            checkpoint: self.checkpoint.clone(),
        };
        Config::resolve(self.config.as_deref(), self.desk, &flags)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train generator and discriminator on a manifest of images
    Train(CommonArgs),
    /// Super-resolve one image with a trained generator checkpoint
    Sr(CommonArgs),
    /// PSNR/SSIM benchmark over a directory (`--checkpoint bicubic` for the
    /// no-model baseline)
    Eval(CommonArgs),
    /// Run the finite-difference gradient-check suite
    Gradcheck {
        /// RNG seed for the check instances
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn init_threads() {
    if let Some(n) = std::env::var("SRPGAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> srpgan::Result<()> {
    match cli.cmd {
        Cmd::Train(args) => {
            let run_dir = commands::cmd_train(&args.resolve()?)?;
            println!("{}", run_dir.display());
        }
        Cmd::Sr(args) => {
            commands::cmd_sr(&args.resolve()?)?;
        }
        Cmd::Eval(args) => {
            commands::cmd_eval(&args.resolve()?)?;
        }
        Cmd::Gradcheck { seed } => commands::cmd_gradcheck(seed.unwrap_or(0))?,
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive here too; only real usage errors are
            // failures (exit 1; clap's own convention would be 2).
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    init_threads();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
