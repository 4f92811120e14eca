use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fontparts::pipeline::{self, Config};
use fontparts::{Error, Result};

/// Part-based font impression analysis.
#[derive(Parser, Debug)]
#[command(name = "fontparts", version)]
struct Cli {
    /// TOML configuration file; defaults apply to anything it leaves out
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed, overriding the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Work directory holding every stage's outputs
    #[arg(long, global = true, env = "FONTPARTS_WORK_DIR")]
    work_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic corpus into the work directory
    Synth,
    /// Compute descriptor caches for every font
    Extract,
    /// Train the set regressor
    Train {
        /// Continue from the saved training state
        #[arg(long)]
        resume: bool,
    },
    /// Fit the visual-word codebook
    Codebook,
    /// Histograms, peaks, biclusters and impression distances
    Analyze,
    /// Average precision on the test split
    Eval,
    /// Write the markdown summary
    Report,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(dir) = &cli.work_dir {
        cfg.paths.work_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot set up {n} threads: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without parallelism; --threads {n} ignored");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    configure_threads(cfg.threads)?;
    match &cli.command {
        Command::Synth => {
            let data = pipeline::cmd_synth(&cfg)?;
            println!("{}", data.manifest.display());
        }
        Command::Extract => {
            let s = pipeline::cmd_extract(&cfg)?;
            println!("{} extracted, {} up to date", s.computed, s.skipped);
        }
        Command::Train { resume } => {
            let state = pipeline::cmd_train(&cfg, *resume)?;
            println!("best epoch {} loss {:.6}", state.best_epoch, state.best_loss);
        }
        Command::Codebook => {
            let fit = pipeline::cmd_codebook(&cfg)?;
            println!("Q={} after {} iterations", fit.codebook.q(), fit.iterations);
        }
        Command::Analyze => pipeline::cmd_analyze(&cfg)?,
        Command::Eval => {
            let r = pipeline::cmd_eval(&cfg)?;
            println!("mAP {:.4} (baseline {:.4})", r.map, r.baseline_map);
        }
        Command::Report => {
            pipeline::cmd_report(&cfg)?;
            println!("{}", pipeline::Workspace::new(&cfg).report().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
