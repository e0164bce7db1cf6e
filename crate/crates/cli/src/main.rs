use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tse_cli::commands::{cmd_eval, cmd_extract, cmd_gen, cmd_train, cmd_verify};
use tse_cli::config::{ModelChoice, Overrides, RunConfig};
use tse_cli::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "difftse", version, about = "Clue-conditioned diffusion for target source extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// tse, diff-tse, diff-tse-mt or passthrough.
    #[arg(long, global = true, value_parser = parse_model)]
    model: Option<ModelChoice>,
    /// Ensemble size J.
    #[arg(long, global = true)]
    ensemble: Option<usize>,
    /// Reverse sampling steps N.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Training steps.
    #[arg(long, global = true)]
    train_steps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Directory holding model.topology and model.params.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Evaluate only the first this many test mixtures.
    #[arg(long, global = true)]
    examples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the toy two-speaker corpus.
    Gen,
    /// Train a model on the corpus.
    Train,
    /// Extract the target from one mixture WAV.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        /// Dump every reverse-run state.
        #[arg(long)]
        trace: bool,
    },
    /// Score a model on the corpus test set.
    Eval {
        /// Also extract with the interferer's enrollment.
        #[arg(long)]
        clue_swap: bool,
    },
    /// Run the oracle verification suites.
    Verify,
}

fn parse_model(s: &str) -> Result<ModelChoice, String> {
    ModelChoice::parse(s).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        model: cli.model,
        ensemble: cli.ensemble,
        steps: cli.steps,
        train_steps: cli.train_steps,
        out: cli.out.clone(),
        corpus: cli.corpus.clone(),
        examples: cli.examples,
    });
    if let Command::Eval { clue_swap: true } = cli.command {
        cfg.eval.clue_swap = true;
    }
    eprintln!("# resolved configuration\n{}", cfg.to_toml());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let checkpoint = cli.checkpoint.as_deref();
    pool.install(|| match &cli.command {
        Command::Gen => cmd_gen(&cfg).map(|c| {
            eprintln!("wrote {} train / {} test mixtures to {}", c.train.len(), c.test.len(), cfg.run.corpus.display())
        }),
        Command::Train => cmd_train(&cfg).map(|_| eprintln!("wrote model to {}", cfg.run.out.display())),
        Command::Extract { input, enroll, trace } => {
            cmd_extract(&mut cfg, checkpoint, input, enroll, *trace).map(|_| eprintln!("wrote {}", cfg.run.out.display()))
        }
        Command::Eval { .. } => cmd_eval(&mut cfg, checkpoint).map(|_| ()),
        Command::Verify => cmd_verify(&cfg, cli.out.as_deref()).map(|_| ()),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
