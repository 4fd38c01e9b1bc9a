use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use labelwright::pipeline::{Run, RunConfig, PREDICTIONS};
use labelwright::synthetic::{generate, SyntheticSpec};
use labelwright::{Error, Result};
use labelwright_cli::server::{serve, ReviewState};

#[derive(Parser)]
#[command(
    name = "labelwright",
    version,
    about = "Label-space discovery and zero-shot classification"
)]
struct Cli {
    /// Log verbosity (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Run directory; defaults to `runs/<run id>` next to the config file.
    #[arg(short, long)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and chunk the corpus.
    Ingest(RunArgs),
    /// Build the initial label space from growing corpus subsets.
    Discover(RunArgs),
    /// Grow the label space with long-tail keyphrases and prune it.
    Refine {
        #[command(flatten)]
        run: RunArgs,
        /// Iteration count overriding the configured one.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Predict ranked labels for every document.
    Classify(RunArgs),
    /// Coverage and P@k against gold labels.
    Evaluate(RunArgs),
    /// Estimate how often one gold label dominates a document.
    ProbeDominance(RunArgs),
    /// ingest, discover, refine, classify and evaluate.
    Run(RunArgs),
    /// Serve the review API over the run's label space.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory of static review UI files served at /.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Environment variable holding a bearer token required by the API.
        #[arg(long)]
        token_env: Option<String>,
    },
    /// Write a planted-label synthetic corpus with mock backend configs.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        documents: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn open(args: &RunArgs) -> Result<Run> {
    let config = RunConfig::load(&args.config)?;
    let dir = match &args.run_dir {
        Some(d) => d.clone(),
        None => args
            .config
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .join("runs")
            .join(config.run_id()?),
    };
    Run::open(config, &dir)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => print_json(&open(&a)?.ingest()?),
        Command::Discover(a) => {
            let report = open(&a)?.discover()?;
            for r in &report.rounds {
                eprintln!(
                    "subset {:>6}: {} clusters, {} live labels ({:+})",
                    r.subset_size, r.clusters, r.live_labels, r.net_added
                );
            }
            print_json(&report.labels)
        }
        Command::Refine { run, iterations } => {
            let report = open(&run)?.refine_with(iterations)?;
            for it in &report.iterations {
                eprintln!(
                    "iteration {}: +{} -{} frozen {} coverage {}",
                    it.iteration,
                    it.added.len(),
                    it.removed.len(),
                    it.frozen.len(),
                    it.coverage.map_or("n/a".into(), |c| format!("{c:.4}"))
                );
            }
            print_json(&report.labels)
        }
        Command::Classify(a) => {
            let mut run = open(&a)?;
            let result = run.classify()?;
            eprintln!(
                "{} documents classified; predictions in {}",
                result.predictions.len(),
                run.path(PREDICTIONS).display()
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            print!("{}", open(&a)?.evaluate()?.table());
            Ok(())
        }
        Command::ProbeDominance(a) => print_json(&open(&a)?.probe()?),
        Command::Run(a) => {
            let mut run = open(&a)?;
            match run.run_all()? {
                Some(report) => print!("{}", report.table()),
                None => eprintln!("no gold labels; evaluation skipped"),
            }
            eprintln!("artifacts in {}", run.dir().display());
            Ok(())
        }
        Command::Serve {
            run,
            bind,
            static_dir,
            token_env,
        } => {
            let token = match token_env {
                Some(var) => Some(std::env::var(&var).map_err(|_| {
                    Error::Config(format!("environment variable {var} is not set"))
                })?),
                None => None,
            };
            let mut run = open(&run)?;
            let space = run.load_space()?;
            let predictions = run.predictions().unwrap_or_default();
            let chunk_size = run.config().chunk_size;
            let chunks =
                labelwright::corpus::chunk_documents(run.corpus()?.documents(), chunk_size)?;
            let path = run.path(labelwright::pipeline::SPACE);
            let state = Arc::new(ReviewState::new(space, path, chunks, predictions, token));
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(&bind, e))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .map_err(|e| Error::Config(format!("cannot bind {bind}: {e}")))?;
                eprintln!(
                    "review service listening on http://{}",
                    listener.local_addr().map_err(|e| Error::io(&bind, e))?
                );
                serve(listener, state, static_dir)
                    .await
                    .map_err(|e| Error::io(&bind, e))
            })
        }
        Command::Synth {
            out,
            documents,
            seed,
        } => {
            let corpus = generate(&SyntheticSpec {
                documents,
                seed,
                ..SyntheticSpec::default()
            })?;
            corpus.write(&out)?;
            eprintln!(
                "wrote {} documents and run.toml to {}",
                documents,
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
