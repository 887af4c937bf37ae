use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use elicit_cli::backends::service_backends;
use elicit_cli::{cmd_bench, cmd_gen_cases, cmd_record, cmd_replay, BackendKind, RunConfig, Settings};
use elicit_core::simulation::Strategy;
use elicit_core::SessionService;

#[derive(Parser)]
#[command(
    name = "elicit",
    version,
    about = "Adaptive prompt elicitation for text-to-image models"
)]
struct Cli {
    /// TOML settings file; `ELICIT_*` variables override it.
    #[arg(long, global = true, env = "ELICIT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark protocol and write result tables.
    Bench(BenchArgs),
    /// Replay a recorded session directory and compare with its snapshot.
    Replay { session_dir: PathBuf },
    /// Serve the session HTTP API.
    Serve(ServeArgs),
    /// Record scripted sessions (useful as replay fixtures).
    Record(RecordArgs),
    /// Write synthetic benchmark cases as JSON.
    GenCases(GenCasesArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Case files (JSON array, object or JSON lines). Repeatable.
    #[arg(long, env = "ELICIT_CASES", value_delimiter = ',')]
    cases: Vec<PathBuf>,
    /// Number of synthetic cases to generate in addition to `--cases`.
    #[arg(long, env = "ELICIT_SYNTHETIC", default_value_t = 0)]
    synthetic: usize,
    #[arg(
        long,
        env = "ELICIT_STRATEGIES",
        value_delimiter = ',',
        default_value = "ape,in_context,apo,unoptimized"
    )]
    strategies: Vec<Strategy>,
    #[arg(long, env = "ELICIT_RUNS", default_value_t = 5)]
    runs: u32,
    /// Overrides the configured max_iterations.
    #[arg(long, env = "ELICIT_MAX_ITERS")]
    max_iters: Option<u32>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "ELICIT_OUT", default_value = "bench-out")]
    out: PathBuf,
    #[arg(long, env = "ELICIT_PARALLEL", default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "ELICIT_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory holding one subdirectory per session.
    #[arg(long, env = "ELICIT_DATA", default_value = "sessions")]
    data: PathBuf,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long, default_value = "recorded")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    #[arg(long, default_value_t = 3)]
    answers: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenCasesArgs {
    #[arg(long, default_value = "cases.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    min_features: usize,
    #[arg(long, default_value_t = 8)]
    max_features: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Bench(args) => {
            if let Some(n) = args.max_iters {
                settings.engine.budget.max_iterations = n;
            }
            if let Some(kind) = args.backend {
                settings.backend.kind = kind;
            }
            let config = RunConfig {
                cases: args.cases,
                synthetic: args.synthetic,
                strategies: args.strategies,
                runs_per_case: args.runs,
                seed: args.seed.unwrap_or(settings.engine.seed),
                engine: settings.engine,
                backend: settings.backend,
                out: args.out,
                parallelism: args.parallel,
            };
            let outcome = cmd_bench(&config)?;
            println!(
                "{} runs completed, {} failed; results in {}",
                outcome.traces,
                outcome.failures,
                config.out.display()
            );
            Ok(if outcome.failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Replay { session_dir } => {
            let code = cmd_replay(&session_dir, &mut std::io::stdout());
            Ok(ExitCode::from(code as u8))
        }
        Command::Serve(args) => {
            let backends = service_backends(&settings.backend)?;
            let service = Arc::new(SessionService::open(&args.data, backends, settings.engine)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(args.addr).await?;
                tracing::info!(addr = %args.addr, data = %args.data.display(), "serving");
                axum::serve(listener, elicit_cli::http::router(service)).await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Record(args) => {
            let seed = args.seed.unwrap_or(settings.engine.seed);
            let dirs = cmd_record(&args.out, args.sessions, seed, args.answers, &settings.engine)?;
            for dir in dirs {
                println!("{}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::GenCases(args) => {
            let seed = args.seed.unwrap_or(settings.engine.seed);
            cmd_gen_cases(&args.out, args.n, seed, args.min_features, args.max_features)?;
            println!("wrote {} cases to {}", args.n, args.out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
