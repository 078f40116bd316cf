use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use crowdlabel::annotators::Connectors;
use crowdlabel::config::load_config;
use crowdlabel::export::export_dataset;
use crowdlabel::orchestration::VerificationSize;
use crowdlabel::persist::write_atomic;
use crowdlabel::scenario::{format_round_table, Scenario};
use crowdlabel::{Engine, StepOutcome};
use crowdlabel_service::server::{serve, AppState};
use crowdlabel_service::view::summarize;
use crowdlabel_service::workspace::{create_task, open_engine, resolve_task};

#[derive(Parser)]
#[command(name = "crowdlabel", version, about = "Multi-source annotation runs from the command line")]
struct Cli {
    /// Directory holding one snapshot directory per task.
    #[arg(long, global = true, env = "CROWDLABEL_DATA_DIR", default_value = "crowdlabel-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a task from a TOML config and its dataset.
    Init {
        config: PathBuf,
        /// Replace an existing task with the same id.
        #[arg(long)]
        force: bool,
    },
    /// Advance a task by N rounds or until it terminates.
    Run(RunArgs),
    /// Print the current round, convergence and budget of a task.
    Status {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Write the labeled dataset as JSON lines.
    Export {
        #[arg(long)]
        task: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Human batch files.
    #[command(subcommand)]
    Human(HumanCommand),
    /// Run a synthetic scenario in memory and print the round table.
    Simulate {
        /// `default` or a scenario TOML file.
        #[arg(default_value = "default")]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the final dataset export here.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("amount").required(true))]
struct RunArgs {
    #[arg(long)]
    task: Option<String>,
    /// Initialize from this config first if the task does not exist yet.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, group = "amount")]
    rounds: Option<u32>,
    #[arg(long, group = "amount")]
    to_termination: bool,
}

#[derive(Subcommand)]
enum HumanCommand {
    /// Write a batch file; defaults to the batch the run is waiting on.
    ExportBatch {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Read a completed batch file and finish its round.
    ImportBatch {
        file: PathBuf,
        #[arg(long)]
        task: Option<String>,
    },
    /// Open a review batch of the lowest-confidence samples of a finished run.
    Verify {
        #[arg(long)]
        task: Option<String>,
        #[arg(long, conflicts_with = "fraction", required_unless_present = "fraction")]
        count: Option<usize>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let root = cli.data_dir;
    let connectors = Connectors::default();
    match cli.command {
        Command::Init { config, force } => {
            let state = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            create_task(&root, &state, force)?;
            println!(
                "initialized task {} with {} samples, budget {}",
                state.task.task_id,
                state.samples.len(),
                state.task.budget
            );
        }
        Command::Run(args) => {
            let id = match (&args.config, resolve_task(&root, args.task.as_deref())) {
                (_, Ok(id)) => id,
                (Some(config), Err(_)) => {
                    let state = load_config(config).with_context(|| format!("loading {}", config.display()))?;
                    create_task(&root, &state, false)?;
                    state.task.task_id
                }
                (None, Err(e)) => return Err(e.into()),
            };
            let mut engine = open_engine(&root, &id, &connectors)?;
            let start = engine.state().history.len();
            let limit = if args.to_termination { None } else { args.rounds };
            if limit == Some(0) {
                bail!("--rounds must be positive");
            }
            let outcomes = engine.run(limit)?;
            print!("{}", format_round_table(&engine.state().history[start..]));
            report_outcome(&engine, outcomes.last());
        }
        Command::Status { task, json } => {
            let id = resolve_task(&root, task.as_deref())?;
            let state = crowdlabel::persist::SnapshotStore::for_task(&root, &id)?.load_latest()?;
            let s = summarize(&state);
            if json {
                println!("{}", serde_json::to_string_pretty(&s)?);
            } else {
                println!("task: {}", s.task_id);
                println!("round: {} of {}", s.round, s.max_rounds);
                println!("converged: {}/{}", s.converged, s.samples);
                println!("budget: {}  spent: {}  remaining: {}", s.budget, s.spent, s.remaining);
                if let Some(a) = s.golden_accuracy {
                    println!("golden accuracy: {:.2}%", a * 100.0);
                }
                if let Some(b) = &s.pending_batch {
                    println!("waiting on human batch: {b}");
                }
                match s.termination {
                    Some(r) => println!("terminated: {r}"),
                    None => println!("terminated: no"),
                }
            }
        }
        Command::Export { task, output } => {
            let id = resolve_task(&root, task.as_deref())?;
            let state = crowdlabel::persist::SnapshotStore::for_task(&root, &id)?.load_latest()?;
            emit(&export_dataset(&state)?, output.as_deref())?;
        }
        Command::Human(cmd) => human(&root, &connectors, cmd)?,
        Command::Simulate { scenario, seed, export } => {
            let mut sc = if scenario == "default" {
                Scenario::default()
            } else {
                let text = fs::read_to_string(&scenario).with_context(|| format!("reading {scenario}"))?;
                Scenario::from_toml(&text)?
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            let mut engine = Engine::new(sc.build()?, &connectors)?;
            let outcomes = engine.run(None)?;
            print!("{}", format_round_table(&engine.state().history));
            report_outcome(&engine, outcomes.last());
            if let Some(path) = export {
                emit(&export_dataset(engine.state())?, Some(&path))?;
            }
        }
        Command::Serve { addr } => {
            let app = Arc::new(AppState::load(&root, connectors)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(app, addr))?;
        }
    }
    Ok(())
}

fn human(root: &Path, connectors: &Connectors, cmd: HumanCommand) -> Result<()> {
    match cmd {
        HumanCommand::ExportBatch { task, batch, output } => {
            let id = resolve_task(root, task.as_deref())?;
            let engine = open_engine(root, &id, connectors)?;
            let batch = match batch.or_else(|| engine.state().pending.as_ref().map(|p| p.batch_id.clone())) {
                Some(b) => b,
                None => bail!("task {id} is not waiting on a human batch; name one with --batch"),
            };
            emit(&engine.export_human_batch(&batch)?, output.as_deref())?;
        }
        HumanCommand::ImportBatch { file, task } => {
            let id = resolve_task(root, task.as_deref())?;
            let mut engine = open_engine(root, &id, connectors)?;
            let content = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let outcome = engine.import_human_batch(&content)?;
            if let StepOutcome::Completed(s) = &outcome {
                print!("{}", format_round_table(std::slice::from_ref(s)));
            }
            report_outcome(&engine, Some(&outcome));
        }
        HumanCommand::Verify { task, count, fraction, output } => {
            let id = resolve_task(root, task.as_deref())?;
            let mut engine = open_engine(root, &id, connectors)?;
            let size = match (count, fraction) {
                (Some(c), _) => VerificationSize::Count(c),
                (None, Some(f)) => VerificationSize::Fraction(f),
                (None, None) => bail!("give --count or --fraction"),
            };
            let batch = engine.flag_final_verification(size)?;
            eprintln!("flagged {} samples in batch {}", batch.items.len(), batch.batch_id);
            emit(&engine.export_human_batch(&batch.batch_id)?, output.as_deref())?;
        }
    }
    Ok(())
}

fn report_outcome(engine: &Engine, last: Option<&StepOutcome>) {
    let s = engine.state();
    match last {
        Some(StepOutcome::AwaitingHuman { batch_id }) => {
            println!("round {} waiting on human batch {batch_id}", s.round + 1)
        }
        Some(StepOutcome::Terminated(r)) => println!("terminated after round {}: {r}", s.round),
        _ => println!("stopped after round {}", s.round),
    }
}

/// Writes to a file atomically, or to stdout.
fn emit(content: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => write_atomic(path, content.as_bytes()).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}
