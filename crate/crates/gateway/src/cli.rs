//! Command-line entry points for every pipeline stage.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use planforge_core::concept::{
    assemble_skeleton_prompt, capture_io_traces, extract_explicit, sandbox_excerpt, summarize_whitebox, unit_source,
    SkeletonPrompt, DEFAULT_PREAMBLE, DEFAULT_TEMPLATE,
};
use planforge_core::constraints::{catalog, evaluate, ConstraintId, EvaluationReport};
use planforge_core::discriminators::{
    ground_truth_ordering, hybrid_select, llm_rank, load_candidates, rubric_rank, score_query, GroundTruthMetric,
    GroundTruthOptions, LlmOptions, RankTarget,
};
use planforge_core::metrics::{batch_metrics, relative_improvement, render_table, MetricRow};
use planforge_core::model::{content_hash, ModelClient};
use planforge_core::optimize::{
    default_skeleton, prepare_run, resume, run_iteration, HumanSelection, LoopContext, RunConfig, RunDir, RunStore,
    ScriptedSelections, SelectionMode, SelectionSource,
};
use planforge_core::plan::{load_queries, parse_plan, Query};
use planforge_core::sandbox::{export_csv_tables, ingest_reference_archive, load_sandbox, Category};
use planforge_core::{Execution, Sandbox};

use crate::board::SelectionBoard;
use crate::server::{serve, AppState};
use crate::transport::HttpTransport;

#[derive(Debug, Parser)]
#[command(name = "planforge", version, about = "Constraint-aware travel-planning prompts: evaluate, rank, refine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Replay model calls from this transcript instead of calling an endpoint.
    #[arg(long, value_name = "PATH")]
    stub_transcript: Option<PathBuf>,
    /// Save every live model call to this transcript.
    #[arg(long, value_name = "PATH", conflicts_with = "stub_transcript")]
    record_transcript: Option<PathBuf>,
    /// Most model calls in flight at once.
    #[arg(long, default_value_t = planforge_core::model::DEFAULT_MAX_IN_FLIGHT)]
    max_in_flight: usize,
}

impl ModelArgs {
    fn client(&self) -> Result<ModelClient> {
        let client = match &self.stub_transcript {
            Some(path) => ModelClient::replay_file(path)?,
            None if self.record_transcript.is_some() => ModelClient::record(Arc::new(HttpTransport::from_env())),
            None => ModelClient::live(Arc::new(HttpTransport::from_env())),
        };
        Ok(client.with_max_in_flight(self.max_in_flight.max(1)))
    }

    fn finish(&self, client: &ModelClient) -> Result<()> {
        if let (Some(path), Some(t)) = (&self.record_transcript, client.recorded()) {
            t.save(path)?;
            eprintln!("recorded {} call(s) to {}", t.len(), path.display());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RankMode {
    Rubric,
    Llm,
    Hybrid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    HardestFirst,
    EasiestFirst,
}

impl From<Target> for RankTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::HardestFirst => RankTarget::HardestFirst,
            Target::EasiestFirst => RankTarget::EasiestFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PromptMode {
    Explicit,
    Whitebox,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LoopMode {
    Rubric,
    Llm,
    Hybrid,
    Human,
}

impl From<LoopMode> for SelectionMode {
    fn from(m: LoopMode) -> Self {
        match m {
            LoopMode::Rubric => SelectionMode::Rubric,
            LoopMode::Llm => SelectionMode::Llm,
            LoopMode::Hybrid => SelectionMode::Hybrid,
            LoopMode::Human => SelectionMode::Human,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a reference archive into per-category CSV tables.
    Ingest {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a sandbox (archive or CSV directory) as CSV tables.
    ExportCsv {
        #[arg(long)]
        sandbox: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one plan against one query.
    Evaluate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Which query to use when the file holds several.
        #[arg(long)]
        query_id: Option<String>,
        #[arg(long)]
        sandbox: PathBuf,
    },
    /// Print the difficulty rubric score of each query.
    ScoreQuery {
        #[arg(long)]
        query: PathBuf,
    },
    /// Rank candidate example plans and pick one.
    Rank {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_enum, default_value = "rubric")]
        mode: RankMode,
        #[arg(long, value_enum, default_value = "hardest-first")]
        target: Target,
        #[arg(long, default_value_t = 10)]
        repeats: u32,
        /// A reviewer's pick, which wins over every ranking.
        #[arg(long = "override")]
        human_override: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Order candidates by the validation pass rate each yields as the sole example.
    GroundTruth {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        sandbox: PathBuf,
        #[arg(long, default_value_t = 3)]
        runs: u32,
        #[arg(long, value_enum, default_value = "micro")]
        metric: Metric,
        /// Use only the first N queries.
        #[arg(long)]
        limit: Option<usize>,
        /// Skeleton prompt JSON (defaults to the built-in skeleton).
        #[arg(long)]
        skeleton: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Assemble a skeleton prompt.
    BuildPrompt {
        #[arg(long)]
        sandbox: PathBuf,
        #[arg(long, value_enum, default_value = "explicit")]
        mode: PromptMode,
        /// Candidate plans whose check traces back white-box summaries.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        preamble: Option<PathBuf>,
        /// Write the skeleton as JSON here instead of printing the rendered prompt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run (or resume) the refinement loop.
    RunLoop {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<LoopMode>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        max_iterations: Option<u32>,
        #[arg(long, default_value = "runs")]
        store: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        /// Serve the review API here while the loop runs (human mode).
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// Pre-recorded human selections, one JSON object per line.
        #[arg(long)]
        selections: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Print pass-rate metrics for a run or for a file of evaluation reports.
    Metrics {
        #[arg(long, conflicts_with = "reports", required_unless_present = "reports")]
        run: Option<PathBuf>,
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Serve the review API over a run store.
    Serve {
        #[arg(long, default_value = "runs")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns 0 on success, 1 on failure and 2 on a usage error.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn pick_query(path: &Path, id: Option<&str>) -> Result<Query> {
    let queries = load_queries(path)?;
    match id {
        Some(id) => queries
            .into_iter()
            .find(|q| q.id == id)
            .ok_or_else(|| anyhow!("{} holds no query `{id}`", path.display())),
        None if queries.len() == 1 => Ok(queries.into_iter().next().unwrap()),
        None => bail!("{} holds {} queries; pass --query-id", path.display(), queries.len()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { archive, out } => {
            let sandbox = ingest_reference_archive(&archive)?;
            write_tables(&sandbox, &out)
        }
        Command::ExportCsv { sandbox, out } => write_tables(&load_sandbox(&sandbox)?, &out),
        Command::Evaluate {
            plan,
            query,
            query_id,
            sandbox,
        } => {
            let query = pick_query(&query, query_id.as_deref())?;
            let sandbox = load_sandbox(&sandbox)?;
            let text = fs::read_to_string(&plan).with_context(|| format!("reading {}", plan.display()))?;
            let report = match parse_plan(&text) {
                Ok(p) => evaluate(&p.with_query_id(&query.id), &query, &sandbox),
                Err(e) => {
                    eprintln!("plan does not parse: {e}");
                    EvaluationReport::undelivered(&query.id)
                }
            };
            print_json(&report)
        }
        Command::ScoreQuery { query } => {
            for q in load_queries(&query)? {
                println!("{}", serde_json::to_string(&score_query(&q)?)?);
            }
            Ok(())
        }
        Command::Rank {
            candidates,
            mode,
            target,
            repeats,
            human_override,
            model,
        } => {
            let candidates = load_candidates(&candidates)?;
            let ids: Vec<String> = candidates.iter().map(|c| c.plan_id.clone()).collect();
            let features: Vec<_> = candidates
                .iter()
                .map(|c| (c.plan_id.clone(), planforge_core::plan::extract_features(&c.query)))
                .collect();
            let mut rankings = Vec::new();
            if !matches!(mode, RankMode::Llm) {
                rankings.push(rubric_rank(&features, target.into())?);
            }
            if !matches!(mode, RankMode::Rubric) {
                let client = model.client()?;
                let plans: Vec<(String, String)> =
                    candidates.iter().map(|c| (c.plan_id.clone(), c.plan_text.clone())).collect();
                let opts = LlmOptions {
                    repeats,
                    ..Default::default()
                };
                rankings.push(llm_rank(&plans, &planforge_core::concept::evaluation_code(), &client, &opts)?);
                model.finish(&client)?;
            }
            let selected = hybrid_select(&ids, &rankings, human_override.as_deref())?;
            print_json(&serde_json::json!({ "rankings": rankings, "selected": selected }))
        }
        Command::GroundTruth {
            candidates,
            queries,
            sandbox,
            runs,
            metric,
            limit,
            skeleton,
            model,
        } => {
            let candidates = load_candidates(&candidates)?;
            let mut queries = load_queries(&queries)?;
            if let Some(n) = limit {
                queries.truncate(n);
            }
            let sandbox = load_sandbox(&sandbox)?;
            let skeleton = match skeleton {
                Some(p) => read_skeleton(&p)?,
                None => default_skeleton(&sandbox),
            };
            let client = model.client()?;
            let opts = GroundTruthOptions {
                runs,
                metric: match metric {
                    Metric::Micro => GroundTruthMetric::Micro,
                    Metric::Macro => GroundTruthMetric::Macro,
                },
                exec: Execution::default(),
            };
            let ordering = ground_truth_ordering(&candidates, &skeleton, &queries, &sandbox, &client, &opts)?;
            model.finish(&client)?;
            print_json(&ordering)
        }
        Command::BuildPrompt {
            sandbox,
            mode,
            samples,
            template,
            preamble,
            out,
            model,
        } => {
            let sandbox = load_sandbox(&sandbox)?;
            let template = match template {
                Some(p) => fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                None => DEFAULT_TEMPLATE.to_string(),
            };
            let preamble = match preamble {
                Some(p) => fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                None => DEFAULT_PREAMBLE.to_string(),
            };
            let summaries = match mode {
                PromptMode::Explicit => extract_explicit(&catalog()),
                PromptMode::Whitebox => {
                    let client = model.client()?;
                    let samples = match samples {
                        Some(p) => load_candidates(&p)?,
                        None => Vec::new(),
                    };
                    let plans: Vec<_> = samples
                        .iter()
                        .map(|c| c.plan().map(|p| (p, c.query.clone())))
                        .collect::<Result<_, _>>()?;
                    let triples: Vec<_> = plans.iter().map(|(p, q)| (p, q, &sandbox)).collect();
                    let mut seen = Vec::new();
                    let mut out = Vec::new();
                    for id in ConstraintId::ALL {
                        let code = unit_source(id);
                        if triples.is_empty() && seen.contains(&code) {
                            continue;
                        }
                        seen.push(code);
                        let traces = capture_io_traces(id, &triples);
                        let mut s = summarize_whitebox(code, &traces, &client)?;
                        s.constraint_id.get_or_insert_with(|| id.as_str().to_string());
                        out.push(s);
                    }
                    model.finish(&client)?;
                    out
                }
            };
            let prompt =
                assemble_skeleton_prompt(&preamble, &summaries, &sandbox_excerpt(&sandbox, &Category::ALL), &template)?;
            match out {
                Some(path) => {
                    fs::write(&path, serde_json::to_string_pretty(&prompt)? + "\n")
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {} (digest {})", path.display(), prompt.digest());
                }
                None => print!("{}", prompt.render()),
            }
            Ok(())
        }
        Command::RunLoop {
            config,
            mode,
            threshold,
            max_iterations,
            store,
            run_id,
            listen,
            selections,
            sequential,
            model,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.selection_mode = m.into();
            }
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            if let Some(n) = max_iterations {
                cfg.max_iterations = n;
            }
            cfg.validate().map_err(|e| anyhow!("config {}: {e}", config.display()))?;
            let run_id = run_id.unwrap_or_else(|| format!("run-{}", &content_hash(&cfg.to_json())[..8]));
            let run_dir = RunDir::open(store.join(&run_id));
            if !run_dir.exists() {
                let base = config.parent().unwrap_or(Path::new("."));
                RunDir::create(&run_dir.path, &prepare_run(cfg.clone(), base)?)?;
            }
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let loop_args = LoopArgs {
                run: run_dir,
                exec,
                model,
                selections,
            };
            match listen {
                Some(addr) => run_with_server(loop_args, &store, addr),
                None => run_loop_cli(&loop_args, None),
            }
        }
        Command::Metrics { run, reports } => {
            if let Some(path) = reports {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let reports: Vec<EvaluationReport> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str)
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("parsing {}", path.display()))?;
                let m = batch_metrics(&reports)?;
                print!("{}", render_table(&[m.row("batch")]));
                return Ok(());
            }
            let run = RunDir::open(run.expect("clap requires --run or --reports"));
            if !run.exists() {
                bail!("{} is not a run directory", run.path.display());
            }
            let progress = resume(&run)?;
            let rows: Vec<MetricRow> = progress
                .records
                .iter()
                .map(|r| r.metrics.row(format!("iteration {}", r.index)))
                .collect();
            if rows.is_empty() {
                println!("no iterations recorded");
                return Ok(());
            }
            print!("{}", render_table(&rows));
            let (first, last) = (rows[0].final_pass_rate, rows[rows.len() - 1].final_pass_rate);
            if rows.len() > 1 {
                match relative_improvement(first, last) {
                    Ok(r) => println!("final pass rate {first:.2} -> {last:.2} ({r:+.2}%)"),
                    Err(_) => println!("final pass rate {first:.2} -> {last:.2}"),
                }
            }
            Ok(())
        }
        Command::Serve { store, listen } => {
            if !store.is_dir() {
                bail!("run store {} does not exist", store.display());
            }
            let state = AppState {
                store: RunStore::new(store),
                board: Arc::new(SelectionBoard::new()),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(
                listen,
                state,
                |a| eprintln!("listening on http://{a}"),
                async {
                    let _ = tokio::signal::ctrl_c().await;
                },
            ))?;
            Ok(())
        }
    }
}

fn write_tables(sandbox: &Sandbox, out: &Path) -> Result<()> {
    for path in export_csv_tables(sandbox, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn read_skeleton(path: &Path) -> Result<SkeletonPrompt> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

struct LoopArgs {
    run: RunDir,
    exec: Execution,
    model: ModelArgs,
    selections: Option<PathBuf>,
}

fn run_loop_cli(args: &LoopArgs, board: Option<&SelectionBoard>) -> Result<()> {
    let progress = resume(&args.run)?;
    let inputs = progress.inputs;
    let mut state = progress.state;
    let scripted = match &args.selections {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let picks: Vec<HumanSelection> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .with_context(|| format!("parsing {}", path.display()))?;
            Some(ScriptedSelections::new(picks))
        }
        None => None,
    };
    let selection: Option<&dyn SelectionSource> = match (&scripted, board) {
        (Some(s), _) => Some(s),
        (None, Some(b)) => Some(b),
        _ => None,
    };
    if inputs.config.selection_mode == SelectionMode::Human && selection.is_none() && !state.stopped {
        bail!("human mode needs --listen or --selections");
    }
    let client = args.model.client()?;
    let ctx = LoopContext {
        run: &args.run,
        inputs: &inputs,
        model: &client,
        selection,
        exec: args.exec,
    };
    println!("run {} at {}", args.run.id(), args.run.path.display());
    if state.stopped {
        println!("run already stopped after {} iteration(s)", state.next_index);
    }
    let result = (|| -> Result<()> {
        while !state.stopped {
            let r = run_iteration(&mut state, &ctx)?;
            let picked = r.selected_plan_id.as_deref().unwrap_or("-");
            let stop = r
                .stop_reason
                .map(|s| format!(" stopped ({})", serde_json::to_value(s).unwrap().as_str().unwrap()))
                .unwrap_or_default();
            println!(
                "iteration {}: final pass {:.2}% selected {picked}{stop}",
                r.index, r.metrics.final_pass_rate
            );
        }
        Ok(())
    })();
    args.model.finish(&client)?;
    result
}

fn run_with_server(args: LoopArgs, store: &Path, addr: SocketAddr) -> Result<()> {
    let board = Arc::new(SelectionBoard::new());
    let state = AppState {
        store: RunStore::new(store),
        board: board.clone(),
    };
    let rt = tokio::runtime::Runtime::new()?;
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let (bound_tx, bound_rx) = std::sync::mpsc::channel();
    let server = rt.spawn(serve(
        addr,
        state,
        move |a| {
            let _ = bound_tx.send(a);
        },
        async {
            let _ = stop_rx.await;
        },
    ));
    let Ok(bound) = bound_rx.recv() else {
        return match rt.block_on(server)? {
            Err(e) => Err(anyhow!("cannot listen on {addr}: {e}")),
            Ok(()) => Err(anyhow!("server exited before binding")),
        };
    };
    eprintln!("listening on http://{bound}");
    let result = run_loop_cli(&args, Some(&board));
    let _ = stop_tx.send(());
    rt.block_on(server)??;
    result
}

