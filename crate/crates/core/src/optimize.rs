//! The iterative refinement loop and its append-only run store.
//!
//! Each iteration generates a plan for every validation query with the
//! current prompt, evaluates the batch, stops if the final pass rate reaches
//! the threshold, and otherwise ranks the remaining candidate examples,
//! selects one and appends it to the prompt.
//!
//! A run directory is self-contained:
//!
//! ```text
//! <run>/config.json       run configuration
//! <run>/skeleton.json     initial prompt
//! <run>/candidates.json   candidate pool
//! <run>/queries.json      validation queries
//! <run>/sandbox/*.csv     reference data
//! <run>/prompts/<h>.txt   rendered prompts by content hash
//! <run>/run.ndjson        one event per line, append-only
//! ```

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concept::{
    assemble_skeleton_prompt, evaluation_code, extract_explicit, refine_prompt, sandbox_excerpt, SkeletonPrompt,
    DEFAULT_PREAMBLE, DEFAULT_TEMPLATE,
};
use crate::constraints::{catalog, evaluate, EvaluationReport};
use crate::discriminators::{
    hybrid_select, llm_rank, load_candidates, rubric_rank, CandidateRecord, DiscriminatorError, LlmOptions, RankTarget,
    Ranking,
};
use crate::metrics::{batch_metrics, BatchMetrics};
use crate::model::{content_hash, ModelClient, ModelError, ModelRequest, ModelRole};
use crate::par::Execution;
use crate::plan::{extract_features, load_queries, parse_plan, Query, QueryError};
use crate::sandbox::{export_csv_tables, load_sandbox, Category, Sandbox, SandboxError};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at byte offset {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: String },
    #[error("no candidates left to select from")]
    NoCandidates,
    #[error("run already stopped")]
    Finished,
    #[error("unknown validation query `{0}`")]
    UnknownQuery(String),
    #[error("selection `{0}` is not a remaining candidate")]
    UnknownCandidate(String),
    #[error("selection unavailable: {0}")]
    Selection(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discriminator(#[from] DiscriminatorError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OptimizeError + '_ {
    move |source| OptimizeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Rubric,
    Llm,
    Hybrid,
    Human,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rubric" => Ok(SelectionMode::Rubric),
            "llm" => Ok(SelectionMode::Llm),
            "hybrid" => Ok(SelectionMode::Hybrid),
            "human" => Ok(SelectionMode::Human),
            _ => Err(format!("unknown selection mode `{s}` (expected rubric, llm, hybrid or human)")),
        }
    }
}

/// Query and candidate ids per split. The training split is recorded with
/// the run but not used by the loop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    #[serde(default)]
    pub training: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
    #[serde(default)]
    pub discriminator: Vec<String>,
}

/// Input files, relative to the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInputs {
    pub sandbox: PathBuf,
    pub queries: PathBuf,
    pub candidates: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
}

fn default_max_iterations() -> u32 {
    5
}
fn default_runs() -> u32 {
    3
}
fn default_repeats() -> u32 {
    10
}
fn default_mode() -> SelectionMode {
    SelectionMode::Hybrid
}

/// The threshold has no default: a config without one is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub threshold: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default = "default_mode")]
    pub selection_mode: SelectionMode,
    #[serde(default = "default_runs")]
    pub runs_per_candidate: u32,
    #[serde(default = "default_repeats")]
    pub llm_repeats: u32,
    #[serde(default)]
    pub rank_target: RankTarget,
    #[serde(default)]
    pub splits: Splits,
    #[serde(default)]
    pub seed: u64,
    pub inputs: RunInputs,
}

/// Largest candidate pool drawn when the discriminator split is empty.
pub const DEFAULT_POOL_SIZE: usize = 10;

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=100.0).contains(&self.threshold) {
            return Err(format!("threshold {} is outside [0, 100]", self.threshold));
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.runs_per_candidate == 0 || self.llm_repeats == 0 {
            return Err("runs_per_candidate and llm_repeats must be at least 1".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig, OptimizeError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        RunConfig::parse(&text).map_err(|reason| OptimizeError::Config {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Everything a run needs, resolved from a config file.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub sandbox: Sandbox,
    pub validation: Vec<Query>,
    pub candidates: Vec<CandidateRecord>,
    pub skeleton: SkeletonPrompt,
}

/// The default skeleton: explicit catalog statements plus every table.
pub fn default_skeleton(sandbox: &Sandbox) -> SkeletonPrompt {
    assemble_skeleton_prompt(
        DEFAULT_PREAMBLE,
        &extract_explicit(&catalog()),
        &sandbox_excerpt(sandbox, &Category::ALL),
        DEFAULT_TEMPLATE,
    )
    .expect("default template is valid")
}

/// Validation queries are the split's ids in order, or every query not in
/// the training split. The candidate pool is the discriminator split, or a
/// seeded sample of up to ten candidates sorted by id.
pub fn prepare_run(config: RunConfig, base: &Path) -> Result<PreparedRun, OptimizeError> {
    config.validate().map_err(|reason| OptimizeError::Config {
        path: base.to_path_buf(),
        reason,
    })?;
    let sandbox = load_sandbox(&base.join(&config.inputs.sandbox))?;
    let queries = load_queries(&base.join(&config.inputs.queries))?;
    let all_candidates = load_candidates(&base.join(&config.inputs.candidates))?;

    let validation = if config.splits.validation.is_empty() {
        let training: BTreeSet<&String> = config.splits.training.iter().collect();
        queries.iter().filter(|q| !training.contains(&q.id)).cloned().collect()
    } else {
        config
            .splits
            .validation
            .iter()
            .map(|id| {
                queries
                    .iter()
                    .find(|q| &q.id == id)
                    .cloned()
                    .ok_or_else(|| OptimizeError::UnknownQuery(id.clone()))
            })
            .collect::<Result<_, _>>()?
    };

    let candidates = if config.splits.discriminator.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut picked: Vec<CandidateRecord> = all_candidates
            .choose_multiple(&mut rng, DEFAULT_POOL_SIZE)
            .cloned()
            .collect();
        picked.sort_by(|a, b| a.plan_id.cmp(&b.plan_id));
        picked
    } else {
        config
            .splits
            .discriminator
            .iter()
            .map(|id| {
                all_candidates
                    .iter()
                    .find(|c| &c.plan_id == id)
                    .cloned()
                    .ok_or_else(|| OptimizeError::UnknownCandidate(id.clone()))
            })
            .collect::<Result<_, _>>()?
    };

    let skeleton = match &config.inputs.skeleton {
        Some(p) => {
            let path = base.join(p);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            serde_json::from_str(&text).map_err(|e| OptimizeError::Config {
                path,
                reason: e.to_string(),
            })?
        }
        None => default_skeleton(&sandbox),
    };

    Ok(PreparedRun {
        config,
        sandbox,
        validation,
        candidates,
        skeleton,
    })
}

// ---------------------------------------------------------------------------
// Records

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Threshold,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationRecord {
    pub index: u32,
    pub prompt_digest: String,
    pub metrics: BatchMetrics,
    pub candidate_ids: Vec<String>,
    pub rankings: Vec<Ranking>,
    pub selected_plan_id: Option<String>,
    pub refined_prompt_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer_note: Option<String>,
    pub stopped: bool,
    pub stop_reason: Option<StopReason>,
}

/// Published while a human-mode iteration waits for a reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AwaitingSelection {
    pub index: u32,
    pub prompt_digest: String,
    pub metrics: BatchMetrics,
    pub candidate_ids: Vec<String>,
    pub rankings: Vec<Ranking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum RunEvent {
    Iteration(IterationRecord),
    Awaiting(AwaitingSelection),
    Error { index: u32, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanSelection {
    pub plan_id: String,
    #[serde(default)]
    pub reviewer_note: Option<String>,
}

/// Where human-mode iterations get their decision. Implementations block
/// until a reviewer answers.
pub trait SelectionSource: Send + Sync {
    fn await_selection(&self, run_id: &str, pending: &AwaitingSelection) -> Result<HumanSelection, OptimizeError>;
}

/// Pre-recorded decisions, answered in order.
pub struct ScriptedSelections(std::sync::Mutex<std::collections::VecDeque<HumanSelection>>);

impl ScriptedSelections {
    pub fn new(selections: impl IntoIterator<Item = HumanSelection>) -> Self {
        ScriptedSelections(std::sync::Mutex::new(selections.into_iter().collect()))
    }
}

impl SelectionSource for ScriptedSelections {
    fn await_selection(&self, _: &str, _: &AwaitingSelection) -> Result<HumanSelection, OptimizeError> {
        self.0
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| OptimizeError::Selection("no scripted selection left".into()))
    }
}

// ---------------------------------------------------------------------------
// Run directory

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub path: PathBuf,
}

const RUN_LOG: &str = "run.ndjson";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OptimizeError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, OptimizeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| OptimizeError::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl RunDir {
    pub fn open(path: impl Into<PathBuf>) -> RunDir {
        RunDir { path: path.into() }
    }

    pub fn id(&self) -> String {
        self.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn exists(&self) -> bool {
        self.path.join("config.json").is_file()
    }

    /// Writes the run's inputs. Fails if the directory already holds a run.
    pub fn create(path: impl Into<PathBuf>, run: &PreparedRun) -> Result<RunDir, OptimizeError> {
        let dir = RunDir::open(path);
        if dir.exists() {
            return Err(OptimizeError::Config {
                path: dir.path.clone(),
                reason: "run directory already exists".into(),
            });
        }
        fs::create_dir_all(dir.path.join("prompts")).map_err(io_err(&dir.path))?;
        write_json(&dir.path.join("config.json"), &run.config)?;
        write_json(&dir.path.join("skeleton.json"), &run.skeleton)?;
        write_json(&dir.path.join("candidates.json"), &run.candidates)?;
        write_json(&dir.path.join("queries.json"), &run.validation)?;
        export_csv_tables(&run.sandbox, &dir.path.join("sandbox"))?;
        dir.store_prompt(&run.skeleton.render())?;
        Ok(dir)
    }

    /// Reads back what [`RunDir::create`] wrote.
    pub fn load_inputs(&self) -> Result<PreparedRun, OptimizeError> {
        Ok(PreparedRun {
            config: read_json(&self.path.join("config.json"))?,
            skeleton: read_json(&self.path.join("skeleton.json"))?,
            candidates: read_json(&self.path.join("candidates.json"))?,
            validation: read_json(&self.path.join("queries.json"))?,
            sandbox: load_sandbox(&self.path.join("sandbox"))?,
        })
    }

    /// Stores prompt text under its content hash and returns the hash.
    pub fn store_prompt(&self, text: &str) -> Result<String, OptimizeError> {
        let digest = content_hash(text);
        let path = self.path.join("prompts").join(format!("{digest}.txt"));
        if !path.exists() {
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        Ok(digest)
    }

    pub fn prompt_text(&self, digest: &str) -> Result<String, OptimizeError> {
        let path = self.path.join("prompts").join(format!("{digest}.txt"));
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    pub fn log_path(&self) -> PathBuf {
        self.path.join(RUN_LOG)
    }

    pub fn append(&self, event: &RunEvent) -> Result<(), OptimizeError> {
        let path = self.log_path();
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    /// Every event in the log. A line that does not parse, or a final line
    /// without its newline, is a corrupt record at that line's byte offset.
    pub fn events(&self) -> Result<Vec<RunEvent>, OptimizeError> {
        let path = self.log_path();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut events = Vec::new();
        let mut offset = 0usize;
        while offset < bytes.len() {
            let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
                return Err(OptimizeError::CorruptRecord {
                    offset: offset as u64,
                    reason: "truncated record".into(),
                });
            };
            let line = &bytes[offset..offset + len];
            let event = serde_json::from_slice(line).map_err(|e| OptimizeError::CorruptRecord {
                offset: offset as u64,
                reason: e.to_string(),
            })?;
            events.push(event);
            offset += len + 1;
        }
        Ok(events)
    }
}

/// A directory of run directories.
#[derive(Debug, Clone)]
pub struct RunStore {
    pub root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    /// Run ids in ascending order.
    pub fn list(&self) -> Result<Vec<String>, OptimizeError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            let dir = RunDir::open(entry.path());
            if dir.exists() {
                ids.push(dir.id());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn run(&self, id: &str) -> Option<RunDir> {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return None;
        }
        let dir = RunDir::open(self.root.join(id));
        dir.exists().then_some(dir)
    }
}

// ---------------------------------------------------------------------------
// Loop state

#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub next_index: u32,
    pub prompt: SkeletonPrompt,
    /// Candidate ids not yet selected, in pool order.
    pub pool: Vec<String>,
    pub stopped: bool,
}

impl LoopState {
    pub fn fresh(run: &PreparedRun) -> LoopState {
        LoopState {
            next_index: 0,
            prompt: run.skeleton.clone(),
            pool: run.candidates.iter().map(|c| c.plan_id.clone()).collect(),
            stopped: false,
        }
    }
}

/// What a run directory says about a run.
#[derive(Debug, Clone)]
pub struct RunProgress {
    pub run_id: String,
    pub inputs: PreparedRun,
    pub records: Vec<IterationRecord>,
    pub awaiting: Option<AwaitingSelection>,
    pub errors: Vec<(u32, String)>,
    pub state: LoopState,
}

fn candidate<'a>(candidates: &'a [CandidateRecord], id: &str) -> Result<&'a CandidateRecord, OptimizeError> {
    candidates
        .iter()
        .find(|c| c.plan_id == id)
        .ok_or_else(|| OptimizeError::UnknownCandidate(id.to_string()))
}

fn apply_selection(state: &mut LoopState, candidates: &[CandidateRecord], id: &str) -> Result<(), OptimizeError> {
    let c = candidate(candidates, id)?;
    let plan = c.plan().map_err(|e| OptimizeError::Selection(e.to_string()))?;
    state.prompt = refine_prompt(&state.prompt, &c.query.raw_text, &plan);
    state.pool.retain(|p| p != id);
    Ok(())
}

/// Rebuilds the loop state by replaying the record stream over the stored
/// inputs. Prompt digests in the records are checked along the way.
pub fn resume(run: &RunDir) -> Result<RunProgress, OptimizeError> {
    let inputs = run.load_inputs()?;
    let events = run.events()?;
    let mut state = LoopState::fresh(&inputs);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut awaiting = None;
    for event in events {
        match event {
            RunEvent::Iteration(r) => {
                let mismatch = |what: &str| OptimizeError::CorruptRecord {
                    offset: 0,
                    reason: format!("iteration {}: {what}", r.index),
                };
                if r.index != state.next_index {
                    return Err(mismatch("out of order"));
                }
                if r.prompt_digest != state.prompt.digest() {
                    return Err(mismatch("prompt digest does not match the replayed prompt"));
                }
                if let Some(id) = &r.selected_plan_id {
                    apply_selection(&mut state, &inputs.candidates, id)?;
                    if r.refined_prompt_digest.as_deref() != Some(state.prompt.digest().as_str()) {
                        return Err(mismatch("refined prompt digest does not match"));
                    }
                }
                state.next_index += 1;
                state.stopped = r.stopped;
                awaiting = None;
                records.push(r);
            }
            RunEvent::Awaiting(a) => awaiting = Some(a),
            RunEvent::Error { index, message } => errors.push((index, message)),
        }
    }
    let awaiting = awaiting.filter(|a| a.index == state.next_index && !state.stopped);
    Ok(RunProgress {
        run_id: run.id(),
        inputs,
        records,
        awaiting,
        errors,
        state,
    })
}

// ---------------------------------------------------------------------------
// Iterations

/// Call index used for validation generations inside the loop, kept apart
/// from the ground-truth harness's run indices.
pub const LOOP_CALL_INDEX: u64 = 1000;

pub struct LoopContext<'a> {
    pub run: &'a RunDir,
    pub inputs: &'a PreparedRun,
    pub model: &'a ModelClient,
    pub selection: Option<&'a dyn SelectionSource>,
    pub exec: Execution,
}

fn validation_reports(ctx: &LoopContext, prompt: &SkeletonPrompt) -> Result<Vec<EvaluationReport>, OptimizeError> {
    let sandbox = &ctx.inputs.sandbox;
    let reports = ctx.exec.try_map(&ctx.inputs.validation, |q| {
        let req = ModelRequest::new(ModelRole::Planner, prompt.planner_prompt(q), LOOP_CALL_INDEX);
        let text = ctx.model.complete(&req)?.text;
        Ok::<_, ModelError>(match parse_plan(&text) {
            Ok(plan) => evaluate(&plan.with_query_id(&q.id), q, sandbox),
            Err(_) => EvaluationReport::undelivered(&q.id),
        })
    })?;
    Ok(reports)
}

fn rankings(ctx: &LoopContext, state: &LoopState) -> Result<Vec<Ranking>, OptimizeError> {
    let config = &ctx.inputs.config;
    let pool: Vec<&CandidateRecord> = state
        .pool
        .iter()
        .map(|id| candidate(&ctx.inputs.candidates, id))
        .collect::<Result<_, _>>()?;
    let features: Vec<_> = pool.iter().map(|c| (c.plan_id.clone(), extract_features(&c.query))).collect();
    let mut out = vec![rubric_rank(&features, config.rank_target)?];
    if config.selection_mode != SelectionMode::Rubric && pool.len() >= 2 {
        let plans: Vec<(String, String)> = pool.iter().map(|c| (c.plan_id.clone(), c.plan_text.clone())).collect();
        let opts = LlmOptions {
            repeats: config.llm_repeats,
            round: state.next_index as u64,
            exec: ctx.exec,
        };
        out.push(llm_rank(&plans, &evaluation_code(), ctx.model, &opts)?);
    }
    if config.selection_mode == SelectionMode::Llm {
        out.remove(0);
    }
    Ok(out)
}

fn iterate(state: &LoopState, ctx: &LoopContext) -> Result<IterationRecord, OptimizeError> {
    let config = &ctx.inputs.config;
    let index = state.next_index;
    let prompt_digest = ctx.run.store_prompt(&state.prompt.render())?;
    let reports = validation_reports(ctx, &state.prompt)?;
    let metrics = batch_metrics(&reports).map_err(|e| OptimizeError::Selection(e.to_string()))?;
    let mut record = IterationRecord {
        index,
        prompt_digest,
        metrics,
        candidate_ids: state.pool.clone(),
        rankings: Vec::new(),
        selected_plan_id: None,
        refined_prompt_digest: None,
        reviewer_note: None,
        stopped: false,
        stop_reason: None,
    };
    if metrics.final_pass_rate >= config.threshold {
        record.stopped = true;
        record.stop_reason = Some(StopReason::Threshold);
        return Ok(record);
    }
    if state.pool.is_empty() {
        return Err(OptimizeError::NoCandidates);
    }
    record.rankings = rankings(ctx, state)?;
    let (selected, note) = if config.selection_mode == SelectionMode::Human {
        let pending = AwaitingSelection {
            index,
            prompt_digest: record.prompt_digest.clone(),
            metrics,
            candidate_ids: record.candidate_ids.clone(),
            rankings: record.rankings.clone(),
        };
        ctx.run.append(&RunEvent::Awaiting(pending.clone()))?;
        let source = ctx
            .selection
            .ok_or_else(|| OptimizeError::Selection("human mode needs a selection source".into()))?;
        let choice = source.await_selection(&ctx.run.id(), &pending)?;
        let id = hybrid_select(&state.pool, &record.rankings, Some(&choice.plan_id))
            .map_err(|_| OptimizeError::UnknownCandidate(choice.plan_id.clone()))?;
        (id, choice.reviewer_note)
    } else {
        (hybrid_select(&state.pool, &record.rankings, None)?, None)
    };
    let mut next = state.clone();
    apply_selection(&mut next, &ctx.inputs.candidates, &selected)?;
    record.refined_prompt_digest = Some(ctx.run.store_prompt(&next.prompt.render())?);
    record.selected_plan_id = Some(selected);
    record.reviewer_note = note;
    if index + 1 >= config.max_iterations {
        record.stopped = true;
        record.stop_reason = Some(StopReason::MaxIterations);
    }
    Ok(record)
}

/// Runs one iteration and appends its record. On failure an error event is
/// appended instead and `state` is left as it was.
pub fn run_iteration(state: &mut LoopState, ctx: &LoopContext) -> Result<IterationRecord, OptimizeError> {
    if state.stopped {
        return Err(OptimizeError::Finished);
    }
    match iterate(state, ctx) {
        Ok(record) => {
            ctx.run.append(&RunEvent::Iteration(record.clone()))?;
            if let Some(id) = &record.selected_plan_id {
                apply_selection(state, &ctx.inputs.candidates, id)?;
            }
            state.next_index += 1;
            state.stopped = record.stopped;
            Ok(record)
        }
        Err(e) => {
            ctx.run.append(&RunEvent::Error {
                index: state.next_index,
                message: e.to_string(),
            })?;
            Err(e)
        }
    }
}

/// Resumes the run in `ctx.run` and iterates until it stops. Returns the
/// records written by this call.
pub fn run_loop(ctx: &LoopContext) -> Result<Vec<IterationRecord>, OptimizeError> {
    let mut state = resume(ctx.run)?.state;
    let mut written = Vec::new();
    while !state.stopped {
        written.push(run_iteration(&mut state, ctx)?);
    }
    Ok(written)
}
