//! Rankings of candidate example plans.
//!
//! - the difficulty rubric scores the constraints of a candidate's query,
//! - the LLM discriminator averages repeated 1-100 scores of plan text read
//!   alongside the evaluation code,
//! - the ground-truth harness measures each candidate as the sole prompt
//!   example over repeated validation runs,
//! - hybrid selection combines rankings by Borda count, with a human
//!   override taking precedence.
//!
//! Ties are broken by ascending plan id everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concept::{refine_prompt, SkeletonPrompt};
use crate::constraints::{evaluate, EvaluationReport};
use crate::metrics::batch_metrics;
use crate::model::{ModelClient, ModelError, ModelRequest, ModelRole};
use crate::par::Execution;
use crate::plan::{extract_features, parse_plan, ParseError, Plan, Query, QueryFeatures};
use crate::sandbox::Sandbox;

#[derive(Debug, Error)]
pub enum DiscriminatorError {
    #[error("unsupported trip length {0} (expected 3, 5 or 7 days)")]
    UnsupportedDuration(u32),
    #[error("unsupported city count {0} (expected 1, 2 or 3)")]
    UnsupportedCityCount(u32),
    #[error("no candidates")]
    NoCandidates,
    #[error("at least two plans are needed to rank")]
    TooFewPlans,
    #[error("repeats and runs must be at least 1")]
    ZeroRepeats,
    #[error("no score in [1, 100] after {attempts} attempts; last response: {last_response:?}")]
    ScoreParse { attempts: u32, last_response: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("override `{0}` is not a candidate")]
    OverrideNotInCandidates(String),
    #[error("candidate file {path}: {reason}")]
    CandidateFile { path: String, reason: String },
}

// ---------------------------------------------------------------------------
// Rankings and candidates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingSource {
    Rubric,
    Llm,
    GroundTruth,
    HumanOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub source: RankingSource,
    pub ordered_plan_ids: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

impl Ranking {
    /// Orders ids by score (descending when `descending`), ties by ascending id.
    pub fn from_scores(source: RankingSource, scores: BTreeMap<String, f64>, descending: bool) -> Ranking {
        let mut ids: Vec<String> = scores.keys().cloned().collect();
        ids.sort_by(|a, b| {
            let by_score = scores[a].total_cmp(&scores[b]);
            let by_score = if descending { by_score.reverse() } else { by_score };
            by_score.then_with(|| a.cmp(b))
        });
        Ranking {
            source,
            ordered_plan_ids: ids,
            scores,
        }
    }

    pub fn top(&self) -> Option<&str> {
        self.ordered_plan_ids.first().map(String::as_str)
    }
}

/// A candidate example: a plan together with the query it answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub plan_id: String,
    pub query: Query,
    pub plan_text: String,
}

impl CandidateRecord {
    pub fn plan(&self) -> Result<Plan, ParseError> {
        parse_plan(&self.plan_text).map(|p| p.with_query_id(&self.query.id))
    }
}

/// Reads a JSON array or newline-delimited candidate records. Ids must be
/// unique and plans must parse.
pub fn load_candidates(path: &Path) -> Result<Vec<CandidateRecord>, DiscriminatorError> {
    let err = |reason: String| DiscriminatorError::CandidateFile {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    parse_candidates(&text).map_err(err)
}

pub fn parse_candidates(text: &str) -> Result<Vec<CandidateRecord>, String> {
    let records: Vec<CandidateRecord> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| e.to_string())?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<_, _>>()?
    };
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(&r.plan_id) {
            return Err(format!("duplicate plan id `{}`", r.plan_id));
        }
        r.plan().map_err(|e| format!("plan `{}`: {e}", r.plan_id))?;
        r.query.validate().map_err(|e| e.to_string())?;
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Difficulty rubric

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyComponents {
    pub days: u32,
    pub cities: u32,
    pub people: u32,
    pub room_rules: u32,
    pub cuisines: u32,
    pub transportation: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub query_id: String,
    pub components: DifficultyComponents,
    pub total: u32,
}

/// Days 3/5/7 score 0/1/2, cities 1/2/3 score 0/1/2, people score N-1,
/// room rules and cuisines score their count and any transportation request
/// scores 1. The total is the plain sum.
pub fn rubric_score(features: &QueryFeatures) -> Result<DifficultyScore, DiscriminatorError> {
    let days = match features.days {
        3 => 0,
        5 => 1,
        7 => 2,
        d => return Err(DiscriminatorError::UnsupportedDuration(d)),
    };
    let cities = match features.cities {
        c @ 1..=3 => c - 1,
        c => return Err(DiscriminatorError::UnsupportedCityCount(c)),
    };
    let components = DifficultyComponents {
        days,
        cities,
        people: features.people.saturating_sub(1),
        room_rules: features.room_rule_count,
        cuisines: features.cuisine_count,
        transportation: features.transport_request_count.min(1),
    };
    let c = &components;
    Ok(DifficultyScore {
        query_id: String::new(),
        total: c.days + c.cities + c.people + c.room_rules + c.cuisines + c.transportation,
        components,
    })
}

pub fn score_query(query: &Query) -> Result<DifficultyScore, DiscriminatorError> {
    let mut s = rubric_score(&extract_features(query))?;
    s.query_id = query.id.clone();
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankTarget {
    #[default]
    HardestFirst,
    EasiestFirst,
}

pub fn rubric_rank(candidates: &[(String, QueryFeatures)], target: RankTarget) -> Result<Ranking, DiscriminatorError> {
    if candidates.is_empty() {
        return Err(DiscriminatorError::NoCandidates);
    }
    let mut scores = BTreeMap::new();
    for (id, f) in candidates {
        scores.insert(id.clone(), rubric_score(f)?.total as f64);
    }
    Ok(Ranking::from_scores(RankingSource::Rubric, scores, target == RankTarget::HardestFirst))
}

// ---------------------------------------------------------------------------
// LLM discriminator

pub const SCORE_ATTEMPTS: u32 = 3;

const DISCRIMINATOR_INSTRUCTION: &str = "\
Below is the code that evaluates travel plans, followed by one plan. Compare each part of the plan with the checks \
in the code and predict how likely the plan is to pass them. Answer with a single integer from 1 (certain to fail) \
to 100 (certain to pass).";

pub fn discriminator_prompt(plan_text: &str, evaluation_code: &str) -> String {
    format!("{DISCRIMINATOR_INSTRUCTION}\n\nEvaluation code:\n{evaluation_code}\n\nPlan:\n{plan_text}")
}

/// The first integer token in `[1, 100]`. Tokens are maximal digit runs;
/// a run preceded by `-` is negative and skipped.
pub fn parse_score(text: &str) -> Option<u32> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let negative = start > 0 && bytes[start - 1] == b'-';
            if !negative {
                if let Ok(n) = text[start..i].parse::<u32>() {
                    if (1..=100).contains(&n) {
                        return Some(n);
                    }
                }
            }
        } else {
            i += 1;
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LlmOptions {
    pub repeats: u32,
    /// Distinguishes repeated rankings of the same plans.
    pub round: u64,
    pub exec: Execution,
}

impl Default for LlmOptions {
    fn default() -> Self {
        LlmOptions {
            repeats: 10,
            round: 0,
            exec: Execution::default(),
        }
    }
}

/// Call index of parse attempt `attempt` of repeat `repeat`.
pub fn score_call_index(opts: &LlmOptions, repeat: u32, attempt: u32) -> u64 {
    (opts.round * opts.repeats as u64 + repeat as u64) * SCORE_ATTEMPTS as u64 + attempt as u64
}

/// Mean of `repeats` independent scores. Each score allows up to three
/// attempts to get a parseable answer.
pub fn llm_score(plan_text: &str, evaluation_code: &str, model: &ModelClient, opts: &LlmOptions) -> Result<f64, DiscriminatorError> {
    if opts.repeats == 0 {
        return Err(DiscriminatorError::ZeroRepeats);
    }
    let prompt = discriminator_prompt(plan_text, evaluation_code);
    let scores = opts.exec.try_map(&(0..opts.repeats).collect::<Vec<_>>(), |&repeat| {
        let mut last = String::new();
        for attempt in 0..SCORE_ATTEMPTS {
            let req = ModelRequest::new(ModelRole::Discriminator, &prompt, score_call_index(opts, repeat, attempt));
            last = model.complete(&req)?.text;
            if let Some(s) = parse_score(&last) {
                return Ok(s);
            }
        }
        Err(DiscriminatorError::ScoreParse {
            attempts: SCORE_ATTEMPTS,
            last_response: last,
        })
    })?;
    Ok(scores.iter().map(|&s| s as f64).sum::<f64>() / opts.repeats as f64)
}

/// Scores every `(plan_id, plan_text)` and orders them by descending mean.
pub fn llm_rank(
    plans: &[(String, String)],
    evaluation_code: &str,
    model: &ModelClient,
    opts: &LlmOptions,
) -> Result<Ranking, DiscriminatorError> {
    if plans.len() < 2 {
        return Err(DiscriminatorError::TooFewPlans);
    }
    let mut scores = BTreeMap::new();
    for (id, text) in plans {
        scores.insert(id.clone(), llm_score(text, evaluation_code, model, opts)?);
    }
    Ok(Ranking::from_scores(RankingSource::Llm, scores, true))
}

// ---------------------------------------------------------------------------
// Ground truth

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruthMetric {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruthOptions {
    pub runs: u32,
    pub metric: GroundTruthMetric,
    pub exec: Execution,
}

impl Default for GroundTruthOptions {
    fn default() -> Self {
        GroundTruthOptions {
            runs: 3,
            metric: GroundTruthMetric::Micro,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthOrdering {
    pub averages: BTreeMap<String, f64>,
    pub run_count: u32,
    pub metric: GroundTruthMetric,
    pub ordering: Vec<String>,
}

impl GroundTruthOrdering {
    pub fn ranking(&self) -> Ranking {
        Ranking::from_scores(RankingSource::GroundTruth, self.averages.clone(), true)
    }
}

/// Asks the planner for a plan and evaluates it. Model and parse failures
/// become undelivered reports.
pub fn generate_and_evaluate(
    prompt: &SkeletonPrompt,
    query: &Query,
    call_index: u64,
    sandbox: &Sandbox,
    model: &ModelClient,
) -> EvaluationReport {
    let req = ModelRequest::new(ModelRole::Planner, prompt.planner_prompt(query), call_index);
    match model.complete(&req).map(|r| parse_plan(&r.text)) {
        Ok(Ok(plan)) => evaluate(&plan.with_query_id(&query.id), query, sandbox),
        _ => EvaluationReport::undelivered(&query.id),
    }
}

/// Each candidate becomes the sole example of `skeleton`; the planner answers
/// every validation query `runs` times (run `r` uses call index `r`) and the
/// chosen commonsense pass rate is averaged over runs.
pub fn ground_truth_ordering(
    candidates: &[CandidateRecord],
    skeleton: &SkeletonPrompt,
    validation: &[Query],
    sandbox: &Sandbox,
    model: &ModelClient,
    opts: &GroundTruthOptions,
) -> Result<GroundTruthOrdering, DiscriminatorError> {
    if candidates.is_empty() {
        return Err(DiscriminatorError::NoCandidates);
    }
    if opts.runs == 0 {
        return Err(DiscriminatorError::ZeroRepeats);
    }
    let mut averages = BTreeMap::new();
    for c in candidates {
        let plan = c.plan().map_err(|e| DiscriminatorError::CandidateFile {
            path: c.plan_id.clone(),
            reason: e.to_string(),
        })?;
        let mut base = skeleton.clone();
        base.examples.clear();
        let prompt = refine_prompt(&base, &c.query.raw_text, &plan);
        let jobs: Vec<(u32, &Query)> = (0..opts.runs).flat_map(|r| validation.iter().map(move |q| (r, q))).collect();
        let reports = opts.exec.map(&jobs, |(r, q)| generate_and_evaluate(&prompt, q, *r as u64, sandbox, model));
        let mut total = 0.0;
        for run in reports.chunks(validation.len().max(1)) {
            total += match batch_metrics(run) {
                Ok(m) if opts.metric == GroundTruthMetric::Micro => m.commonsense_micro,
                Ok(m) => m.commonsense_macro,
                Err(_) => 0.0,
            };
        }
        averages.insert(c.plan_id.clone(), total / opts.runs as f64);
    }
    let ordering = Ranking::from_scores(RankingSource::GroundTruth, averages.clone(), true).ordered_plan_ids;
    Ok(GroundTruthOrdering {
        averages,
        run_count: opts.runs,
        metric: opts.metric,
        ordering,
    })
}

// ---------------------------------------------------------------------------
// Hybrid selection

/// Borda points: position `k` in a ranking of `n` earns `n - 1 - k`.
pub fn borda_scores(rankings: &[Ranking]) -> BTreeMap<String, f64> {
    let mut points = BTreeMap::new();
    for r in rankings {
        let n = r.ordered_plan_ids.len();
        for (k, id) in r.ordered_plan_ids.iter().enumerate() {
            *points.entry(id.clone()).or_insert(0.0) += (n - 1 - k) as f64;
        }
    }
    points
}

/// The human override when present, else the Borda winner. An override must
/// be one of `candidates`.
pub fn hybrid_select(candidates: &[String], rankings: &[Ranking], human_override: Option<&str>) -> Result<String, DiscriminatorError> {
    if let Some(id) = human_override {
        return if candidates.iter().any(|c| c == id) {
            Ok(id.to_string())
        } else {
            Err(DiscriminatorError::OverrideNotInCandidates(id.to_string()))
        };
    }
    Ranking::from_scores(RankingSource::Rubric, borda_scores(rankings), true)
        .top()
        .map(str::to_string)
        .ok_or(DiscriminatorError::NoCandidates)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    use proptest::prelude::*;

    use super::*;
    use crate::concept::{assemble_skeleton_prompt, DEFAULT_TEMPLATE};
    use crate::fixtures::{oracle_feasible_plan, oracle_query, oracle_sandbox};
    use crate::metrics::worst_plan_avoidance;
    use crate::model::{FnTransport, Transcript};
    use crate::plan::serialize_plan;

    fn f(days: u32, cities: u32, people: u32, rules: u32, cuisines: u32, transport: u32) -> QueryFeatures {
        QueryFeatures::new(days, cities, people, rules, cuisines, transport)
    }

    #[test]
    fn rubric_examples() {
        let zero = rubric_score(&f(3, 1, 1, 0, 0, 0)).unwrap();
        assert_eq!(zero.total, 0);
        assert_eq!(
            zero.components,
            DifficultyComponents {
                days: 0,
                cities: 0,
                people: 0,
                room_rules: 0,
                cuisines: 0,
                transportation: 0
            }
        );
        assert_eq!(rubric_score(&f(5, 2, 2, 1, 0, 0)).unwrap().total, 4);
        let hard = rubric_score(&f(7, 3, 5, 2, 3, 1)).unwrap();
        assert_eq!(hard.total, 14);
        assert_eq!(
            hard.components,
            DifficultyComponents {
                days: 2,
                cities: 2,
                people: 4,
                room_rules: 2,
                cuisines: 3,
                transportation: 1
            }
        );
        assert!(matches!(rubric_score(&f(4, 1, 1, 0, 0, 0)), Err(DiscriminatorError::UnsupportedDuration(4))));
        assert!(matches!(rubric_score(&f(3, 4, 1, 0, 0, 0)), Err(DiscriminatorError::UnsupportedCityCount(4))));
        assert!(matches!(rubric_score(&f(3, 0, 1, 0, 0, 0)), Err(DiscriminatorError::UnsupportedCityCount(0))));
        assert_eq!(score_query(&oracle_query(1.0)).unwrap().query_id, "oracle-q");
    }

    #[test]
    fn rubric_rank_orders_by_total() {
        let c = |id: &str, feat| (id.to_string(), feat);
        let single = rubric_rank(&[c("p", f(3, 1, 1, 0, 0, 0))], RankTarget::HardestFirst).unwrap();
        assert_eq!(single.top(), Some("p"));
        let three = [c("a", f(7, 3, 5, 2, 3, 1)), c("b", f(3, 1, 1, 0, 0, 0)), c("c", f(5, 2, 2, 1, 0, 0))];
        assert_eq!(rubric_rank(&three, RankTarget::HardestFirst).unwrap().ordered_plan_ids, ["a", "c", "b"]);
        assert_eq!(rubric_rank(&three, RankTarget::EasiestFirst).unwrap().ordered_plan_ids, ["b", "c", "a"]);
        let tied = [c("z", f(5, 1, 1, 0, 0, 0)), c("m", f(3, 2, 1, 0, 0, 0))];
        assert_eq!(rubric_rank(&tied, RankTarget::HardestFirst).unwrap().ordered_plan_ids, ["m", "z"]);
        assert!(matches!(rubric_rank(&[], RankTarget::HardestFirst), Err(DiscriminatorError::NoCandidates)));
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("73"), Some(73));
        assert_eq!(parse_score("Score: 0, revised 45/100"), Some(45));
        assert_eq!(parse_score("-5 then 7"), Some(7));
        assert_eq!(parse_score("1000 or 100"), Some(100));
        assert_eq!(parse_score("great plan!"), None);
        assert_eq!(parse_score("3.5"), Some(3));
    }

    fn constant(text: &'static str) -> ModelClient {
        ModelClient::live(Arc::new(FnTransport(move |_: &ModelRequest| Ok(text.to_string()))))
    }

    #[test]
    fn constant_stub_gives_its_constant() {
        let opts = LlmOptions::default();
        assert_eq!(llm_score("plan", "code", &constant("73"), &opts).unwrap(), 73.0);
    }

    #[test]
    fn scripted_transcript_gives_hand_computed_mean() {
        let opts = LlmOptions {
            repeats: 10,
            ..Default::default()
        };
        let prompt = discriminator_prompt("plan", "code");
        let mut t = Transcript::new();
        for r in 0..10u32 {
            let text = format!("{}", 60 + 10 * (r % 4));
            t.insert(ModelRequest::new(ModelRole::Discriminator, &prompt, score_call_index(&opts, r, 0)).call_tag(), text);
        }
        // 60,70,80,90 repeating over ten calls: (60+70+80+90)*2 + 60 + 70 = 730
        assert_eq!(llm_score("plan", "code", &ModelClient::replay(t), &opts).unwrap(), 73.0);
    }

    #[test]
    fn unparseable_scores_are_an_error_after_three_attempts() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let client = ModelClient::live(Arc::new(FnTransport(move |_: &ModelRequest| {
            seen.fetch_add(1, Ordering::SeqCst);
            Ok("great plan!".to_string())
        })));
        let opts = LlmOptions {
            repeats: 1,
            ..Default::default()
        };
        let err = llm_score("p", "c", &client, &opts).unwrap_err();
        assert!(matches!(err, DiscriminatorError::ScoreParse { attempts: 3, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    /// Scores by plan text: the text is the plan id and the stub maps ids to
    /// fixed per-repeat scores.
    fn by_plan(table: Vec<(&'static str, Vec<u32>)>) -> ModelClient {
        ModelClient::live(Arc::new(FnTransport(move |r: &ModelRequest| {
            let plan = r.prompt_text.rsplit("Plan:\n").next().unwrap();
            let scores = &table.iter().find(|(id, _)| *id == plan).unwrap().1;
            let repeat = (r.call_index / SCORE_ATTEMPTS as u64) as usize;
            Ok(scores[repeat % scores.len()].to_string())
        })))
    }

    fn plans(ids: &[&str]) -> Vec<(String, String)> {
        ids.iter().map(|s| (s.to_string(), s.to_string())).collect()
    }

    #[test]
    fn llm_rank_sorts_means() {
        let model = by_plan(vec![("p1", vec![40]), ("p2", vec![90]), ("p3", vec![55])]);
        let r = llm_rank(&plans(&["p1", "p2", "p3"]), "code", &model, &LlmOptions::default()).unwrap();
        assert_eq!(r.ordered_plan_ids, ["p2", "p3", "p1"]);
        assert_eq!(r.scores["p2"], 90.0);
        let equal = by_plan(vec![("b", vec![50]), ("a", vec![50])]);
        assert_eq!(llm_rank(&plans(&["b", "a"]), "c", &equal, &LlmOptions::default()).unwrap().ordered_plan_ids, ["a", "b"]);
        assert!(matches!(llm_rank(&plans(&["a"]), "c", &equal, &LlmOptions::default()), Err(DiscriminatorError::TooFewPlans)));
    }

    #[test]
    fn worst_plan_never_tops_scripted_rankings() {
        let model = by_plan(vec![("best", vec![80, 90]), ("mid", vec![60, 70]), ("worst", vec![20, 95])]);
        let rankings: Vec<Ranking> = (0..10)
            .map(|round| {
                let opts = LlmOptions {
                    round,
                    ..Default::default()
                };
                llm_rank(&plans(&["best", "mid", "worst"]), "code", &model, &opts).unwrap()
            })
            .collect();
        assert_eq!(worst_plan_avoidance(&rankings, "worst").unwrap(), 10);
    }

    fn candidate(id: &str) -> CandidateRecord {
        CandidateRecord {
            plan_id: id.into(),
            query: Query {
                raw_text: format!("query for {id}"),
                ..oracle_query(1000.0)
            },
            plan_text: serialize_plan(&oracle_feasible_plan()),
        }
    }

    fn skeleton() -> SkeletonPrompt {
        assemble_skeleton_prompt("Plan.", &[], &[], DEFAULT_TEMPLATE).unwrap()
    }

    /// Answers with the feasible plan when the prompt's example is `good`,
    /// with a plan that breaks one of eight commonsense checks otherwise.
    fn planner(good: &'static str, calls: Arc<AtomicUsize>) -> ModelClient {
        ModelClient::live(Arc::new(FnTransport(move |r: &ModelRequest| {
            calls.fetch_add(1, Ordering::SeqCst);
            let mut plan = oracle_feasible_plan();
            if !r.prompt_text.contains(&format!("Query: query for {good}\n")) {
                plan.days[2].attractions = vec![crate::plan::Place::new("City Museum", crate::fixtures::AWAY)];
            }
            Ok(serialize_plan(&plan))
        })))
    }

    #[test]
    fn ground_truth_orders_by_average_pass_rate() {
        let calls = Arc::new(AtomicUsize::new(0));
        let model = planner("b", calls.clone());
        let validation = vec![oracle_query(1000.0); 2];
        let gt = ground_truth_ordering(
            &[candidate("a"), candidate("b")],
            &skeleton(),
            &validation,
            &oracle_sandbox(),
            &model,
            &GroundTruthOptions::default(),
        )
        .unwrap();
        assert_eq!(gt.ordering, ["b", "a"]);
        assert_eq!(gt.averages["b"], 100.0);
        assert_eq!(gt.averages["a"], 87.5);
        assert_eq!(gt.run_count, 3);
        assert_eq!(calls.load(Ordering::SeqCst), 2 * 3 * 2);
    }

    #[test]
    fn ground_truth_ties_fall_back_to_id_order() {
        let calls = Arc::new(AtomicUsize::new(0));
        let model = planner("nobody", calls);
        let opts = GroundTruthOptions {
            runs: 1,
            ..Default::default()
        };
        let gt = ground_truth_ordering(&[candidate("y"), candidate("x")], &skeleton(), &[oracle_query(1000.0)], &oracle_sandbox(), &model, &opts).unwrap();
        assert_eq!(gt.ordering, ["x", "y"]);
    }

    #[test]
    fn ground_truth_counts_calls_and_survives_model_errors() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let failing = ModelClient::live(Arc::new(FnTransport(move |_: &ModelRequest| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(crate::model::TransportError::fatal(Some(500), "down"))
        })));
        let cands: Vec<_> = (0..10).map(|i| candidate(&format!("c{i:02}"))).collect();
        let validation = vec![oracle_query(1000.0); 4];
        let gt = ground_truth_ordering(&cands, &skeleton(), &validation, &oracle_sandbox(), &failing, &GroundTruthOptions::default()).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 10 * 3 * 4);
        assert!(gt.averages.values().all(|&v| v == 0.0));
        assert_eq!(gt.ordering, gt.ranking().ordered_plan_ids);
    }

    #[test]
    fn hybrid_selection() {
        let r = |ids: &[&str]| Ranking {
            source: RankingSource::Rubric,
            ordered_plan_ids: ids.iter().map(|s| s.to_string()).collect(),
            scores: BTreeMap::new(),
        };
        let cands: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        assert_eq!(hybrid_select(&cands, &[r(&["A", "B", "C"])], Some("B")).unwrap(), "B");
        assert_eq!(hybrid_select(&cands, &[], Some("C")).unwrap(), "C");
        assert_eq!(hybrid_select(&cands, &[r(&["C", "A", "B"])], None).unwrap(), "C");
        assert_eq!(hybrid_select(&cands, &[r(&["A", "B", "C"]), r(&["B", "A", "C"])], None).unwrap(), "A");
        assert!(matches!(
            hybrid_select(&cands, &[], Some("D")),
            Err(DiscriminatorError::OverrideNotInCandidates(_))
        ));
        assert!(matches!(hybrid_select(&cands, &[], None), Err(DiscriminatorError::NoCandidates)));
    }

    #[test]
    fn override_never_consults_the_rankings() {
        let touched = Arc::new(Mutex::new(false));
        let t = touched.clone();
        let model = ModelClient::live(Arc::new(FnTransport(move |_: &ModelRequest| {
            *t.lock().unwrap() = true;
            Ok("1".into())
        })));
        let cands = vec!["x".to_string()];
        assert_eq!(hybrid_select(&cands, &[], Some("x")).unwrap(), "x");
        drop(model);
        assert!(!*touched.lock().unwrap());
    }

    #[test]
    fn candidate_files_round_trip() {
        let records = vec![candidate("a"), candidate("b")];
        let ndjson: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        assert_eq!(parse_candidates(&ndjson).unwrap(), records);
        assert_eq!(parse_candidates(&serde_json::to_string(&records).unwrap()).unwrap(), records);
        let dup = format!("{ndjson}{}", serde_json::to_string(&records[0]).unwrap());
        assert!(parse_candidates(&dup).unwrap_err().contains("duplicate"));
    }

    fn feature_strategy() -> impl Strategy<Value = QueryFeatures> {
        (
            prop_oneof![Just(3u32), Just(5), Just(7)],
            1u32..=3,
            1u32..=8,
            0u32..=5,
            0u32..=5,
            0u32..=5,
        )
            .prop_map(|(d, c, p, r, cu, t)| f(d, c, p, r, cu, t))
    }

    proptest! {
        #[test]
        fn rubric_total_is_the_sum_and_zero_only_at_the_minimum(feat in feature_strategy()) {
            let s = rubric_score(&feat).unwrap();
            let c = s.components;
            prop_assert_eq!(s.total, c.days + c.cities + c.people + c.room_rules + c.cuisines + c.transportation);
            prop_assert_eq!(s.total == 0, feat == f(3, 1, 1, 0, 0, 0));
        }

        #[test]
        fn rubric_is_monotone_in_every_feature(feat in feature_strategy(), which in 0usize..6) {
            let mut up = feat;
            match which {
                0 if feat.days < 7 => up.days += 2,
                1 if feat.cities < 3 => up.cities += 1,
                2 => up.people += 1,
                3 => up.room_rule_count += 1,
                4 => up.cuisine_count += 1,
                5 => up.transport_request_count += 1,
                _ => {}
            }
            prop_assert!(rubric_score(&up).unwrap().total >= rubric_score(&feat).unwrap().total);
        }

        #[test]
        fn constant_stub_mean_is_the_constant(score in 1u32..=100, repeats in 1u32..12) {
            let text: &'static str = Box::leak(score.to_string().into_boxed_str());
            let opts = LlmOptions { repeats, exec: Execution::Sequential, ..Default::default() };
            prop_assert_eq!(llm_score("p", "c", &constant(text), &opts).unwrap(), score as f64);
        }
    }
}
