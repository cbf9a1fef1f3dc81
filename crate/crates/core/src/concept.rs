//! Skeleton prompt construction.
//!
//! Constraint statements come from three sources: the explicit descriptor
//! catalog, white-box summaries of check source text informed by captured
//! input/output traces, and black-box probes of an opaque evaluator. The
//! statements, a CSV excerpt of the reference data and any example plans are
//! rendered through a plain-text template with the placeholders
//! `{preamble}`, `{constraints}`, `{reference_data}` and `{examples}`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{evaluate, ConstraintDescriptor, ConstraintId, CostModel, OutcomeStatus};
use crate::model::{content_hash, ModelClient, ModelError, ModelRequest, ModelRole};
use crate::plan::{parse_plan, serialize_plan, Plan, Query};
use crate::sandbox::{render_csv, Category, Sandbox};

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("code text is empty")]
    EmptyCode,
    #[error("model returned a blank summary after {0} attempts")]
    EmptySummary(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no probes supplied")]
    NoProbes,
    #[error("system `{system}` unavailable: {reason}")]
    SystemUnavailable { system: String, reason: String },
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummarySource {
    Explicit,
    WhiteBox,
    BlackBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IOTrace {
    pub unit_name: String,
    pub input_digest: String,
    pub output_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSummary {
    pub source: SummarySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_id: Option<String>,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<IOTrace>,
}

/// `[kind] Title: description` for every descriptor, in order.
pub fn extract_explicit(descriptors: &[ConstraintDescriptor]) -> Vec<ConstraintSummary> {
    descriptors
        .iter()
        .map(|d| {
            let kind = match d.kind {
                crate::constraints::ConstraintKind::Commonsense => "commonsense",
                crate::constraints::ConstraintKind::Hard => "hard",
            };
            ConstraintSummary {
                source: SummarySource::Explicit,
                constraint_id: Some(d.id.clone()),
                statement: format!("[{kind}] {}: {}", d.title, d.description),
                evidence: Vec::new(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// White-box: source text plus instrumented execution

const CHECK_SOURCE: &str = include_str!("constraints/mod.rs");

/// Source text of the function implementing a check.
pub fn unit_source(id: ConstraintId) -> &'static str {
    let name = match id {
        ConstraintId::WithinSandbox => "within_sandbox",
        ConstraintId::CompleteInformation => "complete_information",
        ConstraintId::WithinCurrentCity => "within_current_city",
        ConstraintId::ReasonableCityRoute => "reasonable_city_route",
        ConstraintId::DiverseRestaurants | ConstraintId::DiverseAttractions => "first_repeat",
        ConstraintId::NonConflictingTransportation => "non_conflicting_transportation",
        ConstraintId::MinimumNights => "minimum_nights",
        ConstraintId::Budget => "budget",
        ConstraintId::RoomRules => "room_rules",
        ConstraintId::RoomType => "room_type",
        ConstraintId::Cuisines => "cuisines",
        ConstraintId::TransportationRequest => "transportation_request",
    };
    let start = CHECK_SOURCE
        .find(&format!("\nfn {name}"))
        .map(|i| i + 1)
        .expect("every check has a function");
    let len = CHECK_SOURCE[start..].find("\n}\n").expect("function is closed") + 3;
    &CHECK_SOURCE[start..start + len]
}

/// Source text of every check, in catalog order, each function once.
pub fn evaluation_code() -> String {
    let mut seen = Vec::new();
    for id in ConstraintId::ALL {
        let src = unit_source(id);
        if !seen.contains(&src) {
            seen.push(src);
        }
    }
    seen.join("\n")
}

fn render_input(plan: &Plan, query: &Query) -> String {
    format!(
        "query {}: {} days from {}, {} people, budget {}\n{}",
        query.id,
        query.duration_days,
        query.origin_city,
        query.people,
        query.budget,
        serialize_plan(plan)
    )
}

/// Runs one check on every sample and records the rendered input and the
/// verdict.
pub fn capture_io_traces(unit: ConstraintId, samples: &[(&Plan, &Query, &Sandbox)]) -> Vec<IOTrace> {
    samples
        .iter()
        .map(|(plan, query, sandbox)| {
            let outcome = unit.check(plan, query, sandbox, &CostModel::default());
            let output = match outcome.status {
                OutcomeStatus::Pass => "pass".to_string(),
                OutcomeStatus::NotApplicable => "not-applicable".to_string(),
                OutcomeStatus::Fail => format!("fail: {}", outcome.message),
            };
            IOTrace {
                unit_name: unit.as_str().to_string(),
                input_digest: render_input(plan, query),
                output_digest: output,
            }
        })
        .collect()
}

pub const SUMMARY_ATTEMPTS: u32 = 3;

const SUMMARIZE_INSTRUCTION: &str = "\
The following code checks whether a travel plan satisfies one rule. State that rule as one or two plain sentences \
a traveler could follow. Do not describe the code itself; answer with the rule only.";

const REVISE_INSTRUCTION: &str = "\
Here is a draft statement of the rule the code checks, followed by recorded inputs and verdicts of the code. \
Revise the statement so that it agrees with every recorded verdict. Answer with the revised rule only.";

fn render_traces(traces: &[IOTrace]) -> String {
    let mut out = String::new();
    for (i, t) in traces.iter().enumerate() {
        write!(out, "Trace {} ({}):\nInput:\n{}\nOutput: {}\n\n", i + 1, t.unit_name, t.input_digest.trim_end(), t.output_digest).unwrap();
    }
    out
}

fn ask_until_nonblank(model: &ModelClient, prompt: &str) -> Result<String, ConceptError> {
    for attempt in 0..SUMMARY_ATTEMPTS {
        let request = ModelRequest::new(ModelRole::Summarizer, prompt, attempt as u64);
        let text = model.complete(&request)?.text;
        if !text.trim().is_empty() {
            return Ok(text.trim().to_string());
        }
    }
    Err(ConceptError::EmptySummary(SUMMARY_ATTEMPTS))
}

/// Summarizes check source text into a natural-language statement. With
/// traces, a second request shows the draft and the traces and asks for a
/// revision. Each request is retried on blank responses.
pub fn summarize_whitebox(code_text: &str, traces: &[IOTrace], model: &ModelClient) -> Result<ConstraintSummary, ConceptError> {
    if code_text.trim().is_empty() {
        return Err(ConceptError::EmptyCode);
    }
    let draft_prompt = format!("{SUMMARIZE_INSTRUCTION}\n\nCode:\n{code_text}\n");
    let mut statement = ask_until_nonblank(model, &draft_prompt)?;
    if !traces.is_empty() {
        let revise = format!(
            "{REVISE_INSTRUCTION}\n\nCode:\n{code_text}\n\nDraft: {statement}\n\n{}",
            render_traces(traces)
        );
        statement = ask_until_nonblank(model, &revise)?;
    }
    let unit = traces.first().map(|t| t.unit_name.clone());
    Ok(ConstraintSummary {
        source: SummarySource::WhiteBox,
        constraint_id: unit,
        statement,
        evidence: traces.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Black-box probing

/// A system whose verdicts are visible but whose internals are not.
pub trait OpaqueEvaluator {
    fn name(&self) -> &str;
    /// A rendered verdict for the plan text, or a reason the system could
    /// not answer.
    fn judge(&self, plan_text: &str, query: &Query) -> Result<String, String>;
}

/// The constraint engine seen only through its verdicts.
pub struct EngineEvaluator<'a> {
    pub sandbox: &'a Sandbox,
}

impl OpaqueEvaluator for EngineEvaluator<'_> {
    fn name(&self) -> &str {
        "constraint-engine"
    }

    fn judge(&self, plan_text: &str, query: &Query) -> Result<String, String> {
        let Ok(plan) = parse_plan(plan_text) else {
            return Ok("undelivered".into());
        };
        let report = evaluate(&plan, query, self.sandbox);
        if !report.delivered {
            return Ok("undelivered".into());
        }
        let failed: Vec<&str> = report.failures().map(|o| o.constraint_id.as_str()).collect();
        Ok(if failed.is_empty() {
            "pass".into()
        } else {
            format!("fail: {}", failed.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub label: String,
    pub query: Query,
    pub plan_text: String,
}

/// Query fields a one-dimensional sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepField {
    Budget,
    People,
}

/// One probe per value, everything else held fixed.
pub fn sweep(query: &Query, plan_text: &str, field: SweepField, values: &[f64]) -> Vec<Probe> {
    values
        .iter()
        .map(|&v| {
            let mut q = query.clone();
            let label = match field {
                SweepField::Budget => {
                    q.budget = v;
                    format!("budget={v}")
                }
                SweepField::People => {
                    q.people = v.max(1.0) as u32;
                    format!("people={}", q.people)
                }
            };
            Probe {
                label,
                query: q,
                plan_text: plan_text.to_string(),
            }
        })
        .collect()
}

pub fn probe_blackbox(system: &dyn OpaqueEvaluator, probes: &[Probe]) -> Result<Vec<IOTrace>, ConceptError> {
    if probes.is_empty() {
        return Err(ConceptError::NoProbes);
    }
    probes
        .iter()
        .map(|p| {
            let verdict = system.judge(&p.plan_text, &p.query).map_err(|reason| ConceptError::SystemUnavailable {
                system: system.name().to_string(),
                reason,
            })?;
            Ok(IOTrace {
                unit_name: system.name().to_string(),
                input_digest: format!("{}\n{}", p.label, if p.plan_text.is_empty() { "(empty plan)" } else { &p.plan_text }),
                output_digest: verdict,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Skeleton prompt

pub const PLACEHOLDERS: [&str; 4] = ["{preamble}", "{constraints}", "{reference_data}", "{examples}"];

pub const DEFAULT_TEMPLATE: &str = "\
{preamble}

Constraints:
{constraints}
Reference data:
{reference_data}
Examples:
{examples}";

pub const DEFAULT_PREAMBLE: &str = "\
You are a travel planner. Write a day-by-day itinerary for the query using only the flights, ground routes, \
accommodations, restaurants and attractions listed in the reference data. Satisfy every constraint below. \
Answer with the plan only. Each day is a block starting with `Day <n>:` followed by the lines \
`Current City:`, `Transportation:`, `Breakfast:`, `Attraction:`, `Lunch:`, `Dinner:` and `Accommodation:`. \
Travel days use `from <A> to <B>` as the current city. Places are written `<name>, <city>`, several attractions \
are separated by `; `, and anything absent is written `-`.";

/// Checks that each placeholder appears exactly once and that no other
/// `{name}` placeholder is present.
pub fn validate_template(template: &str) -> Result<(), ConceptError> {
    for p in PLACEHOLDERS {
        let n = template.matches(p).count();
        if n != 1 {
            return Err(ConceptError::InvalidTemplate(format!("{p} appears {n} times")));
        }
    }
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open..];
        let close = tail
            .find('}')
            .ok_or_else(|| ConceptError::InvalidTemplate("unclosed `{`".into()))?;
        let token = &tail[..=close];
        let is_name = token[1..token.len() - 1].chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if is_name && !PLACEHOLDERS.contains(&token) {
            return Err(ConceptError::InvalidTemplate(format!("unknown placeholder {token}")));
        }
        rest = &tail[close + 1..];
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvBlock {
    pub name: String,
    pub csv: String,
}

/// CSV renderings of the chosen categories, in the given order.
pub fn sandbox_excerpt(sandbox: &Sandbox, categories: &[Category]) -> Vec<CsvBlock> {
    categories
        .iter()
        .map(|&c| CsvBlock {
            name: c.file_name().to_string(),
            csv: render_csv(sandbox, c),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub query_text: String,
    pub plan_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonPrompt {
    pub preamble: String,
    pub constraints: Vec<ConstraintSummary>,
    pub reference_data: Vec<CsvBlock>,
    pub examples: Vec<PromptExample>,
    pub template: String,
}

pub fn assemble_skeleton_prompt(
    preamble: &str,
    summaries: &[ConstraintSummary],
    excerpt: &[CsvBlock],
    template: &str,
) -> Result<SkeletonPrompt, ConceptError> {
    validate_template(template)?;
    Ok(SkeletonPrompt {
        preamble: preamble.to_string(),
        constraints: summaries.to_vec(),
        reference_data: excerpt.to_vec(),
        examples: Vec::new(),
        template: template.to_string(),
    })
}

impl SkeletonPrompt {
    pub fn constraint_section(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.constraints.iter().enumerate() {
            writeln!(out, "{}. {}", i + 1, s.statement).unwrap();
        }
        out
    }

    pub fn reference_section(&self) -> String {
        self.reference_data
            .iter()
            .map(|b| format!("{}\n{}", b.name, b.csv))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn examples_section(&self) -> String {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| format!("Example {}:\nQuery: {}\nPlan:\n{}", i + 1, e.query_text, e.plan_text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// The full prompt text. Placeholders are substituted in a single pass,
    /// so section contents are never re-expanded.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut rest = self.template.as_str();
        while let Some((pos, p)) = PLACEHOLDERS
            .iter()
            .filter_map(|p| rest.find(p).map(|i| (i, *p)))
            .min_by_key(|(i, _)| *i)
        {
            out.push_str(&rest[..pos]);
            match p {
                "{preamble}" => out.push_str(&self.preamble),
                "{constraints}" => out.push_str(&self.constraint_section()),
                "{reference_data}" => out.push_str(&self.reference_section()),
                _ => out.push_str(&self.examples_section()),
            }
            rest = &rest[pos + p.len()..];
        }
        out.push_str(rest);
        out
    }

    pub fn digest(&self) -> String {
        content_hash(&self.render())
    }

    /// The prompt sent to the planner for one query.
    pub fn planner_prompt(&self, query: &Query) -> String {
        format!("{}\nQuery {}:\n{}\nPlan:\n", self.render(), query.id, query.raw_text)
    }
}

/// Appends one example; every other section is left untouched.
pub fn refine_prompt(prompt: &SkeletonPrompt, query_text: &str, plan: &Plan) -> SkeletonPrompt {
    let mut next = prompt.clone();
    next.examples.push(PromptExample {
        query_text: query_text.to_string(),
        plan_text: serialize_plan(plan),
    });
    next
}
