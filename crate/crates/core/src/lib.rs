//! Constraint-aware planning prompts for travel-planning agents.
//!
//! The crate is organised around the pipeline it supports:
//!
//! - [`sandbox`]: closed reference data (flights, hotels, restaurants,
//!   attractions, ground routes), archive/CSV ingestion and lookups.
//! - [`plan`]: queries, day-by-day plans, the plan text grammar and the
//!   feature vector consumed by the difficulty rubric.
//! - [`constraints`]: the commonsense/hard constraint catalog, the plan
//!   evaluator, the cost model and a brute-force feasibility oracle.
//! - [`metrics`]: delivery/micro/macro/final pass rates, R², worst-plan
//!   avoidance and relative improvement.
//! - [`concept`]: skeleton prompt construction from explicit constraints,
//!   white-box code summaries and black-box probes.
//! - [`discriminators`]: rubric, LLM and ground-truth rankings of candidate
//!   example plans plus hybrid (Borda/human override) selection.
//! - [`demo`]: a deterministic demo world and scripted model.
//! - [`optimize`]: the iterative refinement loop and its append-only run store.
//! - [`model`]: model client with retries, bounded concurrency and
//!   record/replay transcripts.
//!
//! Data-parallel loops (batch evaluation, oracle enumeration, validation
//! generation) go through [`par::Execution`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod concept;
pub mod constraints;
pub mod fixtures;
pub mod demo;
pub mod discriminators;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod par;
pub mod plan;
pub mod sandbox;

pub use constraints::{evaluate, EvaluationReport};
pub use par::Execution;
pub use plan::{parse_plan, serialize_plan, Plan, Query};
pub use sandbox::Sandbox;
