//! Simulation-first trace generation and reward evaluation for tool-augmented
//! reasoning agents.
//!
//! The pipeline runs entirely against model-simulated tools: a ToolMaker agent
//! designs schema-typed tool interfaces for a query, an AutoAgent produces a
//! tagged think–act–observe trace against them, and a ToolActor simulates each
//! tool's output. Downstream, traces are scored with a composite reward
//! (tiered answer score plus a loop penalty), filtered into SFT-grade corpora,
//! and reduced to group-relative objective numerics for policy optimization.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`schema`]: tool interfaces as typed JSON schemas plus the argument
//!   validation predicate with structured error payloads.
//! - [`trace`]: the tagged trace grammar, parse/serialize, and structural
//!   statistics such as the repeated-call count.
//! - [`agents`]: the three agent roles over a pluggable chat backend and the
//!   rollout orchestrator.
//! - [`reward`]: answer extraction, text normalization, the tiered answer
//!   score, and EM/F1 metrics.
//! - [`dataset`]: trace filtering, SFT/GRPO exports, group weight and
//!   objective arithmetic, and tool-usage rank-frequency statistics.

pub mod agents;
pub mod dataset;
mod jsonish;
pub mod reward;
pub mod schema;
pub mod trace;

/// Name of the predeclared summarizer tool that is appended to every
/// generated tool set and consulted during intermediate-answer extraction.
pub const ANSWER_SUMMARIZER: &str = "answer_summarizer";
