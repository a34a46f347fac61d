//! The tagged trace grammar: parsing, serialization, and structural stats.
//!
//! A trace is an ordered sequence of think–act–observe steps for one query,
//! rendered as tagged text:
//!
//! ```text
//! <reasoning> ... </reasoning>
//! <tool_call> {"name": ..., "parameters": {...}} </tool_call>
//! <tool_response> ... </tool_response>
//! <answer> ... </answer>
//! ```
//!
//! Parsing is total over block sequences apart from two hard errors (an
//! unclosed tag, a response with no unanswered call); structural discipline
//! beyond that lives in [`Trace::check_invariants`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::jsonish;
use crate::schema::{StructuredError, ToolInterface};

const QUERY_HEADER: &str = "Query: ";

/// One step of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceStep {
    /// Free-form thinking text.
    Reasoning { text: String },
    /// A tool invocation. `name`/`args` are parsed from `raw`; a body that
    /// does not parse into an object with a name is kept as a malformed call
    /// (raw preserved, args absent).
    ToolCall {
        #[serde(skip_serializing_if = "Option::is_none", default)]
        name: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        args: Option<Map<String, Value>>,
        raw: String,
    },
    /// The observation for the immediately preceding call. `valid` is false
    /// when the content is an injected structured error.
    ToolResponse { content: String, valid: bool },
    /// The final answer block. At most one per trace, always last.
    FinalAnswer { raw: String },
}

impl TraceStep {
    pub fn reasoning(text: impl Into<String>) -> Self {
        TraceStep::Reasoning { text: text.into() }
    }

    /// Build a call step by parsing `raw` as its body.
    pub fn tool_call(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let (name, args) = parse_call_body(&raw);
        TraceStep::ToolCall { name, args, raw }
    }

    /// Build a response step, deriving `valid` from the content shape.
    pub fn tool_response(content: impl Into<String>) -> Self {
        let content = content.into();
        let valid = StructuredError::from_content(&content).is_none();
        TraceStep::ToolResponse { content, valid }
    }

    pub fn final_answer(raw: impl Into<String>) -> Self {
        TraceStep::FinalAnswer { raw: raw.into() }
    }
}

/// Parse a `tool_call` body: a JSON object with `name` and `parameters`
/// (synonym: `arguments`). A missing parameters key means empty arguments.
fn parse_call_body(raw: &str) -> (Option<String>, Option<Map<String, Value>>) {
    let Ok(value) = jsonish::parse_lenient(raw) else {
        return (None, None);
    };
    let Some(obj) = value.as_object() else {
        return (None, None);
    };
    let name = obj.get("name").and_then(Value::as_str).map(str::to_string);
    let args = match obj.get("parameters").or_else(|| obj.get("arguments")) {
        Some(Value::Object(map)) => Some(map.clone()),
        Some(_) => None,
        None => Some(Map::new()),
    };
    match (name, args) {
        (Some(name), Some(args)) => (Some(name), Some(args)),
        (name, _) => (name, None),
    }
}

/// Generation metadata carried alongside a trace. Scripted backends leave
/// the timestamp unset so serialized output is stable across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceMetadata {
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_unix_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout: Option<u32>,
    /// Set when the step budget ran out before a final answer was emitted.
    pub budget_exhausted: bool,
}

/// A complete trace: the query, the tool set it ran against, and the steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub query: String,
    pub tools: Vec<ToolInterface>,
    pub steps: Vec<TraceStep>,
    #[serde(default)]
    pub metadata: TraceMetadata,
}

/// Structural statistics over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    /// Total tool-call steps, malformed ones included.
    pub n_tool_calls: usize,
    /// Calls whose (name, canonical arguments) pair duplicates an earlier
    /// call in the same trace.
    pub n_loops: usize,
    /// Calls whose body did not parse into (name, arguments).
    pub n_malformed: usize,
    pub has_final_answer: bool,
}

/// Fatal trace-text parse errors.
#[derive(Debug, Error, PartialEq)]
pub enum TraceParseError {
    #[error("<{tag}> opened without a matching </{tag}>")]
    UnclosedTag { tag: String },
    #[error("<tool_response> with no unanswered <tool_call> before it")]
    InterleavingViolation,
}

/// Violations reported by [`Trace::check_invariants`].
#[derive(Debug, Error, PartialEq)]
pub enum InvariantViolation {
    #[error("tool call at step {index} is not immediately followed by exactly one tool response")]
    UnpairedCall { index: usize },
    #[error("tool response at step {index} has no tool call immediately before it")]
    OrphanResponse { index: usize },
    #[error("final answer at step {index} is not the last step")]
    AnswerNotLast { index: usize },
    #[error("more than one final answer")]
    MultipleAnswers,
    #[error("call to {name:?} at step {index} names no tool in the tool set and carries no failure flag")]
    UnflaggedUnknownTool { name: String, index: usize },
}

impl Trace {
    pub fn new(query: impl Into<String>, tools: Vec<ToolInterface>, steps: Vec<TraceStep>) -> Self {
        Self {
            query: query.into(),
            tools,
            steps,
            metadata: TraceMetadata::default(),
        }
    }

    pub fn has_final_answer(&self) -> bool {
        self.steps
            .iter()
            .any(|s| matches!(s, TraceStep::FinalAnswer { .. }))
    }

    /// Structural equality: query, tool set, and steps. Metadata is
    /// generation provenance and deliberately excluded.
    pub fn structurally_equal(&self, other: &Trace) -> bool {
        self.query == other.query && self.tools == other.tools && self.steps == other.steps
    }

    /// Enforce the structural discipline the generator guarantees: calls
    /// paired with exactly one immediate response, one final answer at the
    /// end, and calls naming known tools unless flagged by an invalid
    /// response. The membership check is skipped when the tool set is empty
    /// (as for traces parsed from bare transcripts).
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let n = self.steps.len();
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                TraceStep::ToolCall { name, .. } => {
                    let next_is_response =
                        matches!(self.steps.get(i + 1), Some(TraceStep::ToolResponse { .. }));
                    if !next_is_response {
                        return Err(InvariantViolation::UnpairedCall { index: i });
                    }
                    if !self.tools.is_empty() {
                        if let Some(name) = name {
                            let known = self.tools.iter().any(|t| &t.name == name);
                            let flagged = matches!(
                                self.steps.get(i + 1),
                                Some(TraceStep::ToolResponse { valid: false, .. })
                            );
                            if !known && !flagged {
                                return Err(InvariantViolation::UnflaggedUnknownTool {
                                    name: name.clone(),
                                    index: i,
                                });
                            }
                        }
                    }
                }
                TraceStep::ToolResponse { .. } => {
                    if i == 0 || !matches!(self.steps[i - 1], TraceStep::ToolCall { .. }) {
                        return Err(InvariantViolation::OrphanResponse { index: i });
                    }
                }
                TraceStep::FinalAnswer { .. } => {
                    if i + 1 != n {
                        if self
                            .steps[i + 1..]
                            .iter()
                            .any(|s| matches!(s, TraceStep::FinalAnswer { .. }))
                        {
                            return Err(InvariantViolation::MultipleAnswers);
                        }
                        return Err(InvariantViolation::AnswerNotLast { index: i });
                    }
                }
                TraceStep::Reasoning { .. } => {}
            }
        }
        Ok(())
    }

    /// One-line JSON for JSONL persistence.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json_str(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

const TAGS: [&str; 4] = ["reasoning", "tool_call", "tool_response", "answer"];

/// Scan tagged blocks in document order, returning (tag, trimmed content)
/// pairs plus any loose prose as pseudo-`reasoning` entries.
fn scan_blocks(text: &str) -> Result<Vec<(&'static str, String)>, TraceParseError> {
    let mut blocks = Vec::new();
    let mut cursor = 0;
    loop {
        // Earliest open tag from the cursor.
        let mut next: Option<(usize, &'static str)> = None;
        for tag in TAGS {
            let open = format!("<{tag}>");
            if let Some(pos) = text[cursor..].find(&open) {
                let abs = cursor + pos;
                if next.map_or(true, |(best, _)| abs < best) {
                    next = Some((abs, tag));
                }
            }
        }
        let Some((open_at, tag)) = next else {
            let tail = text[cursor..].trim();
            if !tail.is_empty() {
                blocks.push(("", tail.to_string()));
            }
            return Ok(blocks);
        };
        let before = text[cursor..open_at].trim();
        if !before.is_empty() {
            blocks.push(("", before.to_string()));
        }
        let body_start = open_at + tag.len() + 2;
        let close = format!("</{tag}>");
        let Some(close_rel) = text[body_start..].find(&close) else {
            return Err(TraceParseError::UnclosedTag { tag: tag.to_string() });
        };
        let body = text[body_start..body_start + close_rel].trim().to_string();
        blocks.push((tag, body));
        cursor = body_start + close_rel + close.len();
    }
}

/// Parse tagged trace text into a [`Trace`].
///
/// Blocks map to steps in document order. Prose outside recognized tags is
/// attached to the preceding reasoning step, or opens a new one. A leading
/// `Query: ...` header line (as emitted by [`serialize_trace`]) populates the
/// query; bare transcripts leave it empty.
pub fn parse_trace(text: &str) -> Result<Trace, TraceParseError> {
    let (query, body) = match text.strip_prefix(QUERY_HEADER) {
        Some(rest) => match rest.split_once('\n') {
            Some((q, body)) => (q.to_string(), body),
            None => (rest.to_string(), ""),
        },
        None => (String::new(), text),
    };

    let mut steps: Vec<TraceStep> = Vec::new();
    let mut pending_call = false;
    for (tag, content) in scan_blocks(body)? {
        match tag {
            "reasoning" | "" => match steps.last_mut() {
                Some(TraceStep::Reasoning { text }) if tag.is_empty() => {
                    text.push('\n');
                    text.push_str(&content);
                }
                _ => steps.push(TraceStep::reasoning(content)),
            },
            "tool_call" => {
                steps.push(TraceStep::tool_call(content));
                pending_call = true;
            }
            "tool_response" => {
                if !pending_call {
                    return Err(TraceParseError::InterleavingViolation);
                }
                steps.push(TraceStep::tool_response(content));
                pending_call = false;
            }
            "answer" => steps.push(TraceStep::final_answer(content)),
            _ => unreachable!("scan_blocks yields known tags"),
        }
    }
    Ok(Trace::new(query, Vec::new(), steps))
}

pub(crate) fn write_step(out: &mut String, step: &TraceStep) {
    match step {
        TraceStep::Reasoning { text } => {
            out.push_str("\n<reasoning>\n");
            out.push_str(text);
            out.push_str("\n</reasoning>\n");
        }
        TraceStep::ToolCall { raw, .. } => {
            out.push_str("\n<tool_call>\n");
            out.push_str(raw);
            out.push_str("\n</tool_call>\n");
        }
        TraceStep::ToolResponse { content, .. } => {
            out.push_str("\n<tool_response>\n");
            out.push_str(content);
            out.push_str("\n</tool_response>\n");
        }
        TraceStep::FinalAnswer { raw } => {
            out.push_str("\n<answer>\n");
            out.push_str(raw);
            out.push_str("\n</answer>\n");
        }
    }
}

/// Render a trace back to tagged text. `parse_trace(serialize_trace(t))`
/// structurally equals `t` up to the tool set, which tagged text does not
/// carry. Malformed call bodies are re-emitted verbatim.
pub fn serialize_trace(trace: &Trace) -> String {
    let mut out = String::new();
    out.push_str(QUERY_HEADER);
    out.push_str(&trace.query);
    out.push('\n');
    for step in &trace.steps {
        write_step(&mut out, step);
    }
    out
}

/// Canonical rendering of a JSON value for duplicate detection: object keys
/// sorted, integral numbers printed without a fractional part.
pub(crate) fn canonical_json(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let fields: Vec<String> = keys
                .into_iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        serde_json::to_string(k).expect("string serializes"),
                        canonical_json(&map[k])
                    )
                })
                .collect();
            format!("{{{}}}", fields.join(","))
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", parts.join(","))
        }
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_string()
            } else if let Some(u) = n.as_u64() {
                u.to_string()
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15 {
                    format!("{}", f as i64)
                } else {
                    n.to_string()
                }
            }
        }
        other => other.to_string(),
    }
}

/// Compute structural statistics. A call counts toward `n_loops` when its
/// (name, canonical arguments) pair exactly equals that of any earlier call.
pub fn compute_stats(trace: &Trace) -> TraceStats {
    let mut seen: HashSet<String> = HashSet::new();
    let mut stats = TraceStats {
        n_tool_calls: 0,
        n_loops: 0,
        n_malformed: 0,
        has_final_answer: trace.has_final_answer(),
    };
    for step in &trace.steps {
        if let TraceStep::ToolCall { name, args, .. } = step {
            stats.n_tool_calls += 1;
            match (name, args) {
                (Some(name), Some(args)) => {
                    let key = format!("{name}\u{1}{}", canonical_json(&Value::Object(args.clone())));
                    if !seen.insert(key) {
                        stats.n_loops += 1;
                    }
                }
                _ => stats.n_malformed += 1,
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn chess_transcript() -> String {
        std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/chess_trace.txt"
        ))
        .expect("fixture present")
    }

    #[test]
    fn parses_chess_transcript() {
        let trace = parse_trace(&chess_transcript()).unwrap();
        let reasoning = trace
            .steps
            .iter()
            .filter(|s| matches!(s, TraceStep::Reasoning { .. }))
            .count();
        let calls: Vec<&TraceStep> = trace
            .steps
            .iter()
            .filter(|s| matches!(s, TraceStep::ToolCall { .. }))
            .collect();
        let responses = trace
            .steps
            .iter()
            .filter(|s| matches!(s, TraceStep::ToolResponse { .. }))
            .count();
        assert_eq!(reasoning, 1);
        assert_eq!(calls.len(), 2);
        assert_eq!(responses, 2);
        assert!(trace.has_final_answer());

        let TraceStep::ToolCall { name, args, .. } = calls[0] else { panic!() };
        assert_eq!(name.as_deref(), Some("fide_rankings_query"));
        assert_eq!(args.as_ref().unwrap()["limit"], json!(1));
        let TraceStep::ToolCall { name, args, .. } = calls[1] else { panic!() };
        assert_eq!(name.as_deref(), Some("answer_summarizer"));
        assert!(args.as_ref().unwrap().contains_key("final_answer"));
    }

    #[test]
    fn minimal_answer_only_trace() {
        let trace = parse_trace("<answer>42</answer>").unwrap();
        assert_eq!(trace.steps, vec![TraceStep::final_answer("42")]);
    }

    #[test]
    fn response_before_any_call_is_an_interleaving_violation() {
        let text = "<tool_response>out of nowhere</tool_response>";
        assert_eq!(
            parse_trace(text).unwrap_err(),
            TraceParseError::InterleavingViolation
        );
    }

    #[test]
    fn unclosed_tag_is_fatal() {
        let text = "<reasoning>never closed";
        assert_eq!(
            parse_trace(text).unwrap_err(),
            TraceParseError::UnclosedTag { tag: "reasoning".into() }
        );
    }

    #[test]
    fn prose_outside_tags_joins_reasoning() {
        let text = "<reasoning>first</reasoning>\nloose thought\n<answer>x</answer>";
        let trace = parse_trace(text).unwrap();
        assert_eq!(
            trace.steps,
            vec![
                TraceStep::reasoning("first\nloose thought"),
                TraceStep::final_answer("x"),
            ]
        );
    }

    #[test]
    fn chess_round_trip() {
        let trace = parse_trace(&chess_transcript()).unwrap();
        let text = serialize_trace(&trace);
        let reparsed = parse_trace(&text).unwrap();
        assert!(trace.structurally_equal(&reparsed));
    }

    #[test]
    fn empty_trace_serializes_to_query_header_only() {
        let trace = Trace::new("who?", Vec::new(), Vec::new());
        assert_eq!(serialize_trace(&trace), "Query: who?\n");
        let reparsed = parse_trace(&serialize_trace(&trace)).unwrap();
        assert!(trace.structurally_equal(&reparsed));
    }

    #[test]
    fn malformed_call_raw_is_preserved() {
        let text = "<tool_call>not json { at all</tool_call><tool_response>err</tool_response>";
        let trace = parse_trace(text).unwrap();
        let TraceStep::ToolCall { name, args, raw } = &trace.steps[0] else { panic!() };
        assert!(name.is_none());
        assert!(args.is_none());
        assert_eq!(raw, "not json { at all");
        let reserialized = serialize_trace(&trace);
        assert!(reserialized.contains("not json { at all"));
        assert!(trace.structurally_equal(&parse_trace(&reserialized).unwrap()));
    }

    #[test]
    fn repeated_calls_count_as_loops() {
        let call = "{\"name\": \"probe\", \"parameters\": {\"q\": 1}}";
        let steps = vec![
            TraceStep::tool_call(call),
            TraceStep::tool_response("a"),
            TraceStep::tool_call(call),
            TraceStep::tool_response("b"),
            TraceStep::tool_call(call),
            TraceStep::tool_response("c"),
        ];
        let stats = compute_stats(&Trace::new("q", Vec::new(), steps));
        assert_eq!(stats.n_tool_calls, 3);
        assert_eq!(stats.n_loops, 2);
    }

    #[test]
    fn loop_detection_ignores_key_order_and_number_format() {
        let a = TraceStep::tool_call("{\"name\": \"probe\", \"parameters\": {\"a\": 1, \"b\": 2.0}}");
        let b = TraceStep::tool_call("{\"name\": \"probe\", \"parameters\": {\"b\": 2, \"a\": 1}}");
        let steps = vec![
            a,
            TraceStep::tool_response("x"),
            b,
            TraceStep::tool_response("y"),
        ];
        let stats = compute_stats(&Trace::new("q", Vec::new(), steps));
        assert_eq!(stats.n_loops, 1);
    }

    #[test]
    fn chess_stats() {
        let trace = parse_trace(&chess_transcript()).unwrap();
        let stats = compute_stats(&trace);
        assert_eq!(stats.n_tool_calls, 2);
        assert_eq!(stats.n_loops, 0);
        assert_eq!(stats.n_malformed, 0);
        assert!(stats.has_final_answer);
    }

    #[test]
    fn invariant_checker_rejects_unpaired_call() {
        let steps = vec![
            TraceStep::tool_call("{\"name\": \"a\", \"parameters\": {}}"),
            TraceStep::tool_call("{\"name\": \"b\", \"parameters\": {}}"),
            TraceStep::tool_response("late"),
        ];
        let trace = Trace::new("q", Vec::new(), steps);
        assert_eq!(
            trace.check_invariants().unwrap_err(),
            InvariantViolation::UnpairedCall { index: 0 }
        );
    }

    #[test]
    fn invariant_checker_rejects_answer_mid_trace() {
        let steps = vec![
            TraceStep::final_answer("42"),
            TraceStep::reasoning("after the fact"),
        ];
        let trace = Trace::new("q", Vec::new(), steps);
        assert_eq!(
            trace.check_invariants().unwrap_err(),
            InvariantViolation::AnswerNotLast { index: 0 }
        );
    }

    #[test]
    fn jsonl_round_trip_preserves_metadata() {
        let mut trace = parse_trace(&chess_transcript()).unwrap();
        trace.metadata.backend = "scripted".into();
        trace.metadata.query_id = Some("q01".into());
        trace.metadata.rollout = Some(3);
        let line = trace.to_json_string();
        let back = Trace::from_json_str(&line).unwrap();
        assert_eq!(trace, back);
        assert!(line.contains("\"kind\":\"tool_call\""));
    }
}
