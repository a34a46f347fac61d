//! Answer extraction, text normalization, the tiered answer score, and the
//! composite trace reward, plus EM/F1 evaluation metrics.
//!
//! Equality everywhere means normalized exact string equality — never
//! substring containment — and an absent answer never equals anything.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::trace::{compute_stats, Trace, TraceStep};
use crate::ANSWER_SUMMARIZER;

/// Coefficient of the per-duplicate-call efficiency penalty.
pub const LOOP_PENALTY: f64 = 0.1;

/// The five answer-score tiers, in priority order.
pub const ANSWER_TIERS: [f64; 5] = [1.0, 0.8, 0.6, 0.3, 0.0];

static ARTICLES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("static regex compiles"));

/// Strip `\boxed{...}` and `\text{...}` wrappers, keeping their contents.
/// Handles nesting by re-scanning until no wrapper remains.
pub fn strip_wrappers(text: &str) -> String {
    let mut s = text.to_string();
    loop {
        let Some(start) = s.find("\\boxed{").or_else(|| s.find("\\text{")) else {
            return s;
        };
        let brace = s[start..].find('{').expect("wrapper has a brace") + start;
        let mut depth = 0usize;
        let mut close = None;
        for (i, ch) in s[brace..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(brace + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(close) = close else {
            // Unbalanced wrapper: leave the text as-is.
            return s;
        };
        let inner = s[brace + 1..close].to_string();
        s.replace_range(start..=close, &inner);
    }
}

/// Standard answer normalization: strip boxed/text wrappers, lowercase,
/// drop punctuation, drop the articles a/an/the as whole words, collapse
/// whitespace. Idempotent.
pub fn normalize(text: &str) -> String {
    let unwrapped = strip_wrappers(text);
    let lowered = unwrapped.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Where an extracted answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    /// The `<answer>` block.
    AnswerTag,
    /// The `final_answer` argument of the last summarizer call.
    SummarizerArgument,
    /// Text after the last `**Final Answer:**` marker in a tool response.
    ResponseMarker,
}

/// The final and intermediate answers extracted from a trace, with
/// provenance. Stored values have boxed wrappers stripped; normalization
/// happens at comparison time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedAnswers {
    pub a_f: Option<String>,
    pub a_i: Option<String>,
    pub a_f_source: Option<AnswerSource>,
    pub a_i_source: Option<AnswerSource>,
}

const FINAL_ANSWER_MARKER: &str = "**Final Answer:**";

/// Extract the final answer (from the `<answer>` block) and the intermediate
/// answer (from the last summarizer call's `final_answer` argument, falling
/// back to the last `**Final Answer:**` marker in any tool response).
pub fn extract_answers(trace: &Trace) -> ExtractedAnswers {
    let mut answers = ExtractedAnswers {
        a_f: None,
        a_i: None,
        a_f_source: None,
        a_i_source: None,
    };
    for step in &trace.steps {
        match step {
            TraceStep::FinalAnswer { raw } => {
                answers.a_f = Some(strip_wrappers(raw).trim().to_string());
                answers.a_f_source = Some(AnswerSource::AnswerTag);
            }
            TraceStep::ToolCall { name, args, .. } => {
                if name.as_deref() == Some(ANSWER_SUMMARIZER) {
                    if let Some(text) = args
                        .as_ref()
                        .and_then(|a| a.get("final_answer"))
                        .and_then(Value::as_str)
                    {
                        answers.a_i = Some(strip_wrappers(text).trim().to_string());
                        answers.a_i_source = Some(AnswerSource::SummarizerArgument);
                    }
                }
            }
            _ => {}
        }
    }
    if answers.a_i.is_none() {
        for step in &trace.steps {
            if let TraceStep::ToolResponse { content, .. } = step {
                if let Some(idx) = content.rfind(FINAL_ANSWER_MARKER) {
                    let text = &content[idx + FINAL_ANSWER_MARKER.len()..];
                    answers.a_i = Some(strip_wrappers(text).trim().to_string());
                    answers.a_i_source = Some(AnswerSource::ResponseMarker);
                }
            }
        }
    }
    answers
}

/// The tiered answer score over (final, intermediate, gold), evaluated
/// first-match in priority order on normalized exact equality. Absent
/// answers never equal the gold.
pub fn answer_score(a_f: Option<&str>, a_i: Option<&str>, gold: &str) -> f64 {
    let gold = normalize(gold);
    let a_f = a_f.map(normalize);
    let a_i = a_i.map(normalize);
    let f_is_gold = a_f.as_deref() == Some(gold.as_str());
    let i_is_gold = a_i.as_deref() == Some(gold.as_str());
    if f_is_gold && i_is_gold {
        1.0
    } else if f_is_gold && !i_is_gold {
        0.8
    } else if !f_is_gold && i_is_gold {
        0.6
    } else if (f_is_gold || i_is_gold) && a_f != a_i {
        // Shadowed by the two cases above under exact single-valued
        // equality; kept so the piecewise definition is evaluated as
        // written.
        0.3
    } else {
        0.0
    }
}

/// Per-trace reward decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// One of the five tier constants.
    pub r_ans: f64,
    pub n_loops: usize,
    /// `-coefficient * n_loops`.
    pub r_efficiency: f64,
    /// `r_ans + r_efficiency`.
    pub total: f64,
}

/// Composite trace reward with the default loop-penalty coefficient.
pub fn trace_reward(trace: &Trace, gold: &str) -> RewardBreakdown {
    trace_reward_with_penalty(trace, gold, LOOP_PENALTY)
}

/// Composite trace reward: tiered answer score plus an efficiency penalty of
/// `-coefficient` per duplicated tool call.
pub fn trace_reward_with_penalty(trace: &Trace, gold: &str, coefficient: f64) -> RewardBreakdown {
    let answers = extract_answers(trace);
    let stats = compute_stats(trace);
    let r_ans = answer_score(answers.a_f.as_deref(), answers.a_i.as_deref(), gold);
    let r_efficiency = -coefficient * stats.n_loops as f64;
    RewardBreakdown {
        r_ans,
        n_loops: stats.n_loops,
        r_efficiency,
        total: r_ans + r_efficiency,
    }
}

/// Exact match on normalized strings: 1 or 0.
pub fn exact_match(prediction: &str, gold: &str) -> u8 {
    u8::from(normalize(prediction) == normalize(gold))
}

/// Token-level F1 over normalized whitespace tokens (multiset overlap).
/// Both sides empty is a perfect match; exactly one side empty scores 0.
pub fn f1(prediction: &str, gold: &str) -> f64 {
    let p: Vec<&str> = binding_tokens(&normalize(prediction));
    let g: Vec<&str> = binding_tokens(&normalize(gold));
    fn binding_tokens(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }
    // Lifetime gymnastics: recompute tokens over owned normals.
    let pn = normalize(prediction);
    let gn = normalize(gold);
    let p: Vec<&str> = pn.split_whitespace().collect();
    let g: Vec<&str> = gn.split_whitespace().collect();
    let _ = (p.len(), g.len());
    f1_tokens(&p, &g)
}

fn f1_tokens(p: &[&str], g: &[&str]) -> f64 {
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut gold_counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for t in g {
        *gold_counts.entry(t).or_insert(0) += 1;
    }
    let mut same = 0usize;
    for t in p {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / p.len() as f64;
    let recall = same as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// One row of a score report, serialized as JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub trace_id: String,
    pub a_f: Option<String>,
    pub a_i: Option<String>,
    pub gold: String,
    pub r_ans: f64,
    pub n_loops: usize,
    pub r_efficiency: f64,
    pub total: f64,
    pub em: u8,
    pub f1: f64,
}
