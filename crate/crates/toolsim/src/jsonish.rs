//! Lenient JSON recovery for raw model output.
//!
//! Model replies drift: code fences around the payload, prose before or after
//! it, raw newlines inside string literals from terminal wrapping. Recovery
//! runs a fixed ladder of increasingly aggressive cleanups, each followed by a
//! strict `serde_json` parse, and returns the first success.

use serde_json::Value;

/// Parse `text` as JSON, tolerating fences, surrounding prose, and raw
/// control characters inside string literals.
pub(crate) fn parse_lenient(text: &str) -> Result<Value, serde_json::Error> {
    let trimmed = text.trim();
    let mut last_err = match serde_json::from_str(trimmed) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    let mut candidates = Vec::new();
    let defenced = strip_fences(trimmed);
    if defenced != trimmed {
        candidates.push(defenced.to_string());
    }
    if let Some(sliced) = bracket_slice(defenced) {
        if sliced != defenced {
            candidates.push(sliced.to_string());
        }
        candidates.push(escape_control_chars_in_strings(sliced));
    } else {
        candidates.push(escape_control_chars_in_strings(defenced));
    }
    for candidate in candidates {
        match serde_json::from_str(&candidate) {
            Ok(v) => return Ok(v),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Drop a leading/trailing markdown code fence line if present.
fn strip_fences(text: &str) -> &str {
    let mut s = text.trim();
    if s.starts_with("```") {
        match s.find('\n') {
            Some(idx) => s = s[idx + 1..].trim(),
            None => return "",
        }
    }
    if s.ends_with("```") {
        s = s[..s.len() - 3].trim_end();
    }
    s.trim()
}

/// Slice from the first opening bracket to the last matching closing bracket,
/// shedding leading/trailing prose.
fn bracket_slice(text: &str) -> Option<&str> {
    let start = text.find(['[', '{'])?;
    let close = match text.as_bytes()[start] {
        b'[' => ']',
        _ => '}',
    };
    let end = text.rfind(close)?;
    if end <= start {
        return None;
    }
    Some(&text[start..=end])
}

/// Escape raw newlines, carriage returns, and tabs that occur inside string
/// literals. Terminal-wrapped model output frequently breaks strings across
/// lines, which strict JSON rejects as unescaped control characters.
fn escape_control_chars_in_strings(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for ch in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
                out.push(ch);
                continue;
            }
            match ch {
                '\\' => {
                    escaped = true;
                    out.push(ch);
                }
                '"' => {
                    in_string = false;
                    out.push(ch);
                }
                '\n' => out.push_str("\\n"),
                '\r' => out.push_str("\\r"),
                '\t' => out.push_str("\\t"),
                _ => out.push(ch),
            }
        } else {
            if ch == '"' {
                in_string = true;
            }
            out.push(ch);
        }
    }
    out
}
