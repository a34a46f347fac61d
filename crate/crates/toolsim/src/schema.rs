//! Tool interfaces as typed schemas, with lightweight argument validation.
//!
//! A tool is a named function contract: a JSON schema for its arguments, an
//! optional schema for its output, and a flat list of validation checks
//! derived from the argument schema. Validation failure is a value — a
//! [`StructuredError`] payload that the orchestrator injects back into the
//! trace as an observation — never a fault.
//!
//! The schema subset is deliberately small: six kinds (`object`, `string`,
//! `integer`, `number`, `boolean`, `array`), `required`, `enum`, `pattern`,
//! and inclusive numeric bounds. Unknown or misplaced keywords are preserved
//! on parse and ignored by validation.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::jsonish;

/// Maximum nesting depth accepted for tool schemas.
pub const MAX_SCHEMA_DEPTH: usize = 8;

/// The six value kinds the schema subset supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Object,
    String,
    Integer,
    Number,
    Boolean,
    Array,
}

impl SchemaKind {
    fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "object" => Some(Self::Object),
            "string" => Some(Self::String),
            "integer" => Some(Self::Integer),
            "number" => Some(Self::Number),
            "boolean" => Some(Self::Boolean),
            "array" => Some(Self::Array),
            _ => None,
        }
    }

    fn keyword(self) -> &'static str {
        match self {
            Self::Object => "object",
            Self::String => "string",
            Self::Integer => "integer",
            Self::Number => "number",
            Self::Boolean => "boolean",
            Self::Array => "array",
        }
    }

    /// Does `value` inhabit this kind? `integer` accepts any JSON number
    /// with a zero fractional part.
    pub fn matches(self, value: &Value) -> bool {
        match self {
            Self::Object => value.is_object(),
            Self::String => value.is_string(),
            Self::Boolean => value.is_boolean(),
            Self::Array => value.is_array(),
            Self::Number => value.is_number(),
            Self::Integer => match value {
                Value::Number(n) => {
                    n.is_i64()
                        || n.is_u64()
                        || n.as_f64().is_some_and(|f| f.is_finite() && f.fract() == 0.0)
                }
                _ => false,
            },
        }
    }
}

impl fmt::Display for SchemaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// One node of a parsed tool schema.
///
/// Nodes are normally built by [`SchemaNode::from_value`], which enforces the
/// structural invariants (required names declared, enum literals matching the
/// node kind, bounded depth). Fields are public for inspection; treat them as
/// read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaNode {
    pub kind: SchemaKind,
    pub description: Option<String>,
    /// Declared properties in declaration order (`object` only).
    pub properties: Vec<(String, SchemaNode)>,
    /// Names of required properties (`object` only).
    pub required: Vec<String>,
    /// Element schema (`array` only).
    pub items: Option<Box<SchemaNode>>,
    /// Allowed literal values, each matching `kind`.
    pub enum_values: Option<Vec<Value>>,
    /// Regular expression a string value must contain a match for.
    pub pattern: Option<String>,
    /// Inclusive numeric bounds.
    pub minimum: Option<f64>,
    pub maximum: Option<f64>,
    /// Unknown or misplaced keywords, preserved verbatim and ignored by
    /// validation.
    pub extra: BTreeMap<String, Value>,
}

impl SchemaNode {
    /// An empty `object` schema: no properties, nothing required.
    pub fn empty_object() -> Self {
        Self {
            kind: SchemaKind::Object,
            description: None,
            properties: Vec::new(),
            required: Vec::new(),
            items: None,
            enum_values: None,
            pattern: None,
            minimum: None,
            maximum: None,
            extra: BTreeMap::new(),
        }
    }

    /// Parse a schema from its JSON representation.
    pub fn from_value(value: &Value) -> Result<Self, SchemaError> {
        Self::from_value_at(value, 1)
    }

    fn from_value_at(value: &Value, depth: usize) -> Result<Self, SchemaError> {
        if depth > MAX_SCHEMA_DEPTH {
            return Err(SchemaError::TooDeep { max: MAX_SCHEMA_DEPTH });
        }
        let obj = value.as_object().ok_or(SchemaError::NotAnObject)?;
        let kind_str = obj
            .get("type")
            .and_then(Value::as_str)
            .ok_or(SchemaError::MissingKind)?;
        let kind = SchemaKind::from_keyword(kind_str)
            .ok_or_else(|| SchemaError::UnsupportedKind(kind_str.to_string()))?;

        let mut node = SchemaNode::empty_object();
        node.kind = kind;

        for (key, val) in obj {
            match key.as_str() {
                "type" => {}
                "description" => {
                    if let Some(s) = val.as_str() {
                        node.description = Some(s.to_string());
                    } else {
                        node.extra.insert(key.clone(), val.clone());
                    }
                }
                "properties" if kind == SchemaKind::Object => {
                    let props = val.as_object().ok_or(SchemaError::MalformedKeyword {
                        keyword: "properties",
                    })?;
                    for (name, prop) in props {
                        node.properties
                            .push((name.clone(), Self::from_value_at(prop, depth + 1)?));
                    }
                }
                "required" if kind == SchemaKind::Object => {
                    let names = val.as_array().ok_or(SchemaError::MalformedKeyword {
                        keyword: "required",
                    })?;
                    for name in names {
                        let name = name.as_str().ok_or(SchemaError::MalformedKeyword {
                            keyword: "required",
                        })?;
                        node.required.push(name.to_string());
                    }
                }
                "items" if kind == SchemaKind::Array => {
                    node.items = Some(Box::new(Self::from_value_at(val, depth + 1)?));
                }
                "enum" => {
                    let literals = val.as_array().ok_or(SchemaError::MalformedKeyword {
                        keyword: "enum",
                    })?;
                    node.enum_values = Some(literals.clone());
                }
                "pattern" if kind == SchemaKind::String => {
                    let pattern = val.as_str().ok_or(SchemaError::MalformedKeyword {
                        keyword: "pattern",
                    })?;
                    Regex::new(pattern).map_err(|_| SchemaError::InvalidPattern {
                        pattern: pattern.to_string(),
                    })?;
                    node.pattern = Some(pattern.to_string());
                }
                "minimum" if matches!(kind, SchemaKind::Integer | SchemaKind::Number) => {
                    node.minimum = val.as_f64();
                    if node.minimum.is_none() {
                        node.extra.insert(key.clone(), val.clone());
                    }
                }
                "maximum" if matches!(kind, SchemaKind::Integer | SchemaKind::Number) => {
                    node.maximum = val.as_f64();
                    if node.maximum.is_none() {
                        node.extra.insert(key.clone(), val.clone());
                    }
                }
                _ => {
                    // Unknown keyword, or a known keyword on the wrong kind
                    // (e.g. `pattern` on an integer): preserve, don't validate.
                    node.extra.insert(key.clone(), val.clone());
                }
            }
        }

        for name in &node.required {
            if !node.properties.iter().any(|(p, _)| p == name) {
                return Err(SchemaError::UnknownRequired { name: name.clone() });
            }
        }
        if let Some(literals) = &node.enum_values {
            for lit in literals {
                if !kind.matches(lit) {
                    return Err(SchemaError::EnumKindMismatch {
                        kind,
                        literal: lit.clone(),
                    });
                }
            }
        }
        Ok(node)
    }

    /// Emit the JSON representation. Keys come out in a fixed canonical
    /// order, preserved-but-unknown keywords last.
    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("type".into(), Value::String(self.kind.keyword().into()));
        if let Some(desc) = &self.description {
            obj.insert("description".into(), Value::String(desc.clone()));
        }
        if !self.properties.is_empty() {
            let mut props = Map::new();
            for (name, node) in &self.properties {
                props.insert(name.clone(), node.to_value());
            }
            obj.insert("properties".into(), Value::Object(props));
        } else if self.kind == SchemaKind::Object {
            obj.insert("properties".into(), Value::Object(Map::new()));
        }
        if !self.required.is_empty() {
            obj.insert(
                "required".into(),
                Value::Array(self.required.iter().cloned().map(Value::String).collect()),
            );
        }
        if let Some(items) = &self.items {
            obj.insert("items".into(), items.to_value());
        }
        if let Some(literals) = &self.enum_values {
            obj.insert("enum".into(), Value::Array(literals.clone()));
        }
        if let Some(pattern) = &self.pattern {
            obj.insert("pattern".into(), Value::String(pattern.clone()));
        }
        if let Some(min) = self.minimum {
            obj.insert("minimum".into(), number_value(min));
        }
        if let Some(max) = self.maximum {
            obj.insert("maximum".into(), number_value(max));
        }
        for (key, val) in &self.extra {
            obj.insert(key.clone(), val.clone());
        }
        Value::Object(obj)
    }

    /// Resolve the node at a check path like `address.city` or `tags[]`.
    fn node_at(&self, path: &str) -> Option<&SchemaNode> {
        let mut node = self;
        for seg in PathSegments::new(path) {
            node = match seg {
                PathSeg::Items => node.items.as_deref()?,
                PathSeg::Key(name) => {
                    &node.properties.iter().find(|(p, _)| p == name)?.1
                }
            };
        }
        Some(node)
    }
}

fn number_value(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        Value::from(x as i64)
    } else {
        Value::from(x)
    }
}

/// Kinds of validation checks (and of the two orchestrator-level failures
/// that reuse the structured error payload).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    RequiredPresent,
    TypeMatch,
    EnumMembership,
    RegexMatch,
    Range,
    /// A call naming a tool outside the tool set. Never derived from a
    /// schema; injected by the orchestrator.
    UnknownTool,
    /// A tool call whose body could not be parsed into (name, arguments).
    /// Never derived from a schema; injected by the orchestrator.
    MalformedCall,
}

impl CheckKind {
    /// The kebab-case wire name, as used in the `check` error field.
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RequiredPresent => "required-present",
            Self::TypeMatch => "type-match",
            Self::EnumMembership => "enum-membership",
            Self::RegexMatch => "regex-match",
            Self::Range => "range",
            Self::UnknownTool => "unknown-tool",
            Self::MalformedCall => "malformed-call",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One derived validation check: a kind plus the property path it targets.
/// `[]` in a path addresses array elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub kind: CheckKind,
    pub path: String,
}

/// Machine-readable validation failure, injected into traces as an
/// observation so the agent can self-correct.
///
/// Serializes to a single JSON object with the fixed keys
/// `error`, `tool`, `path`, `check` — in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredError {
    /// Human-readable message.
    pub error: String,
    /// Tool the failing call addressed.
    pub tool: String,
    /// Dot path of the failing value inside the arguments.
    pub path: String,
    /// The check that failed.
    pub check: CheckKind,
}

impl StructuredError {
    /// The canonical single-line wire form.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("structured error serializes")
    }

    /// Recognize the wire form: a JSON object carrying all four fixed keys.
    pub fn from_content(content: &str) -> Option<Self> {
        serde_json::from_str(content.trim()).ok()
    }
}

/// Outcome of validating arguments or an observation against a schema.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationOutcome {
    Valid,
    Invalid(StructuredError),
}

impl ValidationOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationOutcome::Valid)
    }
}

/// A named tool contract: input schema, optional output schema, and the
/// checks derived from the input schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolInterface {
    pub name: String,
    pub description: String,
    pub input_schema: SchemaNode,
    pub output_schema: Option<SchemaNode>,
    checks: Vec<ValidationCheck>,
}

impl ToolInterface {
    /// Build a tool, deriving its check list. The name must be a non-empty
    /// `[a-z0-9_]+` identifier and the input schema an `object`.
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        input_schema: SchemaNode,
        output_schema: Option<SchemaNode>,
    ) -> Result<Self, ToolSetParseError> {
        let name = name.into();
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
            return Err(ToolSetParseError::InvalidToolName { name });
        }
        if input_schema.kind != SchemaKind::Object {
            return Err(ToolSetParseError::Schema(SchemaError::InputNotObject));
        }
        let checks = derive_checks(&input_schema, false);
        Ok(Self {
            name,
            description: description.into(),
            input_schema,
            output_schema,
            checks,
        })
    }

    /// The derived checks, in evaluation order: all `required-present`, then
    /// `type-match`, `enum-membership`, `regex-match`, `range`.
    pub fn checks(&self) -> &[ValidationCheck] {
        &self.checks
    }

    /// Parse one wire element: `{"type": "function", "function": {...}}`.
    pub fn from_wire_value(value: &Value) -> Result<Self, ToolSetParseError> {
        let obj = value
            .as_object()
            .ok_or(ToolSetParseError::MissingFunctionWrapper)?;
        let is_function = obj.get("type").and_then(Value::as_str) == Some("function");
        let function = obj.get("function").and_then(Value::as_object);
        let (Some(function), true) = (function, is_function) else {
            return Err(ToolSetParseError::MissingFunctionWrapper);
        };
        let name = function
            .get("name")
            .and_then(Value::as_str)
            .ok_or(ToolSetParseError::MissingFunctionWrapper)?;
        let description = function
            .get("description")
            .and_then(Value::as_str)
            .unwrap_or("");
        let input_schema = match function.get("parameters") {
            Some(v) => SchemaNode::from_value(v)?,
            None => SchemaNode::empty_object(),
        };
        let output_schema = function
            .get("output_schema")
            .map(SchemaNode::from_value)
            .transpose()?;
        Self::new(name, description, input_schema, output_schema)
    }

    /// Emit the wire element with fixed key order: `(type, function)` and
    /// `(name, description, parameters[, output_schema])`.
    pub fn to_wire_value(&self) -> Value {
        let mut function = Map::new();
        function.insert("name".into(), Value::String(self.name.clone()));
        function.insert("description".into(), Value::String(self.description.clone()));
        function.insert("parameters".into(), self.input_schema.to_value());
        if let Some(out) = &self.output_schema {
            function.insert("output_schema".into(), out.to_value());
        }
        let mut obj = Map::new();
        obj.insert("type".into(), Value::String("function".into()));
        obj.insert("function".into(), Value::Object(function));
        Value::Object(obj)
    }
}

impl Serialize for ToolInterface {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_wire_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ToolInterface {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        ToolInterface::from_wire_value(&value).map_err(D::Error::custom)
    }
}

/// Serialize a tool set to the wire format (a JSON array of wrapped
/// function objects).
pub fn tool_set_to_wire(tools: &[ToolInterface]) -> Value {
    Value::Array(tools.iter().map(ToolInterface::to_wire_value).collect())
}

/// Errors constructing a schema node.
#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("schema is not a JSON object")]
    NotAnObject,
    #[error("schema has no \"type\" keyword")]
    MissingKind,
    #[error("unsupported schema type {0:?}")]
    UnsupportedKind(String),
    #[error("schema nesting exceeds the supported depth of {max}")]
    TooDeep { max: usize },
    #[error("required name {name:?} is not a declared property")]
    UnknownRequired { name: String },
    #[error("malformed {keyword:?} keyword")]
    MalformedKeyword { keyword: &'static str },
    #[error("invalid regular expression {pattern:?}")]
    InvalidPattern { pattern: String },
    #[error("enum literal {literal} does not match declared kind {kind}")]
    EnumKindMismatch { kind: SchemaKind, literal: Value },
    #[error("tool input schema must be an object schema")]
    InputNotObject,
}

/// Errors parsing a tool set from raw model output.
#[derive(Debug, Error, PartialEq)]
pub enum ToolSetParseError {
    #[error("tool set must be a bare JSON array, not an object wrapping one")]
    WrappedObject,
    #[error("malformed tool set JSON: {0}")]
    MalformedJson(String),
    #[error("array element lacks the {{\"type\": \"function\", \"function\": {{...}}}} structure")]
    MissingFunctionWrapper,
    #[error("duplicate tool name {name:?}")]
    DuplicateToolName { name: String },
    #[error("tool name {name:?} is not a [a-z0-9_]+ identifier")]
    InvalidToolName { name: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Parse raw ToolMaker output into a tool set.
///
/// Recovery is lenient (fences and surrounding prose are stripped) but the
/// resulting JSON is held to the wire contract strictly: it must be a bare
/// array of `{"type": "function", "function": {...}}` elements with unique,
/// well-formed names. The `{"tools": [...]}` wrapping is rejected outright.
pub fn parse_tool_set(text: &str) -> Result<Vec<ToolInterface>, ToolSetParseError> {
    let value =
        jsonish::parse_lenient(text).map_err(|e| ToolSetParseError::MalformedJson(e.to_string()))?;
    let elements = match value {
        Value::Array(elements) => elements,
        Value::Object(obj) if obj.contains_key("tools") => {
            return Err(ToolSetParseError::WrappedObject)
        }
        _ => {
            return Err(ToolSetParseError::MalformedJson(
                "expected a JSON array of tools".to_string(),
            ))
        }
    };
    let mut tools: Vec<ToolInterface> = Vec::with_capacity(elements.len());
    for element in &elements {
        let tool = ToolInterface::from_wire_value(element)?;
        if tools.iter().any(|t| t.name == tool.name) {
            return Err(ToolSetParseError::DuplicateToolName { name: tool.name });
        }
        tools.push(tool);
    }
    Ok(tools)
}

/// Validate a tool call's arguments against the tool's input schema.
///
/// Checks run in a fixed kind-major order (required, type, enum, regex,
/// range); the first failure becomes the structured error. Argument keys not
/// declared in the schema are accepted and ignored.
pub fn validate_args(tool: &ToolInterface, args: &Map<String, Value>) -> ValidationOutcome {
    let root = Value::Object(args.clone());
    evaluate_checks(&tool.name, &tool.input_schema, &tool.checks, &root)
}

/// Validate a tool observation against the tool's output schema, when one is
/// declared. Without an output schema every observation is valid.
pub fn validate_output(tool: &ToolInterface, observation: &Value) -> ValidationOutcome {
    let Some(schema) = &tool.output_schema else {
        return ValidationOutcome::Valid;
    };
    let checks = derive_checks(schema, true);
    evaluate_checks(&tool.name, schema, &checks, observation)
}

/// Derive the flat check list for a schema, kind-major, each kind in
/// pre-order declaration order. With `include_root` the root value itself
/// gets a type check (used for output schemas, whose root kind is open).
pub fn derive_checks(schema: &SchemaNode, include_root: bool) -> Vec<ValidationCheck> {
    let mut required = Vec::new();
    let mut types = Vec::new();
    let mut enums = Vec::new();
    let mut regexes = Vec::new();
    let mut ranges = Vec::new();

    fn leaf_checks(
        node: &SchemaNode,
        path: &str,
        enums: &mut Vec<ValidationCheck>,
        regexes: &mut Vec<ValidationCheck>,
        ranges: &mut Vec<ValidationCheck>,
    ) {
        if node.enum_values.is_some() {
            enums.push(ValidationCheck { kind: CheckKind::EnumMembership, path: path.into() });
        }
        if node.pattern.is_some() {
            regexes.push(ValidationCheck { kind: CheckKind::RegexMatch, path: path.into() });
        }
        if node.minimum.is_some() || node.maximum.is_some() {
            ranges.push(ValidationCheck { kind: CheckKind::Range, path: path.into() });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        node: &SchemaNode,
        path: &str,
        required: &mut Vec<ValidationCheck>,
        types: &mut Vec<ValidationCheck>,
        enums: &mut Vec<ValidationCheck>,
        regexes: &mut Vec<ValidationCheck>,
        ranges: &mut Vec<ValidationCheck>,
    ) {
        for name in &node.required {
            required.push(ValidationCheck {
                kind: CheckKind::RequiredPresent,
                path: join_path(path, name),
            });
        }
        for (name, child) in &node.properties {
            let child_path = join_path(path, name);
            types.push(ValidationCheck { kind: CheckKind::TypeMatch, path: child_path.clone() });
            leaf_checks(child, &child_path, enums, regexes, ranges);
            walk(child, &child_path, required, types, enums, regexes, ranges);
        }
        if let Some(items) = &node.items {
            let item_path = format!("{path}[]");
            types.push(ValidationCheck { kind: CheckKind::TypeMatch, path: item_path.clone() });
            leaf_checks(items, &item_path, enums, regexes, ranges);
            walk(items, &item_path, required, types, enums, regexes, ranges);
        }
    }

    if include_root {
        types.push(ValidationCheck { kind: CheckKind::TypeMatch, path: String::new() });
        leaf_checks(schema, "", &mut enums, &mut regexes, &mut ranges);
    }
    walk(schema, "", &mut required, &mut types, &mut enums, &mut regexes, &mut ranges);

    let mut checks = required;
    checks.extend(types);
    checks.extend(enums);
    checks.extend(regexes);
    checks.extend(ranges);
    checks
}

fn join_path(base: &str, name: &str) -> String {
    if base.is_empty() {
        name.to_string()
    } else {
        format!("{base}.{name}")
    }
}

enum PathSeg<'a> {
    Key(&'a str),
    Items,
}

/// Iterator over `a.b[].c`-style path segments.
struct PathSegments<'a> {
    rest: &'a str,
}

impl<'a> PathSegments<'a> {
    fn new(path: &'a str) -> Self {
        Self { rest: path }
    }
}

impl<'a> Iterator for PathSegments<'a> {
    type Item = PathSeg<'a>;

    fn next(&mut self) -> Option<PathSeg<'a>> {
        if self.rest.is_empty() {
            return None;
        }
        if let Some(stripped) = self.rest.strip_prefix("[]") {
            self.rest = stripped.strip_prefix('.').unwrap_or(stripped);
            return Some(PathSeg::Items);
        }
        let end = self
            .rest
            .find(['.', '['])
            .unwrap_or(self.rest.len());
        let (seg, rest) = self.rest.split_at(end);
        self.rest = rest.strip_prefix('.').unwrap_or(rest);
        Some(PathSeg::Key(seg))
    }
}

/// Resolve every concrete value a check path addresses, expanding `[]` over
/// array elements. Paths that do not resolve yield nothing (their absence is
/// the business of other checks).
fn resolve_values<'v>(root: &'v Value, path: &str) -> Vec<(String, &'v Value)> {
    let mut current: Vec<(String, &Value)> = vec![(String::new(), root)];
    for seg in PathSegments::new(path) {
        let mut next = Vec::new();
        for (cpath, value) in current {
            match seg {
                PathSeg::Key(name) => {
                    if let Some(v) = value.as_object().and_then(|o| o.get(name)) {
                        next.push((join_path(&cpath, name), v));
                    }
                }
                PathSeg::Items => {
                    if let Some(arr) = value.as_array() {
                        for (i, v) in arr.iter().enumerate() {
                            next.push((format!("{cpath}[{i}]"), v));
                        }
                    }
                }
            }
        }
        current = next;
    }
    current
}

fn evaluate_checks(
    tool_name: &str,
    schema: &SchemaNode,
    checks: &[ValidationCheck],
    root: &Value,
) -> ValidationOutcome {
    for check in checks {
        if let Some(err) = evaluate_check(tool_name, schema, check, root) {
            return ValidationOutcome::Invalid(err);
        }
    }
    ValidationOutcome::Valid
}

fn evaluate_check(
    tool_name: &str,
    schema: &SchemaNode,
    check: &ValidationCheck,
    root: &Value,
) -> Option<StructuredError> {
    let fail = |path: String, message: String| StructuredError {
        error: message,
        tool: tool_name.to_string(),
        path,
        check: check.kind,
    };
    match check.kind {
        CheckKind::RequiredPresent => {
            let (parent_path, name) = match check.path.rsplit_once('.') {
                Some((parent, name)) => (parent, name),
                None => ("", check.path.as_str()),
            };
            for (cpath, parent) in resolve_values(root, parent_path) {
                if let Some(obj) = parent.as_object() {
                    if !obj.contains_key(name) {
                        return Some(fail(
                            join_path(&cpath, name),
                            format!("missing required property {name:?}"),
                        ));
                    }
                }
            }
            None
        }
        CheckKind::TypeMatch => {
            let expected = schema.node_at(&check.path)?.kind;
            for (cpath, value) in resolve_values(root, &check.path) {
                if !expected.matches(value) {
                    return Some(fail(
                        cpath,
                        format!("expected {expected}, got {}", kind_of(value)),
                    ));
                }
            }
            None
        }
        CheckKind::EnumMembership => {
            let literals = schema.node_at(&check.path)?.enum_values.as_ref()?;
            for (cpath, value) in resolve_values(root, &check.path) {
                if !literals.contains(value) {
                    return Some(fail(cpath, format!("value {value} is not one of the allowed literals")));
                }
            }
            None
        }
        CheckKind::RegexMatch => {
            let pattern = schema.node_at(&check.path)?.pattern.as_ref()?;
            let Ok(re) = Regex::new(pattern) else {
                return Some(fail(
                    check.path.clone(),
                    format!("schema pattern {pattern:?} is not a valid regular expression"),
                ));
            };
            for (cpath, value) in resolve_values(root, &check.path) {
                if let Some(s) = value.as_str() {
                    if !re.is_match(s) {
                        return Some(fail(cpath, format!("{s:?} does not match pattern {pattern:?}")));
                    }
                }
            }
            None
        }
        CheckKind::Range => {
            let node = schema.node_at(&check.path)?;
            for (cpath, value) in resolve_values(root, &check.path) {
                if let Some(x) = value.as_f64() {
                    if let Some(min) = node.minimum {
                        if x < min {
                            return Some(fail(cpath, format!("{x} is below the minimum of {min}")));
                        }
                    }
                    if let Some(max) = node.maximum {
                        if x > max {
                            return Some(fail(cpath, format!("{x} is above the maximum of {max}")));
                        }
                    }
                }
            }
            None
        }
        CheckKind::UnknownTool | CheckKind::MalformedCall => None,
    }
}

fn kind_of(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    /// The demographics lookup tool used as the canonical parsing fixture.
    pub(crate) const DEMOGRAPHICS_TOOL_SET: &str = r#"
[
  {
    "type": "function",
    "function": {
      "name": "demographics_search",
      "description": "Search for demographic and population data",
      "parameters": {
        "type": "object",
        "properties": {
          "location": {"type": "string", "description": "Town or city name"},
          "year": {"type": "integer", "description": "Census year"}
        },
        "required": ["location"]
      }
    }
  }
]
"#;

    fn demographics_tool() -> ToolInterface {
        parse_tool_set(DEMOGRAPHICS_TOOL_SET).unwrap().remove(0)
    }

    #[test]
    fn parses_demographics_tool_set() {
        let tools = parse_tool_set(DEMOGRAPHICS_TOOL_SET).unwrap();
        assert_eq!(tools.len(), 1);
        let tool = &tools[0];
        assert_eq!(tool.name, "demographics_search");
        assert_eq!(tool.input_schema.required, vec!["location"]);
        let props: Vec<&str> = tool
            .input_schema
            .properties
            .iter()
            .map(|(n, _)| n.as_str())
            .collect();
        assert_eq!(props, vec!["location", "year"]);
        assert_eq!(tool.input_schema.properties[0].1.kind, SchemaKind::String);
        assert_eq!(tool.input_schema.properties[1].1.kind, SchemaKind::Integer);
        assert!(tool.output_schema.is_none());
    }

    #[test]
    fn rejects_wrapped_object_form() {
        let wrapped = format!("{{\"tools\": {}}}", DEMOGRAPHICS_TOOL_SET.trim());
        assert_eq!(
            parse_tool_set(&wrapped).unwrap_err(),
            ToolSetParseError::WrappedObject
        );
    }

    #[test]
    fn empty_array_is_an_empty_tool_list() {
        assert!(parse_tool_set("[]").unwrap().is_empty());
    }

    #[test]
    fn strips_fences_and_prose_before_strict_parse() {
        let fenced = format!("Sure! Here you go:\n```json\n{}\n```", DEMOGRAPHICS_TOOL_SET.trim());
        assert_eq!(parse_tool_set(&fenced).unwrap().len(), 1);
    }

    #[test]
    fn rejects_missing_function_wrapper() {
        let bare = r#"[{"name": "demographics_search", "parameters": {"type": "object"}}]"#;
        assert_eq!(
            parse_tool_set(bare).unwrap_err(),
            ToolSetParseError::MissingFunctionWrapper
        );
    }

    #[test]
    fn rejects_duplicate_tool_names() {
        let twice = format!(
            "[{},{}]",
            DEMOGRAPHICS_TOOL_SET.trim().trim_start_matches('[').trim_end_matches(']'),
            DEMOGRAPHICS_TOOL_SET.trim().trim_start_matches('[').trim_end_matches(']')
        );
        assert!(matches!(
            parse_tool_set(&twice).unwrap_err(),
            ToolSetParseError::DuplicateToolName { .. }
        ));
    }

    #[test]
    fn rejects_bad_tool_names() {
        let bad = r#"[{"type": "function", "function": {"name": "Demographics-Search", "parameters": {"type": "object"}}}]"#;
        assert!(matches!(
            parse_tool_set(bad).unwrap_err(),
            ToolSetParseError::InvalidToolName { .. }
        ));
    }

    #[test]
    fn valid_arguments_pass() {
        let tool = demographics_tool();
        let args = json!({"location": "Gambier", "year": 2010});
        assert!(validate_args(&tool, args.as_object().unwrap()).is_valid());
    }

    #[test]
    fn missing_required_fails_first() {
        let tool = demographics_tool();
        let args = json!({"year": 2010});
        let ValidationOutcome::Invalid(err) = validate_args(&tool, args.as_object().unwrap())
        else {
            panic!("expected failure")
        };
        assert_eq!(err.check, CheckKind::RequiredPresent);
        assert_eq!(err.path, "location");
        assert_eq!(err.tool, "demographics_search");
    }

    #[test]
    fn type_mismatch_is_reported_at_the_field() {
        let tool = demographics_tool();
        let args = json!({"location": "Gambier", "year": "2010"});
        let ValidationOutcome::Invalid(err) = validate_args(&tool, args.as_object().unwrap())
        else {
            panic!("expected failure")
        };
        assert_eq!(err.check, CheckKind::TypeMatch);
        assert_eq!(err.path, "year");
    }

    #[test]
    fn undeclared_argument_keys_are_ignored() {
        let tool = demographics_tool();
        let args = json!({"location": "Gambier", "commentary": "extra"});
        assert!(validate_args(&tool, args.as_object().unwrap()).is_valid());
    }

    #[test]
    fn integral_float_satisfies_integer() {
        let tool = demographics_tool();
        let args = json!({"location": "Gambier", "year": 2010.0});
        assert!(validate_args(&tool, args.as_object().unwrap()).is_valid());
    }

    #[test]
    fn structured_error_wire_form_is_fixed() {
        let err = StructuredError {
            error: "missing required property \"location\"".into(),
            tool: "demographics_search".into(),
            path: "location".into(),
            check: CheckKind::RequiredPresent,
        };
        let line = err.to_json_string();
        assert!(line.starts_with("{\"error\":"));
        assert!(line.contains("\"check\":\"required-present\""));
        assert_eq!(StructuredError::from_content(&line).unwrap(), err);
    }

    #[test]
    fn enum_pattern_and_range_checks_fire_in_order() {
        let wire = json!([{
            "type": "function",
            "function": {
                "name": "lookup",
                "description": "",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "mode": {"type": "string", "enum": ["fast", "full"]},
                        "code": {"type": "string", "pattern": "^[A-Z]{2}$"},
                        "limit": {"type": "integer", "minimum": 1, "maximum": 10}
                    },
                    "required": []
                }
            }
        }]);
        let tool = parse_tool_set(&wire.to_string()).unwrap().remove(0);

        let bad_enum = json!({"mode": "slow", "code": "xx", "limit": 99});
        let ValidationOutcome::Invalid(err) = validate_args(&tool, bad_enum.as_object().unwrap())
        else {
            panic!()
        };
        assert_eq!(err.check, CheckKind::EnumMembership);

        let bad_pattern = json!({"mode": "fast", "code": "xx", "limit": 99});
        let ValidationOutcome::Invalid(err) =
            validate_args(&tool, bad_pattern.as_object().unwrap())
        else {
            panic!()
        };
        assert_eq!(err.check, CheckKind::RegexMatch);

        let bad_range = json!({"mode": "fast", "code": "AB", "limit": 99});
        let ValidationOutcome::Invalid(err) = validate_args(&tool, bad_range.as_object().unwrap())
        else {
            panic!()
        };
        assert_eq!(err.check, CheckKind::Range);
        assert_eq!(err.path, "limit");
    }

    #[test]
    fn output_schema_absent_means_every_observation_is_valid() {
        let tool = demographics_tool();
        assert!(validate_output(&tool, &json!("anything goes")).is_valid());
    }

    #[test]
    fn output_schema_checks_required_fields() {
        let wire = json!([{
            "type": "function",
            "function": {
                "name": "status_probe",
                "description": "",
                "parameters": {"type": "object", "properties": {}},
                "output_schema": {
                    "type": "object",
                    "properties": {"status": {"type": "string"}},
                    "required": ["status"]
                }
            }
        }]);
        let tool = parse_tool_set(&wire.to_string()).unwrap().remove(0);
        assert!(validate_output(&tool, &json!({"status": "success", "extra": 1})).is_valid());
        let ValidationOutcome::Invalid(err) = validate_output(&tool, &json!({"code": 200})) else {
            panic!()
        };
        assert_eq!(err.check, CheckKind::RequiredPresent);
        assert_eq!(err.path, "status");
    }

    #[test]
    fn check_derivation_is_complete() {
        let tool = demographics_tool();
        let required: Vec<_> = tool
            .checks()
            .iter()
            .filter(|c| c.kind == CheckKind::RequiredPresent)
            .collect();
        let types: Vec<_> = tool
            .checks()
            .iter()
            .filter(|c| c.kind == CheckKind::TypeMatch)
            .collect();
        assert_eq!(required.len(), 1);
        assert_eq!(types.len(), 2);
        assert_eq!(required[0].path, "location");
        assert_eq!(types[0].path, "location");
        assert_eq!(types[1].path, "year");
    }

    #[test]
    fn wire_round_trip_is_structural_identity() {
        let tools = parse_tool_set(DEMOGRAPHICS_TOOL_SET).unwrap();
        let emitted = serde_json::to_string(&tool_set_to_wire(&tools)).unwrap();
        let reparsed = parse_tool_set(&emitted).unwrap();
        assert_eq!(tools, reparsed);
    }

    #[test]
    fn wire_key_order_is_fixed() {
        let tools = parse_tool_set(DEMOGRAPHICS_TOOL_SET).unwrap();
        let emitted = serde_json::to_string(&tool_set_to_wire(&tools)).unwrap();
        let type_idx = emitted.find("\"type\":\"function\"").unwrap();
        let function_idx = emitted.find("\"function\":").unwrap();
        let name_idx = emitted.find("\"name\":").unwrap();
        let desc_idx = emitted.find("\"description\":").unwrap();
        let params_idx = emitted.find("\"parameters\":").unwrap();
        assert!(type_idx < function_idx);
        assert!(function_idx < name_idx);
        assert!(name_idx < desc_idx);
        assert!(desc_idx < params_idx);
    }

    #[test]
    fn unknown_keywords_are_preserved_and_ignored() {
        let wire = json!([{
            "type": "function",
            "function": {
                "name": "probe",
                "description": "",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "q": {"type": "string", "default": "x", "pattern_misplaced": true}
                    }
                }
            }
        }]);
        let tools = parse_tool_set(&wire.to_string()).unwrap();
        let (_, node) = &tools[0].input_schema.properties[0];
        assert!(node.extra.contains_key("default"));
        let args = json!({"q": "anything"});
        assert!(validate_args(&tools[0], args.as_object().unwrap()).is_valid());
        let reparsed = parse_tool_set(&serde_json::to_string(&tool_set_to_wire(&tools)).unwrap()).unwrap();
        assert_eq!(tools, reparsed);
    }

    #[test]
    fn depth_limit_is_enforced() {
        let mut schema = json!({"type": "string"});
        for _ in 0..9 {
            schema = json!({"type": "object", "properties": {"p": schema}});
        }
        assert_eq!(
            SchemaNode::from_value(&schema).unwrap_err(),
            SchemaError::TooDeep { max: MAX_SCHEMA_DEPTH }
        );
    }

    #[test]
    fn required_must_be_declared() {
        let schema = json!({"type": "object", "properties": {}, "required": ["ghost"]});
        assert!(matches!(
            SchemaNode::from_value(&schema).unwrap_err(),
            SchemaError::UnknownRequired { .. }
        ));
    }

    #[test]
    fn nested_array_element_validation() {
        let wire = json!([{
            "type": "function",
            "function": {
                "name": "batch",
                "description": "",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "entries": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "properties": {"id": {"type": "integer"}},
                                "required": ["id"]
                            }
                        }
                    }
                }
            }
        }]);
        let tool = parse_tool_set(&wire.to_string()).unwrap().remove(0);
        let good = json!({"entries": [{"id": 1}, {"id": 2}]});
        assert!(validate_args(&tool, good.as_object().unwrap()).is_valid());
        let bad = json!({"entries": [{"id": 1}, {}]});
        let ValidationOutcome::Invalid(err) = validate_args(&tool, bad.as_object().unwrap())
        else {
            panic!()
        };
        assert_eq!(err.check, CheckKind::RequiredPresent);
        assert_eq!(err.path, "entries[1].id");
    }

    #[test]
    fn validation_is_deterministic() {
        let tool = demographics_tool();
        let args = json!({"year": "x"});
        let a = validate_args(&tool, args.as_object().unwrap());
        let b = validate_args(&tool, args.as_object().unwrap());
        assert_eq!(a, b);
    }
}
