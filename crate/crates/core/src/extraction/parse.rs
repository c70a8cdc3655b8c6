//! Turning model responses into [`KgComponents`].
//!
//! Three response shapes are understood:
//! * structured `{nodes, relationships}` payloads (function calling),
//! * JSON arrays of [`ExtractionRecord`]s, possibly wrapped in prose or
//!   code fences,
//! * the `Persona: [...]` / `TRIGGERS: [[...]]` listing used by the main
//!   prompt's worked example, which models without function calling
//!   frequently imitate.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use super::{ExtractionRecord, KgComponents};
use crate::graph::{NodeKind, NodeRef, RelKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct ParseError {
    pub message: String,
    /// The unparsed model output, for logging.
    pub raw: String,
}

impl ParseError {
    fn new(message: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            raw: raw.into(),
        }
    }
}

/// A model response: assistant text plus function-call arguments when the
/// provider returned them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub tool_arguments: Option<Value>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            tool_arguments: None,
        }
    }
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn field<'a>(obj: &'a Value, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn extracted_kind(s: &str) -> Option<NodeKind> {
    s.parse::<NodeKind>()
        .ok()
        .filter(|k| *k != NodeKind::Userstory)
}

/// Reads a relationship endpoint either as flat `source`/`source_type`
/// fields or as a nested `{id, type}` object.
fn endpoint(obj: &Value, side: &str) -> Option<(String, Option<String>)> {
    let nested = obj.get(side).filter(|v| v.is_object());
    if let Some(n) = nested {
        let id = n.get("id").and_then(scalar_string)?;
        let kind = n.get("type").and_then(Value::as_str).map(str::to_string);
        return Some((id, kind));
    }
    let id = field(
        obj,
        &[side, &format!("{side}_id"), &format!("{side}_node_id")],
    )
    .and_then(scalar_string)?;
    let kind = field(obj, &[&format!("{side}_type"), &format!("{side}_node_type")])
        .and_then(Value::as_str)
        .map(str::to_string);
    Some((id, kind))
}

/// Parse a function-call payload with `nodes` (`id`, `type`) and
/// `relationships` (`source`, `source_type`, `target`, `target_type`,
/// `relation`). Nodes of unknown kinds and relationships of unknown kinds
/// are dropped and counted.
pub fn parse_structured_response(payload: &Value) -> Result<KgComponents, ParseError> {
    let nodes = payload.get("nodes");
    let rels = payload.get("relationships");
    if nodes.is_none() && rels.is_none() {
        return Err(ParseError::new(
            "structured response has neither `nodes` nor `relationships`",
            payload.to_string(),
        ));
    }
    let mut out = KgComponents::default();
    for node in nodes.and_then(Value::as_array).into_iter().flatten() {
        let id = node.get("id").and_then(scalar_string);
        let kind = node
            .get("type")
            .and_then(Value::as_str)
            .and_then(extracted_kind);
        match (id, kind) {
            (Some(id), Some(kind)) if !id.trim().is_empty() => {
                out.add_node(NodeRef::new(id, kind));
            }
            _ => out.dropped.nodes += 1,
        }
    }
    for rel in rels.and_then(Value::as_array).into_iter().flatten() {
        let kind = field(rel, &["relation", "type"])
            .and_then(Value::as_str)
            .and_then(|s| s.parse::<RelKind>().ok());
        let (Some(kind), Some((src, src_kind)), Some((tgt, tgt_kind))) =
            (kind, endpoint(rel, "source"), endpoint(rel, "target"))
        else {
            out.dropped.relationships += 1;
            continue;
        };
        let resolve = |declared: Option<String>, fallback: NodeKind| match declared {
            Some(k) => extracted_kind(&k),
            None => Some(fallback),
        };
        let (default_src, default_tgt) = kind.endpoint_kinds();
        match (
            resolve(src_kind, default_src),
            resolve(tgt_kind, default_tgt),
        ) {
            (Some(sk), Some(tk)) => out.add_relationship(
                NodeRef::new(src, sk),
                NodeRef::new(tgt, tk),
                kind,
            ),
            _ => out.dropped.relationships += 1,
        }
    }
    Ok(out)
}

fn strip_code_fences(s: &str) -> &str {
    let s = s.trim();
    let s = s
        .strip_prefix("```json")
        .or_else(|| s.strip_prefix("```JSON"))
        .or_else(|| s.strip_prefix("```"))
        .unwrap_or(s);
    s.strip_suffix("```").unwrap_or(s).trim()
}

/// The balanced `{...}` / `[...]` span opening at byte `start`, skipping
/// brackets inside double-quoted strings.
fn balanced_from(s: &str, start: usize) -> Option<&str> {
    let mut stack: Vec<char> = Vec::new();
    let mut in_str = false;
    let mut esc = false;
    for (i, ch) in s[start..].char_indices() {
        if in_str {
            match ch {
                _ if esc => esc = false,
                '\\' => esc = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' | '[' => stack.push(ch),
            '}' | ']' => {
                let open = stack.pop()?;
                if (open == '{') != (ch == '}') {
                    return None;
                }
                if stack.is_empty() {
                    return Some(&s[start..=start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// The first JSON object or array in `raw`, tolerating prose and fences.
pub fn find_json(raw: &str) -> Option<Value> {
    let body = strip_code_fences(raw);
    if let Ok(v) = serde_json::from_str::<Value>(body) {
        if v.is_object() || v.is_array() {
            return Some(v);
        }
    }
    body.char_indices()
        .filter(|(_, c)| matches!(c, '{' | '['))
        .filter_map(|(i, _)| balanced_from(body, i))
        .find_map(|span| serde_json::from_str::<Value>(span).ok())
}

fn record_from_value(v: &Value) -> Result<ExtractionRecord, String> {
    let get = |names: &[&str]| -> Result<String, String> {
        field(v, names)
            .and_then(scalar_string)
            .ok_or_else(|| format!("record is missing `{}`", names[0]))
    };
    Ok(ExtractionRecord {
        text: field(v, &["text"])
            .and_then(scalar_string)
            .unwrap_or_default(),
        head: get(&["head"])?,
        head_type: get(&["head_type", "head type"])?,
        relation: get(&["relation"])?,
        tail: get(&["tail"])?,
        tail_type: get(&["tail_type", "tail type"])?,
    })
}

/// Convert records into components. Records with kinds outside the
/// extraction vocabulary are dropped and counted.
pub fn records_to_components(records: &[ExtractionRecord]) -> KgComponents {
    let mut out = KgComponents::default();
    for r in records {
        let head = extracted_kind(&r.head_type);
        let tail = extracted_kind(&r.tail_type);
        let rel = r
            .relation
            .parse::<RelKind>()
            .ok()
            .filter(|k| !k.is_inferred());
        for (id, kind) in [(&r.head, head), (&r.tail, tail)] {
            match kind {
                Some(k) if !id.trim().is_empty() => out.add_node(NodeRef::new(id.clone(), k)),
                _ => out.dropped.nodes += 1,
            }
        }
        match (head, tail, rel) {
            (Some(h), Some(t), Some(k)) if !r.head.trim().is_empty() && !r.tail.trim().is_empty() => {
                out.add_relationship(NodeRef::new(r.head.clone(), h), NodeRef::new(r.tail.clone(), t), k)
            }
            _ => out.dropped.relationships += 1,
        }
    }
    out
}

/// Parse free-text output from a model without function calling.
pub fn parse_unstructured_response(raw: &str) -> Result<KgComponents, ParseError> {
    if let Some(value) = find_json(raw) {
        let items: Vec<&Value> = match &value {
            Value::Array(items) => items.iter().collect(),
            Value::Object(obj) if obj.contains_key("nodes") || obj.contains_key("relationships") => {
                return parse_structured_response(&value).map_err(|e| ParseError::new(e.message, raw));
            }
            obj @ Value::Object(_) => vec![obj],
            _ => unreachable!("find_json returns objects or arrays"),
        };
        let records = items
            .into_iter()
            .map(record_from_value)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|m| ParseError::new(m, raw))?;
        return Ok(records_to_components(&records));
    }
    if let Some(components) = parse_listing(raw) {
        return Ok(components);
    }
    Err(ParseError::new("no JSON or node listing found in response", raw))
}

/// Route a main-chain response to the structured or unstructured parser.
pub fn parse_main_response(resp: &ChatResponse) -> Result<KgComponents, ParseError> {
    if let Some(args) = &resp.tool_arguments {
        return parse_structured_response(args).map_err(|e| ParseError::new(e.message, args.to_string()));
    }
    parse_unstructured_response(&resp.content)
}

fn listing_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^\s*[-*]?\s*\**(persona|personas|actions?|entity|entities|benefit|triggers|targets)\**\s*:\s*(\[.*\])\s*$")
            .expect("valid regex")
    })
}

/// Parse the `Label: ['a', 'b']` listing format. Returns `None` when no
/// listing line is present.
fn parse_listing(raw: &str) -> Option<KgComponents> {
    let mut out = KgComponents::default();
    let mut found = false;
    let mut edges = Vec::new();
    for cap in listing_line().captures_iter(raw) {
        let label = cap[1].to_ascii_lowercase();
        let Some(list) = PyList::parse(&cap[2]) else {
            continue;
        };
        found = true;
        match label.as_str() {
            "triggers" | "targets" => {
                let kind = if label == "triggers" {
                    RelKind::Triggers
                } else {
                    RelKind::Targets
                };
                for item in list.items() {
                    match item.pair() {
                        Some((a, b)) => edges.push((a, b, kind)),
                        None => out.dropped.relationships += 1,
                    }
                }
            }
            other => {
                let kind = extracted_kind(other.trim_end_matches('s'))
                    .or_else(|| extracted_kind(other))
                    .expect("regex restricts labels");
                for item in list.items() {
                    match item.as_str() {
                        Some(s) if !s.trim().is_empty() => out.add_node(NodeRef::new(s, kind)),
                        _ => out.dropped.nodes += 1,
                    }
                }
            }
        }
    }
    for (a, b, kind) in edges {
        let (sk, tk) = kind.endpoint_kinds();
        out.add_relationship(NodeRef::new(a, sk), NodeRef::new(b, tk), kind);
    }
    found.then_some(out)
}

/// Minimal reader for Python list literals of strings and nested lists.
#[derive(Debug, Clone, PartialEq)]
enum PyList {
    Str(String),
    List(Vec<PyList>),
}

impl PyList {
    fn parse(s: &str) -> Option<PyList> {
        let chars: Vec<char> = s.chars().collect();
        let mut pos = 0;
        let v = Self::value(&chars, &mut pos)?;
        Self::skip_ws(&chars, &mut pos);
        (pos == chars.len()).then_some(v)
    }

    fn skip_ws(c: &[char], pos: &mut usize) {
        while *pos < c.len() && c[*pos].is_whitespace() {
            *pos += 1;
        }
    }

    fn value(c: &[char], pos: &mut usize) -> Option<PyList> {
        Self::skip_ws(c, pos);
        match *c.get(*pos)? {
            '[' => {
                *pos += 1;
                let mut items = Vec::new();
                loop {
                    Self::skip_ws(c, pos);
                    if *c.get(*pos)? == ']' {
                        *pos += 1;
                        return Some(PyList::List(items));
                    }
                    items.push(Self::value(c, pos)?);
                    Self::skip_ws(c, pos);
                    match *c.get(*pos)? {
                        ',' => *pos += 1,
                        ']' => {}
                        _ => return None,
                    }
                }
            }
            q @ ('\'' | '"') => {
                *pos += 1;
                let mut s = String::new();
                loop {
                    let ch = *c.get(*pos)?;
                    *pos += 1;
                    match ch {
                        '\\' => {
                            s.push(*c.get(*pos)?);
                            *pos += 1;
                        }
                        _ if ch == q => return Some(PyList::Str(s)),
                        _ => s.push(ch),
                    }
                }
            }
            _ => None,
        }
    }

    fn items(&self) -> &[PyList] {
        match self {
            PyList::List(items) => items,
            PyList::Str(_) => std::slice::from_ref(self),
        }
    }

    fn as_str(&self) -> Option<&str> {
        match self {
            PyList::Str(s) => Some(s),
            PyList::List(_) => None,
        }
    }

    fn pair(&self) -> Option<(String, String)> {
        match self {
            PyList::List(items) if items.len() == 2 => {
                Some((items[0].as_str()?.to_string(), items[1].as_str()?.to_string()))
            }
            _ => None,
        }
    }
}

fn node_literal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"Node\(\s*id\s*=\s*(?:'((?:[^'\\]|\\.)*)'|"((?:[^"\\]|\\.)*)")"#)
            .expect("valid regex")
    })
}

fn benefit_from_structured(v: &Value) -> Option<String> {
    if let Some(nodes) = v.get("nodes").and_then(Value::as_array) {
        let benefit = |n: &&Value| n.get("type").and_then(Value::as_str).and_then(extracted_kind) == Some(NodeKind::Benefit);
        return nodes
            .iter()
            .find(benefit)
            .or_else(|| (nodes.len() == 1).then(|| &nodes[0]))
            .and_then(|n| n.get("id"))
            .and_then(scalar_string);
    }
    match v {
        Value::Object(_) => v.get("id").or_else(|| v.get("benefit")).and_then(scalar_string),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn empty_answer(s: &str) -> bool {
    matches!(
        s.trim().to_ascii_lowercase().as_str(),
        "" | "''" | "\"\"" | "none" | "null" | "n/a"
    )
}

/// Read the benefit chain's answer. Node-like structures, node literals
/// (`Node(id='…', type='Benefit')`) and plain sentences are accepted;
/// blank or `''` answers mean the story has no benefit.
pub fn parse_benefit_response(resp: &ChatResponse) -> Option<String> {
    let found = if let Some(args) = &resp.tool_arguments {
        benefit_from_structured(args)
    } else {
        let body = strip_code_fences(&resp.content);
        if let Some(cap) = node_literal().captures(body) {
            cap.get(1).or_else(|| cap.get(2)).map(|m| m.as_str().replace("\\'", "'"))
        } else if let Some(v) = find_json(body) {
            benefit_from_structured(&v)
        } else {
            let line = body.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            let line = line.trim();
            let line = line
                .strip_prefix("answer:")
                .or_else(|| line.strip_prefix("Answer:"))
                .unwrap_or(line)
                .trim();
            Some(line.trim_matches(|c| c == '\'' || c == '"').to_string())
        }
    };
    found
        .map(|s| s.trim().to_string())
        .filter(|s| !empty_answer(s))
}
