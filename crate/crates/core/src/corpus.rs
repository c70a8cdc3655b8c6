//! Annotated backlog files: one JSON array of story objects per backlog.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("story {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("empty backlog")]
    EmptyBacklog,
    #[error("backlog file must hold a JSON array")]
    NotAnArray,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("duplicate backlog name `{0}`")]
    DuplicateBacklog(String),
}

impl CorpusError {
    pub fn in_file(self, path: &Path) -> Self {
        CorpusError::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

/// One ground-truth backlog item.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedStory {
    pub pid: String,
    pub text: String,
    pub personas: Vec<String>,
    pub primary_actions: Vec<String>,
    pub secondary_actions: Vec<String>,
    pub primary_entities: Vec<String>,
    pub secondary_entities: Vec<String>,
    pub benefit: Option<String>,
    pub triggers: Vec<(String, String)>,
    pub targets: Vec<(String, String)>,
    /// Kept verbatim; never interpreted.
    pub contains: Vec<Value>,
}

impl AnnotatedStory {
    pub fn actions(&self) -> impl Iterator<Item = &String> {
        self.primary_actions.iter().chain(&self.secondary_actions)
    }

    pub fn entities(&self) -> impl Iterator<Item = &String> {
        self.primary_entities.iter().chain(&self.secondary_entities)
    }

    pub fn clean_text(&self) -> String {
        clean_story_text(&self.text).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backlog {
    pub name: String,
    pub stories: Vec<AnnotatedStory>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ActionGroup {
    #[serde(rename = "Primary Action", default)]
    primary: Vec<String>,
    #[serde(rename = "Secondary Action", default)]
    secondary: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct EntityGroup {
    #[serde(rename = "Primary Entity", default)]
    primary: Vec<String>,
    #[serde(rename = "Secondary Entity", default)]
    secondary: Vec<String>,
}

/// On-disk shape of a story, key names as in the annotated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoryRecord {
    #[serde(rename = "PID")]
    pid: String,
    #[serde(rename = "Text")]
    text: String,
    #[serde(rename = "Persona")]
    persona: Vec<String>,
    #[serde(rename = "Action")]
    action: ActionGroup,
    #[serde(rename = "Entity")]
    entity: EntityGroup,
    #[serde(rename = "Benefit", default)]
    benefit: Option<String>,
    #[serde(rename = "Triggers")]
    triggers: Vec<(String, String)>,
    #[serde(rename = "Targets")]
    targets: Vec<(String, String)>,
    #[serde(rename = "Contains", default)]
    contains: Vec<Value>,
}

const REQUIRED_KEYS: [&str; 7] = [
    "PID", "Text", "Persona", "Action", "Entity", "Triggers", "Targets",
];

impl From<StoryRecord> for AnnotatedStory {
    fn from(r: StoryRecord) -> Self {
        AnnotatedStory {
            pid: r.pid,
            text: r.text,
            personas: r.persona,
            primary_actions: r.action.primary,
            secondary_actions: r.action.secondary,
            primary_entities: r.entity.primary,
            secondary_entities: r.entity.secondary,
            benefit: r.benefit.filter(|b| !b.trim().is_empty()),
            triggers: r.triggers,
            targets: r.targets,
            contains: r.contains,
        }
    }
}

impl From<&AnnotatedStory> for StoryRecord {
    fn from(s: &AnnotatedStory) -> Self {
        StoryRecord {
            pid: s.pid.clone(),
            text: s.text.clone(),
            persona: s.personas.clone(),
            action: ActionGroup {
                primary: s.primary_actions.clone(),
                secondary: s.secondary_actions.clone(),
            },
            entity: EntityGroup {
                primary: s.primary_entities.clone(),
                secondary: s.secondary_entities.clone(),
            },
            benefit: Some(s.benefit.clone().unwrap_or_default()),
            triggers: s.triggers.clone(),
            targets: s.targets.clone(),
            contains: s.contains.clone(),
        }
    }
}

/// Serialize one story to the dataset's object shape. An absent benefit is
/// written as `""`.
pub fn story_to_json(story: &AnnotatedStory) -> Map<String, Value> {
    match serde_json::to_value(StoryRecord::from(story)) {
        Ok(Value::Object(map)) => map,
        _ => unreachable!("StoryRecord always serializes to an object"),
    }
}

pub fn serialize_backlog(backlog: &Backlog) -> Vec<u8> {
    let items: Vec<Value> = backlog
        .stories
        .iter()
        .map(|s| Value::Object(story_to_json(s)))
        .collect();
    let mut out = serde_json::to_vec_pretty(&items).expect("JSON values always serialize");
    out.push(b'\n');
    out
}

fn json_error(raw: &[u8], err: &serde_json::Error) -> CorpusError {
    CorpusError::Json {
        offset: byte_offset(raw, err.line(), err.column()),
        message: err.to_string(),
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = raw
        .split_inclusive(|b| *b == b'\n')
        .take(line.saturating_sub(1))
        .map(<[u8]>::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(raw.len())
}

pub fn parse_array(raw: &[u8]) -> Result<Vec<Value>, CorpusError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| json_error(raw, &e))?;
    let Value::Array(items) = value else {
        return Err(CorpusError::NotAnArray);
    };
    if items.is_empty() {
        return Err(CorpusError::EmptyBacklog);
    }
    Ok(items)
}

/// Parse an annotated backlog. `name` becomes [`Backlog::name`].
pub fn parse_backlog_file(name: &str, raw: &[u8]) -> Result<Backlog, CorpusError> {
    let items = parse_array(raw)?;
    let mut stories = Vec::with_capacity(items.len());
    for (index, item) in items.into_iter().enumerate() {
        stories.push(parse_story_value(index, item)?);
    }
    Ok(Backlog {
        name: name.to_string(),
        stories,
    })
}

/// Parse one story object; `index` is only used in error messages.
pub fn parse_story_value(index: usize, item: Value) -> Result<AnnotatedStory, CorpusError> {
    let Value::Object(obj) = &item else {
        return Err(CorpusError::Schema {
            index,
            message: "expected an object".into(),
        });
    };
    if let Some(key) = REQUIRED_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(CorpusError::Schema {
            index,
            message: format!("missing key `{key}`"),
        });
    }
    let record: StoryRecord =
        serde_json::from_value(normalize_benefit(item)).map_err(|e| CorpusError::Schema {
            index,
            message: e.to_string(),
        })?;
    Ok(AnnotatedStory::from(record))
}

// `"Benefit": null` and a missing key both mean no benefit.
fn normalize_benefit(mut item: Value) -> Value {
    if let Some(obj) = item.as_object_mut() {
        if obj.get("Benefit").is_some_and(Value::is_null) {
            obj.remove("Benefit");
        }
    }
    item
}

/// A story to be extracted. Only `Text` is required.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawStory {
    pub pid: String,
    pub text: String,
}

/// Parse a backlog file for extraction. Annotation keys are ignored, so
/// both annotated files and plain `{PID, Text}` lists are accepted.
pub fn parse_story_list(raw: &[u8]) -> Result<Vec<RawStory>, CorpusError> {
    parse_array(raw)?
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let text = item
                .get("Text")
                .and_then(Value::as_str)
                .ok_or_else(|| CorpusError::Schema {
                    index,
                    message: "missing key `Text`".into(),
                })?;
            let pid = item.get("PID").and_then(Value::as_str).unwrap_or_default();
            Ok(RawStory {
                pid: pid.to_string(),
                text: text.to_string(),
            })
        })
        .collect()
}

fn tag_pattern() -> &'static Regex {
    static TAG: OnceLock<Regex> = OnceLock::new();
    TAG.get_or_init(|| Regex::new(r"^#[^#\s]+#\s*").expect("valid regex"))
}

/// Remove one leading `#TAG#` token and the whitespace after it.
pub fn clean_story_text(text: &str) -> &str {
    match tag_pattern().find(text) {
        Some(m) => &text[m.end()..],
        None => text,
    }
}

/// Referential checks on one story. Empty means the story is usable as
/// ground truth.
pub fn validate_story(story: &AnnotatedStory) -> Vec<String> {
    let mut out = Vec::new();
    if story.text.trim().is_empty() {
        out.push("Text is empty".to_string());
    }
    let personas: HashSet<&str> = story.personas.iter().map(String::as_str).collect();
    let primary: HashSet<&str> = story.primary_actions.iter().map(String::as_str).collect();
    let actions: HashSet<&str> = story.actions().map(String::as_str).collect();
    for (persona, action) in &story.triggers {
        if !personas.contains(persona.as_str()) {
            out.push(format!("Triggers persona `{persona}` is not in Persona"));
        }
        if !primary.contains(action.as_str()) {
            out.push(format!("Triggers action `{action}` is not a Primary Action"));
        }
    }
    for (action, _) in &story.targets {
        if !actions.contains(action.as_str()) {
            out.push(format!("Targets action `{action}` is not in Action"));
        }
    }
    out
}

/// Stories that pass [`validate_story`], plus the rejected ones with their
/// violations, keyed by position.
pub fn partition_valid(backlog: &Backlog) -> (Vec<&AnnotatedStory>, Vec<(usize, Vec<String>)>) {
    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for (i, story) in backlog.stories.iter().enumerate() {
        let v = validate_story(story);
        if v.is_empty() {
            valid.push(story);
        } else {
            rejected.push((i, v));
        }
    }
    (valid, rejected)
}

/// JSON files directly inside `dir`, sorted by file name.
pub fn backlog_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn backlog_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn read_backlog(path: &Path) -> Result<Backlog, CorpusError> {
    let raw = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_backlog_file(&backlog_name(path), &raw).map_err(|e| e.in_file(path))
}

/// Load every backlog in a ground-truth directory such as `pos_baseline/`.
pub fn load_corpus(dir: &Path) -> Result<Vec<Backlog>, CorpusError> {
    let mut names = HashSet::new();
    let mut out = Vec::new();
    for path in backlog_files(dir)? {
        let backlog = read_backlog(&path)?;
        if !names.insert(backlog.name.clone()) {
            return Err(CorpusError::DuplicateBacklog(backlog.name));
        }
        out.push(backlog);
    }
    Ok(out)
}
