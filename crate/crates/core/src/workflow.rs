//! The experiment workflow on disk: extract a baseline folder, evaluate an
//! extraction against it, and load extracted graphs into a database.
//!
//! ```text
//! <root>/pos_baseline/<backlog>.json
//! <root>/extracted-user-stories/<experiment>/{manifest.json, <backlog>.json}
//! <root>/evaluation/<experiment>/{report.csv, report.json}
//! <root>/graph/<experiment>/{graph.json, graph.cypher}
//! ```

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::corpus::{
    backlog_files, backlog_name, clean_story_text, parse_array, parse_story_list, parse_story_value,
    read_backlog, story_to_json, AnnotatedStory, CorpusError,
};
use crate::evaluation::compare::QUALIFIER_LIST_VERSION;
use crate::evaluation::{
    components_from_annotations, evaluate_backlog, EmbedError, Embedder, EvalOptions,
    EvaluationReport, ExtractionIndex,
};
use crate::extraction::prompt::PROMPT_CATALOG_VERSION;
use crate::extraction::{build_extractor, extract_all, ExtractError, ExtractorConfig, KgComponents};
use crate::graph::{normalize_id, GraphDocument, NodeKind, RelKind};
use crate::sink::{cypher_script, export_json, store, LoadSummary, SinkConfig, SinkError};
use crate::transform::build_graph_document;

pub const BASELINE_DIR: &str = "pos_baseline";
pub const EXTRACTION_DIR: &str = "extracted-user-stories";
pub const EVALUATION_DIR: &str = "evaluation";
pub const GRAPH_DIR: &str = "graph";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("directory {0} holds no backlog files")]
    EmptyDir(PathBuf),
    #[error("no backlog appears in both {baseline} and {extraction}")]
    NoCommonBacklogs { baseline: PathBuf, extraction: PathBuf },
    #[error("experiment name `{0}` must be non-empty and use only letters, digits, `-`, `_` and `.`")]
    InvalidExperiment(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl WorkflowError {
    /// 2 for missing or empty inputs, 3 for backend and sink problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkflowError::MissingDir(_)
            | WorkflowError::EmptyDir(_)
            | WorkflowError::NoCommonBacklogs { .. } => 2,
            WorkflowError::Extract(_) | WorkflowError::Embed(_) | WorkflowError::Sink(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkflowError + '_ {
    move |source| WorkflowError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), WorkflowError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn validate_experiment_name(name: &str) -> Result<(), WorkflowError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(WorkflowError::InvalidExperiment(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment_name: String,
    pub extractor: ExtractorConfig,
    pub input_dir: PathBuf,
    pub created_at: String,
    pub prompt_catalog_version: String,
}

/// Turn extracted components into an object shaped like a ground-truth
/// story. The TRIGGERS targets are the primary actions; entities targeted
/// from a primary action are primary entities.
pub fn story_from_components(pid: &str, text: &str, c: &KgComponents) -> AnnotatedStory {
    let triggers = c.pairs_of(RelKind::Triggers);
    let targets = c.pairs_of(RelKind::Targets);
    let primary_keys: HashSet<String> = triggers.iter().map(|(_, a)| normalize_id(a)).collect();
    let primary_entity_keys: HashSet<String> = targets
        .iter()
        .filter(|(a, _)| primary_keys.contains(&normalize_id(a)))
        .map(|(_, e)| normalize_id(e))
        .collect();
    let split = |kind: NodeKind, primary: &HashSet<String>| {
        c.ids_of(kind)
            .into_iter()
            .partition::<Vec<String>, _>(|id| primary.contains(&normalize_id(id)))
    };
    let (primary_actions, secondary_actions) = split(NodeKind::Action, &primary_keys);
    let (primary_entities, secondary_entities) = split(NodeKind::Entity, &primary_entity_keys);
    let benefits = c.ids_of(NodeKind::Benefit);
    if benefits.len() > 1 {
        log::debug!("{} benefit nodes for `{text}`, keeping the first", benefits.len());
    }
    AnnotatedStory {
        pid: pid.to_string(),
        text: text.to_string(),
        personas: c.ids_of(NodeKind::Persona),
        primary_actions,
        secondary_actions,
        primary_entities,
        secondary_entities,
        benefit: benefits.into_iter().next(),
        triggers,
        targets,
        contains: Vec::new(),
    }
}

/// One element of an extraction file.
pub fn extraction_object(pid: &str, text: &str, result: &Result<KgComponents, ExtractError>) -> Value {
    match result {
        Ok(c) => Value::Object(story_to_json(&story_from_components(pid, text, c))),
        Err(e) => {
            let mut m = Map::new();
            m.insert("PID".into(), json!(pid));
            m.insert("Text".into(), json!(text));
            m.insert("Error".into(), json!(e.to_string()));
            Value::Object(m)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedEntry {
    pub text: String,
    /// The story, or the error the extractor recorded.
    pub result: Result<AnnotatedStory, String>,
}

pub fn parse_extraction_file(raw: &[u8]) -> Result<Vec<ExtractedEntry>, CorpusError> {
    parse_array(raw)?
        .into_iter()
        .enumerate()
        .map(|(index, item)| {
            let text = item.get("Text").and_then(Value::as_str).unwrap_or_default().to_string();
            if let Some(err) = item.get("Error") {
                let msg = err.as_str().map_or_else(|| err.to_string(), str::to_string);
                return Ok(ExtractedEntry { text, result: Err(msg) });
            }
            let story = parse_story_value(index, item)?;
            Ok(ExtractedEntry { text, result: Ok(story) })
        })
        .collect()
}

/// Backlog JSON files of an extraction folder; the manifest is not one.
pub fn extraction_files(dir: &Path) -> Result<Vec<PathBuf>, WorkflowError> {
    if !dir.is_dir() {
        return Err(WorkflowError::MissingDir(dir.to_path_buf()));
    }
    Ok(backlog_files(dir)?
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE))
        .collect())
}

fn input_files(dir: &Path) -> Result<Vec<PathBuf>, WorkflowError> {
    if !dir.is_dir() {
        return Err(WorkflowError::MissingDir(dir.to_path_buf()));
    }
    let files = backlog_files(dir)?;
    if files.is_empty() {
        return Err(WorkflowError::EmptyDir(dir.to_path_buf()));
    }
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub root: PathBuf,
    pub experiment: String,
    pub input_dir: PathBuf,
    pub config: ExtractorConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub output_dir: PathBuf,
    pub backlogs: usize,
    pub stories: usize,
    pub failures: usize,
}

pub fn run_extract(opts: &ExtractOptions) -> Result<ExtractSummary, WorkflowError> {
    validate_experiment_name(&opts.experiment)?;
    let files = input_files(&opts.input_dir)?;
    let extractor = build_extractor(&opts.config)?;
    let out_dir = opts.root.join(EXTRACTION_DIR).join(&opts.experiment);

    let manifest = ExperimentManifest {
        experiment_name: opts.experiment.clone(),
        extractor: opts.config.clone(),
        input_dir: opts.input_dir.clone(),
        created_at: chrono::Utc::now().to_rfc3339(),
        prompt_catalog_version: PROMPT_CATALOG_VERSION.to_string(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_file(&out_dir.join(MANIFEST_FILE), &bytes)?;

    let mut summary = ExtractSummary {
        output_dir: out_dir.clone(),
        ..Default::default()
    };
    for path in files {
        let raw = std::fs::read(&path).map_err(io_err(&path))?;
        let stories = parse_story_list(&raw).map_err(|e| e.in_file(&path))?;
        let texts: Vec<String> = stories.iter().map(|s| clean_story_text(&s.text).to_string()).collect();
        let results = extract_all(extractor.as_ref(), &texts, opts.config.concurrency);
        let mut items = Vec::with_capacity(stories.len());
        for (story, result) in stories.iter().zip(&results) {
            if let Err(e) = result {
                log::warn!("{}: story {} failed: {e}", backlog_name(&path), story.pid);
                summary.failures += 1;
            }
            items.push(extraction_object(&story.pid, &story.text, result));
        }
        let mut bytes = serde_json::to_vec_pretty(&items).expect("extraction serializes");
        bytes.push(b'\n');
        write_file(&out_dir.join(format!("{}.json", backlog_name(&path))), &bytes)?;
        summary.backlogs += 1;
        summary.stories += stories.len();
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub root: PathBuf,
    pub experiment: String,
    pub baseline_dir: PathBuf,
    /// Defaults to `<root>/extracted-user-stories/<experiment>`.
    pub extraction_dir: Option<PathBuf>,
    pub options: EvalOptions,
}

impl EvaluateOptions {
    pub fn extraction_dir(&self) -> PathBuf {
        self.extraction_dir
            .clone()
            .unwrap_or_else(|| self.root.join(EXTRACTION_DIR).join(&self.experiment))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.root.join(EVALUATION_DIR).join(&self.experiment)
    }
}

/// Index an extraction file by story text. Failed entries stay in the
/// index so the evaluation can count them.
pub fn extraction_index(entries: &[ExtractedEntry]) -> ExtractionIndex {
    entries
        .iter()
        .map(|e| (e.text.clone(), e.result.as_ref().ok().map(components_from_annotations)))
        .collect()
}

/// Score every backlog present on both sides and write `report.csv` and
/// `report.json`.
pub fn run_evaluate(opts: &EvaluateOptions, embedder: &dyn Embedder) -> Result<EvaluationReport, WorkflowError> {
    validate_experiment_name(&opts.experiment)?;
    let baseline = input_files(&opts.baseline_dir)?;
    let extraction_dir = opts.extraction_dir();
    let extracted = extraction_files(&extraction_dir)?;
    if extracted.is_empty() {
        return Err(WorkflowError::EmptyDir(extraction_dir));
    }
    let gt_names: BTreeSet<String> = baseline.iter().map(|p| backlog_name(p)).collect();
    let ex_names: BTreeSet<String> = extracted.iter().map(|p| backlog_name(p)).collect();
    let mut warnings = Vec::new();
    for n in gt_names.difference(&ex_names) {
        warnings.push(format!("backlog {n} has no extraction and is not evaluated"));
    }
    for n in ex_names.difference(&gt_names) {
        warnings.push(format!("extraction {n} has no ground truth and is not evaluated"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let common: Vec<&PathBuf> = baseline
        .iter()
        .filter(|p| ex_names.contains(&backlog_name(p)))
        .collect();
    if common.is_empty() {
        return Err(WorkflowError::NoCommonBacklogs {
            baseline: opts.baseline_dir.clone(),
            extraction: extraction_dir,
        });
    }

    let mut backlogs = Vec::with_capacity(common.len());
    for gt_path in common {
        let gt = read_backlog(gt_path)?;
        let ex_path = extraction_dir.join(format!("{}.json", gt.name));
        let raw = std::fs::read(&ex_path).map_err(io_err(&ex_path))?;
        let entries = parse_extraction_file(&raw).map_err(|e| e.in_file(&ex_path))?;
        backlogs.push(evaluate_backlog(&gt, &extraction_index(&entries), &opts.options, embedder)?);
    }
    let report = EvaluationReport {
        experiment: opts.experiment.clone(),
        generated_at: chrono::Utc::now().to_rfc3339(),
        baseline_dir: opts.baseline_dir.display().to_string(),
        extraction_dir: extraction_dir.display().to_string(),
        qualifier_list_version: QUALIFIER_LIST_VERSION.to_string(),
        options: opts.options.clone(),
        backlogs,
        warnings,
    };
    let out = opts.output_dir();
    write_file(&out.join("report.csv"), &report.to_csv())?;
    write_file(&out.join("report.json"), &report.to_json())?;
    Ok(report)
}

/// Rebuild graph documents from the successful entries of every
/// extraction file in `dir`, in file order.
pub fn documents_from_extractions(dir: &Path) -> Result<Vec<GraphDocument>, WorkflowError> {
    let files = extraction_files(dir)?;
    if files.is_empty() {
        return Err(WorkflowError::EmptyDir(dir.to_path_buf()));
    }
    let mut docs = Vec::new();
    for path in files {
        let raw = std::fs::read(&path).map_err(io_err(&path))?;
        for entry in parse_extraction_file(&raw).map_err(|e| e.in_file(&path))? {
            if let Ok(story) = entry.result {
                docs.push(build_graph_document(&components_from_annotations(&story), &story.clean_text()));
            }
        }
    }
    Ok(docs)
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub root: PathBuf,
    pub experiment: String,
    /// Defaults to `<root>/extracted-user-stories/<experiment>`.
    pub extraction_dir: Option<PathBuf>,
    pub dry_run: bool,
    pub id_length_cap: usize,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub documents: usize,
    pub json_path: PathBuf,
    pub cypher_path: Option<PathBuf>,
    pub summary: Option<LoadSummary>,
}

/// Write `graph.json`, then either write `graph.cypher` (dry run) or store
/// the documents with the given sink. The sink is only consulted when not
/// a dry run.
pub fn run_load(
    opts: &LoadOptions,
    sink: impl FnOnce() -> Result<SinkConfig, SinkError>,
) -> Result<LoadOutcome, WorkflowError> {
    validate_experiment_name(&opts.experiment)?;
    let dir = opts
        .extraction_dir
        .clone()
        .unwrap_or_else(|| opts.root.join(EXTRACTION_DIR).join(&opts.experiment));
    let docs = documents_from_extractions(&dir)?;
    let out = opts.root.join(GRAPH_DIR).join(&opts.experiment);
    let json_path = out.join("graph.json");
    write_file(&json_path, &export_json(&docs))?;
    if opts.dry_run {
        let cypher_path = out.join("graph.cypher");
        write_file(&cypher_path, cypher_script(&docs, opts.id_length_cap)?.as_bytes())?;
        return Ok(LoadOutcome {
            documents: docs.len(),
            json_path,
            cypher_path: Some(cypher_path),
            summary: None,
        });
    }
    let mut config = sink()?;
    config.id_length_cap = opts.id_length_cap;
    let summary = store(config, &docs)?;
    Ok(LoadOutcome {
        documents: docs.len(),
        json_path,
        cypher_path: None,
        summary: Some(summary),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeRef;

    fn sync_components() -> KgComponents {
        let mut c = KgComponents::default();
        let user = NodeRef::new("user", NodeKind::Persona);
        let sync = NodeRef::new("sync", NodeKind::Action);
        let access = NodeRef::new("access", NodeKind::Action);
        c.add_relationship(user, sync.clone(), RelKind::Triggers);
        c.add_relationship(sync, NodeRef::new("data", NodeKind::Entity), RelKind::Targets);
        c.add_relationship(access, NodeRef::new("current information", NodeKind::Entity), RelKind::Targets);
        c.add_node(NodeRef::new("anywhere", NodeKind::Entity));
        c.add_node(NodeRef::new("I can access my information from anywhere", NodeKind::Benefit));
        c
    }

    #[test]
    fn primary_and_secondary_are_structural() {
        let s = story_from_components("#S#", "#S# As a user...", &sync_components());
        assert_eq!(s.personas, ["user"]);
        assert_eq!(s.primary_actions, ["sync"]);
        assert_eq!(s.secondary_actions, ["access"]);
        assert_eq!(s.primary_entities, ["data"]);
        assert_eq!(s.secondary_entities, ["current information", "anywhere"]);
        assert_eq!(s.triggers, [("user".to_string(), "sync".to_string())]);
        assert!(s.benefit.is_some());
    }

    #[test]
    fn extraction_object_round_trips() {
        let c = sync_components();
        let ok = extraction_object("#S#", "As a user", &Ok(c));
        let err = extraction_object("#S#", "As a user", &Err(ExtractError::EmptyStory));
        let raw = serde_json::to_vec(&vec![ok, err]).unwrap();
        let entries = parse_extraction_file(&raw).unwrap();
        assert!(entries[0].result.is_ok());
        assert_eq!(entries[1].result, Err("story text is empty".to_string()));
    }

    #[test]
    fn experiment_names() {
        assert!(validate_experiment_name("gpt-4o_mini.v1").is_ok());
        for bad in ["", "..", "a/b", "x y"] {
            assert!(validate_experiment_name(bad).is_err(), "{bad}");
        }
    }
}
