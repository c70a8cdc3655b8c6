//! Scoring extracted components against annotated ground truth.

pub mod bertscore;
pub mod compare;
pub mod metrics;
pub mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{clean_story_text, partition_valid, AnnotatedStory, Backlog};
use crate::extraction::{ComponentRel, KgComponents};
use crate::graph::{normalize_id, NodeKind, NodeRef, RelKind};
pub use bertscore::{bertscore, EmbedError, Embedder, HttpEmbedder, OneHotEmbedder};
pub use compare::{compare_element, CompareOptions, Comparator, ComparisonMode, Prediction};
pub use metrics::{f_measure, match_sets, precision, recall, Counts, MetricRow};
pub use report::{EvaluationReport, ReportRow};

/// Column order of the printed result tables.
pub const KIND_ORDER: [NodeKind; 4] = [
    NodeKind::Persona,
    NodeKind::Entity,
    NodeKind::Action,
    NodeKind::Benefit,
];

pub const SCORED_RELATIONS: [RelKind; 2] = [RelKind::Triggers, RelKind::Targets];

/// Benefits have no part-of-speech annotation, so only the two lexical
/// modes apply to them.
pub fn mode_applies(kind: NodeKind, mode: ComparisonMode) -> bool {
    !(kind == NodeKind::Benefit && mode == ComparisonMode::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub modes: Vec<ComparisonMode>,
    #[serde(default)]
    pub compare: CompareOptions,
    pub bertscore: bool,
    pub relations: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            modes: ComparisonMode::ALL.to_vec(),
            compare: CompareOptions::default(),
            bertscore: true,
            relations: true,
        }
    }
}

/// Ground-truth strings of one kind.
pub fn gt_items(story: &AnnotatedStory, kind: NodeKind) -> Vec<String> {
    match kind {
        NodeKind::Persona => story.personas.clone(),
        NodeKind::Action => story.actions().cloned().collect(),
        NodeKind::Entity => story.entities().cloned().collect(),
        NodeKind::Benefit => story.benefit.iter().cloned().collect(),
        NodeKind::Userstory => vec![story.clean_text()],
    }
}

pub fn gt_pairs(story: &AnnotatedStory, kind: RelKind) -> Vec<(String, String)> {
    match kind {
        RelKind::Triggers => story.triggers.clone(),
        RelKind::Targets => story.targets.clone(),
        _ => Vec::new(),
    }
}

/// Components that reproduce a story's annotations exactly. Nodes are kept
/// with their duplicates and relationship pairs are kept verbatim, even when
/// an endpoint is not annotated as a node, so scoring the result against
/// the story is an identity.
pub fn components_from_annotations(story: &AnnotatedStory) -> KgComponents {
    let mut c = KgComponents::default();
    for kind in [NodeKind::Persona, NodeKind::Action, NodeKind::Entity, NodeKind::Benefit] {
        c.nodes
            .extend(gt_items(story, kind).into_iter().map(|id| NodeRef::new(id, kind)));
    }
    for kind in SCORED_RELATIONS {
        let (sk, tk) = kind.endpoint_kinds();
        c.relationships
            .extend(gt_pairs(story, kind).into_iter().map(|(s, t)| ComponentRel {
                source: NodeRef::new(s, sk),
                target: NodeRef::new(t, tk),
                kind,
            }));
    }
    c
}

/// Per-story counts and BERTScore rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoryEvaluation {
    pub nodes: BTreeMap<(NodeKind, ComparisonMode), Counts>,
    /// `None` when both sides are empty.
    pub bertscore: BTreeMap<NodeKind, Option<MetricRow>>,
    pub relations: BTreeMap<(RelKind, ComparisonMode), Counts>,
}

impl StoryEvaluation {
    pub fn metric(&self, kind: NodeKind, mode: ComparisonMode) -> Option<MetricRow> {
        self.nodes.get(&(kind, mode)).and_then(Counts::metrics)
    }
}

pub fn evaluate_relations(
    gt: &AnnotatedStory,
    extracted: &KgComponents,
    mode: ComparisonMode,
    comparator: &Comparator,
) -> BTreeMap<RelKind, Counts> {
    SCORED_RELATIONS
        .into_iter()
        .map(|kind| {
            let counts = metrics::greedy_match(&gt_pairs(gt, kind), &extracted.pairs_of(kind), |g, p| {
                comparator.matches(&g.0, &p.0, mode) && comparator.matches(&g.1, &p.1, mode)
            });
            (kind, counts)
        })
        .collect()
}

pub fn evaluate_story(
    gt: &AnnotatedStory,
    extracted: &KgComponents,
    options: &EvalOptions,
    embedder: &dyn Embedder,
) -> Result<StoryEvaluation, EmbedError> {
    let comparator = Comparator::new(options.compare);
    let mut out = StoryEvaluation::default();
    for kind in KIND_ORDER {
        let gt_list = gt_items(gt, kind);
        let pred = extracted.ids_of(kind);
        for &mode in &options.modes {
            if mode_applies(kind, mode) {
                let c = metrics::match_sets_with(&comparator, &gt_list, &pred, mode);
                out.nodes.insert((kind, mode), c);
            }
        }
        if options.bertscore {
            let (g, p) = (bertscore::tokenize(&gt_list), bertscore::tokenize(&pred));
            let row = match (g.is_empty(), p.is_empty()) {
                (true, true) => None,
                (true, false) | (false, true) => Some(MetricRow::ZERO),
                (false, false) => Some(bertscore(&g, &p, embedder)?),
            };
            out.bertscore.insert(kind, row);
        }
    }
    if options.relations {
        for &mode in &options.modes {
            for (kind, c) in evaluate_relations(gt, extracted, mode, &comparator) {
                out.relations.insert((kind, mode), c);
            }
        }
    }
    Ok(out)
}

/// What the extraction side holds for one story.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup<'a> {
    Found(&'a KgComponents),
    /// The extractor recorded an error for this story.
    Failed,
    Missing,
}

/// Extraction results keyed by cleaned, normalized story text. Repeated
/// texts are consumed in order.
#[derive(Debug, Clone, Default)]
pub struct ExtractionIndex {
    by_text: HashMap<String, Vec<Option<KgComponents>>>,
}

impl ExtractionIndex {
    pub fn key(text: &str) -> String {
        normalize_id(clean_story_text(text))
    }

    pub fn insert(&mut self, text: &str, components: Option<KgComponents>) {
        self.by_text.entry(Self::key(text)).or_default().push(components);
    }

    pub fn get(&self, text: &str, occurrence: usize) -> Lookup<'_> {
        match self.by_text.get(&Self::key(text)).and_then(|v| v.get(occurrence)) {
            Some(Some(c)) => Lookup::Found(c),
            Some(None) => Lookup::Failed,
            None => Lookup::Missing,
        }
    }

    pub fn len(&self) -> usize {
        self.by_text.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromIterator<(String, Option<KgComponents>)> for ExtractionIndex {
    fn from_iter<I: IntoIterator<Item = (String, Option<KgComponents>)>>(iter: I) -> Self {
        let mut idx = Self::default();
        for (text, c) in iter {
            idx.insert(&text, c);
        }
        idx
    }
}

/// Aggregated scores for one backlog.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacklogEvaluation {
    pub backlog: String,
    pub stories_total: usize,
    pub stories_evaluated: usize,
    pub stories_invalid: usize,
    pub stories_missing: usize,
    pub stories_failed: usize,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

impl BacklogEvaluation {
    pub fn row(&self, kind: &str, mode: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.kind == kind && r.mode == mode)
    }
}

struct Accumulator {
    kind: String,
    mode: String,
    rows: Vec<MetricRow>,
    undefined: usize,
}

impl Accumulator {
    fn new(kind: &str, mode: &str) -> Self {
        Self {
            kind: kind.to_string(),
            mode: mode.to_string(),
            rows: Vec::new(),
            undefined: 0,
        }
    }

    fn push(&mut self, row: Option<MetricRow>) {
        match row {
            Some(r) => self.rows.push(r),
            None => self.undefined += 1,
        }
    }
}

/// Score every valid story of `gt` and average the defined per-story
/// metrics with equal weight.
pub fn evaluate_backlog(
    gt: &Backlog,
    extractions: &ExtractionIndex,
    options: &EvalOptions,
    embedder: &dyn Embedder,
) -> Result<BacklogEvaluation, EmbedError> {
    let (valid, invalid) = partition_valid(gt);
    let mut notes = Vec::new();
    for (index, problems) in &invalid {
        let msg = format!("story {index} skipped: {}", problems.join("; "));
        log::warn!("{}: {msg}", gt.name);
        notes.push(msg);
    }

    let mut node_acc: Vec<((NodeKind, ComparisonMode), Accumulator)> = Vec::new();
    for &mode in &options.modes {
        for kind in KIND_ORDER {
            if mode_applies(kind, mode) {
                node_acc.push(((kind, mode), Accumulator::new(kind.as_str(), mode.as_str())));
            }
        }
    }
    let mut bert_acc: Vec<(NodeKind, Accumulator)> = if options.bertscore {
        KIND_ORDER
            .into_iter()
            .map(|k| (k, Accumulator::new(k.as_str(), "bertscore")))
            .collect()
    } else {
        Vec::new()
    };
    let mut rel_acc: Vec<((RelKind, ComparisonMode), Accumulator)> = Vec::new();
    if options.relations {
        for &mode in &options.modes {
            for kind in SCORED_RELATIONS {
                rel_acc.push(((kind, mode), Accumulator::new(kind.as_str(), mode.as_str())));
            }
        }
    }

    let mut seen: HashMap<String, usize> = HashMap::new();
    let (mut evaluated, mut missing, mut failed) = (0, 0, 0);
    for story in &valid {
        let occ = seen.entry(ExtractionIndex::key(&story.text)).or_insert(0);
        let lookup = extractions.get(&story.text, *occ);
        *occ += 1;
        let extracted = match lookup {
            Lookup::Found(c) => c,
            Lookup::Failed => {
                failed += 1;
                continue;
            }
            Lookup::Missing => {
                missing += 1;
                continue;
            }
        };
        evaluated += 1;
        let ev = evaluate_story(story, extracted, options, embedder)?;
        for ((kind, mode), acc) in &mut node_acc {
            acc.push(ev.metric(*kind, *mode));
        }
        for (kind, acc) in &mut bert_acc {
            acc.push(ev.bertscore.get(kind).copied().flatten());
        }
        for (key, acc) in &mut rel_acc {
            acc.push(ev.relations.get(key).and_then(Counts::metrics));
        }
    }
    if missing > 0 {
        notes.push(format!("{missing} stories have no extraction"));
    }
    if failed > 0 {
        notes.push(format!("{failed} stories failed during extraction"));
    }

    let mut rows = Vec::new();
    let accs = node_acc
        .into_iter()
        .map(|(_, a)| a)
        .chain(bert_acc.into_iter().map(|(_, a)| a))
        .chain(rel_acc.into_iter().map(|(_, a)| a));
    for acc in accs {
        match metrics::mean_row(&acc.rows) {
            Some(mean) => rows.push(ReportRow {
                backlog: gt.name.clone(),
                kind: acc.kind,
                mode: acc.mode,
                precision: mean.precision,
                recall: mean.recall,
                f_measure: mean.f_measure,
                stories_counted: acc.rows.len(),
                stories_undefined: acc.undefined,
            }),
            None if evaluated > 0 => notes.push(format!(
                "{} {}: undefined for all {} evaluated stories, row omitted",
                acc.kind, acc.mode, evaluated
            )),
            None => {}
        }
    }

    Ok(BacklogEvaluation {
        backlog: gt.name.clone(),
        stories_total: gt.stories.len(),
        stories_evaluated: evaluated,
        stories_invalid: invalid.len(),
        stories_missing: missing,
        stories_failed: failed,
        rows,
        notes,
    })
}
