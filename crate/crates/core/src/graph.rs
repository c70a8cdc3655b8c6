//! Ontology vocabulary for user-story knowledge graphs and the per-story
//! [`GraphDocument`] that the transformer produces and the sink persists.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five node labels of the backlog ontology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Userstory,
    Persona,
    Action,
    Entity,
    Benefit,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Userstory,
        NodeKind::Persona,
        NodeKind::Action,
        NodeKind::Entity,
        NodeKind::Benefit,
    ];

    /// Kinds a language model is asked to extract. `Userstory` is added by the transformer.
    pub const EXTRACTED: [NodeKind; 4] = [
        NodeKind::Persona,
        NodeKind::Action,
        NodeKind::Entity,
        NodeKind::Benefit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Userstory => "Userstory",
            NodeKind::Persona => "Persona",
            NodeKind::Action => "Action",
            NodeKind::Entity => "Entity",
            NodeKind::Benefit => "Benefit",
        }
    }

    /// The `HAS_*` relationship linking a story node to a node of this kind.
    pub fn has_relation(self) -> Option<RelKind> {
        match self {
            NodeKind::Userstory => None,
            NodeKind::Persona => Some(RelKind::HasPersona),
            NodeKind::Action => Some(RelKind::HasAction),
            NodeKind::Entity => Some(RelKind::HasEntity),
            NodeKind::Benefit => Some(RelKind::HasBenefit),
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown kind `{0}`")]
pub struct UnknownKind(pub String);

impl FromStr for NodeKind {
    type Err = UnknownKind;

    /// Accepts the canonical label in any letter case, plus the plural
    /// forms models tend to produce (`Actions`, `Entities`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "userstory" | "user story" | "user_story" => Ok(NodeKind::Userstory),
            "persona" => Ok(NodeKind::Persona),
            "action" | "actions" => Ok(NodeKind::Action),
            "entity" | "entities" => Ok(NodeKind::Entity),
            "benefit" => Ok(NodeKind::Benefit),
            _ => Err(UnknownKind(s.to_string())),
        }
    }
}

/// The six relationship types of the ontology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelKind {
    #[serde(rename = "TRIGGERS")]
    Triggers,
    #[serde(rename = "TARGETS")]
    Targets,
    #[serde(rename = "HAS_PERSONA")]
    HasPersona,
    #[serde(rename = "HAS_ACTION")]
    HasAction,
    #[serde(rename = "HAS_ENTITY")]
    HasEntity,
    #[serde(rename = "HAS_BENEFIT")]
    HasBenefit,
}

impl RelKind {
    pub const ALL: [RelKind; 6] = [
        RelKind::Triggers,
        RelKind::Targets,
        RelKind::HasPersona,
        RelKind::HasAction,
        RelKind::HasEntity,
        RelKind::HasBenefit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelKind::Triggers => "TRIGGERS",
            RelKind::Targets => "TARGETS",
            RelKind::HasPersona => "HAS_PERSONA",
            RelKind::HasAction => "HAS_ACTION",
            RelKind::HasEntity => "HAS_ENTITY",
            RelKind::HasBenefit => "HAS_BENEFIT",
        }
    }

    /// Required (source, target) node kinds.
    pub fn endpoint_kinds(self) -> (NodeKind, NodeKind) {
        match self {
            RelKind::Triggers => (NodeKind::Persona, NodeKind::Action),
            RelKind::Targets => (NodeKind::Action, NodeKind::Entity),
            RelKind::HasPersona => (NodeKind::Userstory, NodeKind::Persona),
            RelKind::HasAction => (NodeKind::Userstory, NodeKind::Action),
            RelKind::HasEntity => (NodeKind::Userstory, NodeKind::Entity),
            RelKind::HasBenefit => (NodeKind::Userstory, NodeKind::Benefit),
        }
    }

    pub fn is_inferred(self) -> bool {
        !matches!(self, RelKind::Triggers | RelKind::Targets)
    }

    pub fn accepts(self, source: NodeKind, target: NodeKind) -> bool {
        self.endpoint_kinds() == (source, target)
    }
}

impl fmt::Display for RelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace([' ', '-'], "_");
        RelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == upper)
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

/// Trim, collapse internal whitespace runs and lowercase. Used as the
/// node dedup key and as the comparison normal form during evaluation.
pub fn normalize_id(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: NodeKind,
    #[serde(default)]
    pub properties: BTreeMap<String, String>,
}

impl GraphNode {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Self {
            id: id.into(),
            kind,
            properties: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> (NodeKind, String) {
        (self.kind, normalize_id(&self.id))
    }

    pub fn as_ref(&self) -> NodeRef {
        NodeRef {
            id: self.id.clone(),
            kind: self.kind,
        }
    }
}

/// Identifies a node inside a document by display id and kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: NodeKind,
}

impl NodeRef {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Self {
            id: id.into(),
            kind,
        }
    }

    pub fn key(&self) -> (NodeKind, String) {
        (self.kind, normalize_id(&self.id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRelationship {
    pub source: NodeRef,
    pub target: NodeRef,
    #[serde(rename = "type")]
    pub kind: RelKind,
    #[serde(default)]
    pub properties: BTreeMap<String, String>,
}

impl GraphRelationship {
    pub fn new(source: NodeRef, target: NodeRef, kind: RelKind) -> Self {
        Self {
            source,
            target,
            kind,
            properties: BTreeMap::new(),
        }
    }
}

/// The knowledge graph of a single user story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<GraphNode>,
    pub relationships: Vec<GraphRelationship>,
    /// The story text the graph was extracted from.
    #[serde(rename = "source")]
    pub source_text: String,
}

impl GraphDocument {
    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    pub fn relationships_of(&self, kind: RelKind) -> impl Iterator<Item = &GraphRelationship> {
        self.relationships.iter().filter(move |r| r.kind == kind)
    }

    pub fn count_nodes(&self, kind: NodeKind) -> usize {
        self.nodes_of(kind).count()
    }

    pub fn count_relationships(&self, kind: RelKind) -> usize {
        self.relationships_of(kind).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// The ontology rule a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Cardinality(NodeKind),
    TriggersCardinality,
    EndpointKind(RelKind),
    DanglingEndpoint,
    DuplicateNode,
    NodeId,
    StoryLink,
    SourceText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub aspect: Aspect,
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    fn error(aspect: Aspect, message: String) -> Self {
        Self {
            aspect,
            severity: Severity::Error,
            message,
        }
    }

    fn warning(aspect: Aspect, message: String) -> Self {
        Self {
            aspect,
            severity: Severity::Warning,
            message,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.severity {
            Severity::Error => f.write_str(&self.message),
            Severity::Warning => write!(f, "{} (warning)", self.message),
        }
    }
}

fn is_integer_rendering(id: &str) -> bool {
    let t = id.trim();
    let digits = t.strip_prefix('-').unwrap_or(t);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Check a document against the backlog ontology. An empty result means
/// the document conforms. More than one persona is reported with
/// [`Severity::Warning`] since annotated backlogs sometimes list compound
/// personas.
pub fn validate_ontology(doc: &GraphDocument) -> Vec<Violation> {
    let mut out = Vec::new();

    let count = |kind| doc.count_nodes(kind);
    let stories = count(NodeKind::Userstory);
    if stories != 1 {
        out.push(Violation::error(
            Aspect::Cardinality(NodeKind::Userstory),
            format!("userstory cardinality {stories} ≠ 1"),
        ));
    }
    match count(NodeKind::Persona) {
        1 => {}
        0 => out.push(Violation::error(
            Aspect::Cardinality(NodeKind::Persona),
            "persona cardinality 0 ≠ 1".to_string(),
        )),
        n => out.push(Violation::warning(
            Aspect::Cardinality(NodeKind::Persona),
            format!("persona cardinality {n} ≠ 1"),
        )),
    }
    for (kind, label) in [(NodeKind::Action, "action"), (NodeKind::Entity, "entity")] {
        if count(kind) == 0 {
            out.push(Violation::error(
                Aspect::Cardinality(kind),
                format!("{label} cardinality 0 < 1"),
            ));
        }
    }
    let benefits = count(NodeKind::Benefit);
    if benefits > 1 {
        out.push(Violation::error(
            Aspect::Cardinality(NodeKind::Benefit),
            format!("benefit cardinality {benefits} > 1"),
        ));
    }

    let mut seen: HashMap<(NodeKind, String), usize> = HashMap::new();
    for node in &doc.nodes {
        if node.id.trim().is_empty() {
            out.push(Violation::error(
                Aspect::NodeId,
                format!("{} node has an empty id", node.kind),
            ));
        } else if is_integer_rendering(&node.id) {
            out.push(Violation::error(
                Aspect::NodeId,
                format!("{} node id `{}` is a bare integer", node.kind, node.id),
            ));
        }
        *seen.entry(node.key()).or_default() += 1;
    }
    let mut dups: Vec<_> = seen.iter().filter(|(_, n)| **n > 1).collect();
    dups.sort();
    for ((kind, id), n) in dups {
        out.push(Violation::error(
            Aspect::DuplicateNode,
            format!("{kind} node `{id}` appears {n} times"),
        ));
    }

    if let Some(story) = doc.nodes_of(NodeKind::Userstory).next() {
        if story.id != doc.source_text {
            out.push(Violation::error(
                Aspect::SourceText,
                "userstory node id differs from the source text".to_string(),
            ));
        }
    }

    let mut dangling = false;
    for rel in &doc.relationships {
        for end in [&rel.source, &rel.target] {
            if !seen.contains_key(&end.key()) {
                dangling = true;
                out.push(Violation::error(
                    Aspect::DanglingEndpoint,
                    format!("{} endpoint {} `{}` is not a node", rel.kind, end.kind, end.id),
                ));
            }
        }
        if !rel.kind.accepts(rel.source.kind, rel.target.kind) {
            let (s, t) = rel.kind.endpoint_kinds();
            out.push(Violation::error(
                Aspect::EndpointKind(rel.kind),
                format!(
                    "{} endpoint kinds {}→{}, expected {s}→{t}",
                    rel.kind, rel.source.kind, rel.target.kind
                ),
            ));
        }
    }

    let triggers = doc.count_relationships(RelKind::Triggers);
    if triggers != 1 {
        out.push(Violation::error(
            Aspect::TriggersCardinality,
            format!("TRIGGERS cardinality {triggers} ≠ 1"),
        ));
    }

    // Every satellite node hangs off the story node through exactly one HAS_* edge.
    if !dangling && stories == 1 {
        let story_key = doc.nodes_of(NodeKind::Userstory).next().map(GraphNode::key);
        let mut links: HashMap<(NodeKind, String), usize> = HashMap::new();
        for rel in doc.relationships.iter().filter(|r| r.kind.is_inferred()) {
            if Some(rel.source.key()) == story_key {
                *links.entry(rel.target.key()).or_default() += 1;
            }
        }
        for node in doc.nodes.iter().filter(|n| n.kind != NodeKind::Userstory) {
            let n = links.get(&node.key()).copied().unwrap_or(0);
            if n != 1 {
                out.push(Violation::error(
                    Aspect::StoryLink,
                    format!(
                        "{} node `{}` has {n} HAS_* edges from the userstory node, expected 1",
                        node.kind, node.id
                    ),
                ));
            }
        }
    }

    out
}
