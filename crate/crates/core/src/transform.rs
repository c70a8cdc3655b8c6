//! Turns extracted components into a [`GraphDocument`]: adds the story
//! node, merges duplicate nodes, filters relationships against the
//! ontology and derives the `HAS_*` edges.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::extraction::KgComponents;
use crate::graph::{GraphDocument, GraphNode, GraphRelationship, NodeKind, NodeRef, RelKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransformError {
    #[error("expected exactly one Userstory node, found {0}")]
    StoryNodeCount(usize),
}

/// Bookkeeping from one [`build_graph_document_with_stats`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransformStats {
    /// Nodes folded into an earlier node with the same kind and normalized id.
    pub merged_nodes: usize,
    /// Nodes dropped for an empty id or a stray Userstory kind.
    pub dropped_nodes: usize,
    /// Relationships whose endpoint kinds break the ontology.
    pub dropped_relationships: usize,
    /// Model-emitted `HAS_*` edges replaced by inferred ones.
    pub replaced_inferred: usize,
    /// Exact duplicates of an earlier relationship.
    pub duplicate_relationships: usize,
}

/// Add the Userstory node for `story_text` in front, unless present.
pub fn enrich_with_story_node(components: &KgComponents, story_text: &str) -> KgComponents {
    let story = NodeRef::new(story_text, NodeKind::Userstory);
    let mut out = components.clone();
    if !out.nodes.contains(&story) {
        out.nodes.insert(0, story);
    }
    out
}

/// One `HAS_*` edge from the story node to every other node, in node order.
pub fn create_logical_rels(nodes: &[NodeRef]) -> Result<Vec<GraphRelationship>, TransformError> {
    let stories: Vec<&NodeRef> = nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Userstory)
        .collect();
    let [story] = stories.as_slice() else {
        return Err(TransformError::StoryNodeCount(stories.len()));
    };
    Ok(nodes
        .iter()
        .filter_map(|n| {
            n.kind
                .has_relation()
                .map(|k| GraphRelationship::new((*story).clone(), n.clone(), k))
        })
        .collect())
}

pub fn build_graph_document(components: &KgComponents, story_text: &str) -> GraphDocument {
    build_graph_document_with_stats(components, story_text).0
}

pub fn build_graph_document_with_stats(
    components: &KgComponents,
    story_text: &str,
) -> (GraphDocument, TransformStats) {
    let mut stats = TransformStats::default();
    let enriched = enrich_with_story_node(components, story_text);

    let mut nodes: Vec<GraphNode> = Vec::with_capacity(enriched.nodes.len());
    let mut by_key: HashMap<(NodeKind, String), NodeRef> = HashMap::new();
    let story = NodeRef::new(story_text, NodeKind::Userstory);
    for node in &enriched.nodes {
        if node.kind == NodeKind::Userstory {
            if *node != story {
                stats.dropped_nodes += 1;
            } else if let std::collections::hash_map::Entry::Vacant(e) = by_key.entry(node.key()) {
                e.insert(node.clone());
                nodes.push(GraphNode::new(node.id.clone(), node.kind));
            } else {
                stats.merged_nodes += 1;
            }
            continue;
        }
        let display = node.id.trim();
        if display.is_empty() {
            stats.dropped_nodes += 1;
            continue;
        }
        let display = NodeRef::new(display, node.kind);
        if by_key.contains_key(&display.key()) {
            stats.merged_nodes += 1;
            continue;
        }
        by_key.insert(display.key(), display.clone());
        nodes.push(GraphNode::new(display.id, display.kind));
    }

    let mut relationships = Vec::new();
    let mut seen = HashSet::new();
    for rel in &enriched.relationships {
        if rel.kind.is_inferred() {
            stats.replaced_inferred += 1;
            continue;
        }
        let (Some(source), Some(target)) = (by_key.get(&rel.source.key()), by_key.get(&rel.target.key()))
        else {
            stats.dropped_relationships += 1;
            continue;
        };
        if !rel.kind.accepts(source.kind, target.kind) {
            stats.dropped_relationships += 1;
            continue;
        }
        if !seen.insert((rel.kind, source.key(), target.key())) {
            stats.duplicate_relationships += 1;
            continue;
        }
        relationships.push(GraphRelationship::new(source.clone(), target.clone(), rel.kind));
    }

    let refs: Vec<NodeRef> = nodes.iter().map(GraphNode::as_ref).collect();
    relationships.extend(create_logical_rels(&refs).expect("exactly one story node was added"));

    (
        GraphDocument {
            nodes,
            relationships,
            source_text: story_text.to_string(),
        },
        stats,
    )
}

/// The components a document was built from, including its story node and
/// inferred edges. Feeding them back through [`build_graph_document`]
/// reproduces the document.
pub fn components_from_document(doc: &GraphDocument) -> KgComponents {
    let mut out = KgComponents::default();
    for n in &doc.nodes {
        out.nodes.push(n.as_ref());
    }
    for r in &doc.relationships {
        out.relationships.push(crate::extraction::ComponentRel {
            source: r.source.clone(),
            target: r.target.clone(),
            kind: r.kind,
        });
    }
    out
}

/// Count of edges per kind, handy for summaries.
pub fn relationship_histogram(doc: &GraphDocument) -> Vec<(RelKind, usize)> {
    RelKind::ALL
        .into_iter()
        .map(|k| (k, doc.count_relationships(k)))
        .filter(|(_, n)| *n > 0)
        .collect()
}
