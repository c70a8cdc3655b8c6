//! Extract ontology-conformant knowledge graphs from agile user stories,
//! score them against annotated backlogs and export them to a graph
//! database.

pub mod corpus;
pub mod evaluation;
pub mod extraction;
pub mod graph;
pub mod http;
pub mod sink;
pub mod transform;
pub mod workflow;

pub use corpus::{clean_story_text, AnnotatedStory, Backlog};
pub use extraction::{ExtractorConfig, KgComponents};
pub use graph::{GraphDocument, GraphNode, GraphRelationship, NodeKind, RelKind};
