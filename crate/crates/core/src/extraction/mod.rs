//! The LLM connector: renders the main and benefit prompts for a story,
//! sends them to a backend and parses the answers into [`KgComponents`].
//! A rule-based extractor is available behind the same [`Extractor`] trait.

pub mod backend;
pub mod parse;
pub mod prompt;
pub mod rules;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::graph::{NodeKind, NodeRef, RelKind};
use backend::{
    BackendError, Chain, ChatBackend, ChatRequest, HttpChatBackend, Provider, ReplayBackend,
    RetryPolicy,
};
use parse::{parse_benefit_response, parse_main_response, ParseError};
use prompt::{PromptCatalog, TemplateError};

/// One head-relation-tail triple in the output format used when the model
/// has no function calling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub text: String,
    pub head: String,
    pub head_type: String,
    pub relation: String,
    pub tail: String,
    pub tail_type: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub nodes: usize,
    pub relationships: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentRel {
    pub source: NodeRef,
    pub target: NodeRef,
    pub kind: RelKind,
}

/// Raw nodes and relationships from an extractor, before enrichment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KgComponents {
    pub nodes: Vec<NodeRef>,
    pub relationships: Vec<ComponentRel>,
    /// Items the parser discarded because their kind is outside the ontology.
    pub dropped: DropCounts,
}

impl KgComponents {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.relationships.is_empty()
    }

    /// Add a node unless one with the same exact id and kind exists.
    pub fn add_node(&mut self, node: NodeRef) {
        if !self.nodes.contains(&node) {
            self.nodes.push(node);
        }
    }

    /// Add a relationship, adding its endpoints as nodes when missing.
    pub fn add_relationship(&mut self, source: NodeRef, target: NodeRef, kind: RelKind) {
        self.add_node(source.clone());
        self.add_node(target.clone());
        self.relationships.push(ComponentRel {
            source,
            target,
            kind,
        });
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &NodeRef> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    pub fn ids_of(&self, kind: NodeKind) -> Vec<String> {
        self.nodes_of(kind).map(|n| n.id.clone()).collect()
    }

    pub fn pairs_of(&self, kind: RelKind) -> Vec<(String, String)> {
        self.relationships
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| (r.source.id.clone(), r.target.id.clone()))
            .collect()
    }

    /// Every relationship endpoint must be among the nodes.
    pub fn check_endpoints(&self) -> Result<(), String> {
        for r in &self.relationships {
            for end in [&r.source, &r.target] {
                if !self.nodes.contains(end) {
                    return Err(format!("{} endpoint {} `{}` missing", r.kind, end.kind, end.id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    ChatHttp,
    ReplayFixture,
    #[default]
    RuleBased,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chat-http" => Ok(BackendKind::ChatHttp),
            "replay-fixture" => Ok(BackendKind::ReplayFixture),
            "rule-based" => Ok(BackendKind::RuleBased),
            other => Err(format!(
                "unknown backend `{other}` (expected chat-http, replay-fixture or rule-based)"
            )),
        }
    }
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_base_delay() -> u64 {
    500
}
fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub backend: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub provider: Provider,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub supports_function_calls: bool,
    /// Never serialized.
    #[serde(skip)]
    pub auth_token: Option<String>,
    /// Environment variable holding the API key, read when `auth_token` is unset.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_base_delay")]
    pub retry_base_delay_ms: u64,
    /// Ask once more when the main response cannot be parsed.
    #[serde(default)]
    pub reask_on_parse_error: bool,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::RuleBased,
            endpoint: None,
            provider: Provider::Openai,
            model_name: String::new(),
            temperature: 0.0,
            supports_function_calls: false,
            auth_token: None,
            api_key_env: None,
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_base_delay_ms: default_base_delay(),
            reask_on_parse_error: false,
            fixture: None,
            concurrency: default_concurrency(),
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<(), ExtractError> {
        let bad = |m: &str| Err(ExtractError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 1]");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        match self.backend {
            BackendKind::ChatHttp if self.endpoint.as_deref().unwrap_or("").is_empty() => {
                bad("chat-http backend needs an endpoint")
            }
            BackendKind::ChatHttp if self.model_name.is_empty() => {
                bad("chat-http backend needs a model name")
            }
            BackendKind::ReplayFixture if self.fixture.is_none() => {
                bad("replay-fixture backend needs a fixture file")
            }
            _ => Ok(()),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.retry_base_delay_ms),
            ..RetryPolicy::default()
        }
    }

    fn resolved_token(&self) -> Option<String> {
        self.auth_token.clone().or_else(|| {
            self.api_key_env
                .as_deref()
                .and_then(|var| std::env::var(var).ok())
                .filter(|v| !v.is_empty())
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("extractor configuration: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("could not parse model response: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("story text is empty")]
    EmptyStory,
}

pub trait Extractor: Send + Sync {
    fn extract(&self, story_text: &str) -> Result<KgComponents, ExtractError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedExtractor;

impl Extractor for RuleBasedExtractor {
    fn extract(&self, story_text: &str) -> Result<KgComponents, ExtractError> {
        Ok(rules::rule_based_extract(story_text))
    }
}

/// Function schema sent to providers with function calling. The field
/// names match what [`parse::parse_structured_response`] reads.
pub fn graph_function_schema() -> &'static Value {
    static SCHEMA: OnceLock<Value> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        json!({
            "name": "extract_graph",
            "description": "Nodes and relationships extracted from a user story.",
            "parameters": {
                "type": "object",
                "properties": {
                    "nodes": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "id": {"type": "string"},
                                "type": {"type": "string", "enum": ["Persona", "Action", "Entity", "Benefit"]}
                            },
                            "required": ["id", "type"]
                        }
                    },
                    "relationships": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "source": {"type": "string"},
                                "source_type": {"type": "string"},
                                "target": {"type": "string"},
                                "target_type": {"type": "string"},
                                "relation": {"type": "string", "enum": ["TRIGGERS", "TARGETS"]}
                            },
                            "required": ["source", "source_type", "target", "target_type", "relation"]
                        }
                    }
                },
                "required": ["nodes", "relationships"]
            }
        })
    })
}

/// Two sequential requests per story: the main chain for personas, actions,
/// entities and their relationships, then the benefit chain.
pub struct LlmConnector {
    backend: Arc<dyn ChatBackend>,
    catalog: PromptCatalog,
    supports_function_calls: bool,
    retry: RetryPolicy,
    reask_on_parse_error: bool,
}

impl LlmConnector {
    pub fn new(config: &ExtractorConfig, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            catalog: PromptCatalog::builtin(),
            supports_function_calls: config.supports_function_calls,
            retry: config.retry_policy(),
            reask_on_parse_error: config.reask_on_parse_error,
        }
    }

    fn call(
        &self,
        chain: Chain,
        story: &str,
        messages: Vec<prompt::ChatMessage>,
    ) -> Result<parse::ChatResponse, BackendError> {
        let request = ChatRequest {
            chain,
            story,
            messages,
            function: self
                .supports_function_calls
                .then(graph_function_schema),
        };
        self.retry.run(|| self.backend.complete(&request))
    }
}

impl Extractor for LlmConnector {
    fn extract(&self, story_text: &str) -> Result<KgComponents, ExtractError> {
        let story = story_text.trim();
        if story.is_empty() {
            return Err(ExtractError::EmptyStory);
        }
        let main_template = self.catalog.main_for(self.supports_function_calls);
        let response = self.call(Chain::Main, story, main_template.render(story)?)?;
        let mut components = match parse_main_response(&response) {
            Ok(c) => c,
            Err(e) if self.reask_on_parse_error => {
                log::warn!("unparseable main response, asking again: {}", e.raw);
                let again = self.call(Chain::Main, story, main_template.render(story)?)?;
                parse_main_response(&again)?
            }
            Err(e) => return Err(e.into()),
        };

        // The benefit chain is authoritative for Benefit nodes.
        components.nodes.retain(|n| n.kind != NodeKind::Benefit);
        components
            .relationships
            .retain(|r| r.source.kind != NodeKind::Benefit && r.target.kind != NodeKind::Benefit);

        let response = self.call(Chain::Benefit, story, self.catalog.benefit.render(story)?)?;
        if let Some(benefit) = parse_benefit_response(&response) {
            components.add_node(NodeRef::new(benefit, NodeKind::Benefit));
        }
        Ok(components)
    }
}

/// Build the extractor described by `config`.
pub fn build_extractor(config: &ExtractorConfig) -> Result<Box<dyn Extractor>, ExtractError> {
    config.validate()?;
    match config.backend {
        BackendKind::RuleBased => Ok(Box::new(RuleBasedExtractor)),
        BackendKind::ReplayFixture => {
            let path = config.fixture.as_deref().expect("validated");
            let replay = ReplayBackend::from_file(path).map_err(ExtractError::Config)?;
            Ok(Box::new(LlmConnector::new(config, Arc::new(replay))))
        }
        BackendKind::ChatHttp => {
            let backend = HttpChatBackend::new(
                config.endpoint.clone().expect("validated"),
                config.provider,
                config.model_name.clone(),
                config.temperature,
                config.resolved_token(),
                Duration::from_secs(config.request_timeout_secs),
            );
            Ok(Box::new(LlmConnector::new(config, Arc::new(backend))))
        }
    }
}

pub fn extract_components(
    config: &ExtractorConfig,
    story_text: &str,
) -> Result<KgComponents, ExtractError> {
    build_extractor(config)?.extract(story_text)
}

/// Extract many stories with at most `concurrency` in flight. Results keep
/// input order.
pub fn extract_all(
    extractor: &dyn Extractor,
    stories: &[String],
    concurrency: usize,
) -> Vec<Result<KgComponents, ExtractError>> {
    let workers = concurrency.max(1).min(stories.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<KgComponents, ExtractError>>>> =
        Mutex::new((0..stories.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(story) = stories.get(i) else { break };
                let result = extractor.extract(story);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every index is processed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use backend::RecordedExchange;

    const SYNC: &str =
        "As a user, I want to sync my data so that I can access my information from anywhere.";
    const WORKED_EXAMPLE: &str = "Extracted Nodes: \nPersona: ['user'] \nAction: ['sync', 'access'] \n\
        Entity: ['data', 'current information', 'anywhere'] \nRelationships: \n\
        TRIGGERS: [['user', 'sync']] \nTARGETS: [['sync', 'data'], ['access', 'current information']] \n";

    fn replay(entries: &[(&str, &str, &str)]) -> Arc<dyn ChatBackend> {
        let map: HashMap<_, _> = entries
            .iter()
            .map(|(s, m, b)| {
                (
                    s.to_string(),
                    RecordedExchange {
                        main_response: m.to_string(),
                        benefit_response: b.to_string(),
                    },
                )
            })
            .collect();
        Arc::new(ReplayBackend::new(map))
    }

    #[test]
    fn replayed_worked_example() {
        let backend = replay(&[(
            SYNC,
            WORKED_EXAMPLE,
            "Node(id='I can access my information from anywhere', type='Benefit')",
        )]);
        let c = LlmConnector::new(&ExtractorConfig::default(), backend)
            .extract(SYNC)
            .unwrap();
        assert_eq!(c.ids_of(NodeKind::Persona), ["user"]);
        assert_eq!(c.ids_of(NodeKind::Action), ["sync", "access"]);
        assert_eq!(c.ids_of(NodeKind::Entity), ["data", "current information", "anywhere"]);
        assert_eq!(c.ids_of(NodeKind::Benefit), ["I can access my information from anywhere"]);
        assert_eq!(c.pairs_of(RelKind::Triggers), [("user".into(), "sync".into())]);
        assert_eq!(
            c.pairs_of(RelKind::Targets),
            [
                ("sync".into(), "data".into()),
                ("access".into(), "current information".into())
            ]
        );
    }

    #[test]
    fn empty_benefit_answer_adds_nothing() {
        let story = "As a customer, I want to pay by cash.";
        let backend = replay(&[(
            story,
            r#"[{"text": "", "head": "customer", "head_type": "Persona", "relation": "TRIGGERS", "tail": "pay", "tail_type": "Action"}]"#,
            "''",
        )]);
        let c = LlmConnector::new(&ExtractorConfig::default(), backend)
            .extract(story)
            .unwrap();
        assert_eq!(c.nodes_of(NodeKind::Benefit).count(), 0);
    }

    #[test]
    fn prose_response_is_a_parse_error() {
        let backend = replay(&[(SYNC, "I'd rather not.", "''")]);
        let err = LlmConnector::new(&ExtractorConfig::default(), backend)
            .extract(SYNC)
            .unwrap_err();
        match err {
            ExtractError::Parse(p) => assert_eq!(p.raw, "I'd rather not."),
            other => panic!("{other:?}"),
        }
    }

    struct Flaky {
        calls: AtomicUsize,
    }

    impl ChatBackend for Flaky {
        fn complete(&self, req: &ChatRequest<'_>) -> Result<parse::ChatResponse, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            match (req.chain, n) {
                (Chain::Main, 0) => Ok(parse::ChatResponse::text("no idea")),
                (Chain::Main, _) => Ok(parse::ChatResponse {
                    content: String::new(),
                    tool_arguments: Some(json!({"nodes": [{"id": "user", "type": "Persona"},
                        {"id": "x", "type": "Benefit"}], "relationships": []})),
                }),
                (Chain::Benefit, _) => Ok(parse::ChatResponse::text("  ")),
            }
        }
    }

    #[test]
    fn reask_recovers_from_one_bad_answer() {
        let config = ExtractorConfig {
            reask_on_parse_error: true,
            supports_function_calls: true,
            ..ExtractorConfig::default()
        };
        let backend = Arc::new(Flaky {
            calls: AtomicUsize::new(0),
        });
        let c = LlmConnector::new(&config, backend).extract(SYNC).unwrap();
        assert_eq!(c.ids_of(NodeKind::Persona), ["user"]);
        assert_eq!(c.nodes_of(NodeKind::Benefit).count(), 0, "main-chain benefits are ignored");
    }

    #[test]
    fn config_validation() {
        assert!(ExtractorConfig::default().validate().is_ok());
        let c = ExtractorConfig {
            backend: BackendKind::ChatHttp,
            ..Default::default()
        };
        assert!(matches!(build_extractor(&c), Err(ExtractError::Config(_))));
        let c = ExtractorConfig {
            temperature: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ExtractorConfig {
            backend: BackendKind::ReplayFixture,
            fixture: Some("/nonexistent/fixture.json".into()),
            ..Default::default()
        };
        assert!(matches!(build_extractor(&c), Err(ExtractError::Config(_))));
    }

    #[test]
    fn token_is_never_serialized() {
        let c = ExtractorConfig {
            auth_token: Some("sk-secret".into()),
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(!s.contains("sk-secret"));
    }

    #[test]
    fn extract_all_keeps_order() {
        let stories: Vec<String> = (0..20)
            .map(|i| format!("As a user{i}, I want to do thing{i}."))
            .collect();
        let out = extract_all(&RuleBasedExtractor, &stories, 4);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().ids_of(NodeKind::Persona), [format!("user{i}")]);
        }
        assert!(extract_all(&RuleBasedExtractor, &[], 4).is_empty());
    }

    #[test]
    fn schema_names_match_parser() {
        let s = graph_function_schema();
        let rel = &s["parameters"]["properties"]["relationships"]["items"]["properties"];
        for key in ["source", "source_type", "target", "target_type", "relation"] {
            assert!(rel.get(key).is_some());
        }
    }
}
