//! Persisting graph documents: parameterized Cypher, a loader for the
//! Neo4j HTTP transactional endpoint, and offline JSON/Cypher exports.

use std::time::Duration;

use base64::Engine as _;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::graph::GraphDocument;
use crate::http::{redact_url, HttpClient};

pub const DEFAULT_ID_LENGTH_CAP: usize = 2048;
pub const DEFAULT_BATCH_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SinkError {
    #[error("sink configuration: {0}")]
    Config(String),
    #[error("{kind} id is {len} characters, above the cap of {cap}")]
    IdTooLong { kind: String, len: usize, cap: usize },
    #[error("cannot reach graph database at {host}: {message}")]
    Connection { host: String, message: String },
    #[error("graph database at {host} rejected the credentials (HTTP {status})")]
    Auth { host: String, status: u16 },
    #[error("graph database at {host} answered HTTP {status}: {body}")]
    Status { host: String, status: u16, body: String },
    #[error("unexpected reply from {host}: {message}")]
    Protocol { host: String, message: String },
}

#[derive(Clone)]
pub struct SinkConfig {
    pub uri: String,
    pub user: String,
    pub password: String,
    pub database_name: Option<String>,
    /// Statements per HTTP request. Larger documents use an open
    /// transaction across several requests.
    pub batch_size: usize,
    pub id_length_cap: usize,
    pub timeout: Duration,
}

impl std::fmt::Debug for SinkConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SinkConfig")
            .field("uri", &redact_url(&self.uri))
            .field("user", &self.user)
            .field("password", &"<redacted>")
            .field("database_name", &self.database_name)
            .field("batch_size", &self.batch_size)
            .finish()
    }
}

impl SinkConfig {
    pub fn new(uri: impl Into<String>, user: impl Into<String>, password: impl Into<String>) -> Self {
        Self {
            uri: uri.into(),
            user: user.into(),
            password: password.into(),
            database_name: None,
            batch_size: DEFAULT_BATCH_SIZE,
            id_length_cap: DEFAULT_ID_LENGTH_CAP,
            timeout: Duration::from_secs(30),
        }
    }

    /// Read `NEO4J_URI`, `NEO4J_USER` (or `NEO4J_USERNAME`), `NEO4J_PASSWORD`
    /// and the optional `NEO4J_DATABASE`.
    pub fn from_env() -> Result<Self, SinkError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, SinkError> {
        let need = |k: &str| get(k).filter(|v| !v.is_empty());
        let uri = need("NEO4J_URI").ok_or_else(|| SinkError::Config("NEO4J_URI is not set".into()))?;
        let user = need("NEO4J_USER")
            .or_else(|| need("NEO4J_USERNAME"))
            .ok_or_else(|| SinkError::Config("NEO4J_USER is not set".into()))?;
        let password =
            need("NEO4J_PASSWORD").ok_or_else(|| SinkError::Config("NEO4J_PASSWORD is not set".into()))?;
        let mut cfg = Self::new(uri, user, password);
        cfg.database_name = need("NEO4J_DATABASE");
        Ok(cfg)
    }

    fn database(&self) -> &str {
        self.database_name.as_deref().unwrap_or("neo4j")
    }

    /// Base HTTP URL. Binary-protocol schemes are mapped to the HTTP
    /// connector on its default port.
    pub fn http_base(&self) -> Result<String, SinkError> {
        let (scheme, rest) = self
            .uri
            .split_once("://")
            .ok_or_else(|| SinkError::Config(format!("`{}` has no scheme", redact_url(&self.uri))))?;
        let authority = rest.split('/').next().unwrap_or("");
        let host_port = authority.rsplit('@').next().unwrap_or(authority);
        let host = host_port
            .rsplit_once(':')
            .filter(|(_, p)| p.chars().all(|c| c.is_ascii_digit()))
            .map_or(host_port, |(h, _)| h);
        match scheme {
            "http" | "https" => Ok(format!("{scheme}://{}", host_port).trim_end_matches('/').to_string()),
            "bolt" | "neo4j" => Ok(format!("http://{host}:7474")),
            "bolt+s" | "neo4j+s" | "bolt+ssc" | "neo4j+ssc" => Ok(format!("https://{host}:7473")),
            other => Err(SinkError::Config(format!("unsupported scheme `{other}`"))),
        }
    }
}

/// A Cypher statement and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CypherStatement {
    pub statement: String,
    pub parameters: Map<String, Value>,
}

fn properties_value(props: &std::collections::BTreeMap<String, String>) -> Value {
    Value::Object(props.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
}

fn check_id(kind: &str, id: &str, cap: usize) -> Result<(), SinkError> {
    let len = id.chars().count();
    if len > cap {
        return Err(SinkError::IdTooLong {
            kind: kind.to_string(),
            len,
            cap,
        });
    }
    Ok(())
}

/// One MERGE per node, then one MERGE per relationship. Labels and types
/// come from the ontology enums; every value is a parameter.
pub fn to_cypher(doc: &GraphDocument, id_length_cap: usize) -> Result<Vec<CypherStatement>, SinkError> {
    let mut out = Vec::with_capacity(doc.nodes.len() + doc.relationships.len());
    for n in &doc.nodes {
        check_id(n.kind.as_str(), &n.id, id_length_cap)?;
        let mut parameters = Map::new();
        parameters.insert("id".into(), Value::String(n.id.clone()));
        parameters.insert("properties".into(), properties_value(&n.properties));
        out.push(CypherStatement {
            statement: format!("MERGE (n:{} {{id: $id}}) SET n += $properties", n.kind.as_str()),
            parameters,
        });
    }
    for r in &doc.relationships {
        check_id(r.source.kind.as_str(), &r.source.id, id_length_cap)?;
        check_id(r.target.kind.as_str(), &r.target.id, id_length_cap)?;
        let mut parameters = Map::new();
        parameters.insert("source_id".into(), Value::String(r.source.id.clone()));
        parameters.insert("target_id".into(), Value::String(r.target.id.clone()));
        parameters.insert("properties".into(), properties_value(&r.properties));
        out.push(CypherStatement {
            statement: format!(
                "MATCH (s:{} {{id: $source_id}}) MATCH (t:{} {{id: $target_id}}) MERGE (s)-[r:{}]->(t) SET r = $properties",
                r.source.kind.as_str(),
                r.target.kind.as_str(),
                r.kind.as_str()
            ),
            parameters,
        });
    }
    Ok(out)
}

/// Canonical JSON array of documents.
pub fn export_json(docs: &[GraphDocument]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(docs).expect("graph documents serialize");
    out.push(b'\n');
    out
}

pub fn import_json(raw: &[u8]) -> Result<Vec<GraphDocument>, serde_json::Error> {
    serde_json::from_slice(raw)
}

fn cypher_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn cypher_key(k: &str) -> String {
    let plain = k.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        k.to_string()
    } else {
        format!("`{}`", k.replace('`', "``"))
    }
}

/// Render a JSON value as a Cypher literal.
pub fn cypher_literal(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => cypher_string(s),
        Value::Array(xs) => format!("[{}]", xs.iter().map(cypher_literal).collect::<Vec<_>>().join(", ")),
        Value::Object(m) => format!(
            "{{{}}}",
            m.iter()
                .map(|(k, v)| format!("{}: {}", cypher_key(k), cypher_literal(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

/// A script for `cypher-shell`: each statement is preceded by a `:param`
/// line holding its parameters.
pub fn cypher_script(docs: &[GraphDocument], id_length_cap: usize) -> Result<String, SinkError> {
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        out.push_str(&format!("// document {}\n", i + 1));
        for st in to_cypher(doc, id_length_cap)? {
            out.push_str(&format!(":param {}\n", cypher_literal(&Value::Object(st.parameters))));
            out.push_str(&st.statement);
            out.push_str(";\n");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub nodes_created: u64,
    pub rels_created: u64,
    /// Node MERGEs that found an existing node.
    pub nodes_matched: u64,
    pub documents_loaded: usize,
    pub documents_failed: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct StatementStats {
    nodes_created: u64,
    rels_created: u64,
}

fn read_stats(result: &Value) -> StatementStats {
    let stats = &result["stats"];
    StatementStats {
        nodes_created: stats["nodes_created"].as_u64().unwrap_or(0),
        rels_created: stats["relationships_created"].as_u64().unwrap_or(0),
    }
}

/// Loads documents one transaction at a time.
pub struct GraphStore {
    config: SinkConfig,
    base: String,
    auth: String,
    client: HttpClient,
}

impl GraphStore {
    pub fn connect(config: SinkConfig) -> Result<Self, SinkError> {
        if config.batch_size == 0 {
            return Err(SinkError::Config("batch size must be positive".into()));
        }
        let base = config.http_base()?;
        let auth = format!(
            "Basic {}",
            base64::engine::general_purpose::STANDARD.encode(format!("{}:{}", config.user, config.password))
        );
        let client = HttpClient::new(config.timeout);
        Ok(Self {
            config,
            base,
            auth,
            client,
        })
    }

    fn host(&self) -> String {
        redact_url(&self.base)
    }

    /// POST statements; returns the reply JSON. Statement errors come back
    /// as `Ok(Err(message))` because they only fail the current document.
    fn post(&self, url: &str, statements: &[CypherStatement]) -> Result<Result<Value, String>, SinkError> {
        let body = json!({
            "statements": statements.iter().map(|s| json!({
                "statement": s.statement,
                "parameters": s.parameters,
                "includeStats": true,
            })).collect::<Vec<_>>()
        });
        let headers = [("Authorization", self.auth.clone()), ("Accept", "application/json".to_string())];
        let reply = self
            .client
            .post_json(url, &headers, &body)
            .map_err(|e| SinkError::Connection {
                host: self.host(),
                message: e.message.replace(&self.config.password, "<redacted>"),
            })?;
        match reply.status {
            401 | 403 => {
                return Err(SinkError::Auth {
                    host: self.host(),
                    status: reply.status,
                })
            }
            s if !(200..300).contains(&s) => {
                return Err(SinkError::Status {
                    host: self.host(),
                    status: s,
                    body: reply.body.chars().take(500).collect(),
                })
            }
            _ => {}
        }
        let json = reply.json().ok_or_else(|| SinkError::Protocol {
            host: self.host(),
            message: "body is not JSON".into(),
        })?;
        if let Some(errors) = json["errors"].as_array().filter(|e| !e.is_empty()) {
            let msg = errors
                .iter()
                .map(|e| format!("{}: {}", e["code"].as_str().unwrap_or("?"), e["message"].as_str().unwrap_or("")))
                .collect::<Vec<_>>()
                .join("; ");
            return Ok(Err(msg));
        }
        Ok(Ok(json))
    }

    /// Load one document in its own transaction. Returns per-statement stats.
    fn store_document(&self, statements: &[CypherStatement]) -> Result<Result<Vec<StatementStats>, String>, SinkError> {
        let tx = format!("{}/db/{}/tx", self.base, self.config.database());
        let mut stats = Vec::with_capacity(statements.len());
        let mut collect = |json: &Value| {
            if let Some(results) = json["results"].as_array() {
                stats.extend(results.iter().map(read_stats));
            }
        };
        if statements.len() <= self.config.batch_size {
            return Ok(match self.post(&format!("{tx}/commit"), statements)? {
                Ok(json) => {
                    collect(&json);
                    Ok(stats)
                }
                Err(e) => Err(e),
            });
        }
        let mut chunks = statements.chunks(self.config.batch_size);
        let first = chunks.next().unwrap_or_default();
        let opened = match self.post(&tx, first)? {
            Ok(json) => json,
            Err(e) => return Ok(Err(e)),
        };
        collect(&opened);
        let commit = opened["commit"]
            .as_str()
            .ok_or_else(|| SinkError::Protocol {
                host: self.host(),
                message: "open transaction reply has no commit URL".into(),
            })?
            .to_string();
        let tx_url = commit.trim_end_matches("/commit").to_string();
        let rest: Vec<&[CypherStatement]> = chunks.collect();
        for (i, chunk) in rest.iter().enumerate() {
            let url = if i + 1 == rest.len() { &commit } else { &tx_url };
            match self.post(url, chunk)? {
                Ok(json) => collect(&json),
                Err(e) => return Ok(Err(e)),
            }
        }
        Ok(Ok(stats))
    }

    /// Load documents sequentially. Connection and authentication problems
    /// abort the whole load; a failing statement only aborts its document.
    pub fn store(&self, docs: &[GraphDocument]) -> Result<LoadSummary, SinkError> {
        let mut summary = LoadSummary::default();
        for (i, doc) in docs.iter().enumerate() {
            let statements = to_cypher(doc, self.config.id_length_cap)?;
            match self.store_document(&statements)? {
                Ok(stats) => {
                    summary.documents_loaded += 1;
                    for s in stats.iter().take(doc.nodes.len()) {
                        summary.nodes_created += s.nodes_created;
                        if s.nodes_created == 0 {
                            summary.nodes_matched += 1;
                        }
                    }
                    for s in stats.iter().skip(doc.nodes.len()) {
                        summary.nodes_created += s.nodes_created;
                        summary.rels_created += s.rels_created;
                    }
                }
                Err(message) => {
                    log::warn!("document {} not stored: {message}", i + 1);
                    summary.documents_failed += 1;
                    summary.failures.push(format!("document {}: {message}", i + 1));
                }
            }
        }
        Ok(summary)
    }
}

pub fn store(config: SinkConfig, docs: &[GraphDocument]) -> Result<LoadSummary, SinkError> {
    GraphStore::connect(config)?.store(docs)
}
