//! Token-embedding similarity (BERTScore style greedy max-cosine matching).

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::metrics::MetricRow;
use crate::extraction::backend::{BackendError, Provider, RetryPolicy};
use crate::http::{redact_url, HttpClient};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot score an empty token list")]
    EmptyInput,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("embedder returned {got} vectors for {expected} tokens")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding for `{0}` is the zero vector")]
    ZeroVector(String),
}

/// Maps tokens to fixed-length vectors, one per token. Implementations must
/// be deterministic and safe to share between threads.
pub trait Embedder: Send + Sync {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Orthonormal vectors over the distinct tokens of each call. Two tokens
/// get cosine 1 when equal and 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OneHotEmbedder;

impl Embedder for OneHotEmbedder {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut vocab: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            let next = vocab.len();
            vocab.entry(t.as_str()).or_insert(next);
        }
        Ok(tokens
            .iter()
            .map(|t| {
                let mut v = vec![0.0; vocab.len()];
                v[vocab[t.as_str()]] = 1.0;
                v
            })
            .collect())
    }
}

/// Embeddings over HTTP: an OpenAI-compatible `/embeddings` endpoint or
/// ollama's `/api/embed`. Vectors are cached per token.
pub struct HttpEmbedder {
    endpoint: String,
    provider: Provider,
    model: String,
    auth_token: Option<String>,
    client: HttpClient,
    retry: RetryPolicy,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl std::fmt::Debug for HttpEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpEmbedder")
            .field("endpoint", &redact_url(&self.endpoint))
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        provider: Provider,
        model: impl Into<String>,
        auth_token: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            provider,
            model: model.into(),
            auth_token,
            client: HttpClient::new(timeout),
            retry,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn fetch(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let endpoint = redact_url(&self.endpoint);
        let body = json!({"model": self.model, "input": tokens});
        let headers: Vec<(&str, String)> = self
            .auth_token
            .iter()
            .map(|t| ("Authorization", format!("Bearer {t}")))
            .collect();
        let reply = self
            .client
            .post_json(&self.endpoint, &headers, &body)
            .map_err(|e| BackendError::Transport {
                endpoint: endpoint.clone(),
                message: e.message,
            })?;
        if !reply.is_success() {
            return Err(BackendError::Status {
                endpoint,
                status: reply.status,
                body: reply.body.chars().take(500).collect(),
            });
        }
        let protocol = |message: &str| BackendError::Protocol {
            endpoint: endpoint.clone(),
            message: message.to_string(),
        };
        let json = reply.json().ok_or_else(|| protocol("body is not JSON"))?;
        let rows: Vec<&Value> = match self.provider {
            Provider::Openai => json["data"]
                .as_array()
                .ok_or_else(|| protocol("missing `data` array"))?
                .iter()
                .map(|d| &d["embedding"])
                .collect(),
            Provider::Ollama => json["embeddings"]
                .as_array()
                .ok_or_else(|| protocol("missing `embeddings` array"))?
                .iter()
                .collect(),
        };
        rows.into_iter()
            .map(|row| {
                row.as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| protocol("embedding is not a number array"))
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            tokens
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.retry.run(|| self.fetch(&missing))?;
            if vectors.len() != missing.len() {
                return Err(EmbedError::CountMismatch {
                    expected: missing.len(),
                    got: vectors.len(),
                });
            }
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            cache.extend(missing.into_iter().zip(vectors));
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(tokens.iter().map(|t| cache[t].clone()).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Precision averages, over predicted tokens, the best cosine against any
/// ground-truth token; recall does the same from the ground-truth side.
/// Both lists go through a single `embed` call.
pub fn bertscore(
    gt_tokens: &[String],
    pred_tokens: &[String],
    embedder: &dyn Embedder,
) -> Result<MetricRow, EmbedError> {
    if gt_tokens.is_empty() || pred_tokens.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let all: Vec<String> = gt_tokens.iter().chain(pred_tokens).cloned().collect();
    let vectors = embedder.embed(&all)?;
    if vectors.len() != all.len() {
        return Err(EmbedError::CountMismatch {
            expected: all.len(),
            got: vectors.len(),
        });
    }
    if let Some(i) = vectors.iter().position(|v| v.iter().all(|x| *x == 0.0)) {
        return Err(EmbedError::ZeroVector(all[i].clone()));
    }
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let (gt, pred) = unit.split_at(gt_tokens.len());
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let best = |from: &[Vec<f64>], against: &[Vec<f64>]| {
        from.iter()
            .map(|x| against.iter().map(|y| dot(x, y)).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best(pred, gt).clamp(0.0, 1.0);
    let recall = best(gt, pred).clamp(0.0, 1.0);
    Ok(MetricRow::from_pr(precision, recall))
}

/// Whitespace tokens of the normalized items, concatenated.
pub fn tokenize<S: AsRef<str>>(items: &[S]) -> Vec<String> {
    items
        .iter()
        .flat_map(|s| {
            crate::graph::normalize_id(s.as_ref())
                .split_whitespace()
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    /// Set-overlap score: with orthonormal vectors a token's best cosine is
    /// 1 exactly when the other side contains it.
    fn overlap_oracle(gt: &[String], pred: &[String]) -> (f64, f64) {
        let p = pred.iter().filter(|t| gt.contains(t)).count() as f64 / pred.len() as f64;
        let r = gt.iter().filter(|t| pred.contains(t)).count() as f64 / gt.len() as f64;
        (p, r)
    }

    fn all_lists(vocab: &[&str], max_len: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut layer: Vec<Vec<String>> = vec![vec![]];
        for _ in 0..max_len {
            layer = layer
                .iter()
                .flat_map(|l| {
                    vocab.iter().map(move |t| {
                        let mut n = l.clone();
                        n.push(t.to_string());
                        n
                    })
                })
                .collect();
            out.extend(layer.iter().cloned());
        }
        out
    }

    #[test]
    fn hand_evaluated_example() {
        let m = bertscore(&toks(&["a", "b"]), &toks(&["a", "c"]), &OneHotEmbedder).unwrap();
        assert!((m.precision - 0.5).abs() < 1e-9);
        assert!((m.recall - 0.5).abs() < 1e-9);
        assert!((m.f_measure - 0.5).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_zero_and_empty_is_error() {
        let m = bertscore(&toks(&["a"]), &toks(&["b", "c"]), &OneHotEmbedder).unwrap();
        assert_eq!(m, MetricRow::ZERO);
        assert_eq!(bertscore(&[], &toks(&["a"]), &OneHotEmbedder), Err(EmbedError::EmptyInput));
    }

    #[test]
    fn identity_with_dense_vectors() {
        struct Hashy;
        impl Embedder for Hashy {
            fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
                Ok(tokens
                    .iter()
                    .map(|t| (0..8).map(|i| 1.0 + (t.len() * 7 + i * 3 + t.as_bytes()[0] as usize) as f64 % 5.0).collect())
                    .collect())
            }
        }
        let t = toks(&["publish", "fabs", "files"]);
        let m = bertscore(&t, &t, &Hashy).unwrap();
        assert!((m.f_measure - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_hot_agrees_with_overlap_oracle() {
        let lists = all_lists(&["x", "y", "z"], 5);
        assert_eq!(lists.len(), 3 + 9 + 27 + 81 + 243);
        for gt in &lists {
            for pred in &lists {
                let m = bertscore(gt, pred, &OneHotEmbedder).unwrap();
                let (p, r) = overlap_oracle(gt, pred);
                assert!((m.precision - p).abs() < 1e-9 && (m.recall - r).abs() < 1e-9, "{gt:?} {pred:?}");
            }
        }
    }

    #[test]
    fn tokenize_normalizes_and_splits() {
        assert_eq!(tokenize(&["Published  FABS files", "see"]), toks(&["published", "fabs", "files", "see"]));
    }
}
