//! Sentence embedders for the semantic-consistency metric.

use std::time::Duration;

use crate::linalg::normalize_in_place;
use crate::retriever::featurize::accumulate_ngrams;
use crate::{Error, Result};

/// Maps a sentence to a unit-norm vector. Implementations must be
/// deterministic.
pub trait SentenceEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic local fallback: hashed character 3-gram term frequencies,
/// unit-norm. Clearly labeled in reports so its scores are never confused
/// with an external model's.
#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    pub ngram: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for LocalHashEmbedder {
    fn default() -> Self {
        LocalHashEmbedder {
            ngram: 3,
            dim: 2048,
            seed: 0,
        }
    }
}

impl SentenceEmbedder for LocalHashEmbedder {
    fn name(&self) -> &str {
        "local-hash-3gram"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut counts = vec![0.0; self.dim];
        let normalized = super::normalize_text(text).join(" ");
        if normalized.is_empty() {
            // Deterministic basis vector so empty transcripts still score.
            counts[0] = 1.0;
            return Ok(counts);
        }
        accumulate_ngrams(&normalized, self.ngram, self.dim, self.seed, &mut counts);
        normalize_in_place(&mut counts, "sentence embedding")?;
        Ok(counts)
    }
}

/// Client of the embedding wire protocol: POST `{base_url}/v1/embed` with
/// `{"texts": [..]}`, response `{"vectors": [[..]]}`.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    base_url: String,
    dim: usize,
    name: String,
}

#[derive(serde::Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(serde::Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let base_url = base_url.into();
        HttpEmbedder {
            agent,
            name: format!("http:{base_url}"),
            base_url,
            dim,
        }
    }
}

impl SentenceEmbedder for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let url = format!("{}/v1/embed", self.base_url.trim_end_matches('/'));
        let req = EmbedRequest { texts: vec![text] };
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&req)
            .map_err(|e| Error::Embedder(format!("request failed: {e}")))?;
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Embedder(format!("bad response body: {e}")))?;
        let v = body
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| Error::Embedder("response carried no vectors".into()))?;
        if v.len() != self.dim {
            return Err(Error::Embedder(format!(
                "expected dim {}, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(v)
    }
}
