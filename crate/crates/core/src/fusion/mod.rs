//! Multi-stream hypothesis fusion: pairwise and progressive alignment,
//! weighted slot voting, and retrieval-driven keyword correction.

mod align;
mod correct;
mod vote;

pub use align::{align_pair, align_streams, AlignedPair, AlignmentGrid, PairAlignment};
pub use correct::{keyword_correct, KeywordMatch, ScoredKeyword, DEFAULT_TAU_EDIT, DEFAULT_TAU_SCORE};
pub use vote::{weighted_vote, FusionConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Origin of a recognition stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Acoustic,
    Llm,
    Rag,
}

impl Source {
    /// Canonical processing order for progressive alignment.
    pub const ALL: [Source; 3] = [Source::Acoustic, Source::Llm, Source::Rag];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Acoustic => "acoustic",
            Source::Llm => "llm",
            Source::Rag => "rag",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acoustic" => Ok(Source::Acoustic),
            "llm" => Ok(Source::Llm),
            "rag" => Ok(Source::Rag),
            other => Err(Error::InvalidArgument(format!("unknown source {other:?}"))),
        }
    }
}

/// One recognition stream's token sequence for an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub utterance_id: String,
    pub source: Source,
    pub tokens: Vec<String>,
    /// Optional per-token confidences; same length as `tokens` when present.
    pub confidences: Option<Vec<f64>>,
    pub revision: u32,
    pub is_final: bool,
}

impl Hypothesis {
    pub fn new(
        utterance_id: impl Into<String>,
        source: Source,
        tokens: Vec<String>,
        revision: u32,
    ) -> Result<Self> {
        let h = Hypothesis {
            utterance_id: utterance_id.into(),
            source,
            tokens,
            confidences: None,
            revision,
            is_final: false,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "token {t:?} is empty or contains whitespace"
                )));
            }
        }
        if let Some(c) = &self.confidences {
            if c.len() != self.tokens.len() {
                return Err(Error::dimension("confidences", self.tokens.len(), c.len()));
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(
                    "confidences must lie in [0, 1]".into(),
                ));
            }
        }
        if self.tokens.is_empty() && !self.is_final {
            return Err(Error::Empty(format!(
                "non-final hypothesis for {} has no tokens",
                self.utterance_id
            )));
        }
        Ok(())
    }
}

/// Fuse the available streams: progressive alignment then weighted voting.
/// A single stream short-circuits to its own tokens. Missing streams simply
/// do not vote.
pub fn aggregate(streams: &[Hypothesis], cfg: &FusionConfig) -> Result<Vec<String>> {
    if streams.is_empty() {
        return Err(Error::Empty("no streams to aggregate".into()));
    }
    let mut seen = BTreeMap::new();
    for h in streams {
        if let Some(prev) = seen.insert(h.source, h.utterance_id.clone()) {
            let _ = prev;
            return Err(Error::DuplicateSource(
                h.source.to_string(),
                h.utterance_id.clone(),
            ));
        }
    }
    if streams.len() == 1 {
        return Ok(streams[0].tokens.clone());
    }
    let grid = align_streams(streams)?;
    Ok(weighted_vote(&grid, cfg))
}
