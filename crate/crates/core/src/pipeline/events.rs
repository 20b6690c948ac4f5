//! JSON-lines wire formats for stream events and engine outputs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::eval::normalize_text;
use crate::fusion::Source;
use crate::{Error, Result};

/// One input event. `partial` carries either a token array or raw text;
/// both are normalized with the shared scoring normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Event {
    Open {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features_path: Option<PathBuf>,
    },
    Partial {
        id: String,
        source: Source,
        revision: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tokens: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    Finalize {
        id: String,
    },
}

impl Event {
    pub fn parse_line(line: &str) -> Result<Event> {
        serde_json::from_str(line)
            .map_err(|e| Error::InvalidArgument(format!("bad event line: {e}")))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    pub fn id(&self) -> &str {
        match self {
            Event::Open { id, .. } | Event::Partial { id, .. } | Event::Finalize { id } => id,
        }
    }

    /// Normalized tokens of a partial: token arrays are re-normalized per
    /// token, text is normalized wholesale.
    pub fn partial_tokens(&self) -> Result<Vec<String>> {
        match self {
            Event::Partial { tokens, text, .. } => match (tokens, text) {
                (Some(_), Some(_)) => Err(Error::InvalidArgument(
                    "partial carries both tokens and text".into(),
                )),
                (None, None) => Err(Error::InvalidArgument(
                    "partial carries neither tokens nor text".into(),
                )),
                (Some(toks), None) => Ok(toks.iter().flat_map(|t| normalize_text(t)).collect()),
                (None, Some(text)) => Ok(normalize_text(text)),
            },
            _ => Err(Error::InvalidArgument("not a partial event".into())),
        }
    }
}

/// One output record: a fused partial or a final transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutputRecord {
    Fused {
        id: String,
        revision_set: BTreeMap<String, u32>,
        tokens: Vec<String>,
    },
    Final {
        id: String,
        tokens: Vec<String>,
        text: String,
    },
}

impl OutputRecord {
    pub fn parse_line(line: &str) -> Result<OutputRecord> {
        serde_json::from_str(line)
            .map_err(|e| Error::InvalidArgument(format!("bad output line: {e}")))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("output serializes")
    }
}
