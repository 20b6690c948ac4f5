//! Utterance manifests: JSON-lines records tying ids to references, feature
//! files, and full stream texts or event scripts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ragboost_core::pipeline::Event;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestStreams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acoustic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streams: Option<ManifestStreams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<Event>>,
}

impl ManifestRecord {
    fn has_payload(&self) -> bool {
        let has_stream = self
            .streams
            .as_ref()
            .map(|s| s.acoustic.is_some() || s.llm.is_some())
            .unwrap_or(false);
        has_stream || self.script.as_ref().map(|s| !s.is_empty()).unwrap_or(false)
    }
}

/// Parse manifest text; ids must be unique and every record needs at least
/// one stream or an event script.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line)
            .with_context(|| format!("manifest line {}", lineno + 1))?;
        if !ids.insert(record.id.clone()) {
            bail!("manifest line {}: duplicate id {:?}", lineno + 1, record.id);
        }
        if !record.has_payload() {
            bail!(
                "manifest line {}: record {:?} carries neither streams nor a script",
                lineno + 1,
                record.id
            );
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    parse_manifest(&text)
}

pub fn render_manifest(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
        out.push('\n');
    }
    out
}
