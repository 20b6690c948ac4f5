//! Keyword lexicon files: UTF-8 TSV `keyword<TAB>domain_tag` (tag optional),
//! one entry per line, `#` comments and blank lines ignored.

use std::path::Path;

use crate::retriever::normalize_keyword;
use crate::{Error, Result};

/// One lexicon line: normalized keyword plus optional domain tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub keyword: String,
    pub domain_tag: Option<String>,
}

/// Parse lexicon text. Keywords are normalized (lowercase, collapsed
/// whitespace); duplicates are NOT removed here so callers can warn and
/// dedupe by first occurrence.
pub fn parse_lexicon(text: &str) -> Result<Vec<LexiconEntry>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (kw_part, tag) = match line.split_once('\t') {
            Some((k, t)) => {
                let t = t.trim();
                (k, if t.is_empty() { None } else { Some(t.to_string()) })
            }
            None => (line, None),
        };
        let keyword = normalize_keyword(kw_part);
        if keyword.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "lexicon line {}: empty keyword",
                lineno + 1
            )));
        }
        out.push(LexiconEntry {
            keyword,
            domain_tag: tag,
        });
    }
    Ok(out)
}

pub fn read_lexicon(path: &Path) -> Result<Vec<LexiconEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_lexicon(&text)
}
