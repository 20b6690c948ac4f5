//! Semantic-consistency scoring and corpus-level reporting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::{Error, Result};

use super::edit::{cer, normalize_text, wer, EditCounts};
use super::embedder::SentenceEmbedder;

/// Cosine similarity of the embedder's vectors for the two texts (higher is
/// better). Fails if the embedder fails or returns a non-unit vector.
pub fn sem(reference: &str, hypothesis: &str, embedder: &dyn SentenceEmbedder) -> Result<f64> {
    let a = checked_embed(reference, embedder)?;
    let b = checked_embed(hypothesis, embedder)?;
    Ok(dot(&a, &b))
}

fn checked_embed(text: &str, embedder: &dyn SentenceEmbedder) -> Result<Vec<f64>> {
    let v = embedder.embed(text)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Embedder(format!(
            "{} returned a non-finite vector",
            embedder.name()
        )));
    }
    let norm = dot(&v, &v).sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Embedder(format!(
            "{} returned a vector with norm {norm}",
            embedder.name()
        )));
    }
    Ok(v)
}

/// Per-utterance metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRow {
    pub id: String,
    pub wer: f64,
    pub cer: f64,
    /// None when the embedder failed for this row.
    pub sem: Option<f64>,
    pub counts: EditCounts,
    pub char_distance: usize,
    pub char_ref_len: usize,
    /// Empty-reference rows are excluded from corpus totals.
    pub empty_reference: bool,
}

/// Corpus-level aggregates. WER/CER are micro-averaged: total errors over
/// total reference length, never the mean of per-row rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTotals {
    pub wer: f64,
    pub cer: f64,
    pub mean_sem: Option<f64>,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub hits: usize,
    pub ref_words: usize,
    pub char_errors: usize,
    pub ref_chars: usize,
    pub utterances: usize,
    pub empty_reference_utterances: usize,
    pub sem_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub embedder: String,
    pub rows: Vec<UtteranceRow>,
    pub corpus: CorpusTotals,
}

/// Score every (id, reference, hypothesis) triple and aggregate. Rows come
/// back ordered by id; duplicate ids are an error.
pub fn evaluate_corpus(
    pairs: &[(String, String, String)],
    embedder: &dyn SentenceEmbedder,
) -> Result<EvalReport> {
    let mut ids = BTreeSet::new();
    for (id, _, _) in pairs {
        if !ids.insert(id.clone()) {
            return Err(Error::InvalidArgument(format!("duplicate utterance id {id:?}")));
        }
    }
    let mut sorted: Vec<&(String, String, String)> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut rows = Vec::with_capacity(sorted.len());
    let mut totals = CorpusTotals {
        wer: 0.0,
        cer: 0.0,
        mean_sem: None,
        substitutions: 0,
        insertions: 0,
        deletions: 0,
        hits: 0,
        ref_words: 0,
        char_errors: 0,
        ref_chars: 0,
        utterances: sorted.len(),
        empty_reference_utterances: 0,
        sem_missing: 0,
    };
    let mut sem_sum = 0.0;
    let mut sem_count = 0usize;
    for (id, reference, hypothesis) in sorted {
        let ref_tokens = normalize_text(reference);
        let hyp_tokens = normalize_text(hypothesis);
        let (row_wer, counts) = wer(&ref_tokens, &hyp_tokens);
        let ref_joined = ref_tokens.join(" ");
        let hyp_joined = hyp_tokens.join(" ");
        let (row_cer, chars) = cer(&ref_joined, &hyp_joined);
        let row_sem = match sem(reference, hypothesis, embedder) {
            Ok(v) => {
                sem_sum += v;
                sem_count += 1;
                Some(v)
            }
            Err(_) => {
                totals.sem_missing += 1;
                None
            }
        };
        let empty_reference = counts.ref_len == 0;
        if empty_reference {
            totals.empty_reference_utterances += 1;
        } else {
            totals.substitutions += counts.substitutions;
            totals.insertions += counts.insertions;
            totals.deletions += counts.deletions;
            totals.hits += counts.hits;
            totals.ref_words += counts.ref_len;
            totals.char_errors += chars.distance;
            totals.ref_chars += chars.ref_len;
        }
        rows.push(UtteranceRow {
            id: id.clone(),
            wer: row_wer,
            cer: row_cer,
            sem: row_sem,
            counts,
            char_distance: chars.distance,
            char_ref_len: chars.ref_len,
            empty_reference,
        });
    }
    totals.wer = if totals.ref_words == 0 {
        0.0
    } else {
        (totals.substitutions + totals.insertions + totals.deletions) as f64
            / totals.ref_words as f64
    };
    totals.cer = if totals.ref_chars == 0 {
        0.0
    } else {
        totals.char_errors as f64 / totals.ref_chars as f64
    };
    totals.mean_sem = if sem_count > 0 {
        Some(sem_sum / sem_count as f64)
    } else {
        None
    };
    Ok(EvalReport {
        embedder: embedder.name().to_string(),
        rows,
        corpus: totals,
    })
}

impl EvalReport {
    /// Machine-readable rendering; [`EvalReport::from_json`] restores it
    /// exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("bad report JSON: {e}")))
    }

    /// Human-readable aligned-column rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("embedder: {}\n", self.embedder));
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>8} {:>5} {:>5} {:>5}\n",
            "utterance", "WER", "CER", "SEM", "S", "I", "D"
        ));
        for row in &self.rows {
            let sem = row
                .sem
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into());
            let tag = if row.empty_reference { " (empty ref)" } else { "" };
            out.push_str(&format!(
                "{:<24} {:>8.4} {:>8.4} {:>8} {:>5} {:>5} {:>5}{}\n",
                row.id,
                row.wer,
                row.cer,
                sem,
                row.counts.substitutions,
                row.counts.insertions,
                row.counts.deletions,
                tag,
            ));
        }
        let mean_sem = self
            .corpus
            .mean_sem
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<24} {:>8.4} {:>8.4} {:>8} {:>5} {:>5} {:>5}\n",
            "corpus",
            self.corpus.wer,
            self.corpus.cer,
            mean_sem,
            self.corpus.substitutions,
            self.corpus.insertions,
            self.corpus.deletions,
        ));
        out.push_str(&format!(
            "utterances: {} (empty refs: {}, sem missing: {})\n",
            self.corpus.utterances,
            self.corpus.empty_reference_utterances,
            self.corpus.sem_missing
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::embedder::LocalHashEmbedder;
    use super::*;

    struct OrthoEmbedder;

    impl SentenceEmbedder for OrthoEmbedder {
        fn name(&self) -> &str {
            "ortho"
        }
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>> {
            if text.contains('a') {
                Ok(vec![1.0, 0.0])
            } else {
                Ok(vec![0.0, 1.0])
            }
        }
    }

    struct FailingEmbedder;

    impl SentenceEmbedder for FailingEmbedder {
        fn name(&self) -> &str {
            "failing"
        }
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, _text: &str) -> Result<Vec<f64>> {
            Err(Error::Embedder("down".into()))
        }
    }

    #[test]
    fn sem_of_identical_text_is_one() {
        let e = LocalHashEmbedder::default();
        let v = sem("the quick brown fox", "the quick brown fox", &e).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sem_orthogonal_stub_is_zero() {
        let v = sem("abc", "xyz", &OrthoEmbedder).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn corpus_wer_is_micro_averaged() {
        // Two utterances with ref lengths 2 and 8, errors 1 and 0: corpus
        // WER is 1/10, not the mean of per-row rates.
        let pairs = vec![
            ("u1".to_string(), "a b".to_string(), "a x".to_string()),
            (
                "u2".to_string(),
                "c d e f g h i j".to_string(),
                "c d e f g h i j".to_string(),
            ),
        ];
        let report = evaluate_corpus(&pairs, &LocalHashEmbedder::default()).unwrap();
        assert!((report.corpus.wer - 0.1).abs() < 1e-12);
        assert!((report.rows[0].wer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_corpus_scores_zero_and_one() {
        let pairs = vec![
            ("a".to_string(), "hello there".to_string(), "hello there".to_string()),
            ("b".to_string(), "ok".to_string(), "ok".to_string()),
        ];
        let report = evaluate_corpus(&pairs, &LocalHashEmbedder::default()).unwrap();
        assert_eq!(report.corpus.wer, 0.0);
        assert_eq!(report.corpus.cer, 0.0);
        assert!((report.corpus.mean_sem.unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let pairs = vec![
            ("a".to_string(), "x".to_string(), "x".to_string()),
            ("a".to_string(), "y".to_string(), "y".to_string()),
        ];
        assert!(evaluate_corpus(&pairs, &LocalHashEmbedder::default()).is_err());
    }

    #[test]
    fn embedder_failure_marks_sem_missing() {
        let pairs = vec![("a".to_string(), "x y".to_string(), "x y".to_string())];
        let report = evaluate_corpus(&pairs, &FailingEmbedder).unwrap();
        assert_eq!(report.rows[0].sem, None);
        assert_eq!(report.corpus.sem_missing, 1);
        assert_eq!(report.corpus.mean_sem, None);
        assert_eq!(report.corpus.wer, 0.0);
    }

    #[test]
    fn empty_reference_is_bucketed() {
        let pairs = vec![
            ("a".to_string(), "".to_string(), "spurious output".to_string()),
            ("b".to_string(), "x y".to_string(), "x y".to_string()),
        ];
        let report = evaluate_corpus(&pairs, &LocalHashEmbedder::default()).unwrap();
        assert_eq!(report.corpus.empty_reference_utterances, 1);
        assert_eq!(report.corpus.wer, 0.0);
        assert_eq!(report.rows[0].wer, 2.0); // insertions over the guard denominator
    }

    #[test]
    fn json_round_trip_is_exact() {
        let pairs = vec![
            ("u1".to_string(), "a b c".to_string(), "a x c".to_string()),
            ("u2".to_string(), "d e".to_string(), "d".to_string()),
        ];
        let report = evaluate_corpus(&pairs, &LocalHashEmbedder::default()).unwrap();
        let parsed = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn corpus_wer_equals_independently_summed_counts() {
        let pairs = vec![
            ("u1".to_string(), "the cat sat".to_string(), "the bat sat down".to_string()),
            ("u2".to_string(), "open the door".to_string(), "open door".to_string()),
            ("u3".to_string(), "x y z".to_string(), "x y z".to_string()),
        ];
        let report = evaluate_corpus(&pairs, &LocalHashEmbedder::default()).unwrap();
        let mut errors = 0usize;
        let mut ref_words = 0usize;
        for row in report.rows.iter().filter(|r| !r.empty_reference) {
            errors += row.counts.errors();
            ref_words += row.counts.ref_len;
        }
        assert_eq!(report.corpus.wer, errors as f64 / ref_words as f64);
        assert_eq!(
            report.corpus.substitutions + report.corpus.insertions + report.corpus.deletions,
            errors
        );
        assert_eq!(report.corpus.ref_words, ref_words);
    }

    #[test]
    fn rows_are_ordered_by_id() {
        let pairs = vec![
            ("z".to_string(), "a".to_string(), "a".to_string()),
            ("a".to_string(), "b".to_string(), "b".to_string()),
        ];
        let report = evaluate_corpus(&pairs, &LocalHashEmbedder::default()).unwrap();
        assert_eq!(report.rows[0].id, "a");
        assert_eq!(report.rows[1].id, "z");
    }
}
