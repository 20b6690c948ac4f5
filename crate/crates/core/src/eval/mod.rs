//! Transcript evaluation: WER/CER, semantic consistency, corpus reports.

mod edit;
mod embedder;
mod report;

pub use edit::{
    cer, edit_counts, levenshtein_chars, normalize_text, wer, CharErrors, EditCounts,
};
pub use embedder::{HttpEmbedder, LocalHashEmbedder, SentenceEmbedder};
pub use report::{evaluate_corpus, sem, CorpusTotals, EvalReport, UtteranceRow};
