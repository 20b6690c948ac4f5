//! Retrieval-driven keyword correction: rewrite hypothesis spans that are
//! close (by character edit distance) to a confidently retrieved keyword.

use std::ops::Range;

use crate::eval::levenshtein_chars;

use super::{Hypothesis, Source};

pub const DEFAULT_TAU_EDIT: f64 = 0.34;
pub const DEFAULT_TAU_SCORE: f64 = 0.6;

/// A retrieved keyword with its cosine score, as fed to the corrector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredKeyword {
    pub text: String,
    pub score: f64,
}

/// One applied (or candidate) span rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordMatch {
    /// Token range in the *input* hypothesis.
    pub span: Range<usize>,
    pub keyword_text: String,
    /// Character edit distance over max joined length, in (0, 1].
    pub edit_ratio: f64,
    pub retrieval_score: f64,
}

/// Rewrite spans of `hyp` that fuzzily match retrieved keywords.
///
/// For every hit with score >= `tau_score`, token n-grams of sizes
/// 1..=keyword word count + 1 are compared against the keyword by
/// length-normalized character Levenshtein distance. Candidates with
/// 0 < ratio <= `tau_edit` compete; a non-overlapping set is chosen greedily
/// by (lowest ratio, highest score, leftmost, shortest). Spans that already
/// match a keyword exactly are left alone. The result always carries
/// `source = rag`.
pub fn keyword_correct(
    hyp: &Hypothesis,
    hits: &[ScoredKeyword],
    tau_edit: f64,
    tau_score: f64,
) -> (Hypothesis, Vec<KeywordMatch>) {
    // Exact occurrences of qualified keywords: any span containing one is
    // already correct and must not be rewritten, or a second pass would eat
    // the words around a keyword placed by the first.
    let mut exact_spans: Vec<Range<usize>> = Vec::new();
    for hit in hits {
        if hit.score < tau_score {
            continue;
        }
        let kw_tokens: Vec<&str> = hit.text.split_whitespace().collect();
        if kw_tokens.is_empty() || kw_tokens.len() > hyp.tokens.len() {
            continue;
        }
        for start in 0..=hyp.tokens.len() - kw_tokens.len() {
            if hyp.tokens[start..start + kw_tokens.len()]
                .iter()
                .zip(&kw_tokens)
                .all(|(a, b)| a == b)
            {
                exact_spans.push(start..start + kw_tokens.len());
            }
        }
    }
    let contains_exact = |span: &Range<usize>| {
        exact_spans
            .iter()
            .any(|occ| occ.start >= span.start && occ.end <= span.end)
    };

    let mut candidates: Vec<KeywordMatch> = Vec::new();
    for hit in hits {
        if hit.score < tau_score {
            continue;
        }
        let kw_words = hit.text.split_whitespace().count();
        if kw_words == 0 {
            continue;
        }
        for n in 1..=kw_words + 1 {
            if n > hyp.tokens.len() {
                break;
            }
            for start in 0..=hyp.tokens.len() - n {
                let span = start..start + n;
                if contains_exact(&span) {
                    continue;
                }
                let joined = hyp.tokens[span.clone()].join(" ");
                let dist = levenshtein_chars(&joined, &hit.text);
                let max_len = joined.chars().count().max(hit.text.chars().count());
                if max_len == 0 {
                    continue;
                }
                let ratio = dist as f64 / max_len as f64;
                if ratio > 0.0 && ratio <= tau_edit {
                    candidates.push(KeywordMatch {
                        span,
                        keyword_text: hit.text.clone(),
                        edit_ratio: ratio,
                        retrieval_score: hit.score,
                    });
                }
            }
        }
    }
    // Greedy selection: best ratio, then score, then leftmost, then shortest,
    // then keyword text for a total order.
    candidates.sort_by(|a, b| {
        a.edit_ratio
            .total_cmp(&b.edit_ratio)
            .then_with(|| b.retrieval_score.total_cmp(&a.retrieval_score))
            .then_with(|| a.span.start.cmp(&b.span.start))
            .then_with(|| a.span.end.cmp(&b.span.end))
            .then_with(|| a.keyword_text.cmp(&b.keyword_text))
    });
    let mut taken = vec![false; hyp.tokens.len()];
    let mut applied: Vec<KeywordMatch> = Vec::new();
    for c in candidates {
        if c.span.clone().any(|i| taken[i]) {
            continue;
        }
        for i in c.span.clone() {
            taken[i] = true;
        }
        applied.push(c);
    }
    applied.sort_by_key(|m| m.span.start);

    let mut tokens = Vec::with_capacity(hyp.tokens.len());
    let mut next_match = applied.iter().peekable();
    let mut i = 0;
    while i < hyp.tokens.len() {
        if let Some(m) = next_match.peek() {
            if m.span.start == i {
                tokens.extend(m.keyword_text.split_whitespace().map(str::to_string));
                i = m.span.end;
                next_match.next();
                continue;
            }
        }
        tokens.push(hyp.tokens[i].clone());
        i += 1;
    }

    let corrected = Hypothesis {
        utterance_id: hyp.utterance_id.clone(),
        source: Source::Rag,
        tokens,
        confidences: None,
        revision: hyp.revision,
        is_final: hyp.is_final,
    };
    (corrected, applied)
}
