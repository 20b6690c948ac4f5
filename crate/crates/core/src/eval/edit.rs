//! Text normalization and edit-distance based error rates.

use serde::{Deserialize, Serialize};

/// Normalize a transcript for scoring: lowercase, strip punctuation except
/// intra-word apostrophes and hyphens, collapse whitespace, split on spaces.
///
/// A `'` or `-` survives only between two alphanumeric characters; any other
/// non-alphanumeric character becomes a separator.
pub fn normalize_text(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                out.push(lc);
            }
        } else if (c == '\'' || c == '-')
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_alphanumeric()
            && chars[i + 1].is_alphanumeric()
        {
            out.push(c);
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().map(str::to_string).collect()
}

/// Word-level edit counts against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub hits: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Levenshtein DP over tokens with a deterministic traceback
/// (match/substitute preferred over deletion, deletion over insertion) to
/// split the distance into substitution/insertion/deletion counts.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[idx(i, 0)] = i;
    }
    for j in 0..=m {
        d[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = d[idx(i - 1, j - 1)] + cost;
            let del = d[idx(i - 1, j)] + 1;
            let ins = d[idx(i, j - 1)] + 1;
            d[idx(i, j)] = diag.min(del).min(ins);
        }
    }
    let mut counts = EditCounts {
        ref_len: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[idx(i, j)] == d[idx(i - 1, j - 1)] + cost {
                if cost == 0 {
                    counts.hits += 1;
                } else {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[idx(i, j)] == d[idx(i - 1, j)] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Plain Levenshtein distance over characters.
pub fn levenshtein_chars(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        curr[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            curr[j] = (prev[j - 1] + cost).min(prev[j] + 1).min(curr[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Word error rate. An empty reference with an empty hypothesis scores 0;
/// an empty reference with a non-empty hypothesis counts every hypothesis
/// token as an insertion over a guard denominator of 1 (callers bucket such
/// rows separately at the corpus level).
pub fn wer(reference: &[String], hypothesis: &[String]) -> (f64, EditCounts) {
    let counts = edit_counts(reference, hypothesis);
    let rate = if counts.ref_len == 0 {
        counts.errors() as f64
    } else {
        counts.errors() as f64 / counts.ref_len as f64
    };
    (rate, counts)
}

/// Character-level edit statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CharErrors {
    pub distance: usize,
    pub ref_len: usize,
}

/// Character error rate over normalized strings (spaces count as
/// characters). Degenerate cases mirror [`wer`].
pub fn cer(reference: &str, hypothesis: &str) -> (f64, CharErrors) {
    let distance = levenshtein_chars(reference, hypothesis);
    let ref_len = reference.chars().count();
    let rate = if ref_len == 0 {
        distance as f64
    } else {
        distance as f64 / ref_len as f64
    };
    (rate, CharErrors { distance, ref_len })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Hello,  WORLD!"), toks("hello world"));
        assert_eq!(normalize_text("don't stop"), toks("don't stop"));
        assert_eq!(normalize_text("state-of-the-art."), toks("state-of-the-art"));
        assert_eq!(normalize_text(""), Vec::<String>::new());
        assert_eq!(normalize_text("'quoted' -dash"), toks("quoted dash"));
    }

    #[test]
    fn wer_identity_is_zero() {
        let r = toks("a b c");
        let (rate, counts) = wer(&r, &r);
        assert_eq!(rate, 0.0);
        assert_eq!(counts.hits, 3);
        assert_eq!(counts.errors(), 0);
    }

    #[test]
    fn wer_substitution_case() {
        let (rate, counts) = wer(&toks("hello world"), &toks("hello word"));
        assert_eq!(rate, 0.5);
        assert_eq!(counts.substitutions, 1);
        assert_eq!(counts.hits + counts.substitutions + counts.deletions, 2);
    }

    #[test]
    fn wer_insertion_case() {
        let (rate, counts) = wer(&toks("a b"), &toks("a x b y"));
        assert_eq!(rate, 1.0);
        assert_eq!(counts.insertions, 2);
        assert_eq!(counts.hits, 2);
    }

    #[test]
    fn wer_empty_reference() {
        let (rate, counts) = wer(&[], &[]);
        assert_eq!(rate, 0.0);
        assert_eq!(counts.ref_len, 0);
        let (rate, counts) = wer(&[], &toks("x y z"));
        assert_eq!(rate, 3.0);
        assert_eq!(counts.insertions, 3);
    }

    #[test]
    fn counts_invariant_holds() {
        let (_r, c) = wer(&toks("the cat sat on the mat"), &toks("a cat on mat hat"));
        assert_eq!(c.hits + c.substitutions + c.deletions, c.ref_len);
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc").0, 0.0);
        let (rate, _) = cer("abc", "abd");
        assert!((rate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer("ab", "").0, 1.0);
    }

    #[test]
    fn distance_is_symmetric() {
        let a = toks("one two three four");
        let b = toks("one three four five");
        let da = edit_counts(&a, &b).errors();
        let db = edit_counts(&b, &a).errors();
        assert_eq!(da, db);
    }
}
