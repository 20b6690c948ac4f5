//! Hashed character n-gram features for the text tower.

use crate::linalg::normalize_in_place;
use crate::rng::fnv1a;
use crate::{Error, Result};

use super::TextFeatures;

/// Deterministic text featurizer: counts of character n-grams (with one `#`
/// boundary pad on each side) hashed into `dim` buckets, L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeaturizer {
    pub ngram: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for TextFeaturizer {
    fn default() -> Self {
        TextFeaturizer {
            ngram: 3,
            dim: 1024,
            seed: 0,
        }
    }
}

impl TextFeaturizer {
    pub fn featurize(&self, keyword: &str) -> Result<TextFeatures> {
        featurize_text(keyword, self.ngram, self.dim, self.seed)
    }
}

/// Normalize a keyword: lowercase, trim, collapse internal whitespace.
pub fn normalize_keyword(keyword: &str) -> String {
    keyword
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Bucket index of one n-gram under the seeded FNV-1a hash.
pub(crate) fn ngram_bucket(gram: &str, dim: usize, seed: u64) -> usize {
    (fnv1a(gram.as_bytes(), seed) % dim as u64) as usize
}

/// Accumulate hashed n-gram counts of `text` into `counts` (length `dim`).
/// The text is padded with one `#` on each side; if the padded text is
/// shorter than `n` it contributes a single whole-string gram.
pub(crate) fn accumulate_ngrams(text: &str, n: usize, dim: usize, seed: u64, counts: &mut [f64]) {
    let padded: Vec<char> = std::iter::once('#')
        .chain(text.chars())
        .chain(std::iter::once('#'))
        .collect();
    if padded.len() < n {
        let gram: String = padded.iter().collect();
        counts[ngram_bucket(&gram, dim, seed)] += 1.0;
        return;
    }
    for window in padded.windows(n) {
        let gram: String = window.iter().collect();
        counts[ngram_bucket(&gram, dim, seed)] += 1.0;
    }
}

/// Featurize one keyword into hashed n-gram counts.
pub fn featurize_text(keyword: &str, n: usize, dim: usize, seed: u64) -> Result<TextFeatures> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "n-gram order and dimension must be positive".into(),
        ));
    }
    let normalized = normalize_keyword(keyword);
    if normalized.is_empty() {
        return Err(Error::Empty(format!(
            "keyword {keyword:?} is empty after normalization"
        )));
    }
    let mut counts = vec![0.0; dim];
    accumulate_ngrams(&normalized, n, dim, seed, &mut counts);
    normalize_in_place(&mut counts, "text features")?;
    Ok(TextFeatures::new(normalized, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, l2_norm};

    #[test]
    fn two_char_keyword_hits_two_buckets() {
        // "aa" with n=3 pads to "#aa#", giving exactly {"#aa", "aa#"}.
        let tf = featurize_text("aa", 3, 64, 7).unwrap();
        let nonzero: Vec<usize> = (0..64).filter(|&i| tf.vector()[i] != 0.0).collect();
        let b1 = ngram_bucket("#aa", 64, 7);
        let b2 = ngram_bucket("aa#", 64, 7);
        let mut expected = vec![b1, b2];
        expected.sort_unstable();
        expected.dedup();
        assert_eq!(nonzero, expected);
        assert!((l2_norm(tf.vector()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_keyword_same_seed_is_identical() {
        let a = featurize_text("Lights ON", 3, 1024, 11).unwrap();
        let b = featurize_text("lights  on", 3, 1024, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.keyword_text, "lights on");
    }

    #[test]
    fn close_keywords_are_not_identical() {
        let a = featurize_text("abc", 3, 1024, 0).unwrap();
        let b = featurize_text("abd", 3, 1024, 0).unwrap();
        let cos = dot(a.vector(), b.vector());
        assert!(cos < 1.0 - 1e-9, "cosine {cos} should be strictly below 1");
        // Shared gram "#ab" keeps them positively correlated.
        assert!(cos > 0.0);
    }

    #[test]
    fn empty_after_normalization_is_rejected() {
        assert!(featurize_text("   ", 3, 64, 0).is_err());
    }

    #[test]
    fn single_char_keyword_works() {
        let tf = featurize_text("a", 3, 64, 0).unwrap();
        assert!((l2_norm(tf.vector()) - 1.0).abs() < 1e-12);
    }
}
