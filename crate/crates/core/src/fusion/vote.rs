//! Weighted slot voting over an alignment grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{AlignmentGrid, Source};

/// Stream weights and tie handling for the voter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Per-source vote weight. The rag stream defaults to the largest weight.
    pub weights: BTreeMap<Source, f64>,
    /// Scale applied to a source's weight when it votes for "no token here".
    pub null_weight_scale: f64,
    /// Tie order: earlier sources win ties. A candidate's rank is the best
    /// rank among the sources voting for it.
    pub tie_priority: Vec<Source>,
    /// Scale token votes by per-token confidences where present. Off by
    /// default: the standard voter uses stream-level weights only.
    pub use_confidence: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(Source::Acoustic, 1.0);
        weights.insert(Source::Llm, 1.0);
        weights.insert(Source::Rag, 1.5);
        FusionConfig {
            weights,
            null_weight_scale: 1.0,
            tie_priority: vec![Source::Rag, Source::Acoustic, Source::Llm],
            use_confidence: false,
        }
    }
}

impl FusionConfig {
    /// Check the configuration; returns non-fatal warnings (e.g. a rag
    /// weight that no longer dominates the other streams).
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        for (s, &w) in &self.weights {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "weight of {s} must be positive"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.null_weight_scale) {
            return Err(Error::InvalidArgument(
                "null_weight_scale must lie in [0, 1]".into(),
            ));
        }
        for s in Source::ALL {
            if !self.tie_priority.contains(&s) {
                return Err(Error::InvalidArgument(format!(
                    "tie_priority must mention {s}"
                )));
            }
            if !self.weights.contains_key(&s) {
                return Err(Error::InvalidArgument(format!("missing weight for {s}")));
            }
        }
        let rag = self.weights[&Source::Rag];
        for s in [Source::Acoustic, Source::Llm] {
            if rag <= self.weights[&s] {
                warnings.push(format!(
                    "rag weight {rag} does not exceed {s} weight {}; retrieval-corrected \
                     output will not dominate ties",
                    self.weights[&s]
                ));
            }
        }
        Ok(warnings)
    }

    pub fn weight(&self, s: Source) -> f64 {
        self.weights.get(&s).copied().unwrap_or(1.0)
    }

    fn priority_rank(&self, s: Source) -> usize {
        self.tie_priority
            .iter()
            .position(|&p| p == s)
            .unwrap_or(usize::MAX)
    }
}

/// Candidate key inside one slot: a token or the null vote.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Candidate {
    Token(String),
    Null,
}

/// Pick each slot's winner by accumulated stream weight. Null votes receive
/// `weight * null_weight_scale`; a winning null emits nothing. Ties go to
/// the candidate whose best-ranked voter comes first in `tie_priority`, then
/// lexicographically (null ordering after every token). With
/// `use_confidence` set, a token vote is further scaled by its per-token
/// confidence when the stream supplied one.
pub fn weighted_vote(grid: &AlignmentGrid, cfg: &FusionConfig) -> Vec<String> {
    let mut out = Vec::new();
    for t in 0..grid.num_slots() {
        let slot = grid.slot(t);
        let mut tally: BTreeMap<Candidate, (f64, usize)> = BTreeMap::new();
        for (cell, &source) in slot.iter().zip(grid.sources()) {
            let (cand, w) = match cell {
                Some(c) => {
                    let mut w = cfg.weight(source);
                    if cfg.use_confidence {
                        w *= c.confidence.unwrap_or(1.0);
                    }
                    (Candidate::Token(c.token.clone()), w)
                }
                None => (
                    Candidate::Null,
                    cfg.weight(source) * cfg.null_weight_scale,
                ),
            };
            let rank = cfg.priority_rank(source);
            let e = tally.entry(cand).or_insert((0.0, usize::MAX));
            e.0 += w;
            e.1 = e.1.min(rank);
        }
        // BTreeMap iteration puts Token(_) before Null and tokens in
        // lexicographic order, so the stable max below realizes the full
        // tie-break: weight desc, then best voter rank, then candidate order.
        let winner = tally
            .iter()
            .max_by(|(ca, (wa, ra)), (cb, (wb, rb))| {
                wa.total_cmp(wb)
                    .then_with(|| rb.cmp(ra))
                    .then_with(|| cb.cmp(ca))
            })
            .map(|(c, _)| c.clone());
        if let Some(Candidate::Token(token)) = winner {
            out.push(token);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::align_streams;
    use super::super::Hypothesis;
    use super::*;

    fn hyp(source: Source, s: &str) -> Hypothesis {
        Hypothesis::new(
            "u",
            source,
            s.split_whitespace().map(str::to_string).collect(),
            1,
        )
        .unwrap()
    }

    fn grid_of(streams: &[Hypothesis]) -> AlignmentGrid {
        align_streams(streams).unwrap()
    }

    #[test]
    fn unanimous_slot_emits_the_token() {
        let grid = grid_of(&[
            hyp(Source::Acoustic, "lights"),
            hyp(Source::Llm, "lights"),
            hyp(Source::Rag, "lights"),
        ]);
        assert_eq!(weighted_vote(&grid, &FusionConfig::default()), vec!["lights"]);
    }

    #[test]
    fn default_weights_let_majority_win() {
        let grid = grid_of(&[
            hyp(Source::Acoustic, "light"),
            hyp(Source::Llm, "light"),
            hyp(Source::Rag, "lights"),
        ]);
        // 1.0 + 1.0 vs 1.5
        assert_eq!(weighted_vote(&grid, &FusionConfig::default()), vec!["light"]);
    }

    #[test]
    fn heavy_rag_weight_overrides_majority() {
        let grid = grid_of(&[
            hyp(Source::Acoustic, "light"),
            hyp(Source::Llm, "light"),
            hyp(Source::Rag, "lights"),
        ]);
        let mut cfg = FusionConfig::default();
        cfg.weights.insert(Source::Rag, 2.5);
        assert_eq!(weighted_vote(&grid, &cfg), vec!["lights"]);
    }

    #[test]
    fn scale_invariance_of_the_argmax() {
        let streams = [
            hyp(Source::Acoustic, "a b c d"),
            hyp(Source::Llm, "a x c"),
            hyp(Source::Rag, "a b y d"),
        ];
        let grid = grid_of(&streams);
        let base = weighted_vote(&grid, &FusionConfig::default());
        for scale in [0.5, 2.0, 7.25] {
            let mut cfg = FusionConfig::default();
            for w in cfg.weights.values_mut() {
                *w *= scale;
            }
            assert_eq!(weighted_vote(&grid, &cfg), base, "scale {scale}");
        }
    }

    #[test]
    fn null_can_win_and_emits_nothing() {
        // Two streams lack the token; with null scale 1.0 their combined
        // null weight (2.0) beats the rag token (1.5).
        let grid = grid_of(&[
            hyp(Source::Acoustic, "a"),
            hyp(Source::Llm, "a"),
            hyp(Source::Rag, "a extra"),
        ]);
        assert_eq!(weighted_vote(&grid, &FusionConfig::default()), vec!["a"]);
    }

    #[test]
    fn confidence_scaling_is_gated_off_by_default() {
        // Acoustic + llm agree on "light" with low confidence; rag says
        // "lights" confidently. The default voter ignores confidences.
        let mut a = hyp(Source::Acoustic, "light");
        a.confidences = Some(vec![0.3]);
        let mut l = hyp(Source::Llm, "light");
        l.confidences = Some(vec![0.3]);
        let r = hyp(Source::Rag, "lights");
        let grid = grid_of(&[a, l, r]);
        let cfg = FusionConfig::default();
        assert_eq!(weighted_vote(&grid, &cfg), vec!["light"]); // 2.0 vs 1.5
        let mut scaled = cfg.clone();
        scaled.use_confidence = true;
        assert_eq!(weighted_vote(&grid, &scaled), vec!["lights"]); // 0.6 vs 1.5
    }

    #[test]
    fn validation_flags_weak_rag_weight() {
        let mut cfg = FusionConfig::default();
        cfg.weights.insert(Source::Rag, 1.0);
        let warnings = cfg.validate().unwrap();
        assert!(!warnings.is_empty());
        assert!(FusionConfig::default().validate().unwrap().is_empty());
    }

    #[test]
    fn non_positive_weight_is_rejected() {
        let mut cfg = FusionConfig::default();
        cfg.weights.insert(Source::Llm, 0.0);
        assert!(cfg.validate().is_err());
    }
}
