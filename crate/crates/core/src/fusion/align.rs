//! Pairwise token alignment and progressive multi-stream alignment.

use std::collections::BTreeMap;

use crate::{Error, Result};

use super::{Hypothesis, Source};

/// One aligned slot of a pairwise alignment.
pub type AlignedPair = (Option<String>, Option<String>);

#[derive(Debug, Clone, PartialEq)]
pub struct PairAlignment {
    pub pairs: Vec<AlignedPair>,
    /// Unit-cost edit distance realized by the alignment.
    pub cost: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Step {
    Diag,
    Del,
    Ins,
}

/// Minimal-edit-cost alignment of two token sequences with unit costs.
/// Traceback preference on ties: match/substitute, then delete (token from
/// `a` alone), then insert (token from `b` alone).
pub fn align_pair(a: &[String], b: &[String]) -> PairAlignment {
    let n = a.len();
    let m = b.len();
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    for i in 0..=n {
        d[idx(i, 0)] = i;
    }
    for j in 0..=m {
        d[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[idx(i, j)] = (d[idx(i - 1, j - 1)] + cost)
                .min(d[idx(i - 1, j)] + 1)
                .min(d[idx(i, j - 1)] + 1);
        }
    }
    let mut steps = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            if d[idx(i, j)] == d[idx(i - 1, j - 1)] + cost {
                steps.push(Step::Diag);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[idx(i, j)] == d[idx(i - 1, j)] + 1 {
            steps.push(Step::Del);
            i -= 1;
        } else {
            steps.push(Step::Ins);
            j -= 1;
        }
    }
    steps.reverse();
    let mut pairs = Vec::with_capacity(steps.len());
    let (mut i, mut j) = (0usize, 0usize);
    for s in steps {
        match s {
            Step::Diag => {
                pairs.push((Some(a[i].clone()), Some(b[j].clone())));
                i += 1;
                j += 1;
            }
            Step::Del => {
                pairs.push((Some(a[i].clone()), None));
                i += 1;
            }
            Step::Ins => {
                pairs.push((None, Some(b[j].clone())));
                j += 1;
            }
        }
    }
    PairAlignment {
        pairs,
        cost: d[idx(n, m)],
    }
}

/// One filled grid cell: a token and, when the stream supplied them, its
/// confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub token: String,
    pub confidence: Option<f64>,
}

/// Slot-aligned multi-stream token lattice. Every participating source has a
/// cell (token or null) in every slot; stripping the nulls from one source's
/// column reproduces that source's token sequence in order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGrid {
    sources: Vec<Source>,
    /// slots[t][s] is the cell of sources[s] at slot t.
    slots: Vec<Vec<Option<GridCell>>>,
}

impl AlignmentGrid {
    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Cells of one slot, parallel to [`AlignmentGrid::sources`].
    pub fn slot(&self, t: usize) -> &[Option<GridCell>] {
        &self.slots[t]
    }

    /// Reconstruct one source's token sequence by stripping nulls.
    pub fn column(&self, source: Source) -> Option<Vec<String>> {
        let s = self.sources.iter().position(|&x| x == source)?;
        Some(
            self.slots
                .iter()
                .filter_map(|slot| slot[s].as_ref().map(|c| c.token.clone()))
                .collect(),
        )
    }
}

/// Cost of placing `token` into an existing slot: 0 on a match with any
/// non-null cell, 1 otherwise (substitution against the slot's consensus).
fn slot_match_cost(slot: &[Option<GridCell>], token: &str) -> f64 {
    let mut any = false;
    for cell in slot.iter().flatten() {
        any = true;
        if cell.token == token {
            return 0.0;
        }
    }
    if any {
        1.0
    } else {
        0.5
    }
}

/// Cost of pairing a token or a slot with null during grid alignment.
const NULL_COST: f64 = 0.5;

fn cell_of(hyp: &Hypothesis, j: usize) -> GridCell {
    GridCell {
        token: hyp.tokens[j].clone(),
        confidence: hyp.confidences.as_ref().map(|c| c[j]),
    }
}

/// Align streams progressively in canonical source order (acoustic, llm,
/// rag): the grid starts from the first stream; each next stream is aligned
/// against the grid's slots, with null pairings costing [`NULL_COST`].
pub fn align_streams(hyps: &[Hypothesis]) -> Result<AlignmentGrid> {
    if hyps.is_empty() {
        return Err(Error::Empty("no hypotheses to align".into()));
    }
    let utterance = &hyps[0].utterance_id;
    let mut by_source: BTreeMap<Source, &Hypothesis> = BTreeMap::new();
    for h in hyps {
        if h.utterance_id != *utterance {
            return Err(Error::UtteranceMismatch(
                utterance.clone(),
                h.utterance_id.clone(),
            ));
        }
        if by_source.insert(h.source, h).is_some() {
            return Err(Error::DuplicateSource(
                h.source.to_string(),
                utterance.clone(),
            ));
        }
    }
    let ordered: Vec<&Hypothesis> = Source::ALL
        .iter()
        .filter_map(|s| by_source.get(s).copied())
        .collect();

    let first = ordered[0];
    let mut grid = AlignmentGrid {
        sources: vec![first.source],
        slots: (0..first.tokens.len())
            .map(|j| vec![Some(cell_of(first, j))])
            .collect(),
    };
    for h in &ordered[1..] {
        grid = align_into_grid(grid, h);
    }
    Ok(grid)
}

fn align_into_grid(grid: AlignmentGrid, hyp: &Hypothesis) -> AlignmentGrid {
    let n = grid.slots.len();
    let m = hyp.tokens.len();
    let width = grid.sources.len();
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    let mut d = vec![0.0f64; (n + 1) * (m + 1)];
    for i in 1..=n {
        d[idx(i, 0)] = i as f64 * NULL_COST;
    }
    for j in 1..=m {
        d[idx(0, j)] = j as f64 * NULL_COST;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[idx(i - 1, j - 1)] + slot_match_cost(&grid.slots[i - 1], &hyp.tokens[j - 1]);
            let del = d[idx(i - 1, j)] + NULL_COST; // slot gets null for new stream
            let ins = d[idx(i, j - 1)] + NULL_COST; // fresh slot for new token
            d[idx(i, j)] = diag.min(del).min(ins);
        }
    }
    let mut steps = Vec::new();
    let (mut i, mut j) = (n, m);
    let eps = 1e-9;
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diag = d[idx(i - 1, j - 1)] + slot_match_cost(&grid.slots[i - 1], &hyp.tokens[j - 1]);
            if (d[idx(i, j)] - diag).abs() < eps {
                steps.push(Step::Diag);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && (d[idx(i, j)] - (d[idx(i - 1, j)] + NULL_COST)).abs() < eps {
            steps.push(Step::Del);
            i -= 1;
        } else {
            steps.push(Step::Ins);
            j -= 1;
        }
    }
    steps.reverse();

    let mut sources = grid.sources.clone();
    sources.push(hyp.source);
    let mut slots = Vec::with_capacity(steps.len());
    let (mut i, mut j) = (0usize, 0usize);
    for s in steps {
        match s {
            Step::Diag => {
                let mut slot = grid.slots[i].clone();
                slot.push(Some(cell_of(hyp, j)));
                slots.push(slot);
                i += 1;
                j += 1;
            }
            Step::Del => {
                let mut slot = grid.slots[i].clone();
                slot.push(None);
                slots.push(slot);
                i += 1;
            }
            Step::Ins => {
                let mut slot = vec![None; width];
                slot.push(Some(cell_of(hyp, j)));
                slots.push(slot);
                j += 1;
            }
        }
    }
    AlignmentGrid { sources, slots }
}
