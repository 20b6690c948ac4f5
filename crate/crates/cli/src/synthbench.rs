//! Synthetic paired benchmark: keyword lexicon, keyword-conditioned
//! pseudo-audio features, a reference corpus with planted keywords, and
//! three corrupted recognition streams per utterance.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use ragboost_core::eval::edit_counts;
use ragboost_core::fusion::{align_pair, Source};
use ragboost_core::linalg::{normalize_in_place, Mat};
use ragboost_core::pipeline::Event;
use ragboost_core::retriever::{write_features, FeatureSequence};
use ragboost_core::rng::{fnv1a, sub_rng, sub_seed};

use crate::config::PathsSection;
use crate::manifest::{render_manifest, ManifestRecord, ManifestStreams};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_keywords: usize,
    pub samples_per_keyword: usize,
    pub held_out_queries: usize,
    pub n_utterances: usize,
    pub feat_dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Per-frame noise magnitude relative to the unit prototype.
    pub noise: f64,
    pub wer_acoustic: f64,
    pub wer_llm: f64,
    pub wer_rag: f64,
    /// Corruption probability for keyword tokens (elevated).
    pub keyword_corruption: f64,
    pub filler_vocab: usize,
    pub fillers_min: usize,
    pub fillers_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_keywords: 500,
            samples_per_keyword: 20,
            held_out_queries: 200,
            n_utterances: 200,
            feat_dim: 40,
            frames_min: 8,
            frames_max: 16,
            noise: 0.5,
            wer_acoustic: 0.20,
            wer_llm: 0.20,
            wer_rag: 0.10,
            keyword_corruption: 0.5,
            filler_vocab: 300,
            fillers_min: 14,
            fillers_max: 24,
        }
    }
}

impl SynthConfig {
    pub fn stream_rate(&self, source: Source) -> f64 {
        match source {
            Source::Acoustic => self.wer_acoustic,
            Source::Llm => self.wer_llm,
            Source::Rag => self.wer_rag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_keywords < 11 {
            bail!("need at least 11 keywords for contrastive training");
        }
        if self.frames_min > self.frames_max || self.frames_min == 0 {
            bail!("bad frame range");
        }
        if self.fillers_min > self.fillers_max || self.fillers_min < 2 {
            bail!("bad filler range");
        }
        for r in [self.wer_acoustic, self.wer_llm, self.wer_rag, self.keyword_corruption] {
            if !(0.0..=1.0).contains(&r) {
                bail!("rates must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub id: String,
    pub reference_tokens: Vec<String>,
    pub keyword_idx: usize,
    pub keyword_span: Range<usize>,
    pub features: FeatureSequence,
    pub streams: BTreeMap<Source, Vec<String>>,
}

impl SynthUtterance {
    pub fn reference_text(&self) -> String {
        self.reference_tokens.join(" ")
    }
}

#[derive(Debug)]
pub struct SynthBench {
    pub config: SynthConfig,
    pub keywords: Vec<String>,
    pub train: Vec<(FeatureSequence, String)>,
    /// Held-out retrieval queries: fresh features paired with keyword index.
    pub held_out: Vec<(FeatureSequence, usize)>,
    pub utterances: Vec<SynthUtterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedMetrics {
    pub configured_wer: BTreeMap<String, f64>,
    pub measured_wer: BTreeMap<String, f64>,
    pub utterances: usize,
    pub keyword_tokens: usize,
}

const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn random_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    w
}

/// Distinct vocabulary of `n` entries, each made of `words` words of
/// `syllables` syllables.
fn build_vocab(rng: &mut ChaCha8Rng, n: usize, syllables: usize, max_words: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let words = 1 + rng.random_range(0..max_words);
        let entry: Vec<String> = (0..words).map(|_| random_word(rng, syllables)).collect();
        let entry = entry.join(" ");
        if seen.insert(entry.clone()) {
            out.push(entry);
        }
    }
    out
}

fn prototype(keyword: &str, bench_seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        sub_seed(bench_seed, "proto") ^ fnv1a(keyword.as_bytes(), 0),
    );
    let mut p: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    normalize_in_place(&mut p, "prototype").expect("non-zero prototype");
    p
}

fn sample_features(
    id: String,
    proto: &[f64],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> FeatureSequence {
    let t = rng.random_range(cfg.frames_min..=cfg.frames_max);
    let dim = proto.len();
    let mut data = Vec::with_capacity(t * dim);
    for _ in 0..t {
        let mut noise: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        normalize_in_place(&mut noise, "noise").expect("non-zero noise");
        let mut frame: Vec<f64> = proto
            .iter()
            .zip(&noise)
            .map(|(p, n)| p + cfg.noise * n)
            .collect();
        normalize_in_place(&mut frame, "frame").expect("non-zero frame");
        data.extend_from_slice(&frame);
    }
    FeatureSequence::new(id, Mat::from_vec(t, dim, data).expect("shape")).expect("finite")
}

fn corrupt_word(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return word.to_string();
    }
    let pos = rng.random_range(0..chars.len());
    let letters = "abcdefghijklmnopqrstuvwxyz";
    loop {
        let c = letters
            .chars()
            .nth(rng.random_range(0..letters.len()))
            .unwrap();
        if c != chars[pos] {
            chars[pos] = c;
            break;
        }
    }
    chars.into_iter().collect()
}

/// Corrupt a reference into one stream. Keyword tokens are corrupted (by a
/// single-character substitution) at the elevated rate; filler tokens are
/// corrupted at a compensated base rate so the expected stream WER matches
/// `target`, with a substitution/deletion/insertion mix.
fn corrupt_stream(
    reference: &[String],
    span: &Range<usize>,
    target: f64,
    kw_rate: f64,
    fillers: &[String],
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let l = reference.len() as f64;
    let k = span.len() as f64;
    let base = if l > k {
        ((target * l - kw_rate * k) / (l - k)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(reference.len());
    for (i, tok) in reference.iter().enumerate() {
        if span.contains(&i) {
            if rng.random::<f64>() < kw_rate {
                out.push(corrupt_word(tok, rng));
            } else {
                out.push(tok.clone());
            }
            continue;
        }
        if rng.random::<f64>() < base {
            match rng.random_range(0..10) {
                0..=5 => out.push(corrupt_word(tok, rng)),
                6 | 7 => {} // deletion
                _ => {
                    out.push(tok.clone());
                    out.push(fillers[rng.random_range(0..fillers.len())].clone());
                }
            }
        } else {
            out.push(tok.clone());
        }
    }
    out
}

/// Generate the full benchmark in memory. Deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBench> {
    cfg.validate()?;
    let mut rng = sub_rng(cfg.seed, "synthbench");

    // Keyword words are 3 syllables (6 chars), fillers 2 (4 chars); the
    // length split keeps the vocabularies disjoint.
    let keywords = build_vocab(&mut rng, cfg.n_keywords, 3, 2);
    let fillers = build_vocab(&mut rng, cfg.filler_vocab, 2, 1);
    let protos: Vec<Vec<f64>> = keywords
        .iter()
        .map(|k| prototype(k, cfg.seed, cfg.feat_dim))
        .collect();

    let mut train = Vec::with_capacity(cfg.n_keywords * cfg.samples_per_keyword);
    for (ki, kw) in keywords.iter().enumerate() {
        for s in 0..cfg.samples_per_keyword {
            let id = format!("train-{ki:04}-{s:02}");
            train.push((sample_features(id, &protos[ki], cfg, &mut rng), kw.clone()));
        }
    }

    let mut held_out = Vec::with_capacity(cfg.held_out_queries);
    for q in 0..cfg.held_out_queries {
        let ki = q % cfg.n_keywords;
        let id = format!("query-{q:04}");
        held_out.push((sample_features(id, &protos[ki], cfg, &mut rng), ki));
    }

    let mut utterances = Vec::with_capacity(cfg.n_utterances);
    for u in 0..cfg.n_utterances {
        let id = format!("u{u:04}");
        let ki = rng.random_range(0..cfg.n_keywords);
        let kw_tokens: Vec<String> = keywords[ki]
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let total_fillers = rng.random_range(cfg.fillers_min..=cfg.fillers_max);
        let before = rng.random_range(1..total_fillers);
        let mut reference: Vec<String> = Vec::with_capacity(total_fillers + kw_tokens.len());
        for _ in 0..before {
            reference.push(fillers[rng.random_range(0..fillers.len())].clone());
        }
        let span = reference.len()..reference.len() + kw_tokens.len();
        reference.extend(kw_tokens.iter().cloned());
        for _ in before..total_fillers {
            reference.push(fillers[rng.random_range(0..fillers.len())].clone());
        }
        let features = sample_features(format!("{id}-feat"), &protos[ki], cfg, &mut rng);
        let mut streams = BTreeMap::new();
        for source in Source::ALL {
            let tokens = corrupt_stream(
                &reference,
                &span,
                cfg.stream_rate(source),
                cfg.keyword_corruption,
                &fillers,
                &mut rng,
            );
            streams.insert(source, tokens);
        }
        utterances.push(SynthUtterance {
            id,
            reference_tokens: reference,
            keyword_idx: ki,
            keyword_span: span,
            features,
            streams,
        });
    }

    Ok(SynthBench {
        config: cfg.clone(),
        keywords,
        train,
        held_out,
        utterances,
    })
}

impl SynthBench {
    /// Micro-averaged corpus WER of one generated stream against the
    /// references.
    pub fn measured_stream_wer(&self, source: Source) -> f64 {
        let mut errors = 0usize;
        let mut ref_len = 0usize;
        for utt in &self.utterances {
            let counts = edit_counts(&utt.reference_tokens, &utt.streams[&source]);
            errors += counts.errors();
            ref_len += counts.ref_len;
        }
        errors as f64 / ref_len as f64
    }

    pub fn expected_metrics(&self) -> ExpectedMetrics {
        let mut configured = BTreeMap::new();
        let mut measured = BTreeMap::new();
        for source in Source::ALL {
            configured.insert(source.to_string(), self.config.stream_rate(source));
            measured.insert(source.to_string(), self.measured_stream_wer(source));
        }
        ExpectedMetrics {
            configured_wer: configured,
            measured_wer: measured,
            utterances: self.utterances.len(),
            keyword_tokens: self
                .utterances
                .iter()
                .map(|u| u.keyword_span.len())
                .sum(),
        }
    }

    /// Write every artifact under the configured paths. Feature binaries go
    /// to `<out_dir>/features/{train,queries,utt}`; paths stored in the
    /// corpus/manifest/events are relative to the file that references them.
    pub fn write_files(&self, paths: &PathsSection) -> Result<ExpectedMetrics> {
        let out = &paths.out_dir;
        let feat_train = out.join("features").join("train");
        let feat_queries = out.join("features").join("queries");
        let feat_utt = out.join("features").join("utt");
        for d in [&feat_train, &feat_queries, &feat_utt] {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }

        // Lexicon: each keyword exactly once, tagged with its index.
        let mut lexicon = String::new();
        lexicon.push_str("# synthetic keyword lexicon\n");
        for kw in &self.keywords {
            lexicon.push_str(kw);
            lexicon.push('\t');
            lexicon.push_str("synth");
            lexicon.push('\n');
        }
        write_atomic(&paths.lexicon, lexicon.as_bytes())?;

        // Training corpus + feature binaries.
        let mut corpus = String::new();
        for (seq, kw) in &self.train {
            let file = format!("{}.bin", seq.utterance_id);
            write_features(seq, &feat_train.join(&file))?;
            corpus.push_str(&format!(
                "{}\t{}\tfeatures/train/{}\n",
                seq.utterance_id, kw, file
            ));
        }
        write_atomic(&paths.corpus, corpus.as_bytes())?;

        // Held-out query features (used by retrieval quality checks).
        for (seq, ki) in &self.held_out {
            let file = format!("{}-kw{ki:04}.bin", seq.utterance_id);
            write_features(seq, &feat_queries.join(file))?;
        }

        // Manifest + events + utterance features.
        let mut records = Vec::with_capacity(self.utterances.len());
        let mut events = String::new();
        for utt in &self.utterances {
            let file = format!("{}.bin", utt.id);
            write_features(&utt.features, &feat_utt.join(&file))?;
            let rel = format!("features/utt/{file}");
            records.push(ManifestRecord {
                id: utt.id.clone(),
                reference: Some(utt.reference_text()),
                features_path: Some(rel.clone().into()),
                streams: Some(ManifestStreams {
                    acoustic: Some(utt.streams[&Source::Acoustic].join(" ")),
                    llm: Some(utt.streams[&Source::Llm].join(" ")),
                }),
                script: None,
            });
            let acoustic = &utt.streams[&Source::Acoustic];
            let llm = &utt.streams[&Source::Llm];
            let half_a = acoustic.len().div_ceil(2);
            let half_l = llm.len().div_ceil(2);
            let script = [
                Event::Open {
                    id: utt.id.clone(),
                    features_path: Some(rel.into()),
                },
                Event::Partial {
                    id: utt.id.clone(),
                    source: Source::Acoustic,
                    revision: 1,
                    tokens: Some(acoustic[..half_a].to_vec()),
                    text: None,
                },
                Event::Partial {
                    id: utt.id.clone(),
                    source: Source::Llm,
                    revision: 1,
                    tokens: Some(llm[..half_l].to_vec()),
                    text: None,
                },
                Event::Partial {
                    id: utt.id.clone(),
                    source: Source::Acoustic,
                    revision: 2,
                    tokens: Some(acoustic.clone()),
                    text: None,
                },
                Event::Partial {
                    id: utt.id.clone(),
                    source: Source::Llm,
                    revision: 2,
                    tokens: Some(llm.clone()),
                    text: None,
                },
                Event::Finalize { id: utt.id.clone() },
            ];
            for ev in script {
                events.push_str(&ev.to_line());
                events.push('\n');
            }
        }
        write_atomic(&paths.manifest, render_manifest(&records).as_bytes())?;
        write_atomic(&paths.events, events.as_bytes())?;

        let metrics = self.expected_metrics();
        write_atomic(
            &out.join("expected_metrics.json"),
            serde_json::to_string_pretty(&metrics)
                .expect("metrics serialize")
                .as_bytes(),
        )?;
        Ok(metrics)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Word errors restricted to the reference's keyword span, via the alignment
/// of reference and hypothesis: substitutions and deletions at in-span
/// reference positions, plus insertions strictly inside the span.
pub fn keyword_span_errors(
    reference: &[String],
    span: &Range<usize>,
    hypothesis: &[String],
) -> (usize, usize) {
    let alignment = align_pair(reference, hypothesis);
    let mut errors = 0usize;
    let mut ref_pos = 0usize;
    for (r, h) in &alignment.pairs {
        match (r, h) {
            (Some(rt), Some(ht)) => {
                if span.contains(&ref_pos) && rt != ht {
                    errors += 1;
                }
                ref_pos += 1;
            }
            (Some(_), None) => {
                if span.contains(&ref_pos) {
                    errors += 1;
                }
                ref_pos += 1;
            }
            (None, Some(_)) => {
                // Insertion: attribute it to the span only when it falls
                // strictly between two in-span reference positions.
                if ref_pos > span.start && ref_pos < span.end {
                    errors += 1;
                }
            }
            (None, None) => unreachable!("alignment never pairs two nulls"),
        }
    }
    (errors, span.len())
}
