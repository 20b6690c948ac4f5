//! Streaming orchestration: per-partial retrieval, rag-stream synthesis,
//! fusion, and finalization against an optional correction service.

mod corrector;
mod events;

pub use corrector::{
    CorrectionRequest, CorrectionResponse, Corrector, CorrectorError, FnCorrector, HttpCorrector,
};
pub use events::{Event, OutputRecord};

use std::collections::BTreeMap;
use std::time::Duration;

use crate::eval::normalize_text;
use crate::fusion::{
    aggregate, keyword_correct, FusionConfig, Hypothesis, ScoredKeyword, Source,
};
use crate::index::VectorIndex;
use crate::retriever::{
    encode_speech, encode_text, Embedding, FeatureSequence, TextFeaturizer, TowerParams,
};
use crate::{Error, Result};

/// Streaming knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Retrieval depth per partial.
    pub top_k: usize,
    pub tau_edit: f64,
    pub tau_score: f64,
    pub corrector_timeout: Duration,
    /// Minimum wall-clock interval between retrievals per stream; ZERO (the
    /// default) re-queries on every accepted partial. Non-zero values trade
    /// retrieval freshness for throughput and make outputs time-dependent.
    pub min_retrieval_interval: Duration,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            top_k: 5,
            tau_edit: crate::fusion::DEFAULT_TAU_EDIT,
            tau_score: crate::fusion::DEFAULT_TAU_SCORE,
            corrector_timeout: Duration::from_secs(2),
            min_retrieval_interval: Duration::ZERO,
        }
    }
}

/// Maps index entry ids back to keyword text (and optional domain tag); the
/// index file itself stores only ids and vectors.
#[derive(Debug, Clone, Default)]
pub struct KeywordTable {
    map: BTreeMap<u64, (String, Option<String>)>,
}

impl KeywordTable {
    pub fn new(entries: impl IntoIterator<Item = (u64, String, Option<String>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, text, tag) in entries {
            if map.insert(id, (text, tag)).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(KeywordTable { map })
    }

    pub fn text(&self, id: u64) -> Option<&str> {
        self.map.get(&id).map(|(t, _)| t.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// A retrieval hit joined with its keyword text.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub entry_id: u64,
    pub score: f64,
    pub text: String,
}

/// Per-utterance stream state. Owned by the caller (one per live utterance);
/// the engine itself is immutable and shared.
#[derive(Debug, Clone)]
pub struct StreamState {
    utterance_id: String,
    revisions: BTreeMap<Source, u32>,
    hyps: BTreeMap<Source, Hypothesis>,
    rag: Option<Hypothesis>,
    speech_emb: Option<Embedding>,
    text_query: Option<(String, Embedding)>,
    last_hits: Vec<ScoredHit>,
    last_retrieval: Option<std::time::Instant>,
    last_fused: Option<Vec<String>>,
    finalized: bool,
}

impl StreamState {
    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn last_fused(&self) -> Option<&[String]> {
        self.last_fused.as_deref()
    }

    pub fn last_hits(&self) -> &[ScoredHit] {
        &self.last_hits
    }

    pub fn speech_embedding(&self) -> Option<&Embedding> {
        self.speech_emb.as_ref()
    }

    /// Accepted revisions per external source plus the synthesized rag
    /// stream's revision.
    pub fn revision_set(&self) -> BTreeMap<String, u32> {
        let mut set: BTreeMap<String, u32> = self
            .revisions
            .iter()
            .map(|(s, &r)| (s.to_string(), r))
            .collect();
        if let Some(rag) = &self.rag {
            set.insert(Source::Rag.to_string(), rag.revision);
        }
        set
    }
}

/// Result of finalizing one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalTranscript {
    pub utterance_id: String,
    pub tokens: Vec<String>,
    /// True when a corrector response replaced the rag stream.
    pub corrector_applied: bool,
    /// Fallback reason when the corrector was configured but unusable.
    pub corrector_error: Option<String>,
}

impl FinalTranscript {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// The shared, read-only engine: tower parameters, the keyword index, fusion
/// configuration, and an optional corrector client.
pub struct Engine {
    params: TowerParams,
    featurizer: TextFeaturizer,
    index: VectorIndex,
    keywords: KeywordTable,
    fusion: FusionConfig,
    cfg: PipelineConfig,
    corrector: Option<Box<dyn Corrector>>,
}

impl Engine {
    pub fn new(
        params: TowerParams,
        featurizer: TextFeaturizer,
        index: VectorIndex,
        keywords: KeywordTable,
        fusion: FusionConfig,
        cfg: PipelineConfig,
        corrector: Option<Box<dyn Corrector>>,
    ) -> Result<Self> {
        if featurizer.dim != params.dims().text_dim {
            return Err(Error::dimension(
                "featurizer width",
                params.dims().text_dim,
                featurizer.dim,
            ));
        }
        if index.dim() != params.dims().embed_dim {
            return Err(Error::dimension(
                "index vectors",
                params.dims().embed_dim,
                index.dim(),
            ));
        }
        fusion.validate()?;
        if cfg.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be >= 1".into()));
        }
        Ok(Engine {
            params,
            featurizer,
            index,
            keywords,
            fusion,
            cfg,
            corrector,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn has_corrector(&self) -> bool {
        self.corrector.is_some()
    }

    /// Open a stream. When features are supplied the speech embedding is
    /// computed once and cached for cross-modal retrieval.
    pub fn open_stream(
        &self,
        utterance_id: impl Into<String>,
        features: Option<&FeatureSequence>,
    ) -> Result<StreamState> {
        let utterance_id = utterance_id.into();
        let speech_emb = match features {
            Some(seq) => Some(encode_speech(seq, &self.params)?),
            None => None,
        };
        Ok(StreamState {
            utterance_id,
            revisions: BTreeMap::new(),
            hyps: BTreeMap::new(),
            rag: None,
            speech_emb,
            text_query: None,
            last_hits: Vec::new(),
            last_retrieval: None,
            last_fused: None,
            finalized: false,
        })
    }

    fn query_embedding(&self, state: &mut StreamState, hyp_tokens: &[String]) -> Result<Embedding> {
        if let Some(e) = &state.speech_emb {
            return Ok(e.clone());
        }
        let joined = hyp_tokens.join(" ");
        if let Some((text, emb)) = &state.text_query {
            if *text == joined {
                return Ok(emb.clone());
            }
        }
        let tf = self.featurizer.featurize(&joined)?;
        let emb = encode_text(&tf, &self.params)?;
        state.text_query = Some((joined, emb.clone()));
        Ok(emb)
    }

    fn retrieve(&self, query: &Embedding) -> Result<Vec<ScoredHit>> {
        let hits = self.index.search(query, self.cfg.top_k)?;
        hits.into_iter()
            .map(|h| {
                let text = self.keywords.text(h.entry_id).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "index entry {} is missing from the keyword table",
                        h.entry_id
                    ))
                })?;
                Ok(ScoredHit {
                    entry_id: h.entry_id,
                    score: h.score,
                    text: text.to_string(),
                })
            })
            .collect()
    }

    fn rebuild_rag(&self, state: &mut StreamState) {
        // The rag stream is synthesized from the best non-rag hypothesis
        // (llm preferred) and regenerated after every accepted update.
        let base = state
            .hyps
            .get(&Source::Llm)
            .or_else(|| state.hyps.get(&Source::Acoustic));
        let Some(base) = base else {
            state.rag = None;
            return;
        };
        let scored: Vec<ScoredKeyword> = state
            .last_hits
            .iter()
            .map(|h| ScoredKeyword {
                text: h.text.clone(),
                score: h.score,
            })
            .collect();
        let (mut rag, _matches) =
            keyword_correct(base, &scored, self.cfg.tau_edit, self.cfg.tau_score);
        rag.revision = base.revision;
        state.rag = Some(rag);
    }

    fn fuse(&self, state: &StreamState) -> Result<Vec<String>> {
        let mut streams: Vec<Hypothesis> = Vec::new();
        for s in [Source::Acoustic, Source::Llm] {
            if let Some(h) = state.hyps.get(&s) {
                streams.push(h.clone());
            }
        }
        if let Some(r) = &state.rag {
            streams.push(r.clone());
        }
        if streams.is_empty() {
            return Ok(Vec::new());
        }
        aggregate(&streams, &self.fusion)
    }

    /// Accept one partial hypothesis: update the stream, retrieve keywords,
    /// regenerate the rag stream, and return the fused partial.
    pub fn on_partial(&self, state: &mut StreamState, hyp: Hypothesis) -> Result<Vec<String>> {
        if state.finalized {
            return Err(Error::Finalized(state.utterance_id.clone()));
        }
        if hyp.utterance_id != state.utterance_id {
            return Err(Error::UtteranceMismatch(
                state.utterance_id.clone(),
                hyp.utterance_id,
            ));
        }
        if hyp.source == Source::Rag {
            return Err(Error::InvalidArgument(
                "rag partials are synthesized internally and cannot be submitted".into(),
            ));
        }
        hyp.validate()?;
        if let Some(&last) = state.revisions.get(&hyp.source) {
            if hyp.revision <= last {
                return Err(Error::RevisionRegression {
                    stream: hyp.source.to_string(),
                    got: hyp.revision,
                    last,
                });
            }
        }
        state.revisions.insert(hyp.source, hyp.revision);
        let tokens = hyp.tokens.clone();
        state.hyps.insert(hyp.source, hyp);

        let debounced = self.cfg.min_retrieval_interval > Duration::ZERO
            && state
                .last_retrieval
                .is_some_and(|t| t.elapsed() < self.cfg.min_retrieval_interval);
        if !debounced {
            let query = self.query_embedding(state, &tokens)?;
            state.last_hits = self.retrieve(&query)?;
            state.last_retrieval = Some(std::time::Instant::now());
        }
        self.rebuild_rag(state);
        let fused = self.fuse(state)?;
        state.last_fused = Some(fused.clone());
        Ok(fused)
    }

    /// Finalize a stream. With a corrector configured, its response replaces
    /// the rag stream and aggregation reruns; on timeout or protocol errors
    /// the uncorrected fusion is returned instead. Always succeeds once the
    /// stream exists and was not already finalized.
    pub fn finalize(&self, state: &mut StreamState) -> Result<FinalTranscript> {
        if state.finalized {
            return Err(Error::Finalized(state.utterance_id.clone()));
        }
        let fused = self.fuse(state)?;
        let mut applied = false;
        let mut corrector_error = None;
        if let Some(corrector) = &self.corrector {
            if !fused.is_empty() {
                let req = CorrectionRequest {
                    utterance_id: state.utterance_id.clone(),
                    tokens: fused.clone(),
                    keywords: state
                        .last_hits
                        .iter()
                        .map(|h| ScoredKeyword {
                            text: h.text.clone(),
                            score: h.score,
                        })
                        .collect(),
                };
                match corrector.correct(&req) {
                    Ok(resp) => match self.validated_correction(state, &req, resp) {
                        Ok(()) => applied = true,
                        Err(e) => corrector_error = Some(e.to_string()),
                    },
                    Err(e) => corrector_error = Some(e.to_string()),
                }
            }
        }
        let tokens = if applied { self.fuse(state)? } else { fused };
        state.finalized = true;
        state.last_fused = Some(tokens.clone());
        Ok(FinalTranscript {
            utterance_id: state.utterance_id.clone(),
            tokens,
            corrector_applied: applied,
            corrector_error,
        })
    }

    fn validated_correction(
        &self,
        state: &mut StreamState,
        req: &CorrectionRequest,
        resp: CorrectionResponse,
    ) -> Result<()> {
        let tokens: Vec<String> = normalize_text(&resp.tokens.join(" "));
        if tokens.is_empty() && !req.tokens.is_empty() {
            return Err(Error::Corrector(
                "empty correction for a non-empty request".into(),
            ));
        }
        let revision = state
            .rag
            .as_ref()
            .map(|r| r.revision + 1)
            .unwrap_or(1);
        state.rag = Some(Hypothesis {
            utterance_id: state.utterance_id.clone(),
            source: Source::Rag,
            tokens,
            confidences: None,
            revision,
            is_final: true,
        });
        Ok(())
    }
}

/// Replays events against an engine, owning the per-utterance states.
/// Events for one utterance are processed strictly in arrival order;
/// finalized streams are evicted so ids can be reopened.
pub struct Session<'e> {
    engine: &'e Engine,
    streams: BTreeMap<String, StreamState>,
}

/// A resolved input event (features already loaded).
pub enum EngineEvent {
    Open {
        id: String,
        features: Option<FeatureSequence>,
    },
    Partial {
        id: String,
        hyp: Hypothesis,
    },
    Finalize {
        id: String,
    },
}

impl<'e> Session<'e> {
    pub fn new(engine: &'e Engine) -> Self {
        Session {
            engine,
            streams: BTreeMap::new(),
        }
    }

    pub fn active_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn handle(&mut self, event: EngineEvent) -> Result<Option<OutputRecord>> {
        match event {
            EngineEvent::Open { id, features } => {
                if self.streams.contains_key(&id) {
                    return Err(Error::StreamOpen(id));
                }
                let state = self.engine.open_stream(&id, features.as_ref())?;
                self.streams.insert(id, state);
                Ok(None)
            }
            EngineEvent::Partial { id, hyp } => {
                let state = self
                    .streams
                    .get_mut(&id)
                    .ok_or_else(|| Error::NoStream(id.clone()))?;
                let fused = self.engine.on_partial(state, hyp)?;
                Ok(Some(OutputRecord::Fused {
                    id,
                    revision_set: state.revision_set(),
                    tokens: fused,
                }))
            }
            EngineEvent::Finalize { id } => {
                let state = self
                    .streams
                    .get_mut(&id)
                    .ok_or_else(|| Error::NoStream(id.clone()))?;
                let final_out = self.engine.finalize(state)?;
                self.streams.remove(&id);
                Ok(Some(OutputRecord::Final {
                    id,
                    text: final_out.text(),
                    tokens: final_out.tokens,
                }))
            }
        }
    }
}
