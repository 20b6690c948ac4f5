//! End-to-end engine behavior over in-process streams: revision handling,
//! rag synthesis, replay determinism, and corrector fallback.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use ragboost_core::fusion::{FusionConfig, Hypothesis, Source};
use ragboost_core::index::{IndexConfig, KeywordEntry, VectorIndex};
use ragboost_core::linalg::Mat;
use ragboost_core::pipeline::{
    CorrectorError, Engine, EngineEvent, FnCorrector, KeywordTable, OutputRecord, PipelineConfig,
    Session,
};
use ragboost_core::retriever::{
    encode_speech, encode_text, FeatureSequence, RetrieverDims, TextFeaturizer, TowerParams,
};
use ragboost_core::Error;

const KEYWORDS: [&str; 12] = [
    "retrieval",
    "thermostat",
    "amplifier",
    "microphone",
    "television",
    "projector",
    "subwoofer",
    "equalizer",
    "turntable",
    "headphones",
    "speakers",
    "receiver",
];

fn dims() -> RetrieverDims {
    RetrieverDims {
        feat_dim: 6,
        conv: vec![],
        mlp: vec![8],
        embed_dim: 16,
        text_dim: 96,
    }
}

fn featurizer() -> TextFeaturizer {
    TextFeaturizer {
        ngram: 3,
        dim: 96,
        seed: 7,
    }
}

/// Engine whose index holds the text-tower embeddings of a fixed keyword set.
/// tau_score is lowered so untrained embeddings still qualify for correction.
fn engine(corrector: Option<Box<dyn ragboost_core::pipeline::Corrector>>) -> Engine {
    let dims = dims();
    let params = TowerParams::init(&dims, 41).unwrap();
    let feat = featurizer();
    let entries: Vec<KeywordEntry> = KEYWORDS
        .iter()
        .enumerate()
        .map(|(i, kw)| KeywordEntry {
            id: i as u64,
            keyword_text: kw.to_string(),
            domain_tag: None,
            embedding: encode_text(&feat.featurize(kw).unwrap(), &params).unwrap(),
        })
        .collect();
    let index = VectorIndex::build(&entries, &IndexConfig::default()).unwrap();
    let keywords = KeywordTable::new(
        entries
            .iter()
            .map(|e| (e.id, e.keyword_text.clone(), e.domain_tag.clone())),
    )
    .unwrap();
    let cfg = PipelineConfig {
        top_k: 5,
        tau_score: 0.05,
        ..PipelineConfig::default()
    };
    Engine::new(
        params,
        feat,
        index,
        keywords,
        FusionConfig::default(),
        cfg,
        corrector,
    )
    .unwrap()
}

fn partial(id: &str, source: Source, revision: u32, text: &str) -> Hypothesis {
    Hypothesis::new(
        id,
        source,
        text.split_whitespace().map(str::to_string).collect(),
        revision,
    )
    .unwrap()
}

#[test]
fn open_finalize_reopen_cycle() {
    let eng = engine(None);
    let mut session = Session::new(&eng);
    session
        .handle(EngineEvent::Open {
            id: "u1".into(),
            features: None,
        })
        .unwrap();
    // Duplicate open of an active stream is rejected.
    let err = session
        .handle(EngineEvent::Open {
            id: "u1".into(),
            features: None,
        })
        .unwrap_err();
    assert!(matches!(err, Error::StreamOpen(_)));
    session
        .handle(EngineEvent::Finalize { id: "u1".into() })
        .unwrap();
    // Finalized ids can be reopened fresh.
    session
        .handle(EngineEvent::Open {
            id: "u1".into(),
            features: None,
        })
        .unwrap();
    assert_eq!(session.active_streams(), 1);
}

#[test]
fn open_with_features_caches_the_speech_embedding() {
    let eng = engine(None);
    let frames = Mat::from_vec(2, 6, vec![0.4, -0.2, 0.9, 0.1, -0.5, 0.3, 0.2, 0.8, -0.1, 0.0, 0.6, -0.7]).unwrap();
    let seq = FeatureSequence::new("u1", frames).unwrap();
    let state = eng.open_stream("u1", Some(&seq)).unwrap();
    let dims = dims();
    let params = TowerParams::init(&dims, 41).unwrap();
    let direct = encode_speech(&seq, &params).unwrap();
    assert_eq!(state.speech_embedding().unwrap(), &direct);
}

#[test]
fn single_source_fuses_to_corrected_stream() {
    let eng = engine(None);
    let mut state = eng.open_stream("u1", None).unwrap();
    let fused = eng
        .on_partial(&mut state, partial("u1", Source::Acoustic, 1, "play the retreival demo"))
        .unwrap();
    // One external stream plus the synthesized rag stream; the corrupted
    // keyword is rewritten and rag (1.5) outweighs acoustic (1.0).
    assert_eq!(fused, vec!["play", "the", "retrieval", "demo"]);
}

#[test]
fn revision_regression_leaves_state_unchanged() {
    let eng = engine(None);
    let mut state = eng.open_stream("u1", None).unwrap();
    let first = eng
        .on_partial(&mut state, partial("u1", Source::Llm, 2, "hello there"))
        .unwrap();
    let before = state.clone();
    let err = eng
        .on_partial(&mut state, partial("u1", Source::Llm, 2, "hello again"))
        .unwrap_err();
    assert!(matches!(err, Error::RevisionRegression { .. }));
    assert_eq!(state.last_fused(), before.last_fused());
    assert_eq!(state.revision_set(), before.revision_set());
    assert_eq!(state.last_fused().unwrap(), first.as_slice());
}

#[test]
fn external_rag_partials_are_rejected() {
    let eng = engine(None);
    let mut state = eng.open_stream("u1", None).unwrap();
    let err = eng
        .on_partial(&mut state, partial("u1", Source::Rag, 1, "injected"))
        .unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn rag_stream_tracks_the_latest_non_rag_partial() {
    let eng = engine(None);
    let mut state = eng.open_stream("u1", None).unwrap();
    eng.on_partial(&mut state, partial("u1", Source::Llm, 1, "turn on the televizion"))
        .unwrap();
    let set = state.revision_set();
    assert_eq!(set.get("rag"), Some(&1));
    eng.on_partial(&mut state, partial("u1", Source::Llm, 2, "turn off the televizion"))
        .unwrap();
    let set = state.revision_set();
    assert_eq!(set.get("rag"), Some(&2));
    // The rag stream was regenerated from the newest llm hypothesis.
    let fused = state.last_fused().unwrap();
    assert!(fused.contains(&"off".to_string()));
    assert!(fused.contains(&"television".to_string()));
}

#[test]
fn replay_is_deterministic() {
    let eng = engine(None);
    let script = |session: &mut Session| -> Vec<Option<OutputRecord>> {
        let mut out = Vec::new();
        out.push(
            session
                .handle(EngineEvent::Open {
                    id: "u1".into(),
                    features: None,
                })
                .unwrap(),
        );
        out.push(
            session
                .handle(EngineEvent::Partial {
                    id: "u1".into(),
                    hyp: partial("u1", Source::Acoustic, 1, "adjust the ampliffier"),
                })
                .unwrap(),
        );
        out.push(
            session
                .handle(EngineEvent::Partial {
                    id: "u1".into(),
                    hyp: partial("u1", Source::Llm, 1, "adjust the amplifier gain"),
                })
                .unwrap(),
        );
        out.push(
            session
                .handle(EngineEvent::Finalize { id: "u1".into() })
                .unwrap(),
        );
        out
    };
    let mut s1 = Session::new(&eng);
    let mut s2 = Session::new(&eng);
    let r1 = script(&mut s1);
    let r2 = script(&mut s2);
    assert_eq!(r1, r2);
    let lines1: Vec<String> = r1.iter().flatten().map(|o| o.to_line()).collect();
    let lines2: Vec<String> = r2.iter().flatten().map(|o| o.to_line()).collect();
    assert_eq!(lines1, lines2);
}

#[test]
fn finalize_without_corrector_reaggregates() {
    let eng = engine(None);
    let mut state = eng.open_stream("u1", None).unwrap();
    let fused = eng
        .on_partial(&mut state, partial("u1", Source::Llm, 1, "hello world"))
        .unwrap();
    let fin = eng.finalize(&mut state).unwrap();
    assert_eq!(fin.tokens, fused);
    assert!(!fin.corrector_applied);
    assert!(fin.corrector_error.is_none());
    assert!(state.is_finalized());
    assert!(matches!(
        eng.finalize(&mut state),
        Err(Error::Finalized(_))
    ));
}

#[test]
fn identity_corrector_changes_nothing() {
    let corrector = FnCorrector::new("echo", |req| Ok(req.tokens.clone()));
    let eng = engine(Some(Box::new(corrector)));
    let mut state = eng.open_stream("u1", None).unwrap();
    let fused = eng
        .on_partial(&mut state, partial("u1", Source::Llm, 1, "hello there world"))
        .unwrap();
    let fin = eng.finalize(&mut state).unwrap();
    assert!(fin.corrector_applied);
    assert_eq!(fin.tokens, fused);
}

#[test]
fn stub_corrector_fix_lands_in_the_final() {
    // The stub fixes exactly one planted token; rag weight carries it.
    let corrector = FnCorrector::new("fixer", |req| {
        Ok(req
            .tokens
            .iter()
            .map(|t| {
                if t == "wrld" {
                    "world".to_string()
                } else {
                    t.clone()
                }
            })
            .collect())
    });
    let eng = engine(Some(Box::new(corrector)));
    let mut state = eng.open_stream("u1", None).unwrap();
    eng.on_partial(&mut state, partial("u1", Source::Llm, 1, "hello wrld"))
        .unwrap();
    let fin = eng.finalize(&mut state).unwrap();
    assert!(fin.corrector_applied);
    assert_eq!(fin.tokens, vec!["hello", "world"]);
}

#[test]
fn corrector_timeout_falls_back() {
    let corrector = FnCorrector::new("flaky", |_req| Err(CorrectorError::Timeout));
    let eng = engine(Some(Box::new(corrector)));
    let mut state = eng.open_stream("u1", None).unwrap();
    let fused = eng
        .on_partial(&mut state, partial("u1", Source::Llm, 1, "hello world"))
        .unwrap();
    let fin = eng.finalize(&mut state).unwrap();
    assert!(!fin.corrector_applied);
    assert_eq!(fin.tokens, fused);
    assert!(fin.corrector_error.unwrap().contains("timed out"));
}

#[test]
fn malformed_correction_falls_back() {
    // Empty correction for a non-empty request violates the protocol.
    let corrector = FnCorrector::new("broken", |_req| Ok(vec![]));
    let eng = engine(Some(Box::new(corrector)));
    let mut state = eng.open_stream("u1", None).unwrap();
    let fused = eng
        .on_partial(&mut state, partial("u1", Source::Llm, 1, "hello world"))
        .unwrap();
    let fin = eng.finalize(&mut state).unwrap();
    assert!(!fin.corrector_applied);
    assert_eq!(fin.tokens, fused);
    assert!(fin.corrector_error.is_some());
}

#[test]
fn intermittent_corrector_only_changes_answered_streams() {
    // Stub times out on every other call; the finals must differ from the
    // no-corrector run exactly on the answered utterances.
    let calls = AtomicUsize::new(0);
    let corrector = FnCorrector::new("half", move |req: &ragboost_core::pipeline::CorrectionRequest| {
        let n = calls.fetch_add(1, Ordering::SeqCst);
        if n % 2 == 0 {
            Err(CorrectorError::Timeout)
        } else {
            let mut toks = req.tokens.clone();
            let last = toks.len() - 1;
            toks[last] = "patched".into();
            Ok(toks)
        }
    });
    let with = engine(Some(Box::new(corrector)));
    let without = engine(None);
    let run = |eng: &Engine| -> Vec<(bool, Vec<String>)> {
        (0..6)
            .map(|i| {
                let id = format!("u{i}");
                let mut state = eng.open_stream(&id, None).unwrap();
                eng.on_partial(&mut state, partial(&id, Source::Llm, 1, "some spoken words"))
                    .unwrap();
                let fin = eng.finalize(&mut state).unwrap();
                (fin.corrector_applied, fin.tokens)
            })
            .collect()
    };
    let with_out = run(&with);
    let base_out = run(&without);
    let mut answered = 0;
    for ((applied, tokens), (_, base)) in with_out.iter().zip(&base_out) {
        if *applied {
            answered += 1;
            assert_ne!(tokens, base);
            assert_eq!(tokens.last().map(String::as_str), Some("patched"));
        } else {
            assert_eq!(tokens, base);
        }
    }
    assert_eq!(answered, 3);
}

#[test]
fn timeout_config_is_plumbed() {
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.corrector_timeout, Duration::from_secs(2));
    assert_eq!(cfg.top_k, 5);
}
