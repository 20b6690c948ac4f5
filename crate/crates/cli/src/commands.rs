//! Command implementations behind the CLI surface.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ragboost_core::eval::{
    evaluate_corpus, EvalReport, HttpEmbedder, LocalHashEmbedder, SentenceEmbedder,
};
use ragboost_core::fusion::Hypothesis;
use ragboost_core::index::{
    load_index, read_lexicon, save_index, IndexConfig, KeywordEntry, LexiconEntry, VectorIndex,
};
use ragboost_core::pipeline::{
    Corrector, Engine, EngineEvent, Event, HttpCorrector, KeywordTable, OutputRecord, Session,
};
use ragboost_core::retriever::{
    encode_speech, encode_text, load_checkpoint, read_features, save_checkpoint, train_retriever,
    Embedding, FeatureSequence, StepLog,
};

use crate::config::{EmbedderChoice, EngineConfig};
use crate::manifest::read_manifest;
use crate::synthbench::{generate, ExpectedMetrics, SynthConfig};

fn resolve(base_file: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base_file
            .parent()
            .map(|p| p.join(rel))
            .unwrap_or_else(|| rel.to_path_buf())
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train-retriever
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Parse the training corpus: `id<TAB>keyword<TAB>features_path` per line,
/// `#` comments allowed. Feature paths resolve relative to the corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<(FeatureSequence, String)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading corpus {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (id, keyword, feat) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(kw), Some(p), None) => (id, kw, p),
            _ => bail!(
                "{}:{}: expected `id<TAB>keyword<TAB>features_path`",
                path.display(),
                lineno + 1
            ),
        };
        if keyword.trim().is_empty() {
            bail!("{}:{}: empty keyword", path.display(), lineno + 1);
        }
        let feat_path = resolve(path, Path::new(feat));
        let seq = read_features(&feat_path, id).with_context(|| {
            format!("{}:{}: loading {}", path.display(), lineno + 1, feat_path.display())
        })?;
        out.push((seq, keyword.to_string()));
    }
    if out.is_empty() {
        bail!("{}: corpus has no records", path.display());
    }
    Ok(out)
}

pub fn cmd_train_retriever(cfg: &EngineConfig) -> Result<TrainSummary> {
    let corpus = read_corpus(&cfg.paths.corpus)?;
    let dims = cfg.retriever_dims();
    let featurizer = cfg.featurizer();
    let train_cfg = cfg.train_config();
    let (params, logs) = train_retriever(&corpus, &dims, &featurizer, &train_cfg)
        .map_err(|e| anyhow::anyhow!("training failed: {e}"))?;
    ensure_parent(&cfg.paths.checkpoint)?;
    save_checkpoint(&params, &cfg.paths.checkpoint)
        .with_context(|| format!("writing {}", cfg.paths.checkpoint.display()))?;
    write_loss_log(&cfg.paths.loss_log, &logs)?;
    Ok(TrainSummary {
        steps: logs.len(),
        first_loss: logs.first().map(|l| l.loss),
        final_loss: logs.last().map(|l| l.loss),
        checkpoint: cfg.paths.checkpoint.clone(),
    })
}

fn write_loss_log(path: &Path, logs: &[StepLog]) -> Result<()> {
    ensure_parent(path)?;
    let mut out = String::from("step,lr,loss\n");
    for l in logs {
        out.push_str(&format!("{},{},{}\n", l.step, l.lr, l.loss));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// build-index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub entries: usize,
    pub duplicates_dropped: usize,
    pub index: PathBuf,
}

/// Dedupe lexicon entries by keyword text, keeping first occurrences. Entry
/// ids are the positions in the deduped order; the same rule reconstructs
/// the id -> keyword mapping at run time.
pub fn dedup_lexicon(entries: Vec<LexiconEntry>) -> (Vec<LexiconEntry>, usize) {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(entries.len());
    let mut dropped = 0;
    for e in entries {
        if seen.insert(e.keyword.clone()) {
            out.push(e);
        } else {
            dropped += 1;
        }
    }
    (out, dropped)
}

pub fn cmd_build_index(cfg: &EngineConfig) -> Result<BuildSummary> {
    let dims = cfg.retriever_dims();
    let params = load_checkpoint(&cfg.paths.checkpoint, &dims)
        .map_err(|e| anyhow::anyhow!("loading checkpoint: {e}"))?;
    let featurizer = cfg.featurizer();
    let raw = read_lexicon(&cfg.paths.lexicon).map_err(|e| anyhow::anyhow!("{e}"))?;
    if raw.is_empty() {
        bail!("{}: lexicon has no keywords", cfg.paths.lexicon.display());
    }
    let (entries, duplicates_dropped) = dedup_lexicon(raw);
    if duplicates_dropped > 0 {
        eprintln!(
            "warning: dropped {duplicates_dropped} duplicate lexicon keyword(s), keeping first occurrences"
        );
    }
    let mut keyword_entries = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let tf = featurizer
            .featurize(&e.keyword)
            .map_err(|err| anyhow::anyhow!("keyword {:?}: {err}", e.keyword))?;
        let emb = encode_text(&tf, &params).map_err(|err| anyhow::anyhow!("{err}"))?;
        keyword_entries.push(KeywordEntry {
            id: i as u64,
            keyword_text: e.keyword.clone(),
            domain_tag: e.domain_tag.clone(),
            embedding: emb,
        });
    }
    let index_cfg = effective_index_config(cfg, keyword_entries.len());
    let index = VectorIndex::build(&keyword_entries, &index_cfg)
        .map_err(|e| anyhow::anyhow!("building index: {e}"))?;
    ensure_parent(&cfg.paths.index)?;
    save_index(&index, &cfg.paths.index).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(BuildSummary {
        entries: keyword_entries.len(),
        duplicates_dropped,
        index: cfg.paths.index.clone(),
    })
}

fn effective_index_config(cfg: &EngineConfig, n_entries: usize) -> IndexConfig {
    let mut index_cfg = cfg.index_config();
    // An IVF index cannot have more clusters than entries.
    if index_cfg.n_clusters > n_entries {
        index_cfg.n_clusters = n_entries.max(1);
        index_cfg.n_probe = index_cfg.n_probe.min(index_cfg.n_clusters);
    }
    index_cfg
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub events: usize,
    pub outputs: usize,
    pub skipped: usize,
    pub outputs_path: PathBuf,
}

/// Assemble the engine from the persisted artifacts named in the config.
pub fn load_engine(cfg: &EngineConfig) -> Result<Engine> {
    let dims = cfg.retriever_dims();
    let params = load_checkpoint(&cfg.paths.checkpoint, &dims)
        .map_err(|e| anyhow::anyhow!("loading checkpoint: {e}"))?;
    let mut index = load_index(&cfg.paths.index).map_err(|e| anyhow::anyhow!("loading index: {e}"))?;
    index.set_n_probe(cfg.index.n_probe);
    let raw = read_lexicon(&cfg.paths.lexicon).map_err(|e| anyhow::anyhow!("{e}"))?;
    let (entries, _) = dedup_lexicon(raw);
    if entries.len() != index.len() {
        bail!(
            "lexicon ({} keywords) does not match index ({} entries); rebuild the index",
            entries.len(),
            index.len()
        );
    }
    let keywords = KeywordTable::new(
        entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| (i as u64, e.keyword, e.domain_tag)),
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    let corrector: Option<Box<dyn Corrector>> = cfg
        .corrector_url()
        .map(|url| -> Box<dyn Corrector> {
            Box::new(HttpCorrector::new(url, cfg.pipeline_config().corrector_timeout))
        });
    Engine::new(
        params,
        cfg.featurizer(),
        index,
        keywords,
        cfg.fusion_config().map_err(|e| anyhow::anyhow!("{e}"))?,
        cfg.pipeline_config(),
        corrector,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))
}

fn resolve_event(events_path: &Path, event: Event) -> Result<EngineEvent> {
    match event {
        Event::Open { id, features_path } => {
            let features = match features_path {
                Some(p) => {
                    let full = resolve(events_path, &p);
                    Some(
                        read_features(&full, id.as_str())
                            .map_err(|e| anyhow::anyhow!("loading {}: {e}", full.display()))?,
                    )
                }
                None => None,
            };
            Ok(EngineEvent::Open { id, features })
        }
        Event::Partial {
            ref id,
            source,
            revision,
            ..
        } => {
            let tokens = event.partial_tokens().map_err(|e| anyhow::anyhow!("{e}"))?;
            let hyp = Hypothesis::new(id.clone(), source, tokens, revision)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            Ok(EngineEvent::Partial {
                id: id.clone(),
                hyp,
            })
        }
        Event::Finalize { id } => Ok(EngineEvent::Finalize { id }),
    }
}

/// Replay an event file through the engine, writing output records. In
/// lenient mode malformed or rejected events are skipped with a warning and
/// counted; strict mode aborts on the first problem.
pub fn cmd_run(cfg: &EngineConfig, strict: bool) -> Result<RunSummary> {
    let engine = load_engine(cfg)?;
    let events_path = cfg.paths.events.clone();
    let text = std::fs::read_to_string(&events_path)
        .with_context(|| format!("reading events {}", events_path.display()))?;
    let mut session = Session::new(&engine);
    let mut summary = RunSummary {
        outputs_path: cfg.paths.outputs.clone(),
        ..RunSummary::default()
    };
    ensure_parent(&cfg.paths.outputs)?;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&cfg.paths.outputs)
            .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?,
    );
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        summary.events += 1;
        let step = Event::parse_line(line)
            .map_err(|e| anyhow::anyhow!("{e}"))
            .and_then(|ev| resolve_event(&events_path, ev))
            .and_then(|ev| session.handle(ev).map_err(|e| anyhow::anyhow!("{e}")));
        match step {
            Ok(Some(record)) => {
                out.write_all(record.to_line().as_bytes())?;
                out.write_all(b"\n")?;
                summary.outputs += 1;
            }
            Ok(None) => {}
            Err(e) => {
                if strict {
                    return Err(e.context(format!(
                        "{}:{}: event rejected",
                        events_path.display(),
                        lineno + 1
                    )));
                }
                eprintln!(
                    "warning: {}:{}: skipping event: {e}",
                    events_path.display(),
                    lineno + 1
                );
                summary.skipped += 1;
            }
        }
    }
    out.flush()?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub utterances: usize,
    pub missing_references: usize,
    pub wer: f64,
    pub cer: f64,
    pub mean_sem: Option<f64>,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
}

fn build_embedder(cfg: &EngineConfig) -> Box<dyn SentenceEmbedder> {
    let url = cfg.embed_url();
    let use_http = matches!(cfg.eval.embedder, EmbedderChoice::Http) || url.is_some();
    if use_http {
        if let Some(url) = url {
            return Box::new(HttpEmbedder::new(
                url,
                cfg.eval.embed_dim,
                std::time::Duration::from_millis(cfg.eval.embed_timeout_ms),
            ));
        }
        eprintln!("warning: http embedder selected without a URL; falling back to local");
    }
    Box::new(LocalHashEmbedder {
        dim: cfg.eval.embed_dim,
        ..LocalHashEmbedder::default()
    })
}

/// Score final transcripts against manifest references and write both report
/// renderings.
pub fn cmd_evaluate(cfg: &EngineConfig, strict: bool) -> Result<EvalSummary> {
    let outputs = std::fs::read_to_string(&cfg.paths.outputs)
        .with_context(|| format!("reading outputs {}", cfg.paths.outputs.display()))?;
    let manifest = read_manifest(&cfg.paths.manifest)?;
    let references: BTreeMap<&str, &str> = manifest
        .iter()
        .filter_map(|r| r.reference.as_deref().map(|text| (r.id.as_str(), text)))
        .collect();
    let mut pairs: Vec<(String, String, String)> = Vec::new();
    let mut missing = 0usize;
    for (lineno, raw) in outputs.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let record = OutputRecord::parse_line(line)
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", cfg.paths.outputs.display(), lineno + 1))?;
        let OutputRecord::Final { id, text, .. } = record else {
            continue;
        };
        match references.get(id.as_str()) {
            Some(reference) => pairs.push((id, reference.to_string(), text)),
            None => {
                if strict {
                    bail!("output {id:?} has no reference in the manifest");
                }
                eprintln!("warning: output {id:?} has no reference; excluded");
                missing += 1;
            }
        }
    }
    let embedder = build_embedder(cfg);
    let report =
        evaluate_corpus(&pairs, embedder.as_ref()).map_err(|e| anyhow::anyhow!("{e}"))?;
    ensure_parent(&cfg.paths.report_json)?;
    ensure_parent(&cfg.paths.report_text)?;
    std::fs::write(&cfg.paths.report_json, report.to_json())
        .with_context(|| format!("writing {}", cfg.paths.report_json.display()))?;
    std::fs::write(&cfg.paths.report_text, report.to_text())
        .with_context(|| format!("writing {}", cfg.paths.report_text.display()))?;
    Ok(EvalSummary {
        utterances: report.rows.len(),
        missing_references: missing,
        wer: report.corpus.wer,
        cer: report.corpus.cer,
        mean_sem: report.corpus.mean_sem,
        report_json: cfg.paths.report_json.clone(),
        report_text: cfg.paths.report_text.clone(),
    })
}

/// Re-parse a written report (text reports are derived from the JSON one).
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EvalReport::from_json(&text).map_err(|e| anyhow::anyhow!("{e}"))
}

// ---------------------------------------------------------------------------
// synthbench
// ---------------------------------------------------------------------------

pub fn cmd_synthbench(cfg: &EngineConfig, synth: &SynthConfig) -> Result<ExpectedMetrics> {
    let dims = cfg.retriever_dims();
    if synth.feat_dim != dims.feat_dim {
        bail!(
            "synthbench feat_dim {} must match retriever feat_dim {}",
            synth.feat_dim,
            dims.feat_dim
        );
    }
    if synth.frames_min < dims.min_frames() {
        bail!(
            "synthbench frames_min {} is below the conv stack's minimum of {}",
            synth.frames_min,
            dims.min_frames()
        );
    }
    let bench = generate(synth)?;
    bench.write_files(&cfg.paths)
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub rank: usize,
    pub entry_id: u64,
    pub score: f64,
    pub keyword: String,
}

/// Ad-hoc index query by keyword text (text tower) or feature file (speech
/// tower).
pub fn cmd_search(
    cfg: &EngineConfig,
    keyword: Option<&str>,
    features: Option<&Path>,
    k: usize,
) -> Result<Vec<SearchHit>> {
    let dims = cfg.retriever_dims();
    let params = load_checkpoint(&cfg.paths.checkpoint, &dims)
        .map_err(|e| anyhow::anyhow!("loading checkpoint: {e}"))?;
    let mut index = load_index(&cfg.paths.index).map_err(|e| anyhow::anyhow!("loading index: {e}"))?;
    index.set_n_probe(cfg.index.n_probe);
    let raw = read_lexicon(&cfg.paths.lexicon).map_err(|e| anyhow::anyhow!("{e}"))?;
    let (entries, _) = dedup_lexicon(raw);
    let query: Embedding = match (keyword, features) {
        (Some(kw), None) => {
            let tf = cfg
                .featurizer()
                .featurize(kw)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            encode_text(&tf, &params).map_err(|e| anyhow::anyhow!("{e}"))?
        }
        (None, Some(path)) => {
            let seq = read_features(path, "query").map_err(|e| anyhow::anyhow!("{e}"))?;
            encode_speech(&seq, &params).map_err(|e| anyhow::anyhow!("{e}"))?
        }
        _ => bail!("provide exactly one of --keyword or --features"),
    };
    let hits = index.search(&query, k).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(i, h)| SearchHit {
            rank: i + 1,
            entry_id: h.entry_id,
            score: h.score,
            keyword: entries
                .get(h.entry_id as usize)
                .map(|e| e.keyword.clone())
                .unwrap_or_default(),
        })
        .collect())
}
