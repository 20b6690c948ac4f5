//! End-to-end command tests at small scale: benchmark generation, training,
//! indexing, event replay, and evaluation, through both the library entry
//! points and the installed binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use ragboost_cli::commands::{
    cmd_build_index, cmd_evaluate, cmd_run, cmd_search, cmd_synthbench, cmd_train_retriever,
    read_corpus, read_report,
};
use ragboost_cli::config::{EngineConfig, PathsSection};
use ragboost_cli::synthbench::SynthConfig;

use ragboost_core::retriever::{load_checkpoint, TowerParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ragboost"))
}

/// Small config rooted in a fresh tempdir; retriever shrunk so training is
/// fast and feature files stay tiny.
fn small_config(root: &Path) -> EngineConfig {
    let mut cfg = EngineConfig::default();
    cfg.seed = 4242;
    cfg.retriever.feat_dim = 8;
    cfg.retriever.conv = vec![];
    cfg.retriever.mlp = vec![16];
    cfg.retriever.embed_dim = 16;
    cfg.retriever.text_dim = 128;
    cfg.retriever.train.total_steps = 60;
    cfg.retriever.train.batch_size = 4;
    let out = root.join("out");
    cfg.paths = PathsSection {
        corpus: out.join("corpus.tsv"),
        lexicon: out.join("lexicon.tsv"),
        checkpoint: out.join("retriever.ckpt"),
        index: out.join("keywords.idx"),
        manifest: out.join("manifest.jsonl"),
        events: out.join("events.jsonl"),
        outputs: out.join("outputs.jsonl"),
        report_json: out.join("report.json"),
        report_text: out.join("report.txt"),
        loss_log: out.join("train_loss.csv"),
        out_dir: out,
    };
    cfg
}

fn small_synth(cfg: &EngineConfig) -> SynthConfig {
    SynthConfig {
        seed: cfg.seed,
        n_keywords: 15,
        samples_per_keyword: 3,
        held_out_queries: 8,
        n_utterances: 6,
        feat_dim: cfg.retriever.feat_dim,
        frames_min: 3,
        frames_max: 6,
        filler_vocab: 40,
        fillers_min: 8,
        fillers_max: 12,
        ..SynthConfig::default()
    }
}

fn setup(root: &Path) -> EngineConfig {
    let cfg = small_config(root);
    cmd_synthbench(&cfg, &small_synth(&cfg)).unwrap();
    cfg
}

fn file_bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

#[test]
fn synthbench_is_byte_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg_a = setup(dir_a.path());
    let cfg_b = setup(dir_b.path());
    for (a, b) in [
        (&cfg_a.paths.lexicon, &cfg_b.paths.lexicon),
        (&cfg_a.paths.corpus, &cfg_b.paths.corpus),
        (&cfg_a.paths.manifest, &cfg_b.paths.manifest),
        (&cfg_a.paths.events, &cfg_b.paths.events),
    ] {
        assert_eq!(file_bytes(a), file_bytes(b), "{}", a.display());
    }
    // A feature binary too.
    let feat = |cfg: &EngineConfig| {
        let dir = cfg.paths.out_dir.join("features").join("train");
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        file_bytes(&names[0])
    };
    assert_eq!(feat(&cfg_a), feat(&cfg_b));
}

#[test]
fn lexicon_lists_each_keyword_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let text = std::fs::read_to_string(&cfg.paths.lexicon).unwrap();
    let mut keywords: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    let total = keywords.len();
    keywords.sort_unstable();
    keywords.dedup();
    assert_eq!(total, 15);
    assert_eq!(keywords.len(), 15);
}

#[test]
fn training_is_reproducible_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let s1 = cmd_train_retriever(&cfg).unwrap();
    let bytes1 = file_bytes(&cfg.paths.checkpoint);
    let s2 = cmd_train_retriever(&cfg).unwrap();
    let bytes2 = file_bytes(&cfg.paths.checkpoint);
    assert_eq!(bytes1, bytes2);
    assert_eq!(s1, s2);
    assert!(s1.final_loss.unwrap() < s1.first_loss.unwrap());
    let log = std::fs::read_to_string(&cfg.paths.loss_log).unwrap();
    assert!(log.starts_with("step,lr,loss\n"));
    assert_eq!(log.lines().count(), 61);
}

#[test]
fn zero_step_training_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path());
    cfg.retriever.train.total_steps = 0;
    cmd_train_retriever(&cfg).unwrap();
    let loaded = load_checkpoint(&cfg.paths.checkpoint, &cfg.retriever_dims()).unwrap();
    let init = TowerParams::init(&cfg.retriever_dims(), cfg.train_config().seed).unwrap();
    assert_eq!(loaded.data(), init.data());
}

#[test]
fn corpus_parser_reports_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let path = cfg.paths.out_dir.join("broken.tsv");
    std::fs::write(&path, "# ok\nid-only-no-tabs\n").unwrap();
    let err = read_corpus(&path).unwrap_err().to_string();
    assert!(err.contains(":2:"), "{err}");
}

#[test]
fn index_build_is_reproducible_and_searchable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    cmd_train_retriever(&cfg).unwrap();
    let s1 = cmd_build_index(&cfg).unwrap();
    assert_eq!(s1.entries, 15);
    let bytes1 = file_bytes(&cfg.paths.index);
    cmd_build_index(&cfg).unwrap();
    assert_eq!(bytes1, file_bytes(&cfg.paths.index));
    // A keyword queried by its own text comes back on top at score ~1.
    let text = std::fs::read_to_string(&cfg.paths.lexicon).unwrap();
    let kw = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .unwrap()
        .split('\t')
        .next()
        .unwrap();
    let hits = cmd_search(&cfg, Some(kw), None, 3).unwrap();
    assert_eq!(hits[0].keyword, kw);
    assert!((hits[0].score - 1.0).abs() < 1e-6);
}

#[test]
fn duplicate_lexicon_entries_are_deduped_with_warning_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    cmd_train_retriever(&cfg).unwrap();
    let mut text = std::fs::read_to_string(&cfg.paths.lexicon).unwrap();
    let first = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .unwrap()
        .to_string();
    text.push_str(&first);
    text.push('\n');
    std::fs::write(&cfg.paths.lexicon, text).unwrap();
    let s = cmd_build_index(&cfg).unwrap();
    assert_eq!(s.duplicates_dropped, 1);
    assert_eq!(s.entries, 15);
}

#[test]
fn empty_event_file_yields_empty_output_and_success() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    cmd_train_retriever(&cfg).unwrap();
    cmd_build_index(&cfg).unwrap();
    std::fs::write(&cfg.paths.events, "").unwrap();
    let config_path = dir.path().join("ragboost.toml");
    std::fs::write(&config_path, cfg.render()).unwrap();
    let out = bin()
        .args(["--config", config_path.to_str().unwrap(), "run"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(file_bytes(&cfg.paths.outputs), b"");
}

#[test]
fn malformed_events_are_skipped_leniently_and_fail_strict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    cmd_train_retriever(&cfg).unwrap();
    cmd_build_index(&cfg).unwrap();
    let events = concat!(
        r#"{"kind":"open","id":"x1"}"#,
        "\n",
        "this is not json\n",
        r#"{"kind":"partial","id":"x1","source":"llm","revision":1,"text":"hello world"}"#,
        "\n",
        r#"{"kind":"partial","id":"x1","source":"llm","revision":1,"text":"stale"}"#,
        "\n",
        r#"{"kind":"finalize","id":"x1"}"#,
        "\n"
    );
    std::fs::write(&cfg.paths.events, events).unwrap();
    let summary = cmd_run(&cfg, false).unwrap();
    assert_eq!(summary.skipped, 2); // bad json + revision regression
    assert_eq!(summary.outputs, 2); // one fused, one final
    assert!(cmd_run(&cfg, true).is_err());
    // The binary reports the lenient skip through its exit code.
    let config_path = dir.path().join("ragboost.toml");
    std::fs::write(&config_path, cfg.render()).unwrap();
    let out = bin()
        .args(["--config", config_path.to_str().unwrap(), "run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_and_evaluate_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    cmd_train_retriever(&cfg).unwrap();
    cmd_build_index(&cfg).unwrap();
    let run = cmd_run(&cfg, false).unwrap();
    assert_eq!(run.skipped, 0);
    assert_eq!(run.events, 6 * 6);
    let eval = cmd_evaluate(&cfg, false).unwrap();
    assert_eq!(eval.utterances, 6);
    assert_eq!(eval.missing_references, 0);
    assert!(eval.wer < 0.5);
    // Text and JSON reports agree on every number shown in the text table.
    let report = read_report(&cfg.paths.report_json).unwrap();
    let text = std::fs::read_to_string(&cfg.paths.report_text).unwrap();
    let corpus_line = text
        .lines()
        .find(|l| l.starts_with("corpus"))
        .expect("corpus line");
    assert!(corpus_line.contains(&format!("{:.4}", report.corpus.wer)));
    assert!(corpus_line.contains(&format!("{:.4}", report.corpus.cer)));
    assert!(corpus_line.contains(&format!("{:.4}", report.corpus.mean_sem.unwrap())));
    for row in &report.rows {
        let line = text
            .lines()
            .find(|l| l.starts_with(&row.id))
            .unwrap_or_else(|| panic!("row {} missing from text report", row.id));
        assert!(line.contains(&format!("{:.4}", row.wer)));
    }
}

#[test]
fn evaluating_references_as_outputs_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    // Fabricate outputs identical to the references.
    let manifest = ragboost_cli::manifest::read_manifest(&cfg.paths.manifest).unwrap();
    let mut outputs = String::new();
    for r in &manifest {
        let reference = r.reference.clone().unwrap();
        let tokens: Vec<String> = reference.split_whitespace().map(str::to_string).collect();
        let record = ragboost_core::pipeline::OutputRecord::Final {
            id: r.id.clone(),
            tokens,
            text: reference,
        };
        outputs.push_str(&record.to_line());
        outputs.push('\n');
    }
    std::fs::write(&cfg.paths.outputs, outputs).unwrap();
    let eval = cmd_evaluate(&cfg, false).unwrap();
    assert_eq!(eval.wer, 0.0);
    assert_eq!(eval.cer, 0.0);
    assert!((eval.mean_sem.unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn missing_references_are_counted_or_abort_in_strict_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let record = ragboost_core::pipeline::OutputRecord::Final {
        id: "ghost".into(),
        tokens: vec!["hello".into()],
        text: "hello".into(),
    };
    std::fs::write(&cfg.paths.outputs, format!("{}\n", record.to_line())).unwrap();
    let eval = cmd_evaluate(&cfg, false).unwrap();
    assert_eq!(eval.missing_references, 1);
    assert_eq!(eval.utterances, 0);
    assert!(cmd_evaluate(&cfg, true).is_err());
}

#[test]
fn search_requires_exactly_one_query_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    cmd_train_retriever(&cfg).unwrap();
    cmd_build_index(&cfg).unwrap();
    assert!(cmd_search(&cfg, None, None, 3).is_err());
    assert!(cmd_search(&cfg, Some("kw"), Some(Path::new("x.bin")), 3).is_err());
}

#[test]
fn explicit_missing_config_is_an_error() {
    let out = bin()
        .args(["--config", "/nonexistent/ragboost.toml", "build-index"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_config_keys_are_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "mystery_knob = true\n").unwrap();
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "build-index"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery_knob"));
}
