//! Engine configuration: one TOML file with sections mirroring the
//! subsystems. Unknown keys are rejected; `load(render(cfg))` returns an
//! equal value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ragboost_core::fusion::{FusionConfig, Source};
use ragboost_core::index::{IndexConfig, IndexKind};
use ragboost_core::pipeline::PipelineConfig;
use ragboost_core::retriever::{ConvSpec, RetrieverDims, TextFeaturizer, TrainConfig};
use ragboost_core::rng::sub_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Root seed; all named sub-streams (train, kmeans, synthbench) derive
    /// from it unless a section pins its own seed.
    pub seed: u64,
    pub retriever: RetrieverSection,
    pub index: IndexSection,
    pub fusion: FusionSection,
    pub pipeline: PipelineSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 42,
            retriever: RetrieverSection::default(),
            index: IndexSection::default(),
            fusion: FusionSection::default(),
            pipeline: PipelineSection::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvLayerSection {
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
}

impl Default for ConvLayerSection {
    fn default() -> Self {
        ConvLayerSection {
            kernel: 3,
            channels: 64,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverSection {
    pub feat_dim: usize,
    pub conv: Vec<ConvLayerSection>,
    pub mlp: Vec<usize>,
    pub embed_dim: usize,
    pub text_dim: usize,
    pub ngram: usize,
    pub hash_seed: u64,
    pub train: TrainSection,
}

impl Default for RetrieverSection {
    fn default() -> Self {
        RetrieverSection {
            feat_dim: 40,
            conv: vec![ConvLayerSection::default(), ConvLayerSection::default()],
            mlp: vec![64],
            embed_dim: 64,
            text_dim: 1024,
            ngram: 3,
            hash_seed: 0,
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr0: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Explicit training seed; the root seed's `train` sub-stream otherwise.
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr0: 3e-4,
            weight_decay: 0.01,
            warmup_ratio: 0.01,
            total_steps: 8000,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    pub kind: IndexKind,
    pub n_clusters: usize,
    pub n_probe: usize,
    pub kmeans_iters: usize,
    pub seed: Option<u64>,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection {
            kind: IndexKind::Exact,
            n_clusters: 32,
            n_probe: 8,
            kmeans_iters: 25,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub weights: BTreeMap<String, f64>,
    pub null_weight_scale: f64,
    pub tie_priority: Vec<String>,
    pub use_confidence: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        let core = FusionConfig::default();
        FusionSection {
            weights: core
                .weights
                .iter()
                .map(|(s, &w)| (s.to_string(), w))
                .collect(),
            null_weight_scale: core.null_weight_scale,
            tie_priority: core.tie_priority.iter().map(|s| s.to_string()).collect(),
            use_confidence: core.use_confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub top_k: usize,
    pub tau_edit: f64,
    pub tau_score: f64,
    pub corrector_url: Option<String>,
    pub corrector_timeout_ms: u64,
    /// Minimum interval between retrievals per stream; 0 disables debouncing.
    pub min_retrieval_interval_ms: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            top_k: 5,
            tau_edit: 0.34,
            tau_score: 0.6,
            corrector_url: None,
            corrector_timeout_ms: 2000,
            min_retrieval_interval_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderChoice {
    Local,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub embedder: EmbedderChoice,
    pub embed_url: Option<String>,
    pub embed_dim: usize,
    pub embed_timeout_ms: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            embedder: EmbedderChoice::Local,
            embed_url: None,
            embed_dim: 2048,
            embed_timeout_ms: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub out_dir: PathBuf,
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub checkpoint: PathBuf,
    pub index: PathBuf,
    pub manifest: PathBuf,
    pub events: PathBuf,
    pub outputs: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    pub loss_log: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        let out = PathBuf::from("out");
        PathsSection {
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
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: EngineConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.retriever_dims()
            .validate()
            .context("retriever section")?;
        self.train_config().validate().context("train section")?;
        if self.retriever.ngram == 0 {
            bail!("retriever.ngram must be positive");
        }
        if self.pipeline.top_k == 0 {
            bail!("pipeline.top_k must be positive");
        }
        if !(0.0..=1.0).contains(&self.pipeline.tau_edit) {
            bail!("pipeline.tau_edit must lie in [0, 1]");
        }
        if self.eval.embed_dim == 0 {
            bail!("eval.embed_dim must be positive");
        }
        self.fusion_config()
            .map_err(|e| anyhow::anyhow!("{e}"))
            .context("fusion section")?
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }

    pub fn retriever_dims(&self) -> RetrieverDims {
        RetrieverDims {
            feat_dim: self.retriever.feat_dim,
            conv: self
                .retriever
                .conv
                .iter()
                .map(|c| ConvSpec {
                    kernel: c.kernel,
                    channels: c.channels,
                    stride: c.stride,
                })
                .collect(),
            mlp: self.retriever.mlp.clone(),
            embed_dim: self.retriever.embed_dim,
            text_dim: self.retriever.text_dim,
        }
    }

    pub fn featurizer(&self) -> TextFeaturizer {
        TextFeaturizer {
            ngram: self.retriever.ngram,
            dim: self.retriever.text_dim,
            seed: self.retriever.hash_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.retriever.train;
        TrainConfig {
            lr0: t.lr0,
            weight_decay: t.weight_decay,
            warmup_ratio: t.warmup_ratio,
            total_steps: t.total_steps,
            batch_size: t.batch_size,
            seed: t.seed.unwrap_or(self.seed),
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            kind: self.index.kind,
            n_clusters: self.index.n_clusters,
            n_probe: self.index.n_probe,
            kmeans_iters: self.index.kmeans_iters,
            seed: self.index.seed.unwrap_or_else(|| sub_seed(self.seed, "kmeans")),
        }
    }

    pub fn fusion_config(&self) -> ragboost_core::Result<FusionConfig> {
        let mut weights = BTreeMap::new();
        for (name, &w) in &self.fusion.weights {
            weights.insert(name.parse::<Source>()?, w);
        }
        let mut tie_priority = Vec::new();
        for name in &self.fusion.tie_priority {
            tie_priority.push(name.parse::<Source>()?);
        }
        Ok(FusionConfig {
            weights,
            null_weight_scale: self.fusion.null_weight_scale,
            tie_priority,
            use_confidence: self.fusion.use_confidence,
        })
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            top_k: self.pipeline.top_k,
            tau_edit: self.pipeline.tau_edit,
            tau_score: self.pipeline.tau_score,
            corrector_timeout: Duration::from_millis(self.pipeline.corrector_timeout_ms),
            min_retrieval_interval: Duration::from_millis(self.pipeline.min_retrieval_interval_ms),
        }
    }

    /// Corrector endpoint: `RAGBOOST_CORRECT_URL` overrides the config.
    pub fn corrector_url(&self) -> Option<String> {
        std::env::var("RAGBOOST_CORRECT_URL")
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.pipeline.corrector_url.clone())
    }

    /// Embedding endpoint: `RAGBOOST_EMBED_URL` overrides the config.
    pub fn embed_url(&self) -> Option<String> {
        std::env::var("RAGBOOST_EMBED_URL")
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.eval.embed_url.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = EngineConfig::default();
        let rendered = cfg.render();
        let parsed: EngineConfig = toml::from_str(&rendered).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn customized_round_trip_is_exact() {
        let mut cfg = EngineConfig::default();
        cfg.seed = 7;
        cfg.retriever.train.lr0 = 2.5e-4;
        cfg.retriever.train.seed = Some(99);
        cfg.index.kind = IndexKind::Ivf;
        cfg.index.n_clusters = 16;
        cfg.pipeline.corrector_url = Some("http://127.0.0.1:9090".into());
        cfg.fusion.weights.insert("rag".into(), 2.25);
        cfg.eval.embedder = EmbedderChoice::Http;
        cfg.eval.embed_url = Some("http://127.0.0.1:8080".into());
        let parsed: EngineConfig = toml::from_str(&cfg.render()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<EngineConfig>("bogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        assert!(toml::from_str::<EngineConfig>("[retriever]\nwidth = 3\n").is_err());
    }

    #[test]
    fn train_seed_defaults_to_root() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.train_config().seed, cfg.seed);
        let mut pinned = cfg.clone();
        pinned.retriever.train.seed = Some(5);
        assert_eq!(pinned.train_config().seed, 5);
    }

    #[test]
    fn fusion_section_maps_to_core_config() {
        let cfg = EngineConfig::default();
        let fusion = cfg.fusion_config().unwrap();
        assert_eq!(fusion.weight(Source::Rag), 1.5);
        assert!(fusion.validate().unwrap().is_empty());
    }

    #[test]
    fn bad_source_name_is_rejected() {
        let mut cfg = EngineConfig::default();
        cfg.fusion.weights.insert("decoder".into(), 1.0);
        assert!(cfg.fusion_config().is_err());
    }
}
