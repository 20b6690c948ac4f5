//! Contrastive training loop for the dual-tower retriever.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::sub_rng;
use crate::{Error, Result};

use super::params::TEMPERATURE_RANGE;
use super::{
    adamw_step, loss_and_grad, lr_at, AdamState, ContrastiveBatch, FeatureSequence, RetrieverDims,
    TextFeaturizer, TowerParams, TrainConfig, NEGATIVES_PER_SAMPLE,
};

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Owns the parameters and optimizer state across steps. Exposed so callers
/// can drive training on hand-built batches.
pub struct Trainer {
    pub params: TowerParams,
    state: AdamState,
    step: usize,
    cfg: TrainConfig,
}

impl Trainer {
    pub fn new(dims: &RetrieverDims, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = TowerParams::init(dims, cfg.seed)?;
        let len = params.len();
        Ok(Trainer {
            params,
            state: AdamState::new(len),
            step: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Run one optimizer step on a set of contrastive samples; gradients are
    /// averaged over the set.
    pub fn step_batches(&mut self, batches: &[ContrastiveBatch]) -> Result<StepLog> {
        if batches.is_empty() {
            return Err(Error::Empty("training step without samples".into()));
        }
        let mut grad_sum = vec![0.0; self.params.len()];
        let mut loss_sum = 0.0;
        for batch in batches {
            let (loss, grads) = loss_and_grad(batch, &self.params)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss at step {}",
                    self.step
                )));
            }
            loss_sum += loss;
            for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                *acc += g;
            }
        }
        let scale = 1.0 / batches.len() as f64;
        for g in &mut grad_sum {
            *g *= scale;
        }
        let lr = lr_at(self.step, &self.cfg);
        adamw_step(&mut self.params, &grad_sum, &mut self.state, lr, &self.cfg)?;
        let tau = self
            .params
            .temperature()
            .clamp(TEMPERATURE_RANGE.0, TEMPERATURE_RANGE.1);
        self.params.set_temperature(tau);
        let log = StepLog {
            step: self.step,
            lr,
            loss: loss_sum * scale,
        };
        self.step += 1;
        Ok(log)
    }
}

/// Featurized training corpus: each sample pairs a feature sequence with the
/// index of its keyword in the deduplicated keyword list.
struct PreparedCorpus {
    keywords: Vec<super::TextFeatures>,
    samples: Vec<(usize, usize)>, // (dataset index, keyword index)
}

fn prepare(
    dataset: &[(FeatureSequence, String)],
    featurizer: &TextFeaturizer,
) -> Result<PreparedCorpus> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    let mut by_text: BTreeMap<String, usize> = BTreeMap::new();
    let mut keywords = Vec::new();
    let mut samples = Vec::with_capacity(dataset.len());
    for (i, (_seq, keyword)) in dataset.iter().enumerate() {
        let tf = featurizer.featurize(keyword)?;
        let next = keywords.len();
        let ki = *by_text.entry(tf.keyword_text.clone()).or_insert(next);
        if ki == keywords.len() {
            keywords.push(tf);
        }
        samples.push((i, ki));
    }
    if keywords.len() <= NEGATIVES_PER_SAMPLE {
        return Err(Error::Train(format!(
            "need more than {NEGATIVES_PER_SAMPLE} distinct keywords to draw negatives, got {}",
            keywords.len()
        )));
    }
    Ok(PreparedCorpus { keywords, samples })
}

fn draw_batch(
    dataset: &[(FeatureSequence, String)],
    corpus: &PreparedCorpus,
    rng: &mut ChaCha8Rng,
    batch_size: usize,
) -> Result<Vec<ContrastiveBatch>> {
    let n_kw = corpus.keywords.len();
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (data_idx, kw_idx) = corpus.samples[rng.random_range(0..corpus.samples.len())];
        // Uniform without replacement over the other keywords: sample from a
        // range one short and skip over the positive's slot.
        let drawn = sample(rng, n_kw - 1, NEGATIVES_PER_SAMPLE);
        let negatives: Vec<_> = drawn
            .iter()
            .map(|j| {
                let j = if j >= kw_idx { j + 1 } else { j };
                corpus.keywords[j].clone()
            })
            .collect();
        out.push(ContrastiveBatch::new(
            dataset[data_idx].0.clone(),
            corpus.keywords[kw_idx].clone(),
            negatives,
        )?);
    }
    Ok(out)
}

/// Train the retriever on (feature sequence, keyword) pairs.
///
/// Fully deterministic given `cfg.seed`: initialization, sample selection,
/// and negative draws all derive from it. Returns the final parameters and
/// the per-step training log.
pub fn train_retriever(
    dataset: &[(FeatureSequence, String)],
    dims: &RetrieverDims,
    featurizer: &TextFeaturizer,
    cfg: &TrainConfig,
) -> Result<(TowerParams, Vec<StepLog>)> {
    if featurizer.dim != dims.text_dim {
        return Err(Error::dimension(
            "featurizer width",
            dims.text_dim,
            featurizer.dim,
        ));
    }
    let corpus = prepare(dataset, featurizer)?;
    let mut trainer = Trainer::new(dims, cfg)?;
    let mut rng = sub_rng(cfg.seed, "train");
    let mut logs = Vec::with_capacity(cfg.total_steps);
    for _ in 0..cfg.total_steps {
        let batch = draw_batch(dataset, &corpus, &mut rng, cfg.batch_size)?;
        logs.push(trainer.step_batches(&batch)?);
    }
    Ok((trainer.params, logs))
}
