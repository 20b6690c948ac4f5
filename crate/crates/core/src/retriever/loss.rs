//! Contrastive InfoNCE loss and its analytic gradient through both towers.

use crate::linalg::dot;
use crate::{Error, Result};

use super::forward::{speech_backward, speech_forward, text_backward, text_forward};
use super::{ContrastiveBatch, Embedding, TowerParams, NORM_TOLERANCE};

/// InfoNCE over raw logits: -ln(exp(pos) / (exp(pos) + sum_j exp(neg_j))).
///
/// Computed with max-logit subtraction. The negative exponentials are summed
/// in ascending value order, which makes the result independent of the order
/// the negatives are supplied in.
pub fn info_nce_from_logits(pos: f64, negs: &[f64]) -> f64 {
    let max = negs.iter().copied().fold(pos, f64::max);
    let mut terms: Vec<f64> = negs.iter().map(|&n| (n - max).exp()).collect();
    terms.sort_by(f64::total_cmp);
    let mut z = (pos - max).exp();
    for t in terms {
        z += t;
    }
    -(pos - max) + z.ln()
}

fn check_unit(e: &Embedding, what: &str) -> Result<()> {
    let n = dot(e.values(), e.values()).sqrt();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "{what} embedding norm {n} is not unit"
        )));
    }
    Ok(())
}

/// InfoNCE loss of one anchor against its positive and negative embeddings.
pub fn info_nce_loss(
    anchor: &Embedding,
    positive: &Embedding,
    negatives: &[Embedding],
    temperature: f64,
) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(
            "temperature must be positive".into(),
        ));
    }
    check_unit(anchor, "anchor")?;
    check_unit(positive, "positive")?;
    for n in negatives {
        check_unit(n, "negative")?;
    }
    let pos = dot(anchor.values(), positive.values()) / temperature;
    let negs: Vec<f64> = negatives
        .iter()
        .map(|n| dot(anchor.values(), n.values()) / temperature)
        .collect();
    Ok(info_nce_from_logits(pos, &negs))
}

/// Forward-only batch loss via both towers. Matches the loss returned by
/// [`loss_and_grad`] bit for bit.
pub fn batch_loss(batch: &ContrastiveBatch, params: &TowerParams) -> Result<f64> {
    let anchor = speech_forward(&batch.anchor, params)?;
    let pos = text_forward(&batch.positive, params)?;
    let tau = params.temperature();
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(
            "temperature must be positive".into(),
        ));
    }
    let pos_logit = dot(&anchor.emb, &pos.emb) / tau;
    let mut neg_logits = Vec::with_capacity(batch.negatives.len());
    for tf in &batch.negatives {
        let t = text_forward(tf, params)?;
        neg_logits.push(dot(&anchor.emb, &t.emb) / tau);
    }
    Ok(info_nce_from_logits(pos_logit, &neg_logits))
}

/// Order negatives canonically: ascending logit, ties broken by lexicographic
/// comparison of the embedding values. Gradient accumulation follows this
/// order so permuting the input negatives leaves every output bit unchanged.
fn canonical_order(neg_logits: &[f64], neg_embs: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..neg_logits.len()).collect();
    idx.sort_by(|&a, &b| {
        neg_logits[a].total_cmp(&neg_logits[b]).then_with(|| {
            for (x, y) in neg_embs[a].iter().zip(&neg_embs[b]) {
                let c = x.total_cmp(y);
                if c != std::cmp::Ordering::Equal {
                    return c;
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    idx
}

/// Loss and analytic gradients of the full dual-tower InfoNCE objective.
///
/// The gradient buffer shares the flat layout of `params` (temperature
/// included).
pub fn loss_and_grad(batch: &ContrastiveBatch, params: &TowerParams) -> Result<(f64, Vec<f64>)> {
    let tau = params.temperature();
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(
            "temperature must be positive".into(),
        ));
    }
    let anchor = speech_forward(&batch.anchor, params)?;
    let pos = text_forward(&batch.positive, params)?;
    let neg_traces: Vec<_> = batch
        .negatives
        .iter()
        .map(|tf| text_forward(tf, params))
        .collect::<Result<_>>()?;

    let pos_sim = dot(&anchor.emb, &pos.emb);
    let neg_sims: Vec<f64> = neg_traces
        .iter()
        .map(|t| dot(&anchor.emb, &t.emb))
        .collect();
    let pos_logit = pos_sim / tau;
    let neg_logits: Vec<f64> = neg_sims.iter().map(|&s| s / tau).collect();

    let neg_embs: Vec<Vec<f64>> = neg_traces.iter().map(|t| t.emb.clone()).collect();
    let order = canonical_order(&neg_logits, &neg_embs);

    let max = neg_logits.iter().copied().fold(pos_logit, f64::max);
    let pos_exp = (pos_logit - max).exp();
    let mut z = pos_exp;
    for &j in &order {
        z += (neg_logits[j] - max).exp();
    }
    let loss = -(pos_logit - max) + z.ln();
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }

    // d loss / d logit_k = softmax_k - [k == positive]
    let d_pos_logit = pos_exp / z - 1.0;
    let d_neg_logits: Vec<f64> = neg_logits.iter().map(|&l| (l - max).exp() / z).collect();

    let mut grads = vec![0.0; params.len()];

    // Temperature: logit_k = sim_k / tau, so d logit_k / d tau = -sim_k / tau^2.
    let mut d_tau = d_pos_logit * (-pos_sim / (tau * tau));
    for &j in &order {
        d_tau += d_neg_logits[j] * (-neg_sims[j] / (tau * tau));
    }
    grads[params.temp_offset()] = d_tau;

    // Anchor embedding gradient: sum over candidates of d_logit * v / tau,
    // accumulated positive-first then negatives in canonical order.
    let e_dim = anchor.emb.len();
    let mut d_anchor = vec![0.0; e_dim];
    for i in 0..e_dim {
        d_anchor[i] += d_pos_logit * pos.emb[i] / tau;
    }
    for &j in &order {
        let scale = d_neg_logits[j] / tau;
        for i in 0..e_dim {
            d_anchor[i] += scale * neg_embs[j][i];
        }
    }
    speech_backward(&anchor, params, &d_anchor, &mut grads);

    // Positive text gradient.
    let d_pos_emb: Vec<f64> = anchor.emb.iter().map(|&a| d_pos_logit * a / tau).collect();
    text_backward(&pos, &batch.positive, params, &d_pos_emb, &mut grads);

    // Negative text gradients in canonical order.
    for &j in &order {
        let scale = d_neg_logits[j] / tau;
        let d_neg_emb: Vec<f64> = anchor.emb.iter().map(|&a| scale * a).collect();
        text_backward(
            &neg_traces[j],
            &batch.negatives[j],
            params,
            &d_neg_emb,
            &mut grads,
        );
    }

    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("contrastive gradients".into()));
    }
    Ok((loss, grads))
}
