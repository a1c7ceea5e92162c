//! Scalar loss functions on logits and class distributions.

use ndarray::{Array2, ArrayView1};

use super::{ModelError, Real};
use crate::corruption::TokenSequence;

pub fn log_softmax<F: Real>(logits: ArrayView1<'_, F>) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let lse = logits.iter().map(|&v| (v - max).exp()).fold(F::zero(), |a, b| a + b).ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

/// Class scores and their softmax. `log_probs` is the log-softmax of
/// `logits`, kept so that KL terms stay finite when a probability underflows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput<F> {
    pub logits: Vec<F>,
    pub probs: Vec<F>,
    pub log_probs: Vec<F>,
}

impl<F: Real> ClassifierOutput<F> {
    pub fn from_logits(logits: Vec<F>) -> Self {
        let log_probs = log_softmax(ArrayView1::from(&logits));
        let probs = log_probs.iter().map(|&l| l.exp()).collect();
        Self {
            logits,
            probs,
            log_probs,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.logits.len()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// `−Σ_{t ∈ masked} ln softmax(logits[t])[target[t]]`.
pub fn reconstruction_loss<F: Real>(
    logits: &Array2<F>,
    target: &TokenSequence,
    masked: &[usize],
) -> Result<F, ModelError> {
    if masked.is_empty() {
        return Err(ModelError::EmptyMaskSet);
    }
    let vocab = logits.ncols();
    let mut total = F::zero();
    for &t in masked {
        let y = usize::from(target.tokens[t]);
        if y >= vocab {
            return Err(ModelError::OutOfVocab { token: target.tokens[t], vocab });
        }
        total -= log_softmax(logits.row(t))[y];
    }
    Ok(total)
}

pub fn cross_entropy<F: Real>(out: &ClassifierOutput<F>, y: usize) -> Result<F, ModelError> {
    match out.log_probs.get(y) {
        Some(&lp) => Ok(-lp),
        None => Err(ModelError::InvalidLabel {
            label: y,
            n_classes: out.n_classes(),
        }),
    }
}

/// `Σ p_i (ln p_i − ln q_i)`.
pub fn kl_divergence<F: Real>(p: &ClassifierOutput<F>, q: &ClassifierOutput<F>) -> F {
    p.probs
        .iter()
        .zip(&p.log_probs)
        .zip(&q.log_probs)
        .map(|((&pi, &lp), &lq)| pi * (lp - lq))
        .fold(F::zero(), |a, b| a + b)
}

/// Gradients of `KL(p‖q)` with respect to the logits of `p` and of `q`.
pub(crate) fn kl_logit_grads<F: Real>(p: &ClassifierOutput<F>, q: &ClassifierOutput<F>) -> (Vec<F>, Vec<F>) {
    let kl = kl_divergence(p, q);
    let dp = p
        .probs
        .iter()
        .zip(&p.log_probs)
        .zip(&q.log_probs)
        .map(|((&pi, &lp), &lq)| pi * (lp - lq - kl))
        .collect();
    let dq = q.probs.iter().zip(&p.probs).map(|(&qi, &pi)| qi - pi).collect();
    (dp, dq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneLoss<F> {
    pub sup: F,
    pub cons: F,
    pub total: F,
}

/// `CE(raw, y) + λ (KL(raw‖protocol) + KL(raw‖packet))`.
pub fn finetune_loss<F: Real>(
    raw: &ClassifierOutput<F>,
    protocol: &ClassifierOutput<F>,
    packet: &ClassifierOutput<F>,
    y: usize,
    lambda: F,
) -> Result<FinetuneLoss<F>, ModelError> {
    let sup = cross_entropy(raw, y)?;
    let cons = kl_divergence(raw, protocol) + kl_divergence(raw, packet);
    Ok(FinetuneLoss {
        sup,
        cons,
        total: sup + lambda * cons,
    })
}
