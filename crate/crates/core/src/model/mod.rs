//! The encoder-decoder network, its reconstruction and classification heads,
//! and the pre-training and fine-tuning losses with their gradients.
//!
//! Token ids at or beyond a sequence's `valid_len` are replaced by the PAD id
//! before embedding, and every attention ignores those key positions. The
//! three special ids are the top of the vocabulary: `PAD = V-3`, `MASK = V-2`,
//! `BOS = V-1` (256, 257, 258 for the byte vocabulary).

mod checkpoint;
pub mod layers;
mod loss;
mod real;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{TokenSequence, TrainingSample};
use crate::rng::rng_for;
use layers::{DecoderCache, DecoderLayer, Embedding, EncoderCache, EncoderLayer, FeedForward, FeedForwardCache};
use layers::{Linear, ParamList, ParamListMut};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{cross_entropy, finetune_loss, kl_divergence, log_softmax, reconstruction_loss, ClassifierOutput, FinetuneLoss};
pub use real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("token id {token} outside vocabulary of {vocab}")]
    OutOfVocab { token: u16, vocab: usize },
    #[error("reconstruction loss needs at least one masked position")]
    EmptyMaskSet,
    #[error("model has no classification head")]
    NoClassifierHead,
    #[error("label {label} outside [0, {n_classes})")]
    InvalidLabel { label: usize, n_classes: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence length {found} does not fit (expected at most {max_len}, input and target equal)")]
    BadLength { found: usize, max_len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// `M × L`.
    pub max_len: usize,
    pub vocab_size: usize,
    /// Present once a classification head is attached.
    pub n_classes: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full(640)
    }
}

impl ModelConfig {
    /// Six encoder and six decoder layers at width 256.
    pub fn full(max_len: usize) -> Self {
        Self {
            d_model: 256,
            n_enc_layers: 6,
            n_dec_layers: 6,
            n_heads: 8,
            d_ff: 1024,
            max_len,
            vocab_size: crate::corruption::VOCAB_SIZE,
            n_classes: None,
        }
    }

    /// One encoder and one decoder layer at width 32; used for desk-scale runs.
    pub fn tiny(max_len: usize) -> Self {
        Self {
            d_model: 32,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 2,
            d_ff: 64,
            max_len,
            vocab_size: crate::corruption::VOCAB_SIZE,
            n_classes: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size < 4 || self.vocab_size > usize::from(u16::MAX) {
            return bad("vocab_size must be in [4, 65535]");
        }
        if self.n_classes == Some(0) {
            return bad("n_classes must be positive");
        }
        Ok(())
    }

    pub fn pad_id(&self) -> usize {
        self.vocab_size - 3
    }

    pub fn mask_id(&self) -> usize {
        self.vocab_size - 2
    }

    pub fn bos_id(&self) -> usize {
        self.vocab_size - 1
    }
}

/// Every trainable tensor. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<F> {
    pub embed: Embedding<F>,
    pub encoder: Vec<EncoderLayer<F>>,
    pub decoder: Vec<DecoderLayer<F>>,
    pub lm_head: Linear<F>,
    pub classifier: Option<FeedForward<F>>,
}

impl<F: Real> Weights<F> {
    pub fn zeros_like(&self) -> Self {
        Self {
            embed: self.embed.zeros_like(),
            encoder: self.encoder.iter().map(EncoderLayer::zeros_like).collect(),
            decoder: self.decoder.iter().map(DecoderLayer::zeros_like).collect(),
            lm_head: self.lm_head.zeros_like(),
            classifier: self.classifier.as_ref().map(FeedForward::zeros_like),
        }
    }

    /// Named tensors in canonical order; the order is the checkpoint order.
    pub fn params(&self) -> ParamList<'_, F> {
        let mut out = Vec::new();
        self.embed.params("embed", &mut out);
        for (i, l) in self.encoder.iter().enumerate() {
            l.params(&format!("encoder.{i}"), &mut out);
        }
        for (i, l) in self.decoder.iter().enumerate() {
            l.params(&format!("decoder.{i}"), &mut out);
        }
        self.lm_head.params("lm_head", &mut out);
        if let Some(c) = &self.classifier {
            c.params("classifier", &mut out);
        }
        out
    }

    /// Same order as [`Weights::params`].
    pub fn params_mut(&mut self) -> ParamListMut<'_, F> {
        let mut out = Vec::new();
        self.embed.params_mut(&mut out);
        for l in &mut self.encoder {
            l.params_mut(&mut out);
        }
        for l in &mut self.decoder {
            l.params_mut(&mut out);
        }
        self.lm_head.params_mut(&mut out);
        if let Some(c) = &mut self.classifier {
            c.params_mut(&mut out);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.params_mut() {
            t.fill(F::zero());
        }
    }

    /// Global L2 norm over all tensors.
    pub fn norm(&self) -> F {
        self.params()
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .fold(F::zero(), |a, &v| a + v * v)
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLoss<F> {
    pub byte: F,
    pub protocol: F,
    pub packet: F,
    pub total: F,
}

/// Activations kept from a full encoder-decoder pass.
struct Trace<F> {
    enc_ids: Vec<usize>,
    dec_ids: Vec<usize>,
    enc: Vec<EncoderCache<F>>,
    dec: Vec<DecoderCache<F>>,
    memory_dim: (usize, usize),
    hidden: Array2<F>,
}

struct ClassTrace<F> {
    trace: Trace<F>,
    head: FeedForwardCache<F>,
    pooled_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nethira<F> {
    config: ModelConfig,
    pub weights: Weights<F>,
}

fn classifier_head<F: Real>(d: usize, n_classes: usize, seed: u64) -> FeedForward<F> {
    FeedForward::new(d, d, n_classes, &mut rng_for(seed, &[0xC1A5]))
}

impl<F: Real> Nethira<F> {
    /// Fresh parameters drawn from `seed`. A classification head is attached
    /// when `config.n_classes` is set.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0x0DE1]);
        let (d, h, ff) = (config.d_model, config.n_heads, config.d_ff);
        let weights = Weights {
            embed: Embedding::new(config.vocab_size, config.max_len, d, &mut rng),
            encoder: (0..config.n_enc_layers).map(|_| EncoderLayer::new(d, h, ff, &mut rng)).collect(),
            decoder: (0..config.n_dec_layers).map(|_| DecoderLayer::new(d, h, ff, &mut rng)).collect(),
            lm_head: Linear::new(d, config.vocab_size, &mut rng),
            classifier: config.n_classes.map(|n| classifier_head(d, n, seed)),
        };
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Replaces any classification head with a fresh one for `n_classes`.
    pub fn attach_classifier(&mut self, n_classes: usize, seed: u64) -> Result<(), ModelError> {
        let mut config = self.config.clone();
        config.n_classes = Some(n_classes);
        config.validate()?;
        self.weights.classifier = Some(classifier_head(config.d_model, n_classes, seed));
        self.config = config;
        Ok(())
    }

    pub fn zero_grads(&self) -> Weights<F> {
        self.weights.zeros_like()
    }

    /// Ids fed to the embedding: the sequence with PAD from `valid_len` on.
    pub fn model_ids(&self, seq: &TokenSequence) -> Result<Vec<usize>, ModelError> {
        if seq.len() > self.config.max_len {
            return Err(ModelError::BadLength {
                found: seq.len(),
                max_len: self.config.max_len,
            });
        }
        let pad = self.config.pad_id();
        seq.tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i >= seq.valid_len {
                    Ok(pad)
                } else if usize::from(t) < self.config.vocab_size {
                    Ok(usize::from(t))
                } else {
                    Err(ModelError::OutOfVocab {
                        token: t,
                        vocab: self.config.vocab_size,
                    })
                }
            })
            .collect()
    }

    fn shifted(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(ids.len());
        if !ids.is_empty() {
            out.push(self.config.bos_id());
            out.extend_from_slice(&ids[..ids.len() - 1]);
        }
        out
    }

    /// Token plus positional embedding, `[len, d_model]`.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Array2<F>, ModelError> {
        Ok(self.weights.embed.forward(&self.model_ids(seq)?))
    }

    /// Bidirectional encoder stack. Keys from `valid_len` on are ignored.
    pub fn encode(&self, embedded: &Array2<F>, valid_len: usize) -> Array2<F> {
        let mut x = embedded.clone();
        for layer in &self.weights.encoder {
            x = layer.forward(&x, valid_len).0;
        }
        x
    }

    /// Teacher-forced decoder logits `[len, vocab]`. `target` is the clean,
    /// unshifted sequence; the decoder reads `[BOS, target[0], …, target[len-2]]`,
    /// so logits at position `t` depend only on `memory` and `target[..t]`.
    /// `target.valid_len` masks both decoder and memory keys.
    pub fn decode(&self, memory: &Array2<F>, target: &TokenSequence) -> Result<Array2<F>, ModelError> {
        let ids = self.shifted(&self.model_ids(target)?);
        let mut h = self.weights.embed.forward(&ids);
        for layer in &self.weights.decoder {
            h = layer.forward(&h, memory, target.valid_len, target.valid_len).0;
        }
        Ok(self.weights.lm_head.forward(&h))
    }

    fn forward(&self, input: &TokenSequence, target: &TokenSequence) -> Result<Trace<F>, ModelError> {
        if input.len() != target.len() {
            return Err(ModelError::BadLength {
                found: target.len(),
                max_len: input.len(),
            });
        }
        let enc_ids = self.model_ids(input)?;
        let dec_ids = self.shifted(&self.model_ids(target)?);
        let mut x = self.weights.embed.forward(&enc_ids);
        let mut enc = Vec::with_capacity(self.weights.encoder.len());
        for layer in &self.weights.encoder {
            let (y, c) = layer.forward(&x, input.valid_len);
            enc.push(c);
            x = y;
        }
        let memory = x;
        let mut h = self.weights.embed.forward(&dec_ids);
        let mut dec = Vec::with_capacity(self.weights.decoder.len());
        for layer in &self.weights.decoder {
            let (y, c) = layer.forward(&h, &memory, target.valid_len, input.valid_len);
            dec.push(c);
            h = y;
        }
        Ok(Trace {
            enc_ids,
            dec_ids,
            enc,
            dec,
            memory_dim: memory.dim(),
            hidden: h,
        })
    }

    fn backward(&self, trace: &Trace<F>, d_hidden: Array2<F>, g: &mut Weights<F>) {
        let mut dmem = Array2::zeros(trace.memory_dim);
        let mut dh = d_hidden;
        for ((layer, cache), gl) in self.weights.decoder.iter().zip(&trace.dec).zip(&mut g.decoder).rev() {
            let (dx, dm) = layer.backward(cache, &dh, gl);
            dmem += &dm;
            dh = dx;
        }
        self.weights.embed.backward(&trace.dec_ids, &dh, &mut g.embed);
        let mut dx = dmem;
        for ((layer, cache), gl) in self.weights.encoder.iter().zip(&trace.enc).zip(&mut g.encoder).rev() {
            dx = layer.backward(cache, &dx, gl);
        }
        self.weights.embed.backward(&trace.enc_ids, &dx, &mut g.embed);
    }

    /// Reconstruction loss of one sample, with logits computed only at the
    /// masked positions. When `grads` is given, `scale × ∂loss/∂θ` is added to it.
    pub fn reconstruction_loss_and_grad(
        &self,
        sample: &TrainingSample,
        scale: F,
        grads: Option<&mut Weights<F>>,
    ) -> Result<F, ModelError> {
        let masked = &sample.plan.masked_positions;
        if masked.is_empty() {
            return Err(ModelError::EmptyMaskSet);
        }
        let trace = self.forward(&sample.input, &sample.target)?;
        let rows = trace.hidden.select(Axis(0), masked);
        let mut dlogits = self.weights.lm_head.forward(&rows);
        let vocab = self.config.vocab_size;
        let mut loss = F::zero();
        for (mut row, &t) in dlogits.rows_mut().into_iter().zip(masked) {
            let token = sample.target.tokens[t];
            let y = usize::from(token);
            if y >= vocab {
                return Err(ModelError::OutOfVocab { token, vocab });
            }
            let lsm = log_softmax(row.view());
            loss -= lsm[y];
            for (d, l) in row.iter_mut().zip(lsm) {
                *d = l.exp() * scale;
            }
            row[y] -= scale;
        }
        if let Some(g) = grads {
            let drows = self.weights.lm_head.backward(&rows, &dlogits, &mut g.lm_head);
            let mut d_hidden = Array2::zeros(trace.hidden.dim());
            for (drow, &t) in drows.rows().into_iter().zip(masked) {
                let mut r = d_hidden.row_mut(t);
                r += &drow;
            }
            self.backward(&trace, d_hidden, g);
        }
        Ok(loss)
    }

    /// Sum of the three reconstruction losses, each from its own forward pass.
    pub fn pretrain_loss(
        &self,
        byte: &TrainingSample,
        protocol: &TrainingSample,
        packet: &TrainingSample,
    ) -> Result<PretrainLoss<F>, ModelError> {
        self.pretrain_loss_and_grad(byte, protocol, packet, F::one(), None)
    }

    pub fn pretrain_loss_and_grad(
        &self,
        byte: &TrainingSample,
        protocol: &TrainingSample,
        packet: &TrainingSample,
        scale: F,
        mut grads: Option<&mut Weights<F>>,
    ) -> Result<PretrainLoss<F>, ModelError> {
        let byte = self.reconstruction_loss_and_grad(byte, scale, grads.as_deref_mut())?;
        let protocol = self.reconstruction_loss_and_grad(protocol, scale, grads.as_deref_mut())?;
        let packet = self.reconstruction_loss_and_grad(packet, scale, grads)?;
        Ok(PretrainLoss {
            byte,
            protocol,
            packet,
            total: byte + protocol + packet,
        })
    }

    fn classify_trace(&self, seq: &TokenSequence) -> Result<(ClassifierOutput<F>, ClassTrace<F>), ModelError> {
        let head = self.weights.classifier.as_ref().ok_or(ModelError::NoClassifierHead)?;
        let trace = self.forward(seq, seq)?;
        let rows = seq.valid_len.min(trace.hidden.nrows());
        let mut pooled = Array2::zeros((1, self.config.d_model));
        if rows > 0 {
            let sum = trace.hidden.slice(ndarray::s![..rows, ..]).sum_axis(Axis(0));
            pooled.row_mut(0).assign(&(sum / F::from(rows).expect("row count fits")));
        }
        let (logits, cache) = head.forward(&pooled);
        let out = ClassifierOutput::from_logits(logits.row(0).to_vec());
        Ok((
            out,
            ClassTrace {
                trace,
                head: cache,
                pooled_rows: rows,
            },
        ))
    }

    fn classify_backward(&self, ct: &ClassTrace<F>, dlogits: &[F], g: &mut Weights<F>) {
        let head = self.weights.classifier.as_ref().expect("traced with a head");
        let gh = g.classifier.as_mut().expect("gradient buffer has a head");
        let dl = Array2::from_shape_vec((1, dlogits.len()), dlogits.to_vec()).expect("shape matches");
        let dpooled = head.backward(&ct.head, &dl, gh);
        let mut d_hidden = Array2::zeros(ct.trace.hidden.dim());
        if ct.pooled_rows > 0 {
            let share = dpooled.row(0).mapv(|v| v / F::from(ct.pooled_rows).expect("row count fits"));
            for mut r in d_hidden.rows_mut().into_iter().take(ct.pooled_rows) {
                r.assign(&share);
            }
        }
        self.backward(&ct.trace, d_hidden, g);
    }

    /// Encoder, decoder teacher-forced on `seq` itself, mean pool over
    /// positions `< valid_len`, then the classifier MLP.
    pub fn classify(&self, seq: &TokenSequence) -> Result<ClassifierOutput<F>, ModelError> {
        Ok(self.classify_trace(seq)?.0)
    }

    /// Fine-tuning loss of one labeled flow. `views` holds the protocol and
    /// packet augmentations; without them the consistency term is skipped and
    /// reported as 0. With `stop_grad_raw`, the raw branch receives gradient
    /// only from the supervised term.
    #[allow(clippy::too_many_arguments)]
    pub fn finetune_loss_and_grad(
        &self,
        raw: &TokenSequence,
        views: Option<(&TokenSequence, &TokenSequence)>,
        y: usize,
        lambda: F,
        stop_grad_raw: bool,
        scale: F,
        mut grads: Option<&mut Weights<F>>,
    ) -> Result<FinetuneLoss<F>, ModelError> {
        let (raw_out, raw_trace) = self.classify_trace(raw)?;
        let sup = cross_entropy(&raw_out, y)?;
        let mut d_raw: Vec<F> = raw_out.probs.iter().map(|&p| p * scale).collect();
        d_raw[y] -= scale;
        let mut cons = F::zero();
        if let Some((protocol, packet)) = views {
            for view in [protocol, packet] {
                let (out, trace) = self.classify_trace(view)?;
                cons += kl_divergence(&raw_out, &out);
                if let Some(g) = grads.as_deref_mut() {
                    let (dp, dq) = loss::kl_logit_grads(&raw_out, &out);
                    if !stop_grad_raw {
                        for (d, v) in d_raw.iter_mut().zip(dp) {
                            *d += lambda * scale * v;
                        }
                    }
                    let dq: Vec<F> = dq.into_iter().map(|v| v * lambda * scale).collect();
                    self.classify_backward(&trace, &dq, g);
                }
            }
        }
        if let Some(g) = grads {
            self.classify_backward(&raw_trace, &d_raw, g);
        }
        Ok(FinetuneLoss {
            sup,
            cons,
            total: sup + lambda * cons,
        })
    }
}
