//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use nethira::corruption::{CorruptionKind, CorruptionPlan, TokenSequence, TrainingSample};
use nethira::model::{ModelConfig, Nethira, Weights};

/// d_model 8, one encoder and one decoder layer, length 8, vocabulary 12.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_ff: 16,
        max_len: 8,
        vocab_size: 12,
        n_classes: Some(3),
    }
}

pub fn seq(tokens: &[u16], packet_len: usize, valid_len: usize) -> TokenSequence {
    TokenSequence {
        tokens: tokens.to_vec(),
        packet_len,
        valid_len,
    }
}

/// Masks `positions` of `target` with `mask` (small-vocabulary samples).
pub fn masked_sample(
    kind: CorruptionKind,
    target: &TokenSequence,
    positions: &[usize],
    mask: u16,
    permutation: Vec<usize>,
) -> TrainingSample {
    let mut input = target.clone();
    for &p in positions {
        input.tokens[p] = mask;
    }
    TrainingSample {
        input,
        target: target.clone(),
        plan: CorruptionPlan {
            kind,
            masked_positions: positions.to_vec(),
            permutation,
            seed: 0,
        },
    }
}

/// One sample of each pre-training kind over two packets of four ids.
pub fn toy_pretrain_samples() -> [TrainingSample; 3] {
    let clean = seq(&[3, 1, 4, 1, 5, 2, 6, 5], 4, 8);
    let byte = masked_sample(CorruptionKind::Byte, &clean, &[1, 6], 10, vec![0, 1]);
    let protocol = masked_sample(CorruptionKind::Protocol, &clean, &[0, 1, 2, 4], 10, vec![0, 1]);
    let permuted = seq(&[5, 2, 6, 5, 3, 1, 4, 1], 4, 8);
    let packet = masked_sample(CorruptionKind::Packet, &permuted, &[2, 5], 10, vec![1, 0]);
    [byte, protocol, packet]
}

pub fn flat_grads(g: &Weights<f64>) -> Vec<f64> {
    g.params().iter().flat_map(|(_, _, d)| d.iter().copied()).collect()
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every parameter. Entries where both magnitudes are below
/// `floor` are compared against `floor` instead, so that values that are zero
/// up to rounding do not dominate.
pub fn max_relative_error(
    model: &Nethira<f64>,
    analytic: &[f64],
    loss: impl Fn(&Nethira<f64>) -> f64,
    h: f64,
    floor: f64,
) -> (f64, usize) {
    let mut probe = model.clone();
    let mut worst = (0.0, 0);
    let mut idx = 0;
    let n_tensors = probe.weights.params_mut().len();
    for t in 0..n_tensors {
        let len = probe.weights.params_mut()[t].len();
        for i in 0..len {
            let orig = probe.weights.params_mut()[t][i];
            probe.weights.params_mut()[t][i] = orig + h;
            let up = loss(&probe);
            probe.weights.params_mut()[t][i] = orig - h;
            let down = loss(&probe);
            probe.weights.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if std::env::var_os("GRADCHECK_TRACE").is_some() && rel > 1e-4 {
                eprintln!("idx {idx}: analytic {a:e} numeric {numeric:e}");
            }
            if rel > worst.0 {
                worst = (rel, idx);
            }
            idx += 1;
        }
    }
    worst
}

/// Per-class (precision, recall, F1) and the macro means, counted directly
/// from the label pairs.
pub fn brute_force_metrics(truth: &[usize], pred: &[usize], n: usize) -> (Vec<[f64; 3]>, [f64; 3]) {
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let pr = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) };
        per_class.push([pr, rc, f1]);
    }
    let mean = |k: usize| per_class.iter().map(|m| m[k]).sum::<f64>() / n as f64;
    let macro_avg = [mean(0), mean(1), mean(2)];
    (per_class, macro_avg)
}

/// Exact comparison of a report against [`brute_force_metrics`].
pub fn report_matches_brute_force(
    report: &nethira::eval::MetricsReport,
    truth: &[usize],
    pred: &[usize],
    n: usize,
) -> bool {
    let (per_class, m) = brute_force_metrics(truth, pred, n);
    let rows_match = report
        .per_class
        .iter()
        .zip(&per_class)
        .all(|(a, b)| [a.precision, a.recall, a.f1] == *b);
    let macro_match = [report.macro_avg.precision, report.macro_avg.recall, report.macro_avg.f1] == m;
    let counts: u64 = report.confusion.iter().flatten().sum();
    rows_match && macro_match && counts == truth.len() as u64 && report.per_class.len() == n
}
