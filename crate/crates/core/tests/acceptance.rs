//! The acceptance suite: nine criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the summary lines always reach the
//! console. `NETHIRA_CRITERIA=1,3,9` restricts the run to a subset.

mod common;

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use nethira::corruption::{
    augment_packet, corrupt_byte, corrupt_packet, corrupt_protocol, CorruptionConfig, CorruptionKind, TokenSequence,
    TrainingSample, MASK,
};
use nethira::eval::{
    evaluate, metrics_from_predictions, predict, report_from_confusion, split_dataset, ExperimentConfig,
    MetricsReport, Splits,
};
use nethira::ingest::{
    anonymize, encode_line, flatten, normalize_flow, preprocess_dir, preprocess_packets, read_pcap, FlowRecord,
    NormalizedPacket, PreprocessConfig, RawPacket,
};
use nethira::model::{
    finetune_loss, kl_divergence, reconstruction_loss, ClassifierOutput, ModelCheckpoint, ModelConfig, Nethira,
};
use nethira::protocol_map::parse_fields;
use nethira::rng::rng_for;
use nethira::synthetic::{PacketBuilder, SyntheticTraffic};
use nethira::training::{finetune, pretrain, FinetuneLogRow, FinetuneMode, PretrainLogRow};
use ndarray::Array2;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

// 1. Preprocessing golden files.

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn random_packet(rng: &mut impl Rng, src: IpAddr, dst: IpAddr, sport: u16, dport: u16) -> Vec<u8> {
    let udp = rng.random_bool(0.5);
    let mut b = match (src, udp) {
        (IpAddr::V4(_), false) => PacketBuilder::tcp_v4(),
        (IpAddr::V4(_), true) => PacketBuilder::udp_v4(),
        (IpAddr::V6(_), false) => PacketBuilder::tcp_v6(),
        (IpAddr::V6(_), true) => PacketBuilder::udp_v6(),
    };
    b = b
        .ips(src, dst)
        .ports(sport, dport)
        .macs(rng.random(), rng.random())
        .ttl(rng.random())
        .ip_id(rng.random());
    if rng.random_bool(0.2) {
        b = b.vlan(rng.random());
    }
    if src.is_ipv4() && rng.random_bool(0.2) {
        b = b.ip_options(vec![1; 4 * rng.random_range(1..4)]);
    }
    if !udp && rng.random_bool(0.2) {
        b = b.tcp_options(vec![1; 4 * rng.random_range(1..4)]);
    }
    let len = rng.random_range(0..200);
    b = b.payload((0..len).map(|_| rng.random()).collect());
    let mut bytes = b.build();
    if rng.random_bool(0.1) {
        bytes.truncate(rng.random_range(1..bytes.len()));
    }
    bytes
}

const ADDRESS_FIELDS: [&str; 10] = [
    "eth.dst",
    "eth.src",
    "ip.src",
    "ip.dst",
    "ip6.src",
    "ip6.dst",
    "tcp.srcport",
    "tcp.dstport",
    "udp.srcport",
    "udp.dstport",
];

fn xor_addresses(p: &RawPacket, salt: u8) -> RawPacket {
    let mut out = p.clone();
    for span in parse_fields(&p.link_bytes).spans {
        if ADDRESS_FIELDS.contains(&span.name) {
            out.link_bytes[span.range()].iter_mut().for_each(|b| *b ^= salt);
        }
    }
    out
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let config = PreprocessConfig {
        m: 5,
        l: 128,
        ..Default::default()
    };
    let dir = data_dir().join("golden");
    let capture = read_pcap(dir.join("capture.pcap")).map_err(|e| e.to_string())?;
    ensure(capture.packets.len() == 20, || format!("{} packets", capture.packets.len()))?;
    let ds = preprocess_dir(&dir, &config).map_err(|e| e.to_string())?;
    ensure(ds.records.iter().all(|r| flatten(r).len() == 640), || "flatten length".into())?;
    let got: String = ds.records.iter().map(|r| encode_line(r) + "\n").collect();
    let want = std::fs::read_to_string(data_dir().join("golden.jsonl")).map_err(|e| e.to_string())?;
    ensure(got == want, || "dataset differs from golden file".into())?;

    let mut rng = rng_for(0xACC1, &[]);
    for case in 0..1000 {
        let v6 = rng.random_bool(0.3);
        let ip = |rng: &mut rand_chacha::ChaCha8Rng| {
            if v6 {
                IpAddr::V6(Ipv6Addr::from(rng.random::<[u8; 16]>()))
            } else {
                IpAddr::V4(Ipv4Addr::from(rng.random::<[u8; 4]>()))
            }
        };
        let (a, b) = (ip(&mut rng), ip(&mut rng));
        let (pa, pb): (u16, u16) = (rng.random(), rng.random());
        let flow = [
            random_packet(&mut rng, a, b, pa, pb),
            random_packet(&mut rng, b, a, pb, pa),
        ]
        .map(|bytes| RawPacket {
            capture_index: 0,
            timestamp_us: 0,
            link_bytes: bytes,
        });
        for p in &flow {
            let once = anonymize(p);
            ensure(anonymize(&once) == once, || format!("case {case}: anonymize not idempotent"))?;
        }
        let salt = rng.random_range(1..=255u8);
        let moved: Vec<RawPacket> = flow.iter().map(|p| xor_addresses(p, salt)).collect();
        let run = |pkts: &[RawPacket]| {
            preprocess_packets(pkts, &config, None).map(|(r, _)| r.iter().map(encode_line).collect::<Vec<_>>())
        };
        let (x, y) = (run(&flow).map_err(|e| e.to_string())?, run(&moved).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("case {case}: records depend on addresses"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!(
        "{} flows bit-exact; 1000 fuzzed flows invariant; {elapsed:.2?}",
        ds.records.len()
    ))
}

// 2. Corruption invariants.

fn mask_contract(s: &TrainingSample, real: usize, l: usize) -> Result<(), String> {
    let masked = &s.plan.masked_positions;
    ensure(!masked.is_empty(), || "empty mask".into())?;
    let mut on = vec![false; s.input.len()];
    for &p in masked {
        on[p] = true;
    }
    for (i, ((&a, &b), &m)) in s.input.tokens.iter().zip(&s.target.tokens).zip(&on).enumerate() {
        ensure(if m { a == MASK } else { a == b }, || format!("position {i}"))?;
    }
    ensure(masked.iter().all(|&p| p < real * l), || "mask inside padding".into())
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let pool = SyntheticTraffic::new(31).labeled_records(40, &PreprocessConfig::default());
    let multi: Vec<&FlowRecord> = pool.iter().filter(|r| r.real_packet_count >= 2).collect();
    let c = CorruptionConfig::default();
    for seed in 0..10_000u64 {
        let r = &pool[seed as usize % pool.len()];
        let (real, l) = (r.real_packet_count, r.l());
        let x = TokenSequence::from_record(r);
        let s = corrupt_byte(&x, c.mask_ratio, seed).map_err(|e| e.to_string())?;
        mask_contract(&s, real, l).map_err(|e| format!("byte seed {seed}: {e}"))?;

        let maps = r.field_maps();
        let s = corrupt_protocol(&x, &maps, c.protocol_k, c.protocol_spans, 1, seed).map_err(|e| e.to_string())?;
        mask_contract(&s, real, l).map_err(|e| format!("protocol seed {seed}: {e}"))?;
        let starts: Vec<usize> = maps[..real]
            .iter()
            .enumerate()
            .flat_map(|(pkt, m)| m.spans.iter().flat_map(move |sp| [sp.offset, sp.offset + 1].map(|o| pkt * l + o)))
            .collect();
        let pos = &s.plan.masked_positions;
        for (i, &p) in pos.iter().enumerate() {
            let run_start = i == 0 || pos[i - 1] + 1 != p;
            ensure(!run_start || starts.contains(&p), || format!("protocol seed {seed}: run at {p}"))?;
            ensure(
                starts.iter().any(|&st| st <= p && p < st + c.protocol_k && st / l == p / l),
                || format!("protocol seed {seed}: {p} unreachable"),
            )?;
        }

        let r = multi[seed as usize % multi.len()];
        let s = corrupt_packet(r, c.packet_mask_ratio, seed).map_err(|e| e.to_string())?;
        mask_contract(&s, r.real_packet_count, l).map_err(|e| format!("packet seed {seed}: {e}"))?;
        let original = TokenSequence::from_record(r);
        let block = |t: &TokenSequence, i: usize| t.tokens[i * l..(i + 1) * l].to_vec();
        let mut a: Vec<_> = (0..r.m()).map(|i| block(&s.target, i)).collect();
        let mut b: Vec<_> = (0..r.m()).map(|i| block(&original, i)).collect();
        a.sort();
        b.sort();
        ensure(a == b, || format!("packet seed {seed}: multiset changed"))?;
    }

    let packets: Vec<RawPacket> = (0..3u8)
        .map(|i| RawPacket {
            capture_index: 0,
            timestamp_us: 0,
            link_bytes: PacketBuilder::tcp_v4().payload(vec![i; 8]).build(),
        })
        .collect();
    let three = normalize_flow(&packets, 5, 64).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for seed in 0..10_000u64 {
        let s = corrupt_packet(&three, c.packet_mask_ratio, seed).map_err(|e| e.to_string())?;
        *counts.entry(s.plan.permutation[..3].to_vec()).or_default() += 1;
    }
    ensure(counts.len() == 5 && !counts.contains_key(&vec![0, 1, 2]), || format!("{counts:?}"))?;
    let chi2: f64 = counts.values().map(|&n| (n as f64 - 2000.0).powi(2) / 2000.0).sum();
    ensure(chi2 < 13.2767, || format!("chi-square {chi2:.3} >= 13.2767"))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!("3 x 10000 samples hold; chi-square {chi2:.2} (df 4, crit 13.28); {elapsed:.1?}"))
}

// 3. Loss oracles.

fn naive_nll(z: &[f64], y: usize) -> f64 {
    let denom: f64 = z.iter().map(|v| v.exp()).sum();
    -(z[y].exp() / denom).ln()
}

fn naive_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

fn criterion_3() -> Check {
    const TOL: f64 = 1e-10;
    let close = |name: &str, a: f64, b: f64| ensure((a - b).abs() < TOL, || format!("{name}: {a} vs {b}"));

    let logits = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * 0.37 - 1.1);
    let target = TokenSequence::from_bytes(&[4, 0, 2, 3, 1, 2], 3, 2);
    let masked = [0, 2, 5];
    let want: f64 = masked
        .iter()
        .map(|&t| naive_nll(&logits.row(t).to_vec(), usize::from(target.tokens[t])))
        .sum();
    close("reconstruction", reconstruction_loss(&logits, &target, &masked).unwrap(), want)?;

    let uniform = Array2::<f64>::zeros((10, 259));
    let t = TokenSequence::from_bytes(&[1; 10], 10, 1);
    close(
        "uniform",
        reconstruction_loss(&uniform, &t, &[0, 3, 9]).unwrap(),
        3.0 * 259f64.ln(),
    )?;

    let dist = |p: &[f64]| ClassifierOutput::from_logits(p.iter().map(|v| v.ln()).collect::<Vec<f64>>());
    let (p, q) = (dist(&[0.99, 0.01]), dist(&[0.01, 0.99]));
    close("KL skewed", kl_divergence(&p, &q), 4.503217453131898)?;
    close("KL naive", kl_divergence(&p, &q), naive_kl(&[0.99, 0.01], &[0.01, 0.99]))?;
    close("KL(p||p)", kl_divergence(&p, &p), 0.0)?;

    let (zr, zp, zk) = ([0.5, -0.25, 1.5], [0.1, 0.2, 0.3], [-1.0, 2.0, 0.0]);
    let out = |z: &[f64; 3]| ClassifierOutput::from_logits(z.to_vec());
    let (r, pp, kk) = (out(&zr), out(&zp), out(&zk));
    for y in 0..3 {
        let l = finetune_loss(&r, &pp, &kk, y, 0.1).unwrap();
        let cons = naive_kl(&r.probs, &pp.probs) + naive_kl(&r.probs, &kk.probs);
        close("L_F", l.total, naive_nll(&zr, y) + 0.1 * cons)?;
        let l0 = finetune_loss(&r, &pp, &kk, y, 0.0).unwrap();
        close("lambda = 0", l0.total, naive_nll(&zr, y))?;
        let same = finetune_loss(&r, &r, &r, y, 0.1).unwrap();
        close("identical views", same.total, naive_nll(&zr, y))?;
    }

    let model = Nethira::<f64>::new(gradcheck_config(), 21).unwrap();
    let clean = seq(&[3, 1, 4, 1, 5, 2, 6, 0], 4, 7);
    let sample = masked_sample(CorruptionKind::Byte, &clean, &[1, 4, 6], 10, vec![0, 1]);
    let memory = model.encode(&model.embed(&sample.input).unwrap(), 7);
    let full = model.decode(&memory, &sample.target).unwrap();
    let public = reconstruction_loss(&full, &sample.target, &sample.plan.masked_positions).unwrap();
    close("model path", model.reconstruction_loss_and_grad(&sample, 1.0, None).unwrap(), public)?;
    Ok("reconstruction, KL, L_F, lambda=0 and KL(p||p)=0 within 1e-10".into())
}

// 4. Gradient check.

fn criterion_4() -> Check {
    let start = Instant::now();
    let model = Nethira::<f64>::new(gradcheck_config(), 11).unwrap();
    let [b, p, k] = toy_pretrain_samples();
    let mut g = model.zero_grads();
    model.pretrain_loss_and_grad(&b, &p, &k, 1.0, Some(&mut g)).unwrap();
    let (e_pre, _) = max_relative_error(
        &model,
        &flat_grads(&g),
        |m| m.pretrain_loss(&b, &p, &k).unwrap().total,
        1e-5,
        1e-6,
    );

    let raw = seq(&[3, 1, 4, 1, 5, 2, 6, 5], 4, 8);
    let prot = seq(&[1, 3, 4, 1, 2, 5, 6, 5], 4, 8);
    let pack = seq(&[5, 2, 6, 5, 0, 0, 0, 0], 4, 4);
    let views = Some((&prot, &pack));
    let mut g = model.zero_grads();
    model
        .finetune_loss_and_grad(&raw, views, 2, 0.1, false, 1.0, Some(&mut g))
        .unwrap();
    let (e_ft, _) = max_relative_error(
        &model,
        &flat_grads(&g),
        |m| m.finetune_loss_and_grad(&raw, views, 2, 0.1, false, 1.0, None).unwrap().total,
        1e-5,
        1e-6,
    );
    let elapsed = start.elapsed();
    ensure(e_pre <= 1e-4 && e_ft <= 1e-4, || format!("max rel err L_P {e_pre:.2e}, L_F {e_ft:.2e}"))?;
    within(elapsed, Duration::from_secs(120))?;
    Ok(format!(
        "{} parameters; max rel err L_P {e_pre:.2e}, L_F {e_ft:.2e} (<= 1e-4); {elapsed:.1?}",
        model.weights.n_params()
    ))
}

// 5. Decoder causality.

fn criterion_5() -> Check {
    let config = ModelConfig {
        max_len: 16,
        ..gradcheck_config()
    };
    let model = Nethira::<f64>::new(config, 31).unwrap();
    let input = seq(&[1, 2, 3, 4, 5, 6, 7, 8, 0, 1, 2, 3, 4, 5, 6, 7], 4, 16);
    let memory = model.encode(&model.embed(&input).unwrap(), 16);
    let target = seq(&[8, 7, 6, 5, 4, 3, 2, 1, 0, 8, 7, 6, 5, 4, 3, 2], 4, 16);
    let base = model.decode(&memory, &target).unwrap();
    for t in 0..16 {
        let mut changed = target.clone();
        changed.tokens[t] = (changed.tokens[t] + 1) % 9;
        let out = model.decode(&memory, &changed).unwrap();
        for pos in 0..=t {
            ensure(out.row(pos) == base.row(pos), || format!("target {t} changed logits at {pos}"))?;
        }
        if t + 1 < 16 {
            ensure(out.row(t + 1) != base.row(t + 1), || format!("target {t} has no effect on {}", t + 1))?;
        }
    }
    Ok("16 perturbations leave every earlier position bit-identical".into())
}

// 6. End-to-end synthetic run, and 8. its determinism.

struct EndToEnd {
    pretrain_log: Vec<PretrainLogRow>,
    finetune_log: Vec<FinetuneLogRow>,
    report: MetricsReport,
    pretrained: ModelCheckpoint<f32>,
    finetuned: ModelCheckpoint<f32>,
    splits: Splits,
    config: ExperimentConfig,
    elapsed: Duration,
}

const SEED: u64 = 7;

fn end_to_end(seed: u64) -> Result<EndToEnd, String> {
    let start = Instant::now();
    let config = ExperimentConfig::desk_scale().with_seed(seed);
    let labeled = SyntheticTraffic::new(seed).labeled_records(100, &config.preprocess);
    let corpus = SyntheticTraffic::new(seed ^ 0xC0FFEE).labeled_records(67, &config.preprocess);
    let pre = pretrain(&config.pretrain, &corpus).map_err(|e| e.to_string())?;
    let splits = split_dataset(&labeled, &config.split).map_err(|e| e.to_string())?;
    let ft = finetune(&config.finetune, Some(&pre.checkpoint), &splits.train, &splits.val).map_err(|e| e.to_string())?;
    let report = evaluate(&ft.checkpoint, &splits.test).map_err(|e| e.to_string())?;
    Ok(EndToEnd {
        pretrain_log: pre.log,
        finetune_log: ft.log,
        report,
        pretrained: pre.checkpoint,
        finetuned: ft.checkpoint,
        splits,
        config,
        elapsed: start.elapsed(),
    })
}

fn criterion_6(run: &EndToEnd) -> Check {
    let log = &run.pretrain_log;
    ensure(log.len() == 2000, || format!("{} steps", log.len()))?;
    let initial = log[..10].iter().map(PretrainLogRow::total).sum::<f64>() / 10.0;
    let last = log.last().unwrap().total();
    let tail = log[log.len() - 10..].iter().map(PretrainLogRow::total).sum::<f64>() / 10.0;
    let ratio = last / initial;
    ensure(ratio < 0.5, || format!("L_P ratio {ratio:.3} >= 0.5"))?;
    ensure(run.finetune_log.len() == 10, || format!("{} epochs", run.finetune_log.len()))?;
    let f1 = run.report.macro_avg.f1;
    ensure(f1 >= 0.95, || format!("test macro-F1 {f1:.4} < 0.95"))?;
    within(run.elapsed, Duration::from_secs(15 * 60))?;
    let val = run.finetune_log.iter().map(|r| r.val_f1).fold(0.0, f64::max);
    Ok(format!(
        "L_P {initial:.1} -> {last:.1} (ratio {ratio:.3}; last-10 mean {tail:.1}); best val F1 {val:.4}; \
         test macro-F1 {f1:.4} on {} flows; {:.0?} on this machine",
        run.report.total(),
        run.elapsed
    ))
}

fn criterion_8(a: &EndToEnd, b: &EndToEnd) -> Check {
    ensure(a.pretrain_log == b.pretrain_log, || "pre-training logs differ".into())?;
    ensure(a.finetune_log == b.finetune_log, || "fine-tuning logs differ".into())?;
    ensure(a.report == b.report, || "metrics reports differ".into())?;
    ensure(a.finetuned.to_bytes() == b.finetuned.to_bytes(), || "checkpoints differ".into())?;
    Ok(format!(
        "two runs with seed {SEED}: {} + {} log rows, reports and checkpoints identical",
        a.pretrain_log.len(),
        a.finetune_log.len()
    ))
}

// 7. Consistency-regularization direction (soft).

/// Test flows with their real packets reordered (no drops).
fn reordered(test: &[FlowRecord], seed: u64) -> Vec<FlowRecord> {
    test.iter()
        .enumerate()
        .map(|(i, r)| {
            let t = augment_packet(r, 0.0, nethira::rng::derive_seed(seed, &[0x7E57, i as u64])).unwrap();
            let bytes: Vec<u8> = t.tokens.iter().map(|&b| b as u8).collect();
            FlowRecord {
                key: None,
                packets: bytes.chunks(r.l()).map(|c| NormalizedPacket::from_bytes(c, r.l())).collect(),
                real_packet_count: t.real_packets(),
                label: r.label,
            }
        })
        .collect()
}

enum Soft {
    Pass(String),
    /// Reported, not blocking.
    Warn(String),
    Fail(String),
}

fn criterion_7(run: &EndToEnd) -> Result<Soft, String> {
    let mut lines = Vec::new();
    let mut wins = 0;
    for (i, seed) in [SEED, SEED + 1, SEED + 2].into_iter().enumerate() {
        let test = reordered(&run.splits.test, seed);
        let score = |mode: FinetuneMode| -> Result<f64, String> {
            let cfg = nethira::training::FinetuneConfig {
                mode,
                seed,
                ..run.config.finetune.clone()
            };
            // The criterion-6 fine-tune is the FULL run for the first seed.
            let ckpt = if i == 0 && mode == FinetuneMode::Full {
                run.finetuned.clone()
            } else {
                finetune(&cfg, Some(&run.pretrained), &run.splits.train, &run.splits.val)
                    .map_err(|e| e.to_string())?
                    .checkpoint
            };
            Ok(evaluate(&ckpt, &test).map_err(|e| e.to_string())?.macro_avg.f1)
        };
        let (full, sup) = (score(FinetuneMode::Full)?, score(FinetuneMode::SupOnly)?);
        if full >= sup {
            wins += 1;
        }
        lines.push(format!("seed {seed}: full {full:.4} vs sup-only {sup:.4}"));
    }
    let detail = format!("{wins}/3 seeds with full >= sup-only ({})", lines.join("; "));
    Ok(match wins {
        2 | 3 => Soft::Pass(detail),
        1 => Soft::Warn(detail),
        _ => Soft::Fail(detail),
    })
}

// 9. Metric oracle.

fn criterion_9() -> Check {
    let r = report_from_confusion(vec![vec![3, 1], vec![2, 4]]);
    let want = (2.0 / 3.0 + 8.0 / 11.0) / 2.0;
    ensure((r.macro_avg.f1 - want).abs() < 1e-15, || format!("macro-F1 {}", r.macro_avg.f1))?;
    ensure(format!("{:.4}", r.macro_avg.f1) == "0.6970", || format!("macro-F1 {}", r.macro_avg.f1))?;

    let mut model = Nethira::<f32>::new(
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            ..ModelConfig::tiny(8)
        },
        3,
    )
    .unwrap();
    model.attach_classifier(3, 4).unwrap();
    let ckpt = ModelCheckpoint::new(model, 0, 0);
    let mut rng = rng_for(0xACC9, &[]);
    for case in 0..100 {
        let n = rng.random_range(1..40);
        let records: Vec<FlowRecord> = (0..n)
            .map(|_| {
                let bytes: Vec<u8> = (0..8).map(|_| rng.random()).collect();
                FlowRecord {
                    key: None,
                    packets: bytes.chunks(4).map(|c| NormalizedPacket::from_bytes(c, 4)).collect(),
                    real_packet_count: 2,
                    label: Some(rng.random_range(0..3)),
                }
            })
            .collect();
        let truth: Vec<usize> = records.iter().map(|r| r.label.unwrap() as usize).collect();
        let pred = predict(&ckpt.model, &records).map_err(|e| e.to_string())?;
        let report = evaluate(&ckpt, &records).map_err(|e| e.to_string())?;
        ensure(report_matches_brute_force(&report, &truth, &pred, 3), || format!("model case {case}"))?;

        let k = rng.random_range(2..7);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let report = metrics_from_predictions(&truth, &pred, k).map_err(|e| e.to_string())?;
        ensure(report_matches_brute_force(&report, &truth, &pred, k), || format!("vector case {case}"))?;
    }
    Ok("confusion example 0.6970; 200 random vectors equal brute-force counts exactly".into())
}

// Harness.

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

const NAMES: [&str; 9] = [
    "preprocessing golden files",
    "corruption invariants",
    "loss oracles",
    "gradient check",
    "decoder causality",
    "end-to-end synthetic run",
    "consistency direction (soft)",
    "determinism",
    "metric oracle",
];

fn main() {
    let selected: Vec<usize> = std::env::var("NETHIRA_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_else(|| (1..=9).collect());
    let wants = |id: usize| selected.contains(&id);
    let mut results: BTreeMap<usize, (&str, String)> = BTreeMap::new();
    let mut record = |id: usize, r: Result<String, String>| {
        let (tag, detail) = match r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {id}. {}: {detail}", NAMES[id - 1]);
        results.insert(id, (tag, detail));
    };

    let simple: [(usize, fn() -> Check); 6] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (9, criterion_9),
    ];
    for (id, f) in simple {
        if wants(id) {
            record(id, guarded(f));
        }
    }

    if wants(6) || wants(7) || wants(8) {
        match guarded(|| end_to_end(SEED)) {
            Err(e) => {
                for id in [6, 7, 8].into_iter().filter(|&id| wants(id)) {
                    record(id, Err(format!("end-to-end run failed: {e}")));
                }
            }
            Ok(first) => {
                if wants(6) {
                    record(6, guarded(|| criterion_6(&first)));
                }
                if wants(7) {
                    match guarded(|| criterion_7(&first)) {
                        Ok(Soft::Pass(d)) => record(7, Ok(d)),
                        Ok(Soft::Warn(d)) => record(7, Ok(format!("soft miss, not blocking: {d}"))),
                        Ok(Soft::Fail(d)) => record(7, Err(d)),
                        Err(e) => record(7, Err(e)),
                    }
                }
                if wants(8) {
                    record(8, guarded(|| criterion_8(&first, &end_to_end(SEED)?)));
                }
            }
        }
    }

    println!("\nacceptance summary");
    for (id, (tag, _)) in &results {
        println!("  {id}. {:<30} {tag}", NAMES[id - 1]);
    }
    let failed = results.values().filter(|(t, _)| *t == "FAIL").count();
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all {} selected criteria passed", results.len());
}
