//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selftalk::adaptation::{self, AcousticModel, AlphaGateNet, Embedding, EmbeddingSource, LaeaSample};
use selftalk::audio::AudioClip;
use selftalk::cache::UtteranceCache;
use selftalk::cascade::{self, GatingPolicy, SyntheticEncoder};
use selftalk::context::{self, NoiseModel, NoisyAsr, PlanConfig, Strategy, StubAsr};
use selftalk::cost::{self, ExitRatios, ExitStage, LatencyProfile};
use selftalk::eval::{self, ConfusionMatrix};
use selftalk::fusion::FusionGate;
use selftalk::harness::{self, HarnessConfig};
use selftalk::heads::{self, ClassDistribution, FeedForwardHead, Trainable};
use selftalk::manifest::Manifest;
use selftalk::segmenter::{self, SegmenterConfig, Span, UtteranceSegment};
use selftalk::synth::{self, GeneratorConfig};
use selftalk::{Class, NUM_CLASSES};

#[path = "prompt_golden.rs"]
mod prompt_golden;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("cost model", cost_model),
        ("routing grid", routing_grid),
        ("segmenter oracle", segmenter_oracle),
        ("cache properties", cache_properties),
        ("numerical checks", numerical_checks),
        ("synthetic calibration", synth_calibration),
        ("end-to-end desk run", end_to_end),
        ("transcription ordering", transcription_ordering),
        ("prompt goldens", prompt_goldens),
        ("metrics", metrics),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---- 1 -------------------------------------------------------------------

fn cost_model() -> Outcome {
    let t = Instant::now();
    let profile = LatencyProfile::default();
    let ratios = ExitRatios::default();
    let r = cost::report(&profile, &ratios);

    // stage costs and exit shares written out by hand
    let (pre, ac, li, fu) = (20.9, 2015.0, 4298.0, 0.8);
    let full = pre + ac + li + fu;
    let early = pre + 0.61 * ac + 0.07 * (ac + li) + 0.32 * (ac + li + fu);
    ensure((r.full_ms - full).abs() < 1e-9 && (r.early_exit_ms - early).abs() < 1e-9, || {
        format!("model {r:?} differs from hand computation ({full}, {early})")
    })?;
    ensure((r.full_ms - 6335.0).abs() <= 1.0, || format!("full {:.1} ms not within 1 ms of 6335", r.full_ms))?;
    ensure((r.early_exit_ms - 3713.0).abs() <= 1.0, || format!("early {:.1} ms not within 1 ms of 3713", r.early_exit_ms))?;
    ensure((r.reduction * 100.0 - 41.0).abs() <= 0.5, || format!("reduction {:.2}% not within 0.5 pp of 41%", r.reduction * 100.0))?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.3}s"))?;
    Ok(format!("full {:.1} ms, early-exit {:.1} ms, reduction {:.1}%", r.full_ms, r.early_exit_ms, r.reduction * 100.0))
}

// ---- 2 -------------------------------------------------------------------

/// Top class `c` with least margin `m`; the other two share the rest.
fn dist_with(c: Class, m: f64) -> ClassDistribution {
    let top = (1.0 + 2.0 * m) / 3.0;
    let rest = (1.0 - m) / 3.0;
    let mut p = [rest; NUM_CLASSES];
    p[c.index()] = top;
    ClassDistribution::new(p)
}

fn routing_grid() -> Outcome {
    let policy = GatingPolicy::default();
    let mut margins: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    margins.extend([0.79, 0.799, 0.7999, 0.80, 0.801, 0.91, 0.919, 0.9199, 0.92, 0.921]);
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for ca in Class::ALL {
        for &ma in &margins {
            for cl in Class::ALL {
                for &ml in &margins {
                    for cf in Class::ALL {
                        let (a, l, f) = (dist_with(ca, ma), dist_with(cl, ml), dist_with(cf, 0.5));
                        // the table: acoustic keeps negative/others at >= .92,
                        // linguistic keeps negative at >= .80, fusion takes the rest
                        let acoustic_exit = matches!(ca, Class::NegativeSelfTalk | Class::Others) && ma >= 0.92;
                        let linguistic_exit = cl == Class::NegativeSelfTalk && ml >= 0.80;
                        let want = if acoustic_exit {
                            (ExitStage::Acoustic, ca)
                        } else if linguistic_exit {
                            (ExitStage::Linguistic, cl)
                        } else {
                            (ExitStage::Fusion, cf)
                        };
                        let got = policy.route(&a, &l, &f);
                        cases += 1;
                        if got != want {
                            mismatches.push(format!("{ca}@{ma} {cl}@{ml} {cf}: got {got:?} want {want:?}"));
                        }
                    }
                }
            }
        }
    }
    ensure(mismatches.is_empty(), || format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]))?;
    ensure(policy.acoustic_accepts(&dist_with(Class::Others, 0.92)), || "0.92 rejected at acoustic stage".into())?;
    ensure(policy.linguistic_accepts(&dist_with(Class::NegativeSelfTalk, 0.80)), || "0.80 rejected at linguistic stage".into())?;
    Ok(format!("{cases} cases, 0 mismatches"))
}

// ---- 3 -------------------------------------------------------------------

/// Drop short events, then merge neighbours until no close pair remains.
fn oracle_group(events: &[Span], min_dur: f64, merge_gap: f64) -> Vec<Span> {
    let mut v: Vec<Span> = events.iter().copied().filter(|e| e.t_end - e.t_start >= min_dur - 1e-9).collect();
    loop {
        let pair = (1..v.len()).find(|&i| v[i].t_start - v[i - 1].t_end < merge_gap - 1e-9);
        match pair {
            Some(i) => {
                let next = v.remove(i);
                v[i - 1].t_end = next.t_end;
            }
            None => return v,
        }
    }
}

fn same_spans(a: &[Span], b: &[Span]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| (x.t_start - y.t_start).abs() < 1e-12 && (x.t_end - y.t_end).abs() < 1e-12)
}

fn random_layout(rng: &mut ChaCha8Rng) -> Vec<Span> {
    let mut t = rng.gen_range(0.0..1.0);
    (0..rng.gen_range(0..25))
        .map(|_| {
            let d = rng.gen_range(0.02..1.2);
            let e = Span::new(t, t + d);
            t += d + rng.gen_range(0.01..1.6);
            e
        })
        .collect()
}

/// Frames, threshold and event runs computed straight from the samples.
fn oracle_waveform(samples: &[f32], sr: u32, cfg: &SegmenterConfig) -> Vec<Span> {
    let srf = sr as f64;
    let dur = samples.len() as f64 / srf;
    let count = ((dur - cfg.window_s) / cfg.hop_s + 1e-9).floor() as usize + 1;
    let win_n = (cfg.window_s * srf + 1e-9).floor() as usize;
    let voiced: Vec<bool> = (0..count)
        .map(|k| {
            let s = (k as f64 * cfg.hop_s * srf + 1e-9).floor() as usize;
            let w = &samples[s..(s + win_n).min(samples.len())];
            let ms = w.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / w.len() as f64;
            ms > 0.0 && 10.0 * ms.log10() >= cfg.threshold_db
        })
        .collect();
    let mut events = Vec::new();
    let mut k = 0;
    while k < count {
        if voiced[k] {
            let first = k;
            while k + 1 < count && voiced[k + 1] {
                k += 1;
            }
            events.push(Span::new(first as f64 * cfg.hop_s, k as f64 * cfg.hop_s + cfg.window_s));
        }
        k += 1;
    }
    oracle_group(&events, cfg.min_dur_s, cfg.merge_gap_s)
}

fn random_waveform(rng: &mut ChaCha8Rng, sr: u32) -> Vec<f32> {
    let n = (rng.gen_range(6.0..20.0) * sr as f64) as usize;
    let mut s: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.002f32..0.002)).collect();
    let mut t = rng.gen_range(0.0..1.0);
    let total = n as f64 / sr as f64;
    while t < total {
        let d = rng.gen_range(0.05..1.5);
        let amp = rng.gen_range(0.15f32..0.6);
        let a = (t * sr as f64) as usize;
        let b = (((t + d) * sr as f64) as usize).min(n);
        for x in &mut s[a.min(n)..b] {
            *x = rng.gen_range(-amp..amp);
        }
        t += d + rng.gen_range(0.1..2.0);
    }
    s
}

fn segmenter_oracle() -> Outcome {
    let cfg = SegmenterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..500 {
        let events = random_layout(&mut rng);
        let got = segmenter::segment_utterances(&events, cfg.min_dur_s, cfg.merge_gap_s);
        let want = oracle_group(&events, cfg.min_dur_s, cfg.merge_gap_s);
        ensure(same_spans(&got, &want), || format!("layout {i}: got {got:?} want {want:?}"))?;
    }

    let sr = 16_000;
    let mut segments = 0;
    for i in 0..100 {
        let samples = random_waveform(&mut rng, sr);
        let want = oracle_waveform(&samples, sr, &cfg);
        let clip = AudioClip::new(samples, sr).map_err(|e| e.to_string())?;
        let got: Vec<Span> = segmenter::segment_session(&clip, "w", &cfg)
            .map_err(|e| e.to_string())?
            .iter()
            .map(UtteranceSegment::span)
            .collect();
        ensure(same_spans(&got, &want), || format!("waveform {i}: got {} segments, oracle {}", got.len(), want.len()))?;
        segments += got.len();
    }

    let one = |d: f64| segmenter::segment_utterances(&[Span::new(2.0, 2.0 + d)], 0.3, 0.8).len();
    let two = |g: f64| segmenter::segment_utterances(&[Span::new(1.0, 1.5), Span::new(1.5 + g, 2.0 + g)], 0.3, 0.8).len();
    ensure(one(0.299) == 0, || "0.299 s event kept".into())?;
    ensure(one(0.300) == 1, || "0.300 s event dropped".into())?;
    ensure(two(0.799) == 1, || "0.799 s gap split".into())?;
    ensure(two(0.800) == 2, || "0.800 s gap merged".into())?;
    Ok(format!("500 layouts, 100 waveforms ({segments} segments), 4 boundary cases"))
}

// ---- 4 -------------------------------------------------------------------

fn cache_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut pushes = 0;
    for run in 0..1000 {
        let mut cache = UtteranceCache::new(30.0);
        let mut pushed: Vec<UtteranceSegment> = Vec::new();
        let mut t = 0.0;
        for seq in 0..rng.gen_range(1..60u32) {
            let d = if rng.gen_bool(0.1) { rng.gen_range(10.0..30.0) } else { rng.gen_range(0.3..5.0) };
            t += rng.gen_range(0.0..3.0);
            let seg = UtteranceSegment::new("s", seq, t, t + d);
            t += d;
            cache.push(seg.clone()).map_err(|e| e.to_string())?;
            pushed.push(seg);
            pushes += 1;

            let snap = cache.snapshot();
            ensure(cache.total_duration() <= 30.0, || format!("run {run}: total {}", cache.total_duration()))?;
            ensure(pushed.ends_with(&snap), || format!("run {run}: cache is not a suffix of the pushes"))?;
            // replay: the longest suffix that fits
            let mut want = 0;
            let mut sum = 0.0;
            for s in pushed.iter().rev() {
                if sum + s.duration() > 30.0 {
                    break;
                }
                sum += s.duration();
                want += 1;
            }
            ensure(snap.len() == want.max(1), || format!("run {run}: {} entries, replay says {want}", snap.len()))?;
        }
    }

    let mut cache = UtteranceCache::new(30.0);
    cache.push(UtteranceSegment::new("s", 0, 0.0, 2.0)).map_err(|e| e.to_string())?;
    let out = cache.push(UtteranceSegment::new("s", 1, 3.0, 34.0)).map_err(|e| e.to_string())?;
    ensure(out.oversize && cache.is_oversize() && cache.len() == 1 && out.evicted.len() == 1, || {
        "oversize segment not flagged or not kept alone".into()
    })?;
    cache.push(UtteranceSegment::new("s", 2, 35.0, 36.0)).map_err(|e| e.to_string())?;
    ensure(!cache.is_oversize() && cache.len() == 1, || "oversize flag did not clear".into())?;
    Ok(format!("1000 sequences, {pushes} pushes, oversize case flagged"))
}

// ---- 5 -------------------------------------------------------------------

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Largest relative error between backprop and central differences.
fn grad_error<M: Trainable>(model: &M, x: &M::Input, label: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut grad = Trainable::zeros_like(model);
    model.accumulate(x, label, &mut rng, &mut grad);
    let analytic = grad.flatten();
    let base = model.flatten();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let loss_at = |delta: f64| {
            let mut m = model.clone();
            let mut p = base.clone();
            p[i] += delta;
            m.set_flat(&p);
            heads::cross_entropy(&m.predict(x), label)
        };
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        let err = (analytic[i] - numeric).abs();
        // entries that are zero up to rounding are held to an absolute bound
        let rel = if scale >= 1e-6 { err / scale } else if err < 1e-10 { 0.0 } else { err / 1e-6 };
        worst = worst.max(rel);
    }
    worst
}

fn numerical_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = [0.0f64; 4];
    for trial in 0..4 {
        let label = trial % NUM_CLASSES;
        let head3 = FeedForwardHead::new(6, &[8, 5], 0.0, &mut rng);
        worst[0] = worst[0].max(grad_error(&head3, &random_vec(&mut rng, 6), label));

        let head5 = FeedForwardHead::new(6, &[9, 8, 6, 5], 0.0, &mut rng);
        worst[1] = worst[1].max(grad_error(&head5, &random_vec(&mut rng, 6), label));

        let acoustic = AcousticModel {
            gate: AlphaGateNet::new(5, 7, &mut rng),
            head: FeedForwardHead::new(5, &[6, 4], 0.0, &mut rng),
        };
        let sample = LaeaSample { curr: random_vec(&mut rng, 5), prev: Some(random_vec(&mut rng, 5)), prev_index: None };
        worst[2] = worst[2].max(grad_error(&acoustic, &sample, label));

        let fusion = FusionGate::new(5, 7, &[8, 7, 6, 4], 0.0, &mut rng);
        let input = (random_vec(&mut rng, 5), random_vec(&mut rng, 7));
        worst[3] = worst[3].max(grad_error(&fusion, &input, label));
    }
    let names = ["3-layer head", "5-layer head", "alpha gate path", "fusion path"];
    for (n, w) in names.iter().zip(worst) {
        ensure(w < 1e-4, || format!("{n}: relative error {w:.2e}"))?;
    }

    // convex combinations stay inside the elementwise envelope
    let slack = 1e-9;
    let inside = |v: f64, a: f64, b: f64| v >= a.min(b) - slack && v <= a.max(b) + slack;
    for i in 0..1000 {
        let d = rng.gen_range(1..12);
        let gate = AlphaGateNet::new(d, rng.gen_range(1..10), &mut rng);
        let curr = Embedding::new(random_vec(&mut rng, d), EmbeddingSource::Acoustic, 10.0, 11.0);
        let prev = Embedding::new(random_vec(&mut rng, d), EmbeddingSource::Acoustic, 8.0, 9.0);
        let (adapted, alpha) = adaptation::adapt(&curr, Some(&prev), rng.gen_range(0.0..4.0), &gate, 4.0).map_err(|e| e.to_string())?;
        ensure((0.0..=1.0).contains(&alpha), || format!("instance {i}: alpha {alpha}"))?;
        for k in 0..d {
            ensure(inside(adapted.values[k], curr.values[k], prev.values[k]), || format!("instance {i}: blend leaves envelope"))?;
        }

        let (da, dl) = (rng.gen_range(1..10), rng.gen_range(1..10));
        let fusion = FusionGate::new(da, dl, &[4, 4, 4, 4], 0.0, &mut rng);
        let c = fusion.fuse_cached(&random_vec(&mut rng, da), &random_vec(&mut rng, dl)).map_err(|e| e.to_string())?;
        for k in 0..c.z.len() {
            ensure((0.0..=1.0).contains(&c.g[k]), || format!("instance {i}: gate {}", c.g[k]))?;
            ensure(inside(c.z[k], c.a[k], c.l[k]), || format!("instance {i}: fused value leaves envelope"))?;
        }
    }
    Ok(format!(
        "max relative errors {:.1e} / {:.1e} / {:.1e} / {:.1e}; 1000 blend and 1000 fusion instances contained",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ---- 6 -------------------------------------------------------------------

fn synth_calibration() -> Outcome {
    let cfg = GeneratorConfig { n_sessions: 250, ..GeneratorConfig::default() };
    let corpus = synth::generate(&cfg).map_err(|e| e.to_string())?;
    let records = &corpus.manifest.records;
    ensure(records.len() == 10_000, || format!("{} utterances", records.len()))?;

    let mut count = [0usize; 3];
    let mut dur = [0.0f64; 3];
    for r in records {
        count[r.label.index()] += 1;
        dur[r.label.index()] += r.t_end - r.t_start;
    }
    let (mut pairs, mut same) = (0usize, 0usize);
    for w in records.windows(2) {
        if w[0].session_id == w[1].session_id && w[1].t_start - w[0].t_end <= 4.0 {
            pairs += 1;
            same += usize::from(w[0].label == w[1].label);
        }
    }
    let priors: Vec<f64> = count.iter().map(|&c| c as f64 / records.len() as f64).collect();
    let means: Vec<f64> = (0..3).map(|k| dur[k] / count[k] as f64).collect();
    let rate = same as f64 / pairs as f64;
    for (k, want) in [0.26, 0.16, 0.58].into_iter().enumerate() {
        ensure((priors[k] - want).abs() <= 0.02, || format!("prior {k} = {:.3}", priors[k]))?;
    }
    ensure((rate - 0.79).abs() <= 0.03, || format!("same-class rate {rate:.3}"))?;
    for (k, want) in [2.0, 1.6, 1.4].into_iter().enumerate() {
        ensure((means[k] - want).abs() <= 0.1 * want, || format!("duration mean {k} = {:.3}", means[k]))?;
    }
    Ok(format!(
        "priors {:.3}/{:.3}/{:.3}, same-class {rate:.3} over {pairs} pairs, durations {:.2}/{:.2}/{:.2} s",
        priors[0], priors[1], priors[2], means[0], means[1], means[2]
    ))
}

// ---- 7 -------------------------------------------------------------------

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let corpus = synth::generate(&GeneratorConfig::well_separated()).map_err(|e| e.to_string())?;
    let encoder = SyntheticEncoder::new(&corpus);
    let asr = StubAsr::from_manifest(&corpus.manifest);
    let cfg = HarnessConfig { workers: 1, ..HarnessConfig::desk() };
    let report = harness::loso(&corpus.manifest, &encoder, &asr, &cfg).map_err(|e| e.to_string())?;

    let f1 = report.pooled.macro_f1;
    ensure(f1 >= 0.95, || format!("pooled macro-F1 {f1:.4}"))?;
    let r = report.ratios;
    ensure((r.acoustic + r.linguistic + r.fusion - 1.0).abs() < 1e-9, || format!("ratios {r:?}"))?;
    for f in &report.folds {
        let s = f.ratios.acoustic + f.ratios.linguistic + f.ratios.fusion;
        ensure((s - 1.0).abs() < 1e-9, || format!("fold {} ratios sum to {s}", f.participant))?;
    }
    let regated = cascade::regate(&report.traces, &cfg.policy).map_err(|e| e.to_string())?;
    let differ = report.traces.iter().zip(&regated).filter(|(t, g)| (t.exit_stage, t.label) != **g).count();
    ensure(differ == 0 && regated.len() == report.traces.len(), || format!("{differ} traces re-gate differently"))?;

    // continuity streams: every utterance keeps its predecessor's class
    let stream_cfg = GeneratorConfig { p_same: 1.0, n_sessions: 6, participants: 6, seed: 21, ..GeneratorConfig::well_separated() };
    let streams = synth::generate(&stream_cfg).map_err(|e| e.to_string())?;
    let stream_encoder = SyntheticEncoder::new(&streams);
    let stream_asr = StubAsr::from_manifest(&streams.manifest);
    let sessions = streams.manifest.sessions();
    let feats = harness::precompute(&sessions, &stream_encoder, &stream_asr, &cfg).map_err(|e| e.to_string())?;
    let by_session: Vec<&[harness::UtteranceFeatures]> = sessions.iter().map(|s| feats[&s.session_id].as_slice()).collect();
    let (models, _) = harness::train_models(&by_session, &cfg, 5).map_err(|e| e.to_string())?;
    let gate = models.alpha_gate.ok_or("no gate trained")?;
    let pairs = harness::adaptation_pairs(
        &streams.manifest.records,
        &stream_encoder,
        &adaptation::Laea::Adaptive(gate),
        cfg.laea_window_s,
        cfg.prev_source,
    )
    .map_err(|e| e.to_string())?;
    let rows = eval::embedding_distance_report(&pairs);
    for row in rows.iter().filter(|r| r.count >= 2) {
        ensure(row.after < row.before, || format!("{}: distance {:.4} -> {:.4}", row.class, row.before, row.after))?;
    }

    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    let shrink: Vec<String> = rows.iter().map(|r| format!("{:.3}->{:.3}", r.before, r.after)).collect();
    Ok(format!(
        "macro-F1 {f1:.4} over {} folds, exits {:.3}/{:.3}/{:.3}, re-gate identical on {} traces, intra-class distance {}",
        report.folds.len(),
        r.acoustic,
        r.linguistic,
        r.fusion,
        report.traces.len(),
        shrink.join(" ")
    ))
}

// ---- 8 -------------------------------------------------------------------

fn transcription_ordering() -> Outcome {
    let corpus = synth::generate(&GeneratorConfig::default()).map_err(|e| e.to_string())?;
    let noisy = NoisyAsr::new(StubAsr::from_manifest(&corpus.manifest), NoiseModel::default(), 0);
    let scores = context::evaluate_strategies(&corpus.manifest, &noisy, &Strategy::ALL, PlanConfig::default())
        .map_err(|e| e.to_string())?;
    let wer = |s: Strategy| scores.iter().find(|x| x.strategy == s).map(|x| x.wer).unwrap_or(f64::NAN);
    let contextual = wer(Strategy::Contextual);
    for s in Strategy::ALL.into_iter().filter(|&s| s != Strategy::Contextual) {
        ensure(contextual <= wer(s), || format!("contextual WER {contextual:.4} > {s} WER {:.4}", wer(s)))?;
    }

    // plans against the longest-fitting-suffix oracle, on whole milliseconds
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..500 {
        let mut cache = UtteranceCache::new(rng.gen_range(5.0..60.0));
        let mut t_ms: u64 = 0;
        for seq in 0..rng.gen_range(1..40u32) {
            let d_ms: u64 = rng.gen_range(100..9000);
            t_ms += rng.gen_range(0..4000);
            let seg = UtteranceSegment::new("s", seq, t_ms as f64 / 1000.0, (t_ms + d_ms) as f64 / 1000.0);
            t_ms += d_ms;
            cache.push(seg).map_err(|e| e.to_string())?;
        }
        let history = cache.snapshot();
        let target = history.last().unwrap().clone();
        let budget_ms: i64 = rng.gen_range(1_000..45_000);
        let plan_cfg = PlanConfig { budget_s: budget_ms as f64 / 1000.0, ..PlanConfig::default() };
        let plan = context::plan_window(&history, &target, Strategy::Contextual, plan_cfg).map_err(|e| e.to_string())?;

        let dur_ms = |s: &UtteranceSegment| ((s.t_end - s.t_start) * 1000.0).round() as i64;
        let mut left = budget_ms - dur_ms(&target);
        let mut keep = 0;
        for s in history[..history.len() - 1].iter().rev() {
            if dur_ms(s) > left {
                break;
            }
            left -= dur_ms(s);
            keep += 1;
        }
        let want: Vec<u32> = history[history.len() - 1 - keep..].iter().map(|s| s.seq_no).collect();
        let got: Vec<u32> = plan.included.iter().map(|s| s.seq_no).collect();
        ensure(got == want, || format!("cache {i}: plan {got:?}, oracle {want:?}"))?;
    }
    let table: Vec<String> = scores.iter().map(|s| format!("{}={:.4}", s.strategy, s.wer)).collect();
    Ok(format!("WER {}; 500 plans match the oracle", table.join(" ")))
}

// ---- 9 -------------------------------------------------------------------

fn prompt_goldens() -> Outcome {
    let results = prompt_golden::check_all();
    let bad: Vec<String> = results.iter().filter(|(_, ok)| !ok).map(|(t, _)| t.to_string()).collect();
    ensure(bad.is_empty(), || format!("differs from golden: {}", bad.join(", ")))?;

    let history: Vec<String> = (1..=11).map(|i| format!("h{i:02}")).collect();
    let line = selftalk::prompt::format_history(&history);
    ensure(line.matches('"').count() == 20 && !line.contains("h01") && line.starts_with("\"h02\""), || {
        format!("history line {line}")
    })?;
    Ok(format!("{} templates byte-identical, history truncated to 10", results.len()))
}

// ---- 10 ------------------------------------------------------------------

fn metrics() -> Outcome {
    // exact values: 97120/119691, 178/297 and 0
    let fixed: [([[u64; 3]; 3], f64); 3] = [
        ([[50, 3, 7], [4, 30, 6], [10, 5, 85]], 97120.0 / 119691.0),
        ([[10, 0, 0], [0, 0, 0], [2, 0, 8]], 178.0 / 297.0),
        ([[0, 5, 5], [3, 0, 2], [1, 1, 0]], 0.0),
    ];
    for (i, (counts, want)) in fixed.iter().enumerate() {
        let got = ConfusionMatrix::from_counts(*counts).metrics().macro_f1;
        ensure((got - want).abs() < 1e-9, || format!("matrix {i}: {got} vs {want}"))?;
    }

    let corpus = synth::generate(&GeneratorConfig::default()).map_err(|e| e.to_string())?;
    let manifest: &Manifest = &corpus.manifest;
    let participants = manifest.participants();
    ensure(participants.len() == 25, || format!("{} participants", participants.len()))?;
    let plan = eval::loso_folds(participants.iter().map(String::as_str));
    ensure(plan.len() == 25, || format!("{} folds", plan.len()))?;
    let mut held_total = 0;
    let mut seen = std::collections::BTreeSet::new();
    for fold in &plan.folds {
        ensure(seen.insert(fold.held_out.clone()), || format!("{} held out twice", fold.held_out))?;
        ensure(!fold.train.contains(&fold.held_out) && fold.train.len() == 24, || format!("fold {} train set", fold.held_out))?;
        let held = manifest.records.iter().filter(|r| r.participant_id == fold.held_out).count();
        let train = manifest.records.iter().filter(|r| fold.train.contains(&r.participant_id)).count();
        ensure(held + train == manifest.records.len() && held > 0, || format!("fold {} does not cover the corpus", fold.held_out))?;
        held_total += held;
    }
    ensure(held_total == manifest.records.len(), || format!("held-out sets cover {held_total} records"))?;
    Ok(format!("3 matrices exact, 25 folds partition {} utterances", held_total))
}
