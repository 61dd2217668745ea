//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p utts --test acceptance`. Positional arguments that parse as
//! numbers select criteria, e.g. `cargo test -p utts --test acceptance -- 1 4 6`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use candle_core::Tensor;
use utts::alignment::{
    assign_units, durations_from_alignment, expand_phonemes, fit_codebook, AlignmentSequence, KMeansConfig,
    PhonemeDurations,
};
use utts::cdsvae::{
    evaluate, kld_diag_gaussian, masked_nll, ArchConfig, Batch, Cdsvae, ConditionSpec, ContentPrior, GaussianSeq,
    LossConfig, MaskConfig, MaskSet, MelNorm, ReconMode, TrainConfig, TrainItem, Trainer,
};
use utts::corpus::{ToyCorpus, ToyCorpusConfig};
use utts::eval::{
    cer_wer, compute_eer, embed_utterances, generate_trials, score_trials, EmbeddingKind, ScoredTrials,
};
use utts::features::{cepstral_proxy, compute_mel, FeatureMatrix, MelSpectrogram, HOP_LENGTH};
use utts::frontend::{
    duration_loss, durations_to_frames, fa2ua_loss, DurationArch, DurationItem, DurationModel, DurationTrainConfig,
    DurationTrainer, Fa2UaArch, Fa2UaItem, Fa2UaModel, Fa2UaTrainConfig, Fa2UaTrainer, SpeakerPool,
};
use utts::nn::{device, finite_difference_check, scalar, Checkpoint};
use utts::pipeline::{synthesize, DurationSpeaker, SpeakerLatent, SynthesisModels, SynthesisRequest, VocoderHandle};
use utts::SeededRng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1: loss math

fn gauss(mean: f64, std: f64) -> GaussianSeq {
    GaussianSeq::new(
        Tensor::full(mean, (1, 1, 1), &device()).unwrap(),
        Tensor::full(std, (1, 1, 1), &device()).unwrap(),
    )
    .unwrap()
}

fn tiny_cdsvae(seed: u64) -> Cdsvae {
    Cdsvae::new(ArchConfig::tiny(ConditionSpec::ua(5), 4), MelNorm::identity(4), &mut SeededRng::new(seed)).unwrap()
}

fn tiny_batch(frames: usize, rng: &mut SeededRng) -> Batch {
    let mel = Tensor::from_vec(rng.normals(2 * frames * 4), (2, frames, 4), &device()).unwrap();
    let tokens = (0..2).map(|_| (0..frames).map(|_| rng.below(5) as u32).collect()).collect();
    Batch::from_tensor(mel, tokens, vec![frames, frames.max(2) - 1]).unwrap()
}

fn loss_math() -> Outcome {
    let kld = |q, p| scalar(&kld_diag_gaussian(&q, &p).map_err(err)?).map_err(err);
    let same = kld(gauss(0.3, 1.7), gauss(0.3, 1.7))?;
    let shift = kld(gauss(1.0, 1.0), gauss(0.0, 1.0))?;
    let wide = kld(gauss(0.0, 2.0), gauss(0.0, 1.0))?;
    let wide_closed = 0.5 * (4.0 - 1.0 - 4f64.ln());
    check(same.abs() < 1e-9, || format!("KL(q||q) = {same}"))?;
    check((shift - 0.5).abs() < 1e-9, || format!("KL(N(1,1)||N(0,1)) = {shift}"))?;
    check((wide - wide_closed).abs() < 1e-9 && (wide * 1e4).round() == 8069.0, || {
        format!("KL(N(0,4)||N(0,1)) = {wide}, closed form {wide_closed}")
    })?;

    let mut rng = SeededRng::new(1);
    let mut worst_mup = 0f64;
    for v in [2usize, 5, 21, 51, 74] {
        let (b, t) = (2, 9);
        let logits = Tensor::zeros((b, t, v), utts::nn::DTYPE, &device()).map_err(err)?;
        let targets: Vec<Vec<u32>> = (0..b).map(|_| (0..t).map(|_| rng.below(v) as u32).collect()).collect();
        let masks = vec![MaskSet::new(vec![0, 3, 4], t).unwrap(), MaskSet::new(vec![8], t).unwrap()];
        let mup = scalar(&masked_nll(&logits, &targets, &masks).map_err(err)?).map_err(err)?;
        worst_mup = worst_mup.max((mup - (v as f64).ln()).abs());
    }
    check(worst_mup < 1e-9, || format!("uniform-logit MUP off ln V by {worst_mup}"))?;

    let model = tiny_cdsvae(3);
    let mut worst = 0f64;
    for case in 0..100 {
        let cfg = LossConfig {
            alpha: 20.0 * rng.uniform(),
            beta: 20.0 * rng.uniform(),
            gamma: if case % 5 == 0 { 0.0 } else { 5.0 * rng.uniform() },
            content_prior: if case % 3 == 0 { ContentPrior::Standard } else { ContentPrior::Conditional },
        };
        // the prior-path reconstruction needs the conditional prior
        let mode = if case % 2 == 0 || cfg.content_prior == ContentPrior::Standard {
            ReconMode::Posterior
        } else {
            ReconMode::Dual
        };
        let batch = tiny_batch(2 + rng.below(5), &mut rng);
        let mask = MaskConfig { start_prob: 0.5, span: 2 };
        let out = model.loss(&batch, &cfg, &mask, mode, &mut SeededRng::new(case)).map_err(err)?;
        let b = out.breakdown;
        let tensor_total = scalar(&out.total).map_err(err)?;
        let scale = b.total.abs().max(1.0);
        worst = worst
            .max((b.total - b.recombine(&cfg)).abs() / scale)
            .max((tensor_total - b.total).abs() / scale);
        check(b.is_finite(), || format!("case {case}: non-finite breakdown {b:?}"))?;
    }
    check(worst < 1e-9, || format!("recombination identity off by {worst:e}"))?;
    Ok(format!(
        "KLD {same} / {shift:.12} / {wide:.12}; uniform MUP err {worst_mup:.1e}; recombination err {worst:.1e} over 100 configs"
    ))
}

// ---------------------------------------------------------------- 2: gradients

fn gradient_checks() -> Outcome {
    let model = tiny_cdsvae(6);
    let mut rng = SeededRng::new(2);
    let batch = tiny_batch(4, &mut rng);
    let all_frames = MaskConfig { start_prob: 1.0, span: 1 };
    let mut rows = Vec::new();
    let mut worst = 0f64;
    let mut record = |name: &str, rel: f64, coords: usize| {
        worst = worst.max(rel);
        rows.push(format!("{name} {rel:.1e} ({coords} coords)"));
    };

    let cdsvae_loss = |cfg: LossConfig, mode: ReconMode| {
        finite_difference_check(model.params(), 1e-5, || {
            Ok(model.loss(&batch, &cfg, &all_frames, mode, &mut SeededRng::new(11))?.total)
        })
    };
    let dsvae = LossConfig { content_prior: ContentPrior::Standard, gamma: 0.0, ..LossConfig::default() };
    let r = cdsvae_loss(dsvae, ReconMode::Posterior).map_err(err)?;
    record("dsvae objective", r.max_relative_error, r.coordinates_checked);

    let masks: Vec<MaskSet> = (0..2).map(|i| MaskSet::new(vec![i, 2 + i], 4).unwrap()).collect();
    let r = finite_difference_check(model.params(), 1e-5, || {
        let (_, logits) = model.encode_prior(&batch.tokens, &masks)?;
        masked_nll(&logits.expect("tiny arch has a unit classifier"), &batch.tokens, &masks)
    })
    .map_err(err)?;
    record("masked unit prediction", r.max_relative_error, r.coordinates_checked);

    let r = cdsvae_loss(LossConfig::default(), ReconMode::Posterior).map_err(err)?;
    record("conditional objective", r.max_relative_error, r.coordinates_checked);

    let fa2ua = Fa2UaModel::new(Fa2UaArch::tiny(6), &mut SeededRng::new(2)).map_err(err)?;
    let fa = vec![vec![3u32, 3, 8, 9], vec![1, 5, 5, 70]];
    let ua = vec![vec![0u32, 0, 4, 5], vec![1, 2, 2, 0]];
    let r = finite_difference_check(fa2ua.params(), 1e-6, || fa2ua_loss(&fa2ua.logits(&fa, &masks)?, &ua, &masks))
        .map_err(err)?;
    record("fa2ua masked prediction", r.max_relative_error, r.coordinates_checked);

    let r = cdsvae_loss(LossConfig::default(), ReconMode::Dual).map_err(err)?;
    record("dual reconstruction", r.max_relative_error, r.coordinates_checked);

    let dur = DurationModel::new(DurationArch::tiny(3), &mut SeededRng::new(4)).map_err(err)?;
    let phon = vec![vec![1u32, 4, 9, 2], vec![7, 7, 3, 0]];
    let spk = Tensor::from_vec(rng.normals(6), (2, 3), &device()).map_err(err)?;
    let target = Tensor::from_vec(rng.normals(8), (2, 4), &device()).map_err(err)?;
    let weights = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0], (2, 4), &device()).map_err(err)?;
    let r = finite_difference_check(dur.params(), 1e-6, || {
        duration_loss(&dur.forward(&phon, &[4, 3], &spk)?, &target, &weights)
    })
    .map_err(err)?;
    record("duration regression", r.max_relative_error, r.coordinates_checked);

    check(worst < 1e-4, || format!("max relative error {worst:e}: {}", rows.join(", ")))?;
    Ok(rows.join(", "))
}

// ---------------------------------------------------------------- 3: masked locality

fn masked_locality() -> Outcome {
    let mut rng = SeededRng::new(3);
    let mut masked_total = 0;
    for case in 0..200 {
        let b = 1 + rng.below(3);
        let t = 1 + rng.below(12);
        let v = 2 + rng.below(9);
        let logits = rng.normals(b * t * v);
        let targets: Vec<Vec<u32>> = (0..b).map(|_| (0..t).map(|_| rng.below(v) as u32).collect()).collect();
        let masks: Vec<MaskSet> = (0..b)
            .map(|_| {
                let p = rng.uniform();
                MaskSet::new((0..t).filter(|_| rng.uniform() < p).collect(), t).unwrap()
            })
            .collect();
        masked_total += masks.iter().map(MaskSet::count).sum::<usize>();

        let mut logits2 = logits.clone();
        let mut targets2 = targets.clone();
        for (i, m) in masks.iter().enumerate() {
            for f in (0..t).filter(|&f| !m.contains(f)) {
                for c in 0..v {
                    logits2[(i * t + f) * v + c] = 100.0 * rng.normal();
                }
                targets2[i][f] = rng.below(v) as u32;
            }
        }
        let tensor = |x: Vec<f64>| Tensor::from_vec(x, (b, t, v), &device()).unwrap();
        let (l1, l2) = (tensor(logits), tensor(logits2));
        for (name, f) in [("mup_loss", masked_nll as fn(&Tensor, &[Vec<u32>], &[MaskSet]) -> _), ("fa2ua_loss", fa2ua_loss)] {
            let a = scalar(&f(&l1, &targets, &masks).map_err(err)?).map_err(err)?;
            let z = scalar(&f(&l2, &targets2, &masks).map_err(err)?).map_err(err)?;
            check(a.to_bits() == z.to_bits(), || format!("case {case}: {name} {a} became {z}"))?;
        }
    }
    Ok(format!("200 cases ({masked_total} masked frames), both losses bit-identical"))
}

// ---------------------------------------------------------------- 4: alignment arithmetic

fn alignment_arithmetic() -> Outcome {
    let mut rng = SeededRng::new(4);
    let mut frames = 0;
    for case in 0..1000 {
        let runs = 1 + rng.below(40);
        let mut phonemes: Vec<u32> = Vec::new();
        let mut durations = Vec::new();
        while phonemes.len() < runs {
            let p = rng.below(72) as u32;
            if phonemes.last() != Some(&p) {
                phonemes.push(p);
                durations.push(1 + rng.below(12) as u32);
            }
        }
        let pd = PhonemeDurations::new(phonemes, durations).map_err(err)?;
        let fa = expand_phonemes(&pd);
        frames += fa.len();
        check(fa.len() == pd.total_frames(), || format!("case {case}: length"))?;
        let back = durations_from_alignment(&fa).map_err(err)?;
        check(back == pd, || format!("case {case}: run-length of expand differs"))?;
        check(expand_phonemes(&back) == fa, || format!("case {case}: expand of run-length differs"))?;
    }
    let logs: Vec<f64> = [2.2f64, 1.8, 0.9].iter().map(|d| d.ln()).collect();
    let worked = PhonemeDurations::new(vec![55, 2, 7], durations_to_frames(&logs).map_err(err)?).map_err(err)?;
    let tokens = expand_phonemes(&worked).tokens().to_vec();
    check(tokens == [55, 55, 55, 2, 2, 7], || format!("worked example gave {tokens:?}"))?;
    Ok(format!("1000 round trips ({frames} frames); worked example -> {tokens:?}"))
}

// ---------------------------------------------------------------- 5: clustering

fn clustering() -> Outcome {
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
    let per = 50;
    let mut pure_runs = 0;
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(1000 + seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                data.push((center[0] + 0.7 * rng.normal()) as f32);
                data.push((center[1] + 0.7 * rng.normal()) as f32);
                labels.push(c);
            }
        }
        let n = labels.len();
        let feats = FeatureMatrix::new(data, n, 2, 50.0).map_err(err)?;
        let cfg = KMeansConfig { k: 4, ..KMeansConfig::default() };
        let (cb, report) = fit_codebook(std::slice::from_ref(&feats), &cfg, &mut SeededRng::new(seed)).map_err(err)?;
        if let Some(w) = report.inertia.windows(2).find(|w| w[1] > w[0]) {
            return Err(format!("seed {seed}: inertia rose from {} to {}", w[0], w[1]));
        }
        let assigned = assign_units(&feats, &cb).map_err(err)?;
        let mut counts = [[0usize; 4]; 4];
        for (&u, &l) in assigned.tokens().iter().zip(&labels) {
            counts[u as usize][l] += 1;
        }
        let majority: usize = counts.iter().map(|row| *row.iter().max().unwrap()).sum();
        if majority == n {
            pure_runs += 1;
        }
    }
    check(pure_runs >= 19, || format!("purity 1.0 in only {pure_runs}/20 runs"))?;
    Ok(format!("purity 1.0 in {pure_runs}/20 runs; inertia non-increasing in all"))
}

// ---------------------------------------------------------------- 6: EER

/// Threshold sweep by direct counting at every candidate threshold.
fn eer_oracle(scores: &[f64], target: &[bool]) -> f64 {
    let nt = target.iter().filter(|&&t| t).count();
    let nn = target.len() - nt;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    let rates = |th: f64| {
        let false_accepts = scores.iter().zip(target).filter(|(&s, &t)| !t && s >= th).count();
        let false_rejects = scores.iter().zip(target).filter(|(&s, &t)| t && s < th).count();
        (false_accepts as f64 / nn as f64, false_rejects as f64 / nt as f64)
    };
    let mut prev = rates(thresholds[0]);
    for &th in &thresholds {
        let (far, frr) = rates(th);
        if frr >= far {
            if frr == far {
                return far;
            }
            let (d0, d1) = (prev.0 - prev.1, far - frr);
            let t = d0 / (d0 - d1);
            return prev.0 + t * (far - prev.0);
        }
        prev = (far, frr);
    }
    unreachable!("the +inf threshold rejects everything")
}

fn eer_correctness() -> Outcome {
    let mut rng = SeededRng::new(6);
    let mut sizes = 0;
    for case in 0..100 {
        let n = 2 + rng.below(999);
        let levels = [0usize, 5, 50][case % 3];
        let mut target: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.3).collect();
        target[0] = true;
        target[1] = false;
        let scores: Vec<f64> = target
            .iter()
            .map(|&t| {
                let s = rng.normal() + if t { 1.0 } else { 0.0 };
                if levels == 0 {
                    s
                } else {
                    (s * levels as f64 / 4.0).round()
                }
            })
            .collect();
        sizes += n;
        let got = compute_eer(&ScoredTrials::new(scores.clone(), target.clone()).map_err(err)?).map_err(err)?;
        let want = eer_oracle(&scores, &target);
        check(got.to_bits() == want.to_bits(), || format!("case {case} ({n} trials): {got} vs oracle {want}"))?;
    }
    let hand = ScoredTrials::new(vec![0.9, 0.8, 0.7, 0.75, 0.2, 0.1], vec![true, true, true, false, false, false])
        .map_err(err)?;
    let eer = compute_eer(&hand).map_err(err)?;
    check((eer - 1.0 / 3.0).abs() < 1e-12, || format!("hand case gave {eer}"))?;
    Ok(format!("100 sets ({sizes} trials) equal to the oracle bit for bit; hand case {eer:.15}"))
}

// ---------------------------------------------------------------- 7 and 8: trained models

const UNITS: usize = 20;

/// Models and data shared by the training smoke and the end-to-end run.
struct Trained {
    corpus: ToyCorpus,
    mels: Vec<MelSpectrogram>,
    units: Vec<AlignmentSequence>,
    held_out: Vec<bool>,
    acoustic: Cdsvae,
}

fn train_desk(log: &mut Vec<String>) -> Result<Trained, String> {
    let t0 = Instant::now();
    let corpus = ToyCorpus::generate(ToyCorpusConfig { speakers: 20, utterances_per_speaker: 12, ..Default::default() })
        .map_err(err)?;
    let mels: Vec<MelSpectrogram> =
        corpus.utterances.iter().map(|u| compute_mel(&u.waveform)).collect::<Result<_, _>>().map_err(err)?;
    let seconds: f64 = corpus.utterances.iter().map(|u| u.waveform.duration_secs()).sum();
    let per = corpus.config.utterances_per_speaker;
    let held_out: Vec<bool> = (0..mels.len()).map(|i| i % per >= per - 2).collect();
    let feats: Vec<FeatureMatrix> = mels.iter().map(cepstral_proxy).collect::<Result<_, _>>().map_err(err)?;
    let train_feats: Vec<FeatureMatrix> =
        feats.iter().zip(&held_out).filter(|(_, &h)| !h).map(|(f, _)| f.clone()).collect();
    let km = KMeansConfig { k: UNITS, ..KMeansConfig::default() };
    let (cb, _) = fit_codebook(&train_feats, &km, &mut SeededRng::new(1)).map_err(err)?;
    let units: Vec<AlignmentSequence> =
        feats.iter().map(|f| assign_units(f, &cb)).collect::<Result<_, _>>().map_err(err)?;

    let items = |held: bool| -> Result<Vec<TrainItem>, String> {
        (0..mels.len())
            .filter(|&i| held_out[i] == held)
            .map(|i| {
                let u = &corpus.utterances[i];
                TrainItem::new(&u.id, &u.speaker, mels[i].clone(), units[i].clone()).map_err(err)
            })
            .collect()
    };
    let (train, held) = (items(false)?, items(true)?);
    let norm = MelNorm::fit(train.iter().map(|t| &t.mel));
    let model = Cdsvae::new(ArchConfig::desk(ConditionSpec::ua(UNITS as u32)), norm, &mut SeededRng::new(3))
        .map_err(err)?;
    let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, cfg.clone(), 5).map_err(err)?;
    let epochs = trainer.run(&train).map_err(err)?;
    let (first, last) = (epochs[0].mean.total, epochs[epochs.len() - 1].mean.total);
    let drop = 1.0 - last / first;
    log.push(format!(
        "corpus {} utterances ({:.1} min), {} train / {} held out, trained 30 epochs in {:.0?}",
        mels.len(),
        seconds / 60.0,
        train.len(),
        held.len(),
        t0.elapsed()
    ));
    log.push(format!("(a) total {first:.3} -> {last:.3}, drop {:.1}%", 100.0 * drop));
    let mut failures = Vec::new();
    if drop < 0.30 {
        failures.push(format!("(a) loss dropped only {:.1}%", 100.0 * drop));
    }

    let pairs: Vec<(String, String)> = held.iter().map(|t| (t.id.clone(), t.speaker.clone())).collect();
    let trials = generate_trials(&pairs, 200, &mut SeededRng::new(11)).map_err(err)?;
    let eer = |m: &Cdsvae, kind| -> Result<f64, String> {
        let e = embed_utterances(m, held.iter().map(|t| (t.id.as_str(), &t.mel)), kind).map_err(err)?;
        compute_eer(&score_trials(&e, &trials).map_err(err)?).map_err(err)
    };
    let (spk, content) = (eer(trainer.model(), EmbeddingKind::Speaker)?, eer(trainer.model(), EmbeddingKind::Content)?);
    log.push(format!("(b) {} trials: speaker EER {spk:.3}, content EER {content:.3}", trials.len()));
    if spk >= content {
        failures.push(format!("(b) speaker EER {spk:.3} is not below content EER {content:.3}"));
    }

    let base = evaluate(trainer.model(), &held, &cfg, 9).map_err(err)?;
    let dcfg = TrainConfig { epochs: 10, recon: ReconMode::Dual, ..cfg.clone() };
    let mut dual = Trainer::from_base(&trainer.checkpoint(), dcfg.clone(), 6).map_err(err)?;
    dual.run(&train).map_err(err)?;
    let after = evaluate(dual.model(), &held, &cfg, 9).map_err(err)?;
    let (base_d, after_d) = (evaluate(trainer.model(), &held, &dcfg, 9).map_err(err)?, evaluate(dual.model(), &held, &dcfg, 9).map_err(err)?);
    log.push(format!(
        "(c) held-out recon {:.3} -> {:.3}; prior-path recon {:.3} -> {:.3}",
        base.recon_posterior,
        after.recon_posterior,
        base_d.recon_prior.unwrap_or(f64::NAN),
        after_d.recon_prior.unwrap_or(f64::NAN)
    ));
    if after.recon_posterior > base.recon_posterior {
        failures.push(format!("(c) held-out recon rose {:.3} -> {:.3}", base.recon_posterior, after.recon_posterior));
    }
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    log.push(format!("runtime {minutes:.1} min"));
    if minutes >= 60.0 {
        failures.push(format!("runtime {minutes:.1} min"));
    }
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    Ok(Trained { corpus, mels, units, held_out, acoustic: dual.into_model() })
}

fn training_smoke(shared: &mut Option<Trained>) -> Outcome {
    let mut log = Vec::new();
    let result = train_desk(&mut log);
    let detail = log.join("; ");
    match result {
        Ok(t) => {
            *shared = Some(t);
            Ok(detail)
        }
        Err(e) => Err(format!("{e} [{detail}]")),
    }
}

fn frontend_models(t: &Trained) -> Result<(SpeakerPool, DurationModel, Fa2UaModel), String> {
    let train: Vec<usize> = (0..t.mels.len()).filter(|&i| !t.held_out[i]).collect();
    let utt = |i: usize| &t.corpus.utterances[i];
    let pool = SpeakerPool::build(&t.acoustic, train.iter().map(|&i| (utt(i).speaker.as_str(), &t.mels[i])))
        .map_err(err)?;
    let dur_items: Vec<DurationItem> = train
        .iter()
        .map(|&i| Ok(DurationItem { durations: utt(i).durations.clone(), speaker: pool.get(&utt(i).speaker)?.to_vec() }))
        .collect::<Result<_, utts::Error>>()
        .map_err(err)?;
    let arch = DurationArch { speaker_dim: t.acoustic.arch().latent_dim, ..DurationArch::desk() };
    let dcfg = DurationTrainConfig { epochs: 10, ..DurationTrainConfig::default() };
    let mut dt = DurationTrainer::new(DurationModel::new(arch, &mut SeededRng::new(6)).map_err(err)?, dcfg, 7)
        .map_err(err)?;
    dt.run(&dur_items, &[]).map_err(err)?;

    let fa_items: Vec<Fa2UaItem> = train
        .iter()
        .filter(|&&i| utt(i).durations.total_frames() == t.units[i].len())
        .map(|&i| Fa2UaItem::new(expand_phonemes(&utt(i).durations), t.units[i].clone()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    if fa_items.is_empty() {
        return Err("no utterance has forced alignments matching its mel length".into());
    }
    let fcfg = Fa2UaTrainConfig { epochs: 10, ..Fa2UaTrainConfig::default() };
    let mut ft = Fa2UaTrainer::new(Fa2UaModel::new(Fa2UaArch::desk(UNITS as u32), &mut SeededRng::new(8)).map_err(err)?, fcfg, 9)
        .map_err(err)?;
    ft.run(&fa_items, &[]).map_err(err)?;
    Ok((pool, dt.into_model(), ft.into_model()))
}

fn end_to_end(shared: &mut Option<Trained>) -> Outcome {
    let t0 = Instant::now();
    if shared.is_none() {
        let mut log = Vec::new();
        *shared = Some(train_desk(&mut log).map_err(|e| format!("could not train the acoustic model: {e}"))?);
    }
    let t = shared.as_ref().expect("set above");
    let (speakers, duration, fa2ua) = frontend_models(t)?;
    let acoustic_ck = t.acoustic.checkpoint(&Default::default(), 0, 0, SeededRng::new(0).state());
    let models = SynthesisModels {
        cdsvae: Cdsvae::from_checkpoint(&acoustic_ck).map_err(err)?,
        duration,
        fa2ua,
        lexicon: t.corpus.lexicon.clone(),
        speakers: speakers.clone(),
        vocoder: VocoderHandle::internal(),
    };
    // the second run loads every model back from its serialized checkpoint
    let reload = |ck: Checkpoint| Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    let reloaded = SynthesisModels {
        cdsvae: Cdsvae::from_checkpoint(&reload(acoustic_ck)).map_err(err)?,
        duration: DurationModel::from_checkpoint(&reload(models.duration.to_checkpoint())).map_err(err)?,
        fa2ua: Fa2UaModel::from_checkpoint(&reload(models.fa2ua.to_checkpoint())).map_err(err)?,
        lexicon: t.corpus.lexicon.clone(),
        speakers,
        vocoder: VocoderHandle::internal(),
    };

    let seen: BTreeSet<&str> = t.corpus.utterances.iter().map(|u| u.transcript.as_str()).collect();
    let mut rng = SeededRng::new(21);
    let mut sentences = Vec::new();
    while sentences.len() < 20 {
        let s = t.corpus.sentence(&mut rng);
        if !seen.contains(s.as_str()) && !sentences.contains(&s) {
            sentences.push(s);
        }
    }
    let references: Vec<&MelSpectrogram> = (0..t.mels.len()).filter(|&i| t.held_out[i]).map(|i| &t.mels[i]).collect();
    let dir = tempfile::tempdir().map_err(err)?;
    let mut frames = 0;
    for (i, text) in sentences.iter().enumerate() {
        let req = SynthesisRequest {
            text: text.clone(),
            reference: references[i % references.len()].clone(),
            duration_speaker: DurationSpeaker::Random,
            speaker_latent: SpeakerLatent::Mean,
            seed: 100 + i as u64,
        };
        let a = synthesize(&req, &models).map_err(|e| format!("{text:?}: {e}"))?;
        let b = synthesize(&req, &reloaded).map_err(|e| format!("{text:?}: {e}"))?;
        let sum: usize = a.durations.durations().iter().map(|&d| d as usize).sum();
        let n = a.mel.num_frames();
        let samples = a.waveform.len();
        check(
            sum == a.fa.len() && a.fa.len() == a.ua.len() && a.ua.len() == n && (samples as f64 / HOP_LENGTH as f64 - n as f64).abs() <= 1.0,
            || format!("{text:?}: durations {sum}, FA {}, UA {}, mel {n}, samples {samples}", a.fa.len(), a.ua.len()),
        )?;
        frames += n;
        let (da, db) = (dir.path().join(format!("a{i}")), dir.path().join(format!("b{i}")));
        a.save(&da).map_err(err)?;
        b.save(&db).map_err(err)?;
        check(a == b, || format!("{text:?}: bundles differ between runs"))?;
        for f in ["summary.json", "durations.txt", "fa.txt", "ua.txt", "mel.bin", "audio.wav"] {
            let read = |d: &std::path::Path| std::fs::read(d.join(f)).unwrap();
            check(read(&da) == read(&db), || format!("{text:?}: {f} differs between runs"))?;
        }
    }
    Ok(format!(
        "20 unseen sentences, {frames} frames, lengths exact, bundles bit-identical across runs ({:.0?})",
        t0.elapsed()
    ))
}

// ---------------------------------------------------------------- 9: CER/WER

fn random_text(rng: &mut SeededRng) -> String {
    const ALPHABET: [char; 10] = ['a', 'b', 'c', 'd', 'é', 'ß', 'x', ' ', ' ', '\t'];
    (0..rng.below(30)).map(|_| ALPHABET[rng.below(ALPHABET.len())]).collect()
}

fn error_rates() -> Outcome {
    let mut rng = SeededRng::new(9);
    let mut pairs = 0;
    while pairs < 500 {
        let (reference, hyp) = (random_text(&mut rng), random_text(&mut rng));
        let rw: Vec<&str> = reference.split_whitespace().collect();
        if rw.is_empty() {
            continue;
        }
        let hw: Vec<&str> = hyp.split_whitespace().collect();
        let (rc, hc) = (rw.join(" "), hw.join(" "));
        let want_cer = strsim::levenshtein(&rc, &hc) as f64 / rc.chars().count() as f64;
        let want_wer = strsim::generic_levenshtein(&rw, &hw) as f64 / rw.len() as f64;
        let got = cer_wer(&reference, &hyp).map_err(err)?;
        check(got.cer == want_cer && got.wer == want_wer, || {
            format!("{reference:?} vs {hyp:?}: got {got:?}, want cer {want_cer} wer {want_wer}")
        })?;
        pairs += 1;
    }
    Ok("500 pairs equal to strsim edit distance".into())
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared: Option<Trained> = None;
    let mut criteria: Vec<(usize, &str, Box<dyn FnMut(&mut Option<Trained>) -> Outcome>)> = vec![
        (1, "loss math oracles", Box::new(|_| loss_math())),
        (2, "gradient checks", Box::new(|_| gradient_checks())),
        (3, "masked locality", Box::new(|_| masked_locality())),
        (4, "alignment arithmetic", Box::new(|_| alignment_arithmetic())),
        (5, "k-means++ clustering", Box::new(|_| clustering())),
        (6, "EER correctness", Box::new(|_| eer_correctness())),
        (7, "desk-scale training smoke", Box::new(training_smoke)),
        (8, "end-to-end synthesis", Box::new(end_to_end)),
        (9, "CER/WER arithmetic", Box::new(|_| error_rates())),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria.iter_mut() {
        if !selected.is_empty() && !selected.contains(n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}, {secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}, {secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
