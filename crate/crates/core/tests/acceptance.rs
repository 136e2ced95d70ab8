//! Acceptance checks. Each test writes one `PASS`/`FAIL` line to stderr
//! (outside the harness capture) before asserting.
//!
//! The trained fixture lives in a temporary directory unless
//! `MECO_ACCEPTANCE_DIR` names a directory to reuse between runs.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;

use meco::config::{Preset, RunConfig};
use meco::lm::{ModelConfig, SeqModel, VocabLayout};
use meco::metrics::{beat_constancy, fgd, frechet_distance, l1_diversity, text_retention, GaussianMoments};
use meco::motion::{synth_generate, BodyPart, MotionClip, PairedSample, SynthConfig};
use meco::pipeline::{ClipTokens, Run, Step};
use meco::rvq::{part_windows, train_codec, CodecConfig, MotionTokens, PartCodecs, RvqCodec};
use meco::sampler::{
    example_adherence, example_usage_entropy, generate_long, generate_segment, SamplerConfig, SamplerState, SamplingMode,
};
use meco::train::{
    build_prompt, example_mass, interleave, stage1_embed_init, stage2_s2g, stage3_example_train, supervised_loss, ExamplePrompt,
    StageConfig, TokenWindow, WINDOW_UNITS,
};
use meco::lm::ParamGroup;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FGD_IDENTICAL_TOL: f64 = 1e-9;
const FGD_GAUSSIAN_TOL: f64 = 1e-6;
const BC_OFFSET_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-4;
const MONOTONE_FRACTION: f64 = 0.95;
const ADHERENCE_AT_LARGE_BETA: f64 = 0.95;
const RETENTION_LIMIT: f64 = 0.05;
const SEEDS: u64 = 5;
const SWEEP_CLIPS: usize = 4;
const BC_CLIPS: usize = 20;

fn report(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn config() -> RunConfig {
    RunConfig::preset(Preset::Test)
}

struct Fixture {
    run: Run,
    data: Vec<PairedSample>,
    tokens: Vec<ClipTokens>,
    codecs: PartCodecs,
    model: SeqModel,
    _dir: Option<tempfile::TempDir>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let (root, dir) = match std::env::var_os("MECO_ACCEPTANCE_DIR") {
            Some(p) => (PathBuf::from(p), None),
            None => {
                let d = tempfile::tempdir().unwrap();
                (d.path().to_path_buf(), Some(d))
            }
        };
        let mut run = Run::open(&root, config()).unwrap();
        run.run_all(None, &mut |_| {}).unwrap();
        Fixture {
            data: run.dataset().unwrap(),
            tokens: run.tokens().unwrap(),
            codecs: run.codecs().unwrap(),
            model: run.model(3).unwrap(),
            run,
            _dir: dir,
        }
    })
}

impl Fixture {
    fn test_clips(&self) -> &[PairedSample] {
        &self.data[self.run.train_count()..]
    }
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[test]
fn c01_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let set: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let same = fgd(&set, &set).unwrap();
    let unit = |m: f64| GaussianMoments { mean: DVector::from_element(1, m), cov: DMatrix::from_element(1, 1, 1.0) };
    let shifted = frechet_distance(&unit(0.0), &unit(1.0)).unwrap();
    let aligned = beat_constancy(&[0.5, 1.3, 2.0], &[0.5, 1.3, 2.0], 0.1).unwrap();
    let offset = beat_constancy(&[1.1], &[1.0], 0.1).unwrap();
    let clip = synth_generate(3, &SynthConfig { count: 1, min_duration: 2.0, max_duration: 2.0, ..Default::default() }).unwrap()[0]
        .motion
        .clone();
    let div = l1_diversity(&[clip.clone(), clip.clone(), clip]).unwrap();
    let pass = same.abs() <= FGD_IDENTICAL_TOL
        && (shifted - 1.0).abs() <= FGD_GAUSSIAN_TOL
        && aligned == 1.0
        && (offset - (-0.5f64).exp()).abs() <= BC_OFFSET_TOL
        && div == 0.0;
    report(
        "metric oracles",
        pass,
        format!("fgd(same)={same:.2e} fgd(N0,N1)={shifted:.9} bc(aligned)={aligned} bc(0.1s)={offset:.12} div(same)={div}"),
    );
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn toy_window(rng: &mut ChaCha8Rng, layout: &VocabLayout) -> TokenWindow {
    let k = layout.motion as u32;
    let mut motion = MotionTokens::default();
    for _ in 0..30 {
        motion.upper.push(rng.random_range(0..k));
        motion.hands.push(rng.random_range(0..k));
        motion.lower.push(rng.random_range(0..k));
    }
    TokenWindow { audio: (0..WINDOW_UNITS).map(|_| rng.random_range(0..layout.audio as u32)).collect(), motion }
}

#[test]
fn c02_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;

    let cfg = CodecConfig { codebook_size: 8, latent_dim: 6, residual_layers: 2, ..CodecConfig::desk() };
    let codec = RvqCodec::new(BodyPart::Upper, 5, cfg, 3).unwrap();
    let (batch, frames) = (2, 16);
    let x: Vec<f64> = (0..5 * batch * frames).map(|_| rng.random_range(-1.0..1.0)).collect();
    let plan = codec.plan(&x, batch, frames, 2).unwrap();
    let (_, grads) = codec.loss_and_grad(&x, batch, frames, &plan).unwrap();
    let mut rvq_worst: f64 = 0.0;
    for _ in 0..40 {
        let pi = rng.random_range(0..codec.params.params.len());
        let j = rng.random_range(0..codec.params.params[pi].data.len());
        let at = |d: f64| {
            let mut c = codec.clone();
            c.params.params[pi].data[j] += d;
            c.surrogate_loss(&x, batch, frames, &plan).unwrap().total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        rvq_worst = rvq_worst.max(rel_err(fd, grads[pi][j]));
    }

    let layout = VocabLayout { text: 8, audio: 6, motion: 5, specials: true };
    let model = SeqModel::new(ModelConfig { d_model: 16, layers: 1, heads: 2, d_ff: 24, context: 400 }, layout, 4).unwrap();
    let window = toy_window(&mut rng, &layout);
    let example = ExamplePrompt::build(&window.motion, 0.3, 5).unwrap();
    let lambda = 0.1;
    let s = supervised_loss(&model, &window, &example, lambda).unwrap();
    let mut lm_worst: f64 = 0.0;
    for _ in 0..40 {
        let pi = rng.random_range(0..model.params.params.len());
        let j = rng.random_range(0..model.params.params[pi].data.len());
        let at = |d: f64| {
            let mut m = model.clone();
            m.params.params[pi].data[j] += d;
            supervised_loss(&m, &window, &example, lambda).unwrap().loss
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        lm_worst = lm_worst.max(rel_err(fd, s.grads[pi][j]));
    }
    report(
        "gradient checks",
        rvq_worst < GRAD_REL_TOL && lm_worst < GRAD_REL_TOL,
        format!("worst relative error: codec straight-through {rvq_worst:.2e}, stage-3 loss with penalty {lm_worst:.2e}"),
    );
}

#[test]
fn c03_rvq_layer_monotonicity() {
    let f = fixture();
    let clips: Vec<MotionClip> = f.test_clips().iter().map(|s| s.motion.clone()).collect();
    let (mut monotone, mut total) = (0usize, 0usize);
    let mut l1 = Vec::new();
    for part in BodyPart::ALL {
        let codec = f.codecs.get(part);
        let q = codec.config.residual_layers;
        let w = codec.config.window;
        let windows = part_windows(&clips, part, w, w);
        let x = meco::rvq::windows_to_channels(&windows, codec.in_dim, w);
        let rows = codec.encode_latents(&x, windows.len(), w).unwrap();
        let enc = codec.quantize(&rows, q).unwrap();
        let n = enc.residual_norms[0].len();
        for i in 0..n {
            total += 1;
            monotone += (1..=q).all(|l| enc.residual_norms[l][i] <= enc.residual_norms[l - 1][i]) as usize;
        }
        l1.push((codec.reconstruction_l1(&windows, w, q).unwrap(), codec.reconstruction_l1(&windows, w, 0).unwrap()));
    }
    let frac = monotone as f64 / total as f64;
    let pass = frac >= MONOTONE_FRACTION && l1.iter().all(|(full, base)| full <= base);
    let l1s: Vec<String> = l1.iter().map(|(a, b)| format!("{a:.4}<={b:.4}")).collect();
    report("rvq layer monotonicity", pass, format!("{monotone}/{total} vectors non-increasing ({frac:.3}); L1 full<=base {}", l1s.join(" ")));
}

#[test]
fn c04_quantizer_dropout_benefit() {
    let f = fixture();
    let n = f.run.train_count();
    let train: Vec<MotionClip> = f.data[..n].iter().map(|s| s.motion.clone()).collect();
    let test: Vec<MotionClip> = f.test_clips().iter().map(|s| s.motion.clone()).collect();
    let base = f.run.config.codec.clone();
    let windows = part_windows(&test, BodyPart::Upper, base.window, base.window);
    let (mut with, mut without) = (0.0, 0.0);
    for seed in 0..3 {
        for (dropout, acc) in [(true, &mut with), (false, &mut without)] {
            let cfg = CodecConfig { quantizer_dropout: dropout, ..base.clone() };
            let (c, _) = train_codec(BodyPart::Upper, &train, &cfg, 100 + seed).unwrap();
            *acc += c.reconstruction_l1(&windows, cfg.window, 0).unwrap() / 3.0;
        }
    }
    report(
        "quantizer dropout benefit",
        with <= without,
        format!("base-layer held-out L1 over 3 seeds: dropout {with:.4}, all layers {without:.4}"),
    );
}

fn sampled(beta: f64, gamma: f64, seed: u64) -> SamplerConfig {
    SamplerConfig { beta, gamma, seed, mode: SamplingMode::TopK { k: 8, temperature: 1.0 }, dedup_examples: true }
}

/// Generated motion ids and the example's ids, per held-out clip, first window only.
fn sweep(f: &Fixture, cfg: &SamplerConfig) -> Vec<(Vec<u32>, BTreeSet<u32>)> {
    let n = f.run.train_count();
    (0..SWEEP_CLIPS)
        .map(|i| {
            let example = f.run.example_for(&f.tokens, i);
            let mut state = SamplerState::from_example(&f.model.vocab, &example, cfg.seed).unwrap();
            let ids = state.all_example_ids();
            let audio = &f.tokens[n + i].tokens.audio[..WINDOW_UNITS];
            let seg = generate_segment(&f.model, audio, &example, &[], &mut state, cfg).unwrap();
            (seg.tokens, ids)
        })
        .collect()
}

#[test]
fn c05_example_adherence() {
    let f = fixture();
    let adherence = |beta: f64, seed: u64| {
        let out = sweep(f, &sampled(beta, 0.9, seed));
        out.iter().map(|(t, ids)| example_adherence(t, ids)).sum::<f64>() / out.len() as f64
    };
    let betas = [0.0, 2.0, 5.0, 10.0];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut means = [0.0; 4];
    for seed in 0..SEEDS {
        for (k, &b) in betas.iter().enumerate() {
            let a = adherence(b, seed);
            xs.push(b);
            ys.push(a);
            means[k] += a / SEEDS as f64;
        }
    }
    let rho = spearman(&xs, &ys);
    let large = (0..SEEDS).map(|s| adherence(1000.0, s)).sum::<f64>() / SEEDS as f64;
    report(
        "example adherence",
        rho > 0.0 && large >= ADHERENCE_AT_LARGE_BETA,
        format!("mean adherence at beta 0/2/5/10 = {:.3}/{:.3}/{:.3}/{:.3}, spearman {rho:.3}; beta 1000 {large:.3}", means[0], means[1], means[2], means[3]),
    );
}

#[test]
fn c06_gamma_diversity() {
    let f = fixture();
    let entropy = |gamma: f64| {
        let mut sum = 0.0;
        for seed in 0..SEEDS {
            let out = sweep(f, &sampled(5.0, gamma, seed));
            sum += out.iter().map(|(t, ids)| example_usage_entropy(t, ids)).sum::<f64>() / out.len() as f64;
        }
        sum / SEEDS as f64
    };
    let (decay, flat) = (entropy(0.9), entropy(1.0));
    report("gamma diversity", decay >= flat, format!("mean example-usage entropy: gamma 0.9 {decay:.4} nats, gamma 1.0 {flat:.4} nats"));
}

#[test]
fn c07_penalty_effect() {
    let f = fixture();
    let cfg = &f.run.config;
    let twin_cfg = StageConfig { lambda: 0.0, ..cfg.stage3 };
    let (twin, _) = stage3_example_train(f.run.model(2).unwrap(), &f.run.windows(false).unwrap(), &twin_cfg, cfg.seeds.stage3).unwrap();
    let heldout = f.run.windows(true).unwrap();
    let (with, without) = (example_mass(&f.model, &heldout, 0.4, 17).unwrap(), example_mass(&twin, &heldout, 0.4, 17).unwrap());
    report(
        "penalty effect",
        with > without,
        format!("mean example-set mass on held-out prompts: lambda {} {with:.5}, lambda 0 {without:.5}", cfg.stage3.lambda),
    );
}

#[test]
fn c08_text_retention() {
    let f = fixture();
    let cfg = &f.run.config;
    let base = f.run.model(0).unwrap();
    let heldout = f.run.heldout_text().unwrap();
    let kept = text_retention(&base, &f.model, &heldout).unwrap().degradation;

    let layout = VocabLayout::extended(cfg.data.audio_units, cfg.codec.codebook_size);
    let windows = f.run.windows(false).unwrap();
    let audio: Vec<Vec<u32>> = windows.iter().map(|w| w.audio.clone()).collect();
    let motion: Vec<MotionTokens> = windows.iter().map(|w| w.motion.clone()).collect();
    let unfrozen = StageConfig { allow_unfrozen_backbone: true, ..cfg.stage1 };
    let m = base.extend_vocab(layout, cfg.seeds.stage1).unwrap();
    assert!(!m.is_frozen(ParamGroup::Backbone));
    let (m, _) = stage1_embed_init(m, &audio, &motion, &unfrozen, cfg.seeds.stage1).unwrap();
    let (m, _) = stage2_s2g(m, &windows, &cfg.stage2, cfg.seeds.stage2).unwrap();
    let (m, _) = stage3_example_train(m, &windows, &cfg.stage3, cfg.seeds.stage3).unwrap();
    let ablated = text_retention(&base, &m, &heldout).unwrap().degradation;
    report(
        "text retention",
        kept < RETENTION_LIMIT && ablated > kept,
        format!("held-out perplexity degradation: frozen stage 1 {:.2}%, unfrozen stage 1 {:.2}%", 100.0 * kept, 100.0 * ablated),
    );
}

#[test]
fn c09_segmented_inference() {
    let f = fixture();
    let d = &f.run.config.data;
    let synth = SynthConfig { count: 1, min_duration: 8.0, max_duration: 8.0, ..d.synth() };
    let sample = synth_generate(41, &synth).unwrap().remove(0);
    let wave = sample.waveform.window(0.0, 8.0);
    let units = f.run.unit_codebook().unwrap();
    let example = f.run.example_for(&f.tokens, 0);
    let g = generate_long(&f.model, &f.codecs, &units, &wave, &example, None, d.skeleton, d.frame_rate, &f.run.config.sampler).unwrap();
    let w0 = &g.windows[0].tokens;
    let carried = g.windows.len() == 2 && g.windows[1].prefill == w0[w0.len() - 9..];
    let drift = (g.clip.duration() - wave.duration()).abs();
    let pass = carried && drift <= 1.0 / 7.5 && !g.clip.has_nan();
    report(
        "segmented inference",
        pass,
        format!("{} windows, prefill carried {carried}, duration {:.4}s for {:.4}s audio, nan {}", g.windows.len(), g.clip.duration(), wave.duration(), g.clip.has_nan()),
    );
}

#[test]
fn c10_end_to_end_learnability() {
    let f = fixture();
    let r = f.run.eval_report().unwrap();
    let (bc, mis) = (r.metrics["bc"], r.metrics["bc_mismatched"]);
    report(
        "end-to-end learnability",
        r.clips == BC_CLIPS && bc > mis,
        format!("BC over {} held-out clips {bc:.4}, mismatched audio {mis:.4} ({} beatless)", r.clips, r.beatless_clips),
    );
    assert!(f.run.is_complete(Step::Evaluate).unwrap());
}

#[test]
fn c11_prompt_golden() {
    let layout = VocabLayout::extended(100, 128);
    let example = ExamplePrompt::from_codes(
        &MotionTokens { upper: vec![5, 9, 5, 127], hands: vec![0, 0, 3, 3], lower: vec![64, 1, 2, 64], padded_frames: 0 },
        true,
    );
    let audio: Vec<u32> = (0..WINDOW_UNITS as u32).map(|i| (i * 37 + 11) % 100).collect();
    let seed_pose = interleave(&layout, &MotionTokens { upper: vec![17], hands: vec![42], lower: vec![99], padded_frames: 0 }).unwrap();
    let prompt = build_prompt(&layout, &example, &audio, &seed_pose, false, 512, 87).unwrap();
    let bytes: Vec<u8> = prompt.tokens.iter().flat_map(|t| t.to_le_bytes()).collect();
    let golden = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/prompt_golden.bin")).unwrap();
    let first_diff = bytes.iter().zip(&golden).position(|(a, b)| a != b);
    report(
        "prompt golden file",
        bytes == golden,
        format!("{} tokens ({} bytes) vs {} golden bytes, first difference {first_diff:?}", prompt.tokens.len(), bytes.len(), golden.len()),
    );
}
