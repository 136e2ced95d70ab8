use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use meco::audio::read_wav;
use meco::config::{Preset, RunConfig};
use meco::lm::{load_model, save_model, ParamGroup, VocabLayout};
use meco::metrics::{train_feature_autoencoder, FeatureAutoencoder};
use meco::motion::{motion_io_load, motion_io_save, read_manifest, BodyPart, MotionClip};
use meco::pipeline::{evaluate_sets, Run, Step};
use meco::rvq::tokenize_motion;
use meco::sampler::{generate_long, SamplerConfig};
use meco::train::{
    stage0_pretrain, stage1_embed_init, stage2_s2g, stage3_example_train, text_corpus, token_windows, ExamplePrompt,
    PairedTokens,
};
use meco::{Error, Result};

/// Motion-example-controlled co-speech gesture generation.
///
/// Artifacts live in a run directory (`--run-dir`, or `MECO_CACHE`). Logs are
/// JSON lines on stderr; each command prints a JSON summary on stdout.
/// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
#[derive(Parser)]
#[command(name = "meco", version)]
struct Cli {
    /// Run directory holding data, checkpoints and reports.
    #[arg(long, global = true, env = "MECO_CACHE", default_value = "meco-run")]
    run_dir: PathBuf,
    /// Run configuration (TOML). Defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given: paper, desk or test.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired dataset.
    Synth {
        /// Overrides the configured dataset seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the codec for one body part.
    TrainCodec {
        /// upper, hands or lower.
        #[arg(long)]
        part: BodyPart,
        /// Overrides the configured codec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage of the sequence model.
    ///
    /// Without `--init`/`--data` the run directory supplies both and the step
    /// is recorded in its manifest. With either, `--out` is required.
    TrainLm {
        /// 0 pretrains on text; 1 to 3 fine-tune.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
        stage: u8,
        /// Checkpoint to start from (stages 1 to 3).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Dataset manifest; clips are tokenized with the run's codecs and units.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the configured seed for this stage.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the trained checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate motion for an audio file.
    Generate {
        /// Speech audio (WAV, mono).
        #[arg(long)]
        audio: PathBuf,
        /// Motion file used as the example, or `none`.
        #[arg(long, default_value = "none")]
        example: String,
        /// Logit offset for example tokens.
        #[arg(long)]
        beta: Option<f64>,
        /// Per-occurrence decay for example tokens, in (0, 1].
        #[arg(long)]
        gamma: Option<f64>,
        /// Sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Motion file whose first frame is the initial pose.
        #[arg(long)]
        initial_pose: Option<PathBuf>,
        /// Model checkpoint; defaults to the run's stage-3 model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output motion file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated motion against real motion.
    Evaluate {
        /// Manifest of real clips.
        #[arg(long)]
        real: PathBuf,
        /// Manifest of generated clips; beat times are those of the driving audio.
        #[arg(long)]
        generated: PathBuf,
        /// Comma-separated subset of fgd1, fgd2, bc, bc_mismatched, div.
        #[arg(long, default_value = "fgd2,bc,div")]
        metrics: String,
        /// Feature autoencoder for fgd1; trained on the real clips if absent.
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        /// Output report (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every step, resuming after the last complete one.
    Pipeline {
        /// Stop after this step (e.g. synth, codec-upper, stage2, generate).
        #[arg(long)]
        until: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(path) => RunConfig::load(path),
        None => {
            let preset = match cli.preset.as_str() {
                "paper" => Preset::Paper,
                "desk" => Preset::Desk,
                "test" => Preset::Test,
                other => return Err(Error::Config(format!("unknown preset {other:?}"))),
            };
            Ok(RunConfig::preset(preset))
        }
    }
}

fn clip_tokens(run: &Run, manifest: &Path) -> Result<Vec<PairedTokens>> {
    let codecs = run.codecs()?;
    let units = run.unit_codebook()?;
    read_manifest(manifest)?
        .iter()
        .map(|r| {
            let wave = read_wav(&r.audio_path)?;
            Ok(PairedTokens {
                audio: meco::audio::tokenize_audio(&wave, &units)?,
                motion: tokenize_motion(&motion_io_load(&r.motion_path)?, &codecs)?,
            })
        })
        .collect()
}

fn train_lm(run: &mut Run, stage: u8, init: Option<&Path>, data: Option<&Path>, out: Option<&Path>, log: &mut dyn FnMut(Value)) -> Result<Value> {
    if init.is_none() && data.is_none() && out.is_none() {
        run.run_step(Step::Stage(stage), log)?;
        return Ok(json!({"stage": stage, "checkpoint": run.model_path(stage)}));
    }
    let out = out.ok_or_else(|| Error::Config("--out is required with --init or --data".into()))?;
    let cfg = run.config.clone();
    let windows = || -> Result<_> {
        match data {
            Some(m) => Ok(clip_tokens(run, m)?.iter().flat_map(token_windows).collect::<Vec<_>>()),
            None => {
                run.require(Step::Tokenize)?;
                run.windows(false)
            }
        }
    };
    let init_model = || match init {
        Some(p) => load_model(p),
        None => {
            run.require(Step::Stage(stage - 1))?;
            run.model(stage - 1)
        }
    };
    let (model, report) = match stage {
        0 => stage0_pretrain(&text_corpus(cfg.seeds.corpus, cfg.corpus_bytes), cfg.model, &cfg.stage0, cfg.seeds.stage0)?,
        1 => {
            let mut m = init_model()?;
            if m.vocab == VocabLayout::text_only() {
                m = m.extend_vocab(VocabLayout::extended(cfg.data.audio_units, cfg.codec.codebook_size), cfg.seeds.stage1)?;
            }
            if !cfg.stage1.allow_unfrozen_backbone {
                m.freeze(&[ParamGroup::Backbone]);
            }
            let w = windows()?;
            let audio: Vec<Vec<u32>> = w.iter().map(|w| w.audio.clone()).collect();
            let motion: Vec<_> = w.into_iter().map(|w| w.motion).collect();
            let (mut m, r) = stage1_embed_init(m, &audio, &motion, &cfg.stage1, cfg.seeds.stage1)?;
            m.unfreeze(&[ParamGroup::Backbone]);
            (m, r)
        }
        2 => stage2_s2g(init_model()?, &windows()?, &cfg.stage2, cfg.seeds.stage2)?,
        _ => stage3_example_train(init_model()?, &windows()?, &cfg.stage3, cfg.seeds.stage3)?,
    };
    for r in &report.steps {
        log(json!({"event": "train_step", "stage": stage, "step": r.step, "loss": r.loss, "penalty": r.penalty, "lr": r.lr}));
    }
    save_model(&model, out)?;
    Ok(json!({"stage": stage, "checkpoint": out}))
}

#[allow(clippy::too_many_arguments)]
fn generate(
    run: &Run,
    audio: &Path,
    example: &str,
    sampler: SamplerConfig,
    initial_pose: Option<&Path>,
    model: Option<&Path>,
    out: &Path,
    log: &mut dyn FnMut(Value),
) -> Result<Value> {
    let model = match model {
        Some(p) => load_model(p)?,
        None => {
            run.require(Step::Stage(3))?;
            run.model(3)?
        }
    };
    let codecs = run.codecs()?;
    let units = run.unit_codebook()?;
    let wave = read_wav(audio)?;
    let example = match example {
        "none" => ExamplePrompt::empty(),
        path => ExamplePrompt::from_codes(&tokenize_motion(&motion_io_load(Path::new(path))?, &codecs)?, sampler.dedup_examples),
    };
    let pose = match initial_pose {
        Some(p) => {
            let clip = motion_io_load(p)?;
            if clip.frame_count() == 0 {
                return Err(Error::Data(format!("{} has no frames", p.display())));
            }
            Some(clip.data()[..clip.dim()].to_vec())
        }
        None => None,
    };
    let d = &run.config.data;
    let g = generate_long(&model, &codecs, &units, &wave, &example, pose.as_deref(), d.skeleton, d.frame_rate, &sampler)?;
    for w in &g.windows {
        log(json!({"event": "window", "record": w}));
    }
    motion_io_save(out, &g.clip)?;
    Ok(json!({"out": out, "frames": g.clip.frame_count(), "windows": g.windows.len(), "padded_audio": g.padded_audio}))
}

fn evaluate(run: &Run, real: &Path, generated: &Path, metrics: &str, autoencoder: Option<&Path>, out: &Path) -> Result<Value> {
    let names: Vec<&str> = metrics.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let real: Vec<MotionClip> = read_manifest(real)?.iter().map(|r| motion_io_load(&r.motion_path)).collect::<Result<_>>()?;
    let gen = read_manifest(generated)?;
    let clips: Vec<MotionClip> = gen.iter().map(|r| motion_io_load(&r.motion_path)).collect::<Result<_>>()?;
    let beats: Vec<Vec<f64>> = gen.iter().map(|r| r.beat_times.clone()).collect();
    let mc = &run.config.metrics;
    let ae: Option<FeatureAutoencoder> = match (names.contains(&"fgd1"), autoencoder) {
        (false, _) => None,
        (true, Some(p)) => Some(FeatureAutoencoder::load(p)?),
        (true, None) => Some(train_feature_autoencoder(&real, &mc.feature_ae, run.config.seeds.metrics)?.0),
    };
    let report = evaluate_sets(&real, &clips, &beats, &names, mc, ae.as_ref())?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))? + "\n";
    std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(json!({"out": out, "metrics": report.metrics}))
}

fn execute(cli: Cli, log: &mut dyn FnMut(Value)) -> Result<Value> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { seed: Some(s) } => cfg.seeds.synth = *s,
        Command::TrainCodec { seed: Some(s), .. } => cfg.seeds.codec = *s,
        Command::TrainLm { stage, seed: Some(s), .. } => match stage {
            0 => cfg.seeds.stage0 = *s,
            1 => cfg.seeds.stage1 = *s,
            2 => cfg.seeds.stage2 = *s,
            _ => cfg.seeds.stage3 = *s,
        },
        _ => {}
    }
    let mut run = Run::open(&cli.run_dir, cfg)?;
    match cli.command {
        Command::Synth { .. } => {
            run.run_step(Step::Synth, log)?;
            Ok(json!({"manifest": run.dataset_manifest()}))
        }
        Command::TrainCodec { part, .. } => {
            run.run_step(Step::Codec(part), log)?;
            Ok(json!({"part": part.to_string(), "checkpoint": run.codec_dir().join(format!("{part}.mecq"))}))
        }
        Command::TrainLm { stage, init, data, out, .. } => train_lm(&mut run, stage, init.as_deref(), data.as_deref(), out.as_deref(), log),
        Command::Generate { audio, example, beta, gamma, seed, initial_pose, model, out } => {
            let mut s = run.config.sampler;
            s.beta = beta.unwrap_or(s.beta);
            s.gamma = gamma.unwrap_or(s.gamma);
            s.seed = seed.unwrap_or(s.seed);
            generate(&run, &audio, &example, s, initial_pose.as_deref(), model.as_deref(), &out, log)
        }
        Command::Evaluate { real, generated, metrics, autoencoder, out } => {
            evaluate(&run, &real, &generated, &metrics, autoencoder.as_deref(), &out)
        }
        Command::Pipeline { until } => {
            let until = until.as_deref().map(Step::parse).transpose()?;
            run.run_all(until, log)?;
            let report = if until.is_none() { Some(run.eval_report()?) } else { None };
            Ok(json!({"run_dir": run.root, "report": report}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let t0 = Instant::now();
    let mut log = |mut v: Value| {
        if let Value::Object(m) = &mut v {
            m.insert("elapsed_s".into(), json!((t0.elapsed().as_secs_f64() * 1000.0).round() / 1000.0));
        }
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{v}");
    };
    match execute(cli, &mut log) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log(json!({"event": "error", "message": e.to_string(), "exit_code": e.exit_code()}));
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
