//! End-to-end runs. Every step reads its inputs from the run directory,
//! writes its outputs there and records their hashes in `manifest.json`, so
//! an interrupted run resumes at the first incomplete step.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::audio::{extract_features, fit_units, read_wav, tokenize_audio, write_wav, UnitCodebook};
use crate::config::{FgdFeature, MetricConfig, RunConfig};
use crate::error::{Error, Result};
use crate::lm::{load_model, save_model, ParamGroup, SeqModel, VocabLayout};
use crate::metrics::{
    beat_constancy, extract_gesture_beats, fgd, l1_diversity, raw_window_features, text_retention,
    train_feature_autoencoder, BeatExtraction, FeatureAutoencoder, Retention, RAW_WINDOW,
};
use crate::motion::{
    motion_io_load, motion_io_save, read_manifest, synth_generate, write_atomic, write_manifest, BodyPart,
    ManifestRecord, MotionClip, PairedSample,
};
use crate::rvq::{tokenize_motion, train_codec, PartCodecs};
use crate::sampler::{generate_long, SamplerConfig};
use crate::train::{
    split_corpus, stage0_pretrain, stage1_embed_init, stage2_s2g, stage3_example_train, text_corpus, token_windows,
    ExamplePrompt, PairedTokens, StageReport, TokenWindow,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Structured log sink; each call is one record.
pub type Log<'a> = dyn FnMut(Value) + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Synth,
    Codec(BodyPart),
    Units,
    Tokenize,
    Stage(u8),
    Generate,
    Evaluate,
}

impl Step {
    pub const ALL: [Step; 12] = [
        Step::Synth,
        Step::Codec(BodyPart::Upper),
        Step::Codec(BodyPart::Hands),
        Step::Codec(BodyPart::Lower),
        Step::Units,
        Step::Tokenize,
        Step::Stage(0),
        Step::Stage(1),
        Step::Stage(2),
        Step::Stage(3),
        Step::Generate,
        Step::Evaluate,
    ];

    pub fn name(self) -> String {
        match self {
            Step::Synth => "synth".into(),
            Step::Codec(p) => format!("codec-{p}"),
            Step::Units => "units".into(),
            Step::Tokenize => "tokenize".into(),
            Step::Stage(s) => format!("stage{s}"),
            Step::Generate => "generate".into(),
            Step::Evaluate => "evaluate".into(),
        }
    }

    pub fn parse(name: &str) -> Result<Step> {
        Step::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown step {name:?}")))
    }

    fn position(self) -> usize {
        Step::ALL.iter().position(|&s| s == self).expect("listed")
    }

    /// Steps whose artifacts this step reads.
    pub fn inputs(self) -> Vec<Step> {
        let codecs = [BodyPart::Upper, BodyPart::Hands, BodyPart::Lower].map(Step::Codec);
        match self {
            Step::Synth | Step::Stage(0) => vec![],
            Step::Codec(_) | Step::Units => vec![Step::Synth],
            Step::Tokenize => [&[Step::Synth, Step::Units][..], &codecs].concat(),
            Step::Stage(1) => vec![Step::Tokenize, Step::Stage(0)],
            Step::Stage(s) => vec![Step::Tokenize, Step::Stage(s - 1)],
            Step::Generate => [&[Step::Synth, Step::Units, Step::Tokenize, Step::Stage(3)][..], &codecs].concat(),
            Step::Evaluate => vec![Step::Synth, Step::Stage(0), Step::Stage(3), Step::Generate],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEntry {
    pub config_hash: String,
    /// Relative path to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub steps: BTreeMap<String, StepEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One clip's tokens as stored by the tokenize step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipTokens {
    pub id: String,
    pub style_id: usize,
    pub tokens: PairedTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub retention: Option<Retention>,
    pub clips: usize,
    /// Generated clips with no detectable gesture beat; they score 0 BC.
    pub beatless_clips: usize,
    pub metric_config: MetricConfig,
    pub config_hash: Option<String>,
}

pub const ALL_METRICS: [&str; 5] = ["fgd1", "fgd2", "bc", "bc_mismatched", "div"];

fn bc_or_zero(clip: &MotionClip, audio_beats: &[f64], horizon: f64, sigma: f64) -> Result<(f64, bool)> {
    let mut beats = extract_gesture_beats(clip, &BeatExtraction::default())?;
    beats.retain(|&t| t <= horizon);
    if beats.is_empty() || audio_beats.is_empty() {
        return Ok((0.0, true));
    }
    Ok((beat_constancy(&beats, audio_beats, sigma)?, false))
}

/// Metrics over paired real and generated clips. `audio_beats[i]` belongs to
/// the audio that drove `generated[i]`. The mismatched baseline scores clip
/// `i + 1` against the beats of audio `i`.
pub fn evaluate_sets(
    real: &[MotionClip],
    generated: &[MotionClip],
    audio_beats: &[Vec<f64>],
    metrics: &[&str],
    cfg: &MetricConfig,
    autoencoder: Option<&FeatureAutoencoder>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let n = generated.len();
    if n < 2 || audio_beats.len() != n || real.is_empty() {
        return Err(Error::Data(format!("need at least two generated clips with beats, got {n}")));
    }
    let mut out = BTreeMap::new();
    let mut beatless = 0;
    for &m in metrics {
        let value = match m {
            "fgd1" => {
                let ae = autoencoder.ok_or_else(|| Error::Config("fgd1 needs a feature autoencoder".into()))?;
                fgd(&ae.features(real)?, &ae.features(generated)?)?
            }
            "fgd2" => fgd(&raw_window_features(real, RAW_WINDOW, 1)?, &raw_window_features(generated, RAW_WINDOW, 1)?)?,
            "bc" => {
                let mut sum = 0.0;
                for (g, b) in generated.iter().zip(audio_beats) {
                    let (v, none) = bc_or_zero(g, b, g.duration(), cfg.sigma_bc)?;
                    sum += v;
                    beatless += none as usize;
                }
                sum / n as f64
            }
            "bc_mismatched" => {
                let mut sum = 0.0;
                for i in 0..n {
                    let g = &generated[(i + 1) % n];
                    let horizon = g.duration().min(generated[i].duration());
                    sum += bc_or_zero(g, &audio_beats[i], horizon, cfg.sigma_bc)?.0;
                }
                sum / n as f64
            }
            "div" => {
                let frames = generated.iter().map(MotionClip::frame_count).min().unwrap_or(0);
                let cut: Vec<MotionClip> = generated.iter().map(|c| c.slice(0..frames)).collect();
                l1_diversity(&cut)?
            }
            other => return Err(Error::Config(format!("unknown metric {other:?}"))),
        };
        out.insert(m.to_string(), value);
    }
    Ok(EvalReport { metrics: out, retention: None, clips: n, beatless_clips: beatless, metric_config: cfg.clone(), config_hash: None })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

/// A run directory bound to one configuration.
pub struct Run {
    pub root: PathBuf,
    pub config: RunConfig,
    hash: String,
    manifest: ArtifactManifest,
}

impl Run {
    /// Opens or creates `root`. A config different from the one recorded
    /// there is allowed; steps recorded under the old config count as stale.
    pub fn open(root: &Path, config: RunConfig) -> Result<Run> {
        config.validate()?;
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let root = &fs::canonicalize(root).map_err(|e| Error::io(root, e))?;
        let manifest_path = root.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() { read_json(&manifest_path)? } else { ArtifactManifest::default() };
        write_atomic(&root.join(CONFIG_FILE), config.canonical().as_bytes())?;
        let hash = config.hash();
        Ok(Run { root: root.to_path_buf(), config, hash, manifest })
    }

    pub fn manifest(&self) -> &ArtifactManifest {
        &self.manifest
    }

    fn rel(&self, base: &str, name: &str) -> PathBuf {
        self.root.join(base).join(name)
    }

    pub fn data_path(&self, name: &str) -> PathBuf {
        self.rel(&self.config.paths.data, name)
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.rel(&self.config.paths.checkpoints, name)
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.rel(&self.config.paths.reports, name)
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.data_path("manifest.jsonl")
    }

    pub fn codec_dir(&self) -> PathBuf {
        self.checkpoint_path("codec")
    }

    pub fn units_path(&self) -> PathBuf {
        self.checkpoint_path("units.meca")
    }

    pub fn tokens_path(&self) -> PathBuf {
        self.data_path("tokens.json")
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.data_path("corpus.txt")
    }

    pub fn model_path(&self, stage: u8) -> PathBuf {
        self.checkpoint_path(&format!("stage{stage}.mecl"))
    }

    pub fn generated_manifest(&self) -> PathBuf {
        self.report_path("generated/manifest.jsonl")
    }

    pub fn eval_report_path(&self) -> PathBuf {
        self.report_path("report.json")
    }

    /// Whether `step` has a current record whose files all verify. A file
    /// whose hash no longer matches is a checksum error, not a stale step.
    pub fn is_complete(&self, step: Step) -> Result<bool> {
        let Some(entry) = self.manifest.steps.get(&step.name()) else { return Ok(false) };
        if entry.config_hash != self.hash {
            return Ok(false);
        }
        for (rel, want) in &entry.artifacts {
            let path = self.root.join(rel);
            if !path.exists() {
                return Ok(false);
            }
            if &sha256_file(&path)? != want {
                return Err(Error::Checksum(format!("{} (recorded by step {})", path.display(), step.name())));
            }
        }
        Ok(true)
    }

    pub fn require(&self, step: Step) -> Result<()> {
        if self.is_complete(step)? {
            return Ok(());
        }
        let path = match step {
            Step::Synth => self.dataset_manifest(),
            Step::Codec(p) => self.codec_dir().join(format!("{p}.mecq")),
            Step::Units => self.units_path(),
            Step::Tokenize => self.tokens_path(),
            Step::Stage(s) => self.model_path(s),
            Step::Generate => self.generated_manifest(),
            Step::Evaluate => self.eval_report_path(),
        };
        Err(Error::MissingPrerequisite {
            what: format!("output of step {}", step.name()),
            path,
            step: format!("meco pipeline --until {}", step.name()),
        })
    }

    fn record(&mut self, step: Step, files: &[PathBuf]) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for f in files {
            let rel = f.strip_prefix(&self.root).unwrap_or(f).to_string_lossy().replace('\\', "/");
            artifacts.insert(rel, sha256_file(f)?);
        }
        let pos = step.position();
        for later in &Step::ALL[pos + 1..] {
            if later.inputs().iter().any(|s| s.position() >= pos) {
                self.manifest.steps.remove(&later.name());
            }
        }
        self.manifest.steps.insert(step.name(), StepEntry { config_hash: self.hash.clone(), artifacts });
        write_json(&self.root.join(MANIFEST_FILE), &self.manifest)
    }

    /// Runs every step up to and including `until`, skipping complete ones.
    pub fn run_all(&mut self, until: Option<Step>, log: &mut Log) -> Result<()> {
        let last = until.map_or(Step::ALL.len() - 1, Step::position);
        for step in &Step::ALL[..=last] {
            if self.is_complete(*step)? {
                log(json!({"event": "skip", "step": step.name()}));
                continue;
            }
            self.run_step(*step, log)?;
        }
        Ok(())
    }

    /// Runs one step after checking its prerequisites.
    pub fn run_step(&mut self, step: Step, log: &mut Log) -> Result<()> {
        for s in step.inputs() {
            self.require(s)?;
        }
        log(json!({"event": "start", "step": step.name()}));
        let files = match step {
            Step::Synth => self.synth()?,
            Step::Codec(p) => self.codec(p, log)?,
            Step::Units => self.units()?,
            Step::Tokenize => self.tokenize()?,
            Step::Stage(s) => self.stage(s, log)?,
            Step::Generate => self.generate(log)?,
            Step::Evaluate => self.evaluate(log)?,
        };
        self.record(step, &files)?;
        log(json!({"event": "done", "step": step.name(), "artifacts": files.len()}));
        Ok(())
    }

    /// Number of leading clips used for training; the rest are held out.
    pub fn train_count(&self) -> usize {
        self.config.data.clips - self.config.data.test_clips
    }

    pub fn dataset(&self) -> Result<Vec<PairedSample>> {
        let records = read_manifest(&self.dataset_manifest())?;
        records
            .into_iter()
            .map(|r| {
                Ok(PairedSample {
                    motion: motion_io_load(&r.motion_path)?,
                    waveform: read_wav(&r.audio_path)?,
                    id: r.id,
                    style_id: r.style_id,
                    beat_times: r.beat_times,
                })
            })
            .collect()
    }

    pub fn codecs(&self) -> Result<PartCodecs> {
        PartCodecs::load_dir(&self.codec_dir())
    }

    pub fn unit_codebook(&self) -> Result<UnitCodebook> {
        UnitCodebook::load(&self.units_path())
    }

    pub fn tokens(&self) -> Result<Vec<ClipTokens>> {
        read_json(&self.tokens_path())
    }

    pub fn model(&self, stage: u8) -> Result<SeqModel> {
        load_model(&self.model_path(stage))
    }

    pub fn corpus(&self) -> Result<String> {
        fs::read_to_string(self.corpus_path()).map_err(|e| Error::io(self.corpus_path(), e))
    }

    /// Held-out slice of the stage-0 corpus.
    pub fn heldout_text(&self) -> Result<Vec<u8>> {
        let corpus = self.corpus()?;
        Ok(split_corpus(corpus.as_bytes(), self.config.stage0.heldout_fraction).1.to_vec())
    }

    /// Training windows from the leading clips, or held-out windows from the rest.
    pub fn windows(&self, heldout: bool) -> Result<Vec<TokenWindow>> {
        let tokens = self.tokens()?;
        let n = self.train_count();
        let clips = if heldout { &tokens[n..] } else { &tokens[..n] };
        Ok(clips.iter().flat_map(|c| token_windows(&c.tokens)).collect())
    }

    pub fn eval_report(&self) -> Result<EvalReport> {
        read_json(&self.eval_report_path())
    }

    fn synth(&mut self) -> Result<Vec<PathBuf>> {
        let samples = synth_generate(self.config.seeds.synth, &self.config.data.synth())?;
        let mut files = Vec::new();
        let mut records = Vec::new();
        for s in &samples {
            let motion = PathBuf::from("motion").join(format!("{}.mecm", s.id));
            let audio = PathBuf::from("audio").join(format!("{}.wav", s.id));
            motion_io_save(&self.data_path("").join(&motion), &s.motion)?;
            write_wav(&self.data_path("").join(&audio), &s.waveform)?;
            files.push(self.data_path("").join(&motion));
            files.push(self.data_path("").join(&audio));
            records.push(ManifestRecord {
                id: s.id.clone(),
                motion_path: motion,
                audio_path: audio,
                beat_times: s.beat_times.clone(),
                style_id: s.style_id,
            });
        }
        write_manifest(&self.dataset_manifest(), &records)?;
        files.push(self.dataset_manifest());
        Ok(files)
    }

    fn train_clips(&self) -> Result<Vec<PairedSample>> {
        let mut data = self.dataset()?;
        data.truncate(self.train_count());
        Ok(data)
    }

    fn codec(&mut self, part: BodyPart, log: &mut Log) -> Result<Vec<PathBuf>> {
        let clips: Vec<MotionClip> = self.train_clips()?.into_iter().map(|s| s.motion).collect();
        let seed = self.config.seeds.codec.wrapping_add(part.index() as u64);
        let (codec, report) = train_codec(part, &clips, &self.config.codec, seed)?;
        for r in report.steps.iter().filter(|r| r.step % 100 == 0 || r.step + 1 == report.steps.len()) {
            log(json!({"event": "codec_step", "part": part.to_string(), "record": r}));
        }
        let path = self.codec_dir().join(format!("{part}.mecq"));
        codec.save(&path)?;
        let log_path = self.report_path(&format!("codec-{part}.jsonl"));
        write_records(&log_path, &report.steps)?;
        Ok(vec![path, log_path])
    }

    fn units(&mut self) -> Result<Vec<PathBuf>> {
        let feats = self.train_clips()?.iter().map(|s| extract_features(&s.waveform)).collect::<Result<Vec<_>>>()?;
        let d = &self.config.data;
        let (units, _) = fit_units(&feats, d.audio_units, self.config.seeds.units, d.kmeans_iterations)?;
        units.save(&self.units_path())?;
        Ok(vec![self.units_path()])
    }

    fn tokenize(&mut self) -> Result<Vec<PathBuf>> {
        let codecs = self.codecs()?;
        let units = self.unit_codebook()?;
        let out = self
            .dataset()?
            .iter()
            .map(|s| {
                Ok(ClipTokens {
                    id: s.id.clone(),
                    style_id: s.style_id,
                    tokens: PairedTokens { audio: tokenize_audio(&s.waveform, &units)?, motion: tokenize_motion(&s.motion, &codecs)? },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(&self.tokens_path(), &out)?;
        Ok(vec![self.tokens_path()])
    }

    fn stage(&mut self, stage: u8, log: &mut Log) -> Result<Vec<PathBuf>> {
        let cfg = &self.config;
        let (model, report): (SeqModel, StageReport) = match stage {
            0 => {
                let corpus = text_corpus(cfg.seeds.corpus, cfg.corpus_bytes);
                write_atomic(&self.corpus_path(), corpus.as_bytes())?;
                stage0_pretrain(&corpus, cfg.model, &cfg.stage0, cfg.seeds.stage0)?
            }
            1 => {
                let layout = VocabLayout::extended(cfg.data.audio_units, cfg.codec.codebook_size);
                let mut model = self.model(0)?.extend_vocab(layout, cfg.seeds.stage1)?;
                if !cfg.stage1.allow_unfrozen_backbone {
                    model.freeze(&[ParamGroup::Backbone]);
                }
                let windows = self.windows(false)?;
                let audio: Vec<Vec<u32>> = windows.iter().map(|w| w.audio.clone()).collect();
                let motion: Vec<_> = windows.into_iter().map(|w| w.motion).collect();
                let (mut m, r) = stage1_embed_init(model, &audio, &motion, &cfg.stage1, cfg.seeds.stage1)?;
                m.unfreeze(&[ParamGroup::Backbone]);
                (m, r)
            }
            2 => stage2_s2g(self.model(1)?, &self.windows(false)?, &cfg.stage2, cfg.seeds.stage2)?,
            3 => stage3_example_train(self.model(2)?, &self.windows(false)?, &cfg.stage3, cfg.seeds.stage3)?,
            s => return Err(Error::Config(format!("no training stage {s}"))),
        };
        for r in &report.steps {
            log(json!({"event": "train_step", "stage": stage, "step": r.step, "loss": r.loss, "penalty": r.penalty, "lr": r.lr}));
        }
        if !report.epoch_perplexity.is_empty() {
            log(json!({"event": "stage0_perplexity", "per_epoch": report.epoch_perplexity, "best_epoch": report.best_epoch}));
        }
        let path = self.model_path(stage);
        save_model(&model, &path)?;
        let log_path = self.report_path(&format!("stage{stage}.jsonl"));
        write_records(&log_path, &report.steps)?;
        let mut files = vec![path, log_path];
        if stage == 0 {
            files.push(self.corpus_path());
        }
        Ok(files)
    }

    /// Example for held-out clip `i`: a training clip of the same style, rotating through them.
    pub fn example_for(&self, tokens: &[ClipTokens], i: usize) -> ExamplePrompt {
        let n = self.train_count();
        let target = &tokens[n + i];
        let same: Vec<&ClipTokens> = tokens[..n].iter().filter(|c| c.style_id == target.style_id).collect();
        let pool = if same.is_empty() { tokens[..n].iter().collect() } else { same };
        ExamplePrompt::from_codes(&pool[i % pool.len()].tokens.motion, self.config.sampler.dedup_examples)
    }

    fn generate(&mut self, log: &mut Log) -> Result<Vec<PathBuf>> {
        let model = self.model(3)?;
        let codecs = self.codecs()?;
        let units = self.unit_codebook()?;
        let tokens = self.tokens()?;
        let data = self.dataset()?;
        let n = self.train_count();
        let d = &self.config.data;
        let dir = self.report_path("generated");
        let mut files = Vec::new();
        let mut records = Vec::new();
        for (i, s) in data[n..].iter().enumerate() {
            let example = self.example_for(&tokens, i);
            let cfg = SamplerConfig { seed: self.config.sampler.seed.wrapping_add(i as u64), ..self.config.sampler };
            let pose: Vec<f32> = s.motion.data()[..s.motion.dim()].to_vec();
            let g = generate_long(&model, &codecs, &units, &s.waveform, &example, Some(&pose), d.skeleton, d.frame_rate, &cfg)?;
            let motion = dir.join(format!("{}.mecm", s.id));
            motion_io_save(&motion, &g.clip)?;
            let windows = dir.join(format!("{}.windows.jsonl", s.id));
            write_records(&windows, &g.windows)?;
            log(json!({"event": "generated", "id": s.id, "windows": g.windows.len(), "frames": g.clip.frame_count()}));
            records.push(ManifestRecord {
                id: s.id.clone(),
                motion_path: PathBuf::from(format!("{}.mecm", s.id)),
                audio_path: self.data_path("audio").join(format!("{}.wav", s.id)),
                beat_times: s.beat_times.clone(),
                style_id: s.style_id,
            });
            files.push(motion);
            files.push(windows);
        }
        write_manifest(&self.generated_manifest(), &records)?;
        files.push(self.generated_manifest());
        Ok(files)
    }

    fn evaluate(&mut self, log: &mut Log) -> Result<Vec<PathBuf>> {
        let data = self.dataset()?;
        let n = self.train_count();
        let gen = read_manifest(&self.generated_manifest())?;
        let generated = gen.iter().map(|r| motion_io_load(&r.motion_path)).collect::<Result<Vec<_>>>()?;
        let beats: Vec<Vec<f64>> = gen.iter().map(|r| r.beat_times.clone()).collect();
        let real: Vec<MotionClip> = data[n..].iter().map(|s| s.motion.clone()).collect();
        let mc = &self.config.metrics;
        let ae = match mc.fgd_feature {
            FgdFeature::Autoencoder => {
                let train: Vec<MotionClip> = data[..n].iter().map(|s| s.motion.clone()).collect();
                let (ae, _) = train_feature_autoencoder(&train, &mc.feature_ae, self.config.seeds.metrics)?;
                ae.save(&self.checkpoint_path("feature_ae.mecf"))?;
                Some(ae)
            }
            FgdFeature::Raw => None,
        };
        let names: Vec<&str> = ALL_METRICS.iter().copied().filter(|&m| m != "fgd1" || ae.is_some()).collect();
        let mut report = evaluate_sets(&real, &generated, &beats, &names, mc, ae.as_ref())?;
        let retention = text_retention(&self.model(0)?, &self.model(3)?, &self.heldout_text()?)?;
        report.metrics.insert("retention".into(), retention.degradation);
        report.retention = Some(retention);
        report.config_hash = Some(self.hash.clone());
        log(json!({"event": "report", "metrics": report.metrics}));
        write_json(&self.eval_report_path(), &report)?;
        let mut files = vec![self.eval_report_path()];
        if ae.is_some() {
            files.push(self.checkpoint_path("feature_ae.mecf"));
        }
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_names_round_trip_and_inputs_precede() {
        for s in Step::ALL {
            assert_eq!(Step::parse(&s.name()).unwrap(), s);
            assert!(s.inputs().iter().all(|i| i.position() < s.position()), "{}", s.name());
        }
        assert!(Step::parse("stage4").is_err());
    }
}
