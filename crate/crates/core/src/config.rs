//! Run configuration: one TOML file embedding every phase's settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::DEFAULT_UNITS;
use crate::error::{Error, Result};
use crate::lm::ModelConfig;
use crate::metrics::FeatureAeConfig;
use crate::motion::{Skeleton, SynthConfig};
use crate::rvq::CodecConfig;
use crate::sampler::SamplerConfig;
use crate::train::{Stage0Config, StageConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Sizes reported for the full-scale system.
    Paper,
    /// Small sizes that train on a desktop CPU.
    Desk,
    /// Smaller still, for the automated test suite.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub synth: u64,
    pub codec: u64,
    pub units: u64,
    pub corpus: u64,
    pub stage0: u64,
    pub stage1: u64,
    pub stage2: u64,
    pub stage3: u64,
    pub sampler: u64,
    pub metrics: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { synth: 7, codec: 11, units: 3, corpus: 5, stage0: 1, stage1: 2, stage2: 4, stage3: 5, sampler: 0, metrics: 13 }
    }
}

/// Artifact subdirectories, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: String,
    pub checkpoints: String,
    pub reports: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data: "data".into(), checkpoints: "checkpoints".into(), reports: "reports".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub clips: usize,
    /// Trailing clips held out for evaluation.
    pub test_clips: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub skeleton: Skeleton,
    pub styles: usize,
    pub frame_rate: f32,
    pub sample_rate: u32,
    pub audio_units: usize,
    pub kmeans_iterations: usize,
}

impl DataSettings {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            count: self.clips,
            min_duration: self.min_duration,
            max_duration: self.max_duration,
            skeleton: self.skeleton,
            styles: self.styles,
            frame_rate: self.frame_rate,
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FgdFeature {
    Raw,
    Autoencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Beat-constancy kernel width, seconds.
    pub sigma_bc: f64,
    pub fgd_feature: FgdFeature,
    pub feature_ae: FeatureAeConfig,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { sigma_bc: 0.1, fgd_feature: FgdFeature::Raw, feature_ae: FeatureAeConfig::default() }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_bc > 0.0) {
            return Err(Error::Config(format!("sigma_bc {} must be positive", self.sigma_bc)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seeds: Seeds,
    pub paths: Paths,
    pub data: DataSettings,
    pub codec: CodecConfig,
    pub model: ModelConfig,
    /// Bytes of generated pretraining text.
    pub corpus_bytes: usize,
    pub stage0: Stage0Config,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let data = DataSettings {
            clips: 80,
            test_clips: 20,
            min_duration: 6.0,
            max_duration: 9.0,
            skeleton: Skeleton::default(),
            styles: 2,
            frame_rate: 30.0,
            sample_rate: 16_000,
            audio_units: DEFAULT_UNITS,
            kmeans_iterations: 30,
        };
        let desk = RunConfig {
            preset,
            seeds: Seeds::default(),
            paths: Paths::default(),
            data,
            codec: CodecConfig::desk(),
            model: ModelConfig::desk(),
            corpus_bytes: 1 << 20,
            stage0: Stage0Config::desk(),
            stage1: StageConfig::desk(1),
            stage2: StageConfig::desk(2),
            stage3: StageConfig::desk(3),
            sampler: SamplerConfig::default(),
            metrics: MetricConfig::default(),
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => RunConfig { codec: CodecConfig::paper(), ..desk },
            Preset::Test => RunConfig {
                model: ModelConfig::test(),
                corpus_bytes: 96 * 1024,
                stage0: Stage0Config::test(),
                ..desk
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.model.validate()?;
        self.stage0.validate()?;
        for (want, s) in [(1, &self.stage1), (2, &self.stage2), (3, &self.stage3)] {
            s.validate()?;
            if s.stage != want {
                return Err(Error::Config(format!("stage{want} section declares stage {}", s.stage)));
            }
        }
        self.sampler.validate()?;
        self.metrics.validate()?;
        let d = &self.data;
        if d.test_clips == 0 || d.test_clips >= d.clips {
            return Err(Error::Config(format!("test_clips {} must be in 1..{}", d.test_clips, d.clips)));
        }
        if d.audio_units < 2 {
            return Err(Error::Config("need at least two audio units".into()));
        }
        if self.corpus_bytes < self.stage0.min_corpus_bytes {
            return Err(Error::Config(format!(
                "corpus_bytes {} is below stage0.min_corpus_bytes {}",
                self.corpus_bytes, self.stage0.min_corpus_bytes
            )));
        }
        let c = &self.codec;
        let pinned = match self.preset {
            Preset::Paper => Some((512, 512)),
            Preset::Desk | Preset::Test => Some((128, 64)),
        };
        if let Some((k, f)) = pinned {
            if c.codebook_size != k || c.latent_dim != f || c.residual_layers != 6 || c.eta != 0.1 {
                return Err(Error::Config(format!(
                    "preset {:?} pins K={k}, f={f}, Q=6, eta=0.1",
                    self.preset
                )));
            }
        }
        if self.preset == Preset::Paper && (self.sampler.beta != 5.0 || self.sampler.gamma != 0.9) {
            return Err(Error::Config("preset paper pins beta=5 and gamma=0.9".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// The canonical printed form; comments and key order in the source file do not matter.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in [Preset::Paper, Preset::Desk, Preset::Test] {
            let cfg = RunConfig::preset(p);
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.canonical()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn paper_preset_pins_settings() {
        let cfg = RunConfig::preset(Preset::Paper);
        assert_eq!((cfg.codec.codebook_size, cfg.codec.latent_dim, cfg.codec.residual_layers), (512, 512, 6));
        assert_eq!(cfg.codec.eta, 0.1);
        assert_eq!((cfg.sampler.beta, cfg.sampler.gamma), (5.0, 0.9));
        let mut bad = cfg.clone();
        bad.codec.codebook_size = 256;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = cfg;
        bad.sampler.beta = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut text = RunConfig::preset(Preset::Test).canonical();
        text.push_str("\n[surprise]\nx = 1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
        let mut cfg = RunConfig::preset(Preset::Test);
        cfg.stage3.lambda = -1.0;
        assert!(matches!(RunConfig::from_toml(&cfg.canonical()), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_formatting() {
        let cfg = RunConfig::preset(Preset::Desk);
        let spaced = cfg.canonical().replace(" = ", "   =   ");
        assert_eq!(RunConfig::from_toml(&spaced).unwrap().hash(), cfg.hash());
    }
}
