//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::augmentor::{NoiseSpec, VaeConfig};
use crate::dataset::{parse_key_values, IAD_WINDOW};
use crate::encoder::{EncoderTrainConfig, ExtractorConfig};
use crate::error::{DacrError, Result};
use crate::reconstructor::ReconstructorConfig;

use super::synthetic::SyntheticSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    None,
    /// No distribution augmentation: extractors see the normal data only.
    Ab1,
    /// Extractors trained with a plain autoencoding objective.
    Ab2,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::Ab1 => "ab1",
            Ablation::Ab2 => "ab2",
        })
    }
}

impl FromStr for Ablation {
    type Err = DacrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "ab1" => Ok(Ablation::Ab1),
            "ab2" => Ok(Ablation::Ab2),
            _ => Err(DacrError::Config(format!("unknown ablation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Ead,
    Iad,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ead => "ead",
            Mode::Iad => "iad",
        })
    }
}

impl FromStr for Mode {
    type Err = DacrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ead" => Ok(Mode::Ead),
            "iad" => Ok(Mode::Iad),
            _ => Err(DacrError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// Where the corpus comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// IAD-style synthetic long series: clean train series, labeled test series.
    SyntheticSeries {
        spec: SyntheticSpec,
        n_train: usize,
        n_test: usize,
        anomalies_per_test: usize,
    },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub mode: Mode,
    /// EAD: number of normal classes, chosen per seed.
    pub normal_classes: usize,
    pub window_length: usize,
    pub window_stride: usize,
    pub vae: VaeConfig,
    pub noise: NoiseSpec,
    /// `|extra| / |train|`.
    pub extra_ratio: f64,
    pub extractor: ExtractorConfig,
    pub encoder: EncoderTrainConfig,
    pub reconstructor: ReconstructorConfig,
    pub seeds: Vec<u64>,
    pub ablation: Ablation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
            mode: Mode::Ead,
            normal_classes: 3,
            window_length: IAD_WINDOW,
            window_stride: IAD_WINDOW,
            vae: VaeConfig::default(),
            noise: NoiseSpec::default(),
            extra_ratio: 1.0,
            extractor: ExtractorConfig::default(),
            encoder: EncoderTrainConfig {
                iterations: 200,
                lr: 1e-3,
                batch: 8,
                seed: 0,
                min_len: None,
            },
            reconstructor: ReconstructorConfig::default(),
            seeds: vec![0, 1, 2],
            ablation: Ablation::None,
        }
    }
}

pub const IAD_ENCODER_ITERATIONS: usize = 1000;

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| DacrError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Smaller model widths that keep a three-seed synthetic run within a
    /// few minutes on one CPU core. Optimizer settings stay at their defaults;
    /// each reconstructor batch draws more targets per instance to make up
    /// for the narrow model.
    pub fn desk() -> Self {
        let mut c = ExperimentConfig::default();
        c.name = "desk".into();
        c.vae.hidden = 16;
        c.extractor = ExtractorConfig {
            embed_dim: 16,
            channels: 16,
            blocks: 4,
            kernel: 3,
        };
        c.reconstructor.d_model = 16;
        c.reconstructor.heads = 2;
        c.reconstructor.enc_layers = 1;
        c.reconstructor.dec_layers = 1;
        c.reconstructor.d_ff = 32;
        c.reconstructor.queries_per_instance = 32;
        c
    }

    fn synth_mut(&mut self) -> Result<&mut SyntheticSpec> {
        match &mut self.data {
            DataSource::Synthetic(s) | DataSource::SyntheticSeries { spec: s, .. } => Ok(s),
            DataSource::File(_) => Err(DacrError::Config("synth.* keys need data=synthetic".into())),
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "name" => self.name = v.to_string(),
            "data" => {
                let spec = match &self.data {
                    DataSource::Synthetic(s) | DataSource::SyntheticSeries { spec: s, .. } => s.clone(),
                    DataSource::File(_) => SyntheticSpec::default(),
                };
                self.data = match v {
                    "synthetic" => DataSource::Synthetic(spec),
                    "synthetic-series" => DataSource::SyntheticSeries {
                        spec,
                        n_train: 4,
                        n_test: 4,
                        anomalies_per_test: 3,
                    },
                    path => DataSource::File(PathBuf::from(path)),
                }
            }
            "synth.n_classes" => self.synth_mut()?.n_classes = parse(key, v)?,
            "synth.n_per_class" => self.synth_mut()?.n_per_class = parse(key, v)?,
            "synth.T" => self.synth_mut()?.t_len = parse(key, v)?,
            "synth.F" => self.synth_mut()?.features = parse(key, v)?,
            "synth.noise" => self.synth_mut()?.noise = parse(key, v)?,
            "synth.seed" => self.synth_mut()?.seed = parse(key, v)?,
            "synth.anomaly_kinds" => self.synth_mut()?.anomaly_kinds = list(key, v)?,
            "synth.anomalous_fraction" => self.synth_mut()?.anomalous_fraction = parse(key, v)?,
            "synth.n_train" | "synth.n_test" | "synth.anomalies_per_test" => match &mut self.data {
                DataSource::SyntheticSeries {
                    n_train,
                    n_test,
                    anomalies_per_test,
                    ..
                } => {
                    let slot = match key {
                        "synth.n_train" => n_train,
                        "synth.n_test" => n_test,
                        _ => anomalies_per_test,
                    };
                    *slot = parse(key, v)?;
                }
                _ => return Err(DacrError::Config(format!("{key} needs data=synthetic-series"))),
            },
            "mode" => self.mode = parse(key, v)?,
            "normal_classes" => self.normal_classes = parse(key, v)?,
            "window_length" => self.window_length = parse(key, v)?,
            "window_stride" => self.window_stride = parse(key, v)?,
            "vae.hidden" => self.vae.hidden = parse(key, v)?,
            "vae.latent_dim" => self.vae.latent_dim = parse(key, v)?,
            "vae.iterations" => self.vae.iterations = parse(key, v)?,
            "vae.lr" => self.vae.lr = parse(key, v)?,
            "vae.batch" => self.vae.batch = parse(key, v)?,
            "noise.alpha_mean" => self.noise.alpha_mean = parse(key, v)?,
            "noise.alpha_var" => self.noise.alpha_var = parse(key, v)?,
            "noise.beta_mean" => self.noise.beta_mean = parse(key, v)?,
            "noise.beta_var" => self.noise.beta_var = parse(key, v)?,
            "noise.var" => {
                let x = parse(key, v)?;
                self.noise.alpha_var = x;
                self.noise.beta_var = x;
            }
            "extra_ratio" => self.extra_ratio = parse(key, v)?,
            "encoder.embed_dim" => self.extractor.embed_dim = parse(key, v)?,
            "encoder.channels" => self.extractor.channels = parse(key, v)?,
            "encoder.blocks" => self.extractor.blocks = parse(key, v)?,
            "encoder.kernel" => self.extractor.kernel = parse(key, v)?,
            "encoder.iterations" => self.encoder.iterations = parse(key, v)?,
            "encoder.lr" => self.encoder.lr = parse(key, v)?,
            "encoder.batch" => self.encoder.batch = parse(key, v)?,
            "encoder.min_len" => {
                self.encoder.min_len = match v {
                    "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "recon.m" => self.reconstructor.m = parse(key, v)?,
            "recon.d_model" => self.reconstructor.d_model = parse(key, v)?,
            "recon.heads" => self.reconstructor.heads = parse(key, v)?,
            "recon.enc_layers" => self.reconstructor.enc_layers = parse(key, v)?,
            "recon.dec_layers" => self.reconstructor.dec_layers = parse(key, v)?,
            "recon.d_ff" => self.reconstructor.d_ff = parse(key, v)?,
            "recon.iterations" => self.reconstructor.iterations = parse(key, v)?,
            "recon.lr" => self.reconstructor.lr = parse(key, v)?,
            "recon.batch" => self.reconstructor.batch = parse(key, v)?,
            "recon.queries_per_instance" => self.reconstructor.queries_per_instance = parse(key, v)?,
            "seeds" => self.seeds = list(key, v)?,
            "ablation" => self.ablation = parse(key, v)?,
            _ => return Err(DacrError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical `(key, value)` listing; [`ExperimentConfig::set`] inverts it.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut p: Vec<(&str, String)> = vec![("name", self.name.clone())];
        match &self.data {
            DataSource::File(path) => p.push(("data", path.display().to_string())),
            DataSource::Synthetic(s) | DataSource::SyntheticSeries { spec: s, .. } => {
                let tag = if matches!(self.data, DataSource::Synthetic(_)) {
                    "synthetic"
                } else {
                    "synthetic-series"
                };
                p.push(("data", tag.into()));
                p.push(("synth.n_classes", s.n_classes.to_string()));
                p.push(("synth.n_per_class", s.n_per_class.to_string()));
                p.push(("synth.T", s.t_len.to_string()));
                p.push(("synth.F", s.features.to_string()));
                p.push(("synth.noise", s.noise.to_string()));
                p.push(("synth.seed", s.seed.to_string()));
                p.push(("synth.anomaly_kinds", join(&s.anomaly_kinds)));
                p.push(("synth.anomalous_fraction", s.anomalous_fraction.to_string()));
            }
        }
        if let DataSource::SyntheticSeries {
            n_train,
            n_test,
            anomalies_per_test,
            ..
        } = &self.data
        {
            p.push(("synth.n_train", n_train.to_string()));
            p.push(("synth.n_test", n_test.to_string()));
            p.push(("synth.anomalies_per_test", anomalies_per_test.to_string()));
        }
        p.extend([
            ("mode", self.mode.to_string()),
            ("normal_classes", self.normal_classes.to_string()),
            ("window_length", self.window_length.to_string()),
            ("window_stride", self.window_stride.to_string()),
            ("vae.hidden", self.vae.hidden.to_string()),
            ("vae.latent_dim", self.vae.latent_dim.to_string()),
            ("vae.iterations", self.vae.iterations.to_string()),
            ("vae.lr", self.vae.lr.to_string()),
            ("vae.batch", self.vae.batch.to_string()),
            ("noise.alpha_mean", self.noise.alpha_mean.to_string()),
            ("noise.alpha_var", self.noise.alpha_var.to_string()),
            ("noise.beta_mean", self.noise.beta_mean.to_string()),
            ("noise.beta_var", self.noise.beta_var.to_string()),
            ("extra_ratio", self.extra_ratio.to_string()),
            ("encoder.embed_dim", self.extractor.embed_dim.to_string()),
            ("encoder.channels", self.extractor.channels.to_string()),
            ("encoder.blocks", self.extractor.blocks.to_string()),
            ("encoder.kernel", self.extractor.kernel.to_string()),
            ("encoder.iterations", self.encoder.iterations.to_string()),
            ("encoder.lr", self.encoder.lr.to_string()),
            ("encoder.batch", self.encoder.batch.to_string()),
            (
                "encoder.min_len",
                self.encoder.min_len.map_or("auto".into(), |v| v.to_string()),
            ),
            ("recon.m", self.reconstructor.m.to_string()),
            ("recon.d_model", self.reconstructor.d_model.to_string()),
            ("recon.heads", self.reconstructor.heads.to_string()),
            ("recon.enc_layers", self.reconstructor.enc_layers.to_string()),
            ("recon.dec_layers", self.reconstructor.dec_layers.to_string()),
            ("recon.d_ff", self.reconstructor.d_ff.to_string()),
            ("recon.iterations", self.reconstructor.iterations.to_string()),
            ("recon.lr", self.reconstructor.lr.to_string()),
            ("recon.batch", self.reconstructor.batch.to_string()),
            (
                "recon.queries_per_instance",
                self.reconstructor.queries_per_instance.to_string(),
            ),
            ("seeds", join(&self.seeds)),
            ("ablation", self.ablation.to_string()),
        ]);
        p.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parse a config file's text. An optional `preset = desk` line selects
    /// the base the other keys override.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut c = match kv.get("preset").map(String::as_str) {
            None | Some("default") => ExperimentConfig::default(),
            Some("desk") => ExperimentConfig::desk(),
            Some(other) => return Err(DacrError::Config(format!("unknown preset {other:?}"))),
        };
        // data first so synth.* keys land on the right source
        if let Some(v) = kv.get("data") {
            c.set("data", v)?;
        }
        for (k, v) in &kv {
            if k != "preset" && k != "data" {
                c.set(k, v)?;
            }
        }
        // the larger IAD training sets get more extractor iterations
        if c.mode == Mode::Iad && !kv.contains_key("encoder.iterations") {
            c.encoder.iterations = IAD_ENCODER_ITERATIONS;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DacrError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vae.hidden", self.vae.hidden),
            ("vae.latent_dim", self.vae.latent_dim),
            ("vae.batch", self.vae.batch),
            ("encoder.embed_dim", self.extractor.embed_dim),
            ("encoder.channels", self.extractor.channels),
            ("encoder.blocks", self.extractor.blocks),
            ("encoder.kernel", self.extractor.kernel),
            ("encoder.batch", self.encoder.batch),
            ("recon.d_model", self.reconstructor.d_model),
            ("recon.heads", self.reconstructor.heads),
            ("recon.d_ff", self.reconstructor.d_ff),
            ("recon.batch", self.reconstructor.batch),
            ("recon.queries_per_instance", self.reconstructor.queries_per_instance),
            ("window_length", self.window_length),
            ("window_stride", self.window_stride),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(DacrError::Config(format!("{k} must be positive")));
        }
        if self.seeds.is_empty() {
            return Err(DacrError::Config("at least one seed is required".into()));
        }
        if !(self.extra_ratio > 0.0 && self.extra_ratio.is_finite()) {
            return Err(DacrError::Config("extra_ratio must be positive".into()));
        }
        if !self.reconstructor.d_model.is_multiple_of(self.reconstructor.heads) {
            return Err(DacrError::Config("recon.d_model must be divisible by recon.heads".into()));
        }
        self.noise.validate()
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hash_pairs(&self.pairs())
    }

    /// Hash of the subset of keys a stage depends on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let wanted = |k: &str| -> bool {
            let data = k == "data" || k.starts_with("synth.") || k == "mode" || k.starts_with("window_") || k == "normal_classes";
            let s1 = data || k.starts_with("vae.") || k.starts_with("noise.") || k == "extra_ratio" || k == "ablation";
            let s2 = s1 || k.starts_with("encoder.");
            let s3 = s2 || k.starts_with("recon.");
            match stage {
                Stage::Augment => s1,
                Stage::Encode => s2,
                Stage::Reconstruct => s3,
            }
        };
        let pairs: Vec<_> = self.pairs().into_iter().filter(|(k, _)| wanted(k)).collect();
        hash_pairs(&pairs)
    }
}

fn hash_pairs(pairs: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in pairs {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Checkpointed pipeline stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// VAE training and extra-data synthesis.
    Augment,
    /// Feature extractors.
    Encode,
    /// Reconstructor, calibration and scores.
    Reconstruct,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Augment => "stage1",
            Stage::Encode => "stage2",
            Stage::Reconstruct => "stage3",
        }
    }
}
