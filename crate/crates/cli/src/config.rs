//! Run configuration: a TOML file, overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use autoseg::adversarial::AdversarialConfig;
use autoseg::augment::AugmentParams;
use autoseg::data::{Organ, TrainingModality};
use autoseg::variant::Variant;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A configuration problem, located by its key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Primary volumes: CT, T2-SPIR or T1 in-phase.
    pub volumes: Vec<PathBuf>,
    /// T1 opposed-phase volumes, one per primary volume (T1 only).
    pub companions: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
    /// Converted VGG weights for pre-trained variants.
    pub pretrained_weights: Option<PathBuf>,
    /// Set to false to train on the slices alone.
    pub augment: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub checkpoint: Option<PathBuf>,
    pub volumes: Vec<PathBuf>,
    pub companions: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub predictions: Vec<PathBuf>,
    pub groundtruth: Vec<PathBuf>,
    /// Case ids; defaults to the groundtruth file stems.
    pub cases: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSection {
    pub reports: Vec<PathBuf>,
}

/// The file as written by the user.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub modality: Option<TrainingModality>,
    pub organ: Option<Organ>,
    pub out: Option<PathBuf>,
    /// Network width scale for variants without pre-trained weights.
    pub width_multiplier: Option<f64>,
    /// Groundtruth label value; by default any nonzero voxel is foreground.
    pub label: Option<f64>,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
    pub score: ScoreSection,
    /// Overrides of the augmentation defaults.
    pub augment: toml::Table,
    /// Overrides of the modality's training preset.
    pub adversarial: toml::Table,
}

fn deserialize_at<T: DeserializeOwned>(prefix: &str, value: toml::Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let key = match (prefix.is_empty(), path.as_str()) {
            (true, _) => path.clone(),
            (false, ".") | (false, "") => prefix.to_owned(),
            (false, p) => format!("{prefix}.{p}"),
        };
        ConfigError::new(key, e.into_inner().to_string())
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::new("", format!("invalid TOML: {e}")))?;
        deserialize_at("", toml::Value::Table(value))
    }

    /// Reads `path`; relative paths inside are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let fix_all = |v: &mut Vec<PathBuf>| v.iter_mut().for_each(fix);
        if let Some(p) = &mut self.out {
            fix(p);
        }
        fix_all(&mut self.train.volumes);
        fix_all(&mut self.train.companions);
        fix_all(&mut self.train.masks);
        if let Some(p) = &mut self.train.pretrained_weights {
            fix(p);
        }
        if let Some(p) = &mut self.predict.checkpoint {
            fix(p);
        }
        fix_all(&mut self.predict.volumes);
        fix_all(&mut self.predict.companions);
        fix_all(&mut self.evaluate.predictions);
        fix_all(&mut self.evaluate.groundtruth);
        fix_all(&mut self.score.reports);
    }
}

/// Values given on the command line; each wins over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub modality: Option<TrainingModality>,
    pub organ: Option<Organ>,
    pub out: Option<PathBuf>,
}

/// Fully resolved settings, echoed at startup.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Effective {
    pub seed: u64,
    pub variant: Option<String>,
    pub modality: Option<TrainingModality>,
    pub organ: Option<Organ>,
    pub out: PathBuf,
    pub width_multiplier: f64,
    pub label: Option<f64>,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
    pub score: ScoreSection,
    pub augment: AugmentParams,
    pub adversarial: AdversarialConfig,
}

fn overlay<T: Serialize + DeserializeOwned>(prefix: &str, base: &T, table: &toml::Table) -> Result<T, ConfigError> {
    if table.contains_key("seed") {
        return Err(ConfigError::new(
            format!("{prefix}.seed"),
            "set the top-level seed (or --seed) instead",
        ));
    }
    let mut merged = match toml::Value::try_from(base) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("config sections serialize to tables"),
    };
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    deserialize_at(prefix, toml::Value::Table(merged))
}

impl Effective {
    pub fn resolve(cfg: RunConfig, flags: Overrides) -> Result<Self, ConfigError> {
        let seed = flags.seed.or(cfg.seed).unwrap_or(0);
        let variant = flags.variant.or(cfg.variant);
        // reports may name variants outside the built-in table
        let resolved_variant = variant.as_deref().and_then(|n| Variant::lookup(n).ok());
        let modality = flags.modality.or(cfg.modality);
        let organ = flags.organ.or(cfg.organ);
        let out = flags.out.or(cfg.out).unwrap_or_else(|| PathBuf::from("out"));
        let width_multiplier = cfg.width_multiplier.unwrap_or(1.0);
        if !(width_multiplier.is_finite() && width_multiplier > 0.0) {
            return Err(ConfigError::new("width_multiplier", "must be a positive number"));
        }
        if let Some(v) = resolved_variant {
            if v.pretrained && width_multiplier != 1.0 {
                return Err(ConfigError::new(
                    "width_multiplier",
                    format!("variant {} uses pre-trained encoders and needs width 1", v.name),
                ));
            }
        }

        let mut augment = overlay("augment", &AugmentParams::default(), &cfg.augment)?;
        augment.seed = seed;
        augment
            .validate()
            .map_err(|e| ConfigError::new("augment", e.to_string()))?;

        if cfg.adversarial.contains_key("use_adversarial") {
            return Err(ConfigError::new(
                "adversarial.use_adversarial",
                "determined by the variant",
            ));
        }
        let preset = modality.map_or_else(AdversarialConfig::default, AdversarialConfig::for_modality);
        let mut adversarial = overlay("adversarial", &preset, &cfg.adversarial)?;
        adversarial.seed = seed;
        if let Some(v) = resolved_variant {
            adversarial.use_adversarial = v.adversarial;
        }
        adversarial
            .validate()
            .map_err(|e| ConfigError::new("adversarial", e.to_string()))?;

        Ok(Self {
            seed,
            variant,
            modality,
            organ,
            out,
            width_multiplier,
            label: cfg.label,
            train: cfg.train,
            predict: cfg.predict,
            evaluate: cfg.evaluate,
            score: cfg.score,
            augment,
            adversarial,
        })
    }

    pub fn variant(&self) -> Result<Variant, ConfigError> {
        let name = self
            .variant
            .as_deref()
            .ok_or_else(|| ConfigError::new("variant", "required (set it in the file or pass --variant)"))?;
        Variant::lookup(name).map_err(|e| ConfigError::new("variant", e.to_string()))
    }

    pub fn modality(&self) -> Result<TrainingModality, ConfigError> {
        self.modality
            .ok_or_else(|| ConfigError::new("modality", "required (set it in the file or pass --modality)"))
    }

    pub fn organ(&self) -> Result<Organ, ConfigError> {
        self.organ
            .ok_or_else(|| ConfigError::new("organ", "required (set it in the file or pass --organ)"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# cannot render configuration: {e}\n"))
    }
}
