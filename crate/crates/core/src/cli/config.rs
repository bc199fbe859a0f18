//! Layered run configuration. Later layers win: defaults, preset, config
//! file, command-line flags, then `RESPNET_<SECTION>_<KEY>` environment
//! variables.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::dataset::{Split, Task};
use crate::models::ModelKind;
use crate::pipeline::TrainConfig;
use crate::spectrogram::FrontEndKind;

pub const ENV_PREFIX: &str = "RESPNET_";

/// Every recognized `section.key`.
pub const KNOWN_KEYS: [&str; 15] = [
    "run.task",
    "run.seed",
    "run.jobs",
    "model.kind",
    "frontend.kinds",
    "paths.manifest",
    "paths.cache",
    "paths.out",
    "prep.peak_normalize",
    "train.epochs",
    "train.batch_size",
    "train.lambda",
    "train.mixup_alpha",
    "train.lr",
    "eval.split",
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown setting `{0}`")]
    UnknownKey(String),
    #[error("setting `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("unknown preset `{0}` (expected paper-baseline or paper-final)")]
    UnknownPreset(String),
    #[error("config file: {0}")]
    Syntax(String),
    #[error("config file {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// CNN-DNN baseline on the Morse scalogram.
    PaperBaseline,
    /// inception-01 ensembled over the Morse scalogram and gammatonegram.
    PaperFinal,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper-baseline" => Ok(Preset::PaperBaseline),
            "paper-final" => Ok(Preset::PaperFinal),
            _ => Err(ConfigError::UnknownPreset(s.to_string())),
        }
    }
}

impl Preset {
    pub fn settings(self) -> Settings {
        let mut s = Settings::default();
        match self {
            Preset::PaperBaseline => {
                s.set("model.kind", "baseline");
                s.set("frontend.kinds", "scal-morse");
            }
            Preset::PaperFinal => {
                s.set("model.kind", "inception-01");
                s.set("frontend.kinds", "scal-morse,gamma");
            }
        }
        s
    }
}

/// Unvalidated `section.key -> value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Overlays `other`; its values win.
    pub fn merge(&mut self, other: &Settings) {
        self.0.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
    }

    /// INI-style text. Keys before any section header belong to `[run]`.
    pub fn from_ini_str(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut out = Settings::default();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = format!("{}.{}", section.unwrap_or("run"), k);
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    return Err(ConfigError::UnknownKey(key));
                }
                out.set(&key, v.trim());
            }
        }
        Ok(out)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_ini_str(&text)
    }

    /// `RESPNET_TRAIN_BATCH_SIZE=20` sets `train.batch_size`. Unrecognized
    /// variables under the prefix are skipped.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut out = Settings::default();
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            match KNOWN_KEYS.iter().find(|k| k.replace('.', "_").eq_ignore_ascii_case(rest)) {
                Some(key) => out.set(key, value),
                None => log::debug!("ignoring environment variable {name}"),
            }
        }
        out
    }

    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        for (key, value) in &self.0 {
            let (section, k) = key.split_once('.').expect("keys are section.key");
            ini.with_section(Some(section)).set(k, value.as_str());
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is UTF-8")
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub jobs: usize,
    pub model: ModelKind,
    pub frontends: Vec<FrontEndKind>,
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub peak_normalize: bool,
    pub train: TrainConfig,
    pub split: Split,
}

fn parse<T: FromStr>(s: &Settings, key: &str) -> Result<T, ConfigError> {
    let value = s.get(key).ok_or_else(|| ConfigError::BadValue { key: key.into(), value: String::new() })?;
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

impl RunConfig {
    pub fn defaults() -> Settings {
        let t = TrainConfig::default();
        let mut s = Settings::default();
        for (k, v) in [
            ("run.task", "task1".to_string()),
            ("run.seed", "0".into()),
            ("run.jobs", "1".into()),
            ("model.kind", "baseline".into()),
            ("frontend.kinds", "scal-morse".into()),
            ("paths.manifest", "manifest.txt".into()),
            ("paths.cache", "cache".into()),
            ("paths.out", "runs".into()),
            ("prep.peak_normalize", "true".into()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lambda", t.lambda.to_string()),
            ("train.mixup_alpha", t.mixup_alpha.to_string()),
            ("train.lr", t.lr.to_string()),
            ("eval.split", "test".into()),
        ] {
            s.set(k, v);
        }
        s
    }

    /// Resolves layers over the defaults, later layers winning.
    pub fn resolve(layers: &[&Settings]) -> Result<Self, ConfigError> {
        let mut s = Self::defaults();
        for layer in layers {
            s.merge(layer);
        }
        let frontends = s
            .get("frontend.kinds")
            .unwrap_or_default()
            .split(',')
            .map(|t| t.trim().parse::<FrontEndKind>().map_err(|_| ConfigError::BadValue { key: "frontend.kinds".into(), value: t.into() }))
            .collect::<Result<Vec<_>, _>>()?;
        let seed = parse(&s, "run.seed")?;
        let train = TrainConfig {
            epochs: parse(&s, "train.epochs")?,
            batch_size: parse(&s, "train.batch_size")?,
            lambda: parse(&s, "train.lambda")?,
            mixup_alpha: parse(&s, "train.mixup_alpha")?,
            seed,
            lr: parse(&s, "train.lr")?,
        };
        train.validate().map_err(|e| ConfigError::BadValue { key: "train".into(), value: e.to_string() })?;
        let jobs: usize = parse(&s, "run.jobs")?;
        if jobs == 0 {
            return Err(ConfigError::BadValue { key: "run.jobs".into(), value: "0".into() });
        }
        Ok(Self {
            task: parse(&s, "run.task")?,
            seed,
            jobs,
            model: parse(&s, "model.kind")?,
            frontends,
            manifest: parse(&s, "paths.manifest")?,
            cache_dir: parse(&s, "paths.cache")?,
            out_dir: parse(&s, "paths.out")?,
            peak_normalize: parse(&s, "prep.peak_normalize")?,
            train,
            split: parse(&s, "eval.split")?,
        })
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::default();
        let frontends: Vec<&str> = self.frontends.iter().map(|f| f.token()).collect();
        for (k, v) in [
            ("run.task", self.task.token().to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.jobs", self.jobs.to_string()),
            ("model.kind", self.model.token().into()),
            ("frontend.kinds", frontends.join(",")),
            ("paths.manifest", self.manifest.display().to_string()),
            ("paths.cache", self.cache_dir.display().to_string()),
            ("paths.out", self.out_dir.display().to_string()),
            ("prep.peak_normalize", self.peak_normalize.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.lambda", self.train.lambda.to_string()),
            ("train.mixup_alpha", self.train.mixup_alpha.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("eval.split", self.split.token().into()),
        ] {
            s.set(k, v);
        }
        s
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_string())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_settings().to_ini_string())
    }
}
