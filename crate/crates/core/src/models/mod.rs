//! The CNN-DNN baseline and its inception variants.

mod checkpoint;
mod network;
pub mod variants;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{Forward, LayerShape, Model, BN_MOMENTUM};
pub use variants::{InceptionSpec, Stage};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("class count must be at least 2, got {0}")]
    BadClassCount(usize),
    #[error("unknown model variant `{0}`")]
    BadVariant(String),
    #[error("bad inception spec: {0}")]
    BadVariantSpec(String),
    #[error("input shape {got:?} does not match [N, {expected:?}]")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Baseline,
    Inception01,
    Inception02,
    Inception03,
    Inception04,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Baseline, ModelKind::Inception01, ModelKind::Inception02, ModelKind::Inception03, ModelKind::Inception04];

    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Inception01 => "inception-01",
            ModelKind::Inception02 => "inception-02",
            ModelKind::Inception03 => "inception-03",
            ModelKind::Inception04 => "inception-04",
        }
    }

    /// Checkpoint header byte.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Inception variant number, 1..=4.
    pub fn inception(variant: u8) -> Result<Self, ModelError> {
        match variant {
            1..=4 => Ok(Self::ALL[variant as usize]),
            v => Err(ModelError::BadVariant(v.to_string())),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.token() == s).ok_or_else(|| ModelError::BadVariant(s.to_string()))
    }
}

/// Architecture hyper-parameters; defaults follow the baseline table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub n_classes: usize,
    pub input_hw: (usize, usize),
    pub input_channels: usize,
    pub block_channels: [usize; 4],
    pub block_dropout: [f64; 4],
    pub dense_width: usize,
    pub dense_dropout: f64,
    /// Variant table the inception blocks are read from.
    pub variants: String,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, n_classes: usize) -> Self {
        Self {
            kind,
            n_classes,
            input_hw: (124, 154),
            input_channels: 1,
            block_channels: [64, 128, 256, 512],
            block_dropout: [0.10, 0.15, 0.20, 0.25],
            dense_width: 1024,
            dense_dropout: 0.30,
            variants: variants::DEFAULT_VARIANTS.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_classes < 2 {
            return Err(ModelError::BadClassCount(self.n_classes));
        }
        Ok(())
    }

    pub fn inception_spec(&self) -> Result<Option<InceptionSpec>, ModelError> {
        if self.kind == ModelKind::Baseline {
            return Ok(None);
        }
        let mut table = variants::parse_table(&self.variants)?;
        table.remove(self.kind.token()).map(Some).ok_or_else(|| ModelError::BadVariant(self.kind.token().to_string()))
    }
}

pub fn build_baseline(n_classes: usize, seed: u64) -> Result<Model, ModelError> {
    Model::new(ModelConfig::new(ModelKind::Baseline, n_classes), seed)
}

pub fn build_inception(variant: u8, n_classes: usize, seed: u64) -> Result<Model, ModelError> {
    Model::new(ModelConfig::new(ModelKind::inception(variant)?, n_classes), seed)
}
