//! Parser for the inception variant table.

use std::collections::BTreeMap;
use std::str::FromStr;

use super::ModelError;

pub const DEFAULT_VARIANTS: &str = include_str!("variants.conf");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv { kh: usize, kw: usize },
    Pool3,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InceptionSpec {
    pub branches: Vec<Vec<Stage>>,
    pub residual: bool,
}

impl InceptionSpec {
    /// Output channels of each branch for a block budget, remainder handed
    /// out round-robin from the first branch.
    pub fn split_budget(&self, budget: usize) -> Vec<usize> {
        let n = self.branches.len();
        (0..n).map(|i| budget / n + usize::from(i < budget % n)).collect()
    }

    pub fn has_kernel(&self, kh: usize, kw: usize) -> bool {
        self.branches.iter().flatten().any(|s| *s == Stage::Conv { kh, kw })
    }
}

impl FromStr for Stage {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "pool3x3" {
            return Ok(Stage::Pool3);
        }
        let dims = s.strip_prefix("conv").ok_or_else(|| ModelError::BadVariantSpec(format!("unknown stage `{s}`")))?;
        let (h, w) = dims.split_once('x').ok_or_else(|| ModelError::BadVariantSpec(format!("bad kernel `{s}`")))?;
        let parse = |v: &str| v.parse::<usize>().ok().filter(|v| *v > 0);
        match (parse(h), parse(w)) {
            (Some(kh), Some(kw)) => Ok(Stage::Conv { kh, kw }),
            _ => Err(ModelError::BadVariantSpec(format!("bad kernel `{s}`"))),
        }
    }
}

impl FromStr for InceptionSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (body, flags) = match s.split_once(';') {
            Some((b, f)) => (b, f.trim()),
            None => (s, ""),
        };
        let residual = match flags {
            "" => false,
            "residual" => true,
            other => return Err(ModelError::BadVariantSpec(format!("unknown flag `{other}`"))),
        };
        let branches = body.split('|').map(|b| b.split('>').map(str::parse).collect::<Result<Vec<Stage>, _>>()).collect::<Result<Vec<_>, _>>()?;
        for b in &branches {
            if !matches!(b.last(), Some(Stage::Conv { .. })) {
                return Err(ModelError::BadVariantSpec(format!("branch must end in a conv: {s}")));
            }
        }
        Ok(InceptionSpec { branches, residual })
    }
}

/// `name = spec` lines; `#` starts a comment.
pub fn parse_table(text: &str) -> Result<BTreeMap<String, InceptionSpec>, ModelError> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, spec) = line.split_once('=').ok_or_else(|| ModelError::BadVariantSpec(format!("expected `name = spec`: {line}")))?;
        out.insert(name.trim().to_string(), spec.parse()?);
    }
    Ok(out)
}
