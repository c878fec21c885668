//! Language conditions and their fixed embedding registry.
//!
//! Each phrase "place the mug on the <id> rack" maps to a stored 64-dim unit
//! vector. The vectors come from a seeded generator and travel with datasets
//! and checkpoints, so nothing downstream depends on how they were made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

pub const EMBED_DIM: usize = 64;
pub const REGISTRY_SEED: u64 = 0x5eed_c0de_2024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConditionError {
    #[error("unknown condition '{0}'")]
    Unknown(String),
    #[error("condition '{0}' missing from registry")]
    Missing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionId {
    Longer,
    Shorter,
    Higher,
    Lower,
    Horizontal,
    Tilted,
    Rectangular,
    Cylindrical,
    Curved,
    Straight,
    Arbitrary,
    #[serde(rename = "none")]
    Unconditioned,
}

impl ConditionId {
    pub const ALL: [ConditionId; 12] = [
        ConditionId::Longer,
        ConditionId::Shorter,
        ConditionId::Higher,
        ConditionId::Lower,
        ConditionId::Horizontal,
        ConditionId::Tilted,
        ConditionId::Rectangular,
        ConditionId::Cylindrical,
        ConditionId::Curved,
        ConditionId::Straight,
        ConditionId::Arbitrary,
        ConditionId::Unconditioned,
    ];

    /// The ten ids that name a specific hook.
    pub fn hooks() -> &'static [ConditionId] {
        &Self::ALL[..10]
    }

    pub fn is_hook(self) -> bool {
        !matches!(self, ConditionId::Arbitrary | ConditionId::Unconditioned)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionId::Longer => "longer",
            ConditionId::Shorter => "shorter",
            ConditionId::Higher => "higher",
            ConditionId::Lower => "lower",
            ConditionId::Horizontal => "horizontal",
            ConditionId::Tilted => "tilted",
            ConditionId::Rectangular => "rectangular",
            ConditionId::Cylindrical => "cylindrical",
            ConditionId::Curved => "curved",
            ConditionId::Straight => "straight",
            ConditionId::Arbitrary => "arbitrary",
            ConditionId::Unconditioned => "none",
        }
    }

    pub fn phrase(self) -> String {
        match self {
            ConditionId::Unconditioned => "place the mug on the rack".to_string(),
            id => format!("place the mug on the {} rack", id.as_str()),
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionId {
    type Err = ConditionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        ConditionId::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| ConditionError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    pub id: ConditionId,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRegistry {
    pub seed: u64,
    pub entries: Vec<ConditionEmbedding>,
}

impl ConditionRegistry {
    pub fn generate(seed: u64) -> Self {
        let entries = ConditionId::ALL
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let mut v: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                ConditionEmbedding { id, vec: v }
            })
            .collect();
        ConditionRegistry { seed, entries }
    }

    pub fn get(&self, id: ConditionId) -> Result<&ConditionEmbedding, ConditionError> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| ConditionError::Missing(id.to_string()))
    }

    pub fn lookup(&self, name: &str) -> Result<&ConditionEmbedding, ConditionError> {
        self.get(name.parse()?)
    }
}

pub fn default_registry() -> &'static ConditionRegistry {
    static REG: OnceLock<ConditionRegistry> = OnceLock::new();
    REG.get_or_init(|| ConditionRegistry::generate(REGISTRY_SEED))
}

/// Embedding of a known condition from the default registry.
pub fn embed_condition(id: ConditionId) -> ConditionEmbedding {
    default_registry().entries[id.index()].clone()
}

/// Embedding by phrase keyword; unregistered words (e.g. "red") are rejected.
pub fn embed_condition_str(name: &str) -> Result<ConditionEmbedding, ConditionError> {
    Ok(embed_condition(name.parse()?))
}
