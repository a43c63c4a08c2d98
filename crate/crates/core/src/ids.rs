//! Item identifiers and their generation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

/// 128-bit globally unique item identifier, rendered as lowercase hyphenated hex.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(Uuid);

impl ItemId {
    pub fn from_uuid(uuid: Uuid) -> Self {
        Self(uuid)
    }

    pub fn as_uuid(&self) -> &Uuid {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.hyphenated())
    }
}

impl FromStr for ItemId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(Self)
    }
}

/// Source of fresh item identifiers.
///
/// The seeded variant derives the n-th id from `sha256(seed || n)`, where `n`
/// is supplied by the caller (the number of items already in the store), so a
/// restarted process keeps producing the same sequence.
#[derive(Clone, Debug, Default)]
pub enum IdGenerator {
    #[default]
    Random,
    Seeded(u64),
}

impl IdGenerator {
    pub fn generate(&self, ordinal: u64) -> ItemId {
        match self {
            IdGenerator::Random => ItemId(Uuid::new_v4()),
            IdGenerator::Seeded(seed) => {
                let mut hasher = Sha256::new();
                hasher.update(seed.to_be_bytes());
                hasher.update(ordinal.to_be_bytes());
                let digest = hasher.finalize();
                let mut bytes = [0u8; 16];
                bytes.copy_from_slice(&digest[..16]);
                ItemId(uuid::Builder::from_random_bytes(bytes).into_uuid())
            }
        }
    }
}
