//! Content digests recorded as `algo:hex`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256, Sha512};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum DigestAlgorithm {
    #[default]
    Sha256,
    Sha512,
}

impl DigestAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            DigestAlgorithm::Sha256 => "sha256",
            DigestAlgorithm::Sha512 => "sha512",
        }
    }

    fn hex_len(self) -> usize {
        match self {
            DigestAlgorithm::Sha256 => 64,
            DigestAlgorithm::Sha512 => 128,
        }
    }

    pub fn digest(self, bytes: &[u8]) -> Digest {
        let hex = match self {
            DigestAlgorithm::Sha256 => hex::encode(Sha256::digest(bytes)),
            DigestAlgorithm::Sha512 => hex::encode(Sha512::digest(bytes)),
        };
        Digest { algo: self, hex }
    }
}

impl FromStr for DigestAlgorithm {
    type Err = DigestParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sha256" => Ok(DigestAlgorithm::Sha256),
            "sha512" => Ok(DigestAlgorithm::Sha512),
            other => Err(DigestParseError::UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DigestParseError {
    #[error("digest must have the form algo:hex, got {0:?}")]
    Malformed(String),
    #[error("unknown digest algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("digest hex for {algo} must be {expected} lowercase hex characters")]
    BadHex { algo: &'static str, expected: usize },
}

/// A content digest tagged with the algorithm that produced it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest {
    algo: DigestAlgorithm,
    hex: String,
}

impl Digest {
    /// Digest of `bytes` with the default algorithm.
    pub fn of(bytes: &[u8]) -> Digest {
        DigestAlgorithm::default().digest(bytes)
    }

    pub fn algorithm(&self) -> DigestAlgorithm {
        self.algo
    }

    pub fn hex(&self) -> &str {
        &self.hex
    }

    /// True if `bytes` hash to this digest under the same algorithm.
    pub fn matches(&self, bytes: &[u8]) -> bool {
        self.algo.digest(bytes) == *self
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algo.name(), self.hex)
    }
}

impl FromStr for Digest {
    type Err = DigestParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (algo, hex) = s.split_once(':').ok_or_else(|| DigestParseError::Malformed(s.to_string()))?;
        let algo: DigestAlgorithm = algo.parse()?;
        let ok = hex.len() == algo.hex_len() && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(DigestParseError::BadHex { algo: algo.name(), expected: algo.hex_len() });
        }
        Ok(Digest { algo, hex: hex.to_string() })
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
