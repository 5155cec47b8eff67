use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("dataset {0} is already registered")]
    DuplicateUri(String),
    #[error("data reference {uri}: {problem}")]
    Invalid { uri: String, problem: String },
    #[error("malformed catalog: {0}")]
    Malformed(String),
}

/// A reference to data held in an external repository.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExternalDataRef {
    pub uri: String,
    pub size_bytes: u64,
    pub checksum: Digest,
}

impl ExternalDataRef {
    pub fn new(uri: impl Into<String>, size_bytes: u64, checksum: Digest) -> Self {
        ExternalDataRef { uri: uri.into(), size_bytes, checksum }
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.uri.trim().is_empty() {
            return Err(CatalogError::Invalid { uri: self.uri.clone(), problem: "empty uri".into() });
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawRef {
    uri: Option<String>,
    size_bytes: Option<u64>,
    checksum: Option<String>,
}

/// Parses a JSON list of `{uri, size_bytes, checksum}` and reports missing or
/// malformed fields per entry.
pub fn parse_data_refs(json: &str) -> Result<Vec<ExternalDataRef>, CatalogError> {
    let raw: Vec<RawRef> = serde_json::from_str(json).map_err(|e| CatalogError::Malformed(e.to_string()))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let uri = r.uri.ok_or_else(|| CatalogError::Invalid { uri: format!("#{i}"), problem: "missing uri".into() })?;
            let invalid = |problem: String| CatalogError::Invalid { uri: uri.clone(), problem };
            let size_bytes = r.size_bytes.ok_or_else(|| invalid("missing size_bytes".into()))?;
            let checksum = r
                .checksum
                .ok_or_else(|| invalid("missing checksum".into()))?
                .parse::<Digest>()
                .map_err(|e| invalid(e.to_string()))?;
            let d = ExternalDataRef { uri: uri.clone(), size_bytes, checksum };
            d.validate()?;
            Ok(d)
        })
        .collect()
}

/// Registered datasets by URI.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetCatalog {
    refs: BTreeMap<String, ExternalDataRef>,
}

impl DatasetCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_refs(refs: impl IntoIterator<Item = ExternalDataRef>) -> Result<Self, CatalogError> {
        let mut c = DatasetCatalog::new();
        for r in refs {
            c.insert(r)?;
        }
        Ok(c)
    }

    pub fn register_dataset(&mut self, uri: &str, size_bytes: u64, checksum: Digest) -> Result<ExternalDataRef, CatalogError> {
        let r = ExternalDataRef::new(uri, size_bytes, checksum);
        self.insert(r.clone())?;
        Ok(r)
    }

    pub fn insert(&mut self, r: ExternalDataRef) -> Result<(), CatalogError> {
        r.validate()?;
        if self.refs.contains_key(&r.uri) {
            return Err(CatalogError::DuplicateUri(r.uri));
        }
        self.refs.insert(r.uri.clone(), r);
        Ok(())
    }

    pub fn get(&self, uri: &str) -> Option<&ExternalDataRef> {
        self.refs.get(uri)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExternalDataRef> {
        self.refs.values()
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
}
