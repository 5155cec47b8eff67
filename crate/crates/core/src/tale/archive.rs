//! The Tale archive: a zip container with a fixed layout.
//!
//! ```text
//! metadata/tale.json           id, title, format_version, env_spec, packaging, code_refs
//! metadata/data-manifest.json  [{uri, size_bytes, checksum}]
//! provenance/events.ndjson     one event per line
//! workspace/**                 code artifacts
//! ```
//!
//! Entries are written in sorted order with zeroed timestamps so identical
//! Tales produce identical bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::{
    ArtifactPath, CodeArtifact, EnvironmentSpec, PackagingManifest, ProvenanceEvent, ProvenanceKind, Tale, TaleError,
    TaleId,
};
use crate::dms::ExternalDataRef;

pub const FORMAT_VERSION: u64 = 1;

const TALE_JSON: &str = "metadata/tale.json";
const DATA_MANIFEST: &str = "metadata/data-manifest.json";
const EVENTS: &str = "provenance/events.ndjson";
const WORKSPACE_PREFIX: &str = "workspace/";

/// Read access to the files a Tale's code artifacts point at.
pub trait Workspace {
    fn read(&self, path: &ArtifactPath) -> Result<Vec<u8>, TaleError>;
}

#[derive(Debug, Clone)]
pub struct DirWorkspace {
    root: PathBuf,
}

impl DirWorkspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirWorkspace { root: root.into() }
    }
}

impl Workspace for DirWorkspace {
    fn read(&self, path: &ArtifactPath) -> Result<Vec<u8>, TaleError> {
        let full = self.root.join(path.as_str());
        std::fs::read(&full).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TaleError::MissingFile(path.to_string()),
            _ => TaleError::Io { path: full.display().to_string(), cause: e.to_string() },
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemWorkspace {
    pub files: BTreeMap<ArtifactPath, Vec<u8>>,
}

impl Workspace for MemWorkspace {
    fn read(&self, path: &ArtifactPath) -> Result<Vec<u8>, TaleError> {
        self.files.get(path).cloned().ok_or_else(|| TaleError::MissingFile(path.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TaleDocument {
    format_version: u64,
    id: TaleId,
    title: String,
    env_spec: EnvironmentSpec,
    packaging: Option<PackagingManifest>,
    code_refs: Vec<CodeArtifact>,
}

pub fn export_tale(tale: &Tale, workspace_root: &Path) -> Result<Vec<u8>, TaleError> {
    export_tale_from(tale, &DirWorkspace::new(workspace_root))
}

/// Serializes `tale` and its workspace files into archive bytes.
///
/// `imported` events describe the local copy rather than the object itself
/// and are not written.
pub fn export_tale_from(tale: &Tale, workspace: &dyn Workspace) -> Result<Vec<u8>, TaleError> {
    tale.validate()?;
    let mut entries: BTreeMap<String, Vec<u8>> = BTreeMap::new();

    let doc = TaleDocument {
        format_version: FORMAT_VERSION,
        id: tale.id.clone(),
        title: tale.title.clone(),
        env_spec: tale.env_spec.clone(),
        packaging: tale.packaging.clone(),
        code_refs: tale.code_refs.clone(),
    };
    entries.insert(TALE_JSON.into(), to_json(&doc)?);
    entries.insert(DATA_MANIFEST.into(), to_json(&tale.data_refs)?);

    let mut events = Vec::new();
    for e in tale.provenance().iter().filter(|e| e.kind != ProvenanceKind::Imported) {
        serde_json::to_writer(&mut events, e).map_err(|e| TaleError::Malformed(e.to_string()))?;
        events.push(b'\n');
    }
    entries.insert(EVENTS.into(), events);

    for artifact in &tale.code_refs {
        let bytes = workspace.read(&artifact.path)?;
        if !artifact.checksum.matches(&bytes) {
            return Err(TaleError::ChecksumMismatch { entry: format!("{WORKSPACE_PREFIX}{}", artifact.path) });
        }
        entries.insert(format!("{WORKSPACE_PREFIX}{}", artifact.path), bytes);
    }

    write_zip(&entries)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, TaleError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| TaleError::Malformed(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn write_zip(entries: &BTreeMap<String, Vec<u8>>) -> Result<Vec<u8>, TaleError> {
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let io = |e: &dyn std::fmt::Display| TaleError::Malformed(format!("writing archive: {e}"));
    for (name, bytes) in entries {
        zip.start_file(name.as_str(), options).map_err(|e| io(&e))?;
        zip.write_all(bytes).map_err(|e| io(&e))?;
    }
    Ok(zip.finish().map_err(|e| io(&e))?.into_inner())
}

/// A Tale read back from an archive, with the workspace files it carried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportedTale {
    pub tale: Tale,
    pub workspace: MemWorkspace,
}

impl ImportedTale {
    /// Materializes the workspace files under `root`.
    pub fn write_workspace(&self, root: &Path) -> Result<(), TaleError> {
        for (path, bytes) in &self.workspace.files {
            let full = root.join(path.as_str());
            let io = |e: std::io::Error| TaleError::Io { path: full.display().to_string(), cause: e.to_string() };
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            std::fs::write(&full, bytes).map_err(io)?;
        }
        Ok(())
    }
}

pub fn import_tale(archive: &[u8]) -> Result<ImportedTale, TaleError> {
    let now_us = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0);
    import_tale_at(archive, now_us)
}

/// Reads an archive, verifies every checksum, and appends an `imported`
/// event stamped `at_us`.
pub fn import_tale_at(archive: &[u8], at_us: u64) -> Result<ImportedTale, TaleError> {
    let entries = read_zip(archive)?;

    let doc_bytes = entries.get(TALE_JSON).ok_or_else(|| TaleError::Malformed(format!("missing {TALE_JSON}")))?;
    let raw: serde_json::Value = serde_json::from_slice(doc_bytes)
        .map_err(|e| TaleError::Malformed(format!("{TALE_JSON}: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| TaleError::Malformed(format!("{TALE_JSON} has no format_version")))?;
    if version != FORMAT_VERSION {
        return Err(TaleError::UnsupportedVersion(version));
    }
    let doc: TaleDocument =
        serde_json::from_value(raw).map_err(|e| TaleError::Malformed(format!("{TALE_JSON}: {e}")))?;

    let data_bytes = entries.get(DATA_MANIFEST).ok_or_else(|| TaleError::Malformed(format!("missing {DATA_MANIFEST}")))?;
    let data_refs: Vec<ExternalDataRef> = serde_json::from_slice(data_bytes)
        .map_err(|e| TaleError::Malformed(format!("{DATA_MANIFEST}: {e}")))?;

    let event_bytes = entries.get(EVENTS).ok_or_else(|| TaleError::Malformed(format!("missing {EVENTS}")))?;
    let mut provenance = Vec::new();
    for (i, line) in event_bytes.split(|b| *b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let event: ProvenanceEvent = serde_json::from_slice(line)
            .map_err(|e| TaleError::Malformed(format!("{EVENTS} line {}: {e}", i + 1)))?;
        provenance.push(event);
    }

    let mut workspace = MemWorkspace::default();
    for artifact in &doc.code_refs {
        let name = format!("{WORKSPACE_PREFIX}{}", artifact.path);
        let bytes = entries.get(&name).ok_or_else(|| TaleError::MissingFile(artifact.path.to_string()))?;
        if !artifact.checksum.matches(bytes) {
            return Err(TaleError::ChecksumMismatch { entry: name });
        }
        workspace.files.insert(artifact.path.clone(), bytes.clone());
    }
    for name in entries.keys() {
        let known = matches!(name.as_str(), TALE_JSON | DATA_MANIFEST | EVENTS)
            || name
                .strip_prefix(WORKSPACE_PREFIX)
                .and_then(|p| ArtifactPath::new(p).ok())
                .is_some_and(|p| workspace.files.contains_key(&p));
        if !known {
            return Err(TaleError::Malformed(format!("unexpected archive entry {name}")));
        }
    }

    let mut tale =
        Tale::from_parts(doc.id, doc.title, doc.code_refs, data_refs, doc.env_spec, doc.packaging, provenance);
    tale.validate()?;
    tale.append_event(ProvenanceKind::Imported, BTreeMap::new(), at_us);
    Ok(ImportedTale { tale, workspace })
}

/// Everything about a Tale except its workspace files, as one JSON
/// document. Tools keep this next to a workspace between commands.
#[derive(Debug, Serialize, Deserialize)]
struct TaleRecord {
    format_version: u64,
    id: TaleId,
    title: String,
    env_spec: EnvironmentSpec,
    #[serde(default)]
    packaging: Option<PackagingManifest>,
    code_refs: Vec<CodeArtifact>,
    #[serde(default)]
    data_refs: Vec<ExternalDataRef>,
    provenance: Vec<ProvenanceEvent>,
}

pub fn tale_to_record(tale: &Tale) -> Result<Vec<u8>, TaleError> {
    to_json(&TaleRecord {
        format_version: FORMAT_VERSION,
        id: tale.id.clone(),
        title: tale.title.clone(),
        env_spec: tale.env_spec.clone(),
        packaging: tale.packaging.clone(),
        code_refs: tale.code_refs.clone(),
        data_refs: tale.data_refs.clone(),
        provenance: tale.provenance().to_vec(),
    })
}

/// Reads a record written by [`tale_to_record`]. The Tale is not validated,
/// so a broken record can still be inspected.
pub fn tale_from_record(bytes: &[u8]) -> Result<Tale, TaleError> {
    let r: TaleRecord = serde_json::from_slice(bytes).map_err(|e| TaleError::Malformed(format!("tale record: {e}")))?;
    if r.format_version != FORMAT_VERSION {
        return Err(TaleError::UnsupportedVersion(r.format_version));
    }
    Ok(Tale::from_parts(r.id, r.title, r.code_refs, r.data_refs, r.env_spec, r.packaging, r.provenance))
}

fn read_zip(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>, TaleError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes)).map_err(|e| TaleError::Malformed(e.to_string()))?;
    let mut out = BTreeMap::new();
    for i in 0..zip.len() {
        let mut file = zip.by_index(i).map_err(|e| TaleError::Malformed(format!("entry #{i}: {e}")))?;
        let name = file.name().to_string();
        if file.is_dir() {
            continue;
        }
        let mut buf = Vec::with_capacity(file.size() as usize);
        if let Err(e) = file.read_to_end(&mut buf) {
            return Err(TaleError::CorruptEntry { entry: name, cause: e.to_string() });
        }
        if out.insert(name.clone(), buf).is_some() {
            return Err(TaleError::Malformed(format!("duplicate archive entry {name}")));
        }
    }
    Ok(out)
}
