//! Tales: executable research objects bundling code, references to external
//! data, an environment description and a provenance log.

mod archive;
mod packaging;
mod provenance;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::dms::ExternalDataRef;

pub use archive::{
    export_tale, export_tale_from, import_tale, import_tale_at, tale_from_record, tale_to_record, DirWorkspace, ImportedTale, MemWorkspace,
    Workspace, FORMAT_VERSION,
};
pub use packaging::{
    build_manifest, classify_workload, select_strategy, PackagingManifest, PackagingStrategy, WorkloadClass,
};
pub use provenance::{ProvenanceEvent, ProvenanceKind};
pub use store::TaleStore;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TaleError {
    #[error("invalid tale: {0}")]
    Validation(String),
    #[error("provenance sequence out of order: expected {expected}, got {got}")]
    ProvenanceOrder { expected: u64, got: u64 },
    #[error("tale has no code artifacts")]
    NoCodeArtifacts,
    #[error("missing source: {0}")]
    MissingSource(String),
    #[error("per-resource packaging needs architecture-specific targets, none found")]
    NoTargets,
    #[error("workspace file missing: {0}")]
    MissingFile(String),
    #[error("checksum mismatch for {entry}")]
    ChecksumMismatch { entry: String },
    #[error("checksum error in archive entry {entry}: {cause}")]
    CorruptEntry { entry: String, cause: String },
    #[error("unsupported tale format version {0}")]
    UnsupportedVersion(u64),
    #[error("malformed archive: {0}")]
    Malformed(String),
    #[error("duplicate tale id {0}")]
    DuplicateId(String),
    #[error("unknown tale id {0}")]
    UnknownTale(String),
    #[error("i/o error on {path}: {cause}")]
    Io { path: String, cause: String },
}

/// Opaque identifier of a Tale. Restricted to URL-path-safe characters since
/// it appears in proxy routes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaleId(String);

impl TaleId {
    pub fn new(id: impl Into<String>) -> Result<TaleId, TaleError> {
        let id = id.into();
        let ok = !id.is_empty()
            && id.len() <= 128
            && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
            && id != "."
            && id != "..";
        if ok {
            Ok(TaleId(id))
        } else {
            Err(TaleError::Validation(format!("bad tale id {id:?}")))
        }
    }

    pub fn generate() -> TaleId {
        TaleId(uuid::Uuid::new_v4().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TaleId {
    type Error = TaleError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        TaleId::new(s)
    }
}

impl From<TaleId> for String {
    fn from(id: TaleId) -> String {
        id.0
    }
}

impl fmt::Display for TaleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A relative, normalized path inside a Tale workspace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArtifactPath(String);

impl ArtifactPath {
    pub fn new(path: impl Into<String>) -> Result<ArtifactPath, TaleError> {
        let path = path.into();
        let bad = |why: &str| Err(TaleError::Validation(format!("artifact path {path:?} {why}")));
        if path.is_empty() {
            return bad("is empty");
        }
        if path.starts_with('/') {
            return bad("is absolute");
        }
        if path.contains('\\') || path.contains('\0') {
            return bad("contains a backslash or NUL");
        }
        if path.split('/').any(|c| c.is_empty() || c == "." || c == "..") {
            return bad("is not normalized");
        }
        Ok(ArtifactPath(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn file_name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }

    /// File name without its final extension.
    pub fn stem(&self) -> &str {
        let name = self.file_name();
        match name.rsplit_once('.') {
            Some((stem, _)) if !stem.is_empty() => stem,
            _ => name,
        }
    }
}

impl TryFrom<String> for ArtifactPath {
    type Error = TaleError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ArtifactPath::new(s)
    }
}

impl From<ArtifactPath> for String {
    fn from(p: ArtifactPath) -> String {
        p.0
    }
}

impl fmt::Display for ArtifactPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Source,
    PrebuiltExecutable,
    Library,
}

/// Architecture tag. `generic` marks code that runs anywhere; any other tag
/// (`amd64`, `ppc64le`, ...) ties the artifact to that hardware.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchTag(pub String);

impl ArchTag {
    pub const GENERIC: &'static str = "generic";

    pub fn generic() -> ArchTag {
        ArchTag(Self::GENERIC.to_string())
    }

    pub fn new(tag: impl Into<String>) -> ArchTag {
        ArchTag(tag.into())
    }

    pub fn is_generic(&self) -> bool {
        self.0 == Self::GENERIC
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub path: ArtifactPath,
    pub kind: ArtifactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_arch: Option<ArchTag>,
    pub checksum: Digest,
    /// Built with a toolchain whose license may forbid redistribution.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub proprietary_toolchain: bool,
}

impl ArtifactKind {
    /// Guesses the kind of a workspace file from its name and whether it
    /// has the executable bit. Scripts stay source even when executable.
    pub fn guess(path: &str, executable: bool) -> ArtifactKind {
        let name = path.rsplit('/').next().unwrap_or(path);
        let ext = name.rsplit_once('.').filter(|(stem, _)| !stem.is_empty()).map(|(_, e)| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("so" | "a" | "dylib" | "dll" | "lib") => ArtifactKind::Library,
            Some("exe" | "bin" | "out") => ArtifactKind::PrebuiltExecutable,
            None if executable => ArtifactKind::PrebuiltExecutable,
            _ if name.contains(".so.") => ArtifactKind::Library,
            _ => ArtifactKind::Source,
        }
    }
}

impl CodeArtifact {
    pub fn new(path: &str, kind: ArtifactKind, target_arch: Option<ArchTag>, content: &[u8]) -> Result<Self, TaleError> {
        Ok(CodeArtifact {
            path: ArtifactPath::new(path)?,
            kind,
            target_arch,
            checksum: Digest::of(content),
            proprietary_toolchain: false,
        })
    }

    pub fn is_arch_specific(&self) -> bool {
        self.target_arch.as_ref().is_some_and(|t| !t.is_generic())
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.kind, ArtifactKind::PrebuiltExecutable | ArtifactKind::Library)
    }
}

/// Either an exact version (`==1.0.2`) or a half-open range (`>=1.0,<2.0`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum VersionConstraint {
    Exact(String),
    Range { min: Option<String>, max: Option<String> },
}

fn valid_version(v: &str) -> bool {
    !v.is_empty() && v.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_' | '*'))
}

impl std::str::FromStr for VersionConstraint {
    type Err = TaleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TaleError::Validation(format!("bad version constraint {s:?}"));
        let s = s.trim();
        if let Some(v) = s.strip_prefix("==") {
            return if valid_version(v) { Ok(VersionConstraint::Exact(v.to_string())) } else { Err(bad()) };
        }
        let (mut min, mut max) = (None, None);
        for part in s.split(',').map(str::trim) {
            if let Some(v) = part.strip_prefix(">=") {
                if min.is_some() || !valid_version(v) {
                    return Err(bad());
                }
                min = Some(v.to_string());
            } else if let Some(v) = part.strip_prefix('<') {
                if max.is_some() || !valid_version(v) {
                    return Err(bad());
                }
                max = Some(v.to_string());
            } else {
                return Err(bad());
            }
        }
        if min.is_none() && max.is_none() {
            return Err(bad());
        }
        Ok(VersionConstraint::Range { min, max })
    }
}

impl TryFrom<String> for VersionConstraint {
    type Error = TaleError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<VersionConstraint> for String {
    fn from(c: VersionConstraint) -> String {
        c.to_string()
    }
}

impl fmt::Display for VersionConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VersionConstraint::Exact(v) => write!(f, "=={v}"),
            VersionConstraint::Range { min, max } => {
                let parts: Vec<String> = min
                    .iter()
                    .map(|m| format!(">={m}"))
                    .chain(max.iter().map(|m| format!("<{m}")))
                    .collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyPin {
    pub name: String,
    pub constraint: VersionConstraint,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub base_image_name: String,
    #[serde(default)]
    pub dependency_pins: Vec<DependencyPin>,
    #[serde(default)]
    pub env_vars: BTreeMap<String, String>,
}

impl EnvironmentSpec {
    pub fn new(base_image_name: impl Into<String>) -> Self {
        EnvironmentSpec { base_image_name: base_image_name.into(), ..Default::default() }
    }

    pub fn pin(mut self, name: &str, constraint: &str) -> Result<Self, TaleError> {
        self.dependency_pins.push(DependencyPin { name: name.to_string(), constraint: constraint.parse()? });
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TaleError> {
        if self.base_image_name.trim().is_empty() {
            return Err(TaleError::Validation("environment has no base image".into()));
        }
        let mut seen = BTreeSet::new();
        for pin in &self.dependency_pins {
            if pin.name.is_empty() {
                return Err(TaleError::Validation("dependency pin with empty name".into()));
            }
            if !seen.insert(pin.name.as_str()) {
                return Err(TaleError::Validation(format!("duplicate dependency pin {:?}", pin.name)));
            }
        }
        Ok(())
    }
}

/// An executable research object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tale {
    pub id: TaleId,
    pub title: String,
    pub code_refs: Vec<CodeArtifact>,
    pub data_refs: Vec<ExternalDataRef>,
    pub env_spec: EnvironmentSpec,
    pub packaging: Option<PackagingManifest>,
    provenance: Vec<ProvenanceEvent>,
}

/// Creates a Tale with a fresh id and a `created` event stamped `at_us`.
pub fn create_tale(
    title: &str,
    code_refs: Vec<CodeArtifact>,
    data_refs: Vec<ExternalDataRef>,
    env_spec: EnvironmentSpec,
    at_us: u64,
) -> Result<Tale, TaleError> {
    Tale::create(TaleId::generate(), title, code_refs, data_refs, env_spec, at_us)
}

impl Tale {
    pub fn create(
        id: TaleId,
        title: &str,
        code_refs: Vec<CodeArtifact>,
        data_refs: Vec<ExternalDataRef>,
        env_spec: EnvironmentSpec,
        at_us: u64,
    ) -> Result<Tale, TaleError> {
        let mut tale = Tale {
            id,
            title: title.to_string(),
            code_refs,
            data_refs,
            env_spec,
            packaging: None,
            provenance: Vec::new(),
        };
        tale.validate()?;
        let mut payload = BTreeMap::new();
        payload.insert("title".to_string(), serde_json::Value::from(title));
        tale.append_event(ProvenanceKind::Created, payload, at_us);
        Ok(tale)
    }

    /// Checks every structural invariant and returns the first violation.
    pub fn validate(&self) -> Result<(), TaleError> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(e) => Err(e),
        }
    }

    /// All invariant violations, in a stable order.
    pub fn violations(&self) -> Vec<TaleError> {
        let mut out = Vec::new();
        if self.title.trim().is_empty() {
            out.push(TaleError::Validation("title is empty".into()));
        }
        let mut paths = BTreeSet::new();
        for a in &self.code_refs {
            if !paths.insert(a.path.as_str()) {
                out.push(TaleError::Validation(format!("duplicate artifact path {}", a.path)));
            }
        }
        let mut uris = BTreeSet::new();
        for d in &self.data_refs {
            if let Err(e) = d.validate() {
                out.push(TaleError::Validation(e.to_string()));
            }
            if !uris.insert(d.uri.as_str()) {
                out.push(TaleError::Validation(format!("duplicate data reference {}", d.uri)));
            }
        }
        if let Err(e) = self.env_spec.validate() {
            out.push(e);
        }
        if let Some(m) = &self.packaging {
            out.extend(m.violations(&self.code_refs));
        }
        for w in self.provenance.windows(2) {
            if w[1].seq <= w[0].seq {
                out.push(TaleError::ProvenanceOrder { expected: w[0].seq + 1, got: w[1].seq });
            }
        }
        out
    }

    /// Structural violations plus the publication rules: a Tale needs code,
    /// and its code must include source so it can be rebuilt.
    pub fn audit(&self) -> Vec<TaleError> {
        let mut out = self.violations();
        if self.code_refs.is_empty() {
            out.push(TaleError::NoCodeArtifacts);
        } else if !self.code_refs.iter().any(|a| a.kind == ArtifactKind::Source) {
            out.push(TaleError::MissingSource(format!("tale {} carries only binaries", self.id)));
        }
        out
    }

    pub fn provenance(&self) -> &[ProvenanceEvent] {
        &self.provenance
    }

    pub fn last_seq(&self) -> u64 {
        self.provenance.last().map_or(0, |e| e.seq)
    }

    /// Appends `event`, which must carry the next sequence number.
    pub fn record_provenance(&mut self, event: ProvenanceEvent) -> Result<(), TaleError> {
        let expected = self.last_seq() + 1;
        if event.seq != expected {
            return Err(TaleError::ProvenanceOrder { expected, got: event.seq });
        }
        self.provenance.push(event);
        Ok(())
    }

    /// Appends an event with the next sequence number and returns that number.
    pub fn append_event(
        &mut self,
        kind: ProvenanceKind,
        payload: BTreeMap<String, serde_json::Value>,
        timestamp_us: u64,
    ) -> u64 {
        let seq = self.last_seq() + 1;
        self.provenance.push(ProvenanceEvent { seq, timestamp_us, kind, payload });
        seq
    }

    pub(crate) fn from_parts(
        id: TaleId,
        title: String,
        code_refs: Vec<CodeArtifact>,
        data_refs: Vec<ExternalDataRef>,
        env_spec: EnvironmentSpec,
        packaging: Option<PackagingManifest>,
        provenance: Vec<ProvenanceEvent>,
    ) -> Tale {
        Tale { id, title, code_refs, data_refs, env_spec, packaging, provenance }
    }

    /// Builds the manifest for `strategy` and stores it on the Tale.
    pub fn package(&mut self, strategy: PackagingStrategy) -> Result<&PackagingManifest, TaleError> {
        let manifest = build_manifest(self, strategy)?;
        Ok(self.packaging.insert(manifest))
    }
}
