//! Workload classification and the four packaging strategies for compiled
//! code.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArtifactKind, CodeArtifact, DependencyPin, Tale, TaleError};
use crate::planner::ResourceDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadClass {
    Unoptimized,
    Optimized,
    Mixed,
}

impl WorkloadClass {
    pub const ALL: [WorkloadClass; 3] = [WorkloadClass::Unoptimized, WorkloadClass::Optimized, WorkloadClass::Mixed];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackagingStrategy {
    /// Option 1: one generic, statically linked build.
    GenericStatic,
    /// Option 2: one static build per target resource.
    PerResourceStatic,
    /// Option 3: sources plus generic libraries to build them.
    SourcePlusGenericLibs,
    /// Option 4: infrastructure to compile on the target at run time.
    OnDemandCompile,
}

impl PackagingStrategy {
    pub fn option_number(self) -> u8 {
        match self {
            PackagingStrategy::GenericStatic => 1,
            PackagingStrategy::PerResourceStatic => 2,
            PackagingStrategy::SourcePlusGenericLibs => 3,
            PackagingStrategy::OnDemandCompile => 4,
        }
    }
}

impl fmt::Display for PackagingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PackagingStrategy::GenericStatic => "generic_static",
            PackagingStrategy::PerResourceStatic => "per_resource_static",
            PackagingStrategy::SourcePlusGenericLibs => "source_plus_generic_libs",
            PackagingStrategy::OnDemandCompile => "on_demand_compile",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackagingManifest {
    pub workload_class: WorkloadClass,
    pub strategy: PackagingStrategy,
    pub entries: Vec<CodeArtifact>,
    pub redistribution_ok: bool,
    /// Library pins carried for strategies that rebuild from source.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pins: Vec<DependencyPin>,
}

impl PackagingManifest {
    pub fn violations(&self, code_refs: &[CodeArtifact]) -> Vec<TaleError> {
        let mut out = Vec::new();
        if self.strategy == PackagingStrategy::PerResourceStatic && !self.entries.iter().any(|e| e.is_arch_specific()) {
            out.push(TaleError::NoTargets);
        }
        if !self.redistribution_ok {
            for e in &self.entries {
                if e.kind == ArtifactKind::PrebuiltExecutable && e.proprietary_toolchain {
                    out.push(TaleError::Validation(format!(
                        "{} was built with a proprietary toolchain and may not be redistributed",
                        e.path
                    )));
                }
            }
        }
        let has_exe = self.entries.iter().any(|e| e.kind == ArtifactKind::PrebuiltExecutable);
        let has_src = self.entries.iter().any(|e| e.kind == ArtifactKind::Source);
        if has_exe && !has_src {
            out.push(TaleError::MissingSource("manifest has executables but no source".into()));
        }
        for src in code_refs.iter().filter(|a| a.kind == ArtifactKind::Source) {
            if !self.entries.contains(src) {
                out.push(TaleError::MissingSource(format!("manifest omits source {}", src.path)));
            }
        }
        for e in &self.entries {
            if !code_refs.contains(e) {
                out.push(TaleError::Validation(format!("manifest entry {} is not a code artifact of the tale", e.path)));
            }
        }
        out
    }
}

/// Classifies a Tale's code by hardware specialisation.
///
/// Artifacts tagged `generic` count as portable code, artifacts tagged with
/// any other architecture count as specialised, and untagged artifacts
/// (typically compiled-language sources) are neutral. No specialised
/// artifact means unoptimized; only specialised plus neutral means
/// optimized; portable driver code next to specialised cores is mixed.
pub fn classify_workload(tale: &Tale) -> Result<WorkloadClass, TaleError> {
    classify_artifacts(&tale.code_refs)
}

pub(crate) fn classify_artifacts(artifacts: &[CodeArtifact]) -> Result<WorkloadClass, TaleError> {
    if artifacts.is_empty() {
        return Err(TaleError::NoCodeArtifacts);
    }
    let specific = artifacts.iter().any(CodeArtifact::is_arch_specific);
    let generic = artifacts.iter().any(|a| a.target_arch.as_ref().is_some_and(|t| t.is_generic()));
    Ok(match (specific, generic) {
        (false, _) => WorkloadClass::Unoptimized,
        (true, false) => WorkloadClass::Optimized,
        (true, true) => WorkloadClass::Mixed,
    })
}

/// Fixed strategy policy.
///
/// | class       | redistributable | targets          | strategy |
/// |-------------|-----------------|------------------|----------|
/// | unoptimized | any             | any              | 3        |
/// | optimized   | yes             | nonempty         | 2        |
/// | optimized   | yes             | empty            | 1        |
/// | mixed, or not redistributable | | all can compile | 4        |
/// | mixed, or not redistributable | | otherwise       | 3        |
pub fn select_strategy(
    class: WorkloadClass,
    targets: &[ResourceDescriptor],
    redistribution_ok: bool,
) -> PackagingStrategy {
    let can_compile = !targets.is_empty() && targets.iter().all(|t| t.can_compile);
    match class {
        WorkloadClass::Unoptimized => PackagingStrategy::SourcePlusGenericLibs,
        WorkloadClass::Mixed => compile_or_source(can_compile),
        WorkloadClass::Optimized if !redistribution_ok => compile_or_source(can_compile),
        WorkloadClass::Optimized if !targets.is_empty() => PackagingStrategy::PerResourceStatic,
        WorkloadClass::Optimized => PackagingStrategy::GenericStatic,
    }
}

fn compile_or_source(can_compile: bool) -> PackagingStrategy {
    if can_compile {
        PackagingStrategy::OnDemandCompile
    } else {
        PackagingStrategy::SourcePlusGenericLibs
    }
}

/// True unless the Tale carries executables from proprietary toolchains.
pub(crate) fn redistributable(artifacts: &[CodeArtifact]) -> bool {
    !artifacts.iter().any(|a| a.kind == ArtifactKind::PrebuiltExecutable && a.proprietary_toolchain)
}

/// Builds the packaging manifest for `strategy`. Every source artifact is
/// always included; which binaries travel with it depends on the strategy.
pub fn build_manifest(tale: &Tale, strategy: PackagingStrategy) -> Result<PackagingManifest, TaleError> {
    let workload_class = classify_workload(tale)?;
    if !tale.code_refs.iter().any(|a| a.kind == ArtifactKind::Source) {
        return Err(TaleError::MissingSource(format!("tale {} has no source artifact", tale.id)));
    }
    let redistribution_ok = redistributable(&tale.code_refs);
    let shippable = |a: &&CodeArtifact| {
        redistribution_ok || !(a.kind == ArtifactKind::PrebuiltExecutable && a.proprietary_toolchain)
    };
    let keep: Box<dyn Fn(&CodeArtifact) -> bool> = match strategy {
        PackagingStrategy::GenericStatic | PackagingStrategy::PerResourceStatic => Box::new(|_| true),
        PackagingStrategy::SourcePlusGenericLibs => {
            Box::new(|a| a.kind == ArtifactKind::Source || !a.is_arch_specific())
        }
        PackagingStrategy::OnDemandCompile => Box::new(|a| {
            a.kind == ArtifactKind::Source || (a.kind == ArtifactKind::Library && !a.is_arch_specific())
        }),
    };
    let mut entries: Vec<CodeArtifact> =
        tale.code_refs.iter().filter(shippable).filter(|a| keep(a)).cloned().collect();
    entries.sort_by(|a, b| a.path.cmp(&b.path));

    if strategy == PackagingStrategy::PerResourceStatic {
        let targets: BTreeSet<_> = entries.iter().filter_map(|e| e.is_arch_specific().then_some(&e.target_arch)).collect();
        if targets.is_empty() {
            return Err(TaleError::NoTargets);
        }
    }
    let pins = match strategy {
        PackagingStrategy::SourcePlusGenericLibs | PackagingStrategy::OnDemandCompile => {
            tale.env_spec.dependency_pins.clone()
        }
        _ => Vec::new(),
    };
    let manifest = PackagingManifest { workload_class, strategy, entries, redistribution_ok, pins };
    if let Some(e) = manifest.violations(&tale.code_refs).into_iter().next() {
        return Err(e);
    }
    Ok(manifest)
}
