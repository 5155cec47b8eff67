//! Deterministic generator of varied Tales with their workspace files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talescale::dms::ExternalDataRef;
use talescale::tale::{ArchTag, ArtifactKind, ArtifactPath, CodeArtifact, EnvironmentSpec, MemWorkspace, ProvenanceKind, Tale, TaleId};
use talescale::Digest;

const SEGMENTS: &[&str] = &["src", "lib", "données", "模型", "naïve", "run", "a b", "Ωmega", "x", "data-1", "🚀"];
const EXTS: &[&str] = &[".py", ".c", ".f90", ".R", "", ".sh", ".so"];

pub fn generate(seed: u64) -> (Tale, MemWorkspace) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = MemWorkspace::default();
    let mut code = Vec::new();
    let n = rng.random_range(1..6);
    for i in 0..n {
        let depth = rng.random_range(0..3);
        let mut parts: Vec<String> = (0..depth).map(|_| SEGMENTS[rng.random_range(0..SEGMENTS.len())].to_string()).collect();
        parts.push(format!("{}{i}{}", SEGMENTS[rng.random_range(0..SEGMENTS.len())], EXTS[rng.random_range(0..EXTS.len())]));
        let path = parts.join("/");
        // every third file is empty
        let len = if i % 3 == 0 { 0 } else { rng.random_range(1..4096) };
        let content: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let kind = if i == 0 || !rng.random_bool(0.3) { ArtifactKind::Source } else { ArtifactKind::Library };
        let arch = rng.random_bool(0.3).then(|| ArchTag::new(["amd64", "ppc64le", "generic"][rng.random_range(0..3)]));
        code.push(CodeArtifact::new(&path, kind, arch, &content).unwrap());
        ws.files.insert(ArtifactPath::new(path).unwrap(), content);
    }
    let data = (0..rng.random_range(0..4))
        .map(|i| ExternalDataRef::new(format!("doi:10.5065/d{seed}-{i}"), rng.random_range(0..1 << 40), Digest::of(&[i as u8])))
        .collect();
    let env = EnvironmentSpec::new("python:3.11").pin("numpy", ">=1.20,<2.0").unwrap();
    let title = format!("Tale №{seed} – ünïcödé");
    let mut tale = Tale::create(TaleId::new(format!("t{seed}")).unwrap(), &title, code, data, env, seed * 1000).unwrap();
    for k in 0..rng.random_range(0..4) {
        tale.append_event(ProvenanceKind::Launched, Default::default(), seed * 1000 + k + 1);
    }
    (tale, ws)
}
