use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Subcommand;
use serde_json::json;
use talescale::dms::parse_data_refs;
use talescale::tale::{
    export_tale, import_tale, tale_from_record, tale_to_record, ArtifactKind, CodeArtifact, EnvironmentSpec, Tale, TaleError,
    TaleId,
};
use talescale::Digest;
use walkdir::WalkDir;

use crate::output::{read, user, user_with, write, Out};

/// Where a workspace keeps its Tale record; never packaged as code.
pub const RECORD_DIR: &str = ".talescale";
pub const RECORD_FILE: &str = "tale.json";

#[derive(Subcommand, Debug)]
pub enum TaleCmd {
    /// Make a Tale from the files of a workspace directory.
    Create {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long)]
        title: String,
        /// Base image of the environment.
        #[arg(long, default_value = "python:3.11")]
        image: String,
        /// JSON list of external data references `{uri, size_bytes, checksum}`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fixed id instead of a generated one.
        #[arg(long)]
        id: Option<String>,
        /// Also write the archive here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the archive of a workspace's Tale.
    Export {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unpack an archive into a workspace directory.
    Import {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List every violation of a workspace's Tale or an archive.
    Validate {
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        workspace: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
}

pub fn run(cmd: TaleCmd, out: &Out) -> anyhow::Result<()> {
    match cmd {
        TaleCmd::Create { workspace, title, image, data, id, out: archive } => {
            let code = scan_workspace(&workspace)?;
            let data_refs = match data {
                Some(p) => parse_data_refs(&String::from_utf8_lossy(&read(&p)?)).map_err(|e| user(format!("{}: {e}", p.display())))?,
                None => Vec::new(),
            };
            let id = match id {
                Some(s) => TaleId::new(s).map_err(user)?,
                None => TaleId::generate(),
            };
            let tale = Tale::create(id, &title, code, data_refs, EnvironmentSpec::new(image), now_us()).map_err(user)?;
            save_record(&workspace, &tale)?;
            let mut archive_bytes = None;
            if let Some(path) = &archive {
                let bytes = export_tale(&tale, &workspace).map_err(user)?;
                write(path, &bytes)?;
                archive_bytes = Some(bytes.len());
            }
            let v = json!({
                "id": tale.id,
                "title": tale.title,
                "code_refs": tale.code_refs,
                "data_refs": tale.data_refs.len(),
                "record": record_path(&workspace),
                "archive": archive,
                "archive_bytes": archive_bytes,
            });
            out.emit(&v, || {
                let mut s = format!("created tale {} ({} files)\n", tale.id, tale.code_refs.len());
                for a in &tale.code_refs {
                    s += &format!("  {:<20} {}\n", json!(a.kind).as_str().unwrap_or("?"), a.path);
                }
                if let Some(p) = &archive {
                    s += &format!("archive {}\n", p.display());
                }
                s
            })
        }
        TaleCmd::Export { workspace, out: path } => {
            let tale = load_record(&workspace)?;
            let bytes = export_tale(&tale, &workspace).map_err(user)?;
            write(&path, &bytes)?;
            let digest = Digest::of(&bytes);
            let v = json!({"id": tale.id, "out": path, "bytes": bytes.len(), "checksum": digest});
            out.emit(&v, || format!("exported {} to {} ({} bytes, {digest})\n", tale.id, path.display(), bytes.len()))
        }
        TaleCmd::Import { input, out: dir } => {
            let imported = import_tale(&read(&input)?).map_err(|e| user(format!("{}: {e}", input.display())))?;
            imported.write_workspace(&dir).map_err(user)?;
            save_record(&dir, &imported.tale)?;
            let t = &imported.tale;
            let v = json!({"id": t.id, "title": t.title, "files": imported.workspace.files.len(), "workspace": dir});
            out.emit(&v, || format!("imported {} into {} ({} files)\n", t.id, dir.display(), imported.workspace.files.len()))
        }
        TaleCmd::Validate { workspace, input } => {
            let (tale, mut violations) = match (&workspace, &input) {
                (Some(w), _) => {
                    let tale = load_record(w)?;
                    let mut v = tale.audit();
                    // files must still match their checksums
                    if let Err(e) = export_tale(&tale, w) {
                        if !v.contains(&e) {
                            v.push(e);
                        }
                    }
                    (Some(tale), v)
                }
                (None, Some(p)) => match import_tale(&read(p)?) {
                    Ok(imp) => {
                        let v = imp.tale.audit();
                        (Some(imp.tale), v)
                    }
                    Err(e) => (None, vec![e]),
                },
                (None, None) => unreachable!("clap requires one source"),
            };
            violations.dedup();
            let messages: Vec<String> = violations.iter().map(TaleError::to_string).collect();
            let id = tale.as_ref().map(|t| t.id.to_string());
            let v = json!({"id": id, "valid": messages.is_empty(), "violations": messages});
            if messages.is_empty() {
                return out.emit(&v, || format!("tale {} is valid\n", id.unwrap_or_default()));
            }
            if !out.json() {
                for m in &messages {
                    println!("{m}");
                }
            }
            Err(user_with(format!("{} violation(s): {}", messages.len(), messages.join("; ")), v))
        }
    }
}

fn now_us() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}

pub fn record_path(workspace: &Path) -> PathBuf {
    workspace.join(RECORD_DIR).join(RECORD_FILE)
}

pub fn save_record(workspace: &Path, tale: &Tale) -> anyhow::Result<()> {
    let path = record_path(workspace);
    std::fs::create_dir_all(path.parent().expect("has a parent")).map_err(|e| user(format!("{}: {e}", workspace.display())))?;
    let bytes = tale_to_record(tale).context("serializing the tale record")?;
    write(&path, &bytes)
}

pub fn load_record(workspace: &Path) -> anyhow::Result<Tale> {
    let path = record_path(workspace);
    if !path.exists() {
        return Err(user(format!("{} holds no tale; run `tale create` or `tale import` first", workspace.display())));
    }
    tale_from_record(&read(&path)?).map_err(|e| user(format!("{}: {e}", path.display())))
}

/// Code artifacts for every file under `root`, in path order.
pub fn scan_workspace(root: &Path) -> anyhow::Result<Vec<CodeArtifact>> {
    if !root.is_dir() {
        return Err(user(format!("workspace {} is not a directory", root.display())));
    }
    let mut out = Vec::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| e.depth() != 1 || e.file_name() != RECORD_DIR);
    for entry in walker {
        let entry = entry.map_err(|e| user(format!("scanning {}: {e}", root.display())))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_str().ok_or_else(|| user(format!("{} is not valid UTF-8", rel.display()))))
            .collect::<anyhow::Result<Vec<_>>>()?
            .join("/");
        let content = read(entry.path())?;
        let kind = ArtifactKind::guess(&rel, is_executable(&entry));
        out.push(CodeArtifact::new(&rel, kind, None, &content).map_err(user)?);
    }
    Ok(out)
}

#[cfg(unix)]
fn is_executable(entry: &walkdir::DirEntry) -> bool {
    use std::os::unix::fs::PermissionsExt;
    entry.metadata().is_ok_and(|m| m.permissions().mode() & 0o111 != 0)
}

#[cfg(not(unix))]
fn is_executable(_: &walkdir::DirEntry) -> bool {
    false
}
