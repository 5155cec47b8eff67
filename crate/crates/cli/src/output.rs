use std::fmt::Display;
use std::io::Write;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// A failure caused by the invocation: bad flags, bad input files,
/// requests the library rejects. Anything else is internal.
#[derive(Debug)]
pub struct UserError {
    pub message: String,
    /// Structured detail for `--format json`.
    pub detail: Option<Value>,
}

impl Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for UserError {}

pub fn user(message: impl Display) -> anyhow::Error {
    anyhow::Error::new(UserError { message: message.to_string(), detail: None })
}

pub fn user_with(message: impl Display, detail: Value) -> anyhow::Error {
    anyhow::Error::new(UserError { message: message.to_string(), detail: Some(detail) })
}

pub struct Out {
    pub format: Format,
}

impl Out {
    pub fn new(format: Format) -> Self {
        Out { format }
    }

    pub fn json(&self) -> bool {
        self.format == Format::Json
    }

    /// Prints `value` as JSON, or `text` in text mode.
    pub fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> anyhow::Result<()> {
        let s = if self.json() { serde_json::to_string_pretty(value)? + "\n" } else { text() };
        raw(&s)
    }

    /// Reports `err` and returns the exit code.
    pub fn fail(&self, err: &anyhow::Error) -> u8 {
        let (code, detail) = match err.downcast_ref::<UserError>() {
            Some(u) => (1, u.detail.clone()),
            None => (2, None),
        };
        if self.json() {
            let mut v = serde_json::json!({"error": format!("{err:#}"), "exit_code": code});
            if let Some(d) = detail {
                v["detail"] = d;
            }
            let _ = raw(&(v.to_string() + "\n"));
        } else {
            let kind = if code == 1 { "error" } else { "internal error" };
            eprintln!("{kind}: {err:#}");
        }
        code
    }
}

pub fn raw(s: &str) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(s.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

pub fn read(path: &std::path::Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))
}

pub fn write(path: &std::path::Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

pub fn parse_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> anyhow::Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| user(format!("{}: {e}", path.display())))
}
