//! Config loading, run directories and content hashing.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const DEFAULT_OUT_DIR: &str = "runs";
pub const OUT_ENV: &str = "QPROTO_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Keys shared by every config file, removed before the subcommand's own
/// strict parse.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Globals {
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

pub struct Loaded<T> {
    pub config: T,
    pub globals: Globals,
}

pub fn read_file(path: &Path, what: &str) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Config(format!("cannot read {what} '{}': {e}", path.display())))
}

/// Parses a JSON config, splitting off the global keys.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<Loaded<T>> {
    let bytes = read_file(path, "config file")?;
    let value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
    };
    let globals = take_globals(&mut map).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config = serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(Loaded { config, globals })
}

fn take_globals(map: &mut Map<String, Value>) -> Result<Globals, String> {
    let out_dir = match map.remove("out_dir") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => return Err(format!("out_dir must be a string, got {other}")),
    };
    let threads = match map.remove("threads") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(t) if t > 0 => Some(t as usize),
            _ => return Err(format!("threads must be a positive integer, got {v}")),
        },
    };
    Ok(Globals { out_dir, threads })
}

/// Flag, then `QPROTO_OUT`, then the config's `out_dir`, then `runs`.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), Path::to_path_buf)
}

/// SHA-256 over length-prefixed named parts, hex encoded.
pub fn content_hash(parts: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in parts {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunDir {
    pub path: PathBuf,
    pub id: String,
    pub hash: String,
}

impl RunDir {
    /// Creates `out_dir/<timestamp>-<hash prefix>`, adding a counter suffix
    /// if that name is taken.
    pub fn create(out_dir: &Path, hash: &str) -> CliResult<Self> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create output directory '{}': {e}", out_dir.display())))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
        let base = format!("{stamp}-{}", &hash[..12]);
        for attempt in 0..1000 {
            let id = if attempt == 0 { base.clone() } else { format!("{base}-{attempt}") };
            let path = out_dir.join(&id);
            match fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(Self {
                        path,
                        id,
                        hash: hash.to_string(),
                    })
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => {
                    return Err(CliError::Runtime(format!("cannot create run directory '{}': {e}", path.display())))
                }
            }
        }
        Err(CliError::Runtime(format!("no free run id under '{}'", out_dir.display())))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.file(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("cannot write '{}': {e}", path.display())))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
        text.push('\n');
        self.write(name, text)
    }

    /// `config.json`, `seed` and `run.json` (command, seed, hash, id).
    pub fn snapshot<T: Serialize>(&self, command: &str, config: &T, seed: u64) -> CliResult<()> {
        self.write_json("config.json", config)?;
        self.write("seed", format!("{seed}\n"))?;
        self.write_json(
            "run.json",
            &serde_json::json!({
                "command": command,
                "id": self.id,
                "seed": seed,
                "content_hash": self.hash,
            }),
        )?;
        Ok(())
    }
}
