use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Identity of one command run: the hash covers the resolved arguments and
/// the bytes of every input file.
pub struct Stamp {
    pub command: &'static str,
    pub config: Value,
    pub hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new<T: Serialize>(command: &'static str, args: &T, inputs: &[&Path], seed: u64) -> Result<Self, CliError> {
        let mut config = serde_json::to_value(args).map_err(CliError::internal)?;
        let mut digests = serde_json::Map::new();
        for p in inputs {
            let bytes = fs::read(p).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
            digests.insert(p.display().to_string(), Value::String(sha256_hex(&bytes)));
        }
        config["input_sha256"] = Value::Object(digests);
        config["command"] = Value::String(command.into());
        let hash = sha256_hex(config.to_string().as_bytes());
        Ok(Self { command, config, hash, seed })
    }

    pub fn header_line(&self) -> String {
        format!("# mixrisk {} config_hash={} seed={}\n", self.command, self.hash, self.seed)
    }
}

pub struct Output {
    pub dir: PathBuf,
    pub stamp: Stamp,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, stamp: Stamp) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::User(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), stamp, files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut f = fs::File::create(&path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        f.write_all(bytes).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// CSV preceded by a `#` line carrying the config hash and seed.
    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(self.stamp.header_line().into_bytes());
        w.write_record(header).map_err(CliError::internal)?;
        for r in rows {
            w.write_record(r).map_err(CliError::internal)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::internal(e.to_string()))?;
        self.write_file(name, &bytes)
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_file(name, bytes)
    }

    /// `<command>.manifest.json` listing the outputs written so far.
    pub fn manifest(mut self, extra: Value) -> Result<PathBuf, CliError> {
        let name = format!("{}.manifest.json", self.stamp.command);
        let m = json!({
            "command": self.stamp.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.stamp.hash,
            "seed": self.stamp.seed,
            "config": self.stamp.config,
            "outputs": self.files,
            "results": extra,
        });
        let text = serde_json::to_string_pretty(&m).map_err(CliError::internal)? + "\n";
        self.write_file(&name, text.as_bytes())?;
        Ok(self.path(&name))
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
