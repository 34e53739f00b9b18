//! Output files and the run manifest written next to them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A refused or malformed invocation; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub lexicon_version: Option<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Collects the artifacts of one run. Everything is buffered and written at the
/// end, so a failing run leaves no partial files behind.
pub struct Outputs {
    force: bool,
    primary: Option<PathBuf>,
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: Vec<u8>,
    manifest: RunManifest,
}

impl Outputs {
    pub fn new(subcommand: &str, primary: Option<PathBuf>, force: bool) -> Self {
        Outputs {
            force,
            primary,
            files: Vec::new(),
            stdout: Vec::new(),
            manifest: RunManifest {
                subcommand: subcommand.to_owned(),
                parameters: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                lexicon_version: None,
                tool_version: capbias_core::report::TOOL_VERSION.to_owned(),
                timestamp: timestamp(),
            },
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("parameters serialize");
        self.manifest.parameters.insert(key.to_owned(), v);
    }

    /// Record an input's hash. An unreadable input is a usage error.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path).map_err(|e| UsageError(format!("{e:#}")))?;
        self.manifest.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        for p in paths {
            self.input(p)?;
        }
        Ok(())
    }

    pub fn lexicon_version(&mut self, v: &str) {
        self.manifest.lexicon_version = Some(v.to_owned());
    }

    /// Path of a side file derived from the primary output, if there is one.
    pub fn sibling(&self, suffix: &str) -> Option<PathBuf> {
        self.primary.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(suffix);
            PathBuf::from(s)
        })
    }

    /// The main artifact: to `--out` when given, else stdout.
    pub fn primary(&mut self, bytes: Vec<u8>) {
        match self.primary.clone() {
            Some(p) => self.files.push((p, bytes)),
            None => self.stdout = bytes,
        }
    }

    pub fn file(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// Write all files plus the manifest. Existing paths are refused without `--force`.
    pub fn finish(mut self) -> Result<()> {
        let manifest_path = self.sibling(".manifest.json");
        let mut targets: Vec<&PathBuf> = self.files.iter().map(|(p, _)| p).collect();
        targets.extend(manifest_path.iter());
        for p in &targets {
            if !self.force && p.exists() {
                return Err(UsageError(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                ))
                .into());
            }
        }
        for (i, p) in targets.iter().enumerate() {
            if targets[..i].contains(p) {
                return Err(UsageError(format!("{} given for two outputs", p.display())).into());
            }
            if self.manifest.inputs.contains_key(&p.display().to_string()) {
                return Err(UsageError(format!("output {} would overwrite an input", p.display())).into());
            }
        }
        for (p, bytes) in &self.files {
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?;
            self.manifest
                .outputs
                .insert(p.display().to_string(), sha256_hex(bytes));
        }
        if let Some(mp) = manifest_path {
            let mut json = serde_json::to_vec_pretty(&self.manifest)?;
            json.push(b'\n');
            fs::write(&mp, json).with_context(|| format!("writing {}", mp.display()))?;
        }
        if !self.stdout.is_empty() {
            let mut out = io::stdout().lock();
            out.write_all(&self.stdout)?;
            out.flush()?;
        }
        Ok(())
    }
}
