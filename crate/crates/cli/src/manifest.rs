//! Plain-text `key=value` run manifests.
//!
//! Every run records the exact argument vector (`args_json`), the fully
//! resolved configuration, seeds, inputs, outputs, the tool version and
//! start/end times. `evtrack replay <manifest>` re-parses `args_json`, which
//! reproduces the data outputs byte for byte.

use std::fmt::Display;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use evtrack_core::io::write_atomic;

use crate::commands::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl Manifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        let mut m = Manifest::default();
        m.set("tool", "evtrack");
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m.set("args_json", serde_json::to_string(args).expect("strings serialize"));
        m.set("started_unix", format!("{:.3}", unix_now()));
        m
    }

    /// Adds or replaces a key. Values are kept on one line.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let v = value.to_string().replace(['\n', '\r'], " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = v,
            None => self.entries.push((key.to_string(), v)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Data(format!("manifest line {}: expected key=value", n + 1)))?;
            m.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(m)
    }

    /// Recorded argument vector (without the program name).
    pub fn args(&self) -> Result<Vec<String>, CliError> {
        let raw = self.get("args_json").ok_or_else(|| CliError::Data("manifest has no args_json".into()))?;
        serde_json::from_str(raw).map_err(|e| CliError::Data(format!("manifest args_json: {e}")))
    }

    /// Stamps the end time and writes `manifest.txt` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<(), CliError> {
        self.set("finished_unix", format!("{:.3}", unix_now()));
        write_atomic(&dir.join(MANIFEST_FILE), self.render().as_bytes())?;
        Ok(())
    }
}
