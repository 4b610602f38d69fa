use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::failure::{CmdResult, Failure};
use crate::io::sha256_file;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DiagnosticsSummary {
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
}

/// Record of one command run, written as `manifest.json` next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub seed_generated: bool,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub timings_secs: BTreeMap<String, f64>,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub status: String,
    pub exit_code: u8,
    pub error: Option<String>,
    #[serde(skip)]
    path: Option<PathBuf>,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::Value::Null,
            seed: None,
            seed_generated: false,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            timings_secs: BTreeMap::new(),
            diagnostics: None,
            status: "running".into(),
            exit_code: 0,
            error: None,
            path: None,
            clock: Some(Instant::now()),
        }
    }

    /// Where the manifest will be written once the run ends.
    pub fn set_path(&mut self, path: PathBuf) {
        self.path = Some(path);
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CmdResult<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn timing(&mut self, stage: &str, since: Instant) {
        self.timings_secs.insert(stage.to_string(), since.elapsed().as_secs_f64());
    }

    /// Seed from the command line, or a fresh one recorded as generated.
    pub fn resolve_seed(&mut self, given: Option<u64>) -> u64 {
        let seed = given.unwrap_or_else(rand::random);
        self.seed = Some(seed);
        self.seed_generated = given.is_none();
        seed
    }

    /// Fills in the outcome and writes the manifest if a location was set.
    pub fn finish(&mut self, outcome: &CmdResult<()>) -> CmdResult<()> {
        if let Some(c) = self.clock {
            self.timings_secs.insert("total".into(), c.elapsed().as_secs_f64());
        }
        match outcome {
            Ok(()) => {
                self.status = "ok".into();
                self.exit_code = 0;
            }
            Err(f) => {
                self.status = "failed".into();
                self.exit_code = f.code();
                self.error = Some(f.to_string());
            }
        }
        if let Some(p) = &self.path {
            let text = serde_json::to_string_pretty(self)?;
            std::fs::write(p, text)
                .map_err(|e| Failure::data(format!("cannot write {}: {e}", p.display())))?;
        }
        Ok(())
    }
}
