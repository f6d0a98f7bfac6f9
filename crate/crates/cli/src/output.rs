//! Artifact writing: CSVs with an optional timestamp header line and a JSON
//! manifest carrying the resolved config, seed, and artifact checksums.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};

pub struct OutputWriter {
    dir: PathBuf,
    timestamp: Option<u64>,
    checksums: BTreeMap<String, String>,
}

impl OutputWriter {
    pub fn new(dir: &Path, no_timestamp: bool) -> Result<Self, String> {
        std::fs::create_dir_all(dir)
            .map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))?;
        let timestamp = if no_timestamp {
            None
        } else {
            Some(
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            )
        };
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            timestamp,
            checksums: BTreeMap::new(),
        })
    }

    /// Writes a CSV artifact, prepending the timestamp header line unless
    /// suppressed, and records its checksum for the manifest.
    pub fn write_csv(&mut self, name: &str, body: &str) -> Result<(), String> {
        let mut content = String::new();
        if let Some(ts) = self.timestamp {
            content.push_str(&format!("# generated_unix: {ts}\n"));
        }
        content.push_str(body);
        let path = self.dir.join(name);
        std::fs::write(&path, &content)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(content.as_bytes());
        self.checksums
            .insert(name.to_string(), format!("{:x}", hasher.finalize()));
        Ok(())
    }

    /// Writes `summary.json`: schema version, command, seed, resolved
    /// config, artifact checksums, and command-specific results.
    pub fn write_summary<R: Serialize>(
        &self,
        command: &str,
        seed: u64,
        threads: Option<usize>,
        config: &ExperimentConfig,
        results: &R,
    ) -> Result<(), String> {
        #[derive(Serialize)]
        struct Summary<'a, R: Serialize> {
            schema_version: u32,
            command: &'a str,
            seed: u64,
            #[serde(skip_serializing_if = "Option::is_none")]
            threads: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            timestamp_unix: Option<u64>,
            config: &'a ExperimentConfig,
            artifacts: &'a BTreeMap<String, String>,
            results: &'a R,
        }
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            command,
            seed,
            threads,
            timestamp_unix: self.timestamp,
            config,
            artifacts: &self.checksums,
            results,
        };
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| format!("cannot serialize summary: {e}"))?;
        let path = self.dir.join("summary.json");
        std::fs::write(&path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))
    }
}
