//! In-memory artifact set, written to disk in one pass.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header shared by every artifact of one run.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    /// Canonical TOML of the effective configuration.
    pub config_toml: String,
    pub config: ExperimentConfig,
}

impl Provenance {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            tool: "coarsen",
            version: VERSION,
            command: command.to_string(),
            config_sha256: config.hash(),
            config_toml: config.to_toml(),
            config: config.clone(),
        }
    }

    fn comment(&self) -> String {
        format!(
            "# coarsen {} {} config_sha256={}\n",
            self.version, self.command, self.config_sha256
        )
    }
}

/// Relative path to file contents; ordered so writing is deterministic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Artifacts {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, prov: &Provenance, body: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            provenance: &'a Provenance,
            #[serde(flatten)]
            body: &'a T,
        }
        let mut text = serde_json::to_string_pretty(&Doc { provenance: prov, body })
            .map_err(|e| CliError::Runtime(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.files.insert(name.to_string(), text.into_bytes());
        Ok(())
    }

    /// CSV with a leading `#` provenance line.
    pub fn csv<R: Serialize>(&mut self, name: &str, prov: &Provenance, rows: &[R]) -> Result<(), CliError> {
        self.csv_with_header(name, prov, None, rows)
    }

    /// As [`Artifacts::csv`], with an explicit header for row types that
    /// cannot name their own columns (or when `rows` may be empty).
    pub fn csv_with_header<R: Serialize>(
        &mut self,
        name: &str,
        prov: &Provenance,
        header: Option<&[&str]>,
        rows: &[R],
    ) -> Result<(), CliError> {
        let mut buf = prov.comment().into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .has_headers(header.is_none())
                .from_writer(&mut buf);
            let fail = |e: csv::Error| CliError::Runtime(format!("writing {name}: {e}"));
            if let Some(h) = header {
                w.write_record(h).map_err(fail)?;
            }
            for r in rows {
                w.serialize(r).map_err(fail)?;
            }
            w.flush().map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))?;
        }
        self.files.insert(name.to_string(), buf);
        Ok(())
    }

    /// Binary PGM with the provenance line as a header comment.
    pub fn pgm(&mut self, name: &str, prov: &Provenance, raw: Vec<u8>) {
        let mut out = Vec::with_capacity(raw.len() + 80);
        out.extend_from_slice(b"P5\n");
        out.extend_from_slice(prov.comment().as_bytes());
        out.extend_from_slice(&raw[3..]);
        self.files.insert(name.to_string(), out);
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| CliError::Runtime(format!("creating {}: {e}", parent.display())))?;
            }
            fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// Compact rendering of a time for file names: `1000`, `2.5`.
pub fn time_tag(t: f64) -> String {
    format!("{t}")
}
