//! Run manifests and checksummed file references.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use giqa_core::{json, Error};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Record of one command invocation, sufficient to re-run it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Directory the command ran in; relative paths in `args` resolve here.
    pub working_dir: PathBuf,
    /// Fully resolved parameters, defaults included.
    pub params: serde_json::Value,
    /// SHA-256 of every input file, keyed by path as given.
    pub input_checksums: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> giqa_core::Result<()> {
        json::write_file(self, path)
    }

    pub fn load(path: &Path) -> giqa_core::Result<Self> {
        json::read_file(path)
    }

    /// Fails if any recorded input changed since the run.
    pub fn verify_inputs(&self) -> giqa_core::Result<()> {
        for (path, expected) in &self.input_checksums {
            let full = self.working_dir.join(path);
            let found = sha256_file(&full)?;
            if &found != expected {
                return Err(Error::ChecksumMismatch {
                    path: full,
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> giqa_core::Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_error(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Inputs read and outputs written by a command, collected as it runs.
#[derive(Debug, Default)]
pub struct Run {
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
}

impl Run {
    /// Checksums `path` before the command reads it.
    pub fn input<'p>(&mut self, path: &'p Path) -> giqa_core::Result<&'p Path> {
        let sum = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), sum);
        Ok(path)
    }

    pub fn output<'p>(&mut self, path: &'p Path) -> &'p Path {
        self.outputs.push(path.display().to_string());
        path
    }
}

/// KNN reference set: the GIQF file it was built from plus a default `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexManifest {
    pub version: u64,
    pub k: u64,
    /// Absolute path of the reference features.
    pub source: PathBuf,
    /// SHA-256 of the reference file.
    pub checksum: String,
    pub count: usize,
    pub dim: usize,
}

pub const INDEX_VERSION: u64 = 1;

impl IndexManifest {
    pub fn load(path: &Path) -> giqa_core::Result<Self> {
        let m: Self = json::read_file(path)?;
        if m.version != INDEX_VERSION {
            return Err(Error::VersionMismatch {
                what: "KNN index",
                found: m.version,
                expected: INDEX_VERSION,
            });
        }
        Ok(m)
    }

    /// Reads the reference features, checking they are unchanged.
    pub fn load_reference(&self, run: &mut Run) -> giqa_core::Result<giqa_core::FeatureMatrix> {
        let found = sha256_file(&self.source)?;
        if found != self.checksum {
            return Err(Error::ChecksumMismatch {
                path: self.source.clone(),
                expected: self.checksum.clone(),
                found,
            });
        }
        giqa_core::read_features(run.input(&self.source)?)
    }
}
