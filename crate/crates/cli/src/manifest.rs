//! Run manifests: effective configuration, inputs and outputs with SHA-256
//! digests, and timing. Everything except the `timing` object is a pure
//! function of the command line and input files.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE_NAME: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub struct Manifest {
    command: String,
    dir: PathBuf,
    started: SystemTime,
    clock: Instant,
    fields: Map<String, Value>,
    inputs: Vec<Value>,
    outputs: Vec<Value>,
}

impl Manifest {
    pub fn new(command: &str, dir: &Path) -> Self {
        Self {
            command: command.into(),
            dir: dir.to_path_buf(),
            started: SystemTime::now(),
            clock: Instant::now(),
            fields: Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.fields.insert(key.into(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.inputs.push(json!({ "path": path.display().to_string(), "sha256": digest }));
        Ok(())
    }

    /// Record a file written under the manifest directory, plus any extra fields.
    pub fn output(&mut self, path: &Path, extra: Value) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        let name = path
            .strip_prefix(&self.dir)
            .unwrap_or(path)
            .display()
            .to_string();
        let mut entry = json!({ "file": name, "sha256": digest });
        if let (Value::Object(e), Value::Object(x)) = (&mut entry, extra) {
            e.extend(x);
        }
        self.outputs.push(entry);
        Ok(())
    }

    pub fn write(self) -> Result<PathBuf, CliError> {
        let started = self
            .started
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let mut doc = Map::new();
        doc.insert("tool".into(), json!("zherald"));
        doc.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        doc.insert("command".into(), json!(self.command));
        doc.insert(
            "argv".into(),
            json!(std::env::args().skip(1).collect::<Vec<_>>()),
        );
        doc.extend(self.fields);
        doc.insert("inputs".into(), Value::Array(self.inputs));
        doc.insert("outputs".into(), Value::Array(self.outputs));
        doc.insert(
            "timing".into(),
            json!({ "started_unix_s": started, "elapsed_s": self.clock.elapsed().as_secs_f64() }),
        );
        let path = self.dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// File name to delay (ps) from a simulation manifest in `dir`, if any.
pub fn recorded_delays(dir: &Path) -> Option<HashMap<String, f64>> {
    let text = fs::read_to_string(dir.join(FILE_NAME)).ok()?;
    let doc: Value = serde_json::from_str(&text).ok()?;
    let map = doc
        .get("outputs")?
        .as_array()?
        .iter()
        .filter_map(|o| Some((o.get("file")?.as_str()?.to_string(), o.get("delta_t_ps")?.as_f64()?)))
        .collect();
    Some(map)
}
