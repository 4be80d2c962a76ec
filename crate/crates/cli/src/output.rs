use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use msl_core::experiments::FORMAT_VERSION;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::Failure;

/// Writes the files of one run into `out_dir`. Everything is written from the
/// calling thread, in call order.
pub struct Bundle {
    dir: PathBuf,
    config: Value,
    log: Vec<String>,
}

impl Bundle {
    pub fn create(cfg: &RunConfig) -> Result<Self, Failure> {
        let dir = PathBuf::from(&cfg.out_dir);
        fs::create_dir_all(&dir).map_err(Failure::io)?;
        Ok(Self {
            dir,
            config: serde_json::to_value(cfg).expect("config serializes"),
            log: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn log(&mut self, line: impl Into<String>) {
        let line = line.into();
        eprintln!("{line}");
        self.log.push(line);
    }

    /// `{format_version, command, config, ...fields}` as pretty JSON.
    pub fn json(&self, name: &str, command: &str, fields: Value) -> Result<(), Failure> {
        let mut obj = Map::new();
        obj.insert("format_version".into(), json!(FORMAT_VERSION));
        obj.insert("command".into(), json!(command));
        obj.insert("config".into(), self.config.clone());
        if let Value::Object(extra) = fields {
            obj.extend(extra);
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(|e| Failure::io(e.into()))?;
        text.push('\n');
        fs::write(self.path(name), text).map_err(Failure::io)
    }

    /// CSV preceded by `# msl-v1` and `# config {...}` comment lines.
    pub fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<(), Failure>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        writeln!(buf, "# {FORMAT_VERSION}").map_err(Failure::io)?;
        writeln!(buf, "# config {}", self.config).map_err(Failure::io)?;
        body(&mut buf)?;
        fs::write(self.path(name), buf).map_err(Failure::io)
    }

    pub fn raw(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        fs::write(self.path(name), bytes).map_err(Failure::io)
    }

    pub fn finish_log(&self) -> Result<(), Failure> {
        let mut text = self.log.join("\n");
        text.push('\n');
        fs::write(self.path("log.txt"), text).map_err(Failure::io)
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Result of checking one file.
pub fn validate_file(path: &Path) -> Result<(), String> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "json" => {
            let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
            let v: Value = serde_json::from_str(&text).map_err(|e| format!("not JSON: {e}"))?;
            if v.get("format_version").and_then(Value::as_str) != Some(FORMAT_VERSION) {
                return Err(format!("missing or wrong format_version (want {FORMAT_VERSION})"));
            }
            if !v.get("config").is_some_and(Value::is_object) {
                return Err("missing config".into());
            }
            Ok(())
        }
        "csv" => {
            let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
            let mut lines = text.lines();
            if lines.next() != Some(&format!("# {FORMAT_VERSION}")) {
                return Err("missing format version line".into());
            }
            let cfg = lines
                .next()
                .and_then(|l| l.strip_prefix("# config "))
                .ok_or("missing config line")?;
            let v: Value = serde_json::from_str(cfg).map_err(|e| format!("config line is not JSON: {e}"))?;
            if !v.is_object() {
                return Err("config line is not an object".into());
            }
            Ok(())
        }
        "bin" => {
            let f = fs::File::open(path).map_err(|e| e.to_string())?;
            msl_core::grid::GridMap::read_binary(std::io::BufReader::new(f)).map_err(|e| e.to_string())?;
            Ok(())
        }
        _ => Err(format!("unknown file type {ext:?}")),
    }
}
