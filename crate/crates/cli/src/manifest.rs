use std::collections::BTreeMap;
use std::path::Path;

use icmvc::dataio;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::Failure;

pub const MANIFEST: &str = "manifest.json";

/// SHA-256 of every file under `dir` except the manifest, keyed by the
/// `/`-separated relative path.
pub fn checksums(dir: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Failure {
            code: crate::EXIT_DATA,
            message: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("walk stays inside dir");
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if key == MANIFEST || key.starts_with('.') {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| Failure {
            code: crate::EXIT_DATA,
            message: format!("{}: {e}", entry.path().display()),
        })?;
        out.insert(key, hex::encode(Sha256::digest(&bytes)));
    }
    Ok(out)
}

/// Writes `manifest.json` into `dir`. `body` carries the command-specific
/// fields (config, dataset, seeds); the command line, timestamp and
/// artifact checksums are added here.
pub fn write(dir: &Path, command: &str, body: Value) -> Result<(), Failure> {
    let mut manifest = json!({
        "command": command,
        "args": std::env::args().collect::<Vec<_>>(),
        "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "output_dir": dir.display().to_string(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(m), Value::Object(extra)) = (&mut manifest, body) {
        m.extend(extra);
    }
    manifest["checksums"] = json!(checksums(dir)?);
    let mut text = serde_json::to_string_pretty(&manifest).expect("json value serializes");
    text.push('\n');
    dataio::write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(())
}
