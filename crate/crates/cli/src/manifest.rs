//! Run manifests: every parameter needed to repeat a run, written as JSON
//! beside its outputs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::{Map, Value};

use pulsemag::frame_io::VideoFormat;
use pulsemag::magnify::FrameStatus;

pub const SCHEMA_VERSION: u32 = 1;

pub struct Manifest {
    fields: Map<String, Value>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &C) -> Self {
        let mut fields = Map::new();
        fields.insert("schema_version".into(), SCHEMA_VERSION.into());
        fields.insert("tool".into(), env!("CARGO_PKG_NAME").into());
        fields.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        fields.insert(
            "argv".into(),
            Value::Array(std::env::args().map(Value::String).collect()),
        );
        fields.insert(
            "command".into(),
            serde_json::to_value(command).unwrap_or(Value::Null),
        );
        Self { fields }
    }

    pub fn set<T: Serialize + ?Sized>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.fields.insert(key.into(), v);
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let text = serde_json::to_string_pretty(&self.fields)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `<dir>/<name>` for PNG-directory outputs, `<parent>/<stem>.<name>` for files.
pub fn sidecar_path(output: &Path, name: &str) -> PathBuf {
    match VideoFormat::detect(output) {
        VideoFormat::PngSequence => output.join(name),
        VideoFormat::Raw => {
            let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            output.with_file_name(format!("{stem}.{name}"))
        }
    }
}

/// Per-frame passthrough flags from a `magnify` manifest.
pub fn passthrough_flags(path: &Path) -> anyhow::Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let statuses = value
        .get("frame_status")
        .cloned()
        .with_context(|| format!("{} has no frame_status", path.display()))?;
    let statuses: Vec<FrameStatus> =
        serde_json::from_value(statuses).with_context(|| format!("bad frame_status in {}", path.display()))?;
    Ok(statuses.into_iter().map(FrameStatus::is_passthrough).collect())
}
