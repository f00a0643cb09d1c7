use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ScenarioConfig;
use crate::error::CliResult;

/// Writes artifacts into one directory. Each file `name` gets a sibling
/// `name.meta.json` holding the subcommand, the resolved configuration and
/// per-file details. Nothing time- or host-dependent is recorded, and the
/// output directory itself is left out so reruns elsewhere compare equal.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    config: Value,
}

impl Output {
    pub fn create(dir: &Path, command: &'static str, config: &ScenarioConfig) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        let mut config = serde_json::to_value(config).expect("config serializes");
        if let Some(map) = config.as_object_mut() {
            map.remove("out");
        }
        Ok(Self { dir: dir.to_path_buf(), command, config })
    }

    pub fn write(&self, name: &str, body: &str, details: impl Serialize) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        let meta = json!({
            "file": name,
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "details": details,
            "config": self.config,
        });
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
        std::fs::write(self.dir.join(format!("{name}.meta.json")), text)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize, details: impl Serialize) -> CliResult<PathBuf> {
        let body = serde_json::to_string_pretty(value).expect("result serializes") + "\n";
        self.write(name, &body, details)
    }
}
