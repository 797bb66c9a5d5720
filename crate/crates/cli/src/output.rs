use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::args::Cli;

/// Output directory plus the manifest being accumulated for this run.
pub struct Run {
    dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
    results: Map<String, Value>,
}

impl Run {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
            results: Map::new(),
        })
    }

    /// Path of an output file, recorded in the manifest.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn writer(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.results.insert(key.to_string(), v);
    }

    pub fn finish(mut self, cli: &Cli) -> Result<(), Box<dyn std::error::Error>> {
        let path = self.path("manifest.json");
        let manifest = json!({
            "command": cli.command_name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cli.global.seed,
            "threads": cli.global.resolved_threads(),
            "config": cli,
            "wall_time_seconds": self.started.elapsed().as_secs_f64(),
            "outputs": self.outputs,
            "results": self.results,
        });
        std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}
