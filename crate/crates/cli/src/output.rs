//! Output files and the run manifest.
//!
//! Every file is named `<subcommand>...` and carries the schema version,
//! config hash and seed: JSON files in an envelope, CSV files in a leading
//! `#` comment line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

pub struct Output {
    dir: PathBuf,
    subcommand: &'static str,
    config_hash: String,
    seed: u64,
    files: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    subcommand: &'a str,
    config_hash: &'a str,
    seed: u64,
    manifest: String,
    data: &'a T,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    subcommand: &'a str,
    config_hash: &'a str,
    seed: u64,
    trials: Option<usize>,
    threads: Option<usize>,
    versions: Versions,
    config_file: String,
    outputs: &'a [String],
    wall_time_s: f64,
    verdict: &'a str,
}

#[derive(Serialize)]
struct Versions {
    xordlab_cli: &'static str,
    xordlab_core: &'static str,
}

impl Output {
    pub fn new(dir: &Path, subcommand: &'static str, config_hash: String, seed: u64) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            subcommand,
            config_hash,
            seed,
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.subcommand)
    }

    /// `<subcommand><suffix>` inside the output directory.
    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.subcommand))
    }

    fn record(&mut self, path: &Path) {
        let name = path.file_name().expect("file name").to_string_lossy().into_owned();
        self.files.push(name);
    }

    pub fn raw(&mut self, suffix: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let p = self.path(suffix);
        fs::write(&p, bytes)?;
        self.record(&p);
        Ok(p)
    }

    /// Registers a file written by someone else.
    pub fn external(&mut self, path: &Path) {
        self.record(path);
    }

    pub fn json<T: Serialize>(&mut self, suffix: &str, data: &T) -> anyhow::Result<PathBuf> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            subcommand: self.subcommand,
            config_hash: &self.config_hash,
            seed: self.seed,
            manifest: self.manifest_name(),
            data,
        };
        let text = serde_json::to_string_pretty(&env)? + "\n";
        self.raw(suffix, text.as_bytes())
    }

    fn comment(&self) -> String {
        format!(
            "# schema_version={} subcommand={} config_hash={} seed={} manifest={}\n",
            SCHEMA_VERSION,
            self.subcommand,
            self.config_hash,
            self.seed,
            self.manifest_name()
        )
    }

    /// CSV built by `fill`, preceded by the comment line.
    pub fn csv<F>(&mut self, suffix: &str, fill: F) -> anyhow::Result<PathBuf>
    where
        F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> anyhow::Result<()>,
    {
        let mut body = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut body);
            fill(&mut w)?;
            w.flush()?;
        }
        self.csv_bytes(suffix, &body)
    }

    pub fn csv_bytes(&mut self, suffix: &str, body: &[u8]) -> anyhow::Result<PathBuf> {
        let mut bytes = self.comment().into_bytes();
        bytes.extend_from_slice(body);
        self.raw(suffix, &bytes)
    }

    pub fn finish(self, config_toml: &str, trials: Option<usize>, threads: Option<usize>, verdict: &str) -> anyhow::Result<PathBuf> {
        let cfg_path = self.path(".config.toml");
        fs::write(&cfg_path, config_toml)?;
        let mut outputs = self.files.clone();
        outputs.push(cfg_path.file_name().expect("name").to_string_lossy().into_owned());
        let m = Manifest {
            schema_version: SCHEMA_VERSION,
            subcommand: self.subcommand,
            config_hash: &self.config_hash,
            seed: self.seed,
            trials,
            threads,
            versions: Versions {
                xordlab_cli: env!("CARGO_PKG_VERSION"),
                xordlab_core: xordlab::VERSION,
            },
            config_file: cfg_path.file_name().expect("name").to_string_lossy().into_owned(),
            outputs: &outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            verdict,
        };
        let p = self.dir.join(self.manifest_name());
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(p)
    }
}
