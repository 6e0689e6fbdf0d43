//! Embedding directories, run manifests and stage timers.
//!
//! An embedding directory holds `index.json` (feature configuration, optional
//! attribute scaler and one entry per record), `pq/*.pqe` caches, optional
//! `wl/*.wle` caches and `manifest.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use swwl::artifact::{check_feature_set, read_pq, ArtifactError};
use swwl::graph::AttributeScaler;
use swwl::{FeatureConfig, GraphFeatures};

pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    /// Cache files relative to the directory, one per block.
    pub files: Vec<String>,
    pub scalars: Vec<f64>,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub attr_dim: usize,
    pub scalar_dim: usize,
    pub config: FeatureConfig,
    pub scaler: Option<AttributeScaler>,
    pub records: Vec<IndexEntry>,
}

impl EmbeddingIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ArtifactError::Malformed(format!("{}: {e}", path.display())).into())
    }

    pub fn targets(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.target).collect()
    }
}

/// Loads every cache listed in `dir/index.json` and checks that they share
/// one fingerprint per block.
pub fn load_features(dir: &Path) -> Result<(EmbeddingIndex, Vec<GraphFeatures>)> {
    let index = EmbeddingIndex::load(dir)?;
    if index.records.is_empty() {
        bail!(ArtifactError::Malformed(format!("{} lists no records", dir.display())));
    }
    let mut features = Vec::with_capacity(index.records.len());
    for entry in &index.records {
        let mut blocks = Vec::with_capacity(entry.files.len());
        for file in &entry.files {
            let path = dir.join(file);
            let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let e = read_pq(&mut BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
            if e.graph_id != entry.id {
                bail!(ArtifactError::Malformed(format!(
                    "{} holds `{}`, index expects `{}`",
                    path.display(),
                    e.graph_id,
                    entry.id
                )));
            }
            blocks.push(e);
        }
        features.push(GraphFeatures { id: entry.id.clone(), blocks, scalars: entry.scalars.clone() });
    }
    check_feature_set(&features)?;
    Ok((index, features))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// `<path>.manifest.json` next to a single-file output.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

/// Wall-clock timer for named stages of one command.
pub struct Stages {
    start: Instant,
    stages: Vec<StageTiming>,
}

impl Stages {
    pub fn new() -> Self {
        Self { start: Instant::now(), stages: Vec::new() }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(StageTiming { stage: stage.to_string(), ms: t.elapsed().as_secs_f64() * 1e3 });
        out
    }

    pub fn finish(self) -> (Vec<StageTiming>, f64) {
        (self.stages, self.start.elapsed().as_secs_f64() * 1e3)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub q2: f64,
}

/// Record of one command invocation. Timings are in milliseconds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub projections: Option<usize>,
    pub quantiles: Option<usize>,
    pub iterations_kept: Option<Vec<usize>>,
    pub quantile_rule: Option<String>,
    pub kernel: Option<serde_json::Value>,
    pub settings: serde_json::Value,
    pub metrics: Option<Metrics>,
    pub timings_ms: Vec<StageTiming>,
    pub total_ms: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings: serde_json::Value::Null,
            ..Default::default()
        }
    }

    pub fn with_features(mut self, cfg: &FeatureConfig) -> Self {
        self.seed = Some(cfg.seed);
        self.projections = Some(cfg.projections);
        self.quantiles = Some(cfg.quantiles);
        self.iterations_kept = Some(cfg.wl.iterations_kept().to_vec());
        self.quantile_rule = Some(cfg.rule.as_str().to_string());
        self
    }

    pub fn write(mut self, path: &Path, stages: Stages) -> Result<()> {
        let (timings, total) = stages.finish();
        self.timings_ms = timings;
        self.total_ms = total;
        write_json(path, &self)
    }
}

pub fn display(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}
