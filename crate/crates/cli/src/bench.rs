//! Stage timing sweep over node counts, projection counts and quantile counts.
//!
//! CSV columns: `n,N,P,Q,stage,ms,rmse`. `rmse` is filled on `predict` rows
//! when the dataset has targets and is empty otherwise.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;
use swwl::gp::rmse;
use swwl::graph::{load_dataset, Dataset};
use swwl::kernels::{kernel_from_distances, pairwise_distances};
use swwl::synth::{generate, RggConfig};
use swwl::{FeatureConfig, FeatureSpace, GpModel, GpSettings, KernelConfig};

use crate::store::{create_file, display, manifest_path_for, RunManifest, Stages};
use crate::{usage, IterationSpec};

#[derive(Args)]
pub struct BenchArgs {
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Benchmark this dataset instead of generated ones.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Nominal node counts of the generated datasets.
    #[arg(long, value_delimiter = ',', default_value = "100,1000")]
    nodes: Vec<usize>,
    /// Graphs per generated dataset.
    #[arg(long, default_value_t = 100)]
    graphs: usize,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100")]
    projections: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,100,500,1000")]
    quantiles: Vec<usize>,
    #[arg(long, default_value = "0,1,2,3")]
    iterations: IterationSpec,
    #[arg(long, default_value_t = 2)]
    attr_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leading fraction of records used for fitting when targets exist.
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    /// Timings only.
    #[arg(long)]
    no_rmse: bool,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn cmd_bench(a: BenchArgs) -> Result<()> {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        bail!(usage("--train-fraction must lie in (0, 1)"));
    }
    let mut stages = Stages::new();
    let datasets: Vec<(usize, Dataset)> = match &a.input {
        Some(path) => {
            let ds = stages.time("load", || load_dataset(path)).with_context(|| format!("reading {}", path.display()))?;
            vec![(ds.mean_node_count().round() as usize, ds)]
        }
        None => a
            .nodes
            .iter()
            .map(|&n| {
                let cfg = RggConfig { graphs: a.graphs, nodes: n, attr_dim: a.attr_dim, seed: a.seed, ..Default::default() };
                Ok((n, stages.time(&format!("generate-n{n}"), || generate(&cfg))?))
            })
            .collect::<Result<_>>()?,
    };

    let mut w = create_file(&a.out)?;
    writeln!(w, "n,N,P,Q,stage,ms,rmse")?;
    for (n, ds) in &datasets {
        let n_records = ds.len();
        let wl = a.iterations.resolve(ds)?;
        let targets = ds.targets().filter(|_| !a.no_rmse);
        let n_train = ((n_records as f64 * a.train_fraction).round() as usize).clamp(2, n_records.saturating_sub(1).max(2));
        for &p in &a.projections {
            for &q in &a.quantiles {
                let cfg = FeatureConfig {
                    wl: wl.clone(),
                    projections: p,
                    quantiles: q,
                    seed: a.seed,
                    ..FeatureConfig::regression_defaults(a.seed)
                };
                let row = |stage: &str, ms: f64, err: Option<f64>| {
                    format!("{n},{n_records},{p},{q},{stage},{ms:.3},{}", err.map(|e| e.to_string()).unwrap_or_default())
                };
                let t = Instant::now();
                let space = FeatureSpace::new(cfg, ds.attr_dim())?;
                let features = space.embed_dataset(ds)?;
                writeln!(w, "{}", row("embed", ms_since(t), None))?;

                let t = Instant::now();
                let dist = pairwise_distances(&features)?;
                kernel_from_distances(&dist, &KernelConfig::default(), true)?;
                writeln!(w, "{}", row("gram", ms_since(t), None))?;

                if let Some(y) = &targets {
                    if n_train >= n_records {
                        continue;
                    }
                    let t = Instant::now();
                    let settings = GpSettings { seed: a.seed, ..Default::default() };
                    let model = GpModel::fit(&features[..n_train], &y[..n_train], &settings)?;
                    writeln!(w, "{}", row("fit", ms_since(t), None))?;
                    let t = Instant::now();
                    let pred = model.predict(&features[n_train..])?;
                    let ms = ms_since(t);
                    let err = rmse(pred.mean.as_slice(), &y[n_train..])?;
                    writeln!(w, "{}", row("predict", ms, Some(err)))?;
                }
                w.flush()?;
            }
        }
    }
    w.flush()?;

    let mut manifest = RunManifest::new("bench");
    manifest.inputs = a.input.iter().map(|p| p.display().to_string()).collect();
    manifest.outputs = display(&[&a.out]);
    manifest.seed = Some(a.seed);
    manifest.settings = json!({
        "nodes": datasets.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "graphs": a.graphs,
        "projections": a.projections,
        "quantiles": a.quantiles,
        "train_fraction": a.train_fraction,
    });
    manifest.write(&manifest_path_for(&a.out), stages)
}
