//! `swwl`: embed attributed graphs, assemble SWWL Gram matrices and run GP
//! regression, with every intermediate result cached on disk.
//!
//! Exit codes: 0 ok, 2 input validation, 3 fingerprint mismatch, 4 numerical
//! failure, 1 anything else.

mod bench;
mod store;

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use swwl::artifact::{
    read_gram_binary, read_gram_text, read_model, write_gram_binary, write_gram_text, write_model, write_pq,
    write_wl, ArtifactError, MAGIC_GRAM,
};
use swwl::gp::{q2, rmse};
use swwl::graph::{load_dataset, save_dataset, AttributeScaler, Dataset, GraphError};
use swwl::kernels::{check_psd, combined_fingerprint, kernel_from_distances, pairwise_distances, GramFingerprint, GramMatrix, PsdReport};
use swwl::synth::{generate, RggConfig};
use swwl::wl::{embed, skip_step, WlError};
use swwl::{
    DatasetError, FeatureConfig, FeatureSpace, GpError, GpModel, GpSettings, KernelConfig, KernelError,
    QuantileRule, SwError, WlConfig,
};

use store::{
    display, load_features, manifest_path_for, write_json, EmbeddingIndex, IndexEntry, Metrics, RunManifest,
    Stages, INDEX_FILE, MANIFEST_FILE,
};

#[derive(Parser)]
#[command(name = "swwl", version, about = "Sliced Wasserstein Weisfeiler-Lehman graph kernel pipeline")]
struct Cli {
    /// Worker threads for embedding and Gram assembly (0 = all cores).
    #[arg(long, global = true, env = "SWWL_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic random geometric graph dataset.
    Generate(GenerateArgs),
    /// Compute projected quantile embeddings for every record of a dataset.
    Embed(EmbedArgs),
    /// Assemble a Gram or squared-distance matrix from cached embeddings.
    Gram(GramArgs),
    /// Fit a GP regression model on cached embeddings with targets.
    Fit(FitArgs),
    /// Predict with a fitted model.
    Predict(PredictArgs),
    /// Time the pipeline stages over a sweep of sizes and settings.
    Bench(bench::BenchArgs),
    /// Report the smallest eigenvalue of a Gram file.
    CheckPsd(CheckPsdArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    graphs: usize,
    /// Extra records written to --test-out, drawn from the same generator.
    #[arg(long, default_value_t = 0)]
    test_graphs: usize,
    #[arg(long, requires = "test_graphs")]
    test_out: Option<PathBuf>,
    /// Nominal node count per graph.
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    /// Relative spread of node counts around --nodes.
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    /// Connection radius (default sqrt(2 ln n / (pi n)) per graph).
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 2)]
    attr_dim: usize,
    /// Number of scalar covariates per record.
    #[arg(long, default_value_t = 0)]
    scalars: usize,
    #[arg(long, default_value_t = 0.02)]
    attr_noise: f64,
    /// Relative noise on the target.
    #[arg(long, default_value_t = 0.01)]
    target_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "rgg-")]
    id_prefix: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IterationSpec {
    List(Vec<usize>),
    SqrtSkip,
}

impl FromStr for IterationSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "sqrt-skip" {
            return Ok(Self::SqrtSkip);
        }
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad iteration `{t}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(Self::List)
    }
}

impl IterationSpec {
    pub fn resolve(&self, dataset: &Dataset) -> Result<WlConfig> {
        Ok(match self {
            Self::List(its) => WlConfig::new(its.clone()).map_err(Usage::from)?,
            Self::SqrtSkip => WlConfig::skip(skip_step(dataset.mean_node_count())),
        })
    }
}

#[derive(Args)]
struct EmbedArgs {
    /// Dataset (JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Reuse the feature configuration and scaler of an existing embedding directory.
    #[arg(long, conflicts_with_all = ["iterations", "projections", "quantiles", "seed", "order", "quantile_rule", "aniso", "standardize"])]
    like: Option<PathBuf>,
    /// Kept WL iterations: a list such as `0,1,2,3`, or `sqrt-skip` for
    /// `0,T,2T,3T` with `T = round(sqrt(mean node count))`.
    #[arg(long)]
    iterations: Option<IterationSpec>,
    #[arg(long)]
    projections: Option<usize>,
    #[arg(long)]
    quantiles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wasserstein order r.
    #[arg(long)]
    order: Option<f64>,
    /// `linear` or `inverse-cdf`.
    #[arg(long)]
    quantile_rule: Option<QuantileRule>,
    /// One embedding per kept iteration (ASWWL).
    #[arg(long)]
    aniso: bool,
    /// Standardize node attributes with statistics of this dataset.
    #[arg(long)]
    standardize: bool,
    /// Also write the WL node embeddings.
    #[arg(long)]
    wl_cache: bool,
}

#[derive(Args)]
struct GramArgs {
    /// Embedding directory.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// SWWL precision (applied to every block for anisotropic embeddings).
    #[arg(long, conflicts_with_all = ["gammas", "distances_only"])]
    gamma: Option<f64>,
    /// Per-iteration precisions for anisotropic embeddings.
    #[arg(long, value_delimiter = ',', conflicts_with = "distances_only")]
    gammas: Option<Vec<f64>>,
    /// Export squared SW distances instead of a kernel.
    #[arg(long)]
    distances_only: bool,
    /// Matern-5/2 lengthscales, one per scalar covariate.
    #[arg(long, value_delimiter = ',')]
    lengthscales: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    /// Added to the diagonal.
    #[arg(long, default_value_t = 0.0)]
    nugget: f64,
    /// Write the binary format instead of text.
    #[arg(long)]
    binary: bool,
    /// Report the smallest eigenvalue of the result.
    #[arg(long)]
    check_psd: bool,
    #[arg(long, default_value_t = 1e-8)]
    psd_tol: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    features: PathBuf,
    /// Model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = GpSettings::default().nugget)]
    nugget: f64,
    #[arg(long, default_value_t = GpSettings::default().multistarts)]
    multistarts: usize,
    #[arg(long, default_value_t = GpSettings::default().max_evals)]
    max_evals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed ranges (graph blocks first, then scalars); skips optimization.
    #[arg(long, value_delimiter = ',')]
    ranges: Option<Vec<f64>>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Predictions CSV: `id,mean,scale,lo95,hi95`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckPsdArgs {
    /// Gram file, text or binary.
    #[arg(long)]
    gram: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

/// Invalid user input that is not tied to a library error type.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

impl From<WlError> for Usage {
    fn from(e: WlError) -> Self {
        Self(e.to_string())
    }
}

/// A result the command computed but that fails a numerical check.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn sw_code(e: &SwError) -> u8 {
    match e {
        SwError::ConfigMismatch(..) => 3,
        SwError::DegenerateDraw => 4,
        _ => 2,
    }
}

fn kernel_code(e: &KernelError) -> u8 {
    match e {
        KernelError::Sw(s) => sw_code(s),
        KernelError::NonSymmetric(_) => 4,
        _ => 2,
    }
}

fn gp_code(e: &GpError) -> u8 {
    match e {
        GpError::Kernel(k) => kernel_code(k),
        GpError::CholeskyFailure { .. } | GpError::OptimizationFailure { .. } => 4,
        _ => 2,
    }
}

fn classify(e: &(dyn std::error::Error + 'static)) -> Option<u8> {
    if let Some(e) = e.downcast_ref::<ArtifactError>() {
        return Some(match e {
            ArtifactError::Mismatch(_) => 3,
            ArtifactError::Gp(g) => gp_code(g),
            _ => 2,
        });
    }
    if let Some(e) = e.downcast_ref::<SwError>() {
        return Some(sw_code(e));
    }
    if let Some(e) = e.downcast_ref::<KernelError>() {
        return Some(kernel_code(e));
    }
    if let Some(e) = e.downcast_ref::<GpError>() {
        return Some(gp_code(e));
    }
    if e.is::<NumericalFailure>() {
        return Some(4);
    }
    if e.is::<DatasetError>() || e.is::<GraphError>() || e.is::<WlError>() || e.is::<Usage>() {
        return Some(2);
    }
    if e.is::<std::io::Error>() || e.is::<serde_json::Error>() {
        return Some(2);
    }
    None
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(classify).unwrap_or(1)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Gram(a) => cmd_gram(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Bench(a) => bench::cmd_bench(a),
        Command::CheckPsd(a) => cmd_check_psd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    if a.test_graphs > 0 && a.test_out.is_none() {
        bail!(usage("--test-graphs needs --test-out"));
    }
    let mut stages = Stages::new();
    let cfg = RggConfig {
        graphs: a.graphs + a.test_graphs,
        nodes: a.nodes,
        jitter: a.jitter,
        radius: a.radius,
        attr_dim: a.attr_dim,
        scalar_dim: a.scalars,
        attr_noise: a.attr_noise,
        target_noise: a.target_noise,
        seed: a.seed,
        id_prefix: a.id_prefix.clone(),
    };
    if a.graphs == 0 {
        bail!(usage("--graphs must be positive"));
    }
    let all = stages.time("generate", || generate(&cfg))?;
    let mut outputs = vec![a.out.as_path()];
    stages.time("write", || -> Result<()> {
        let (train, test) = all.records().split_at(a.graphs);
        save_dataset(&Dataset::new(train.to_vec())?, &a.out)?;
        if let Some(path) = &a.test_out {
            save_dataset(&Dataset::new(test.to_vec())?, path)?;
        }
        Ok(())
    })?;
    if let Some(p) = &a.test_out {
        outputs.push(p);
    }
    let mut manifest = RunManifest::new("generate");
    manifest.outputs = display(&outputs);
    manifest.seed = Some(a.seed);
    manifest.settings = serde_json::to_value(&cfg)?;
    manifest.write(&manifest_path_for(&a.out), stages)
}

fn resolve_feature_config(a: &EmbedArgs, dataset: &Dataset) -> Result<(FeatureConfig, Option<AttributeScaler>)> {
    if let Some(dir) = &a.like {
        let index = EmbeddingIndex::load(dir)?;
        if index.attr_dim != dataset.attr_dim() {
            bail!(ArtifactError::Mismatch(format!(
                "{} was built for attribute dimension {}, dataset has {}",
                dir.display(),
                index.attr_dim,
                dataset.attr_dim()
            )));
        }
        return Ok((index.config, index.scaler));
    }
    let defaults = FeatureConfig::regression_defaults(0);
    let wl = match &a.iterations {
        Some(spec) => spec.resolve(dataset)?,
        None => defaults.wl.clone(),
    };
    let cfg = FeatureConfig {
        wl,
        projections: a.projections.unwrap_or(defaults.projections),
        quantiles: a.quantiles.unwrap_or(defaults.quantiles),
        order: a.order.unwrap_or(defaults.order),
        seed: a.seed.unwrap_or(defaults.seed),
        rule: a.quantile_rule.unwrap_or(defaults.rule),
        anisotropic: a.aniso,
    };
    let scaler = a.standardize.then(|| AttributeScaler::fit(dataset));
    Ok((cfg, scaler))
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let mut stages = Stages::new();
    let dataset = stages
        .time("load", || load_dataset(&a.input))
        .with_context(|| format!("reading {}", a.input.display()))?;
    let (cfg, scaler) = resolve_feature_config(&a, &dataset)?;
    let dataset = match &scaler {
        Some(s) => stages.time("standardize", || s.apply(&dataset))?,
        None => dataset,
    };
    let space = FeatureSpace::new(cfg.clone(), dataset.attr_dim())?;
    let features = stages.time("embed", || space.embed_dataset(&dataset))?;

    let pq_dir = a.out.join("pq");
    fs::create_dir_all(&pq_dir).with_context(|| format!("creating {}", pq_dir.display()))?;
    let kept = cfg.wl.iterations_kept();
    let mut records = Vec::with_capacity(features.len());
    stages.time("write", || -> Result<()> {
        for (i, (f, rec)) in features.iter().zip(dataset.records()).enumerate() {
            let mut files = Vec::with_capacity(f.blocks.len());
            for (k, block) in f.blocks.iter().enumerate() {
                let name = if cfg.anisotropic { format!("pq/{i:06}.h{}.pqe", kept[k]) } else { format!("pq/{i:06}.pqe") };
                let mut w = store::create_file(&a.out.join(&name))?;
                write_pq(&mut w, block)?;
                w.flush()?;
                files.push(name);
            }
            records.push(IndexEntry { id: f.id.clone(), files, scalars: f.scalars.clone(), target: rec.target });
        }
        Ok(())
    })?;
    if a.wl_cache {
        stages.time("wl-cache", || -> Result<()> {
            for (i, rec) in dataset.records().iter().enumerate() {
                let mut w = store::create_file(&a.out.join(format!("wl/{i:06}.wle")))?;
                write_wl(&mut w, &embed(&rec.graph, &cfg.wl, &rec.id))?;
                w.flush()?;
            }
            Ok(())
        })?;
    }
    let index = EmbeddingIndex {
        attr_dim: dataset.attr_dim(),
        scalar_dim: dataset.scalar_dim(),
        config: cfg.clone(),
        scaler,
        records,
    };
    write_json(&a.out.join(INDEX_FILE), &index)?;

    let mut manifest = RunManifest::new("embed").with_features(&cfg);
    manifest.inputs = display(&[&a.input]);
    manifest.outputs = display(&[&a.out]);
    manifest.settings = json!({
        "records": dataset.len(),
        "mean_node_count": dataset.mean_node_count(),
        "anisotropic": cfg.anisotropic,
        "order": cfg.order,
        "standardize": index.scaler.is_some(),
        "like": a.like.as_ref().map(|p| p.display().to_string()),
    });
    manifest.write(&a.out.join(MANIFEST_FILE), stages)?;
    println!("embedded {} records, iterations {:?}", dataset.len(), kept);
    Ok(())
}

fn cmd_gram(a: GramArgs) -> Result<()> {
    let mut stages = Stages::new();
    let (index, features) = stages.time("load", || load_features(&a.features))?;
    let blocks = features[0].blocks.len();
    let kernel = if a.distances_only {
        if blocks != 1 {
            bail!(usage("--distances-only needs isotropic embeddings"));
        }
        None
    } else {
        let gammas_aniso = match (&a.gammas, a.gamma) {
            (Some(g), _) => Some(g.clone()),
            (None, Some(g)) if blocks > 1 => Some(vec![g; blocks]),
            (None, Some(_)) => None,
            (None, None) => bail!(usage("pass --gamma, --gammas or --distances-only")),
        };
        let cfg = KernelConfig {
            gamma: a.gamma.unwrap_or(1.0),
            gammas_aniso,
            matern_lengthscales: a.lengthscales.clone(),
            variance: a.variance,
            nugget: a.nugget,
        };
        cfg.validate()?;
        if cfg.matern_lengthscales.len() != index.scalar_dim {
            bail!(KernelError::LengthMismatch {
                what: "lengthscales",
                expected: index.scalar_dim,
                got: cfg.matern_lengthscales.len()
            });
        }
        cfg.graph_precisions(blocks)?;
        Some(cfg)
    };
    let dist = stages.time("distances", || pairwise_distances(&features))?;
    let values = match &kernel {
        Some(cfg) => stages.time("kernel", || kernel_from_distances(&dist, cfg, true))?,
        None => dist.graph_sq[0].clone(),
    };
    let gram = GramMatrix {
        values,
        row_ids: features.iter().map(|f| f.id.clone()).collect(),
        fingerprint: GramFingerprint { features: combined_fingerprint(&features[0]), blocks, kernel: kernel.clone() },
    };
    stages.time("write", || -> Result<()> {
        let mut w = store::create_file(&a.out)?;
        if a.binary {
            write_gram_binary(&mut w, &gram)?;
        } else {
            write_gram_text(&mut w, &gram)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut psd = None;
    if a.check_psd {
        let report = stages.time("check-psd", || check_psd(&gram.values, a.psd_tol))?;
        println!("min_eigenvalue={:e} is_psd={}", report.min_eigenvalue, report.is_psd);
        psd = Some(json!({ "min_eigenvalue": report.min_eigenvalue, "is_psd": report.is_psd, "tol": a.psd_tol }));
    }
    let mut manifest = RunManifest::new("gram").with_features(&index.config);
    manifest.inputs = display(&[&a.features]);
    manifest.outputs = display(&[&a.out]);
    manifest.kernel = kernel.as_ref().map(serde_json::to_value).transpose()?;
    manifest.settings = json!({ "records": gram.len(), "binary": a.binary, "distances_only": a.distances_only, "psd": psd });
    manifest.write(&manifest_path_for(&a.out), stages)
}

fn require_targets(index: &EmbeddingIndex) -> Result<Vec<f64>> {
    index.targets().ok_or_else(|| {
        let missing: Vec<&str> =
            index.records.iter().filter(|r| r.target.is_none()).map(|r| r.id.as_str()).take(5).collect();
        usage(format!("records without targets: {}", missing.join(", ")))
    })
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let mut stages = Stages::new();
    let (index, features) = stages.time("load", || load_features(&a.features))?;
    let targets = require_targets(&index)?;
    let settings = GpSettings { nugget: a.nugget, multistarts: a.multistarts, max_evals: a.max_evals, seed: a.seed };
    let model = stages.time("fit", || match &a.ranges {
        Some(r) => GpModel::from_ranges(&features, &targets, r.clone(), a.nugget),
        None => GpModel::fit(&features, &targets, &settings),
    })?;
    stages.time("write", || -> Result<()> {
        let mut w = store::create_file(&a.out)?;
        write_model(&mut w, &model)?;
        w.flush()?;
        Ok(())
    })?;
    let blocks = features[0].blocks.len();
    println!(
        "ranges={:?} graph_precisions={:?} theta={} sigma2={} log_posterior={}",
        model.hyper.ranges,
        model.hyper.graph_precisions(blocks),
        model.hyper.theta,
        model.hyper.sigma2,
        model.log_posterior
    );
    let mut manifest = RunManifest::new("fit").with_features(&index.config);
    manifest.inputs = display(&[&a.features]);
    manifest.outputs = display(&[&a.out]);
    manifest.kernel = Some(json!({
        "ranges": model.hyper.ranges,
        "graph_precisions": model.hyper.graph_precisions(blocks),
        "nugget": model.hyper.nugget,
        "theta": model.hyper.theta,
        "sigma2": model.hyper.sigma2,
    }));
    manifest.settings = serde_json::to_value(&settings)?;
    manifest.write(&manifest_path_for(&a.out), stages)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let mut stages = Stages::new();
    let model = stages.time("load-model", || -> Result<GpModel> {
        let f = File::open(&a.model).with_context(|| format!("opening {}", a.model.display()))?;
        Ok(read_model(&mut BufReader::new(f))?)
    })?;
    let (index, features) = stages.time("load", || load_features(&a.features))?;
    let trained = &model.train[0];
    if features[0].blocks.len() != trained.blocks.len()
        || features[0].blocks.iter().zip(&trained.blocks).any(|(x, y)| x.fingerprint != y.fingerprint)
    {
        bail!(ArtifactError::Mismatch(format!(
            "{} [{}] does not match the model [{}]",
            a.features.display(),
            features[0].blocks[0].fingerprint,
            trained.blocks[0].fingerprint
        )));
    }
    let pred = stages.time("predict", || model.predict(&features))?;
    let intervals = pred.intervals(0.95);
    stages.time("write", || -> Result<()> {
        let mut w = store::create_file(&a.out)?;
        writeln!(w, "id,mean,scale,lo95,hi95")?;
        for (i, id) in pred.ids.iter().enumerate() {
            let (lo, hi) = intervals[i];
            writeln!(w, "{},{},{},{},{}", csv_field(id), pred.mean[i], pred.marginal_scale(i), lo, hi)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let metrics = match index.targets() {
        Some(truth) => {
            let m = Metrics { rmse: rmse(pred.mean.as_slice(), &truth)?, q2: q2(pred.mean.as_slice(), &truth)? };
            println!("rmse={} q2={}", m.rmse, m.q2);
            Some(m)
        }
        None => None,
    };
    let mut manifest = RunManifest::new("predict").with_features(&index.config);
    manifest.inputs = display(&[&a.model, &a.features]);
    manifest.outputs = display(&[&a.out]);
    manifest.metrics = metrics;
    manifest.settings = json!({ "records": pred.len(), "dof": pred.dof });
    manifest.write(&manifest_path_for(&a.out), stages)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a text or binary Gram file and checks it.
fn check_gram_file(path: &Path, tol: f64) -> Result<PsdReport> {
    let mut bytes = Vec::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let values = if bytes.starts_with(MAGIC_GRAM) {
        read_gram_binary(&mut bytes.as_slice())?.values
    } else {
        read_gram_text(bytes.as_slice())?.values
    };
    Ok(check_psd(&values, tol)?)
}

fn cmd_check_psd(a: CheckPsdArgs) -> Result<()> {
    let mut stages = Stages::new();
    let report = stages.time("check-psd", || check_gram_file(&a.gram, a.tol))?;
    println!("min_eigenvalue={:e} is_psd={}", report.min_eigenvalue, report.is_psd);
    let mut manifest = RunManifest::new("check-psd");
    manifest.inputs = display(&[&a.gram]);
    manifest.settings = json!({ "tol": a.tol, "min_eigenvalue": report.min_eigenvalue, "is_psd": report.is_psd });
    let mut name = a.gram.file_name().unwrap_or_default().to_os_string();
    name.push(".check-psd.manifest.json");
    manifest.write(&a.gram.with_file_name(name), stages)?;
    if !report.is_psd {
        return Err(anyhow!(NumericalFailure(format!(
            "not positive semidefinite: min eigenvalue {:e}",
            report.min_eigenvalue
        ))));
    }
    Ok(())
}
