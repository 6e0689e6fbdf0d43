//! Random geometric graph datasets with a known regression target.
//!
//! Nodes are uniform in the unit square and joined when closer than a
//! radius. Each graph draws two shape parameters `(alpha, beta)`; node
//! attributes are smooth functions of position and those parameters plus
//! Gaussian noise. The target is a fixed functional of the attribute
//! distribution,
//! `y = mean(x1 * x2) + 0.5 * mean(x1)^2 + sum_k 0.5 * sin(pi * s_k)`,
//! perturbed by relative noise.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{AttributedGraph, Dataset, DatasetError, Edge, GraphRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RggConfig {
    pub graphs: usize,
    /// Nominal node count; each graph draws uniformly within `±jitter` of it.
    pub nodes: usize,
    pub jitter: f64,
    /// Connection radius; `None` uses `sqrt(2 ln n / (pi n))` per graph.
    pub radius: Option<f64>,
    pub attr_dim: usize,
    pub scalar_dim: usize,
    pub attr_noise: f64,
    /// Standard deviation of the multiplicative target noise.
    pub target_noise: f64,
    pub seed: u64,
    /// Prefix of record ids (`{prefix}{index}`).
    pub id_prefix: String,
}

impl Default for RggConfig {
    fn default() -> Self {
        Self {
            graphs: 100,
            nodes: 200,
            jitter: 0.1,
            radius: None,
            attr_dim: 2,
            scalar_dim: 0,
            attr_noise: 0.02,
            target_noise: 0.01,
            seed: 0,
            id_prefix: "rgg-".to_string(),
        }
    }
}

pub fn default_radius(n: usize) -> f64 {
    let n = n.max(2) as f64;
    (2.0 * n.ln() / (PI * n)).sqrt()
}

/// Edges of the geometric graph on `points` (row `i` = node `i`), found by
/// bucketing into cells of side at least `radius`. Sorted by `(u, v)`, unit weights.
pub fn geometric_edges(points: &[[f64; 2]], radius: f64) -> Vec<Edge> {
    let cells = ((1.0 / radius).floor() as usize).clamp(1, 1 << 12);
    let cell_of = |c: f64| ((c * cells as f64) as usize).min(cells - 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, p) in points.iter().enumerate() {
        buckets[cell_of(p[1]) * cells + cell_of(p[0])].push(i);
    }
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = (cell_of(p[0]), cell_of(p[1]));
        for y in cy.saturating_sub(1)..=(cy + 1).min(cells - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(cells - 1) {
                for &j in &buckets[y * cells + x] {
                    if j > i {
                        let (dx, dy) = (points[j][0] - p[0], points[j][1] - p[1]);
                        if dx * dx + dy * dy <= r2 {
                            edges.push(Edge { u: i, v: j, weight: 1.0 });
                        }
                    }
                }
            }
        }
    }
    edges.sort_by_key(|e| (e.u, e.v));
    edges
}

/// Noise-free attribute field at position `(px, py)`.
pub fn attribute_field(px: f64, py: f64, alpha: f64, beta: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| match j {
            0 => alpha * px + 0.3 * (2.0 * PI * py).sin(),
            1 => (PI * (px + beta * py)).cos(),
            _ => (PI * (j + 1) as f64 * (alpha * px + beta * py)).sin() / (j + 1) as f64,
        })
        .collect()
}

/// The noise-free target as a function of a graph's attributes and scalars.
pub fn target_functional(attributes: &DMatrix<f64>, scalars: &[f64]) -> f64 {
    let n = attributes.nrows() as f64;
    let x1 = attributes.column(0);
    let m1 = x1.sum() / n;
    let cross = if attributes.ncols() > 1 { x1.dot(&attributes.column(1)) / n } else { x1.dot(&x1) / n };
    cross + 0.5 * m1 * m1 + scalars.iter().map(|s| 0.5 * (PI * s).sin()).sum::<f64>()
}

fn generate_record(cfg: &RggConfig, index: usize) -> Result<GraphRecord, DatasetError> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let lo = (cfg.nodes as f64 * (1.0 - cfg.jitter)).round().max(1.0) as usize;
    let hi = ((cfg.nodes as f64 * (1.0 + cfg.jitter)).round() as usize).max(lo);
    let n = rng.random_range(lo..=hi);
    let alpha = rng.random_range(0.5..2.0);
    let beta = rng.random_range(-1.0..1.0);
    let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let d = cfg.attr_dim;
    let mut attrs = DMatrix::zeros(n, d);
    for (i, p) in points.iter().enumerate() {
        for (j, v) in attribute_field(p[0], p[1], alpha, beta, d).into_iter().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            attrs[(i, j)] = v + cfg.attr_noise * noise;
        }
    }
    let scalars: Vec<f64> = (0..cfg.scalar_dim).map(|_| rng.random::<f64>()).collect();
    let noise: f64 = StandardNormal.sample(&mut rng);
    let target = target_functional(&attrs, &scalars) * (1.0 + cfg.target_noise * noise);
    let radius = cfg.radius.unwrap_or_else(|| default_radius(n));
    let id = format!("{}{index}", cfg.id_prefix);
    let graph = AttributedGraph::new(attrs, geometric_edges(&points, radius))
        .map_err(|source| DatasetError::Validation { line: index + 1, id: id.clone(), source })?;
    Ok(GraphRecord { id, graph, scalars, target: Some(target) })
}

/// Generates `cfg.graphs` records. Record `i` depends only on `(seed, i)`.
pub fn generate(cfg: &RggConfig) -> Result<Dataset, DatasetError> {
    if cfg.attr_dim == 0 || cfg.nodes == 0 {
        return Err(DatasetError::Schema {
            line: 0,
            message: "attribute dimension and node count must be positive".to_string(),
        });
    }
    let records = (0..cfg.graphs)
        .into_par_iter()
        .map(|i| generate_record(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(records)
}
