//! Graph -> feature vector pipeline: WL embedding followed by projected
//! quantile embedding with one shared set of directions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{AttributedGraph, Dataset};
use crate::sw::{
    pq_embed, sample_projections_stream, EmpiricalMeasure, PqEmbedding, ProjectionSet, QuantileGrid,
    QuantileRule, SwError,
};
use crate::wl::{embed, WlConfig};

/// Settings shared by every graph that enters one Gram computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub wl: WlConfig,
    pub projections: usize,
    pub quantiles: usize,
    pub order: f64,
    pub seed: u64,
    pub rule: QuantileRule,
    /// One embedding per kept WL iterate instead of one on the concatenation.
    pub anisotropic: bool,
}

impl FeatureConfig {
    /// `P = 50`, `Q = 500`, iterations `0..=3`.
    pub fn regression_defaults(seed: u64) -> Self {
        Self {
            wl: WlConfig::up_to(3),
            projections: 50,
            quantiles: 500,
            order: 2.0,
            seed,
            rule: QuantileRule::Linear,
            anisotropic: false,
        }
    }

    /// `P = 20`, `Q = 20`, iterations `0..=3`.
    pub fn small_graph_defaults(seed: u64) -> Self {
        Self { projections: 20, quantiles: 20, ..Self::regression_defaults(seed) }
    }
}

/// Embedded graph: one PQ block (isotropic) or one per kept iterate
/// (anisotropic), plus its scalar covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    pub id: String,
    pub blocks: Vec<PqEmbedding>,
    pub scalars: Vec<f64>,
}

/// Directions and grid fixed for a dataset's attribute dimension.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    config: FeatureConfig,
    grid: QuantileGrid,
    projections: Vec<ProjectionSet>,
    attr_dim: usize,
}

impl FeatureSpace {
    /// Isotropic features use ChaCha stream 0 in dimension `K d`; the
    /// anisotropic block `k` uses stream `k + 1` in dimension `d`.
    pub fn new(config: FeatureConfig, attr_dim: usize) -> Result<Self, SwError> {
        let grid = QuantileGrid::with_rule(config.quantiles, config.rule)?;
        let blocks = config.wl.blocks();
        let projections = if config.anisotropic {
            (0..blocks)
                .map(|k| sample_projections_stream(config.seed, k as u64 + 1, config.projections, attr_dim))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            vec![sample_projections_stream(config.seed, 0, config.projections, blocks * attr_dim)?]
        };
        Ok(Self { config, grid, projections, attr_dim })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn projections(&self) -> &[ProjectionSet] {
        &self.projections
    }

    pub fn embed_graph(&self, graph: &AttributedGraph, id: &str) -> Result<Vec<PqEmbedding>, SwError> {
        if graph.attr_dim() != self.attr_dim {
            return Err(SwError::DimensionMismatch {
                measure: graph.attr_dim(),
                projections: self.attr_dim,
            });
        }
        let wl = embed(graph, &self.config.wl, id);
        let kept = self.config.wl.iterations_kept();
        if self.config.anisotropic {
            self.projections
                .iter()
                .enumerate()
                .map(|(k, proj)| {
                    let block = wl.block(k);
                    let mut e = pq_embed(EmpiricalMeasure::new(&block)?, proj, &self.grid, self.config.order, id)?;
                    e.fingerprint.iterations = vec![kept[k]];
                    Ok(e)
                })
                .collect()
        } else {
            let mut e = pq_embed(
                EmpiricalMeasure::new(&wl.values)?,
                &self.projections[0],
                &self.grid,
                self.config.order,
                id,
            )?;
            e.fingerprint.iterations = kept.to_vec();
            Ok(vec![e])
        }
    }

    /// Embeds every record in parallel; output order follows the dataset.
    pub fn embed_dataset(&self, dataset: &Dataset) -> Result<Vec<GraphFeatures>, SwError> {
        dataset
            .records()
            .par_iter()
            .map(|rec| {
                Ok(GraphFeatures {
                    id: rec.id.clone(),
                    blocks: self.embed_graph(&rec.graph, &rec.id)?,
                    scalars: rec.scalars.clone(),
                })
            })
            .collect()
    }
}
