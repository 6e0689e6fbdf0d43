//! Continuous Weisfeiler-Lehman node embeddings.
//!
//! One iteration replaces every node attribute by the average of itself and
//! the degree-normalized weighted sum of its neighbors' attributes. The
//! embedding of a graph concatenates a chosen subset of iterates column-wise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::AttributedGraph;

#[derive(Debug, Error, PartialEq)]
pub enum WlError {
    #[error("expected a {expected_rows} x {expected_cols} matrix, got {rows} x {cols}")]
    Shape { expected_rows: usize, expected_cols: usize, rows: usize, cols: usize },
    #[error("iterations_kept must be non-empty")]
    NoIterations,
    #[error("iterations_kept must be strictly increasing, got {0:?}")]
    NotIncreasing(Vec<usize>),
}

/// Which WL iterates are kept, in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WlConfig {
    iterations_kept: Vec<usize>,
}

impl WlConfig {
    pub fn new(iterations_kept: Vec<usize>) -> Result<Self, WlError> {
        if iterations_kept.is_empty() {
            return Err(WlError::NoIterations);
        }
        if iterations_kept.windows(2).any(|w| w[0] >= w[1]) {
            return Err(WlError::NotIncreasing(iterations_kept));
        }
        Ok(Self { iterations_kept })
    }

    /// Iterations `0, 1, ..., h`.
    pub fn up_to(h: usize) -> Self {
        Self { iterations_kept: (0..=h).collect() }
    }

    /// Iterations `0, T, 2T, 3T`.
    pub fn skip(step: usize) -> Self {
        let step = step.max(1);
        Self { iterations_kept: (0..4).map(|k| k * step).collect() }
    }

    pub fn iterations_kept(&self) -> &[usize] {
        &self.iterations_kept
    }

    pub fn max_iteration(&self) -> usize {
        *self.iterations_kept.last().unwrap()
    }

    pub fn blocks(&self) -> usize {
        self.iterations_kept.len()
    }
}

/// Skip step `round(sqrt(mean node count))`, at least 1.
pub fn skip_step(mean_node_count: f64) -> usize {
    (mean_node_count.sqrt().round() as usize).max(1)
}

/// One continuous WL update. Isolated nodes keep their current value.
pub fn wl_iterate(graph: &AttributedGraph, current: &DMatrix<f64>) -> Result<DMatrix<f64>, WlError> {
    let n = graph.node_count();
    if current.nrows() != n {
        return Err(WlError::Shape {
            expected_rows: n,
            expected_cols: current.ncols(),
            rows: current.nrows(),
            cols: current.ncols(),
        });
    }
    let mut next = DMatrix::zeros(n, current.ncols());
    for (col_in, mut col_out) in current.column_iter().zip(next.column_iter_mut()) {
        for u in 0..n {
            let (nbrs, ws) = graph.neighbors(u);
            col_out[u] = if nbrs.is_empty() {
                col_in[u]
            } else {
                let acc: f64 = nbrs.iter().zip(ws).map(|(&v, &w)| w * col_in[v]).sum();
                0.5 * (col_in[u] + acc / nbrs.len() as f64)
            };
        }
    }
    Ok(next)
}

/// Concatenated WL iterates of one graph, `|V| x (K d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WlEmbedding {
    pub values: DMatrix<f64>,
    pub config: WlConfig,
    pub attr_dim: usize,
    pub graph_id: String,
}

impl WlEmbedding {
    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }

    /// Embedding dimension `K d`.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// The `|V| x d` block of the `k`-th kept iterate.
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        self.values.columns(k * self.attr_dim, self.attr_dim).into_owned()
    }
}

pub fn embed(graph: &AttributedGraph, config: &WlConfig, graph_id: &str) -> WlEmbedding {
    if graph.has_nonpositive_weight() {
        log::warn!("graph `{graph_id}` has non-positive edge weights; using them as-is");
    }
    let n = graph.node_count();
    let d = graph.attr_dim();
    let mut values = DMatrix::zeros(n, d * config.blocks());
    let mut current = graph.attributes().clone();
    let mut kept = config.iterations_kept().iter().enumerate().peekable();
    for h in 0..=config.max_iteration() {
        if h > 0 {
            current = wl_iterate(graph, &current).expect("shape is preserved by iteration");
        }
        if let Some((k, _)) = kept.next_if(|(_, &it)| it == h) {
            values.columns_mut(k * d, d).copy_from(&current);
        }
    }
    WlEmbedding { values, config: config.clone(), attr_dim: d, graph_id: graph_id.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn two_nodes() -> AttributedGraph {
        AttributedGraph::new(
            DMatrix::from_row_slice(2, 1, &[0.0, 2.0]),
            vec![Edge { u: 0, v: 1, weight: 1.0 }],
        )
        .unwrap()
    }

    #[test]
    fn two_node_hand_value() {
        let g = two_nodes();
        let out = wl_iterate(&g, g.attributes()).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_is_fixed_point() {
        let g = AttributedGraph::new(
            DMatrix::zeros(4, 3),
            vec![Edge { u: 0, v: 1, weight: 2.0 }, Edge { u: 2, v: 1, weight: -1.0 }],
        )
        .unwrap();
        let out = wl_iterate(&g, g.attributes()).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn isolated_node_keeps_value() {
        let g = AttributedGraph::new(
            DMatrix::from_row_slice(3, 1, &[5.0, 0.0, 2.0]),
            vec![Edge { u: 1, v: 2, weight: 1.0 }],
        )
        .unwrap();
        let out = wl_iterate(&g, g.attributes()).unwrap();
        assert_eq!(out[(0, 0)], 5.0);
    }

    #[test]
    fn shape_mismatch() {
        let g = two_nodes();
        assert!(matches!(wl_iterate(&g, &DMatrix::zeros(3, 1)), Err(WlError::Shape { .. })));
    }

    #[test]
    fn embed_concatenates_kept_blocks() {
        let g = two_nodes();
        let e0 = embed(&g, &WlConfig::up_to(0), "g");
        assert_eq!(&e0.values, g.attributes());

        let e1 = embed(&g, &WlConfig::up_to(1), "g");
        assert_eq!(e1.values, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 1.0]));
        assert_eq!(e1.block(1).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn constant_complete_graph_is_constant() {
        let c = 3.25;
        let edges = vec![
            Edge { u: 0, v: 1, weight: 1.0 },
            Edge { u: 1, v: 2, weight: 1.0 },
            Edge { u: 0, v: 2, weight: 1.0 },
        ];
        let g = AttributedGraph::new(DMatrix::from_element(3, 1, c), edges).unwrap();
        let e = embed(&g, &WlConfig::up_to(2), "k3");
        assert!(e.values.iter().all(|&x| x == c));
    }

    #[test]
    fn skipped_iterations_match_repeated_updates() {
        let edges = (0..5).map(|u| Edge { u, v: u + 1, weight: 1.0 }).collect();
        let g = AttributedGraph::new(
            DMatrix::from_fn(6, 2, |i, j| (i * 3 + j) as f64),
            edges,
        )
        .unwrap();
        let e = embed(&g, &WlConfig::skip(2), "p");
        assert_eq!(e.config.iterations_kept(), &[0, 2, 4, 6]);
        let mut cur = g.attributes().clone();
        for h in 1..=6 {
            cur = wl_iterate(&g, &cur).unwrap();
            if h % 2 == 0 {
                assert_eq!(e.block(h / 2), cur);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert_eq!(WlConfig::new(vec![]), Err(WlError::NoIterations));
        assert!(matches!(WlConfig::new(vec![0, 2, 2]), Err(WlError::NotIncreasing(_))));
        assert_eq!(WlConfig::new(vec![1, 3]).unwrap().max_iteration(), 3);
        assert_eq!(skip_step(900.0), 30);
        assert_eq!(skip_step(0.2), 1);
    }
}
