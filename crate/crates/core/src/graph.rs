//! Attributed graphs, dataset records and JSONL ingestion.
//!
//! Graphs are undirected with dense 0-based node indices. Node attributes are
//! stored as an `|V| x d` matrix and adjacency as CSR so that neighborhood
//! sweeps are linear in the edge count.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("attribute dimension must be at least 1")]
    ZeroAttrDim,
    #[error("attribute matrix has {got} values, expected {expected}")]
    AttributeShape { expected: usize, got: usize },
    #[error("edge ({u}, {v}) references node index {index} but graph has {node_count} nodes")]
    EdgeIndex { u: usize, v: usize, index: usize, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("non-finite weight on edge ({0}, {1})")]
    NonFiniteWeight(usize, usize),
    #[error("non-finite attribute at node {node}, dimension {dim}")]
    NonFiniteAttribute { node: usize, dim: usize },
    #[error("node index {index} out of range for graph with {node_count} nodes")]
    IndexOutOfRange { index: usize, node_count: usize },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line} (record `{id}`): {source}")]
    Validation {
        line: usize,
        id: String,
        #[source]
        source: GraphError,
    },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DatasetError {
    /// Id of the offending record, when the failure is tied to one.
    pub fn record_id(&self) -> Option<&str> {
        match self {
            DatasetError::Validation { id, .. } => Some(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Undirected graph with continuous node attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    attributes: DMatrix<f64>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl AttributedGraph {
    /// Builds a graph from an `|V| x d` attribute matrix and an edge list.
    ///
    /// Each unordered pair may appear at most once; self-loops and
    /// non-finite values are rejected.
    pub fn new(attributes: DMatrix<f64>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let node_count = attributes.nrows();
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        if attributes.ncols() == 0 {
            return Err(GraphError::ZeroAttrDim);
        }
        for dim in 0..attributes.ncols() {
            for node in 0..node_count {
                if !attributes[(node, dim)].is_finite() {
                    return Err(GraphError::NonFiniteAttribute { node, dim });
                }
            }
        }

        let mut seen = HashSet::with_capacity(edges.len());
        let mut degree = vec![0usize; node_count];
        for e in &edges {
            for index in [e.u, e.v] {
                if index >= node_count {
                    return Err(GraphError::EdgeIndex { u: e.u, v: e.v, index, node_count });
                }
            }
            if e.u == e.v {
                return Err(GraphError::SelfLoop(e.u));
            }
            if !e.weight.is_finite() {
                return Err(GraphError::NonFiniteWeight(e.u, e.v));
            }
            if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
                return Err(GraphError::DuplicateEdge(e.u, e.v));
            }
            degree[e.u] += 1;
            degree[e.v] += 1;
        }

        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..node_count].to_vec();
        let mut neighbors = vec![0; offsets[node_count]];
        let mut weights = vec![0.0; offsets[node_count]];
        for e in &edges {
            neighbors[cursor[e.u]] = e.v;
            weights[cursor[e.u]] = e.weight;
            cursor[e.u] += 1;
            neighbors[cursor[e.v]] = e.u;
            weights[cursor[e.v]] = e.weight;
            cursor[e.v] += 1;
        }

        Ok(Self { attributes, edges, offsets, neighbors, weights })
    }

    pub fn node_count(&self) -> usize {
        self.attributes.nrows()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn attributes(&self) -> &DMatrix<f64> {
        &self.attributes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of distinct neighbors of `u`.
    pub fn degree(&self, u: usize) -> Result<usize, GraphError> {
        if u >= self.node_count() {
            return Err(GraphError::IndexOutOfRange { index: u, node_count: self.node_count() });
        }
        Ok(self.offsets[u + 1] - self.offsets[u])
    }

    /// Neighbor indices and edge weights of `u`. Panics if `u` is out of range.
    pub fn neighbors(&self, u: usize) -> (&[usize], &[f64]) {
        let range = self.offsets[u]..self.offsets[u + 1];
        (&self.neighbors[range.clone()], &self.weights[range])
    }

    pub fn has_nonpositive_weight(&self) -> bool {
        self.edges.iter().any(|e| e.weight <= 0.0)
    }

    /// Returns a copy with attributes replaced; the topology is shared.
    pub fn with_attributes(&self, attributes: DMatrix<f64>) -> Result<Self, GraphError> {
        if attributes.nrows() != self.node_count() {
            return Err(GraphError::AttributeShape {
                expected: self.node_count() * attributes.ncols(),
                got: attributes.len(),
            });
        }
        let mut out = self.clone();
        out.attributes = attributes;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecord {
    pub id: String,
    pub graph: AttributedGraph,
    pub scalars: Vec<f64>,
    pub target: Option<f64>,
}

/// Ordered collection of records sharing attribute and scalar dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<GraphRecord>,
    attr_dim: usize,
    scalar_dim: usize,
}

impl Dataset {
    pub fn new(records: Vec<GraphRecord>) -> Result<Self, DatasetError> {
        let first = records.first().ok_or(DatasetError::Empty)?;
        let attr_dim = first.graph.attr_dim();
        let scalar_dim = first.scalars.len();
        for (i, rec) in records.iter().enumerate() {
            check_dims(rec, attr_dim, scalar_dim, i + 1)?;
        }
        Ok(Self { records, attr_dim, scalar_dim })
    }

    pub fn records(&self) -> &[GraphRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn scalar_dim(&self) -> usize {
        self.scalar_dim
    }

    /// Targets of every record, or `None` if any record lacks one.
    pub fn targets(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.target).collect()
    }

    pub fn mean_node_count(&self) -> f64 {
        let total: usize = self.records.iter().map(|r| r.graph.node_count()).sum();
        total as f64 / self.records.len() as f64
    }

    pub fn total_nodes(&self) -> usize {
        self.records.iter().map(|r| r.graph.node_count()).sum()
    }

    pub fn total_edges(&self) -> usize {
        self.records.iter().map(|r| r.graph.edge_count()).sum()
    }
}

fn check_dims(
    rec: &GraphRecord,
    attr_dim: usize,
    scalar_dim: usize,
    line: usize,
) -> Result<(), DatasetError> {
    if rec.graph.attr_dim() != attr_dim {
        return Err(DatasetError::Schema {
            line,
            message: format!(
                "record `{}` has attribute dimension {}, expected {}",
                rec.id,
                rec.graph.attr_dim(),
                attr_dim
            ),
        });
    }
    if rec.scalars.len() != scalar_dim {
        return Err(DatasetError::Schema {
            line,
            message: format!(
                "record `{}` has {} scalars, expected {}",
                rec.id,
                rec.scalars.len(),
                scalar_dim
            ),
        });
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    nodes: Vec<Vec<f64>>,
    #[serde(default)]
    edges: Vec<Vec<Value>>,
    #[serde(default)]
    scalars: Vec<f64>,
    #[serde(default)]
    target: Option<f64>,
}

#[derive(Serialize)]
struct RawRecordOut<'a> {
    id: &'a str,
    nodes: Vec<Vec<f64>>,
    edges: Vec<(usize, usize, f64)>,
    scalars: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
}

fn parse_edge(raw: &[Value], line: usize) -> Result<Edge, DatasetError> {
    let bad = |message: String| DatasetError::Parse { line, message };
    if raw.len() != 2 && raw.len() != 3 {
        return Err(bad(format!("edge must be [u, v] or [u, v, w], got {} entries", raw.len())));
    }
    let index = |v: &Value| {
        v.as_u64()
            .map(|i| i as usize)
            .ok_or_else(|| bad(format!("edge endpoint `{v}` is not a nonnegative integer")))
    };
    let weight = match raw.get(2) {
        Some(w) => w.as_f64().ok_or_else(|| bad(format!("edge weight `{w}` is not a number")))?,
        None => 1.0,
    };
    Ok(Edge { u: index(&raw[0])?, v: index(&raw[1])?, weight })
}

fn record_from_raw(raw: RawRecord, line: usize) -> Result<GraphRecord, DatasetError> {
    let n = raw.nodes.len();
    let d = raw.nodes.first().map_or(0, Vec::len);
    if let Some((u, row)) = raw.nodes.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(DatasetError::Schema {
            line,
            message: format!("node {u} has {} attributes, node 0 has {d}", row.len()),
        });
    }
    let edges = raw
        .edges
        .iter()
        .map(|e| parse_edge(e, line))
        .collect::<Result<Vec<_>, _>>()?;
    let attributes = DMatrix::from_fn(n, d, |i, j| raw.nodes[i][j]);
    let graph = AttributedGraph::new(attributes, edges).map_err(|source| {
        DatasetError::Validation { line, id: raw.id.clone(), source }
    })?;
    if let Some(dim) = raw.scalars.iter().position(|s| !s.is_finite()) {
        return Err(DatasetError::Schema {
            line,
            message: format!("record `{}` has a non-finite scalar at index {dim}", raw.id),
        });
    }
    Ok(GraphRecord { id: raw.id, graph, scalars: raw.scalars, target: raw.target })
}

/// Reads a JSONL dataset, one record per non-blank line.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Dataset, DatasetError> {
    let mut records: Vec<GraphRecord> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        let rec = record_from_raw(raw, line_no)?;
        if let Some(first) = records.first() {
            check_dims(&rec, first.graph.attr_dim(), first.scalars.len(), line_no)?;
        }
        records.push(rec);
    }
    let ds = Dataset::new(records)?;
    log::info!(
        "loaded {} graphs ({} nodes, {} edges, d={}, m={})",
        ds.len(),
        ds.total_nodes(),
        ds.total_edges(),
        ds.attr_dim(),
        ds.scalar_dim()
    );
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_jsonl(File::open(path)?)
}

/// Writes records as JSONL. Edges are always written with explicit weights.
pub fn write_jsonl<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(writer);
    for rec in dataset.records() {
        let attrs = rec.graph.attributes();
        let out = RawRecordOut {
            id: &rec.id,
            nodes: attrs.row_iter().map(|r| r.iter().copied().collect()).collect(),
            edges: rec.graph.edges().iter().map(|e| (e.u, e.v, e.weight)).collect(),
            scalars: &rec.scalars,
            target: rec.target,
        };
        serde_json::to_writer(&mut w, &out).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_jsonl(dataset, File::create(path)?)
}

/// Per-dimension attribute standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AttributeScaler {
    /// Mean and standard deviation over all nodes of all graphs.
    /// Constant dimensions get a unit scale.
    pub fn fit(dataset: &Dataset) -> Self {
        let d = dataset.attr_dim();
        let total = dataset.total_nodes() as f64;
        let mut mean = vec![0.0; d];
        for rec in dataset.records() {
            for (j, col) in rec.graph.attributes().column_iter().enumerate() {
                mean[j] += col.sum();
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = vec![0.0; d];
        for rec in dataset.records() {
            for (j, col) in rec.graph.attributes().column_iter().enumerate() {
                var[j] += col.iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>();
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / total).sqrt();
                if s > 0.0 && s.is_finite() { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset, DatasetError> {
        if dataset.attr_dim() != self.mean.len() {
            return Err(DatasetError::Schema {
                line: 0,
                message: format!(
                    "scaler has dimension {}, dataset has {}",
                    self.mean.len(),
                    dataset.attr_dim()
                ),
            });
        }
        let records = dataset
            .records()
            .iter()
            .map(|rec| {
                let mut attrs = rec.graph.attributes().clone();
                for (j, mut col) in attrs.column_iter_mut().enumerate() {
                    col.apply(|x| *x = (*x - self.mean[j]) / self.std[j]);
                }
                let graph = rec.graph.with_attributes(attrs).expect("shape preserved");
                GraphRecord { graph, ..rec.clone() }
            })
            .collect();
        Dataset::new(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph() -> AttributedGraph {
        let attrs = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let edges = vec![Edge { u: 0, v: 1, weight: 1.0 }, Edge { u: 1, v: 2, weight: 1.0 }];
        AttributedGraph::new(attrs, edges).unwrap()
    }

    #[test]
    fn degree_counts() {
        let g = path_graph();
        assert_eq!(g.degree(1), Ok(2));
        assert_eq!(g.degree(0), Ok(1));
        assert!(matches!(g.degree(3), Err(GraphError::IndexOutOfRange { index: 3, .. })));

        let iso = AttributedGraph::new(DMatrix::from_element(2, 1, 0.0), vec![]).unwrap();
        assert_eq!(iso.degree(0), Ok(0));

        let star = AttributedGraph::new(
            DMatrix::zeros(4, 2),
            (1..4).map(|v| Edge { u: 0, v, weight: 1.0 }).collect(),
        )
        .unwrap();
        assert_eq!(star.degree(0), Ok(3));
    }

    #[test]
    fn rejects_invalid_edges() {
        let attrs = DMatrix::zeros(2, 1);
        let e = |u, v| Edge { u, v, weight: 1.0 };
        assert_eq!(
            AttributedGraph::new(attrs.clone(), vec![e(0, 0)]).unwrap_err(),
            GraphError::SelfLoop(0)
        );
        assert_eq!(
            AttributedGraph::new(attrs.clone(), vec![e(0, 1), e(1, 0)]).unwrap_err(),
            GraphError::DuplicateEdge(1, 0)
        );
        assert!(matches!(
            AttributedGraph::new(attrs.clone(), vec![Edge { u: 0, v: 1, weight: f64::NAN }]),
            Err(GraphError::NonFiniteWeight(0, 1))
        ));
        assert!(matches!(
            AttributedGraph::new(DMatrix::from_element(1, 1, f64::INFINITY), vec![]),
            Err(GraphError::NonFiniteAttribute { node: 0, dim: 0 })
        ));
        assert_eq!(AttributedGraph::new(DMatrix::zeros(0, 1), vec![]).unwrap_err(), GraphError::Empty);
    }

    #[test]
    fn minimal_record_loads() {
        let line = r#"{"id":"g0","nodes":[[0.0],[2.0]],"edges":[[0,1,1.0]],"scalars":[],"target":1.0}"#;
        let ds = read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.attr_dim(), 1);
        assert_eq!(ds.scalar_dim(), 0);
        let rec = &ds.records()[0];
        assert_eq!(rec.graph.node_count(), 2);
        assert_eq!(rec.target, Some(1.0));
    }

    #[test]
    fn missing_weight_defaults_to_one() {
        let line = r#"{"id":"g","nodes":[[0.0],[2.0]],"edges":[[0,1]],"scalars":[]}"#;
        let ds = read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(ds.records()[0].graph.edges()[0].weight, 1.0);
        assert_eq!(ds.records()[0].target, None);
        assert_eq!(ds.targets(), None);
    }

    #[test]
    fn out_of_range_endpoint_names_index() {
        let line = r#"{"id":"bad","nodes":[[0.0],[2.0]],"edges":[[0,5,1.0]],"scalars":[]}"#;
        let err = read_jsonl(line.as_bytes()).unwrap_err();
        match &err {
            DatasetError::Validation { line: 1, id, source: GraphError::EdgeIndex { index: 5, .. } } => {
                assert_eq!(id, "bad")
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains('5'));
    }

    #[test]
    fn dimension_mismatch_is_schema_error() {
        let text = concat!(
            r#"{"id":"a","nodes":[[0.0]],"edges":[],"scalars":[]}"#,
            "\n",
            r#"{"id":"b","nodes":[[0.0,1.0,2.0]],"edges":[],"scalars":[]}"#,
            "\n"
        );
        assert!(matches!(read_jsonl(text.as_bytes()), Err(DatasetError::Schema { line: 2, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"nodes\":[[0.0]],\"edges\":[],\"scalars\":[]}\n{not json\n";
        assert!(matches!(read_jsonl(text.as_bytes()), Err(DatasetError::Parse { line: 2, .. })));
        let text = r#"{"id":"a","nodes":[[0.0],[1.0]],"edges":[[0,1.5]],"scalars":[]}"#;
        assert!(matches!(read_jsonl(text.as_bytes()), Err(DatasetError::Parse { line: 1, .. })));
    }

    #[test]
    fn scaler_standardizes_and_handles_constant_dims() {
        let text = concat!(
            r#"{"id":"a","nodes":[[0.0,5.0],[2.0,5.0]],"edges":[],"scalars":[]}"#,
            "\n",
            r#"{"id":"b","nodes":[[4.0,5.0]],"edges":[],"scalars":[]}"#,
        );
        let ds = read_jsonl(text.as_bytes()).unwrap();
        let scaler = AttributeScaler::fit(&ds);
        assert_eq!(scaler.mean, vec![2.0, 5.0]);
        assert_eq!(scaler.std[1], 1.0);
        let out = scaler.apply(&ds).unwrap();
        let all: Vec<f64> = out
            .records()
            .iter()
            .flat_map(|r| r.graph.attributes().column(0).iter().copied().collect::<Vec<_>>())
            .collect();
        let mean = all.iter().sum::<f64>() / 3.0;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-12);
    }
}
