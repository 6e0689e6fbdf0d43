//! SWWL, anisotropic SWWL and tensorized Gram matrices.
//!
//! Pairwise transport work is done once into [`DistanceMatrices`]; kernels
//! with different hyperparameters are then pure re-exponentiations of the
//! cached distances.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::GraphFeatures;
use crate::sw::{squared_distance, PqEmbedding, PqFingerprint, SwError};

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error(transparent)]
    Sw(#[from] SwError),
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid kernel parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),
    #[error("no records")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Precision of the isotropic SWWL factor.
    pub gamma: f64,
    /// Per-iterate precisions; when set, replaces `gamma`.
    pub gammas_aniso: Option<Vec<f64>>,
    pub matern_lengthscales: Vec<f64>,
    pub variance: f64,
    pub nugget: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { gamma: 1.0, gammas_aniso: None, matern_lengthscales: Vec::new(), variance: 1.0, nugget: 0.0 }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        let positive = |name, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(KernelError::InvalidParameter { name, value })
            }
        };
        positive("gamma", self.gamma)?;
        for &g in self.gammas_aniso.iter().flatten() {
            positive("gammas_aniso", g)?;
        }
        for &l in &self.matern_lengthscales {
            positive("matern_lengthscale", l)?;
        }
        positive("variance", self.variance)?;
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(KernelError::InvalidParameter { name: "nugget", value: self.nugget });
        }
        Ok(())
    }

    /// Precisions for `blocks` graph factors.
    pub fn graph_precisions(&self, blocks: usize) -> Result<Vec<f64>, KernelError> {
        match &self.gammas_aniso {
            Some(g) if g.len() == blocks => Ok(g.clone()),
            Some(g) => Err(KernelError::LengthMismatch { what: "gammas_aniso", expected: blocks, got: g.len() }),
            None if blocks <= 1 => Ok(vec![self.gamma; blocks]),
            None => Err(KernelError::LengthMismatch { what: "gammas_aniso", expected: blocks, got: 0 }),
        }
    }
}

pub fn swwl_kernel(a: &PqEmbedding, b: &PqEmbedding, gamma: f64) -> Result<f64, KernelError> {
    Ok((-gamma * squared_distance(a, b)?).exp())
}

/// Product over iterates of SWWL factors with per-iterate precisions.
pub fn aswwl_kernel(a: &[PqEmbedding], b: &[PqEmbedding], gammas: &[f64]) -> Result<f64, KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::LengthMismatch { what: "iteration blocks", expected: a.len(), got: b.len() });
    }
    if gammas.len() != a.len() {
        return Err(KernelError::LengthMismatch { what: "gammas", expected: a.len(), got: gammas.len() });
    }
    a.iter()
        .zip(b)
        .zip(gammas)
        .try_fold(1.0, |acc, ((x, y), &g)| Ok(acc * swwl_kernel(x, y, g)?))
}

/// Matern 5/2 correlation `(1 + sqrt5 h + 5h^2/3) exp(-sqrt5 h)`, `h = distance / lengthscale`.
pub fn matern52(distance: f64, lengthscale: f64) -> f64 {
    let h = 5f64.sqrt() * distance / lengthscale;
    (1.0 + h + h * h / 3.0) * (-h).exp()
}

fn kernel_from_parts(graph_sq: &[f64], precisions: &[f64], scalar_abs: &[f64], lengthscales: &[f64], variance: f64) -> f64 {
    let mut k = variance;
    for (d2, g) in graph_sq.iter().zip(precisions) {
        k *= (-g * d2).exp();
    }
    for (d, l) in scalar_abs.iter().zip(lengthscales) {
        k *= matern52(*d, *l);
    }
    k
}

/// `variance * graph factor(s) * prod_l matern52(|s_l - s'_l|)`.
pub fn tensorized_kernel(a: &GraphFeatures, b: &GraphFeatures, cfg: &KernelConfig) -> Result<f64, KernelError> {
    check_scalars(a, cfg)?;
    check_scalars(b, cfg)?;
    let precisions = cfg.graph_precisions(a.blocks.len())?;
    if a.blocks.len() != b.blocks.len() {
        return Err(KernelError::LengthMismatch { what: "iteration blocks", expected: a.blocks.len(), got: b.blocks.len() });
    }
    let graph_sq = a
        .blocks
        .iter()
        .zip(&b.blocks)
        .map(|(x, y)| squared_distance(x, y))
        .collect::<Result<Vec<_>, _>>()?;
    let scalar_abs: Vec<f64> = a.scalars.iter().zip(&b.scalars).map(|(x, y)| (x - y).abs()).collect();
    Ok(kernel_from_parts(&graph_sq, &precisions, &scalar_abs, &cfg.matern_lengthscales, cfg.variance))
}

fn check_scalars(f: &GraphFeatures, cfg: &KernelConfig) -> Result<(), KernelError> {
    if f.scalars.len() != cfg.matern_lengthscales.len() {
        return Err(KernelError::LengthMismatch {
            what: "scalars",
            expected: cfg.matern_lengthscales.len(),
            got: f.scalars.len(),
        });
    }
    Ok(())
}

/// Cached pairwise distances: squared SW per graph block, `|s_l - s'_l|` per scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrices {
    pub graph_sq: Vec<DMatrix<f64>>,
    pub scalar_abs: Vec<DMatrix<f64>>,
}

impl DistanceMatrices {
    pub fn rows(&self) -> usize {
        self.graph_sq.first().or(self.scalar_abs.first()).map_or(0, |m| m.nrows())
    }

    pub fn cols(&self) -> usize {
        self.graph_sq.first().or(self.scalar_abs.first()).map_or(0, |m| m.ncols())
    }

    /// Number of graph and scalar components.
    pub fn components(&self) -> usize {
        self.graph_sq.len() + self.scalar_abs.len()
    }
}

fn check_layout(rows: &[GraphFeatures], reference: &GraphFeatures) -> Result<(), KernelError> {
    for f in rows {
        if f.blocks.len() != reference.blocks.len() {
            return Err(KernelError::LengthMismatch {
                what: "iteration blocks",
                expected: reference.blocks.len(),
                got: f.blocks.len(),
            });
        }
        if f.scalars.len() != reference.scalars.len() {
            return Err(KernelError::LengthMismatch {
                what: "scalars",
                expected: reference.scalars.len(),
                got: f.scalars.len(),
            });
        }
        for (x, y) in f.blocks.iter().zip(&reference.blocks) {
            x.check_compatible(y)?;
        }
    }
    Ok(())
}

/// Pairwise distances among `features`. Each unordered pair is evaluated
/// once and mirrored.
pub fn pairwise_distances(features: &[GraphFeatures]) -> Result<DistanceMatrices, KernelError> {
    let first = features.first().ok_or(KernelError::Empty)?;
    check_layout(features, first)?;
    let n = features.len();
    let nb = first.blocks.len();
    let ns = first.scalars.len();
    let upper: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| pair_components(&features[i], &features[j], nb, ns))
                .collect()
        })
        .collect();
    let mut graph_sq = vec![DMatrix::zeros(n, n); nb];
    let mut scalar_abs = vec![DMatrix::zeros(n, n); ns];
    for (i, row) in upper.iter().enumerate() {
        for (off, comps) in row.iter().enumerate() {
            let j = i + off;
            for (c, &v) in comps.iter().enumerate() {
                let m = if c < nb { &mut graph_sq[c] } else { &mut scalar_abs[c - nb] };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    Ok(DistanceMatrices { graph_sq, scalar_abs })
}

/// Distances between `rows` (e.g. test records) and `cols` (training records).
pub fn cross_distances(rows: &[GraphFeatures], cols: &[GraphFeatures]) -> Result<DistanceMatrices, KernelError> {
    let reference = cols.first().ok_or(KernelError::Empty)?;
    check_layout(cols, reference)?;
    check_layout(rows, reference)?;
    let nb = reference.blocks.len();
    let ns = reference.scalars.len();
    let (nr, nc) = (rows.len(), cols.len());
    let all: Vec<Vec<Vec<f64>>> = rows
        .par_iter()
        .map(|a| cols.iter().map(|b| pair_components(a, b, nb, ns)).collect())
        .collect();
    let mut graph_sq = vec![DMatrix::zeros(nr, nc); nb];
    let mut scalar_abs = vec![DMatrix::zeros(nr, nc); ns];
    for (i, row) in all.iter().enumerate() {
        for (j, comps) in row.iter().enumerate() {
            for (c, &v) in comps.iter().enumerate() {
                let m = if c < nb { &mut graph_sq[c] } else { &mut scalar_abs[c - nb] };
                m[(i, j)] = v;
            }
        }
    }
    Ok(DistanceMatrices { graph_sq, scalar_abs })
}

fn pair_components(a: &GraphFeatures, b: &GraphFeatures, nb: usize, ns: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(nb + ns);
    for (x, y) in a.blocks.iter().zip(&b.blocks) {
        out.push(x.values.iter().zip(&y.values).map(|(p, q)| (p - q) * (p - q)).sum());
    }
    out.extend(a.scalars.iter().zip(&b.scalars).map(|(x, y)| (x - y).abs()));
    out
}

/// Kernel matrix from cached distances. The nugget is added to the diagonal
/// only when `nugget_on_diagonal` is set and the matrix is square.
pub fn kernel_from_distances(
    dist: &DistanceMatrices,
    cfg: &KernelConfig,
    nugget_on_diagonal: bool,
) -> Result<DMatrix<f64>, KernelError> {
    cfg.validate()?;
    let precisions = cfg.graph_precisions(dist.graph_sq.len())?;
    if dist.scalar_abs.len() != cfg.matern_lengthscales.len() {
        return Err(KernelError::LengthMismatch {
            what: "scalars",
            expected: cfg.matern_lengthscales.len(),
            got: dist.scalar_abs.len(),
        });
    }
    let (nr, nc) = (dist.rows(), dist.cols());
    let mut graph_sq = vec![0.0; dist.graph_sq.len()];
    let mut scalar_abs = vec![0.0; dist.scalar_abs.len()];
    let mut k = DMatrix::zeros(nr, nc);
    for j in 0..nc {
        for i in 0..nr {
            for (slot, m) in graph_sq.iter_mut().zip(&dist.graph_sq) {
                *slot = m[(i, j)];
            }
            for (slot, m) in scalar_abs.iter_mut().zip(&dist.scalar_abs) {
                *slot = m[(i, j)];
            }
            k[(i, j)] = kernel_from_parts(&graph_sq, &precisions, &scalar_abs, &cfg.matern_lengthscales, cfg.variance);
        }
    }
    if nugget_on_diagonal && nr == nc {
        for i in 0..nr {
            k[(i, i)] += cfg.nugget;
        }
    }
    Ok(k)
}

/// Identifies what a Gram matrix was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramFingerprint {
    pub features: PqFingerprint,
    pub blocks: usize,
    /// `None` for a squared-distance export.
    pub kernel: Option<KernelConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub row_ids: Vec<String>,
    pub fingerprint: GramFingerprint,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

pub fn assemble_gram(
    features: &[GraphFeatures],
    cfg: &KernelConfig,
    nugget_on_diagonal: bool,
) -> Result<GramMatrix, KernelError> {
    let dist = pairwise_distances(features)?;
    let values = kernel_from_distances(&dist, cfg, nugget_on_diagonal)?;
    Ok(GramMatrix {
        values,
        row_ids: features.iter().map(|f| f.id.clone()).collect(),
        fingerprint: GramFingerprint {
            features: combined_fingerprint(&features[0]),
            blocks: features[0].blocks.len(),
            kernel: Some(cfg.clone()),
        },
    })
}

/// Squared SW distance matrix of a single-block (isotropic) feature set.
pub fn assemble_squared_distances(features: &[GraphFeatures]) -> Result<GramMatrix, KernelError> {
    let dist = pairwise_distances(features)?;
    if dist.graph_sq.len() != 1 {
        return Err(KernelError::LengthMismatch { what: "iteration blocks", expected: 1, got: dist.graph_sq.len() });
    }
    Ok(GramMatrix {
        values: dist.graph_sq.into_iter().next().unwrap(),
        row_ids: features.iter().map(|f| f.id.clone()).collect(),
        fingerprint: GramFingerprint {
            features: features[0].blocks[0].fingerprint.clone(),
            blocks: 1,
            kernel: None,
        },
    })
}

/// Fingerprint of the first block, listing the iterations of all blocks.
pub fn combined_fingerprint(features: &GraphFeatures) -> PqFingerprint {
    let mut fp = features.blocks.first().map(|b| b.fingerprint.clone()).unwrap_or_else(empty_fingerprint);
    if features.blocks.len() > 1 {
        fp.iterations = features.blocks.iter().flat_map(|b| b.fingerprint.iterations.iter().copied()).collect();
    }
    fp
}

fn empty_fingerprint() -> PqFingerprint {
    PqFingerprint {
        seed: 0,
        stream: 0,
        projections: 0,
        quantiles: 0,
        order: 2.0,
        dim: 0,
        rule: Default::default(),
        iterations: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub min_eigenvalue: f64,
    pub is_psd: bool,
}

/// Smallest eigenvalue of a symmetric matrix; PSD when it is at least
/// `-tol * max(1, trace)`.
pub fn check_psd(matrix: &DMatrix<f64>, tol: f64) -> Result<PsdReport, KernelError> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(KernelError::NonSymmetric(f64::INFINITY));
    }
    let scale = matrix.amax().max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(KernelError::NonSymmetric(asym));
    }
    if n == 0 {
        return Ok(PsdReport { min_eigenvalue: f64::INFINITY, is_psd: true });
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let min_eigenvalue = eig.eigenvalues.min();
    let threshold = -tol * matrix.trace().max(1.0);
    Ok(PsdReport { min_eigenvalue, is_psd: min_eigenvalue >= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sw::{pq_embed, sample_projections, EmpiricalMeasure, QuantileGrid};
    use approx::assert_relative_eq;

    fn dirac(x: f64, p: usize) -> PqEmbedding {
        let m = DMatrix::from_element(1, 1, x);
        let proj = sample_projections(0, p, 1).unwrap();
        pq_embed(EmpiricalMeasure::new(&m).unwrap(), &proj, &QuantileGrid::new(3).unwrap(), 2.0, "d").unwrap()
    }

    fn features(x: f64, scalars: Vec<f64>) -> GraphFeatures {
        GraphFeatures { id: format!("{x}"), blocks: vec![dirac(x, 4)], scalars }
    }

    #[test]
    fn swwl_values() {
        let a = dirac(0.0, 5);
        let b = dirac(1.0, 5);
        assert_eq!(swwl_kernel(&a, &a, 3.0).unwrap(), 1.0);
        assert_relative_eq!(swwl_kernel(&a, &b, 1.0).unwrap(), (-1f64).exp(), epsilon = 1e-14);
        assert!(swwl_kernel(&a, &b, 30.0).unwrap() < 1e-10);
    }

    #[test]
    fn aswwl_values() {
        let (a0, b0) = (dirac(0.0, 3), dirac(1.0, 3));
        let (a1, b1) = (dirac(0.0, 3), dirac(2.0, 3));
        let k = aswwl_kernel(&[a0.clone(), a1.clone()], &[b0.clone(), b1], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(k, (-5f64).exp(), epsilon = 1e-14);
        assert_eq!(
            aswwl_kernel(std::slice::from_ref(&a0), std::slice::from_ref(&b0), &[0.7]).unwrap(),
            swwl_kernel(&a0, &b0, 0.7).unwrap()
        );
        assert!((aswwl_kernel(&[a0.clone(), a1.clone()], &[b0.clone(), dirac(3.0, 3)], &[1e-30, 1e-30]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            aswwl_kernel(&[a0.clone(), a1], &[b0], &[1.0, 1.0]),
            Err(KernelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern52(0.0, 2.0), 1.0);
        let s5 = 5f64.sqrt();
        assert_relative_eq!(matern52(1.5, 1.5), (1.0 + s5 + 5.0 / 3.0) * (-s5).exp(), epsilon = 1e-15);
        assert!((matern52(1.0, 1.0) - 0.52399).abs() < 1e-5);
        assert!(matern52(1e3, 1.0) < 1e-300 + 1e-100);
        let mut prev = 1.0;
        for i in 1..50 {
            let v = matern52(i as f64 * 0.1, 1.0);
            assert!(v < prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn tensorized_values() {
        let cfg = KernelConfig { variance: 2.5, matern_lengthscales: vec![1.0], ..Default::default() };
        let a = features(0.0, vec![0.0]);
        assert_eq!(tensorized_kernel(&a, &a, &cfg).unwrap(), 2.5);

        let cfg0 = KernelConfig { variance: 2.0, gamma: 0.3, ..Default::default() };
        let (x, y) = (features(0.0, vec![]), features(1.0, vec![]));
        assert_relative_eq!(
            tensorized_kernel(&x, &y, &cfg0).unwrap(),
            2.0 * swwl_kernel(&x.blocks[0], &y.blocks[0], 0.3).unwrap()
        );

        // sw^2 = ln 2 with gamma 1 gives a 0.5 graph factor
        let gamma = 2f64.ln();
        let cfg = KernelConfig { variance: 2.0, gamma, matern_lengthscales: vec![1.0], ..Default::default() };
        let (x, y) = (features(0.0, vec![0.0]), features(1.0, vec![1.0]));
        assert_relative_eq!(tensorized_kernel(&x, &y, &cfg).unwrap(), matern52(1.0, 1.0), epsilon = 1e-15);

        assert!(matches!(tensorized_kernel(&x, &features(1.0, vec![]), &cfg), Err(KernelError::LengthMismatch { .. })));
    }

    #[test]
    fn gram_small_cases() {
        let cfg = KernelConfig { variance: 1.5, nugget: 0.1, ..Default::default() };
        let one = assemble_gram(&[features(0.3, vec![])], &cfg, true).unwrap();
        assert_eq!(one.values.as_slice(), &[1.6]);

        let data = vec![features(0.0, vec![]), features(1.0, vec![]), features(0.0, vec![])];
        let g = assemble_gram(&data, &cfg, true).unwrap();
        assert_eq!(g.values[(0, 0)], g.values[(2, 2)]);
        assert_eq!(g.values[(0, 0)], g.values[(0, 2)] + 0.1);
        assert_eq!(g.values, g.values.transpose());
    }

    #[test]
    fn invalid_config() {
        let cfg = KernelConfig { gamma: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(KernelError::InvalidParameter { name: "gamma", .. })));
        let cfg = KernelConfig { nugget: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn psd_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        let r = check_psd(&id, 1e-8).unwrap();
        assert_relative_eq!(r.min_eigenvalue, 1.0, epsilon = 1e-14);
        assert!(r.is_psd);

        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = check_psd(&m, 1e-8).unwrap();
        assert_relative_eq!(r.min_eigenvalue, -1.0, epsilon = 1e-14);
        assert!(!r.is_psd);

        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(check_psd(&ns, 1e-8), Err(KernelError::NonSymmetric(_))));
    }
}
