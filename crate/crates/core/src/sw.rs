//! Projected quantile embeddings and sliced Wasserstein estimates.
//!
//! A measure on `R^s` is projected onto `P` shared unit directions; each
//! projected 1-D measure is summarized by `Q` quantiles on an equally spaced
//! grid of `[0, 1]`. Scaled by `(PQ)^(-1/r)`, the `P*Q` quantiles form a
//! feature vector whose `r`-norm differences are the sliced Wasserstein
//! estimates between measures.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Generator used for direction sampling, recorded in artifact headers.
pub const DIRECTION_GENERATOR: &str = "chacha20/rand_chacha-0.9+ziggurat-normal/rand_distr-0.5";

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SwError {
    #[error("projection count and dimension must be positive (P={p}, s={s})")]
    InvalidShape { p: usize, s: usize },
    #[error("{MAX_REDRAWS} consecutive degenerate Gaussian draws")]
    DegenerateDraw,
    #[error("at least 2 quantile levels are required, got {0}")]
    TooFewQuantiles(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite support value")]
    NonFinite,
    #[error("order r must be >= 1, got {0}")]
    InvalidOrder(f64),
    #[error("measure has dimension {measure}, projections have dimension {projections}")]
    DimensionMismatch { measure: usize, projections: usize },
    #[error("embeddings were built with different configurations: {0} vs {1}")]
    ConfigMismatch(String, String),
    #[error("exact transport is limited to {max} support points, got {got}")]
    TooLarge { max: usize, got: usize },
    #[error("support sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
}

/// Unit directions shared by every graph of one Gram computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    /// `P x s`, one direction per row.
    pub directions: DMatrix<f64>,
    pub seed: u64,
    /// ChaCha stream the directions were drawn from.
    pub stream: u64,
}

impl ProjectionSet {
    pub fn count(&self) -> usize {
        self.directions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }
}

/// Draws `p` directions uniformly on the unit sphere of `R^s` from stream 0.
pub fn sample_projections(seed: u64, p: usize, s: usize) -> Result<ProjectionSet, SwError> {
    sample_projections_stream(seed, 0, p, s)
}

/// Same as [`sample_projections`] with an explicit ChaCha stream, so that
/// independent direction sets can come from one seed.
pub fn sample_projections_stream(
    seed: u64,
    stream: u64,
    p: usize,
    s: usize,
) -> Result<ProjectionSet, SwError> {
    if p == 0 || s == 0 {
        return Err(SwError::InvalidShape { p, s });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut directions = DMatrix::zeros(p, s);
    let mut draw = vec![0.0; s];
    for row in 0..p {
        let mut attempts = 0;
        let norm = loop {
            for x in draw.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
            let norm = draw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm >= 1e-300 {
                break norm;
            }
            attempts += 1;
            if attempts == MAX_REDRAWS {
                return Err(SwError::DegenerateDraw);
            }
        };
        for (j, x) in draw.iter().enumerate() {
            directions[(row, j)] = x / norm;
        }
    }
    Ok(ProjectionSet { directions, seed, stream })
}

/// How the empirical quantile function is evaluated between sample points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileRule {
    /// Linear interpolation at fractional rank `t (n - 1)` in the sorted sample.
    #[default]
    Linear,
    /// Generalized inverse `inf { x : F(x) >= t }` of the step CDF (no interpolation).
    InverseCdf,
}

impl QuantileRule {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantileRule::Linear => "linear",
            QuantileRule::InverseCdf => "inverse-cdf",
        }
    }
}

impl std::str::FromStr for QuantileRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(QuantileRule::Linear),
            "inverse-cdf" => Ok(QuantileRule::InverseCdf),
            other => Err(format!("unknown quantile rule `{other}` (expected linear or inverse-cdf)")),
        }
    }
}

/// `Q` equally spaced levels `t_l = l / (Q - 1)`, `l = 0..Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantileGrid {
    q: usize,
    rule: QuantileRule,
}

impl QuantileGrid {
    pub fn new(q: usize) -> Result<Self, SwError> {
        Self::with_rule(q, QuantileRule::Linear)
    }

    pub fn with_rule(q: usize, rule: QuantileRule) -> Result<Self, SwError> {
        if q < 2 {
            return Err(SwError::TooFewQuantiles(q));
        }
        Ok(Self { q, rule })
    }

    pub fn len(&self) -> usize {
        self.q
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rule(&self) -> QuantileRule {
        self.rule
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.q).map(|l| l as f64 / (self.q - 1) as f64).collect()
    }

    /// Quantiles of an ascending, non-empty slice. Ranks are computed in
    /// integer arithmetic so that grid levels landing on sample ranks are hit
    /// exactly.
    fn eval_sorted(&self, sorted: &[f64], out: &mut impl FnMut(usize, f64)) {
        let n = sorted.len();
        let steps = self.q - 1;
        match self.rule {
            QuantileRule::Linear => {
                for l in 0..self.q {
                    let num = l * (n - 1);
                    let lo = num / steps;
                    let rem = num % steps;
                    let v = if rem == 0 {
                        sorted[lo]
                    } else {
                        let (a, b) = (sorted[lo], sorted[lo + 1]);
                        let frac = rem as f64 / steps as f64;
                        (a + frac * (b - a)).clamp(a, b)
                    };
                    out(l, v);
                }
            }
            QuantileRule::InverseCdf => {
                for l in 0..self.q {
                    // smallest k with k / n >= l / (Q - 1), as a 1-based rank
                    let k = (l * n).div_ceil(steps).max(1);
                    out(l, sorted[k - 1]);
                }
            }
        }
    }
}

/// Empirical quantiles of `values` at the grid levels.
pub fn interp_quantiles(values: &[f64], grid: &QuantileGrid) -> Result<Vec<f64>, SwError> {
    if values.is_empty() {
        return Err(SwError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut out = vec![0.0; grid.len()];
    grid.eval_sorted(&sorted, &mut |l, v| out[l] = v);
    Ok(out)
}

/// Uniform empirical measure over the rows of a support matrix.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalMeasure<'a> {
    support: &'a DMatrix<f64>,
}

impl<'a> EmpiricalMeasure<'a> {
    pub fn new(support: &'a DMatrix<f64>) -> Result<Self, SwError> {
        if support.nrows() == 0 || support.ncols() == 0 {
            return Err(SwError::EmptyInput);
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(SwError::NonFinite);
        }
        Ok(Self { support })
    }

    pub fn support(&self) -> &DMatrix<f64> {
        self.support
    }

    pub fn len(&self) -> usize {
        self.support.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }
}

/// Everything two embeddings must agree on to be comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqFingerprint {
    pub seed: u64,
    pub stream: u64,
    pub projections: usize,
    pub quantiles: usize,
    pub order: f64,
    pub dim: usize,
    pub rule: QuantileRule,
    /// WL iterates the support was built from; empty when not tied to a graph.
    pub iterations: Vec<usize>,
}

impl std::fmt::Display for PqFingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "seed={} stream={} P={} Q={} r={} s={} rule={} iterations={:?}",
            self.seed,
            self.stream,
            self.projections,
            self.quantiles,
            self.order,
            self.dim,
            self.rule.as_str(),
            self.iterations
        )
    }
}

/// Projected quantile feature vector, laid out as `values[p + P * q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqEmbedding {
    pub values: Vec<f64>,
    pub fingerprint: PqFingerprint,
    pub graph_id: String,
}

impl PqEmbedding {
    pub fn projections(&self) -> usize {
        self.fingerprint.projections
    }

    pub fn quantiles(&self) -> usize {
        self.fingerprint.quantiles
    }

    /// The `Q` (scaled) quantiles of projection `p`.
    pub fn projection_quantiles(&self, p: usize) -> impl Iterator<Item = f64> + '_ {
        let np = self.projections();
        self.values.iter().skip(p).step_by(np).copied()
    }

    pub fn check_compatible(&self, other: &PqEmbedding) -> Result<(), SwError> {
        if self.fingerprint != other.fingerprint || self.values.len() != other.values.len() {
            return Err(SwError::ConfigMismatch(
                self.fingerprint.to_string(),
                other.fingerprint.to_string(),
            ));
        }
        Ok(())
    }
}

/// Projected quantile embedding of `measure` with order `r`.
pub fn pq_embed(
    measure: EmpiricalMeasure<'_>,
    proj: &ProjectionSet,
    grid: &QuantileGrid,
    r: f64,
    graph_id: &str,
) -> Result<PqEmbedding, SwError> {
    if r.is_nan() || r < 1.0 {
        return Err(SwError::InvalidOrder(r));
    }
    if measure.dim() != proj.dim() {
        return Err(SwError::DimensionMismatch { measure: measure.dim(), projections: proj.dim() });
    }
    let np = proj.count();
    let nq = grid.len();
    let scale = ((np * nq) as f64).powf(-1.0 / r);
    // n x P, column p holds the projections on direction p
    let projected = measure.support() * proj.directions.transpose();
    let mut values = vec![0.0; np * nq];
    let mut buf = Vec::with_capacity(measure.len());
    for (p, col) in projected.column_iter().enumerate() {
        buf.clear();
        buf.extend(col.iter().copied());
        buf.sort_unstable_by(f64::total_cmp);
        grid.eval_sorted(&buf, &mut |q, v| values[p + np * q] = scale * v);
    }
    Ok(PqEmbedding {
        values,
        fingerprint: PqFingerprint {
            seed: proj.seed,
            stream: proj.stream,
            projections: np,
            quantiles: nq,
            order: r,
            dim: proj.dim(),
            rule: grid.rule(),
            iterations: Vec::new(),
        },
        graph_id: graph_id.to_string(),
    })
}

/// Squared Euclidean distance between two feature vectors.
pub fn squared_distance(a: &PqEmbedding, b: &PqEmbedding) -> Result<f64, SwError> {
    a.check_compatible(b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Estimated sliced Wasserstein distance: the `r`-norm of the feature difference.
pub fn sw_estimate(a: &PqEmbedding, b: &PqEmbedding) -> Result<f64, SwError> {
    let r = a.fingerprint.order;
    if r == 2.0 {
        return squared_distance(a, b).map(f64::sqrt);
    }
    a.check_compatible(b)?;
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs().powf(r)).sum();
    Ok(sum.powf(1.0 / r))
}

/// Exact `W_r` between two uniform empirical measures on the line.
///
/// Integrates `|F^-1(t) - G^-1(t)|^r` over the common refinement of the
/// breakpoints `i / n` and `j / m` of the two step quantile functions.
pub fn sw_exact_1d(x: &[f64], y: &[f64], r: f64) -> Result<f64, SwError> {
    if x.is_empty() || y.is_empty() {
        return Err(SwError::EmptyInput);
    }
    if r.is_nan() || r < 1.0 {
        return Err(SwError::InvalidOrder(r));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    ys.sort_unstable_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    // positions measured in units of 1 / (n m)
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0usize);
    let mut acc = 0.0;
    while i < n && j < m {
        let end_x = (i + 1) * m;
        let end_y = (j + 1) * n;
        let end = end_x.min(end_y);
        acc += (end - pos) as f64 * (xs[i] - ys[j]).abs().powf(r);
        pos = end;
        if end_x == end {
            i += 1;
        }
        if end_y == end {
            j += 1;
        }
    }
    Ok((acc / (n * m) as f64).powf(1.0 / r))
}

const MAX_EXACT_SUPPORT: usize = 8;

/// Exact `W_r` between equal-size uniform empirical measures by enumerating
/// every assignment. Limited to tiny supports.
pub fn w_exact_tiny(a: EmpiricalMeasure<'_>, b: EmpiricalMeasure<'_>, r: f64) -> Result<f64, SwError> {
    let n = a.len();
    if n != b.len() {
        return Err(SwError::SizeMismatch(n, b.len()));
    }
    if n > MAX_EXACT_SUPPORT {
        return Err(SwError::TooLarge { max: MAX_EXACT_SUPPORT, got: n });
    }
    if a.dim() != b.dim() {
        return Err(SwError::DimensionMismatch { measure: a.dim(), projections: b.dim() });
    }
    let cost = DMatrix::from_fn(n, n, |i, j| {
        (a.support().row(i) - b.support().row(j)).norm().powf(r)
    });
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>();
    let mut best = eval(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut k = 0;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            best = best.min(eval(&perm));
            c[k] += 1;
            k = 0;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    Ok((best / n as f64).powf(1.0 / r))
}
