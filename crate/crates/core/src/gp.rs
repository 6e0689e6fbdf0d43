//! Robust Gaussian-process regression on tensorized graph kernels.
//!
//! The correlation between two records is
//!
//! ```text
//! c(x, x') = prod_h exp(-SW_h^2 / rho_h^2) * prod_l matern52(|s_l - s'_l|, rho_l)
//! ```
//!
//! so every component is governed by a range `rho`; the SWWL precision is
//! `1 / rho^2`. The constant mean and the variance are integrated out under
//! the reference prior, and ranges maximize the marginal likelihood times
//! the jointly robust prior
//!
//! ```text
//! pi(rho) = (sum_l C_l / rho_l)^a exp(-b sum_l C_l / rho_l),  a = 0.2,  b = N^(-1/L) (a + L)
//! ```
//!
//! where `C_l` is the mean off-diagonal distance of component `l`. The
//! predictive distribution is Student-t with `N - 1` degrees of freedom.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::features::GraphFeatures;
use crate::kernels::{cross_distances, matern52, pairwise_distances, DistanceMatrices, KernelError};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Exponent `a` of the jointly robust prior.
pub const JR_PRIOR_A: f64 = 0.2;

/// Log-ranges are confined to `log C_l +- LOG_RANGE_BOX`.
const LOG_RANGE_BOX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("correlation matrix is not positive definite at ranges {ranges:?}; raise the nugget")]
    CholeskyFailure { ranges: Vec<f64> },
    #[error("targets are constant; the variance estimate is zero")]
    ConstantTarget,
    #[error(
        "every optimizer start failed the Cholesky factorization (last at ranges {last_ranges:?}); \
         duplicate or near-duplicate training inputs need a larger nugget"
    )]
    OptimizationFailure { last_ranges: Vec<f64> },
    #[error("need at least {needed} training records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid setting {name} = {value}")]
    InvalidSetting { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSettings {
    /// Fixed nugget added to the unit-diagonal correlation matrix.
    pub nugget: f64,
    pub multistarts: usize,
    /// Objective evaluations per start.
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for GpSettings {
    fn default() -> Self {
        Self { nugget: 1e-8, multistarts: 5, max_evals: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperParams {
    /// Graph-block ranges first, then one per scalar covariate.
    pub ranges: Vec<f64>,
    pub nugget: f64,
    pub theta: f64,
    pub sigma2: f64,
}

impl GpHyperParams {
    /// SWWL precisions `1 / rho^2` of the graph components.
    pub fn graph_precisions(&self, blocks: usize) -> Vec<f64> {
        self.ranges[..blocks].iter().map(|r| 1.0 / (r * r)).collect()
    }
}

/// Correlation matrix for the given ranges (no nugget).
pub fn correlation(dist: &DistanceMatrices, ranges: &[f64]) -> Result<DMatrix<f64>, GpError> {
    if ranges.len() != dist.components() {
        return Err(GpError::LengthMismatch { what: "ranges", expected: dist.components(), got: ranges.len() });
    }
    let nb = dist.graph_sq.len();
    let (nr, nc) = (dist.rows(), dist.cols());
    let precisions: Vec<f64> = ranges[..nb].iter().map(|r| 1.0 / (r * r)).collect();
    let mut out = DMatrix::from_element(nr, nc, 1.0);
    for (m, g) in dist.graph_sq.iter().zip(&precisions) {
        out.zip_apply(m, |o, d2| *o *= (-g * d2).exp());
    }
    for (m, rho) in dist.scalar_abs.iter().zip(&ranges[nb..]) {
        out.zip_apply(m, |o, d| *o *= matern52(d, *rho));
    }
    Ok(out)
}

/// Mean off-diagonal distance of each component, used to scale the prior.
/// Graph components use the SW distance itself, not its square.
pub fn component_scales(dist: &DistanceMatrices) -> Vec<f64> {
    let n = dist.rows();
    let mean_offdiag = |m: &DMatrix<f64>, f: &dyn Fn(f64) -> f64| {
        if n < 2 {
            return 1.0;
        }
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    acc += f(m[(i, j)]);
                }
            }
        }
        let c = acc / (n * (n - 1)) as f64;
        if c > 0.0 && c.is_finite() { c } else { 1.0 }
    };
    dist.graph_sq
        .iter()
        .map(|m| mean_offdiag(m, &|d2: f64| d2.max(0.0).sqrt()))
        .chain(dist.scalar_abs.iter().map(|m| mean_offdiag(m, &|d| d)))
        .collect()
}

/// `b = N^(-1/L) (a + L)`.
pub fn jr_prior_b(n: usize, l: usize) -> f64 {
    (n as f64).powf(-1.0 / l as f64) * (JR_PRIOR_A + l as f64)
}

/// Log of the jointly robust prior (up to a constant).
pub fn log_jr_prior(ranges: &[f64], scales: &[f64], n: usize) -> f64 {
    let t: f64 = scales.iter().zip(ranges).map(|(c, r)| c / r).sum();
    JR_PRIOR_A * t.ln() - jr_prior_b(n, ranges.len()) * t
}

/// Quantities of the marginal likelihood at fixed ranges.
#[derive(Debug, Clone)]
pub struct Profile {
    pub chol: Cholesky<f64, Dyn>,
    pub rinv_h: DVector<f64>,
    pub h_rinv_h: f64,
    pub theta: f64,
    /// `R^-1 (y - h theta)`.
    pub rinv_resid: DVector<f64>,
    /// `(y - h theta)^T R^-1 (y - h theta)`.
    pub s2: f64,
    pub log_det: f64,
}

impl Profile {
    pub fn log_likelihood(&self) -> f64 {
        let n = self.rinv_h.len() as f64;
        -0.5 * self.log_det - 0.5 * self.h_rinv_h.ln() - 0.5 * (n - 1.0) * self.s2.ln()
    }
}

fn factor(r: DMatrix<f64>, ranges: &[f64]) -> Result<Cholesky<f64, Dyn>, GpError> {
    let n = r.nrows();
    let max_diag = r.diagonal().max();
    let fail = || GpError::CholeskyFailure { ranges: ranges.to_vec() };
    let chol = Cholesky::new(r).ok_or_else(fail)?;
    // reject numerically singular factors whose pivots are at rounding level
    let floor = (n as f64) * f64::EPSILON * max_diag;
    if chol.l_dirty().diagonal().iter().any(|&d| d.is_nan() || d * d <= floor) {
        return Err(fail());
    }
    Ok(chol)
}

/// Profiles the marginal likelihood at `ranges` with `nugget` on the diagonal.
pub fn profile(dist: &DistanceMatrices, ranges: &[f64], targets: &[f64], nugget: f64) -> Result<Profile, GpError> {
    let n = dist.rows();
    if targets.len() != n {
        return Err(GpError::LengthMismatch { what: "targets", expected: n, got: targets.len() });
    }
    let mut r = correlation(dist, ranges)?;
    for i in 0..n {
        r[(i, i)] += nugget;
    }
    let chol = factor(r, ranges)?;
    let h = DVector::from_element(n, 1.0);
    let y = DVector::from_column_slice(targets);
    let rinv_h = chol.solve(&h);
    let h_rinv_h = h.dot(&rinv_h);
    let theta = rinv_h.dot(&y) / h_rinv_h;
    let resid = y.add_scalar(-theta);
    let rinv_resid = chol.solve(&resid);
    let s2 = resid.dot(&rinv_resid);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(Profile { chol, rinv_h, h_rinv_h, theta, rinv_resid, s2, log_det })
}

fn is_constant(targets: &[f64]) -> bool {
    targets.windows(2).all(|w| w[0] == w[1])
}

/// Log marginal posterior of the log-ranges, up to a range-independent constant.
pub fn marginal_posterior(
    log_ranges: &[f64],
    dist: &DistanceMatrices,
    targets: &[f64],
    nugget: f64,
) -> Result<f64, GpError> {
    if targets.len() < 2 {
        return Err(GpError::TooFewRecords { needed: 2, got: targets.len() });
    }
    if is_constant(targets) {
        return Err(GpError::ConstantTarget);
    }
    let ranges: Vec<f64> = log_ranges.iter().map(|l| l.exp()).collect();
    let prof = profile(dist, &ranges, targets, nugget)?;
    if !(prof.s2 > 0.0 && prof.s2.is_finite()) {
        return Err(GpError::ConstantTarget);
    }
    let scales = component_scales(dist);
    Ok(prof.log_likelihood() + log_jr_prior(&ranges, &scales, targets.len()))
}

/// Trained model with everything needed for prediction.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyperParams,
    pub log_posterior: f64,
    pub train: Vec<GraphFeatures>,
    pub targets: Vec<f64>,
    pub train_distances: DistanceMatrices,
    /// Lower Cholesky factor of `R + nugget I`.
    pub chol_lower: DMatrix<f64>,
    pub rinv_h: DVector<f64>,
    pub rinv_resid: DVector<f64>,
}

fn validate_settings(settings: &GpSettings) -> Result<(), GpError> {
    if !(settings.nugget >= 0.0 && settings.nugget.is_finite()) {
        return Err(GpError::InvalidSetting { name: "nugget", value: settings.nugget });
    }
    if settings.multistarts == 0 {
        return Err(GpError::InvalidSetting { name: "multistarts", value: 0.0 });
    }
    Ok(())
}

/// Maximizes the marginal posterior over log-ranges with multi-start
/// Nelder-Mead. Returns the ranges and the objective value.
pub fn optimize_ranges(
    dist: &DistanceMatrices,
    targets: &[f64],
    settings: &GpSettings,
) -> Result<(Vec<f64>, f64), GpError> {
    validate_settings(settings)?;
    let n = targets.len();
    if n < 3 {
        return Err(GpError::TooFewRecords { needed: 3, got: n });
    }
    if is_constant(targets) {
        return Err(GpError::ConstantTarget);
    }
    // Standardized targets shift the objective by a constant only, so the
    // argmax does not depend on the location and scale of y. Rounding to a
    // 2^-32 grid and fixing the sign removes the last-bit noise left by the
    // standardization, so affine copies of y see the same objective exactly.
    let mean = targets.iter().sum::<f64>() / n as f64;
    let sd = (targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    const GRID: f64 = 4294967296.0;
    let mut ys: Vec<f64> = targets.iter().map(|y| ((y - mean) / sd * GRID).round() / GRID).collect();
    if ys.iter().find(|&&v| v != 0.0).is_some_and(|&v| v < 0.0) {
        ys.iter_mut().for_each(|v| *v = -*v);
    }

    let centers: Vec<f64> = component_scales(dist).iter().map(|c| c.ln()).collect();
    let mut last_failure = centers.iter().map(|c| c.exp()).collect::<Vec<_>>();
    let mut objective = |x: &[f64]| -> f64 {
        if x.iter().zip(&centers).any(|(v, c)| (v - c).abs() > LOG_RANGE_BOX) {
            return f64::INFINITY;
        }
        match marginal_posterior(x, dist, &ys, settings.nugget) {
            Ok(v) if v.is_finite() => -v,
            Ok(_) => f64::INFINITY,
            Err(GpError::CholeskyFailure { ranges }) => {
                last_failure = ranges;
                f64::INFINITY
            }
            Err(_) => f64::INFINITY,
        }
    };

    let opts = NelderMeadOptions { max_evals: settings.max_evals, ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in 0..settings.multistarts {
        let x0: Vec<f64> = if start == 0 {
            centers.clone()
        } else {
            centers.iter().map(|c| c + rng.random_range(-2.0..2.0)).collect()
        };
        let m = nelder_mead(&mut objective, &x0, &opts);
        if m.value.is_finite() && best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (log_ranges, neg) = best.ok_or(GpError::OptimizationFailure { last_ranges: last_failure })?;
    // report the objective on the original targets
    let value = marginal_posterior(&log_ranges, dist, targets, settings.nugget).unwrap_or(-neg);
    Ok((log_ranges.iter().map(|l| l.exp()).collect(), value))
}

impl GpModel {
    /// Fits ranges on `train` and caches the factorization at the optimum.
    pub fn fit(train: &[GraphFeatures], targets: &[f64], settings: &GpSettings) -> Result<Self, GpError> {
        if train.len() != targets.len() {
            return Err(GpError::LengthMismatch { what: "targets", expected: train.len(), got: targets.len() });
        }
        let dist = pairwise_distances(train)?;
        let (ranges, log_posterior) = optimize_ranges(&dist, targets, settings)?;
        Self::with_ranges(train.to_vec(), targets.to_vec(), dist, ranges, settings.nugget, log_posterior)
    }

    /// Builds the model at fixed ranges, skipping optimization.
    pub fn from_ranges(
        train: &[GraphFeatures],
        targets: &[f64],
        ranges: Vec<f64>,
        nugget: f64,
    ) -> Result<Self, GpError> {
        if train.len() != targets.len() {
            return Err(GpError::LengthMismatch { what: "targets", expected: train.len(), got: targets.len() });
        }
        let dist = pairwise_distances(train)?;
        let log_ranges: Vec<f64> = ranges.iter().map(|r| r.ln()).collect();
        let lp = marginal_posterior(&log_ranges, &dist, targets, nugget).unwrap_or(f64::NEG_INFINITY);
        Self::with_ranges(train.to_vec(), targets.to_vec(), dist, ranges, nugget, lp)
    }

    fn with_ranges(
        train: Vec<GraphFeatures>,
        targets: Vec<f64>,
        dist: DistanceMatrices,
        ranges: Vec<f64>,
        nugget: f64,
        log_posterior: f64,
    ) -> Result<Self, GpError> {
        let n = targets.len();
        if n < 2 {
            return Err(GpError::TooFewRecords { needed: 2, got: n });
        }
        let prof = profile(&dist, &ranges, &targets, nugget)?;
        let sigma2 = prof.s2 / (n as f64 - 1.0);
        Ok(Self {
            hyper: GpHyperParams { ranges, nugget, theta: prof.theta, sigma2 },
            log_posterior,
            train,
            targets,
            train_distances: dist,
            chol_lower: prof.chol.l(),
            rinv_h: prof.rinv_h,
            rinv_resid: prof.rinv_resid,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn h_rinv_h(&self) -> f64 {
        self.rinv_h.sum()
    }

    /// Student-t predictive distribution at `test`.
    pub fn predict(&self, test: &[GraphFeatures]) -> Result<PredictiveDistribution, GpError> {
        let dof = self.len() - 1;
        if test.is_empty() {
            return Ok(PredictiveDistribution {
                ids: Vec::new(),
                mean: DVector::zeros(0),
                scale: DMatrix::zeros(0, 0),
                dof,
            });
        }
        let cross = cross_distances(test, &self.train)?;
        let among = pairwise_distances(test)?;
        let r_star = correlation(&cross, &self.hyper.ranges)?;
        let r_ss = correlation(&among, &self.hyper.ranges)?;
        self.predict_from_correlations(test.iter().map(|f| f.id.clone()).collect(), &r_star, &r_ss)
    }

    /// Prediction from precomputed test/train (`N* x N`) and test/test correlations.
    pub fn predict_from_correlations(
        &self,
        ids: Vec<String>,
        r_star: &DMatrix<f64>,
        r_ss: &DMatrix<f64>,
    ) -> Result<PredictiveDistribution, GpError> {
        let n_star = r_star.nrows();
        let mean = (r_star * &self.rinv_resid).add_scalar(self.hyper.theta);
        // V = L^-1 R*^T
        let v = self
            .chol_lower
            .solve_lower_triangular(&r_star.transpose())
            .expect("Cholesky factor has a nonzero diagonal");
        let u = DVector::from_element(n_star, 1.0) - r_star * &self.rinv_h;
        let mut c = r_ss - v.transpose() * &v + (&u * u.transpose()) / self.h_rinv_h();
        c *= self.hyper.sigma2;
        let scale = symmetrize_floor(c);
        Ok(PredictiveDistribution { ids, mean, scale, dof: self.len() - 1 })
    }
}

/// Symmetrizes and clips negative eigenvalues to zero.
fn symmetrize_floor(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= 0.0 {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub ids: Vec<String>,
    pub mean: DVector<f64>,
    /// Scale matrix `sigma2 * C`.
    pub scale: DMatrix<f64>,
    pub dof: usize,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Marginal t-scale of prediction `i`.
    pub fn marginal_scale(&self, i: usize) -> f64 {
        self.scale[(i, i)].max(0.0).sqrt()
    }

    /// Upper `(1 + level) / 2` quantile of the standard t with `dof` degrees of freedom.
    pub fn t_quantile(&self, level: f64) -> f64 {
        let t = StudentsT::new(0.0, 1.0, self.dof as f64).expect("positive degrees of freedom");
        t.inverse_cdf(0.5 + level / 2.0)
    }

    /// Equal-tailed intervals at `level` for every prediction.
    pub fn intervals(&self, level: f64) -> Vec<(f64, f64)> {
        let q = self.t_quantile(level);
        (0..self.len())
            .map(|i| {
                let half = q * self.marginal_scale(i);
                (self.mean[i] - half, self.mean[i] + half)
            })
            .collect()
    }
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<(), GpError> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(GpError::LengthMismatch { what: "predictions", expected: truth.len(), got: pred.len() });
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, GpError> {
    check_lengths(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// `1 - SSE / SST`; NaN when the truth is constant.
pub fn q2(pred: &[f64], truth: &[f64]) -> Result<f64, GpError> {
    check_lengths(pred, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let sst: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN })
}
