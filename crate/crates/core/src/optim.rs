//! Nelder-Mead simplex minimization with restarts.
//!
//! Objective values may be `+inf` to mark infeasible points; they are
//! ordered last and never accepted as improvements.

use std::cell::Cell;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub max_evals: usize,
    /// Absolute spread of simplex values below which a run stops.
    pub f_tol: f64,
    /// Largest vertex distance from the best vertex below which a run stops.
    pub x_tol: f64,
    /// Fresh simplices built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { initial_step: 0.5, max_evals: 2000, f_tol: 1e-10, x_tol: 1e-8, restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let evals = Cell::new(0usize);
    let mut eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut best = Minimum { x: x0.to_vec(), value: eval(x0), evals: 0 };
    let mut step = opts.initial_step;
    for _ in 0..=opts.restarts {
        if evals.get() >= opts.max_evals {
            break;
        }
        let before = best.value;
        let (x, v) = run(&mut eval, &best.x, best.value, step, opts, &|| evals.get());
        if v <= best.value {
            best.x = x;
            best.value = v;
        }
        if before.is_finite() && before - best.value <= opts.f_tol {
            break;
        }
        step *= 0.5;
    }
    best.evals = evals.get();
    best
}

fn run<E, C>(eval: &mut E, x0: &[f64], f0: f64, step: f64, opts: &NelderMeadOptions, count: &C) -> (Vec<f64>, f64)
where
    E: FnMut(&[f64]) -> f64,
    C: Fn() -> usize,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fb, fw) = (simplex[0].1, simplex[n].1);
        let spread = if fw.is_finite() { fw - fb } else { f64::INFINITY };
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| dist_inf(x, &simplex[0].0))
            .fold(0.0, f64::max);
        if (spread <= opts.f_tol && size <= opts.x_tol) || count() >= opts.max_evals || size < 1e-14 {
            break;
        }
        if !fb.is_finite() {
            // every vertex infeasible
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(ALPHA);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(GAMMA);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // outside contraction when the reflection beat the worst vertex, inside otherwise
        let outside = fr < simplex[n].1;
        let xc = if outside { along(RHO * ALPHA) } else { along(-RHO) };
        let fc = eval(&xc);
        let accept = if outside { fc <= fr } else { fc < simplex[n].1 };
        if accept {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            for (xj, bj) in v.0.iter_mut().zip(&best) {
                *xj = bj + SIGMA * (*xj - bj);
            }
            v.1 = eval(&v.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v)
}

fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_evals: 10_000, ..Default::default() };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn respects_infeasible_region() {
        let f = |x: &[f64]| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 2.0).powi(2) + x[1] * x[1] };
        let m = nelder_mead(f, &[1.0, 1.0], &NelderMeadOptions::default());
        assert!((m.x[0] - 2.0).abs() < 1e-4);
        assert!(m.value < 1e-8);
    }

    #[test]
    fn one_dimensional_quadratic() {
        let m = nelder_mead(|x| (x[0] + 3.0).powi(2) + 1.0, &[10.0], &NelderMeadOptions::default());
        assert!((m.x[0] + 3.0).abs() < 1e-5);
        assert!((m.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn all_infeasible_returns_start() {
        let m = nelder_mead(|_| f64::INFINITY, &[0.0, 0.0], &NelderMeadOptions::default());
        assert_eq!(m.value, f64::INFINITY);
        assert_eq!(m.x, vec![0.0, 0.0]);
    }
}
