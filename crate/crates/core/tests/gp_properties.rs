use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swwl::gp::{marginal_posterior, optimize_ranges, profile};
use swwl::kernels::pairwise_distances;
use swwl::synth::{generate, RggConfig};
use swwl::{FeatureConfig, FeatureSpace, GpError, GpModel, GpSettings, GraphFeatures};

fn scalar_inputs(xs: &[Vec<f64>]) -> Vec<GraphFeatures> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| GraphFeatures { id: format!("x{i}"), blocks: Vec::new(), scalars: x.clone() })
        .collect()
}

fn graph_task(seed: u64, graphs: usize, nodes: usize, noise: f64) -> (Vec<GraphFeatures>, Vec<f64>) {
    let ds = generate(&RggConfig { graphs, nodes, target_noise: noise, seed, ..Default::default() }).unwrap();
    let cfg = FeatureConfig { projections: 20, quantiles: 50, ..FeatureConfig::regression_defaults(seed) };
    let f = FeatureSpace::new(cfg, 2).unwrap().embed_dataset(&ds).unwrap();
    (f, ds.targets().unwrap())
}

#[test]
fn noise_free_interpolation() {
    let (f, y) = graph_task(1, 30, 40, 0.01);
    let model = GpModel::fit(&f, &y, &GpSettings { nugget: 0.0, ..Default::default() }).unwrap();
    let pred = model.predict(&f).unwrap();
    let sd = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
    };
    for (i, &yi) in y.iter().enumerate() {
        assert!((pred.mean[i] - yi).abs() <= 1e-6 * yi.abs().max(sd), "{} vs {yi}", pred.mean[i]);
        assert!(pred.scale[(i, i)] / model.hyper.sigma2 <= 1e-8, "C diag {}", pred.scale[(i, i)] / model.hyper.sigma2);
    }
}

#[test]
fn shift_and_scale_equivariance() {
    let (f, y) = graph_task(2, 25, 40, 0.01);
    let (train, test) = f.split_at(20);
    let settings = GpSettings::default();
    let base = GpModel::fit(train, &y[..20], &settings).unwrap();
    let pb = base.predict(test).unwrap();

    let c = 3.25;
    let shifted: Vec<f64> = y[..20].iter().map(|v| v + c).collect();
    let ms = GpModel::fit(train, &shifted, &settings).unwrap();
    let ps = ms.predict(test).unwrap();
    assert_eq!(ms.hyper.ranges, base.hyper.ranges);
    assert!((ms.hyper.sigma2 - base.hyper.sigma2).abs() <= 1e-10 * base.hyper.sigma2);
    for i in 0..test.len() {
        assert!((ps.mean[i] - pb.mean[i] - c).abs() <= 1e-10 * (1.0 + c));
        for j in 0..test.len() {
            assert!((ps.scale[(i, j)] - pb.scale[(i, j)]).abs() <= 1e-10 * base.hyper.sigma2);
        }
    }

    let lambda = -7.5;
    let scaled: Vec<f64> = y[..20].iter().map(|v| v * lambda).collect();
    let ml = GpModel::fit(train, &scaled, &settings).unwrap();
    let pl = ml.predict(test).unwrap();
    assert_eq!(ml.hyper.ranges, base.hyper.ranges);
    assert!((ml.hyper.sigma2 - lambda * lambda * base.hyper.sigma2).abs() <= 1e-10 * ml.hyper.sigma2);
    for i in 0..test.len() {
        assert!((pl.mean[i] - lambda * pb.mean[i]).abs() <= 1e-10 * (lambda * pb.mean[i]).abs().max(1.0));
    }
}

#[test]
fn far_point_reverts_to_mean() {
    let (f, y) = graph_task(3, 15, 30, 0.01);
    let model = GpModel::fit(&f, &y, &GpSettings::default()).unwrap();
    let r_star = DMatrix::zeros(1, f.len());
    let r_ss = DMatrix::from_element(1, 1, 1.0);
    let pred = model.predict_from_correlations(vec!["far".into()], &r_star, &r_ss).unwrap();
    assert!((pred.mean[0] - model.hyper.theta).abs() <= 1e-12 * model.hyper.theta.abs().max(1.0));
    let want = model.hyper.sigma2 * (1.0 + 1.0 / model.h_rinv_h());
    assert!((pred.scale[(0, 0)] - want).abs() <= 1e-10 * want);
}

/// Brute-force leave-one-out RMSE relative to the target spread, for
/// exp(-|x|) on 30 uniform points of [-1, 1].
fn loo_ratio(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let y: Vec<f64> = xs.iter().map(|x| (-x[0].abs()).exp()).collect();
    let f = scalar_inputs(&xs);
    let mut sse = 0.0;
    for i in 0..30 {
        let train: Vec<GraphFeatures> = f.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v.clone()).collect();
        let ty: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        let model = GpModel::fit(&train, &ty, &GpSettings::default()).unwrap();
        let p = model.predict(&f[i..=i]).unwrap();
        sse += (p.mean[0] - y[i]).powi(2);
    }
    let m = y.iter().sum::<f64>() / 30.0;
    let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 30.0).sqrt();
    (sse / 30.0).sqrt() / sd
}

#[test]
fn leave_one_out_on_smooth_scalar_function() {
    let ratios: Vec<f64> = (0..8).map(loo_ratio).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    // a sample can land right next to the cusp at 0, hence the looser per-seed bound
    assert!(mean < 0.1, "LOO rmse / std per seed: {ratios:?}");
    assert!(ratios.iter().all(|&r| r < 0.15), "LOO rmse / std per seed: {ratios:?}");
}

#[test]
fn duplicate_inputs_without_nugget_fail_with_hint() {
    let f = scalar_inputs(&[vec![0.0], vec![0.5], vec![0.5], vec![1.0]]);
    let y = [0.0, 1.0, 2.0, 0.5];
    let err = GpModel::from_ranges(&f, &y, vec![1.0], 0.0).unwrap_err();
    assert!(matches!(err, GpError::CholeskyFailure { .. }));
    assert!(err.to_string().contains("nugget"));
    let err = GpModel::fit(&f, &y, &GpSettings { nugget: 0.0, ..Default::default() }).unwrap_err();
    assert!(err.to_string().contains("nugget"), "{err}");
    assert!(GpModel::fit(&f, &y, &GpSettings { nugget: 1e-2, ..Default::default() }).is_ok());
}

#[test]
fn optimum_is_locally_maximal() {
    let (f, y) = graph_task(4, 30, 30, 0.01);
    let dist = pairwise_distances(&f).unwrap();
    let settings = GpSettings::default();
    let (ranges, best) = optimize_ranges(&dist, &y, &settings).unwrap();
    let log: Vec<f64> = ranges.iter().map(|r| r.ln()).collect();
    for delta in [-0.2, 0.2] {
        let moved: Vec<f64> = log.iter().map(|l| l + delta).collect();
        let v = marginal_posterior(&moved, &dist, &y, settings.nugget).unwrap();
        assert!(v <= best + 1e-6 * best.abs().max(1.0), "{v} > {best} at delta {delta}");
    }
    // sigma2 is a nonnegative quadratic form
    let prof = profile(&dist, &ranges, &y, settings.nugget).unwrap();
    assert!(prof.s2 >= 0.0);
}

#[test]
fn interval_coverage_over_seeds() {
    let (mut hits, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let (f, y) = graph_task(100 + seed, 60, 40, 0.0);
        let model = GpModel::fit(&f[..40], &y[..40], &GpSettings { seed, ..Default::default() }).unwrap();
        let pred = model.predict(&f[40..]).unwrap();
        for ((lo, hi), truth) in pred.intervals(0.95).into_iter().zip(&y[40..]) {
            hits += usize::from(lo <= *truth && *truth <= hi);
            total += 1;
        }
    }
    let coverage = hits as f64 / total as f64;
    assert!(coverage >= 0.85, "coverage {coverage}");
}
