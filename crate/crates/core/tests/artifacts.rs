use swwl::artifact::{check_feature_set, read_model, read_pq, read_wl, write_model, write_pq, write_wl, ArtifactError};
use swwl::graph::{read_jsonl, write_jsonl};
use swwl::synth::{generate, RggConfig};
use swwl::wl::embed;
use swwl::{FeatureConfig, FeatureSpace, GpModel, GpSettings, WlConfig};

fn dataset(seed: u64) -> swwl::Dataset {
    generate(&RggConfig { graphs: 24, nodes: 30, scalar_dim: 1, seed, ..Default::default() }).unwrap()
}

#[test]
fn jsonl_roundtrip_is_bit_exact() {
    let ds = dataset(1);
    let mut buf = Vec::new();
    write_jsonl(&ds, &mut buf).unwrap();
    let back = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.records().iter().zip(ds.records()) {
        let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.graph.attributes()), bits(b.graph.attributes()));
        assert_eq!(a.target.map(f64::to_bits), b.target.map(f64::to_bits));
    }
    let mut again = Vec::new();
    write_jsonl(&back, &mut again).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn wl_cache_roundtrip() {
    let ds = dataset(2);
    let g = &ds.records()[0].graph;
    let e = embed(g, &WlConfig::skip(2), "rgg-0");
    let mut buf = Vec::new();
    write_wl(&mut buf, &e).unwrap();
    assert_eq!(read_wl(&mut buf.as_slice()).unwrap(), e);
    assert!(read_wl(&mut &buf[..buf.len() - 1]).is_err());
}

#[test]
fn pq_cache_roundtrip_and_mismatch() {
    let ds = dataset(3);
    let space = |seed| FeatureSpace::new(FeatureConfig { projections: 7, quantiles: 9, ..FeatureConfig::regression_defaults(seed) }, 2).unwrap();
    let f = space(5).embed_dataset(&ds).unwrap();
    let mut reread = f.clone();
    for feat in &mut reread {
        for block in &mut feat.blocks {
            let mut buf = Vec::new();
            write_pq(&mut buf, block).unwrap();
            *block = read_pq(&mut buf.as_slice()).unwrap();
        }
    }
    assert_eq!(reread, f);
    check_feature_set(&reread).unwrap();

    let other = space(6).embed_dataset(&ds).unwrap();
    let mixed = vec![f[0].clone(), other[1].clone()];
    let err = check_feature_set(&mixed).unwrap_err();
    assert!(matches!(err, ArtifactError::Mismatch(_)));
    assert!(err.to_string().contains("seed"), "{err}");
}

#[test]
fn model_roundtrip_predicts_identically() {
    let ds = dataset(4);
    let cfg = FeatureConfig { projections: 10, quantiles: 20, ..FeatureConfig::regression_defaults(0) };
    let f = FeatureSpace::new(cfg, 2).unwrap().embed_dataset(&ds).unwrap();
    let y = ds.targets().unwrap();
    let model = GpModel::fit(&f[..18], &y[..18], &GpSettings::default()).unwrap();
    let mut buf = Vec::new();
    write_model(&mut buf, &model).unwrap();
    let back = read_model(&mut buf.as_slice()).unwrap();
    assert_eq!(back.hyper, model.hyper);
    let (a, b) = (model.predict(&f[18..]).unwrap(), back.predict(&f[18..]).unwrap());
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.scale, b.scale);
    assert!(read_model(&mut &buf[..buf.len() / 2]).is_err());
}
