use nalgebra::DMatrix;
use proptest::prelude::*;
use swwl::graph::{AttributedGraph, Edge};
use swwl::wl::{embed, wl_iterate, WlConfig};

/// Random simple graph: `n` nodes, `d`-dim attributes, unit or random positive weights.
fn graph_strategy(max_n: usize, unit_weights: bool) -> impl Strategy<Value = AttributedGraph> {
    (1..=max_n, 1usize..=3).prop_flat_map(move |(n, d)| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let m = pairs.len();
        (
            prop::collection::vec(-10.0f64..10.0, n * d),
            prop::collection::vec(any::<bool>(), m),
            prop::collection::vec(0.1f64..3.0, m),
        )
            .prop_map(move |(attrs, keep, weights)| {
                let edges = pairs
                    .iter()
                    .zip(keep.iter().zip(&weights))
                    .filter(|(_, (k, _))| **k)
                    .map(|(&(u, v), (_, &w))| Edge { u, v, weight: if unit_weights { 1.0 } else { w } })
                    .collect();
                AttributedGraph::new(DMatrix::from_row_slice(n, d, &attrs), edges).unwrap()
            })
    })
}

/// Dense double-loop evaluation of one iteration.
fn naive_iterate(g: &AttributedGraph, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.node_count();
    let mut w = vec![vec![0.0; n]; n];
    for e in g.edges() {
        w[e.u][e.v] = e.weight;
        w[e.v][e.u] = e.weight;
    }
    let mut out = x.clone();
    for u in 0..n {
        let deg = (0..n).filter(|&v| w[u][v] != 0.0).count();
        if deg == 0 {
            continue;
        }
        for j in 0..x.ncols() {
            let mut s = 0.0;
            for v in 0..n {
                s += w[u][v] * x[(v, j)];
            }
            out[(u, j)] = 0.5 * (x[(u, j)] + s / deg as f64);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_naive_implementation(g in graph_strategy(6, false)) {
        let mut x = g.attributes().clone();
        for _ in 0..3 {
            let fast = wl_iterate(&g, &x).unwrap();
            let slow = naive_iterate(&g, &x);
            for (a, b) in fast.iter().zip(slow.iter()) {
                prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
            x = fast;
        }
    }

    #[test]
    fn permutation_equivariance(g in graph_strategy(12, false), seed in any::<u64>()) {
        let n = g.node_count();
        // Fisher-Yates driven by a small LCG so the permutation is part of the case
        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let attrs = DMatrix::from_fn(n, g.attr_dim(), |i, j| g.attributes()[(perm[i], j)]);
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let edges = g.edges().iter().map(|e| Edge { u: inv[e.u], v: inv[e.v], weight: e.weight }).collect();
        let h = AttributedGraph::new(attrs, edges).unwrap();
        let cfg = WlConfig::up_to(3);
        let eg = embed(&g, &cfg, "g");
        let eh = embed(&h, &cfg, "h");
        for (i, &pi) in perm.iter().enumerate() {
            for j in 0..eg.values.ncols() {
                prop_assert!((eh.values[(i, j)] - eg.values[(pi, j)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn convex_combination_with_unit_weights(g in graph_strategy(15, true)) {
        let x = g.attributes();
        let y = wl_iterate(&g, x).unwrap();
        for u in 0..g.node_count() {
            let (nbrs, _) = g.neighbors(u);
            for j in 0..g.attr_dim() {
                let vals = std::iter::once(x[(u, j)]).chain(nbrs.iter().map(|&v| x[(v, j)]));
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
                prop_assert!(y[(u, j)] >= lo - 1e-12 && y[(u, j)] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn degree_sum_is_twice_edge_count(g in graph_strategy(20, false)) {
        let total: usize = (0..g.node_count()).map(|u| g.degree(u).unwrap()).sum();
        prop_assert_eq!(total, 2 * g.edge_count());
    }

    #[test]
    fn first_block_is_raw_attributes(g in graph_strategy(10, false)) {
        let e = embed(&g, &WlConfig::up_to(2), "g");
        prop_assert_eq!(e.block(0), g.attributes().clone());
        prop_assert!(e.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn constant_attributes_on_components_are_fixed() {
    // two components, each constant
    let attrs = DMatrix::from_row_slice(5, 1, &[2.0, 2.0, 2.0, -1.0, -1.0]);
    let edges = vec![
        Edge { u: 0, v: 1, weight: 1.0 },
        Edge { u: 1, v: 2, weight: 1.0 },
        Edge { u: 3, v: 4, weight: 1.0 },
    ];
    let g = AttributedGraph::new(attrs.clone(), edges).unwrap();
    assert_eq!(wl_iterate(&g, &attrs).unwrap(), attrs);
}

#[test]
fn skip_keeps_multiples_of_step() {
    let path: Vec<Edge> = (0..29).map(|u| Edge { u, v: u + 1, weight: 1.0 }).collect();
    let g = AttributedGraph::new(DMatrix::from_fn(30, 1, |i, _| (i * i) as f64), path).unwrap();
    let skip = embed(&g, &WlConfig::skip(4), "g");
    let full = embed(&g, &WlConfig::up_to(12), "g");
    for (k, it) in [0, 4, 8, 12].into_iter().enumerate() {
        assert_eq!(skip.block(k), full.block(it));
    }
}
