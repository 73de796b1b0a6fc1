mod common;

use clustersync::graph::*;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_cluster(n: usize) -> ClusterPartition {
    ClusterPartition::new(vec![(0..n).collect()]).unwrap()
}

fn lap(g: &WeightedDigraph, part: &ClusterPartition, pin: DVector<f64>, c: Vec<f64>) -> BlockLaplacian {
    laplacian_of(g, &TrustSchedule::full(), 0.0, part, &pin, &CouplingGains::new(c).unwrap()).unwrap()
}

#[test]
fn single_edge_laplacian() {
    let g = WeightedDigraph::from_edges(2, &[(1, 0, 1.0)]).unwrap();
    let l = lap(&g, &one_cluster(2), DVector::zeros(2), vec![1.0]);
    assert_eq!(l.laplacian(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]));
}

#[test]
fn empty_graph_laplacian_is_zero() {
    let l = lap(&WeightedDigraph::empty(4), &one_cluster(4), DVector::zeros(4), vec![1.0]);
    assert_eq!(l.laplacian(), DMatrix::zeros(4, 4));
}

#[test]
fn half_trust_scales_cycle() {
    let g = WeightedDigraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
    let mut trust = TrustSchedule::full();
    for (f, t) in [(0, 1), (1, 2), (2, 0)] {
        trust.set(f, t, PiecewiseConstant::constant(0.5).unwrap());
    }
    let part = one_cluster(3);
    let c = CouplingGains::uniform(1, 1.0).unwrap();
    let l = laplacian_of(&g, &trust, 0.0, &part, &DVector::zeros(3), &c).unwrap().laplacian();
    let expect = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, -0.5, -0.5, 0.5, 0.0, 0.0, -0.5, 0.5]);
    assert!(max_abs(&(&l - expect)) < 1e-15);
    for r in l.row_iter() {
        assert!(r.sum().abs() < 1e-15);
    }
}

#[test]
fn laplacian_errors() {
    let part = one_cluster(2);
    let g = WeightedDigraph::empty(2);
    assert!(CouplingGains::new(vec![-1.0]).is_err());
    let c = CouplingGains::uniform(1, 1.0).unwrap();
    assert!(laplacian_of(&g, &TrustSchedule::full(), 0.0, &part, &DVector::zeros(3), &c).is_err());
    assert!(WeightedDigraph::new(DMatrix::from_row_slice(2, 2, &[0.0, f64::NAN, 0.0, 0.0])).is_err());
}

#[test]
fn intra_blocks_scaled_by_cluster_gain() {
    let part = ClusterPartition::new(vec![vec![0, 1], vec![2]]).unwrap();
    let g = WeightedDigraph::from_edges(3, &[(1, 0, 1.0), (2, 0, 0.5)]).unwrap();
    let pin = DVector::from_vec(vec![0.0, 1.0, 1.0]);
    let l = lap(&g, &part, pin.clone(), vec![3.0, 2.0]);
    let oracle = grounded_oracle(g.adjacency(), &pin, &cluster_of(&part), &[3.0, 2.0]);
    assert!(max_abs(&(l.grounded() - oracle)) < 1e-15);
}

#[test]
fn balance_examples() {
    let part = ClusterPartition::new(vec![vec![0], vec![1, 2]]).unwrap();
    let balanced = WeightedDigraph::from_edges(3, &[(1, 0, 1.0), (2, 0, -1.0)]).unwrap();
    assert!(in_degree_balance_check(&lap(&balanced, &part, DVector::zeros(3), vec![1.0, 1.0]), 1e-12).passed());

    let single = WeightedDigraph::from_edges(3, &[(1, 0, 1.0)]).unwrap();
    let report = in_degree_balance_check(&lap(&single, &part, DVector::zeros(3), vec![1.0, 1.0]), 1e-12);
    assert!(!report.passed());
    assert_eq!((report.violations[0].node, report.violations[0].cluster), (0, 1));
}

#[test]
fn union_graph_examples() {
    let part = one_cluster(2);
    let g1 = WeightedDigraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
    let g2 = WeightedDigraph::from_edges(2, &[(1, 0, 2.0)]).unwrap();
    let net = |dwell: [f64; 2], graphs: Vec<WeightedDigraph>| {
        let tops = graphs
            .into_iter()
            .enumerate()
            .map(|(k, g)| PinnedGraph::new(format!("g{k}"), g, DVector::zeros(2)).unwrap())
            .collect::<Vec<_>>();
        let phases = (0..tops.len()).map(|k| Phase { graph: k, dwell: dwell[k] }).collect();
        SwitchedNetwork::new(
            part.clone(),
            tops,
            SwitchingSignal::new(phases, true, 0.1).unwrap(),
            TrustSchedule::full(),
            CouplingGains::uniform(1, 1.0).unwrap(),
        )
        .unwrap()
    };
    let constant = net([1.0, 1.0], vec![g1.clone()]);
    assert!(max_abs(&(constant.union_graph(0.0, 1.0).unwrap().adjacency() - g1.adjacency())) < 1e-15);

    let equal = net([1.0, 1.0], vec![g1.clone(), g2.clone()]);
    let expect = (g1.adjacency() + g2.adjacency()) * 0.5 * 0.2;
    assert!(max_abs(&(equal.union_graph(0.0, 0.2).unwrap().adjacency() - expect)) < 1e-15);

    let skew = net([1.0, 3.0], vec![g1.clone(), g2.clone()]);
    let expect = (g1.adjacency() * 0.25 + g2.adjacency() * 0.75) * 0.4;
    assert!(max_abs(&(skew.union_graph(0.0, 0.4).unwrap().adjacency() - expect)) < 1e-14);

    assert!(equal.union_graph(1.0, 1.0).is_err());
}

#[test]
fn constant_average_has_zero_kappa() {
    let d = benchmark_design(0.01);
    let mut net = d.scenario.network.clone();
    net.signal = SwitchingSignal::constant(0, 0.01).unwrap();
    let avg = net.average_laplacian(10.0, 50).unwrap();
    assert!(max_abs(&(avg.average.grounded() - net.topology_laplacian(0).grounded())) < 1e-15);
    assert!(avg.kappa < 1e-12);
}

#[test]
fn equal_dwell_average_and_beta_decay() {
    let d = benchmark_design(0.01);
    let net = &d.scenario.network;
    let avg = net.average_laplacian(10.0, 200).unwrap();
    let mean = (net.topology_laplacian(0).laplacian() + net.topology_laplacian(1).laplacian()) * 0.5;
    assert!(max_abs(&(&avg.l_inf - &mean)) < 1e-12);
    for r in avg.l_inf.row_iter() {
        assert!(r.sum().abs() < 1e-12);
    }
    // β(t) is O(1/t): t·β(t) stays bounded.
    let scaled: Vec<f64> = avg.beta_trace.iter().map(|(t, b)| t * b).collect();
    let bound = scaled.iter().cloned().fold(0.0, f64::max);
    assert!(bound < 1.0, "t·beta reaches {bound}");
    assert!((avg.kappa - avg.beta_trace.iter().map(|p| p.1).fold(0.0, f64::max)).abs() < 1e-15);
}

#[test]
fn spanning_tree_examples() {
    let part = one_cluster(3);
    let chain = WeightedDigraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let pin = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    assert!(spanning_tree_check(chain.adjacency(), &part, &pin, 1e-9).passed());

    let broken = WeightedDigraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
    let report = spanning_tree_check(broken.adjacency(), &part, &pin, 1e-9);
    assert_eq!(report.clusters[0].unreached, vec![2]);
}

#[test]
fn benchmark_union_connected_phases_not() {
    let d = benchmark_design(0.01);
    let net = &d.scenario.network;
    let avg = &d.average.average;
    assert!(spanning_tree_check(&avg.laplacian(), &net.partition, avg.pinning(), EDGE_TOL).passed());
    for k in 0..2 {
        let l = net.topology_laplacian(k);
        assert!(!spanning_tree_check(&l.laplacian(), &net.partition, l.pinning(), EDGE_TOL).passed());
    }
}

fn random_network(seed: u64, eps: f64, cyclic: bool) -> SwitchedNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = random_pinned_tree(&mut rng);
    let n = first.partition.node_count();
    let p = first.partition.cluster_count();
    let cl = cluster_of(&first.partition);
    let adj = DMatrix::from_fn(n, n, |i, j| {
        let w = first.graph.adjacency()[(j, i)];
        if cl[i] == cl[j] { 0.5 * w.abs() } else { 0.0 }
    });
    let pin = first.pinning.map(|d| 2.0 * d);
    let tops = vec![
        PinnedGraph::new("a", first.graph, first.pinning).unwrap(),
        PinnedGraph::new("b", WeightedDigraph::new(adj).unwrap(), pin).unwrap(),
    ];
    let phases = vec![Phase { graph: 0, dwell: 1.0 }, Phase { graph: 1, dwell: 2.5 }];
    SwitchedNetwork::new(
        first.partition,
        tops,
        SwitchingSignal::new(phases, cyclic, eps).unwrap(),
        TrustSchedule::full(),
        CouplingGains::uniform(p, 1.7).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn row_sums_vanish(seed in any::<u64>(), c in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_pinned_tree(&mut rng);
        let p = net.partition.cluster_count();
        let l = lap(&net.graph, &net.partition, net.pinning, vec![c; p]).laplacian();
        for r in l.row_iter() {
            prop_assert!(r.sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn union_is_additive(seed in any::<u64>(), t0 in 0.0f64..3.0, a in 0.01f64..2.0, b in 0.01f64..2.0) {
        let net = random_network(seed, 0.07, true);
        let (t1, t2) = (t0 + a, t0 + a + b);
        let sum = net.union_graph(t0, t1).unwrap().adjacency() + net.union_graph(t1, t2).unwrap().adjacency();
        prop_assert!(max_abs(&(sum - net.union_graph(t0, t2).unwrap().adjacency())) <= 1e-12);
    }

    #[test]
    fn cyclic_average_ignores_offset(seed in any::<u64>(), t0 in 0.0f64..5.0) {
        let net = random_network(seed, 0.07, true);
        let a = net.average_laplacian_from(0.0, 4.0, 10).unwrap();
        let b = net.average_laplacian_from(t0, 4.0, 10).unwrap();
        prop_assert!(max_abs(&(a.l_inf - b.l_inf)) <= 1e-10);
    }

    #[test]
    fn unit_trust_is_identity(seed in any::<u64>(), tau in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_pinned_tree(&mut rng);
        let n = net.partition.node_count();
        let mut trust = TrustSchedule::full();
        for i in 0..n {
            for j in 0..n {
                if net.graph.adjacency()[(i, j)] != 0.0 {
                    trust.set(j, i, PiecewiseConstant::constant(1.0).unwrap());
                }
            }
        }
        let c = CouplingGains::uniform(net.partition.cluster_count(), 1.0).unwrap();
        let l = laplacian_of(&net.graph, &trust, tau, &net.partition, &net.pinning, &c).unwrap();
        prop_assert_eq!(&l.adjacency(), net.graph.adjacency());
    }

    #[test]
    fn tree_check_ignores_scale(seed in any::<u64>(), s in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_pinned_tree(&mut rng);
        let base = spanning_tree_check(net.graph.adjacency(), &net.partition, &net.pinning, 1e-12);
        let scaled = spanning_tree_check(&(net.graph.adjacency() * s), &net.partition, &(&net.pinning * s), 1e-12);
        prop_assert_eq!(base.passed(), scaled.passed());
        prop_assert!(base.passed());
    }

    #[test]
    fn balanced_construction_passes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_pinned_tree(&mut rng);
        let p = net.partition.cluster_count();
        let l = lap(&net.graph, &net.partition, net.pinning, vec![1.0; p]);
        prop_assert!(in_degree_balance_check(&l, 1e-12).passed());
    }
}

#[test]
fn skewed_dwell_matches_quadrature() {
    let net = random_network(3, 0.1, true);
    let (t0, t1): (f64, f64) = (0.0, 0.35);
    let dt = 1e-4;
    let steps = ((t1 - t0) / dt).round() as usize;
    let mut acc = DMatrix::zeros(net.partition.node_count(), net.partition.node_count());
    for s in 0..steps {
        let t = t0 + (s as f64 + 0.5) * dt;
        // Phase one covers the first 1/3.5 of every 0.35 s period.
        let k = if (t / 0.1) % 3.5 < 1.0 { 0 } else { 1 };
        acc += net.topologies[k].graph.adjacency() * dt;
    }
    assert!(max_abs(&(net.union_graph(t0, t1).unwrap().adjacency() - acc)) < 1e-9);
}
