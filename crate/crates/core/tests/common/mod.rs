#![allow(dead_code)]

use clustersync::analysis::{self, Design};
use clustersync::benchmark;
use clustersync::graph::{ClusterPartition, WeightedDigraph};
use clustersync::scenario::ClusterScenario;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random network whose every cluster has a leader-rooted spanning tree and
/// whose inter-cluster inputs cancel per foreign cluster.
pub struct RandomNet {
    pub partition: ClusterPartition,
    pub graph: WeightedDigraph,
    pub pinning: DVector<f64>,
}

pub fn random_pinned_tree<R: Rng>(rng: &mut R) -> RandomNet {
    let p = rng.gen_range(1..=3);
    let sizes: Vec<usize> = (0..p).map(|_| rng.gen_range(1..=4)).collect();
    let n: usize = sizes.iter().sum();
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    let mut clusters = Vec::new();
    let mut start = 0;
    for s in &sizes {
        clusters.push(nodes[start..start + s].to_vec());
        start += s;
    }
    let mut adj = DMatrix::zeros(n, n);
    let mut pin = DVector::zeros(n);
    for members in &clusters {
        pin[members[0]] = rng.gen_range(0.5..2.0);
        for k in 1..members.len() {
            let parent = members[rng.gen_range(0..k)];
            adj[(members[k], parent)] = rng.gen_range(0.5..2.0);
        }
        for &i in members {
            for &j in members {
                if i != j && adj[(i, j)] == 0.0 && rng.gen_bool(0.2) {
                    adj[(i, j)] = rng.gen_range(0.1..1.0);
                }
            }
            if pin[i] == 0.0 && rng.gen_bool(0.2) {
                pin[i] = rng.gen_range(0.1..1.0);
            }
        }
    }
    for (ci, members) in clusters.iter().enumerate() {
        for &i in members {
            for (cl, other) in clusters.iter().enumerate() {
                if cl == ci || other.len() < 2 || !rng.gen_bool(0.6) {
                    continue;
                }
                let mut pick = other.clone();
                pick.shuffle(rng);
                let w = rng.gen_range(0.2..1.5);
                adj[(i, pick[0])] += w;
                adj[(i, pick[1])] -= w;
            }
        }
    }
    RandomNet {
        partition: ClusterPartition::new(clusters).unwrap(),
        graph: WeightedDigraph::new(adj).unwrap(),
        pinning: pin,
    }
}

/// Grounded Laplacian built straight from the definition: intra edges
/// scaled by the cluster gain, inter edges unscaled, pinning scaled by the
/// cluster gain.
pub fn grounded_oracle(adj: &DMatrix<f64>, pinning: &DVector<f64>, cluster_of: &[usize], c: &[f64]) -> DMatrix<f64> {
    let n = adj.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || adj[(i, j)] == 0.0 {
                continue;
            }
            let cij = if cluster_of[i] == cluster_of[j] { c[cluster_of[i]] } else { 1.0 };
            l[(i, j)] -= cij * adj[(i, j)];
            l[(i, i)] += cij * adj[(i, j)];
        }
        l[(i, i)] += c[cluster_of[i]] * pinning[i];
    }
    l
}

pub fn cluster_of(partition: &ClusterPartition) -> Vec<usize> {
    (0..partition.node_count()).map(|i| partition.cluster_of(i)).collect()
}

/// Benchmark scenario with its concrete gains.
pub fn benchmark_design(epsilon: f64) -> Design {
    let sc = benchmark::benchmark(epsilon).resolve().unwrap();
    analysis::design(&sc).unwrap()
}

/// Stacked agent states that sit exactly on their leaders.
pub fn on_leaders(sc: &ClusterScenario) -> DVector<f64> {
    let n = sc.plant.state_dim();
    let part = &sc.network.partition;
    let mut x = DVector::zeros(part.node_count() * n);
    for i in 0..part.node_count() {
        x.rows_mut(i * n, n).copy_from(&sc.leaders[part.cluster_of(i)]);
    }
    x
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
