//! Cluster partitions, trust-weighted digraphs and their Laplacians.
//!
//! Conventions used throughout the crate:
//!
//! * `a[(i, j)]` is the weight of the edge `j → i` (node `i` listens to `j`).
//! * Node and cluster indices are zero-based in memory. Scenario files use
//!   one-based indices and are converted on load.
//! * The switching signal and the trust schedule live on the *fast* time
//!   axis `τ`. The closed loop samples them at `τ = t / ε`, so a phase with
//!   dwell `τ_k` lasts `ε · τ_k` seconds of slow time.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance for exact-arithmetic checks (row sums, balance).
pub const BALANCE_TOL: f64 = 1e-9;
/// Default tolerance for deciding that an averaged edge exists.
pub const EDGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    clusters: Vec<Vec<usize>>,
    membership: Vec<usize>,
}

impl ClusterPartition {
    /// Builds a partition from zero-based node lists. The lists must be
    /// nonempty, pairwise disjoint and cover `0..n` exactly.
    pub fn new(clusters: Vec<Vec<usize>>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::Partition("at least one cluster is required".into()));
        }
        let n: usize = clusters.iter().map(Vec::len).sum();
        let mut membership = vec![usize::MAX; n];
        for (ell, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Partition(format!("cluster {} is empty", ell + 1)));
            }
            for &i in members {
                if i >= n {
                    return Err(Error::Partition(format!(
                        "node {} is out of range for {} nodes",
                        i + 1,
                        n
                    )));
                }
                if membership[i] != usize::MAX {
                    return Err(Error::Partition(format!(
                        "node {} appears in more than one cluster",
                        i + 1
                    )));
                }
                membership[i] = ell;
            }
        }
        Ok(Self {
            clusters,
            membership,
        })
    }

    pub fn node_count(&self) -> usize {
        self.membership.len()
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.membership[node]
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.clusters[cluster]
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.membership[i] == self.membership[j]
    }

    /// Extracts the `(ℓ, k)` block of an `N×N` matrix.
    pub fn block(&self, m: &DMatrix<f64>, ell: usize, k: usize) -> DMatrix<f64> {
        let rows = &self.clusters[ell];
        let cols = &self.clusters[k];
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
    }
}

/// Weighted adjacency matrix; entry `(i, j)` is the weight of edge `j → i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    adjacency: DMatrix<f64>,
}

impl WeightedDigraph {
    pub fn new(adjacency: DMatrix<f64>) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::Dimension(format!(
                "adjacency must be square, got {}×{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        if adjacency.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidValue("adjacency contains a non-finite weight".into()));
        }
        if let Some(i) = (0..adjacency.nrows()).find(|&i| adjacency[(i, i)] != 0.0) {
            return Err(Error::InvalidValue(format!(
                "self-loop weight at node {} must be zero",
                i + 1
            )));
        }
        Ok(Self { adjacency })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: DMatrix::zeros(n, n),
        }
    }

    /// Builds a graph from `(from, to, weight)` triples (zero-based).
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(from, to, w) in edges {
            if from >= n || to >= n {
                return Err(Error::Dimension(format!(
                    "edge {}→{} out of range for {} nodes",
                    from + 1,
                    to + 1,
                    n
                )));
            }
            a[(to, from)] += w;
        }
        Self::new(a)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// Weight of the edge `from → to`.
    pub fn weight(&self, to: usize, from: usize) -> f64 {
        self.adjacency[(to, from)]
    }

    /// Rejects negative intra-cluster weights. Inter-cluster weights may carry
    /// either sign.
    pub fn check_signs(&self, partition: &ClusterPartition) -> Result<()> {
        self.check_partition(partition)?;
        let n = self.node_count();
        for i in 0..n {
            for j in 0..n {
                if partition.same_cluster(i, j) && self.adjacency[(i, j)] < 0.0 {
                    return Err(Error::InvalidValue(format!(
                        "negative intra-cluster weight {} on edge {}→{}",
                        self.adjacency[(i, j)],
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_partition(&self, partition: &ClusterPartition) -> Result<()> {
        if partition.node_count() != self.node_count() {
            return Err(Error::Dimension(format!(
                "graph has {} nodes but partition covers {}",
                self.node_count(),
                partition.node_count()
            )));
        }
        Ok(())
    }
}

/// Right-continuous piecewise-constant function of fast time. The value
/// before the first step is `initial`; the last value is held forever.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    initial: f64,
    steps: Vec<(f64, f64)>,
}

impl PiecewiseConstant {
    pub fn constant(value: f64) -> Result<Self> {
        Self::new(value, Vec::new())
    }

    pub fn new(initial: f64, steps: Vec<(f64, f64)>) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(initial) || steps.iter().any(|&(_, v)| !in_unit(v)) {
            return Err(Error::InvalidValue("trust values must lie in [0, 1]".into()));
        }
        if steps.iter().any(|&(t, _)| !t.is_finite()) {
            return Err(Error::InvalidValue("trust breakpoints must be finite".into()));
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidValue(
                "trust breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self { initial, steps })
    }

    pub fn at(&self, tau: f64) -> f64 {
        match self.steps.partition_point(|&(t, _)| t <= tau) {
            0 => self.initial,
            k => self.steps[k - 1].1,
        }
    }

    pub fn terminal(&self) -> f64 {
        self.steps.last().map_or(self.initial, |&(_, v)| v)
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }
}

/// Per-edge trust weights `γ_ij(τ) ∈ [0, 1]`; edges without an entry are
/// fully trusted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustSchedule {
    edges: BTreeMap<(usize, usize), PiecewiseConstant>,
}

impl TrustSchedule {
    pub fn full() -> Self {
        Self::default()
    }

    /// Sets the trust function of the edge `from → to`.
    pub fn set(&mut self, from: usize, to: usize, gamma: PiecewiseConstant) {
        self.edges.insert((to, from), gamma);
    }

    pub fn gamma(&self, to: usize, from: usize, tau: f64) -> f64 {
        self.edges.get(&(to, from)).map_or(1.0, |g| g.at(tau))
    }

    pub fn terminal_gamma(&self, to: usize, from: usize) -> f64 {
        self.edges.get(&(to, from)).map_or(1.0, PiecewiseConstant::terminal)
    }

    /// Entries as `((to, from), γ)`.
    pub fn entries(&self) -> impl Iterator<Item = (&(usize, usize), &PiecewiseConstant)> {
        self.edges.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// All breakpoints on the fast time axis, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .edges
            .values()
            .flat_map(|g| g.steps.iter().map(|&(t, _)| t))
            .collect();
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        out
    }

    fn trusted(&self, graph: &WeightedDigraph, tau: Option<f64>) -> DMatrix<f64> {
        let mut a = graph.adjacency.clone();
        for (&(to, from), g) in &self.edges {
            if to < a.nrows() && from < a.ncols() {
                a[(to, from)] *= tau.map_or_else(|| g.terminal(), |t| g.at(t));
            }
        }
        a
    }
}

/// One topology of the switching family: a digraph plus its pinning gains.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnedGraph {
    pub name: String,
    pub graph: WeightedDigraph,
    pub pinning: DVector<f64>,
}

impl PinnedGraph {
    pub fn new(name: impl Into<String>, graph: WeightedDigraph, pinning: DVector<f64>) -> Result<Self> {
        if pinning.len() != graph.node_count() {
            return Err(Error::Dimension(format!(
                "pinning vector has {} entries for {} nodes",
                pinning.len(),
                graph.node_count()
            )));
        }
        if pinning.iter().any(|&d| !d.is_finite() || d < 0.0) {
            return Err(Error::InvalidValue("pinning gains must be finite and ≥ 0".into()));
        }
        Ok(Self {
            name: name.into(),
            graph,
            pinning,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    /// Index into the topology list.
    pub graph: usize,
    /// Dwell in fast time units.
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    phases: Vec<Phase>,
    cyclic: bool,
    epsilon: f64,
}

impl SwitchingSignal {
    pub fn new(phases: Vec<Phase>, cyclic: bool, epsilon: f64) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Signal("at least one phase is required".into()));
        }
        if phases.iter().any(|p| !(p.dwell > 0.0 && p.dwell.is_finite())) {
            return Err(Error::Signal("dwell times must be positive and finite".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Signal(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            phases,
            cyclic,
            epsilon,
        })
    }

    pub fn constant(graph: usize, epsilon: f64) -> Result<Self> {
        Self::new(vec![Phase { graph, dwell: 1.0 }], true, epsilon)
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.phases.clone(), self.cyclic, epsilon)
    }

    /// Sum of dwell times (fast time).
    pub fn period(&self) -> f64 {
        self.phases.iter().map(|p| p.dwell).sum()
    }

    pub fn min_dwell(&self) -> f64 {
        self.phases.iter().map(|p| p.dwell).fold(f64::INFINITY, f64::min)
    }

    /// Slow-time dwell of phase `k`.
    pub fn effective_dwell(&self, k: usize) -> f64 {
        self.epsilon * self.phases[k].dwell
    }

    /// Index of the phase active at fast time `tau` (right-continuous). An
    /// acyclic signal holds its last phase after the schedule ends.
    pub fn phase_index_at(&self, tau: f64) -> usize {
        let period = self.period();
        let local = if self.cyclic {
            tau.rem_euclid(period)
        } else if tau >= period {
            return self.phases.len() - 1;
        } else {
            tau.max(0.0)
        };
        let mut acc = 0.0;
        for (k, p) in self.phases.iter().enumerate() {
            acc += p.dwell;
            if local < acc {
                return k;
            }
        }
        self.phases.len() - 1
    }

    /// Switching instants (slow time) strictly inside `(t0, t1)`.
    pub fn switch_times(&self, t0: f64, t1: f64) -> Vec<f64> {
        let eps = self.epsilon;
        let mut starts = Vec::with_capacity(self.phases.len());
        let mut acc = 0.0;
        for p in &self.phases {
            starts.push(acc);
            acc += p.dwell;
        }
        let period = acc;
        let mut out = Vec::new();
        if self.cyclic {
            let first_cycle = (t0 / (eps * period)).floor() as i64 - 1;
            let mut cycle = first_cycle.max(-1);
            loop {
                let base = cycle as f64 * period;
                if eps * base > t1 {
                    break;
                }
                for &s in &starts {
                    let t = eps * (base + s);
                    if t > t0 && t < t1 {
                        out.push(t);
                    }
                }
                cycle += 1;
            }
        } else {
            for &s in starts.iter().skip(1) {
                let t = eps * s;
                if t > t0 && t < t1 {
                    out.push(t);
                }
            }
        }
        out
    }
}

/// Cluster gains `c_ℓ` plus optional per-edge coupling overrides `c_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGains {
    cluster: Vec<f64>,
    overrides: BTreeMap<(usize, usize), f64>,
}

impl CouplingGains {
    pub fn new(cluster: Vec<f64>) -> Result<Self> {
        if cluster.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidValue("cluster gains must be positive".into()));
        }
        Ok(Self {
            cluster,
            overrides: BTreeMap::new(),
        })
    }

    pub fn uniform(p: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; p])
    }

    /// Overrides the coupling on edge `from → to`.
    pub fn with_override(mut self, from: usize, to: usize, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidValue("edge coupling override must be finite".into()));
        }
        self.overrides.insert((to, from), c);
        Ok(self)
    }

    pub fn cluster(&self) -> &[f64] {
        &self.cluster
    }

    /// Overrides keyed by `(to, from)`.
    pub fn overrides(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.overrides
    }

    pub fn with_cluster_gains(&self, cluster: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(cluster)?;
        out.overrides = self.overrides.clone();
        Ok(out)
    }
}

/// Partitioned, gain-scaled Laplacian of one (possibly averaged) topology.
///
/// The raw adjacency is stored split into its intra- and inter-cluster parts
/// so the gain-independent pieces needed by the threshold computation can be
/// recovered. `effective` holds `c_ij · a_ij` with `c_ij = c_ī` inside a
/// cluster and `1` across clusters unless overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLaplacian {
    partition: ClusterPartition,
    intra: DMatrix<f64>,
    inter: DMatrix<f64>,
    pinning: DVector<f64>,
    coupling: CouplingGains,
    effective: DMatrix<f64>,
}

impl BlockLaplacian {
    fn assemble(
        partition: &ClusterPartition,
        adjacency: &DMatrix<f64>,
        pinning: DVector<f64>,
        coupling: &CouplingGains,
    ) -> Self {
        let n = partition.node_count();
        let mut intra = DMatrix::zeros(n, n);
        let mut inter = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if partition.same_cluster(i, j) {
                    intra[(i, j)] = adjacency[(i, j)];
                } else {
                    inter[(i, j)] = adjacency[(i, j)];
                }
            }
        }
        Self::from_parts(partition.clone(), intra, inter, pinning, coupling.clone())
    }

    fn from_parts(
        partition: ClusterPartition,
        intra: DMatrix<f64>,
        inter: DMatrix<f64>,
        pinning: DVector<f64>,
        coupling: CouplingGains,
    ) -> Self {
        let n = partition.node_count();
        let mut effective = DMatrix::zeros(n, n);
        for i in 0..n {
            let ci = coupling.cluster[partition.cluster_of(i)];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let same = partition.same_cluster(i, j);
                let a = if same { intra[(i, j)] } else { inter[(i, j)] };
                let c = match coupling.overrides.get(&(i, j)) {
                    Some(&c) => c,
                    None if same => ci,
                    None => 1.0,
                };
                effective[(i, j)] = c * a;
            }
        }
        Self {
            partition,
            intra,
            inter,
            pinning,
            coupling,
            effective,
        }
    }

    pub fn partition(&self) -> &ClusterPartition {
        &self.partition
    }

    pub fn node_count(&self) -> usize {
        self.partition.node_count()
    }

    pub fn coupling(&self) -> &CouplingGains {
        &self.coupling
    }

    /// Raw (trust-scaled, gain-free) adjacency.
    pub fn adjacency(&self) -> DMatrix<f64> {
        &self.intra + &self.inter
    }

    /// Unscaled pinning gains `d_i`.
    pub fn pinning(&self) -> &DVector<f64> {
        &self.pinning
    }

    /// Effective coupling weights `c_ij a_ij` (zero diagonal).
    pub fn effective_weights(&self) -> &DMatrix<f64> {
        &self.effective
    }

    /// Effective pinning gain `c_ī d_i` of node `i`.
    pub fn pinning_gain(&self, i: usize) -> f64 {
        self.coupling.cluster[self.partition.cluster_of(i)] * self.pinning[i]
    }

    /// `L` with `l_ij = -c_ij a_ij` and `l_ii = Σ_k c_ik a_ik`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut l = -self.effective.clone();
        for i in 0..n {
            l[(i, i)] = self.effective.row(i).sum();
        }
        l
    }

    /// `D = diag(c_ī d_i)`.
    pub fn pinning_matrix(&self) -> DMatrix<f64> {
        let n = self.node_count();
        DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| self.pinning_gain(i)))
    }

    /// Grounded Laplacian `L̃ = L + D`.
    pub fn grounded(&self) -> DMatrix<f64> {
        self.laplacian() + self.pinning_matrix()
    }

    /// The `(ℓ, k)` block of `L`.
    pub fn block(&self, ell: usize, k: usize) -> DMatrix<f64> {
        self.partition.block(&self.laplacian(), ell, k)
    }

    /// Unit-gain grounded intra-cluster block `L̃_ℓℓ`: the Laplacian of the
    /// non-overridden edges inside cluster `ℓ` plus `diag(d)` on its nodes.
    pub fn unit_grounded_block(&self, ell: usize) -> DMatrix<f64> {
        let members = self.partition.members(ell);
        let m = members.len();
        let mut out = DMatrix::zeros(m, m);
        for (r, &i) in members.iter().enumerate() {
            let mut diag = self.pinning[i];
            for (c, &j) in members.iter().enumerate() {
                if i == j || self.coupling.overrides.contains_key(&(i, j)) {
                    continue;
                }
                out[(r, c)] = -self.intra[(i, j)];
                diag += self.intra[(i, j)];
            }
            out[(r, r)] = diag;
        }
        out
    }

    /// `L₀ = L̃ − blockdiag(c_ℓ L̃_ℓℓ)`: everything the cluster gains do not
    /// scale (inter-cluster couplings and overridden edges).
    pub fn coupling_part(&self) -> DMatrix<f64> {
        let mut l0 = self.grounded();
        for ell in 0..self.partition.cluster_count() {
            let c = self.coupling.cluster[ell];
            let block = self.unit_grounded_block(ell);
            let members = self.partition.members(ell);
            for (r, &i) in members.iter().enumerate() {
                for (s, &j) in members.iter().enumerate() {
                    l0[(i, j)] -= c * block[(r, s)];
                }
            }
        }
        l0
    }

    /// Same topology with different coupling gains.
    pub fn with_coupling(&self, coupling: CouplingGains) -> Result<Self> {
        if coupling.cluster.len() != self.partition.cluster_count() {
            return Err(Error::Dimension(format!(
                "{} cluster gains for {} clusters",
                coupling.cluster.len(),
                self.partition.cluster_count()
            )));
        }
        Ok(Self::from_parts(
            self.partition.clone(),
            self.intra.clone(),
            self.inter.clone(),
            self.pinning.clone(),
            coupling,
        ))
    }

    /// Weighted combination `Σ w_k L_k` of laplacians that share a partition
    /// and coupling gains. Used for time averages.
    pub fn combine(parts: &[(f64, &BlockLaplacian)]) -> Result<Self> {
        let (_, first) = parts
            .first()
            .ok_or_else(|| Error::InvalidValue("nothing to combine".into()))?;
        let n = first.node_count();
        let mut intra = DMatrix::zeros(n, n);
        let mut inter = DMatrix::zeros(n, n);
        let mut pinning = DVector::zeros(n);
        for (w, l) in parts {
            if l.partition != first.partition || l.coupling != first.coupling {
                return Err(Error::InvalidValue(
                    "combined laplacians must share partition and gains".into(),
                ));
            }
            intra += &l.intra * *w;
            inter += &l.inter * *w;
            pinning += &l.pinning * *w;
        }
        Ok(Self::from_parts(
            first.partition.clone(),
            intra,
            inter,
            pinning,
            first.coupling.clone(),
        ))
    }
}

/// Builds the block Laplacian of `graph` with trust sampled at fast time
/// `tau`, pinning `d` and cluster gains `c_ℓ`.
pub fn laplacian_of(
    graph: &WeightedDigraph,
    trust: &TrustSchedule,
    tau: f64,
    partition: &ClusterPartition,
    pinning: &DVector<f64>,
    coupling: &CouplingGains,
) -> Result<BlockLaplacian> {
    check_dims(graph, partition, pinning, coupling)?;
    let a = trust.trusted(graph, Some(tau));
    Ok(BlockLaplacian::assemble(partition, &a, pinning.clone(), coupling))
}

fn check_dims(
    graph: &WeightedDigraph,
    partition: &ClusterPartition,
    pinning: &DVector<f64>,
    coupling: &CouplingGains,
) -> Result<()> {
    graph.check_partition(partition)?;
    if pinning.len() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "pinning vector has {} entries for {} nodes",
            pinning.len(),
            graph.node_count()
        )));
    }
    if coupling.cluster.len() != partition.cluster_count() {
        return Err(Error::Dimension(format!(
            "{} cluster gains for {} clusters",
            coupling.cluster.len(),
            partition.cluster_count()
        )));
    }
    if graph.adjacency.iter().any(|w| w.is_nan()) {
        return Err(Error::InvalidValue("NaN edge weight".into()));
    }
    Ok(())
}

/// A node whose inter-cluster inputs from one foreign cluster do not cancel.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceViolation {
    pub node: usize,
    pub cluster: usize,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BalanceReport {
    pub violations: Vec<BalanceViolation>,
}

impl BalanceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// In-degree balance: for every node `i` and every foreign cluster `ℓ`, the
/// effective inter-cluster weights from `V_ℓ` into `i` must sum to zero.
pub fn in_degree_balance_check(l: &BlockLaplacian, tol: f64) -> BalanceReport {
    let part = &l.partition;
    let w = &l.effective;
    let mut violations = Vec::new();
    for i in 0..part.node_count() {
        for ell in 0..part.cluster_count() {
            if ell == part.cluster_of(i) {
                continue;
            }
            let sum: f64 = part.members(ell).iter().map(|&j| w[(i, j)]).sum();
            if sum.abs() > tol {
                violations.push(BalanceViolation {
                    node: i,
                    cluster: ell,
                    sum,
                });
            }
        }
    }
    BalanceReport { violations }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReach {
    pub cluster: usize,
    /// Nodes of the cluster the leader cannot reach.
    pub unreached: Vec<usize>,
}

impl ClusterReach {
    pub fn passed(&self) -> bool {
        self.unreached.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTreeReport {
    pub clusters: Vec<ClusterReach>,
}

impl SpanningTreeReport {
    pub fn passed(&self) -> bool {
        self.clusters.iter().all(ClusterReach::passed)
    }
}

/// Checks, per cluster, that the virtual leader reaches every node through
/// intra-cluster edges with `|l_ij| > tol` and pinning links with `d_i > tol`.
/// `laplacian` may be any matrix whose off-diagonal sparsity encodes the
/// edges (a Laplacian or an adjacency matrix).
pub fn spanning_tree_check(
    laplacian: &DMatrix<f64>,
    partition: &ClusterPartition,
    pinning: &DVector<f64>,
    tol: f64,
) -> SpanningTreeReport {
    let clusters = (0..partition.cluster_count())
        .map(|ell| {
            let members = partition.members(ell);
            let mut seen = vec![false; members.len()];
            let mut queue: VecDeque<usize> = VecDeque::new();
            for (r, &i) in members.iter().enumerate() {
                if pinning[i] > tol {
                    seen[r] = true;
                    queue.push_back(r);
                }
            }
            while let Some(s) = queue.pop_front() {
                let j = members[s];
                for (r, &i) in members.iter().enumerate() {
                    if !seen[r] && i != j && laplacian[(i, j)].abs() > tol {
                        seen[r] = true;
                        queue.push_back(r);
                    }
                }
            }
            ClusterReach {
                cluster: ell,
                unreached: members
                    .iter()
                    .zip(&seen)
                    .filter(|(_, &s)| !s)
                    .map(|(&i, _)| i)
                    .collect(),
            }
        })
        .collect();
    SpanningTreeReport { clusters }
}

/// Time average of a switched Laplacian together with the empirical
/// convergence trace of the running mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageResult {
    /// Averaged topology (adjacency, pinning) with the network's gains.
    pub average: BlockLaplacian,
    /// `L^∞`, zero row sums.
    pub l_inf: DMatrix<f64>,
    pub kappa: f64,
    /// `(t, ‖(1/t)∫L − L^∞‖₂)` at the sample instants.
    pub beta_trace: Vec<(f64, f64)>,
}

/// Interval of slow time on which the topology is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// The complete switched, pinned, trust-weighted interconnection.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedNetwork {
    pub partition: ClusterPartition,
    pub topologies: Vec<PinnedGraph>,
    pub signal: SwitchingSignal,
    pub trust: TrustSchedule,
    pub coupling: CouplingGains,
}

impl SwitchedNetwork {
    pub fn new(
        partition: ClusterPartition,
        topologies: Vec<PinnedGraph>,
        signal: SwitchingSignal,
        trust: TrustSchedule,
        coupling: CouplingGains,
    ) -> Result<Self> {
        if topologies.is_empty() {
            return Err(Error::Signal("no topologies".into()));
        }
        for t in &topologies {
            check_dims(&t.graph, &partition, &t.pinning, &coupling)?;
        }
        if let Some(p) = signal.phases().iter().find(|p| p.graph >= topologies.len()) {
            return Err(Error::Signal(format!(
                "phase refers to topology {} but only {} exist",
                p.graph + 1,
                topologies.len()
            )));
        }
        Ok(Self {
            partition,
            topologies,
            signal,
            trust,
            coupling,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.signal.epsilon()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut out = self.clone();
        out.signal = self.signal.with_epsilon(epsilon)?;
        Ok(out)
    }

    pub fn with_coupling(&self, coupling: CouplingGains) -> Result<Self> {
        Self::new(
            self.partition.clone(),
            self.topologies.clone(),
            self.signal.clone(),
            self.trust.clone(),
            coupling,
        )
    }

    /// Laplacian active at slow time `t`.
    pub fn laplacian_at(&self, t: f64) -> BlockLaplacian {
        self.laplacian_at_fast(t / self.epsilon())
    }

    pub fn laplacian_at_fast(&self, tau: f64) -> BlockLaplacian {
        let topo = &self.topologies[self.signal.phases()[self.signal.phase_index_at(tau)].graph];
        let a = self.trust.trusted(&topo.graph, Some(tau));
        BlockLaplacian::assemble(&self.partition, &a, topo.pinning.clone(), &self.coupling)
    }

    /// Laplacian of topology `index` with trust at its terminal values.
    pub fn topology_laplacian(&self, index: usize) -> BlockLaplacian {
        let topo = &self.topologies[index];
        let a = self.trust.trusted(&topo.graph, None);
        BlockLaplacian::assemble(&self.partition, &a, topo.pinning.clone(), &self.coupling)
    }

    /// Distinct topologies used by the switching signal, in first-use order.
    pub fn phase_topologies(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for p in self.signal.phases() {
            if !out.contains(&p.graph) {
                out.push(p.graph);
            }
        }
        out
    }

    /// Instants in `(t0, t1)` where the topology may change: phase switches
    /// and trust breakpoints, both mapped to slow time.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let eps = self.epsilon();
        let mut out = self.signal.switch_times(t0, t1);
        out.extend(
            self.trust
                .breakpoints()
                .into_iter()
                .map(|b| eps * b)
                .filter(|&t| t > t0 && t < t1),
        );
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        out
    }

    /// Partition of `[t0, t1]` into constant-topology segments.
    pub fn segments(&self, t0: f64, t1: f64) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut start = t0;
        for b in self.breakpoints(t0, t1) {
            out.push(Segment { start, end: b });
            start = b;
        }
        out.push(Segment { start, end: t1 });
        out
    }

    /// Union graph: `ā_ij = ∫_{t0}^{t1} a_ij(τ/ε) dτ`, exact for the
    /// piecewise-constant schedule.
    pub fn union_graph(&self, t0: f64, t1: f64) -> Result<WeightedDigraph> {
        let (a, _) = self.integrate(t0, t1)?;
        WeightedDigraph::new(a)
    }

    /// Integral of the pinning gains over `[t0, t1]`, the companion of
    /// [`Self::union_graph`] for leader edges.
    pub fn union_pinning(&self, t0: f64, t1: f64) -> Result<DVector<f64>> {
        Ok(self.integrate(t0, t1)?.1)
    }

    fn integrate(&self, t0: f64, t1: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if !(t1 > t0) {
            return Err(Error::Interval { t0, t1 });
        }
        let n = self.partition.node_count();
        let mut a = DMatrix::zeros(n, n);
        let mut d = DVector::zeros(n);
        for seg in self.segments(t0, t1) {
            let l = self.laplacian_at(seg.midpoint());
            a += l.adjacency() * seg.len();
            d += l.pinning() * seg.len();
        }
        Ok((a, d))
    }

    /// Average Laplacian starting at `t = 0`.
    pub fn average_laplacian(&self, horizon: f64, samples: usize) -> Result<AverageResult> {
        self.average_laplacian_from(0.0, horizon, samples)
    }

    /// Average Laplacian with the running mean taken from `t0`.
    ///
    /// Cyclic signals use the exact dwell-weighted period mean (trust at its
    /// terminal values, which it holds after the last breakpoint). Acyclic
    /// signals use the finite-horizon mean over `[t0, t0 + horizon]`.
    pub fn average_laplacian_from(
        &self,
        t0: f64,
        horizon: f64,
        samples: usize,
    ) -> Result<AverageResult> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidValue(format!("horizon must be positive, got {horizon}")));
        }
        if samples < 2 {
            return Err(Error::InvalidValue("at least two samples are required".into()));
        }
        let average = if self.signal.is_cyclic() {
            let period = self.signal.period();
            let lap: Vec<(f64, BlockLaplacian)> = self
                .signal
                .phases()
                .iter()
                .map(|p| (p.dwell / period, self.topology_laplacian(p.graph)))
                .collect();
            let refs: Vec<(f64, &BlockLaplacian)> = lap.iter().map(|(w, l)| (*w, l)).collect();
            BlockLaplacian::combine(&refs)?
        } else {
            let (a, d) = self.integrate(t0, t0 + horizon)?;
            BlockLaplacian::assemble(&self.partition, &(a / horizon), d / horizon, &self.coupling)
        };
        let l_inf = average.laplacian();

        // Running integral of L, evaluated at the sample instants.
        let n = self.partition.node_count();
        let sample_times: Vec<f64> =
            (1..=samples).map(|k| horizon * k as f64 / samples as f64).collect();
        let mut beta_trace = Vec::with_capacity(samples);
        let mut acc = DMatrix::<f64>::zeros(n, n);
        let mut next = 0;
        for seg in self.segments(t0, t0 + horizon) {
            let l = self.laplacian_at(seg.midpoint()).laplacian();
            while next < samples && t0 + sample_times[next] <= seg.end {
                let s = sample_times[next];
                let partial = &acc + &l * (t0 + s - seg.start);
                let dev = partial / s - &l_inf;
                beta_trace.push((s, linalg::spectral_norm(&dev)));
                next += 1;
            }
            acc += &l * seg.len();
        }
        // Guard against the last sample being lost to rounding at the end.
        while next < samples {
            let s = sample_times[next];
            beta_trace.push((s, linalg::spectral_norm(&(&acc / s - &l_inf))));
            next += 1;
        }
        let kappa = beta_trace.iter().map(|&(_, b)| b).fold(0.0, f64::max);
        Ok(AverageResult {
            average,
            l_inf,
            kappa,
            beta_trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_clusters() -> ClusterPartition {
        ClusterPartition::new(vec![vec![0, 1], vec![2, 3]]).unwrap()
    }

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        assert!(ClusterPartition::new(vec![vec![0, 1], vec![1]]).is_err());
        assert!(ClusterPartition::new(vec![vec![0], vec![2]]).is_err());
        assert!(ClusterPartition::new(vec![vec![0], vec![]]).is_err());
        assert!(ClusterPartition::new(vec![]).is_err());
    }

    #[test]
    fn single_edge_laplacian() {
        let part = ClusterPartition::new(vec![vec![0, 1]]).unwrap();
        // a_12 = 1: node 1 listens to node 2 (zero-based 0 ← 1).
        let g = WeightedDigraph::from_edges(2, &[(1, 0, 1.0)]).unwrap();
        let l = laplacian_of(
            &g,
            &TrustSchedule::full(),
            0.0,
            &part,
            &DVector::zeros(2),
            &CouplingGains::uniform(1, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(l.laplacian(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]));
    }

    #[test]
    fn empty_graph_gives_zero_laplacian() {
        let part = two_clusters();
        let l = laplacian_of(
            &WeightedDigraph::empty(4),
            &TrustSchedule::full(),
            0.0,
            &part,
            &DVector::zeros(4),
            &CouplingGains::uniform(2, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(l.grounded(), DMatrix::zeros(4, 4));
    }

    #[test]
    fn half_trust_cycle() {
        let part = ClusterPartition::new(vec![vec![0, 1, 2]]).unwrap();
        let g = WeightedDigraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let mut trust = TrustSchedule::full();
        for (f, t) in [(0, 1), (1, 2), (2, 0)] {
            trust.set(f, t, PiecewiseConstant::constant(0.5).unwrap());
        }
        let l = laplacian_of(
            &g,
            &trust,
            3.0,
            &part,
            &DVector::zeros(3),
            &CouplingGains::uniform(1, 1.0).unwrap(),
        )
        .unwrap()
        .laplacian();
        // Hand-computed: node 1 hears 3, node 2 hears 1, node 3 hears 2.
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.5, 0.0, -0.5, -0.5, 0.5, 0.0, 0.0, -0.5, 0.5]);
        assert_abs_diff_eq!(l, expected, epsilon = 1e-15);
        for i in 0..3 {
            assert!(l.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_rejects_bad_inputs() {
        let part = two_clusters();
        let g = WeightedDigraph::empty(4);
        let gains = CouplingGains::uniform(2, 1.0).unwrap();
        assert!(matches!(
            laplacian_of(&g, &TrustSchedule::full(), 0.0, &part, &DVector::zeros(3), &gains),
            Err(Error::Dimension(_))
        ));
        assert!(CouplingGains::new(vec![1.0, -1.0]).is_err());
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = f64::NAN;
        assert!(WeightedDigraph::new(a).is_err());
    }

    #[test]
    fn cluster_gain_scales_intra_blocks_only() {
        let part = two_clusters();
        let g = WeightedDigraph::from_edges(4, &[(0, 1, 1.0), (2, 0, 1.0), (3, 0, -1.0)]).unwrap();
        let l = laplacian_of(
            &g,
            &TrustSchedule::full(),
            0.0,
            &part,
            &DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
            &CouplingGains::new(vec![3.0, 5.0]).unwrap(),
        )
        .unwrap();
        let lap = l.laplacian();
        assert_eq!(lap[(1, 0)], -3.0);
        assert_eq!(lap[(0, 2)], -1.0);
        assert_eq!(lap[(0, 3)], 1.0);
        assert_eq!(l.pinning_gain(0), 3.0);
        // L̃ = c·blocks + L₀
        let mut rebuilt = l.coupling_part();
        for ell in 0..2 {
            let b = l.unit_grounded_block(ell) * l.coupling().cluster()[ell];
            for (r, &i) in part.members(ell).iter().enumerate() {
                for (s, &j) in part.members(ell).iter().enumerate() {
                    rebuilt[(i, j)] += b[(r, s)];
                }
            }
        }
        assert_abs_diff_eq!(rebuilt, l.grounded(), epsilon = 1e-14);
    }

    #[test]
    fn balance_check_cases() {
        let part = two_clusters();
        let gains = CouplingGains::uniform(2, 1.0).unwrap();
        let balanced = WeightedDigraph::from_edges(4, &[(2, 0, 1.0), (3, 0, -1.0)]).unwrap();
        let l = laplacian_of(&balanced, &TrustSchedule::full(), 0.0, &part, &DVector::zeros(4), &gains)
            .unwrap();
        assert!(in_degree_balance_check(&l, BALANCE_TOL).passed());

        let single = WeightedDigraph::from_edges(4, &[(2, 0, 1.0)]).unwrap();
        let l = laplacian_of(&single, &TrustSchedule::full(), 0.0, &part, &DVector::zeros(4), &gains)
            .unwrap();
        let report = in_degree_balance_check(&l, BALANCE_TOL);
        assert_eq!(
            report.violations,
            vec![BalanceViolation {
                node: 0,
                cluster: 1,
                sum: 1.0
            }]
        );
    }

    #[test]
    fn spanning_tree_cases() {
        let part = ClusterPartition::new(vec![vec![0, 1, 2]]).unwrap();
        let chain = WeightedDigraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let pin = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(spanning_tree_check(chain.adjacency(), &part, &pin, EDGE_TOL).passed());

        let broken = WeightedDigraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let report = spanning_tree_check(broken.adjacency(), &part, &pin, EDGE_TOL);
        assert_eq!(report.clusters[0].unreached, vec![2]);
        // No pinning at all: nothing is reachable.
        let report = spanning_tree_check(chain.adjacency(), &part, &DVector::zeros(3), EDGE_TOL);
        assert_eq!(report.clusters[0].unreached, vec![0, 1, 2]);
    }

    #[test]
    fn phase_lookup_is_right_continuous() {
        let sig = SwitchingSignal::new(
            vec![Phase { graph: 0, dwell: 1.0 }, Phase { graph: 1, dwell: 3.0 }],
            true,
            0.5,
        )
        .unwrap();
        assert_eq!(sig.phase_index_at(0.0), 0);
        assert_eq!(sig.phase_index_at(0.999), 0);
        assert_eq!(sig.phase_index_at(1.0), 1);
        assert_eq!(sig.phase_index_at(4.0), 0);
        assert_eq!(sig.phase_index_at(5.5), 1);
        assert_eq!(sig.switch_times(0.0, 4.0), vec![0.5, 2.0, 2.5]);

        let acyclic = SwitchingSignal::new(sig.phases().to_vec(), false, 1.0).unwrap();
        assert_eq!(acyclic.phase_index_at(100.0), 1);
        assert_eq!(acyclic.switch_times(0.0, 10.0), vec![1.0]);
    }

    #[test]
    fn signal_validation() {
        assert!(SwitchingSignal::new(vec![], true, 1.0).is_err());
        assert!(SwitchingSignal::new(vec![Phase { graph: 0, dwell: 0.0 }], true, 1.0).is_err());
        assert!(SwitchingSignal::new(vec![Phase { graph: 0, dwell: 1.0 }], true, 0.0).is_err());
    }

    #[test]
    fn trust_function_steps() {
        let g = PiecewiseConstant::new(1.0, vec![(2.0, 0.5), (4.0, 0.0)]).unwrap();
        assert_eq!(g.at(1.99), 1.0);
        assert_eq!(g.at(2.0), 0.5);
        assert_eq!(g.at(10.0), 0.0);
        assert_eq!(g.terminal(), 0.0);
        assert!(PiecewiseConstant::new(1.5, vec![]).is_err());
        assert!(PiecewiseConstant::new(1.0, vec![(2.0, 0.5), (1.0, 0.2)]).is_err());
    }

    #[test]
    fn union_and_average_constant_graph() {
        let part = ClusterPartition::new(vec![vec![0, 1]]).unwrap();
        let g = WeightedDigraph::from_edges(2, &[(1, 0, 2.0)]).unwrap();
        let net = SwitchedNetwork::new(
            part,
            vec![PinnedGraph::new("g", g.clone(), DVector::from_vec(vec![1.0, 0.0])).unwrap()],
            SwitchingSignal::constant(0, 1.0).unwrap(),
            TrustSchedule::full(),
            CouplingGains::uniform(1, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(net.union_graph(0.0, 1.0).unwrap(), g);
        assert!(matches!(net.union_graph(1.0, 1.0), Err(Error::Interval { .. })));
        let avg = net.average_laplacian(5.0, 10).unwrap();
        assert_abs_diff_eq!(avg.kappa, 0.0, epsilon = 1e-14);
        assert_eq!(avg.l_inf, net.topology_laplacian(0).laplacian());
    }
}
