//! Scenario files: a TOML schema with explicit row-major matrices and
//! one-based node numbering, resolved into validated model objects.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::PlantModel;
use crate::graph::{
    ClusterPartition, CouplingGains, Phase, PiecewiseConstant, PinnedGraph, SwitchedNetwork,
    SwitchingSignal, TrustSchedule, WeightedDigraph,
};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Accept negative intra-cluster weights instead of rejecting them.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_negative_intra: bool,
    pub plant: PlantSection,
    pub partition: PartitionSection,
    pub graphs: Vec<GraphSection>,
    pub switching: SwitchingSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trust: Vec<TrustSection>,
    pub coupling: CouplingSection,
    pub leaders: LeaderSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Riccati weight `W`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_weight: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// One-based node numbers per cluster.
    pub clusters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub name: String,
    /// Row `i`, column `j` holds the weight of edge `j → i`.
    pub adjacency: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinning: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub graph: String,
    /// Dwell in fast time.
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSection {
    pub phases: Vec<PhaseSection>,
    #[serde(default = "default_true")]
    pub cyclic: bool,
    pub epsilon: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustSection {
    pub from: usize,
    pub to: usize,
    pub initial: f64,
    /// `[fast time, value]` pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breakpoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// Explicit per-cluster gains `c_ℓ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    /// Use `c_ℓ = c*_ℓ + auto_margin` from the computed thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<OverrideSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSection {
    pub from: usize,
    pub to: usize,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSection {
    pub initial: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    /// Absent means seed 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Per-dimension `[lo, hi]`; `[-10, 10]` in every dimension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_range: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingMode {
    Fixed,
    /// Gains are set to `c*_ℓ + margin` once thresholds are known.
    AutoMargin(f64),
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScenario {
    pub name: String,
    pub plant: PlantModel,
    pub gain_weight: DMatrix<f64>,
    pub network: SwitchedNetwork,
    pub coupling_mode: CouplingMode,
    pub leaders: Vec<DVector<f64>>,
    pub sim: SimConfig,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into());
            Error::scenario(path, message)
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::scenario("<document>", e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::scenario(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    /// Validates every section and builds the model objects.
    pub fn resolve(&self) -> Result<ClusterScenario> {
        let a = matrix(&self.plant.a, "plant.a")?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::scenario("plant.a", format!("must be square, got {}×{}", n, a.ncols())));
        }
        let b = matrix(&self.plant.b, "plant.b")?;
        if b.nrows() != n {
            return Err(Error::scenario("plant.b", format!("must have {n} rows, got {}", b.nrows())));
        }
        let plant = PlantModel::new(a, b).map_err(|e| Error::scenario("plant", e.to_string()))?;
        let gain_weight = match &self.plant.gain_weight {
            Some(w) => {
                let w = matrix(w, "plant.gain_weight")?;
                if w.nrows() != n || w.ncols() != n {
                    return Err(Error::scenario("plant.gain_weight", format!("must be {n}×{n}")));
                }
                w
            }
            None => DMatrix::identity(n, n),
        };

        let clusters = self
            .partition
            .clusters
            .iter()
            .enumerate()
            .map(|(c, nodes)| {
                nodes
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        v.checked_sub(1).ok_or_else(|| {
                            Error::scenario(format!("partition.clusters[{c}][{k}]"), "nodes are numbered from 1")
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let partition =
            ClusterPartition::new(clusters).map_err(|e| Error::scenario("partition.clusters", e.to_string()))?;
        let nodes = partition.node_count();
        let p = partition.cluster_count();

        if self.graphs.is_empty() {
            return Err(Error::scenario("graphs", "at least one graph is required"));
        }
        let mut topologies = Vec::with_capacity(self.graphs.len());
        for (g, sec) in self.graphs.iter().enumerate() {
            let path = format!("graphs[{g}]");
            if self.graphs[..g].iter().any(|o| o.name == sec.name) {
                return Err(Error::scenario(format!("{path}.name"), format!("duplicate graph name `{}`", sec.name)));
            }
            let adj = matrix(&sec.adjacency, &format!("{path}.adjacency"))?;
            if adj.nrows() != nodes || adj.ncols() != nodes {
                return Err(Error::scenario(
                    format!("{path}.adjacency"),
                    format!("must be {nodes}×{nodes}, got {}×{}", adj.nrows(), adj.ncols()),
                ));
            }
            let graph = WeightedDigraph::new(adj).map_err(|e| Error::scenario(format!("{path}.adjacency"), e.to_string()))?;
            if !self.allow_negative_intra {
                graph
                    .check_signs(&partition)
                    .map_err(|e| Error::scenario(format!("{path}.adjacency"), e.to_string()))?;
            }
            let pinning = match &sec.pinning {
                Some(d) if d.len() != nodes => {
                    return Err(Error::scenario(format!("{path}.pinning"), format!("must have {nodes} entries, got {}", d.len())))
                }
                Some(d) => DVector::from_column_slice(d),
                None => DVector::zeros(nodes),
            };
            topologies.push(
                PinnedGraph::new(sec.name.clone(), graph, pinning)
                    .map_err(|e| Error::scenario(format!("{path}.pinning"), e.to_string()))?,
            );
        }

        let phases = self
            .switching
            .phases
            .iter()
            .enumerate()
            .map(|(k, ph)| {
                let graph = self.graphs.iter().position(|g| g.name == ph.graph).ok_or_else(|| {
                    Error::scenario(format!("switching.phases[{k}].graph"), format!("unknown graph `{}`", ph.graph))
                })?;
                Ok(Phase { graph, dwell: ph.dwell })
            })
            .collect::<Result<Vec<_>>>()?;
        let signal = SwitchingSignal::new(phases, self.switching.cyclic, self.switching.epsilon)
            .map_err(|e| Error::scenario("switching", e.to_string()))?;

        let mut trust = TrustSchedule::full();
        for (k, t) in self.trust.iter().enumerate() {
            let path = format!("trust[{k}]");
            let from = node_index(t.from, nodes, &format!("{path}.from"))?;
            let to = node_index(t.to, nodes, &format!("{path}.to"))?;
            let steps = t.breakpoints.iter().map(|&[tau, v]| (tau, v)).collect();
            let gamma = PiecewiseConstant::new(t.initial, steps).map_err(|e| Error::scenario(path.clone(), e.to_string()))?;
            trust.set(from, to, gamma);
        }

        let (coupling, coupling_mode) = match (&self.coupling.gains, self.coupling.auto_margin) {
            (Some(_), Some(_)) => {
                return Err(Error::scenario("coupling", "set either `gains` or `auto_margin`, not both"))
            }
            (None, None) => return Err(Error::scenario("coupling", "one of `gains` or `auto_margin` is required")),
            (Some(c), None) => {
                if c.len() != p {
                    return Err(Error::scenario("coupling.gains", format!("must have {p} entries, got {}", c.len())));
                }
                (
                    CouplingGains::new(c.clone()).map_err(|e| Error::scenario("coupling.gains", e.to_string()))?,
                    CouplingMode::Fixed,
                )
            }
            (None, Some(m)) => {
                if !(m > 0.0 && m.is_finite()) {
                    return Err(Error::scenario("coupling.auto_margin", "must be positive"));
                }
                (CouplingGains::uniform(p, 1.0)?, CouplingMode::AutoMargin(m))
            }
        };
        let mut coupling = coupling;
        for (k, o) in self.coupling.overrides.iter().enumerate() {
            let path = format!("coupling.overrides[{k}]");
            let from = node_index(o.from, nodes, &format!("{path}.from"))?;
            let to = node_index(o.to, nodes, &format!("{path}.to"))?;
            coupling = coupling.with_override(from, to, o.c).map_err(|e| Error::scenario(path, e.to_string()))?;
        }

        let network = SwitchedNetwork::new(partition, topologies, signal, trust, coupling)
            .map_err(|e| Error::scenario("graphs", e.to_string()))?;

        if self.leaders.initial.len() != p {
            return Err(Error::scenario("leaders.initial", format!("must list {p} leader states")));
        }
        let leaders = self
            .leaders
            .initial
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if s.len() != n || s.iter().any(|v| !v.is_finite()) {
                    Err(Error::scenario(format!("leaders.initial[{k}]"), format!("must hold {n} finite values")))
                } else {
                    Ok(DVector::from_column_slice(s))
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sim = SimConfig::new(self.sim.dt, self.sim.horizon, self.switching.epsilon, n);
        sim.seed = self.sim.seed.unwrap_or(0);
        if let Some(stride) = self.sim.record_stride {
            sim.record_stride = stride;
        }
        if let Some(r) = &self.sim.init_range {
            sim.init_range = r.iter().map(|&[lo, hi]| (lo, hi)).collect();
        }
        sim.validate(network.signal.min_dwell(), n)
            .map_err(|e| Error::scenario("sim", e.to_string()))?;

        Ok(ClusterScenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            plant,
            gain_weight,
            network,
            coupling_mode,
            leaders,
            sim,
        })
    }
}

fn node_index(v: usize, nodes: usize, path: &str) -> Result<usize> {
    if v == 0 || v > nodes {
        Err(Error::scenario(path, format!("node {v} is outside 1..={nodes}")))
    } else {
        Ok(v - 1)
    }
}

fn matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::scenario(path, "matrix has no rows"));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(Error::scenario(format!("{path}[0]"), "row is empty"));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::scenario(
                format!("{path}[{r}]"),
                format!("row has {} entries, expected {cols}", row.len()),
            ));
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::scenario(format!("{path}[{r}][{c}]"), "value is not finite"));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

/// Row-major nested vectors of a matrix.
pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}
