//! Built-in scenarios: the four-state example plant and its variants on a
//! seven-agent, two-cluster switching network.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::gains::{self, FeedbackGain, PlantModel};

use crate::scenario::{
    ClusterScenario,     CouplingSection, GraphSection, LeaderSection, PartitionSection, PhaseSection, PlantSection,
    ScenarioFile, SimSection, SwitchingSection,
};

/// Intra-cluster edge weight of the benchmark topologies.
pub const EDGE_WEIGHT: f64 = 2.0;
/// Fast-time dwell of each phase.
pub const DWELL: f64 = 1.0;
/// Margin added to the computed thresholds.
pub const COUPLING_MARGIN: f64 = 1.0;
pub const DT: f64 = 0.001;
pub const HORIZON: f64 = 10.0;

pub fn example_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 5.0, 0.0])
}

pub fn example_b() -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 0.0, -2.0])
}

/// `A` with the last row replaced by `[0, 0, 0, 5]`.
pub fn primed_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 5.0])
}

/// Same input matrix as the nominal plant.
pub fn primed_b() -> DMatrix<f64> {
    example_b()
}

/// Input entering the third state only: the fourth state of `primed_a` then
/// evolves on its own, so the mode at 5 is uncontrollable with left
/// eigenvector `e_4` while the chain at 0 stays controllable.
pub fn decoupled_b() -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, 0.0])
}

/// Riccati weight used for the benchmark designs.
pub fn benchmark_weight() -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![300.0, 1.0, 1.0, 30.0]))
}

/// Cluster 1 holds nodes 1–4, cluster 2 nodes 5–7 (zero-based here).
pub fn benchmark_clusters() -> Vec<Vec<usize>> {
    vec![vec![0, 1, 2, 3], vec![4, 5, 6]]
}

/// `(from, to, weight)` edges, zero-based.
type Edge = (usize, usize, f64);

fn phase_one() -> (Vec<Edge>, Vec<f64>) {
    let w = EDGE_WEIGHT;
    (
        vec![(0, 1, w), (2, 3, w), (4, 5, w), (4, 2, 1.0), (5, 2, -1.0)],
        vec![w, 0.0, 0.0, 0.0, w, 0.0, 0.0],
    )
}

fn phase_two() -> (Vec<Edge>, Vec<f64>) {
    let w = EDGE_WEIGHT;
    (
        vec![(1, 2, w), (2, 3, w), (5, 6, w), (6, 4, w), (0, 5, 1.0), (1, 5, -1.0)],
        vec![0.0; 7],
    )
}

/// Phase two with node 7 cut off: no edge into or out of it.
fn phase_two_without_tree() -> (Vec<Edge>, Vec<f64>) {
    let w = EDGE_WEIGHT;
    (
        vec![(1, 2, w), (2, 3, w), (5, 4, w), (0, 5, 1.0), (1, 5, -1.0)],
        vec![0.0; 7],
    )
}

fn graph(name: &str, (edges, pinning): (Vec<Edge>, Vec<f64>)) -> GraphSection {
    let mut adjacency = vec![vec![0.0; 7]; 7];
    for (from, to, w) in edges {
        adjacency[to][from] += w;
    }
    GraphSection {
        name: name.into(),
        adjacency,
        pinning: Some(pinning),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    crate::scenario::rows_of(m)
}

fn build(name: &str, a: &DMatrix<f64>, b: &DMatrix<f64>, epsilon: f64, second: GraphSection) -> ScenarioFile {
    ScenarioFile {
        name: Some(name.into()),
        allow_negative_intra: false,
        plant: PlantSection {
            a: rows(a),
            b: rows(b),
            gain_weight: Some(rows(&benchmark_weight())),
        },
        partition: PartitionSection {
            clusters: benchmark_clusters()
                .into_iter()
                .map(|c| c.into_iter().map(|i| i + 1).collect())
                .collect(),
        },
        graphs: vec![graph("g1", phase_one()), second],
        switching: SwitchingSection {
            phases: vec![
                PhaseSection {
                    graph: "g1".into(),
                    dwell: DWELL,
                },
                PhaseSection {
                    graph: "g2".into(),
                    dwell: DWELL,
                },
            ],
            cyclic: true,
            epsilon,
        },
        trust: Vec::new(),
        coupling: CouplingSection {
            gains: None,
            auto_margin: Some(COUPLING_MARGIN),
            overrides: Vec::new(),
        },
        leaders: LeaderSection {
            initial: vec![vec![1.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0]],
        },
        sim: SimSection {
            dt: DT,
            horizon: HORIZON,
            seed: Some(0),
            init_range: None,
            record_stride: Some(10),
        },
    }
}

/// Nominal plant on the two-phase network.
pub fn benchmark(epsilon: f64) -> ScenarioFile {
    build("benchmark", &example_a(), &example_b(), epsilon, graph("g2", phase_two()))
}

/// Nominal plant on a network whose union graph leaves node 7 unreached.
pub fn no_tree(epsilon: f64) -> ScenarioFile {
    build("no-tree", &example_a(), &example_b(), epsilon, graph("g2", phase_two_without_tree()))
}

/// Primed plant `(A′, B′)` with gains designed for it.
pub fn primed(epsilon: f64) -> ScenarioFile {
    build("primed", &primed_a(), &primed_b(), epsilon, graph("g2", phase_two()))
}

/// Primed drift with the decoupled input `B″`.
pub fn decoupled(epsilon: f64) -> ScenarioFile {
    build("decoupled", &primed_a(), &decoupled_b(), epsilon, graph("g2", phase_two()))
}

/// Names accepted by [`repro`].
pub const REPRO_NAMES: [&str; 5] = ["fig2", "fig3", "fig4", "fig5", "fig6"];

/// One runnable variant of a reproduced figure.
#[derive(Debug, Clone)]
pub struct ReproVariant {
    pub label: String,
    pub scenario: ScenarioFile,
    pub gain_source: GainSource,
}

/// Where the simulated feedback gain comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSource {
    /// Riccati design for the scenario's own plant.
    Own,
    /// Riccati design for another plant, applied unchanged.
    DesignedFor(DMatrix<f64>, DMatrix<f64>),
    /// Riccati design on the controllable subspace of the scenario's plant.
    ControllablePart,
}

impl GainSource {
    /// Feedback gain for `scenario` according to this source.
    pub fn feedback(&self, scenario: &ClusterScenario) -> Result<FeedbackGain> {
        match self {
            GainSource::Own => gains::synthesize_gain(&scenario.plant, &scenario.gain_weight),
            GainSource::DesignedFor(a, b) => {
                gains::synthesize_gain(&PlantModel::new(a.clone(), b.clone())?, &scenario.gain_weight)
            }
            GainSource::ControllablePart => {
                gains::synthesize_controllable_part(&scenario.plant, &scenario.gain_weight)
            }
        }
    }
}

/// Moderate switching speed used by the slower and the failing variants.
pub const MODERATE_EPSILON: f64 = 0.3;

fn variant(label: &str, scenario: ScenarioFile) -> ReproVariant {
    ReproVariant {
        label: label.into(),
        scenario,
        gain_source: GainSource::Own,
    }
}

/// Scenario variants behind each reproduced figure.
pub fn repro(name: &str) -> Option<Vec<ReproVariant>> {
    let eps = MODERATE_EPSILON;
    let out = match name {
        "fig2" => vec![variant("fig2", benchmark(0.01))],
        "fig3" => vec![variant("fig3", benchmark(eps))],
        "fig4" => vec![variant("fig4", benchmark(1.0))],
        "fig5" => {
            let mut unstable = primed(eps);
            unstable.name = Some("fig5-unstable".into());
            let mut topo = no_tree(eps);
            topo.name = Some("fig5-topology".into());
            vec![
                variant("fig5_topology", topo),
                ReproVariant {
                    label: "fig5_unstable".into(),
                    scenario: unstable,
                    gain_source: GainSource::DesignedFor(example_a(), example_b()),
                },
            ]
        }
        "fig6" => {
            let mut literal = primed(eps);
            literal.name = Some("fig6-primed".into());
            let mut dec = decoupled(eps);
            dec.name = Some("fig6-decoupled".into());
            dec.sim.horizon = 4.0;
            vec![
                variant("fig6_primed", literal),
                ReproVariant {
                    label: "fig6_decoupled".into(),
                    scenario: dec,
                    gain_source: GainSource::ControllablePart,
                },
            ]
        }
        _ => return None,
    };
    Some(out)
}
