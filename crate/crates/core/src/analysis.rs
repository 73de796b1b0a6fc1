//! Condition audits: stabilizability, in-degree balance, average-graph
//! reachability and coupling thresholds, plus contraction certificates and
//! necessity witnesses.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gains::{
    self, coupling_thresholds, network_scaling, synthesize_gain, FeedbackGain, GainSet, PbhReport,
    Stabilizability, ThresholdReport, PBH_TOL,
};
use crate::graph::{
    in_degree_balance_check, laplacian_of, spanning_tree_check, AverageResult, BlockLaplacian,
    SpanningTreeReport, BALANCE_TOL, EDGE_TOL,
};
use crate::linalg::{self, lambda_max, lambda_min, sym};
use crate::scenario::{ClusterScenario, CouplingMode};
use crate::sim::{self, SimConfig};

/// Samples of the running-mean trace used for `κ`.
pub const AVERAGE_SAMPLES: usize = 200;
/// Lower bound required of the diagonal-scaling certificate.
pub const SCALING_TOL: f64 = 1e-10;
/// Relative singular-value cutoff for kernel bases.
pub const KERNEL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    Uncertified,
    NecessarilyFails,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Certified => "certified",
            Verdict::Uncertified => "uncertified",
            Verdict::NecessarilyFails => "necessarily-fails",
        })
    }
}

/// A failed condition and its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub reason: String,
}

pub const EXIT_STABILIZABILITY: i32 = 10;
pub const EXIT_BALANCE: i32 = 11;
pub const EXIT_SPANNING_TREE: i32 = 12;
pub const EXIT_COUPLING: i32 = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionResult {
    pub lambda_max: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEntry {
    pub label: String,
    pub result: ContractionResult,
}

/// Balance findings for one topology at one trust instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceFinding {
    pub graph: String,
    pub tau: f64,
    pub node: usize,
    pub cluster: usize,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGuidance {
    /// `(ε, fitted decay rate)`; `None` when the run diverged or the fit failed.
    pub evaluated: Vec<(f64, Option<f64>)>,
    /// Largest evaluated `ε` with a positive decay rate.
    pub largest_decaying: Option<f64>,
    /// Whether the configured `ε` decays in simulation.
    pub configured_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub scenario: String,
    pub epsilon: f64,
    pub stabilizability: PbhReport,
    pub balance: Vec<BalanceFinding>,
    pub average_tree: SpanningTreeReport,
    /// Spanning-tree result of every phase topology on its own.
    pub phase_trees: Vec<(String, bool)>,
    pub kappa: f64,
    pub configured_gains: Vec<f64>,
    pub thresholds: Option<ThresholdReport>,
    /// `1/(2 λ_min(sym L̃_ℓℓ))` per cluster, when the symmetric part is positive.
    pub symmetric_thresholds: Vec<Option<f64>>,
    /// `λ_min(ΞL̃ + L̃ᵀΞ)` of the averaged network at the configured gains.
    pub certificate: Option<f64>,
    pub contraction: Vec<ContractionEntry>,
    pub epsilon_guidance: Option<EpsilonGuidance>,
    pub verdict: Verdict,
    pub failures: Vec<Failure>,
}

impl ConditionReport {
    /// 0 when certified, otherwise the code of the first failed condition.
    pub fn exit_code(&self) -> i32 {
        self.failures.iter().map(|f| f.code).min().unwrap_or(0)
    }

    pub fn stabilizability_ok(&self) -> bool {
        self.stabilizability.is_stabilizable()
    }

    pub fn balance_ok(&self) -> bool {
        self.balance.is_empty()
    }

    pub fn tree_ok(&self) -> bool {
        self.average_tree.passed()
    }

    /// Flat `key=value` lines for machine consumption.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("scenario".to_string(), self.scenario.clone()),
            ("verdict".into(), self.verdict.to_string()),
            ("exit_code".into(), self.exit_code().to_string()),
            ("epsilon".into(), format!("{}", self.epsilon)),
            ("assumption.stabilizable".into(), self.stabilizability_ok().to_string()),
            ("assumption.balanced".into(), self.balance_ok().to_string()),
            ("assumption.average_spanning_tree".into(), self.tree_ok().to_string()),
            ("kappa".into(), format!("{:.6e}", self.kappa)),
        ];
        for (ell, c) in self.configured_gains.iter().enumerate() {
            kv.push((format!("coupling.c_{}", ell + 1), format!("{c:.6e}")));
        }
        if let Some(t) = &self.thresholds {
            for (ell, c) in t.thresholds.iter().enumerate() {
                kv.push((format!("coupling.threshold_{}", ell + 1), format!("{c:.6e}")));
            }
        }
        for (ell, c) in self.symmetric_thresholds.iter().enumerate() {
            let v = c.map(|c| format!("{c:.6e}")).unwrap_or_else(|| "undefined".into());
            kv.push((format!("coupling.symmetric_threshold_{}", ell + 1), v));
        }
        if let Some(c) = self.certificate {
            kv.push(("certificate.lambda_min".into(), format!("{c:.6e}")));
        }
        for e in &self.contraction {
            kv.push((format!("contraction.{}", e.label), format!("{:.6e}", e.result.lambda_max)));
        }
        if let Some(g) = &self.epsilon_guidance {
            let v = g.largest_decaying.map(|e| e.to_string()).unwrap_or_else(|| "none".into());
            kv.push(("epsilon_guidance.largest_decaying".into(), v));
            kv.push(("epsilon_guidance.configured_ok".into(), g.configured_ok.to_string()));
        }
        for (k, f) in self.failures.iter().enumerate() {
            kv.push((format!("failure.{}", k + 1), format!("{}: {}", f.code, f.reason)));
        }
        kv
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        writeln!(f, "scenario {} (epsilon = {})", self.scenario, self.epsilon)?;
        let pbh = &self.stabilizability;
        write!(f, "  stabilizability       {} ({:?})", mark(self.stabilizability_ok()), pbh.verdict)?;
        if let Some(m) = &pbh.offending {
            write!(f, ", uncontrollable mode λ = {:.6}{:+.6}i", m.eigenvalue.re, m.eigenvalue.im)?;
        }
        writeln!(f)?;
        writeln!(f, "  in-degree balance     {} ({} violations)", mark(self.balance_ok()), self.balance.len())?;
        for b in self.balance.iter().take(5) {
            writeln!(
                f,
                "    graph {} at tau = {}: node {} receives {:.3e} from cluster {}",
                b.graph,
                b.tau,
                b.node + 1,
                b.sum,
                b.cluster + 1
            )?;
        }
        writeln!(f, "  average spanning tree {}", mark(self.tree_ok()))?;
        for c in self.average_tree.clusters.iter().filter(|c| !c.passed()) {
            let nodes: Vec<String> = c.unreached.iter().map(|i| (i + 1).to_string()).collect();
            writeln!(f, "    cluster {} leader misses nodes {}", c.cluster + 1, nodes.join(", "))?;
        }
        for (name, ok) in &self.phase_trees {
            writeln!(f, "    phase graph {name}: spanning tree {}", if *ok { "yes" } else { "no" })?;
        }
        writeln!(f, "  kappa                 {:.6e}", self.kappa)?;
        for (ell, c) in self.configured_gains.iter().enumerate() {
            write!(f, "  cluster {} gain c = {:.6}", ell + 1, c)?;
            if let Some(t) = &self.thresholds {
                write!(f, ", weighted threshold c* = {:.6}", t.thresholds[ell])?;
            }
            match self.symmetric_thresholds.get(ell).copied().flatten() {
                Some(s) => writeln!(f, ", symmetric-part threshold = {s:.6}")?,
                None => writeln!(f, ", symmetric-part threshold undefined")?,
            }
        }
        if let Some(c) = self.certificate {
            writeln!(f, "  certificate λ_min(ΞL̃+L̃ᵀΞ) = {c:.6e}")?;
        }
        for e in &self.contraction {
            writeln!(
                f,
                "  contraction {:<12} λ_max = {:+.6e} ({})",
                e.label,
                e.result.lambda_max,
                mark(e.result.passed)
            )?;
        }
        if let Some(g) = &self.epsilon_guidance {
            match g.largest_decaying {
                Some(e) => writeln!(f, "  empirical epsilon bound: decay observed up to {e}")?,
                None => writeln!(f, "  empirical epsilon bound: no decaying run found")?,
            }
        }
        writeln!(f, "verdict: {}", self.verdict)?;
        for fl in &self.failures {
            writeln!(f, "  [{}] {}", fl.code, fl.reason)?;
        }
        Ok(())
    }
}

/// A scenario with concrete coupling gains and its synthesized gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub scenario: ClusterScenario,
    pub stabilizability: PbhReport,
    /// `None` when the plant is not stabilizable.
    pub feedback: Option<FeedbackGain>,
    /// `None` when the average graph admits no positive scaling.
    pub gains: Option<GainSet>,
    pub average: AverageResult,
}

/// Synthesizes `K`, computes `Ξ` and the thresholds, and fixes `c_ℓ` for
/// scenarios that ask for `c*_ℓ + margin`.
pub fn design(scenario: &ClusterScenario) -> Result<Design> {
    let stabilizability = gains::pbh_stabilizability_check(&scenario.plant, PBH_TOL)?;
    let feedback = if stabilizability.is_stabilizable() {
        Some(synthesize_gain(&scenario.plant, &scenario.gain_weight)?)
    } else {
        None
    };
    let network = &scenario.network;
    let average = network.average_laplacian(scenario.sim.horizon, AVERAGE_SAMPLES)?;
    let scaling = network_scaling(&average.average, SCALING_TOL).ok();
    let thresholds = match &scaling {
        Some(xi) => Some(coupling_thresholds(&average.average, xi, &network.partition)?),
        None => None,
    };

    let mut resolved = scenario.clone();
    if let CouplingMode::AutoMargin(margin) = scenario.coupling_mode {
        let base: Vec<f64> = match &thresholds {
            Some(t) => t.thresholds.clone(),
            None => vec![1.0; network.partition.cluster_count()],
        };
        let c: Vec<f64> = base.iter().map(|c| c + margin).collect();
        resolved.network = network.with_coupling(network.coupling.with_cluster_gains(c)?)?;
        resolved.coupling_mode = CouplingMode::Fixed;
    }
    let average = if resolved.network == scenario.network {
        average
    } else {
        resolved.network.average_laplacian(scenario.sim.horizon, AVERAGE_SAMPLES)?
    };
    let gains = match (&feedback, scaling, thresholds) {
        (Some(fb), Some(xi_scaling), Some(thresholds)) => Some(GainSet {
            feedback: fb.clone(),
            xi_scaling,
            thresholds,
        }),
        _ => None,
    };
    Ok(Design {
        scenario: resolved,
        stabilizability,
        feedback,
        gains,
        average,
    })
}

/// `S = sym(Θ V J Vᵀ Θ⁻¹)`; passes iff `λ_max(S) ≤ −tol`.
///
/// `V` (k×d) must have orthonormal rows and `Θ` (k×k) must be invertible.
pub fn contraction_check(
    j: &DMatrix<f64>,
    v: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    tol: f64,
) -> Result<ContractionResult> {
    let k = v.nrows();
    if !j.is_square() || v.ncols() != j.nrows() || theta.nrows() != k || theta.ncols() != k {
        return Err(Error::Dimension("contraction check: J, V and Θ are not conformable".into()));
    }
    let gram = v * v.transpose();
    if (gram - DMatrix::<f64>::identity(k, k)).amax() > 1e-10 {
        return Err(Error::Precondition("rows of V are not orthonormal".into()));
    }
    let theta_inv = theta
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Precondition("Θ is singular".into()))?;
    let s = sym(&(theta * v * j * v.transpose() * theta_inv));
    let lambda_max = lambda_max(&s);
    Ok(ContractionResult {
        lambda_max,
        passed: lambda_max <= -tol,
    })
}

/// Generalized Jacobian `I⊗A − L̃⊗BK` of the error system.
pub fn closed_loop_jacobian(plant: &gains::PlantModel, laplacian: &BlockLaplacian, k: &DMatrix<f64>) -> DMatrix<f64> {
    sim::error_matrix(plant, laplacian, k)
}

/// Contraction of the error system in the metric `Θ = (Ξ⊗P)^{1/2}`.
pub fn error_contraction(
    plant: &gains::PlantModel,
    laplacian: &BlockLaplacian,
    gains: &GainSet,
    tol: f64,
) -> Result<ContractionResult> {
    let j = closed_loop_jacobian(plant, laplacian, &gains.feedback.k);
    let metric = DMatrix::from_diagonal(&gains.xi_scaling).kronecker(&gains.feedback.p);
    let (theta, _) = linalg::spd_sqrt(&metric)?;
    let v = DMatrix::identity(j.nrows(), j.nrows());
    contraction_check(&j, &v, &theta, tol)
}

/// Full audit of a scenario whose coupling gains are concrete.
pub fn audit_scenario(scenario: &ClusterScenario, gains: Option<&GainSet>) -> Result<ConditionReport> {
    let network = &scenario.network;
    let partition = &network.partition;
    let stabilizability = gains::pbh_stabilizability_check(&scenario.plant, PBH_TOL)?;

    // Balance at the start of the trust schedule, after every trust
    // breakpoint, for every topology.
    let mut taus = vec![0.0];
    taus.extend(network.trust.breakpoints());
    let mut balance = Vec::new();
    for topo in &network.topologies {
        for &tau in &taus {
            let l = laplacian_of(&topo.graph, &network.trust, tau, partition, &topo.pinning, &network.coupling)?;
            for v in in_degree_balance_check(&l, BALANCE_TOL).violations {
                balance.push(BalanceFinding {
                    graph: topo.name.clone(),
                    tau,
                    node: v.node,
                    cluster: v.cluster,
                    sum: v.sum,
                });
            }
        }
    }

    let avg = network.average_laplacian(scenario.sim.horizon, AVERAGE_SAMPLES)?;
    let average = &avg.average;
    let average_tree = spanning_tree_check(&average.laplacian(), partition, average.pinning(), EDGE_TOL);
    let phase_trees = network
        .phase_topologies()
        .into_iter()
        .map(|g| {
            let l = network.topology_laplacian(g);
            let ok = spanning_tree_check(&l.laplacian(), partition, l.pinning(), EDGE_TOL).passed();
            (network.topologies[g].name.clone(), ok)
        })
        .collect();

    let configured_gains = network.coupling.cluster().to_vec();
    let scaling = network_scaling(average, SCALING_TOL).ok();
    let thresholds = match &scaling {
        Some(xi) => coupling_thresholds(average, xi, partition).ok(),
        None => None,
    };
    let certificate = scaling.as_ref().map(|xi| gains::certificate(xi, &average.grounded()));
    let symmetric_thresholds = (0..partition.cluster_count())
        .map(|ell| {
            let m = lambda_min(&sym(&average.unit_grounded_block(ell)));
            (m > 0.0).then(|| 1.0 / (2.0 * m))
        })
        .collect();

    let mut contraction = Vec::new();
    if let Some(g) = gains {
        contraction.push(ContractionEntry {
            label: "average".into(),
            result: error_contraction(&scenario.plant, average, g, 0.0)?,
        });
        for idx in network.phase_topologies() {
            contraction.push(ContractionEntry {
                label: format!("phase:{}", network.topologies[idx].name),
                result: error_contraction(&scenario.plant, &network.topology_laplacian(idx), g, 0.0)?,
            });
        }
    }

    let mut failures = Vec::new();
    if !stabilizability.is_stabilizable() {
        let reason = match &stabilizability.offending {
            Some(m) if m.eigenvalue.im == 0.0 => {
                format!("uncontrollable mode λ={} cannot be stabilized", fmt_num(m.eigenvalue.re))
            }
            Some(m) => format!(
                "uncontrollable mode λ={}{:+}i cannot be stabilized",
                fmt_num(m.eigenvalue.re),
                fmt_num(m.eigenvalue.im)
            ),
            None => "pair (A, B) is not stabilizable".into(),
        };
        failures.push(Failure {
            code: EXIT_STABILIZABILITY,
            reason,
        });
    }
    if !balance.is_empty() {
        failures.push(Failure {
            code: EXIT_BALANCE,
            reason: format!("{} inter-cluster in-degree sums do not cancel", balance.len()),
        });
    }
    if !average_tree.passed() {
        let missing: Vec<String> = average_tree
            .clusters
            .iter()
            .flat_map(|c| c.unreached.iter().map(|i| (i + 1).to_string()))
            .collect();
        failures.push(Failure {
            code: EXIT_SPANNING_TREE,
            reason: format!(
                "average graph has no leader-rooted spanning tree (unreached nodes {})",
                missing.join(", ")
            ),
        });
    } else {
        match &thresholds {
            Some(t) => {
                for (ell, (&c, &cs)) in configured_gains.iter().zip(&t.thresholds).enumerate() {
                    if !(c > cs) {
                        failures.push(Failure {
                            code: EXIT_COUPLING,
                            reason: format!("cluster {} gain {c} does not exceed threshold {cs}", ell + 1),
                        });
                    }
                }
            }
            None => failures.push(Failure {
                code: EXIT_COUPLING,
                reason: "no positive diagonal scaling; coupling threshold undefined".into(),
            }),
        }
    }

    let necessary = failures
        .iter()
        .any(|f| f.code == EXIT_STABILIZABILITY || f.code == EXIT_SPANNING_TREE);
    let verdict = if failures.is_empty() {
        Verdict::Certified
    } else if necessary {
        Verdict::NecessarilyFails
    } else {
        Verdict::Uncertified
    };
    Ok(ConditionReport {
        scenario: scenario.name.clone(),
        epsilon: network.epsilon(),
        stabilizability,
        balance,
        average_tree,
        phase_trees,
        kappa: avg.kappa,
        configured_gains,
        thresholds,
        symmetric_thresholds,
        certificate,
        contraction,
        epsilon_guidance: None,
        verdict,
        failures,
    })
}

fn fmt_num(v: f64) -> String {
    let r = v.round();
    if (v - r).abs() < 1e-6 {
        format!("{r}")
    } else {
        format!("{v:.6}")
    }
}

/// Design plus audit in one call.
pub fn analyze(scenario: &ClusterScenario) -> Result<(Design, ConditionReport)> {
    let d = design(scenario)?;
    let report = audit_scenario(&d.scenario, d.gains.as_ref())?;
    Ok((d, report))
}

/// Fitted decay of `Σ_ℓ E_ℓ` over `[0.2T, T]`.
pub fn decay_of(traj: &sim::Trajectory, horizon: f64) -> Result<sim::DecayFit> {
    sim::estimate_decay_rate(&traj.times, &traj.total_error(), (0.2 * horizon, horizon))
}

/// `config` adjusted to `epsilon`, with `dt` refined when needed so that
/// `dt ≤ ε·min_dwell/4` and the horizon stays a whole number of steps.
pub fn config_for_epsilon(config: &SimConfig, epsilon: f64, min_dwell: f64) -> SimConfig {
    let mut out = config.clone();
    out.epsilon = epsilon;
    let limit = epsilon * min_dwell / 4.0;
    if out.dt > limit {
        let steps = (out.horizon / limit).ceil();
        out.dt = out.horizon / steps;
        let old_steps = (config.horizon / config.dt).round() as usize;
        out.record_stride = (config.record_stride * steps as usize / old_steps.max(1)).max(1);
    }
    out
}

/// Decay rate for a single `ε`, or `None` if the run diverges or the fit
/// fails.
pub fn decay_at_epsilon(scenario: &ClusterScenario, k: &DMatrix<f64>, epsilon: f64) -> Option<f64> {
    let cfg = config_for_epsilon(&scenario.sim, epsilon, scenario.network.signal.min_dwell());
    let traj = sim::simulate(scenario, k, &cfg).ok()?;
    decay_of(&traj, cfg.horizon).ok().map(|f| f.rate).filter(|r| r.is_finite())
}

/// Empirical `ε` bound: evaluates `grid` in parallel, then refines the
/// bracket between the largest decaying and the next non-decaying value by
/// parallel sectioning.
pub fn epsilon_guidance(
    scenario: &ClusterScenario,
    k: &DMatrix<f64>,
    grid: &[f64],
    rounds: usize,
) -> Result<EpsilonGuidance> {
    if grid.is_empty() || grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidValue("epsilon grid must be non-empty and positive".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    let eval = |eps: &[f64]| -> Vec<(f64, Option<f64>)> {
        eps.par_iter().map(|&e| (e, decay_at_epsilon(scenario, k, e))).collect()
    };
    let decays = |r: &Option<f64>| r.is_some_and(|r| r > 0.0);
    let mut evaluated = eval(&sorted);
    for _ in 0..rounds {
        evaluated.sort_by(|a, b| a.0.total_cmp(&b.0));
        let Some(lo_idx) = evaluated.iter().rposition(|(_, r)| decays(r)) else { break };
        let Some(hi) = evaluated.get(lo_idx + 1).map(|(e, _)| *e) else { break };
        let lo = evaluated[lo_idx].0;
        let probes: Vec<f64> = (1..=4).map(|q| lo + (hi - lo) * q as f64 / 5.0).collect();
        evaluated.extend(eval(&probes));
    }
    evaluated.sort_by(|a, b| a.0.total_cmp(&b.0));
    let largest_decaying = evaluated.iter().filter(|(_, r)| decays(r)).map(|(e, _)| *e).fold(None, |m: Option<f64>, e| {
        Some(m.map_or(e, |m| m.max(e)))
    });
    let configured = scenario.network.epsilon();
    let configured_ok = match evaluated.iter().find(|(e, _)| *e == configured) {
        Some((_, r)) => decays(r),
        None => decays(&decay_at_epsilon(scenario, k, configured)),
    };
    Ok(EpsilonGuidance {
        evaluated,
        largest_decaying,
        configured_ok,
    })
}

/// Evidence that the error cannot vanish when the average graph lacks a
/// leader-rooted spanning tree.
#[derive(Debug, Clone, PartialEq)]
pub struct NecessityWitness {
    /// Basis of `ker[L̃^∞, −DΠ; 0, 0]` over stacked agents and leaders.
    pub kernel_basis: DMatrix<f64>,
    /// Kernel dimension of the synchronized states alone (one per cluster).
    pub synchronized_dim: usize,
    /// Node-space kernel vector `w` of `L̃^∞`.
    pub node_direction: DVector<f64>,
    /// State direction `d`; the initial error is `w ⊗ d`.
    pub state_direction: DVector<f64>,
    pub initial_error: DVector<f64>,
    pub times: Vec<f64>,
    /// `(w⊗d)ᵀe(t) / (w⊗d)ᵀe(0)`.
    pub projection_ratio: Vec<f64>,
    pub min_hold_ratio: f64,
    pub final_error_ratio: f64,
}

impl NecessityWitness {
    pub fn holds(&self) -> bool {
        self.min_hold_ratio >= 0.5
    }
}

pub fn necessity_witness_no_average_tree(
    scenario: &ClusterScenario,
    k: &DMatrix<f64>,
    config: &SimConfig,
) -> Result<NecessityWitness> {
    let network = &scenario.network;
    let partition = &network.partition;
    let avg = network.average_laplacian(config.horizon, AVERAGE_SAMPLES)?;
    let l = &avg.average;
    if spanning_tree_check(&l.laplacian(), partition, l.pinning(), EDGE_TOL).passed() {
        return Err(Error::Precondition(
            "the average graph has a leader-rooted spanning tree; no witness exists".into(),
        ));
    }
    let a = &scenario.plant.a;
    if linalg::spectral_abscissa(a) < 0.0 {
        return Err(Error::Precondition(
            "A is Hurwitz; every error decays regardless of the graph".into(),
        ));
    }
    let nodes = partition.node_count();
    let p = partition.cluster_count();

    let mut augmented = DMatrix::zeros(nodes + p, nodes + p);
    augmented.view_mut((0, 0), (nodes, nodes)).copy_from(&l.grounded());
    for i in 0..nodes {
        augmented[(i, nodes + partition.cluster_of(i))] = -l.pinning_gain(i);
    }
    let kernel_basis = linalg::null_space(&augmented, KERNEL_TOL);
    if kernel_basis.ncols() <= p {
        return Err(Error::Precondition(format!(
            "kernel dimension {} does not exceed the {p} synchronized directions",
            kernel_basis.ncols()
        )));
    }
    let node_kernel = linalg::null_space(&l.grounded(), KERNEL_TOL);
    let w = node_kernel.column(0).into_owned();

    // Slowest-decaying state direction: real part of the eigenvector for the
    // rightmost eigenvalue of A.
    let d = rightmost_direction(a)?;
    let e0 = w.kronecker(&d);
    let probe = e0.clone();
    let mut cfg = config.clone();
    cfg.record_stride = 1;
    let (times, errors) = sim::simulate_error(scenario, k, &cfg, &e0)?;
    let base = probe.dot(&e0);
    let projection_ratio: Vec<f64> = errors.iter().map(|e| probe.dot(e) / base).collect();
    let min_hold_ratio = projection_ratio.iter().copied().fold(f64::INFINITY, f64::min);
    let final_error_ratio = errors.last().map(|e| e.norm() / e0.norm()).unwrap_or(1.0);
    Ok(NecessityWitness {
        kernel_basis,
        synchronized_dim: p,
        node_direction: w,
        state_direction: d,
        initial_error: e0,
        times,
        projection_ratio,
        min_hold_ratio,
        final_error_ratio,
    })
}

fn rightmost_direction(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let lambda = a
        .complex_eigenvalues()
        .iter()
        .copied()
        .max_by(|x, y| x.re.total_cmp(&y.re))
        .ok_or_else(|| Error::Eigen("empty spectrum".into()))?;
    let a_c = a.map(|v| num_complex::Complex64::new(v, 0.0));
    let shifted = a_c - DMatrix::<num_complex::Complex64>::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Eigen("SVD failed".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or_else(|| Error::Eigen("empty SVD".into()))?;
    let v: Vec<num_complex::Complex64> = v_t.row(idx).iter().map(|z| z.conj()).collect();
    let pivot = v.iter().copied().max_by(|x, y| x.norm().total_cmp(&y.norm())).unwrap_or_default();
    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { 1.0.into() };
    let d = DVector::from_iterator(n, v.iter().map(|z| (z * phase).re));
    let norm = d.norm();
    if norm == 0.0 {
        return Err(Error::Eigen("degenerate eigenvector".into()));
    }
    Ok(d / norm)
}

/// Whether the plant alone is stabilizable, ignoring the network.
pub fn plant_verdict(report: &PbhReport) -> &'static str {
    match report.verdict {
        Stabilizability::Controllable => "controllable",
        Stabilizability::Stabilizable => "stabilizable",
        Stabilizability::Neither => "not stabilizable",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_contraction_signs() {
        let one = DMatrix::identity(1, 1);
        let r = contraction_check(&DMatrix::from_element(1, 1, -1.0), &one, &one, 1e-9).unwrap();
        assert_abs_diff_eq!(r.lambda_max, -1.0);
        assert!(r.passed);
        let r = contraction_check(&DMatrix::from_element(1, 1, 1.0), &one, &one, 1e-9).unwrap();
        assert_abs_diff_eq!(r.lambda_max, 1.0);
        assert!(!r.passed);
    }

    #[test]
    fn contraction_rejects_bad_inputs() {
        let j = DMatrix::from_element(2, 2, -1.0);
        let v = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(contraction_check(&j, &v, &DMatrix::identity(1, 1), 0.0).is_err());
        let v = DMatrix::identity(2, 2);
        assert!(contraction_check(&j, &v, &DMatrix::zeros(2, 2), 0.0).is_err());
    }

    #[test]
    fn projection_removes_consensus_direction() {
        // J = −L for a 2-node undirected edge; projecting out 1 leaves −2.
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let s = 0.5f64.sqrt();
        let v = DMatrix::from_row_slice(1, 2, &[s, -s]);
        let r = contraction_check(&j, &v, &DMatrix::identity(1, 1), 1e-9).unwrap();
        assert_abs_diff_eq!(r.lambda_max, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn epsilon_config_refines_step() {
        let cfg = SimConfig::new(0.01, 1.0, 0.1, 1);
        let out = config_for_epsilon(&cfg, 0.01, 1.0);
        assert!(out.dt <= 0.0025 + 1e-15);
        assert!(out.validate(1.0, 1).is_ok());
        assert_eq!(config_for_epsilon(&cfg, 1.0, 1.0).dt, 0.01);
    }
}
