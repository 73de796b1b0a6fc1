//! Fixed-step RK4 integration of the pinned, switched closed loop.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gains::{PlantModel, UncontrollableMode};
use crate::graph::{BlockLaplacian, ClusterPartition, SwitchedNetwork};
use crate::scenario::ClusterScenario;

/// Any state component above this magnitude aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Breakpoints closer than this fraction of `dt` to a step boundary are
/// merged into the boundary.
const SNAP_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub epsilon: f64,
    /// Per-dimension sampling interval for random initial agent states.
    pub init_range: Vec<(f64, f64)>,
    pub seed: u64,
    pub record_stride: usize,
}

impl SimConfig {
    /// Defaults: initial states from `[-10, 10]^n`, seed 0, every step
    /// recorded.
    pub fn new(dt: f64, horizon: f64, epsilon: f64, state_dim: usize) -> Self {
        Self {
            dt,
            horizon,
            epsilon,
            init_range: vec![(-10.0, 10.0); state_dim],
            seed: 0,
            record_stride: 1,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Checks the invariants, including `dt ≤ ε·min_dwell/4`.
    pub fn validate(&self, min_dwell: f64, state_dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return bad(format!("horizon {} must be at least dt {}", self.horizon, self.dt));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return bad(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        let limit = self.epsilon * min_dwell / 4.0;
        if self.dt > limit * (1.0 + 1e-12) {
            return bad(format!(
                "dt {} exceeds ε·min_dwell/4 = {limit}; switching phases could be skipped",
                self.dt
            ));
        }
        if self.init_range.len() != state_dim {
            return bad(format!(
                "init_range has {} intervals, state dimension is {state_dim}",
                self.init_range.len()
            ));
        }
        if let Some((lo, hi)) = self.init_range.iter().find(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
            return bad(format!("init_range interval [{lo}, {hi}] is invalid"));
        }
        Ok(())
    }
}

/// Recorded samples of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Stacked agent states `[x_1; …; x_N]` per sample.
    pub agent_states: Vec<DVector<f64>>,
    /// Stacked leader states `[s_1; …; s_p]` per sample.
    pub leader_states: Vec<DVector<f64>>,
    /// `E_ℓ(t)` per sample, one entry per cluster.
    pub error_series: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Error series of one cluster.
    pub fn cluster_error(&self, ell: usize) -> Vec<f64> {
        self.error_series.iter().map(|e| e[ell]).collect()
    }

    /// `Σ_ℓ E_ℓ(t)`.
    pub fn total_error(&self) -> Vec<f64> {
        self.error_series.iter().map(|e| e.iter().sum()).collect()
    }

    /// Error of agent `i` against its leader, `x_i − s_ī`, at sample `k`.
    pub fn agent_error(&self, partition: &ClusterPartition, k: usize, i: usize) -> DVector<f64> {
        let n = self.agent_states[k].len() / partition.node_count();
        let ell = partition.cluster_of(i);
        self.agent_states[k].rows(i * n, n) - self.leader_states[k].rows(ell * n, n)
    }
}

/// `u_i = K[Σ_j c_ij a_ij (x_j − x_i) + c_ī d_i (s_ī − x_i)]`.
///
/// `states` stacks all agents and `leaders` all cluster leaders.
pub fn control_input(
    i: usize,
    states: &DVector<f64>,
    leaders: &DVector<f64>,
    laplacian: &BlockLaplacian,
    k: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let nodes = laplacian.node_count();
    if i >= nodes {
        return Err(Error::Dimension(format!("agent {} out of range (N = {nodes})", i + 1)));
    }
    let n = k.ncols();
    let p = laplacian.partition().cluster_count();
    if states.len() != nodes * n || leaders.len() != p * n {
        return Err(Error::Dimension(format!(
            "expected {} agent and {} leader components, got {} and {}",
            nodes * n,
            p * n,
            states.len(),
            leaders.len()
        )));
    }
    let w = laplacian.effective_weights();
    let xi = states.rows(i * n, n);
    let mut v = DVector::zeros(n);
    for j in 0..nodes {
        if j != i && w[(i, j)] != 0.0 {
            v += (states.rows(j * n, n) - xi) * w[(i, j)];
        }
    }
    let ell = laplacian.partition().cluster_of(i);
    v += (leaders.rows(ell * n, n) - xi) * laplacian.pinning_gain(i);
    Ok(k * v)
}

/// System matrix of the joint agent/leader ODE for one fixed topology:
/// `ẋ = (I⊗A − L̃⊗BK)x + (D⊗BK)Πs`, `ṡ = (I⊗A)s`, with `Π` mapping
/// each agent to its cluster leader.
pub fn joint_matrix(plant: &PlantModel, laplacian: &BlockLaplacian, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = plant.state_dim();
    let nodes = laplacian.node_count();
    let p = laplacian.partition().cluster_count();
    let bk = &plant.b * k;
    let dim = (nodes + p) * n;
    let mut f = DMatrix::zeros(dim, dim);
    let l = laplacian.grounded();
    for i in 0..nodes {
        for j in 0..nodes {
            let mut blk = -&bk * l[(i, j)];
            if i == j {
                blk += &plant.a;
            }
            if blk.iter().any(|&v| v != 0.0) {
                f.view_mut((i * n, j * n), (n, n)).copy_from(&blk);
            }
        }
        let g = laplacian.pinning_gain(i);
        if g != 0.0 {
            let ell = laplacian.partition().cluster_of(i);
            f.view_mut((i * n, (nodes + ell) * n), (n, n)).copy_from(&(&bk * g));
        }
    }
    for ell in 0..p {
        let o = (nodes + ell) * n;
        f.view_mut((o, o), (n, n)).copy_from(&plant.a);
    }
    f
}

/// Error-system matrix `I⊗A − L̃⊗BK`.
pub fn error_matrix(plant: &PlantModel, laplacian: &BlockLaplacian, k: &DMatrix<f64>) -> DMatrix<f64> {
    let nodes = laplacian.node_count();
    let eye = DMatrix::<f64>::identity(nodes, nodes);
    eye.kronecker(&plant.a) - laplacian.grounded().kronecker(&(&plant.b * k))
}

/// One classical RK4 step of `ż = Fz`.
pub fn rk4_step(f: &DMatrix<f64>, z: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = f * z;
    let k2 = f * (z + &k1 * (h / 2.0));
    let k3 = f * (z + &k2 * (h / 2.0));
    let k4 = f * (z + &k3 * h);
    z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates `ż = F(t)z` on the `dt` grid, splitting steps at topology
/// breakpoints. `build` maps a Laplacian to `F`; `record` is called at every
/// stride multiple.
fn integrate_linear(
    network: &SwitchedNetwork,
    config: &SimConfig,
    z0: DVector<f64>,
    build: impl Fn(&BlockLaplacian) -> DMatrix<f64>,
    mut record: impl FnMut(f64, &DVector<f64>),
) -> Result<DVector<f64>> {
    let steps = config.steps();
    let dt = config.dt;
    let breaks = network.breakpoints(0.0, config.horizon);
    let mut cursor = 0;
    let mut cached: Option<(usize, DMatrix<f64>)> = None;
    let mut z = z0;
    record(0.0, &z);
    let mut last_finite = 0.0;
    for step in 0..steps {
        let t0 = step as f64 * dt;
        let t1 = (step + 1) as f64 * dt;
        let snap = SNAP_FRACTION * dt;
        while cursor < breaks.len() && breaks[cursor] <= t0 + snap {
            cursor += 1;
        }
        let mut inner = Vec::new();
        let mut c = cursor;
        while c < breaks.len() && breaks[c] < t1 - snap {
            inner.push(breaks[c]);
            c += 1;
        }
        let mut start = t0;
        for end in inner.into_iter().chain(std::iter::once(t1)) {
            let mid = 0.5 * (start + end);
            // Topology piece = number of breakpoints at or before `mid`.
            let piece = breaks.partition_point(|&b| b <= mid);
            if cached.as_ref().map(|(p, _)| *p) != Some(piece) {
                cached = Some((piece, build(&network.laplacian_at(mid))));
            }
            let f = &cached.as_ref().expect("cached above").1;
            z = rk4_step(f, &z, end - start);
            start = end;
        }
        if z.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Diverged {
                time: t1,
                last_finite,
            });
        }
        last_finite = t1;
        if (step + 1) % config.record_stride == 0 {
            record(t1, &z);
        }
    }
    Ok(z)
}

fn prepare<'a>(
    scenario: &'a ClusterScenario,
    k: &DMatrix<f64>,
    config: &SimConfig,
) -> Result<std::borrow::Cow<'a, SwitchedNetwork>> {
    let n = scenario.plant.state_dim();
    if k.nrows() != scenario.plant.input_dim() || k.ncols() != n {
        return Err(Error::Dimension(format!(
            "gain must be {}×{n}, got {}×{}",
            scenario.plant.input_dim(),
            k.nrows(),
            k.ncols()
        )));
    }
    let network = if (config.epsilon - scenario.network.epsilon()).abs() > 0.0 {
        std::borrow::Cow::Owned(scenario.network.with_epsilon(config.epsilon)?)
    } else {
        std::borrow::Cow::Borrowed(&scenario.network)
    };
    config.validate(network.signal.min_dwell(), n)?;
    Ok(network)
}

/// Draws initial agent states uniformly from `init_range`, agent by agent.
pub fn random_initial_states(config: &SimConfig, nodes: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.init_range.len();
    let mut x = DVector::zeros(nodes * n);
    for i in 0..nodes {
        for (c, &(lo, hi)) in config.init_range.iter().enumerate() {
            x[i * n + c] = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        }
    }
    x
}

/// Runs the closed loop from random initial agent states.
pub fn simulate(scenario: &ClusterScenario, k: &DMatrix<f64>, config: &SimConfig) -> Result<Trajectory> {
    let x0 = random_initial_states(config, scenario.network.partition.node_count());
    simulate_from(scenario, k, config, &x0)
}

/// Runs the closed loop from the given stacked agent states; leaders start
/// at the scenario's values.
pub fn simulate_from(
    scenario: &ClusterScenario,
    k: &DMatrix<f64>,
    config: &SimConfig,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    let network = prepare(scenario, k, config)?;
    let n = scenario.plant.state_dim();
    let nodes = network.partition.node_count();
    let p = network.partition.cluster_count();
    if x0.len() != nodes * n {
        return Err(Error::Dimension(format!("expected {} agent components, got {}", nodes * n, x0.len())));
    }
    if scenario.leaders.len() != p || scenario.leaders.iter().any(|s| s.len() != n) {
        return Err(Error::Dimension(format!("expected {p} leader states of length {n}")));
    }
    let mut z0 = DVector::zeros((nodes + p) * n);
    z0.rows_mut(0, nodes * n).copy_from(x0);
    for (ell, s) in scenario.leaders.iter().enumerate() {
        z0.rows_mut((nodes + ell) * n, n).copy_from(s);
    }

    let capacity = config.steps() / config.record_stride + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        agent_states: Vec::with_capacity(capacity),
        leader_states: Vec::with_capacity(capacity),
        error_series: Vec::with_capacity(capacity),
    };
    let partition = network.partition.clone();
    integrate_linear(
        &network,
        config,
        z0,
        |l| joint_matrix(&scenario.plant, l, k),
        |t, z| {
            let x = z.rows(0, nodes * n).into_owned();
            let s = z.rows(nodes * n, p * n).into_owned();
            traj.error_series.push(cluster_errors(&partition, n, &x, &s));
            traj.times.push(t);
            traj.agent_states.push(x);
            traj.leader_states.push(s);
        },
    )?;
    Ok(traj)
}

/// Integrates the error system `ė = (I⊗A − L̃(t/ε)⊗BK)e` directly; returns
/// the sample times and stacked errors.
pub fn simulate_error(
    scenario: &ClusterScenario,
    k: &DMatrix<f64>,
    config: &SimConfig,
    e0: &DVector<f64>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let network = prepare(scenario, k, config)?;
    let n = scenario.plant.state_dim();
    if e0.len() != network.partition.node_count() * n {
        return Err(Error::Dimension("initial error has the wrong length".into()));
    }
    let mut times = Vec::new();
    let mut errors = Vec::new();
    integrate_linear(
        &network,
        config,
        e0.clone(),
        |l| error_matrix(&scenario.plant, l, k),
        |t, z| {
            times.push(t);
            errors.push(z.clone());
        },
    )?;
    Ok((times, errors))
}

fn cluster_errors(partition: &ClusterPartition, n: usize, x: &DVector<f64>, s: &DVector<f64>) -> Vec<f64> {
    (0..partition.cluster_count())
        .map(|ell| {
            let leader = s.rows(ell * n, n);
            partition
                .members(ell)
                .iter()
                .map(|&i| (x.rows(i * n, n) - leader).norm())
                .sum()
        })
        .collect()
}

/// `E_ℓ(t) = Σ_{i∈V_ℓ} ‖x_i(t) − s_ℓ(t)‖` recomputed from the recorded
/// states.
pub fn error_metrics(traj: &Trajectory, partition: &ClusterPartition) -> Result<Vec<Vec<f64>>> {
    if traj.is_empty() {
        return Err(Error::InvalidValue("empty trajectory".into()));
    }
    let n = traj.agent_states[0].len() / partition.node_count();
    Ok(traj
        .agent_states
        .iter()
        .zip(&traj.leader_states)
        .map(|(x, s)| cluster_errors(partition, n, x, s))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `−ln E(t)`.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `−ln E(t) ≈ rate·t + c` over samples with `t ∈ [t_a, t_b]`.
pub fn estimate_decay_rate(times: &[f64], series: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != series.len() {
        return Err(Error::Fit("times and series differ in length".into()));
    }
    let (ta, tb) = window;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .filter(|(&t, _)| t >= ta && t <= tb)
        .map(|(&t, &e)| (t, e))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!("window [{ta}, {tb}] holds fewer than two samples")));
    }
    if let Some((t, e)) = pts.iter().find(|(_, e)| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Fit(format!("series is {e} at t = {t}; logarithm undefined")));
    }
    let m = pts.len() as f64;
    let ys: Vec<f64> = pts.iter().map(|(_, e)| -e.ln()).collect();
    let tm = pts.iter().map(|(t, _)| t).sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let stt: f64 = pts.iter().map(|(t, _)| (t - tm).powi(2)).sum();
    let sty: f64 = pts.iter().zip(&ys).map(|((t, _), y)| (t - tm) * (y - ym)).sum();
    if stt == 0.0 {
        return Err(Error::Fit("window spans a single instant".into()));
    }
    let rate = sty / stt;
    let intercept = ym - rate * tm;
    let ss_tot: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .zip(&ys)
        .map(|((t, _), y)| (y - intercept - rate * t).powi(2))
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * m * ym.abs().max(1.0) { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(DecayFit {
        rate,
        intercept,
        r_squared,
    })
}

/// Per-sample, per-agent deviation of `vᵀe_i(t)` from `e^{λt} vᵀe_i(0)`,
/// with the reference magnitude alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrace {
    pub times: Vec<f64>,
    pub residual: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
}

impl ModeTrace {
    /// Largest `residual / reference` over agents with a nonzero reference.
    pub fn max_relative(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.reference)
            .flat_map(|(r, q)| r.iter().zip(q))
            .filter(|(_, &q)| q > 0.0)
            .map(|(r, q)| r / q)
            .fold(0.0, f64::max)
    }
}

pub fn uncontrollable_mode_trace(
    traj: &Trajectory,
    plant: &PlantModel,
    partition: &ClusterPartition,
    mode: &UncontrollableMode,
) -> Result<ModeTrace> {
    let n = plant.state_dim();
    let v = &mode.left_vector;
    if v.len() != n {
        return Err(Error::Dimension("left vector does not match the plant".into()));
    }
    let a_c = plant.a.map(|x| Complex64::new(x, 0.0));
    let lhs = v.transpose() * &a_c - v.transpose() * mode.eigenvalue;
    let scale = v.norm() * plant.a.norm().max(1.0);
    if lhs.norm() > 1e-8 * scale {
        return Err(Error::Precondition(format!(
            "v is not a left eigenvector for λ = {} (residual {:e})",
            mode.eigenvalue,
            lhs.norm()
        )));
    }
    if traj.is_empty() {
        return Err(Error::InvalidValue("empty trajectory".into()));
    }
    let nodes = partition.node_count();
    let project = |k: usize, i: usize| -> Complex64 {
        let e = traj.agent_error(partition, k, i);
        v.iter().zip(e.iter()).map(|(vi, ei)| vi * ei).sum()
    };
    let initial: Vec<Complex64> = (0..nodes).map(|i| project(0, i)).collect();
    let t0 = traj.times[0];
    let mut out = ModeTrace {
        times: traj.times.clone(),
        residual: Vec::with_capacity(traj.len()),
        reference: Vec::with_capacity(traj.len()),
    };
    for (k, &t) in traj.times.iter().enumerate() {
        let growth = (mode.eigenvalue * (t - t0)).exp();
        let (res, refs) = (0..nodes)
            .map(|i| {
                let expect = growth * initial[i];
                ((project(k, i) - expect).norm(), expect.norm())
            })
            .unzip();
        out.residual.push(res);
        out.reference.push(refs);
    }
    Ok(out)
}
