//! Feedback gain synthesis, stabilizability tests and the coupling-strength
//! certificates built on the averaged Laplacian.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{BlockLaplacian, ClusterPartition};
use crate::linalg::{self, lambda_max, lambda_min, sym};

/// Default PBH tolerance, relative to `‖[A B]‖_F`.
pub const PBH_TOL: f64 = 1e-8;
/// Maximum accepted Riccati residual `‖AᵀP + PA + W − PBBᵀP‖_F`.
pub const ARE_TOL: f64 = 1e-8;

/// Agent dynamics `ẋ = Ax + Bu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("A must be square, got {}×{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {}×m with m ≥ 1, got {}×{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("plant matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stabilizability {
    Controllable,
    /// Every uncontrollable mode is strictly stable.
    Stabilizable,
    Neither,
}

/// Result of the PBH rank test at one eigenvalue of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTest {
    pub eigenvalue: Complex64,
    /// `σ_min([A − λI, B])`.
    pub sigma_min: f64,
}

/// A mode that `B` cannot reach: `vᵀA = λvᵀ` and `vᵀB = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncontrollableMode {
    pub eigenvalue: Complex64,
    pub left_vector: DVector<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PbhReport {
    pub verdict: Stabilizability,
    pub threshold: f64,
    pub modes: Vec<ModeTest>,
    pub offending: Option<UncontrollableMode>,
}

impl PbhReport {
    pub fn is_stabilizable(&self) -> bool {
        self.verdict != Stabilizability::Neither
    }
}

/// Eigenvalues of `A`, with numerically split clusters of a repeated
/// eigenvalue merged into their mean (which is far more accurate than any
/// single member for defective eigenvalues).
fn clustered_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let raw: Vec<Complex64> = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect();
    let scale = a.norm().max(1.0);
    let radius = 1e-4 * scale;
    let mut used = vec![false; raw.len()];
    let mut out = Vec::new();
    for i in 0..raw.len() {
        if used[i] {
            continue;
        }
        let mut sum = raw[i];
        let mut count = 1.0;
        used[i] = true;
        for j in i + 1..raw.len() {
            if !used[j] && (raw[j] - raw[i]).norm() < radius {
                used[j] = true;
                sum += raw[j];
                count += 1.0;
            }
        }
        let mut mean = sum / count;
        if mean.im.abs() < radius {
            mean.im = 0.0;
        }
        out.push(mean);
    }
    Ok(out)
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// PBH (Popov–Belevitch–Hautus) test of `(A, B)`.
///
/// `tol` is relative to `‖[A B]‖_F`.
pub fn pbh_stabilizability_check(plant: &PlantModel, tol: f64) -> Result<PbhReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidValue("PBH tolerance must be positive".into()));
    }
    let n = plant.state_dim();
    let m = plant.input_dim();
    let ab_norm = (plant.a.norm_squared() + plant.b.norm_squared()).sqrt();
    let threshold = tol * ab_norm.max(f64::MIN_POSITIVE);
    let a_c = to_complex(&plant.a);
    let b_c = to_complex(&plant.b);

    let mut modes = Vec::new();
    let mut worst: Option<(bool, f64, UncontrollableMode)> = None;
    for lambda in clustered_eigenvalues(&plant.a)? {
        let mut pencil = DMatrix::<Complex64>::zeros(n, n + m);
        pencil.view_mut((0, 0), (n, n)).copy_from(&(&a_c - DMatrix::identity(n, n) * lambda));
        pencil.view_mut((0, n), (n, m)).copy_from(&b_c);
        let svd = pencil.svd(true, false);
        let (k_min, &sigma_min) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::Eigen("empty PBH pencil".into()))?;
        modes.push(ModeTest {
            eigenvalue: lambda,
            sigma_min,
        });
        if sigma_min > threshold {
            continue;
        }
        // uᴴ·[A−λI, B] ≈ 0, so v = conj(u) satisfies vᵀA = λvᵀ, vᵀB = 0.
        let u = svd.u.as_ref().expect("requested U").column(k_min).map(|z| z.conj());
        let v = normalize_phase(u.into_owned());
        let unstable = lambda.re >= 0.0;
        let replace = match &worst {
            None => true,
            Some((w_unstable, w_sigma, w_mode)) => {
                let w_re = w_mode.eigenvalue.re;
                (unstable && !w_unstable)
                    || (unstable == *w_unstable
                        && (lambda.re > w_re || (lambda.re == w_re && sigma_min < *w_sigma)))
            }
        };
        if replace {
            worst = Some((
                unstable,
                sigma_min,
                UncontrollableMode {
                    eigenvalue: lambda,
                    left_vector: v,
                },
            ));
        }
    }
    let verdict = match &worst {
        None => Stabilizability::Controllable,
        Some((true, _, _)) => Stabilizability::Neither,
        Some((false, _, _)) => Stabilizability::Stabilizable,
    };
    Ok(PbhReport {
        verdict,
        threshold,
        modes,
        offending: worst.map(|(_, _, mode)| mode),
    })
}

/// Rotates a complex vector so its largest entry is real and positive; real
/// eigenvectors come out with zero imaginary parts.
fn normalize_phase(v: DVector<Complex64>) -> DVector<Complex64> {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    if pivot.norm() == 0.0 {
        return v;
    }
    let phase = pivot.conj() / pivot.norm();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.map(|z| z * phase / norm)
}

/// State-feedback design: `P` from the stabilizing Riccati solution and
/// `K = BᵀP`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Decay margin `λ_min(W)/λ_max(P)`.
    pub xi: f64,
    /// `‖AᵀP + PA + W − PBBᵀP‖_F`.
    pub are_residual: f64,
    /// Residual of the transposed design form `PAᵀ + AP − ξ·P(BᵀB)P − ξP`
    /// when `BᵀB` is conformable with `P`; reported for transparency only.
    pub literal_design_residual: Option<f64>,
}

/// Full gain set: feedback design plus the network scaling and thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub feedback: FeedbackGain,
    /// Diagonal of `Ξ` (all nodes, assembled cluster by cluster).
    pub xi_scaling: DVector<f64>,
    pub thresholds: ThresholdReport,
}

/// Solves `AᵀP + PA + W − PBBᵀP = 0` for the stabilizing `P` and returns
/// `K = BᵀP`.
///
/// The stable invariant subspace of the Hamiltonian is extracted with the
/// matrix sign function, then Newton (Kleinman) steps polish the solution
/// until the residual is below [`ARE_TOL`] times
/// `max(1, ‖W‖ + 2‖A‖‖P‖ + ‖BBᵀ‖‖P‖²)`.
pub fn synthesize_gain(plant: &PlantModel, weight: &DMatrix<f64>) -> Result<FeedbackGain> {
    let n = plant.state_dim();
    if weight.nrows() != n || weight.ncols() != n {
        return Err(Error::Dimension(format!(
            "weight must be {n}×{n}, got {}×{}",
            weight.nrows(),
            weight.ncols()
        )));
    }
    if !linalg::is_symmetric(weight, 1e-12 * weight.norm().max(1.0)) || lambda_min(weight) <= 0.0 {
        return Err(Error::InvalidValue("weight must be symmetric positive definite".into()));
    }
    let report = pbh_stabilizability_check(plant, PBH_TOL)?;
    if let (Stabilizability::Neither, Some(mode)) = (report.verdict, &report.offending) {
        return Err(Error::NotStabilizable {
            re: mode.eigenvalue.re,
            im: mode.eigenvalue.im,
        });
    }

    let a = &plant.a;
    let s = &plant.b * plant.b.transpose();
    let residual = |p: &DMatrix<f64>| (a.transpose() * p + p * a + weight - p * &s * p).norm();

    let scale = |p: &DMatrix<f64>| {
        let np = p.norm();
        (weight.norm() + 2.0 * a.norm() * np + s.norm() * np * np).max(1.0)
    };
    let mut p = sign_function_riccati(a, &s, weight)?;
    let mut res = residual(&p);
    for _ in 0..8 {
        if res <= 1e-3 * ARE_TOL {
            break;
        }
        // Kleinman step: (A − SP)ᵀX + X(A − SP) + W + PSP = 0.
        let closed = a - &s * &p;
        let next = linalg::solve_lyapunov(&closed, &(weight + &p * &s * &p))?;
        let next_res = residual(&next);
        if !(next_res < res) {
            break;
        }
        p = next;
        res = next_res;
    }
    if !(res <= ARE_TOL * scale(&p)) || lambda_min(&p) <= 0.0 || linalg::spectral_abscissa(&(a - &s * &p)) >= 0.0 {
        return Err(Error::Riccati { residual: res });
    }

    let k = plant.b.transpose() * &p;
    let xi = lambda_min(weight) / lambda_max(&p);
    let literal_design_residual = {
        let btb = plant.b.transpose() * &plant.b;
        let quad = if btb.nrows() == 1 {
            Some(&p * &p * btb[(0, 0)])
        } else if btb.nrows() == n {
            Some(&p * &btb * &p)
        } else {
            None
        };
        quad.map(|q| (&p * a.transpose() + a * &p - q * xi - &p * xi).norm())
    };
    Ok(FeedbackGain {
        p,
        k,
        xi,
        are_residual: res,
        literal_design_residual,
    })
}

/// Gain that stabilizes the controllable subspace only.
///
/// With `Q` an orthonormal basis of `range[B, AB, …, Aⁿ⁻¹B]`, solves the
/// Riccati equation for `(QᵀAQ, QᵀB)` with weight `QᵀWQ` and lifts the result
/// back as `K = K_c Qᵀ`. Uncontrollable modes are left untouched, which is
/// what a non-stabilizable plant demonstration needs.
pub fn synthesize_controllable_part(plant: &PlantModel, weight: &DMatrix<f64>) -> Result<FeedbackGain> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let mut ctrb = DMatrix::<f64>::zeros(n, n * m);
    let mut block = plant.b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = &plant.a * block;
    }
    let svd = ctrb.svd(true, false);
    let u = svd.u.as_ref().expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 1e-10 * smax)
        .map(|(k, _)| u.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        return Err(Error::NotStabilizable { re: f64::NAN, im: 0.0 });
    }
    let q = DMatrix::from_columns(&cols);
    let reduced = PlantModel::new(q.transpose() * &plant.a * &q, q.transpose() * &plant.b)?;
    let w = sym(&(q.transpose() * weight * &q));
    let part = synthesize_gain(&reduced, &w)?;
    let p = &q * &part.p * q.transpose();
    Ok(FeedbackGain {
        k: &part.k * q.transpose(),
        xi: part.xi,
        are_residual: part.are_residual,
        literal_design_residual: None,
        p,
    })
}

fn sign_function_riccati(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-w));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let inv = lu
            .try_inverse()
            .ok_or(Error::Riccati { residual: f64::INFINITY })?;
        // Determinant scaling accelerates the early iterations.
        let c = det.abs().powf(-1.0 / (2 * n) as f64);
        let c = if c.is_finite() && c > 0.0 { c } else { 1.0 };
        let next = (&z * c + inv / c) * 0.5;
        let delta = (&next - &z).norm();
        let scale = next.norm();
        z = next;
        if delta <= 1e-12 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Riccati { residual: f64::INFINITY });
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let z11 = z.view((0, 0), (n, n));
    let z12 = z.view((0, n), (n, n));
    let z21 = z.view((n, 0), (n, n));
    let z22 = z.view((n, n), (n, n));
    let mut lhs = DMatrix::<f64>::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z22 + &eye));
    let mut rhs = DMatrix::<f64>::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(z11 + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z21));
    let p = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Eigen(e.to_string()))?;
    Ok(sym(&p))
}

/// Positive diagonal `Ξ_ℓ` with `Ξ_ℓL̃ + L̃ᵀΞ_ℓ ≻ 0` for a grounded block that
/// is a nonsingular M-matrix: `Ξ_ℓ = diag(p_i / q_i)` with `p = L̃⁻ᵀ1` and
/// `q = L̃⁻¹1`.
pub fn compute_xi(grounded_block: &DMatrix<f64>, tol: f64) -> Result<DVector<f64>> {
    compute_xi_for(grounded_block, tol, 0)
}

fn compute_xi_for(l: &DMatrix<f64>, tol: f64, cluster: usize) -> Result<DVector<f64>> {
    let m = l.nrows();
    let ones = DVector::from_element(m, 1.0);
    let singular = || Error::Scaling {
        cluster,
        reason: "grounded block is singular (leader does not reach every node)".into(),
    };
    let lu = l.clone().lu();
    let q = lu.solve(&ones).ok_or_else(singular)?;
    let p = l.transpose().lu().solve(&ones).ok_or_else(singular)?;
    if let Some(i) = (0..m).find(|&i| !(q[i] > 0.0 && p[i] > 0.0 && q[i].is_finite() && p[i].is_finite())) {
        return Err(Error::Scaling {
            cluster,
            reason: format!("row {} of L̃⁻¹1 or L̃⁻ᵀ1 is not positive", i + 1),
        });
    }
    let xi = p.component_div(&q);
    let cert = certificate(&xi, l);
    if !(cert > tol) {
        return Err(Error::Scaling {
            cluster,
            reason: format!("certificate λ_min = {cert:e} not above {tol:e}"),
        });
    }
    Ok(xi)
}

/// `λ_min(ΞL + LᵀΞ)` for diagonal `Ξ`.
pub fn certificate(xi: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let x = DMatrix::from_diagonal(xi);
    lambda_min(&(&x * l + l.transpose() * &x))
}

/// Per-cluster scaling assembled into the diagonal of `Ξ`.
pub fn network_scaling(average: &BlockLaplacian, tol: f64) -> Result<DVector<f64>> {
    let part = average.partition();
    let mut out = DVector::zeros(part.node_count());
    for ell in 0..part.cluster_count() {
        let xi = compute_xi_for(&average.unit_grounded_block(ell), tol, ell)?;
        for (r, &i) in part.members(ell).iter().enumerate() {
            out[i] = xi[r];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    /// `λ_min(ΞL₀ + L₀ᵀΞ)`.
    pub numerator: f64,
    /// `λ_min(Ξ_ℓL̃_ℓℓ + L̃_ℓℓᵀΞ_ℓ)` per cluster.
    pub denominators: Vec<f64>,
    /// `c*_ℓ`, clamped at zero.
    pub thresholds: Vec<f64>,
}

/// Coupling thresholds `c*_ℓ = max(0, −λ_min(ΞL₀+L₀ᵀΞ) / λ_min(Ξ_ℓL̃_ℓℓ+L̃_ℓℓᵀΞ_ℓ))`.
///
/// Any `c_ℓ > c*_ℓ` makes `ΞL̃ + L̃ᵀΞ` positive definite by the Weyl bound.
pub fn coupling_thresholds(
    average: &BlockLaplacian,
    xi_scaling: &DVector<f64>,
    partition: &ClusterPartition,
) -> Result<ThresholdReport> {
    if xi_scaling.len() != partition.node_count() {
        return Err(Error::Dimension("Ξ does not match the partition".into()));
    }
    let xi = DMatrix::from_diagonal(xi_scaling);
    let l0 = average.coupling_part();
    let numerator = lambda_min(&(&xi * &l0 + l0.transpose() * &xi));
    let mut denominators = Vec::with_capacity(partition.cluster_count());
    let mut thresholds = Vec::with_capacity(partition.cluster_count());
    for ell in 0..partition.cluster_count() {
        let members = partition.members(ell);
        let xi_l = DVector::from_iterator(members.len(), members.iter().map(|&i| xi_scaling[i]));
        let den = certificate(&xi_l, &average.unit_grounded_block(ell));
        if !(den > 0.0) {
            return Err(Error::Threshold {
                cluster: ell,
                denominator: den,
            });
        }
        denominators.push(den);
        thresholds.push((-numerator / den).max(0.0));
    }
    Ok(ThresholdReport {
        numerator,
        denominators,
        thresholds,
    })
}

/// Weyl interval for every eigenvalue of `H1 + H2` (ascending order):
/// `λ_i(H1) + λ_min(H2) ≤ λ_i(H1+H2) ≤ λ_i(H1) + λ_max(H2)`.
pub fn weyl_bounds(h1: &DMatrix<f64>, h2: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if h1.shape() != h2.shape() || !h1.is_square() {
        return Err(Error::Dimension("Weyl bounds need square matrices of equal size".into()));
    }
    for h in [h1, h2] {
        if !linalg::is_symmetric(h, 1e-12) {
            return Err(Error::InvalidValue("Weyl bounds need symmetric matrices".into()));
        }
    }
    let e1 = linalg::sym_eigenvalues(h1);
    let e2 = linalg::sym_eigenvalues(h2);
    let (lo, hi) = (e2[0], e2[e2.len() - 1]);
    Ok(e1.into_iter().map(|v| (v + lo, v + hi)).collect())
}
