//! Grid-coupled Riccati iteration, optimal cost, input recovery and the
//! second-moment spectral-radius diagnostic.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridLayout, GridModel};
use crate::linalg::{max_abs, min_eigenvalue, spectral_norm, symmetrize};
use crate::piecewise::PiecewiseMatrixFunction;
use crate::plant::JumpSystemMaps;
use crate::simulate::InitialSpec;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
/// Iterates larger than this (sup norm) are reported as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e150;
/// Number of leading iterate norms kept in a report.
pub const HISTORY_CAP: usize = 10_000;

/// `ℰ(Z)(φ) = Σ_j w_j(φ) Z_j`.
pub fn op_e(grid: &GridModel, z: &PiecewiseMatrixFunction, phi: &[f64]) -> Result<DMatrix<f64>> {
    if z.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} values for a grid of {} boxes",
            z.len(),
            grid.len()
        )));
    }
    let w = grid.weights_at(phi)?;
    let (r, c) = z.shape();
    let mut e = DMatrix::zeros(r, c);
    for (wj, zj) in w.iter().zip(&z.values) {
        if *wj != 0.0 {
            e += zj * *wj;
        }
    }
    Ok(e)
}

/// Jump-system data frozen at one grid center.
#[derive(Debug, Clone)]
struct CenterData {
    abar: DMatrix<f64>,
    b: DMatrix<f64>,
    r: DMatrix<f64>,
    m: DMatrix<f64>,
}

/// The finite map `Y ↦ ℛ(Y)` on `N`-tuples, evaluated at the grid centers.
#[derive(Debug, Clone)]
pub struct RiccatiOperator {
    layout: GridLayout,
    // (i, j) = w_j(c_i)
    weights: DMatrix<f64>,
    centers: Vec<CenterData>,
}

impl RiccatiOperator {
    pub fn new(maps: &JumpSystemMaps, grid: &GridModel) -> Result<Self> {
        let centers = grid
            .centers()
            .par_iter()
            .map(|c| {
                let jm = maps.evaluate(c)?;
                Ok(CenterData {
                    abar: jm.abar,
                    b: jm.b,
                    r: jm.r,
                    m: jm.m,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout: grid.layout(),
            weights: grid.weight_table().clone(),
            centers,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.centers.first().map_or(0, |c| c.abar.nrows())
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    /// `E_i = Σ_j w_j(c_i) Y_j` for every box.
    pub fn expectations(&self, y: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        (0..self.len())
            .map(|i| {
                let mut e = DMatrix::zeros(y[0].nrows(), y[0].ncols());
                for (j, yj) in y.iter().enumerate() {
                    let w = self.weights[(i, j)];
                    if w != 0.0 {
                        e += yj * w;
                    }
                }
                e
            })
            .collect()
    }

    fn v_factor(&self, i: usize, e: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let c = &self.centers[i];
        let v = symmetrize(&(&c.r + c.b.transpose() * e * &c.b));
        v.cholesky().ok_or_else(|| {
            Error::InternalConsistency(format!("𝒱 is not positive definite at box {i}"))
        })
    }

    /// One application of `ℛ`.
    pub fn apply(&self, y: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let e = self.expectations(y);
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let c = &self.centers[i];
                let chol = self.v_factor(i, &e[i])?;
                let eb = &e[i] * &c.b;
                let inner = &e[i] - &eb * chol.solve(&eb.transpose());
                Ok(symmetrize(&(&c.m + c.abar.transpose() * inner * &c.abar)))
            })
            .collect()
    }

    /// `K_i = −𝒱_i⁻¹ B_iᵀ ℰ(S)(c_i) Ā(c_i)`.
    pub fn gains(&self, s: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let e = self.expectations(s);
        (0..self.len())
            .map(|i| {
                let c = &self.centers[i];
                let chol = self.v_factor(i, &e[i])?;
                Ok(-chol.solve(&(c.b.transpose() * &e[i] * &c.abar)))
            })
            .collect()
    }

    /// `Ā(c_i) + B(c_i) K_i`.
    pub fn closed_loop(&self, k: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        self.centers
            .iter()
            .zip(k)
            .map(|(c, ki)| &c.abar + &c.b * ki)
            .collect()
    }
}

/// Result of the power iteration on the second-moment operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralRadius {
    pub estimate: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Relative eigen-residual `‖𝐿v − λv‖/|λ|` (`‖v‖ = 1`) at which the power iteration stops.
pub const SURROGATE_TOL: f64 = 1e-12;
pub const SURROGATE_MAX_ITERS: usize = 200_000;

/// Dominant eigenvalue of `(𝐿V)_i = Σ_j w_i(c_j) A_j V_j A_jᵀ` by power
/// iteration from `V_j = I`. `weights` is the table `(j, i) = w_i(c_j)`.
pub fn spectral_radius_surrogate(a_cl: &[DMatrix<f64>], weights: &DMatrix<f64>) -> Result<SpectralRadius> {
    let n_boxes = a_cl.len();
    if weights.shape() != (n_boxes, n_boxes) || n_boxes == 0 {
        return Err(Error::Dimension(format!(
            "{} closed-loop matrices with a {:?} weight table",
            n_boxes,
            weights.shape()
        )));
    }
    let n = a_cl[0].nrows();
    if a_cl.iter().any(|a| a.shape() != (n, n)) {
        return Err(Error::Dimension("closed-loop matrices must be square and equal-sized".into()));
    }
    let apply = |v: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
        let mapped: Vec<DMatrix<f64>> = a_cl.iter().zip(v).map(|(a, vj)| a * vj * a.transpose()).collect();
        (0..n_boxes)
            .map(|i| {
                let mut out = DMatrix::zeros(n, n);
                for (j, mj) in mapped.iter().enumerate() {
                    let w = weights[(j, i)];
                    if w != 0.0 {
                        out += mj * w;
                    }
                }
                out
            })
            .collect()
    };
    let inner = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| -> f64 {
        a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
    };

    let mut v: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n); n_boxes];
    let norm0 = inner(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm0);
    let mut prev = f64::NAN;
    for it in 1..=SURROGATE_MAX_ITERS {
        let lv = apply(&v);
        let est = inner(&v, &lv);
        let norm = inner(&lv, &lv).sqrt();
        if norm == 0.0 || est.abs() < f64::MIN_POSITIVE {
            return Ok(SpectralRadius {
                estimate: 0.0,
                converged: true,
                iterations: it,
            });
        }
        let residual = lv
            .iter()
            .zip(&v)
            .map(|(l, x)| (l - x * est).norm_squared())
            .sum::<f64>()
            .sqrt();
        if residual <= SURROGATE_TOL * est.abs() {
            return Ok(SpectralRadius {
                estimate: est,
                converged: true,
                iterations: it,
            });
        }
        prev = est;
        v = lv.into_iter().map(|x| x / norm).collect();
    }
    Ok(SpectralRadius {
        estimate: prev,
        converged: false,
        iterations: SURROGATE_MAX_ITERS,
    })
}

/// Surrogate of the closed loop `Ā + B K` on `grid`.
pub fn closed_loop_surrogate(maps: &JumpSystemMaps, grid: &GridModel, gain: &PiecewiseMatrixFunction) -> Result<SpectralRadius> {
    let op = RiccatiOperator::new(maps, grid)?;
    check_layout(&op.layout, &gain.layout)?;
    spectral_radius_surrogate(&op.closed_loop(&gain.values), grid.weight_table())
}

fn check_layout(expected: &GridLayout, got: &GridLayout) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "grid mismatch: expected r = {} (order {}), got r = {} (order {})",
            expected.splits_per_axis, expected.order, got.splits_per_axis, got.order
        )));
    }
    Ok(())
}

/// Settings of [`riccati_iterate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RiccatiSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiccatiStatus {
    Converged,
    /// The iteration cap was reached with finite iterates.
    NotConverged,
    /// Iterates left every bound; no stabilizing solution on this grid.
    Diverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiccatiReport {
    pub status: RiccatiStatus,
    pub iterations: usize,
    /// `max_i ‖Y_i′ − Y_i‖₂` at the last step.
    pub delta: f64,
    pub tol: f64,
    /// Last iterate `S_i` (the solution when converged).
    pub solution: PiecewiseMatrixFunction,
    /// `K_i`, present when converged.
    pub gain: Option<PiecewiseMatrixFunction>,
    pub surrogate: Option<SpectralRadius>,
    /// `max_i ‖Y_i‖₂` of the first iterates, starting with the initial value.
    pub history: Vec<f64>,
}

impl RiccatiReport {
    pub fn converged(&self) -> bool {
        self.status == RiccatiStatus::Converged
    }

    /// Human-readable diagnostic for non-converged runs.
    pub fn diagnostic(&self) -> String {
        match self.status {
            RiccatiStatus::Converged => format!(
                "converged after {} iterations (delta {:.3e})",
                self.iterations, self.delta
            ),
            RiccatiStatus::NotConverged => format!(
                "not converged after {} iterations: delta {:.3e} > tol {:.1e}",
                self.iterations, self.delta, self.tol
            ),
            RiccatiStatus::Diverged => format!(
                "diverged after {} iterations: sup norm {:.3e} (the pair is likely not stabilizable on this grid)",
                self.iterations,
                self.history.last().copied().unwrap_or(f64::INFINITY)
            ),
        }
    }

    /// Whether the recorded iterate norms never decrease.
    pub fn history_nondecreasing(&self) -> bool {
        self.history.windows(2).all(|w| w[1] >= w[0])
    }
}

fn sup_norm(y: &[DMatrix<f64>]) -> f64 {
    y.iter().map(spectral_norm).fold(0.0, f64::max)
}

/// Backward iteration `Y ← ℛ(Y)` from `init` (zero when `None`).
pub fn riccati_iterate(
    maps: &JumpSystemMaps,
    grid: &GridModel,
    init: Option<&PiecewiseMatrixFunction>,
    settings: RiccatiSettings,
) -> Result<RiccatiReport> {
    let op = RiccatiOperator::new(maps, grid)?;
    riccati_iterate_with(&op, grid.weight_table(), init, settings)
}

/// [`riccati_iterate`] on a prepared operator.
pub fn riccati_iterate_with(
    op: &RiccatiOperator,
    weights: &DMatrix<f64>,
    init: Option<&PiecewiseMatrixFunction>,
    settings: RiccatiSettings,
) -> Result<RiccatiReport> {
    if !(settings.tol > 0.0) || settings.max_iters == 0 {
        return Err(Error::Precondition("Riccati tol must be positive and max_iters at least 1".into()));
    }
    let n = op.state_dim();
    let mut y = match init {
        Some(xi) => {
            check_layout(&op.layout, &xi.layout)?;
            if xi.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "initial value is {:?}, expected {n}×{n}",
                    xi.shape()
                )));
            }
            for (i, v) in xi.values.iter().enumerate() {
                let scale = max_abs(v).max(1.0);
                if max_abs(&(v - v.transpose())) > 1e-9 * scale || min_eigenvalue(v) < -1e-9 * scale {
                    return Err(Error::Precondition(format!(
                        "initial value at box {i} is not symmetric positive semidefinite"
                    )));
                }
            }
            xi.values.clone()
        }
        None => vec![DMatrix::zeros(n, n); op.len()],
    };
    let mut history = vec![sup_norm(&y)];
    let mut delta = f64::INFINITY;
    let mut status = RiccatiStatus::NotConverged;
    let mut iterations = 0;
    while iterations < settings.max_iters {
        let next = op.apply(&y)?;
        iterations += 1;
        delta = y
            .iter()
            .zip(&next)
            .map(|(a, b)| spectral_norm(&(b - a)))
            .fold(0.0, f64::max);
        let norm = sup_norm(&next);
        if history.len() < HISTORY_CAP {
            history.push(norm);
        }
        y = next;
        if !norm.is_finite() || norm > DIVERGENCE_BOUND {
            status = RiccatiStatus::Diverged;
            break;
        }
        if delta < settings.tol {
            status = RiccatiStatus::Converged;
            break;
        }
    }

    let solution = PiecewiseMatrixFunction::new(op.layout.clone(), y)?;
    let (gain, surrogate) = if status == RiccatiStatus::Converged {
        let k = op.gains(&solution.values)?;
        let rho = spectral_radius_surrogate(&op.closed_loop(&k), weights)?;
        (Some(PiecewiseMatrixFunction::new(op.layout.clone(), k)?), Some(rho))
    } else {
        (None, None)
    };
    Ok(RiccatiReport {
        status,
        iterations,
        delta,
        tol: settings.tol,
        solution,
        gain,
        surrogate,
        history,
    })
}

/// `E(ξ₀ᵀ S(φ₀) ξ₀)` in closed form for independent `ξ₀` and `φ₀`; refuses
/// non-converged reports.
pub fn optimal_cost(report: &RiccatiReport, initial: &InitialSpec) -> Result<f64> {
    if !report.converged() {
        return Err(Error::Precondition(format!(
            "optimal cost needs a converged Riccati solution; {}",
            report.diagnostic()
        )));
    }
    expected_cost(&report.solution, initial)
}

/// `Σ_i P(φ₀ ∈ ℬ_i) tr(S_i E(ξ₀ξ₀ᵀ))`.
pub fn expected_cost(s: &PiecewiseMatrixFunction, initial: &InitialSpec) -> Result<f64> {
    let (n, _) = s.shape();
    let second = initial.state.second_moment(n)?;
    let probs = initial.delays.box_probabilities(&s.layout)?;
    Ok(probs
        .iter()
        .zip(&s.values)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, si)| p * si.dot(&second))
        .sum::<f64>()
        .max(0.0))
}

/// `K_orig(c_i) = K_i − R(c_i)⁻¹ W(c_i)ᵀ`, the gain acting on the original input.
pub fn recover_original_input(maps: &JumpSystemMaps, gain: &PiecewiseMatrixFunction) -> Result<PiecewiseMatrixFunction> {
    let values = (0..gain.len())
        .into_par_iter()
        .map(|i| {
            let c = gain.layout.center(i);
            let jm = maps.evaluate(&c)?;
            let k = gain.get(i);
            if k.shape() != (jm.b.ncols(), jm.a.nrows()) {
                return Err(Error::Dimension(format!(
                    "gain is {:?}, expected {}×{}",
                    k.shape(),
                    jm.b.ncols(),
                    jm.a.nrows()
                )));
            }
            Ok(k - jm.cross_gain()?)
        })
        .collect::<Result<Vec<_>>>()?;
    PiecewiseMatrixFunction::new(gain.layout.clone(), values)
}

/// `u = K ξ` for a piecewise gain, selecting the box of `φ`.
pub fn apply_gain(gain: &PiecewiseMatrixFunction, phi: &[f64], xi: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(gain.lookup(phi)? * xi)
}

/// Discrete-time LQR gain `K` (`u = Kx`) for `x⁺ = Ax + Bu` with stage cost
/// `xᵀQx + uᵀRu`, by value iteration from zero.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut p = DMatrix::zeros(n, n);
    for _ in 0..DEFAULT_MAX_ITERS {
        let v = symmetrize(&(r + b.transpose() * &p * b));
        let chol = v.cholesky().ok_or_else(|| Error::Singular("R + BᵀPB".into()))?;
        let pb = &p * b;
        let next = symmetrize(&(q + a.transpose() * (&p - &pb * chol.solve(&pb.transpose())) * a));
        let delta = spectral_norm(&(&next - &p));
        p = next;
        if !delta.is_finite() || spectral_norm(&p) > DIVERGENCE_BOUND {
            break;
        }
        if delta <= DEFAULT_TOL * spectral_norm(&p).max(1.0) {
            let v = symmetrize(&(r + b.transpose() * &p * b));
            let chol = v.cholesky().ok_or_else(|| Error::Singular("R + BᵀPB".into()))?;
            return Ok(-chol.solve(&(b.transpose() * &p * a)));
        }
    }
    Err(Error::Precondition("discrete LQR iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::kernel::{DelayVector, DiracKernel, UniformKernel};
    use crate::plant::Plant;
    use crate::simulate::{DelayInit, StateInit};
    use std::sync::Arc;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        crate::linalg::from_rows(&v).unwrap()
    }

    fn scalar_plant(a: f64, b: f64, q: f64) -> Plant {
        Plant::new(m(&[&[a]]), m(&[&[b]]), m(&[&[q]]), m(&[&[1.0]]), 1.0).unwrap()
    }

    fn dirac_setup(plant: Plant) -> (JumpSystemMaps, GridModel) {
        let maps = JumpSystemMaps::new(plant, 0.0, 0.0).unwrap();
        let k = DiracKernel::new(DelayVector::new(vec![0.0]), 0.0, 0.0).unwrap();
        (maps, build_grid(Arc::new(k), 1).unwrap())
    }

    #[test]
    fn op_e_constant_and_uniform() {
        let k = UniformKernel::new(1, 0.0, 0.1).unwrap();
        let grid = build_grid(Arc::new(k), 2).unwrap();
        let z = PiecewiseMatrixFunction::new(
            grid.layout(),
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 3.0],
        )
        .unwrap();
        let e = op_e(&grid, &z, &[0.03]).unwrap();
        assert!((e - DMatrix::identity(2, 2) * 2.0).abs().max() < 1e-12);
        let c = PiecewiseMatrixFunction::constant(grid.layout(), DMatrix::identity(2, 2) * 5.0);
        let e = op_e(&grid, &c, &[0.08]).unwrap();
        assert!((e - DMatrix::identity(2, 2) * 5.0).abs().max() < 1e-12);
    }

    #[test]
    fn op_e_dirac_selects_box() {
        let k = DiracKernel::new(DelayVector::new(vec![0.07]), 0.0, 0.1).unwrap();
        let grid = build_grid(Arc::new(k), 2).unwrap();
        let z = PiecewiseMatrixFunction::new(
            grid.layout(),
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 4.0)],
        )
        .unwrap();
        assert_eq!(op_e(&grid, &z, &[0.01]).unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn zero_weight_stable_plant_gives_zero() {
        let (maps, grid) = dirac_setup(scalar_plant(-1.0, 1.0, 0.0));
        let rep = riccati_iterate(&maps, &grid, None, RiccatiSettings::default()).unwrap();
        assert!(rep.converged());
        assert!(max_abs(rep.solution.get(0)) < 1e-12);
        let g = rep.gain.unwrap();
        assert!(max_abs(g.get(0)) < 1e-12);
    }

    #[test]
    fn uncontrollable_unstable_diverges() {
        let (maps, grid) = dirac_setup(scalar_plant(1.2f64.ln(), 0.0, 1.0));
        let rep = riccati_iterate(&maps, &grid, None, RiccatiSettings::default()).unwrap();
        assert_eq!(rep.status, RiccatiStatus::Diverged);
        assert!(rep.history_nondecreasing());
        assert!(rep.gain.is_none());
        let init = InitialSpec::point(vec![1.0], vec![0.0], vec![0.0]);
        assert!(optimal_cost(&rep, &init).is_err());
    }

    #[test]
    fn surrogate_constant_scalar() {
        let k = UniformKernel::new(1, 0.0, 0.1).unwrap();
        let grid = build_grid(Arc::new(k), 3).unwrap();
        for a in [0.0, 0.3, 0.9, 1.1] {
            let acl = vec![DMatrix::from_element(1, 1, a); 3];
            let rho = spectral_radius_surrogate(&acl, grid.weight_table()).unwrap();
            assert!(rho.converged);
            assert!((rho.estimate - a * a).abs() < 1e-9, "{a}: {rho:?}");
        }
    }

    #[test]
    fn surrogate_matches_dense_operator() {
        let w = m(&[&[0.7, 0.3], &[0.2, 0.8]]);
        let acl = vec![m(&[&[0.5, 0.4], &[-0.3, 0.8]]), m(&[&[0.9, 0.0], &[0.6, -0.2]])];
        let rho = spectral_radius_surrogate(&acl, &w).unwrap();
        // vec(A V Aᵀ) = (A ⊗ A) vec(V)
        let mut dense = DMatrix::zeros(8, 8);
        for i in 0..2 {
            for j in 0..2 {
                let kron = acl[j].kronecker(&acl[j]) * w[(j, i)];
                dense.view_mut((4 * i, 4 * j), (4, 4)).copy_from(&kron);
            }
        }
        let top = dense
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!((rho.estimate - top).abs() < 1e-10, "{rho:?} vs {top}");
    }

    #[test]
    fn optimal_cost_point_and_uniform() {
        let layout = GridLayout {
            order: 1,
            splits_per_axis: 2,
            split_points: vec![0.0, 0.05, 0.1],
        };
        let s = PiecewiseMatrixFunction::new(
            layout,
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 3.0],
        )
        .unwrap();
        let rep = RiccatiReport {
            status: RiccatiStatus::Converged,
            iterations: 1,
            delta: 0.0,
            tol: 1e-10,
            solution: s,
            gain: None,
            surrogate: None,
            history: vec![],
        };
        let point = InitialSpec::point(vec![1.0], vec![2.0], vec![0.07]);
        assert!((optimal_cost(&rep, &point).unwrap() - 15.0).abs() < 1e-12);
        let zero = InitialSpec::point(vec![0.0], vec![0.0], vec![0.07]);
        assert_eq!(optimal_cost(&rep, &zero).unwrap(), 0.0);
        let unif = InitialSpec {
            state: StateInit::Point {
                x0: vec![1.0],
                u_prev: vec![0.0],
            },
            delays: DelayInit::Uniform,
        };
        assert!((optimal_cost(&rep, &unif).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_from_zero() {
        let k = UniformKernel::new(1, 0.0, 0.4).unwrap();
        let plant = Plant::new(
            m(&[&[0.3, 1.0], &[-1.0, 0.2]]),
            m(&[&[0.0], &[1.0]]),
            DMatrix::identity(2, 2),
            m(&[&[0.5]]),
            0.5,
        )
        .unwrap();
        let maps = JumpSystemMaps::new(plant, 0.0, 0.4).unwrap();
        let grid = build_grid(Arc::new(k), 3).unwrap();
        let op = RiccatiOperator::new(&maps, &grid).unwrap();
        let mut y = vec![DMatrix::zeros(3, 3); 3];
        for _ in 0..50 {
            let next = op.apply(&y).unwrap();
            for (a, b) in y.iter().zip(&next) {
                assert!(min_eigenvalue(&(b - a)) > -1e-9);
            }
            y = next;
        }
        let rep = riccati_iterate(&maps, &grid, None, RiccatiSettings::default()).unwrap();
        assert!(rep.converged());
        let again = op.apply(&rep.solution.values).unwrap();
        let resid = again
            .iter()
            .zip(&rep.solution.values)
            .map(|(a, b)| spectral_norm(&(a - b)))
            .fold(0.0, f64::max);
        assert!(resid <= 10.0 * rep.tol);
        assert!(rep.surrogate.unwrap().estimate < 1.0);
    }

    #[test]
    fn recover_with_zero_cross_term() {
        let k = UniformKernel::new(1, 0.0, 0.1).unwrap();
        // a_c = 0 with b_c = 0 gives W = 0
        let plant = Plant::new(m(&[&[0.0]]), m(&[&[0.0]]), m(&[&[1.0]]), m(&[&[1.0]]), 1.0).unwrap();
        let maps = JumpSystemMaps::new(plant, 0.0, 0.1).unwrap();
        let grid = build_grid(Arc::new(k), 2).unwrap();
        let g = PiecewiseMatrixFunction::constant(grid.layout(), m(&[&[0.3, -0.1]]));
        let orig = recover_original_input(&maps, &g).unwrap();
        assert!(orig.max_abs_diff(&g) < 1e-15);
    }
}
