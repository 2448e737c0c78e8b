//! Exact discretization of the sampled-data plant and of its continuous-time
//! quadratic cost into the delay-parameterized matrices of the jump system.
//!
//! Within one sampling period `[kh, (k+1)h)` the plant sees the previous input
//! `u_{k-1}` until the delayed measurement arrives at `kh + τ_k` and the new
//! input `u_k` afterwards. With the lifted state `ξ_k = (x(kh), u_{k-1})` this
//! gives
//!
//! ```text
//! ξ_{k+1} = A(φ_k) ξ_k + B(φ_k) u_k
//! A(φ) = [[A_d, B_d - Γ(τ)], [0, 0]],  B(φ) = [[Γ(τ)], [I]]
//! ```
//!
//! and a per-period cost that is the quadratic form of `[[Q, W], [Wᵀ, R]]`
//! in `(ξ_k, u_k)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, expm, min_eigenvalue, symmetrize};
use crate::quadrature::GaussLegendre;

/// Tolerance applied to eigenvalue-based positivity checks.
pub const PSD_TOL: f64 = 1e-10;

/// Continuous-time plant with quadratic cost weights and sampling period.
#[derive(Debug, Clone, Serialize)]
pub struct Plant {
    #[serde(with = "crate::io::matrix")]
    a_c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    b_c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    q_c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    r_c: DMatrix<f64>,
    h: f64,
}

impl Plant {
    /// Validates shapes, `Q_c ⪰ 0`, `R_c ≻ 0` and `h > 0`.
    pub fn new(
        a_c: DMatrix<f64>,
        b_c: DMatrix<f64>,
        q_c: DMatrix<f64>,
        r_c: DMatrix<f64>,
        h: f64,
    ) -> Result<Self> {
        let n = a_c.nrows();
        let m = b_c.ncols();
        if !a_c.is_square() || n == 0 {
            return Err(Error::Dimension(format!(
                "a_c must be a nonempty square matrix, got {:?}",
                a_c.shape()
            )));
        }
        if b_c.nrows() != n || m == 0 {
            return Err(Error::Dimension(format!(
                "b_c must be {n}×m with m ≥ 1, got {:?}",
                b_c.shape()
            )));
        }
        if q_c.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "q_c must be {n}×{n}, got {:?}",
                q_c.shape()
            )));
        }
        if r_c.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "r_c must be {m}×{m}, got {:?}",
                r_c.shape()
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Domain {
                what: "h",
                value: h,
                range: "(0, ∞)".into(),
            });
        }
        let all_finite = [&a_c, &b_c, &q_c, &r_c]
            .iter()
            .all(|mat| mat.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::Config("plant matrices must be finite".into()));
        }
        check_symmetric(&q_c, "q_c")?;
        check_symmetric(&r_c, "r_c")?;
        let q_min = min_eigenvalue(&q_c);
        if q_min < -PSD_TOL {
            return Err(Error::NotPositive {
                what: "q_c".into(),
                kind: "semi",
                min_eig: q_min,
                tol: PSD_TOL,
            });
        }
        if symmetrize(&r_c).cholesky().is_none() || min_eigenvalue(&r_c) <= 0.0 {
            return Err(Error::NotPositive {
                what: "r_c".into(),
                kind: "",
                min_eig: min_eigenvalue(&r_c),
                tol: 0.0,
            });
        }
        Ok(Self {
            a_c,
            b_c,
            q_c: symmetrize(&q_c),
            r_c: symmetrize(&r_c),
            h,
        })
    }

    pub fn a_c(&self) -> &DMatrix<f64> {
        &self.a_c
    }
    pub fn b_c(&self) -> &DMatrix<f64> {
        &self.b_c
    }
    pub fn q_c(&self) -> &DMatrix<f64> {
        &self.q_c
    }
    pub fn r_c(&self) -> &DMatrix<f64> {
        &self.r_c
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    /// Plant state dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a_c.nrows()
    }
    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b_c.ncols()
    }
    /// Lifted state dimension `n + m`.
    pub fn lifted_dim(&self) -> usize {
        self.state_dim() + self.input_dim()
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        if tau.is_finite() && tau >= 0.0 && tau < self.h {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "tau",
                value: tau,
                range: format!("[0, {})", self.h),
            })
        }
    }

    /// `[[A_c, B_c], [0, 0]]`, the generator of the state under a held input.
    fn hold_generator(&self) -> DMatrix<f64> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut g = DMatrix::zeros(n + m, n + m);
        g.view_mut((0, 0), (n, n)).copy_from(&self.a_c);
        g.view_mut((0, n), (n, m)).copy_from(&self.b_c);
        g
    }

    /// `(e^{A_c θ}, ∫₀^θ e^{A_c s} B_c ds)` from one block exponential.
    pub fn propagators(&self, theta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.state_dim(), self.input_dim());
        let e = expm(&(self.hold_generator() * theta));
        (
            e.view((0, 0), (n, n)).into_owned(),
            e.view((0, n), (n, m)).into_owned(),
        )
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = linalg::max_abs(m).max(1.0);
    if linalg::max_abs_diff(m, &m.transpose()) > 1e-9 * scale {
        return Err(Error::Config(format!("{what} must be symmetric")));
    }
    Ok(())
}

/// The intersample maps `α(θ) = e^{A_c θ}`, `β(θ) = ∫₀^θ e^{A_c s}B_c ds` and
/// `γ(τ, θ) = ∫₀^{θ-τ} e^{A_c s}B_c ds`.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedStateMaps<'a> {
    plant: &'a Plant,
}

impl<'a> AugmentedStateMaps<'a> {
    pub fn new(plant: &'a Plant) -> Self {
        Self { plant }
    }

    pub fn alpha(&self, theta: f64) -> DMatrix<f64> {
        expm(&(self.plant.a_c() * theta))
    }

    pub fn beta(&self, theta: f64) -> DMatrix<f64> {
        self.plant.propagators(theta).1
    }

    pub fn gamma(&self, tau: f64, theta: f64) -> DMatrix<f64> {
        self.beta(theta - tau)
    }
}

/// `(A_d, B_d, Γ(τ))` of a sampled-data plant with sensor delay `τ`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

/// `A_d = e^{A_c h}`, `B_d = ∫₀^h e^{A_c s}B_c ds`, `Γ(τ) = ∫₀^{h-τ} e^{A_c s}B_c ds`.
pub fn discretize_dynamics(plant: &Plant, tau: f64) -> Result<Discretization> {
    plant.check_tau(tau)?;
    let (a_d, b_d) = plant.propagators(plant.h());
    let (_, gamma) = plant.propagators(plant.h() - tau);
    Ok(Discretization { a_d, b_d, gamma })
}

fn jump_matrices_from(
    plant: &Plant,
    a_d: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(a_d);
    a.view_mut((0, n), (n, m)).copy_from(&(b_d - gamma));
    let mut b = DMatrix::zeros(n + m, m);
    b.view_mut((0, 0), (n, m)).copy_from(gamma);
    b.view_mut((n, 0), (m, m)).fill_with_identity();
    (a, b)
}

/// `(A(φ), B(φ))` of the lifted jump system; only the first entry of `phi` is used.
pub fn assemble_jump_matrices(plant: &Plant, phi: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let tau = first_entry(phi)?;
    let d = discretize_dynamics(plant, tau)?;
    Ok(jump_matrices_from(plant, &d.a_d, &d.b_d, &d.gamma))
}

fn first_entry(phi: &[f64]) -> Result<f64> {
    phi.first()
        .copied()
        .ok_or_else(|| Error::Dimension("delay vector must be nonempty".into()))
}

/// How the cost integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum CostIntegration {
    /// Block-exponential (Van Loan) evaluation; the production path.
    #[default]
    VanLoan,
    /// Composite Gauss–Legendre quadrature of the integral formulas with the
    /// given number of nodes per smooth piece; used for cross-checks.
    GaussLegendre { nodes: usize },
}

/// Per-period cost blocks: `𝒥_k = [ξ; u]ᵀ [[Q, W], [Wᵀ, R]] [ξ; u]`.
#[derive(Debug, Clone)]
pub struct CostBlocks {
    pub q: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostBlocks {
    /// The joint weighting matrix `[[Q, W], [Wᵀ, R]]`.
    pub fn joint(&self) -> DMatrix<f64> {
        let k = self.q.nrows();
        let m = self.r.nrows();
        let mut j = DMatrix::zeros(k + m, k + m);
        j.view_mut((0, 0), (k, k)).copy_from(&self.q);
        j.view_mut((0, k), (k, m)).copy_from(&self.w);
        j.view_mut((k, 0), (m, k)).copy_from(&self.w.transpose());
        j.view_mut((k, k), (m, m)).copy_from(&self.r);
        j
    }

    /// Evaluates the quadratic form at `(ξ, u)`.
    pub fn quadratic_form(&self, xi: &nalgebra::DVector<f64>, u: &nalgebra::DVector<f64>) -> f64 {
        let wu = &self.w * u;
        xi.dot(&(&self.q * xi)) + 2.0 * xi.dot(&wu) + u.dot(&(&self.r * u))
    }
}

/// Evaluates `Q(φ)`, `W(φ)`, `R(φ)` for the delay `τ = φ[0]`.
pub fn assemble_cost_blocks(plant: &Plant, phi: &[f64], method: CostIntegration) -> Result<CostBlocks> {
    let tau = first_entry(phi)?;
    plant.check_tau(tau)?;
    let blocks = match method {
        CostIntegration::VanLoan => cost_blocks_van_loan(plant, tau),
        CostIntegration::GaussLegendre { nodes } => {
            if nodes == 0 {
                return Err(Error::Precondition("quadrature needs at least one node".into()));
            }
            cost_blocks_quadrature(plant, tau, nodes)
        }
    };
    let r_min = min_eigenvalue(&blocks.r);
    if r_min < -PSD_TOL || blocks.r.clone().cholesky().is_none() {
        return Err(Error::InternalConsistency(format!(
            "R(φ) at τ = {tau} is not positive definite (min eigenvalue {r_min:e}); \
             the plant specification is broken"
        )));
    }
    Ok(blocks)
}

/// `(∫₀^t e^{Fᵀs} Qz e^{Fs} ds, e^{Ft})` from the exponential of
/// `[[-Fᵀ, Qz], [0, F]] t`.
fn van_loan_gramian(f: &DMatrix<f64>, qz: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = f.nrows();
    let mut c = DMatrix::zeros(2 * k, 2 * k);
    c.view_mut((0, 0), (k, k)).copy_from(&(-f.transpose()));
    c.view_mut((0, k), (k, k)).copy_from(qz);
    c.view_mut((k, k), (k, k)).copy_from(f);
    let e = expm(&(c * t));
    let e22 = e.view((k, k), (k, k)).into_owned();
    let e12 = e.view((0, k), (k, k)).into_owned();
    (e22.transpose() * e12, e22)
}

// Stacked state z = (x, u_old, u_new). On [0, τ) the plant is driven by u_old,
// on [τ, h) by u_new; each segment's running cost is a Van Loan gramian.
fn cost_blocks_van_loan(plant: &Plant, tau: f64) -> CostBlocks {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let k = n + 2 * m;
    let mut f_old = DMatrix::zeros(k, k);
    f_old.view_mut((0, 0), (n, n)).copy_from(plant.a_c());
    f_old.view_mut((0, n), (n, m)).copy_from(plant.b_c());
    let mut f_new = DMatrix::zeros(k, k);
    f_new.view_mut((0, 0), (n, n)).copy_from(plant.a_c());
    f_new.view_mut((0, n + m), (n, m)).copy_from(plant.b_c());

    let mut qz_old = DMatrix::zeros(k, k);
    qz_old.view_mut((0, 0), (n, n)).copy_from(plant.q_c());
    qz_old.view_mut((n, n), (m, m)).copy_from(plant.r_c());
    let mut qz_new = DMatrix::zeros(k, k);
    qz_new.view_mut((0, 0), (n, n)).copy_from(plant.q_c());
    qz_new.view_mut((n + m, n + m), (m, m)).copy_from(plant.r_c());

    let (g_old, phi_old) = van_loan_gramian(&f_old, &qz_old, tau);
    let (g_new, _) = van_loan_gramian(&f_new, &qz_new, plant.h() - tau);
    let p = symmetrize(&(g_old + phi_old.transpose() * g_new * phi_old));
    split_joint(&p, n + m, m)
}

fn split_joint(p: &DMatrix<f64>, lifted: usize, m: usize) -> CostBlocks {
    CostBlocks {
        q: p.view((0, 0), (lifted, lifted)).into_owned(),
        w: p.view((0, lifted), (lifted, m)).into_owned(),
        r: p.view((lifted, lifted), (m, m)).into_owned(),
    }
}

// Direct quadrature of the integral formulas for Q₁₁, Q₁₂, Q₂₂, W and R,
// split at θ = τ so that every integrand is smooth on its interval.
fn cost_blocks_quadrature(plant: &Plant, tau: f64, nodes: usize) -> CostBlocks {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let h = plant.h();
    let qc = plant.q_c();
    let maps = AugmentedStateMaps::new(plant);
    let gl = GaussLegendre::new(nodes);

    let mut q11 = DMatrix::zeros(n, n);
    let mut q12 = DMatrix::zeros(n, m);
    let mut q22 = plant.r_c() * tau;
    let mut w1 = DMatrix::zeros(n, m);
    let mut w2 = DMatrix::zeros(m, m);
    let mut r = plant.r_c() * (h - tau);

    let mut full_range = |a: f64, b: f64| {
        for (theta, wt) in gl.on_interval(a, b) {
            let (alpha, beta) = plant.propagators(theta);
            let qa = qc * &alpha;
            let qb = qc * &beta;
            q11 += alpha.transpose() * &qa * wt;
            q12 += alpha.transpose() * &qb * wt;
            q22 += beta.transpose() * &qb * wt;
        }
    };
    // [0, h] split at τ keeps the node layout comparable with the delayed pieces.
    if tau > 0.0 {
        full_range(0.0, tau);
    }
    full_range(tau, h);

    for (theta, wt) in gl.on_interval(tau, h) {
        let alpha = maps.alpha(theta);
        let beta = maps.beta(theta);
        let gamma = maps.gamma(tau, theta);
        let qg = qc * &gamma;
        let gqg = gamma.transpose() * &qg;
        let aqg = alpha.transpose() * &qg;
        let bqg = beta.transpose() * &qg;
        q12 -= &aqg * wt;
        q22 += &gqg * wt;
        q22 -= (&bqg + bqg.transpose()) * wt;
        w1 += &aqg * wt;
        w2 += (&bqg - &gqg) * wt;
        r += &gqg * wt;
    }

    let mut q = DMatrix::zeros(n + m, n + m);
    q.view_mut((0, 0), (n, n)).copy_from(&q11);
    q.view_mut((0, n), (n, m)).copy_from(&q12);
    q.view_mut((n, 0), (m, n)).copy_from(&q12.transpose());
    q.view_mut((n, n), (m, m)).copy_from(&q22);
    let mut w = DMatrix::zeros(n + m, m);
    w.view_mut((0, 0), (n, m)).copy_from(&w1);
    w.view_mut((n, 0), (m, m)).copy_from(&w2);
    CostBlocks {
        q: symmetrize(&q),
        w,
        r: symmetrize(&r),
    }
}

/// `Ā(φ)` and `M(φ) = Q − W R⁻¹ Wᵀ` with the minimum eigenvalue of `M`
/// (before any clamping) for PSD verification.
#[derive(Debug, Clone)]
pub struct CrossTermFree {
    pub abar: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub m_min_eig: f64,
}

/// Everything the synthesis pipeline needs at one delay value.
#[derive(Debug, Clone)]
pub struct JumpMatrices {
    pub tau: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub abar: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub m_min_eig: f64,
}

impl JumpMatrices {
    /// `R(φ)⁻¹ W(φ)ᵀ`, the state feedback absorbed by the input substitution.
    pub fn cross_gain(&self) -> Result<DMatrix<f64>> {
        linalg::spd_solve(&self.r, &self.w.transpose(), "R(φ)")
    }
}

/// Evaluators of every delay-dependent matrix of the jump system.
///
/// Immutable after construction; every evaluator is a pure function of `φ`.
#[derive(Debug, Clone)]
pub struct JumpSystemMaps {
    plant: Plant,
    tau_min: f64,
    tau_max: f64,
    a_d: DMatrix<f64>,
    b_d: DMatrix<f64>,
    method: CostIntegration,
}

impl JumpSystemMaps {
    /// Binds a plant to its admissible delay interval `[tau_min, tau_max] ⊂ [0, h)`.
    pub fn new(plant: Plant, tau_min: f64, tau_max: f64) -> Result<Self> {
        if !(tau_min >= 0.0 && tau_min <= tau_max) {
            return Err(Error::Domain {
                what: "tau_min",
                value: tau_min,
                range: format!("[0, tau_max = {tau_max}]"),
            });
        }
        if tau_max >= plant.h() {
            return Err(Error::Domain {
                what: "tau_max",
                value: tau_max,
                range: format!("[tau_min, h = {})", plant.h()),
            });
        }
        let (a_d, b_d) = plant.propagators(plant.h());
        Ok(Self {
            plant,
            tau_min,
            tau_max,
            a_d,
            b_d,
            method: CostIntegration::VanLoan,
        })
    }

    /// Switches the cost-integral evaluator.
    pub fn with_cost_integration(mut self, method: CostIntegration) -> Self {
        self.method = method;
        self
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }
    pub fn tau_bounds(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }
    pub fn a_d(&self) -> &DMatrix<f64> {
        &self.a_d
    }
    pub fn b_d(&self) -> &DMatrix<f64> {
        &self.b_d
    }

    fn tau_of(&self, phi: &[f64]) -> Result<f64> {
        let tau = first_entry(phi)?;
        let slack = 1e-12 * self.plant.h();
        if !(tau >= self.tau_min - slack && tau <= self.tau_max + slack) {
            return Err(Error::Domain {
                what: "tau",
                value: tau,
                range: format!("[{}, {}]", self.tau_min, self.tau_max),
            });
        }
        Ok(tau.clamp(self.tau_min, self.tau_max))
    }

    pub fn a_of(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.dynamics(phi)?.0)
    }

    pub fn b_of(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.dynamics(phi)?.1)
    }

    /// `(A(φ), B(φ))` reusing the cached `A_d`, `B_d`.
    pub fn dynamics(&self, phi: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let tau = self.tau_of(phi)?;
        let (_, gamma) = self.plant.propagators(self.plant.h() - tau);
        Ok(jump_matrices_from(&self.plant, &self.a_d, &self.b_d, &gamma))
    }

    pub fn cost_blocks(&self, phi: &[f64]) -> Result<CostBlocks> {
        let tau = self.tau_of(phi)?;
        assemble_cost_blocks(&self.plant, &[tau], self.method)
    }

    pub fn q_of(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.cost_blocks(phi)?.q)
    }
    pub fn w_of(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.cost_blocks(phi)?.w)
    }
    pub fn r_of(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.cost_blocks(phi)?.r)
    }
    pub fn abar_of(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        Ok(remove_cross_term(self, phi)?.abar)
    }
    pub fn m_of(&self, phi: &[f64]) -> Result<DMatrix<f64>> {
        Ok(remove_cross_term(self, phi)?.m)
    }

    /// All matrices at `φ` in one pass.
    pub fn evaluate(&self, phi: &[f64]) -> Result<JumpMatrices> {
        let tau = self.tau_of(phi)?;
        let (a, b) = self.dynamics(&[tau])?;
        let cost = self.cost_blocks(&[tau])?;
        let ct = cross_term_free(&a, &b, &cost)?;
        Ok(JumpMatrices {
            tau,
            a,
            b,
            q: cost.q,
            w: cost.w,
            r: cost.r,
            abar: ct.abar,
            m: ct.m,
            m_min_eig: ct.m_min_eig,
        })
    }
}

fn cross_term_free(a: &DMatrix<f64>, b: &DMatrix<f64>, cost: &CostBlocks) -> Result<CrossTermFree> {
    let chol = symmetrize(&cost.r)
        .cholesky()
        .ok_or_else(|| Error::Singular("R(φ)".into()))?;
    let rinv_wt = chol.solve(&cost.w.transpose());
    if rinv_wt.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("R(φ)".into()));
    }
    let abar = a - b * &rinv_wt;
    let m = symmetrize(&(&cost.q - &cost.w * &rinv_wt));
    let m_min_eig = min_eigenvalue(&m);
    Ok(CrossTermFree { abar, m, m_min_eig })
}

/// `Ā(φ) = A − B R⁻¹ Wᵀ` and `M(φ) = Q − W R⁻¹ Wᵀ`.
pub fn remove_cross_term(maps: &JumpSystemMaps, phi: &[f64]) -> Result<CrossTermFree> {
    let (a, b) = maps.dynamics(phi)?;
    let cost = maps.cost_blocks(phi)?;
    cross_term_free(&a, &b, &cost)
}

/// A factor `C` with `CᵀC = M`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub factor: DMatrix<f64>,
    pub rank: usize,
    /// Whether the semidefinite (pivoted) route was taken; the factor is then
    /// upper triangular only up to a column permutation.
    pub pivoted: bool,
}

/// Factorizes a symmetric PSD matrix. Positive definite input gives the
/// unique upper-triangular factor with positive diagonal; semidefinite input
/// falls back to a diagonally pivoted factorization.
pub fn cholesky_factor(m: &DMatrix<f64>, tol: f64) -> Result<CholeskyFactor> {
    if !m.is_square() {
        return Err(Error::Dimension("cholesky_factor needs a square matrix".into()));
    }
    let sym = symmetrize(m);
    let min_eig = min_eigenvalue(&sym);
    if min_eig < -tol {
        return Err(Error::NotPositive {
            what: "M".into(),
            kind: "semi",
            min_eig,
            tol,
        });
    }
    let n = sym.nrows();
    if min_eig > tol {
        if let Some(chol) = sym.clone().cholesky() {
            return Ok(CholeskyFactor {
                factor: chol.l().transpose(),
                rank: n,
                pivoted: false,
            });
        }
    }
    Ok(pivoted_cholesky(&sym, tol))
}

fn pivoted_cholesky(m: &DMatrix<f64>, tol: f64) -> CholeskyFactor {
    let n = m.nrows();
    let mut a = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    // Lower-triangular factor of the permuted matrix, built column by column.
    let mut l = DMatrix::<f64>::zeros(n, n);
    let scale = linalg::max_abs(m).max(1.0);
    let mut rank = 0;
    for k in 0..n {
        let (piv, &best) = (k..n)
            .map(|i| (i, &a[(i, i)]))
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("nonempty range");
        if best <= tol * scale {
            break;
        }
        a.swap_rows(k, piv);
        a.swap_columns(k, piv);
        l.swap_rows(k, piv);
        perm.swap(k, piv);
        let d = a[(k, k)].sqrt();
        l[(k, k)] = d;
        for i in (k + 1)..n {
            l[(i, k)] = a[(i, k)] / d;
        }
        for j in (k + 1)..n {
            for i in j..n {
                let v = a[(i, j)] - l[(i, k)] * l[(j, k)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        rank += 1;
    }
    // P M Pᵀ = L Lᵀ  ⇒  M = (Lᵀ P)ᵀ (Lᵀ P)
    let lt = l.transpose();
    let mut factor = DMatrix::zeros(n, n);
    for (k, &orig) in perm.iter().enumerate() {
        factor.set_column(orig, &lt.column(k));
    }
    CholeskyFactor {
        factor,
        rank,
        pivoted: true,
    }
}
