//! Infeasible-start primal-dual interior-point method (HKM direction with
//! Mehrotra predictor-corrector) for the smallest-eigenvalue problem
//!
//! ```text
//! maximize t  s.t.  F_c(x) − t I ⪰ 0 for every constraint block c,  |x_k| ≤ M
//! ```
//!
//! Each constraint is compiled into connected components of its block graph
//! and every coefficient matrix into sparse symmetric dyads `α(uvᵀ + vuᵀ)`.
//! Scalars that occur in one component only are eliminated from the Schur
//! system per component, so the dense solve is over shared variables.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::problem::{AffineLmiProblem, Assignment, Recheck, Term, UnionFind, VarKind};
use crate::error::Result;

/// Outcome class of a feasibility solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibilityStatus {
    Feasible,
    /// The iteration budget or the variable box bound was reached below `ε`; this is not
    /// a certificate of infeasibility.
    InfeasibleWithinBudget,
    NumericalFailure,
}

impl std::fmt::Display for FeasibilityStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeasibilityStatus::Feasible => "feasible",
            FeasibilityStatus::InfeasibleWithinBudget => {
                "infeasible-within-budget (not a certificate of infeasibility)"
            }
            FeasibilityStatus::NumericalFailure => "numerical-failure",
        })
    }
}

/// Result of [`solve_feasibility`].
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityResult {
    pub status: FeasibilityStatus,
    /// Variable values; present when `status` is feasible.
    pub assignment: Option<Assignment>,
    /// Independently rechecked minimum eigenvalue over all constraints
    /// (`-∞` when no point was produced).
    pub margin: f64,
    /// The solver's own final `t`.
    pub solver_margin: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub wallclock_secs: f64,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recheck: Option<Recheck>,
}

impl FeasibilityResult {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }
}

/// Tuning knobs of the interior-point method.
#[derive(Debug, Clone, Serialize)]
pub struct SolverOptions {
    /// Iteration budget.
    pub max_iters: usize,
    /// Bound `M` on every scalar unknown.
    pub box_bound: f64,
    /// Stop once every block has margin `target_factor · ε`.
    pub target_factor: f64,
    /// Relative gap and residual tolerance.
    pub tol: f64,
    /// Fraction of the step to the cone boundary.
    pub step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_BUDGET,
            box_bound: 1e3,
            target_factor: 100.0,
            tol: 1e-8,
            step_fraction: 0.95,
        }
    }
}

/// Default iteration budget.
pub const DEFAULT_BUDGET: usize = 150;

/// Solves with default options and the given iteration budget.
pub fn solve_feasibility(problem: &AffineLmiProblem, budget: usize) -> Result<FeasibilityResult> {
    solve_feasibility_with(
        problem,
        &SolverOptions {
            max_iters: budget,
            ..SolverOptions::default()
        },
    )
}

#[derive(Debug, Clone)]
struct SparseVec {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseVec {
    fn from_dense_column(m: &DMatrix<f64>, col: usize, offset: usize) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (r, &v) in m.column(col).iter().enumerate() {
            if v != 0.0 {
                idx.push(offset + r);
                val.push(v);
            }
        }
        Self { idx, val }
    }

    fn from_dense_row(m: &DMatrix<f64>, row: usize, offset: usize) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (c, &v) in m.row(row).iter().enumerate() {
            if v != 0.0 {
                idx.push(offset + c);
                val.push(v);
            }
        }
        Self { idx, val }
    }

    fn unit(i: usize) -> Self {
        Self {
            idx: vec![i],
            val: vec![1.0],
        }
    }

    fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    #[inline]
    fn dot(&self, dense: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * dense[i]).sum()
    }
}

/// `α (u vᵀ + v uᵀ)`.
#[derive(Debug, Clone)]
struct Dyad {
    alpha: f64,
    u: SparseVec,
    v: SparseVec,
}

#[derive(Debug, Clone)]
struct Component {
    dim: usize,
    f0: DMatrix<f64>,
    /// `(scalar index, dyads of its coefficient matrix)`, sorted by scalar index.
    terms: Vec<(usize, Vec<Dyad>)>,
}

/// Scalar layout of the variables and the compiled components.
struct Compiled {
    nscalar: usize,
    var_offsets: Vec<usize>,
    comps: Vec<Component>,
}

/// Basis matrices of a variable as lists of unit entries, one list per scalar.
fn basis(kind: VarKind, rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    match kind {
        VarKind::SymmetricPd => {
            let mut out = Vec::with_capacity(rows * (rows + 1) / 2);
            for a in 0..rows {
                for b in a..rows {
                    if a == b {
                        out.push(vec![(a, a)]);
                    } else {
                        out.push(vec![(a, b), (b, a)]);
                    }
                }
            }
            out
        }
        VarKind::PositiveScalar => vec![vec![(0, 0)]],
        _ => (0..rows)
            .flat_map(|a| (0..cols).map(move |b| vec![(a, b)]))
            .collect(),
    }
}

fn compile(problem: &AffineLmiProblem) -> Compiled {
    let mut var_offsets = Vec::with_capacity(problem.variables.len());
    let mut nscalar = 0;
    for v in &problem.variables {
        var_offsets.push(nscalar);
        nscalar += v.dof();
    }
    let bases: Vec<Vec<Vec<(usize, usize)>>> = problem
        .variables
        .iter()
        .map(|v| basis(v.kind, v.rows, v.cols))
        .collect();

    let mut comps = Vec::new();
    for c in &problem.constraints {
        let nb = c.block_sizes.len();
        let mut uf = UnionFind::new(nb);
        for b in &c.blocks {
            if b.row != b.col && !b.terms.is_empty() {
                uf.union(b.row, b.col);
            }
        }
        for group in uf.groups() {
            let mut local_off = vec![usize::MAX; nb];
            let mut dim = 0;
            for &b in &group {
                local_off[b] = dim;
                dim += c.block_sizes[b];
            }
            if dim == 0 {
                continue;
            }
            let mut f0 = DMatrix::zeros(dim, dim);
            let mut by_scalar: std::collections::BTreeMap<usize, Vec<Dyad>> = Default::default();
            for blk in c.blocks.iter().filter(|b| local_off[b.row] != usize::MAX) {
                let (ro, co) = (local_off[blk.row], local_off[blk.col]);
                let diag = blk.row == blk.col;
                let half = if diag { 0.5 } else { 1.0 };
                for term in &blk.terms {
                    match term {
                        Term::Product {
                            var,
                            left,
                            right,
                            transpose,
                            scale,
                        } => {
                            for (s, entries) in bases[var.0].iter().enumerate() {
                                let k = var_offsets[var.0] + s;
                                for &(a, b) in entries {
                                    let (ra, cb) = if *transpose { (b, a) } else { (a, b) };
                                    let u = SparseVec::from_dense_column(left, ra, ro);
                                    let v = SparseVec::from_dense_row(right, cb, co);
                                    if u.is_empty() || v.is_empty() {
                                        continue;
                                    }
                                    by_scalar.entry(k).or_default().push(Dyad {
                                        alpha: scale * half,
                                        u,
                                        v,
                                    });
                                }
                            }
                        }
                        Term::ScalarTimes { var, matrix } => {
                            let k = var_offsets[var.0];
                            for a in 0..matrix.nrows() {
                                for b in 0..matrix.ncols() {
                                    let m = matrix[(a, b)];
                                    if m != 0.0 {
                                        by_scalar.entry(k).or_default().push(Dyad {
                                            alpha: m * half,
                                            u: SparseVec::unit(ro + a),
                                            v: SparseVec::unit(co + b),
                                        });
                                    }
                                }
                            }
                        }
                        Term::Constant(m) => {
                            let (rs, cs) = m.shape();
                            if diag {
                                let s = (m + m.transpose()) * 0.5;
                                let mut view = f0.view_mut((ro, co), (rs, cs));
                                view += &s;
                            } else {
                                {
                                    let mut view = f0.view_mut((ro, co), (rs, cs));
                                    view += m;
                                }
                                let mut view = f0.view_mut((co, ro), (cs, rs));
                                view += m.transpose();
                            }
                        }
                    }
                }
            }
            comps.push(Component {
                dim,
                f0,
                terms: by_scalar.into_iter().collect(),
            });
        }
    }

    // Structural requirements: X ⪰ tI for symmetric-PD, x ≥ t for positive scalars.
    for (k, v) in problem.variables.iter().enumerate() {
        match v.kind {
            VarKind::SymmetricPd => {
                let terms = bases[k]
                    .iter()
                    .enumerate()
                    .map(|(s, entries)| {
                        let dyads = entries
                            .iter()
                            .map(|&(a, b)| Dyad {
                                alpha: 0.5,
                                u: SparseVec::unit(a),
                                v: SparseVec::unit(b),
                            })
                            .collect();
                        (var_offsets[k] + s, dyads)
                    })
                    .collect();
                comps.push(Component {
                    dim: v.rows,
                    f0: DMatrix::zeros(v.rows, v.rows),
                    terms,
                });
            }
            VarKind::PositiveScalar => comps.push(Component {
                dim: 1,
                f0: DMatrix::zeros(1, 1),
                terms: vec![(
                    var_offsets[k],
                    vec![Dyad {
                        alpha: 0.5,
                        u: SparseVec::unit(0),
                        v: SparseVec::unit(0),
                    }],
                )],
            }),
            _ => {}
        }
    }
    Compiled {
        nscalar,
        var_offsets,
        comps,
    }
}


impl Component {
    /// `Σ x_k F_k − t I` added onto `base`.
    fn apply(&self, x: &[f64], t: f64, mut f: DMatrix<f64>) -> DMatrix<f64> {
        for (k, dyads) in &self.terms {
            let xk = x[*k];
            if xk == 0.0 {
                continue;
            }
            for d in dyads {
                let a = d.alpha * xk;
                for (&i, &ui) in d.u.idx.iter().zip(&d.u.val) {
                    for (&j, &vj) in d.v.idx.iter().zip(&d.v.val) {
                        let c = a * ui * vj;
                        f[(i, j)] += c;
                        f[(j, i)] += c;
                    }
                }
            }
        }
        for i in 0..self.dim {
            f[(i, i)] -= t;
        }
        f
    }

    /// `F_c(x) − t I`.
    fn assemble(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        self.apply(x, t, self.f0.clone())
    }

    /// `(tr(F_k G))_k` for symmetric `G`, in `terms` order.
    fn traces(&self, g: &DMatrix<f64>) -> Vec<f64> {
        self.terms
            .iter()
            .map(|(_, dyads)| {
                dyads
                    .iter()
                    .map(|d| 2.0 * d.alpha * d.u.dot(&mat_times(g, &d.v)))
                    .sum()
            })
            .collect()
    }
}

fn mat_times(z: &DMatrix<f64>, s: &SparseVec) -> Vec<f64> {
    let mut out = vec![0.0; z.nrows()];
    for (&i, &v) in s.idx.iter().zip(&s.val) {
        for (o, zi) in out.iter_mut().zip(z.column(i).iter()) {
            *o += v * zi;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Block `tr(F_k X F_l W)`, `−tr(F_k X W)` and `tr(X W)` of the HKM Schur
/// matrix over the component's scalars (in `terms` order) followed by `t`.
fn schur_block(comp: &Component, x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let nv = comp.terms.len();
    let prod = |m: &DMatrix<f64>, sel: fn(&Dyad) -> &SparseVec| -> Vec<Vec<Vec<f64>>> {
        comp.terms
            .iter()
            .map(|(_, dyads)| dyads.iter().map(|d| mat_times(m, sel(d))).collect())
            .collect()
    };
    let xu = prod(x, |d| &d.u);
    let xv = prod(x, |d| &d.v);
    let wu = prod(w, |d| &d.u);
    let wv = prod(w, |d| &d.v);

    let mut h = DMatrix::zeros(nv + 1, nv + 1);
    for (k, (_, dk)) in comp.terms.iter().enumerate() {
        let mut hkt = 0.0;
        for (d, a) in dk.iter().enumerate() {
            hkt += a.alpha * (dot(&xv[k][d], &wu[k][d]) + dot(&xu[k][d], &wv[k][d]));
        }
        h[(k, nv)] = -hkt;
        h[(nv, k)] = -hkt;
        for (l, (_, dl)) in comp.terms.iter().enumerate().skip(k) {
            let mut acc = 0.0;
            for (d, a) in dk.iter().enumerate() {
                for (e, b) in dl.iter().enumerate() {
                    let v = a.v.dot(&xu[l][e]) * b.v.dot(&wu[k][d])
                        + a.v.dot(&xv[l][e]) * b.u.dot(&wu[k][d])
                        + a.u.dot(&xu[l][e]) * b.v.dot(&wv[k][d])
                        + a.u.dot(&xv[l][e]) * b.u.dot(&wv[k][d]);
                    acc += a.alpha * b.alpha * v;
                }
            }
            h[(k, l)] = acc;
            h[(l, k)] = acc;
        }
    }
    h[(nv, nv)] = x.component_mul(w).sum();
    h
}

/// Largest `α` with `P + α dP ⪰ 0` (`∞` if unbounded).
fn max_step(p: &DMatrix<f64>, dp: &DMatrix<f64>) -> Option<f64> {
    let l = p.clone().cholesky()?.unpack();
    let t = l.solve_lower_triangular(dp)?;
    let y = l.solve_lower_triangular(&t.transpose())?;
    let lmin = crate::linalg::min_eigenvalue(&sym(y));
    Some(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

fn cholesky_regularized(h: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut hr = h.clone();
        if reg > 0.0 {
            for i in 0..hr.nrows() {
                hr[(i, i)] += reg * scale;
            }
        }
        if let Some(ch) = hr.cholesky() {
            return Some(ch);
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    None
}

/// Scalars shared between components (plus `t`) and the per-component locals.
struct Layout {
    global_pos: Vec<Option<usize>>,
    nglobal: usize,
    locals: Vec<Vec<usize>>,
}

impl Layout {
    fn new(c: &Compiled) -> Self {
        let mut count = vec![0usize; c.nscalar];
        for comp in &c.comps {
            for (k, _) in &comp.terms {
                count[*k] += 1;
            }
        }
        let mut global_pos = vec![None; c.nscalar];
        let mut nglobal = 0;
        for (k, n) in count.iter().enumerate() {
            if *n != 1 {
                global_pos[k] = Some(nglobal);
                nglobal += 1;
            }
        }
        let locals = c
            .comps
            .iter()
            .map(|comp| {
                comp.terms
                    .iter()
                    .enumerate()
                    .filter(|(_, (k, _))| global_pos[*k].is_none())
                    .map(|(p, _)| p)
                    .collect()
            })
            .collect();
        Self {
            global_pos,
            nglobal: nglobal + 1,
            locals,
        }
    }

    fn t_pos(&self) -> usize {
        self.nglobal - 1
    }
}

/// Factorized Schur matrix with local scalars eliminated per component.
struct Factor {
    comps: Vec<LocalFactor>,
    global: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

struct LocalFactor {
    gpos: Vec<usize>,
    local_scalars: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    ainv_b: DMatrix<f64>,
}

struct NumericalBreakdown(&'static str);

fn factor(
    c: &Compiled,
    lay: &Layout,
    xs: &[DMatrix<f64>],
    ws: &[DMatrix<f64>],
    lp_diag: &[f64],
) -> std::result::Result<Factor, NumericalBreakdown> {
    let reduced: Vec<(LocalFactor, DMatrix<f64>)> = (0..c.comps.len())
        .into_par_iter()
        .map(|ci| {
            let comp = &c.comps[ci];
            let h = schur_block(comp, &xs[ci], &ws[ci]);
            let nv = comp.terms.len();
            let locals = &lay.locals[ci];
            let mut is_local = vec![false; nv];
            for &p in locals {
                is_local[p] = true;
            }
            let gidx: Vec<usize> = (0..nv).filter(|p| !is_local[*p]).chain(std::iter::once(nv)).collect();
            let gpos: Vec<usize> = gidx
                .iter()
                .map(|&p| {
                    if p == nv {
                        lay.t_pos()
                    } else {
                        lay.global_pos[comp.terms[p].0].expect("shared scalar")
                    }
                })
                .collect();
            let mut h_gg = DMatrix::from_fn(gidx.len(), gidx.len(), |a, b| h[(gidx[a], gidx[b])]);
            if locals.is_empty() {
                let lf = LocalFactor {
                    gpos,
                    local_scalars: Vec::new(),
                    chol: None,
                    ainv_b: DMatrix::zeros(0, 0),
                };
                return Ok((lf, h_gg));
            }
            let nl = locals.len();
            let local_scalars: Vec<usize> = locals.iter().map(|&p| comp.terms[p].0).collect();
            let mut a = DMatrix::from_fn(nl, nl, |i, j| h[(locals[i], locals[j])]);
            for (i, &k) in local_scalars.iter().enumerate() {
                a[(i, i)] += lp_diag[k];
            }
            let b = DMatrix::from_fn(nl, gidx.len(), |i, j| h[(locals[i], gidx[j])]);
            let chol = cholesky_regularized(&a).ok_or(NumericalBreakdown("local Schur block"))?;
            let ainv_b = chol.solve(&b);
            h_gg -= b.transpose() * &ainv_b;
            Ok((
                LocalFactor {
                    gpos,
                    local_scalars,
                    chol: Some(chol),
                    ainv_b,
                },
                h_gg,
            ))
        })
        .collect::<std::result::Result<_, _>>()?;

    let mut m = DMatrix::zeros(lay.nglobal, lay.nglobal);
    for (lf, h_gg) in &reduced {
        for (a, &pa) in lf.gpos.iter().enumerate() {
            for (b, &pb) in lf.gpos.iter().enumerate() {
                m[(pa, pb)] += h_gg[(a, b)];
            }
        }
    }
    for (k, pos) in lay.global_pos.iter().enumerate() {
        if let Some(p) = pos {
            m[(*p, *p)] += lp_diag[k];
        }
    }
    let global = cholesky_regularized(&m).ok_or(NumericalBreakdown("global Schur matrix"))?;
    Ok(Factor {
        comps: reduced.into_iter().map(|(lf, _)| lf).collect(),
        global,
    })
}

impl Factor {
    /// Solves `M Δy = h` where `h` is indexed by scalar with `t` last.
    fn solve(&self, lay: &Layout, h: &[f64]) -> Vec<f64> {
        let n = h.len() - 1;
        let mut hg = DVector::zeros(lay.nglobal);
        for (k, pos) in lay.global_pos.iter().enumerate() {
            if let Some(p) = pos {
                hg[*p] = h[k];
            }
        }
        hg[lay.t_pos()] = h[n];
        let z: Vec<Option<DVector<f64>>> = self
            .comps
            .iter()
            .map(|lf| {
                let chol = lf.chol.as_ref()?;
                let hl = DVector::from_iterator(lf.local_scalars.len(), lf.local_scalars.iter().map(|&k| h[k]));
                let corr = lf.ainv_b.transpose() * &hl;
                for (a, &pa) in lf.gpos.iter().enumerate() {
                    hg[pa] -= corr[a];
                }
                Some(chol.solve(&hl))
            })
            .collect();
        let dg = self.global.solve(&hg);
        let mut out = vec![0.0; n + 1];
        for (k, pos) in lay.global_pos.iter().enumerate() {
            if let Some(p) = pos {
                out[k] = dg[*p];
            }
        }
        out[n] = dg[lay.t_pos()];
        for (lf, z) in self.comps.iter().zip(z) {
            if let Some(z) = z {
                let dgc = DVector::from_iterator(lf.gpos.len(), lf.gpos.iter().map(|&p| dg[p]));
                let dl = z - &lf.ainv_b * dgc;
                for (i, &k) in lf.local_scalars.iter().enumerate() {
                    out[k] = dl[i];
                }
            }
        }
        out
    }
}

/// Primal-dual iterate. SDP blocks hold `X_c`, `S_c`; the box `|x_k| ≤ M` is
/// two linear slacks per scalar (`M − x_k` and `M + x_k`).
struct Iterate {
    y: Vec<f64>,
    xs: Vec<DMatrix<f64>>,
    ss: Vec<DMatrix<f64>>,
    xp: Vec<f64>,
    xm: Vec<f64>,
    sp: Vec<f64>,
    sm: Vec<f64>,
}

struct Direction {
    dy: Vec<f64>,
    dxs: Vec<DMatrix<f64>>,
    dss: Vec<DMatrix<f64>>,
    dxp: Vec<f64>,
    dxm: Vec<f64>,
    dsp: Vec<f64>,
    dsm: Vec<f64>,
}

struct Residuals {
    rp: Vec<f64>,
    rd: Vec<DMatrix<f64>>,
    rdp: Vec<f64>,
    rdm: Vec<f64>,
}

fn residuals(c: &Compiled, bound: f64, it: &Iterate) -> Residuals {
    let n = c.nscalar;
    let x = &it.y[..n];
    let t = it.y[n];
    let parts: Vec<(Vec<f64>, f64, DMatrix<f64>)> = c
        .comps
        .par_iter()
        .zip(&it.xs)
        .zip(&it.ss)
        .map(|((comp, xc), sc)| (comp.traces(xc), xc.trace(), comp.assemble(x, t) - sc))
        .collect();
    // 𝒜(X): scalar k ↦ −Σ tr(F_k X_c) + x⁺ − x⁻, t ↦ Σ tr(X_c)
    let mut ax = vec![0.0; n + 1];
    let mut rd = Vec::with_capacity(parts.len());
    for (comp, (tr, trx, r)) in c.comps.iter().zip(parts) {
        for ((k, _), v) in comp.terms.iter().zip(tr) {
            ax[*k] -= v;
        }
        ax[n] += trx;
        rd.push(r);
    }
    for k in 0..n {
        ax[k] += it.xp[k] - it.xm[k];
    }
    let mut rp: Vec<f64> = ax.iter().map(|v| -v).collect();
    rp[n] += 1.0;
    let rdp = (0..n).map(|k| bound - x[k] - it.sp[k]).collect();
    let rdm = (0..n).map(|k| bound + x[k] - it.sm[k]).collect();
    Residuals { rp, rd, rdp, rdm }
}

/// Builds `Δy` from a factorization and the centering target `σμ` with an
/// optional Mehrotra correction from a predictor direction.
fn direction(
    c: &Compiled,
    lay: &Layout,
    fac: &Factor,
    it: &Iterate,
    ws: &[DMatrix<f64>],
    res: &Residuals,
    sigma_mu: f64,
    pred: Option<&Direction>,
) -> Direction {
    let n = c.nscalar;
    // G = sym((σμ I − X R_d − ΔX_p ΔS_p) W) − X
    let gs: Vec<DMatrix<f64>> = (0..c.comps.len())
        .into_par_iter()
        .map(|ci| {
            let dim = c.comps[ci].dim;
            let mut inner = DMatrix::identity(dim, dim) * sigma_mu - &it.xs[ci] * &res.rd[ci];
            if let Some(p) = pred {
                inner -= &p.dxs[ci] * &p.dss[ci];
            }
            sym(inner * &ws[ci]) - &it.xs[ci]
        })
        .collect();
    let lp_g = |x: f64, s: f64, rd: f64, corr: f64| (sigma_mu - x * rd - corr) / s - x;
    let gp: Vec<f64> = (0..n)
        .map(|k| lp_g(it.xp[k], it.sp[k], res.rdp[k], pred.map_or(0.0, |p| p.dxp[k] * p.dsp[k])))
        .collect();
    let gm: Vec<f64> = (0..n)
        .map(|k| lp_g(it.xm[k], it.sm[k], res.rdm[k], pred.map_or(0.0, |p| p.dxm[k] * p.dsm[k])))
        .collect();

    // h = R_p − 𝒜(G)
    let traces: Vec<(Vec<f64>, f64)> = c
        .comps
        .par_iter()
        .zip(&gs)
        .map(|(comp, g)| (comp.traces(g), g.trace()))
        .collect();
    let mut h = res.rp.clone();
    for (comp, (tr, trg)) in c.comps.iter().zip(traces) {
        for ((k, _), v) in comp.terms.iter().zip(tr) {
            h[*k] += v;
        }
        h[n] -= trg;
    }
    for k in 0..n {
        h[k] -= gp[k] - gm[k];
    }
    let dy = fac.solve(lay, &h);

    let dx = &dy[..n];
    let dt = dy[n];
    let (dxs, dss): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) = (0..c.comps.len())
        .into_par_iter()
        .map(|ci| {
            // ΔS = R_d + Σ Δx_k F_k − Δt I;  ΔX = G − sym(X (ΔS − R_d) W)
            let ds = c.comps[ci].apply(dx, dt, res.rd[ci].clone());
            let dx_c = &gs[ci] - sym(&it.xs[ci] * (&ds - &res.rd[ci]) * &ws[ci]);
            (dx_c, ds)
        })
        .unzip();
    let dsp: Vec<f64> = (0..n).map(|k| res.rdp[k] - dx[k]).collect();
    let dsm: Vec<f64> = (0..n).map(|k| res.rdm[k] + dx[k]).collect();
    let dxp = (0..n).map(|k| gp[k] - it.xp[k] * (dsp[k] - res.rdp[k]) / it.sp[k]).collect();
    let dxm = (0..n).map(|k| gm[k] - it.xm[k] * (dsm[k] - res.rdm[k]) / it.sm[k]).collect();
    Direction {
        dy,
        dxs,
        dss,
        dxp,
        dxm,
        dsp,
        dsm,
    }
}

fn lp_step(p: &[f64], dp: &[f64]) -> f64 {
    p.iter()
        .zip(dp)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Maximal primal and dual step lengths.
fn step_lengths(it: &Iterate, d: &Direction) -> Option<(f64, f64)> {
    let sdp: Option<Vec<(f64, f64)>> = it
        .xs
        .par_iter()
        .zip(&it.ss)
        .zip(d.dxs.par_iter().zip(&d.dss))
        .map(|((x, s), (dx, ds))| Some((max_step(x, dx)?, max_step(s, ds)?)))
        .collect();
    let sdp = sdp?;
    let ap = sdp
        .iter()
        .map(|v| v.0)
        .fold(lp_step(&it.xp, &d.dxp).min(lp_step(&it.xm, &d.dxm)), f64::min);
    let ad = sdp
        .iter()
        .map(|v| v.1)
        .fold(lp_step(&it.sp, &d.dsp).min(lp_step(&it.sm, &d.dsm)), f64::min);
    Some((ap, ad))
}

fn complementarity(it: &Iterate, d: Option<(&Direction, f64, f64)>) -> f64 {
    let sdp: f64 = (0..it.xs.len())
        .into_par_iter()
        .map(|ci| match d {
            None => it.xs[ci].dot(&it.ss[ci]),
            Some((d, ap, ad)) => (&it.xs[ci] + &d.dxs[ci] * ap).dot(&(&it.ss[ci] + &d.dss[ci] * ad)),
        })
        .sum();
    let lp: f64 = (0..it.xp.len())
        .map(|k| match d {
            None => it.xp[k] * it.sp[k] + it.xm[k] * it.sm[k],
            Some((d, ap, ad)) => {
                (it.xp[k] + ap * d.dxp[k]) * (it.sp[k] + ad * d.dsp[k])
                    + (it.xm[k] + ap * d.dxm[k]) * (it.sm[k] + ad * d.dsm[k])
            }
        })
        .sum();
    sdp + lp
}

/// Whether every block satisfies `F_c(x) ⪰ level I` and `|x| < M`.
fn satisfies(c: &Compiled, x: &[f64], level: f64, bound: f64) -> bool {
    x.iter().all(|v| v.abs() < bound)
        && c
            .comps
            .par_iter()
            .all(|comp| comp.assemble(x, level).cholesky().is_some())
}

fn to_assignment(problem: &AffineLmiProblem, c: &Compiled, x: &[f64]) -> Assignment {
    let values = problem
        .variables
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let mut m = DMatrix::zeros(v.rows, v.cols);
            for (s, entries) in basis(v.kind, v.rows, v.cols).iter().enumerate() {
                for &(a, b) in entries {
                    m[(a, b)] = x[c.var_offsets[k] + s];
                }
            }
            m
        })
        .collect();
    Assignment { values }
}

/// Runs the interior-point method and rechecks the final point independently.
pub fn solve_feasibility_with(problem: &AffineLmiProblem, opts: &SolverOptions) -> Result<FeasibilityResult> {
    problem.validate()?;
    let start = Instant::now();
    let eps = problem.epsilon;
    let compiled = compile(problem);
    let lay = Layout::new(&compiled);
    let n = compiled.nscalar;
    let bound = opts.box_bound;
    let target = opts.target_factor * eps;

    let finish = |status_hint: FeasibilityStatus, y: &[f64], iters: usize, msg: String| {
        let assignment = to_assignment(problem, &compiled, &y[..n]);
        let recheck = problem.recheck(&assignment);
        let margin = recheck.margin();
        let (status, message) = match status_hint {
            FeasibilityStatus::Feasible if margin >= 0.9 * eps => (FeasibilityStatus::Feasible, msg),
            FeasibilityStatus::Feasible => (
                FeasibilityStatus::NumericalFailure,
                format!("{msg}; independent recheck margin {margin:e} is below 0.9·ε = {:e}", 0.9 * eps),
            ),
            other => (other, msg),
        };
        FeasibilityResult {
            status,
            assignment: (status == FeasibilityStatus::Feasible).then_some(assignment),
            margin,
            solver_margin: y.get(n).copied().unwrap_or(f64::INFINITY),
            epsilon: eps,
            iterations: iters,
            wallclock_secs: start.elapsed().as_secs_f64(),
            message,
            recheck: Some(recheck),
        }
    };

    if compiled.comps.is_empty() {
        return Ok(finish(FeasibilityStatus::Feasible, &vec![0.0; n], 0, "no constraints".into()));
    }

    let scale = compiled
        .comps
        .iter()
        .flat_map(|c| c.terms.iter().flat_map(|(_, ds)| ds.iter().map(|d| d.alpha.abs())))
        .chain(compiled.comps.iter().map(|c| crate::linalg::max_abs(&c.f0)))
        .fold(1.0f64, f64::max);
    let mut it = Iterate {
        y: vec![0.0; n + 1],
        xs: compiled.comps.iter().map(|c| DMatrix::identity(c.dim, c.dim)).collect(),
        ss: compiled.comps.iter().map(|c| DMatrix::identity(c.dim, c.dim) * scale).collect(),
        xp: vec![scale / bound; n],
        xm: vec![scale / bound; n],
        sp: vec![bound; n],
        sm: vec![bound; n],
    };
    let n_tot: f64 = compiled.comps.iter().map(|c| c.dim as f64).sum::<f64>() + 2.0 * n as f64;
    let c_norm = 1.0
        + compiled
            .comps
            .iter()
            .map(|c| c.f0.norm_squared())
            .sum::<f64>()
            .sqrt()
        + bound * (2.0 * n as f64).sqrt();

    let mut iters = 0;
    loop {
        let x = &it.y[..n];
        if satisfies(&compiled, x, target, bound) {
            return Ok(finish(
                FeasibilityStatus::Feasible,
                &it.y,
                iters,
                format!("margin target {target:e} reached"),
            ));
        }
        let res = residuals(&compiled, bound, &it);
        let mu = complementarity(&it, None) / n_tot;
        let pobj: f64 = compiled
            .comps
            .iter()
            .zip(&it.xs)
            .map(|(c, xc)| c.f0.dot(xc))
            .sum::<f64>()
            + bound * (it.xp.iter().sum::<f64>() + it.xm.iter().sum::<f64>());
        let dobj = it.y[n];
        let pinf = res.rp.iter().map(|v| v * v).sum::<f64>().sqrt() / 2.0;
        let dinf = (res.rd.iter().map(|r| r.norm_squared()).sum::<f64>()
            + res.rdp.iter().chain(&res.rdm).map(|v| v * v).sum::<f64>())
        .sqrt()
            / c_norm;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if pinf <= opts.tol && pobj < eps {
            return Ok(finish(
                FeasibilityStatus::InfeasibleWithinBudget,
                &it.y,
                iters,
                format!("primal bound: max t ≤ {pobj:e} < ε within |x| ≤ {bound}"),
            ));
        }
        if gap <= opts.tol && pinf <= opts.tol && dinf <= opts.tol {
            let ok = satisfies(&compiled, x, eps, bound);
            let status = if ok {
                FeasibilityStatus::Feasible
            } else {
                FeasibilityStatus::InfeasibleWithinBudget
            };
            return Ok(finish(status, &it.y, iters, format!("converged with max t = {dobj:e}")));
        }
        if iters >= opts.max_iters {
            return Ok(finish(
                FeasibilityStatus::InfeasibleWithinBudget,
                &it.y,
                iters,
                format!("iteration budget {} exhausted at t = {dobj:e} < target {target:e}", opts.max_iters),
            ));
        }
        iters += 1;

        let ws: Option<Vec<DMatrix<f64>>> = it
            .ss
            .par_iter()
            .map(|s| s.clone().cholesky().map(|c| c.inverse()))
            .collect();
        let Some(ws) = ws else {
            return Ok(finish(
                FeasibilityStatus::NumericalFailure,
                &it.y,
                iters,
                "dual slack lost definiteness".into(),
            ));
        };
        let lp_diag: Vec<f64> = (0..n).map(|k| it.xp[k] / it.sp[k] + it.xm[k] / it.sm[k]).collect();
        let fac = match factor(&compiled, &lay, &it.xs, &ws, &lp_diag) {
            Ok(f) => f,
            Err(NumericalBreakdown(what)) => {
                return Ok(finish(
                    FeasibilityStatus::NumericalFailure,
                    &it.y,
                    iters,
                    format!("Schur complement breakdown in the {what}"),
                ))
            }
        };
        let pred = direction(&compiled, &lay, &fac, &it, &ws, &res, 0.0, None);
        let Some((ap, ad)) = step_lengths(&it, &pred) else {
            return Ok(finish(
                FeasibilityStatus::NumericalFailure,
                &it.y,
                iters,
                "step-length computation failed".into(),
            ));
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = complementarity(&it, Some((&pred, ap, ad))) / n_tot;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let d = direction(&compiled, &lay, &fac, &it, &ws, &res, sigma * mu, Some(&pred));
        let Some((ap, ad)) = step_lengths(&it, &d) else {
            return Ok(finish(
                FeasibilityStatus::NumericalFailure,
                &it.y,
                iters,
                "step-length computation failed".into(),
            ));
        };
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);
        if !(ap > 1e-12 && ad > 1e-12) || d.dy.iter().any(|v| !v.is_finite()) {
            return Ok(finish(
                FeasibilityStatus::NumericalFailure,
                &it.y,
                iters,
                "interior-point steps stalled".into(),
            ));
        }
        for (v, dv) in it.y.iter_mut().zip(&d.dy) {
            *v += ad * dv;
        }
        for ci in 0..it.xs.len() {
            it.xs[ci] += &d.dxs[ci] * ap;
            it.ss[ci] += &d.dss[ci] * ad;
            it.xs[ci] = sym(std::mem::replace(&mut it.xs[ci], DMatrix::zeros(0, 0)));
            it.ss[ci] = sym(std::mem::replace(&mut it.ss[ci], DMatrix::zeros(0, 0)));
        }
        for k in 0..n {
            it.xp[k] += ap * d.dxp[k];
            it.xm[k] += ap * d.dxm[k];
            it.sp[k] += ad * d.dsp[k];
            it.sm[k] += ad * d.dsm[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::problem::Constraint;

    fn interval_problem(lo: f64, hi: f64, eps: f64) -> AffineLmiProblem {
        // diag(x − lo, hi − x) ⪰ ε
        let mut p = AffineLmiProblem::new("interval");
        p.epsilon = eps;
        let x = p.add_variable("x", VarKind::GeneralRect, 1, 1);
        let mut c = Constraint::new("c");
        let b0 = c.add_block("lower", 1);
        let b1 = c.add_block("upper", 1);
        c.push(b0, b0, Term::var(x, 1, 1, 1.0));
        c.push(b0, b0, Term::Constant(DMatrix::from_element(1, 1, -lo)));
        c.push(b1, b1, Term::var(x, 1, 1, -1.0));
        c.push(b1, b1, Term::Constant(DMatrix::from_element(1, 1, hi)));
        p.constraints.push(c);
        p
    }

    #[test]
    fn interval_feasible() {
        let r = solve_feasibility(&interval_problem(1.0, 2.0, 0.1), 100).unwrap();
        assert_eq!(r.status, FeasibilityStatus::Feasible, "{}", r.message);
        let x = r.assignment.unwrap().values[0][(0, 0)];
        assert!(x > 1.1 && x < 1.9, "{x}");
        assert!(r.margin >= 0.09);
    }

    #[test]
    fn interval_infeasible() {
        let r = solve_feasibility(&interval_problem(2.0, 1.0, 0.1), 100).unwrap();
        assert_eq!(r.status, FeasibilityStatus::InfeasibleWithinBudget, "{}", r.message);
        assert!(r.assignment.is_none());
    }

    #[test]
    fn schur_block_matches_dense_traces() {
        let mut p = AffineLmiProblem::new("dense");
        let s = p.add_variable("S", VarKind::SymmetricPd, 2, 2);
        let u = p.add_variable("U", VarKind::GeneralSquare, 2, 2);
        let mut c = Constraint::new("c");
        let b0 = c.add_block("a", 2);
        let b1 = c.add_block("b", 2);
        c.push(b0, b0, Term::var(s, 2, 2, 1.0));
        c.push(b0, b1, Term::times(u, 2, DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.5])));
        c.push(b1, b1, Term::Constant(DMatrix::identity(2, 2) * 2.0));
        c.push(b1, b1, Term::Product {
            var: u,
            left: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]),
            right: DMatrix::identity(2, 2),
            transpose: true,
            scale: 0.4,
        });
        p.constraints.push(c);
        let comp = compile(&p).comps.remove(0);
        let x = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i + j) as f64) });
        let w = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.5 } else { -0.2 / (1.0 + (i * j) as f64) });
        let h = schur_block(&comp, &x, &w);
        // coefficient matrices from unit assignments
        let coef = |k: usize| {
            let mut e = vec![0.0; 7];
            e[k] = 1.0;
            comp.apply(&e, 0.0, DMatrix::zeros(4, 4))
        };
        let nv = comp.terms.len();
        for (a, (k, _)) in comp.terms.iter().enumerate() {
            let fk = coef(*k);
            let kt = -(&fk * &x * &w).trace();
            assert!((h[(a, nv)] - kt).abs() < 1e-12);
            for (b, (l, _)) in comp.terms.iter().enumerate() {
                let v = (&fk * &x * coef(*l) * &w).trace();
                assert!((h[(a, b)] - v).abs() < 1e-12, "{k},{l}: {} vs {v}", h[(a, b)]);
            }
        }
        assert!((h[(nv, nv)] - (&x * &w).trace()).abs() < 1e-12);
    }

    #[test]
    fn max_step_hits_the_boundary() {
        let p = DMatrix::identity(2, 2);
        let dp = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.5, 1.0]));
        assert!((max_step(&p, &dp).unwrap() - 2.0).abs() < 1e-12);
        assert!(max_step(&p, &DMatrix::identity(2, 2)).unwrap().is_infinite());
    }
}
