//! Gridded stabilizability and detectability LMIs and gain extraction.
//!
//! The assemblers take plain per-box data so they can be driven either from a
//! sampled-data plant on a delay grid or from an arbitrary finite jump system.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::problem::{AffineLmiProblem, Constraint, Term, VarId, VarKind};
use super::solver::FeasibilityResult;
use crate::error::{Error, Result};
use crate::grid::{GridLayout, GridModel};
use crate::linalg::inverse;
use crate::piecewise::PiecewiseMatrixFunction;
use crate::plant::JumpSystemMaps;

/// Per-box data of the stabilizability test.
#[derive(Debug, Clone)]
pub struct StabilizabilityData {
    /// `A(c_i)`.
    pub a: Vec<DMatrix<f64>>,
    /// `B(c_i)`.
    pub b: Vec<DMatrix<f64>>,
    /// Entry `(i, j)` is `w_j(c_i)`.
    pub weights: DMatrix<f64>,
    pub kappa: Vec<f64>,
}

/// Per-box data of the detectability test.
#[derive(Debug, Clone)]
pub struct DetectabilityData {
    /// `Υ_A` at each center.
    pub a: Vec<DMatrix<f64>>,
    /// `Υ_C` at each center (`r_C × n`).
    pub c: Vec<DMatrix<f64>>,
    /// Entry `(i, j)` is `w_j(c_i)`.
    pub weights: DMatrix<f64>,
    pub kappa_a: Vec<f64>,
    pub kappa_w: Vec<f64>,
}

/// The stabilizability problem with handles to its variables.
#[derive(Debug, Clone, Serialize)]
pub struct StabilizabilityLmi {
    pub problem: AffineLmiProblem,
    pub r: Vec<VarId>,
    /// One per box, or a single shared entry for the delay-independent variant.
    pub u: Vec<VarId>,
    pub fbar: Vec<VarId>,
    pub lambda: Vec<VarId>,
    pub delay_independent: bool,
}

/// The detectability problem with handles to its variables.
#[derive(Debug, Clone, Serialize)]
pub struct DetectabilityLmi {
    pub problem: AffineLmiProblem,
    pub s: Vec<VarId>,
    pub u: Vec<VarId>,
    pub lbar: Vec<VarId>,
    pub lambda: Vec<VarId>,
    pub rho: Vec<VarId>,
}

fn check_weights(weights: &DMatrix<f64>, n_boxes: usize) -> Result<()> {
    if weights.shape() != (n_boxes, n_boxes) {
        return Err(Error::Dimension(format!(
            "weight table is {}×{}, expected {n_boxes}×{n_boxes}",
            weights.nrows(),
            weights.ncols()
        )));
    }
    Ok(())
}

impl StabilizabilityData {
    fn validate(&self) -> Result<(usize, usize)> {
        let nb = self.a.len();
        if nb == 0 || self.b.len() != nb || self.kappa.len() != nb {
            return Err(Error::Dimension("stabilizability data lengths disagree".into()));
        }
        check_weights(&self.weights, nb)?;
        let n = self.a[0].nrows();
        let m = self.b[0].ncols();
        for (a, b) in self.a.iter().zip(&self.b) {
            if a.shape() != (n, n) || b.shape() != (n, m) {
                return Err(Error::Dimension("per-box A/B shapes disagree".into()));
            }
        }
        Ok((n, m))
    }
}

/// Builds the per-box stabilizability LMIs. With `shared_gain` the
/// variables `U`, `F̄` are common to all boxes (delay-independent controller).
pub fn stabilizability_lmi_from_data(data: &StabilizabilityData, shared_gain: bool) -> Result<StabilizabilityLmi> {
    let (n, m) = data.validate()?;
    let nb = data.a.len();
    let mut p = AffineLmiProblem::new(if shared_gain {
        "delay-independent stabilizability"
    } else {
        "stabilizability"
    });
    let r: Vec<VarId> = (0..nb)
        .map(|i| p.add_variable(format!("R_{i}"), VarKind::SymmetricPd, n, n))
        .collect();
    let nshared = if shared_gain { 1 } else { nb };
    let u: Vec<VarId> = (0..nshared)
        .map(|i| p.add_variable(format!("U_{i}"), VarKind::GeneralSquare, n, n))
        .collect();
    let fbar: Vec<VarId> = (0..nshared)
        .map(|i| p.add_variable(format!("Fbar_{i}"), VarKind::GeneralRect, m, n))
        .collect();
    let lambda: Vec<VarId> = (0..nb)
        .map(|i| p.add_variable(format!("lambda_{i}"), VarKind::PositiveScalar, 1, 1))
        .collect();

    let mut sel_x = DMatrix::zeros(n, n + m);
    sel_x.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut sel_u = DMatrix::zeros(m, n + m);
    sel_u.view_mut((0, n), (m, m)).fill_with_identity();

    let constraints: Vec<Constraint> = (0..nb)
        .into_par_iter()
        .map(|i| {
            let (ui, fi) = if shared_gain { (u[0], fbar[0]) } else { (u[i], fbar[i]) };
            let mut c = Constraint::new(format!("box {i}"));
            let bx = c.add_block("U+Uᵀ-R_i", n);
            let b2: Vec<usize> = (0..nb).map(|j| c.add_block(format!("λI[{j}]"), n)).collect();
            let b3: Vec<usize> = (0..nb).map(|j| c.add_block(format!("R_{j}"), n)).collect();
            let bh = c.add_block("λI", n + m);

            c.push(bx, bx, Term::var(ui, n, n, 2.0));
            c.push(bx, bx, Term::var(r[i], n, n, -1.0));
            let at = data.a[i].transpose();
            let bt = data.b[i].transpose();
            for j in 0..nb {
                c.push(b2[j], b2[j], Term::scalar_identity(lambda[i], n));
                c.push(b2[j], b3[j], Term::scalar_identity(lambda[i], n));
                c.push(b3[j], b3[j], Term::var(r[j], n, n, 1.0));
                let sw = data.weights[(i, j)].max(0.0).sqrt();
                if sw > 0.0 {
                    c.push(bx, b3[j], Term::Product {
                        var: ui,
                        left: DMatrix::identity(n, n),
                        right: at.clone(),
                        transpose: true,
                        scale: sw,
                    });
                    c.push(bx, b3[j], Term::Product {
                        var: fi,
                        left: DMatrix::identity(n, n),
                        right: bt.clone(),
                        transpose: true,
                        scale: sw,
                    });
                }
            }
            let k = data.kappa[i];
            c.push(bx, bh, Term::Product {
                var: ui,
                left: DMatrix::identity(n, n),
                right: &sel_x * k,
                transpose: true,
                scale: 1.0,
            });
            c.push(bx, bh, Term::Product {
                var: fi,
                left: DMatrix::identity(n, n),
                right: &sel_u * k,
                transpose: true,
                scale: 1.0,
            });
            c.push(bh, bh, Term::scalar_identity(lambda[i], n + m));
            c
        })
        .collect();
    p.constraints = constraints;
    Ok(StabilizabilityLmi {
        problem: p,
        r,
        u,
        fbar,
        lambda,
        delay_independent: shared_gain,
    })
}

/// `A(c_i)`, `B(c_i)`, the weight table and `κ_i` from a plant on a grid.
pub fn stabilizability_data(maps: &JumpSystemMaps, grid: &GridModel) -> Result<StabilizabilityData> {
    let kappa = grid
        .kappa_stab
        .as_ref()
        .ok_or_else(|| Error::Precondition("grid carries no stabilizability κ bounds".into()))?;
    let ab: Vec<(DMatrix<f64>, DMatrix<f64>)> = grid
        .centers()
        .par_iter()
        .map(|c| maps.dynamics(c))
        .collect::<Result<_>>()?;
    let (a, b) = ab.into_iter().unzip();
    Ok(StabilizabilityData {
        a,
        b,
        weights: grid.weight_table().clone(),
        kappa: kappa.values.clone(),
    })
}

pub fn assemble_stabilizability_lmi(maps: &JumpSystemMaps, grid: &GridModel) -> Result<StabilizabilityLmi> {
    stabilizability_lmi_from_data(&stabilizability_data(maps, grid)?, false)
}

pub fn assemble_delay_independent_lmi(maps: &JumpSystemMaps, grid: &GridModel) -> Result<StabilizabilityLmi> {
    stabilizability_lmi_from_data(&stabilizability_data(maps, grid)?, true)
}

impl DetectabilityData {
    fn validate(&self) -> Result<(usize, usize)> {
        let nb = self.a.len();
        if nb == 0 || self.c.len() != nb || self.kappa_a.len() != nb || self.kappa_w.len() != nb {
            return Err(Error::Dimension("detectability data lengths disagree".into()));
        }
        check_weights(&self.weights, nb)?;
        let n = self.a[0].nrows();
        let rc = self.c[0].nrows();
        for (a, c) in self.a.iter().zip(&self.c) {
            if a.shape() != (n, n) || c.shape() != (rc, n) {
                return Err(Error::Dimension("per-box Υ_A/Υ_C shapes disagree".into()));
            }
        }
        Ok((n, rc))
    }
}

/// Builds the per-box detectability LMIs.
pub fn detectability_lmi_from_data(data: &DetectabilityData) -> Result<DetectabilityLmi> {
    let (n, rc) = data.validate()?;
    let nb = data.a.len();
    let mut p = AffineLmiProblem::new("detectability");
    let s: Vec<VarId> = (0..nb)
        .map(|i| p.add_variable(format!("S_{i}"), VarKind::SymmetricPd, n, n))
        .collect();
    let u: Vec<VarId> = (0..nb)
        .map(|i| p.add_variable(format!("U_{i}"), VarKind::GeneralSquare, n, n))
        .collect();
    let lbar: Vec<VarId> = (0..nb)
        .map(|i| p.add_variable(format!("Lbar_{i}"), VarKind::GeneralRect, n, rc))
        .collect();
    let lambda: Vec<VarId> = (0..nb)
        .map(|i| p.add_variable(format!("lambda_{i}"), VarKind::PositiveScalar, 1, 1))
        .collect();
    let rho: Vec<VarId> = (0..nb)
        .map(|i| p.add_variable(format!("rho_{i}"), VarKind::PositiveScalar, 1, 1))
        .collect();

    let mut sel_x = DMatrix::zeros(n, n + rc);
    sel_x.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut sel_y = DMatrix::zeros(rc, n + rc);
    sel_y.view_mut((0, n), (rc, rc)).fill_with_identity();

    let constraints: Vec<Constraint> = (0..nb)
        .into_par_iter()
        .map(|i| {
            let mut c = Constraint::new(format!("box {i}"));
            let b1 = c.add_block("U+Uᵀ", n);
            let b2 = c.add_block("λI", n);
            let b3 = c.add_block("S_i", n);
            let b4 = c.add_block("λI (κ_A)", n + rc);
            let b5: Vec<usize> = (0..nb).map(|j| c.add_block(format!("ρI[{j}]"), n)).collect();
            let b6: Vec<usize> = (0..nb).map(|j| c.add_block(format!("S_{j}"), n)).collect();
            let b7 = c.add_block("ρI", n);

            c.push(b1, b1, Term::var(u[i], n, n, 2.0));
            c.push(b1, b3, Term::times(u[i], n, data.a[i].clone()));
            c.push(b1, b3, Term::times(lbar[i], n, data.c[i].clone()));
            let ka = data.kappa_a[i];
            c.push(b1, b4, Term::times(u[i], n, &sel_x * ka));
            c.push(b1, b4, Term::times(lbar[i], n, &sel_y * ka));
            c.push(b1, b7, Term::scalar_identity(rho[i], n));
            c.push(b2, b2, Term::scalar_identity(lambda[i], n));
            c.push(b2, b3, Term::scalar_identity(lambda[i], n));
            c.push(b3, b3, Term::var(s[i], n, n, 1.0));
            c.push(b4, b4, Term::scalar_identity(lambda[i], n + rc));
            let kw = data.kappa_w[i];
            for j in 0..nb {
                let sw = data.weights[(i, j)].max(0.0).sqrt();
                c.push(b1, b6[j], Term::var(s[j], n, n, sw));
                c.push(b5[j], b5[j], Term::scalar_identity(rho[i], n));
                c.push(b5[j], b6[j], Term::var(s[j], n, n, kw));
                c.push(b6[j], b6[j], Term::var(s[j], n, n, 1.0));
            }
            c.push(b7, b7, Term::scalar_identity(rho[i], n));
            c
        })
        .collect();
    p.constraints = constraints;
    Ok(DetectabilityLmi {
        problem: p,
        s,
        u,
        lbar,
        lambda,
        rho,
    })
}

/// `Ā(c_i)`, `M(c_i)` as the output slot, the weight table and `κ_A`, `κ_w`.
pub fn detectability_data(maps: &JumpSystemMaps, grid: &GridModel) -> Result<DetectabilityData> {
    let kappa = grid
        .kappa_det
        .as_ref()
        .ok_or_else(|| Error::Precondition("grid carries no detectability κ bounds".into()))?;
    let am: Vec<(DMatrix<f64>, DMatrix<f64>)> = grid
        .centers()
        .par_iter()
        .map(|c| {
            let j = maps.evaluate(c)?;
            Ok((j.abar, j.m))
        })
        .collect::<Result<_>>()?;
    let (a, c) = am.into_iter().unzip();
    Ok(DetectabilityData {
        a,
        c,
        weights: grid.weight_table().clone(),
        kappa_a: kappa.kappa_a.clone(),
        kappa_w: kappa.kappa_w.clone(),
    })
}

pub fn assemble_detectability_lmi(maps: &JumpSystemMaps, grid: &GridModel) -> Result<DetectabilityLmi> {
    detectability_lmi_from_data(&detectability_data(maps, grid)?)
}

fn feasible_assignment(result: &FeasibilityResult) -> Result<&super::problem::Assignment> {
    match (&result.status, &result.assignment) {
        (super::solver::FeasibilityStatus::Feasible, Some(a)) => Ok(a),
        _ => Err(Error::Precondition(format!(
            "gain extraction needs a feasible result, status is {}",
            result.status
        ))),
    }
}

fn singular_u(i: usize) -> Error {
    Error::InternalConsistency(format!(
        "U_{i} is singular although the certificate forces U + Uᵀ ≻ 0"
    ))
}

/// `F_i = F̄_i U_i⁻¹` for every box.
pub fn extract_feedback_gains(
    lmi: &StabilizabilityLmi,
    result: &FeasibilityResult,
    layout: GridLayout,
) -> Result<PiecewiseMatrixFunction> {
    let a = feasible_assignment(result)?;
    let nb = lmi.r.len();
    let values = (0..nb)
        .map(|i| {
            let k = if lmi.delay_independent { 0 } else { i };
            let uinv = inverse(a.get(lmi.u[k]), "U").map_err(|_| singular_u(k))?;
            Ok(a.get(lmi.fbar[k]) * uinv)
        })
        .collect::<Result<Vec<_>>>()?;
    PiecewiseMatrixFunction::new(layout, values)
}

/// `L_i = U_i⁻¹ L̄_i` for every box.
pub fn extract_observer_gains(
    lmi: &DetectabilityLmi,
    result: &FeasibilityResult,
    layout: GridLayout,
) -> Result<PiecewiseMatrixFunction> {
    let a = feasible_assignment(result)?;
    let values = (0..lmi.s.len())
        .map(|i| {
            let uinv = inverse(a.get(lmi.u[i]), "U").map_err(|_| singular_u(i))?;
            Ok(uinv * a.get(lmi.lbar[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    PiecewiseMatrixFunction::new(layout, values)
}
