//! End-to-end steps shared by the command-line tool and the C interface:
//! certification (optionally with a refinement sweep), synthesis and the
//! gain file format.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, estimate_kappa_det, estimate_kappa_stab, GridModel, KappaSettings};
use crate::kernel::TransitionKernel;
use crate::lmi::{
    assemble_delay_independent_lmi, assemble_detectability_lmi, assemble_stabilizability_lmi,
    extract_feedback_gains, extract_observer_gains, solve_feasibility_with, FeasibilityStatus, SolverOptions,
};
use crate::piecewise::PiecewiseMatrixFunction;
use crate::plant::JumpSystemMaps;
use crate::riccati::{
    expected_cost, recover_original_input, riccati_iterate, spectral_radius_surrogate, RiccatiReport,
    RiccatiSettings, SpectralRadius,
};
use crate::simulate::InitialSpec;

pub const TOOL: &str = "delaylq";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tool name, version and scenario hash stamped on every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: config_hash.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    Stabilizability,
    Detectability,
    DelayIndependent,
}

impl std::fmt::Display for Certificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Certificate::Stabilizability => "stabilizability",
            Certificate::Detectability => "detectability",
            Certificate::DelayIndependent => "delay-independent",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub kappa: KappaSettings,
    pub epsilon: f64,
    pub solver: SolverOptions,
}

/// One certification attempt at a fixed resolution.
#[derive(Debug, Clone, Serialize)]
pub struct CertificationRun {
    pub certificate: Certificate,
    pub r: usize,
    pub boxes: usize,
    pub status: FeasibilityStatus,
    /// Independently rechecked minimum eigenvalue.
    pub margin: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub solve_secs: f64,
    pub total_secs: f64,
    pub message: String,
    /// `κ_i` (stabilizability) or `κ_{A,i}` (detectability).
    pub kappa: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_w: Option<Vec<f64>>,
    /// Extracted `F_i` or `L_i`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<PiecewiseMatrixFunction>,
    /// Second-moment spectral radius of the extracted closed loop.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SpectralRadius>,
}

impl CertificationRun {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa
            .iter()
            .chain(self.kappa_w.iter().flatten())
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Builds the `r`-grid, estimates κ, assembles, solves and checks the gains.
pub fn certify(
    maps: &JumpSystemMaps,
    kernel: Arc<dyn TransitionKernel>,
    r: usize,
    which: Certificate,
    opts: &CertifyOptions,
) -> Result<CertificationRun> {
    let start = Instant::now();
    let mut grid = build_grid(kernel, r)?;
    let layout = grid.layout();
    let (result, kappa, kappa_w, closed_loop) = match which {
        Certificate::Stabilizability | Certificate::DelayIndependent => {
            let k = estimate_kappa_stab(maps, &grid, opts.kappa)?;
            let kappa = k.values.clone();
            grid.kappa_stab = Some(k);
            let mut lmi = if which == Certificate::Stabilizability {
                assemble_stabilizability_lmi(maps, &grid)?
            } else {
                assemble_delay_independent_lmi(maps, &grid)?
            };
            lmi.problem.epsilon = opts.epsilon;
            let res = solve_feasibility_with(&lmi.problem, &opts.solver)?;
            let cl = if res.is_feasible() {
                let f = extract_feedback_gains(&lmi, &res, layout.clone())?;
                let acl = stab_closed_loop(maps, &grid, &f)?;
                Some((f, acl))
            } else {
                None
            };
            (res, kappa, None, cl)
        }
        Certificate::Detectability => {
            let k = estimate_kappa_det(maps, &grid, opts.kappa)?;
            let (ka, kw) = (k.kappa_a.clone(), k.kappa_w.clone());
            grid.kappa_det = Some(k);
            let mut lmi = assemble_detectability_lmi(maps, &grid)?;
            lmi.problem.epsilon = opts.epsilon;
            let res = solve_feasibility_with(&lmi.problem, &opts.solver)?;
            let cl = if res.is_feasible() {
                let l = extract_observer_gains(&lmi, &res, layout.clone())?;
                let acl = grid
                    .centers()
                    .iter()
                    .zip(&l.values)
                    .map(|(c, li)| {
                        let jm = maps.evaluate(c)?;
                        Ok(&jm.abar + li * &jm.m)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some((l, acl))
            } else {
                None
            };
            (res, ka, Some(kw), cl)
        }
    };
    let (gains, surrogate) = match closed_loop {
        Some((g, acl)) => {
            let rho = spectral_radius_surrogate(&acl, grid.weight_table())?;
            (Some(g), Some(rho))
        }
        None => (None, None),
    };
    Ok(CertificationRun {
        certificate: which,
        r,
        boxes: grid.len(),
        status: result.status,
        margin: result.margin,
        epsilon: result.epsilon,
        iterations: result.iterations,
        solve_secs: result.wallclock_secs,
        total_secs: start.elapsed().as_secs_f64(),
        message: result.message,
        kappa,
        kappa_w,
        gains,
        surrogate,
    })
}

fn stab_closed_loop(
    maps: &JumpSystemMaps,
    grid: &GridModel,
    f: &PiecewiseMatrixFunction,
) -> Result<Vec<nalgebra::DMatrix<f64>>> {
    grid.centers()
        .iter()
        .zip(&f.values)
        .map(|(c, fi)| {
            let (a, b) = maps.dynamics(c)?;
            Ok(a + b * fi)
        })
        .collect()
}

/// Doubles `r` from `r0` until feasible or the grid would exceed `max_boxes`.
pub fn certify_sweep(
    maps: &JumpSystemMaps,
    kernel: Arc<dyn TransitionKernel>,
    r0: usize,
    which: Certificate,
    opts: &CertifyOptions,
    max_boxes: usize,
) -> Result<Vec<CertificationRun>> {
    let p = kernel.order() as u32;
    let mut runs = Vec::new();
    let mut r = r0.max(1);
    loop {
        let boxes = r.checked_pow(p).unwrap_or(usize::MAX);
        if boxes > max_boxes {
            if runs.is_empty() {
                return Err(Error::Resource {
                    what: "grid boxes N",
                    requested: boxes,
                    cap: max_boxes,
                });
            }
            break;
        }
        let run = certify(maps, kernel.clone(), r, which, opts)?;
        let done = run.is_feasible();
        runs.push(run);
        if done {
            break;
        }
        r *= 2;
    }
    Ok(runs)
}

/// Riccati solve plus the original-coordinate controller.
#[derive(Debug, Clone, Serialize)]
pub struct Synthesis {
    pub report: RiccatiReport,
    /// `K_orig`, acting on `ξ` for the original input; present when converged.
    pub gain_original: Option<PiecewiseMatrixFunction>,
    /// `E(ξ₀ᵀ S(φ₀) ξ₀)` for the supplied initial distribution.
    pub predicted_cost: Option<f64>,
}

pub fn synthesize(
    maps: &JumpSystemMaps,
    grid: &GridModel,
    settings: RiccatiSettings,
    initial: Option<&InitialSpec>,
) -> Result<Synthesis> {
    let report = riccati_iterate(maps, grid, None, settings)?;
    let gain_original = match &report.gain {
        Some(k) => Some(recover_original_input(maps, k)?),
        None => None,
    };
    let predicted_cost = match (report.converged(), initial) {
        (true, Some(init)) => Some(expected_cost(&report.solution, init)?),
        _ => None,
    };
    Ok(Synthesis {
        report,
        gain_original,
        predicted_cost,
    })
}

/// Exported controller: what `simulate` and `spectral-radius` consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFile {
    pub provenance: Provenance,
    /// `K_orig`: `u_k = K_orig(φ_k) ξ_k`.
    pub gain: PiecewiseMatrixFunction,
    /// `K` in the cross-term-free coordinates.
    pub gain_transformed: PiecewiseMatrixFunction,
    /// Riccati solution `S_i`.
    pub solution: PiecewiseMatrixFunction,
}

impl GainFile {
    pub fn from_synthesis(s: &Synthesis, provenance: Provenance) -> Result<Self> {
        match (&s.gain_original, &s.report.gain) {
            (Some(g), Some(k)) => Ok(Self {
                provenance,
                gain: g.clone(),
                gain_transformed: k.clone(),
                solution: s.report.solution.clone(),
            }),
            _ => Err(Error::Precondition(format!(
                "no gain to export; {}",
                s.report.diagnostic()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gain.validate()?;
        self.gain_transformed.validate()?;
        self.solution.validate()?;
        if self.gain.layout != self.solution.layout || self.gain_transformed.layout != self.gain.layout {
            return Err(Error::Dimension("gain file layouts disagree".into()));
        }
        Ok(())
    }

    /// Checks the grid against a scenario's kernel and the gain against its plant.
    pub fn check_against(&self, maps: &JumpSystemMaps, kernel: &dyn TransitionKernel) -> Result<()> {
        self.validate()?;
        let l = &self.gain.layout;
        let (lo, hi) = kernel.bounds();
        let r = l.splits_per_axis;
        let scale = (hi - lo).abs().max(1.0);
        if l.order != kernel.order()
            || (l.split_points[0] - lo).abs() > 1e-12 * scale
            || (l.split_points[r] - hi).abs() > 1e-12 * scale
        {
            return Err(Error::Dimension(format!(
                "gain grid (order {}, [{}, {}]) does not match the scenario kernel (order {}, [{lo}, {hi}])",
                l.order,
                l.split_points[0],
                l.split_points[r],
                kernel.order()
            )));
        }
        let plant = maps.plant();
        if self.gain.shape() != (plant.input_dim(), plant.lifted_dim()) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, the plant needs {}×{}",
                self.gain.shape(),
                plant.input_dim(),
                plant.lifted_dim()
            )));
        }
        Ok(())
    }
}
