//! Monte Carlo closed-loop simulation of the sampled-data loop with exact
//! intersample propagation and continuous-time cost accounting.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::GridLayout;
use crate::io::{fmt_f64, write_csv};
use crate::kernel::{check_in_space, open_unit, stream_rng, DelayVector, TransitionKernel};
use crate::piecewise::PiecewiseMatrixFunction;
use crate::plant::{JumpSystemMaps, Plant};
use crate::quadrature::GaussLegendre;

/// Nodes per smooth segment of the continuous cost quadrature.
pub const COST_NODES: usize = 16;
pub const DEFAULT_SAMPLES_PER_PERIOD: usize = 20;
/// Tolerance on `‖ξ_{k+1} − A(φ_k)ξ_k − B(φ_k)u_k‖_∞`.
pub const ENDPOINT_TOL: f64 = 1e-10;

/// Distribution of the initial lifted state `ξ₀ = (x₀, u₋₁)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateInit {
    Point { x0: Vec<f64>, u_prev: Vec<f64> },
    /// Gaussian on the lifted state.
    Gaussian {
        mean: Vec<f64>,
        #[serde(with = "crate::io::matrix")]
        cov: DMatrix<f64>,
    },
    /// Independent uniform coordinates of the lifted state.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

/// Distribution of `φ₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DelayInit {
    Point { phi: Vec<f64> },
    /// Every coordinate uniform on `[τ_min, τ_max]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub state: StateInit,
    pub delays: DelayInit,
}

impl InitialSpec {
    pub fn point(x0: Vec<f64>, u_prev: Vec<f64>, phi: Vec<f64>) -> Self {
        Self {
            state: StateInit::Point { x0, u_prev },
            delays: DelayInit::Point { phi },
        }
    }

    /// Checks dimensions against the plant and kernel.
    pub fn validate(&self, plant: &Plant, kernel: &dyn TransitionKernel) -> Result<()> {
        let (n, m) = (plant.state_dim(), plant.input_dim());
        let k = n + m;
        match &self.state {
            StateInit::Point { x0, u_prev } => {
                if x0.len() != n || u_prev.len() != m {
                    return Err(Error::Config(format!(
                        "initial.state: x0 needs {n} and u_prev {m} entries, got {} and {}",
                        x0.len(),
                        u_prev.len()
                    )));
                }
            }
            StateInit::Gaussian { mean, cov } => {
                if mean.len() != k || cov.shape() != (k, k) {
                    return Err(Error::Config(format!(
                        "initial.state: gaussian mean/cov must have lifted dimension {k}"
                    )));
                }
                let scale = crate::linalg::max_abs(cov).max(1.0);
                if crate::linalg::max_abs_diff(cov, &cov.transpose()) > 1e-9 * scale
                    || crate::linalg::min_eigenvalue(cov) < -1e-9 * scale
                {
                    return Err(Error::Config(
                        "initial.state: gaussian cov must be symmetric positive semidefinite".into(),
                    ));
                }
            }
            StateInit::Uniform { lo, hi } => {
                if lo.len() != k || hi.len() != k || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                    return Err(Error::Config(format!(
                        "initial.state: uniform lo/hi must have {k} entries with lo ≤ hi"
                    )));
                }
            }
        }
        if let DelayInit::Point { phi } = &self.delays {
            check_in_space(kernel, phi)
                .map_err(|e| Error::Config(format!("initial.delays.phi: {e}")))?;
        }
        Ok(())
    }

    pub fn sample_state(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        self.state.sample(rng)
    }

    pub fn sample_delays(&self, kernel: &dyn TransitionKernel, rng: &mut dyn RngCore) -> DelayVector {
        match &self.delays {
            DelayInit::Point { phi } => DelayVector::new(phi.clone()),
            DelayInit::Uniform => {
                let (lo, hi) = kernel.bounds();
                DelayVector::new(
                    (0..kernel.order())
                        .map(|_| (lo + (hi - lo) * open_unit(rng)).min(hi))
                        .collect(),
                )
            }
        }
    }
}

impl StateInit {
    pub fn mean(&self) -> DVector<f64> {
        match self {
            StateInit::Point { x0, u_prev } => DVector::from_iterator(
                x0.len() + u_prev.len(),
                x0.iter().chain(u_prev).copied(),
            ),
            StateInit::Gaussian { mean, .. } => DVector::from_column_slice(mean),
            StateInit::Uniform { lo, hi } => {
                DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)))
            }
        }
    }

    /// `E(ξ₀ξ₀ᵀ)`.
    pub fn second_moment(&self, dim: usize) -> Result<DMatrix<f64>> {
        let mu = self.mean();
        if mu.len() != dim {
            return Err(Error::Dimension(format!(
                "initial state has {} entries, expected {dim}",
                mu.len()
            )));
        }
        let outer = &mu * mu.transpose();
        Ok(match self {
            StateInit::Point { .. } => outer,
            StateInit::Gaussian { cov, .. } => cov + outer,
            StateInit::Uniform { lo, hi } => {
                let var = DVector::from_iterator(dim, lo.iter().zip(hi).map(|(a, b)| (b - a).powi(2) / 12.0));
                DMatrix::from_diagonal(&var) + outer
            }
        })
    }

    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        match self {
            StateInit::Point { .. } => self.mean(),
            StateInit::Uniform { lo, hi } => DVector::from_iterator(
                lo.len(),
                lo.iter().zip(hi).map(|(a, b)| a + (b - a) * open_unit(rng)),
            ),
            StateInit::Gaussian { mean, cov } => {
                let normal = Normal::new(0.0, 1.0).expect("standard normal");
                let eig = crate::linalg::symmetrize(cov).symmetric_eigen();
                let z = DVector::from_iterator(
                    mean.len(),
                    eig.eigenvalues
                        .iter()
                        .map(|l| l.max(0.0).sqrt() * normal.inverse_cdf(open_unit(rng))),
                );
                DVector::from_column_slice(mean) + eig.eigenvectors * z
            }
        }
    }
}

impl DelayInit {
    /// `P(φ₀ ∈ ℬ_i)` for every box of `layout`.
    pub fn box_probabilities(&self, layout: &GridLayout) -> Result<Vec<f64>> {
        let n = layout.len();
        match self {
            DelayInit::Point { phi } => {
                let mut p = vec![0.0; n];
                p[layout.lookup(phi)?] = 1.0;
                Ok(p)
            }
            DelayInit::Uniform => {
                let s = &layout.split_points;
                let r = layout.splits_per_axis;
                let total = s[r] - s[0];
                if total <= 0.0 {
                    // degenerate delay space: every box has zero width except by convention the last
                    let mut p = vec![0.0; n];
                    p[n - 1] = 1.0;
                    return Ok(p);
                }
                Ok((0..n)
                    .map(|i| {
                        let mut idx = i;
                        let mut prob = 1.0;
                        for _ in 0..layout.order {
                            let a = idx % r;
                            idx /= r;
                            prob *= (s[a + 1] - s[a]) / total;
                        }
                        prob
                    })
                    .collect())
            }
        }
    }
}

/// State feedback acting on the lifted state: `u_k = K(φ_k) ξ_k`.
#[derive(Debug, Clone)]
pub enum Controller {
    /// Box-lookup gain table.
    Piecewise(PiecewiseMatrixFunction),
    /// One gain for every delay.
    Static(DMatrix<f64>),
}

impl Controller {
    pub fn zero(plant: &Plant) -> Self {
        Controller::Static(DMatrix::zeros(plant.input_dim(), plant.lifted_dim()))
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            Controller::Piecewise(f) => f.shape(),
            Controller::Static(k) => k.shape(),
        }
    }

    pub fn gain(&self, phi: &[f64]) -> Result<&DMatrix<f64>> {
        match self {
            Controller::Piecewise(f) => f.lookup(phi),
            Controller::Static(k) => Ok(k),
        }
    }
}

/// Everything needed to simulate the closed loop.
#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub maps: JumpSystemMaps,
    pub kernel: Arc<dyn TransitionKernel>,
    pub controller: Controller,
    pub initial: InitialSpec,
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
    pub samples_per_period: usize,
    /// Number of leading paths whose full traces are kept in the report.
    pub keep_traces: usize,
}

impl ClosedLoopConfig {
    pub fn validate(&self) -> Result<()> {
        let plant = self.maps.plant();
        let expected = (plant.input_dim(), plant.lifted_dim());
        if self.controller.shape() != expected {
            return Err(Error::Dimension(format!(
                "controller gain is {:?}, expected {}×{}",
                self.controller.shape(),
                expected.0,
                expected.1
            )));
        }
        let (lo, hi) = self.kernel.bounds();
        let (mlo, mhi) = self.maps.tau_bounds();
        if (lo - mlo).abs() > 1e-12 || (hi - mhi).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "kernel delay interval [{lo}, {hi}] differs from the plant's [{mlo}, {mhi}]"
            )));
        }
        if self.samples_per_period == 0 {
            return Err(Error::Config("samples_per_period must be at least 1".into()));
        }
        self.initial.validate(plant, self.kernel.as_ref())
    }
}

/// One intersample output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Sample {
    /// `‖x(t)‖² + ‖u(t)‖²`.
    pub fn energy(&self) -> f64 {
        self.x.iter().chain(&self.u).map(|v| v * v).sum()
    }
}

/// A single simulated path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathTrace {
    pub path: u64,
    /// `φ_k`, `k = 0..horizon`.
    pub phi: Vec<Vec<f64>>,
    /// `ξ_k`, `k = 0..=horizon`.
    pub xi: Vec<Vec<f64>>,
    /// `u_k`, `k = 0..horizon`.
    pub u: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
    pub max_endpoint_error: f64,
}

impl PathTrace {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }
}

/// `(x(s), held input)` on one period from `x_k`, switching inputs at `τ`.
struct Period<'a> {
    plant: &'a Plant,
    x: DVector<f64>,
    u_old: DVector<f64>,
    u_new: DVector<f64>,
    tau: f64,
    x_tau: DVector<f64>,
}

impl<'a> Period<'a> {
    fn new(plant: &'a Plant, xi: &DVector<f64>, u_new: &DVector<f64>, tau: f64) -> Self {
        let n = plant.state_dim();
        let x = xi.rows(0, n).into_owned();
        let u_old = xi.rows(n, plant.input_dim()).into_owned();
        let (a, b) = plant.propagators(tau);
        let x_tau = &a * &x + &b * &u_old;
        Self {
            plant,
            x,
            u_old,
            u_new: u_new.clone(),
            tau,
            x_tau,
        }
    }

    /// State and input at offset `s ∈ [0, h]`; the input switches at `s = τ`.
    fn at(&self, s: f64) -> (DVector<f64>, &DVector<f64>) {
        if s < self.tau {
            let (a, b) = self.plant.propagators(s);
            (&a * &self.x + &b * &self.u_old, &self.u_old)
        } else {
            let (a, b) = self.plant.propagators(s - self.tau);
            (&a * &self.x_tau + &b * &self.u_new, &self.u_new)
        }
    }

    fn end(&self) -> DVector<f64> {
        self.at(self.plant.h()).0
    }

    /// `∫ xᵀQ_c x + uᵀR_c u` over the period, 16-node Gauss–Legendre per segment.
    fn cost(&self, gl: &GaussLegendre) -> f64 {
        let q = self.plant.q_c();
        let r = self.plant.r_c();
        let h = self.plant.h();
        let mut total = 0.0;
        for (a, b, u) in [(0.0, self.tau, &self.u_old), (self.tau, h, &self.u_new)] {
            if b <= a {
                continue;
            }
            let (x0, base) = if a == 0.0 { (&self.x, 0.0) } else { (&self.x_tau, self.tau) };
            let ru = u.dot(&(r * u));
            for (s, w) in gl.on_interval(a, b) {
                let (pa, pb) = self.plant.propagators(s - base);
                let x = &pa * x0 + &pb * u;
                total += w * (x.dot(&(q * &x)) + ru);
            }
        }
        total
    }
}

fn lifted(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

/// Simulates path `path` of the ensemble (rng stream `path` of `config.seed`).
pub fn simulate_path(config: &ClosedLoopConfig, path: u64) -> Result<PathTrace> {
    simulate_path_inner(config, path, true)
}

fn simulate_path_inner(config: &ClosedLoopConfig, path: u64, record: bool) -> Result<PathTrace> {
    let plant = config.maps.plant();
    let kernel = config.kernel.as_ref();
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let h = plant.h();
    let mut rng = stream_rng(config.seed, path);
    let mut xi = config.initial.sample_state(&mut rng);
    let mut phi = config.initial.sample_delays(kernel, &mut rng);
    let spp = config.samples_per_period;
    let dt = h / spp as f64;
    let (step_a, step_b) = plant.propagators(dt);

    let mut trace = PathTrace {
        path,
        phi: Vec::with_capacity(config.horizon),
        xi: vec![xi.iter().copied().collect()],
        u: Vec::with_capacity(config.horizon),
        samples: Vec::new(),
        max_endpoint_error: 0.0,
    };
    for k in 0..config.horizon {
        check_in_space(kernel, &phi)?;
        let tau = phi[0];
        if !(tau >= 0.0 && tau < h) {
            return Err(Error::Domain {
                what: "tau",
                value: tau,
                range: format!("[0, {h})"),
            });
        }
        let u = config.controller.gain(&phi)? * &xi;
        let period = Period::new(plant, &xi, &u, tau);
        let x_next = period.end();

        let (a, b) = config.maps.dynamics(&phi)?;
        let expected = &a * &xi + &b * &u;
        let next = lifted(&x_next, &u);
        let err = (&next - &expected).amax();
        trace.max_endpoint_error = trace.max_endpoint_error.max(err);

        if record {
            // step the sample grid with the fixed propagator, restarting at the switch
            let t0 = k as f64 * h;
            let mut x = period.x.clone();
            let mut s = 0.0;
            for j in 0..spp {
                let target = j as f64 * dt;
                if j > 0 {
                    if s < tau && target >= tau {
                        x = period.at(target).0;
                    } else {
                        let held = if target < tau { &period.u_old } else { &period.u_new };
                        x = &step_a * &x + &step_b * held;
                    }
                }
                s = target;
                let held = if s < tau { &period.u_old } else { &period.u_new };
                trace.samples.push(Sample {
                    t: t0 + s,
                    x: x.iter().copied().collect(),
                    u: held.iter().copied().collect(),
                });
            }
        }

        trace.phi.push(phi.to_vec());
        trace.u.push(u.iter().copied().collect());
        trace.xi.push(next.iter().copied().collect());
        xi = next;
        phi = kernel.sample_next(&phi, &mut rng);
    }
    if record {
        trace.samples.push(Sample {
            t: config.horizon as f64 * h,
            x: xi.rows(0, n).iter().copied().collect(),
            u: xi.rows(n, m).iter().copied().collect(),
        });
    }
    Ok(trace)
}

/// Continuous and quadratic-form evaluations of the accumulated cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPair {
    pub continuous: f64,
    pub quadratic_form: f64,
}

impl CostPair {
    pub fn relative_difference(&self) -> f64 {
        let scale = self.continuous.abs().max(self.quadratic_form.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.continuous - self.quadratic_form).abs() / scale
        }
    }
}

/// Per-period costs `(∫ xᵀQ_c x + uᵀR_c u, [ξ;u]ᵀ[[Q,W],[Wᵀ,R]][ξ;u])`.
pub fn period_costs(maps: &JumpSystemMaps, trace: &PathTrace) -> Result<Vec<CostPair>> {
    let plant = maps.plant();
    let gl = GaussLegendre::new(COST_NODES);
    (0..trace.horizon())
        .map(|k| {
            let xi = DVector::from_column_slice(&trace.xi[k]);
            let u = DVector::from_column_slice(&trace.u[k]);
            let tau = trace.phi[k][0];
            let continuous = Period::new(plant, &xi, &u, tau).cost(&gl);
            let quadratic_form = maps.cost_blocks(&trace.phi[k])?.quadratic_form(&xi, &u);
            Ok(CostPair {
                continuous,
                quadratic_form,
            })
        })
        .collect()
}

/// Accumulated cost of a trace, both ways.
pub fn accumulate_cost(maps: &JumpSystemMaps, trace: &PathTrace) -> Result<CostPair> {
    let per = period_costs(maps, trace)?;
    Ok(CostPair {
        continuous: pairwise_sum(&per.iter().map(|c| c.continuous).collect::<Vec<_>>()),
        quadratic_form: pairwise_sum(&per.iter().map(|c| c.quadratic_form).collect::<Vec<_>>()),
    })
}

/// Summation over a fixed binary tree.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

fn pairwise_mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.first().map_or(0, Vec::len);
    let count = rows.len() as f64;
    (0..len)
        .map(|c| pairwise_sum(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()) / count)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngProvenance {
    pub generator: String,
    pub master_seed: u64,
    pub stream_rule: String,
}

/// Ensemble statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub paths: usize,
    pub horizon: usize,
    pub costs: Vec<CostPair>,
    /// Mean of the continuous costs.
    pub mean_cost: f64,
    pub std_error: f64,
    /// `E‖ξ_k‖²`, `k = 0..=horizon`.
    pub mean_xi_sq: Vec<f64>,
    pub time: Vec<f64>,
    /// `E(‖x(t)‖² + ‖u(t)‖²)` on `time`.
    pub mean_energy: Vec<f64>,
    pub max_endpoint_error: f64,
    pub max_cost_relative_difference: f64,
    pub rng: RngProvenance,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub traces: Vec<PathTrace>,
}

impl EnsembleReport {
    /// Whether `E‖ξ_k‖²` keeps growing over the second half of the horizon.
    pub fn growth_flagged(&self) -> bool {
        let v = &self.mean_xi_sq;
        let burn = v.len() / 2;
        v.len() > 2 && v[burn..].windows(2).all(|w| w[1] > w[0]) && v[v.len() - 1] > v[0]
    }
}

struct PathSummary {
    cost: CostPair,
    xi_sq: Vec<f64>,
    energy: Vec<f64>,
    endpoint: f64,
    trace: Option<PathTrace>,
}

/// Runs `config.paths` independent paths; bit-identical for equal seeds.
pub fn run_ensemble(config: &ClosedLoopConfig) -> Result<EnsembleReport> {
    config.validate()?;
    if config.paths == 0 {
        return Err(Error::Config("simulation.paths must be at least 1".into()));
    }
    let summaries: Vec<PathSummary> = (0..config.paths as u64)
        .into_par_iter()
        .map(|p| {
            let trace = simulate_path_inner(config, p, true)?;
            let cost = accumulate_cost(&config.maps, &trace)?;
            let xi_sq = trace.xi.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
            let energy = trace.samples.iter().map(Sample::energy).collect();
            let endpoint = trace.max_endpoint_error;
            let keep = (p as usize) < config.keep_traces;
            Ok(PathSummary {
                cost,
                xi_sq,
                energy,
                endpoint,
                trace: keep.then_some(trace),
            })
        })
        .collect::<Result<_>>()?;

    let count = summaries.len() as f64;
    let costs: Vec<CostPair> = summaries.iter().map(|s| s.cost).collect();
    let cont: Vec<f64> = costs.iter().map(|c| c.continuous).collect();
    let mean_cost = pairwise_sum(&cont) / count;
    let var = if summaries.len() > 1 {
        pairwise_sum(&cont.iter().map(|c| (c - mean_cost).powi(2)).collect::<Vec<_>>()) / (count - 1.0)
    } else {
        0.0
    };
    let xi_rows: Vec<Vec<f64>> = summaries.iter().map(|s| s.xi_sq.clone()).collect();
    let energy_rows: Vec<Vec<f64>> = summaries.iter().map(|s| s.energy.clone()).collect();
    let h = config.maps.plant().h();
    let spp = config.samples_per_period;
    let time = (0..=config.horizon * spp)
        .map(|j| j as f64 * h / spp as f64)
        .collect();
    Ok(EnsembleReport {
        paths: config.paths,
        horizon: config.horizon,
        mean_cost,
        std_error: (var / count).sqrt(),
        max_endpoint_error: summaries.iter().map(|s| s.endpoint).fold(0.0, f64::max),
        max_cost_relative_difference: costs.iter().map(CostPair::relative_difference).fold(0.0, f64::max),
        costs,
        mean_xi_sq: pairwise_mean_columns(&xi_rows),
        time,
        mean_energy: pairwise_mean_columns(&energy_rows),
        rng: RngProvenance {
            generator: "ChaCha8".into(),
            master_seed: config.seed,
            stream_rule: "path i draws from stream i of the master seed".into(),
        },
        traces: summaries.into_iter().filter_map(|s| s.trace).collect(),
    })
}

/// `(path, k, τ_k)` rows.
pub fn write_delay_csv(path: &Path, traces: &[PathTrace]) -> Result<()> {
    let rows = traces.iter().flat_map(|t| {
        t.phi.iter().enumerate().map(move |(k, phi)| {
            vec![t.path.to_string(), k.to_string(), fmt_f64(phi[0])]
        })
    });
    write_csv(path, &["path", "k", "tau"], rows)
}

/// `(path, t, ‖x‖²+‖u‖², x…, u…)` rows.
pub fn write_trajectory_csv(path: &Path, traces: &[PathTrace]) -> Result<()> {
    let (n, m) = traces
        .first()
        .and_then(|t| t.samples.first())
        .map_or((0, 0), |s| (s.x.len(), s.u.len()));
    let mut header: Vec<String> = vec!["path".into(), "t".into(), "energy".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = traces.iter().flat_map(|t| {
        t.samples.iter().map(move |s| {
            let mut row = vec![t.path.to_string(), fmt_f64(s.t), fmt_f64(s.energy())];
            row.extend(s.x.iter().chain(&s.u).map(|v| fmt_f64(*v)));
            row
        })
    });
    write_csv(path, &header_refs, rows)
}

/// How the no-delay baseline regulator weighs the sampled-data cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineVariant {
    /// Textbook discrete LQR on `(A_d, B_d)` with weights `Q_c`, `R_c`.
    DiscreteQr,
    /// LQR on the exact sampled-data cost blocks at zero delay (with cross terms).
    SampledData,
}

/// A delay-free reference run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRun {
    pub variant: BaselineVariant,
    #[serde(with = "crate::io::matrix")]
    pub gain: DMatrix<f64>,
    pub cost: CostPair,
    pub trace: PathTrace,
}

/// Simulates the plant with zero delays under a conventional discrete-time LQ gain.
pub fn no_delay_baseline(
    plant: &Plant,
    variant: BaselineVariant,
    state: &StateInit,
    horizon: usize,
    samples_per_period: usize,
) -> Result<BaselineRun> {
    let maps = JumpSystemMaps::new(plant.clone(), 0.0, 0.0)?;
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let gain = match variant {
        BaselineVariant::DiscreteQr => {
            let kx = crate::riccati::dlqr(maps.a_d(), maps.b_d(), plant.q_c(), plant.r_c())?;
            let mut k = DMatrix::zeros(m, n + m);
            k.view_mut((0, 0), (m, n)).copy_from(&kx);
            k
        }
        BaselineVariant::SampledData => {
            let jm = maps.evaluate(&[0.0])?;
            let kbar = crate::riccati::dlqr(&jm.abar, &jm.b, &jm.m, &jm.r)?;
            kbar - jm.cross_gain()?
        }
    };
    let kernel = crate::kernel::DiracKernel::new(DelayVector::new(vec![0.0]), 0.0, 0.0)?;
    let config = ClosedLoopConfig {
        maps,
        kernel: Arc::new(kernel),
        controller: Controller::Static(gain.clone()),
        initial: InitialSpec {
            state: state.clone(),
            delays: DelayInit::Point { phi: vec![0.0] },
        },
        horizon,
        paths: 1,
        seed: 0,
        samples_per_period,
        keep_traces: 1,
    };
    config.validate()?;
    let trace = simulate_path(&config, 0)?;
    let cost = accumulate_cost(&config.maps, &trace)?;
    Ok(BaselineRun {
        variant,
        gain,
        cost,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{TruncNormalAvgKernel, UniformKernel};

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        crate::linalg::from_rows(&v).unwrap()
    }

    fn config(plant: Plant, kernel: Arc<dyn TransitionKernel>, gain: DMatrix<f64>, horizon: usize) -> ClosedLoopConfig {
        let (lo, hi) = kernel.bounds();
        let n = plant.state_dim();
        let mm = plant.input_dim();
        ClosedLoopConfig {
            maps: JumpSystemMaps::new(plant, lo, hi).unwrap(),
            kernel,
            controller: Controller::Static(gain),
            initial: InitialSpec {
                state: StateInit::Point {
                    x0: vec![1.0; n],
                    u_prev: vec![0.5; mm],
                },
                delays: DelayInit::Uniform,
            },
            horizon,
            paths: 3,
            seed: 7,
            samples_per_period: 5,
            keep_traces: 3,
        }
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let plant = Plant::new(m(&[&[0.0]]), m(&[&[1.0]]), m(&[&[1.0]]), m(&[&[1.0]]), 1.0).unwrap();
        let kernel = Arc::new(UniformKernel::new(1, 0.0, 0.5).unwrap());
        let mut cfg = config(plant, kernel, DMatrix::zeros(1, 2), 4);
        cfg.initial.state = StateInit::Point {
            x0: vec![1.0],
            u_prev: vec![0.0],
        };
        let t = simulate_path(&cfg, 0).unwrap();
        for s in &t.samples {
            assert_eq!(s.x, vec![1.0]);
            assert_eq!(s.u, vec![0.0]);
        }
        let c = accumulate_cost(&cfg.maps, &t).unwrap();
        assert!((c.continuous - 4.0).abs() < 1e-12);
        assert!((c.quadratic_form - 4.0).abs() < 1e-12);
    }

    #[test]
    fn hand_integrable_scalar_cost() {
        // a_c = 0, b_c = 1: x grows linearly under a held input
        let plant = Plant::new(m(&[&[0.0]]), m(&[&[1.0]]), m(&[&[2.0]]), m(&[&[3.0]]), 1.0).unwrap();
        let kernel = Arc::new(crate::kernel::DiracKernel::new(DelayVector::new(vec![0.25]), 0.0, 0.5).unwrap());
        let mut cfg = config(plant, kernel, m(&[&[0.0, 0.0]]), 1);
        cfg.initial = InitialSpec::point(vec![1.0], vec![2.0], vec![0.25]);
        let t = simulate_path(&cfg, 0).unwrap();
        // x(s) = 1 + 2s on [0, 1/4], then constant 1.5
        let hand = 2.0 * ((1.5f64.powi(3) - 1.0) / 6.0 + 0.75 * 1.5 * 1.5) + 3.0 * 4.0 * 0.25;
        let c = accumulate_cost(&cfg.maps, &t).unwrap();
        assert!((c.continuous - hand).abs() < 1e-10, "{} vs {hand}", c.continuous);
        assert!((c.quadratic_form - hand).abs() < 1e-10);
    }

    #[test]
    fn endpoints_and_costs_agree() {
        let plant = Plant::new(
            m(&[&[0.2, 1.0], &[-2.0, -0.3]]),
            m(&[&[0.0], &[1.0]]),
            m(&[&[1.0, 0.2], &[0.2, 0.5]]),
            m(&[&[0.7]]),
            0.3,
        )
        .unwrap();
        let kernel = Arc::new(TruncNormalAvgKernel::new(0.02, 0.0, 0.1).unwrap());
        let gain = m(&[&[-0.5, -0.4, 0.1]]);
        let cfg = config(plant, kernel, gain, 10);
        let rep = run_ensemble(&cfg).unwrap();
        assert!(rep.max_endpoint_error <= ENDPOINT_TOL);
        assert!(rep.max_cost_relative_difference <= 1e-6);
        assert_eq!(rep.time.len(), rep.mean_energy.len());
        assert_eq!(rep.mean_xi_sq.len(), 11);
        let again = run_ensemble(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn uniform_box_probabilities() {
        let layout = GridLayout {
            order: 2,
            splits_per_axis: 2,
            split_points: vec![0.0, 0.01, 0.03],
        };
        let p = DelayInit::Uniform.box_probabilities(&layout).unwrap();
        let expect = [1.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 4.0 / 9.0];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pairwise_sum_is_exact_for_small_integers() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }
}
