//! `delaylq` command-line tool.
//!
//! Exit codes: 0 ok, 2 config error, 3 not certified (infeasible within
//! budget or numerical failure), 4 Riccati non-convergence, 5 i/o or gain-file
//! mismatch, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use delaylq::config::{Scenario, ScenarioConfig};
use delaylq::grid::build_grid;
use delaylq::io::{write_csv, write_json, Rows};
use delaylq::linalg::{spd_solve, symmetrize};
use delaylq::pipeline::{certify, certify_sweep, synthesize, Certificate, CertifyOptions, GainFile, Provenance};
use delaylq::plant::{assemble_cost_blocks, assemble_jump_matrices, CostIntegration};
use delaylq::riccati::{expected_cost, spectral_radius_surrogate, RiccatiSettings};
use delaylq::simulate::{
    no_delay_baseline, run_ensemble, write_delay_csv, write_trajectory_csv, BaselineVariant, ClosedLoopConfig,
    Controller,
};
use delaylq::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_RICCATI: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "delaylq", version, about = "Delay-dependent LQ synthesis for sampled-data systems with Markovian sensor delays")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for reports and CSV files.
    #[arg(long, global = true, default_value = "delaylq-out")]
    out_dir: PathBuf,
    /// Overrides grid.r.
    #[arg(long, global = true)]
    grid_splits: Option<usize>,
    /// Overrides solver.epsilon.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Overrides simulation.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides simulation.paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Overrides simulation.horizon.
    #[arg(long, global = true)]
    horizon: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Prints A, B, Q, W, R, Ā and M at the given delays.
    Discretize {
        #[arg(long = "tau", required = true)]
        taus: Vec<f64>,
    },
    /// Grid, κ, LMI assembly and feasibility solve.
    Certify {
        /// Certificates to check; defaults to stabilizability and detectability.
        #[arg(long, value_enum)]
        which: Vec<Which>,
        /// Doubles r until feasible or the grid.max_boxes cap.
        #[arg(long)]
        refine_until_feasible: bool,
        /// Overrides solver.budget.
        #[arg(long)]
        budget: Option<usize>,
        /// Overrides grid.safety.
        #[arg(long)]
        safety: Option<f64>,
    },
    /// Riccati iteration and export of the gain table.
    Synthesize {
        /// Also runs both certificates at the same resolution first.
        #[arg(long)]
        certify: bool,
        /// Overrides riccati.tol.
        #[arg(long)]
        tol: Option<f64>,
        /// Overrides riccati.max_iters.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Monte Carlo closed-loop ensemble.
    Simulate {
        #[command(flatten)]
        gain: GainArg,
    },
    /// Second-moment spectral radius of the closed loop on the gain grid.
    SpectralRadius {
        #[command(flatten)]
        gain: GainArg,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct GainArg {
    /// Gain file written by `synthesize`.
    #[arg(long)]
    gains: Option<PathBuf>,
    /// Uses u ≡ 0 instead of a gain file.
    #[arg(long)]
    zero_gain: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    Stabilizability,
    Detectability,
    DelayIndependent,
}

impl From<Which> for Certificate {
    fn from(w: Which) -> Self {
        match w {
            Which::Stabilizability => Certificate::Stabilizability,
            Which::Detectability => Certificate::Detectability,
            Which::DelayIndependent => Certificate::DelayIndependent,
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Io(_) | Error::Json(_) => EXIT_IO,
            _ => EXIT_OTHER,
        };
        Failure::new(code, e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let scenario = load(&cli.common)?;
    let prov = Provenance::new(scenario.config.hash());
    match cli.command {
        Command::Discretize { taus } => discretize(&scenario, &prov, &cli.common, &taus),
        Command::Certify {
            which,
            refine_until_feasible,
            budget,
            safety,
        } => {
            let mut cfg = scenario.config.grid.clone();
            if let Some(s) = safety {
                cfg.safety = s;
            }
            let mut solver = scenario.config.solver.options();
            if let Some(b) = budget {
                solver.max_iters = b;
            }
            if solver.max_iters == 0 || !(cfg.safety >= 1.0) {
                return Err(Failure::new(EXIT_CONFIG, "--budget must be ≥ 1 and --safety ≥ 1"));
            }
            let opts = CertifyOptions {
                kappa: cfg.kappa_settings(),
                epsilon: scenario.config.solver.epsilon,
                solver,
            };
            let which: Vec<Certificate> = if which.is_empty() {
                vec![Certificate::Stabilizability, Certificate::Detectability]
            } else {
                which.into_iter().map(Certificate::from).collect()
            };
            certify_cmd(&scenario, &prov, &cli.common, &which, refine_until_feasible, &opts)
        }
        Command::Synthesize { certify, tol, max_iters } => {
            let mut settings = scenario.config.riccati;
            if let Some(t) = tol {
                settings.tol = t;
            }
            if let Some(m) = max_iters {
                settings.max_iters = m;
            }
            synthesize_cmd(&scenario, &prov, &cli.common, settings, certify)
        }
        Command::Simulate { gain } => simulate_cmd(&scenario, &prov, &cli.common, &gain),
        Command::SpectralRadius { gain } => spectral_cmd(&scenario, &prov, &cli.common, &gain),
    }
}

fn load(common: &Common) -> std::result::Result<Scenario, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_CONFIG, "--config is required"))?;
    let mut cfg = ScenarioConfig::from_path(path).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    if let Some(r) = common.grid_splits {
        cfg.grid.r = r;
    }
    if let Some(e) = common.epsilon {
        cfg.solver.epsilon = e;
    }
    let sim = &mut cfg.simulation;
    if let Some(s) = common.seed {
        sim.seed = s;
    }
    if let Some(p) = common.paths {
        sim.paths = p;
    }
    if let Some(h) = common.horizon {
        sim.horizon = h;
    }
    cfg.build().map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
}

fn out_path(common: &Common, name: &str) -> PathBuf {
    common.out_dir.join(name)
}

fn write_report<T: Serialize>(path: &Path, value: &T) -> Outcome {
    write_json(path, value).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn discretize(scenario: &Scenario, prov: &Provenance, common: &Common, taus: &[f64]) -> Outcome {
    let plant = scenario.plant();
    let mut points = Vec::new();
    for &tau in taus {
        let bad = |e: Error| Failure::new(EXIT_CONFIG, format!("--tau {tau}: {e}"));
        let (a, b) = assemble_jump_matrices(plant, &[tau]).map_err(bad)?;
        let c = assemble_cost_blocks(plant, &[tau], CostIntegration::VanLoan).map_err(bad)?;
        let rinv_wt = spd_solve(&c.r, &c.w.transpose(), "R(φ)")?;
        let abar = &a - &b * &rinv_wt;
        let m = symmetrize(&(&c.q - &c.w * &rinv_wt));
        points.push(json!({
            "tau": tau,
            "a": Rows(a), "b": Rows(b),
            "q": Rows(c.q), "w": Rows(c.w), "r": Rows(c.r),
            "abar": Rows(abar), "m": Rows(m),
        }));
    }
    let report = json!({ "provenance": prov, "points": points });
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    write_report(&out_path(common, "discretize.json"), &report)
}

fn certify_cmd(
    scenario: &Scenario,
    prov: &Provenance,
    common: &Common,
    which: &[Certificate],
    sweep: bool,
    opts: &CertifyOptions,
) -> Outcome {
    let r = scenario.config.grid.r;
    let mut all = Vec::new();
    let mut certified = true;
    for &w in which {
        let runs = if sweep {
            certify_sweep(&scenario.maps, scenario.kernel.clone(), r, w, opts, scenario.config.grid.max_boxes)?
        } else {
            vec![certify(&scenario.maps, scenario.kernel.clone(), r, w, opts)?]
        };
        for run in &runs {
            let rho = run
                .surrogate
                .map(|s| format!(", closed-loop surrogate {:.6}", s.estimate))
                .unwrap_or_default();
            println!(
                "{w} r={} N={}: {} (margin {:.3e}, ε {:.1e}, {} iterations, κmax {:.4}, {:.1}s{rho})",
                run.r,
                run.boxes,
                run.status,
                run.margin,
                run.epsilon,
                run.iterations,
                run.kappa_max(),
                run.total_secs
            );
            if !run.is_feasible() && !run.message.is_empty() {
                println!("  solver: {}", run.message);
            }
        }
        certified &= runs.last().is_some_and(|r| r.is_feasible());
        all.extend(runs);
    }
    write_report(
        &out_path(common, "certify_report.json"),
        &json!({ "provenance": prov, "runs": all }),
    )?;
    if certified {
        Ok(())
    } else {
        Err(Failure::new(EXIT_INFEASIBLE, "not certified at the tried resolutions"))
    }
}

fn synthesize_cmd(
    scenario: &Scenario,
    prov: &Provenance,
    common: &Common,
    settings: RiccatiSettings,
    with_certify: bool,
) -> Outcome {
    let r = scenario.config.grid.r;
    let grid = build_grid(scenario.kernel.clone(), r)?;
    if with_certify {
        let opts = CertifyOptions {
            kappa: scenario.config.grid.kappa_settings(),
            epsilon: scenario.config.solver.epsilon,
            solver: scenario.config.solver.options(),
        };
        for w in [Certificate::Stabilizability, Certificate::Detectability] {
            let run = certify(&scenario.maps, scenario.kernel.clone(), r, w, &opts)?;
            println!("{w} r={r}: {} (margin {:.3e})", run.status, run.margin);
        }
    }
    let s = synthesize(&scenario.maps, &grid, settings, Some(&scenario.config.simulation.initial))?;
    let report = json!({
        "provenance": prov,
        "r": r,
        "boxes": grid.len(),
        "riccati": &s.report,
        "gain_original": &s.gain_original,
        "predicted_cost": s.predicted_cost,
    });
    write_report(&out_path(common, "riccati_report.json"), &report)?;
    println!("riccati: {}", s.report.diagnostic());
    if !s.report.converged() {
        return Err(Failure::new(EXIT_RICCATI, s.report.diagnostic()));
    }
    if let Some(rho) = s.report.surrogate {
        println!("closed-loop surrogate spectral radius {:.6}", rho.estimate);
    }
    if let Some(c) = s.predicted_cost {
        println!("predicted optimal cost {c:.6}");
    }
    let file = GainFile::from_synthesis(&s, prov.clone())?;
    let path = out_path(common, "gains.json");
    write_report(&path, &file)?;
    println!("gains written to {}", path.display());
    Ok(())
}

fn load_gains(scenario: &Scenario, gain: &GainArg) -> std::result::Result<Option<GainFile>, Failure> {
    let Some(path) = &gain.gains else {
        return Ok(None);
    };
    let io = |e: String| Failure::new(EXIT_IO, format!("{}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let file: GainFile = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
    file.check_against(&scenario.maps, scenario.kernel.as_ref())
        .map_err(|e| io(e.to_string()))?;
    Ok(Some(file))
}

fn simulate_cmd(scenario: &Scenario, prov: &Provenance, common: &Common, gain: &GainArg) -> Outcome {
    let file = load_gains(scenario, gain)?;
    let sim = &scenario.config.simulation;
    let controller = match &file {
        Some(f) => Controller::Piecewise(f.gain.clone()),
        None => Controller::zero(scenario.plant()),
    };
    let config = ClosedLoopConfig {
        maps: scenario.maps.clone(),
        kernel: scenario.kernel.clone(),
        controller,
        initial: sim.initial.clone(),
        horizon: sim.horizon,
        paths: sim.paths,
        seed: sim.seed,
        samples_per_period: sim.samples_per_period,
        keep_traces: sim.keep_traces,
    };
    let report = run_ensemble(&config)?;
    let predicted = match &file {
        Some(f) => Some(expected_cost(&f.solution, &sim.initial)?),
        None => None,
    };
    let ratio = predicted.map(|p| report.mean_cost / p);

    let io = |e: Error| Failure::new(EXIT_IO, e.to_string());
    write_delay_csv(&out_path(common, "delays.csv"), &report.traces).map_err(io)?;
    write_trajectory_csv(&out_path(common, "trajectories.csv"), &report.traces).map_err(io)?;
    write_csv(
        &out_path(common, "mean_trajectory.csv"),
        &["t", "mean_energy"],
        report
            .time
            .iter()
            .zip(&report.mean_energy)
            .map(|(t, e)| vec![delaylq::io::fmt_f64(*t), delaylq::io::fmt_f64(*e)]),
    )
    .map_err(io)?;
    let mut baselines = Vec::new();
    for (variant, name) in [
        (BaselineVariant::DiscreteQr, "baseline_discrete_qr.csv"),
        (BaselineVariant::SampledData, "baseline_sampled_data.csv"),
    ] {
        match no_delay_baseline(scenario.plant(), variant, &sim.initial.state, sim.horizon, sim.samples_per_period) {
            Ok(b) => {
                write_trajectory_csv(&out_path(common, name), std::slice::from_ref(&b.trace)).map_err(io)?;
                baselines.push(json!({ "variant": variant, "cost": b.cost, "gain": Rows(b.gain) }));
            }
            Err(e) => baselines.push(json!({ "variant": variant, "error": e.to_string() })),
        }
    }
    let growth = report.growth_flagged();
    let summary = json!({
        "provenance": prov,
        "paths": report.paths,
        "horizon": report.horizon,
        "seed": sim.seed,
        "controller": if file.is_some() { "gain-file" } else { "zero" },
        "mean_cost": report.mean_cost,
        "std_error": report.std_error,
        "predicted_cost": predicted,
        "ratio": ratio,
        "growth_flagged": growth,
        "max_endpoint_error": report.max_endpoint_error,
        "max_cost_relative_difference": report.max_cost_relative_difference,
        "mean_xi_sq": report.mean_xi_sq,
        "rng": report.rng,
        "baselines": baselines,
    });
    write_report(&out_path(common, "ensemble_summary.json"), &summary)?;
    println!(
        "mean cost {:.6} ± {:.6} over {} paths{}",
        report.mean_cost,
        report.std_error,
        report.paths,
        match (predicted, ratio) {
            (Some(p), Some(r)) => format!(", predicted {p:.6}, ratio {r:.4}"),
            _ => String::new(),
        }
    );
    if growth {
        println!("growth flagged: mean ‖ξ_k‖² increases over the second half of the horizon");
    }
    Ok(())
}

fn spectral_cmd(scenario: &Scenario, prov: &Provenance, common: &Common, gain: &GainArg) -> Outcome {
    let file = load_gains(scenario, gain)?;
    let r = file
        .as_ref()
        .map_or(scenario.config.grid.r, |f| f.gain.layout.splits_per_axis);
    let grid = build_grid(scenario.kernel.clone(), r)?;
    if let Some(f) = &file {
        if f.gain.layout != grid.layout() {
            return Err(Failure::new(EXIT_IO, "gain grid does not match the scenario grid"));
        }
    }
    let plant = scenario.plant();
    let acl = grid
        .centers()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (a, b) = scenario.maps.dynamics(c)?;
            Ok(match &file {
                Some(f) => a + b * f.gain.get(i),
                None => a + b * DMatrix::zeros(plant.input_dim(), plant.lifted_dim()),
            })
        })
        .collect::<delaylq::Result<Vec<_>>>()?;
    let rho = spectral_radius_surrogate(&acl, grid.weight_table())?;
    println!(
        "spectral-radius surrogate {:.10} ({} iterations{})",
        rho.estimate,
        rho.iterations,
        if rho.converged { "" } else { ", NOT converged" }
    );
    write_report(
        &out_path(common, "spectral_radius.json"),
        &json!({ "provenance": prov, "r": r, "surrogate": rho, "stable": rho.estimate < 1.0 }),
    )
}
