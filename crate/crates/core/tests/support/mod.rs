//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use delaylq::kernel::{TransitionKernel, TruncNormalAvgKernel};
use delaylq::plant::{JumpSystemMaps, Plant};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Box-Muller; fine for test data.
    DMatrix::from_fn(rows, cols, |_, _| {
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let l = gaussian(rng, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Random plant with `‖A_c‖₂ ≤ a_norm` (scaled if needed), `n ≤ 4`, `m ≤ 2`.
pub fn random_plant(rng: &mut ChaCha8Rng, a_norm: f64) -> Plant {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=2);
    let mut a = gaussian(rng, n, n);
    let s = a.clone().svd(false, false).singular_values.max();
    if s > 0.0 {
        a *= rng.random_range(0.0..a_norm) / s;
    }
    let b = gaussian(rng, n, m);
    let h = rng.random_range(0.05..1.0);
    Plant::new(a, b, random_spd(rng, n), random_spd(rng, m), h).unwrap()
}

/// Continuous cost `∫₀ʰ xᵀQ_c x + uᵀR_c u ds` and `x(h)` by classical RK4,
/// holding `u_old` on `[0, τ)` and `u` on `[τ, h)`.
pub fn rk4_period(plant: &Plant, x: &DVector<f64>, u_old: &DVector<f64>, u: &DVector<f64>, tau: f64, steps: usize) -> (f64, DVector<f64>) {
    let (a, b, q, r) = (plant.a_c(), plant.b_c(), plant.q_c(), plant.r_c());
    let n = x.len();
    let rhs = |y: &DVector<f64>, v: &DVector<f64>| {
        let xs = y.rows(0, n).into_owned();
        let dx = a * &xs + b * v;
        let dc = xs.dot(&(q * &xs)) + v.dot(&(r * v));
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&dx);
        out[n] = dc;
        out
    };
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n).copy_from(x);
    for (len, v) in [(tau, u_old), (plant.h() - tau, u)] {
        if len <= 0.0 {
            continue;
        }
        let dt = len / steps as f64;
        for _ in 0..steps {
            let k1 = rhs(&y, v);
            let k2 = rhs(&(&y + &k1 * (dt / 2.0)), v);
            let k3 = rhs(&(&y + &k2 * (dt / 2.0)), v);
            let k4 = rhs(&(&y + &k3 * dt), v);
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
    }
    (y[n], y.rows(0, n).into_owned())
}

/// Stabilizing solution and gain of the DARE with cross term
/// `P = Q + AᵀPA − (AᵀPB + W)(R + BᵀPB)⁻¹(BᵀPA + Wᵀ)` by the structured
/// doubling algorithm; the gain is `u = Kξ`.
pub fn dare_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, w: &DMatrix<f64>, r: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = a.nrows();
    let rinv = r.clone().try_inverse().unwrap();
    let mut ak = a - b * &rinv * w.transpose();
    let mut g = b * &rinv * b.transpose();
    let mut hm = q - w * &rinv * w.transpose();
    let id = DMatrix::<f64>::identity(k, k);
    for _ in 0..200 {
        let inv = (&id + &g * &hm).try_inverse().unwrap();
        let a1 = &ak * &inv * &ak;
        let g1 = &g + &ak * &inv * &g * ak.transpose();
        let h1 = &hm + ak.transpose() * &hm * &inv * &ak;
        let done = (&h1 - &hm).norm() <= 1e-15 * h1.norm().max(1.0);
        ak = a1;
        g = g1;
        hm = h1;
        if done {
            break;
        }
    }
    let p = (&hm + hm.transpose()) * 0.5;
    let gain = -(r + b.transpose() * &p * b).try_inverse().unwrap() * (b.transpose() * &p * a + w.transpose());
    (p, gain)
}

/// Spectral radius of `V ↦ (Σ_j table(j,i) A_j V_j A_jᵀ)_i` from the dense
/// vectorized operator.
pub fn dense_surrogate(a: &[DMatrix<f64>], table: &DMatrix<f64>) -> f64 {
    let n = a.len();
    let k = a[0].nrows();
    let kk = k * k;
    let mut big = DMatrix::zeros(n * kk, n * kk);
    for i in 0..n {
        for j in 0..n {
            let blk = a[j].kronecker(&a[j]) * table[(j, i)];
            big.view_mut((i * kk, j * kk), (kk, kk)).copy_from(&blk);
        }
    }
    big.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn batch_reactor_plant() -> Plant {
    let a = DMatrix::from_row_slice(4, 4, &[
        1.38, -0.2077, 6.715, -5.676,
        -0.5814, -4.29, 0.0, 0.675,
        1.067, 4.273, -6.654, 5.893,
        0.048, 4.273, 1.343, -2.104,
    ]);
    let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 5.679, 0.0, 1.136, -3.146, 1.136, 0.0]);
    Plant::new(a, b, DMatrix::identity(4, 4), DMatrix::identity(2, 2), 0.2).unwrap()
}

pub fn batch_reactor() -> (JumpSystemMaps, Arc<dyn TransitionKernel>) {
    let maps = JumpSystemMaps::new(batch_reactor_plant(), 0.0, 0.03).unwrap();
    let kernel: Arc<dyn TransitionKernel> = Arc::new(TruncNormalAvgKernel::new(0.01, 0.0, 0.03).unwrap());
    (maps, kernel)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Cost blocks of `a_c = 0` from polynomial integration of `x(s) = x + c₁(s)B u_old + c₂(s)B u`.
pub fn zero_drift_blocks(plant: &Plant, tau: f64) -> DMatrix<f64> {
    let (n, m, h) = (plant.state_dim(), plant.input_dim(), plant.h());
    let (b, q, r) = (plant.b_c(), plant.q_c(), plant.r_c());
    let l = h - tau;
    // ∫1, ∫c₁, ∫c₂, ∫c₁², ∫c₁c₂, ∫c₂²
    let i0 = h;
    let i1 = tau * tau / 2.0 + tau * l;
    let i2 = l * l / 2.0;
    let i11 = tau.powi(3) / 3.0 + tau * tau * l;
    let i12 = tau * l * l / 2.0;
    let i22 = l.powi(3) / 3.0;
    let bqb = b.transpose() * q * b;
    let qb = q * b;
    let d = n + 2 * m;
    let mut j = DMatrix::zeros(d, d);
    j.view_mut((0, 0), (n, n)).copy_from(&(q * i0));
    j.view_mut((0, n), (n, m)).copy_from(&(&qb * i1));
    j.view_mut((0, n + m), (n, m)).copy_from(&(&qb * i2));
    j.view_mut((n, n), (m, m)).copy_from(&(&bqb * i11 + r * tau));
    j.view_mut((n, n + m), (m, m)).copy_from(&(&bqb * i12));
    j.view_mut((n + m, n + m), (m, m)).copy_from(&(&bqb * i22 + r * l));
    j.fill_lower_triangle_with_upper_triangle();
    j
}

pub fn zero_drift_plant(seed: u64) -> (Plant, f64) {
    let mut g = rng(seed);
    let p = random_plant(&mut g, 1.0);
    let n = p.state_dim();
    let plant = Plant::new(DMatrix::zeros(n, n), p.b_c().clone(), p.q_c().clone(), p.r_c().clone(), p.h()).unwrap();
    let tau = g.random_range(0.0..plant.h());
    (plant, tau)
}

/// Trajectory and cost of a random 20-step input sequence in both coordinate systems.
pub fn cross_term_trial(seed: u64) -> (f64, f64, f64) {
    let mut g = rng(seed);
    let plant = random_plant(&mut g, 1.0);
    let (n, m, h) = (plant.state_dim(), plant.input_dim(), plant.h());
    let tmax = 0.9 * h;
    let maps = JumpSystemMaps::new(plant, 0.0, tmax).unwrap();
    let mut xi = gaussian(&mut g, n + m, 1).column(0).into_owned();
    let mut xbar = xi.clone();
    let (mut j1, mut j2, mut traj) = (0.0, 0.0, 0.0f64);
    for _ in 0..20 {
        let tau = g.random_range(0.0..tmax);
        let jm = maps.evaluate(&[tau]).unwrap();
        let u = gaussian(&mut g, m, 1).column(0).into_owned();
        let ubar = &u + jm.cross_gain().unwrap() * &xbar;
        j1 += xi.dot(&(&jm.q * &xi)) + 2.0 * xi.dot(&(&jm.w * &u)) + u.dot(&(&jm.r * &u));
        j2 += xbar.dot(&(&jm.m * &xbar)) + ubar.dot(&(&jm.r * &ubar));
        xi = &jm.a * &xi + &jm.b * &u;
        xbar = &jm.abar * &xbar + &jm.b * &ubar;
        traj = traj.max((&xi - &xbar).amax() / xi.amax().max(1.0));
    }
    (j1, j2, traj)
}

