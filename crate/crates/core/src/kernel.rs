//! Higher-order Markov delay chains on the box `ℳ = [τ_min, τ_max]^p`.
//!
//! A kernel maps the current delay vector `φ_k = (τ_k, …, τ_{k-p+1})` to the
//! law of `φ_{k+1}`. Box masses are the primitive every downstream computation
//! consumes; densities are only meaningful on the stochastic coordinates.

use std::fmt::Debug;
use std::ops::Deref;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Slack allowed when checking that a point or box lies in `ℳ`.
const BOX_SLACK: f64 = 1e-12;

/// Default Gauss–Legendre nodes per axis for generic box masses.
pub const DEFAULT_QUAD_NODES: usize = 12;

/// `(τ_k, τ_{k-1}, …, τ_{k-p+1})`, newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DelayVector(Vec<f64>);

impl DelayVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    /// Constant vector `(τ, …, τ)` of length `p`.
    pub fn constant(p: usize, tau: f64) -> Self {
        Self(vec![tau; p])
    }

    /// Newest delay `τ_k`.
    pub fn tau(&self) -> f64 {
        self.0[0]
    }

    /// `(τ_new, τ_k, …, τ_{k-p+2})`: prepend the new delay, drop the oldest.
    pub fn shift(&self, tau_new: f64) -> Self {
        let mut v = Vec::with_capacity(self.0.len());
        v.push(tau_new);
        v.extend_from_slice(&self.0[..self.0.len().saturating_sub(1)]);
        Self(v)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DelayVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DelayVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Axis-aligned box. Each axis is `[lo, hi)` unless `upper_closed`, then `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub upper_closed: Vec<bool>,
}

impl DelayBox {
    /// Closed box `[lo, hi]` on every axis.
    pub fn closed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let p = lo.len();
        Self {
            lo,
            hi,
            upper_closed: vec![true; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Whether `x` lies in the interval of axis `d`.
    pub fn axis_contains(&self, d: usize, x: f64) -> bool {
        let (lo, hi) = (self.lo[d], self.hi[d]);
        x >= lo && (x < hi || (self.upper_closed[d] && x <= hi))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|d| self.axis_contains(d, x[d]))
    }
}

/// Transition law of a delay chain of order `p` on `[τ_min, τ_max]^p`.
pub trait TransitionKernel: Send + Sync + Debug {
    /// Order `p`.
    fn order(&self) -> usize;

    /// `(τ_min, τ_max)`.
    fn bounds(&self) -> (f64, f64);

    /// Density `g(φ, ℓ)` on the stochastic coordinates.
    fn density(&self, phi: &[f64], ell: &[f64]) -> Result<f64>;

    /// One transition `φ ↦ φ'`.
    fn sample_next(&self, phi: &[f64], rng: &mut dyn RngCore) -> DelayVector;

    /// `𝒢(φ, box)`; the default integrates the density by tensor-product
    /// Gauss–Legendre quadrature with [`DEFAULT_QUAD_NODES`] nodes per axis.
    fn box_mass(&self, phi: &[f64], b: &DelayBox) -> Result<f64> {
        quadrature_box_mass(self, phi, b, DEFAULT_QUAD_NODES)
    }

    /// Whether samples keep the last `p-1` entries of `φ` (shift semantics).
    fn is_shift_structured(&self) -> bool {
        true
    }

    /// Serializable description, if the kernel is one of the built-ins.
    fn spec(&self) -> Option<KernelSpec> {
        None
    }
}

/// Checks `φ ∈ ℳ` (with a tiny slack) and the dimension.
pub fn check_in_space(kernel: &(impl TransitionKernel + ?Sized), phi: &[f64]) -> Result<()> {
    if phi.len() != kernel.order() {
        return Err(Error::Dimension(format!(
            "delay vector has {} entries, kernel order is {}",
            phi.len(),
            kernel.order()
        )));
    }
    let (lo, hi) = kernel.bounds();
    for &t in phi {
        if !(t >= lo - BOX_SLACK && t <= hi + BOX_SLACK) {
            return Err(Error::Domain {
                what: "delay",
                value: t,
                range: format!("[{lo}, {hi}]"),
            });
        }
    }
    Ok(())
}

/// Checks `box ⊆ ℳ`.
pub fn check_box(kernel: &(impl TransitionKernel + ?Sized), b: &DelayBox) -> Result<()> {
    if b.dim() != kernel.order() || b.hi.len() != b.dim() || b.upper_closed.len() != b.dim() {
        return Err(Error::Dimension(format!(
            "box has dimension {}, kernel order is {}",
            b.dim(),
            kernel.order()
        )));
    }
    let (lo, hi) = kernel.bounds();
    for d in 0..b.dim() {
        let (a, c) = (b.lo[d], b.hi[d]);
        if !(a <= c) {
            return Err(Error::Domain {
                what: "box lower bound",
                value: a,
                range: format!("(-∞, {c}]"),
            });
        }
        if a < lo - BOX_SLACK || c > hi + BOX_SLACK {
            let value = if a < lo - BOX_SLACK { a } else { c };
            return Err(Error::Domain {
                what: "box bound",
                value,
                range: format!("[{lo}, {hi}]"),
            });
        }
    }
    Ok(())
}

/// Tensor-product Gauss–Legendre integral of the density over a box.
pub fn quadrature_box_mass<K: TransitionKernel + ?Sized>(
    kernel: &K,
    phi: &[f64],
    b: &DelayBox,
    nodes: usize,
) -> Result<f64> {
    check_in_space(kernel, phi)?;
    check_box(kernel, b)?;
    if b.volume() == 0.0 {
        return Ok(0.0);
    }
    let gl = GaussLegendre::new(nodes.max(1));
    let per_axis: Vec<Vec<(f64, f64)>> = (0..b.dim())
        .map(|d| gl.on_interval(b.lo[d], b.hi[d]).collect())
        .collect();
    let p = b.dim();
    let mut idx = vec![0usize; p];
    let mut point = vec![0.0; p];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for d in 0..p {
            let (x, wd) = per_axis[d][idx[d]];
            point[d] = x;
            w *= wd;
        }
        total += w * kernel.density(phi, &point)?;
        // odometer increment
        let mut d = 0;
        loop {
            if d == p {
                return Ok(total);
            }
            idx[d] += 1;
            if idx[d] < per_axis[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// A uniform draw in the open interval `(0, 1)` from 53 random bits.
pub fn open_unit(rng: &mut dyn RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// ChaCha8 generator for stream `stream` of the master seed.
///
/// Split rule: every independent path `i` uses `ChaCha8Rng::seed_from_u64(master)`
/// with `set_stream(i)`, so paths are reproducible from `(master, i)` alone
/// and do not depend on scheduling.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Markov path `φ_0, φ_1, …, φ_{steps-1}` from `phi0`, deterministic in `seed`.
pub fn sample_path(
    kernel: &dyn TransitionKernel,
    phi0: &DelayVector,
    steps: usize,
    seed: u64,
) -> Result<Vec<DelayVector>> {
    check_in_space(kernel, phi0)?;
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(steps);
    if steps == 0 {
        return Ok(out);
    }
    out.push(phi0.clone());
    while out.len() < steps {
        let next = kernel.sample_next(out.last().expect("nonempty"), &mut rng);
        out.push(next);
    }
    Ok(out)
}

/// Built-in kernel descriptions as they appear in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    /// Every coordinate of `φ_{k+1}` uniform on `[τ_min, τ_max]`, independent of `φ_k`.
    Uniform { p: usize, tau_min: f64, tau_max: f64 },
    /// New delay ~ Normal((τ_k + τ_{k-1})/2, σ) truncated to the delay interval.
    TruncNormalAvg { sigma: f64, tau_min: f64, tau_max: f64 },
    /// Deterministic jump to `point`.
    Dirac { point: Vec<f64>, tau_min: f64, tau_max: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Arc<dyn TransitionKernel>> {
        Ok(match self {
            KernelSpec::Uniform { p, tau_min, tau_max } => {
                Arc::new(UniformKernel::new(*p, *tau_min, *tau_max)?)
            }
            KernelSpec::TruncNormalAvg { sigma, tau_min, tau_max } => {
                Arc::new(TruncNormalAvgKernel::new(*sigma, *tau_min, *tau_max)?)
            }
            KernelSpec::Dirac { point, tau_min, tau_max } => {
                Arc::new(DiracKernel::new(DelayVector::new(point.clone()), *tau_min, *tau_max)?)
            }
        })
    }
}

fn check_interval(tau_min: f64, tau_max: f64) -> Result<()> {
    if !(tau_min.is_finite() && tau_max.is_finite() && tau_min >= 0.0) {
        return Err(Error::Domain {
            what: "tau_min",
            value: tau_min,
            range: "[0, ∞)".into(),
        });
    }
    if tau_max < tau_min {
        return Err(Error::Domain {
            what: "tau_max",
            value: tau_max,
            range: format!("[{tau_min}, ∞)"),
        });
    }
    Ok(())
}

/// I.i.d. uniform delays: `g ≡ 1/vol(ℳ)`.
///
/// For `p > 1` every coordinate is redrawn, so the chain is not shift-structured.
#[derive(Debug, Clone)]
pub struct UniformKernel {
    p: usize,
    tau_min: f64,
    tau_max: f64,
}

impl UniformKernel {
    pub fn new(p: usize, tau_min: f64, tau_max: f64) -> Result<Self> {
        check_interval(tau_min, tau_max)?;
        if p == 0 {
            return Err(Error::Precondition("kernel order must be at least 1".into()));
        }
        if tau_max <= tau_min {
            return Err(Error::Domain {
                what: "tau_max",
                value: tau_max,
                range: format!("({tau_min}, ∞) for a uniform kernel"),
            });
        }
        Ok(Self { p, tau_min, tau_max })
    }
}

impl TransitionKernel for UniformKernel {
    fn order(&self) -> usize {
        self.p
    }
    fn bounds(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }
    fn density(&self, phi: &[f64], ell: &[f64]) -> Result<f64> {
        check_in_space(self, phi)?;
        check_in_space(self, ell)?;
        Ok((self.tau_max - self.tau_min).powi(-(self.p as i32)))
    }
    fn box_mass(&self, phi: &[f64], b: &DelayBox) -> Result<f64> {
        check_in_space(self, phi)?;
        check_box(self, b)?;
        let width = self.tau_max - self.tau_min;
        Ok(b.lo.iter().zip(&b.hi).map(|(a, c)| (c - a) / width).product())
    }
    fn sample_next(&self, _phi: &[f64], rng: &mut dyn RngCore) -> DelayVector {
        let width = self.tau_max - self.tau_min;
        DelayVector::new(
            (0..self.p)
                .map(|_| (self.tau_min + width * open_unit(rng)).min(self.tau_max))
                .collect(),
        )
    }
    fn is_shift_structured(&self) -> bool {
        self.p == 1
    }
    fn spec(&self) -> Option<KernelSpec> {
        Some(KernelSpec::Uniform {
            p: self.p,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
        })
    }
}

/// Second-order chain: `τ_{k+1} ~ N((τ_k + τ_{k-1})/2, σ²)` truncated to
/// `[τ_min, τ_max]`, and `φ_{k+1} = (τ_{k+1}, τ_k)`.
///
/// `σ = 0` is the Dirac-at-average limit.
#[derive(Debug, Clone)]
pub struct TruncNormalAvgKernel {
    sigma: f64,
    tau_min: f64,
    tau_max: f64,
}

impl TruncNormalAvgKernel {
    pub fn new(sigma: f64, tau_min: f64, tau_max: f64) -> Result<Self> {
        check_interval(tau_min, tau_max)?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Domain {
                what: "sigma",
                value: sigma,
                range: "[0, ∞)".into(),
            });
        }
        Ok(Self { sigma, tau_min, tau_max })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn degenerate(&self) -> bool {
        self.sigma == 0.0 || self.tau_max == self.tau_min
    }

    fn std_normal() -> Normal {
        Normal::new(0.0, 1.0).expect("standard normal")
    }

    /// Mass of the new delay in `[a, b]` given the mean.
    fn interval_mass(&self, mean: f64, a: f64, b: f64) -> f64 {
        let n = Self::std_normal();
        let z = |x: f64| (x - mean) / self.sigma;
        let denom = n.cdf(z(self.tau_max)) - n.cdf(z(self.tau_min));
        ((n.cdf(z(b)) - n.cdf(z(a))) / denom).clamp(0.0, 1.0)
    }
}

impl TransitionKernel for TruncNormalAvgKernel {
    fn order(&self) -> usize {
        2
    }
    fn bounds(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }

    fn density(&self, phi: &[f64], ell: &[f64]) -> Result<f64> {
        check_in_space(self, phi)?;
        check_in_space(self, ell)?;
        if (ell[1] - phi[0]).abs() > BOX_SLACK {
            return Ok(0.0);
        }
        if self.degenerate() {
            return Err(Error::Precondition(
                "the σ = 0 kernel is a point mass and has no density".into(),
            ));
        }
        let mean = 0.5 * (phi[0] + phi[1]);
        let n = Self::std_normal();
        let z = |x: f64| (x - mean) / self.sigma;
        let denom = n.cdf(z(self.tau_max)) - n.cdf(z(self.tau_min));
        Ok(n.pdf(z(ell[0])) / (self.sigma * denom))
    }

    fn box_mass(&self, phi: &[f64], b: &DelayBox) -> Result<f64> {
        check_in_space(self, phi)?;
        check_box(self, b)?;
        if !b.axis_contains(1, phi[0]) {
            return Ok(0.0);
        }
        let mean = 0.5 * (phi[0] + phi[1]);
        if self.degenerate() {
            let target = mean.clamp(self.tau_min, self.tau_max);
            return Ok(if b.axis_contains(0, target) { 1.0 } else { 0.0 });
        }
        Ok(self.interval_mass(mean, b.lo[0], b.hi[0]))
    }

    fn sample_next(&self, phi: &[f64], rng: &mut dyn RngCore) -> DelayVector {
        let mean = 0.5 * (phi[0] + phi[1]);
        let u = open_unit(rng);
        let tau = if self.degenerate() {
            mean
        } else {
            let n = Self::std_normal();
            let lo = n.cdf((self.tau_min - mean) / self.sigma);
            let hi = n.cdf((self.tau_max - mean) / self.sigma);
            mean + self.sigma * n.inverse_cdf(lo + u * (hi - lo))
        };
        DelayVector::new(vec![tau.clamp(self.tau_min, self.tau_max), phi[0]])
    }

    fn spec(&self) -> Option<KernelSpec> {
        Some(KernelSpec::TruncNormalAvg {
            sigma: self.sigma,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
        })
    }
}

/// Deterministic chain `φ_{k+1} = φ*`. With `φ* = 0` and `ℳ = {0}` this is
/// the delay-free sampled-data loop.
#[derive(Debug, Clone)]
pub struct DiracKernel {
    point: DelayVector,
    tau_min: f64,
    tau_max: f64,
}

impl DiracKernel {
    pub fn new(point: DelayVector, tau_min: f64, tau_max: f64) -> Result<Self> {
        check_interval(tau_min, tau_max)?;
        if point.is_empty() {
            return Err(Error::Precondition("kernel order must be at least 1".into()));
        }
        let k = Self {
            point,
            tau_min,
            tau_max,
        };
        check_in_space(&k, &k.point)?;
        Ok(k)
    }

    pub fn point(&self) -> &DelayVector {
        &self.point
    }
}

impl TransitionKernel for DiracKernel {
    fn order(&self) -> usize {
        self.point.len()
    }
    fn bounds(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }
    fn density(&self, _phi: &[f64], _ell: &[f64]) -> Result<f64> {
        Err(Error::Precondition("a Dirac kernel has no density".into()))
    }
    fn box_mass(&self, phi: &[f64], b: &DelayBox) -> Result<f64> {
        check_in_space(self, phi)?;
        check_box(self, b)?;
        Ok(if b.contains(&self.point) { 1.0 } else { 0.0 })
    }
    fn sample_next(&self, _phi: &[f64], _rng: &mut dyn RngCore) -> DelayVector {
        self.point.clone()
    }
    fn is_shift_structured(&self) -> bool {
        self.point.windows(2).all(|w| w[0] == w[1])
    }
    fn spec(&self) -> Option<KernelSpec> {
        Some(KernelSpec::Dirac {
            point: self.point.to_vec(),
            tau_min: self.tau_min,
            tau_max: self.tau_max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reactor_kernel() -> TruncNormalAvgKernel {
        TruncNormalAvgKernel::new(0.01, 0.0, 0.03).unwrap()
    }

    #[test]
    fn shift_drops_oldest() {
        let v = DelayVector::new(vec![0.1, 0.2, 0.3]);
        assert_eq!(&*v.shift(0.0), &[0.0, 0.1, 0.2]);
    }

    #[test]
    fn uniform_box_mass_is_relative_volume() {
        let k = UniformKernel::new(2, 0.0, 2.0).unwrap();
        let b = DelayBox::closed(vec![0.0, 0.5], vec![1.0, 1.0]);
        let m = k.box_mass(&[0.3, 0.3], &b).unwrap();
        assert!((m - 0.125).abs() < 1e-15);
        let q = quadrature_box_mass(&k, &[0.3, 0.3], &b, 4).unwrap();
        assert!((q - 0.125).abs() < 1e-14);
    }

    #[test]
    fn trunc_normal_box_requires_shift_consistency() {
        let k = reactor_kernel();
        let b = DelayBox::closed(vec![0.0, 0.0], vec![0.03, 0.015]);
        assert_eq!(k.box_mass(&[0.02, 0.02], &b).unwrap(), 0.0);
    }

    #[test]
    fn trunc_normal_box_matches_cdf_ratio() {
        let k = reactor_kernel();
        let b = DelayBox::closed(vec![0.0, 0.015], vec![0.015, 0.03]);
        let n = Normal::new(0.02, 0.01).unwrap();
        let want = (n.cdf(0.015) - n.cdf(0.0)) / (n.cdf(0.03) - n.cdf(0.0));
        let got = k.box_mass(&[0.02, 0.02], &b).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn trunc_normal_density_integrates_to_box_mass() {
        let k = reactor_kernel();
        let phi = [0.01, 0.025];
        let (a, b) = (0.004, 0.019);
        let gl = GaussLegendre::new(32);
        let integral = gl.integrate(a, b, |x| k.density(&phi, &[x, phi[0]]).unwrap());
        let mass = k
            .box_mass(&phi, &DelayBox::closed(vec![a, 0.0], vec![b, 0.03]))
            .unwrap();
        assert!((integral - mass).abs() < 1e-10, "{integral} vs {mass}");
        assert_eq!(k.density(&phi, &[0.01, 0.02]).unwrap(), 0.0);
    }

    #[test]
    fn zero_sigma_is_fixed_point_of_averaging() {
        let k = TruncNormalAvgKernel::new(0.0, 0.0, 0.03).unwrap();
        let path = sample_path(&k, &DelayVector::constant(2, 0.02), 50, 7).unwrap();
        assert!(path.iter().all(|v| v[0] == 0.02 && v[1] == 0.02));
    }

    #[test]
    fn sampled_path_is_deterministic_and_in_range() {
        let k = reactor_kernel();
        let a = sample_path(&k, &DelayVector::constant(2, 0.02), 2000, 11).unwrap();
        let b = sample_path(&k, &DelayVector::constant(2, 0.02), 2000, 11).unwrap();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[1][0] >= 0.0 && w[1][0] <= 0.03);
            assert_eq!(w[1][1], w[0][0]);
        }
    }

    #[test]
    fn dirac_box_mass_is_indicator() {
        let k = DiracKernel::new(DelayVector::new(vec![0.0]), 0.0, 0.0).unwrap();
        let b = DelayBox::closed(vec![0.0], vec![0.0]);
        assert_eq!(k.box_mass(&[0.0], &b).unwrap(), 1.0);
    }

    #[test]
    fn box_outside_space_is_rejected() {
        let k = reactor_kernel();
        let b = DelayBox::closed(vec![0.0, 0.0], vec![0.05, 0.03]);
        assert!(matches!(k.box_mass(&[0.0, 0.0], &b), Err(Error::Domain { .. })));
    }

    #[test]
    fn spec_round_trip() {
        let s = KernelSpec::TruncNormalAvg {
            sigma: 0.01,
            tau_min: 0.0,
            tau_max: 0.03,
        };
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"trunc-normal-avg\""));
        let back: KernelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.build().unwrap().spec(), Some(s));
    }
}
