//! Uniform partitions of the delay box, the weight table `w_i(c_j)` and the
//! sampled within-box variation bounds `κ`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{open_unit, stream_rng, DelayBox, TransitionKernel};
use crate::linalg::{max_eigenvalue, spectral_norm};
use crate::plant::JumpSystemMaps;

/// Default cap on the number of boxes `N = r^p`.
pub const DEFAULT_MAX_BOXES: usize = 4096;

/// Default multiplier applied to sampled κ maxima.
pub const DEFAULT_SAFETY: f64 = 1.1;

/// Default number of low-discrepancy samples per box (corners come on top).
pub const DEFAULT_KAPPA_SAMPLES: usize = 32;

// Upper faces that are open are approached to within this relative distance.
const FACE_NUDGE: f64 = 1e-9;

const HALTON_BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Settings of a κ estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaSettings {
    pub samples_per_box: usize,
    pub safety: f64,
}

impl Default for KappaSettings {
    fn default() -> Self {
        Self {
            samples_per_box: DEFAULT_KAPPA_SAMPLES,
            safety: DEFAULT_SAFETY,
        }
    }
}

/// Sampled bound for the stabilizability LMIs, one per box.
#[derive(Debug, Clone, Serialize)]
pub struct KappaStab {
    pub values: Vec<f64>,
    /// Sample at which the unscaled maximum was attained.
    pub argmax: Vec<Vec<f64>>,
    pub settings: KappaSettings,
}

/// Sampled bounds for the detectability LMIs, one pair per box.
#[derive(Debug, Clone, Serialize)]
pub struct KappaDet {
    pub kappa_a: Vec<f64>,
    pub kappa_w: Vec<f64>,
    pub argmax_a: Vec<Vec<f64>>,
    pub argmax_w: Vec<Vec<f64>>,
    pub settings: KappaSettings,
}

/// `N = r^p` boxes covering `ℳ`, with centers, weights and optional κ bounds.
///
/// Box `i` has per-axis indices `a_d` with `i = Σ_d a_d r^d` (axis 0 fastest).
/// Along each axis the intervals are `[s_a, s_{a+1})` except the last, which
/// is closed.
#[derive(Debug, Clone)]
pub struct GridModel {
    kernel: Arc<dyn TransitionKernel>,
    r: usize,
    splits: Vec<f64>,
    boxes: Vec<DelayBox>,
    centers: Vec<Vec<f64>>,
    weights: DMatrix<f64>,
    max_boxes: usize,
    pub kappa_stab: Option<KappaStab>,
    pub kappa_det: Option<KappaDet>,
}

/// Splits each axis into `r` equal intervals and tabulates `w_i(c_j)`.
pub fn build_grid(kernel: Arc<dyn TransitionKernel>, r: usize) -> Result<GridModel> {
    build_grid_capped(kernel, r, DEFAULT_MAX_BOXES)
}

/// [`build_grid`] with an explicit cap on `N`.
pub fn build_grid_capped(kernel: Arc<dyn TransitionKernel>, r: usize, max_boxes: usize) -> Result<GridModel> {
    if r == 0 {
        return Err(Error::Precondition("splits per axis must be at least 1".into()));
    }
    let p = kernel.order();
    let n = u32::try_from(p)
        .ok()
        .and_then(|p| r.checked_pow(p))
        .unwrap_or(usize::MAX);
    if n > max_boxes {
        return Err(Error::Resource {
            what: "grid boxes N",
            requested: n,
            cap: max_boxes,
        });
    }
    let (lo, hi) = kernel.bounds();
    let splits: Vec<f64> = (0..=r)
        .map(|a| {
            if a == r {
                hi
            } else {
                lo + (hi - lo) * a as f64 / r as f64
            }
        })
        .collect();

    let boxes: Vec<DelayBox> = (0..n)
        .map(|i| {
            let idx = multi_index(i, r, p);
            DelayBox {
                lo: idx.iter().map(|&a| splits[a]).collect(),
                hi: idx.iter().map(|&a| splits[a + 1]).collect(),
                upper_closed: idx.iter().map(|&a| a + 1 == r).collect(),
            }
        })
        .collect();
    let centers: Vec<Vec<f64>> = boxes.iter().map(DelayBox::center).collect();

    let rows: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|c| boxes.iter().map(|b| kernel.box_mass(c, b)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let weights = DMatrix::from_fn(n, n, |j, i| rows[j][i]);

    Ok(GridModel {
        kernel,
        r,
        splits,
        boxes,
        centers,
        weights,
        max_boxes,
        kappa_stab: None,
        kappa_det: None,
    })
}

fn multi_index(mut i: usize, r: usize, p: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(p);
    for _ in 0..p {
        idx.push(i % r);
        i /= r;
    }
    idx
}

impl GridModel {
    pub fn kernel(&self) -> &Arc<dyn TransitionKernel> {
        &self.kernel
    }
    /// Splits per axis `r`.
    pub fn splits_per_axis(&self) -> usize {
        self.r
    }
    /// Split points `s_1 < … < s_{r+1}` shared by all axes.
    pub fn split_points(&self) -> &[f64] {
        &self.splits
    }
    pub fn order(&self) -> usize {
        self.kernel.order()
    }
    /// Number of boxes `N`.
    pub fn len(&self) -> usize {
        self.boxes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
    pub fn boxes(&self) -> &[DelayBox] {
        &self.boxes
    }
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }
    pub fn max_boxes(&self) -> usize {
        self.max_boxes
    }
    /// `N×N` table with entry `(j, i) = w_i(c_j)`.
    pub fn weight_table(&self) -> &DMatrix<f64> {
        &self.weights
    }
    /// `w_i(c_j)`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(j, i)]
    }

    /// Row sums `Σ_i w_i(c_j)` for every `j`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }

    /// `(w_1(φ), …, w_N(φ))` at an arbitrary `φ ∈ ℳ`.
    pub fn weights_at(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.boxes.iter().map(|b| self.kernel.box_mass(phi, b)).collect()
    }

    /// Index of the box containing `φ`.
    pub fn lookup(&self, phi: &[f64]) -> Result<usize> {
        self.layout().lookup(phi)
    }

    /// Geometry of the partition without the kernel.
    pub fn layout(&self) -> GridLayout {
        GridLayout {
            order: self.order(),
            splits_per_axis: self.r,
            split_points: self.splits.clone(),
        }
    }

    /// Index of the box of an `r`-grid that contains child box `child` of the
    /// `factor·r`-grid obtained by [`GridModel::refine`].
    pub fn parent_index(&self, child: usize, factor: usize) -> usize {
        let p = self.order();
        let fine = multi_index(child, self.r * factor, p);
        fine.iter()
            .rev()
            .fold(0, |acc, &a| acc * self.r + a / factor)
    }

    /// Grid with every axis split `factor` times finer; κ estimates that were
    /// present are recomputed with the same settings (this needs `maps`).
    pub fn refine(&self, factor: usize, maps: Option<&JumpSystemMaps>) -> Result<GridModel> {
        if factor < 2 {
            return Err(Error::Precondition("refinement factor must be at least 2".into()));
        }
        let r = self
            .r
            .checked_mul(factor)
            .ok_or(Error::Resource {
                what: "grid boxes N",
                requested: usize::MAX,
                cap: self.max_boxes,
            })?;
        let mut g = build_grid_capped(self.kernel.clone(), r, self.max_boxes)?;
        let need_maps = self.kappa_stab.is_some() || self.kappa_det.is_some();
        if need_maps {
            let maps = maps.ok_or_else(|| {
                Error::Precondition("refining a grid with κ bounds needs the jump-system maps".into())
            })?;
            if let Some(k) = &self.kappa_stab {
                g.kappa_stab = Some(estimate_kappa_stab(maps, &g, k.settings)?);
            }
            if let Some(k) = &self.kappa_det {
                g.kappa_det = Some(estimate_kappa_det(maps, &g, k.settings)?);
            }
        }
        Ok(g)
    }

    /// Deterministic κ sample set of box `i`: Halton points and the `2^p`
    /// corners, with open upper faces approached from inside.
    pub fn kappa_samples(&self, i: usize, count: usize) -> Vec<Vec<f64>> {
        let b = &self.boxes[i];
        let p = b.dim();
        let mut pts = Vec::with_capacity(count + (1 << p));
        for k in 0..count {
            let u: Vec<f64> = (0..p).map(|d| halton(k as u64 + 1, HALTON_BASES[d % HALTON_BASES.len()])).collect();
            pts.push(self.point_in_box(b, &u));
        }
        for corner in 0..(1usize << p) {
            let u: Vec<f64> = (0..p).map(|d| ((corner >> d) & 1) as f64).collect();
            pts.push(self.point_in_box(b, &u));
        }
        pts
    }

    fn point_in_box(&self, b: &DelayBox, u: &[f64]) -> Vec<f64> {
        (0..b.dim())
            .map(|d| {
                let t = if b.upper_closed[d] { u[d] } else { u[d].min(1.0 - FACE_NUDGE) };
                b.lo[d] + t * (b.hi[d] - b.lo[d])
            })
            .collect()
    }

    /// JSON-friendly audit summary.
    pub fn summary(&self) -> GridSummary {
        GridSummary {
            order: self.order(),
            splits_per_axis: self.r,
            boxes: self.len(),
            split_points: self.splits.clone(),
            centers: self.centers.clone(),
            row_sums: self.row_sums(),
            kappa_stab: self.kappa_stab.as_ref().map(|k| k.values.clone()),
            kappa_det_a: self.kappa_det.as_ref().map(|k| k.kappa_a.clone()),
            kappa_det_w: self.kappa_det.as_ref().map(|k| k.kappa_w.clone()),
        }
    }
}

/// Geometry of a uniform partition: enough to locate the box of any `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLayout {
    pub order: usize,
    pub splits_per_axis: usize,
    pub split_points: Vec<f64>,
}

impl GridLayout {
    /// Number of boxes `r^p`.
    pub fn len(&self) -> usize {
        self.splits_per_axis.pow(self.order as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks internal consistency after deserialization.
    pub fn validate(&self) -> Result<()> {
        let r = self.splits_per_axis;
        if r == 0 || self.order == 0 || self.split_points.len() != r + 1 {
            return Err(Error::Config(format!(
                "grid layout needs order ≥ 1, r ≥ 1 and r + 1 split points (got order {}, r {r}, {} points)",
                self.order,
                self.split_points.len()
            )));
        }
        if self.split_points.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Config("grid split points must be nondecreasing".into()));
        }
        Ok(())
    }

    /// Index of the box containing `φ`; faces belong to the box above them
    /// except on the last interval of each axis, which is closed.
    pub fn lookup(&self, phi: &[f64]) -> Result<usize> {
        let p = self.order;
        let r = self.splits_per_axis;
        if phi.len() != p {
            return Err(Error::Dimension(format!(
                "delay vector has {} entries, grid order is {p}",
                phi.len()
            )));
        }
        let lo = self.split_points[0];
        let hi = self.split_points[r];
        let slack = 1e-12 * (hi - lo).abs().max(1e-300);
        let interior = &self.split_points[1..r];
        let mut idx = 0;
        let mut stride = 1;
        for &x in phi {
            if !(x >= lo - slack && x <= hi + slack) {
                return Err(Error::Domain {
                    what: "delay",
                    value: x,
                    range: format!("[{lo}, {hi}]"),
                });
            }
            let a = interior.partition_point(|&s| s <= x).min(r - 1);
            idx += a * stride;
            stride *= r;
        }
        Ok(idx)
    }

    /// Geometric center of box `i`.
    pub fn center(&self, i: usize) -> Vec<f64> {
        multi_index(i, self.splits_per_axis, self.order)
            .into_iter()
            .map(|a| 0.5 * (self.split_points[a] + self.split_points[a + 1]))
            .collect()
    }
}

/// Serializable view of a grid.
#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub order: usize,
    pub splits_per_axis: usize,
    pub boxes: usize,
    pub split_points: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub row_sums: Vec<f64>,
    pub kappa_stab: Option<Vec<f64>>,
    pub kappa_det_a: Option<Vec<f64>>,
    pub kappa_det_w: Option<Vec<f64>>,
}

fn halton(mut k: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    r
}

fn check_settings(s: KappaSettings) -> Result<()> {
    if s.samples_per_box < 8 {
        return Err(Error::Precondition(format!(
            "samples_per_box must be at least 8, got {}",
            s.samples_per_box
        )));
    }
    if !(s.safety >= 1.0 && s.safety.is_finite()) {
        return Err(Error::Domain {
            what: "safety",
            value: s.safety,
            range: "[1, ∞)".into(),
        });
    }
    Ok(())
}

// The function `[√w_j(φ) A(φ), √w_j(φ) B(φ)]_j` is kept as `(√w(φ), [A B](φ))`.
struct StabPoint {
    sqrt_w: Vec<f64>,
    ab: DMatrix<f64>,
}

fn stab_point(maps: &JumpSystemMaps, grid: &GridModel, phi: &[f64]) -> Result<StabPoint> {
    let (a, b) = maps.dynamics(phi)?;
    let mut ab = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    ab.view_mut((0, 0), a.shape()).copy_from(&a);
    ab.view_mut((0, a.ncols()), b.shape()).copy_from(&b);
    let sqrt_w = grid.weights_at(phi)?.into_iter().map(|w| w.max(0.0).sqrt()).collect();
    Ok(StabPoint { sqrt_w, ab })
}

// ‖stack_j(√w_j(φ)G(φ) − √w_j(c)G(c))‖ via the Gram matrix Σ_j D_jᵀ D_j.
fn stab_deviation(x: &StabPoint, c: &StabPoint) -> f64 {
    let gxx = x.ab.transpose() * &x.ab;
    let gcc = c.ab.transpose() * &c.ab;
    let gxc = x.ab.transpose() * &c.ab;
    let (mut sxx, mut scc, mut sxc) = (0.0, 0.0, 0.0);
    for (wx, wc) in x.sqrt_w.iter().zip(&c.sqrt_w) {
        sxx += wx * wx;
        scc += wc * wc;
        sxc += wx * wc;
    }
    let gram = gxx * sxx + gcc * scc - (&gxc + gxc.transpose()) * sxc;
    max_eigenvalue(&gram).max(0.0).sqrt()
}

/// Sampled `κ_i` for the stabilizability LMIs.
pub fn estimate_kappa_stab(maps: &JumpSystemMaps, grid: &GridModel, settings: KappaSettings) -> Result<KappaStab> {
    check_settings(settings)?;
    let per_box: Vec<(f64, Vec<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = stab_point(maps, grid, &grid.centers[i])?;
            let mut best = (0.0, grid.centers[i].clone());
            for phi in grid.kappa_samples(i, settings.samples_per_box) {
                let d = stab_deviation(&stab_point(maps, grid, &phi)?, &c);
                if d > best.0 {
                    best = (d, phi);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(KappaStab {
        values: per_box.iter().map(|(v, _)| v * settings.safety).collect(),
        argmax: per_box.into_iter().map(|(_, a)| a).collect(),
        settings,
    })
}

struct DetPoint {
    am: DMatrix<f64>,
    sqrt_w: Vec<f64>,
}

fn det_point(maps: &JumpSystemMaps, grid: &GridModel, phi: &[f64]) -> Result<DetPoint> {
    let jm = maps.evaluate(phi)?;
    let k = jm.abar.nrows();
    let mut am = DMatrix::zeros(2 * k, k);
    am.view_mut((0, 0), (k, k)).copy_from(&jm.abar);
    am.view_mut((k, 0), (k, k)).copy_from(&jm.m);
    let sqrt_w = grid.weights_at(phi)?.into_iter().map(|w| w.max(0.0).sqrt()).collect();
    Ok(DetPoint { am, sqrt_w })
}

fn sqrt_w_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sampled `(κ_{A,i}, κ_{w,i})` for the detectability LMIs with `A := Ā`, `C := M`.
pub fn estimate_kappa_det(maps: &JumpSystemMaps, grid: &GridModel, settings: KappaSettings) -> Result<KappaDet> {
    check_settings(settings)?;
    type BoxBest = ((f64, Vec<f64>), (f64, Vec<f64>));
    let per_box: Vec<BoxBest> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = det_point(maps, grid, &grid.centers[i])?;
            let mut best_a = (0.0, grid.centers[i].clone());
            let mut best_w = (0.0, grid.centers[i].clone());
            for phi in grid.kappa_samples(i, settings.samples_per_box) {
                let x = det_point(maps, grid, &phi)?;
                let da = spectral_norm(&(&x.am - &c.am));
                let dw = sqrt_w_distance(&x.sqrt_w, &c.sqrt_w);
                if da > best_a.0 {
                    best_a = (da, phi.clone());
                }
                if dw > best_w.0 {
                    best_w = (dw, phi);
                }
            }
            Ok((best_a, best_w))
        })
        .collect::<Result<_>>()?;
    let s = settings.safety;
    Ok(KappaDet {
        kappa_a: per_box.iter().map(|(a, _)| a.0 * s).collect(),
        kappa_w: per_box.iter().map(|(_, w)| w.0 * s).collect(),
        argmax_a: per_box.iter().map(|(a, _)| a.1.clone()).collect(),
        argmax_w: per_box.into_iter().map(|(_, w)| w.1).collect(),
        settings,
    })
}

/// Outcome of checking κ bounds on a fresh random sample.
#[derive(Debug, Clone, Serialize)]
pub struct KappaValidation {
    pub draws: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Largest observed `norm / κ` (1 or below means no violation).
    pub worst_ratio: f64,
}

fn random_point_in_box(grid: &GridModel, i: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let b = &grid.boxes[i];
    let u: Vec<f64> = (0..b.dim()).map(|_| open_unit(rng)).collect();
    grid.point_in_box(b, &u)
}

fn validation_tally(ratios: Vec<f64>) -> KappaValidation {
    let draws = ratios.len();
    let violations = ratios.iter().filter(|&&r| r > 1.0).count();
    KappaValidation {
        draws,
        violations,
        violation_fraction: violations as f64 / draws.max(1) as f64,
        worst_ratio: ratios.into_iter().fold(0.0, f64::max),
    }
}

fn ratio(norm: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        norm / bound
    } else if norm > 1e-12 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Resamples every box uniformly at random (ChaCha8, `seed`) and counts draws
/// whose stabilizability norm exceeds `κ_i`.
pub fn validate_kappa_stab(maps: &JumpSystemMaps, grid: &GridModel, draws_per_box: usize, seed: u64) -> Result<KappaValidation> {
    let kappa = grid
        .kappa_stab
        .as_ref()
        .ok_or_else(|| Error::Precondition("grid has no κ_stab".into()))?;
    let ratios: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let c = stab_point(maps, grid, &grid.centers[i])?;
            (0..draws_per_box)
                .map(|_| {
                    let phi = random_point_in_box(grid, i, &mut rng);
                    Ok(ratio(stab_deviation(&stab_point(maps, grid, &phi)?, &c), kappa.values[i]))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(validation_tally(ratios.into_iter().flatten().collect()))
}

/// Detectability counterpart of [`validate_kappa_stab`]; a draw violates if
/// either bound is exceeded.
pub fn validate_kappa_det(maps: &JumpSystemMaps, grid: &GridModel, draws_per_box: usize, seed: u64) -> Result<KappaValidation> {
    let kappa = grid
        .kappa_det
        .as_ref()
        .ok_or_else(|| Error::Precondition("grid has no κ_det".into()))?;
    let ratios: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let c = det_point(maps, grid, &grid.centers[i])?;
            (0..draws_per_box)
                .map(|_| {
                    let phi = random_point_in_box(grid, i, &mut rng);
                    let x = det_point(maps, grid, &phi)?;
                    let ra = ratio(spectral_norm(&(&x.am - &c.am)), kappa.kappa_a[i]);
                    let rw = ratio(sqrt_w_distance(&x.sqrt_w, &c.sqrt_w), kappa.kappa_w[i]);
                    Ok(ra.max(rw))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(validation_tally(ratios.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{TruncNormalAvgKernel, UniformKernel};

    #[test]
    fn single_box_grid() {
        let g = build_grid(Arc::new(TruncNormalAvgKernel::new(0.01, 0.0, 0.03).unwrap()), 1).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.weight(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_weights_are_equal() {
        let g = build_grid(Arc::new(UniformKernel::new(1, 0.0, 1.0).unwrap()), 4).unwrap();
        assert!(g.weight_table().iter().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn lookup_half_open_faces() {
        let g = build_grid(Arc::new(UniformKernel::new(2, 0.0, 1.0).unwrap()), 4).unwrap();
        assert_eq!(g.lookup(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(g.lookup(&[0.25, 0.0]).unwrap(), 1);
        assert_eq!(g.lookup(&[0.2499, 0.5]).unwrap(), 8);
        assert_eq!(g.lookup(&[1.0, 1.0]).unwrap(), 15);
        for (i, c) in g.centers().iter().enumerate() {
            assert_eq!(g.lookup(c).unwrap(), i);
        }
        assert!(g.lookup(&[1.1, 0.0]).is_err());
    }

    #[test]
    fn parent_index_maps_children_into_parents() {
        let k = Arc::new(UniformKernel::new(2, 0.0, 1.0).unwrap());
        let coarse = build_grid(k.clone(), 2).unwrap();
        let fine = build_grid(k, 4).unwrap();
        for (i, c) in fine.centers().iter().enumerate() {
            assert_eq!(coarse.parent_index(i, 2), coarse.lookup(c).unwrap());
        }
    }

    #[test]
    fn cap_is_enforced() {
        let k = Arc::new(UniformKernel::new(2, 0.0, 1.0).unwrap());
        let err = build_grid_capped(k, 10, 50).unwrap_err();
        assert!(matches!(err, Error::Resource { cap: 50, requested: 100, .. }));
    }

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn samples_stay_in_their_box() {
        let g = build_grid(Arc::new(UniformKernel::new(2, 0.0, 1.0).unwrap()), 3).unwrap();
        for i in 0..g.len() {
            for s in g.kappa_samples(i, 16) {
                assert_eq!(g.lookup(&s).unwrap(), i);
            }
        }
    }
}
