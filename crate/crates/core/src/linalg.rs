//! Dense linear-algebra helpers: the matrix exponential, symmetric
//! eigenvalue queries and factorizations used across the toolkit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

// Higham (2005) scaling-and-squaring thresholds for Padé degrees 3, 5, 7, 9, 13
// in the 1-norm.
const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_230e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068;
const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant, degree and scaling chosen from the 1-norm.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let ident = DMatrix::<f64>::identity(n, n);
    let norm = norm1(a);
    if norm == 0.0 {
        return ident;
    }

    let a2 = a * a;
    let (u, v, squarings) = if norm <= THETA_9 {
        let coeffs: &[f64] = if norm <= THETA_3 {
            &PADE_3
        } else if norm <= THETA_5 {
            &PADE_5
        } else if norm <= THETA_7 {
            &PADE_7
        } else {
            &PADE_9
        };
        let (u, v) = pade_low(a, &a2, coeffs);
        (u, v, 0)
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        let scale = 2f64.powi(-s);
        let a_s = a * scale;
        let a2_s = &a2 * (scale * scale);
        let (u, v) = pade_13(&a_s, &a2_s);
        (u, v, s)
    };

    let numer = &v + &u;
    let denom = &v - &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular for the chosen scaling");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn pade_low(a: &DMatrix<f64>, a2: &DMatrix<f64>, c: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let mut u_inner = &ident * c[1];
    let mut v = &ident * c[0];
    let mut power = ident.clone();
    let mut k = 2;
    while k < c.len() {
        power = &power * a2;
        v += &power * c[k];
        if k + 1 < c.len() {
            u_inner += &power * c[k + 1];
        }
        k += 2;
    }
    (a * u_inner, v)
}

fn pade_13(a: &DMatrix<f64>, a2: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let c = &PADE_13;
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a4 = a2 * a2;
    let a6 = &a4 * a2;
    let u_hi = &a6 * c[13] + &a4 * c[11] + a2 * c[9];
    let u_inner = &a6 * u_hi + &a6 * c[7] + &a4 * c[5] + a2 * c[3] + &ident * c[1];
    let u = a * u_inner;
    let v_hi = &a6 * c[12] + &a4 * c[10] + a2 * c[8];
    let v = &a6 * v_hi + &a6 * c[6] + &a4 * c[4] + a2 * c[2] + &ident * c[0];
    (u, v)
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral (largest singular value) norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    max_eigenvalue(&gram).max(0.0).sqrt()
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Largest absolute entrywise difference; `INFINITY` on shape mismatch.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Solves `M X = B` for symmetric positive definite `M`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Inverse of a general square matrix via LU.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what.to_string()))
    }
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Row-major nested vectors to a matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Matrix to row-major nested vectors.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&z), DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_diagonal_matches_scalar_exp() {
        for &scale in &[1e-4, 0.1, 1.0, 3.0, 12.0, 40.0] {
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                scale,
                -scale,
                0.5 * scale,
            ]));
            let e = expm(&d);
            for i in 0..3 {
                let expect = d[(i, i)].exp();
                assert!(((e[(i, i)] - expect) / expect).abs() < 1e-13, "{scale}");
            }
        }
    }

    #[test]
    fn expm_nilpotent_block() {
        // exp([[0, 1], [0, 0]] t) = [[1, t], [0, 1]]
        let t = 2.5;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, t, 0.0, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 1)] - t).abs() < 1e-14);
        assert!((e[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expm_rotation() {
        let w = 7.0;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] - w.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - w.sin()).abs() < 1e-13);
    }

    #[test]
    fn expm_semigroup_property() {
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.4, 2.0, -0.7, 0.1, -0.5, 0.9, 0.2]);
        let e1 = expm(&a);
        let e_half = expm(&(&a * 0.5));
        assert!(max_abs_diff(&e1, &(&e_half * &e_half)) < 1e-13);
    }

    #[test]
    fn spectral_norm_of_diag() {
        let d = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, -4.0, 0.0]);
        assert!((spectral_norm(&d) - 4.0).abs() < 1e-14);
    }
}
