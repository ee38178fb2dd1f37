//! Small dense linear-algebra helpers shared by the kernel, graph and solver code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Frobenius inner product `⟨A, B⟩_F = Σ_ij A_ij B_ij`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn require_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Average `m` with its transpose to remove rounding asymmetry.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigen(m).map_or(f64::NAN, |(values, _)| values.min())
}

/// Symmetric eigendecomposition that survives nalgebra's occasional NaN
/// output. The implicit-QR sweeps can break down on matrices with exact-zero
/// subcolumns next to entries hundreds of orders of magnitude apart (typical
/// of `SᵀS` once ℓ2,1 shrinkage has nearly zeroed some columns of `S`). On
/// failure the matrix is conjugated by a fixed Householder reflection, which
/// fills it in, and the eigenvectors are reflected back.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = require_square(m, "matrix")?;
    let sym = symmetrize(m);
    let finite = |e: &SymmetricEigen<f64, nalgebra::Dyn>| {
        e.eigenvalues.iter().chain(e.eigenvectors.iter()).all(|v| v.is_finite())
    };
    let eig = SymmetricEigen::new(sym.clone());
    if finite(&eig) {
        return Ok((eig.eigenvalues, eig.eigenvectors));
    }
    for attempt in 1..=4u32 {
        let mut v = DVector::from_fn(n, |i, _| {
            1.0 + ((i as f64 + 1.0) * (0.618_033_988_749_895 * attempt as f64)).fract()
        });
        v /= v.norm();
        // H M H with H = I − 2vvᵀ
        let mv = &sym * &v;
        let vmv = v.dot(&mv);
        let w = &mv - &v * vmv;
        let reflected = &sym - (&v * w.transpose() + &w * v.transpose()) * 2.0;
        let eig = SymmetricEigen::new(symmetrize(&reflected));
        if finite(&eig) {
            let mut vecs = eig.eigenvectors;
            let proj = v.transpose() * &vecs;
            vecs -= &v * proj * 2.0;
            return Ok((eig.eigenvalues, vecs));
        }
    }
    Err(Error::Solver("symmetric eigendecomposition did not produce finite values".into()))
}

/// Eigen-decomposition of a symmetric PSD matrix with negative rounding noise
/// in the spectrum clamped to zero.
pub fn psd_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (values, vectors) = symmetric_eigen(m)?;
    Ok((values.map(|v| v.max(0.0)), vectors))
}

/// Symmetric square root of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = psd_eigen(m)?;
    let mut scaled = vectors.clone();
    for (j, v) in values.iter().enumerate() {
        let s = v.sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(&scaled * vectors.transpose())
}

/// Solve `A x = B` for symmetric positive (semi)definite `A`. Falls back to a
/// ridge of `1e-10·trace(A)/n` when Cholesky fails; the flag reports whether
/// the ridge was needed.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let n = require_square(a, "system matrix")?;
    if let Some(chol) = a.clone().cholesky() {
        return Ok((chol.solve(b), false));
    }
    let ridge = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += ridge;
    }
    if let Some(chol) = shifted.clone().cholesky() {
        return Ok((chol.solve(b), true));
    }
    shifted
        .lu()
        .solve(b)
        .map(|x| (x, true))
        .ok_or_else(|| Error::Solver("singular system matrix".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = psd_sqrt(&a).unwrap();
        assert!((&r * &r - &a).norm() < 1e-12);
    }

    #[test]
    fn spd_solve_singular_uses_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (_, ridged) = spd_solve(&a, &b).unwrap();
        assert!(ridged);
    }
}
