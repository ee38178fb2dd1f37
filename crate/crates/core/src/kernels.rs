//! Gaussian base kernels, centering, weighted combination, and kernel-weight
//! learning by target alignment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, require_square};
use crate::qp::{solve_nonneg_qp, QpSolution};

/// Ten bandwidths evenly spaced over `[0.1, 1]`.
pub fn default_bandwidths() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Pairwise squared Euclidean distances between the columns of `x` and `x2`.
///
/// Each entry is accumulated in feature order, so the result is bit-identical
/// regardless of how entries are scheduled and exactly symmetric when `x2 == x`.
pub fn squared_distances(x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != x2.nrows() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            x.nrows(),
            x2.nrows()
        )));
    }
    let mut out = DMatrix::zeros(x.ncols(), x2.ncols());
    for j in 0..x2.ncols() {
        let b = x2.column(j);
        for i in 0..x.ncols() {
            let a = x.column(i);
            let mut acc = 0.0;
            for k in 0..a.len() {
                let d = a[k] - b[k];
                acc += d * d;
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!(
            "kernel bandwidth must be positive and finite, got {sigma}"
        )));
    }
    Ok(())
}

pub fn gaussian_from_sq_dist(sq: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    let denom = 2.0 * sigma * sigma;
    Ok(sq.map(|d| (-d / denom).exp()))
}

/// `k(x_i, x'_j) = exp(−‖x_i − x'_j‖² / (2σ²))` over the columns of `x` and `x2`.
pub fn gaussian_kernel(x: &DMatrix<f64>, x2: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    gaussian_from_sq_dist(&squared_distances(x, x2)?, sigma)
}

/// Double centering: subtract row and column means, add back the grand mean.
pub fn center_kernel(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = require_square(k, "kernel")?;
    if n == 0 {
        return Ok(k.clone());
    }
    let nf = n as f64;
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let grand = col_means.iter().sum::<f64>() / nf;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        k[(i, j)] - col_means[j] - row_means[i] + grand
    }))
}

/// Frobenius cosine between `k` and the target `kt`.
pub fn alignment(k: &DMatrix<f64>, kt: &DMatrix<f64>) -> Result<f64> {
    require_square(k, "kernel")?;
    require_square(kt, "target kernel")?;
    if k.shape() != kt.shape() {
        return Err(Error::Shape(format!(
            "kernel is {:?} but target is {:?}",
            k.shape(),
            kt.shape()
        )));
    }
    let kk = frobenius_inner(k, k);
    let tt = frobenius_inner(kt, kt);
    if kk <= 0.0 {
        return Err(Error::UndefinedAlignment("kernel has zero Frobenius norm".into()));
    }
    if tt <= 0.0 {
        return Err(Error::UndefinedAlignment(
            "target kernel has zero Frobenius norm".into(),
        ));
    }
    Ok((frobenius_inner(k, kt) / (kk.sqrt() * tt.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct BaseKernelBank {
    pub kernels: Vec<DMatrix<f64>>,
    pub bandwidths: Vec<f64>,
    pub centered: bool,
}

impl BaseKernelBank {
    /// Gaussian kernels of `x` against itself, one per bandwidth.
    pub fn gaussian(x: &DMatrix<f64>, bandwidths: &[f64]) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::Parameter("bandwidth grid is empty".into()));
        }
        let sq = squared_distances(x, x)?;
        let kernels = bandwidths
            .iter()
            .map(|&s| gaussian_from_sq_dist(&sq, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kernels,
            bandwidths: bandwidths.to_vec(),
            centered: false,
        })
    }

    /// Bank of arbitrary precomputed kernels, treated as uncentered.
    pub fn from_kernels(kernels: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = kernels
            .first()
            .map(|k| k.nrows())
            .ok_or_else(|| Error::Parameter("kernel bank is empty".into()))?;
        for k in &kernels {
            if k.shape() != (n, n) {
                return Err(Error::Shape("kernel bank matrices differ in shape".into()));
            }
        }
        let bandwidths = vec![f64::NAN; kernels.len()];
        Ok(Self {
            kernels,
            bandwidths,
            centered: false,
        })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.kernels.first().map_or(0, |k| k.nrows())
    }

    pub fn centered_copy(&self) -> Result<Self> {
        let kernels = self
            .kernels
            .iter()
            .map(center_kernel)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kernels,
            bandwidths: self.bandwidths.clone(),
            centered: true,
        })
    }
}

/// Nonnegative unit-norm kernel weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights(Vec<f64>);

impl KernelWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Parameter("kernel weights are empty".into()));
        }
        if omega.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter(
                "kernel weights must be finite and nonnegative".into(),
            ));
        }
        let norm = omega.iter().map(|w| w * w).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Parameter(format!(
                "kernel weights must have unit norm, got {norm}"
            )));
        }
        Ok(Self(omega))
    }

    /// Normalizes a nonnegative vector to unit norm.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let clamped: Vec<f64> = raw.iter().map(|w| w.max(0.0)).collect();
        let norm = clamped.iter().map(|w| w * w).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Parameter("cannot normalize a zero weight vector".into()));
        }
        Self::new(clamped.iter().map(|w| w / norm).collect())
    }

    pub fn single() -> Self {
        Self(vec![1.0])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `K_T = YᵀY` for a `q×N` label matrix.
#[derive(Debug, Clone)]
pub struct TargetKernel {
    pub matrix: DMatrix<f64>,
}

impl TargetKernel {
    pub fn from_labels(y: &DMatrix<f64>, center: bool) -> Result<Self> {
        let matrix = y.transpose() * y;
        let matrix = if center { center_kernel(&matrix)? } else { matrix };
        Ok(Self { matrix })
    }
}

pub fn combine(bank: &BaseKernelBank, w: &KernelWeights) -> Result<DMatrix<f64>> {
    if bank.len() != w.len() {
        return Err(Error::Shape(format!(
            "{} kernels but {} weights",
            bank.len(),
            w.len()
        )));
    }
    let n = bank.samples();
    let mut out = DMatrix::zeros(n, n);
    for (k, &wm) in bank.kernels.iter().zip(w.as_slice()) {
        out += k * wm;
    }
    Ok(out)
}

/// Weighted sum of cross-kernels `Σ_m ω_m k_σm(x, x2)`.
pub fn combined_cross_kernel(
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    bandwidths: &[f64],
    w: &KernelWeights,
) -> Result<DMatrix<f64>> {
    if bandwidths.len() != w.len() {
        return Err(Error::Shape(format!(
            "{} bandwidths but {} weights",
            bandwidths.len(),
            w.len()
        )));
    }
    let sq = squared_distances(x, x2)?;
    let mut out = DMatrix::zeros(x.ncols(), x2.ncols());
    for (&s, &wm) in bandwidths.iter().zip(w.as_slice()) {
        out += gaussian_from_sq_dist(&sq, s)? * wm;
    }
    Ok(out)
}

/// Everything computed while learning the weights, for logging and audits.
#[derive(Debug, Clone)]
pub struct AlignmentFit {
    pub weights: KernelWeights,
    /// `α_i = tr(K̄_i K_T)`.
    pub alpha: DVector<f64>,
    /// `V_ij = tr(K̄_i K̄_j)`.
    pub v: DMatrix<f64>,
    /// QP solution on the rescaled problem (`V / max diag`, `α / max |α|`).
    pub qp: QpSolution,
    /// Alignment of each centered base kernel with the target.
    pub base_alignments: Vec<f64>,
    /// Alignment of the learned combination.
    pub combined_alignment: f64,
}

/// Learns `ω* = q*/‖q*‖` with `q* = argmin_{q ≥ 0} qᵀVq − 2qᵀα`.
///
/// The QP is solved after dividing `V` by its largest diagonal entry and `α` by
/// its largest magnitude; `q*` only changes by a positive factor, which the
/// normalization removes.
pub fn align_weights(bank: &BaseKernelBank, target: &TargetKernel) -> Result<AlignmentFit> {
    if !bank.centered {
        return Err(Error::Parameter(
            "alignment requires a centered kernel bank".into(),
        ));
    }
    let m = bank.len();
    if m == 0 {
        return Err(Error::Parameter("kernel bank is empty".into()));
    }
    let kt = &target.matrix;
    if kt.shape() != (bank.samples(), bank.samples()) {
        return Err(Error::Shape(format!(
            "target kernel is {:?} but bank has {} samples",
            kt.shape(),
            bank.samples()
        )));
    }
    let tt = frobenius_inner(kt, kt);
    if tt <= 0.0 {
        return Err(Error::UndefinedAlignment("target kernel is all zero".into()));
    }

    let alpha = DVector::from_iterator(m, bank.kernels.iter().map(|k| frobenius_inner(k, kt)));
    let mut v = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let vij = frobenius_inner(&bank.kernels[i], &bank.kernels[j]);
            v[(i, j)] = vij;
            v[(j, i)] = vij;
        }
    }

    let base_alignments = (0..m)
        .map(|i| {
            if v[(i, i)] > 0.0 {
                alpha[i] / (v[(i, i)].sqrt() * tt.sqrt())
            } else {
                f64::NAN
            }
        })
        .collect::<Vec<_>>();

    let v_scale = v.diagonal().max();
    let a_scale = alpha.amax();
    if !(v_scale > 0.0) {
        return Err(Error::UndefinedAlignment(
            "every centered base kernel is zero".into(),
        ));
    }
    if !(a_scale > 0.0) || alpha.iter().all(|&a| a <= 0.0) {
        return Err(Error::DegenerateAlignment(format!(
            "no base kernel is positively aligned with the target (alpha = {:?})",
            alpha.as_slice()
        )));
    }
    let qp = solve_nonneg_qp(&(&v / v_scale), &(&alpha / a_scale))?;
    let norm = qp.q.norm();
    if !(norm > 0.0) {
        return Err(Error::DegenerateAlignment(format!(
            "alignment QP returned the zero vector (alpha = {:?})",
            alpha.as_slice()
        )));
    }
    let weights = KernelWeights::normalized((&qp.q / norm).as_slice())?;
    let w = DVector::from_column_slice(weights.as_slice());
    let combined_alignment = w.dot(&alpha) / ((w.transpose() * &v * &w)[(0, 0)].sqrt() * tt.sqrt());
    Ok(AlignmentFit {
        weights,
        alpha,
        v,
        qp,
        base_alignments,
        combined_alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_closed_form() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let x2 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = gaussian_kernel(&x, &x2, 1.0).unwrap();
        assert!((k[(0, 0)] - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn gaussian_self_similarity_and_wide_bandwidth() {
        let x = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, -0.5, 2.0, 0.3, 0.1]);
        let k = gaussian_kernel(&x, &x, 0.37).unwrap();
        for i in 0..3 {
            assert_eq!(k[(i, i)], 1.0);
        }
        let wide = gaussian_kernel(&x, &x, 1e6).unwrap();
        assert!(wide.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn gaussian_errors() {
        let x = DMatrix::zeros(2, 3);
        assert!(matches!(gaussian_kernel(&x, &x, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(gaussian_kernel(&x, &x, -1.0), Err(Error::Parameter(_))));
        let y = DMatrix::zeros(3, 3);
        assert!(matches!(gaussian_kernel(&x, &y, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn centering_examples() {
        let ones = DMatrix::from_element(4, 4, 1.0);
        assert!(center_kernel(&ones).unwrap().amax() < 1e-15);
        let eye = DMatrix::<f64>::identity(2, 2);
        let c = center_kernel(&eye).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((c - expected).amax() < 1e-15);
        assert!(matches!(center_kernel(&DMatrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn alignment_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert!((alignment(&eye, &ones).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((alignment(&ones, &ones).unwrap() - 1.0).abs() < 1e-15);
        assert!((alignment(&(-&ones), &ones).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            alignment(&DMatrix::zeros(2, 2), &ones),
            Err(Error::UndefinedAlignment(_))
        ));
    }

    #[test]
    fn combine_selector_and_linearity() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 3.0]);
        let bank = BaseKernelBank::from_kernels(vec![a.clone(), b]).unwrap();
        let sel = KernelWeights::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(combine(&bank, &sel).unwrap(), a);

        let twin = BaseKernelBank::from_kernels(vec![a.clone(), a.clone()]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let w = KernelWeights::new(vec![h, h]).unwrap();
        let c = combine(&twin, &w).unwrap();
        assert!((c - a * std::f64::consts::SQRT_2).amax() < 1e-15);

        assert!(matches!(
            combine(&twin, &KernelWeights::single()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_kernel_weight_is_one() {
        let x = DMatrix::from_row_slice(1, 4, &[0.0, 0.3, 1.0, 1.4]);
        let y = DMatrix::from_row_slice(1, 4, &[0.0, 0.2, 1.0, 1.1]);
        let bank = BaseKernelBank::gaussian(&x, &[0.5]).unwrap().centered_copy().unwrap();
        let fit = align_weights(&bank, &TargetKernel::from_labels(&y, false).unwrap()).unwrap();
        assert_eq!(fit.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn uncentered_bank_rejected() {
        let x = DMatrix::from_row_slice(1, 3, &[0.0, 0.3, 1.0]);
        let bank = BaseKernelBank::gaussian(&x, &[0.5]).unwrap();
        let t = TargetKernel::from_labels(&x, false).unwrap();
        assert!(matches!(align_weights(&bank, &t), Err(Error::Parameter(_))));
    }

    #[test]
    fn negatively_aligned_bank_is_degenerate() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let bank = BaseKernelBank {
            kernels: vec![k],
            bandwidths: vec![1.0],
            centered: true,
        };
        let t = TargetKernel {
            matrix: DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        };
        assert!(matches!(
            align_weights(&bank, &t),
            Err(Error::DegenerateAlignment(_))
        ));
    }
}
