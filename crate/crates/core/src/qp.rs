//! Nonnegative convex quadratic programs `min_{q ≥ 0} qᵀVq − 2qᵀα`.
//!
//! Used to turn kernel-alignment maximization into a small QP. `M` is the
//! number of base kernels, so the problems are tiny; the solver runs projected
//! gradient with Armijo backtracking and then polishes the support with an
//! exact primal active-set pass.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, require_square};

const MAX_PG_ITERS: usize = 5_000;
const ARMIJO_C: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// Smallest component of the gradient `2Vq − 2α` (should be ≥ 0 up to rounding).
    pub min_gradient: f64,
    /// `max_i |q_i·(Vq − α)_i|`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn satisfied(&self, alpha_norm: f64, tol: f64) -> bool {
        self.min_gradient >= -tol && self.complementarity <= tol * (1.0 + alpha_norm)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub q: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

pub fn qp_objective(v: &DMatrix<f64>, alpha: &DVector<f64>, q: &DVector<f64>) -> f64 {
    (q.transpose() * v * q)[(0, 0)] - 2.0 * q.dot(alpha)
}

pub fn kkt_residuals(v: &DMatrix<f64>, alpha: &DVector<f64>, q: &DVector<f64>) -> KktResiduals {
    let half_grad = v * q - alpha;
    let min_gradient = 2.0 * half_grad.min();
    let complementarity = q
        .iter()
        .zip(half_grad.iter())
        .map(|(qi, gi)| (qi * gi).abs())
        .fold(0.0, f64::max);
    KktResiduals {
        min_gradient,
        complementarity,
    }
}

/// Solves `min_{q ≥ 0} qᵀVq − 2qᵀα` for symmetric PSD `V`.
pub fn solve_nonneg_qp(v: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<QpSolution> {
    let m = require_square(v, "QP matrix V")?;
    if alpha.len() != m {
        return Err(Error::Shape(format!(
            "alpha has length {} but V is {m}x{m}",
            alpha.len()
        )));
    }
    if !is_symmetric(v, 1e-10) {
        return Err(Error::Shape("QP matrix V is not symmetric".into()));
    }
    if v.iter().chain(alpha.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Parameter("QP inputs contain non-finite values".into()));
    }
    if m == 0 {
        return Ok(QpSolution {
            q: DVector::zeros(0),
            objective: 0.0,
            iterations: 0,
            kkt: KktResiduals {
                min_gradient: 0.0,
                complementarity: 0.0,
            },
        });
    }

    let tol = 1e-10 * (1.0 + alpha.amax());
    let (q_pg, pg_iters) = projected_gradient(v, alpha, tol);
    let (q, polish_iters) = active_set_polish(v, alpha, q_pg)?;
    let kkt = kkt_residuals(v, alpha, &q);
    if !kkt.satisfied(alpha.norm(), 1e-8) {
        return Err(Error::Solver(format!(
            "nonnegative QP did not reach KKT tolerance (min gradient {:.3e}, complementarity {:.3e})",
            kkt.min_gradient, kkt.complementarity
        )));
    }
    Ok(QpSolution {
        objective: qp_objective(v, alpha, &q),
        q,
        iterations: pg_iters + polish_iters,
        kkt,
    })
}

fn projected_gradient(v: &DMatrix<f64>, alpha: &DVector<f64>, tol: f64) -> (DVector<f64>, usize) {
    let m = alpha.len();
    let mut q = DVector::zeros(m);
    let mut f = qp_objective(v, alpha, &q);
    let lipschitz = 2.0 * v.diagonal().iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
    let mut step = 1.0 / lipschitz;

    for iter in 0..MAX_PG_ITERS {
        let grad = 2.0 * (v * &q - alpha);
        // projected-gradient stationarity measure
        let pg_norm = q
            .iter()
            .zip(grad.iter())
            .map(|(&qi, &gi)| if qi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
            .fold(0.0, f64::max);
        if pg_norm <= tol {
            return (q, iter);
        }
        let mut t = step * 2.0;
        loop {
            let cand = (&q - t * &grad).map(|x| x.max(0.0));
            let f_cand = qp_objective(v, alpha, &cand);
            let decrease = grad.dot(&(&cand - &q));
            if f_cand <= f + ARMIJO_C * decrease || t < 1e-300 {
                let moved = (&cand - &q).amax();
                q = cand;
                f = f_cand;
                step = t;
                if moved == 0.0 {
                    return (q, iter + 1);
                }
                break;
            }
            t *= 0.5;
        }
    }
    (q, MAX_PG_ITERS)
}

/// Least-squares solve restricted to `free`, tolerant of rank-deficient blocks.
fn solve_free(v: &DMatrix<f64>, alpha: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let k = free.len();
    let sub = DMatrix::from_fn(k, k, |i, j| v[(free[i], free[j])]);
    let rhs = DVector::from_fn(k, |i, _| alpha[free[i]]);
    if let Some(chol) = sub.clone().cholesky() {
        return chol.solve(&rhs);
    }
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(1e-300);
    svd.solve(&rhs, eps).unwrap_or_else(|_| DVector::zeros(k))
}

fn active_set_polish(
    v: &DMatrix<f64>,
    alpha: &DVector<f64>,
    start: DVector<f64>,
) -> Result<(DVector<f64>, usize)> {
    let m = alpha.len();
    let scale = start.amax().max(1e-300);
    let mut q = start.map(|x| if x > 1e-12 * scale { x } else { 0.0 });
    let mut free: Vec<usize> = (0..m).filter(|&i| q[i] > 0.0).collect();
    let tol = 1e-12 * (1.0 + alpha.amax());
    let max_iters = 10 * m + 50;

    for iter in 0..max_iters {
        let z_free = solve_free(v, alpha, &free);
        if z_free.iter().all(|&z| z > 0.0) {
            q.fill(0.0);
            for (slot, &i) in free.iter().enumerate() {
                q[i] = z_free[slot];
            }
            let half_grad = v * &q - alpha;
            let entering = (0..m)
                .filter(|i| !free.contains(i))
                .map(|i| (i, half_grad[i]))
                .filter(|&(_, g)| g < -tol)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match entering {
                None => return Ok((q, iter + 1)),
                Some((i, _)) => {
                    free.push(i);
                    free.sort_unstable();
                }
            }
            continue;
        }
        // Step toward z until the first free coordinate hits zero.
        let mut t = 1.0_f64;
        for (slot, &i) in free.iter().enumerate() {
            let z = z_free[slot];
            if z <= 0.0 {
                let denom = q[i] - z;
                if denom > 0.0 {
                    t = t.min(q[i] / denom);
                }
            }
        }
        for (slot, &i) in free.iter().enumerate() {
            q[i] += t * (z_free[slot] - q[i]);
        }
        let before = free.len();
        free.retain(|&i| q[i] > 1e-15 * scale);
        for i in 0..m {
            if !free.contains(&i) {
                q[i] = 0.0;
            }
        }
        if free.len() == before {
            // no progress possible; drop the most negative target
            if let Some((slot, _)) = z_free
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
            {
                let i = free.remove(slot);
                q[i] = 0.0;
            }
        }
    }
    Err(Error::Solver(format!(
        "active-set polish did not converge in {max_iters} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_clamps_componentwise() {
        let v = DMatrix::identity(3, 3);
        let alpha = DVector::from_vec(vec![3.0, 0.0, -2.0]);
        let sol = solve_nonneg_qp(&v, &alpha).unwrap();
        assert!((sol.q - DVector::from_vec(vec![3.0, 0.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn inactive_constraints_give_unconstrained_minimizer() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let alpha = DVector::from_vec(vec![1.0, 1.0]);
        let expected = v.clone().lu().solve(&alpha).unwrap();
        assert!(expected.iter().all(|&x| x > 0.0));
        let sol = solve_nonneg_qp(&v, &alpha).unwrap();
        assert!((sol.q - expected).amax() < 1e-8);
    }

    #[test]
    fn separable_clamp_at_zero() {
        let v = DMatrix::identity(2, 2);
        let alpha = DVector::from_vec(vec![1.0, -1.0]);
        let sol = solve_nonneg_qp(&v, &alpha).unwrap();
        assert_eq!(sol.q[1], 0.0);
        assert!((sol.q[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonsymmetric() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        let alpha = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve_nonneg_qp(&v, &alpha), Err(Error::Shape(_))));
    }

    #[test]
    fn singular_psd_matrix() {
        // rank-one V with alpha in its range
        let u = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let v = &u * u.transpose();
        let alpha = &u * 3.0;
        let sol = solve_nonneg_qp(&v, &alpha).unwrap();
        assert!(sol.kkt.satisfied(alpha.norm(), 1e-8));
        assert!((sol.objective + 9.0).abs() < 1e-8);
    }
}
