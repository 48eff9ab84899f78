use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(A + damping I) x = b` for a symmetric operator given as a
/// matrix-vector product. Stops once `||r|| <= tol * ||b||`.
///
/// Fails with `CgDiverged` when the tolerance is not met within `max_iters`
/// or the damped operator shows non-positive curvature.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    damping: f64,
    max_iters: usize,
    tol: f64,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = tol * b_norm;
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max_iters {
        let mut ap = apply(&p)?;
        for (a, &pi) in ap.iter_mut().zip(&p) {
            *a += damping * pi;
        }
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::CgDiverged {
                residual: rr.sqrt() / b_norm,
                iters: it,
            });
        }
        let alpha = rr / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= target {
            return Ok(CgOutcome {
                x,
                iterations: it + 1,
                residual: rr_next.sqrt() / b_norm,
            });
        }
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    Err(Error::CgDiverged {
        residual: rr.sqrt() / b_norm,
        iters: max_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(a: &[[f64; 3]; 3], v: &[f64]) -> Vec<f64> {
        a.iter().map(|row| dot(row, v)).collect()
    }

    #[test]
    fn solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let out = conjugate_gradient(|v| Ok(matvec(&a, v)), &b, 0.5, 100, 1e-12).unwrap();
        let check = matvec(&a, &out.x);
        for i in 0..3 {
            assert!((check[i] + 0.5 * out.x[i] - b[i]).abs() < 1e-10);
        }
        assert!(out.iterations <= 3);
    }

    #[test]
    fn zero_rhs_is_exact_zero() {
        let out = conjugate_gradient(|v| Ok(v.to_vec()), &[0.0; 4], 1e-2, 10, 1e-8).unwrap();
        assert_eq!(out.x, vec![0.0; 4]);
    }

    #[test]
    fn indefinite_operator_is_reported() {
        let a = [[-5.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let res = conjugate_gradient(|v| Ok(matvec(&a, v)), &[1.0, 0.0, 0.0], 1e-2, 100, 1e-8);
        assert!(matches!(res, Err(Error::CgDiverged { .. })));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let a = [[100.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 1.0]];
        let res = conjugate_gradient(|v| Ok(matvec(&a, v)), &[1.0, 1.0, 1.0], 0.0, 1, 1e-8);
        assert!(matches!(res, Err(Error::CgDiverged { iters: 1, .. })));
    }
}
