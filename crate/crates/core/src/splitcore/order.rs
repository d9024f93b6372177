//! Fourth-order residuals of symmetric schemes and projection onto their zero set.
//!
//! With cumulative sums `c_k = alpha_1 + ... + alpha_k` and
//! `d_k = beta_1 + ... + beta_k`, the residuals are
//!
//! ```text
//! w112 = sum_k beta_k  c_k^2     - 1/3
//! w122 = sum_k alpha_k d_(k-1)^2 - 1/3
//! ```
//!
//! For a consistent symmetric scheme both vanish exactly when the scheme is at
//! least fourth order.

use nalgebra::{DMatrix, DVector};

use super::coeffs::{transform_jacobian, ReducedCoeffs, SplitCoeffs};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderResiduals {
    pub w112: f64,
    pub w122: f64,
}

impl OrderResiduals {
    /// `|w112| + |w122|`.
    pub fn l1(&self) -> f64 {
        self.w112.abs() + self.w122.abs()
    }
}

pub fn order_residuals(coeffs: &SplitCoeffs) -> OrderResiduals {
    let (w112, w122) = residuals_raw(coeffs.alpha(), coeffs.beta());
    OrderResiduals { w112, w122 }
}

fn residuals_raw(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let mut c = 0.0;
    let mut d = 0.0;
    let mut w112 = 0.0;
    let mut w122 = 0.0;
    for (a, b) in alpha.iter().zip(beta) {
        w122 += a * d * d;
        c += a;
        w112 += b * c * c;
        d += b;
    }
    // (3w - 1) / 3 keeps dyadic inputs such as Strang's exact
    ((3.0 * w112 - 1.0) / 3.0, (3.0 * w122 - 1.0) / 3.0)
}

/// Gradients and Hessians of `(w112, w122)` with respect to `(alpha, beta)`.
///
/// Both residuals are quadratic, so the Hessians are constant in the
/// coefficients of the other family.
struct ResidualDerivs {
    grad: [DVector<f64>; 2],
    hess: [DMatrix<f64>; 2],
}

fn residual_derivs(alpha: &[f64], beta: &[f64]) -> ResidualDerivs {
    let k = alpha.len();
    let n = 2 * k;
    let c: Vec<f64> = alpha
        .iter()
        .scan(0.0, |s, a| {
            *s += a;
            Some(*s)
        })
        .collect();
    // d_prev[k] = sum_{j<k} beta_j
    let d_prev: Vec<f64> = beta
        .iter()
        .scan(0.0, |s, b| {
            let out = *s;
            *s += b;
            Some(out)
        })
        .collect();

    let mut g112 = DVector::zeros(n);
    let mut h112 = DMatrix::zeros(n, n);
    let mut g122 = DVector::zeros(n);
    let mut h122 = DMatrix::zeros(n, n);

    // w112 = sum_k beta_k c_k^2
    for j in 0..k {
        g112[j] = 2.0 * (j..k).map(|m| beta[m] * c[m]).sum::<f64>();
        g112[k + j] = c[j] * c[j];
        for l in 0..k {
            h112[(j, l)] = 2.0 * (j.max(l)..k).map(|m| beta[m]).sum::<f64>();
        }
        for m in j..k {
            h112[(j, k + m)] = 2.0 * c[m];
            h112[(k + m, j)] = 2.0 * c[m];
        }
    }
    // w122 = sum_k alpha_k d_prev_k^2
    for j in 0..k {
        g122[j] = d_prev[j] * d_prev[j];
        g122[k + j] = 2.0 * ((j + 1)..k).map(|m| alpha[m] * d_prev[m]).sum::<f64>();
        for l in 0..k {
            h122[(k + j, k + l)] = 2.0 * ((j.max(l) + 1)..k).map(|m| alpha[m]).sum::<f64>();
        }
        for m in (j + 1)..k {
            h122[(m, k + j)] = 2.0 * d_prev[m];
            h122[(k + j, m)] = 2.0 * d_prev[m];
        }
    }
    ResidualDerivs {
        grad: [g112, g122],
        hess: [h112, h122],
    }
}

/// Residuals of `expand(gamma)` with gradient `(2 x n)` and Hessians in gamma space.
pub(crate) fn residuals_in_gamma(
    reduced: &ReducedCoeffs,
) -> ([f64; 2], DMatrix<f64>, [DMatrix<f64>; 2]) {
    let k = reduced.stages();
    let n = k - 2;
    let coeffs = reduced.expand();
    let (w112, w122) = residuals_raw(coeffs.alpha(), coeffs.beta());
    let rows = transform_jacobian(k);
    let g = DMatrix::from_fn(2 * k, n, |i, j| rows[i][j]);
    let d = residual_derivs(coeffs.alpha(), coeffs.beta());
    let mut jac = DMatrix::zeros(2, n);
    for i in 0..2 {
        let gi = g.transpose() * &d.grad[i];
        jac.row_mut(i).copy_from(&gi.transpose());
    }
    let hess = [
        g.transpose() * &d.hess[0] * &g,
        g.transpose() * &d.hess[1] * &g,
    ];
    ([w112, w122], jac, hess)
}

const PROJECTION_MAX_ITERS: usize = 100;
const PROJECTION_TOL: f64 = 1e-12;

/// Closest point (Euclidean in gamma space) on `w112 = w122 = 0`.
///
/// Newton iteration on the KKT system of
/// `min |x - gamma|^2 / 2  s.t.  w(x) = 0`, started from `x = gamma`.
pub fn project_to_fourth_order(reduced: &ReducedCoeffs) -> Result<ReducedCoeffs> {
    let k = reduced.stages();
    if k < 5 {
        return Err(Error::invalid(format!(
            "projection onto the fourth-order set needs K >= 5, got K = {k}"
        )));
    }
    let n = k - 2;
    let target = DVector::from_column_slice(reduced.gamma());
    let mut x = target.clone();
    let mut lambda = DVector::<f64>::zeros(2);
    let mut last = f64::INFINITY;

    for _ in 0..PROJECTION_MAX_ITERS {
        let cur = ReducedCoeffs::new(k, x.iter().copied().collect())?;
        let (w, jac, hess) = residuals_in_gamma(&cur);
        let w = DVector::from_column_slice(&w);
        let stationarity = (&x - &target) + jac.transpose() * &lambda;
        last = w.amax().max(stationarity.amax());
        if w.amax() <= PROJECTION_TOL && stationarity.amax() <= 1e-10 {
            return Ok(cur);
        }
        let mut kkt = DMatrix::zeros(n + 2, n + 2);
        let mut lag_hess = DMatrix::identity(n, n);
        lag_hess += &hess[0] * lambda[0] + &hess[1] * lambda[1];
        kkt.view_mut((0, 0), (n, n)).copy_from(&lag_hess);
        kkt.view_mut((0, n), (n, 2)).copy_from(&jac.transpose());
        kkt.view_mut((n, 0), (2, n)).copy_from(&jac);
        let mut rhs = DVector::zeros(n + 2);
        rhs.rows_mut(0, n).copy_from(&(-stationarity));
        rhs.rows_mut(n, 2).copy_from(&(-w));
        let step = kkt.lu().solve(&rhs).ok_or(Error::NoConvergence {
            what: "fourth-order projection (singular KKT system)",
            iterations: 0,
            residual: last,
        })?;
        x += step.rows(0, n);
        lambda += step.rows(n, 2);
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Err(Error::NoConvergence {
        what: "fourth-order projection",
        iterations: PROJECTION_MAX_ITERS,
        residual: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitcore::compose::{repeat_scheme, triple_jump};

    #[test]
    fn strang_residuals() {
        let r = order_residuals(&SplitCoeffs::strang());
        assert!((r.w112 + 1.0 / 12.0).abs() < 1e-16);
        assert!((r.w122 - 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn yoshida_residuals_vanish() {
        let y = triple_jump(&SplitCoeffs::strang(), 2).unwrap();
        assert!(order_residuals(&y).l1() < 1e-10);
    }

    #[test]
    fn strang4x_residuals() {
        let s = repeat_scheme(&SplitCoeffs::strang(), 4).unwrap();
        let r = order_residuals(&s);
        assert!((r.w112 + 1.0 / 192.0).abs() < 1e-12);
        assert!((r.w122 - 1.0 / 96.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_gradient_matches_differences() {
        let r = ReducedCoeffs::new(7, vec![0.3, -0.2, 0.1, 0.25, -0.05]).unwrap();
        let (_, jac, hess) = residuals_in_gamma(&r);
        let eps = 1e-6;
        for j in 0..5 {
            let mut p = r.gamma().to_vec();
            let mut m = r.gamma().to_vec();
            p[j] += eps;
            m[j] -= eps;
            let (wp, jp, _) = residuals_in_gamma(&ReducedCoeffs::new(7, p).unwrap());
            let (wm, jm, _) = residuals_in_gamma(&ReducedCoeffs::new(7, m).unwrap());
            for i in 0..2 {
                let fd = (wp[i] - wm[i]) / (2.0 * eps);
                assert!((fd - jac[(i, j)]).abs() < 1e-8);
                for l in 0..5 {
                    let fdh = (jp[(i, l)] - jm[(i, l)]) / (2.0 * eps);
                    assert!((fdh - hess[i][(l, j)]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn projection_of_learned_five_stage() {
        let r = ReducedCoeffs::new(5, vec![0.3627, -0.1003, -0.1353]).unwrap();
        let p = project_to_fourth_order(&r).unwrap();
        let expect = [0.346, -0.112, -0.132];
        for (a, b) in p.gamma().iter().zip(expect) {
            assert!((a - b).abs() < 0.02, "{:?}", p.gamma());
        }
        assert!(order_residuals(&p.expand()).l1() <= 1e-10);
    }

    #[test]
    fn projection_fixed_point_and_idempotence() {
        let r = ReducedCoeffs::new(5, vec![0.3627, -0.1003, -0.1353]).unwrap();
        let p = project_to_fourth_order(&r).unwrap();
        let pp = project_to_fourth_order(&p).unwrap();
        for (a, b) in p.gamma().iter().zip(pp.gamma()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_rejects_short_schemes() {
        let r = ReducedCoeffs::new(4, vec![0.6, 1.3]).unwrap();
        assert!(project_to_fourth_order(&r).is_err());
    }
}
