//! Composition of splitting schemes into longer single-step schemes.

use super::coeffs::{check_consistency, check_symmetry, SplitCoeffs};
use crate::error::{Error, Result};

/// Tolerance used to decide whether an input scheme is symmetric/consistent.
const STRUCTURE_TOL: f64 = 1e-12;

/// Concatenate scaled copies of `coeffs`, first copy acting first.
///
/// When a copy ends in a zero `beta`, its last `alpha` flow is adjacent to the
/// first `alpha` flow of the next copy and the two are merged into one stage.
fn concat_scaled(coeffs: &SplitCoeffs, weights: &[f64]) -> SplitCoeffs {
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for &w in weights {
        let mut stages = coeffs
            .alpha()
            .iter()
            .zip(coeffs.beta())
            .map(|(a, b)| (a * w, b * w));
        if beta.last() == Some(&0.0) {
            let (a1, b1) = stages.next().expect("schemes have at least one stage");
            *alpha.last_mut().unwrap() += a1;
            *beta.last_mut().unwrap() = b1;
        }
        for (a, b) in stages {
            alpha.push(a);
            beta.push(b);
        }
    }
    SplitCoeffs::new(alpha, beta).expect("finite inputs give finite outputs")
}

/// One step of size `h` equivalent to `n` steps of size `h / n`.
pub fn repeat_scheme(coeffs: &SplitCoeffs, n: usize) -> Result<SplitCoeffs> {
    if n < 1 {
        return Err(Error::invalid("repeat count must be at least 1"));
    }
    if n == 1 {
        return Ok(coeffs.clone());
    }
    let w = 1.0 / n as f64;
    Ok(concat_scaled(coeffs, &vec![w; n]))
}

/// Triple-jump weights `(mu_1, mu_2, mu_3)` raising a symmetric order-`p` method.
pub fn triple_jump_weights(order: u32) -> (f64, f64, f64) {
    let mu1 = 1.0 / (2.0 - 2f64.powf(1.0 / (order as f64 + 1.0)));
    (mu1, 1.0 - 2.0 * mu1, mu1)
}

/// Compose `coeffs` with the triple-jump weights for a method of order `order`.
pub fn triple_jump(coeffs: &SplitCoeffs, order: u32) -> Result<SplitCoeffs> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::invalid(format!(
            "triple jump needs an even current order, got {order}"
        )));
    }
    if !check_symmetry(coeffs, STRUCTURE_TOL) {
        return Err(Error::NotSymmetric);
    }
    if !check_consistency(coeffs, STRUCTURE_TOL) {
        return Err(Error::NotConsistent);
    }
    let (m1, m2, m3) = triple_jump_weights(order);
    Ok(concat_scaled(coeffs, &[m1, m2, m3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitcore::coeffs::ReducedCoeffs;

    #[test]
    fn strang_four_times() {
        let s = repeat_scheme(&SplitCoeffs::strang(), 4).unwrap();
        assert_eq!(s.stages(), 5);
        assert_eq!(s.alpha(), &[0.125, 0.25, 0.25, 0.25, 0.125]);
        assert_eq!(s.beta(), &[0.25, 0.25, 0.25, 0.25, 0.0]);
        assert_eq!(s.reduce(0.0).unwrap().gamma(), &[0.125, 0.25, 0.25]);
    }

    #[test]
    fn trotter_twice_has_no_merge() {
        let s = repeat_scheme(&SplitCoeffs::trotter(), 2).unwrap();
        assert_eq!(s.alpha(), &[0.5, 0.5]);
        assert_eq!(s.beta(), &[0.5, 0.5]);
    }

    #[test]
    fn repeat_once_is_identity() {
        let s = ReducedCoeffs::new(6, vec![0.1, -0.2, 0.3, 0.05]).unwrap().expand();
        assert_eq!(repeat_scheme(&s, 1).unwrap(), s);
        assert!(repeat_scheme(&s, 0).is_err());
    }

    #[test]
    fn repeat_keeps_k_rule() {
        // symmetric K-stage, n copies -> n(K-1) + 1 stages
        let s = ReducedCoeffs::new(5, vec![0.3, -0.1, -0.1]).unwrap().expand();
        let r = repeat_scheme(&s, 3).unwrap();
        assert_eq!(r.stages(), 13);
        assert!(check_symmetry(&r, 1e-14));
        assert!(check_consistency(&r, 1e-14));
    }

    #[test]
    fn mu_for_order_two() {
        let (m1, m2, m3) = triple_jump_weights(2);
        assert!((m1 - 1.351207191959657).abs() < 1e-12);
        assert_eq!(m1, m3);
        assert!((m1 + m2 + m3 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn yoshida_from_strang() {
        let y = triple_jump(&SplitCoeffs::strang(), 2).unwrap();
        assert_eq!(y.stages(), 4);
        let g = y.reduce(1e-12).unwrap();
        // tabulated values are truncated, not rounded, to five decimals
        let trunc = |x: f64| (x * 1e5).trunc() / 1e5;
        assert_eq!(trunc(g.gamma()[0]), 0.67560);
        assert_eq!(trunc(g.gamma()[1]), 1.35120);
    }

    #[test]
    fn triple_jump_of_yoshida() {
        let y = triple_jump(&SplitCoeffs::strang(), 2).unwrap();
        let y6 = triple_jump(&y, 4).unwrap();
        assert_eq!(y6.stages(), 10);
        assert!(check_symmetry(&y6, 1e-13));
        assert!(check_consistency(&y6, 1e-13));
    }

    #[test]
    fn triple_jump_rejects_trotter() {
        assert!(matches!(
            triple_jump(&SplitCoeffs::trotter(), 2),
            Err(Error::NotSymmetric)
        ));
        assert!(triple_jump(&SplitCoeffs::strang(), 3).is_err());
    }
}
