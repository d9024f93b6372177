use splitlearn::analysis::scheme_empirical_order;
use splitlearn::data::{generate_batch, DistributionParams};
use splitlearn::reference::ReferencePropagator;
use splitlearn::spectral::{Quartic, SpectralProblem};
use splitlearn::splitcore::{builtin, order_residuals, triple_jump, BUILTIN_NAMES};

fn double_well() -> (SpectralProblem, ReferencePropagator) {
    let p = SpectralProblem::with_quartic(200, 10.0, Quartic::DOUBLE_WELL).unwrap();
    let r = ReferencePropagator::build(&p).unwrap();
    (p, r)
}

#[test]
fn strang_is_second_order_against_the_reference() {
    let (p, r) = double_well();
    let data = generate_batch(&p, &r, DistributionParams::U1, 20, 3, 1.0).unwrap();
    let est = scheme_empirical_order(&p, &builtin("strang").unwrap(), &data.pairs, &[10, 20, 40, 80, 160], 1.0)
        .unwrap();
    assert!(!est.non_asymptotic, "{est:?}");
    assert!((est.order - 2.0).abs() <= 0.1, "{est:?}");
}

#[test]
fn sixth_order_composition_matches_reference() {
    let (p, r) = double_well();
    let six = triple_jump(&builtin("yoshida").unwrap().coeffs, 4).unwrap();
    assert_eq!(six.stages(), 10);
    assert!(order_residuals(&six).l1() < 1e-10);
    let data = generate_batch(&p, &r, DistributionParams::U1, 10, 4, 10.0).unwrap();
    for (u0, uref) in &data.pairs {
        let u = p.apply_scheme(u0, &six, 10.0 / 5000.0, 5000).unwrap().state;
        assert!(u.distance(uref) <= 1e-8, "{}", u.distance(uref));
    }
}

#[test]
fn builtin_schemes_conserve_norm_on_double_well() {
    let (p, r) = double_well();
    let data = generate_batch(&p, &r, DistributionParams::U1, 3, 8, 10.0).unwrap();
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        for (u0, _) in &data.pairs {
            let u = p.apply_scheme(u0, &s.coeffs, 1.0 / 7.0, 70).unwrap().state;
            assert!((u.norm() - u0.norm()).abs() <= 1e-12, "{name}");
        }
    }
}
