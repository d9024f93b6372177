use splitlearn::data::{
    generate_batch, generate_batch_with, load_dataset, save_dataset, BranchProbs, DistributionParams,
};
use splitlearn::reference::ReferencePropagator;
use splitlearn::spectral::{Quartic, SpectralProblem};

fn setup() -> (SpectralProblem, ReferencePropagator) {
    let p = SpectralProblem::with_quartic(200, 10.0, Quartic::DOUBLE_WELL).unwrap();
    let r = ReferencePropagator::build(&p).unwrap();
    (p, r)
}

#[test]
fn reset_centres_follow_the_distribution() {
    let (p, r) = setup();
    let resets = BranchProbs { add: 0.0, phase: 0.0, reset: 1.0 };
    let data = generate_batch_with(&p, &r, DistributionParams::U1, resets, 500, 17, 0.0).unwrap();
    let xs = p.grid().points();
    let mean_x = data
        .pairs
        .iter()
        .map(|(u, _)| u.0.iter().zip(xs).map(|(z, x)| z.norm_sqr() * x).sum::<f64>())
        .sum::<f64>()
        / 500.0;
    let tol = 3.0 * 0.1 / 500f64.sqrt();
    assert!((mean_x + 5f64.sqrt()).abs() <= tol, "mean <x> = {mean_x}");
}

#[test]
fn items_are_normalised_and_labelled() {
    let (p, r) = setup();
    let data = generate_batch(&p, &r, DistributionParams::U2, 40, 5, 10.0).unwrap();
    for (u0, uref) in &data.pairs {
        assert!(u0.is_finite() && uref.is_finite());
        assert!((u0.norm() - 1.0).abs() <= 1e-12);
        assert!((uref.norm() - 1.0).abs() <= 1e-10);
        assert!(r.propagate(u0, 10.0).unwrap().distance(uref) <= 1e-12);
    }
}

#[test]
fn prefixes_are_reproducible() {
    let (p, r) = setup();
    let long = generate_batch(&p, &r, DistributionParams::U1, 30, 99, 10.0).unwrap();
    let short = generate_batch(&p, &r, DistributionParams::U1, 11, 99, 10.0).unwrap();
    assert_eq!(&long.pairs[..11], &short.pairs[..]);
    let other = generate_batch(&p, &r, DistributionParams::U1, 11, 100, 10.0).unwrap();
    assert_ne!(other.pairs, short.pairs);
}

#[test]
fn saved_datasets_round_trip() {
    let (p, r) = setup();
    let data = generate_batch(&p, &r, DistributionParams::U3, 7, 1, 10.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&data, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), data);
}
