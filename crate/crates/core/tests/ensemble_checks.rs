use homlab_core::corrector::{ahom_l_ensemble, b_field, solve_correctors};
use homlab_core::elliptic::{solve_constant, solve_variable, HomogenizedMatrix, Preconditioner, SolverConfig};
use homlab_core::ensemble::{
    expectation, sample_field, ConfigSpace, Estimate, ExpectationMode, SingleSiteMeasure, DEFAULT_ENUMERATION_BUDGET,
};
use homlab_core::lattice::{ScalarField, TorusGrid};
use homlab_core::rng::stream;
use homlab_core::twoscale::decomposition;
use rand::Rng;

fn tight() -> SolverConfig {
    SolverConfig::with_tolerance(1e-12)
}

#[test]
fn b_is_stationary_and_averages_to_the_proxy() {
    let beta = SingleSiteMeasure::default_two_point();
    let g = TorusGrid::new(2, 2).unwrap();
    let space = ConfigSpace::new(&beta, g, DEFAULT_ENUMERATION_BUDGET).unwrap();
    let tables = space.tabulate(|a| b_field(a, &solve_correctors(a, tight()).unwrap()));
    let proxy = ahom_l_ensemble(&beta, g, ExpectationMode::Exhaustive { budget: DEFAULT_ENUMERATION_BUDGET }, tight())
        .unwrap()
        .mean;
    for x in g.sites() {
        for i in 0..2 {
            for j in 0..2 {
                let values: Vec<f64> = tables.iter().map(|b| b.get(x, i, j)).collect();
                let mean = space.expectation(&values);
                assert!((mean - proxy.get(i, j)).abs() < 1e-12, "x={x} ({i},{j}): {mean}");
            }
        }
    }
}

#[test]
fn corrector_value_exhaustive_versus_monte_carlo() {
    let beta = SingleSiteMeasure::default_two_point();
    let g = TorusGrid::new(2, 2).unwrap();
    let phi0 = |a: &homlab_core::ensemble::CoefficientField| solve_correctors(a, tight()).unwrap().phi(0).get(0);
    let square = |a: &homlab_core::ensemble::CoefficientField| phi0(a).powi(2);
    let exact = expectation(&square, &beta, g, ExpectationMode::Exhaustive { budget: 1 << 10 }).unwrap();
    let mc = expectation(&square, &beta, g, ExpectationMode::MonteCarlo { samples: 100_000, seed: 17 }).unwrap();
    assert!(exact.mean > 0.0);
    assert!((exact.mean - mc.mean).abs() <= 4.0 * mc.std_error, "{exact:?} vs {mc:?}");
    // the centred value has mean zero by stationarity
    let centred = expectation(&phi0, &beta, g, ExpectationMode::Exhaustive { budget: 1 << 10 }).unwrap();
    assert!(centred.mean.abs() < 1e-12);
}

#[test]
fn r2_has_zero_monte_carlo_mean() {
    let beta = SingleSiteMeasure::default_two_point();
    let g = TorusGrid::new(2, 8).unwrap();
    let proxy = ahom_l_ensemble(&beta, g, ExpectationMode::MonteCarlo { samples: 400, seed: 3 }, tight())
        .unwrap()
        .mean;
    let f = ScalarField::from_fn(g, |x| {
        let c = g.coords(x);
        (std::f64::consts::PI * c[0] as f64 / 4.0).cos() + (std::f64::consts::PI * c[1] as f64 / 2.0).sin()
    })
    .mean_zero();
    let u0 = solve_constant(&proxy, &f).unwrap();
    let samples = 2000;
    let tables: Vec<Vec<f64>> = (0..samples as u64)
        .map(|i| {
            let a = sample_field(&beta, g, &mut stream(99, i)).unwrap();
            let c = solve_correctors(&a, tight()).unwrap();
            decomposition(&a, &c, &u0, &proxy, &proxy).unwrap().r2.into_values()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for x in g.sites() {
        let e = Estimate::from_samples(&tables.iter().map(|t| t[x]).collect::<Vec<_>>()).unwrap();
        worst = worst.max(e.mean.abs() / e.std_error);
    }
    // A fixed proxy estimated from independent draws biases every site by the same small
    // amount; the tolerance is in units of the per-site standard error.
    assert!(worst <= 4.0, "max |mean| / SE = {worst}");
}

#[test]
fn preconditioned_iterations_stay_flat_in_l() {
    let beta = SingleSiteMeasure::default_two_point();
    let mut spectral = Vec::new();
    let mut plain = Vec::new();
    for l in [8, 16, 32, 64] {
        let g = TorusGrid::new(2, l).unwrap();
        let a = sample_field(&beta, g, &mut stream(8, l as u64)).unwrap();
        let mut rng = stream(9, l as u64);
        let f = ScalarField::from_fn(g, |_| rng.random_range(-1.0..1.0)).mean_zero();
        for (pre, out) in [(Preconditioner::Spectral, &mut spectral), (Preconditioner::None, &mut plain)] {
            let cfg = SolverConfig {
                preconditioner: pre,
                ..SolverConfig::default()
            };
            let sol = solve_variable(&a, &f, cfg).unwrap();
            assert!(sol.diagnostics.converged);
            out.push(sol.diagnostics.iterations);
        }
    }
    assert!(spectral[3] <= 2 * spectral[0], "{spectral:?}");
    assert!(plain[3] >= 3 * plain[0], "{plain:?}");
    assert!(spectral.iter().zip(&plain).all(|(s, p)| s < p));
}

#[test]
fn proxy_of_a_constant_ensemble_is_the_constant() {
    let beta = SingleSiteMeasure::point_mass(vec![0.3, 0.7]).unwrap();
    let g = TorusGrid::new(2, 4).unwrap();
    let m = ahom_l_ensemble(&beta, g, ExpectationMode::Exhaustive { budget: 16 }, tight()).unwrap();
    assert!(m.mean.max_difference(&HomogenizedMatrix::diagonal(&[0.3, 0.7])) < 1e-15);
}
