//! Cross-module identity: the Gibbs-measure overlap `<A, H^n>_beta`
//! estimated by Monte Carlo equals the level-set-average side
//! `<A^H, alpha^n>_D` computed by quadrature, because monomials in the
//! conserved quantities are constant on level sets.

use corrbound::bounds::{build_overlaps, enumerate_basis};
use corrbound::dynamics::SystemSpec;
use corrbound::gibbs::{sample_gibbs, GibbsParams};
use corrbound::regular::{projected_overlap_1dof, QuadratureSpec};

#[test]
fn overlap_equals_projected_overlap() {
    let sys = SystemSpec::harmonic_oscillator();
    let params = GibbsParams {
        beta: 1.0,
        n: 40_000,
        burn_in: 5_000,
        thin: 5,
        proposal_scale: Some(1.7),
        seed: 314,
    };
    let ens = sample_gibbs(&sys, &params).unwrap();
    let basis = enumerate_basis(1, 3).unwrap();
    let a = sys.parse_observable("q1^2").unwrap();
    let mc = build_overlaps(&ens, &sys, &a, &basis, None).unwrap();

    let spec = QuadratureSpec::default();
    for n_pow in 0..=3u32 {
        let quad = projected_overlap_1dof(&sys, &a, 1.0, n_pow, &spec).unwrap();
        let mc_value = mc.vector[n_pow as usize];
        let sigma = mc.stderr[n_pow as usize];
        assert!(
            (quad - mc_value).abs() <= 3.0 * sigma + 1e-3 * quad.abs(),
            "n = {n_pow}: quadrature {quad} vs MC {mc_value} +- {sigma}"
        );
        // and both match the Gamma-integral oracle (n+1)! at beta = 1
        let oracle: f64 = (1..=(n_pow as u64 + 1)).product::<u64>() as f64;
        assert!((quad - oracle).abs() < 1e-3 * oracle);
    }
}

#[test]
fn theorem1_identity_at_modest_scale() {
    // C(A) from trajectories vs ||A^H||^2 from quadrature, beta = 2
    use corrbound::correlation::{estimate_c_pair, CorrOpts};
    use corrbound::regular::norm_ah_squared;

    let sys = SystemSpec::harmonic_oscillator();
    let params = GibbsParams {
        beta: 2.0,
        n: 20_000,
        burn_in: 5_000,
        thin: 5,
        proposal_scale: Some(1.2),
        seed: 2718,
    };
    let ens = sample_gibbs(&sys, &params).unwrap();
    let a = sys.parse_observable("q1^2").unwrap();
    let (c_norm, _) = estimate_c_pair(&sys, &a, &ens, 80.0, 1e-3, &CorrOpts { n_traj: 2048 })
        .unwrap();
    let quad = norm_ah_squared(&sys, &a, 2.0, &QuadratureSpec::default()).unwrap();
    // oracle: <H^2> = 2/beta^2 = 0.5 at beta = 2
    assert!((quad.value - 0.5).abs() < 1e-3, "{}", quad.value);
    let sigma = (c_norm.stderr.powi(2) + quad.quad_error.powi(2)).sqrt();
    assert!(
        (quad.value - c_norm.value).abs() <= 3.0 * sigma,
        "quad {} vs C {} +- {}",
        quad.value,
        c_norm.value,
        sigma
    );
}
