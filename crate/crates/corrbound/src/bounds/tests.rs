use super::*;
use crate::gibbs::{sample_gibbs, GibbsParams};

fn mi(v: &[u32]) -> MultiIndex {
    MultiIndex(v.to_vec())
}

#[test]
fn basis_enumeration_k1() {
    let b = enumerate_basis(1, 3).unwrap();
    assert_eq!(b.nu(), 4);
    assert_eq!(
        b.indices(),
        &[mi(&[0]), mi(&[1]), mi(&[2]), mi(&[3])]
    );
}

#[test]
fn basis_enumeration_k2_degree_then_lex() {
    let b = enumerate_basis(2, 2).unwrap();
    assert_eq!(b.nu(), 6);
    assert_eq!(
        b.indices(),
        &[
            mi(&[0, 0]),
            mi(&[0, 1]),
            mi(&[1, 0]),
            mi(&[0, 2]),
            mi(&[1, 1]),
            mi(&[2, 0]),
        ]
    );
    assert_eq!(b.nu_at_degree(0), 1);
    assert_eq!(b.nu_at_degree(1), 3);
    assert_eq!(b.nu_at_degree(2), 6);
}

#[test]
fn basis_boundary_and_cap() {
    let b = enumerate_basis(3, 0).unwrap();
    assert_eq!(b.indices(), &[mi(&[0, 0, 0])]);
    // C(6+10, 6) = 8008 > 2000
    let err = enumerate_basis(6, 10).unwrap_err();
    assert!(matches!(err, BoundsError::BasisCapExceeded { .. }));
    assert!(enumerate_basis_capped(6, 10, 10_000).is_ok());
}

fn ho_ensemble(n: usize, seed: u64) -> (SystemSpec, GibbsEnsemble) {
    let sys = SystemSpec::harmonic_oscillator();
    let params = GibbsParams {
        beta: 1.0,
        n,
        burn_in: 2_000,
        thin: 5,
        proposal_scale: Some(1.7),
        seed,
    };
    let ens = sample_gibbs(&sys, &params).unwrap();
    (sys, ens)
}

#[test]
fn gram_ho_moments_and_symmetry() {
    let (sys, ens) = ho_ensemble(20_000, 42);
    let basis = enumerate_basis(1, 1).unwrap();
    let g = build_gram(&ens, &sys, &basis).unwrap();
    // <1,1> = 1 exactly by normalization
    assert_eq!(g.matrix[(0, 0)], 1.0);
    // Gamma moments: <H> = 1, <H^2> = 2
    assert!((g.matrix[(0, 1)] - 1.0).abs() < 3.0 * g.stderr[(0, 1)].max(1e-3));
    assert!((g.matrix[(1, 1)] - 2.0).abs() < 3.0 * g.stderr[(1, 1)].max(1e-2));
    // exact symmetry: estimated once per unordered pair
    assert_eq!(g.matrix[(0, 1)], g.matrix[(1, 0)]);
}

#[test]
fn overlaps_ho_and_trivial_entries() {
    let (sys, ens) = ho_ensemble(20_000, 7);
    let basis = enumerate_basis(1, 2).unwrap();
    let one = sys.parse_observable("1").unwrap();
    let v = build_overlaps(&ens, &sys, &one, &basis, None).unwrap();
    assert_eq!(v.vector[0], 1.0);

    // <q^2 H> = <H^2> = 2 (level-set average of q^2 is E)
    let a = sys.parse_observable("q1^2").unwrap();
    let v = build_overlaps(&ens, &sys, &a, &basis, None).unwrap();
    assert!((v.vector[1] - 2.0).abs() < 4.0 * v.stderr[1], "{}", v.vector[1]);
}

#[test]
fn gram_consistency_is_bit_exact() {
    // build_gram entry (a, b) == build_overlaps with A = monomial a, at b
    let (sys, ens) = ho_ensemble(5_000, 3);
    let basis = enumerate_basis(1, 4).unwrap();
    let g = build_gram(&ens, &sys, &basis).unwrap();
    for (a_deg, a_text) in [(1u32, "H1"), (2, "H1^2"), (4, "H1^4")] {
        let a = sys.parse_observable(a_text).unwrap();
        let v = build_overlaps(&ens, &sys, &a, &basis, None).unwrap();
        for b_idx in 0..basis.nu() {
            assert_eq!(
                g.matrix[(a_deg as usize, b_idx)].to_bits(),
                v.vector[b_idx].to_bits(),
                "pair ({a_deg}, {b_idx})"
            );
        }
    }
}

#[test]
fn pendulum_odd_observable_overlaps_vanish() {
    let sys = SystemSpec::pendulum();
    let params = GibbsParams {
        beta: 1.0,
        n: 20_000,
        burn_in: 2_000,
        thin: 5,
        proposal_scale: Some(1.4),
        seed: 5,
    };
    let ens = sample_gibbs(&sys, &params).unwrap();
    let basis = enumerate_basis(1, 3).unwrap();
    let a = sys.parse_observable("p1").unwrap();
    let v = build_overlaps(&ens, &sys, &a, &basis, None).unwrap();
    for i in 0..basis.nu() {
        assert!(
            v.vector[i].abs() < 4.0 * v.stderr[i],
            "index {i}: {} +- {}",
            v.vector[i],
            v.stderr[i]
        );
    }
}

#[test]
fn bound_of_projection_exact_cases() {
    let (sys, ens) = ho_ensemble(30_000, 11);
    let basis = enumerate_basis(1, 3).unwrap();

    // A = H: projection onto span{1, H} is exact, bound_1 = <H^2> = 2
    let a = sys.parse_observable("H1").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();
    let b1 = polynomial_bound(&od, 1, DEFAULT_JITTER).unwrap();
    assert!((b1.value - 2.0).abs() < 0.15, "bound_1(H) = {}", b1.value);

    // A = q1^2: saturated at d = 1 with value <H^2> = 2
    let a = sys.parse_observable("q1^2").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();
    let b1 = polynomial_bound(&od, 1, DEFAULT_JITTER).unwrap();
    assert!((b1.value - 2.0).abs() < 0.15, "bound_1(q^2) = {}", b1.value);

    // A = 1: the constant monomial absorbs it exactly, MC noise cancels
    let a = sys.parse_observable("1").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();
    // the bound sits 1e-12 below 1 exactly: that is the starting jitter
    let b0 = polynomial_bound(&od, 0, DEFAULT_JITTER).unwrap();
    assert!((b0.value - 1.0).abs() < 1e-11, "bound_0(1) = {}", b0.value);
    // strict linear form excludes the constant: <H>^2/<H^2> = 1/2
    let strict = mazur_strict(&od, DEFAULT_JITTER).unwrap();
    assert!((strict.value - 0.5).abs() < 0.05, "strict = {}", strict.value);
}

#[test]
fn profile_monotone_and_matches_block_solves() {
    let (sys, ens) = ho_ensemble(30_000, 13);
    let basis = enumerate_basis(1, 6).unwrap();
    let a = sys.parse_observable("q1^2").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();
    let profile = bound_profile(&od, 6, DEFAULT_JITTER).unwrap();
    for w in profile.windows(2) {
        assert!(
            w[1].value >= w[0].value - 1e-12 * w[0].value.abs(),
            "profile not monotone: {} then {}",
            w[0].value,
            w[1].value
        );
    }
    // partial-sum route agrees with the direct block solve where the Gram is
    // well conditioned
    for d in 1..=3 {
        let direct = polynomial_bound(&od, d, DEFAULT_JITTER).unwrap();
        if direct.cond < 1e6 {
            let rel = (profile[d as usize].value - direct.value).abs()
                / direct.value.abs().max(1e-30);
            assert!(rel < 1e-8, "d={d}: {rel}");
        }
    }
    // and the profile flattens once saturated: bound_3 within 2% of bound_1
    let b1 = profile[1].value;
    let b3 = profile[3].value;
    assert!((b3 - b1).abs() < 0.02 * b1, "b1 = {b1}, b3 = {b3}");
}

#[test]
fn bootstrap_stderr_is_sane_and_deterministic() {
    let (sys, ens) = ho_ensemble(20_000, 17);
    let basis = enumerate_basis(1, 3).unwrap();
    let a = sys.parse_observable("q1^2").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();
    let se1 = bootstrap_profile_stderr(&od, 3, DEFAULT_JITTER, 100).unwrap();
    let se2 = bootstrap_profile_stderr(&od, 3, DEFAULT_JITTER, 100).unwrap();
    assert_eq!(se1, se2);
    // d = 1 bound is ~2 with ~2e4 samples; stderr should be small but nonzero
    assert!(se1[1] > 1e-3 && se1[1] < 0.5, "stderr = {}", se1[1]);
}

#[test]
fn orthogonalize_properties() {
    let (sys, ens) = ho_ensemble(20_000, 19);
    let basis = enumerate_basis(1, 4).unwrap();
    let a = sys.parse_observable("q1^2").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();

    let mut asserted_any = false;
    for d in 1..=4 {
        let direct = polynomial_bound(&od, d, DEFAULT_JITTER).unwrap();
        let ortho = orthogonalize(&od, d, DEFAULT_JITTER).unwrap();
        // transformed Gram is the identity by construction
        let m = od.basis().nu_at_degree(d);
        assert_eq!(ortho.gram, nalgebra::DMatrix::identity(m, m));
        // numerically: L^-1 G L^-T ~ I
        let l_inv = ortho
            .transform
            .clone()
            .try_inverse()
            .expect("triangular factor invertible");
        let recon = &l_inv * od.gram().view((0, 0), (m, m)) * l_inv.transpose();
        for i in 0..m {
            for j in 0..m {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (recon[(i, j)] - expect).abs() < 1e-7,
                    "d={d} ({i},{j}): {}",
                    recon[(i, j)]
                );
            }
        }
        if direct.cond < 1e6 {
            let rel = (ortho.bound - direct.value).abs() / direct.value.abs().max(1e-30);
            assert!(rel < 1e-8, "d={d}: rel = {rel}");
            asserted_any = true;
        }
    }
    assert!(asserted_any, "no degree had cond < 1e6");
}

fn pendulum_data(n: usize, seed: u64) -> (SystemSpec, GibbsEnsemble, OverlapData) {
    let sys = SystemSpec::pendulum();
    let params = GibbsParams {
        beta: 1.0,
        n,
        burn_in: 2_000,
        thin: 5,
        proposal_scale: Some(1.4),
        seed,
    };
    let ens = sample_gibbs(&sys, &params).unwrap();
    let basis = enumerate_basis(1, 6).unwrap();
    let labeler =
        InvariantLabeler::parse(&["p1 > 0 && H1 > 1", "p1 < 0 && H1 > 1", "H1 <= 1"], &sys)
            .unwrap();
    let a = sys.parse_observable("p1").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, Some(&labeler)).unwrap();
    (sys, ens, od)
}

#[test]
fn cell_sum_rule() {
    let (_, _, od) = pendulum_data(10_000, 23);
    let cells = od.cells().unwrap();
    let nu = od.basis().nu();
    for i in 0..nu {
        let total: f64 = cells.vectors.iter().map(|v| v[i]).sum();
        let expect = od.overlaps()[i];
        assert!(
            (total - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "index {i}: {total} vs {expect}"
        );
    }
    let count_total: usize = cells.counts.iter().sum();
    assert_eq!(count_total, od.n_samples());
}

#[test]
fn trivial_labeler_equals_unpartitioned() {
    let (sys, ens) = ho_ensemble(10_000, 29);
    let basis = enumerate_basis(1, 3).unwrap();
    let a = sys.parse_observable("q1^2").unwrap();
    // single all-matching cell
    let labeler = InvariantLabeler::parse(&["H1 >= -1e300"], &sys).unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, Some(&labeler)).unwrap();
    let pb = partitioned_bound(&od, 2, DEFAULT_JITTER).unwrap();
    let plain = polynomial_bound(&od, 2, DEFAULT_JITTER).unwrap();
    assert_eq!(pb.value, plain.value);
    assert_eq!(pb.cellwise_value, plain.value);
    assert_eq!(pb.unpartitioned, plain.value);
    // the empty rest cell contributes exactly zero
    assert_eq!(pb.cells.last().unwrap().value, 0.0);
}

#[test]
fn pendulum_partitioned_bound_oracle() {
    // frozen oracle (scipy quadrature, cross-checked by a dense-grid RK4
    // brute force): C(p1) = 0.4102300575,
    //   global-Gram refined profile d=0..6:
    //     [0.026875, 0.146047, 0.159119, 0.176132, 0.181500, 0.181640, 0.182578]
    //   cellwise projection d=0..6:
    //     [0.370726, 0.406382, 0.408601, 0.409246, 0.409541, 0.409708, 0.409814]
    let (_, _, od) = pendulum_data(60_000, 31);
    let pb1 = partitioned_bound(&od, 1, DEFAULT_JITTER).unwrap();
    assert!((pb1.value - 0.146047).abs() < 0.02, "global d=1: {}", pb1.value);
    assert!(
        (pb1.cellwise_value - 0.406382).abs() < 0.04,
        "cellwise d=1: {}",
        pb1.cellwise_value
    );
    let pb6 = partitioned_bound(&od, 6, DEFAULT_JITTER).unwrap();
    assert!((pb6.value - 0.182578).abs() < 0.03, "global d=6: {}", pb6.value);
    assert!(
        (pb6.cellwise_value - 0.409814).abs() < 0.05,
        "cellwise d=6: {}",
        pb6.cellwise_value
    );
    // refinement: partitioned >= unpartitioned (which is ~0 here)
    assert!(pb6.value >= pb6.unpartitioned - 0.02);
    // librator cell contributes ~0
    let lib_cell = &pb6.cells[2];
    assert!(lib_cell.value < 0.01, "librator: {}", lib_cell.value);
}

#[test]
fn saturation_of_polynomial_observable() {
    let (sys, ens) = ho_ensemble(30_000, 37);
    // A = H^3 lies in V_3: saturated at d = 3
    let a = sys.parse_observable("H1^3").unwrap();
    let report = saturation_diagnostic(&ens, &sys, &a, 3, 5).unwrap();
    assert!(report.consistent_with_zero, "{report:?}");
    // raw overlaps are huge even though the observable is saturated; it is
    // the orthogonalized residuals that vanish
    assert!(report.residuals.iter().any(|r| r.overlap > 100.0));

    // A = q1^2 is saturated at d = 1
    let a = sys.parse_observable("q1^2").unwrap();
    let report = saturation_diagnostic(&ens, &sys, &a, 1, 4).unwrap();
    assert!(report.consistent_with_zero, "{report:?}");

    // A = H^2 is NOT saturated at d = 1
    let a = sys.parse_observable("H1^2").unwrap();
    let report = saturation_diagnostic(&ens, &sys, &a, 1, 4).unwrap();
    assert!(!report.consistent_with_zero);
}

#[test]
fn saturation_verdict_distinguishes_zero_projection() {
    // pendulum A = p1: all overlaps vanish yet C(A) > 0
    let (sys, ens, od) = pendulum_data(30_000, 41);
    let a = sys.parse_observable("p1").unwrap();
    let report = saturation_diagnostic(&ens, &sys, &a, 1, 4).unwrap();
    assert!(report.consistent_with_zero, "{report:?}");
    let bound = polynomial_bound(&od, 1, DEFAULT_JITTER).unwrap();
    // with the oracle C = 0.4102 and its MC error ~0.01
    let verdict = saturation_verdict(&report, 0.4102, 0.01, bound.value, 0.01);
    assert_eq!(verdict, SaturationVerdict::ZeroProjectionButUnsaturated);
    // and for the genuinely saturated HO case the verdict is saturation
    let (sys2, ens2) = ho_ensemble(20_000, 43);
    let a2 = sys2.parse_observable("q1^2").unwrap();
    let basis2 = enumerate_basis(1, 3).unwrap();
    let od2 = OverlapData::build(&ens2, &sys2, &a2, &basis2, None).unwrap();
    let report2 = saturation_diagnostic(&ens2, &sys2, &a2, 1, 4).unwrap();
    let b2 = polynomial_bound(&od2, 1, DEFAULT_JITTER).unwrap();
    let verdict2 = saturation_verdict(&report2, 2.0, 0.05, b2.value, 0.05);
    assert_eq!(verdict2, SaturationVerdict::SaturatedAtDegree);
}

#[test]
fn degenerate_observable_reports_zero() {
    let (sys, ens) = ho_ensemble(5_000, 47);
    let basis = enumerate_basis(1, 3).unwrap();
    let a = sys.parse_observable("0").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();
    assert!(od.is_degenerate());
    let b = polynomial_bound(&od, 2, DEFAULT_JITTER).unwrap();
    assert_eq!(b.value, 0.0);
    assert!(b.warnings.iter().any(|w| w.message.contains("zero almost everywhere")));
}

#[test]
fn two_oscillator_bound_profile_oracle() {
    // frozen oracle: A = q1^2 q2^2 on the product system at beta = 1:
    // bound_0 = 0.25, bound_1 = 0.75, bound_2 = bound_3 = 1.0 = C(A)
    let sys = SystemSpec::two_oscillators();
    let params = GibbsParams {
        beta: 1.0,
        n: 60_000,
        burn_in: 4_000,
        thin: 5,
        proposal_scale: Some(1.1),
        seed: 53,
    };
    let ens = sample_gibbs(&sys, &params).unwrap();
    let basis = enumerate_basis(2, 3).unwrap();
    let a = sys.parse_observable("q1^2*q2^2").unwrap();
    let od = OverlapData::build(&ens, &sys, &a, &basis, None).unwrap();
    let profile = bound_profile(&od, 3, DEFAULT_JITTER).unwrap();
    assert!((profile[0].value - 0.25).abs() < 0.03, "d0: {}", profile[0].value);
    assert!((profile[1].value - 0.75).abs() < 0.07, "d1: {}", profile[1].value);
    assert!((profile[2].value - 1.0).abs() < 0.12, "d2: {}", profile[2].value);
    assert!((profile[3].value - 1.0).abs() < 0.15, "d3: {}", profile[3].value);
}
