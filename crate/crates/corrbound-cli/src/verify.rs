//! Verification suites: oracle- and property-based checks of the whole
//! pipeline on the three builtin systems, at fixed seeds and pinned
//! tolerances. Every check prints one pass/fail line; the process exit code
//! reports failures.
//!
//! Oracle values are frozen from closed forms (Gamma integrals for the
//! oscillators) and from an independent quadrature/brute-force computation
//! for the pendulum (`C(p1) = 0.4102300575`, rotation periods from
//! `T_rot(E) = int dq / sqrt(2(E + cos q))`).

use crate::CliError;
use corrbound::bounds::{
    bootstrap_partitioned_stderr, bootstrap_profile_stderr, bound_profile, enumerate_basis,
    orthogonalize, partitioned_bound, polynomial_bound, saturation_diagnostic, saturation_verdict,
    BoundValue, InvariantLabeler, OverlapData, PartitionedBound, SaturationVerdict,
    DEFAULT_JITTER,
};
use corrbound::correlation::{estimate_c_multi, CEstimate, CorrOpts};
use corrbound::dynamics::{PhaseState, Stepper, SystemSpec};
use corrbound::expr::EvalScratch;
use corrbound::gibbs::{sample_gibbs, GibbsEnsemble, GibbsParams};
use corrbound::regular::{norm_ah_squared, QuadratureSpec};
use corrbound::stats;
use serde::{Deserialize, Serialize};

pub const SUITES: [&str; 3] = ["oscillator", "product", "pendulum"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionResult {
    /// Acceptance criterion number (1..=8).
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(
    out: &mut Vec<CriterionResult>,
    criterion: u8,
    name: impl Into<String>,
    passed: bool,
    detail: String,
) {
    out.push(CriterionResult {
        criterion,
        name: name.into(),
        passed,
        detail,
    });
}

pub fn render(results: &[CriterionResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{} criterion-{} {}: {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.criterion,
            r.name,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!(
        "{} checks, {} failed\n",
        results.len(),
        failed
    ));
    out
}

pub fn run_suite(name: &str) -> Result<Vec<CriterionResult>, CliError> {
    match name {
        "oscillator" => oscillator_suite(),
        "product" => product_suite(),
        "pendulum" => pendulum_suite(),
        "all" => {
            let mut all = oscillator_suite()?;
            all.extend(product_suite()?);
            all.extend(pendulum_suite()?);
            Ok(all)
        }
        other => Err(CliError::Validation(format!(
            "unknown suite '{other}'; valid names: oscillator, product, pendulum, all"
        ))),
    }
}

// ---- shared machinery --------------------------------------------------------

struct PairData {
    obs: String,
    c_norm: CEstimate,
    c_direct: CEstimate,
    profile: Vec<BoundValue>,
    /// `<A^2>_beta`, the scale of the finite-horizon truncation remainder.
    a_sq_mean: f64,
}

/// One estimator pass (all observables share trajectories) plus a bound
/// profile per observable.
#[allow(clippy::too_many_arguments)]
fn analyze_pairs(
    sys: &SystemSpec,
    ens: &GibbsEnsemble,
    obs_texts: &[&str],
    t_horizon: f64,
    dt: f64,
    n_traj: usize,
    d_max: u32,
    resamples: usize,
) -> Result<Vec<PairData>, CliError> {
    let observables: Vec<_> = obs_texts
        .iter()
        .map(|t| sys.parse_observable(t).map_err(CliError::runtime))
        .collect::<Result<_, _>>()?;
    let estimates = estimate_c_multi(
        sys,
        &observables,
        ens,
        t_horizon,
        dt,
        &CorrOpts { n_traj },
    )
    .map_err(CliError::runtime)?;
    let basis = enumerate_basis(sys.k(), d_max).map_err(CliError::runtime)?;
    let mut out = Vec::with_capacity(obs_texts.len());
    for (text, (c_norm, c_direct)) in obs_texts.iter().zip(estimates) {
        let a = sys.parse_observable(text).map_err(CliError::runtime)?;
        let od = OverlapData::build(ens, sys, &a, &basis, None).map_err(CliError::runtime)?;
        let mut profile = bound_profile(&od, d_max, DEFAULT_JITTER).map_err(CliError::runtime)?;
        let se = bootstrap_profile_stderr(&od, d_max, DEFAULT_JITTER, resamples)
            .map_err(CliError::runtime)?;
        for (b, s) in profile.iter_mut().zip(&se) {
            b.stderr = Some(*s);
        }
        let (a_sq_mean, _) = corrbound::gibbs::expectation(ens, |q, p| {
            a.eval(q, p).map(|v| v * v)
        })
        .map_err(CliError::runtime)?;
        out.push(PairData {
            obs: text.to_string(),
            c_norm,
            c_direct,
            profile,
            a_sq_mean,
        });
    }
    Ok(out)
}

/// Criteria 3, 4 and 7 apply to every (system, observable) pair.
fn shared_checks(results: &mut Vec<CriterionResult>, suite: &str, pairs: &[PairData]) {
    for pair in pairs {
        // 3: main inequality C(A) + 3 sigma >= bound_d for every d
        for b in &pair.profile {
            let sigma = (pair.c_norm.stderr.powi(2) + b.stderr.unwrap_or(0.0).powi(2)).sqrt();
            let ok = pair.c_norm.value + 3.0 * sigma >= b.value;
            check(
                results,
                3,
                format!("main-inequality[{suite},{},d={}]", pair.obs, b.d),
                ok,
                format!(
                    "C = {:.6} (sigma {:.2e}) vs bound_{} = {:.6}",
                    pair.c_norm.value, sigma, b.d, b.value
                ),
            );
        }
        // 4: monotone profile, exact to 1e-12 relative
        for w in pair.profile.windows(2) {
            let ok = w[1].value >= w[0].value - 1e-12 * w[0].value.abs();
            check(
                results,
                4,
                format!("monotone-in-d[{suite},{},d={}->{}]", pair.obs, w[0].d, w[1].d),
                ok,
                format!("bound_{} = {:.9e}, bound_{} = {:.9e}", w[0].d, w[0].value, w[1].d, w[1].value),
            );
        }
        // 7: estimator cross-validation. The two estimators share the limit
        // but carry different O(1/T) truncation remainders, so for C(A) = 0
        // observables the deterministic remainder (bounded by <A^2>/T, the
        // envelope of the correlation integral) dominates any 3 sigma band;
        // that envelope joins the tolerance and is inactive whenever the
        // Monte Carlo error dominates.
        let sigma = (pair.c_norm.stderr.powi(2) + pair.c_direct.stderr.powi(2)).sqrt();
        let truncation = pair.a_sq_mean / pair.c_norm.t_horizon;
        let diff = (pair.c_norm.value - pair.c_direct.value).abs();
        check(
            results,
            7,
            format!("estimator-agreement[{suite},{}]", pair.obs),
            diff <= 3.0 * sigma.max(1e-12) + truncation,
            format!(
                "norm = {:.6}, direct = {:.6}, |diff| = {:.2e}, 3 sigma = {:.2e}, \
                 truncation envelope = {:.2e}",
                pair.c_norm.value,
                pair.c_direct.value,
                diff,
                3.0 * sigma,
                truncation
            ),
        );
    }
}

// ---- oscillator suite ----------------------------------------------------------

fn oscillator_suite() -> Result<Vec<CriterionResult>, CliError> {
    let sys = SystemSpec::harmonic_oscillator();
    let params = GibbsParams {
        beta: 1.0,
        n: 100_000,
        burn_in: 10_000,
        thin: 10,
        proposal_scale: Some(1.7),
        seed: 20080704,
    };
    let ens = sample_gibbs(&sys, &params).map_err(CliError::runtime)?;
    let mut results = Vec::new();

    // main pass: the saturated observable and H^2
    let pairs = analyze_pairs(&sys, &ens, &["q1^2", "H1^2"], 200.0, 1e-3, 18_432, 6, 200)?;
    // zero pass: A = q1 at a horizon that is a whole number of periods
    let zero_pairs = analyze_pairs(
        &sys,
        &ens,
        &["q1"],
        200.0 * std::f64::consts::PI,
        1e-3,
        1024,
        6,
        200,
    )?;

    // 1: HO saturation. Oracle: A^H(E) = E, <H^2> = 2/beta^2 = 2.
    let q2 = &pairs[0];
    check(
        &mut results,
        1,
        "ho-saturation-c-norm",
        (q2.c_norm.value - 2.0).abs() <= 0.1,
        format!("C_norm = {:.6}, oracle 2.0, tolerance 5%", q2.c_norm.value),
    );
    check(
        &mut results,
        1,
        "ho-saturation-c-direct",
        (q2.c_direct.value - 2.0).abs() <= 0.1,
        format!("C_direct = {:.6}, oracle 2.0, tolerance 5%", q2.c_direct.value),
    );
    let b1 = q2.profile[1].value;
    check(
        &mut results,
        1,
        "ho-saturation-bound1",
        (b1 - 2.0).abs() <= 0.1,
        format!("bound_1 = {b1:.6}, oracle 2.0, tolerance 5%"),
    );
    for d in [2usize, 3] {
        let bd = q2.profile[d].value;
        check(
            &mut results,
            1,
            format!("ho-saturation-flat-bound{d}"),
            (bd - b1).abs() <= 0.02 * b1,
            format!("bound_{d} = {bd:.6} vs bound_1 = {b1:.6}, tolerance 2%"),
        );
    }
    // saturation verdict for the saturated observable
    let a = sys.parse_observable("q1^2").map_err(CliError::runtime)?;
    let sat = saturation_diagnostic(&ens, &sys, &a, 1, 4).map_err(CliError::runtime)?;
    let verdict = saturation_verdict(
        &sat,
        q2.c_norm.value,
        q2.c_norm.stderr,
        b1,
        q2.profile[1].stderr.unwrap_or(0.0),
    );
    check(
        &mut results,
        1,
        "ho-saturation-verdict",
        verdict == SaturationVerdict::SaturatedAtDegree,
        format!("verdict {verdict:?} (probe to degree 4)"),
    );

    // 2: zero case. Oracle: Abar(q1) = 0 by the explicit HO flow.
    let zq = &zero_pairs[0];
    check(
        &mut results,
        2,
        "ho-zero-c-norm",
        zq.c_norm.value.abs() < 1e-3,
        format!("|C_norm| = {:.3e} < 1e-3", zq.c_norm.value.abs()),
    );
    check(
        &mut results,
        2,
        "ho-zero-c-direct",
        zq.c_direct.value.abs() < 1e-3,
        format!("|C_direct| = {:.3e} < 1e-3", zq.c_direct.value.abs()),
    );
    for d in 0..=3usize {
        let bd = zq.profile[d].value;
        check(
            &mut results,
            2,
            format!("ho-zero-bound{d}"),
            bd < 1e-3,
            format!("bound_{d} = {bd:.3e} < 1e-3"),
        );
    }

    // 5: Theorem-1 identity on the HO. Oracles: 2.0 and <H^4> = 24.
    let quad_spec = QuadratureSpec::default();
    for (pair, oracle) in pairs.iter().zip([2.0f64, 24.0]) {
        let a = sys.parse_observable(&pair.obs).map_err(CliError::runtime)?;
        let nah = norm_ah_squared(&sys, &a, 1.0, &quad_spec).map_err(CliError::runtime)?;
        check(
            &mut results,
            5,
            format!("theorem1-quadrature-oracle[ho,{}]", pair.obs),
            (nah.value - oracle).abs() <= 1e-2 * oracle,
            format!("||A^H||^2 = {:.6}, oracle {oracle}", nah.value),
        );
        let sigma = (pair.c_norm.stderr.powi(2) + nah.quad_error.powi(2)).sqrt();
        check(
            &mut results,
            5,
            format!("theorem1-identity[ho,{}]", pair.obs),
            (nah.value - pair.c_norm.value).abs() <= 3.0 * sigma,
            format!(
                "||A^H||^2 = {:.6} vs C = {:.6}, 3 sigma = {:.2e}",
                nah.value, pair.c_norm.value, 3.0 * sigma
            ),
        );
    }

    // criteria 3, 4, 7 across all oscillator pairs
    let mut all_pairs = pairs;
    all_pairs.extend(zero_pairs);
    shared_checks(&mut results, "ho", &all_pairs);

    // 8: numerics hygiene
    hygiene_checks(&mut results, &sys, &ens)?;

    Ok(results)
}

fn hygiene_checks(
    results: &mut Vec<CriterionResult>,
    sys: &SystemSpec,
    ens: &GibbsEnsemble,
) -> Result<(), CliError> {
    // integrator second-order convergence on the HO
    let s0 = PhaseState::new(vec![1.0], vec![0.0]).map_err(CliError::runtime)?;
    let mut errors = Vec::new();
    for dt in [1e-2, 5e-3, 2.5e-3] {
        let n = (2.0 * std::f64::consts::PI / dt).round() as usize;
        let e0 = sys.energy(&s0).map_err(CliError::runtime)?;
        let mut stepper = Stepper::new(sys, &s0, dt).map_err(CliError::runtime)?;
        let mut scratch = EvalScratch::default();
        let mut max_err = 0.0f64;
        for _ in 0..n {
            stepper.step().map_err(CliError::runtime)?;
            let e = sys
                .hamiltonian_program()
                .eval(&stepper.q, &stepper.p, &mut scratch)
                .map_err(CliError::runtime)?;
            max_err = max_err.max((e - e0).abs());
        }
        errors.push(max_err);
    }
    for (i, w) in errors.windows(2).enumerate() {
        let ratio = w[0] / w[1];
        check(
            results,
            8,
            format!("second-order-convergence-{i}"),
            (3.0..=5.0).contains(&ratio),
            format!("energy-error ratio {ratio:.3} for dt halving (expect ~4)"),
        );
    }

    // KS test of the HO energy distribution against Exp(beta)
    let mut scratch = EvalScratch::default();
    let h_prog = sys.hamiltonian_program();
    let energies: Vec<f64> = (0..ens.len())
        .map(|i| {
            let (q, p) = ens.sample(i);
            h_prog.eval(q, p, &mut scratch).unwrap()
        })
        .collect();
    let beta = ens.beta();
    let d = stats::ks_statistic(&energies, |e| 1.0 - (-beta * e.max(0.0)).exp());
    let n_eff = stats::ess(&energies);
    let threshold = 1.63 / n_eff.sqrt();
    check(
        results,
        8,
        "gibbs-ks-energy",
        d < threshold,
        format!("KS D = {d:.5} < {threshold:.5} (ESS = {n_eff:.0})"),
    );

    // orthogonalized vs raw-monomial bound
    let a = sys.parse_observable("q1^2").map_err(CliError::runtime)?;
    let basis = enumerate_basis(sys.k(), 4).map_err(CliError::runtime)?;
    let od = OverlapData::build(ens, sys, &a, &basis, None).map_err(CliError::runtime)?;
    let mut any_well_conditioned = false;
    for d in 1..=4 {
        let raw = polynomial_bound(&od, d, DEFAULT_JITTER).map_err(CliError::runtime)?;
        if raw.cond >= 1e6 {
            continue;
        }
        any_well_conditioned = true;
        let ortho = orthogonalize(&od, d, DEFAULT_JITTER).map_err(CliError::runtime)?;
        let rel = (ortho.bound - raw.value).abs() / raw.value.abs().max(1e-300);
        check(
            results,
            8,
            format!("orthogonalized-agreement-d{d}"),
            rel <= 1e-8,
            format!(
                "raw {:.12e} vs orthogonalized {:.12e}, rel diff {rel:.2e} at cond {:.2e}",
                raw.value, ortho.bound, raw.cond
            ),
        );
    }
    check(
        results,
        8,
        "orthogonalized-agreement-coverage",
        any_well_conditioned,
        "at least one degree with Gram condition < 1e6".to_string(),
    );
    Ok(())
}

// ---- product suite ---------------------------------------------------------------

fn product_suite() -> Result<Vec<CriterionResult>, CliError> {
    let sys = SystemSpec::two_oscillators();
    let params = GibbsParams {
        beta: 1.0,
        n: 100_000,
        burn_in: 10_000,
        thin: 10,
        proposal_scale: Some(1.1),
        seed: 20080705,
    };
    let ens = sample_gibbs(&sys, &params).map_err(CliError::runtime)?;
    let mut results = Vec::new();

    let obs = ["q1^2", "q1^2*q2^2", "H1^2"];
    let pairs = analyze_pairs(&sys, &ens, &obs, 200.0, 1e-3, 4096, 6, 200)?;

    // 5: Theorem-1 identity on the torus system. Oracles: <E1^2> = 2,
    // <E1^2><E2^2>/4 = 1, <(E1+E2)^4> = 120 (Gamma integrals).
    let quad_spec = QuadratureSpec {
        nodes_2d: 20,
        torus_t: 600.0,
        torus_dt: 2e-3,
        ..Default::default()
    };
    for (pair, oracle) in pairs.iter().zip([2.0f64, 1.0, 120.0]) {
        let a = sys.parse_observable(&pair.obs).map_err(CliError::runtime)?;
        let nah = norm_ah_squared(&sys, &a, 1.0, &quad_spec).map_err(CliError::runtime)?;
        check(
            &mut results,
            5,
            format!("theorem1-quadrature-oracle[two_osc,{}]", pair.obs),
            (nah.value - oracle).abs() <= 2e-2 * oracle,
            format!("||A^H||^2 = {:.6}, oracle {oracle}", nah.value),
        );
        let sigma = (pair.c_norm.stderr.powi(2) + nah.quad_error.powi(2)).sqrt();
        check(
            &mut results,
            5,
            format!("theorem1-identity[two_osc,{}]", pair.obs),
            (nah.value - pair.c_norm.value).abs() <= 3.0 * sigma,
            format!(
                "||A^H||^2 = {:.6} vs C = {:.6}, 3 sigma = {:.2e}",
                nah.value, pair.c_norm.value, 3.0 * sigma
            ),
        );
    }

    shared_checks(&mut results, "two_osc", &pairs);
    Ok(results)
}

// ---- pendulum suite ----------------------------------------------------------------

fn pendulum_suite() -> Result<Vec<CriterionResult>, CliError> {
    let sys = SystemSpec::pendulum();
    let params = GibbsParams {
        beta: 1.0,
        n: 100_000,
        burn_in: 10_000,
        thin: 10,
        proposal_scale: Some(1.4),
        seed: 20080706,
    };
    let ens = sample_gibbs(&sys, &params).map_err(CliError::runtime)?;
    let mut results = Vec::new();

    let pairs = analyze_pairs(&sys, &ens, &["p1", "cos(q1)"], 500.0, 1e-3, 6144, 6, 200)?;

    // 6: partition refinement. Frozen oracle (quadrature + RK4 brute force):
    // C(p1) = 0.4102300575; cellwise projection at d=6 is 0.409814 = 0.999 C.
    let p1 = &pairs[0];
    check(
        &mut results,
        6,
        "pendulum-c-oracle",
        (p1.c_norm.value - 0.4102300575).abs() <= 3.0 * p1.c_norm.stderr.max(1e-3) + 5e-3,
        format!(
            "C_norm = {:.6} vs brute-force oracle 0.410230 (sigma {:.2e})",
            p1.c_norm.value, p1.c_norm.stderr
        ),
    );

    let labeler = InvariantLabeler::parse(
        &["p1 > 0 && H1 > 1", "p1 < 0 && H1 > 1", "H1 <= 1"],
        &sys,
    )
    .map_err(CliError::runtime)?;
    let a = sys.parse_observable("p1").map_err(CliError::runtime)?;
    let basis = enumerate_basis(sys.k(), 6).map_err(CliError::runtime)?;
    let od =
        OverlapData::build(&ens, &sys, &a, &basis, Some(&labeler)).map_err(CliError::runtime)?;

    let mut partitioned: Vec<PartitionedBound> = Vec::new();
    for d in 0..=6u32 {
        let mut pb = partitioned_bound(&od, d, DEFAULT_JITTER).map_err(CliError::runtime)?;
        let (se, se_cell) =
            bootstrap_partitioned_stderr(&od, d, DEFAULT_JITTER, 200).map_err(CliError::runtime)?;
        pb.stderr = Some(se);
        pb.cellwise_stderr = Some(se_cell);
        partitioned.push(pb);
    }

    // unpartitioned bound consistent with zero at every degree
    for (d, b) in p1.profile.iter().enumerate() {
        let se = b.stderr.unwrap_or(0.0);
        check(
            &mut results,
            6,
            format!("pendulum-unpartitioned-zero-d{d}"),
            b.value <= 3.0 * se,
            format!("bound_{d} = {:.3e} <= 3 sigma = {:.3e}", b.value, 3.0 * se),
        );
    }
    let pb6 = &partitioned[6];
    check(
        &mut results,
        6,
        "pendulum-partitioned-positive",
        pb6.cellwise_value > 0.0 && pb6.value > 0.0,
        format!(
            "global-Gram {:.6}, cellwise {:.6} at d = 6",
            pb6.value, pb6.cellwise_value
        ),
    );
    check(
        &mut results,
        6,
        "pendulum-partitioned-captures-C",
        pb6.cellwise_value >= 0.8 * p1.c_norm.value,
        format!(
            "cellwise partitioned bound {:.6} >= 0.8 C = {:.6} \
             (literal refined sum with the global Gram: {:.6})",
            pb6.cellwise_value,
            0.8 * p1.c_norm.value,
            pb6.value
        ),
    );
    // the partitioned bounds stay valid lower bounds: C + 3 sigma above them
    for pb in &partitioned {
        let sigma = (p1.c_norm.stderr.powi(2)
            + pb.cellwise_stderr.unwrap_or(0.0).powi(2))
        .sqrt();
        check(
            &mut results,
            6,
            format!("pendulum-partitioned-valid-d{}", pb.d),
            p1.c_norm.value + 3.0 * sigma >= pb.cellwise_value
                && p1.c_norm.value + 3.0 * sigma >= pb.value,
            format!(
                "C = {:.6} + 3 sigma {:.2e} vs cellwise {:.6} / global {:.6}",
                p1.c_norm.value,
                3.0 * sigma,
                pb.cellwise_value,
                pb.value
            ),
        );
    }
    // refinement inequality at every degree: partitioned >= unpartitioned - 3 sigma
    for (pb, b) in partitioned.iter().zip(&p1.profile) {
        let sigma = (pb.stderr.unwrap_or(0.0).powi(2) + b.stderr.unwrap_or(0.0).powi(2)).sqrt();
        check(
            &mut results,
            6,
            format!("pendulum-refinement-d{}", pb.d),
            pb.value >= b.value - 3.0 * sigma && pb.cellwise_value >= b.value - 3.0 * sigma,
            format!(
                "partitioned {:.6} / cellwise {:.6} vs unpartitioned {:.6} (3 sigma {:.2e})",
                pb.value,
                pb.cellwise_value,
                b.value,
                3.0 * sigma
            ),
        );
    }
    // zero projection is not mistaken for saturation
    let sat = saturation_diagnostic(&ens, &sys, &a, 1, 4).map_err(CliError::runtime)?;
    let verdict = saturation_verdict(
        &sat,
        p1.c_norm.value,
        p1.c_norm.stderr,
        p1.profile[1].value,
        p1.profile[1].stderr.unwrap_or(0.0),
    );
    check(
        &mut results,
        6,
        "pendulum-zero-projection-verdict",
        verdict == SaturationVerdict::ZeroProjectionButUnsaturated,
        format!("verdict {verdict:?}: overlaps vanish yet C(A) > 0"),
    );

    shared_checks(&mut results, "pendulum", &pairs);
    Ok(results)
}
