//! Level-set averages `A^H` and the identity `C(A) = ||A^H||^2_D` for the
//! ergodically regular builtins.
//!
//! For a 1-DOF system with connected level sets the microcanonical average
//! over `L_alpha` equals the time average over one closed orbit, and the
//! induced level-set volume is the orbital period `T(alpha)`; the measure on
//! the energy axis is then `T(alpha) e^{-beta alpha} d alpha` (normalized).
//! For the two-oscillator product the level sets are tori; `A^H` is computed
//! as a long-time average (the flow is ergodic on the torus for the
//! incommensurate frequencies) and the level-set volume is the product of
//! the per-factor periods, a constant that cancels in the normalization.
//!
//! The pendulum is rejected here: its level sets with `E > 1` split into two
//! rotation components, which is exactly the situation the partition-refined
//! bounds handle.

use crate::correlation::CorrError;
use crate::dynamics::{DynamicsError, PhaseState, Stepper, SystemKind, SystemSpec};
use crate::expr::{EvalScratch, Expression};
use crate::stats;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegularError {
    #[error(
        "system '{0}' is not supported by the regular-case machinery; \
         use the builtin oscillator or two-oscillator systems"
    )]
    UnsupportedSystem(String),
    #[error(
        "level sets of the pendulum split into multiple components above the separatrix; \
         use the partition-refined bounds instead"
    )]
    MultiComponent,
    #[error("level-set averaging needs a 1-DOF system, this one has r = {0}")]
    NotOneDof(usize),
    #[error("no orbital period found within {steps} steps (separatrix or unbounded orbit?)")]
    PeriodNotFound { steps: u64 },
    #[error("the orbit start is a stationary point; no period is defined")]
    StationaryPoint,
    #[error(
        "could not project the start onto the level set alpha = {alpha}: \
         residual {residual:.3e} after energy correction"
    )]
    EnergyCorrectionFailed { alpha: f64, residual: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Corr(#[from] CorrError),
}

/// Tunables for period detection and level-set averaging.
#[derive(Debug, Clone)]
pub struct RegularOpts {
    pub dt: f64,
    /// Step cap for the period search.
    pub period_step_cap: u64,
    /// Acceptable relative energy residual after projecting the start hint.
    pub energy_tol: f64,
}

impl Default for RegularOpts {
    fn default() -> Self {
        RegularOpts {
            dt: 1e-3,
            period_step_cap: 20_000_000,
            energy_tol: 1e-9,
        }
    }
}

/// The microcanonical average of an observable over one level set.
#[derive(Debug, Clone)]
pub struct LevelSetAverage {
    pub alpha: f64,
    pub value: f64,
    /// Which connected component the start hint selected.
    pub component: String,
    /// Orbital period; also the induced level-set volume in 1 DOF.
    pub period: f64,
}

/// Quadrature configuration for [`norm_ah_squared`].
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    /// Gauss-Legendre nodes on the energy axis (1-DOF systems).
    pub nodes: usize,
    /// Nodes per axis for the product system.
    pub nodes_2d: usize,
    /// Integration range is `[E_min, E_min + energy_span / beta]`; the Gibbs
    /// weight beyond is below 4e-18.
    pub energy_span: f64,
    /// Horizon of the torus time average for the product system.
    pub torus_t: f64,
    pub torus_dt: f64,
    pub opts: RegularOpts,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes: 64,
            nodes_2d: 24,
            energy_span: 40.0,
            torus_t: 600.0,
            torus_dt: 2e-3,
            opts: RegularOpts::default(),
        }
    }
}

/// One quadrature-table row: `(alpha components, A^H value, weight factor)`.
pub type AhTableRow = (Vec<f64>, f64, f64);

/// `||A^H||^2_D` with its quadrature diagnostics and the `A^H(alpha)` table.
#[derive(Debug, Clone)]
pub struct NormAhSquared {
    pub value: f64,
    /// Estimated systematic error of the quadrature / torus averaging.
    pub quad_error: f64,
    /// `(alpha..., A^H(alpha), weight factor)` rows for export.
    pub table: Vec<AhTableRow>,
}

impl NormAhSquared {
    /// CSV of the `A^H(alpha)` table.
    pub fn table_csv(&self) -> String {
        let k = self.table.first().map(|(a, _, _)| a.len()).unwrap_or(1);
        let mut out = (1..=k)
            .map(|i| format!("alpha{i}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(",ah,weight\n");
        for (alpha, val, weight) in &self.table {
            let cols = alpha
                .iter()
                .map(|a| format!("{a}"))
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("{cols},{val},{weight}\n"));
        }
        out
    }
}

/// Microcanonical average of `A` over the level set `H = alpha` of a 1-DOF
/// system: the time average over one detected orbital period, starting from
/// `start_hint` projected onto the level set by energy correction.
pub fn level_set_average(
    sys: &SystemSpec,
    a: &Expression,
    alpha: f64,
    start_hint: &PhaseState,
) -> Result<LevelSetAverage, RegularError> {
    level_set_average_opts(sys, a, alpha, start_hint, &RegularOpts::default())
}

pub fn level_set_average_opts(
    sys: &SystemSpec,
    a: &Expression,
    alpha: f64,
    start_hint: &PhaseState,
    opts: &RegularOpts,
) -> Result<LevelSetAverage, RegularError> {
    if sys.dim() != 1 {
        return Err(RegularError::NotOneDof(sys.dim()));
    }
    let q0 = start_hint.q[0];
    let p0 = correct_energy(sys, q0, start_hint.p[0], alpha, opts)?;
    let start = PhaseState {
        q: vec![q0],
        p: vec![p0],
    };
    let (period, winding) = detect_period(sys, &start, opts)?;
    let component = match winding {
        0 => "oscillation".to_string(),
        w if w > 0 => "rotation+".to_string(),
        _ => "rotation-".to_string(),
    };

    // one-period trapezoid with the step adjusted to land exactly on T
    let n = (period / opts.dt).ceil().max(8.0) as u64;
    let dt = period / n as f64;
    let prog = a.compile();
    let mut scratch = EvalScratch::default();
    let mut stepper = Stepper::new(sys, &start, dt)?;
    let mut acc = 0.5
        * prog
            .eval(&stepper.q, &stepper.p, &mut scratch)
            .map_err(CorrError::from)?;
    for i in 1..=n {
        stepper.step()?;
        let v = prog
            .eval(&stepper.q, &stepper.p, &mut scratch)
            .map_err(CorrError::from)?;
        acc += if i == n { 0.5 * v } else { v };
    }
    Ok(LevelSetAverage {
        alpha,
        value: acc / n as f64,
        component,
        period,
    })
}

/// Newton-correct the momentum so that `H(q0, p) = alpha`, preserving the
/// hint's momentum sign.
fn correct_energy(
    sys: &SystemSpec,
    q0: f64,
    p_hint: f64,
    alpha: f64,
    opts: &RegularOpts,
) -> Result<f64, RegularError> {
    let mut scratch = EvalScratch::default();
    let h = sys.hamiltonian_program();
    let grad = sys.hamiltonian().gradient();
    let dh_dp = grad.dp[0].compile();
    let sign = if p_hint < 0.0 { -1.0 } else { 1.0 };
    let mut p = if p_hint.abs() > 1e-8 { p_hint } else { sign * 0.7 };
    let tol = opts.energy_tol * alpha.abs().max(1.0);
    let mut residual = f64::INFINITY;
    for _ in 0..100 {
        let e = h
            .eval(&[q0], &[p], &mut scratch)
            .map_err(|source| DynamicsError::Eval {
                what: "hamiltonian".into(),
                source,
            })?;
        residual = e - alpha;
        if residual.abs() <= tol {
            return Ok(sign * p.abs());
        }
        let d = dh_dp
            .eval(&[q0], &[p], &mut scratch)
            .map_err(|source| DynamicsError::Eval {
                what: "dH/dp".into(),
                source,
            })?;
        if d.abs() < 1e-14 {
            p += sign * 0.3;
        } else {
            p -= residual / d;
        }
        if !p.is_finite() {
            break;
        }
    }
    Err(RegularError::EnergyCorrectionFailed {
        alpha,
        residual: residual.abs(),
    })
}

/// First return to the Poincare section through the start, with the crossing
/// direction matched; for angular coordinates a +-2pi winding of the
/// unwrapped coordinate is a rotation period. Crossing times are refined by
/// a cubic Hermite root using the known vector field.
/// Returns `(period, winding)` with winding 0 for closed oscillations.
fn detect_period(
    sys: &SystemSpec,
    start: &PhaseState,
    opts: &RegularOpts,
) -> Result<(f64, i32), RegularError> {
    use std::f64::consts::TAU;
    let grad = sys.hamiltonian().gradient();
    let dh_dp = grad.dp[0].compile();
    let dh_dq = grad.dq[0].compile();
    let mut scratch = EvalScratch::default();
    let field = |q: f64, p: f64, scratch: &mut EvalScratch| -> Result<(f64, f64), RegularError> {
        let qdot = dh_dp
            .eval(&[q], &[p], scratch)
            .map_err(CorrError::from)?;
        let pdot = -dh_dq
            .eval(&[q], &[p], scratch)
            .map_err(CorrError::from)?;
        Ok((qdot, pdot))
    };

    let (q0, p0) = (start.q[0], start.p[0]);
    let (qdot0, pdot0) = field(q0, p0, &mut scratch)?;
    if qdot0 == 0.0 && pdot0 == 0.0 {
        return Err(RegularError::StationaryPoint);
    }
    let use_q_section = qdot0.abs() >= pdot0.abs();
    let sdot0 = if use_q_section { qdot0 } else { pdot0 };
    let angular = sys.angular()[0];

    let dt = opts.dt;
    let mut stepper = Stepper::new(sys, start, dt)?;
    // prime one step so the start itself is not detected as a crossing
    stepper.step()?;
    let section = |q: f64, p: f64| if use_q_section { q - q0 } else { p - p0 };
    let mut s_prev = section(stepper.q[0], stepper.p[0]);
    let (mut qd_prev, mut pd_prev) = field(stepper.q[0], stepper.p[0], &mut scratch)?;
    let mut w_prev = stepper.q[0] - q0;

    for step in 2..=opts.period_step_cap {
        stepper.step()?;
        let t_prev = (step - 1) as f64 * dt;
        let (q, p) = (stepper.q[0], stepper.p[0]);
        let s = section(q, p);
        let (qd, pd) = field(q, p, &mut scratch)?;

        if angular {
            let w = q - q0;
            if w.abs() >= TAU {
                // rotation: refine the |w| = 2pi crossing of the unwrapped angle
                let target = TAU * w.signum();
                let tau = hermite_root(w_prev - target, qd_prev * dt, w - target, qd * dt);
                return Ok((t_prev + tau * dt, w.signum() as i32));
            }
            w_prev = w;
        }

        let sd_prev = if use_q_section { qd_prev } else { pd_prev };
        let sd = if use_q_section { qd } else { pd };
        let crossed = (s_prev < 0.0 && s >= 0.0) || (s_prev > 0.0 && s <= 0.0);
        if crossed && sd * sdot0 > 0.0 && sd_prev * sdot0 > 0.0 {
            let tau = hermite_root(s_prev, sd_prev * dt, s, sd * dt);
            return Ok((t_prev + tau * dt, 0));
        }
        s_prev = s;
        qd_prev = qd;
        pd_prev = pd;
    }
    Err(RegularError::PeriodNotFound {
        steps: opts.period_step_cap,
    })
}

/// Root in `[0, 1]` of the cubic Hermite interpolant with values `f0, f1`
/// and scaled derivatives `m0, m1` at the ends; bisection on the sign change.
fn hermite_root(f0: f64, m0: f64, f1: f64, m1: f64) -> f64 {
    let h = |t: f64| {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * f0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * f1
            + (t3 - t2) * m1
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (flo, _fhi) = (h(lo), h(hi));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let fm = h(mid);
        if (fm <= 0.0) == (flo <= 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Long-time torus average of `A` on the product system at factor energies
/// `(e1, e2)`. Returns the full- and half-horizon averages.
fn torus_average(
    sys: &SystemSpec,
    a: &Expression,
    e1: f64,
    e2: f64,
    t_horizon: f64,
    dt: f64,
) -> Result<(f64, f64), RegularError> {
    // H2 = (p2^2 + 2 q2^2)/2 = e2 at q2 = 0 gives p2 = sqrt(2 e2)
    let start = PhaseState {
        q: vec![0.0, 0.0],
        p: vec![(2.0 * e1).sqrt(), (2.0 * e2).sqrt()],
    };
    let n = 2 * ((t_horizon / (2.0 * dt)).round() as u64).max(1);
    let prog = a.compile();
    let mut scratch = EvalScratch::default();
    let mut stepper = Stepper::new(sys, &start, dt)?;
    let mut acc = 0.5
        * prog
            .eval(&stepper.q, &stepper.p, &mut scratch)
            .map_err(CorrError::from)?;
    let mut half = 0.0;
    for i in 1..=n {
        stepper.step()?;
        let v = prog
            .eval(&stepper.q, &stepper.p, &mut scratch)
            .map_err(CorrError::from)?;
        acc += if i == n { 0.5 * v } else { v };
        if i == n / 2 {
            half = acc - 0.5 * v;
        }
    }
    Ok((acc / n as f64, half / (n / 2) as f64))
}

/// `||A^H||^2_D`: the Gibbs-weighted quadrature of the squared level-set
/// average. Supports the builtin oscillator (1-DOF, connected level sets)
/// and the two-oscillator product; rejects the pendulum (disconnected level
/// sets above the separatrix) and custom systems.
pub fn norm_ah_squared(
    sys: &SystemSpec,
    a: &Expression,
    beta: f64,
    spec: &QuadratureSpec,
) -> Result<NormAhSquared, RegularError> {
    match sys.kind() {
        SystemKind::Oscillator => norm_ah_1dof(sys, a, beta, spec),
        SystemKind::TwoOscillators => norm_ah_product(sys, a, beta, spec),
        SystemKind::Pendulum => Err(RegularError::MultiComponent),
        SystemKind::Custom => Err(RegularError::UnsupportedSystem(sys.name().to_string())),
    }
}

fn norm_ah_1dof(
    sys: &SystemSpec,
    a: &Expression,
    beta: f64,
    spec: &QuadratureSpec,
) -> Result<NormAhSquared, RegularError> {
    let e_min = 0.0; // builtin oscillator minimum energy
    let run = |nodes: usize| -> Result<(f64, Vec<AhTableRow>), RegularError> {
        let (alphas, weights) = stats::gauss_legendre_on(e_min, e_min + spec.energy_span / beta, nodes);
        let rows: Vec<(f64, f64)> = alphas
            .par_iter()
            .map(|&alpha| {
                let hint = PhaseState {
                    q: vec![0.0],
                    p: vec![1.0],
                };
                level_set_average_opts(sys, a, alpha, &hint, &spec.opts)
                    .map(|l| (l.value, l.period))
            })
            .collect::<Result<_, _>>()?;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut table = Vec::with_capacity(nodes);
        for ((&alpha, &w), &(val, period)) in alphas.iter().zip(&weights).zip(&rows) {
            let weight = w * period * (-beta * alpha).exp();
            num += val * val * weight;
            den += weight;
            table.push((vec![alpha], val, period * (-beta * alpha).exp()));
        }
        Ok((num / den, table))
    };
    let (value, table) = run(spec.nodes)?;
    let (value_coarse, _) = run((spec.nodes * 3 / 4).max(8))?;
    Ok(NormAhSquared {
        value,
        quad_error: (value - value_coarse).abs(),
        table,
    })
}

fn norm_ah_product(
    sys: &SystemSpec,
    a: &Expression,
    beta: f64,
    spec: &QuadratureSpec,
) -> Result<NormAhSquared, RegularError> {
    let (es, ws) = stats::gauss_legendre_on(0.0, spec.energy_span / beta, spec.nodes_2d);
    let n = es.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .collect();
    let averages: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| torus_average(sys, a, es[i], es[j], spec.torus_t, spec.torus_dt))
        .collect::<Result<_, _>>()?;
    // level-set volume T1 T2 is constant for the oscillator product and
    // cancels in the normalization
    let mut num = 0.0;
    let mut num_half = 0.0;
    let mut den = 0.0;
    let mut table = Vec::with_capacity(pairs.len());
    for (&(i, j), &(full, half)) in pairs.iter().zip(&averages) {
        let weight = ws[i] * ws[j] * (-beta * (es[i] + es[j])).exp();
        num += full * full * weight;
        num_half += half * half * weight;
        den += weight;
        table.push((vec![es[i] + es[j], es[j]], full, weight));
    }
    let value = num / den;
    let value_half = num_half / den;
    Ok(NormAhSquared {
        value,
        // torus averages converge ~1/T; the half-horizon difference tracks it
        quad_error: (value - value_half).abs() + 1e-3 * value.abs(),
        table,
    })
}

/// The quadrature side of the projection identity
/// `<A, h>_beta = <A^H, h^H>_D` for a monomial `h = H^n` of a 1-DOF builtin:
/// integrates `A^H(alpha) alpha^n` under the same induced measure.
pub fn projected_overlap_1dof(
    sys: &SystemSpec,
    a: &Expression,
    beta: f64,
    n_pow: u32,
    spec: &QuadratureSpec,
) -> Result<f64, RegularError> {
    if sys.kind() != SystemKind::Oscillator {
        return Err(RegularError::UnsupportedSystem(sys.name().to_string()));
    }
    let (alphas, weights) = stats::gauss_legendre_on(0.0, spec.energy_span / beta, spec.nodes);
    let rows: Vec<(f64, f64)> = alphas
        .par_iter()
        .map(|&alpha| {
            let hint = PhaseState {
                q: vec![0.0],
                p: vec![1.0],
            };
            level_set_average_opts(sys, a, alpha, &hint, &spec.opts).map(|l| (l.value, l.period))
        })
        .collect::<Result<_, _>>()?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&alpha, &w), &(val, period)) in alphas.iter().zip(&weights).zip(&rows) {
        let weight = w * period * (-beta * alpha).exp();
        num += val * alpha.powi(n_pow as i32) * weight;
        den += weight;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn oscillator_level_average_of_q_squared() {
        // circle average of q^2 at energy E is E; period is 2pi
        let sys = SystemSpec::harmonic_oscillator();
        let a = Expression::parse("q1^2", 1).unwrap();
        for e in [0.3, 0.7, 2.5] {
            let hint = PhaseState::new(vec![0.0], vec![1.0]).unwrap();
            let l = level_set_average(&sys, &a, e, &hint).unwrap();
            assert!((l.value - e).abs() < 1e-6 * e.max(1.0), "E={e}: {}", l.value);
            assert!((l.period - TAU).abs() < 2e-6, "E={e}: T={}", l.period);
            assert_eq!(l.component, "oscillation");
        }
    }

    #[test]
    fn oscillator_odd_average_vanishes() {
        let sys = SystemSpec::harmonic_oscillator();
        let a = Expression::parse("q1", 1).unwrap();
        let hint = PhaseState::new(vec![0.0], vec![-1.0]).unwrap();
        let l = level_set_average(&sys, &a, 1.3, &hint).unwrap();
        assert!(l.value.abs() < 1e-9, "{}", l.value);
    }

    #[test]
    fn pendulum_rotation_matches_frozen_period() {
        // frozen oracle: T_rot(1.125) = 5.4914782362, 2pi/T = 1.1441701190
        let sys = SystemSpec::pendulum();
        let a = Expression::parse("p1", 1).unwrap();
        let hint = PhaseState::new(vec![0.0], vec![2.0616]).unwrap();
        let l = level_set_average(&sys, &a, 1.125, &hint).unwrap();
        assert_eq!(l.component, "rotation+");
        assert!((l.period - 5.4914782362).abs() < 1e-5, "T = {}", l.period);
        assert!((l.value - 1.1441701190).abs() < 1e-4, "val = {}", l.value);

        // matches the orbital average over a whole number of periods, where
        // the finite-horizon remainder vanishes
        let start = PhaseState::new(vec![0.0], vec![l_p(&sys, 1.125)]).unwrap();
        let horizon = (400.0 / l.period).round() * l.period;
        let oa = correlation::orbital_average(&sys, &a, &start, horizon, 1e-3).unwrap();
        assert!((l.value - oa).abs() < 1e-4, "{} vs {oa}", l.value);
    }

    fn l_p(sys: &SystemSpec, alpha: f64) -> f64 {
        // p at q=0 for the pendulum: H = p^2/2 - 1 = alpha
        let _ = sys;
        (2.0 * (alpha + 1.0)).sqrt()
    }

    #[test]
    fn pendulum_libration_matches_frozen_period() {
        // start (q = 0.5, p = 0): E = -cos(0.5), T_lib = 6.3827896977 frozen
        let sys = SystemSpec::pendulum();
        let a = Expression::parse("p1", 1).unwrap();
        let alpha = -(0.5f64).cos();
        let hint = PhaseState::new(vec![0.4], vec![0.5]).unwrap();
        let l = level_set_average(&sys, &a, alpha, &hint).unwrap();
        assert_eq!(l.component, "oscillation");
        assert!((l.period - 6.3827896977).abs() < 1e-5, "T = {}", l.period);
        // librating orbit: average momentum is zero
        assert!(l.value.abs() < 1e-8, "val = {}", l.value);
    }

    #[test]
    fn energy_correction_failure() {
        // alpha below the potential at the hinted q: no real momentum
        let sys = SystemSpec::harmonic_oscillator();
        let a = Expression::parse("q1", 1).unwrap();
        let hint = PhaseState::new(vec![2.0], vec![0.5]).unwrap();
        let err = level_set_average(&sys, &a, 0.1, &hint).unwrap_err();
        assert!(matches!(err, RegularError::EnergyCorrectionFailed { .. }), "{err}");
    }

    #[test]
    fn period_cap_on_unbounded_orbit() {
        // constant force, unbounded motion: no period exists
        let sys = SystemSpec::new("slide", 1, "p1^2/2 - q1", &[], vec![false]).unwrap();
        let a = Expression::parse("q1", 1).unwrap();
        let hint = PhaseState::new(vec![0.0], vec![1.0]).unwrap();
        let opts = RegularOpts {
            period_step_cap: 50_000,
            ..Default::default()
        };
        let err = level_set_average_opts(&sys, &a, 0.5, &hint, &opts).unwrap_err();
        assert!(matches!(err, RegularError::PeriodNotFound { .. }), "{err}");
    }

    #[test]
    fn norm_ah_oscillator_oracles() {
        let sys = SystemSpec::harmonic_oscillator();
        let spec = QuadratureSpec::default();
        // beta = 1, A = q1^2: integral E^2 e^-E / integral e^-E = 2
        let a = Expression::parse("q1^2", 1).unwrap();
        let r = norm_ah_squared(&sys, &a, 1.0, &spec).unwrap();
        assert!((r.value - 2.0).abs() < 1e-3, "{}", r.value);
        assert!(r.quad_error < 1e-3);

        // A = q1: A^H = 0
        let a = Expression::parse("q1", 1).unwrap();
        let r = norm_ah_squared(&sys, &a, 1.0, &spec).unwrap();
        assert!(r.value < 1e-6, "{}", r.value);

        // beta = 2, A = H^2: <H^4> = 4!/2^4 = 1.5
        let a = sys.parse_observable("H1^2").unwrap();
        let r = norm_ah_squared(&sys, &a, 2.0, &spec).unwrap();
        assert!((r.value - 1.5).abs() < 1e-3, "{}", r.value);
    }

    #[test]
    fn weight_consistency_constant_period() {
        // T(E) = 2pi across the grid for the oscillator
        let sys = SystemSpec::harmonic_oscillator();
        let a = Expression::parse("q1^2", 1).unwrap();
        let spec = QuadratureSpec::default();
        let r = norm_ah_squared(&sys, &a, 1.0, &spec).unwrap();
        for (alpha, _, weight) in &r.table {
            let period = weight / (-alpha[0]).exp();
            assert!(
                (period - TAU).abs() < 1e-6 * TAU,
                "T({}) = {period}",
                alpha[0]
            );
        }
    }

    #[test]
    fn pendulum_rejected_multi_component() {
        let sys = SystemSpec::pendulum();
        let a = Expression::parse("p1", 1).unwrap();
        let err = norm_ah_squared(&sys, &a, 1.0, &QuadratureSpec::default()).unwrap_err();
        assert!(matches!(err, RegularError::MultiComponent));
    }

    #[test]
    fn product_norm_oracles_small_grid() {
        let sys = SystemSpec::two_oscillators();
        let spec = QuadratureSpec {
            nodes_2d: 12,
            torus_t: 300.0,
            torus_dt: 2e-3,
            ..Default::default()
        };
        // A = H1^2 is level-constant: quadrature gives <(E1+E2)^4> = 120
        let a = sys.parse_observable("H1^2").unwrap();
        let r = norm_ah_squared(&sys, &a, 1.0, &spec).unwrap();
        assert!((r.value - 120.0).abs() < 1.5, "{} ({:.2e})", r.value, r.quad_error);

        // A = q1^2: A^H = E1, norm = <E1^2> = 2
        let a = Expression::parse("q1^2", 2).unwrap();
        let r = norm_ah_squared(&sys, &a, 1.0, &spec).unwrap();
        assert!((r.value - 2.0).abs() < 0.08, "{} ({:.2e})", r.value, r.quad_error);

        // A = q1^2 q2^2: A^H = E1 E2 / 2, norm = <E1^2><E2^2>/4 = 1
        let a = Expression::parse("q1^2*q2^2", 2).unwrap();
        let r = norm_ah_squared(&sys, &a, 1.0, &spec).unwrap();
        assert!((r.value - 1.0).abs() < 0.06, "{} ({:.2e})", r.value, r.quad_error);
    }

    #[test]
    fn projection_property_quadrature_side() {
        // <A, H^n>_beta = <A^H, alpha^n>_D: the right side for A = q1^2 at
        // beta = 1 is <E^{n+1}> = (n+1)! by the Gamma integrals
        let sys = SystemSpec::harmonic_oscillator();
        let a = Expression::parse("q1^2", 1).unwrap();
        let spec = QuadratureSpec::default();
        for n_pow in 0..=3u32 {
            let v = projected_overlap_1dof(&sys, &a, 1.0, n_pow, &spec).unwrap();
            let expect: f64 = (1..=(n_pow as u64 + 1)).product::<u64>() as f64;
            assert!(
                (v - expect).abs() < 1e-3 * expect,
                "n={n_pow}: {v} vs {expect}"
            );
        }
    }

    #[test]
    fn table_csv_shape() {
        let sys = SystemSpec::harmonic_oscillator();
        let a = Expression::parse("q1^2", 1).unwrap();
        let spec = QuadratureSpec {
            nodes: 16,
            ..Default::default()
        };
        let r = norm_ah_squared(&sys, &a, 1.0, &spec).unwrap();
        let csv = r.table_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha1,ah,weight");
        assert_eq!(lines.len(), 17);
    }

    #[test]
    fn minimum_energy_degenerates_to_small_oscillations() {
        // alpha at the potential minimum: energy correction lands on a tiny
        // orbit whose period is the small-oscillation limit 2pi
        let sys = SystemSpec::pendulum();
        let a = Expression::parse("p1", 1).unwrap();
        let hint = PhaseState::new(vec![0.0], vec![0.0]).unwrap();
        let l = level_set_average(&sys, &a, -1.0, &hint).unwrap();
        assert!((l.period - TAU).abs() < 1e-3, "T = {}", l.period);
        assert!(l.value.abs() < 1e-9);
    }

    #[test]
    fn custom_system_rejected_by_norm() {
        let sys = SystemSpec::new("blob", 1, "p1^2/2 + q1^4", &[], vec![false]).unwrap();
        let a = Expression::parse("q1", 1).unwrap();
        let err = norm_ah_squared(&sys, &a, 1.0, &QuadratureSpec::default()).unwrap_err();
        assert!(matches!(err, RegularError::UnsupportedSystem(_)));
    }

    #[test]
    fn oscillator_period_independent_of_phase() {
        // start the section at a generic point, not a turning point
        let sys = SystemSpec::harmonic_oscillator();
        let a = Expression::parse("q1^2", 1).unwrap();
        let hint = PhaseState::new(vec![0.9], vec![0.4]).unwrap();
        let l = level_set_average(&sys, &a, 1.1, &hint).unwrap();
        assert!((l.period - TAU).abs() < 2e-6);
        assert!((l.value - 1.1).abs() < 1e-6 * 1.1);
        let _ = PI;
    }
}
