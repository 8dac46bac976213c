//! Hamiltonian systems and symplectic integration of Hamilton's equations.
//!
//! Hamiltonians must be separable, `H = T(p) + V(q)`; the position-Verlet
//! (leapfrog) scheme used here is second order, symplectic and
//! time-reversible. Non-separable Hamiltonians are rejected at system
//! construction.

use crate::expr::{EvalError, EvalScratch, Expression, ParseError, Program};
use crate::Warning;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state dimension mismatch: expected r = {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("phase-space state contains a non-finite entry")]
    NonFiniteState,
    #[error("q and p must have the same non-zero length")]
    BadStateShape,
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("trajectory needs {needed} steps, above the step cap {cap}")]
    StepCapExceeded { needed: u64, cap: u64 },
    #[error("integration produced a non-finite state at step {step}")]
    NonFiniteAtStep { step: u64 },
    #[error(
        "Hamiltonian is not separable: {reason}; only H = T(p) + V(q) is supported by the \
         leapfrog integrator"
    )]
    NonSeparable { reason: String },
    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: ParseError,
    },
    #[error("failed to evaluate {what}: {source}")]
    Eval {
        what: String,
        #[source]
        source: EvalError,
    },
}

/// A point `(q, p)` of the `2r`-dimensional phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<PhaseState, DynamicsError> {
        if q.is_empty() || q.len() != p.len() {
            return Err(DynamicsError::BadStateShape);
        }
        if !q.iter().chain(p.iter()).all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFiniteState);
        }
        Ok(PhaseState { q, p })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// Which builtin a system is, so downstream modules can special-case the
/// level-set geometry they were designed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// User-supplied expressions.
    Custom,
    /// Unit harmonic oscillator, r = 1.
    Oscillator,
    /// Two uncoupled oscillators with frequencies 1 and sqrt(2), r = 2.
    TwoOscillators,
    /// Pendulum on the cylinder, r = 1.
    Pendulum,
}

/// A Hamiltonian system: `H = H_1` plus any further conserved quantities
/// `H_2..H_k`, all given as expressions over `(q, p)`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    name: String,
    r: usize,
    kind: SystemKind,
    hamiltonian: Expression,
    conserved: Vec<Expression>,
    /// Coordinates that live on a circle and wrap into `[-pi, pi)`.
    angular: Vec<bool>,
    h_prog: Program,
    dh_dq: Vec<Program>,
    dh_dp: Vec<Program>,
    conserved_progs: Vec<Program>,
}

impl SystemSpec {
    /// Build a system from expression text. `extra_conserved` are `H_2..H_k`;
    /// `H_1` is always the Hamiltonian itself.
    pub fn new(
        name: &str,
        r: usize,
        hamiltonian: &str,
        extra_conserved: &[&str],
        angular: Vec<bool>,
    ) -> Result<SystemSpec, DynamicsError> {
        Self::with_kind(name, r, hamiltonian, extra_conserved, angular, SystemKind::Custom)
    }

    fn with_kind(
        name: &str,
        r: usize,
        hamiltonian: &str,
        extra_conserved: &[&str],
        angular: Vec<bool>,
        kind: SystemKind,
    ) -> Result<SystemSpec, DynamicsError> {
        assert_eq!(angular.len(), r, "one angular flag per coordinate");
        let parse = |what: &str, text: &str| {
            Expression::parse(text, r).map_err(|source| DynamicsError::Parse {
                what: what.to_string(),
                source,
            })
        };
        let h = parse("hamiltonian", hamiltonian)?;
        let grad = h.gradient();
        // separable means dH/dq is p-free and dH/dp is q-free
        for (i, d) in grad.dq.iter().enumerate() {
            if d.references_any_p() {
                return Err(DynamicsError::NonSeparable {
                    reason: format!("dH/dq{} depends on momenta", i + 1),
                });
            }
        }
        for (i, d) in grad.dp.iter().enumerate() {
            if d.references_any_q() {
                return Err(DynamicsError::NonSeparable {
                    reason: format!("dH/dp{} depends on coordinates", i + 1),
                });
            }
        }
        let mut conserved = vec![h.clone()];
        for (j, text) in extra_conserved.iter().enumerate() {
            conserved.push(parse(&format!("conserved quantity H{}", j + 2), text)?);
        }
        let conserved_progs = conserved.iter().map(Expression::compile).collect();
        Ok(SystemSpec {
            name: name.to_string(),
            r,
            kind,
            h_prog: h.compile(),
            dh_dq: grad.dq.iter().map(Expression::compile).collect(),
            dh_dp: grad.dp.iter().map(Expression::compile).collect(),
            hamiltonian: h,
            conserved,
            angular,
            conserved_progs,
        })
    }

    /// Unit harmonic oscillator `H = (q1^2 + p1^2)/2`.
    pub fn harmonic_oscillator() -> SystemSpec {
        Self::with_kind(
            "ho",
            1,
            "(q1^2 + p1^2)/2",
            &[],
            vec![false],
            SystemKind::Oscillator,
        )
        .expect("builtin")
    }

    /// Two uncoupled oscillators with frequencies 1 and sqrt(2);
    /// `H_2` is the second oscillator's energy.
    pub fn two_oscillators() -> SystemSpec {
        Self::with_kind(
            "two_osc",
            2,
            "(q1^2 + p1^2)/2 + (p2^2 + 2*q2^2)/2",
            &["(p2^2 + 2*q2^2)/2"],
            vec![false, false],
            SystemKind::TwoOscillators,
        )
        .expect("builtin")
    }

    /// Pendulum `H = p1^2/2 - cos(q1)` on the cylinder `q1 in [-pi, pi)`.
    pub fn pendulum() -> SystemSpec {
        Self::with_kind(
            "pendulum",
            1,
            "p1^2/2 - cos(q1)",
            &[],
            vec![true],
            SystemKind::Pendulum,
        )
        .expect("builtin")
    }

    /// Look up a builtin by its name.
    pub fn builtin(name: &str) -> Option<SystemSpec> {
        match name {
            "ho" => Some(Self::harmonic_oscillator()),
            "two_osc" => Some(Self::two_oscillators()),
            "pendulum" => Some(Self::pendulum()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    /// Number of conserved quantities, `k >= 1`.
    pub fn k(&self) -> usize {
        self.conserved.len()
    }

    pub fn hamiltonian(&self) -> &Expression {
        &self.hamiltonian
    }

    /// `H_1..H_k`, with `conserved()[0]` the Hamiltonian.
    pub fn conserved(&self) -> &[Expression] {
        &self.conserved
    }

    pub fn conserved_programs(&self) -> &[Program] {
        &self.conserved_progs
    }

    pub fn angular(&self) -> &[bool] {
        &self.angular
    }

    pub fn hamiltonian_program(&self) -> &Program {
        &self.h_prog
    }

    /// Parse an observable in this system's context: `H1..Hk` are available
    /// as derived names.
    pub fn parse_observable(&self, text: &str) -> Result<Expression, ParseError> {
        Expression::parse_with_macros(text, self.r, &self.conserved)
    }

    /// Evaluate the Hamiltonian at a state.
    pub fn energy(&self, s: &PhaseState) -> Result<f64, DynamicsError> {
        self.hamiltonian
            .eval(&s.q, &s.p)
            .map_err(|source| DynamicsError::Eval {
                what: "hamiltonian".into(),
                source,
            })
    }

    /// Wrap angular coordinates into `[-pi, pi)` in place.
    pub fn wrap_angular(&self, q: &mut [f64]) {
        use std::f64::consts::PI;
        for (qi, &is_angle) in q.iter_mut().zip(&self.angular) {
            if is_angle && (*qi < -PI || *qi >= PI) {
                *qi = (*qi + PI).rem_euclid(2.0 * PI) - PI;
            }
        }
    }
}

/// Streaming position-Verlet integrator. Owns its state and scratch buffers;
/// use it directly when the trajectory should not be materialized.
pub struct Stepper<'a> {
    sys: &'a SystemSpec,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    dt: f64,
    scratch: EvalScratch,
    force: Vec<f64>,
    steps_taken: u64,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a SystemSpec, start: &PhaseState, dt: f64) -> Result<Stepper<'a>, DynamicsError> {
        if start.dim() != sys.r {
            return Err(DynamicsError::DimensionMismatch {
                expected: sys.r,
                got: start.dim(),
            });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DynamicsError::BadTimeStep(dt));
        }
        Ok(Stepper {
            sys,
            q: start.q.clone(),
            p: start.p.clone(),
            dt,
            scratch: EvalScratch::default(),
            force: vec![0.0; sys.r],
            steps_taken: 0,
        })
    }

    /// One leapfrog step:
    /// `q += dt/2 dH/dp; p -= dt dH/dq; q += dt/2 dH/dp`.
    pub fn step(&mut self) -> Result<(), DynamicsError> {
        let half = 0.5 * self.dt;
        let sys = self.sys;
        let eval = |prog: &Program, q: &[f64], p: &[f64], scratch: &mut EvalScratch| {
            prog.eval(q, p, scratch).map_err(|source| DynamicsError::Eval {
                what: "Hamiltonian gradient".into(),
                source,
            })
        };
        for i in 0..sys.r {
            self.force[i] = eval(&sys.dh_dp[i], &self.q, &self.p, &mut self.scratch)?;
        }
        for i in 0..sys.r {
            self.q[i] += half * self.force[i];
        }
        for i in 0..sys.r {
            self.force[i] = eval(&sys.dh_dq[i], &self.q, &self.p, &mut self.scratch)?;
        }
        for i in 0..sys.r {
            self.p[i] -= self.dt * self.force[i];
        }
        for i in 0..sys.r {
            self.force[i] = eval(&sys.dh_dp[i], &self.q, &self.p, &mut self.scratch)?;
        }
        for i in 0..sys.r {
            self.q[i] += half * self.force[i];
        }
        self.steps_taken += 1;
        if !self.q.iter().chain(self.p.iter()).all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFiniteAtStep {
                step: self.steps_taken,
            });
        }
        Ok(())
    }

    pub fn state(&self) -> PhaseState {
        PhaseState {
            q: self.q.clone(),
            p: self.p.clone(),
        }
    }
}

/// One second-order symplectic step. Stepping forward and then backward
/// (negate `p`, step, negate `p`) returns the start state to round-off.
pub fn step_verlet(
    sys: &SystemSpec,
    s: &PhaseState,
    dt: f64,
) -> Result<PhaseState, DynamicsError> {
    let mut stepper = Stepper::new(sys, s, dt)?;
    stepper.step()?;
    Ok(stepper.state())
}

/// Options for [`integrate`].
#[derive(Debug, Clone)]
pub struct IntegrateOpts {
    /// Hard limit on steps per trajectory.
    pub step_cap: u64,
    /// Relative drift above which a warning is recorded (never an error:
    /// long-horizon averages remain meaningful).
    pub drift_tol: f64,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        IntegrateOpts {
            step_cap: 100_000_000,
            drift_tol: 1e-4,
        }
    }
}

/// A stored trajectory with conservation diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    /// States at times `0, dt, ..., n dt`.
    pub states: Vec<PhaseState>,
    /// Per conserved quantity: max over time of
    /// `|H_i(t) - H_i(0)| / max(1, |H_i(0)|)`.
    pub drift: Vec<f64>,
    pub warnings: Vec<Warning>,
}

/// Integrate over `[0, T]`, storing `floor(T/dt) + 1` states and the drift
/// of every declared conserved quantity.
pub fn integrate(
    sys: &SystemSpec,
    s0: &PhaseState,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    integrate_opts(sys, s0, t_final, dt, &IntegrateOpts::default())
}

pub fn integrate_opts(
    sys: &SystemSpec,
    s0: &PhaseState,
    t_final: f64,
    dt: f64,
    opts: &IntegrateOpts,
) -> Result<Trajectory, DynamicsError> {
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(DynamicsError::BadHorizon(t_final));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::BadTimeStep(dt));
    }
    let n_steps = (t_final / dt).floor() as u64;
    if n_steps > opts.step_cap {
        return Err(DynamicsError::StepCapExceeded {
            needed: n_steps,
            cap: opts.step_cap,
        });
    }
    let mut stepper = Stepper::new(sys, s0, dt)?;
    let mut states = Vec::with_capacity(n_steps as usize + 1);
    states.push(stepper.state());
    for _ in 0..n_steps {
        stepper.step()?;
        states.push(stepper.state());
    }
    let mut traj = Trajectory {
        dt,
        states,
        drift: Vec::new(),
        warnings: Vec::new(),
    };
    traj.drift = conserved_drift(&traj, sys)?;
    for (i, &d) in traj.drift.iter().enumerate() {
        if d > opts.drift_tol {
            traj.warnings.push(Warning::new(
                "dynamics.integrate",
                format!(
                    "conserved quantity H{} drifted by {d:.3e} (tolerance {:.1e}); \
                     consider a smaller dt",
                    i + 1,
                    opts.drift_tol
                ),
            ));
        }
    }
    Ok(traj)
}

/// Max relative deviation of each declared conserved quantity along a
/// trajectory; the empirical check that the `H_i` really are constants of
/// the motion.
pub fn conserved_drift(traj: &Trajectory, sys: &SystemSpec) -> Result<Vec<f64>, DynamicsError> {
    assert!(!traj.states.is_empty(), "trajectory must be non-empty");
    let mut scratch = EvalScratch::default();
    let mut drift = vec![0.0; sys.k()];
    let mut initial = vec![0.0; sys.k()];
    for (j, prog) in sys.conserved_progs.iter().enumerate() {
        initial[j] = prog
            .eval(&traj.states[0].q, &traj.states[0].p, &mut scratch)
            .map_err(|source| DynamicsError::Eval {
                what: format!("conserved quantity H{}", j + 1),
                source,
            })?;
    }
    for state in &traj.states[1..] {
        for (j, prog) in sys.conserved_progs.iter().enumerate() {
            let v = prog
                .eval(&state.q, &state.p, &mut scratch)
                .map_err(|source| DynamicsError::Eval {
                    what: format!("conserved quantity H{}", j + 1),
                    source,
                })?;
            let rel = (v - initial[j]).abs() / initial[j].abs().max(1.0);
            if rel > drift[j] {
                drift[j] = rel;
            }
        }
    }
    Ok(drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rejects_non_separable() {
        let err = SystemSpec::new("bad", 1, "q1*p1", &[], vec![false]).unwrap_err();
        assert!(matches!(err, DynamicsError::NonSeparable { .. }), "{err}");
    }

    #[test]
    fn oscillator_period() {
        // dt chosen so that N steps land exactly on t = 2pi
        let sys = SystemSpec::harmonic_oscillator();
        let n = 6283;
        let dt = 2.0 * PI / n as f64;
        let s0 = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let mut stepper = Stepper::new(&sys, &s0, dt).unwrap();
        for _ in 0..n {
            stepper.step().unwrap();
        }
        assert!((stepper.q[0] - 1.0).abs() < 1e-5, "q = {}", stepper.q[0]);
        assert!(stepper.p[0].abs() < 1e-5, "p = {}", stepper.p[0]);
    }

    #[test]
    fn single_step_consistency() {
        // one step differs from the start by O(dt)
        let sys = SystemSpec::harmonic_oscillator();
        let s0 = PhaseState::new(vec![1.0], vec![0.5]).unwrap();
        for dt in [1e-2, 1e-3, 1e-4] {
            let s1 = step_verlet(&sys, &s0, dt).unwrap();
            let diff = (s1.q[0] - s0.q[0]).abs() + (s1.p[0] - s0.p[0]).abs();
            assert!(diff < 3.0 * dt, "dt={dt}: diff={diff}");
            assert!(diff > 0.1 * dt);
        }
    }

    #[test]
    fn reversibility() {
        for sys in [
            SystemSpec::harmonic_oscillator(),
            SystemSpec::pendulum(),
            SystemSpec::two_oscillators(),
        ] {
            let s0 = if sys.dim() == 1 {
                PhaseState::new(vec![0.4], vec![0.9]).unwrap()
            } else {
                PhaseState::new(vec![0.4, -0.3], vec![0.9, 0.6]).unwrap()
            };
            let dt = 1e-3;
            let mut fwd = Stepper::new(&sys, &s0, dt).unwrap();
            for _ in 0..1000 {
                fwd.step().unwrap();
            }
            let mut back_state = fwd.state();
            back_state.p.iter_mut().for_each(|p| *p = -*p);
            let mut back = Stepper::new(&sys, &back_state, dt).unwrap();
            for _ in 0..1000 {
                back.step().unwrap();
            }
            for i in 0..sys.dim() {
                assert!((back.q[i] - s0.q[i]).abs() < 1e-10, "{}", sys.name());
                assert!((-back.p[i] - s0.p[i]).abs() < 1e-10, "{}", sys.name());
            }
        }
    }

    #[test]
    fn builtin_drift_within_tolerance() {
        // every declared conserved quantity stays flat on every builtin
        let cases = [
            (SystemSpec::harmonic_oscillator(), vec![1.0], vec![0.3]),
            (SystemSpec::pendulum(), vec![2.1], vec![0.8]),
            (SystemSpec::two_oscillators(), vec![0.7, -0.4], vec![0.2, 1.1]),
        ];
        for (sys, q, p) in cases {
            let s0 = PhaseState::new(q, p).unwrap();
            let traj = integrate(&sys, &s0, 50.0, 1e-3).unwrap();
            for (j, &d) in traj.drift.iter().enumerate() {
                assert!(d < 1e-4, "{} H{}: drift {d}", sys.name(), j + 1);
            }
        }
    }

    #[test]
    fn second_order_energy_convergence() {
        // halving dt cuts the per-period energy error by ~4
        let sys = SystemSpec::harmonic_oscillator();
        let s0 = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let mut errors = Vec::new();
        for dt in [1e-2, 5e-3, 2.5e-3] {
            let n = (2.0 * PI / dt).round() as usize;
            let e0 = sys.energy(&s0).unwrap();
            let mut stepper = Stepper::new(&sys, &s0, dt).unwrap();
            let mut max_err = 0.0f64;
            let mut scratch = EvalScratch::default();
            for _ in 0..n {
                stepper.step().unwrap();
                let e = sys
                    .hamiltonian_program()
                    .eval(&stepper.q, &stepper.p, &mut scratch)
                    .unwrap();
                max_err = max_err.max((e - e0).abs());
            }
            errors.push(max_err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..=5.0).contains(&ratio), "ratio = {ratio}, errors = {errors:?}");
        }
    }

    #[test]
    fn integrate_drift_and_shape() {
        let sys = SystemSpec::harmonic_oscillator();
        let s0 = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let traj = integrate(&sys, &s0, 100.0, 1e-3).unwrap();
        assert_eq!(traj.states.len(), 100_001);
        assert!(traj.drift[0] < 1e-6, "drift = {}", traj.drift[0]);
        assert!(traj.warnings.is_empty());

        // pendulum librating start
        let sys = SystemSpec::pendulum();
        let s0 = PhaseState::new(vec![0.5], vec![0.0]).unwrap();
        let traj = integrate(&sys, &s0, 50.0, 1e-3).unwrap();
        assert!(traj.drift[0] < 1e-5, "drift = {}", traj.drift[0]);
    }

    #[test]
    fn single_step_horizon() {
        let sys = SystemSpec::harmonic_oscillator();
        let s0 = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let traj = integrate(&sys, &s0, 1.5e-3, 1e-3).unwrap();
        assert_eq!(traj.states.len(), 2);
    }

    #[test]
    fn step_cap_enforced() {
        let sys = SystemSpec::harmonic_oscillator();
        let s0 = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let opts = IntegrateOpts {
            step_cap: 10,
            ..Default::default()
        };
        let err = integrate_opts(&sys, &s0, 1.0, 1e-3, &opts).unwrap_err();
        assert!(matches!(err, DynamicsError::StepCapExceeded { .. }));
    }

    #[test]
    fn drift_of_constant_and_non_conserved() {
        // constant pseudo-quantity has drift exactly 0; q1 on the HO drifts O(1)
        let sys = SystemSpec::new(
            "ho_plus",
            1,
            "(q1^2 + p1^2)/2",
            &["3.5", "q1"],
            vec![false],
        )
        .unwrap();
        let s0 = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let traj = integrate(&sys, &s0, 20.0, 1e-3).unwrap();
        assert!(traj.drift[0] < 1e-6);
        assert_eq!(traj.drift[1], 0.0);
        assert!(traj.drift[2] > 0.5, "q1 drift = {}", traj.drift[2]);
        // misconfiguration surfaced as a warning
        assert!(traj.warnings.iter().any(|w| w.message.contains("H3")));
    }

    #[test]
    fn wrap_angular_range() {
        let sys = SystemSpec::pendulum();
        let mut q = vec![3.5 * PI];
        sys.wrap_angular(&mut q);
        assert!((-PI..PI).contains(&q[0]));
        assert!((q[0] - (-0.5 * PI)).abs() < 1e-12);
    }
}
