//! Two independent estimators of the time average of the autocorrelation
//! function,
//! `C(A) = lim_{T->inf} (1/T) int_0^T <A^0, A^t>_beta dt`:
//!
//! * `norm`: the ensemble mean of the squared finite-horizon orbital average
//!   `Abar_T(m)^2` (the orbital-average norm identity `C(A) = ||Abar||^2`);
//! * `direct`: the time integral of `phi(t) = <A^0, A^t>_beta`, reduced per
//!   sample as `A(m) * Abar_T(m)` (trapezoid and ensemble mean commute, so
//!   this is the grid estimator with the summation order exchanged).
//!
//! Both share one trajectory per ensemble point and differ only in the
//! reduction, which makes the cross-check cheap. Finite-horizon bias is
//! reported, not extrapolated: each estimate carries its value at `T/2`.

use crate::dynamics::{DynamicsError, PhaseState, Stepper, SystemSpec};
use crate::expr::{EvalError, EvalScratch, Expression, Program};
use crate::gibbs::GibbsEnsemble;
use crate::stats;
use crate::Warning;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("observable: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMethod {
    NormOfOrbitalAverage,
    DirectTimeIntegral,
}

impl CMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CMethod::NormOfOrbitalAverage => "norm_of_orbital_average",
            CMethod::DirectTimeIntegral => "direct_time_integral",
        }
    }
}

/// One estimate of `C(A)`, with its finite-horizon diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CEstimate {
    pub method: CMethod,
    pub value: f64,
    /// Batch-means standard error over the trajectory starts.
    pub stderr: f64,
    /// Averaging horizon actually used (a whole number of steps).
    pub t_horizon: f64,
    pub dt: f64,
    /// Trajectory starts consumed from the ensemble.
    pub n_ensemble: usize,
    /// The same estimator truncated at `T/2`; the finite-T positive bias of
    /// the norm estimator shows up as a downward trend from this value.
    pub value_half_horizon: f64,
    pub warnings: Vec<Warning>,
}

/// Trajectory budget for the estimators.
#[derive(Debug, Clone)]
pub struct CorrOpts {
    /// How many evenly strided ensemble points get a trajectory.
    pub n_traj: usize,
}

impl Default for CorrOpts {
    fn default() -> Self {
        CorrOpts { n_traj: 4096 }
    }
}

/// Trapezoidal time average of `A` along the trajectory from `m` over
/// `[0, T]`.
pub fn orbital_average(
    sys: &SystemSpec,
    a: &Expression,
    m: &PhaseState,
    t_horizon: f64,
    dt: f64,
) -> Result<f64, CorrError> {
    let prog = a.compile();
    let (abar, _, _) = trajectory_averages(sys, std::slice::from_ref(&prog), m, t_horizon, dt)
        .map(|mut v| v.pop().unwrap())?;
    Ok(abar)
}

/// Per-observable `(Abar_T, Abar_{T/2}, A(0))` along one trajectory.
fn trajectory_averages(
    sys: &SystemSpec,
    observables: &[Program],
    m: &PhaseState,
    t_horizon: f64,
    dt: f64,
) -> Result<Vec<(f64, f64, f64)>, CorrError> {
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(CorrError::BadParams(format!(
            "horizon must be positive, got {t_horizon}"
        )));
    }
    // even step count so the half horizon lands on the grid
    let n = 2 * ((t_horizon / (2.0 * dt)).round() as u64).max(1);
    let t_eff = n as f64 * dt;
    let k = observables.len();
    let mut stepper = Stepper::new(sys, m, dt)?;
    let mut scratch = EvalScratch::default();
    let mut acc = vec![0.0f64; k];
    let mut half = vec![0.0f64; k];
    let mut a0 = vec![0.0f64; k];
    for (j, prog) in observables.iter().enumerate() {
        let v = prog.eval(&stepper.q, &stepper.p, &mut scratch)?;
        a0[j] = v;
        acc[j] = 0.5 * v;
    }
    for i in 1..=n {
        stepper.step()?;
        let at_half = i == n / 2;
        let at_end = i == n;
        for (j, prog) in observables.iter().enumerate() {
            let v = prog.eval(&stepper.q, &stepper.p, &mut scratch)?;
            acc[j] += if at_end { 0.5 * v } else { v };
            if at_half {
                half[j] = acc[j] - 0.5 * v;
            }
        }
    }
    Ok((0..k)
        .map(|j| {
            (
                acc[j] * dt / t_eff,
                half[j] * dt / (0.5 * t_eff),
                a0[j],
            )
        })
        .collect())
}

/// Estimate `C(A)` by the squared-orbital-average norm.
pub fn estimate_c_norm(
    sys: &SystemSpec,
    a: &Expression,
    ens: &GibbsEnsemble,
    t_horizon: f64,
    dt: f64,
    opts: &CorrOpts,
) -> Result<CEstimate, CorrError> {
    Ok(estimate_c_multi(sys, std::slice::from_ref(a), ens, t_horizon, dt, opts)?
        .pop()
        .unwrap()
        .0)
}

/// Estimate `C(A)` by direct time integration of the correlation function.
pub fn estimate_c_direct(
    sys: &SystemSpec,
    a: &Expression,
    ens: &GibbsEnsemble,
    t_horizon: f64,
    dt: f64,
    opts: &CorrOpts,
) -> Result<CEstimate, CorrError> {
    Ok(estimate_c_multi(sys, std::slice::from_ref(a), ens, t_horizon, dt, opts)?
        .pop()
        .unwrap()
        .1)
}

/// Both estimators from one set of trajectories.
pub fn estimate_c_pair(
    sys: &SystemSpec,
    a: &Expression,
    ens: &GibbsEnsemble,
    t_horizon: f64,
    dt: f64,
    opts: &CorrOpts,
) -> Result<(CEstimate, CEstimate), CorrError> {
    Ok(estimate_c_multi(sys, std::slice::from_ref(a), ens, t_horizon, dt, opts)?
        .pop()
        .unwrap())
}

/// Batch variant: all observables share the same trajectories, which is where
/// essentially all the cost is.
pub fn estimate_c_multi(
    sys: &SystemSpec,
    observables: &[Expression],
    ens: &GibbsEnsemble,
    t_horizon: f64,
    dt: f64,
    opts: &CorrOpts,
) -> Result<Vec<(CEstimate, CEstimate)>, CorrError> {
    if observables.is_empty() {
        return Ok(Vec::new());
    }
    if opts.n_traj == 0 {
        return Err(CorrError::BadParams("n_traj must be at least 1".into()));
    }
    let programs: Vec<Program> = observables.iter().map(Expression::compile).collect();
    let indices = ens.strided_indices(opts.n_traj);
    let n_used = indices.len();

    // one trajectory per start, in parallel; collect() keeps ensemble order
    // so reductions are deterministic regardless of thread count
    let per_start: Vec<Vec<(f64, f64, f64)>> = indices
        .par_iter()
        .map(|&i| {
            let m = ens.state(i);
            trajectory_averages(sys, &programs, &m, t_horizon, dt)
        })
        .collect::<Result<_, _>>()?;

    let n_steps = 2 * ((t_horizon / (2.0 * dt)).round() as u64).max(1);
    let t_eff = n_steps as f64 * dt;

    let mut out = Vec::with_capacity(observables.len());
    for j in 0..observables.len() {
        let norm_vals: Vec<f64> = per_start.iter().map(|s| s[j].0 * s[j].0).collect();
        let norm_half: Vec<f64> = per_start.iter().map(|s| s[j].1 * s[j].1).collect();
        let direct_vals: Vec<f64> = per_start.iter().map(|s| s[j].2 * s[j].0).collect();
        let direct_half: Vec<f64> = per_start.iter().map(|s| s[j].2 * s[j].1).collect();

        let (nv, nse) = stats::batch_means(&norm_vals);
        let (dv, dse) = stats::batch_means(&direct_vals);
        let mut norm_warnings = Vec::new();
        let mut direct_warnings = Vec::new();
        if dv < -3.0 * dse {
            direct_warnings.push(Warning::new(
                "correlation.direct",
                format!("estimate {dv:.3e} negative beyond 3 sigma ({dse:.3e}); C(A) is a squared norm, this indicates a bug or a too-short horizon"),
            ));
        }
        if nv < 0.0 {
            norm_warnings.push(Warning::new(
                "correlation.norm",
                "mean of squares came out negative; numerical corruption".to_string(),
            ));
        }
        out.push((
            CEstimate {
                method: CMethod::NormOfOrbitalAverage,
                value: nv,
                stderr: nse,
                t_horizon: t_eff,
                dt,
                n_ensemble: n_used,
                value_half_horizon: stats::mean(&norm_half),
                warnings: norm_warnings,
            },
            CEstimate {
                method: CMethod::DirectTimeIntegral,
                value: dv,
                stderr: dse,
                t_horizon: t_eff,
                dt,
                n_ensemble: n_used,
                value_half_horizon: stats::mean(&direct_half),
                warnings: direct_warnings,
            },
        ));
    }
    Ok(out)
}

/// Render estimates as the flat CSV the CLI emits.
pub fn estimates_csv(estimates: &[&CEstimate]) -> String {
    let mut out = String::from("method,T,dt,n,value,stderr\n");
    for e in estimates {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.method.as_str(),
            e.t_horizon,
            e.dt,
            e.n_ensemble,
            e.value,
            e.stderr
        ));
    }
    out
}
