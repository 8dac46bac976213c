//! Random-walk Metropolis sampling of the Gibbs measure
//! `e^{-beta H} dm / Z(beta)` over phase space.
//!
//! The normalization cancels in every expectation, so the partition function
//! itself is never estimated. Proposals are isotropic Gaussians on `(q, p)`
//! jointly; angular coordinates wrap into `[-pi, pi)`. Chains are
//! deterministic given the seed.

use crate::dynamics::{DynamicsError, PhaseState, SystemSpec};
use crate::expr::{EvalError, EvalScratch, Expression, Program};
use crate::stats;
use crate::Warning;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, BufWriter, Write as IoWrite};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("thin must be at least 1")]
    BadThin,
    #[error("proposal scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("Hamiltonian is non-finite at the chain start")]
    BadStart,
    #[error("observable evaluated to a non-finite value at sample {index}")]
    NonFiniteObservable { index: usize },
    #[error("observable: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("ensemble file: {0}")]
    Format(String),
}

/// Sampler configuration.
#[derive(Debug, Clone)]
pub struct GibbsParams {
    pub beta: f64,
    /// Retained samples, post burn-in and thinning.
    pub n: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Standard deviation of the Gaussian proposal; `None` runs a short
    /// deterministic pre-chain that tunes toward 30-40% acceptance.
    pub proposal_scale: Option<f64>,
    pub seed: u64,
}

impl GibbsParams {
    pub fn new(beta: f64, n: usize, seed: u64) -> GibbsParams {
        GibbsParams {
            beta,
            n,
            burn_in: 10_000,
            thin: 10,
            proposal_scale: None,
            seed,
        }
    }
}

/// A Monte Carlo sample of the Gibbs measure, with chain diagnostics.
#[derive(Debug, Clone)]
pub struct GibbsEnsemble {
    beta: f64,
    r: usize,
    n: usize,
    /// Row-major: sample `i` occupies `[i*2r, (i+1)*2r)` as `q1..qr p1..pr`.
    data: Vec<f64>,
    acceptance_rate: f64,
    /// Effective sample size per coordinate (`q1..qr`, then `p1..pr`).
    ess: Vec<f64>,
    seed: u64,
    proposal_scale: f64,
    system_name: String,
    warnings: Vec<Warning>,
}

impl GibbsEnsemble {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.acceptance_rate
    }

    pub fn proposal_scale(&self) -> f64 {
        self.proposal_scale
    }

    pub fn system_name(&self) -> &str {
        &self.system_name
    }

    pub fn ess(&self) -> &[f64] {
        &self.ess
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// Coordinates of sample `i`.
    pub fn sample(&self, i: usize) -> (&[f64], &[f64]) {
        let row = &self.data[i * 2 * self.r..(i + 1) * 2 * self.r];
        row.split_at(self.r)
    }

    pub fn state(&self, i: usize) -> PhaseState {
        let (q, p) = self.sample(i);
        PhaseState {
            q: q.to_vec(),
            p: p.to_vec(),
        }
    }

    /// Evenly strided sample indices; the deterministic trajectory budget
    /// used by the correlation estimators.
    pub fn strided_indices(&self, count: usize) -> Vec<usize> {
        let count = count.clamp(1, self.n);
        let stride = (self.n / count).max(1);
        (0..self.n).step_by(stride).take(count).collect()
    }

    /// One scalar time series extracted per sample, e.g. an observable along
    /// the chain.
    pub fn series(
        &self,
        mut f: impl FnMut(&[f64], &[f64]) -> Result<f64, EvalError>,
    ) -> Result<Vec<f64>, GibbsError> {
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let (q, p) = self.sample(i);
            let v = f(q, p)?;
            if !v.is_finite() {
                return Err(GibbsError::NonFiniteObservable { index: i });
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Draw `params.n` samples of the Gibbs measure of `sys` at `params.beta`.
pub fn sample_gibbs(sys: &SystemSpec, params: &GibbsParams) -> Result<GibbsEnsemble, GibbsError> {
    if !(params.beta.is_finite() && params.beta > 0.0) {
        return Err(GibbsError::BadBeta(params.beta));
    }
    if params.n == 0 {
        return Err(GibbsError::EmptySample);
    }
    if params.thin == 0 {
        return Err(GibbsError::BadThin);
    }
    let mut warnings = Vec::new();
    let scale = match params.proposal_scale {
        Some(s) => {
            if !(s.is_finite() && s > 0.0) {
                return Err(GibbsError::BadScale(s));
            }
            s
        }
        None => tune_proposal_scale(sys, params)?,
    };

    let r = sys.dim();
    let h_prog = sys.hamiltonian_program();
    let mut scratch = EvalScratch::default();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut q = vec![0.0; r];
    let mut p = vec![0.0; r];
    sys.wrap_angular(&mut q);
    let mut h_cur = h_prog.eval(&q, &p, &mut scratch)?;
    if !h_cur.is_finite() {
        return Err(GibbsError::BadStart);
    }

    let mut q_prop = vec![0.0; r];
    let mut p_prop = vec![0.0; r];
    let mut data = Vec::with_capacity(params.n * 2 * r);
    let mut accepted: u64 = 0;
    let mut nonfinite: u64 = 0;
    let total_kept_phase = params.n * params.thin;

    let propose = |q: &[f64],
                       p: &[f64],
                       q_prop: &mut [f64],
                       p_prop: &mut [f64],
                       rng: &mut ChaCha8Rng| {
        for i in 0..r {
            let z: f64 = rng.sample(StandardNormal);
            q_prop[i] = q[i] + scale * z;
        }
        for i in 0..r {
            let z: f64 = rng.sample(StandardNormal);
            p_prop[i] = p[i] + scale * z;
        }
        sys.wrap_angular(q_prop);
    };

    for step in 0..params.burn_in + total_kept_phase {
        propose(&q, &p, &mut q_prop, &mut p_prop, &mut rng);
        let h_new = h_prog.eval(&q_prop, &p_prop, &mut scratch)?;
        let u: f64 = rng.random();
        if h_new.is_finite() {
            if h_new <= h_cur || u < (-params.beta * (h_new - h_cur)).exp() {
                q.copy_from_slice(&q_prop);
                p.copy_from_slice(&p_prop);
                h_cur = h_new;
                if step >= params.burn_in {
                    accepted += 1;
                }
            }
        } else {
            nonfinite += 1;
        }
        if step >= params.burn_in && (step - params.burn_in + 1).is_multiple_of(params.thin) {
            data.extend_from_slice(&q);
            data.extend_from_slice(&p);
        }
    }

    let acceptance_rate = accepted as f64 / total_kept_phase as f64;
    if !(0.1..=0.7).contains(&acceptance_rate) {
        warnings.push(Warning::new(
            "gibbs.sample",
            format!(
                "acceptance rate {acceptance_rate:.3} outside [0.1, 0.7]; adjust proposal_scale \
                 (currently {scale:.3})"
            ),
        ));
    }
    if nonfinite > 0 {
        warnings.push(Warning::new(
            "gibbs.sample",
            format!("{nonfinite} proposals rejected because H was non-finite"),
        ));
    }

    let mut ens = GibbsEnsemble {
        beta: params.beta,
        r,
        n: params.n,
        data,
        acceptance_rate,
        ess: Vec::new(),
        seed: params.seed,
        proposal_scale: scale,
        system_name: sys.name().to_string(),
        warnings,
    };
    ens.ess = coordinate_ess(&ens);
    Ok(ens)
}

/// Short deterministic pre-chain targeting 30-40% acceptance.
fn tune_proposal_scale(sys: &SystemSpec, params: &GibbsParams) -> Result<f64, GibbsError> {
    let r = sys.dim();
    let h_prog = sys.hamiltonian_program();
    let mut scratch = EvalScratch::default();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x74756e65); // "tune"
    let mut scale = 1.0f64;
    let mut q = vec![0.0; r];
    let mut p = vec![0.0; r];
    sys.wrap_angular(&mut q);
    let mut h_cur = h_prog.eval(&q, &p, &mut scratch)?;
    if !h_cur.is_finite() {
        return Err(GibbsError::BadStart);
    }
    let rounds = 20;
    let per_round = 400;
    for _ in 0..rounds {
        let mut accepted = 0u32;
        for _ in 0..per_round {
            let mut q_new = q.clone();
            let mut p_new = p.clone();
            for v in q_new.iter_mut().chain(p_new.iter_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                *v += scale * z;
            }
            sys.wrap_angular(&mut q_new);
            let h_new = h_prog.eval(&q_new, &p_new, &mut scratch)?;
            let u: f64 = rng.random();
            if h_new.is_finite() && (h_new <= h_cur || u < (-params.beta * (h_new - h_cur)).exp())
            {
                q = q_new;
                p = p_new;
                h_cur = h_new;
                accepted += 1;
            }
        }
        let acc = accepted as f64 / per_round as f64;
        scale = (scale * (1.5 * (acc - 0.35)).exp()).clamp(1e-4, 1e4);
    }
    Ok(scale)
}

fn coordinate_ess(ens: &GibbsEnsemble) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * ens.r);
    let mut series = vec![0.0; ens.n];
    for c in 0..2 * ens.r {
        for (i, slot) in series.iter_mut().enumerate() {
            *slot = ens.data[i * 2 * ens.r + c];
        }
        out.push(stats::ess(&series));
    }
    out
}

/// Sample mean and autocorrelation-aware standard error of an observable
/// under the ensemble; realizes `<F, 1>_beta`.
pub fn expectation(
    ens: &GibbsEnsemble,
    f: impl FnMut(&[f64], &[f64]) -> Result<f64, EvalError>,
) -> Result<(f64, f64), GibbsError> {
    let values = ens.series(f)?;
    Ok(stats::batch_means(&values))
}

pub fn expectation_expr(
    ens: &GibbsEnsemble,
    e: &Expression,
) -> Result<(f64, f64), GibbsError> {
    expectation(ens, |q, p| e.eval(q, p))
}

pub fn expectation_program(
    ens: &GibbsEnsemble,
    prog: &Program,
) -> Result<(f64, f64), GibbsError> {
    let mut scratch = EvalScratch::default();
    expectation(ens, |q, p| prog.eval(q, p, &mut scratch))
}

/// Concatenate independent chains (distinct seeds, same system and
/// temperature) into one ensemble. The result records the first chain's
/// seed untouched; acceptance rate and ESS are recombined.
pub fn merge_ensembles(chains: &[GibbsEnsemble]) -> Result<GibbsEnsemble, GibbsError> {
    let first = chains.first().ok_or(GibbsError::EmptySample)?;
    let mut data = Vec::new();
    let mut n = 0;
    let mut acc = 0.0;
    for c in chains {
        if c.system_name != first.system_name || c.r != first.r {
            return Err(GibbsError::Format(format!(
                "cannot merge ensembles from '{}' and '{}'",
                first.system_name, c.system_name
            )));
        }
        if (c.beta - first.beta).abs() > 1e-12 * first.beta {
            return Err(GibbsError::Format(format!(
                "cannot merge ensembles at beta = {} and beta = {}",
                first.beta, c.beta
            )));
        }
        data.extend_from_slice(&c.data);
        acc += c.acceptance_rate * c.n as f64;
        n += c.n;
    }
    let mut out = GibbsEnsemble {
        beta: first.beta,
        r: first.r,
        n,
        data,
        acceptance_rate: acc / n as f64,
        ess: Vec::new(),
        seed: first.seed,
        proposal_scale: first.proposal_scale,
        system_name: first.system_name.clone(),
        warnings: chains.iter().flat_map(|c| c.warnings.clone()).collect(),
    };
    out.ess = coordinate_ess(&out);
    Ok(out)
}

// ---- persistence -----------------------------------------------------------

const FILE_TAG: &str = "# corrbound-ensemble v1";

/// Write the ensemble as CSV with a metadata header. Floats are written in
/// shortest round-trip form, so identical ensembles produce identical bytes.
pub fn save_csv(ens: &GibbsEnsemble, path: &Path) -> Result<(), GibbsError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{FILE_TAG}")?;
    writeln!(w, "# system = {}", ens.system_name)?;
    writeln!(w, "# beta = {}", ens.beta)?;
    writeln!(w, "# seed = {}", ens.seed)?;
    writeln!(w, "# n = {}", ens.n)?;
    writeln!(w, "# r = {}", ens.r)?;
    writeln!(w, "# proposal_scale = {}", ens.proposal_scale)?;
    writeln!(w, "# acceptance_rate = {}", ens.acceptance_rate)?;
    let header: Vec<String> = (1..=ens.r)
        .map(|i| format!("q{i}"))
        .chain((1..=ens.r).map(|i| format!("p{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ens.n {
        let row = &ens.data[i * 2 * ens.r..(i + 1) * 2 * ens.r];
        let mut line = String::new();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Read an ensemble written by [`save_csv`]. ESS diagnostics are recomputed;
/// warnings are not persisted.
pub fn load_csv(path: &Path) -> Result<GibbsEnsemble, GibbsError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| GibbsError::Format("empty file".into()))??;
    if first.trim() != FILE_TAG {
        return Err(GibbsError::Format(format!(
            "expected '{FILE_TAG}' on the first line, found '{first}'"
        )));
    }
    let mut system_name = String::new();
    let mut beta = f64::NAN;
    let mut seed = 0u64;
    let mut n = 0usize;
    let mut r = 0usize;
    let mut proposal_scale = f64::NAN;
    let mut acceptance_rate = f64::NAN;
    let mut header_seen = false;
    let mut data = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.splitn(2, '=');
            let key = parts.next().unwrap_or("").trim();
            let value = parts.next().unwrap_or("").trim();
            match key {
                "system" => system_name = value.to_string(),
                "beta" => beta = parse_field(value, "beta")?,
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|_| GibbsError::Format(format!("bad seed '{value}'")))?
                }
                "n" => {
                    n = value
                        .parse()
                        .map_err(|_| GibbsError::Format(format!("bad n '{value}'")))?
                }
                "r" => {
                    r = value
                        .parse()
                        .map_err(|_| GibbsError::Format(format!("bad r '{value}'")))?
                }
                "proposal_scale" => proposal_scale = parse_field(value, "proposal_scale")?,
                "acceptance_rate" => acceptance_rate = parse_field(value, "acceptance_rate")?,
                _ => {}
            }
            continue;
        }
        if !header_seen {
            header_seen = true; // column header row
            continue;
        }
        for field in line.split(',') {
            data.push(parse_field(field.trim(), "sample value")?);
        }
    }
    if r == 0 || n == 0 {
        return Err(GibbsError::Format("missing n or r in the header".into()));
    }
    if data.len() != n * 2 * r {
        return Err(GibbsError::Format(format!(
            "expected {} values ({} samples x {}), found {}",
            n * 2 * r,
            n,
            2 * r,
            data.len()
        )));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(GibbsError::Format(format!("bad beta {beta}")));
    }
    let mut ens = GibbsEnsemble {
        beta,
        r,
        n,
        data,
        acceptance_rate,
        ess: Vec::new(),
        seed,
        proposal_scale,
        system_name,
        warnings: Vec::new(),
    };
    ens.ess = coordinate_ess(&ens);
    Ok(ens)
}

fn parse_field(s: &str, what: &str) -> Result<f64, GibbsError> {
    s.parse()
        .map_err(|_| GibbsError::Format(format!("bad {what} '{s}'")))
}
