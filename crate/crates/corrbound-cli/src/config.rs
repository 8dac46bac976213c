//! TOML run configuration and its validation.
//!
//! A complete annotated example:
//!
//! ```toml
//! schema_version = 1
//!
//! [system]
//! builtin = "pendulum"          # "ho" | "two_osc" | "pendulum", or instead:
//! # name = "my_system"          # custom system from expressions
//! # r = 1
//! # hamiltonian = "p1^2/2 - cos(q1)"
//! # conserved = []              # H2..Hk (H1 is always the Hamiltonian)
//! # angular = [true]            # per-coordinate wraparound into [-pi, pi)
//!
//! [gibbs]
//! beta = 1.0
//! n = 100000                    # retained samples (after burn-in, thinned)
//! burn_in = 10000
//! thin = 10
//! proposal_scale = 1.4          # omit to auto-tune toward 30-40% acceptance
//! seed = 42
//!
//! [observable]
//! expression = "p1"             # may reference H1..Hk
//!
//! [dynamics]
//! t_horizon = 500.0             # averaging horizon for the C(A) estimators
//! dt = 1e-3
//! n_traj = 4096                 # trajectory starts drawn from the ensemble
//!
//! [bounds]
//! d_max = 6                     # bound profile over degrees 0..=d_max
//! d_probe = 8                   # saturation probe degree (optional)
//! jitter = 1e-12                # starting relative Gram jitter
//! bootstrap_resamples = 200
//! mazur_strict = true           # also report the no-constant linear bound
//!
//! [labeler]                     # optional flow-invariant partition
//! cells = ["p1 > 0 && H1 > 1", "p1 < 0 && H1 > 1", "H1 <= 1"]
//!
//! [output]
//! dir = "out"
//! ```

use crate::CliError;
use corrbound::bounds::{enumerate_basis, InvariantLabeler};
use corrbound::dynamics::SystemSpec;
use corrbound::expr::Expression;
use corrbound::gibbs::GibbsParams;
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const MAX_DEGREE: u32 = 10;
pub const MAX_STEPS_PER_TRAJECTORY: f64 = 1e8;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_schema_version")]
    schema_version: u32,
    system: SystemSection,
    gibbs: GibbsSection,
    observable: ObservableSection,
    dynamics: DynamicsSection,
    #[serde(default)]
    bounds: BoundsSection,
    labeler: Option<LabelerSection>,
    #[serde(default)]
    regular: RegularSection,
    #[serde(default)]
    output: OutputSection,
}

fn default_schema_version() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    builtin: Option<String>,
    name: Option<String>,
    r: Option<usize>,
    hamiltonian: Option<String>,
    #[serde(default)]
    conserved: Vec<String>,
    angular: Option<Vec<bool>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GibbsSection {
    beta: f64,
    n: usize,
    #[serde(default = "default_burn_in")]
    burn_in: usize,
    #[serde(default = "default_thin")]
    thin: usize,
    proposal_scale: Option<f64>,
    seed: u64,
}

fn default_burn_in() -> usize {
    10_000
}

fn default_thin() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservableSection {
    expression: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsSection {
    t_horizon: f64,
    dt: f64,
    #[serde(default = "default_n_traj")]
    n_traj: usize,
}

fn default_n_traj() -> usize {
    4096
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BoundsSection {
    d_max: Option<u32>,
    d_probe: Option<u32>,
    jitter: Option<f64>,
    bootstrap_resamples: Option<usize>,
    mazur_strict: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelerSection {
    cells: Vec<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RegularSection {
    /// Also compute the level-set averages `A^H(alpha)` by quadrature and
    /// write them as a table (builtin oscillator / product systems only).
    ah_table: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<String>,
}

/// A fully validated run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub observable_text: String,
    pub observable: Expression,
    pub gibbs: GibbsParams,
    pub t_horizon: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub d_max: u32,
    pub d_probe: Option<u32>,
    pub jitter: f64,
    pub bootstrap_resamples: usize,
    pub mazur_strict: bool,
    pub labeler: Option<InvariantLabeler>,
    pub labeler_texts: Vec<String>,
    pub emit_ah_table: bool,
    pub out_dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
    if raw.schema_version != 1 {
        return Err(CliError::Validation(format!(
            "schema_version: expected 1, found {}",
            raw.schema_version
        )));
    }

    let system = build_system(&raw.system)?;

    let g = &raw.gibbs;
    if !(g.beta.is_finite() && g.beta > 0.0) {
        return Err(CliError::Validation(format!(
            "gibbs.beta: must be a positive finite number, got {}",
            g.beta
        )));
    }
    if g.n == 0 {
        return Err(CliError::Validation("gibbs.n: must be at least 1".into()));
    }
    if g.thin == 0 {
        return Err(CliError::Validation("gibbs.thin: must be at least 1".into()));
    }
    if let Some(s) = g.proposal_scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(CliError::Validation(format!(
                "gibbs.proposal_scale: must be positive, got {s}"
            )));
        }
    }

    let observable = system
        .parse_observable(&raw.observable.expression)
        .map_err(|e| CliError::Validation(format!("observable.expression: {e}")))?;

    let d = &raw.dynamics;
    if !(d.t_horizon.is_finite() && d.t_horizon > 0.0) {
        return Err(CliError::Validation(format!(
            "dynamics.t_horizon: must be positive, got {}",
            d.t_horizon
        )));
    }
    if !(d.dt.is_finite() && d.dt > 0.0) {
        return Err(CliError::Validation(format!(
            "dynamics.dt: must be positive, got {}",
            d.dt
        )));
    }
    if d.t_horizon / d.dt > MAX_STEPS_PER_TRAJECTORY {
        return Err(CliError::Validation(format!(
            "dynamics: t_horizon/dt = {:.3e} exceeds the step cap {MAX_STEPS_PER_TRAJECTORY:.0e}",
            d.t_horizon / d.dt
        )));
    }
    if d.n_traj == 0 {
        return Err(CliError::Validation(
            "dynamics.n_traj: must be at least 1".into(),
        ));
    }

    let b = &raw.bounds;
    let d_max = b.d_max.unwrap_or(6);
    if d_max > MAX_DEGREE {
        return Err(CliError::Validation(format!(
            "bounds.d_max: {d_max} exceeds the cap {MAX_DEGREE}"
        )));
    }
    if let Some(dp) = b.d_probe {
        if dp <= d_max {
            return Err(CliError::Validation(format!(
                "bounds.d_probe: {dp} must exceed d_max = {d_max}"
            )));
        }
        if dp > MAX_DEGREE {
            return Err(CliError::Validation(format!(
                "bounds.d_probe: {dp} exceeds the cap {MAX_DEGREE}"
            )));
        }
        enumerate_basis(system.k(), dp)
            .map_err(|e| CliError::Validation(format!("bounds.d_probe: {e}")))?;
    }
    // basis cap check up front, before any computation
    enumerate_basis(system.k(), d_max)
        .map_err(|e| CliError::Validation(format!("bounds.d_max: {e}")))?;
    let jitter = b.jitter.unwrap_or(corrbound::bounds::DEFAULT_JITTER);
    if !(0.0..=corrbound::bounds::MAX_JITTER).contains(&jitter) {
        return Err(CliError::Validation(format!(
            "bounds.jitter: must be in [0, {:.0e}], got {jitter}",
            corrbound::bounds::MAX_JITTER
        )));
    }

    let (labeler, labeler_texts) = match &raw.labeler {
        Some(section) => {
            if section.cells.is_empty() {
                return Err(CliError::Validation(
                    "labeler.cells: must list at least one cell predicate".into(),
                ));
            }
            let texts: Vec<&str> = section.cells.iter().map(String::as_str).collect();
            let lab = InvariantLabeler::parse(&texts, &system)
                .map_err(|e| CliError::Validation(format!("labeler.cells: {e}")))?;
            (Some(lab), section.cells.clone())
        }
        None => (None, Vec::new()),
    };

    Ok(RunConfig {
        schema_version: raw.schema_version,
        observable_text: raw.observable.expression.clone(),
        observable,
        gibbs: GibbsParams {
            beta: g.beta,
            n: g.n,
            burn_in: g.burn_in,
            thin: g.thin,
            proposal_scale: g.proposal_scale,
            seed: g.seed,
        },
        t_horizon: d.t_horizon,
        dt: d.dt,
        n_traj: d.n_traj,
        d_max,
        d_probe: b.d_probe,
        jitter,
        bootstrap_resamples: b.bootstrap_resamples.unwrap_or(200),
        mazur_strict: b.mazur_strict.unwrap_or(true),
        labeler,
        labeler_texts,
        emit_ah_table: raw.regular.ah_table.unwrap_or(false),
        out_dir: PathBuf::from(raw.output.dir.clone().unwrap_or_else(|| "out".into())),
        system,
    })
}

fn build_system(section: &SystemSection) -> Result<SystemSpec, CliError> {
    if let Some(name) = &section.builtin {
        if section.hamiltonian.is_some() || section.r.is_some() {
            return Err(CliError::Validation(
                "system: give either 'builtin' or a custom definition, not both".into(),
            ));
        }
        return SystemSpec::builtin(name).ok_or_else(|| {
            CliError::Validation(format!(
                "system.builtin: unknown system '{name}' (available: ho, two_osc, pendulum)"
            ))
        });
    }
    let r = section
        .r
        .ok_or_else(|| CliError::Validation("system.r: required for custom systems".into()))?;
    if r == 0 {
        return Err(CliError::Validation("system.r: must be at least 1".into()));
    }
    let hamiltonian = section.hamiltonian.as_ref().ok_or_else(|| {
        CliError::Validation("system.hamiltonian: required for custom systems".into())
    })?;
    let angular = match &section.angular {
        Some(a) => {
            if a.len() != r {
                return Err(CliError::Validation(format!(
                    "system.angular: expected {r} flags, got {}",
                    a.len()
                )));
            }
            a.clone()
        }
        None => vec![false; r],
    };
    let name = section.name.clone().unwrap_or_else(|| "custom".into());
    let conserved: Vec<&str> = section.conserved.iter().map(String::as_str).collect();
    SystemSpec::new(&name, r, hamiltonian, &conserved, angular)
        .map_err(|e| CliError::Validation(format!("system: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
builtin = "ho"

[gibbs]
beta = 1.0
n = 1000
seed = 7

[observable]
expression = "q1^2"

[dynamics]
t_horizon = 10.0
dt = 0.001
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.system.name(), "ho");
        assert_eq!(cfg.gibbs.seed, 7);
        assert_eq!(cfg.d_max, 6);
        assert!(cfg.labeler.is_none());
    }

    #[test]
    fn invalid_beta_names_the_field() {
        let text = MINIMAL.replace("beta = 1.0", "beta = 0.0");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("gibbs.beta"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn degree_cap_enforced_before_compute() {
        let text = format!("{MINIMAL}\n[bounds]\nd_max = 12\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("bounds.d_max"), "{err}");
    }

    #[test]
    fn bad_observable_names_the_field() {
        let text = MINIMAL.replace("q1^2", "q3^2");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("observable.expression"), "{err}");
    }

    #[test]
    fn custom_system_with_labeler() {
        let text = r#"
[system]
name = "pend"
r = 1
hamiltonian = "p1^2/2 - cos(q1)"
angular = [true]

[gibbs]
beta = 2.0
n = 100
seed = 1

[observable]
expression = "H1"

[dynamics]
t_horizon = 5.0
dt = 0.01

[labeler]
cells = ["H1 > 1 && p1 > 0", "H1 > 1 && p1 < 0", "H1 <= 1"]
"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.system.dim(), 1);
        assert!(cfg.labeler.is_some());
        assert_eq!(cfg.labeler_texts.len(), 3);
    }

    #[test]
    fn non_separable_custom_rejected() {
        let text = MINIMAL.replace(
            "builtin = \"ho\"",
            "r = 1\nhamiltonian = \"q1*p1\"",
        );
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("separable"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\nbogus_key = 3\n");
        assert!(parse_config(&text).is_err());
    }
}
