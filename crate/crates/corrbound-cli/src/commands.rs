//! The five subcommands: sample, correlate, bound, verify, report.

use crate::config::RunConfig;
use crate::CliError;
use corrbound::bounds::{
    bootstrap_mazur_stderr, bootstrap_partitioned_stderr, bootstrap_profile_stderr, bound_profile, enumerate_basis,
    mazur_strict, partitioned_bound, saturation_diagnostic, saturation_verdict, validate_labeler,
    BoundReport, DegreeBoundOut, OverlapData, PartitionedOut, SaturationOut,
    REPORT_SCHEMA_VERSION,
};
use corrbound::correlation::{estimate_c_pair, estimates_csv, CEstimate, CorrOpts};
use corrbound::gibbs::{self, GibbsEnsemble};
use corrbound::Warning;
use std::path::{Path, PathBuf};

/// Draw the ensemble configured in `cfg` and persist it with its metadata
/// header. Returns the file path.
pub fn cmd_sample(cfg: &RunConfig, seed_override: Option<u64>) -> Result<PathBuf, CliError> {
    let ens = sample(cfg, seed_override)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", cfg.out_dir.display())))?;
    let path = cfg.out_dir.join("ensemble.csv");
    gibbs::save_csv(&ens, &path).map_err(CliError::runtime)?;
    for w in ens.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(path)
}

fn sample(cfg: &RunConfig, seed_override: Option<u64>) -> Result<GibbsEnsemble, CliError> {
    let mut params = cfg.gibbs.clone();
    if let Some(seed) = seed_override {
        params.seed = seed;
    }
    gibbs::sample_gibbs(&cfg.system, &params).map_err(CliError::runtime)
}

/// Load an ensemble file and refuse it if its metadata does not match the
/// configured system and temperature.
pub fn load_matching_ensemble(cfg: &RunConfig, path: &Path) -> Result<GibbsEnsemble, CliError> {
    let ens = gibbs::load_csv(path).map_err(CliError::runtime)?;
    if ens.system_name() != cfg.system.name() {
        return Err(CliError::Validation(format!(
            "ensemble {} was sampled from system '{}', config declares '{}'",
            path.display(),
            ens.system_name(),
            cfg.system.name()
        )));
    }
    if ens.dim() != cfg.system.dim() {
        return Err(CliError::Validation(format!(
            "ensemble has r = {}, system has r = {}",
            ens.dim(),
            cfg.system.dim()
        )));
    }
    if (ens.beta() - cfg.gibbs.beta).abs() > 1e-12 * cfg.gibbs.beta {
        return Err(CliError::Validation(format!(
            "ensemble beta = {} does not match configured beta = {}",
            ens.beta(),
            cfg.gibbs.beta
        )));
    }
    Ok(ens)
}

fn obtain_ensemble(
    cfg: &RunConfig,
    ensemble_path: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<GibbsEnsemble, CliError> {
    match ensemble_path {
        Some(p) => load_matching_ensemble(cfg, p),
        None => sample(cfg, seed_override),
    }
}

/// Run both `C(A)` estimators; returns the pair and writes the run CSV.
pub fn cmd_correlate(
    cfg: &RunConfig,
    ensemble_path: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<(CEstimate, CEstimate), CliError> {
    let ens = obtain_ensemble(cfg, ensemble_path, seed_override)?;
    let opts = CorrOpts {
        n_traj: cfg.n_traj,
    };
    let (norm, direct) = estimate_c_pair(
        &cfg.system,
        &cfg.observable,
        &ens,
        cfg.t_horizon,
        cfg.dt,
        &opts,
    )
    .map_err(CliError::runtime)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", cfg.out_dir.display())))?;
    let csv = estimates_csv(&[&norm, &direct]);
    std::fs::write(cfg.out_dir.join("correlate.csv"), csv).map_err(CliError::runtime)?;
    Ok((norm, direct))
}

/// The full pipeline: ensemble, both estimators, bound profile, strict linear
/// bound, saturation probe and the optional partition refinement, assembled
/// into a report carrying every warning the stages produced.
pub fn cmd_bound(
    cfg: &RunConfig,
    ensemble_path: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<BoundReport, CliError> {
    let ens = obtain_ensemble(cfg, ensemble_path, seed_override)?;
    let mut warnings: Vec<Warning> = ens.warnings().to_vec();

    // estimators
    let opts = CorrOpts {
        n_traj: cfg.n_traj,
    };
    let (c_norm, c_direct) = estimate_c_pair(
        &cfg.system,
        &cfg.observable,
        &ens,
        cfg.t_horizon,
        cfg.dt,
        &opts,
    )
    .map_err(CliError::runtime)?;
    warnings.extend(c_norm.warnings.iter().cloned());
    warnings.extend(c_direct.warnings.iter().cloned());

    // labeler invariance check on a few ensemble points
    if let Some(labeler) = &cfg.labeler {
        let starts: Vec<_> = ens
            .strided_indices(16)
            .into_iter()
            .map(|i| ens.state(i))
            .collect();
        let lab_warnings = validate_labeler(&cfg.system, labeler, &starts, 20.0, cfg.dt)
            .map_err(CliError::runtime)?;
        warnings.extend(lab_warnings);
    }

    // overlaps and bounds
    let basis = enumerate_basis(cfg.system.k(), cfg.d_max).map_err(CliError::runtime)?;
    let od = OverlapData::build(
        &ens,
        &cfg.system,
        &cfg.observable,
        &basis,
        cfg.labeler.as_ref(),
    )
    .map_err(CliError::runtime)?;
    warnings.extend(od.warnings().iter().cloned());

    let mut profile = bound_profile(&od, cfg.d_max, cfg.jitter).map_err(CliError::runtime)?;
    let stderrs = bootstrap_profile_stderr(&od, cfg.d_max, cfg.jitter, cfg.bootstrap_resamples)
        .map_err(CliError::runtime)?;
    for (b, se) in profile.iter_mut().zip(&stderrs) {
        b.stderr = Some(*se);
        warnings.extend(b.warnings.iter().cloned());
    }

    let mazur = if cfg.mazur_strict {
        let mut m = mazur_strict(&od, cfg.jitter).map_err(CliError::runtime)?;
        let se = bootstrap_mazur_stderr(&od, cfg.jitter, cfg.bootstrap_resamples)
            .map_err(CliError::runtime)?;
        m.stderr = se.is_finite().then_some(se);
        Some(DegreeBoundOut::from_bound(&m))
    } else {
        None
    };

    let saturation = match cfg.d_probe {
        Some(d_probe) => {
            let report =
                saturation_diagnostic(&ens, &cfg.system, &cfg.observable, cfg.d_max, d_probe)
                    .map_err(CliError::runtime)?;
            let at_dmax = profile.last().expect("profile non-empty");
            let verdict = saturation_verdict(
                &report,
                c_norm.value,
                c_norm.stderr,
                at_dmax.value,
                at_dmax.stderr.unwrap_or(0.0),
            );
            Some(SaturationOut { report, verdict })
        }
        None => None,
    };

    let partitioned = if cfg.labeler.is_some() {
        let mut per_degree = Vec::with_capacity(cfg.d_max as usize + 1);
        for d in 0..=cfg.d_max {
            let mut pb = partitioned_bound(&od, d, cfg.jitter).map_err(CliError::runtime)?;
            let (se, se_cell) =
                bootstrap_partitioned_stderr(&od, d, cfg.jitter, cfg.bootstrap_resamples)
                    .map_err(CliError::runtime)?;
            pb.stderr = se.is_finite().then_some(se);
            pb.cellwise_stderr = se_cell.is_finite().then_some(se_cell);
            // refinement inequality from the paper's nested-partition lemma
            if pb.value < pb.unpartitioned - 3.0 * se {
                pb.warnings.push(Warning::new(
                    "bounds.partitioned",
                    format!(
                        "partitioned bound {:.6e} fell more than 3 sigma below the \
                         unpartitioned {:.6e} at degree {d}",
                        pb.value, pb.unpartitioned
                    ),
                ));
            }
            warnings.extend(pb.warnings.iter().cloned());
            per_degree.push(pb);
        }
        Some(PartitionedOut {
            labeler: cfg.labeler_texts.clone(),
            per_degree,
        })
    } else {
        None
    };

    let report = BoundReport {
        schema_version: REPORT_SCHEMA_VERSION,
        generated_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        system: cfg.system.name().to_string(),
        beta: cfg.gibbs.beta,
        observable: cfg.observable_text.clone(),
        seed: ens.seed(),
        n_samples: ens.len(),
        c_norm,
        c_direct,
        bounds: profile.iter().map(DegreeBoundOut::from_bound).collect(),
        mazur_strict: mazur,
        saturation,
        partitioned,
        warnings,
    };

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", cfg.out_dir.display())))?;
    std::fs::write(cfg.out_dir.join("report.json"), report.to_json())
        .map_err(CliError::runtime)?;
    std::fs::write(cfg.out_dir.join("report.csv"), report.to_csv())
        .map_err(CliError::runtime)?;
    // raw Gram/overlap estimates for external analysis
    std::fs::write(cfg.out_dir.join("gram_overlaps.csv"), od.export_csv())
        .map_err(CliError::runtime)?;
    if cfg.emit_ah_table {
        let quad = corrbound::regular::QuadratureSpec::default();
        match corrbound::regular::norm_ah_squared(&cfg.system, &cfg.observable, cfg.gibbs.beta, &quad)
        {
            Ok(nah) => {
                std::fs::write(cfg.out_dir.join("ah_table.csv"), nah.table_csv())
                    .map_err(CliError::runtime)?;
                println!(
                    "||A^H||^2 by quadrature: {:.6} (+- {:.2e})",
                    nah.value, nah.quad_error
                );
            }
            Err(e) => eprintln!("note: A^H table skipped: {e}"),
        }
    }
    Ok(report)
}

/// Render a saved report as a text summary.
pub fn cmd_report(report_path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(report_path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", report_path.display())))?;
    let report = BoundReport::from_json(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", report_path.display())))?;
    let mut out = String::new();
    out.push_str(&format!(
        "system {} at beta = {}, observable A = {}  ({} samples, seed {})\n",
        report.system, report.beta, report.observable, report.n_samples, report.seed
    ));
    out.push_str(&format!(
        "C(A) norm-of-orbital-average: {:.6} +- {:.2e}  (T = {}, half-T value {:.6})\n",
        report.c_norm.value,
        report.c_norm.stderr,
        report.c_norm.t_horizon,
        report.c_norm.value_half_horizon
    ));
    out.push_str(&format!(
        "C(A) direct-time-integral:    {:.6} +- {:.2e}\n",
        report.c_direct.value, report.c_direct.stderr
    ));
    for b in &report.bounds {
        out.push_str(&format!(
            "bound d={}: {:.6} +- {:.2e}  (cond {:.2e}, jitter {:.1e})\n",
            b.d, b.value, b.stderr, b.cond, b.jitter
        ));
    }
    if let Some(m) = &report.mazur_strict {
        out.push_str(&format!(
            "linear bound without constant monomial: {:.6} +- {:.2e}\n",
            m.value, m.stderr
        ));
    }
    if let Some(s) = &report.saturation {
        out.push_str(&format!(
            "saturation probe to degree {}: {:?}\n",
            s.report.d_probe, s.verdict
        ));
    }
    if let Some(p) = &report.partitioned {
        if let Some(last) = p.per_degree.last() {
            out.push_str(&format!(
                "partitioned bound d={}: {:.6} (global Gram), {:.6} (cellwise)\n",
                last.d, last.value, last.cellwise_value
            ));
        }
    }
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    Ok(out)
}
