//! The `fit`, `test`, `simulate` and `synth-fev` workflows.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vcqr::basis::{make_basis, BasisKind, Domain, KnotVector, VcDesign};
use vcqr::hyptest::{estimate_scale, lr_test, rao_score_test, rao_score_test_weighted, TestSummary};
use vcqr::knotsel::{sic, stepwise_select, KnotSelectionConfig, KnotSelectionTrace, PotentialKnots, VisitedModel};
use vcqr::sim::{run_power_study, synthetic_fev};
use vcqr::vcm::{coefficient_curves, fit_vcqr, linspace, write_curves_csv, Dataset, VcqrModel};

use crate::config::{RunConfig, Selection};
use crate::error::{CliError, CliResult};
use crate::ingest::ingest_csv;

/// Points of the exported coefficient curves.
pub const CURVE_POINTS: usize = 201;
/// Share of the observed index range covered by the curves.
pub const CURVE_COVERAGE: f64 = 0.9;

/// Writes through a temporary file in the target directory and renames it into
/// place, so a failed run never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    let io_err = |e: std::io::Error| CliError::Config(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("output serializes");
    v.push(b'\n');
    v
}

fn tau_tag(tau: f64) -> String {
    format!("tau{tau}")
}

fn knots_in_units(design: &VcDesign, domain: Domain) -> Vec<Vec<f64>> {
    design
        .bases()
        .iter()
        .map(|b| b.knots().interior().iter().map(|&u| domain.from_unit(u)).collect())
        .collect()
}

/// Fits one quantile level with stepwise or fixed knots.
fn fit_level(data: &Dataset, cfg: &RunConfig, tau: f64) -> CliResult<(VcqrModel, KnotSelectionTrace)> {
    let k = &cfg.knots;
    match k.selection {
        Selection::Stepwise => {
            let potential = match (&k.candidates, k.candidate_count) {
                (Some(c), _) => PotentialKnots::Shared(c.clone()),
                (None, Some(count)) => PotentialKnots::Count {
                    count,
                    placement: k.placement,
                },
                (None, None) => PotentialKnots::Auto { placement: k.placement },
            };
            let sel = KnotSelectionConfig {
                potential_knots: potential,
                degree: cfg.degree,
                max_iterations: k.max_iterations,
                add_threshold: k.add_threshold,
                delete_threshold: k.delete_threshold,
            };
            Ok(stepwise_select(data, tau, &sel)?)
        }
        Selection::Fixed => {
            let domain = data.index_domain()?;
            let unit_knots = match (&k.fixed_knots, k.fixed_count) {
                (Some(list), _) => {
                    let mut u = Vec::with_capacity(list.len());
                    for &v in list {
                        if !(v > domain.lo && v < domain.hi) {
                            return Err(CliError::Config(format!(
                                "fixed knot {v} is not inside the index range [{}, {}]",
                                domain.lo, domain.hi
                            )));
                        }
                        u.push(domain.to_unit(v));
                    }
                    u
                }
                (None, Some(count)) => KnotVector::equispaced(count, Domain::unit()).interior().to_vec(),
                (None, None) => Vec::new(),
            };
            let basis = make_basis(&unit_knots, cfg.degree as i64, BasisKind::BSpline, Domain::unit())
                .map_err(|e| CliError::Config(e.to_string()))?;
            let design = VcDesign::shared(data.p(), basis);
            let model = fit_vcqr(data, tau, &design)?;
            let visited = VisitedModel {
                knots_per_coefficient: knots_in_units(&design, domain),
                p_n: design.width(),
                objective: model.fit.objective,
                sic: sic(model.fit.objective, design.width(), data.n())?,
            };
            let trace = KnotSelectionTrace {
                perfect_fit: visited.sic == f64::NEG_INFINITY,
                visited: vec![visited],
                selected: 0,
                n: data.n(),
            };
            Ok((model, trace))
        }
    }
}

#[derive(Serialize)]
struct FitSummary<'a> {
    tau: f64,
    n: usize,
    degree: usize,
    coefficients: &'a [String],
    knots_per_coefficient: Vec<Vec<f64>>,
    p_n: usize,
    objective: f64,
    sic: Option<f64>,
    index_range: [f64; 2],
    curve_range: [f64; 2],
}

pub fn run_fit(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate_data_run()?;
    let data = ingest_csv(cfg.input.as_deref().expect("validated"), &cfg.roles(), cfg.min_rows)?;
    let domain = data.index_domain()?;
    let (lo, hi) = data.central_range(CURVE_COVERAGE);
    let grid = linspace(lo, hi, CURVE_POINTS);
    let mut written = Vec::new();
    for &tau in &cfg.taus {
        let (model, trace) = fit_level(&data, cfg, tau)?;
        let tag = tau_tag(tau);
        let mut outputs: Vec<(PathBuf, Vec<u8>)> = Vec::new();
        if cfg.emit.curves {
            let derivs: Vec<usize> = if cfg.degree >= 1 { vec![0, 1] } else { vec![0] };
            let pts = coefficient_curves(&model, &data.column_names, &grid, &derivs)?;
            let mut buf = Vec::new();
            write_curves_csv(&mut buf, &pts).expect("writing to memory");
            outputs.push((cfg.out_dir.join(format!("curves_{tag}.csv")), buf));
        }
        if cfg.emit.trace {
            outputs.push((cfg.out_dir.join(format!("trace_{tag}.json")), to_json(&trace.visited)));
        }
        if cfg.emit.report {
            let selected = trace.selected_model();
            let summary = FitSummary {
                tau,
                n: data.n(),
                degree: cfg.degree,
                coefficients: &data.column_names,
                knots_per_coefficient: knots_in_units(&model.design, domain),
                p_n: model.design.width(),
                objective: model.fit.objective,
                sic: selected.sic.is_finite().then_some(selected.sic),
                index_range: [domain.lo, domain.hi],
                curve_range: [lo, hi],
            };
            outputs.push((cfg.out_dir.join(format!("summary_{tag}.json")), to_json(&summary)));
        }
        for (path, bytes) in outputs {
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn run_test(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate_data_run()?;
    let data = ingest_csv(cfg.input.as_deref().expect("validated"), &cfg.roles(), cfg.min_rows)?;
    let domain = data.index_domain()?;
    let scale = if cfg.weighted {
        Some(estimate_scale(&data, None)?)
    } else {
        None
    };
    let mut written = Vec::new();
    for &tau in &cfg.taus {
        let (model, _) = fit_level(&data, cfg, tau)?;
        let design = model.design;
        let knots = knots_in_units(&design, domain);
        let tag = tau_tag(tau);
        let rs = match &scale {
            Some(s) => rao_score_test_weighted(&data, tau, &design, s, cfg.calibration)?,
            None => rao_score_test(&data, tau, &design, cfg.calibration)?,
        };
        let mut outputs = vec![(
            cfg.out_dir.join(format!("report_rs_{tag}.json")),
            to_json(&TestSummary::from_rao(&rs, cfg.weighted, data.n(), tau, knots.clone())),
        )];
        if cfg.lr {
            let lr = lr_test(&data, tau, &design, cfg.bootstrap, cfg.seed)?;
            outputs.push((
                cfg.out_dir.join(format!("report_lr_{tag}.json")),
                to_json(&TestSummary::from_lr(&lr, data.n(), tau, knots)),
            ));
        }
        for (path, bytes) in outputs {
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Runs the power study; the table is written even when replicates failed,
/// in which case the run reports a numerical failure afterwards.
pub fn run_simulate(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    let sim = &cfg.simulation;
    sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let table = run_power_study(sim)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf).expect("writing to memory");
    write_atomic(out, &buf)?;
    let failures = table.total_failures();
    if failures > 0 {
        return Err(CliError::Numerical(format!(
            "{failures} replicate runs failed; see the failures column of {}",
            out.display()
        )));
    }
    Ok(out.to_path_buf())
}

pub fn run_synth_fev(n: usize, seed: u64, out: &Path) -> CliResult<PathBuf> {
    if n < 10 {
        return Err(CliError::Config(format!("sample size {n} is below 10")));
    }
    let mut buf = Vec::new();
    synthetic_fev(n, seed).write_csv(&mut buf).expect("writing to memory");
    write_atomic(out, &buf)?;
    Ok(out.to_path_buf())
}
