//! Scenario execution. Every scenario kind writes `scenario.json`,
//! `report.json` and kind-specific CSV files into a [`Bundle`].

use std::fmt::Write as _;
use std::path::Path;

use pwdpd_core::basis::enumerate_bfs;
use pwdpd_core::complexity::{check_reference, flops, ledger_table, render_table, ComplexityParams, DpdConfig};
use pwdpd_core::dpd::{predistort, ClosedLoopSource, save_model, write_trace_csv, DpdModel, IterationRecord};
use pwdpd_core::metrics::{fit_resolution, psd, write_psd_csv, write_sweep_csv, AclrReport};
use pwdpd_core::pipeline::{
    measure_partition, run_method_with, steering_sweep, EvalSet, ExperimentConfig, Method, MethodResult,
    MethodSummary, PartitionDomain, PartitionMethod, PlantSource, SteeringPoint,
};
use pwdpd_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bundle::{Bundle, Manifest};
use crate::scenario::{ExperimentRef, RunSpec, Scenario, ScenarioKind, SCHEMA_VERSION};

pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// File-name friendly form of a label.
pub fn slug(label: &str) -> String {
    let mut s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub summary: MethodSummary,
    pub main_beam: AclrReport,
    pub partition: Option<Vec<f64>>,
    pub warnings: Vec<String>,
    pub trace: Vec<TraceLine>,
}

/// Trace record without the per-coefficient correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub iteration: usize,
    pub error_power_dbc: f64,
    pub nmse_db: f64,
    pub active_bf_count: usize,
}

impl From<&IterationRecord> for TraceLine {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iteration: r.iteration,
            error_power_dbc: r.error_power_dbc,
            nmse_db: r.nmse_db,
            active_bf_count: r.active_bf_count,
        }
    }
}

pub fn run_report(label: &str, r: &MethodResult<f64>) -> RunReport {
    let mut warnings = r.partition.as_ref().map(|p| p.warnings.clone()).unwrap_or_default();
    if let Some(w) = &r.evaluation.trp.warning {
        warnings.push(w.clone());
    }
    RunReport {
        label: label.to_string(),
        summary: r.summary(),
        main_beam: r.evaluation.main_beam.clone(),
        partition: r.partition.as_ref().map(|p| p.partition.boundaries.clone()),
        warnings,
        trace: r.trace.iter().map(TraceLine::from).collect(),
    }
}

/// One configured run, evaluated on the configuration's own waveform.
pub fn execute(cfg: &ExperimentConfig, method: Method) -> Result<MethodResult<f64>> {
    let plant = cfg.plant.build::<f64>()?;
    let eval = EvalSet::<f64>::new(cfg)?;
    run_method_with(cfg, &plant, &eval, method)
}

/// Complexity parameters describing a trained piecewise model.
pub fn model_complexity(cfg: &ExperimentConfig, model: &DpdModel<f64>) -> Result<ComplexityParams> {
    let bfs = enumerate_bfs(&cfg.basis.spec::<f64>())?;
    let n_sp = bfs.len();
    let n_isp = bfs.iter().filter(|d| d.max_lag() == 0).count();
    let k = model.spec.num_regions();
    let pd = model.pd_count();
    Ok(ComplexityParams {
        n_isp,
        n_ipw: n_isp * k,
        n_sp,
        n_pw: n_sp * k,
        n_pw_pruned: Some(pd),
        n_ipw_pruned: None,
        k,
        b_cl: cfg.learn.block_size,
        i_cl: cfg.learn.iterations,
        b_ila: cfg.ila.block_size,
        i_ila: cfg.ila.iterations,
    })
}

/// Learning FLOPs per training sample without and with the pruned set.
pub fn pruned_learning_flops(cfg: &ExperimentConfig, model: &DpdModel<f64>) -> Result<(f64, f64)> {
    let p = model_complexity(cfg, model)?;
    let full = flops(DpdConfig::PwclOrthBfs, &p, false)?;
    let pruned = flops(DpdConfig::PwclOrthPruned, &p, false)?;
    Ok((full.learn_total, pruned.learn_total))
}

fn write_method(bundle: &mut Bundle, label: &str, cfg: &ExperimentConfig, r: &MethodResult<f64>) -> Result<()> {
    let s = slug(label);
    if !r.trace.is_empty() {
        write_trace_csv(&bundle.path(&format!("traces/{s}.csv"))?, &r.trace)?;
    }
    if let Some(m) = &r.model {
        save_model(&bundle.path(&format!("models/{s}.pwdpd"))?, m)?;
    }
    write_sweep_csv(&bundle.path(&format!("beam/{s}.csv"))?, &r.evaluation.sweep)?;
    let plant = cfg.plant.build::<f64>()?;
    let eval = EvalSet::<f64>::new(cfg)?;
    let x = match &r.model {
        Some(m) => predistort(m, &eval.a1)?,
        None => eval.a1.clone(),
    };
    let out = plant.array_forward(&x)?;
    let main = plant.far_field(&out.per_element, plant.steering_deg);
    let p = psd(&main, fit_resolution(main.len(), cfg.resolution_bins))?;
    write_psd_csv(&bundle.path(&format!("psd/{s}.csv"))?, &p)
}

/// Runs `scenario` into `out` and writes the manifest.
pub fn run_scenario(scenario: &Scenario, out: &Path, threads: usize) -> Result<(Manifest, String)> {
    let mut bundle = Bundle::create(out)?;
    bundle.write_json("scenario.json", scenario)?;
    let pool = pool(threads)?;
    let text = match &scenario.kind {
        ScenarioKind::Compare { experiment, runs } => compare(&mut bundle, &pool, experiment, runs)?,
        ScenarioKind::PowerSweep {
            experiment,
            drive_db,
            methods,
        } => power_sweep(&mut bundle, &pool, experiment, drive_db, methods)?,
        ScenarioKind::Steering {
            experiment,
            steer_deg,
            coupling_strength,
        } => steering(&mut bundle, &pool, experiment, steer_deg, coupling_strength)?,
        ScenarioKind::Pruning {
            experiment,
            thresholds_db,
        } => pruning(&mut bundle, &pool, experiment, thresholds_db)?,
        ScenarioKind::Partition { experiment, methods } => {
            let cfg = experiment.resolve()?;
            let mut text = String::new();
            let mut reports = vec![];
            for m in methods {
                let r = partition_report(&cfg, m)?;
                text.push_str(&r.table());
                reports.push(r);
            }
            bundle.write_json("report.json", &reports)?;
            text
        }
        ScenarioKind::Complexity { params, uncapped } => {
            let ledgers = ledger_table(params, *uncapped)?;
            let checks = check_reference(params, *uncapped)?;
            bundle.write_json("report.json", &json!({ "ledger": ledgers, "reference_checks": checks }))?;
            let text = render_table(&ledgers);
            bundle.write("ledger.txt", text.as_bytes())?;
            text
        }
    };
    bundle.write("summary.txt", text.as_bytes())?;
    let m = bundle.finish(&scenario.name, SCHEMA_VERSION)?;
    Ok((m, text))
}

fn compare(bundle: &mut Bundle, pool: &rayon::ThreadPool, experiment: &ExperimentRef, runs: &[RunSpec]) -> Result<String> {
    let results: Vec<Result<(ExperimentConfig, MethodResult<f64>)>> = pool.install(|| {
        runs.par_iter()
            .map(|r| {
                let cfg = experiment.resolve_with(&r.overrides)?;
                let res = execute(&cfg, r.method)?;
                Ok((cfg, res))
            })
            .collect()
    });
    let mut reports = vec![];
    let mut text = format!("{:<24}{:>12}{:>12}{:>10}{:>10}{:>8}\n", "run", "ACLR main", "ACLR TRP", "EVM %", "coefs", "K");
    for (spec, res) in runs.iter().zip(results) {
        let (cfg, r) = res?;
        let label = spec.label();
        write_method(bundle, &label, &cfg, &r)?;
        let rep = run_report(&label, &r);
        let s = &rep.summary;
        let _ = writeln!(
            text,
            "{:<24}{:>12.2}{:>12.2}{:>10.2}{:>10}{:>8}",
            label,
            s.aclr_main_dbc,
            s.aclr_trp_dbc,
            s.evm_percent,
            format!("{}/{}", s.active_coefficients, s.coefficients),
            s.regions
        );
        reports.push(rep);
    }
    bundle.write_json("report.json", &reports)?;
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub drive_db: f64,
    pub method: Method,
    pub aclr_main_dbc: f64,
    pub aclr_trp_dbc: f64,
    pub evm_percent: f64,
}

pub fn power_sweep_rows(
    pool: &rayon::ThreadPool,
    experiment: &ExperimentRef,
    drive_db: &[f64],
    methods: &[Method],
) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(f64, Method)> = drive_db.iter().flat_map(|&d| methods.iter().map(move |&m| (d, m))).collect();
    pool.install(|| {
        jobs.par_iter()
            .map(|&(d, m)| {
                let cfg = experiment.resolve_with(&json!({ "plant": { "drive_db": d } }))?;
                let s = execute(&cfg, m)?.summary();
                Ok(SweepRow {
                    drive_db: d,
                    method: m,
                    aclr_main_dbc: s.aclr_main_dbc,
                    aclr_trp_dbc: s.aclr_trp_dbc,
                    evm_percent: s.evm_percent,
                })
            })
            .collect()
    })
}

fn power_sweep(
    bundle: &mut Bundle,
    pool: &rayon::ThreadPool,
    experiment: &ExperimentRef,
    drive_db: &[f64],
    methods: &[Method],
) -> Result<String> {
    let rows = power_sweep_rows(pool, experiment, drive_db, methods)?;
    let mut csv = String::from("drive_db,method,aclr_main_dbc,aclr_trp_dbc,evm_percent\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.drive_db,
            r.method.label(),
            r.aclr_main_dbc,
            r.aclr_trp_dbc,
            r.evm_percent
        );
    }
    bundle.write("sweep.csv", csv.as_bytes())?;
    bundle.write_json("report.json", &rows)?;
    let mut text = format!("{:>10}", "drive dB");
    for m in methods {
        let _ = write!(text, "{:>12}", m.label());
    }
    text.push('\n');
    for (i, d) in drive_db.iter().enumerate() {
        let _ = write!(text, "{d:>10.1}");
        for r in &rows[i * methods.len()..(i + 1) * methods.len()] {
            let _ = write!(text, "{:>12.2}", r.aclr_main_dbc);
        }
        text.push('\n');
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub coupling_strength: f64,
    pub trained_at_deg: f64,
    pub with_dpd: Vec<SteeringPoint>,
    pub without_dpd: Vec<SteeringPoint>,
}

/// PW-CL learnt at the configured angle and evaluated at every angle.
pub fn steering_report(cfg: &ExperimentConfig, angles: &[f64]) -> Result<SteeringReport> {
    let plant = cfg.plant.build::<f64>()?;
    let eval = EvalSet::<f64>::new(cfg)?;
    let r = run_method_with(cfg, &plant, &eval, Method::PwCl)?;
    Ok(SteeringReport {
        coupling_strength: plant.coupling_strength,
        trained_at_deg: cfg.plant.steer_deg,
        with_dpd: steering_sweep(&plant, r.model.as_ref(), &eval, angles)?,
        without_dpd: steering_sweep(&plant, None, &eval, angles)?,
    })
}

fn steering(
    bundle: &mut Bundle,
    pool: &rayon::ThreadPool,
    experiment: &ExperimentRef,
    angles: &[f64],
    couplings: &[f64],
) -> Result<String> {
    let patches: Vec<Value> = if couplings.is_empty() {
        vec![Value::Null]
    } else {
        couplings.iter().map(|c| json!({ "plant": { "coupling_strength": c } })).collect()
    };
    let reports: Vec<Result<SteeringReport>> = pool.install(|| {
        patches
            .par_iter()
            .map(|p| steering_report(&experiment.resolve_with(p)?, angles))
            .collect()
    });
    let reports: Vec<SteeringReport> = reports.into_iter().collect::<Result<_>>()?;
    let mut csv = String::from("coupling_strength,steer_deg,aclr_dpd_dbc,evm_dpd_percent,aclr_no_dpd_dbc\n");
    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(text, "coupling {:.3}, trained at {:.1} deg", r.coupling_strength, r.trained_at_deg);
        let _ = writeln!(text, "{:>10}{:>12}{:>12}", "angle", "PW-CL", "no-DPD");
        for (a, b) in r.with_dpd.iter().zip(&r.without_dpd) {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.coupling_strength, a.steer_deg, a.aclr_dbc, a.evm_percent, b.aclr_dbc
            );
            let _ = writeln!(text, "{:>10.1}{:>12.2}{:>12.2}", a.steer_deg, a.aclr_dbc, b.aclr_dbc);
        }
    }
    bundle.write("steering.csv", csv.as_bytes())?;
    bundle.write_json("report.json", &reports)?;
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningRow {
    pub threshold_db: Option<f64>,
    pub coefficients: usize,
    pub pd_coefficients: usize,
    pub active_at_end: usize,
    pub aclr_main_dbc: f64,
    pub aclr_trp_dbc: f64,
    pub learn_flops_per_sample: f64,
}

pub fn pruning_row(cfg: &ExperimentConfig, threshold_db: Option<f64>) -> Result<PruningRow> {
    let mut cfg = cfg.clone();
    cfg.learn.prune_threshold_db = threshold_db;
    let r = execute(&cfg, Method::PwCl)?;
    let m = r.model.as_ref().ok_or_else(|| Error::config("PW-CL produced no model"))?;
    let (full, pruned) = pruned_learning_flops(&cfg, m)?;
    let s = r.summary();
    Ok(PruningRow {
        threshold_db,
        coefficients: m.len(),
        pd_coefficients: m.pd_count(),
        active_at_end: m.active_count(),
        aclr_main_dbc: s.aclr_main_dbc,
        aclr_trp_dbc: s.aclr_trp_dbc,
        learn_flops_per_sample: if threshold_db.is_some() { pruned } else { full },
    })
}

fn pruning(bundle: &mut Bundle, pool: &rayon::ThreadPool, experiment: &ExperimentRef, thresholds: &[f64]) -> Result<String> {
    let cfg = experiment.resolve()?;
    let mut jobs = vec![None];
    jobs.extend(thresholds.iter().map(|&t| Some(t)));
    let rows: Vec<Result<PruningRow>> = pool.install(|| jobs.par_iter().map(|&t| pruning_row(&cfg, t)).collect());
    let rows: Vec<PruningRow> = rows.into_iter().collect::<Result<_>>()?;
    let mut csv = String::from("threshold_db,coefficients,pd_coefficients,active_at_end,aclr_main_dbc,aclr_trp_dbc,learn_flops_per_sample\n");
    let mut text = format!(
        "{:>12}{:>12}{:>12}{:>12}{:>16}\n",
        "threshold", "kept", "ACLR main", "ACLR TRP", "learn FLOPs/s"
    );
    for r in &rows {
        let th = r.threshold_db.map_or("none".to_string(), |t| format!("{t}"));
        let _ = writeln!(
            csv,
            "{th},{},{},{},{},{},{}",
            r.coefficients, r.pd_coefficients, r.active_at_end, r.aclr_main_dbc, r.aclr_trp_dbc, r.learn_flops_per_sample
        );
        let _ = writeln!(
            text,
            "{th:>12}{:>12}{:>12.2}{:>12.2}{:>16.1}",
            format!("{}/{}", r.pd_coefficients, r.coefficients),
            r.aclr_main_dbc,
            r.aclr_trp_dbc,
            r.learn_flops_per_sample
        );
    }
    bundle.write("pruning.csv", csv.as_bytes())?;
    bundle.write_json("report.json", &rows)?;
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub method: PartitionMethod,
    pub boundaries: Vec<f64>,
    pub orders: Vec<usize>,
    /// Fraction of statistics samples per region.
    pub share: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PartitionReport {
    pub fn table(&self) -> String {
        let name = match &self.method {
            PartitionMethod::Remainder { .. } => "taylor remainder",
            PartitionMethod::KMeans { .. } => "k-means",
            PartitionMethod::Fixed { .. } => "fixed",
        };
        let mut s = format!("{name}: K = {}\n", self.boundaries.len() - 1);
        let _ = writeln!(s, "{:>8}{:>10}{:>10}{:>8}{:>10}", "region", "lower", "upper", "Q", "share %");
        for k in 0..self.boundaries.len() - 1 {
            let _ = writeln!(
                s,
                "{:>8}{:>10.4}{:>10.4}{:>8}{:>10.2}",
                k + 1,
                self.boundaries[k],
                self.boundaries[k + 1],
                self.orders.get(k).copied().unwrap_or(0),
                100.0 * self.share[k]
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Partition measured from one no-DPD block of the configured plant.
pub fn partition_report(cfg: &ExperimentConfig, method: &PartitionMethod) -> Result<PartitionReport> {
    let plant = cfg.plant.build::<f64>()?;
    let mut source = PlantSource::new(&plant, &cfg.excitation, cfg.seed, cfg.noise_floor_dbc)
        .with_observation_bandwidth(cfg.observation_bandwidth_hz);
    let min_rows = 10 * cfg.basis.spec::<f64>().width()?;
    let stats = source.statistics_input(cfg.learn.block_size)?;
    let out = measure_partition(&mut source, method, cfg.learn.block_size, PartitionDomain::Input, min_rows)?;
    Ok(PartitionReport {
        method: method.clone(),
        boundaries: out.partition.boundaries.clone(),
        orders: out.partition.orders.clone(),
        share: out.partition.sample_share(&stats),
        warnings: out.warnings,
    })
}
