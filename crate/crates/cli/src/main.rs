use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pwdpd_core::complexity::{check_reference, ledger_table, render_table, Agreement, ComplexityParams};
use pwdpd_core::dpd::{load_model, predistort, save_model, write_trace_csv, LearningRule};
use pwdpd_core::metrics::write_json;
use pwdpd_core::pipeline::{evaluate, train, EvalSet, ExperimentConfig, Method, PartitionMethod};
use pwdpd_core::signal::{read_signal, write_signal};
use pwdpd_core::{Error, Result};
use pwdpd_cli::run::{partition_report, pool, power_sweep_rows, run_scenario, steering_report};
use pwdpd_cli::scenario::{ExperimentRef, Scenario, BUILTIN};
use pwdpd_cli::{error_record, exit_code, OUT_ENV};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pwdpd", version, about = "Piecewise closed-loop DPD workbench")]
struct Cli {
    /// Output root.
    #[arg(long, global = true, env = OUT_ENV, default_value = "pwdpd-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Experiment {
    /// Experiment preset: array8-deep, doherty-n3 or linear-sanity.
    #[arg(long, default_value = "array8-deep")]
    preset: String,
    /// JSON file `{"preset": ..., "overrides": {...}}`; wins over --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Experiment {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let r = match &self.config {
            Some(p) => serde_json::from_str::<ExperimentRef>(&std::fs::read_to_string(p)?)
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            None => ExperimentRef::preset(&self.preset),
        };
        let extra = match self.seed {
            Some(s) => json!({ "seed": s }),
            None => serde_json::Value::Null,
        };
        r.resolve_with(&extra)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    NoDpd,
    PwCl,
    Cl,
    PwIla,
    Ila,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::NoDpd => Method::NoDpd,
            MethodArg::PwCl => Method::PwCl,
            MethodArg::Cl => Method::Cl,
            MethodArg::PwIla => Method::PwIla,
            MethodArg::Ila => Method::Ila,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Orth,
    #[value(name = "self")]
    SelfOrth,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Remainder,
    Kmeans,
}

#[derive(Subcommand)]
enum Command {
    /// Write the excitation waveform as an I/Q file.
    Generate {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long, default_value_t = 4)]
        symbols: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pass an I/Q file through the plant (and a model) and write the main beam.
    Simulate {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Measure the region partition and print its table.
    Partition {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long, value_enum)]
        method: Option<PartitionArg>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Learn a model; writes model and trace.
    Train {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long, value_enum, default_value = "pw-cl")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "orth")]
        rule: RuleArg,
        /// Pruning threshold in dB.
        #[arg(long, allow_negative_numbers = true)]
        prune: Option<f64>,
        /// Output directory; defaults to `<out>/train-<method>`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Metrics of a saved model (or none) on the evaluation waveform.
    Evaluate {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// FLOP ledger.
    Complexity {
        /// `reference` or a JSON parameter file.
        #[arg(long, default_value = "reference")]
        preset: String,
        #[arg(long)]
        uncapped: bool,
        #[arg(long)]
        n_pw_pruned: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Drive-level or steering sweep, printed as CSV.
    Sweep {
        #[command(flatten)]
        exp: Experiment,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        drive: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        steer: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "no-dpd,pw-cl,pw-ila")]
        methods: Vec<MethodArg>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Run scenarios (built-in names or JSON files) into `<out>/<name>`.
    Run {
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// List built-in scenarios.
    Scenarios,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pwdpd: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { exp, symbols, output } => {
            let cfg = exp.resolve()?;
            let (x, _) = cfg.excitation.realize::<f64>(cfg.seed, *symbols)?;
            write_signal(output, &x, Some(cfg.seed))?;
            println!("{} samples at {} Hz -> {}", x.len(), x.sample_rate, output.display());
        }
        Command::Simulate {
            exp,
            input,
            model,
            output,
        } => {
            let cfg = exp.resolve()?;
            let plant = cfg.plant.build::<f64>()?;
            let (a1, _) = read_signal::<f64>(input)?;
            let x = match model {
                Some(p) => predistort(&load_model::<f64>(p)?, &a1)?,
                None => a1,
            };
            let out = plant.array_forward(&x)?;
            let main = plant.far_field(&out.per_element, plant.steering_deg);
            write_signal(output, &main, None)?;
        }
        Command::Partition { exp, method, k, json } => {
            let cfg = exp.resolve()?;
            let m = match method {
                None => cfg.partition.clone(),
                Some(PartitionArg::Remainder) => PartitionMethod::remainder(5, 0.01),
                Some(PartitionArg::Kmeans) => PartitionMethod::KMeans { k: *k },
            };
            let r = partition_report(&cfg, &m)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", r.table());
            }
        }
        Command::Train {
            exp,
            method,
            rule,
            prune,
            output,
        } => {
            let mut cfg = exp.resolve()?;
            cfg.learn.rule = match rule {
                RuleArg::Orth => LearningRule::OrthogonalBfs,
                RuleArg::SelfOrth => LearningRule::SelfOrthogonalized,
            };
            cfg.learn.prune_threshold_db = *prune;
            let method = Method::from(*method);
            let dir = output
                .clone()
                .unwrap_or_else(|| cli.out.join(format!("train-{}", pwdpd_cli::run::slug(method.label()))));
            std::fs::create_dir_all(&dir)?;
            let plant = cfg.plant.build::<f64>()?;
            let (model, trace, partition) = train(&cfg, &plant, method)?;
            if let Some(m) = &model {
                save_model(&dir.join("model.pwdpd"), m)?;
                println!("model: {} coefficients, {} in the predistorter", m.len(), m.pd_count());
            }
            write_trace_csv(&dir.join("trace.csv"), &trace)?;
            if let Some(p) = &partition {
                write_json(&dir.join("partition.json"), p)?;
            }
            write_json(&dir.join("config.json"), &cfg)?;
            if let Some(last) = trace.last() {
                println!("final NMSE {:.2} dB after {} iterations", last.nmse_db, trace.len());
            }
            println!("-> {}", dir.display());
        }
        Command::Evaluate { exp, model } => {
            let cfg = exp.resolve()?;
            let plant = cfg.plant.build::<f64>()?;
            let eval = EvalSet::<f64>::new(&cfg)?;
            let m = model.as_deref().map(load_model::<f64>).transpose()?;
            let e = evaluate(&plant, m.as_ref(), &eval, &cfg.sweep.angles())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "main_beam": e.main_beam,
                    "trp": e.trp,
                    "evm_percent": e.evm_percent,
                    "nmse_db": e.nmse_db,
                }))?
            );
        }
        Command::Complexity {
            preset,
            uncapped,
            n_pw_pruned,
            json,
        } => {
            let mut p = complexity_params(preset)?;
            if n_pw_pruned.is_some() {
                p.n_pw_pruned = *n_pw_pruned;
            }
            let ledgers = ledger_table(&p, *uncapped)?;
            let checks = check_reference(&p, *uncapped)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&json!({ "ledger": ledgers, "reference_checks": checks }))?);
            } else {
                print!("{}", render_table(&ledgers));
                if preset == "reference" {
                    for c in checks.iter().filter(|c| c.agreement != Agreement::Exact) {
                        println!(
                            "note: {} {} computed {} vs {} ({:?})",
                            c.config.label(),
                            c.cell,
                            c.computed,
                            c.published,
                            c.agreement
                        );
                    }
                }
            }
        }
        Command::Sweep {
            exp,
            drive,
            steer,
            methods,
            threads,
        } => sweep(exp, drive, steer, methods, *threads)?,
        Command::Run { scenarios, threads } => {
            for name in scenarios {
                let s = Scenario::load(name)?;
                let dir = cli.out.join(&s.name);
                match run_scenario(&s, &dir, *threads) {
                    Ok((m, text)) => {
                        print!("== {} ==\n{text}", s.name);
                        println!("{} files -> {}", m.files.len(), dir.display());
                    }
                    Err(e) => {
                        record_failure(&dir, &e);
                        return Err(e);
                    }
                }
            }
        }
        Command::Scenarios => {
            for (name, _) in BUILTIN {
                let s = Scenario::builtin(name).expect("listed")?;
                println!("{name:<24}{}", s.description);
            }
        }
    }
    Ok(())
}

fn record_failure(dir: &Path, e: &Error) {
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(dir.join("error.json"), format!("{:#}\n", error_record(e)));
    }
}

fn complexity_params(preset: &str) -> Result<ComplexityParams> {
    if preset == "reference" {
        return Ok(ComplexityParams::reference());
    }
    let p: ComplexityParams = serde_json::from_str(&std::fs::read_to_string(preset)?)
        .map_err(|e| Error::config(format!("{preset}: {e}")))?;
    p.validate()?;
    Ok(p)
}

fn sweep(exp: &Experiment, drive: &[f64], steer: &[f64], methods: &[MethodArg], threads: usize) -> Result<()> {
    if drive.is_empty() == steer.is_empty() {
        return Err(Error::config("give exactly one of --drive or --steer"));
    }
    let cfg = exp.resolve()?;
    if !drive.is_empty() {
        let r = ExperimentRef {
            preset: "array8-deep".into(),
            overrides: serde_json::to_value(&cfg)?,
        };
        let methods: Vec<Method> = methods.iter().map(|&m| m.into()).collect();
        let rows = power_sweep_rows(&pool(threads)?, &r, drive, &methods)?;
        println!("drive_db,method,aclr_main_dbc,aclr_trp_dbc,evm_percent");
        for r in rows {
            println!(
                "{},{},{:.3},{:.3},{:.3}",
                r.drive_db,
                r.method.label(),
                r.aclr_main_dbc,
                r.aclr_trp_dbc,
                r.evm_percent
            );
        }
    } else {
        let r = steering_report(&cfg, steer)?;
        println!("steer_deg,aclr_dpd_dbc,aclr_no_dpd_dbc");
        for (a, b) in r.with_dpd.iter().zip(&r.without_dpd) {
            println!("{},{:.3},{:.3}", a.steer_deg, a.aclr_dbc, b.aclr_dbc);
        }
    }
    Ok(())
}
