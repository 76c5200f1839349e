//! Scenario-driven command-line runner: propagates a hybrid model with
//! sensitivities, compares the analytic path against independent baselines,
//! and validates model derivatives.
//!
//! Exit codes: 0 success; 1 configuration error or failed check
//! (validation / comparison threshold); 2 numerical failure during
//! propagation.

mod output;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use hybrid_sens_core::error::CoreError;
use hybrid_sens_core::integrator::{propagate_hybrid, verify_initial_consistency};
use hybrid_sens_core::model::{HybridState, Regime, ValidationOptions};
use hybrid_sens_core::oracle;
use scenario::{BuiltModel, Scenario};

#[derive(Parser)]
#[command(
    name = "hybrid-sens",
    about = "Direct sensitivity propagation for hybrid mechanical systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the scenario and persist the trajectory and event log.
    Run(RunArgs),
    /// Run the analytic propagation and an independent baseline, then compare.
    Compare(CompareArgs),
    /// Check model derivatives and initial-state consistency.
    Validate(ValidateArgs),
    /// Write a default scenario for a model kind.
    DumpDefaults(DumpArgs),
}

#[derive(Args)]
struct CommonOverrides {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Override the formulation: ode | dae1 | penalty.
    #[arg(long)]
    formulation: Option<String>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    event_tol: Option<f64>,
    /// Override the final time.
    #[arg(long)]
    tf: Option<f64>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override a model parameter, e.g. `L01=2.3` (repeatable).
    #[arg(long = "param-override")]
    param_override: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonOverrides,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonOverrides,
    /// Baseline method: fd | complex.
    #[arg(long)]
    method: Option<String>,
    /// Perturbation size for the baseline.
    #[arg(long)]
    eps: Option<f64>,
    /// Pass/fail threshold on the max relative error.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    scenario: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    /// Model kind: bouncing_ball | five_bar | pendulum.
    #[arg(long, default_value = "five_bar")]
    model: String,
    /// Output path (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Classified failure so that `main` can map it to an exit code.
enum RunFailure {
    Config(anyhow::Error),
    Numerical(CoreError),
    CheckFailed(String),
}

impl From<anyhow::Error> for RunFailure {
    fn from(e: anyhow::Error) -> Self {
        RunFailure::Config(e)
    }
}

impl From<CoreError> for RunFailure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Configuration(_)
            | CoreError::Dimension { .. }
            | CoreError::InconsistentInitialState { .. } => {
                RunFailure::Config(anyhow::Error::new(e))
            }
            other => RunFailure::Numerical(other),
        }
    }
}

fn load_scenario(args: &CommonOverrides) -> Result<Scenario> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let mut scn = Scenario::parse(&text)?;
    if let Some(f) = &args.formulation {
        scn.formulation = match f.as_str() {
            "ode" => scenario::FormulationSection::Ode,
            "dae1" | "dae_index1" => scenario::FormulationSection::DaeIndex1,
            "penalty" => match scn.formulation {
                scenario::FormulationSection::Penalty(p) => {
                    scenario::FormulationSection::Penalty(p)
                }
                _ => scenario::FormulationSection::Penalty(Default::default()),
            },
            other => return Err(anyhow!("unknown formulation {other:?}")),
        };
    }
    if let Some(x) = args.rtol {
        scn.integrator.rtol = x;
    }
    if let Some(x) = args.atol {
        scn.integrator.atol = x;
    }
    if let Some(x) = args.event_tol {
        scn.integrator.event_tol = x;
    }
    if let Some(x) = args.tf {
        scn.run.tf = x;
    }
    if let Some(dir) = &args.output_dir {
        scn.outputs.dir = dir.display().to_string();
    }
    scn.validate()?;
    Ok(scn)
}

fn resolved_parameters(scn: &Scenario, built: &BuiltModel, args: &CommonOverrides) -> Result<nalgebra::DVector<f64>> {
    let mut rho = built.nominal_parameters();
    for spec in &args.param_override {
        Scenario::apply_param_override(built, &mut rho, spec)?;
    }
    let _ = scn;
    Ok(rho)
}

fn cmd_run(args: &RunArgs) -> Result<(), RunFailure> {
    let scn = load_scenario(&args.common)?;
    let built = scn.build_model()?;
    let model = built.as_model();
    let formulation = scn.formulation();
    let cfg = scn.integrator_config()?;
    let rho = resolved_parameters(&scn, &built, &args.common)?;

    let archive = propagate_hybrid(model, &formulation, &cfg, &rho, scn.run.t0, scn.run.tf)?;

    let dir = Path::new(&scn.outputs.dir);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if scn.outputs.trajectory {
        let path = dir.join("trajectory.csv");
        let rows = output::write_trajectory_csv(
            &path,
            &archive,
            model,
            &formulation,
            &rho,
            scn.outputs.multipliers,
        )?;
        println!("wrote {} ({} rows)", path.display(), rows);
    }
    if scn.outputs.events {
        let path = dir.join("events.csv");
        output::write_events_csv(&path, &archive)?;
        println!("wrote {} ({} events)", path.display(), archive.events.len());
    }

    println!(
        "propagated {} with the {} formulation over [{}, {}]: {} events, {} segments",
        model_name(&built),
        formulation.name(),
        scn.run.t0,
        scn.run.tf,
        archive.events.len(),
        archive.segments.len()
    );
    for ev in &archive.events {
        println!(
            "  event {} at t = {:.9}  dt/drho = {}",
            ev.event_index,
            ev.t_eve,
            row_to_string(&ev.dt_drho)
        );
    }
    let names = built.parameter_names();
    println!("cost gradient dpsi/drho:");
    for (j, name) in names.iter().enumerate() {
        println!("  d(psi)/d({name}) = {:e}", archive.cost_gradient[j]);
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), RunFailure> {
    let mut scn = load_scenario(&args.common)?;
    if let Some(m) = &args.method {
        scn.compare.method = m.clone();
    }
    if args.eps.is_some() {
        scn.compare.eps = args.eps;
    }
    if args.threshold.is_some() {
        scn.compare.threshold = args.threshold;
    }
    scn.validate()?;

    let built = scn.build_model()?;
    let model = built.as_model();
    let formulation = scn.formulation();
    let cfg = scn.integrator_config()?;
    let rho = resolved_parameters(&scn, &built, &args.common)?;
    let (t0, tf) = (scn.run.t0, scn.run.tf);

    let archive = propagate_hybrid(model, &formulation, &cfg, &rho, t0, tf)?;

    let is_fd = scn.compare.method == "fd";
    let threshold = scn
        .compare
        .threshold
        .unwrap_or(if is_fd { 1e-3 } else { 1e-10 });
    if !is_fd && !archive.events.is_empty() {
        return Err(RunFailure::Config(anyhow!(
            "complex-step comparison needs a smooth span; {} event(s) occur before tf = {tf} \
             (shorten run.tf below t = {:.6})",
            archive.events.len(),
            archive.events[0].t_eve
        )));
    }

    let mut worst: f64 = 0.0;
    let mut reports = Vec::new();
    for param in 0..rho.len() {
        let report = if is_fd {
            let eps = scn.compare.eps.unwrap_or(1e-5 * (1.0 + rho[param].abs()));
            let baseline =
                oracle::central_fd_sensitivity(model, &formulation, &cfg, &rho, eps, param, t0, tf)?;
            let windows =
                oracle::event_exclusion_windows(&archive, eps, param, scn.compare.exclusion_scale);
            oracle::compare_report(&archive, &baseline, &windows, threshold)
        } else {
            let eps = scn.compare.eps.unwrap_or(1e-20);
            let baseline = oracle::complex_step_sensitivity(
                built.as_complex(),
                &formulation,
                &cfg,
                &rho,
                eps,
                param,
                t0,
                tf,
            )?;
            oracle::compare_report(&archive, &baseline, &[], threshold)
        };
        worst = worst.max(report.max_rel_err);
        reports.push((param, report));
    }

    let dir = Path::new(&scn.outputs.dir);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = String::new();
    for (param, report) in &reports {
        text.push_str(&format!("parameter {param}:\n{report}\n"));
    }
    let pass = worst <= threshold;
    let trailer = format!(
        "RESULT {} max_rel_err={worst:.6e}",
        if pass { "pass" } else { "fail" }
    );
    text.push_str(&trailer);
    text.push('\n');
    let path = dir.join("compare_report.txt");
    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;

    for (param, report) in &reports {
        println!("parameter {param}:");
        println!("{report}");
    }
    println!("{trailer}");
    if pass {
        Ok(())
    } else {
        Err(RunFailure::CheckFailed(trailer))
    }
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), RunFailure> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let scn = Scenario::parse(&text)?;
    let built = scn.build_model()?;
    let model = built.as_model();
    let formulation = scn.formulation();
    let rho = built.nominal_parameters();

    verify_initial_consistency(model, &formulation, scn.run.t0, &rho)?;
    println!("initial state satisfies the active constraints");

    let (q0, v0) = model.initial_state(&rho);
    let probe = HybridState {
        t: scn.run.t0,
        q: q0,
        v: v0,
        z: 0.0,
        regime: Regime(0),
    };
    let report =
        hybrid_sens_core::model::validate_model(model, &probe, &rho, &ValidationOptions::default())?;
    println!("{report}");
    if report.pass() {
        Ok(())
    } else {
        let names: Vec<_> = report.failures().iter().map(|c| c.name.clone()).collect();
        Err(RunFailure::CheckFailed(format!(
            "validation failed for: {}",
            names.join(", ")
        )))
    }
}

fn cmd_dump(args: &DumpArgs) -> Result<(), RunFailure> {
    let scn = Scenario::defaults_for(&args.model)?;
    let text = scn.to_json();
    match &args.out {
        Some(path) => {
            std::fs::write(path, format!("{text}\n"))
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn model_name(built: &BuiltModel) -> &'static str {
    match built {
        BuiltModel::Ball(_) => "bouncing_ball",
        BuiltModel::FiveBar(_) => "five_bar",
        BuiltModel::Pendulum(_) => "pendulum",
    }
}

fn row_to_string(row: &nalgebra::RowDVector<f64>) -> String {
    row.iter()
        .map(|x| format!("{x:.9e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Validate(args) => cmd_validate(args),
        Command::DumpDefaults(args) => cmd_dump(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunFailure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(RunFailure::CheckFailed(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(RunFailure::Numerical(e)) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(2)
        }
    }
}
