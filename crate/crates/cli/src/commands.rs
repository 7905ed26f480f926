use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dsse_core::estimators::{
    converged_gd_solve, gauss_newton_solve, verify_linear_bound, BoundReport, BoundVerification,
};
use dsse_core::feeder::{load_feeder, FeederModel, FeederTemplate, Phase};
use dsse_core::measurement::{read_batches_csv, write_batches_csv, MeasurementBatch, MeterSet};
use dsse_core::metrics::{
    summarize, write_running_error_csv, write_states_csv, write_summary_csv, write_timing_csv, write_trace_csv,
};
use dsse_core::powerflow::{solve_power_flow, InjectionVector, PowerFlowOptions};
use dsse_core::scenario::linearized_problem;
use dsse_core::{OnlineRun, OnlineSettings, Scenario};
use serde::Deserialize;

use crate::{BatchAlgorithm, Command, Template};

/// Successful command results that still map to distinct exit codes.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    BoundViolated,
}

pub fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Run {
            scenario,
            out_dir,
            seed,
            horizon,
            log_states,
            dump_measurements,
        } => run(&scenario, &out_dir, seed, horizon, log_states, dump_measurements),
        Command::Powerflow { feeder, injections } => powerflow(&feeder, injections.as_deref()),
        Command::EstimateBatch {
            feeder,
            measurements,
            algorithm,
            t,
            tol,
            max_iter,
        } => estimate_batch(&feeder, &measurements, algorithm, t, tol, max_iter),
        Command::GenFeeder { template, out } => gen_feeder(template, &out),
        Command::VerifyBound { scenario, seeds } => verify_bound(&scenario, seeds),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Loads `builtin:<template>` or a feeder document from disk.
fn open_feeder(spec: &str) -> Result<FeederModel> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let template = FeederTemplate::from_name(name).with_context(|| format!("unknown builtin feeder \"{name}\""))?;
        return Ok(template.load());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("cannot read feeder {spec}"))?;
    load_feeder(&text).with_context(|| format!("invalid feeder {spec}"))
}

fn run(
    path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    horizon: Option<u64>,
    log_states: bool,
    dump_measurements: bool,
) -> Result<Outcome> {
    let mut scenario = Scenario::from_path(path).with_context(|| format!("cannot load scenario {}", path.display()))?;
    if let Some(seed) = seed {
        scenario = scenario.with_seed(seed);
    }
    if let Some(horizon) = horizon {
        ensure!(horizon >= 1, "--horizon must be at least 1");
        scenario.config.horizon_t = horizon;
    }
    scenario.config.log_states |= log_states;
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let horizon = scenario.config.horizon_t;
    let mut online = OnlineRun::new(scenario)?;
    if dump_measurements {
        online.keep_batches();
    }
    online.advance(horizon)?;
    if dump_measurements {
        write_batches_csv(
            create(&out_dir.join("measurements.csv"))?,
            online.meters(),
            online.batches(),
        )?;
    }
    let states_logged = online.scenario().config.log_states;
    let trace = online.into_trace();
    for (name, &failures) in trace.estimators.iter().zip(&trace.failures) {
        if failures > 0 {
            log::warn!("{name}: {failures} steps fell back to the previous estimate");
        }
    }

    let summary = summarize(&trace)?;
    write_trace_csv(&trace, create(&out_dir.join("trace.csv"))?)?;
    write_summary_csv(&summary, create(&out_dir.join("summary.csv"))?)?;
    write_timing_csv(&summary, create(&out_dir.join("timing.csv"))?)?;
    write_running_error_csv(&summary, create(&out_dir.join("running_error.csv"))?)?;
    if states_logged {
        write_states_csv(&trace, create(&out_dir.join("states.csv"))?)?;
    }

    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "estimator,avg_error_per_node_pu,avg_max_error_per_sample_pu,avg_step_time_s"
    )?;
    for m in &summary.estimators {
        writeln!(
            stdout,
            "{},{:.5e},{:.5e},{:.5e}",
            m.name, m.avg_error_per_node_pu, m.avg_max_error_per_sample_pu, m.avg_step_time_s
        )?;
    }
    Ok(Outcome::Success)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectionDocument {
    loads: Vec<LoadInjection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadInjection {
    bus: u32,
    phase: String,
    p: f64,
    #[serde(default)]
    q: f64,
}

fn read_injections(model: &FeederModel, path: &Path) -> Result<InjectionVector> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let doc: InjectionDocument =
        serde_json::from_str(&text).with_context(|| format!("invalid injection document {}", path.display()))?;
    let mut s = InjectionVector::zeros(model.n_nodes());
    for load in &doc.loads {
        let phase = load
            .phase
            .chars()
            .next()
            .filter(|_| load.phase.len() == 1)
            .and_then(Phase::from_char)
            .with_context(|| format!("invalid phase \"{}\"", load.phase))?;
        let i = model.node_index(load.bus, phase)?;
        s.p[i] += load.p;
        s.q[i] += load.q;
    }
    Ok(s)
}

fn powerflow(feeder: &str, injections: Option<&Path>) -> Result<Outcome> {
    let model = open_feeder(feeder)?;
    let s = match injections {
        Some(path) => read_injections(&model, path)?,
        None => InjectionVector::zeros(model.n_nodes()),
    };
    let sol = solve_power_flow(&model, &s, &PowerFlowOptions::default())?;
    let mut out = io::stdout().lock();
    writeln!(out, "node,v_mag_pu,v_angle_deg")?;
    for (node, v) in model.nodes().iter().zip(sol.v_complex.iter()) {
        writeln!(out, "{node},{:.6e},{:.6e}", v.norm(), v.arg().to_degrees())?;
    }
    Ok(Outcome::Success)
}

/// Initial state for batch estimation: pseudo readings where present, zero
/// elsewhere.
fn initial_state(model: &FeederModel, meters: &MeterSet, batch: &MeasurementBatch) -> nalgebra::DVector<f64> {
    let n = model.n_nodes();
    let mut z = nalgebra::DVector::zeros(2 * n);
    for (&id, &value) in batch.meter_ids.iter().zip(&batch.values) {
        let m = &meters.meters()[id];
        if m.kind.is_pseudo() {
            if let Some(col) = m.kind.state_column(m.node, n) {
                z[col] = value;
            }
        }
    }
    z
}

fn estimate_batch(
    feeder: &str,
    measurements: &Path,
    algorithm: BatchAlgorithm,
    t: Option<u64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
) -> Result<Outcome> {
    let model = open_feeder(feeder)?;
    let file = File::open(measurements).with_context(|| format!("cannot read {}", measurements.display()))?;
    let (meters, batches) = read_batches_csv(file)?;
    let meters = MeterSet::new(&model, meters.meters().to_vec()).context("measurements do not fit the feeder")?;
    let batch = match t {
        Some(t) => batches
            .iter()
            .find(|b| b.t == t)
            .with_context(|| format!("no measurements at t = {t}"))?,
        None => batches.first().context("measurement file has no rows")?,
    };
    let z0 = initial_state(&model, &meters, batch);
    let opts = PowerFlowOptions::default();

    let (state, iterations, converged) = match algorithm {
        BatchAlgorithm::Gn => {
            let out = gauss_newton_solve(
                &model,
                &meters,
                batch,
                &z0,
                tol.unwrap_or(1e-6),
                max_iter.unwrap_or(20),
                &opts,
            )?;
            (out.state, out.iterations, out.converged)
        }
        BatchAlgorithm::Go => {
            let settings = OnlineSettings {
                power_flow: opts,
                ..OnlineSettings::default()
            };
            let out = converged_gd_solve(
                &model,
                &meters,
                batch,
                &z0,
                tol.unwrap_or(1e-7),
                max_iter.unwrap_or(10_000),
                None,
                settings,
            )?;
            (out.state, out.iterations, out.converged)
        }
    };
    if !converged {
        log::warn!("estimation stopped after {iterations} iterations without converging");
    }
    eprintln!("t = {}, iterations = {iterations}, converged = {converged}", batch.t);

    let s = state.injections();
    let mut out = io::stdout().lock();
    writeln!(out, "node,v_mag_pu,p_pu,q_pu")?;
    for (i, node) in model.nodes().iter().enumerate() {
        writeln!(out, "{node},{:.6e},{:.6e},{:.6e}", state.v_mag[i], s.p[i], s.q[i])?;
    }
    Ok(Outcome::Success)
}

fn gen_feeder(template: Template, out: &PathBuf) -> Result<Outcome> {
    let template = match template {
        Template::TwoBus => FeederTemplate::TwoBus,
        Template::FourBus => FeederTemplate::FourBus,
        Template::ThirteenNode => FeederTemplate::ThirteenNode,
    };
    fs::write(out, template.document()).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(Outcome::Success)
}

fn print_report(out: &mut impl Write, label: &str, report: &BoundReport) -> io::Result<()> {
    let p = &report.params;
    writeln!(out, "[{label}] eta = {:.6e}", p.eta)?;
    writeln!(
        out,
        "  tau1 = {:.6e}, sigma_f2 = {:.6e}, delta1 = {:.6e}, delta_z = {:.6e}",
        p.tau1, p.sigma_f2, p.delta1, p.delta_z
    )?;
    writeln!(out, "  bound = {:.6e}", report.bound)?;
    writeln!(
        out,
        "  steady-state mse = {:.6e} (± {:.1e})",
        report.mse, report.mse_std_error
    )?;
    writeln!(out, "  {}", if report.holds() { "mse <= bound" } else { "mse > bound" })
}

fn verify_bound(path: &Path, seeds: Option<u64>) -> Result<Outcome> {
    let scenario = Scenario::from_path(path).with_context(|| format!("cannot load scenario {}", path.display()))?;
    let cfg = &scenario.config.bound;
    let (problem, z0) = linearized_problem(&scenario)?;
    let eta = cfg.stepsize.for_gain(&problem.gain())?;
    let m = problem.n_meas();
    let m_t = ((cfg.arrival_fraction * m as f64).round() as usize).clamp(1, m);
    let seeds = seeds.unwrap_or(cfg.seeds);
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let verification = |eta| BoundVerification {
        eta,
        m_t,
        steps: cfg.steps,
        trailing: cfg.trailing,
        seeds,
        base_seed: scenario.config.seed,
    };
    let full = verify_linear_bound(&problem, &z0, &verification(eta))?;
    let half = verify_linear_bound(&problem, &z0, &verification(eta / 2.0))?;

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "linearized problem: m = {m}, n = {}, m_t = {m_t}, steps = {}, trailing = {}, seeds = {seeds}",
        problem.n_state(),
        cfg.steps,
        cfg.trailing
    )?;
    print_report(&mut out, "eta", &full)?;
    print_report(&mut out, "eta/2", &half)?;
    let monotone = half.mse <= full.mse;
    writeln!(out, "halving eta does not increase mse: {monotone}")?;
    Ok(if full.holds() && half.holds() {
        Outcome::Success
    } else {
        Outcome::BoundViolated
    })
}
