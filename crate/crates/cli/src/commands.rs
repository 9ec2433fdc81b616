use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mrac_core::identifier::filtered_channels;
use mrac_core::matrixlab::norm2;
use mrac_core::simengine::{convergence_diagnostics, run_closed_loop, EventTimes, ExcitationSummary, RunLog, SimConfig, SimMode};

use crate::error::CliError;
use crate::scenario::ScenarioFile;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const W_STACK_CSV: &str = "w_stack.csv";
pub const H_STACK_CSV: &str = "h_stack.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const ERROR_JSON: &str = "error.json";

/// Final `‖φ̃‖` relative to the initial one at or below which gains count as converged.
pub const CONVERGED_RATIO: f64 = 1e-3;
/// Relative `‖φ̃‖` at or above which gains count as stalled.
pub const STALLED_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalNorms {
    pub norm_e: f64,
    pub norm_theta_tilde: f64,
    pub norm_phi_tilde: f64,
    /// `‖φ̃(t_end)‖ / ‖φ̃(t₀)‖`
    pub phi_tilde_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsSummary {
    pub beta_rate: f64,
    pub lambda_min_omega: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StackSummary {
    pub w_entries: usize,
    pub h_entries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: SimMode,
    pub dt: f64,
    pub t_end: f64,
    pub steps: usize,
    pub events: EventTimes,
    pub initial_norm_phi_tilde: f64,
    #[serde(rename = "final")]
    pub final_norms: FinalNorms,
    pub peak_tracking_error: f64,
    pub theta_ft: Option<Vec<f64>>,
    pub phi_final: Vec<f64>,
    pub stacks: StackSummary,
    pub excitation: ExcitationSummary,
    pub diagnostics: DiagnosticsSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub proposed_phi_ratio: f64,
    pub classical_phi_ratio: f64,
    pub proposed_converged: bool,
    pub classical_converged: bool,
    pub classical_stalled: bool,
    pub statement: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub proposed: RunSummary,
    pub classical: RunSummary,
    pub verdict: Verdict,
}

#[derive(Serialize)]
struct ErrorArtifact<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

/// Row stride for CSV output from `MRAC_LOG_EVERY` (default 1).
pub fn log_every() -> Result<usize, CliError> {
    match std::env::var("MRAC_LOG_EVERY") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(CliError::Config {
                path: "MRAC_LOG_EVERY".into(),
                message: format!("must be a positive integer, got {v:?}"),
            }),
        },
    }
}

pub fn load_config(scenario: &Path, overrides: Overrides) -> Result<SimConfig, CliError> {
    let mut file = ScenarioFile::load(scenario)?;
    if let Some(dt) = overrides.dt {
        file.sim.dt = dt;
    }
    if let Some(t_end) = overrides.t_end {
        file.sim.t_end = t_end;
    }
    file.to_sim_config()
}

pub fn summarize(cfg: &SimConfig, log: &RunLog) -> Result<RunSummary, CliError> {
    let gains = cfg.controller_gains()?;
    let diag = convergence_diagnostics(log, log.truth.as_ref(), &gains, &cfg.q)?;
    let first = log.initial();
    let last = log.last();
    let ratio = if first.norm_phi_tilde > 0.0 {
        last.norm_phi_tilde / first.norm_phi_tilde
    } else {
        0.0
    };
    Ok(RunSummary {
        mode: cfg.mode,
        dt: cfg.dt,
        t_end: cfg.t_end,
        steps: log.records.len() - 1,
        events: log.events,
        initial_norm_phi_tilde: first.norm_phi_tilde,
        final_norms: FinalNorms {
            norm_e: norm2(&last.e),
            norm_theta_tilde: last.norm_theta_tilde,
            norm_phi_tilde: last.norm_phi_tilde,
            phi_tilde_ratio: ratio,
        },
        peak_tracking_error: log.peak_tracking_error(),
        theta_ft: log.theta_locked.clone(),
        phi_final: last.phi.clone(),
        stacks: StackSummary {
            w_entries: log.w_stack.len(),
            h_entries: log.h_stack.len(),
        },
        excitation: log.excitation.clone(),
        diagnostics: DiagnosticsSummary {
            beta_rate: diag.beta_rate,
            lambda_min_omega: diag.lambda_min_omega,
        },
    })
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("x_m{i}")));
    h.extend((1..=n).map(|i| format!("e{i}")));
    h.extend(["norm_theta_tilde", "norm_phi_tilde", "V_xi", "phase"].map(String::from));
    h
}

pub fn comparison_header() -> Vec<String> {
    ["t", "norm_e_proposed", "norm_e_classical", "norm_phi_tilde_proposed", "norm_phi_tilde_classical"]
        .map(String::from)
        .to_vec()
}

pub fn w_stack_header(n: usize, d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n + d).map(|i| format!("mu{i}")));
    h.extend((1..=n).map(|i| format!("g{i}")));
    h
}

pub fn h_stack_header(n: usize, d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=d).map(|i| format!("r{i}")));
    h.extend((1..=d).map(|i| format!("u{i}")));
    h
}

fn create_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let stale = out.join(ERROR_JSON);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|source| CliError::Io { path: stale, source })?;
    }
    Ok(())
}

fn csv_writer(path: PathBuf) -> Result<csv::Writer<fs::File>, CliError> {
    let file = fs::File::create(&path).map_err(|source| CliError::Io { path, source })?;
    Ok(csv::Writer::from_writer(file))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
}

pub fn write_trajectory(path: PathBuf, log: &RunLog, every: usize) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(trajectory_header(log.dims.n))?;
    for rec in log.records.iter().step_by(every) {
        let mut row = vec![rec.t.to_string()];
        row.extend(rec.x.iter().chain(&rec.x_m).chain(&rec.e).map(f64::to_string));
        row.push(rec.norm_theta_tilde.to_string());
        row.push(rec.norm_phi_tilde.to_string());
        row.push(rec.v_xi.to_string());
        row.push(rec.phase.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

pub fn write_comparison(path: PathBuf, proposed: &RunLog, classical: &RunLog, every: usize) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(comparison_header())?;
    for (p, c) in proposed.records.iter().zip(&classical.records).step_by(every) {
        w.write_record([
            p.t.to_string(),
            norm2(&p.e).to_string(),
            norm2(&c.e).to_string(),
            p.norm_phi_tilde.to_string(),
            c.norm_phi_tilde.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

/// Dumps both data stacks, one row per stored entry in time order.
pub fn write_stacks(out: &Path, log: &RunLog) -> Result<(), CliError> {
    let (n, d) = (log.dims.n, log.dims.d);
    let mut w = csv_writer(out.join(W_STACK_CSV))?;
    w.write_record(w_stack_header(n, d))?;
    for e in log.w_stack.entries() {
        let mut row = vec![e.t.to_string()];
        row.extend(filtered_channels(&e.payload.m, log.dims).iter().chain(&e.payload.g).map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;

    let mut h = csv_writer(out.join(H_STACK_CSV))?;
    h.write_record(h_stack_header(n, d))?;
    for e in log.h_stack.entries() {
        let mut row = vec![e.t.to_string()];
        row.extend(e.payload.x.iter().chain(&e.payload.r).chain(&e.payload.u).map(f64::to_string));
        h.write_record(&row)?;
    }
    h.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

/// Runs one scenario and writes `trajectory.csv`, the stack dumps and `summary.json`.
pub fn run_scenario(scenario: &Path, out: &Path, overrides: Overrides) -> Result<RunSummary, CliError> {
    create_out_dir(out)?;
    let every = log_every()?;
    let cfg = load_config(scenario, overrides)?;
    let log = run_closed_loop(&cfg)?;
    let summary = summarize(&cfg, &log)?;
    write_trajectory(out.join(TRAJECTORY_CSV), &log, every)?;
    write_stacks(out, &log)?;
    write_json(out.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

pub fn verdict(proposed: &RunSummary, classical: &RunSummary) -> Verdict {
    let p = proposed.final_norms.phi_tilde_ratio;
    let c = classical.final_norms.phi_tilde_ratio;
    let proposed_converged = p <= CONVERGED_RATIO;
    let classical_converged = c <= CONVERGED_RATIO;
    let classical_stalled = c >= STALLED_RATIO;
    let describe = |converged: bool, stalled: bool| match (converged, stalled) {
        (true, _) => "converged",
        (false, true) => "stalled",
        _ => "partially converged",
    };
    Verdict {
        proposed_phi_ratio: p,
        classical_phi_ratio: c,
        proposed_converged,
        classical_converged,
        classical_stalled,
        statement: format!(
            "proposed {}, classical {}",
            describe(proposed_converged, p >= STALLED_RATIO),
            describe(classical_converged, classical_stalled)
        ),
    }
}

/// Runs the proposed law and the classical baseline on the same scenario,
/// in parallel, and writes `comparison.csv` and `summary.json`.
pub fn compare_scenario(scenario: &Path, out: &Path, overrides: Overrides) -> Result<ComparisonSummary, CliError> {
    create_out_dir(out)?;
    let every = log_every()?;
    let base = load_config(scenario, overrides)?;
    let mut proposed_cfg = base.clone();
    proposed_cfg.mode = SimMode::Proposed;
    let mut classical_cfg = base;
    classical_cfg.mode = SimMode::ClassicalBaseline;

    let (proposed, classical) = std::thread::scope(|s| {
        let p = s.spawn(|| run_closed_loop(&proposed_cfg));
        let c = s.spawn(|| run_closed_loop(&classical_cfg));
        (p.join().expect("proposed run panicked"), c.join().expect("classical run panicked"))
    });
    let (proposed, classical) = (proposed?, classical?);

    let ps = summarize(&proposed_cfg, &proposed)?;
    let cs = summarize(&classical_cfg, &classical)?;
    write_comparison(out.join(COMPARISON_CSV), &proposed, &classical, every)?;
    let summary = ComparisonSummary {
        verdict: verdict(&ps, &cs),
        proposed: ps,
        classical: cs,
    };
    write_json(out.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

/// Writes `error.json` into `out` (best effort) and returns the exit code.
pub fn report_failure(out: &Path, err: &CliError) -> u8 {
    let artifact = ErrorArtifact {
        kind: err.kind(),
        message: err.to_string(),
        field: err.field_path(),
    };
    if fs::create_dir_all(out).is_ok() {
        let _ = write_json(out.join(ERROR_JSON), &artifact);
    }
    err.exit_code()
}

pub fn cmd_run(scenario: &Path, out: &Path, overrides: Overrides) -> u8 {
    match run_scenario(scenario, out, overrides) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            report_failure(out, &e)
        }
    }
}

pub fn cmd_compare(scenario: &Path, out: &Path) -> u8 {
    match compare_scenario(scenario, out, Overrides::default()) {
        Ok(s) => {
            println!("{}", s.verdict.statement);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            report_failure(out, &e)
        }
    }
}

