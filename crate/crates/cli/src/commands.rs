use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use clustersync::analysis::{self, ConditionReport, EXIT_STABILIZABILITY};
use clustersync::benchmark;
use clustersync::gains::FeedbackGain;
use clustersync::io::{format_gains, write_trajectory_csv, GainsFile};
use clustersync::scenario::{ClusterScenario, CouplingMode, ScenarioFile};
use clustersync::sim;
use clustersync::Error;
use log::{info, warn};
use rayon::prelude::*;

use crate::SweepParam;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_DIVERGED: u8 = 20;

fn fail(err: impl std::fmt::Display) -> u8 {
    eprintln!("error: {err}");
    EXIT_INPUT
}

/// Applies `--epsilon` and `--seed`. A smaller epsilon refines `dt` so the
/// step stays within a quarter of the shortest phase, keeping the recorded
/// sample spacing.
fn apply_overrides(file: &mut ScenarioFile, epsilon: Option<f64>, seed: Option<u64>) {
    if let Some(seed) = seed {
        file.sim.seed = Some(seed);
    }
    if let Some(eps) = epsilon {
        file.switching.epsilon = eps;
        let min_dwell = file
            .switching
            .phases
            .iter()
            .map(|p| p.dwell)
            .fold(f64::INFINITY, f64::min);
        let limit = eps * min_dwell / 4.0;
        if limit.is_finite() && limit > 0.0 && file.sim.dt > limit {
            let old_steps = (file.sim.horizon / file.sim.dt).round().max(1.0);
            let steps = (file.sim.horizon / limit).ceil();
            let stride = file.sim.record_stride.unwrap_or(1) as f64;
            file.sim.dt = file.sim.horizon / steps;
            file.sim.record_stride = Some(((stride * steps / old_steps).round() as usize).max(1));
            info!("dt refined to {} for epsilon {eps}", file.sim.dt);
        }
    }
}

fn load(path: &Path, epsilon: Option<f64>, seed: Option<u64>) -> Result<(ScenarioFile, ClusterScenario), u8> {
    let mut file = ScenarioFile::load(path).map_err(fail)?;
    apply_overrides(&mut file, epsilon, seed);
    let scenario = file.resolve().map_err(fail)?;
    Ok((file, scenario))
}

fn exit_of(report: &ConditionReport) -> u8 {
    report.exit_code() as u8
}

pub fn analyze(path: &Path, epsilon: Option<f64>, machine: bool, guidance: bool) -> u8 {
    let (_, scenario) = match load(path, epsilon, None) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (design, mut report) = match analysis::analyze(&scenario) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if guidance {
        match &design.feedback {
            Some(fb) => {
                let eps = scenario.network.epsilon();
                let mut grid = vec![0.01, 0.03, 0.1, 0.3, 1.0, eps];
                grid.retain(|e| *e > 0.0);
                match analysis::epsilon_guidance(&design.scenario, &fb.k, &grid, 3) {
                    Ok(g) => report.epsilon_guidance = Some(g),
                    Err(e) => warn!("epsilon guidance failed: {e}"),
                }
            }
            None => warn!("epsilon guidance skipped: no stabilizing gain"),
        }
    }
    if machine {
        for (k, v) in report.key_values() {
            println!("{k}={v}");
        }
    } else {
        print!("{report}");
    }
    exit_of(&report)
}

pub fn synthesize(path: &Path, out: &Path) -> u8 {
    let (_, scenario) = match load(path, None, None) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let design = match analysis::design(&scenario) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let Some(feedback) = &design.feedback else {
        let mode = design
            .stabilizability
            .offending
            .as_ref()
            .map(|m| format!(" (uncontrollable mode λ = {} {:+}i)", m.eigenvalue.re, m.eigenvalue.im))
            .unwrap_or_default();
        eprintln!("error: plant is not stabilizable{mode}; no gains written");
        return EXIT_STABILIZABILITY as u8;
    };
    if design.gains.is_none() {
        warn!("average graph admits no positive scaling; thresholds omitted");
    }
    let text = format_gains(feedback, design.gains.as_ref(), design.scenario.network.coupling.cluster());
    if let Err(e) = fs::write(out, text) {
        return fail(format!("cannot write {}: {e}", out.display()));
    }
    println!(
        "wrote {} (are_residual = {:.3e}, xi = {:.6e})",
        out.display(),
        feedback.are_residual,
        feedback.xi
    );
    EXIT_OK
}

fn gains_from_file(path: &Path, scenario: &mut ClusterScenario) -> anyhow::Result<nalgebra::DMatrix<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file = GainsFile::parse(&text)?;
    let k = file.k_matrix()?;
    if scenario.coupling_mode != CouplingMode::Fixed {
        let network = &scenario.network;
        let coupling = network.coupling.with_cluster_gains(file.coupling.clone())?;
        scenario.network = network.with_coupling(coupling)?;
        scenario.coupling_mode = CouplingMode::Fixed;
    }
    Ok(k)
}

fn designed_gain(scenario: &ClusterScenario) -> Result<(ClusterScenario, FeedbackGain), u8> {
    let design = analysis::design(scenario).map_err(fail)?;
    match design.feedback {
        Some(fb) => Ok((design.scenario, fb)),
        None => {
            eprintln!("error: plant is not stabilizable; no gain to simulate with");
            Err(EXIT_STABILIZABILITY as u8)
        }
    }
}

fn report_divergence(err: &Error) -> u8 {
    match err {
        Error::Diverged { time, last_finite } => {
            eprintln!("error: simulation diverged at t = {time}; last finite state at t = {last_finite}");
            EXIT_DIVERGED
        }
        other => fail(other),
    }
}

pub fn simulate(
    path: &Path,
    gains: Option<&Path>,
    out: Option<&Path>,
    full_state: bool,
    seed: Option<u64>,
    epsilon: Option<f64>,
) -> u8 {
    let (_, mut scenario) = match load(path, epsilon, seed) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let k = match gains {
        Some(g) => match gains_from_file(g, &mut scenario) {
            Ok(k) => k,
            Err(e) => return fail(format!("{e:#}")),
        },
        None => match designed_gain(&scenario) {
            Ok((resolved, fb)) => {
                scenario = resolved;
                fb.k
            }
            Err(code) => return code,
        },
    };
    let traj = match sim::simulate(&scenario, &k, &scenario.sim) {
        Ok(t) => t,
        Err(e) => return report_divergence(&e),
    };
    let nodes = scenario.network.partition.node_count();
    let written = match out {
        Some(p) => fs::File::create(p)
            .map_err(|e| anyhow!("cannot create {}: {e}", p.display()))
            .and_then(|f| Ok(write_trajectory_csv(&traj, nodes, full_state, std::io::BufWriter::new(f))?)),
        None => write_trajectory_csv(&traj, nodes, full_state, std::io::stdout().lock()).map_err(anyhow::Error::from),
    };
    if let Err(e) = written {
        return fail(e);
    }
    let total = traj.total_error();
    if let (Some(first), Some(last)) = (total.first(), total.last()) {
        info!("final error ratio {:.3e}", last / first);
    }
    EXIT_OK
}

struct SweepRow {
    value: f64,
    outcome: Result<(f64, f64, f64, bool), String>,
}

fn sweep_point(base: &ScenarioFile, param: SweepParam, value: f64) -> Result<(f64, f64, f64, bool), String> {
    let mut file = base.clone();
    match param {
        SweepParam::Epsilon => apply_overrides(&mut file, Some(value), None),
        SweepParam::C => {
            file.coupling.gains = Some(vec![value; file.partition.clusters.len()]);
            file.coupling.auto_margin = None;
        }
    }
    let scenario = file.resolve().map_err(|e| e.to_string())?;
    let (design, report) = analysis::analyze(&scenario).map_err(|e| e.to_string())?;
    let fb = design.feedback.ok_or("plant is not stabilizable")?;
    let traj = sim::simulate(&design.scenario, &fb.k, &design.scenario.sim).map_err(|e| e.to_string())?;
    let total = traj.total_error();
    let ratio = total.last().copied().unwrap_or(f64::NAN) / total[0];
    let fit = analysis::decay_of(&traj, design.scenario.sim.horizon).map_err(|e| e.to_string())?;
    Ok((ratio, fit.rate, fit.r_squared, report.verdict == analysis::Verdict::Certified))
}

pub fn sweep(path: &Path, param: SweepParam, grid: &[f64], out: Option<&Path>, seed: Option<u64>) -> u8 {
    if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return fail("grid must be a non-empty list of positive numbers");
    }
    let mut base = match ScenarioFile::load(path) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    apply_overrides(&mut base, None, seed);
    if let Err(e) = base.resolve() {
        return fail(e);
    }
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&value| SweepRow {
            value,
            outcome: sweep_point(&base, param, value),
        })
        .collect();
    let name = match param {
        SweepParam::Epsilon => "epsilon",
        SweepParam::C => "c",
    };
    let mut text = format!("{name},final_error_ratio,decay_rate,r_squared,certified,status\n");
    for row in &rows {
        match &row.outcome {
            Ok((ratio, rate, r2, certified)) => text.push_str(&format!(
                "{:.8e},{ratio:.8e},{rate:.8e},{r2:.8e},{certified},ok\n",
                row.value
            )),
            Err(e) => {
                warn!("{name} = {}: {e}", row.value);
                text.push_str(&format!("{:.8e},,,,,\"failed: {}\"\n", row.value, e.replace('"', "'")));
            }
        }
    }
    let written = match out {
        Some(p) => fs::write(p, &text).map_err(|e| anyhow!("cannot write {}: {e}", p.display())),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| anyhow!(e)),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => fail(e),
    }
}

pub fn repro(name: &str, out: &Path, full_state: bool) -> u8 {
    let Some(variants) = benchmark::repro(name) else {
        return fail(format!("unknown example `{name}`"));
    };
    if let Err(e) = fs::create_dir_all(out) {
        return fail(format!("cannot create {}: {e}", out.display()));
    }
    let mut summary = String::from("variant,exit_code,verdict,final_error_ratio,decay_rate,status\n");
    let mut code = EXIT_OK;
    for v in variants {
        match run_variant(&v, out, full_state) {
            Ok(r) => {
                if code == EXIT_OK {
                    code = r.exit;
                }
                println!("{}: {} (exit {}), {}", v.label, r.verdict, r.exit, r.status);
                summary.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    v.label, r.exit, r.verdict, r.ratio, r.rate, r.status
                ));
            }
            Err(e) => return fail(format!("{}: {e:#}", v.label)),
        }
    }
    if let Err(e) = fs::write(out.join("summary.csv"), summary) {
        return fail(e);
    }
    code
}

struct VariantResult {
    exit: u8,
    verdict: String,
    ratio: String,
    rate: String,
    status: String,
}

fn run_variant(v: &benchmark::ReproVariant, out: &Path, full_state: bool) -> anyhow::Result<VariantResult> {
    fs::write(out.join(format!("{}.toml", v.label)), v.scenario.to_toml()?)?;
    let scenario = v.scenario.resolve()?;
    let (design, report) = analysis::analyze(&scenario)?;
    fs::write(out.join(format!("{}_report.txt", v.label)), report.to_string())?;
    let feedback = v.gain_source.feedback(&design.scenario)?;
    fs::write(
        out.join(format!("{}_gains.toml", v.label)),
        format_gains(&feedback, design.gains.as_ref(), design.scenario.network.coupling.cluster()),
    )?;
    let nodes = design.scenario.network.partition.node_count();
    let (ratio, rate, status) = match sim::simulate(&design.scenario, &feedback.k, &design.scenario.sim) {
        Ok(traj) => {
            let f = fs::File::create(out.join(format!("{}.csv", v.label)))?;
            write_trajectory_csv(&traj, nodes, full_state, std::io::BufWriter::new(f))?;
            let total = traj.total_error();
            let ratio = total.last().copied().unwrap_or(f64::NAN) / total[0];
            let rate = analysis::decay_of(&traj, design.scenario.sim.horizon)
                .map(|f| format!("{:.8e}", f.rate))
                .unwrap_or_default();
            let status = if ratio <= 1e-3 { "converging" } else { "not converging" };
            (format!("{ratio:.8e}"), rate, status.to_string())
        }
        Err(Error::Diverged { time, .. }) => (String::new(), String::new(), format!("diverged at t = {time}")),
        Err(e) => return Err(e.into()),
    };
    Ok(VariantResult {
        exit: exit_of(&report),
        verdict: report.verdict.to_string(),
        ratio,
        rate,
        status,
    })
}
