//! Gain files and trajectory CSV.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::gains::{FeedbackGain, GainSet};
use crate::sim::Trajectory;

/// Twelve significant digits.
fn num12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Nine significant digits.
fn num9(v: f64) -> String {
    format!("{v:.8e}")
}

fn matrix_line(out: &mut String, key: &str, m: &DMatrix<f64>) {
    let rows: Vec<String> = (0..m.nrows())
        .map(|r| {
            let vals: Vec<String> = m.row(r).iter().map(|&v| num12(v)).collect();
            format!("[{}]", vals.join(", "))
        })
        .collect();
    let _ = writeln!(out, "{key} = [{}]", rows.join(", "));
}

fn vector_line(out: &mut String, key: &str, v: &[f64]) {
    let vals: Vec<String> = v.iter().map(|&x| num12(x)).collect();
    let _ = writeln!(out, "{key} = [{}]", vals.join(", "));
}

/// Serializes gains as TOML text. The output depends only on the values, so
/// rewriting the same gains yields the same bytes.
pub fn format_gains(feedback: &FeedbackGain, set: Option<&GainSet>, coupling: &[f64]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "are_residual = {}", num12(feedback.are_residual));
    let _ = writeln!(out, "xi = {}", num12(feedback.xi));
    matrix_line(&mut out, "p", &feedback.p);
    matrix_line(&mut out, "k", &feedback.k);
    vector_line(&mut out, "coupling", coupling);
    if let Some(set) = set {
        vector_line(&mut out, "xi_scaling", set.xi_scaling.as_slice());
        vector_line(&mut out, "thresholds", &set.thresholds.thresholds);
        let _ = writeln!(out, "threshold_numerator = {}", num12(set.thresholds.numerator));
        vector_line(&mut out, "threshold_denominators", &set.thresholds.denominators);
    }
    out
}

/// Contents of a gains file as read back.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GainsFile {
    pub are_residual: f64,
    pub xi: f64,
    pub p: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub coupling: Vec<f64>,
    #[serde(default)]
    pub xi_scaling: Option<Vec<f64>>,
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default)]
    pub threshold_numerator: Option<f64>,
    #[serde(default)]
    pub threshold_denominators: Option<Vec<f64>>,
}

impl GainsFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::scenario("gains", e.message().to_string()))
    }

    pub fn k_matrix(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.k, "gains.k")
    }

    pub fn p_matrix(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.p, "gains.p")
    }

    pub fn xi_scaling_vector(&self) -> Option<DVector<f64>> {
        self.xi_scaling.as_ref().map(|v| DVector::from_column_slice(v))
    }
}

fn to_matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::scenario(path, "matrix rows are empty or ragged"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

/// CSV header: `t,E_1,…,E_p` followed by `x_<i>_<k>` (one-based) when
/// `full_state` is set.
pub fn csv_header(clusters: usize, nodes: usize, state_dim: usize, full_state: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=clusters).map(|l| format!("E_{l}")));
    if full_state {
        for i in 1..=nodes {
            h.extend((1..=state_dim).map(|k| format!("x_{i}_{k}")));
        }
    }
    h
}

/// Writes one row per recorded sample, values to nine significant digits.
pub fn write_trajectory_csv<W: std::io::Write>(traj: &Trajectory, nodes: usize, full_state: bool, sink: W) -> Result<()> {
    let clusters = traj.error_series.first().map(Vec::len).unwrap_or(0);
    let state_dim = traj.agent_states.first().map(|x| x.len() / nodes.max(1)).unwrap_or(0);
    let io = |e: csv::Error| Error::InvalidValue(format!("CSV output failed: {e}"));
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(csv_header(clusters, nodes, state_dim, full_state)).map_err(io)?;
    for (k, &t) in traj.times.iter().enumerate() {
        let mut row = vec![num9(t)];
        row.extend(traj.error_series[k].iter().map(|&e| num9(e)));
        if full_state {
            row.extend(traj.agent_states[k].iter().map(|&x| num9(x)));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidValue(format!("CSV output failed: {e}")))?;
    Ok(())
}

pub fn trajectory_csv(traj: &Trajectory, nodes: usize, full_state: bool) -> Result<String> {
    let mut buf = Vec::new();
    write_trajectory_csv(traj, nodes, full_state, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::InvalidValue(e.to_string()))
}
