//! CSV/JSON artifacts. Numbers are written in their shortest round-trip
//! decimal form, so identical runs produce identical files apart from the
//! wall-time fields.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::{Gate, Report, RowKind, RowReport, SweepRow};
use crate::pod_rom::PodBasis;
use crate::stability::HorizonResult;
use crate::trajectory::Trajectory;

/// `t,x_1,…,x_n` header followed by one row per time level.
pub fn write_trajectory_csv(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = Vec::with_capacity(traj.width() + 1);
    header.push("t".to_string());
    header.extend((1..=traj.width()).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(traj.width() + 1);
    for (k, row) in traj.rows().enumerate() {
        record.clear();
        record.push(traj.time(k));
        record.extend_from_slice(row);
        w.serialize(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_trajectory_csv`] back into
/// `(times, rows)`.
pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for rec in r.deserialize::<Vec<f64>>() {
        let mut rec = rec?;
        let t = rec.remove(0);
        times.push(t);
        rows.push(rec);
    }
    Ok((times, rows))
}

/// POD spectrum: index, eigenvalue and the relative energy left out when
/// truncating after that index.
pub fn write_eigs_csv(eigenvalues: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "eigenvalue", "relative_tail"])?;
    let total: f64 = eigenvalues.iter().sum();
    let mut tail = total;
    for (i, &e) in eigenvalues.iter().enumerate() {
        tail -= e;
        let rel = if total > 0.0 { tail.max(0.0) / total } else { 0.0 };
        w.serialize((i + 1, e, rel))?;
    }
    w.flush()?;
    Ok(())
}

/// Basis layout: a header row of eigenvalues, then one row per grid node with
/// one column per mode.
pub fn write_basis_csv(basis: &PodBasis, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(&basis.eigenvalues)?;
    let mut row = vec![0.0; basis.rank()];
    for i in 0..basis.n_space() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = basis.modes[(i, j)];
        }
        w.serialize(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "K")]
    pub gain: f64,
    pub alpha: f64,
    #[serde(rename = "J")]
    pub cost: Option<f64>,
    #[serde(rename = "err_L2")]
    pub err_l2: Option<f64>,
    pub err_sup: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub speedup: Option<f64>,
    #[serde(default)]
    pub pod_rank: Option<usize>,
    #[serde(default)]
    pub deim_rank: Option<usize>,
}

impl Summary {
    fn horizon_only(report: &Report) -> Self {
        Self {
            label: "horizon".into(),
            horizon: report.horizon.n_min,
            gain: report.horizon.gain,
            alpha: report.horizon.alpha,
            cost: None,
            err_l2: None,
            err_sup: report.rom_err_sup,
            wall_time_s: None,
            speedup: None,
            pod_rank: None,
            deim_rank: None,
        }
    }

    fn for_row(report: &Report, row: &RowReport) -> Self {
        let info = row.result.rom_info.as_ref();
        Self {
            label: row.label.clone(),
            horizon: report.horizon_used,
            gain: report.gain_used,
            alpha: report.horizon.alpha,
            cost: Some(row.metrics.closed_loop_cost),
            err_l2: row.metrics.err_l2,
            err_sup: row.metrics.err_sup,
            wall_time_s: (row.kind != RowKind::Feedback).then_some(row.metrics.wall_time_s),
            speedup: row.metrics.speedup,
            pod_rank: info.map(|i| i.pod_rank),
            deim_rank: info.and_then(|i| i.deim_rank),
        }
    }
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    name: &'a str,
    mode: String,
    passed: bool,
    horizon: &'a HorizonResult,
    rom_horizon: Option<&'a HorizonResult>,
    rom_err_sup: Option<f64>,
    horizon_used: usize,
    gain_used: f64,
    rows: Vec<Summary>,
    gates: &'a [Gate],
}

/// Files of one closed-loop run: `state.csv`, `control.csv`, `summary.json`
/// and, for reduced-order runs, `eigs.csv`.
pub fn export_results(report: &Report, row: &RowReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_trajectory_csv(&row.result.state, dir.join("state.csv"))?;
    write_trajectory_csv(&row.result.control, dir.join("control.csv"))?;
    let summary = Summary::for_row(report, row);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if let Some(info) = &row.result.rom_info {
        write_eigs_csv(&info.eigenvalues, dir.join("eigs.csv"))?;
    }
    Ok(())
}

/// Writes `report.json`, a top-level `summary.json` with the horizon result
/// and one sub-directory per closed-loop run.
pub fn export_report(report: &Report, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    for row in &report.rows {
        export_results(report, row, out.join(&row.label))?;
    }
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&Summary::horizon_only(report))?,
    )?;
    let file = ReportFile {
        name: &report.name,
        mode: report.mode.to_string(),
        passed: report.passed(),
        horizon: &report.horizon,
        rom_horizon: report.rom_horizon.as_ref(),
        rom_err_sup: report.rom_err_sup,
        horizon_used: report.horizon_used,
        gain_used: report.gain_used,
        rows: report.rows.iter().map(|r| Summary::for_row(report, r)).collect(),
        gates: &report.gates,
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Error-to-horizon table `err,N_min,K_star,alpha,found`; rows without a
/// stabilizing horizon have empty numeric fields and `found = false`.
pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["err", "N_min", "K_star", "alpha", "found"])?;
    for r in rows {
        w.serialize((r.err, r.n_min, r.gain, r.alpha, r.n_min.is_some()))?;
    }
    w.flush()?;
    Ok(())
}
