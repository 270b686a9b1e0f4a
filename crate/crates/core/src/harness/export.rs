//! Trajectory files: CSV with a commented metadata header, or JSON.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, Trajectory};
use crate::error::{Error, Result};
use crate::hermlin::rank1_extract;
use crate::netmodel::Bases;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::config(
                "format",
                format!("expected csv or json, got `{s}`"),
            )),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverterRow {
    pub p_kw: f64,
    pub q_kvar: f64,
    pub u_p_kw: f64,
    pub u_q_kvar: f64,
    pub lambda_p: f64,
    pub lambda_q: f64,
}

/// One exported slot. Powers are in kW/kVAr, everything else per-unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub k: usize,
    pub t_seconds: f64,
    /// Step that produced this slot's multipliers; absent at `k = 0`.
    pub alpha: Option<f64>,
    pub grad_norm: f64,
    pub inverters: Vec<InverterRow>,
    pub epsilon_est: f64,
    pub epsilon_bound: Option<f64>,
    pub tracking_err: f64,
    pub tracking_bound: Option<f64>,
    pub substation_p_kw: f64,
    pub v_rank_ratio: f64,
    pub min_vmag_pu: f64,
    pub max_vmag_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub bases: Bases,
    pub sampling_interval_s: f64,
    pub g: f64,
    pub g_tilde: f64,
    pub sensitivity: f64,
    pub failure: Option<String>,
    pub config: ScenarioConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub metadata: Metadata,
    pub slots: Vec<SlotRow>,
}

pub fn metadata(traj: &Trajectory) -> Metadata {
    Metadata {
        bases: traj.scenario.feeder.bases,
        sampling_interval_s: traj.sampling_interval,
        g: traj.bounds.g,
        g_tilde: traj.bounds.g_tilde,
        sensitivity: traj.sensitivity,
        failure: traj.failure.as_ref().map(|e| e.to_string()),
        config: traj.scenario.clone(),
    }
}

pub fn rows(traj: &Trajectory) -> Result<Vec<SlotRow>> {
    let problem = traj.scenario.problem()?;
    let kw = traj.scenario.feeder.bases.s_base_va / 1000.0;
    traj.records
        .iter()
        .map(|r| {
            let inverters = (0..r.u.len())
                .map(|i| InverterRow {
                    p_kw: r.y_sampled[i].p * kw,
                    q_kvar: r.y_sampled[i].q * kw,
                    u_p_kw: r.u[i].p * kw,
                    u_q_kvar: r.u[i].q * kw,
                    lambda_p: r.lambda[2 * i],
                    lambda_q: r.lambda[2 * i + 1],
                })
                .collect();
            let vmag: Vec<f64> = r.v.diagonal().iter().map(|d| d.max(0.0).sqrt()).collect();
            let (_, ratio) = rank1_extract(&r.v)?;
            let d = &r.diagnostics;
            Ok(SlotRow {
                k: r.k,
                t_seconds: r.t,
                alpha: d.alpha,
                grad_norm: d.grad_norm,
                inverters,
                epsilon_est: d.epsilon_est,
                epsilon_bound: d.epsilon_bound,
                tracking_err: d.tracking_err,
                tracking_bound: d.tracking_bound,
                substation_p_kw: problem.matrices.substation_power(&r.v) * kw,
                v_rank_ratio: ratio,
                min_vmag_pu: vmag.iter().copied().fold(f64::INFINITY, f64::min),
                max_vmag_pu: vmag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

/// Four leading columns, six per inverter, eight trailing diagnostics.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k", "t_seconds", "alpha", "grad_norm"]
        .map(String::from)
        .to_vec();
    for i in 1..=n {
        for name in [
            "p_kw", "q_kvar", "u_p_kw", "u_q_kvar", "lambda_p", "lambda_q",
        ] {
            h.push(format!("{name}_{i}"));
        }
    }
    for name in [
        "epsilon_est",
        "epsilon_bound",
        "tracking_err",
        "tracking_bound",
        "substation_p_kw",
        "v_rank_ratio",
        "min_vmag_pu",
        "max_vmag_pu",
    ] {
        h.push(name.to_string());
    }
    h
}

fn cell(x: f64) -> String {
    format!("{x}")
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(cell).unwrap_or_default()
}

pub fn write_csv<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    let meta = metadata(traj);
    let io = |e: std::io::Error| Error::Io {
        path: "<csv>".into(),
        source: e,
    };
    let b = meta.bases;
    writeln!(out, "# sdp-feedback trajectory").map_err(io)?;
    writeln!(
        out,
        "# s_base_va={} v_base_volts={} z_base_ohm={}",
        b.s_base_va,
        b.v_base_volts,
        b.z_base_ohm()
    )
    .map_err(io)?;
    writeln!(
        out,
        "# sampling_interval_s={} G={} G_tilde={}",
        meta.sampling_interval_s, meta.g, meta.g_tilde
    )
    .map_err(io)?;
    let json = serde_json::to_string(&meta).map_err(|e| Error::Numerical {
        context: "metadata serialization".into(),
        dump: e.to_string(),
    })?;
    writeln!(out, "# metadata: {json}").map_err(io)?;

    let n = traj.scenario.agent_count();
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<csv>".into(),
            source,
        },
        other => Error::Parse {
            path: "<csv>".into(),
            message: format!("{other:?}"),
        },
    };
    w.write_record(csv_header(n)).map_err(csv_err)?;
    for row in rows(traj)? {
        let mut rec = vec![
            row.k.to_string(),
            cell(row.t_seconds),
            opt_cell(row.alpha),
            cell(row.grad_norm),
        ];
        for inv in &row.inverters {
            rec.extend(
                [
                    inv.p_kw,
                    inv.q_kvar,
                    inv.u_p_kw,
                    inv.u_q_kvar,
                    inv.lambda_p,
                    inv.lambda_q,
                ]
                .map(cell),
            );
        }
        rec.extend([
            cell(row.epsilon_est),
            opt_cell(row.epsilon_bound),
            cell(row.tracking_err),
            opt_cell(row.tracking_bound),
            cell(row.substation_p_kw),
            cell(row.v_rank_ratio),
            cell(row.min_vmag_pu),
            cell(row.max_vmag_pu),
        ]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn write_json<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let file = TrajectoryFile {
        metadata: metadata(traj),
        slots: rows(traj)?,
    };
    serde_json::to_writer_pretty(out, &file).map_err(|e| Error::Io {
        path: "<json>".into(),
        source: e.into(),
    })
}

pub fn export(traj: &Trajectory, path: &Path, format: Format) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let out = std::io::BufWriter::new(file);
    match format {
        Format::Csv => write_csv(traj, out),
        Format::Json => write_json(traj, out),
    }
}

/// A parsed trajectory CSV. Empty cells read as `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub metadata: Option<serde_json::Value>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_csv(text: &str) -> Result<CsvTable> {
    let parse_err = |message: String| Error::Parse {
        path: "<csv>".into(),
        message,
    };
    let metadata = text
        .lines()
        .find_map(|l| l.strip_prefix("# metadata: "))
        .map(serde_json::from_str)
        .transpose()
        .map_err(|e| parse_err(e.to_string()))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let row = rec
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>()
                        .map(Some)
                        .map_err(|e| parse_err(format!("`{c}`: {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(CsvTable {
        metadata,
        header,
        rows,
    })
}
