//! Recorded training runs and their CSV form.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "step",
    "time",
    "loss",
    "nuclear_norm",
    "sigma_1",
    "sigma_2",
    "sigma_3",
    "residual_inf",
    "q_drift",
    "psnr",
    "eff_rank",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub time: f64,
    pub loss: f64,
    pub nuclear_norm: f64,
    pub sigma_top3: [f64; 3],
    /// Largest absolute residual: spectral (`σ* - Hα`) for the reduced
    /// flow, label residual (`y - A(X)`) for gradient descent.
    pub residual_inf: f64,
    /// `max |Q(t) - Q(0)|`; only defined for the reduced flow.
    pub q_drift: Option<f64>,
    pub psnr: Option<f64>,
    pub eff_rank: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    /// Per-row residual vectors `σ* - Hα` (reduced flow only).
    #[serde(default)]
    pub residuals: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.time).collect()
    }
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

/// Serializes the trajectory table. Floats carry 17 significant digits, so
/// identical trajectories give identical bytes.
pub fn trajectory_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in &traj.rows {
        w.write_record([
            r.step.to_string(),
            float(r.time),
            float(r.loss),
            float(r.nuclear_norm),
            float(r.sigma_top3[0]),
            float(r.sigma_top3[1]),
            float(r.sigma_top3[2]),
            float(r.residual_inf),
            opt(r.q_drift),
            opt(r.psnr),
            opt(r.eff_rank),
        ])
        .map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let bytes = trajectory_csv(traj)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Writes `step,time,r_1,...,r_d` rows of the residual vectors.
pub fn write_residuals_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let d = traj.residuals.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((1..=d).map(|i| format!("r_{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for (row, res) in traj.rows.iter().zip(&traj.residuals) {
        let mut rec = vec![row.step.to_string(), float(row.time)];
        rec.extend(res.iter().map(|&x| float(x)));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("checked by is_io_error"),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Parses a table written by [`trajectory_csv`].
pub fn parse_trajectory_csv(mut input: impl Read) -> Result<Trajectory> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_error)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected trajectory header {header:?}")));
    }
    let mut traj = Trajectory::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let field = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: column {}: {e}", line + 1, CSV_HEADER[i])))
        };
        let optional = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                field(i).map(Some)
            }
        };
        traj.rows.push(TrajectoryRow {
            step: rec[0]
                .parse()
                .map_err(|e| Error::Format(format!("row {}: step: {e}", line + 1)))?,
            time: field(1)?,
            loss: field(2)?,
            nuclear_norm: field(3)?,
            sigma_top3: [field(4)?, field(5)?, field(6)?],
            residual_inf: field(7)?,
            q_drift: optional(8)?,
            psnr: optional(9)?,
            eff_rank: optional(10)?,
        });
    }
    Ok(traj)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    parse_trajectory_csv(File::open(path)?)
}
