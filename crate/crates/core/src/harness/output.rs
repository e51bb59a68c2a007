//! Result files: a CSV of every cell and plot-ready `.dat` tables.
//!
//! Floats are written in Rust's shortest round-trip form, so parsing the
//! files gives back identical values.

use super::sweep::SweepResult;
use crate::channel::SPEED_OF_LIGHT;
use crate::crlb::CrlbPoint;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const RESULTS_CSV: &str = "results.csv";
pub const CRLB_CSV: &str = "crlb.csv";
pub const CRLB_DAT: &str = "crlb.dat";
pub const CSV_HEADER: [&str; 6] = [
    "bandwidth_hz",
    "length",
    "sigma_tof_s",
    "sigma_cm",
    "crlb_s",
    "n",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("no results to write")]
    Empty,
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Parse(#[from] csv::Error),
    #[error("unexpected CSV header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}, column {column}: cannot parse {value:?}")]
    Field {
        row: usize,
        column: &'static str,
        value: String,
    },
}

/// One CSV line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub bandwidth_hz: f64,
    pub length: usize,
    pub sigma_tof_s: f64,
    pub sigma_cm: f64,
    pub crlb_s: f64,
    pub n: usize,
}

impl From<&SweepResult> for ResultRow {
    fn from(r: &SweepResult) -> Self {
        ResultRow {
            bandwidth_hz: r.bandwidth,
            length: r.length,
            sigma_tof_s: r.sigma_tof,
            sigma_cm: r.sigma_tof_cm,
            crlb_s: r.crlb_std,
            n: r.n,
        }
    }
}

impl From<&CrlbPoint> for ResultRow {
    fn from(p: &CrlbPoint) -> Self {
        ResultRow {
            bandwidth_hz: p.bandwidth,
            length: p.length,
            sigma_tof_s: p.tof_std,
            sigma_cm: p.tof_cm(),
            crlb_s: p.tof_std,
            n: 0,
        }
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_at(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_owned(),
        source,
    }
}

fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_at(path))?;
    w.write_record(CSV_HEADER).map_err(csv_at(path))?;
    for r in rows {
        w.write_record([
            r.bandwidth_hz.to_string(),
            r.length.to_string(),
            format!("{:e}", r.sigma_tof_s),
            r.sigma_cm.to_string(),
            format!("{:e}", r.crlb_s),
            r.n.to_string(),
        ])
        .map_err(csv_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

/// Reads a results or bound CSV back.
pub fn parse_results_csv<R: Read>(reader: R) -> Result<Vec<ResultRow>, OutputError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(OutputError::Header(header));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let f = |k: usize| -> Result<f64, OutputError> {
            rec[k].parse().map_err(|_| OutputError::Field {
                row,
                column: CSV_HEADER[k],
                value: rec[k].to_owned(),
            })
        };
        let u = |k: usize| -> Result<usize, OutputError> {
            rec[k].parse().map_err(|_| OutputError::Field {
                row,
                column: CSV_HEADER[k],
                value: rec[k].to_owned(),
            })
        };
        rows.push(ResultRow {
            bandwidth_hz: f(0)?,
            length: u(1)?,
            sigma_tof_s: f(2)?,
            sigma_cm: f(3)?,
            crlb_s: f(4)?,
            n: u(5)?,
        });
    }
    Ok(rows)
}

/// `ch_ll_{len}_bw.dat`: bandwidth in Hz against sigma in cm.
fn write_length_dat(rows: &[&ResultRow], path: &Path) -> Result<(), OutputError> {
    let write = || -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "value sigma_cm")?;
        for r in rows {
            writeln!(w, "{} {}", r.bandwidth_hz, r.sigma_cm)?;
        }
        w.flush()
    };
    write().map_err(io_at(path))
}

fn by_length(rows: &[ResultRow]) -> BTreeMap<usize, Vec<&ResultRow>> {
    let mut map: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.length).or_default().push(r);
    }
    for v in map.values_mut() {
        v.sort_by(|a, b| a.bandwidth_hz.total_cmp(&b.bandwidth_hz));
    }
    map
}

/// Writes `results.csv` and one `ch_ll_{len}_bw.dat` per chirp length into
/// `dir`, creating it if needed. Returns the written paths.
pub fn emit_results(results: &[SweepResult], dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    if results.is_empty() {
        return Err(OutputError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let rows: Vec<ResultRow> = results.iter().map(ResultRow::from).collect();
    let csv_path = dir.join(RESULTS_CSV);
    write_csv(&rows, &csv_path)?;
    let mut paths = vec![csv_path];
    for (len, cells) in by_length(&rows) {
        let p = dir.join(format!("ch_ll_{len}_bw.dat"));
        write_length_dat(&cells, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes `crlb.csv` and `crlb.dat` (one row per bandwidth in Hz, one
/// column per length, values in cm).
pub fn emit_crlb(points: &[CrlbPoint], dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    if points.is_empty() {
        return Err(OutputError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let rows: Vec<ResultRow> = points.iter().map(ResultRow::from).collect();
    let csv_path = dir.join(CRLB_CSV);
    write_csv(&rows, &csv_path)?;

    let mut lengths: Vec<usize> = rows.iter().map(|r| r.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut bandwidths: Vec<f64> = rows.iter().map(|r| r.bandwidth_hz).collect();
    bandwidths.sort_by(f64::total_cmp);
    bandwidths.dedup();

    let dat_path = dir.join(CRLB_DAT);
    let write = || -> io::Result<()> {
        let mut w = BufWriter::new(File::create(&dat_path)?);
        write!(w, "bw")?;
        for l in &lengths {
            write!(w, " {l}")?;
        }
        writeln!(w)?;
        for bw in &bandwidths {
            write!(w, "{bw}")?;
            for l in &lengths {
                let cm = rows
                    .iter()
                    .find(|r| r.length == *l && r.bandwidth_hz == *bw)
                    .map_or(f64::NAN, |r| r.sigma_cm);
                write!(w, " {cm}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(io_at(&dat_path))?;
    Ok(vec![csv_path, dat_path])
}

/// Seconds to centimetres of range.
pub fn seconds_to_cm(s: f64) -> f64 {
    s * SPEED_OF_LIGHT * 100.0
}
