//! CSV reading and writing. Comma-separated, '.' decimal, one header row,
//! numbers at 17 significant digits so files round-trip losslessly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use biokf::sim::{MeasurementSeries, Trajectory};

use crate::error::{CliError, Result};

pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct CsvWriter {
    out: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    /// Creates the file and writes (and flushes) the header immediately, so
    /// even an aborted run leaves a valid, parseable file behind.
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| {
            CliError::Config(format!("cannot create '{}': {e}", path.display()))
        })?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", header.join(","))?;
        out.flush()?;
        Ok(Self { out, columns: header.len() })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.columns);
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = CsvWriter::create(path, &["time", "s", "e", "f"])?;
    for (t, st) in traj.times.iter().zip(&traj.states) {
        w.row(&[fmt_num(*t), fmt_num(st.s), fmt_num(st.e), fmt_num(st.f)])?;
    }
    w.finish()
}

pub fn write_measurements(path: &Path, meas: &MeasurementSeries) -> Result<()> {
    let mut w = CsvWriter::create(path, &["time", "y"])?;
    for (t, y) in meas.times.iter().zip(&meas.values) {
        w.row(&[fmt_num(*t), fmt_num(*y)])?;
    }
    w.finish()
}

/// Reads a measurement CSV (header `time,y`); the noise variance is not part
/// of the file and is supplied by the caller's configuration.
pub fn read_measurements(path: &Path, meas_variance: f64) -> Result<MeasurementSeries> {
    let file = File::open(path).map_err(|e| {
        CliError::Config(format!("cannot open '{}': {e}", path.display()))
    })?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("'{}' is empty", path.display())))??;
    if header.trim() != "time,y" {
        return Err(CliError::Config(format!(
            "'{}': expected header 'time,y', got '{header}'",
            path.display()
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |field: Option<&str>| -> Result<f64> {
            field
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "{}:{}: malformed row '{line}'",
                        path.display(),
                        idx + 2
                    ))
                })
        };
        times.push(parse(parts.next())?);
        values.push(parse(parts.next())?);
    }
    MeasurementSeries::new(times, values, meas_variance).map_err(CliError::from)
}
