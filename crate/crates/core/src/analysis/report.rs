//! CSV and JSON report emission. CSV tables always carry a header line,
//! so an empty report is a header-only file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::experiments::{CountRow, ScatterRow, ScatterTable, SweepReport, SweepRow, VarianceReport};
use super::taylor::TaylorReport;
use crate::error::{Result, SoupError};
use crate::io::{read_file, write_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for Format {
    type Err = SoupError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(SoupError::Config(format!("unknown format {other:?}, expected csv or json"))),
        }
    }
}

/// A report that flattens to one CSV table.
pub trait Tabular: Sized {
    type Row: Serialize + DeserializeOwned;
    const HEADER: &'static [&'static str];

    fn to_rows(&self) -> Vec<Self::Row>;
    fn from_rows(rows: Vec<Self::Row>) -> Result<Self>;
}

impl Tabular for SweepReport {
    type Row = SweepRow;
    const HEADER: &'static [&'static str] = &["budget", "method", "lambda", "val_acc", "test_acc"];

    fn to_rows(&self) -> Vec<SweepRow> {
        self.rows.clone()
    }

    fn from_rows(rows: Vec<SweepRow>) -> Result<Self> {
        Ok(SweepReport { rows })
    }
}

impl Tabular for ScatterTable {
    type Row = ScatterRow;
    const HEADER: &'static [&'static str] = &["mask", "size", "approx_val_acc", "true_val_acc", "true_test_acc"];

    fn to_rows(&self) -> Vec<ScatterRow> {
        self.rows.clone()
    }

    fn from_rows(rows: Vec<ScatterRow>) -> Result<Self> {
        Ok(ScatterTable::from_rows(rows))
    }
}

/// Per-count rows only; the group test lives in the JSON form.
impl Tabular for Vec<CountRow> {
    type Row = CountRow;
    const HEADER: &'static [&'static str] = &["count", "n", "mean", "variance", "min", "max"];

    fn to_rows(&self) -> Vec<CountRow> {
        self.clone()
    }

    fn from_rows(rows: Vec<CountRow>) -> Result<Self> {
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorRow {
    pub epsilon: f64,
    pub ensemble_loss: f64,
    pub soup_loss: f64,
    pub gap: f64,
    pub decay_ratio: Option<f64>,
}

impl Tabular for TaylorReport {
    type Row = TaylorRow;
    const HEADER: &'static [&'static str] = &["epsilon", "ensemble_loss", "soup_loss", "gap", "decay_ratio"];

    fn to_rows(&self) -> Vec<TaylorRow> {
        (0..self.epsilons.len())
            .map(|i| TaylorRow {
                epsilon: self.epsilons[i],
                ensemble_loss: self.ensemble_losses[i],
                soup_loss: self.soup_losses[i],
                gap: self.gaps[i],
                // ratio into this row from the previous epsilon
                decay_ratio: i.checked_sub(1).and_then(|j| self.decay_ratios[j]),
            })
            .collect()
    }

    fn from_rows(rows: Vec<TaylorRow>) -> Result<Self> {
        let mut decay_ratios: Vec<Option<f64>> = rows.iter().skip(1).map(|r| r.decay_ratio).collect();
        decay_ratios.truncate(rows.len().saturating_sub(1));
        Ok(TaylorReport {
            epsilons: rows.iter().map(|r| r.epsilon).collect(),
            ensemble_losses: rows.iter().map(|r| r.ensemble_loss).collect(),
            soup_losses: rows.iter().map(|r| r.soup_loss).collect(),
            gaps: rows.iter().map(|r| r.gap).collect(),
            decay_ratios,
        })
    }
}

fn csv_err(e: csv::Error) -> SoupError {
    SoupError::Serde(e.to_string())
}

pub fn to_csv<T: Tabular>(report: &T) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(T::HEADER).map_err(csv_err)?;
    for row in report.to_rows() {
        w.serialize(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| SoupError::Serde(e.to_string()))
}

pub fn from_csv<T: Tabular>(bytes: &[u8]) -> Result<T> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(T::HEADER.iter().copied()) {
        return Err(SoupError::Serde(format!(
            "unexpected CSV header {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            T::HEADER
        )));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<T::Row>, _>>().map_err(csv_err)?;
    T::from_rows(rows)
}

pub fn to_json<T: Serialize>(report: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(report).map_err(|e| SoupError::Serde(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn from_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| SoupError::Serde(e.to_string()))
}

pub fn render<T: Tabular + Serialize>(report: &T, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Csv => to_csv(report),
        Format::Json => to_json(report),
    }
}

pub fn emit_report<T: Tabular + Serialize>(report: &T, path: &Path, format: Format) -> Result<()> {
    write_file(path, &render(report, format)?)
}

pub fn read_report<T: Tabular + DeserializeOwned>(path: &Path, format: Format) -> Result<T> {
    let bytes = read_file(path)?;
    match format {
        Format::Csv => from_csv(&bytes),
        Format::Json => from_json(&bytes),
    }
}

/// JSON form of the variance analysis; CSV carries only the per-count rows.
pub fn render_variance(report: &VarianceReport, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Csv => to_csv(&report.rows),
        Format::Json => to_json(report),
    }
}
