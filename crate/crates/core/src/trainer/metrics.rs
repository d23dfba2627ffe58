//! Metric records, sinks, CSV encoding and run summaries.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CSV_HEADER: &str = "run_id,epoch,update,mse,ma_e,cl";

/// `update` value marking an epoch aggregate row.
pub const EPOCH_ROW: i64 = -1;

/// Training is aborted once MA-E exceeds this value.
pub const MA_E_ABORT: f64 = 1e12;

/// Number of consecutive epoch-over-epoch MA-E increases that, together
/// with [`GROWTH_FACTOR`], flag a run as diverging.
pub const GROWTH_WINDOW: usize = 5;

/// Minimum ratio of current to smallest epoch MA-E for the growth detector.
pub const GROWTH_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub epoch: usize,
    /// Update index within the epoch, or [`EPOCH_ROW`] for aggregates.
    pub update: i64,
    pub mse: f64,
    pub ma_e: f64,
    pub cl: f64,
}

impl MetricsRecord {
    pub fn is_epoch_aggregate(&self) -> bool {
        self.update == EPOCH_ROW
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.16e},{:.16e},{:.16e}",
            self.run_id, self.epoch, self.update, self.mse, self.ma_e, self.cl
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!(
                "expected 6 columns, got {}: '{line}'",
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Format(format!("bad {what} in '{line}'"));
        Ok(Self {
            run_id: fields[0].to_string(),
            epoch: fields[1].parse().map_err(|_| bad("epoch"))?,
            update: fields[2].parse().map_err(|_| bad("update"))?,
            mse: fields[3].parse().map_err(|_| bad("mse"))?,
            ma_e: fields[4].parse().map_err(|_| bad("ma_e"))?,
            cl: fields[5].parse().map_err(|_| bad("cl"))?,
        })
    }
}

/// Consumer of training records. One producer per sink.
pub trait MetricsSink {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards every record.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _rec: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Writes records as CSV rows after a header line.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", rec.to_csv_row())?;
        Ok(())
    }
}

/// Parses a metrics CSV, header included.
pub fn read_csv<R: BufRead>(reader: R) -> Result<Vec<MetricsRecord>> {
    let mut lines = reader.lines();
    match lines.next() {
        Some(header) => {
            let header = header?;
            if header.trim_end() != CSV_HEADER {
                return Err(Error::Format(format!("unexpected CSV header '{header}'")));
            }
        }
        None => return Err(Error::Format("empty CSV".into())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(MetricsRecord::parse_csv_row(&line)?);
    }
    Ok(out)
}

/// Mean absolute value of the embedding, `‖E‖₁ / (F·N)`.
pub fn ma_e(e: &Matrix) -> f64 {
    e.as_slice().iter().map(|v| v.abs()).sum::<f64>() / e.len() as f64
}

/// True when a single update should stop the run.
pub fn is_fatal(loss: f64, ma_e: f64) -> bool {
    !loss.is_finite() || !ma_e.is_finite() || ma_e > MA_E_ABORT
}

/// Sustained-growth detector on the epoch-mean MA-E series: the last
/// [`GROWTH_WINDOW`] epoch-to-epoch changes are all increases and the latest
/// value exceeds [`GROWTH_FACTOR`] times the smallest value seen so far.
pub fn growth_detected(epoch_ma_e: &[f64]) -> bool {
    if epoch_ma_e.len() <= GROWTH_WINDOW {
        return false;
    }
    let tail = &epoch_ma_e[epoch_ma_e.len() - GROWTH_WINDOW - 1..];
    let rising = tail.windows(2).all(|w| w[1] > w[0]);
    let min = epoch_ma_e.iter().copied().fold(f64::INFINITY, f64::min);
    let last = *epoch_ma_e.last().unwrap();
    rising && last > GROWTH_FACTOR * min
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    #[serde(with = "nan_as_null")]
    pub final_mse: f64,
    #[serde(with = "nan_as_null")]
    pub min_mse: f64,
    #[serde(with = "nan_as_null")]
    pub final_ma_e: f64,
    #[serde(with = "nan_as_null")]
    pub max_ma_e: f64,
    pub diverged: bool,
    pub epochs_completed: usize,
    pub wall_time_seconds: f64,
    /// Inference MSE with the hard quantizer, when evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_mse: Option<f64>,
    /// Inference MSE through the training-time noise bridge (noise kinds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_mse_noise: Option<f64>,
}

/// JSON has no NaN; summaries of runs without a completed epoch carry NaN
/// metrics, stored as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl RunSummary {
    /// Rebuilds the metric fields of a summary from a run's records. Wall
    /// time and evaluation results are not part of the stream and are left
    /// at zero / `None`.
    pub fn from_records(run_id: &str, records: &[MetricsRecord]) -> Result<Self> {
        let epochs: Vec<&MetricsRecord> = records
            .iter()
            .filter(|r| r.run_id == run_id && r.is_epoch_aggregate())
            .collect();
        let fatal = records
            .iter()
            .filter(|r| r.run_id == run_id && !r.is_epoch_aggregate())
            .any(|r| is_fatal(r.mse, r.ma_e) || !r.cl.is_finite());
        let ma_e_series: Vec<f64> = epochs.iter().map(|r| r.ma_e).collect();
        let growth =
            (GROWTH_WINDOW + 1..=ma_e_series.len()).any(|k| growth_detected(&ma_e_series[..k]));
        let last = epochs.last();
        Ok(Self {
            run_id: run_id.to_string(),
            final_mse: last.map_or(f64::NAN, |r| r.mse),
            min_mse: epochs.iter().map(|r| r.mse).fold(f64::NAN, f64::min),
            final_ma_e: last.map_or(f64::NAN, |r| r.ma_e),
            max_ma_e: epochs.iter().map(|r| r.ma_e).fold(f64::NAN, f64::max),
            diverged: fatal || growth,
            epochs_completed: epochs.len(),
            wall_time_seconds: 0.0,
            eval_mse: None,
            eval_mse_noise: None,
        })
    }

    /// Equality on the fields derivable from the metrics stream, with a
    /// relative tolerance for floats.
    pub fn metrics_match(&self, other: &Self, rel_tol: f64) -> bool {
        let close = |a: f64, b: f64| {
            (a.is_nan() && b.is_nan()) || a == b || (a - b).abs() <= rel_tol * a.abs().max(b.abs())
        };
        self.run_id == other.run_id
            && close(self.final_mse, other.final_mse)
            && close(self.min_mse, other.min_mse)
            && close(self.final_ma_e, other.final_ma_e)
            && close(self.max_ma_e, other.max_ma_e)
            && self.diverged == other.diverged
            && self.epochs_completed == other.epochs_completed
    }
}
