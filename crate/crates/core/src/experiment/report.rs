use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::run::{EvalReport, SummaryRow};
use crate::error::Result;

pub fn write_report_json<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

pub fn read_report_json<R: Read>(r: R) -> Result<EvalReport> {
    Ok(serde_json::from_reader(r)?)
}

/// One row per (strategy, budget).
pub fn write_summary_csv<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for row in &report.summary {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub method: String,
    pub percentile: f64,
    pub threshold: f64,
    pub retained: usize,
    pub retained_mse: f64,
}

/// Calibration curves in long format for external plotting.
pub fn write_calibration_csv<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if let Some(cal) = &report.calibration {
        for (method, curve) in [("ensemble", &cal.ensemble), ("mc_dropout", &cal.mc_dropout)] {
            for p in curve {
                wr.serialize(CalibrationRow {
                    method: method.to_string(),
                    percentile: p.percentile,
                    threshold: p.threshold,
                    retained: p.retained,
                    retained_mse: p.retained_mse,
                })?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}
