use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::select::SelectionBatch;
use crate::error::{Error, Result};

/// One line of selection output. `rank` 0 is the primary pick of a
/// cluster, 1 its alternate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub region_id: u64,
    pub cluster_id: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub g: f64,
    pub rank: u8,
}

pub fn selection_records(batch: &SelectionBatch) -> Vec<SelectionRecord> {
    let mut out = Vec::new();
    for e in &batch.entries {
        out.push(SelectionRecord { region_id: e.region_id, cluster_id: e.cluster_id, x_m: e.center.0, y_m: e.center.1, g: e.g, rank: 0 });
        if let Some(a) = &e.alternate {
            out.push(SelectionRecord { region_id: a.region_id, cluster_id: e.cluster_id, x_m: a.center.0, y_m: a.center.1, g: a.g, rank: 1 });
        }
    }
    out
}

pub fn write_selection_jsonl<W: Write>(mut w: W, batch: &SelectionBatch) -> Result<()> {
    for r in selection_records(batch) {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_selection_jsonl<R: BufRead>(r: R) -> Result<Vec<SelectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SelectionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format { format: "selection", reason: format!("line {}: {e}", i + 1) })?;
        out.push(rec);
    }
    Ok(out)
}

/// Fixed-width table of the primary picks, for terminal output.
pub fn format_summary(batch: &SelectionBatch) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "strategy: {}  selected: {}", batch.strategy, batch.len());
    let _ = writeln!(s, "{:>7} {:>10} {:>14} {:>14} {:>10} {:>10}", "cluster", "region", "x_m", "y_m", "g", "alternate");
    for e in &batch.entries {
        let alt = e.alternate.as_ref().map_or_else(|| "-".to_string(), |a| a.region_id.to_string());
        let _ = writeln!(
            s,
            "{:>7} {:>10} {:>14.1} {:>14.1} {:>10.3e} {:>10}",
            e.cluster_id, e.region_id, e.center.0, e.center.1, e.g, alt
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::select::{Alternate, SelectionEntry, Strategy};
    use super::*;

    #[test]
    fn jsonl_schema_and_round_trip() {
        let batch = SelectionBatch {
            strategy: Strategy::Active,
            entries: vec![SelectionEntry {
                region_id: 4,
                cluster_id: 0,
                center: (10.0, 20.0),
                distance: 0.1,
                g: 0.5,
                alternate: Some(Alternate { region_id: 9, center: (1.0, 2.0), distance: 0.2, g: 0.25 }),
            }],
        };
        let mut buf = Vec::new();
        write_selection_jsonl(&mut buf, &batch).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"region_id":4,"cluster_id":0,"x_m":10.0,"y_m":20.0,"g":0.5,"rank":0}"#);
        let recs = read_selection_jsonl(&buf[..]).unwrap();
        assert_eq!(recs, selection_records(&batch));
        assert_eq!(recs[1].rank, 1);
        assert!(format_summary(&batch).contains("active"));
    }
}
