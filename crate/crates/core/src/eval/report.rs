use crate::bilevel::{TrainMode, TrainRunRecord};
use crate::{Error, Result};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

/// One method row: mean final accuracy (percent) per test set over its runs.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub mode: TrainMode,
    pub runs: usize,
    pub cells: Vec<Option<f64>>,
    /// Set on every cell equal to its column's maximum.
    pub is_max: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.2}"))
}

impl ReportTable {
    /// `method,runs,<set>,<set>_max,...` with percentages to two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,runs");
        for c in &self.columns {
            let _ = write!(out, ",{c},{c}_max");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.mode.label(), r.runs);
            for (v, m) in r.cells.iter().zip(&r.is_max) {
                let _ = write!(out, ",{},{}", cell(*v), u8::from(*m));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned plain text; column maxima carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header = alloc::vec![String::from("method")];
        header.extend(self.columns.iter().cloned());
        grid.push(header);
        for r in &self.rows {
            let mut line = alloc::vec![String::from(r.mode.label())];
            for (v, m) in r.cells.iter().zip(&r.is_max) {
                let mut s = v.map_or_else(|| String::from("-"), |v| format!("{v:.2}"));
                if *m {
                    s.push('*');
                }
                line.push(s);
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &grid {
            for (c, (s, w)) in row.iter().zip(&widths).enumerate() {
                if c == 0 {
                    let _ = write!(out, "{s:<w$}");
                } else {
                    let _ = write!(out, "  {s:>w$}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Groups runs by mode and averages each test set's final accuracy.
///
/// Rows follow the order `L_ch`, `L_ch+L_rh`, `OSSL`; columns follow the
/// first record's test sets, with any further names appended in order.
pub fn report_table(records: &[TrainRunRecord]) -> Result<ReportTable> {
    if records.is_empty() {
        return Err(Error::InvalidArgument {
            op: "report_table",
            reason: "no run records".into(),
        });
    }
    let mut columns: Vec<String> = Vec::new();
    for r in records {
        for n in &r.test_names {
            if !columns.contains(n) {
                columns.push(n.clone());
            }
        }
    }
    let mut rows = Vec::new();
    for mode in TrainMode::ALL {
        let runs: Vec<&TrainRunRecord> = records.iter().filter(|r| r.mode == mode).collect();
        if runs.is_empty() {
            continue;
        }
        let cells = columns
            .iter()
            .map(|col| {
                let vals: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| {
                        let i = r.test_names.iter().position(|n| n == col)?;
                        r.final_test_acc()[i]
                    })
                    .collect();
                (!vals.is_empty()).then(|| 100.0 * vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        rows.push(TableRow {
            mode,
            runs: runs.len(),
            cells,
            is_max: Vec::new(),
        });
    }
    for c in 0..columns.len() {
        // Compare at display precision so a flagged cell is visibly the largest.
        let shown = |v: f64| libm::round(v * 100.0) as i64;
        let best = rows.iter().filter_map(|r| r.cells[c]).map(shown).max();
        for r in &mut rows {
            let flag = matches!((r.cells[c], best), (Some(v), Some(b)) if shown(v) == b);
            r.is_max.push(flag);
        }
    }
    Ok(ReportTable { columns, rows })
}
