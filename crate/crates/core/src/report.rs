//! Quantile summaries and the five cross-stock summary tables.
//!
//! Quantiles use the lower empirical rule: the level-`q` quantile of `N`
//! sorted values is the order statistic at position `ceil(q·N)` (1-based).
//! Levels are integer percents so the position is computed exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backtest::StockReport;
use crate::error::{Error, Result};

pub const QUANTILE_RULE: &str = "lower empirical: order statistic ceil(q*N)";

/// Quantile rows of the ratio and cost tables.
pub const STAT_LEVELS: [u32; 9] = [20, 30, 40, 50, 60, 70, 80, 90, 95];
/// Quantile columns of the ratio and cost tables.
pub const TABLE_LEVELS: [u32; 4] = [70, 80, 90, 95];
/// Quantile columns of the call-count table.
pub const CALL_LEVELS: [u32; 6] = [30, 50, 80, 90, 95, 99];

/// Lower empirical quantile of already-sorted values at `pct` percent.
pub fn quantile_sorted(sorted: &[f64], pct: u32) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let pos = (pct as usize * n).div_ceil(100).clamp(1, n);
    sorted[pos - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub quantiles: Vec<QuantilePoint>,
}

impl Summary {
    /// min, max, mean and the `STAT_LEVELS` quantiles; `None` for no values.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Some(Summary {
            count: v.len(),
            min: v[0],
            max: v[v.len() - 1],
            mean,
            quantiles: STAT_LEVELS
                .iter()
                .map(|&pct| QuantilePoint {
                    level: f64::from(pct) / 100.0,
                    value: quantile_sorted(&v, pct),
                })
                .collect(),
        })
    }

    /// Row statistics in table order: minimum, maximum, mean, then quantiles.
    fn row_stats(&self) -> Vec<f64> {
        let mut out = vec![self.min, self.max, self.mean];
        out.extend(self.quantiles.iter().map(|q| q.value));
        out
    }
}

fn row_labels() -> Vec<String> {
    let mut labels = vec!["minimum".to_string(), "maximum".to_string(), "mean".to_string()];
    labels.extend(STAT_LEVELS.iter().map(|p| format!("{:.2}", f64::from(*p) / 100.0)));
    labels
}

/// min, max, mean, then the given quantile levels.
fn column_stats(values: &[f64], levels: &[u32]) -> Vec<f64> {
    if values.is_empty() {
        return vec![f64::NAN; 3 + levels.len()];
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = vec![v[0], v[v.len() - 1], v.iter().sum::<f64>() / v.len() as f64];
    out.extend(levels.iter().map(|&pct| quantile_sorted(&v, pct)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// `deduced` / `required` for tables with one row per system.
    pub system: Option<String>,
    pub values: Vec<f64>,
    /// Relative difference of the 0.95 column, deduced vs required.
    pub rd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    /// Stocks contributing to the table.
    pub n_stocks: usize,
}

impl Table {
    pub fn has_system_column(&self) -> bool {
        self.rows.iter().any(|r| r.system.is_some())
    }

    pub fn has_rd_column(&self) -> bool {
        self.rows.iter().any(|r| r.rd.is_some())
    }

    /// CSV with `#`-prefixed metadata lines first.
    pub fn write_csv<W: Write>(&self, mut writer: W, metadata: &[String]) -> Result<()> {
        for line in metadata {
            writeln!(writer, "# {line}").map_err(|e| Error::io(&self.name, e))?;
        }
        writeln!(writer, "# quantile_rule={QUANTILE_RULE}").map_err(|e| Error::io(&self.name, e))?;
        writeln!(writer, "# n_stocks={}", self.n_stocks).map_err(|e| Error::io(&self.name, e))?;
        let mut wtr = csv::Writer::from_writer(writer);
        let system = self.has_system_column();
        let rd = self.has_rd_column();
        let mut header = vec!["statistic".to_string()];
        if system {
            header.push("system".into());
        }
        header.extend(self.columns.iter().cloned());
        if rd {
            header.push("RD".into());
        }
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone()];
            if system {
                rec.push(row.system.clone().unwrap_or_default());
            }
            rec.extend(row.values.iter().map(|v| format!("{v:.4}")));
            if rd {
                rec.push(row.rd.map(|v| format!("{v:.4}")).unwrap_or_default());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(&self.name, e))?;
        Ok(())
    }
}

fn level_columns(extra: &[u32]) -> Vec<String> {
    let mut cols = vec!["min".to_string(), "max".to_string(), "mean".to_string()];
    cols.extend(extra.iter().map(|p| format!("{:.2}", f64::from(*p) / 100.0)));
    cols
}

/// Cross-stock table for one per-stock summary: each row is a per-stock
/// statistic, each column its distribution across stocks.
fn ratio_table(name: &str, title: &str, summaries: &[&Summary]) -> Table {
    let rows = row_labels()
        .into_iter()
        .enumerate()
        .map(|(idx, label)| {
            let values: Vec<f64> = summaries.iter().map(|s| s.row_stats()[idx]).collect();
            TableRow {
                label,
                system: None,
                values: column_stats(&values, &TABLE_LEVELS),
                rd: None,
            }
        })
        .collect();
    Table {
        name: name.into(),
        title: title.into(),
        columns: level_columns(&TABLE_LEVELS),
        rows,
        n_stocks: summaries.len(),
    }
}

fn cost_table(reports: &[StockReport]) -> Table {
    let deduced: Vec<&Summary> = reports.iter().filter_map(|r| r.cost_deduced.as_ref()).collect();
    let required: Vec<&Summary> = reports.iter().filter_map(|r| r.cost_required.as_ref()).collect();
    let last = TABLE_LEVELS.len() + 2;
    let mut rows = Vec::new();
    for (idx, label) in row_labels().into_iter().enumerate() {
        let d = column_stats(&deduced.iter().map(|s| s.row_stats()[idx]).collect::<Vec<_>>(), &TABLE_LEVELS);
        let r = column_stats(&required.iter().map(|s| s.row_stats()[idx]).collect::<Vec<_>>(), &TABLE_LEVELS);
        let rd = (d[last] - r[last]) / r[last];
        rows.push(TableRow {
            label: label.clone(),
            system: Some("deduced".into()),
            values: d,
            rd: Some(rd),
        });
        rows.push(TableRow {
            label,
            system: Some("required".into()),
            values: r,
            rd: None,
        });
    }
    Table {
        name: "table5_cost".into(),
        title: "Costs of margin loans under the deduced and the required margin systems".into(),
        columns: level_columns(&TABLE_LEVELS),
        rows,
        n_stocks: reports.len(),
    }
}

fn calls_table(reports: &[StockReport]) -> Table {
    let required: Vec<f64> = reports.iter().map(|r| r.n_calls_required as f64).collect();
    let deduced: Vec<f64> = reports.iter().map(|r| r.n_calls_deduced as f64).collect();
    Table {
        name: "table4_calls".into(),
        title: "Numbers of loans with at least one margin call".into(),
        columns: level_columns(&CALL_LEVELS),
        rows: vec![
            TableRow {
                label: "Required".into(),
                system: None,
                values: column_stats(&required, &CALL_LEVELS),
                rd: None,
            },
            TableRow {
                label: "Deduced".into(),
                system: None,
                values: column_stats(&deduced, &CALL_LEVELS),
                rd: None,
            },
        ],
        n_stocks: reports.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTables {
    pub tables: Vec<Table>,
}

pub const TABLE_FILES: [&str; 5] = [
    "table1_initial",
    "table2_maintenance",
    "table3_proportion",
    "table4_calls",
    "table5_cost",
];

/// Builds the five summary tables over the given stock reports.
pub fn aggregate_reports(reports: &[StockReport]) -> Result<SummaryTables> {
    if reports.is_empty() {
        return Err(Error::NoInput("no stock reports to aggregate".into()));
    }
    let pick = |f: fn(&StockReport) -> Option<&Summary>| -> Vec<&Summary> {
        reports.iter().filter_map(f).collect()
    };
    let tables = vec![
        ratio_table(
            TABLE_FILES[0],
            "Quantile analysis of the initial margin ratios under the deduced margin system",
            &pick(|r| r.initial_ratio.as_ref()),
        ),
        ratio_table(
            TABLE_FILES[1],
            "Quantile analysis of the maintenance margin ratios under the deduced margin system",
            &pick(|r| r.maintenance_ratio.as_ref()),
        ),
        ratio_table(
            TABLE_FILES[2],
            "Quantile analysis of the proportions of stock under the deduced margin system",
            &pick(|r| r.stock_proportion.as_ref()),
        ),
        calls_table(reports),
        cost_table(reports),
    ];
    Ok(SummaryTables { tables })
}

impl SummaryTables {
    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `<name>.csv` for every table into `dir`.
    pub fn write_dir(&self, dir: &Path, metadata: &[String]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for table in &self.tables {
            let path = dir.join(format!("{}.csv", table.name));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            table.write_csv(std::io::BufWriter::new(file), metadata)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_quantile_rule() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile_sorted(&v, 95), 95.0);
        assert_eq!(quantile_sorted(&v, 20), 20.0);
        // brute order-statistic count: smallest x with #{v <= x} >= q N
        for pct in [1u32, 20, 33, 50, 70, 99, 100] {
            for n in 1..40usize {
                let v: Vec<f64> = (1..=n).map(|x| x as f64).collect();
                let expected = v
                    .iter()
                    .copied()
                    .find(|&x| 100 * v.iter().filter(|&&y| y <= x).count() >= pct as usize * n)
                    .unwrap();
                assert_eq!(quantile_sorted(&v, pct), expected, "pct {pct} n {n}");
            }
        }
    }

    #[test]
    fn summary_of_single_value_is_degenerate() {
        let s = Summary::of([3.5]).unwrap();
        assert_eq!((s.min, s.max, s.mean), (3.5, 3.5, 3.5));
        assert!(s.quantiles.iter().all(|q| q.value == 3.5));
        assert!(Summary::of(std::iter::empty()).is_none());
    }

    #[test]
    fn column_stats_mean() {
        let c = column_stats(&[10.0, 20.0], &CALL_LEVELS);
        assert_eq!(c[2], 15.0);
        assert_eq!(c[0], 10.0);
        assert_eq!(c[1], 20.0);
    }
}
