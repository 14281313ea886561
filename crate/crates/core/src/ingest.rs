//! Loading and validating daily closing-price series.
//!
//! One CSV file per symbol, UTF-8, header `date,close`, ISO-8601 dates.
//! Out-of-order rows are re-sorted (with a warning); duplicate dates and
//! non-positive closes are rejected with the offending data row number.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trading day's close.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub close: f64,
}

/// Ordered daily closes for one symbol. Dates are strictly increasing and
/// every close is positive; "day i" is the i-th observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    symbol: String,
    observations: Vec<Observation>,
}

impl PriceSeries {
    /// Builds a series from observations already in date order.
    pub fn new(symbol: impl Into<String>, observations: Vec<Observation>) -> Result<Self> {
        let symbol = symbol.into();
        for (idx, obs) in observations.iter().enumerate() {
            if !(obs.close > 0.0 && obs.close.is_finite()) {
                return Err(Error::NonPositivePrice {
                    path: symbol.clone(),
                    row: idx + 1,
                    close: obs.close,
                });
            }
            if idx > 0 && observations[idx - 1].date >= obs.date {
                return Err(Error::DuplicateDate {
                    path: symbol.clone(),
                    row: idx + 1,
                    date: obs.date,
                });
            }
        }
        Ok(PriceSeries {
            symbol,
            observations,
        })
    }

    /// Attaches synthetic weekday dates starting 2000-01-03 to a list of closes.
    pub fn from_closes(symbol: impl Into<String>, closes: &[f64]) -> Result<Self> {
        let mut date = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
        let mut observations = Vec::with_capacity(closes.len());
        for &close in closes {
            observations.push(Observation { date, close });
            date = next_weekday(date);
        }
        PriceSeries::new(symbol, observations)
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.close).collect()
    }

    /// Keeps only the first `len` observations.
    pub fn truncated(&self, len: usize) -> PriceSeries {
        PriceSeries {
            symbol: self.symbol.clone(),
            observations: self.observations[..len.min(self.len())].to_vec(),
        }
    }
}

fn next_weekday(date: NaiveDate) -> NaiveDate {
    let mut next = date + Duration::days(1);
    while matches!(next.weekday(), Weekday::Sat | Weekday::Sun) {
        next += Duration::days(1);
    }
    next
}

/// Non-fatal findings while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    Resorted { first_out_of_order_row: usize },
}

impl std::fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IngestWarning::Resorted {
                first_out_of_order_row,
            } => write!(
                f,
                "dates out of order (first at row {first_out_of_order_row}); series re-sorted ascending"
            ),
        }
    }
}

/// Parses `date,close` CSV from a reader. `source` names the input in errors.
pub fn parse_price_csv<R: Read>(
    reader: R,
    symbol: &str,
    source: &str,
) -> Result<(PriceSeries, Vec<IngestWarning>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);

    let headers = rdr.headers().map_err(|_| Error::BadHeader {
        path: source.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "close" {
        return Err(Error::BadHeader {
            path: source.to_string(),
        });
    }

    // (date, close, data row number)
    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let malformed = |message: String| Error::MalformedRow {
            path: source.to_string(),
            row,
            message,
        };
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if record.len() != 2 {
            return Err(malformed(format!("expected 2 fields, found {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date `{}`: {e}", &record[0])))?;
        let close: f64 = record[1]
            .parse()
            .map_err(|_| malformed(format!("bad close `{}`", &record[1])))?;
        if !close.is_finite() {
            return Err(malformed(format!("bad close `{}`", &record[1])));
        }
        if close <= 0.0 {
            return Err(Error::NonPositivePrice {
                path: source.to_string(),
                row,
                close,
            });
        }
        rows.push((date, close, row));
    }

    let mut warnings = Vec::new();
    if let Some(pos) = rows.windows(2).position(|w| w[1].0 < w[0].0) {
        warnings.push(IngestWarning::Resorted {
            first_out_of_order_row: rows[pos + 1].2,
        });
        rows.sort_by_key(|r| r.0);
    }
    if let Some(pos) = rows.windows(2).position(|w| w[1].0 == w[0].0) {
        let (date, _, row) = rows[pos + 1];
        return Err(Error::DuplicateDate {
            path: source.to_string(),
            row: row.max(rows[pos].2),
            date,
        });
    }

    let observations = rows
        .into_iter()
        .map(|(date, close, _)| Observation { date, close })
        .collect();
    Ok((
        PriceSeries {
            symbol: symbol.to_string(),
            observations,
        },
        warnings,
    ))
}

/// Loads one symbol's CSV file. Warnings are logged.
pub fn load_price_series(path: impl AsRef<Path>, symbol: &str) -> Result<PriceSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (series, warnings) = parse_price_csv(file, symbol, &path.display().to_string())?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(series)
}

/// Sorted `*.csv` paths in `dir`; `NoInput` if there are none.
pub fn list_price_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    if paths.is_empty() {
        return Err(Error::NoInput(format!(
            "no .csv files in {}",
            dir.display()
        )));
    }
    paths.sort();
    Ok(paths)
}

/// File stem used as the symbol of a price file.
pub fn symbol_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads every `*.csv` in a directory, symbol = file stem, sorted by symbol.
pub fn load_price_dir(dir: impl AsRef<Path>) -> Result<Vec<PriceSeries>> {
    list_price_files(dir)?
        .iter()
        .map(|p| load_price_series(p, &symbol_of(p)))
        .collect()
}

/// Writes a series back out in the input CSV format.
pub fn write_price_csv<W: Write>(series: &PriceSeries, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "close"])?;
    for obs in &series.observations {
        wtr.write_record([obs.date.format("%Y-%m-%d").to_string(), obs.close.to_string()])?;
    }
    wtr.flush()
        .map_err(|e| Error::io(series.symbol.clone(), e))?;
    Ok(())
}

/// Whether a series is long enough for `n_loans` rolling loans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Sufficiency {
    pub required: usize,
    pub available: usize,
}

impl Sufficiency {
    pub fn is_sufficient(&self) -> bool {
        self.available >= self.required
    }
}

/// A series supports the rolling protocol iff it has at least
/// `history + horizon + n_loans` observations.
pub fn check_window_sufficiency(
    series: &PriceSeries,
    history: usize,
    horizon: usize,
    n_loans: usize,
) -> Sufficiency {
    Sufficiency {
        required: history + horizon + n_loans,
        available: series.len(),
    }
}
