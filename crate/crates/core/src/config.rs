//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key can also be
//! set from the command line; later settings win.

use std::path::{Path, PathBuf};

use crate::backtest::BacktestConfig;
use crate::error::{Error, Result};
use crate::loan::{MarginSystem, Provenance};
use crate::optimizer::{GridAxis, GridConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub history: usize,
    pub g: usize,
    pub horizon: usize,
    pub n_loans: usize,
    pub alpha: f64,
    pub rate: f64,
    pub loan_rate: f64,
    pub required_m: f64,
    pub required_delta: f64,
    pub required_w: f64,
    pub required_topup: f64,
    /// Grid bounds in hundredths.
    pub m_grid: (u32, u32),
    pub delta_grid: (u32, u32),
    pub w_grid: (u32, u32),
    pub prices_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            history: 800,
            g: 25,
            horizon: 30,
            n_loans: 200,
            alpha: 0.05,
            rate: 0.0,
            loan_rate: 0.0,
            required_m: 0.50,
            required_delta: 0.0,
            required_w: 1.30,
            required_topup: 1.50,
            m_grid: (0, 80),
            delta_grid: (0, 80),
            w_grid: (100, 200),
            prices_dir: None,
            out_dir: None,
            seed: 0,
            threads: None,
            verbosity: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "history",
    "g",
    "horizon",
    "n_loans",
    "alpha",
    "rate",
    "loan_rate",
    "required_m",
    "required_delta",
    "required_w",
    "required_topup",
    "m_min",
    "m_max",
    "delta_min",
    "delta_max",
    "w_min",
    "w_max",
    "prices_dir",
    "out_dir",
    "seed",
    "threads",
    "verbosity",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad value `{value}` for `{key}`")))
}

fn parse_hundredths(key: &str, value: &str) -> Result<u32> {
    let x: f64 = parse(key, value)?;
    let scaled = (x * 100.0).round();
    if !(scaled >= 0.0) || (scaled - x * 100.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "`{key}` must be a non-negative multiple of 0.01, got {value}"
        )));
    }
    Ok(scaled as u32)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("config line {}: expected key=value", idx + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got `{assignment}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "history" => self.history = parse(key, value)?,
            "g" => self.g = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "n_loans" => self.n_loans = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "rate" => self.rate = parse(key, value)?,
            "loan_rate" => self.loan_rate = parse(key, value)?,
            "required_m" => self.required_m = parse(key, value)?,
            "required_delta" => self.required_delta = parse(key, value)?,
            "required_w" => self.required_w = parse(key, value)?,
            "required_topup" => self.required_topup = parse(key, value)?,
            "m_min" => self.m_grid.0 = parse_hundredths(key, value)?,
            "m_max" => self.m_grid.1 = parse_hundredths(key, value)?,
            "delta_min" => self.delta_grid.0 = parse_hundredths(key, value)?,
            "delta_max" => self.delta_grid.1 = parse_hundredths(key, value)?,
            "w_min" => self.w_grid.0 = parse_hundredths(key, value)?,
            "w_max" => self.w_grid.1 = parse_hundredths(key, value)?,
            "prices_dir" => self.prices_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            "verbosity" => self.verbosity = parse(key, value)?,
            other => {
                return Err(Error::InvalidParameter(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridConfig> {
        let grid = GridConfig {
            m: GridAxis::new(self.m_grid.0, self.m_grid.1)?,
            delta: GridAxis::new(self.delta_grid.0, self.delta_grid.1)?,
            w: GridAxis::new(self.w_grid.0, self.w_grid.1)?,
            alpha: self.alpha,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn backtest_config(&self) -> Result<BacktestConfig> {
        let cfg = BacktestConfig {
            history: self.history,
            group_size: self.g,
            horizon: self.horizon,
            n_loans: self.n_loans,
            rate: self.rate,
            loan_rate: self.loan_rate,
            required: MarginSystem::new(
                self.required_m,
                self.required_delta,
                self.required_w,
                self.required_topup,
                Provenance::Required,
            )?,
            grid: self.grid()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as `key=value` lines, in `KEYS` order.
    pub fn to_lines(&self) -> Vec<String> {
        let pct = |x: u32| format!("{:.2}", f64::from(x) / 100.0);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            format!("history={}", self.history),
            format!("g={}", self.g),
            format!("horizon={}", self.horizon),
            format!("n_loans={}", self.n_loans),
            format!("alpha={}", self.alpha),
            format!("rate={}", self.rate),
            format!("loan_rate={}", self.loan_rate),
            format!("required_m={}", self.required_m),
            format!("required_delta={}", self.required_delta),
            format!("required_w={}", self.required_w),
            format!("required_topup={}", self.required_topup),
            format!("m_min={}", pct(self.m_grid.0)),
            format!("m_max={}", pct(self.m_grid.1)),
            format!("delta_min={}", pct(self.delta_grid.0)),
            format!("delta_max={}", pct(self.delta_grid.1)),
            format!("w_min={}", pct(self.w_grid.0)),
            format!("w_max={}", pct(self.w_grid.1)),
            format!("prices_dir={}", path(&self.prices_dir)),
            format!("out_dir={}", path(&self.out_dir)),
            format!("seed={}", self.seed),
            format!(
                "threads={}",
                self.threads.map(|t| t.to_string()).unwrap_or_default()
            ),
            format!("verbosity={}", self.verbosity),
        ]
    }
}
