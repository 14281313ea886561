//! Rolling out-of-sample comparison of deduced and required margin systems.
//!
//! For each loan start `t0` the chain is refit on the `history` closes
//! strictly before `t0`, a system is deduced for `P0 = close[t0]`, and both
//! systems are simulated on the next `horizon` closes.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{exact_first_passage, CpnrQuery};
use crate::error::{Error, Result};
use crate::ingest::{check_window_sufficiency, PriceSeries};
use crate::loan::{simulate_loan, stock_proportion, LoanOutcome, LoanSpec, MarginSystem, Provenance};
use crate::markov::{build_state_space, estimate_transition_matrix, TransitionModel};
use crate::optimizer::{deduce_system, GridConfig, MarginTriple};
use crate::report::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub history: usize,
    pub group_size: usize,
    pub horizon: usize,
    pub n_loans: usize,
    /// Daily riskless rate; also the rate used inside CPNR.
    pub rate: f64,
    pub loan_rate: f64,
    pub required: MarginSystem,
    /// Grid and CPNR bound `alpha` for deduced systems.
    pub grid: GridConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            history: 800,
            group_size: 25,
            horizon: 30,
            n_loans: 200,
            rate: 0.0,
            loan_rate: 0.0,
            required: MarginSystem::required(0.0).expect("required system is valid"),
            grid: GridConfig::default(),
        }
    }
}

impl BacktestConfig {
    pub fn alpha(&self) -> f64 {
        self.grid.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if self.history < 2 || self.group_size == 0 || self.horizon == 0 || self.n_loans == 0 {
            return Err(Error::InvalidParameter(
                "need history >= 2 and g, horizon, n_loans >= 1".into(),
            ));
        }
        if !(self.rate >= 0.0 && self.loan_rate >= 0.0) {
            return Err(Error::InvalidParameter("rates must be >= 0".into()));
        }
        self.grid.validate()
    }
}

impl MarginTriple {
    /// Deduced system for this grid point; grid feasibility is exact, so no
    /// floating re-check is applied.
    pub fn to_system(&self) -> MarginSystem {
        MarginSystem {
            m: self.m(),
            delta: self.delta(),
            w: self.w(),
            topup_target: self.w(),
            provenance: Provenance::Deduced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeducedLoan {
    pub system: MarginTriple,
    pub set_size: usize,
    /// CPNR of the selected system under the fitted chain.
    pub model_cpnr: f64,
    /// Exact first-passage CPNR under the same chain (diagnostic).
    pub exact_cpnr: f64,
    pub stock_proportion: Option<f64>,
    pub outcome: LoanOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanRecord {
    pub start_index: usize,
    pub date: NaiveDate,
    pub p0: f64,
    /// Zero-based state of `p0` in the fitted chain.
    pub state: usize,
    pub n_states: usize,
    pub deduced: Option<DeducedLoan>,
    pub required: LoanOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockReport {
    pub symbol: String,
    pub loans: Vec<LoanRecord>,
    /// Negative-return frequency over loans with a deduced system.
    pub neg_freq_deduced: f64,
    pub neg_freq_required: f64,
    /// Negative returns over loans that received a call.
    pub cond_neg_freq_deduced: f64,
    pub cond_neg_freq_required: f64,
    pub passed: bool,
    /// Loans with at least one call.
    pub n_calls_deduced: usize,
    pub n_calls_required: usize,
    /// Start dates where the indifference set was empty.
    pub infeasible_dates: usize,
    pub initial_ratio: Option<Summary>,
    pub maintenance_ratio: Option<Summary>,
    pub stock_proportion: Option<Summary>,
    pub cost_deduced: Option<Summary>,
    pub cost_required: Option<Summary>,
}

/// Builds the state space and one-step matrix from `window`.
pub fn fit_model(window: &[f64], group_size: usize) -> Result<TransitionModel> {
    let space = build_state_space(window, group_size)?;
    estimate_transition_matrix(window, &space)
}

/// Loan start indices: the last `n_loans` days that have `history` prior
/// closes and `horizon` later closes.
pub fn loan_starts(len: usize, cfg: &BacktestConfig) -> std::ops::Range<usize> {
    let end = len.saturating_sub(cfg.horizon);
    end.saturating_sub(cfg.n_loans)..end
}

fn run_loan(closes: &[f64], t0: usize, date: NaiveDate, cfg: &BacktestConfig) -> Result<LoanRecord> {
    let window = &closes[t0 - cfg.history..t0];
    let model = fit_model(window, cfg.group_size)?;
    let p0 = closes[t0];
    let h = model.space().state_of(p0);
    let path = &closes[t0 + 1..=t0 + cfg.horizon];

    let deduced = match deduce_system(&model, h, p0, cfg.rate, cfg.horizon, &cfg.grid)? {
        None => None,
        Some(d) => {
            if !d.triple.is_feasible() || !(d.cpnr <= cfg.alpha()) {
                return Err(Error::Invariant(format!(
                    "deduced system {:?} at index {t0} violates 1+m>=w or CPNR<=alpha (cpnr {})",
                    d.triple, d.cpnr
                )));
            }
            let system = d.triple.to_system();
            let spec = LoanSpec::new(p0, d.triple.cash(p0), system.delta, cfg.horizon, cfg.rate, cfg.loan_rate)?;
            let exact = exact_first_passage(&CpnrQuery {
                model: &model,
                h,
                p0,
                q0: spec.q0,
                delta: spec.delta,
                w: system.w,
                rate: cfg.rate,
                horizon: cfg.horizon,
            })?;
            Some(DeducedLoan {
                system: d.triple,
                set_size: d.set_size,
                model_cpnr: d.cpnr,
                exact_cpnr: exact.cpnr,
                stock_proportion: stock_proportion(spec.q0, spec.delta, p0).ok(),
                outcome: simulate_loan(&spec, &system, path)?,
            })
        }
    };

    let required_spec = LoanSpec::for_system(&cfg.required, p0, cfg.horizon, cfg.rate, cfg.loan_rate)?;
    let required = simulate_loan(&required_spec, &cfg.required, path)?;

    Ok(LoanRecord {
        start_index: t0,
        date,
        p0,
        state: h,
        n_states: model.n_states(),
        deduced,
        required,
    })
}

fn frequency(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn run_stock_backtest(series: &PriceSeries, cfg: &BacktestConfig) -> Result<StockReport> {
    cfg.validate()?;
    let sufficiency = check_window_sufficiency(series, cfg.history, cfg.horizon, cfg.n_loans);
    if !sufficiency.is_sufficient() {
        return Err(Error::InsufficientData {
            required: sufficiency.required,
            available: sufficiency.available,
        });
    }
    let closes = series.closes();
    let dates: Vec<NaiveDate> = series.observations().iter().map(|o| o.date).collect();
    let starts: Vec<usize> = loan_starts(closes.len(), cfg).collect();
    let loans: Vec<LoanRecord> = starts
        .par_iter()
        .map(|&t0| run_loan(&closes, t0, dates[t0], cfg))
        .collect::<Result<_>>()?;
    Ok(summarize(series.symbol(), loans, cfg))
}

/// Aggregates per-loan records into a stock report.
pub fn summarize(symbol: &str, loans: Vec<LoanRecord>, cfg: &BacktestConfig) -> StockReport {
    let deduced: Vec<&DeducedLoan> = loans.iter().filter_map(|l| l.deduced.as_ref()).collect();
    let count = |outcomes: &mut dyn Iterator<Item = &LoanOutcome>| {
        let mut negative = 0;
        let mut called = 0;
        let mut total = 0;
        for o in outcomes {
            total += 1;
            if o.tau.is_some() {
                called += 1;
            }
            if o.negative {
                negative += 1;
            }
        }
        (negative, called, total)
    };
    let (neg_d, called_d, total_d) = count(&mut deduced.iter().map(|d| &d.outcome));
    let (neg_r, called_r, total_r) = count(&mut loans.iter().map(|l| &l.required));
    let neg_freq_deduced = frequency(neg_d, total_d);

    StockReport {
        symbol: symbol.to_string(),
        neg_freq_deduced,
        neg_freq_required: frequency(neg_r, total_r),
        cond_neg_freq_deduced: frequency(neg_d, called_d),
        cond_neg_freq_required: frequency(neg_r, called_r),
        passed: neg_freq_deduced <= cfg.alpha(),
        n_calls_deduced: deduced.iter().filter(|d| d.outcome.n_calls > 0).count(),
        n_calls_required: loans.iter().filter(|l| l.required.n_calls > 0).count(),
        infeasible_dates: loans.len() - deduced.len(),
        initial_ratio: Summary::of(deduced.iter().map(|d| d.system.m())),
        maintenance_ratio: Summary::of(deduced.iter().map(|d| d.system.w())),
        stock_proportion: Summary::of(deduced.iter().filter_map(|d| d.stock_proportion)),
        cost_deduced: Summary::of(deduced.iter().map(|d| d.outcome.cost)),
        cost_required: Summary::of(loans.iter().map(|l| l.required.cost)),
        loans,
    }
}

/// Splits reports into those that passed the negative-frequency test and those that did not.
pub fn pass_filter(reports: Vec<StockReport>) -> (Vec<StockReport>, Vec<StockReport>) {
    reports.into_iter().partition(|r| r.passed)
}
