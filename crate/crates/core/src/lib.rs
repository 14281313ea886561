//! Margin-loan risk engine.
//!
//! Computes the conditional probability of negative return (CPNR) for margin
//! loans collateralized by cash plus a fraction of the purchased stock, under
//! a Markov chain fitted to daily closes; derives risk-constrained margin
//! systems from it; and backtests them against the exchange-required system.
//!
//! Module map:
//! - [`ingest`]: price CSV loading and window checks
//! - [`markov`]: state space, transition estimation, matrix powers
//! - [`loan`]: deterministic loan ledger (calls, liquidation, top-ups)
//! - [`engine`]: CPNR recursion; [`oracle`]: independent nested-loop check
//! - [`optimizer`]: indifference set and least-squares selection
//! - [`backtest`], [`report`]: rolling out-of-sample protocol and tables

pub mod backtest;
pub mod config;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod loan;
pub mod markov;
pub mod optimizer;
pub mod oracle;
pub mod report;
pub mod synth;

pub use backtest::{run_stock_backtest, BacktestConfig, LoanRecord, StockReport};
pub use engine::{cpnr, exact_first_passage, CpnrEngine, CpnrQuery, CpnrResult};
pub use error::{Error, Result};
pub use ingest::{load_price_series, PriceSeries};
pub use loan::{LoanOutcome, LoanSpec, MarginSystem};
pub use markov::{build_state_space, estimate_transition_matrix, StateSpace, TransitionModel};
pub use optimizer::{enumerate_indifference_set, select_optimal, GridConfig, MarginTriple};
pub use oracle::cpnr_oracle;
