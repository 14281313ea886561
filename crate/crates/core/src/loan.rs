//! Margin-loan arithmetic for one share bought on credit, collateralized by
//! cash `q0` plus a fraction `delta` of the purchased stock.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a single margin loan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoanSpec {
    /// Purchase price on day 0.
    pub p0: f64,
    /// Cash collateral deposited on day 0.
    pub q0: f64,
    /// Fraction of one share pledged as collateral.
    pub delta: f64,
    /// Loan horizon in trading days.
    pub horizon: usize,
    /// Daily riskless rate earned by cash collateral.
    pub rate: f64,
    /// Daily loan rate.
    pub loan_rate: f64,
}

impl LoanSpec {
    pub fn new(
        p0: f64,
        q0: f64,
        delta: f64,
        horizon: usize,
        rate: f64,
        loan_rate: f64,
    ) -> Result<Self> {
        let spec = LoanSpec {
            p0,
            q0,
            delta,
            horizon,
            rate,
            loan_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Loan whose cash leg is implied by a margin system: `q0 = (m - delta) * p0`.
    pub fn for_system(
        system: &MarginSystem,
        p0: f64,
        horizon: usize,
        rate: f64,
        loan_rate: f64,
    ) -> Result<Self> {
        LoanSpec::new(
            p0,
            (system.m - system.delta).max(0.0) * p0,
            system.delta,
            horizon,
            rate,
            loan_rate,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return Err(Error::InvalidParameter(format!("p0 must be positive, got {}", self.p0)));
        }
        if !(self.q0 >= 0.0 && self.q0.is_finite()) {
            return Err(Error::InvalidParameter(format!("q0 must be >= 0, got {}", self.q0)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in [0,1], got {}",
                self.delta
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if !(self.rate >= 0.0 && self.loan_rate >= 0.0) {
            return Err(Error::InvalidParameter("rates must be >= 0".into()));
        }
        Ok(())
    }

    fn loan_value(&self, day: usize) -> f64 {
        self.p0 * (1.0 + self.loan_rate).powi(day as i32)
    }

    fn cash_growth(&self, days: usize) -> f64 {
        (1.0 + self.rate).powi(days as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Required,
    Deduced,
}

/// Initial ratio `m`, stock fraction `delta`, maintenance ratio `w`, and the
/// ratio a top-up must restore after a call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSystem {
    pub m: f64,
    pub delta: f64,
    pub w: f64,
    pub topup_target: f64,
    pub provenance: Provenance,
}

impl MarginSystem {
    pub fn new(m: f64, delta: f64, w: f64, topup_target: f64, provenance: Provenance) -> Result<Self> {
        let system = MarginSystem {
            m,
            delta,
            w,
            topup_target,
            provenance,
        };
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidParameter(format!("delta {delta} outside [0,1]")));
        }
        if m < delta {
            return Err(Error::InvalidParameter(format!(
                "initial ratio {m} below stock fraction {delta}"
            )));
        }
        if !check_adequacy(m, w) {
            return Err(Error::InvalidParameter(format!(
                "initial margin inadequate: 1 + {m} < {w}"
            )));
        }
        if topup_target < w {
            return Err(Error::InvalidParameter(format!(
                "top-up target {topup_target} below maintenance ratio {w}"
            )));
        }
        Ok(system)
    }

    /// Exchange-required system: 50% initial, 130% maintenance, top-ups to 150%.
    pub fn required(delta: f64) -> Result<Self> {
        MarginSystem::new(0.50, delta, 1.30, 1.50, Provenance::Required)
    }

    /// A deduced system restores the ratio to `w` itself after a call.
    pub fn deduced(m: f64, delta: f64, w: f64) -> Result<Self> {
        MarginSystem::new(m, delta, w, w, Provenance::Deduced)
    }
}

/// Collateral value over purchased-stock value on the trade date.
pub fn initial_margin_ratio(q0: f64, delta: f64, p0: f64) -> Result<f64> {
    if !(p0 > 0.0) {
        return Err(Error::InvalidParameter(format!("p0 must be positive, got {p0}")));
    }
    Ok((q0 + delta * p0) / p0)
}

/// The maintenance ratio on the trade date is `m0 + 1`; it must reach `w`.
pub fn check_adequacy(m0: f64, w: f64) -> bool {
    m0 + 1.0 >= w
}

/// Required margin and remaining margin on one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub required: f64,
    pub remaining: f64,
}

impl Margins {
    pub fn is_call(&self) -> bool {
        self.remaining <= 0.0
    }
}

/// `required = w·P0(1+R)^i − (1+δ)P_i` and `remaining = cash_value − required`.
pub fn margins_at(spec: &LoanSpec, w: f64, day: usize, price: f64, cash_value: f64) -> Margins {
    let required = w * spec.loan_value(day) - (1.0 + spec.delta) * price;
    Margins {
        required,
        remaining: cash_value - required,
    }
}

/// Outcome when the customer defaults at the first call and the position is
/// liquidated the next trading day (capped at maturity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultOutcome {
    pub tau: Option<usize>,
    pub tau_star: Option<usize>,
    /// Liquidation return, or the terminal return when no call happened.
    pub default_return: f64,
    /// Liquidation return is non-positive. Always false without a call.
    pub negative: bool,
}

fn check_path(spec: &LoanSpec, path: &[f64]) -> Result<()> {
    if path.len() != spec.horizon {
        return Err(Error::InvalidParameter(format!(
            "path has {} prices, horizon is {}",
            path.len(),
            spec.horizon
        )));
    }
    Ok(())
}

/// Broker's return from liquidating on `day`.
pub fn liquidation_return(spec: &LoanSpec, day: usize, price: f64) -> f64 {
    spec.q0 * spec.cash_growth(day) + (1.0 + spec.delta) * price - spec.loan_value(day)
}

/// Walks `path` (prices on days 1..=T) until the first day with non-positive
/// remaining margin.
pub fn simulate_default_scenario(spec: &LoanSpec, w: f64, path: &[f64]) -> Result<DefaultOutcome> {
    check_path(spec, path)?;
    let horizon = spec.horizon;
    let tau = (1..=horizon).find(|&day| {
        let cash = spec.q0 * spec.cash_growth(day);
        margins_at(spec, w, day, path[day - 1], cash).is_call()
    });
    Ok(match tau {
        Some(tau) => {
            let tau_star = (tau + 1).min(horizon);
            let ret = liquidation_return(spec, tau_star, path[tau_star - 1]);
            DefaultOutcome {
                tau: Some(tau),
                tau_star: Some(tau_star),
                default_return: ret,
                negative: ret <= 0.0,
            }
        }
        None => DefaultOutcome {
            tau: None,
            tau_star: None,
            default_return: liquidation_return(spec, horizon, path[horizon - 1]),
            negative: false,
        },
    })
}

/// Outcome when the customer meets every call with fresh cash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopUpOutcome {
    /// One entry per day 1..=T: whether a call was issued.
    pub calls: Vec<bool>,
    /// Cash deposited on each day (zero on days without a call).
    pub topups: Vec<f64>,
    /// Terminal value of all cash deposited plus the pledged stock at P_T.
    pub cost: f64,
}

impl TopUpOutcome {
    pub fn n_calls(&self) -> usize {
        self.calls.iter().filter(|&&c| c).count()
    }
}

/// Walks the path depositing, on each call day, the cash that lifts the
/// maintenance ratio back to `system.topup_target`.
pub fn simulate_topup_scenario(
    spec: &LoanSpec,
    system: &MarginSystem,
    path: &[f64],
) -> Result<TopUpOutcome> {
    check_path(spec, path)?;
    let mut cash = spec.q0;
    let mut calls = Vec::with_capacity(spec.horizon);
    let mut topups = Vec::with_capacity(spec.horizon);
    for (idx, &price) in path.iter().enumerate() {
        let day = idx + 1;
        cash *= 1.0 + spec.rate;
        let margins = margins_at(spec, system.w, day, price, cash);
        if margins.is_call() {
            let stock = (1.0 + spec.delta) * price;
            let mut amount = system.topup_target * spec.loan_value(day) - (cash + stock);
            if amount < 0.0 {
                log::warn!("negative top-up {amount} on day {day} clamped to zero");
                amount = 0.0;
            }
            cash += amount;
            calls.push(true);
            topups.push(amount);
        } else {
            calls.push(false);
            topups.push(0.0);
        }
    }
    let cost = cash + spec.delta * path[spec.horizon - 1];
    Ok(TopUpOutcome {
        calls,
        topups,
        cost,
    })
}

/// Share of the initial margin pledged as stock.
pub fn stock_proportion(q0: f64, delta: f64, p0: f64) -> Result<f64> {
    let total = delta * p0 + q0;
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("zero total initial margin".into()));
    }
    Ok(delta * p0 / total)
}

/// Both scenarios for one loan under one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanOutcome {
    pub tau: Option<usize>,
    pub tau_star: Option<usize>,
    pub default_return: f64,
    pub negative: bool,
    pub n_calls: usize,
    pub cost: f64,
}

pub fn simulate_loan(spec: &LoanSpec, system: &MarginSystem, path: &[f64]) -> Result<LoanOutcome> {
    let default = simulate_default_scenario(spec, system.w, path)?;
    let topup = simulate_topup_scenario(spec, system, path)?;
    Ok(LoanOutcome {
        tau: default.tau,
        tau_star: default.tau_star,
        default_return: default.default_return,
        negative: default.negative,
        n_calls: topup.n_calls(),
        cost: topup.cost,
    })
}
