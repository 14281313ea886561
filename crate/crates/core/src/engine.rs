//! Conditional probability of negative return under the Markov chain.
//!
//! `Prob(C)` is the sum over days of first-call probabilities, each built as a
//! product of one-day survival conditionals that use unconditional
//! `(m-1)`-step probabilities from the starting state `h`. `Prob(NC)` appends
//! the conditional probability that liquidation lands below the loss
//! threshold. The product form is not an exact first-passage decomposition;
//! [`exact_first_passage`] gives the exact value for comparison only.
//!
//! Conventions shared with [`crate::oracle`]:
//! - thresholds `k_m`, `a_t` count states with `(1+δ)q_k` strictly below the
//!   call / loss level, 0 meaning no state qualifies;
//! - a conditional whose denominator is zero is 0 and every later first-call
//!   term is 0;
//! - `k_m = n` makes the day-`m` call conditional exactly 1;
//! - conditionals are clamped to `[0, 1]`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{StateSpace, TransitionModel};

/// A CPNR evaluation request. Loan and riskless rates are taken equal.
#[derive(Debug, Clone, Copy)]
pub struct CpnrQuery<'a> {
    pub model: &'a TransitionModel,
    /// Zero-based state of P0.
    pub h: usize,
    pub p0: f64,
    pub q0: f64,
    pub delta: f64,
    pub w: f64,
    pub rate: f64,
    pub horizon: usize,
}

impl CpnrQuery<'_> {
    pub fn validate(&self) -> Result<()> {
        let n = self.model.n_states();
        if self.h >= n {
            return Err(Error::InvalidParameter(format!(
                "initial state {} out of range for {n} states",
                self.h
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if !(self.rate >= 0.0) {
            return Err(Error::InvalidParameter("rate must be >= 0".into()));
        }
        if !(self.p0 > 0.0) || !(self.q0 >= 0.0) || !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter(
                "need p0 > 0, q0 >= 0 and delta in [0,1]".into(),
            ));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        let space = self.model.space();
        Thresholds {
            k: (1..=self.horizon)
                .map(|m| call_threshold(space, self.p0, self.q0, self.delta, self.w, self.rate, m))
                .collect(),
            a: (1..=self.horizon)
                .map(|t| loss_threshold(space, self.p0, self.q0, self.delta, self.rate, t))
                .collect(),
        }
    }
}

/// Number of states whose scaled representative lies strictly below `level`.
fn count_below(space: &StateSpace, delta: f64, level: f64) -> usize {
    space
        .reps()
        .partition_point(|&q| (1.0 + delta) * q < level)
}

/// `k_m`: largest state index with `(1+δ)q_k < (wP0 − Q0)(1+r)^m`, 0 if none.
pub fn call_threshold(
    space: &StateSpace,
    p0: f64,
    q0: f64,
    delta: f64,
    w: f64,
    rate: f64,
    day: usize,
) -> usize {
    let level = (w * p0 - q0) * (1.0 + rate).powi(day as i32);
    count_below(space, delta, level)
}

/// `a_t`: largest state index with `(1+δ)q_k < (P0 − Q0)(1+r)^t`, 0 if none.
pub fn loss_threshold(space: &StateSpace, p0: f64, q0: f64, delta: f64, rate: f64, day: usize) -> usize {
    let level = (p0 - q0) * (1.0 + rate).powi(day as i32);
    count_below(space, delta, level)
}

/// Per-day call and loss thresholds, index 0 is day 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Thresholds {
    pub k: Vec<usize>,
    pub a: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayTerm {
    pub t: usize,
    #[serde(rename = "prob_C")]
    pub prob_c: f64,
    #[serde(rename = "prob_NC")]
    pub prob_nc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpnrResult {
    #[serde(rename = "prob_C")]
    pub prob_c: f64,
    #[serde(rename = "prob_NC")]
    pub prob_nc: f64,
    pub cpnr: f64,
    pub per_day: Vec<DayTerm>,
    pub k: Vec<usize>,
    pub a: Vec<usize>,
}

impl CpnrResult {
    pub(crate) fn assemble(call_terms: &[f64], loss_terms: &[f64], thresholds: Thresholds) -> Self {
        let prob_c: f64 = call_terms.iter().sum();
        let prob_nc: f64 = loss_terms.iter().sum();
        let cpnr = if prob_c > 0.0 { prob_nc / prob_c } else { 0.0 };
        let per_day = call_terms
            .iter()
            .zip(loss_terms)
            .enumerate()
            .map(|(idx, (&c, &nc))| DayTerm {
                t: idx + 1,
                prob_c: c,
                prob_nc: nc,
            })
            .collect();
        CpnrResult {
            prob_c,
            prob_nc,
            cpnr,
            per_day,
            k: thresholds.k,
            a: thresholds.a,
        }
    }
}

fn conditional(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        Some((num / den).clamp(0.0, 1.0))
    } else {
        None
    }
}

fn prefix(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for &v in values {
        acc += v;
        out.push(acc);
    }
    out
}

fn suffix(values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len() + 1];
    for i in (0..values.len()).rev() {
        out[i] = out[i + 1] + values[i];
    }
    out
}

/// Precomputed rows of `P(1)..P(T)` from one starting state, with prefix sums,
/// so that a CPNR evaluation costs O(nT) for any set of thresholds.
#[derive(Debug, Clone)]
pub struct CpnrEngine {
    n: usize,
    horizon: usize,
    // rows[t-1][j] = p_hj(t)
    rows: Vec<Vec<f64>>,
    row_prefix: Vec<Vec<f64>>,
    row_suffix: Vec<Vec<f64>>,
    // one_prefix[i][k] = sum_{j<k} p_ij(1)
    one_prefix: Vec<Vec<f64>>,
}

impl CpnrEngine {
    pub fn new(model: &TransitionModel, h: usize, horizon: usize) -> Result<Self> {
        let n = model.n_states();
        if h >= n {
            return Err(Error::InvalidParameter(format!(
                "initial state {h} out of range for {n} states"
            )));
        }
        let powers: Vec<Arc<DMatrix<f64>>> = model.powers_up_to(horizon);
        let rows: Vec<Vec<f64>> = powers
            .iter()
            .map(|p| p.row(h).iter().copied().collect())
            .collect();
        let row_prefix = rows.iter().map(|r| prefix(r)).collect();
        let row_suffix = rows.iter().map(|r| suffix(r)).collect();
        let one_prefix = model
            .one_step()
            .row_iter()
            .map(|r| prefix(&r.iter().copied().collect::<Vec<_>>()))
            .collect();
        Ok(CpnrEngine {
            n,
            horizon,
            rows,
            row_prefix,
            row_suffix,
            one_prefix,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// First-call probabilities `Prob(C_t)`, t = 1..=T.
    pub fn call_terms(&self, k: &[usize]) -> Vec<f64> {
        let n = self.n;
        let mut terms = vec![0.0; self.horizon];
        // Prob(C_1) = sum_{i<=k_1} p_hi(1)
        let first = if k[0] >= n { 1.0 } else { self.row_prefix[0][k[0]].clamp(0.0, 1.0) };
        terms[0] = first;
        let mut survival = 1.0 - first;
        for m in 2..=self.horizon {
            if survival <= 0.0 {
                break;
            }
            let prev_k = k[m - 2];
            let km = k[m - 1];
            let prev_row = &self.rows[m - 2];
            let den = self.row_suffix[m - 2][prev_k];
            let num: f64 = (prev_k..n)
                .map(|i| prev_row[i] * self.one_prefix[i][km])
                .sum();
            let Some(mut cond) = conditional(num, den) else {
                break;
            };
            if km >= n {
                cond = 1.0;
            }
            terms[m - 1] = survival * cond;
            survival *= 1.0 - cond;
        }
        terms
    }

    /// `Prob(N | D_t)` for t = 1..=T.
    pub fn loss_given_call(&self, k: &[usize], a: &[usize]) -> Vec<f64> {
        let horizon = self.horizon;
        (1..=horizon)
            .map(|t| {
                let kt = k[t - 1];
                let row = &self.rows[t - 1];
                let prefix = &self.row_prefix[t - 1];
                if t < horizon {
                    let at = a[t - 1];
                    let num: f64 = (0..kt).map(|j| row[j] * self.one_prefix[j][at]).sum();
                    conditional(num, prefix[kt]).unwrap_or(0.0)
                } else {
                    let at = a[t - 1].min(self.n);
                    conditional(prefix[at], prefix[kt]).unwrap_or(0.0)
                }
            })
            .collect()
    }

    pub fn evaluate(&self, thresholds: Thresholds) -> CpnrResult {
        let call = self.call_terms(&thresholds.k);
        let loss = self.loss_given_call(&thresholds.k, &thresholds.a);
        let joint: Vec<f64> = call.iter().zip(&loss).map(|(c, l)| c * l).collect();
        CpnrResult::assemble(&call, &joint, thresholds)
    }
}

/// `Prob(C)` and its per-day terms.
pub fn prob_margin_call(q: &CpnrQuery<'_>) -> Result<(f64, Vec<f64>)> {
    q.validate()?;
    let engine = CpnrEngine::new(q.model, q.h, q.horizon)?;
    let terms = engine.call_terms(&q.thresholds().k);
    Ok((terms.iter().sum(), terms))
}

/// `Prob(NC)` and its per-day terms.
pub fn prob_joint_negative(q: &CpnrQuery<'_>) -> Result<(f64, Vec<f64>)> {
    q.validate()?;
    let engine = CpnrEngine::new(q.model, q.h, q.horizon)?;
    let th = q.thresholds();
    let call = engine.call_terms(&th.k);
    let loss = engine.loss_given_call(&th.k, &th.a);
    let terms: Vec<f64> = call.iter().zip(&loss).map(|(c, l)| c * l).collect();
    Ok((terms.iter().sum(), terms))
}

pub fn cpnr(q: &CpnrQuery<'_>) -> Result<CpnrResult> {
    q.validate()?;
    let engine = CpnrEngine::new(q.model, q.h, q.horizon)?;
    Ok(engine.evaluate(q.thresholds()))
}

/// Exact first-passage probabilities, for diagnostics only. Mass is propagated
/// one day at a time with call states removed once hit; liquidation is checked
/// against the loss threshold of the liquidation day `min(t+1, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactComparison {
    #[serde(rename = "prob_C")]
    pub prob_c: f64,
    #[serde(rename = "prob_NC")]
    pub prob_nc: f64,
    pub cpnr: f64,
}

pub fn exact_first_passage(q: &CpnrQuery<'_>) -> Result<ExactComparison> {
    q.validate()?;
    let n = q.model.n_states();
    let p = q.model.one_step();
    let th = q.thresholds();
    let horizon = q.horizon;
    let mut alive = vec![0.0; n];
    alive[q.h] = 1.0;
    let (mut prob_c, mut prob_nc) = (0.0, 0.0);
    for t in 1..=horizon {
        let mut next = vec![0.0; n];
        for (i, &mass) in alive.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (j, slot) in next.iter_mut().enumerate() {
                *slot += mass * p[(i, j)];
            }
        }
        let kt = th.k[t - 1];
        let called: f64 = next[..kt].iter().sum();
        prob_c += called;
        if t < horizon {
            let a_next = th.a[t];
            for (j, &mass) in next[..kt].iter().enumerate() {
                let below: f64 = (0..a_next).map(|l| p[(j, l)]).sum();
                prob_nc += mass * below;
            }
        } else {
            prob_nc += next[..kt.min(th.a[t - 1])].iter().sum::<f64>();
        }
        next[..kt].iter_mut().for_each(|x| *x = 0.0);
        alive = next;
    }
    let cpnr = if prob_c > 0.0 { prob_nc / prob_c } else { 0.0 };
    Ok(ExactComparison {
        prob_c,
        prob_nc,
        cpnr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::StateSpace;
    use approx::assert_abs_diff_eq;

    fn model(reps: Vec<f64>, rows: &[f64]) -> TransitionModel {
        let n = reps.len();
        TransitionModel::from_matrix(
            StateSpace::from_reps(reps).unwrap(),
            DMatrix::from_row_slice(n, n, rows),
        )
        .unwrap()
    }

    #[test]
    fn threshold_examples() {
        let space = StateSpace::from_reps(vec![1.0, 4.0, 7.0, 10.0]).unwrap();
        assert_eq!(call_threshold(&space, 10.0, 5.0, 0.0, 1.3, 0.0, 1), 3);
        assert_eq!(call_threshold(&space, 10.0, 5.0, 0.0, 1.3, 0.1, 2), 3);
        assert_eq!(call_threshold(&space, 10.0, 13.0, 0.0, 1.3, 0.0, 1), 0);
        assert_eq!(loss_threshold(&space, 10.0, 5.0, 0.0, 0.0, 1), 2);
        assert_eq!(loss_threshold(&space, 10.0, 10.0, 0.0, 0.0, 1), 0);
        // strict inequality: level exactly at q_2 = 4 excludes state 2
        assert_eq!(loss_threshold(&space, 10.0, 6.0, 0.0, 0.0, 1), 1);
    }

    #[test]
    fn impossible_call_gives_zero() {
        let m = model(vec![1.0, 2.0, 3.0], &[0.2, 0.3, 0.5, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4]);
        let q = CpnrQuery { model: &m, h: 2, p0: 3.0, q0: 10.0, delta: 0.1, w: 1.3, rate: 0.0, horizon: 5 };
        let r = cpnr(&q).unwrap();
        assert_eq!(r.prob_c, 0.0);
        assert_eq!(r.cpnr, 0.0);
        assert!(r.k.iter().all(|&k| k == 0));
    }

    #[test]
    fn single_state_certain_call() {
        let m = model(vec![5.0], &[1.0]);
        // level (1.3*10 - 2) = 11 > 5: state 1 always calls
        let q = CpnrQuery { model: &m, h: 0, p0: 10.0, q0: 2.0, delta: 0.0, w: 1.3, rate: 0.0, horizon: 4 };
        let r = cpnr(&q).unwrap();
        assert_eq!(r.per_day[0].prob_c, 1.0);
        assert_eq!(r.prob_c, 1.0);
        assert!(r.per_day[1..].iter().all(|d| d.prob_c == 0.0));
        // loss level 10 - 2 = 8 > 5: certain loss given the call
        assert_eq!(r.prob_nc, 1.0);
        assert_eq!(r.cpnr, 1.0);
    }

    #[test]
    fn horizon_one_uses_terminal_branch() {
        let m = model(vec![1.0, 2.0, 3.0], &[0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.0, 0.4, 0.6]);
        // call level 1.3*3 - 1 = 2.9 -> k_1 = 2; loss level 3 - 1 = 2 -> a_1 = 1
        let q = CpnrQuery { model: &m, h: 1, p0: 3.0, q0: 1.0, delta: 0.0, w: 1.3, rate: 0.0, horizon: 1 };
        let r = cpnr(&q).unwrap();
        assert_eq!((r.k.clone(), r.a.clone()), (vec![2], vec![1]));
        assert_abs_diff_eq!(r.prob_c, 0.5, epsilon = 1e-15);
        // terminal branch: p_21 / (p_21 + p_22) = 0.2 / 0.5
        assert_abs_diff_eq!(r.prob_nc, 0.5 * 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.cpnr, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn cash_covered_loan_never_loses() {
        let m = model(vec![1.0, 2.0, 3.0], &[0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.0, 0.4, 0.6]);
        let q = CpnrQuery { model: &m, h: 2, p0: 3.0, q0: 3.0, delta: 0.0, w: 1.9, rate: 0.0, horizon: 6 };
        let r = cpnr(&q).unwrap();
        assert!(r.prob_c > 0.0);
        assert_eq!(r.prob_nc, 0.0);
        assert_eq!(r.cpnr, 0.0);
        assert!(r.a.iter().all(|&a| a == 0));
    }

    #[test]
    fn hand_computed_two_day_chain() {
        // reps 1,2,3; h = 3rd state; k = (1,1), a = (1,1)
        // Prob(C_1) = p_31 = 0.1; Prob(D_2 | ~D_1) = sum_{i>=2} p_3i(1) p_i1 / sum_{i>=2} p_3i(1)
        let rows = [0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.3, 0.6];
        let m = model(vec![1.0, 2.0, 3.0], &rows);
        let q = CpnrQuery { model: &m, h: 2, p0: 3.0, q0: 1.0, delta: 0.0, w: 0.7, rate: 0.0, horizon: 2 };
        let r = cpnr(&q).unwrap();
        assert_eq!(r.k, vec![1, 1]);
        let c1 = 0.1;
        let cond2 = (0.3 * 0.2 + 0.6 * 0.1) / (0.3 + 0.6);
        let c2 = (1.0 - c1) * cond2;
        assert_abs_diff_eq!(r.per_day[0].prob_c, c1, epsilon = 1e-15);
        assert_abs_diff_eq!(r.per_day[1].prob_c, c2, epsilon = 1e-15);
        // loss level 3 - 1 = 2 excludes q=2
        assert_eq!(r.a, vec![1, 1]);
        // t=1 < T: sum_{j<=1} sum_{l<=1} p_3j(1) p_jl / sum_{j<=1} p_3j(1) = p_11 = 0.6
        assert_abs_diff_eq!(r.per_day[0].prob_nc, c1 * 0.6, epsilon = 1e-15);
        // t=T: sum_{j<=1} p_3j(2) / sum_{l<=1} p_3l(2) = 1
        assert_abs_diff_eq!(r.per_day[1].prob_nc, c2, epsilon = 1e-15);
    }

    #[test]
    fn exact_matches_product_form_on_two_days_when_memoryless() {
        // with identical rows the chain is i.i.d. and the product form is exact
        let rows = [0.2, 0.3, 0.5, 0.2, 0.3, 0.5, 0.2, 0.3, 0.5];
        let m = model(vec![1.0, 2.0, 3.0], &rows);
        let q = CpnrQuery { model: &m, h: 2, p0: 3.0, q0: 1.5, delta: 0.0, w: 1.2, rate: 0.0, horizon: 4 };
        let r = cpnr(&q).unwrap();
        let e = exact_first_passage(&q).unwrap();
        assert_abs_diff_eq!(r.prob_c, e.prob_c, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_query() {
        let m = model(vec![1.0], &[1.0]);
        let q = CpnrQuery { model: &m, h: 1, p0: 1.0, q0: 0.0, delta: 0.0, w: 1.3, rate: 0.0, horizon: 1 };
        assert!(cpnr(&q).is_err());
        let q = CpnrQuery { h: 0, horizon: 0, ..q };
        assert!(cpnr(&q).is_err());
    }
}
