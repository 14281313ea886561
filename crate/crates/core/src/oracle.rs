//! Naive re-implementation of the first-call and joint-loss recursions, used to
//! cross-check [`crate::engine`]. It computes its own matrix powers by triple
//! loops and evaluates every sum as written, sharing nothing with the main
//! path except the query and result types.

use crate::engine::{CpnrQuery, CpnrResult, Thresholds};
use crate::error::{Error, Result};

const MAX_STATES: usize = 64;
const MAX_HORIZON: usize = 30;

type Matrix = Vec<Vec<f64>>;

fn multiply(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Largest 1-based index k with `(1+δ)q_k < level`, or 0.
fn scan(reps: &[f64], delta: f64, level: f64) -> usize {
    let mut best = 0;
    for (idx, &q) in reps.iter().enumerate() {
        if (1.0 + delta) * q < level {
            best = idx + 1;
        }
    }
    best
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        let r = num / den;
        Some(if r < 0.0 { 0.0 } else if r > 1.0 { 1.0 } else { r })
    } else {
        None
    }
}

pub fn cpnr_oracle(q: &CpnrQuery<'_>) -> Result<CpnrResult> {
    q.validate()?;
    let n = q.model.n_states();
    let horizon = q.horizon;
    if n > MAX_STATES || horizon > MAX_HORIZON {
        return Err(Error::OracleTooLarge {
            states: n,
            horizon,
        });
    }
    let one_step = q.model.one_step();
    let p1: Matrix = (0..n)
        .map(|i| (0..n).map(|j| one_step[(i, j)]).collect())
        .collect();
    // power[t] = P(t), power[0] unused
    let mut power: Vec<Matrix> = vec![Vec::new(), p1.clone()];
    for t in 2..=horizon {
        let next = multiply(&power[t - 1], &p1);
        power.push(next);
    }

    let reps = q.model.space().reps();
    // k[t], a[t] for t = 1..=T (1-based, index 0 unused)
    let mut k = vec![0usize; horizon + 1];
    let mut a = vec![0usize; horizon + 1];
    for t in 1..=horizon {
        let g = (1.0 + q.rate).powi(t as i32);
        k[t] = scan(reps, q.delta, (q.w * q.p0 - q.q0) * g);
        a[t] = scan(reps, q.delta, (q.p0 - q.q0) * g);
    }
    let h = q.h;
    let p = |t: usize, i: usize, j: usize| power[t][i][j];

    // Prob(C_t)
    let mut call = vec![0.0; horizon + 1];
    for t in 1..=horizon {
        if t == 1 {
            let mut s = 0.0;
            for i in 1..=k[1] {
                s += p(1, h, i - 1);
            }
            call[1] = if k[1] == n { 1.0 } else { ratio(s, 1.0).unwrap() };
            continue;
        }
        // Prob(~D_1)
        let mut first = 0.0;
        for i in 1..=k[1] {
            first += p(1, h, i - 1);
        }
        let first = if k[1] == n { 1.0 } else { ratio(first, 1.0).unwrap() };
        let mut product = 1.0 - first;
        let mut truncated = false;
        for m in 2..=t {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in (k[m - 1] + 1)..=n {
                for j in 1..=k[m] {
                    num += p(m - 1, h, i - 1) * p(1, i - 1, j - 1);
                }
            }
            for i in (k[m - 1] + 1)..=n {
                den += p(m - 1, h, i - 1);
            }
            let Some(mut d) = ratio(num, den) else {
                truncated = true;
                break;
            };
            if k[m] == n {
                d = 1.0;
            }
            if m < t {
                product *= 1.0 - d;
            } else {
                product *= d;
            }
        }
        call[t] = if truncated { 0.0 } else { product };
    }

    // Prob(N | D_t)
    let mut joint = vec![0.0; horizon + 1];
    for t in 1..=horizon {
        let cond = if t < horizon {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 1..=k[t] {
                for l in 1..=a[t] {
                    num += p(t, h, j - 1) * p(1, j - 1, l - 1);
                }
                den += p(t, h, j - 1);
            }
            ratio(num, den).unwrap_or(0.0)
        } else {
            let mut num = 0.0;
            for j in 1..=a[horizon] {
                num += p(horizon, h, j - 1);
            }
            let mut den = 0.0;
            for l in 1..=k[horizon] {
                den += p(horizon, h, l - 1);
            }
            ratio(num, den).unwrap_or(0.0)
        };
        joint[t] = call[t] * cond;
    }

    Ok(CpnrResult::assemble(
        &call[1..],
        &joint[1..],
        Thresholds {
            k: k[1..].to_vec(),
            a: a[1..].to_vec(),
        },
    ))
}
