#![allow(dead_code)]

use cpnr_core::ingest::PriceSeries;
use cpnr_core::markov::{StateSpace, TransitionModel};
use cpnr_core::optimizer::MarginTriple;
use cpnr_core::synth::{lattice_chain, simulate_prices};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random query drawn the same way for every corpus-based check.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: TransitionModel,
    pub h: usize,
    pub p0: f64,
    pub q0: f64,
    pub delta: f64,
    pub w: f64,
    pub rate: f64,
    pub horizon: usize,
}

pub fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        // sparse rows exercise zero denominators
        let raw: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            m[(i, rng.gen_range(0..n))] = 1.0;
            continue;
        }
        for j in 0..n {
            m[(i, j)] = raw[j] / total;
        }
        let sum: f64 = m.row(i).iter().sum();
        m[(i, n - 1)] += 1.0 - sum;
        if m[(i, n - 1)] < 0.0 {
            m[(i, n - 1)] = 0.0;
        }
    }
    m
}

pub fn random_reps(rng: &mut ChaCha8Rng, n: usize, p0: f64) -> Vec<f64> {
    let mut reps: Vec<f64> = (0..n).map(|_| p0 * rng.gen_range(0.3..1.4)).collect();
    reps.sort_by(f64::total_cmp);
    reps.dedup();
    while reps.len() < n {
        let last = *reps.last().unwrap();
        reps.push(last * 1.01);
    }
    reps
}

/// Random instance with `m`, `δ`, `w` on the hundredths grid.
pub fn random_instance(rng: &mut ChaCha8Rng, n_range: (usize, usize), t_range: (usize, usize)) -> Instance {
    let n = rng.gen_range(n_range.0..=n_range.1);
    let horizon = rng.gen_range(t_range.0..=t_range.1);
    let p0 = rng.gen_range(2.0..80.0);
    let reps = random_reps(rng, n, p0);
    let matrix = random_stochastic(rng, n);
    let model = TransitionModel::from_matrix(StateSpace::from_reps(reps).unwrap(), matrix).unwrap();
    let m_pct = rng.gen_range(0..=80u32);
    let delta_pct = rng.gen_range(0..=m_pct);
    let w_pct = rng.gen_range(100..=(100 + m_pct).min(200));
    let triple = MarginTriple::new(m_pct, delta_pct, w_pct);
    let rate = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..0.001) };
    Instance {
        h: rng.gen_range(0..n),
        p0,
        q0: triple.cash(p0),
        delta: triple.delta(),
        w: triple.w(),
        rate,
        horizon,
        model,
    }
}

/// Uniform daily moves of 1..=16 lattice levels up or down.
pub fn lattice_steps() -> Vec<f64> {
    let mut steps = vec![1.0 / 32.0; 33];
    steps[16] = 0.0;
    steps
}

/// Chain-driven synthetic stock: 2000-level lattice, tick 0.4%, started mid-grid.
pub fn lattice_series(symbol: &str, len: usize, seed: u64) -> PriceSeries {
    let chain = lattice_chain(2000, 10.0, 0.004, &lattice_steps()).unwrap();
    let closes = simulate_prices(&chain, 1000, len, seed).unwrap();
    PriceSeries::from_closes(symbol, &closes).unwrap()
}

/// Sum of squared distances from `x` to every element, in hundredths.
pub fn ls_objective(x: &MarginTriple, set: &[MarginTriple]) -> i128 {
    set.iter()
        .map(|y| {
            let d = |a: u32, b: u32| i128::from(a) - i128::from(b);
            d(x.m_pct, y.m_pct).pow(2) + d(x.delta_pct, y.delta_pct).pow(2) + d(x.w_pct, y.w_pct).pow(2)
        })
        .sum()
}

/// Exhaustive argmin of the least-squares objective, ties to the
/// lexicographically smallest `(m, δ, w)`.
pub fn brute_argmin(set: &[MarginTriple]) -> MarginTriple {
    let mut best: Option<(i128, MarginTriple)> = None;
    for x in set {
        let obj = ls_objective(x, set);
        let key = (x.m_pct, x.delta_pct, x.w_pct);
        best = match best {
            None => Some((obj, *x)),
            Some((b, bx)) if obj < b || (obj == b && key < (bx.m_pct, bx.delta_pct, bx.w_pct)) => Some((obj, *x)),
            keep => keep,
        };
    }
    best.expect("nonempty set").1
}

/// Day-by-day ledger walk written from the loan definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct HandWalk {
    pub tau: Option<usize>,
    pub tau_star: Option<usize>,
    pub negative: bool,
    pub topups: Vec<f64>,
    pub calls: usize,
    pub cost: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn hand_walk(p0: f64, q0: f64, delta: f64, w: f64, target: f64, r: f64, big_r: f64, path: &[f64]) -> HandWalk {
    let t_max = path.len();
    let loan = |i: usize| p0 * (1.0 + big_r).powi(i as i32);
    // default scenario: cash only grows
    let mut tau = None;
    for i in 1..=t_max {
        let cash = q0 * (1.0 + r).powi(i as i32);
        let required = w * loan(i) - (1.0 + delta) * path[i - 1];
        if cash - required <= 0.0 {
            tau = Some(i);
            break;
        }
    }
    let tau_star = tau.map(|t| (t + 1).min(t_max));
    let negative = match tau_star {
        Some(ts) => q0 * (1.0 + r).powi(ts as i32) + (1.0 + delta) * path[ts - 1] - loan(ts) <= 0.0,
        None => false,
    };
    // top-up scenario
    let mut cash = q0;
    let mut topups = Vec::new();
    let mut calls = 0;
    for i in 1..=t_max {
        cash *= 1.0 + r;
        let required = w * loan(i) - (1.0 + delta) * path[i - 1];
        if cash - required <= 0.0 {
            let amount = (target * loan(i) - (cash + (1.0 + delta) * path[i - 1])).max(0.0);
            cash += amount;
            topups.push(amount);
            calls += 1;
        } else {
            topups.push(0.0);
        }
    }
    HandWalk {
        tau,
        tau_star,
        negative,
        topups,
        calls,
        cost: cash + delta * path[t_max - 1],
    }
}
