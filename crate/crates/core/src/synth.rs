//! Synthetic closing prices driven by a known Markov chain.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::markov::{StateSpace, TransitionModel};

/// Samples `len` closes from the chain started in state `start` (the first
/// close is `reps[start]`). Deterministic in `seed`.
pub fn simulate_prices(model: &TransitionModel, start: usize, len: usize, seed: u64) -> Result<Vec<f64>> {
    let n = model.n_states();
    if start >= n {
        return Err(Error::InvalidParameter(format!(
            "start state {start} out of range for {n} states"
        )));
    }
    let reps = model.space().reps();
    let p = model.one_step();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = start;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(reps[state]);
        state = sample_row(p, state, rng.gen::<f64>());
    }
    Ok(out)
}

fn sample_row(p: &DMatrix<f64>, row: usize, u: f64) -> usize {
    let n = p.ncols();
    let mut acc = 0.0;
    for j in 0..n {
        acc += p[(row, j)];
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding gap above the row sum: take the last state with mass
    (0..n).rev().find(|&j| p[(row, j)] > 0.0).unwrap_or(row)
}

/// Birth-death chain on a geometric price grid `base·(1+tick)^k`, k < levels.
/// Each day the price moves one level up with `p_up`, one level down with
/// `p_down`, and otherwise stays; moves past either end are reflected into a stay.
pub fn random_walk_chain(levels: usize, base: f64, tick: f64, p_up: f64, p_down: f64) -> Result<TransitionModel> {
    if levels == 0 || !(base > 0.0) || !(tick > 0.0) {
        return Err(Error::InvalidParameter(
            "need levels >= 1, base > 0 and tick > 0".into(),
        ));
    }
    if p_up < 0.0 || p_down < 0.0 || p_up + p_down > 1.0 {
        return Err(Error::InvalidParameter(
            "move probabilities must be non-negative and sum to at most 1".into(),
        ));
    }
    let reps: Vec<f64> = (0..levels).map(|k| base * (1.0 + tick).powi(k as i32)).collect();
    let mut p = DMatrix::zeros(levels, levels);
    for i in 0..levels {
        let mut stay = 1.0 - p_up - p_down;
        if i + 1 < levels {
            p[(i, i + 1)] = p_up;
        } else {
            stay += p_up;
        }
        if i > 0 {
            p[(i, i - 1)] = p_down;
        } else {
            stay += p_down;
        }
        p[(i, i)] += stay;
    }
    TransitionModel::from_matrix(StateSpace::from_reps(reps)?, p)
}

/// Chain on the grid `base·(1+tick)^k`, k < levels, whose daily move is `j − J`
/// levels with probability `steps[j]` (`steps.len() = 2J + 1`). Moves that
/// would leave the grid stop at the nearest end.
pub fn lattice_chain(levels: usize, base: f64, tick: f64, steps: &[f64]) -> Result<TransitionModel> {
    if levels == 0 || !(base > 0.0) || !(tick > 0.0) {
        return Err(Error::InvalidParameter(
            "need levels >= 1, base > 0 and tick > 0".into(),
        ));
    }
    if steps.len() % 2 == 0 || steps.iter().any(|&p| !(p >= 0.0)) || (steps.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(
            "step distribution must have odd length, non-negative entries and sum to 1".into(),
        ));
    }
    let half = (steps.len() / 2) as isize;
    let top = levels as isize - 1;
    let reps: Vec<f64> = (0..levels).map(|k| base * (1.0 + tick).powi(k as i32)).collect();
    let mut p = DMatrix::zeros(levels, levels);
    for i in 0..levels {
        for (j, &prob) in steps.iter().enumerate() {
            let dest = (i as isize + j as isize - half).clamp(0, top) as usize;
            p[(i, dest)] += prob;
        }
    }
    TransitionModel::from_matrix(StateSpace::from_reps(reps)?, p)
}
