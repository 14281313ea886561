//! Price state space and the stationary one-step transition model.
//!
//! Distinct observed closes are sorted ascending and chunked into consecutive
//! groups of `g`; each group is one state, represented by its smallest price.
//! The one-step matrix is the empirical frequency of consecutive-day moves.

use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums when a matrix is supplied from outside.
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    reps: Vec<f64>,
    members: Vec<Vec<f64>>,
    group_size: usize,
}

impl StateSpace {
    /// A space given only by its representative prices, one member each.
    pub fn from_reps(reps: Vec<f64>) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::InvalidModel("no states".into()));
        }
        if reps.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
            return Err(Error::InvalidModel(
                "representative prices must be positive".into(),
            ));
        }
        if reps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidModel(
                "representative prices must be strictly increasing".into(),
            ));
        }
        let members = reps.iter().map(|&q| vec![q]).collect();
        Ok(StateSpace {
            reps,
            members,
            group_size: 1,
        })
    }

    pub fn n_states(&self) -> usize {
        self.reps.len()
    }

    /// Representative prices q_1..q_n, ascending.
    pub fn reps(&self) -> &[f64] {
        &self.reps
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Zero-based index of the state containing `price`: the k with
    /// `q_k <= price < q_{k+1}`. Prices below q_1 clamp to the first state,
    /// prices above q_n to the last.
    pub fn state_of(&self, price: f64) -> usize {
        self.reps.partition_point(|&q| q <= price).saturating_sub(1)
    }

    /// Same space with every price multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> StateSpace {
        StateSpace {
            reps: self.reps.iter().map(|q| q * factor).collect(),
            members: self
                .members
                .iter()
                .map(|m| m.iter().map(|p| p * factor).collect())
                .collect(),
            group_size: self.group_size,
        }
    }
}

/// Sorts the distinct prices of `window` and groups every `g` of them into a state.
pub fn build_state_space(window: &[f64], g: usize) -> Result<StateSpace> {
    if window.is_empty() {
        return Err(Error::InvalidParameter("empty price window".into()));
    }
    if g == 0 {
        return Err(Error::InvalidParameter("group size must be >= 1".into()));
    }
    if window.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidParameter(
            "window prices must be positive".into(),
        ));
    }
    let mut distinct = window.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let members: Vec<Vec<f64>> = distinct.chunks(g).map(<[f64]>::to_vec).collect();
    let reps = members.iter().map(|m| m[0]).collect();
    Ok(StateSpace {
        reps,
        members,
        group_size: g,
    })
}

/// One-step transition matrix with memoized n-step powers.
#[derive(Debug)]
pub struct TransitionModel {
    space: StateSpace,
    counts: Option<DMatrix<u64>>,
    one_step: DMatrix<f64>,
    zero_rows: Vec<usize>,
    // powers[k] = one_step^(k+1)
    powers: RwLock<Vec<Arc<DMatrix<f64>>>>,
}

impl Clone for TransitionModel {
    fn clone(&self) -> Self {
        TransitionModel {
            space: self.space.clone(),
            counts: self.counts.clone(),
            one_step: self.one_step.clone(),
            zero_rows: self.zero_rows.clone(),
            powers: RwLock::new(self.powers.read().expect("power cache poisoned").clone()),
        }
    }
}

impl TransitionModel {
    /// Wraps an externally supplied row-stochastic matrix.
    pub fn from_matrix(space: StateSpace, one_step: DMatrix<f64>) -> Result<Self> {
        let n = space.n_states();
        if one_step.nrows() != n || one_step.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "matrix is {}x{}, state space has {n} states",
                one_step.nrows(),
                one_step.ncols()
            )));
        }
        for (i, row) in one_step.row_iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && (0.0..=1.0).contains(p))) {
                return Err(Error::InvalidModel(format!("row {i} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self::assemble(space, None, one_step, Vec::new()))
    }

    /// Like [`from_matrix`](Self::from_matrix) with the matrix given row-major.
    pub fn from_row_major(space: StateSpace, entries: &[f64]) -> Result<Self> {
        let n = space.n_states();
        if entries.len() != n * n {
            return Err(Error::InvalidModel(format!(
                "expected {} matrix entries for {n} states, got {}",
                n * n,
                entries.len()
            )));
        }
        Self::from_matrix(space, DMatrix::from_row_slice(n, n, entries))
    }

    fn assemble(
        space: StateSpace,
        counts: Option<DMatrix<u64>>,
        one_step: DMatrix<f64>,
        zero_rows: Vec<usize>,
    ) -> Self {
        let first = Arc::new(one_step.clone());
        TransitionModel {
            space,
            counts,
            one_step,
            zero_rows,
            powers: RwLock::new(vec![first]),
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn n_states(&self) -> usize {
        self.space.n_states()
    }

    pub fn one_step(&self) -> &DMatrix<f64> {
        &self.one_step
    }

    /// Observed transition counts f_ij, when the model was estimated from data.
    pub fn counts(&self) -> Option<&DMatrix<u64>> {
        self.counts.as_ref()
    }

    /// States never observed as a transition source; given a self-loop.
    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    /// `one_step^steps`, memoized. `steps == 0` gives the identity.
    pub fn n_step(&self, steps: usize) -> Arc<DMatrix<f64>> {
        if steps == 0 {
            return Arc::new(DMatrix::identity(self.n_states(), self.n_states()));
        }
        {
            let cache = self.powers.read().expect("power cache poisoned");
            if let Some(p) = cache.get(steps - 1) {
                return Arc::clone(p);
            }
        }
        let mut cache = self.powers.write().expect("power cache poisoned");
        while cache.len() < steps {
            let next = cache.last().expect("cache holds P(1)").as_ref() * &self.one_step;
            cache.push(Arc::new(next));
        }
        Arc::clone(&cache[steps - 1])
    }

    /// P(1)..P(steps).
    pub fn powers_up_to(&self, steps: usize) -> Vec<Arc<DMatrix<f64>>> {
        if steps == 0 {
            return Vec::new();
        }
        self.n_step(steps);
        let cache = self.powers.read().expect("power cache poisoned");
        cache[..steps].to_vec()
    }

    /// The same chain on a rescaled price grid.
    pub fn scaled(&self, factor: f64) -> TransitionModel {
        Self::assemble(
            self.space.scaled(factor),
            self.counts.clone(),
            self.one_step.clone(),
            self.zero_rows.clone(),
        )
    }

    pub fn dump(&self) -> ModelDump {
        ModelDump {
            reps: self.space.reps.clone(),
            member_counts: self.space.members.iter().map(Vec::len).collect(),
            group_size: self.space.group_size,
            one_step: self
                .one_step
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            zero_rows: self.zero_rows.clone(),
        }
    }

    /// Rebuilds a model from a dump. Members are not recorded in a dump, so
    /// each state gets its representative as its only member.
    pub fn from_dump(dump: &ModelDump) -> Result<Self> {
        let space = StateSpace::from_reps(dump.reps.clone())?;
        let n = space.n_states();
        if dump.one_step.len() != n || dump.one_step.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel(format!(
                "one_step must be {n}x{n} to match reps"
            )));
        }
        let matrix = DMatrix::from_fn(n, n, |i, j| dump.one_step[i][j]);
        let mut model = Self::from_matrix(space, matrix)?;
        model.zero_rows = dump.zero_rows.clone();
        Ok(model)
    }
}

/// JSON form of a model: reps, member counts and the one-step matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub reps: Vec<f64>,
    #[serde(default)]
    pub member_counts: Vec<usize>,
    #[serde(default = "one")]
    pub group_size: usize,
    pub one_step: Vec<Vec<f64>>,
    #[serde(default)]
    pub zero_rows: Vec<usize>,
}

fn one() -> usize {
    1
}

/// Counts consecutive-day state transitions in `window` and normalizes each row.
/// Rows with no outgoing observation become a self-loop.
pub fn estimate_transition_matrix(window: &[f64], space: &StateSpace) -> Result<TransitionModel> {
    if window.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 observations to estimate transitions, got {}",
            window.len()
        )));
    }
    let n = space.n_states();
    let mut counts = DMatrix::<u64>::zeros(n, n);
    let states: Vec<usize> = window.iter().map(|&p| space.state_of(p)).collect();
    for pair in states.windows(2) {
        counts[(pair[0], pair[1])] += 1;
    }

    let mut one_step = DMatrix::<f64>::zeros(n, n);
    let mut zero_rows = Vec::new();
    for i in 0..n {
        let total: u64 = counts.row(i).iter().sum();
        if total == 0 {
            one_step[(i, i)] = 1.0;
            zero_rows.push(i);
            continue;
        }
        for j in 0..n {
            one_step[(i, j)] = counts[(i, j)] as f64 / total as f64;
        }
    }
    if !zero_rows.is_empty() {
        log::debug!("states {zero_rows:?} have no outgoing transitions; self-loop applied");
    }
    Ok(TransitionModel::assemble(
        space.clone(),
        Some(counts),
        one_step,
        zero_rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>());
        for mut row in m.row_iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        m
    }

    #[test]
    fn chunks_distinct_prices() {
        let prices: Vec<f64> = (1..=10).map(f64::from).collect();
        let space = build_state_space(&prices, 3).unwrap();
        assert_eq!(space.reps(), &[1.0, 4.0, 7.0, 10.0]);
        assert_eq!(space.members()[3], vec![10.0]);
        assert_eq!(space.members()[0], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn eight_hundred_distinct_prices_make_32_states() {
        let prices: Vec<f64> = (0..800).map(|i| 5.0 + 0.01 * i as f64).collect();
        let space = build_state_space(&prices, 25).unwrap();
        assert_eq!(space.n_states(), 32);
        assert!(space.members().iter().all(|m| m.len() == 25));
    }

    #[test]
    fn constant_series_is_one_state() {
        let space = build_state_space(&[7.5; 40], 25).unwrap();
        assert_eq!(space.reps(), &[7.5]);
        let model = estimate_transition_matrix(&[7.5; 40], &space).unwrap();
        assert_eq!(model.one_step()[(0, 0)], 1.0);
    }

    #[test]
    fn empty_window_and_bad_group() {
        assert!(build_state_space(&[], 3).is_err());
        assert!(build_state_space(&[1.0], 0).is_err());
        let space = build_state_space(&[1.0], 1).unwrap();
        assert!(estimate_transition_matrix(&[1.0], &space).is_err());
    }

    #[test]
    fn state_lookup_clamps() {
        let space = StateSpace::from_reps(vec![1.0, 4.0, 7.0, 10.0]).unwrap();
        assert_eq!(space.state_of(5.5), 1);
        assert_eq!(space.state_of(0.2), 0);
        assert_eq!(space.state_of(999.0), 3);
        for (k, &q) in space.reps().iter().enumerate() {
            assert_eq!(space.state_of(q), k);
        }
    }

    #[test]
    fn alternating_sequence() {
        let window = [1.0, 2.0, 1.0, 2.0];
        let space = build_state_space(&window, 1).unwrap();
        let model = estimate_transition_matrix(&window, &space).unwrap();
        assert_eq!(model.one_step(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(
            *model.n_step(2),
            DMatrix::<f64>::identity(2, 2),
        );
    }

    #[test]
    fn hand_counted_five_price_sequence() {
        // states: {1,2} -> 0, {3} -> 1 with g = 2
        // sequence 1,2,1,3,1: 0->0, 0->0, 0->1, 1->0
        let window = [1.0, 2.0, 1.0, 3.0, 1.0];
        let space = build_state_space(&window, 2).unwrap();
        assert_eq!(space.reps(), &[1.0, 3.0]);
        let model = estimate_transition_matrix(&window, &space).unwrap();
        let counts = model.counts().unwrap();
        assert_eq!(counts, &DMatrix::from_row_slice(2, 2, &[2u64, 1, 1, 0]));
        assert_eq!(model.one_step()[(0, 0)], 2.0 / 3.0);
        assert_eq!(model.one_step()[(0, 1)], 1.0 / 3.0);
        assert_eq!(model.one_step()[(1, 0)], 1.0);
        assert_eq!(model.one_step()[(1, 1)], 0.0);
    }

    #[test]
    fn unvisited_source_gets_self_loop() {
        // the top price appears only as the final observation
        let window = [1.0, 1.0, 2.0];
        let space = build_state_space(&window, 1).unwrap();
        let model = estimate_transition_matrix(&window, &space).unwrap();
        assert_eq!(model.zero_rows(), &[1]);
        assert_eq!(model.one_step()[(1, 1)], 1.0);
    }

    #[test]
    fn n_step_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let one = random_stochastic(4, &mut rng);
        let model = TransitionModel::from_matrix(
            StateSpace::from_reps(vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            one.clone(),
        )
        .unwrap();
        assert_eq!(*model.n_step(1), one);
        let triple = naive_mul(&naive_mul(&one, &one), &one);
        let p3 = model.n_step(3);
        for (a, b) in p3.iter().zip(triple.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn power_cache_is_stochastic_and_thread_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Arc::new(
            TransitionModel::from_matrix(
                StateSpace::from_reps((1..=6).map(f64::from).collect()).unwrap(),
                random_stochastic(6, &mut rng),
            )
            .unwrap(),
        );
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let m = Arc::clone(&model);
                std::thread::spawn(move || m.n_step(10 + 5 * t).as_ref().clone())
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        for (t, r) in results.iter().enumerate() {
            assert_eq!(r, model.n_step(10 + 5 * t).as_ref());
        }
        for p in model.powers_up_to(30) {
            for row in p.row_iter() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn from_matrix_rejects_bad_rows() {
        let space = StateSpace::from_reps(vec![1.0, 2.0]).unwrap();
        assert!(TransitionModel::from_matrix(
            space.clone(),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.0, 1.0])
        )
        .is_err());
        assert!(TransitionModel::from_matrix(space, DMatrix::identity(3, 3)).is_err());
        assert!(StateSpace::from_reps(vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let window = [1.0, 2.0, 1.0, 3.0, 1.0];
        let space = build_state_space(&window, 1).unwrap();
        let model = estimate_transition_matrix(&window, &space).unwrap();
        let json = serde_json::to_string(&model.dump()).unwrap();
        let back = TransitionModel::from_dump(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.one_step(), model.one_step());
        assert_eq!(back.space().reps(), model.space().reps());
    }

    proptest! {
        #[test]
        fn state_space_ignores_order(mut prices in prop::collection::vec(1u32..200, 1..120),
                                     g in 1usize..8, seed in any::<u64>()) {
            let as_f: Vec<f64> = prices.iter().map(|&p| p as f64 / 4.0).collect();
            let base = build_state_space(&as_f, g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..prices.len()).rev() {
                prices.swap(i, rng.gen_range(0..=i));
            }
            let shuffled: Vec<f64> = prices.iter().map(|&p| p as f64 / 4.0).collect();
            prop_assert_eq!(build_state_space(&shuffled, g).unwrap(), base.clone());
            let n = base.n_states();
            for (k, m) in base.members().iter().enumerate() {
                prop_assert_eq!(m[0], base.reps()[k]);
                if k + 1 < n { prop_assert_eq!(m.len(), g); } else { prop_assert!(!m.is_empty() && m.len() <= g); }
            }
        }

        #[test]
        fn row_counts_match_occupancy(prices in prop::collection::vec(1u32..40, 2..150), g in 1usize..6) {
            let window: Vec<f64> = prices.iter().map(|&p| p as f64).collect();
            let space = build_state_space(&window, g).unwrap();
            let model = estimate_transition_matrix(&window, &space).unwrap();
            let counts = model.counts().unwrap();
            for i in 0..space.n_states() {
                let occupancy = window[..window.len() - 1]
                    .iter()
                    .filter(|&&p| space.state_of(p) == i)
                    .count() as u64;
                prop_assert_eq!(counts.row(i).iter().sum::<u64>(), occupancy);
                let s: f64 = model.one_step().row(i).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }
}
