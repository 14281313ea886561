//! Risk-constrained margin systems on a 0.01 grid.
//!
//! Grid points are held as integer hundredths so that feasibility checks,
//! memo keys and the least-squares objective are exact.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{call_threshold, loss_threshold, CpnrEngine, Thresholds};
use crate::error::{Error, Result};
use crate::loan::{check_adequacy, initial_margin_ratio};
use crate::markov::TransitionModel;

/// Inclusive range of grid points `0.01 * k` for `k` in `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: u32,
    pub hi: u32,
}

impl GridAxis {
    pub fn new(lo: u32, hi: u32) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidParameter(format!("empty grid axis {lo}..={hi}")));
        }
        Ok(GridAxis { lo, hi })
    }

    pub fn points(&self) -> impl Iterator<Item = u32> + Clone {
        self.lo..=self.hi
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub m: GridAxis,
    pub delta: GridAxis,
    pub w: GridAxis,
    pub alpha: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            m: GridAxis { lo: 0, hi: 80 },
            delta: GridAxis { lo: 0, hi: 80 },
            w: GridAxis { lo: 100, hi: 200 },
            alpha: 0.05,
        }
    }
}

impl GridConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        GridConfig {
            alpha,
            ..GridConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        if self.delta.hi > 100 {
            return Err(Error::InvalidParameter("delta grid exceeds 1.00".into()));
        }
        for axis in [self.m, self.delta, self.w] {
            GridAxis::new(axis.lo, axis.hi)?;
        }
        Ok(())
    }
}

/// A grid margin system `(m, δ, w)` in hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "TripleRepr", try_from = "TripleRepr")]
pub struct MarginTriple {
    pub m_pct: u32,
    pub delta_pct: u32,
    pub w_pct: u32,
}

#[derive(Serialize, Deserialize)]
struct TripleRepr {
    m: f64,
    delta: f64,
    w: f64,
}

impl From<MarginTriple> for TripleRepr {
    fn from(t: MarginTriple) -> Self {
        TripleRepr {
            m: t.m(),
            delta: t.delta(),
            w: t.w(),
        }
    }
}

impl TryFrom<TripleRepr> for MarginTriple {
    type Error = String;

    fn try_from(r: TripleRepr) -> std::result::Result<Self, String> {
        let pct = |x: f64| {
            let scaled = (x * 100.0).round();
            if scaled < 0.0 || (scaled - x * 100.0).abs() > 1e-6 {
                Err(format!("{x} is not on the 0.01 grid"))
            } else {
                Ok(scaled as u32)
            }
        };
        Ok(MarginTriple {
            m_pct: pct(r.m)?,
            delta_pct: pct(r.delta)?,
            w_pct: pct(r.w)?,
        })
    }
}

impl MarginTriple {
    pub fn new(m_pct: u32, delta_pct: u32, w_pct: u32) -> Self {
        MarginTriple {
            m_pct,
            delta_pct,
            w_pct,
        }
    }

    pub fn m(&self) -> f64 {
        f64::from(self.m_pct) / 100.0
    }

    pub fn delta(&self) -> f64 {
        f64::from(self.delta_pct) / 100.0
    }

    pub fn w(&self) -> f64 {
        f64::from(self.w_pct) / 100.0
    }

    /// `1 + m >= w` and `m >= δ`.
    pub fn is_feasible(&self) -> bool {
        100 + self.m_pct >= self.w_pct && self.m_pct >= self.delta_pct
    }

    /// Cash collateral implied for purchase price `p0`: `(m − δ)·p0`.
    pub fn cash(&self, p0: f64) -> f64 {
        f64::from(self.m_pct - self.delta_pct) / 100.0 * p0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub triple: MarginTriple,
    pub cpnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetContext {
    pub h: usize,
    pub p0: f64,
    pub rate: f64,
    pub horizon: usize,
    pub alpha: f64,
}

/// All feasible grid systems whose CPNR does not exceed `alpha`, in
/// lexicographic `(m, δ, w)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndifferenceSet {
    pub elements: Vec<Member>,
    pub context: SetContext,
    /// Feasible triples evaluated.
    pub evaluated: usize,
}

impl IndifferenceSet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// CSV rows `m,delta,w,cpnr`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["m", "delta", "w", "cpnr"])?;
        for e in &self.elements {
            wtr.write_record([
                format!("{:.2}", e.triple.m()),
                format!("{:.2}", e.triple.delta()),
                format!("{:.2}", e.triple.w()),
                e.cpnr.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("indifference set csv", e))?;
        Ok(())
    }
}

fn thresholds_for(
    model: &TransitionModel,
    p0: f64,
    q0: f64,
    delta: f64,
    w: f64,
    rate: f64,
    horizon: usize,
) -> Thresholds {
    let space = model.space();
    Thresholds {
        k: (1..=horizon)
            .map(|m| call_threshold(space, p0, q0, delta, w, rate, m))
            .collect(),
        a: (1..=horizon)
            .map(|t| loss_threshold(space, p0, q0, delta, rate, t))
            .collect(),
    }
}

/// Evaluates CPNR on every feasible triple of the grid and keeps those at or
/// below `grid.alpha`.
pub fn enumerate_indifference_set(
    model: &TransitionModel,
    h: usize,
    p0: f64,
    rate: f64,
    horizon: usize,
    grid: &GridConfig,
) -> Result<IndifferenceSet> {
    grid.validate()?;
    if !(p0 > 0.0) {
        return Err(Error::InvalidParameter(format!("p0 must be positive, got {p0}")));
    }
    let engine = CpnrEngine::new(model, h, horizon)?;

    let pairs: Vec<(u32, u32)> = grid
        .m
        .points()
        .flat_map(|m| grid.delta.points().filter(move |&d| d <= m).map(move |d| (m, d)))
        .collect();

    let per_pair: Vec<(Vec<Member>, usize)> = pairs
        .par_iter()
        .map(|&(m_pct, delta_pct)| {
            let probe = MarginTriple::new(m_pct, delta_pct, 0);
            let q0 = probe.cash(p0);
            let delta = probe.delta();
            // CPNR depends on the triple only through its thresholds
            let mut memo: HashMap<Thresholds, f64> = HashMap::new();
            let mut kept = Vec::new();
            let mut evaluated = 0;
            for w_pct in grid.w.points() {
                let triple = MarginTriple::new(m_pct, delta_pct, w_pct);
                if !triple.is_feasible() {
                    continue;
                }
                evaluated += 1;
                let th = thresholds_for(model, p0, q0, delta, triple.w(), rate, horizon);
                let value = *memo
                    .entry(th)
                    .or_insert_with_key(|th| engine.evaluate(th.clone()).cpnr);
                if value <= grid.alpha {
                    kept.push(Member { triple, cpnr: value });
                }
            }
            (kept, evaluated)
        })
        .collect();

    let evaluated = per_pair.iter().map(|(_, n)| n).sum();
    let elements = per_pair.into_iter().flat_map(|(kept, _)| kept).collect();
    Ok(IndifferenceSet {
        elements,
        context: SetContext {
            h,
            p0,
            rate,
            horizon,
            alpha: grid.alpha,
        },
        evaluated,
    })
}

/// Member minimizing the summed squared distance to every member of the set.
/// Ties go to the smallest `m`, then `δ`, then `w`.
pub fn select_optimal(set: &IndifferenceSet) -> Result<MarginTriple> {
    select_optimal_triples(set.elements.iter().map(|e| e.triple))
}

pub fn select_optimal_triples(triples: impl IntoIterator<Item = MarginTriple>) -> Result<MarginTriple> {
    let triples: Vec<MarginTriple> = triples.into_iter().collect();
    if triples.is_empty() {
        return Err(Error::EmptySet);
    }
    // sum_i |x_i - x|^2 = S2 - 2 x.S1 + q |x|^2, exact in integers
    let coords = |t: &MarginTriple| [i128::from(t.m_pct), i128::from(t.delta_pct), i128::from(t.w_pct)];
    let q = triples.len() as i128;
    let mut s1 = [0i128; 3];
    let mut s2 = 0i128;
    for t in &triples {
        let c = coords(t);
        for d in 0..3 {
            s1[d] += c[d];
            s2 += c[d] * c[d];
        }
    }
    let objective = |t: &MarginTriple| {
        let c = coords(t);
        let dot: i128 = (0..3).map(|d| c[d] * s1[d]).sum();
        let norm: i128 = (0..3).map(|d| c[d] * c[d]).sum();
        s2 - 2 * dot + q * norm
    };
    Ok(*triples
        .iter()
        .min_by(|a, b| objective(a).cmp(&objective(b)).then_with(|| a.cmp(b)))
        .expect("nonempty"))
}

/// Smallest `w` on the grid with CPNR at or below `alpha` for fixed cash `q0`
/// and stock fraction `delta`, subject to `m0 + 1 >= w`. Scans every grid
/// point: CPNR need not be monotone in `w`.
#[allow(clippy::too_many_arguments)]
pub fn min_maintenance_ratio(
    model: &TransitionModel,
    h: usize,
    p0: f64,
    q0: f64,
    delta: f64,
    rate: f64,
    horizon: usize,
    grid: &GridConfig,
) -> Result<Option<f64>> {
    grid.validate()?;
    if !(q0 >= 0.0) || !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter("need q0 >= 0 and delta in [0,1]".into()));
    }
    let m0 = initial_margin_ratio(q0, delta, p0)?;
    let engine = CpnrEngine::new(model, h, horizon)?;
    for w_pct in grid.w.points() {
        let w = f64::from(w_pct) / 100.0;
        // m0 comes from floating division; allow rounding at the adequacy boundary
        if !check_adequacy(m0 + 1e-12, w) {
            continue;
        }
        let th = thresholds_for(model, p0, q0, delta, w, rate, horizon);
        if engine.evaluate(th).cpnr <= grid.alpha {
            return Ok(Some(w));
        }
    }
    Ok(None)
}

/// Selected system together with the size of the set it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deduction {
    pub triple: MarginTriple,
    pub cpnr: f64,
    pub set_size: usize,
}

pub fn deduce_system(
    model: &TransitionModel,
    h: usize,
    p0: f64,
    rate: f64,
    horizon: usize,
    grid: &GridConfig,
) -> Result<Option<Deduction>> {
    let set = enumerate_indifference_set(model, h, p0, rate, horizon, grid)?;
    if set.is_empty() {
        return Ok(None);
    }
    let triple = select_optimal(&set)?;
    let cpnr = set
        .elements
        .iter()
        .find(|e| e.triple == triple)
        .map(|e| e.cpnr)
        .expect("selected triple is a member");
    Ok(Some(Deduction {
        triple,
        cpnr,
        set_size: set.len(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{cpnr, CpnrQuery};
    use crate::markov::StateSpace;
    use crate::oracle::cpnr_oracle;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn toy_model() -> TransitionModel {
        TransitionModel::from_matrix(
            StateSpace::from_reps(vec![6.0, 8.0, 10.0]).unwrap(),
            DMatrix::from_row_slice(3, 3, &[0.5, 0.4, 0.1, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5]),
        )
        .unwrap()
    }

    fn small_grid(alpha: f64) -> GridConfig {
        GridConfig {
            m: GridAxis::new(0, 40).unwrap(),
            delta: GridAxis::new(0, 40).unwrap(),
            w: GridAxis::new(100, 140).unwrap(),
            alpha,
        }
    }

    fn brute_force_argmin(triples: &[MarginTriple]) -> MarginTriple {
        let mut best: Option<(i128, MarginTriple)> = None;
        for cand in triples {
            let mut total = 0i128;
            for other in triples {
                let dm = i128::from(other.m_pct) - i128::from(cand.m_pct);
                let dd = i128::from(other.delta_pct) - i128::from(cand.delta_pct);
                let dw = i128::from(other.w_pct) - i128::from(cand.w_pct);
                total += dm * dm + dd * dd + dw * dw;
            }
            let better = match best {
                None => true,
                Some((b, bt)) => total < b || (total == b && *cand < bt),
            };
            if better {
                best = Some((total, *cand));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn alpha_one_keeps_every_feasible_triple() {
        let model = toy_model();
        let grid = small_grid(1.0);
        let set = enumerate_indifference_set(&model, 2, 10.0, 0.0, 3, &grid).unwrap();
        let expected = grid
            .m
            .points()
            .flat_map(|m| grid.delta.points().flat_map(move |d| (100..=140).map(move |w| MarginTriple::new(m, d, w))))
            .filter(MarginTriple::is_feasible)
            .count();
        assert_eq!(set.len(), expected);
        assert_eq!(set.evaluated, expected);
        let mut sorted = set.elements.iter().map(|e| e.triple).collect::<Vec<_>>();
        sorted.sort();
        assert_eq!(sorted, set.elements.iter().map(|e| e.triple).collect::<Vec<_>>());
    }

    #[test]
    fn alpha_zero_empty_when_every_triple_risky() {
        // every state always reachable and far below any call level
        let model = TransitionModel::from_matrix(
            StateSpace::from_reps(vec![0.5, 1.0, 10.0]).unwrap(),
            DMatrix::from_element(3, 3, 1.0 / 3.0),
        )
        .unwrap();
        let set = enumerate_indifference_set(&model, 2, 10.0, 0.0, 3, &small_grid(0.0)).unwrap();
        assert!(set.is_empty());
        assert!(matches!(select_optimal(&set), Err(Error::EmptySet)));
    }

    #[test]
    fn membership_matches_oracle_sweep() {
        let model = TransitionModel::from_matrix(
            StateSpace::from_reps(vec![7.0, 10.0]).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]),
        )
        .unwrap();
        let grid = small_grid(0.05);
        let set = enumerate_indifference_set(&model, 1, 10.0, 0.0, 2, &grid).unwrap();
        let mut expected = Vec::new();
        for m in grid.m.points() {
            for d in grid.delta.points() {
                for w in grid.w.points() {
                    let t = MarginTriple::new(m, d, w);
                    if !t.is_feasible() {
                        continue;
                    }
                    let q = CpnrQuery { model: &model, h: 1, p0: 10.0, q0: t.cash(10.0), delta: t.delta(), w: t.w(), rate: 0.0, horizon: 2 };
                    if cpnr_oracle(&q).unwrap().cpnr <= 0.05 {
                        expected.push(t);
                    }
                }
            }
        }
        assert_eq!(set.elements.iter().map(|e| e.triple).collect::<Vec<_>>(), expected);
        assert!(!expected.is_empty());
    }

    #[test]
    fn stored_values_reproduce_exactly() {
        let model = toy_model();
        let set = enumerate_indifference_set(&model, 1, 8.5, 0.001, 4, &small_grid(0.3)).unwrap();
        for e in &set.elements {
            let q = CpnrQuery { model: &model, h: 1, p0: 8.5, q0: e.triple.cash(8.5), delta: e.triple.delta(), w: e.triple.w(), rate: 0.001, horizon: 4 };
            assert_eq!(cpnr(&q).unwrap().cpnr.to_bits(), e.cpnr.to_bits());
            assert!(e.triple.is_feasible() && e.cpnr <= 0.3);
        }
    }

    #[test]
    fn select_examples() {
        let single = [MarginTriple::new(55, 20, 120)];
        assert_eq!(select_optimal_triples(single).unwrap(), single[0]);
        let pair = [MarginTriple::new(70, 50, 130), MarginTriple::new(50, 50, 130)];
        assert_eq!(select_optimal_triples(pair).unwrap(), MarginTriple::new(50, 50, 130));
    }

    #[test]
    fn min_maintenance_examples() {
        let model = toy_model();
        let grid = GridConfig::default();
        // q0 >= w p0 for every w on the grid: no call is possible
        assert_eq!(min_maintenance_ratio(&model, 2, 10.0, 25.0, 0.0, 0.0, 5, &grid).unwrap(), Some(1.0));
        // q0 >= p0: losses impossible, first adequate w qualifies
        assert_eq!(min_maintenance_ratio(&model, 2, 10.0, 10.0, 0.2, 0.0, 5, &grid).unwrap(), Some(1.0));

        let grid = GridConfig::with_alpha(0.2);
        let got = min_maintenance_ratio(&model, 1, 8.0, 2.0, 0.25, 0.0, 4, &grid).unwrap();
        let mut expected = None;
        for w_pct in 100..=200u32 {
            let w = f64::from(w_pct) / 100.0;
            if 2.0 / 8.0 + 0.25 + 1.0 + 1e-12 < w {
                continue;
            }
            let q = CpnrQuery { model: &model, h: 1, p0: 8.0, q0: 2.0, delta: 0.25, w, rate: 0.0, horizon: 4 };
            if cpnr_oracle(&q).unwrap().cpnr <= 0.2 {
                expected = Some(w);
                break;
            }
        }
        assert_eq!(got, expected);
    }

    fn triple_strategy() -> impl Strategy<Value = MarginTriple> {
        (0u32..81, 0u32..81, 100u32..201).prop_map(|(m, d, w)| MarginTriple::new(m, d, w))
    }

    proptest! {
        #[test]
        fn select_matches_brute_force(mut triples in prop::collection::vec(triple_strategy(), 1..50),
                                      seed in any::<u64>()) {
            triples.sort();
            triples.dedup();
            let chosen = select_optimal_triples(triples.clone()).unwrap();
            prop_assert_eq!(chosen, brute_force_argmin(&triples));
            prop_assert!(triples.contains(&chosen));
            // order independence
            let mut shuffled = triples.clone();
            let len = shuffled.len();
            shuffled.rotate_left((seed as usize) % len);
            shuffled.reverse();
            prop_assert_eq!(select_optimal_triples(shuffled).unwrap(), chosen);
        }

        #[test]
        fn set_grows_with_alpha(a1 in 0.0f64..0.5, a2 in 0.0f64..0.5) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let model = toy_model();
            let small = enumerate_indifference_set(&model, 1, 8.0, 0.0, 3, &small_grid(lo)).unwrap();
            let large = enumerate_indifference_set(&model, 1, 8.0, 0.0, 3, &small_grid(hi)).unwrap();
            let large_set: std::collections::HashSet<_> = large.elements.iter().map(|e| e.triple).collect();
            prop_assert!(small.elements.iter().all(|e| large_set.contains(&e.triple)));
        }
    }
}
