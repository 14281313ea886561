mod common;

use cpnr_core::engine::{cpnr, exact_first_passage, CpnrQuery};
use cpnr_core::oracle::cpnr_oracle;
use common::{random_instance, Instance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn query(i: &Instance) -> CpnrQuery<'_> {
    CpnrQuery {
        model: &i.model,
        h: i.h,
        p0: i.p0,
        q0: i.q0,
        delta: i.delta,
        w: i.w,
        rate: i.rate,
        horizon: i.horizon,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn engine_agrees_with_nested_loops(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), (1, 10), (1, 12));
        let fast = cpnr(&query(&inst)).unwrap();
        let slow = cpnr_oracle(&query(&inst)).unwrap();
        prop_assert_eq!(&fast.k, &slow.k);
        prop_assert_eq!(&fast.a, &slow.a);
        prop_assert!((fast.cpnr - slow.cpnr).abs() <= 1e-12);
        for (x, y) in fast.per_day.iter().zip(&slow.per_day) {
            prop_assert!((x.prob_c - y.prob_c).abs() <= 1e-12);
            prop_assert!((x.prob_nc - y.prob_nc).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_first_passage_is_a_distribution(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), (1, 8), (1, 10));
        let e = exact_first_passage(&query(&inst)).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&e.prob_c));
        prop_assert!(e.prob_nc <= e.prob_c + 1e-12);
        prop_assert!((0.0..=1.0).contains(&e.cpnr));
        let r = cpnr(&query(&inst)).unwrap();
        if r.k.iter().all(|&k| k == 0) {
            prop_assert_eq!(e.prob_c, 0.0);
        }
    }

    #[test]
    fn scaling_prices_keeps_result(seed in any::<u64>(), lambda in 0.01f64..500.0) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), (1, 8), (1, 8));
        let base = cpnr(&query(&inst)).unwrap();
        let model = inst.model.scaled(lambda);
        let q = CpnrQuery { model: &model, p0: inst.p0 * lambda, q0: inst.q0 * lambda, ..query(&inst) };
        let scaled = cpnr(&q).unwrap();
        prop_assert_eq!(&base.k, &scaled.k);
        prop_assert_eq!(&base.a, &scaled.a);
        prop_assert!((base.cpnr - scaled.cpnr).abs() <= 1e-12);
    }
}
