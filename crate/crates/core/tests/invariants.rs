mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dmgt::classbalance::{target_for_threshold, threshold_for_target, SoftClassifier};
use dmgt::engine::{dmgt, fed_dmgt, StreamInput};
use dmgt::oracle::{opt_bruteforce, verify_dmgt};
use dmgt::point::{Point, Stream};
use dmgt::schedule::ThresholdSchedule;
use dmgt::set::SelectedSet;
use dmgt::value::{approx_eq, ValueFunctionHandle};

use common::{instance, reference_bound, reference_opt, schedule, Family, Order, ScheduleKind, FAMILIES, ORDERS, SCHEDULE_KINDS};

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(FAMILIES.to_vec())
}

fn order() -> impl Strategy<Value = Order> {
    prop::sample::select(ORDERS.to_vec())
}

fn kind() -> impl Strategy<Value = ScheduleKind> {
    prop::sample::select(SCHEDULE_KINDS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bound_holds(seed: u64, fam in family(), ord in order(), k in kind(), n in 6usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, fam, n, ord, 0);
        let cfg = schedule(&mut rng, k, inst.scale());
        let trace = common::run_dmgt(&inst, &cfg);
        let report = verify_dmgt(&trace, inst.f.as_ref(), &inst.points).unwrap();
        prop_assert_eq!(report.pass, Some(true));
        prop_assert!(report.floor_holds);
        let r = reference_bound(inst.f.as_ref(), &inst.points, &trace.selected, &trace.thresholds, 1);
        prop_assert!(r.holds(), "{:?}", r);
    }

    #[test]
    fn oracle_matches_bitmask_enumeration(seed: u64, fam in family(), n in 1usize..=11, k in 0usize..=11) {
        let k = k.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, fam, n, Order::Random, 0);
        let o = opt_bruteforce(inst.f.as_ref(), &inst.points, k).unwrap();
        let (v, _) = reference_opt(inst.f.as_ref(), &inst.points, k);
        prop_assert!(approx_eq(o.value, v), "{} vs {}", o.value, v);
        prop_assert_eq!(o.ids.len(), k);
    }

    #[test]
    fn value_ignores_insertion_order(seed: u64, fam in family(), n in 1usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, fam, n, Order::Random, 0);
        let a = SelectedSet::revealed(&inst.points).unwrap();
        let mut shuffled = inst.points.clone();
        shuffled.shuffle(&mut rng);
        let b = SelectedSet::revealed(&shuffled).unwrap();
        prop_assert!(approx_eq(inst.f.value(&a).unwrap(), inst.f.value(&b).unwrap()));
    }

    #[test]
    fn incremental_state_matches_recomputation(seed: u64, fam in family(), n in 2usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, fam, n, Order::Random, 0);
        let mut h = ValueFunctionHandle::new(Arc::clone(&inst.f));
        for (t, p) in inst.points.iter().enumerate() {
            let stateless = inst.f.marginal_gain(p.view(), h.committed()).unwrap();
            prop_assert!(approx_eq(h.gain(p.view()).unwrap(), stateless));
            if t % 2 == 0 {
                h.commit(Arc::new(p.clone()), p.reveal_label(), t + 1).unwrap();
                prop_assert!(approx_eq(h.committed_value(), inst.f.value(h.committed()).unwrap()));
            }
        }
    }

    #[test]
    fn runs_are_deterministic(seed: u64, fam in family(), k in kind(), n in 1usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, fam, n, Order::Random, 0);
        let cfg = schedule(&mut rng, k, inst.scale());
        let a = common::run_dmgt(&inst, &cfg);
        let b = common::run_dmgt(&inst, &cfg);
        prop_assert_eq!(serde_json::to_string(&a.decisions).unwrap(), serde_json::to_string(&b.decisions).unwrap());
        prop_assert_eq!(a.touched, n);
    }

    #[test]
    fn decisions_depend_only_on_the_past(seed: u64, fam in family(), k in kind(), n in 2usize..=30, cut in 1usize..30) {
        let cut = cut.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, fam, n, Order::Random, 0);
        let cfg = schedule(&mut rng, k, inst.scale());
        let full = common::run_dmgt(&inst, &cfg);
        let mut h = ValueFunctionHandle::new(Arc::clone(&inst.f));
        let mut s = ThresholdSchedule::from_config(&cfg).unwrap();
        let prefix = dmgt(Stream::from_points(inst.points[..cut].to_vec()), &mut h, &mut s).unwrap();
        prop_assert_eq!(&full.decisions[..cut], &prefix.decisions[..]);
    }

    #[test]
    fn pooled_selection_is_the_union(seed: u64, fam in family(), n in 4usize..=20, m in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, fam, n, Order::Random, 0);
        let parts = common::split(&mut rng, &inst.points, m.min(n));
        let scale = inst.scale();
        let inputs: Vec<StreamInput> = parts
            .iter()
            .map(|p| {
                let cfg = schedule(&mut rng, ScheduleKind::Jitter, scale);
                StreamInput::new(Stream::from_points(p.clone()), ThresholdSchedule::from_config(&cfg).unwrap())
            })
            .collect();
        let run = fed_dmgt(inputs, &inst.f).unwrap();
        let mut expect: Vec<u64> = run.traces().flat_map(|t| t.selected.ids()).collect();
        expect.sort_unstable();
        prop_assert_eq!(run.selected.sorted_ids(), expect);
        let lo = run.traces().filter_map(|t| t.tau_min()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(run.tau_min(), Some(lo));
    }

    #[test]
    fn calibration_round_trips(n in 0u64..100_000) {
        let t = target_for_threshold(threshold_for_target(n)).unwrap();
        prop_assert!((t.real - n as f64).abs() <= 1e-6 * (n as f64).max(1.0));
    }

    #[test]
    fn predictions_are_distributions(k in 2usize..12, alpha in 0.0f64..=1.0, c in 0usize..12, noise in 0.0f64..0.5, seed: u64) {
        let alpha = alpha.max(1.0 / k as f64);
        let c = c % k;
        let mut f = vec![0.0; k];
        f[c] = 1.0;
        let clf = SoftClassifier::new(k, alpha).unwrap().with_noise(noise, seed).unwrap();
        let p = clf.predict(Point::with_features(1, f).view()).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        if noise == 0.0 {
            prop_assert!((p[c] - alpha).abs() < 1e-12);
        }
    }
}
