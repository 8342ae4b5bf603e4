//! Property tests: enumeration bijectivity, budget invariance, trace and
//! description round-trips, calibration round-trips.

use proptest::prelude::*;

use corrsense::divergence::{h_function, h_inverse, kl_normalized, kl_restriction_bound};
use corrsense::model::{
    class_size, is_member, member, member_rank, ContaminationClass, ModelKind, ProblemInstance,
    Truth,
};
use corrsense::rng::{stream, tag};
use corrsense::sensing::{
    run_session, Budget, History, RandomizedSubsampleStrategy, SingletonRoundsStrategy,
    TruncatedIntervalStrategy, UniformStrategy,
};

fn any_class() -> impl Strategy<Value = ContaminationClass> {
    prop_oneof![
        (1u32..=64, 1u32..=64).prop_map(|(n, k)| {
            let k = k.min(n);
            ContaminationClass::KSets { n, k }
        }),
        (1u32..=64, 1u32..=64).prop_map(|(n, k)| {
            let k = k.min(n);
            ContaminationClass::KIntervals { n, k }
        }),
        (1u32..=64, 1u32..=64).prop_map(|(n, k)| {
            let k = k.min(n);
            ContaminationClass::DisjointKIntervals { n, k }
        }),
        (1u32..=8, 1u32..=8, 1u32..=8, 1u32..=8).prop_map(|(n1, n2, k1, k2)| {
            ContaminationClass::Rectangles {
                n1,
                n2,
                k1: k1.min(n1),
                k2: k2.min(n2),
            }
        }),
    ]
}

proptest! {
    /// member / member_rank are inverse bijections onto sets of size k.
    #[test]
    fn enumeration_bijectivity(class in any_class(), seed in any::<u64>()) {
        let size = class_size(&class).unwrap();
        let mut rng = stream(seed, &[]);
        use rand::Rng;
        for _ in 0..16 {
            let index = rng.gen_range(0..size);
            let coords = member(&class, index).unwrap();
            prop_assert_eq!(coords.len(), class.k() as usize);
            prop_assert!(is_member(&class, &coords).unwrap());
            prop_assert_eq!(member_rank(&class, &coords).unwrap(), index);
        }
    }

    /// Sessions never exceed their budget, for any strategy and seed.
    #[test]
    fn budget_invariance(
        n in 2u32..=24,
        m in 1u32..=6,
        budget in 1u64..=512,
        seed in any::<u64>(),
        which in 0usize..4,
    ) {
        let inst = ProblemInstance::new(
            ContaminationClass::KSets { n, k: 1.max(n / 3) },
            0.4,
            ModelKind::Normalized,
            Truth::Alternative((1..=1.max(n / 3)).collect()),
        )
        .unwrap();
        let mut obs = stream(seed, &[tag::OBSERVATION]);
        let session = match which {
            0 => {
                let mut s = UniformStrategy::new(n, m).unwrap();
                run_session(&mut s, &inst, Budget::new(budget), &mut obs)
            }
            1 => {
                let k = if n % 2 == 0 { 2 } else { 1 };
                if k < 2 {
                    return Ok(());
                }
                let mut s = TruncatedIntervalStrategy::new(n, k, 2, m).unwrap();
                run_session(&mut s, &inst, Budget::new(budget), &mut obs)
            }
            2 => {
                let k = 4.min(n);
                if k < 4 {
                    return Ok(());
                }
                let mut internal = stream(seed, &[tag::STRATEGY]);
                match RandomizedSubsampleStrategy::new(n, k, 2.0, m, &mut internal) {
                    Ok(mut s) => run_session(&mut s, &inst, Budget::new(budget), &mut obs),
                    Err(_) => return Ok(()),
                }
            }
            _ => {
                let schedule: Vec<u32> = (1..=n).chain(1..=n).collect();
                let mut s = SingletonRoundsStrategy::new(schedule).unwrap();
                run_session(&mut s, &inst, Budget::new(budget), &mut obs)
            }
        };
        let session = session.unwrap();
        prop_assert!(session.history.total_cost() <= budget);
        prop_assert_eq!(session.history.total_cost(), session.budget.consumed());
    }

    /// Session traces survive the JSONL round trip.
    #[test]
    fn trace_round_trip(n in 2u32..=12, m in 1u32..=4, seed in any::<u64>()) {
        let inst = ProblemInstance::new(
            ContaminationClass::KSets { n, k: 1 },
            0.0,
            ModelKind::Normalized,
            Truth::Null,
        )
        .unwrap();
        let mut obs = stream(seed, &[tag::OBSERVATION]);
        let mut s = UniformStrategy::new(n, m).unwrap();
        let session = run_session(&mut s, &inst, Budget::new((n * m) as u64), &mut obs).unwrap();
        let text = session.history.to_jsonl();
        let back = History::from_jsonl(&text).unwrap();
        prop_assert_eq!(back, session.history);
    }

    /// h_inverse(h_function(b)) = b on (1, 200].
    #[test]
    fn h_round_trip(b in 1.000001f64..200.0) {
        let y = h_function(b).unwrap();
        let back = h_inverse(y).unwrap();
        prop_assert!((back - b).abs() < 1e-8, "b = {}, back = {}", b, back);
    }

    /// KL of a restricted contaminated block never exceeds the linear
    /// restriction bound D(rho, k) * s (normalized, rho <= 1/2).
    #[test]
    fn restriction_bound_dominates(
        k in 1u32..=64,
        s_frac in 0.0f64..=1.0,
        rho_idx in 1u32..=50,
    ) {
        let rho = rho_idx as f64 * 0.01;
        let s = ((k as f64 * s_frac).round() as u32).min(k);
        let kl = kl_normalized(rho, s).unwrap();
        let bound = kl_restriction_bound(rho, k, s, ModelKind::Normalized).unwrap();
        prop_assert!(kl <= bound + 1e-12, "rho={} k={} s={}: {} > {}", rho, k, s, kl, bound);
    }
}

/// Exhaustive enumeration for every class with k <= n <= 64 whose size stays
/// enumerable: all members distinct, of cardinality k, and rank-consistent.
#[test]
fn exhaustive_enumeration_small_sizes() {
    let mut classes: Vec<ContaminationClass> = Vec::new();
    for n in 1..=64u32 {
        for k in 1..=n {
            classes.push(ContaminationClass::KIntervals { n, k });
            classes.push(ContaminationClass::DisjointKIntervals { n, k });
            classes.push(ContaminationClass::KSets { n, k });
        }
    }
    for n1 in 1..=8u32 {
        for n2 in 1..=8u32 {
            for k1 in 1..=n1 {
                for k2 in 1..=n2 {
                    classes.push(ContaminationClass::Rectangles { n1, n2, k1, k2 });
                }
            }
        }
    }
    for class in classes {
        let size = match class_size(&class) {
            Ok(size) if size <= 20_000 => size,
            _ => continue,
        };
        let mut seen = std::collections::HashSet::new();
        for index in 0..size {
            let coords = member(&class, index).unwrap();
            assert_eq!(coords.len(), class.k() as usize, "{class:?}");
            assert!(is_member(&class, &coords).unwrap(), "{class:?} {coords:?}");
            assert_eq!(member_rank(&class, &coords).unwrap(), index, "{class:?}");
            assert!(seen.insert(coords), "{class:?} duplicate at {index}");
        }
        assert_eq!(seen.len(), size as usize);
    }
}
