use coarsen::certify::battery::{random_model_spec, RandomModelConfig};
use coarsen::certify::{compensator, counting_of_r, martingale_residual, Filtration, FiltrationKind};
use coarsen::gcmp::{observed_partition, DEFAULT_PATH_CAP};
use coarsen::likelihood::lr;
use coarsen::pathspace::{cond_expect, generate_partition, is_measurable, join, rn_derivative, PathFunction};
use coarsen::Model;
use proptest::prelude::*;

fn model(index: u64) -> Model {
    random_model_spec(99, index, RandomModelConfig::default()).build(DEFAULT_PATH_CAP).unwrap().model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_ratios_are_positive(index in 0u64..10_000) {
        let m = model(index);
        let fields = [m.x_partition(), m.r_partition(), observed_partition(&m), m.full_partition()];
        for num in m.pairs() {
            for den in m.pairs() {
                for f in &fields {
                    prop_assert!(lr(&m, f, num, den).unwrap().values().iter().all(|v| *v > 0.0));
                }
            }
        }
    }

    #[test]
    fn conditional_expectation_of_one_is_one(index in 0u64..10_000, k in 1usize..4) {
        let m = model(index);
        let g = generate_partition(m.space(), "mod", |i, _| i % k);
        for pair in m.pairs() {
            let e = cond_expect(&PathFunction::constant(m.space(), 1.0), &g, m.measure(pair)).unwrap();
            prop_assert!(e.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));
        }
    }

    #[test]
    fn joins_refine_and_keep_measurability(index in 0u64..10_000, a in 1usize..4, b in 1usize..4) {
        let m = model(index);
        let pa = generate_partition(m.space(), "a", |i, _| i % a);
        let pb = generate_partition(m.space(), "b", |i, _| (i / 2) % b);
        let j = join(&pa, &pb).unwrap();
        prop_assert!(j.refines(&pa).unwrap() && j.refines(&pb).unwrap());
        let f = PathFunction::from_fn(m.space(), |i, _| (i % a) as f64);
        prop_assert!(is_measurable(&f, &pa, 1e-12).unwrap());
        prop_assert!(is_measurable(&f, &j, 1e-12).unwrap());
        let pairs = m.pairs();
        let rn = rn_derivative(m.measure(pairs[0]), m.measure(pairs[pairs.len() - 1]), &j).unwrap();
        prop_assert!(is_measurable(&rn, &j, 1e-12).unwrap());
    }

    #[test]
    fn compensators_are_martingale_compensators(index in 0u64..10_000) {
        let m = model(index);
        let n = counting_of_r(&m);
        for kind in [FiltrationKind::Observed, FiltrationKind::FullX, FiltrationKind::Joint] {
            let f = Filtration::build(&m, kind);
            prop_assert!(f.is_increasing());
            for pair in m.pairs() {
                let c = compensator(&m, &n, &f, pair);
                prop_assert!(martingale_residual(&m, &n, &f, &c) <= 1e-12);
            }
        }
    }
}
