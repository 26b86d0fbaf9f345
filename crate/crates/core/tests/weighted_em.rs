mod common;

use common::checks::{em_case, kind_of, max_param_gap};
use proptest::prelude::*;
use scodkit::gmm::{standard_em_step, weighted_em_step, VarianceFloor, WeightedSampleSet};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn integer_weights_match_replicated_data(
        seed in any::<u64>(), n in 8usize..40, d in 1usize..4, k in 1usize..4, full in any::<bool>()
    ) {
        let c = em_case(seed, n, d, k, kind_of(full), 5);
        let floor = VarianceFloor::uniform(d, 1e-2);
        let ws = WeightedSampleSet::new(c.data.iter().map(Vec::as_slice).collect(), c.weights.clone()).unwrap();
        let replicated: Vec<&[f64]> = c
            .data
            .iter()
            .zip(&c.weights)
            .flat_map(|(y, w)| std::iter::repeat_n(y.as_slice(), *w as usize))
            .collect();
        let (mut gw, mut gs) = (c.init.clone(), c.init.clone());
        let mut previous = f64::NEG_INFINITY;
        for _ in 0..8 {
            let a = weighted_em_step(&gw, &ws, &floor).unwrap();
            let b = standard_em_step(&gs, &replicated, &floor).unwrap();
            prop_assert!((a.log_likelihood - b.log_likelihood).abs() <= 1e-10 * a.log_likelihood.abs().max(1.0));
            prop_assert_eq!(&a.reseeded, &b.reseeded);
            let gap = max_param_gap(&a.gmm, &b.gmm);
            prop_assert!(gap <= 1e-10);
            prop_assert!(a.log_likelihood >= previous - 1e-9);
            previous = if a.reseeded.is_empty() { a.log_likelihood } else { f64::NEG_INFINITY };
            gw = a.gmm;
            gs = b.gmm;
        }
    }

    #[test]
    fn equal_weights_are_bit_identical(
        seed in any::<u64>(), n in 8usize..40, d in 1usize..4, k in 1usize..4, full in any::<bool>(),
        scale in prop::sample::select(vec![1.0, 2.0, 4.0])
    ) {
        let c = em_case(seed, n, d, k, kind_of(full), 1);
        let floor = VarianceFloor::uniform(d, 1e-2);
        let samples: Vec<&[f64]> = c.data.iter().map(Vec::as_slice).collect();
        let ws = WeightedSampleSet::new(samples.clone(), vec![scale; c.data.len()]).unwrap();
        let (mut gw, mut gs) = (c.init.clone(), c.init.clone());
        for _ in 0..8 {
            let a = weighted_em_step(&gw, &ws, &floor).unwrap();
            let b = standard_em_step(&gs, &samples, &floor).unwrap();
            prop_assert_eq!(&a.gmm, &b.gmm);
            prop_assert_eq!(a.log_likelihood, scale * b.log_likelihood);
            gw = a.gmm;
            gs = b.gmm;
        }
    }
}
