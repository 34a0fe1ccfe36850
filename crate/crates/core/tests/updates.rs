mod common;

use std::collections::BTreeMap;

use acf_core::mcvq::McvqModel;
use common::*;
use proptest::prelude::*;

fn model(seed: u64) -> McvqModel {
    random_mcvq(&mut rng(seed), 8, 3, 3, 6)
}

proptest! {
    #[test]
    fn any_update_order_gives_the_batch_posterior(
        seed in 0u64..50,
        obs in proptest::collection::btree_map(0usize..8, 1u8..=6, 0..8),
        rotate in 0usize..8,
    ) {
        let m = model(seed);
        let batch = m.update_attitudes(&obs).unwrap();
        let mut order: Vec<(usize, u8)> = obs.iter().map(|(&j, &r)| (j, r)).collect();
        if !order.is_empty() {
            let n = order.len();
            order.rotate_left(rotate % n);
            order.reverse();
        }
        let mut s = m.update_attitudes(&BTreeMap::new()).unwrap();
        for (j, r) in order {
            s = m.incremental_update(&s, j, r).unwrap();
        }
        prop_assert!(max_abs_diff(s.attitude_posterior(), batch.attitude_posterior()) < 1e-12);
    }
}
