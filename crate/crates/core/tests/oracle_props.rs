mod common;

use std::collections::BTreeSet;

use common::{desk_craft, desk_kitchen};
use oihrl::oracle::{oracle_solve, replay, OracleConfig};
use oihrl::task::OptionId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn full_library_oracle_solves_every_training_variant() {
    for (d, w) in [desk_craft(0), desk_kitchen()] {
        let all: BTreeSet<OptionId> = (0..w.num_options()).map(OptionId).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, &v) in d.split.train.iter().enumerate() {
            let goal = w.goal(v).unwrap();
            let s0 = w.reset(&goal, i as u64);
            let ts = oracle_solve(&w, &goal, &s0, &all, &OracleConfig::default(), &mut rng).unwrap();
            assert!(!ts.is_empty(), "no trajectory for {}", w.graph().variant_name(v));
            for t in &ts {
                assert!(t.ret > 0.0);
                assert!(replay(&w, &goal, &s0, &t.options).unwrap().is_some());
            }
        }
    }
}

#[test]
fn kitchen_oracle_return_is_one_minus_step_cost() {
    let (d, w) = desk_kitchen();
    let all: BTreeSet<OptionId> = (0..w.num_options()).map(OptionId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in w.graph().composite_variants() {
        let goal = w.goal(v).unwrap();
        let s0 = w.reset(&goal, 2);
        for t in oracle_solve(&w, &goal, &s0, &all, &OracleConfig::default(), &mut rng).unwrap() {
            assert_eq!(t.ret, 1.0 - d.episode.step_penalty * t.len() as f64);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_stays_inside_the_fetched_set(v in 0usize..1000, seed in any::<u64>(), keep in 0.3f64..1.0) {
        for (_, w) in [desk_craft(0), desk_kitchen()] {
            let variants = w.graph().composite_variants();
            let goal = w.goal(variants[v % variants.len()]).unwrap();
            let s0 = w.reset(&goal, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut fetched: BTreeSet<OptionId> =
                (0..w.num_options()).map(OptionId).filter(|_| rng.gen_bool(keep)).collect();
            if rng.gen_bool(0.5) {
                fetched.extend(goal.recipe.options.iter().copied());
            }
            let ts = oracle_solve(&w, &goal, &s0, &fetched, &OracleConfig { num_orders: 3 }, &mut rng).unwrap();
            prop_assert_eq!(ts.is_empty(), !goal.recipe.options.is_subset(&fetched));
            for t in &ts {
                prop_assert!(t.options.iter().all(|o| fetched.contains(o)));
                let r = replay(&w, &goal, &s0, &t.options).unwrap();
                prop_assert!(r.is_some());
            }
        }
    }
}
