mod common;

use std::sync::Arc;

use common::{desk_craft, desk_kitchen};
use oihrl::domain::DistractorPolicy;
use oihrl::env::{Env, EnvState, World};
use oihrl::oracle::replay;
use oihrl::task::{OptionId, OptionKind, VariantRef};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opt(world: &World, name: &str) -> OptionId {
    let g = world.graph();
    g.option_of(g.task_by_name(name).unwrap()).unwrap()
}

fn all_variants(world: &World) -> Vec<VariantRef> {
    world.graph().composite_variants()
}

#[test]
fn empty_scene_encodes_to_zeros() {
    for (_, w) in [desk_craft(0), desk_kitchen()] {
        let x = w.encode(&EnvState::empty(w.num_objects()));
        assert_eq!(x.len(), w.state_dim());
        assert!(x.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn no_distractors_means_only_required_objects() {
    let (mut d, _) = desk_craft(0);
    d.episode.distractors = DistractorPolicy::FixedCount(0);
    let w = World::new(Arc::new(d.graph.clone()), d.episode).unwrap();
    for v in all_variants(&w) {
        let goal = w.goal(v).unwrap();
        let s = w.reset(&goal, 5);
        for (i, &p) in s.presence.iter().enumerate() {
            assert_eq!(p, goal.required.iter().any(|o| o.0 == i));
        }
    }
}

#[test]
fn microwave_egg_completes_stove_goal() {
    let (_, w) = desk_kitchen();
    let g = w.graph();
    let goal = w.goal(VariantRef { task: g.task_by_name("cooked_egg").unwrap(), variant: 0 }).unwrap();
    let mut s0 = w.reset(&goal, 0);
    s0.presence[g.object_by_name("microwave").unwrap().0] = true;
    let plan = ["pickup_egg", "puton_microwave", "cookon_microwave"].map(|n| opt(&w, n));
    let t = replay(&w, &goal, &s0, &plan).unwrap().expect("microwave route should complete");
    assert_eq!(t.len(), 3);
    assert!(t.ret > 0.0);
}

#[test]
fn kitchen_encoding_dimension_is_fixed() {
    let (_, w) = desk_kitchen();
    for (i, v) in all_variants(&w).into_iter().enumerate() {
        let goal = w.goal(v).unwrap();
        assert_eq!(w.encode(&w.reset(&goal, i as u64)).len(), w.state_dim());
    }
}

fn random_rollout(world: Arc<World>, variant_idx: usize, seed: u64) {
    let variants = all_variants(&world);
    let v = variants[variant_idx % variants.len()];
    let goal = Arc::new(world.goal(v).unwrap());
    let mut env = Env::new(world.clone(), goal.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = world.num_options();
    let max_len = world.settings().max_len;
    env.reset();
    while !env.is_done() {
        let before = env.state().clone();
        let o = OptionId(rng.gen_range(0..k));
        let out = env.step(o).unwrap();
        let after = env.state().clone();
        world.check_state(&after).unwrap();
        if !out.applied {
            assert_eq!(world.encode(&before), world.encode(&after));
        }
        let b = world.graph().option_binding(o);
        if out.applied && b.kind == OptionKind::Pickup && world.graph().dynamics == oihrl::task::Dynamics::Craft {
            let flips = world
                .encode(&before)
                .iter()
                .zip(world.encode(&after))
                .filter(|(a, b)| **a != *b)
                .count();
            assert_eq!(flips, 2);
        }
        assert!(env.steps() <= max_len);
    }
    assert!(env.steps() <= max_len);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn craft_transitions_keep_state_valid(v in 0usize..1000, seed in any::<u64>()) {
        random_rollout(desk_craft(0).1, v, seed);
    }

    #[test]
    fn kitchen_transitions_keep_state_valid(v in 0usize..1000, seed in any::<u64>()) {
        random_rollout(desk_kitchen().1, v, seed);
    }

    #[test]
    fn reset_is_valid_and_reproducible(v in 0usize..1000, seed in any::<u64>()) {
        for (_, w) in [desk_craft(1), desk_kitchen()] {
            let variants = all_variants(&w);
            let goal = w.goal(variants[v % variants.len()]).unwrap();
            let s = w.reset(&goal, seed);
            w.check_state(&s).unwrap();
            prop_assert_eq!(&s, &w.reset(&goal, seed));
            for o in &goal.required {
                prop_assert!(s.presence[o.0]);
            }
            prop_assert!(!goal.is_achieved(&s));
        }
    }
}
