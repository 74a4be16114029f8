mod common;

use common::{desk_craft, desk_kitchen, random_probs, random_trajectories, target_sum, top_p_is_minimal, top_p_is_monotone};
use oihrl::index::{target_from_trajectories, Checkpoint, CheckpointExpectation, KeyInit, Retriever, SkipReason};
use oihrl::oracle::Trajectory;
use oihrl::task::OptionId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ids(v: &[usize]) -> Vec<OptionId> {
    v.iter().map(|&i| OptionId(i)).collect()
}

#[test]
fn target_worked_examples() {
    let t = target_from_trajectories(&[], 4).unwrap();
    assert_eq!(t.skip, Some(SkipReason::NoTrajectories));
    assert!(t.y.iter().all(|&v| v == 0.0));

    let one = Trajectory::from_options(ids(&[0, 1]), 1.0);
    assert_eq!(target_from_trajectories(&[one.clone()], 4).unwrap().y, vec![0.5, 0.5, 0.0, 0.0]);

    let two = Trajectory::from_options(ids(&[0, 2, 3]), 0.5);
    let y = target_from_trajectories(&[one, two], 4).unwrap().y;
    for (a, b) in y.iter().zip([4.0 / 9.0, 3.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0]) {
        assert!((a - b).abs() < 1e-15, "{y:?}");
    }
}

#[test]
fn near_uniform_cold_start_fetches_most_of_the_library() {
    for (_, w) in [desk_craft(0), desk_kitchen()] {
        let k = w.num_options();
        let need = (0.9 * k as f64).ceil() as usize;
        for init in [KeyInit::Zeros, KeyInit::ScaledGlorot(1e-3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let r = Retriever::new(w.state_dim(), 100, 50, k, init, &mut rng).unwrap();
            for v in w.graph().composite_variants().into_iter().take(50) {
                let goal = w.goal(v).unwrap();
                let x = w.encode(&w.reset(&goal, 1));
                let got = r.select(&x, 0.9).unwrap().fetched.len();
                assert!(got >= need, "{init:?}: fetched {got} of {k}, need {need}");
            }
        }
    }
}

#[test]
fn checkpoint_rejects_truncation_and_wrong_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = Retriever::new(6, 4, 3, 5, KeyInit::ScaledGlorot(1.0), &mut rng).unwrap();
    let ck = Checkpoint { domain_hash: [7; 32], retriever: r };
    ck.save(&path).unwrap();
    let expect = CheckpointExpectation { k: 5, d: 3, state_dim: 6, domain_hash: [7; 32] };
    assert_eq!(Checkpoint::load_expecting(&path, &expect).unwrap(), ck);

    let bad_shape = CheckpointExpectation { k: 6, ..expect };
    let msg = Checkpoint::load_expecting(&path, &bad_shape).unwrap_err().to_string();
    assert!(msg.contains("shape mismatch"), "{msg}");
    let bad_hash = CheckpointExpectation { domain_hash: [0; 32], ..expect };
    assert!(Checkpoint::load_expecting(&path, &bad_hash).is_err());

    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 4, 20, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(Checkpoint::load(&path).is_err(), "accepted {cut} bytes");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn top_p_fetch_is_minimal(seed in any::<u64>(), k in 1usize..=64, p in 0.01f64..0.99) {
        let probs = random_probs(&mut ChaCha8Rng::seed_from_u64(seed), k);
        prop_assert!(top_p_is_minimal(&probs, p).is_ok(), "{:?}", top_p_is_minimal(&probs, p));
    }

    #[test]
    fn top_p_fetch_grows_with_threshold(seed in any::<u64>(), k in 1usize..=64, p1 in 0.01f64..0.99, p2 in 0.01f64..0.99) {
        let probs = random_probs(&mut ChaCha8Rng::seed_from_u64(seed), k);
        prop_assert!(top_p_is_monotone(&probs, p1, p2).is_ok());
    }

    #[test]
    fn targets_sum_to_one(seed in any::<u64>(), k in 1usize..40) {
        let ts = random_trajectories(&mut ChaCha8Rng::seed_from_u64(seed), k);
        prop_assert!((target_sum(&ts, k) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_positive_returns_skip(seed in any::<u64>()) {
        let mut ts = random_trajectories(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        ts.iter_mut().for_each(|t| t.ret = -t.ret.abs());
        let t = target_from_trajectories(&ts, 8).unwrap();
        prop_assert_eq!(t.skip, Some(SkipReason::NonPositiveReturn));
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), hidden in 0usize..5, d in 1usize..5, k in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Retriever::new(4, hidden, d, k, KeyInit::ScaledGlorot(1.0), &mut rng).unwrap();
        let ck = Checkpoint { domain_hash: [seed as u8; 32], retriever: r };
        let back = Checkpoint::from_bytes(&ck.to_bytes(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, ck);
    }
}
