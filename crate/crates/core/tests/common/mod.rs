#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use oihrl::craftworld::{generate_craftworld, CraftWorldParams};
use oihrl::domain::Domain;
use oihrl::env::World;
use oihrl::nn::DenseNet;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error with a floor so that two near-zero values compare equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn flat_params(net: &DenseNet) -> Vec<f64> {
    net.param_blocks().into_iter().flatten().copied().collect()
}

pub fn set_param(net: &mut DenseNet, mut i: usize, v: f64) {
    for block in net.param_blocks_mut() {
        if i < block.len() {
            block[i] = v;
            return;
        }
        i -= block.len();
    }
    panic!("parameter index out of range");
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every parameter of `net`.
pub fn fd_net(net: &DenseNet, analytic: &[f64], loss: impl Fn(&DenseNet) -> f64) -> f64 {
    let base = flat_params(net);
    assert_eq!(base.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for (i, &v) in base.iter().enumerate() {
        set_param(&mut probe, i, v + FD_STEP);
        let up = loss(&probe);
        set_param(&mut probe, i, v - FD_STEP);
        let down = loss(&probe);
        set_param(&mut probe, i, v);
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

pub fn desk_craft(seed: u64) -> (Domain, Arc<World>) {
    let d = generate_craftworld(&CraftWorldParams::desk(), seed).unwrap();
    let w = Arc::new(World::new(Arc::new(d.graph.clone()), d.episode).unwrap());
    (d, w)
}

pub fn desk_kitchen() -> (Domain, Arc<World>) {
    let d = Domain::load(&config_path("domains/kitchen_desk.toml")).unwrap();
    let w = Arc::new(World::new(Arc::new(d.graph.clone()), d.episode).unwrap());
    (d, w)
}

use oihrl::a2c::{HrlPolicy, Sample};
use oihrl::index::{KeyInit, Retriever};
use oihrl::nn::Gradients;
use oihrl::task::OptionId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn flat_grads(g: &Gradients) -> Vec<f64> {
    g.blocks().into_iter().flatten().copied().collect()
}

/// Smallest distance of any hidden pre-activation from the ReLU kink.
fn kink_margin(net: &DenseNet, xs: &[Vec<f64>]) -> f64 {
    let mut m = f64::INFINITY;
    for x in xs {
        let t = net.forward_trace(x).unwrap();
        let pre = t.pre_activations();
        for z in &pre[..pre.len() - 1] {
            m = z.iter().fold(m, |m, v| m.min(v.abs()));
        }
    }
    m
}

fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen_bool(0.4) { 1.0 } else { rng.gen_range(-1.0..1.0) }).collect()
}

pub struct FdReport {
    pub first: f64,
    pub second: f64,
}

/// Worst relative error of the retriever gradient, query network first and
/// keys second. `None` when the instance sits too close to a ReLU kink.
pub fn retriever_fd(seed: u64) -> Option<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state_dim = rng.gen_range(3..8);
    let hidden = rng.gen_range(0..6);
    let d = rng.gen_range(2..6);
    let k = rng.gen_range(3..9);
    let r = Retriever::new(state_dim, hidden, d, k, KeyInit::ScaledGlorot(1.0), &mut rng).unwrap();
    let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..rng.gen_range(1..4))
        .map(|_| {
            let x = random_input(&mut rng, state_dim);
            let mut y: Vec<f64> = (0..k).map(|_| if rng.gen_bool(0.4) { rng.gen() } else { 0.0 }).collect();
            let s: f64 = y.iter().sum();
            if s > 0.0 {
                y.iter_mut().for_each(|v| *v /= s);
            }
            (x, y)
        })
        .collect();
    let xs: Vec<Vec<f64>> = batch.iter().map(|b| b.0.clone()).collect();
    if kink_margin(r.qgn(), &xs) < 1e-3 {
        return None;
    }
    let (_, g) = r.loss_and_grad(&batch).unwrap();
    let qgn_err = fd_net(r.qgn(), &flat_grads(&g.qgn), |net| {
        let mut probe = r.clone();
        *probe.qgn_mut() = net.clone();
        probe.loss_and_grad(&batch).unwrap().0
    });
    let mut probe = r.clone();
    let mut keys_err = 0.0f64;
    for i in 0..g.keys.len() {
        let v = r.index().keys()[i];
        probe.index_mut().keys_mut()[i] = v + FD_STEP;
        let up = probe.loss_and_grad(&batch).unwrap().0;
        probe.index_mut().keys_mut()[i] = v - FD_STEP;
        let down = probe.loss_and_grad(&batch).unwrap().0;
        probe.index_mut().keys_mut()[i] = v;
        keys_err = keys_err.max(rel_err(g.keys[i], (up - down) / (2.0 * FD_STEP)));
    }
    Some(FdReport {
        first: qgn_err,
        second: keys_err,
    })
}

/// Worst relative error of the actor gradient first and critic second.
pub fn policy_fd(seed: u64) -> Option<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state_dim = rng.gen_range(3..8);
    let hidden = rng.gen_range(0..6);
    let actions: Vec<OptionId> = (0..rng.gen_range(2..6)).map(OptionId).collect();
    let policy = HrlPolicy::new(state_dim, hidden, actions.clone(), &mut rng).unwrap();
    let samples: Vec<Sample> = (0..rng.gen_range(1..5))
        .map(|_| Sample {
            x: random_input(&mut rng, state_dim),
            action: rng.gen_range(0..actions.len()),
            ret: rng.gen_range(-1.0..1.0),
            advantage: rng.gen_range(-1.0..1.0),
        })
        .collect();
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    if kink_margin(&policy.actor, &xs) < 1e-3 || kink_margin(&policy.critic, &xs) < 1e-3 {
        return None;
    }
    let beta = 0.01;
    let (_, ga) = policy.actor_loss_and_grad(&samples, beta).unwrap();
    let actor_err = fd_net(&policy.actor, &flat_grads(&ga), |net| {
        let mut p = policy.clone();
        p.actor = net.clone();
        p.actor_loss_and_grad(&samples, beta).unwrap().0
    });
    let (_, gc) = policy.critic_loss_and_grad(&samples, 0.5).unwrap();
    let critic_err = fd_net(&policy.critic, &flat_grads(&gc), |net| {
        let mut p = policy.clone();
        p.critic = net.clone();
        p.critic_loss_and_grad(&samples, 0.5).unwrap().0
    });
    Some(FdReport {
        first: actor_err,
        second: critic_err,
    })
}

use oihrl::index::{target_from_trajectories, top_p};
use oihrl::oracle::Trajectory;

/// Checks that the fetched set's mass exceeds `p` and no smaller set could.
pub fn top_p_is_minimal(probs: &[f64], p: f64) -> Result<(), String> {
    let fetched = top_p(probs, p).map_err(|e| e.to_string())?;
    let mass: f64 = fetched.iter().map(|o| probs[o.0]).sum();
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let best_smaller: f64 = sorted[..fetched.len() - 1].iter().sum();
    if mass <= p && fetched.len() < probs.len() {
        return Err(format!("mass {mass} does not exceed {p}"));
    }
    if best_smaller > p {
        return Err(format!("{} options would already exceed {p}", fetched.len() - 1));
    }
    let floor = fetched.iter().map(|o| probs[o.0]).fold(f64::INFINITY, f64::min);
    if (0..probs.len()).any(|i| probs[i] > floor && !fetched.iter().any(|o| o.0 == i)) {
        return Err("a more probable option was left out".into());
    }
    Ok(())
}

pub fn top_p_is_monotone(probs: &[f64], p1: f64, p2: f64) -> Result<(), String> {
    let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
    let a = top_p(probs, lo).map_err(|e| e.to_string())?;
    let b = top_p(probs, hi).map_err(|e| e.to_string())?;
    if a.iter().all(|o| b.contains(o)) {
        Ok(())
    } else {
        Err(format!("fetch at {lo} is not contained in fetch at {hi}"))
    }
}

pub fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let peaky = rng.gen_bool(0.5);
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.gen();
            if peaky {
                u.powi(6)
            } else if rng.gen_bool(0.2) {
                0.25
            } else {
                u
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn random_trajectories(rng: &mut ChaCha8Rng, k: usize) -> Vec<Trajectory> {
    (0..rng.gen_range(1..6))
        .map(|_| {
            let n = rng.gen_range(1..8);
            let options = (0..n).map(|_| OptionId(rng.gen_range(0..k))).collect();
            Trajectory::from_options(options, rng.gen_range(0.01..2.0))
        })
        .collect()
}

pub fn target_sum(trajectories: &[Trajectory], k: usize) -> f64 {
    target_from_trajectories(trajectories, k).unwrap().y.iter().sum()
}
