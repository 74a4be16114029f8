//! Advantage actor-critic over a fetched option set, with greedy evaluation.

use rand::Rng;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::nn::{softmax_unchecked, Activation, DenseNet, Gradients, OptimizerState};
use crate::seeding::rng_for;
use crate::task::OptionId;

/// Logits are clamped to this magnitude so log-probabilities stay finite.
pub const LOGIT_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub episodes_per_update: usize,
    /// Hidden width of actor and critic; zero means linear.
    pub hidden: usize,
    pub env_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            episodes_per_update: 16,
            hidden: 0,
            env_steps: 200_000,
            eval_every: 50,
            eval_episodes: 1,
            seed: 0,
        }
    }
}

impl A2cConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.learning_rate, self.gamma, self.entropy_coef, self.value_coef]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.gamma > 0.0 && self.gamma <= 1.0) || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!("invalid A2C coefficients {self:?}")));
        }
        if self.episodes_per_update == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("A2C counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Greedy,
    Sample,
}

/// Actor and critic over an ordered action set of option ids.
#[derive(Debug, Clone, PartialEq)]
pub struct HrlPolicy {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub actions: Vec<OptionId>,
}

/// One frozen on-policy transition used for an update.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub action: usize,
    pub ret: f64,
    pub advantage: f64,
}

impl HrlPolicy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: usize, actions: Vec<OptionId>, rng: &mut R) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidInput("policy needs at least one option".into()));
        }
        let sizes = |out: usize| {
            if hidden == 0 {
                vec![state_dim, out]
            } else {
                vec![state_dim, hidden, out]
            }
        };
        let actor = DenseNet::glorot(&sizes(actions.len()), Activation::Relu, Activation::Identity, rng)?;
        let critic = DenseNet::glorot(&sizes(1), Activation::Relu, Activation::Identity, rng)?;
        Ok(Self { actor, critic, actions })
    }

    pub fn clamped_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.actor.forward(x)?;
        z.iter_mut().for_each(|v| *v = v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
        Ok(z)
    }

    pub fn action_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_unchecked(&self.clamped_logits(x)?))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(x)?[0])
    }

    pub fn greedy_action(&self, x: &[f64]) -> Result<usize> {
        let z = self.clamped_logits(x)?;
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Mean of `-log π(a|x)·A - β·H(π(x))` and its actor gradients.
    pub fn actor_loss_and_grad(&self, samples: &[Sample], entropy_coef: f64) -> Result<(f64, Gradients)> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("no samples".into()));
        }
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut loss = 0.0;
        let n = samples.len() as f64;
        for s in samples {
            if s.action >= self.actions.len() {
                return Err(Error::InvalidInput(format!("action {} out of range", s.action)));
            }
            let trace = self.actor.forward_trace(&s.x)?;
            let raw = trace.output();
            let z: Vec<f64> = raw.iter().map(|v| v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).collect();
            let p = softmax_unchecked(&z);
            let logp: Vec<f64> = p.iter().map(|v| v.ln()).collect();
            let entropy: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
            loss += (-logp[s.action] * s.advantage - entropy_coef * entropy) / n;
            let dz: Vec<f64> = (0..z.len())
                .map(|j| {
                    let onehot = if j == s.action { 1.0 } else { 0.0 };
                    let pg = -s.advantage * (onehot - p[j]);
                    let ent = entropy_coef * p[j] * (logp[j] + entropy);
                    let g = (pg + ent) / n;
                    // clamped logits pass no gradient
                    if raw[j].abs() > LOGIT_CLAMP {
                        0.0
                    } else {
                        g
                    }
                })
                .collect();
            self.actor.backward_trace(&trace, &dz, &mut grads)?;
        }
        Ok((loss, grads))
    }

    /// Mean of `c·½(V(x) - G)²` and its critic gradients.
    pub fn critic_loss_and_grad(&self, samples: &[Sample], value_coef: f64) -> Result<(f64, Gradients)> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("no samples".into()));
        }
        let mut grads = Gradients::zeros_like(&self.critic);
        let mut loss = 0.0;
        let n = samples.len() as f64;
        for s in samples {
            let trace = self.critic.forward_trace(&s.x)?;
            let err = trace.output()[0] - s.ret;
            loss += value_coef * 0.5 * err * err / n;
            self.critic.backward_trace(&trace, &[value_coef * err / n], &mut grads)?;
        }
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub update: usize,
    pub env_steps: usize,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean_reward: f64,
    pub mean_length: f64,
    pub completion: f64,
}

/// Runs `episodes` episodes from the environment's initial state.
pub fn evaluate_policy(policy: &HrlPolicy, env: &mut Env, episodes: usize, mode: EvalMode, seed: u64) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode".into()));
    }
    let mut rng = rng_for(seed, &[0xE7A1]);
    let (mut reward, mut length, mut done_count) = (0.0, 0.0, 0usize);
    let mut x = Vec::new();
    for _ in 0..episodes {
        env.reset();
        while !env.is_done() {
            env.world().encode_into(env.state(), &mut x);
            let a = match mode {
                EvalMode::Greedy => policy.greedy_action(&x)?,
                EvalMode::Sample => sample_index(&policy.action_probs(&x)?, &mut rng),
            };
            env.step(policy.actions[a])?;
        }
        reward += env.episode_return();
        length += env.steps() as f64;
        done_count += env.completed() as usize;
    }
    let n = episodes as f64;
    Ok(Evaluation {
        mean_reward: reward / n,
        mean_length: length / n,
        completion: done_count as f64 / n,
    })
}

fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Trains a fresh policy over `fetched` on the environment's fixed MDP.
pub fn train_policy(env: &mut Env, fetched: &[OptionId], config: &A2cConfig) -> Result<(HrlPolicy, LearningCurve)> {
    config.validate()?;
    let mut rng = rng_for(config.seed, &[0xA2C]);
    let mut policy = HrlPolicy::new(env.world().state_dim(), config.hidden, fetched.to_vec(), &mut rng)?;
    let mut actor_opt = OptimizerState::adam(config.learning_rate)?;
    let mut critic_opt = OptimizerState::adam(config.learning_rate)?;
    let mut curve = LearningCurve::default();
    let mut steps = 0usize;
    let mut update = 0usize;
    let mut x = Vec::new();

    let record = |policy: &HrlPolicy, env: &mut Env, update: usize, steps: usize, curve: &mut LearningCurve| -> Result<()> {
        let e = evaluate_policy(policy, env, config.eval_episodes, EvalMode::Greedy, config.seed)?;
        curve.points.push(CurvePoint {
            update,
            env_steps: steps,
            mean_reward: e.mean_reward,
            mean_length: e.mean_length,
            completion: e.completion,
        });
        Ok(())
    };
    record(&policy, env, 0, 0, &mut curve)?;

    while steps < config.env_steps {
        let mut samples = Vec::new();
        for _ in 0..config.episodes_per_update {
            env.reset();
            let start = samples.len();
            let mut rewards = Vec::new();
            while !env.is_done() {
                env.world().encode_into(env.state(), &mut x);
                let a = sample_index(&policy.action_probs(&x)?, &mut rng);
                let out = env.step(policy.actions[a])?;
                rewards.push(out.reward);
                samples.push(Sample {
                    x: x.clone(),
                    action: a,
                    ret: 0.0,
                    advantage: 0.0,
                });
            }
            let mut g = 0.0;
            for (i, r) in rewards.iter().enumerate().rev() {
                g = r + config.gamma * g;
                samples[start + i].ret = g;
            }
            steps += rewards.len();
        }
        for s in &mut samples {
            s.advantage = s.ret - policy.value(&s.x)?;
        }
        let (_, ga) = policy.actor_loss_and_grad(&samples, config.entropy_coef)?;
        let (_, gc) = policy.critic_loss_and_grad(&samples, config.value_coef)?;
        actor_opt.step_net(&mut policy.actor, &ga)?;
        critic_opt.step_net(&mut policy.critic, &gc)?;
        update += 1;
        if update % config.eval_every == 0 || steps >= config.env_steps {
            record(&policy, env, update, steps, &mut curve)?;
        }
    }
    Ok((policy, curve))
}
