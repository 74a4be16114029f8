//! Planner that stands in for a trained policy during meta-training: it returns
//! successful executions of a goal's recipe, each option used exactly once, in
//! orders drawn uniformly from all valid ones.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::env::{EnvState, Goal, World};
use crate::error::{Error, Result};
use crate::task::OptionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    /// Orders drawn per call before de-duplication.
    pub num_orders: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { num_orders: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub options: Vec<OptionId>,
    /// `states[0]` is the initial state; `states[i + 1]` follows `options[i]`.
    pub states: Vec<EnvState>,
    pub rewards: Vec<f64>,
    pub ret: f64,
}

impl Trajectory {
    /// A bare option sequence with a return, for building targets directly.
    pub fn from_options(options: Vec<OptionId>, ret: f64) -> Self {
        Self {
            options,
            states: Vec::new(),
            rewards: Vec::new(),
            ret,
        }
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }
}

/// Counts completions of every reachable (remaining options, state) node.
struct OrderCounter<'a> {
    world: &'a World,
    goal: &'a Goal,
    options: Vec<OptionId>,
    memo: HashMap<(u64, EnvState), u128>,
}

impl<'a> OrderCounter<'a> {
    fn new(world: &'a World, goal: &'a Goal) -> Result<Self> {
        let options: Vec<OptionId> = goal.recipe.options.iter().copied().collect();
        if options.len() > 63 {
            return Err(Error::InvalidInput(format!(
                "recipe of {} options is too long to enumerate",
                options.len()
            )));
        }
        Ok(Self {
            world,
            goal,
            options,
            memo: HashMap::new(),
        })
    }

    fn full(&self) -> u64 {
        (1u64 << self.options.len()) - 1
    }

    /// Valid successors of a node: `(bit, next state)` pairs.
    fn successors(&self, used: u64, s: &EnvState) -> Result<Vec<(usize, EnvState)>> {
        let mut out = Vec::new();
        for (i, &o) in self.options.iter().enumerate() {
            if used & (1 << i) != 0 || !self.world.precondition(s, o) {
                continue;
            }
            let t = self.world.transition(s, o, self.goal)?;
            let last = (used | (1 << i)) == self.full();
            if last {
                if t.achieved {
                    out.push((i, t.state));
                }
            } else if !t.done {
                out.push((i, t.state));
            }
        }
        Ok(out)
    }

    fn count(&mut self, used: u64, s: &EnvState) -> Result<u128> {
        if used == self.full() {
            return Ok(1);
        }
        if let Some(&c) = self.memo.get(&(used, s.clone())) {
            return Ok(c);
        }
        let mut total = 0u128;
        for (i, next) in self.successors(used, s)? {
            total += self.count(used | (1 << i), &next)?;
        }
        self.memo.insert((used, s.clone()), total);
        Ok(total)
    }

    fn sample<R: Rng + ?Sized>(&mut self, s0: &EnvState, rng: &mut R) -> Result<Option<Vec<OptionId>>> {
        let mut used = 0u64;
        let mut s = s0.clone();
        let mut order = Vec::with_capacity(self.options.len());
        if self.count(used, &s)? == 0 {
            return Ok(None);
        }
        while used != self.full() {
            let succ = self.successors(used, &s)?;
            let mut weights = Vec::with_capacity(succ.len());
            for (i, next) in &succ {
                weights.push(self.count(used | (1 << i), next)?);
            }
            let total: u128 = weights.iter().sum();
            let mut pick = rng.gen_range(0..total);
            let mut chosen = succ.len() - 1;
            for (j, &w) in weights.iter().enumerate() {
                if pick < w {
                    chosen = j;
                    break;
                }
                pick -= w;
            }
            let (i, next) = succ.into_iter().nth(chosen).expect("index within successors");
            order.push(self.options[i]);
            used |= 1 << i;
            s = next;
        }
        Ok(Some(order))
    }
}

/// Number of valid execution orders of the goal's recipe from `s0`.
pub fn count_valid_orders(world: &World, goal: &Goal, s0: &EnvState) -> Result<u128> {
    OrderCounter::new(world, goal)?.count(0, s0)
}

/// Executes `options` from `s0`, returning the trajectory if every
/// precondition holds and the goal is reached exactly at the last step.
pub fn replay(world: &World, goal: &Goal, s0: &EnvState, options: &[OptionId]) -> Result<Option<Trajectory>> {
    let settings = world.settings();
    let mut states = vec![s0.clone()];
    let mut rewards = Vec::with_capacity(options.len());
    let mut irrelevant = 0usize;
    for (i, &o) in options.iter().enumerate() {
        let t = world.transition(states.last().expect("non-empty"), o, goal)?;
        if !t.applied || (t.done && i + 1 != options.len()) {
            return Ok(None);
        }
        irrelevant += t.irrelevant as usize;
        rewards.push(t.reward);
        let achieved = t.achieved;
        states.push(t.state);
        if i + 1 == options.len() && !achieved {
            return Ok(None);
        }
    }
    let ret = settings.reward_complete
        - settings.step_penalty * options.len() as f64
        - settings.penalty_irrelevant * irrelevant as f64;
    Ok(Some(Trajectory {
        options: options.to_vec(),
        states,
        rewards,
        ret,
    }))
}

/// Successful trajectories restricted to `fetched`. Empty when `fetched` does
/// not cover the recipe or no valid order exists.
pub fn oracle_solve<R: Rng + ?Sized>(
    world: &World,
    goal: &Goal,
    s0: &EnvState,
    fetched: &BTreeSet<OptionId>,
    config: &OracleConfig,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if config.num_orders == 0 {
        return Err(Error::Config("oracle needs at least one order per call".into()));
    }
    if !goal.recipe.options.is_subset(fetched) {
        return Ok(Vec::new());
    }
    let mut counter = OrderCounter::new(world, goal)?;
    let mut orders: Vec<Vec<OptionId>> = Vec::new();
    for _ in 0..config.num_orders {
        match counter.sample(s0, rng)? {
            Some(o) if !orders.contains(&o) => orders.push(o),
            Some(_) => {}
            None => return Ok(Vec::new()),
        }
    }
    let mut out = Vec::with_capacity(orders.len());
    for o in orders {
        let t = replay(world, goal, s0, &o)?
            .ok_or_else(|| Error::InvalidInput("sampled order failed on replay".into()))?;
        out.push(t);
    }
    Ok(out)
}
