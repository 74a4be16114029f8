//! Symbolic semi-MDP over object states. Each action executes one option to
//! completion: if its precondition holds the postcondition is applied,
//! otherwise the step is a no-op. Both cases consume one step.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::domain::{DistractorPolicy, EpisodeSettings};
use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::task::{
    expand_recipe, Dynamics, Flag, GoalAtom, ObjectId, ObjectKind, OptionId, OptionKind, Recipe,
    TaskGraph, TaskId, VariantRef,
};

/// Symbolic world state. `container[x] = Some(r)` means `x` sits in or on `r`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub presence: Vec<bool>,
    pub inventory: Vec<bool>,
    pub flags: Vec<u16>,
    pub container: Vec<Option<ObjectId>>,
    pub step_count: usize,
}

impl EnvState {
    pub fn empty(n: usize) -> Self {
        Self {
            presence: vec![false; n],
            inventory: vec![false; n],
            flags: vec![0; n],
            container: vec![None; n],
            step_count: 0,
        }
    }

    pub fn has_flag(&self, o: ObjectId, f: Flag) -> bool {
        self.flags[o.0] & f.bit() != 0
    }

    fn set_flag(&mut self, o: ObjectId, f: Flag, on: bool) {
        if on {
            self.flags[o.0] |= f.bit();
        } else {
            self.flags[o.0] &= !f.bit();
        }
    }

    pub fn held(&self) -> Option<ObjectId> {
        self.inventory.iter().position(|&h| h).map(ObjectId)
    }

    /// True when `o` is `ancestor` or sits (transitively) inside it.
    fn is_within(&self, o: ObjectId, ancestor: ObjectId) -> bool {
        let mut cur = Some(o);
        let mut hops = 0;
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            hops += 1;
            if hops > self.container.len() {
                return false;
            }
            cur = self.container[c.0];
        }
        false
    }

    pub fn satisfies(&self, atom: GoalAtom) -> bool {
        match atom {
            GoalAtom::Held(o) => self.inventory[o.0],
            GoalAtom::Present(o) => self.presence[o.0] || self.inventory[o.0],
            GoalAtom::Flag(o, f) => self.has_flag(o, f),
            GoalAtom::In(o, r) => self.container[o.0] == Some(r),
        }
    }

    pub fn satisfies_all(&self, atoms: &[GoalAtom]) -> bool {
        !atoms.is_empty() && atoms.iter().all(|&a| self.satisfies(a))
    }
}

/// The target of an episode with everything the dynamics need precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub variant: VariantRef,
    pub recipe: Recipe,
    pub required: BTreeSet<ObjectId>,
    /// Goal condition of every variant of the target task; any one completes it.
    pub task_goals: Vec<Vec<GoalAtom>>,
    alternatives: Vec<BTreeSet<ObjectId>>,
    products: BTreeSet<ObjectId>,
}

impl Goal {
    pub fn is_achieved(&self, s: &EnvState) -> bool {
        self.task_goals.iter().any(|g| s.satisfies_all(g))
    }
}

#[derive(Debug, Clone)]
struct Craft {
    task: TaskId,
    ingredients: Vec<ObjectId>,
    product: ObjectId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    /// Whether the option's precondition held.
    pub applied: bool,
    pub irrelevant: bool,
    pub achieved: bool,
    pub reward: f64,
    pub done: bool,
}

/// Static part of the environment: catalog, option rules and episode settings.
#[derive(Debug)]
pub struct World {
    graph: Arc<TaskGraph>,
    settings: EpisodeSettings,
    crafts: Vec<Craft>,
    encoded_flags: &'static [Flag],
}

impl World {
    pub fn new(graph: Arc<TaskGraph>, settings: EpisodeSettings) -> Result<Self> {
        settings.validate()?;
        let mut crafts = Vec::new();
        if graph.dynamics == Dynamics::Craft {
            for r in graph.composite_variants() {
                let task = graph.task(r.task);
                let product = task.goal.iter().find_map(|a| match a {
                    GoalAtom::Held(o) if graph.object(*o).kind == ObjectKind::Complex => Some(*o),
                    _ => None,
                });
                let Some(product) = product else { continue };
                let ingredients = task.variants[r.variant]
                    .preconditions
                    .iter()
                    .filter_map(|p| graph.option_of(p.task))
                    .map(|o| graph.option_binding(o))
                    .filter(|b| b.kind == OptionKind::Pickup)
                    .map(|b| b.object)
                    .collect();
                crafts.push(Craft {
                    task: r.task,
                    ingredients,
                    product,
                });
            }
        }
        let encoded_flags: &'static [Flag] = match graph.dynamics {
            Dynamics::Craft => &[],
            Dynamics::Kitchen => &Flag::ALL,
        };
        Ok(Self {
            graph,
            settings,
            crafts,
            encoded_flags,
        })
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn settings(&self) -> &EpisodeSettings {
        &self.settings
    }

    pub fn num_objects(&self) -> usize {
        self.graph.objects.len()
    }

    pub fn num_options(&self) -> usize {
        self.graph.num_options()
    }

    /// Length of the state encoding `[presence | inventory | per-object flags]`.
    pub fn state_dim(&self) -> usize {
        self.num_objects() * (2 + self.encoded_flags.len())
    }

    pub fn encode(&self, s: &EnvState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state_dim());
        self.encode_into(s, &mut out);
        out
    }

    pub fn encode_into(&self, s: &EnvState, out: &mut Vec<f64>) {
        out.clear();
        out.extend(s.presence.iter().map(|&b| b as u8 as f64));
        out.extend(s.inventory.iter().map(|&b| b as u8 as f64));
        for &f in &s.flags {
            for flag in self.encoded_flags {
                out.push((f & flag.bit() != 0) as u8 as f64);
            }
        }
    }

    pub fn goal(&self, variant: VariantRef) -> Result<Goal> {
        let g = &self.graph;
        let recipe = expand_recipe(g, variant)?;
        let required = g.required_objects(&recipe);
        let task = g.task(variant.task);
        let mut task_goals = Vec::new();
        let mut alternatives = Vec::new();
        for j in 0..task.variants.len() {
            let r = VariantRef {
                task: variant.task,
                variant: j,
            };
            task_goals.push(g.effective_goal(r)?);
            if j != variant.variant {
                alternatives.push(g.required_objects(&expand_recipe(g, r)?));
            }
        }
        let products = task_goals
            .iter()
            .flatten()
            .filter_map(|a| match a {
                GoalAtom::Held(o) | GoalAtom::Present(o) => Some(*o),
                _ => None,
            })
            .collect();
        Ok(Goal {
            variant,
            recipe,
            required,
            task_goals,
            alternatives,
            products,
        })
    }

    /// Initial state for `goal`: the objects its recipe needs plus distractors.
    pub fn reset(&self, goal: &Goal, seed: u64) -> EnvState {
        let n = self.num_objects();
        let mut s = EnvState::empty(n);
        for &o in &goal.required {
            s.presence[o.0] = true;
        }
        let candidates: Vec<ObjectId> = (0..n)
            .map(ObjectId)
            .filter(|o| !goal.required.contains(o))
            .filter(|o| match self.graph.dynamics {
                Dynamics::Craft => self.graph.object(*o).kind == ObjectKind::Simple,
                Dynamics::Kitchen => self.graph.object(*o).kind != ObjectKind::Complex,
            })
            .collect();
        let mut rng = rng_for(seed, &[0xD157]);
        match self.settings.distractors {
            DistractorPolicy::FixedCount(k) => {
                let k = k.min(candidates.len());
                for i in sample(&mut rng, candidates.len(), k).into_iter() {
                    s.presence[candidates[i].0] = true;
                }
            }
            DistractorPolicy::PerObjectProb(p) => {
                for &c in &candidates {
                    if rng.gen::<f64>() >= p {
                        continue;
                    }
                    let enables_other = goal.alternatives.iter().any(|alt| {
                        alt.contains(&c) && alt.iter().all(|o| *o == c || s.presence[o.0])
                    });
                    if !enables_other {
                        s.presence[c.0] = true;
                    }
                }
            }
        }
        s
    }

    pub fn precondition(&self, s: &EnvState, option: OptionId) -> bool {
        let b = self.graph.option_binding(option);
        let x = b.object;
        match (self.graph.dynamics, b.kind) {
            (Dynamics::Craft, OptionKind::Pickup) => s.presence[x.0],
            (Dynamics::Craft, OptionKind::Workshop) => {
                s.presence[x.0] && self.crafts.iter().any(|c| c.ingredients.iter().all(|i| s.inventory[i.0]))
            }
            (Dynamics::Craft, _) => false,
            (Dynamics::Kitchen, OptionKind::Pickup) => s.presence[x.0] && s.held().is_none(),
            (Dynamics::Kitchen, OptionKind::Puton) => match s.held() {
                Some(h) => h != x && s.presence[x.0] && !s.is_within(x, h),
                None => false,
            },
            (Dynamics::Kitchen, OptionKind::Cookon) => {
                s.presence[x.0] && s.has_flag(x, Flag::ContainsObject)
            }
            (Dynamics::Kitchen, OptionKind::Slice) => s.presence[x.0] && !s.inventory[x.0],
            (Dynamics::Kitchen, OptionKind::Break) => s.presence[x.0] || s.inventory[x.0],
            (Dynamics::Kitchen, OptionKind::Fill) => {
                let source_ok = b
                    .liquid
                    .and_then(|l| self.graph.source_of(l))
                    .is_some_and(|src| s.presence[src.0]);
                let empty = !has_liquid(s, x);
                s.inventory[x.0] && source_ok && empty
            }
            (Dynamics::Kitchen, OptionKind::Workshop) => false,
        }
    }

    /// Applies `option` to `s`. Pure: the input state is not modified.
    pub fn transition(&self, s: &EnvState, option: OptionId, goal: &Goal) -> Result<Transition> {
        if option.0 >= self.num_options() {
            return Err(Error::InvalidInput(format!(
                "option {} outside library of {}",
                option.0,
                self.num_options()
            )));
        }
        let mut next = s.clone();
        next.step_count += 1;
        let applied = self.precondition(s, option);
        let mut irrelevant = false;
        if applied {
            irrelevant = self.apply(&mut next, option, goal);
        }
        let achieved = goal.is_achieved(&next);
        let mut reward = 0.0;
        if achieved {
            reward += self.settings.reward_complete;
        }
        reward -= self.settings.step_penalty;
        if irrelevant {
            reward -= self.settings.penalty_irrelevant;
        }
        let done = achieved || next.step_count >= self.settings.max_len;
        Ok(Transition {
            state: next,
            applied,
            irrelevant,
            achieved,
            reward,
            done,
        })
    }

    /// Postcondition of an option whose precondition holds; returns whether
    /// the action was irrelevant to the goal.
    fn apply(&self, s: &mut EnvState, option: OptionId, goal: &Goal) -> bool {
        let b = self.graph.option_binding(option);
        let x = b.object;
        match (self.graph.dynamics, b.kind) {
            (Dynamics::Craft, OptionKind::Pickup) => {
                s.presence[x.0] = false;
                s.inventory[x.0] = true;
                !goal.required.contains(&x)
            }
            (Dynamics::Craft, OptionKind::Workshop) => {
                let goal_task = goal.variant.task;
                let goal_first = self
                    .crafts
                    .iter()
                    .filter(|c| c.task == goal_task)
                    .chain(self.crafts.iter().filter(|c| c.task != goal_task));
                let mut made = None;
                for c in goal_first {
                    if c.ingredients.iter().all(|i| s.inventory[i.0]) {
                        for i in &c.ingredients {
                            s.inventory[i.0] = false;
                        }
                        s.inventory[c.product.0] = true;
                        made = Some(c.product);
                        break;
                    }
                }
                made.is_some_and(|p| !goal.products.contains(&p))
            }
            (Dynamics::Kitchen, kind) => {
                let irrelevant = kind == OptionKind::Pickup && !goal.required.contains(&x);
                match kind {
                    OptionKind::Pickup => {
                        s.presence[x.0] = false;
                        s.inventory[x.0] = true;
                        s.container[x.0] = None;
                    }
                    OptionKind::Puton => {
                        let h = s.held().expect("precondition checked");
                        s.inventory[h.0] = false;
                        s.presence[h.0] = true;
                        s.container[h.0] = Some(x);
                    }
                    OptionKind::Cookon => {
                        s.set_flag(x, Flag::ApplianceOn, true);
                        for o in 0..s.container.len() {
                            let o = ObjectId(o);
                            if o != x && s.is_within(o, x) {
                                s.set_flag(o, Flag::Cooked, true);
                            }
                        }
                    }
                    OptionKind::Slice => s.set_flag(x, Flag::Sliced, true),
                    OptionKind::Break => s.set_flag(x, Flag::Broken, true),
                    OptionKind::Fill => {
                        if let Some(l) = b.liquid {
                            s.set_flag(x, l.flag(), true);
                        }
                    }
                    OptionKind::Workshop => {}
                }
                self.refresh_derived(s);
                irrelevant
            }
            (Dynamics::Craft, _) => false,
        }
    }

    /// Recomputes `contains_object` and `on_appliance` from the container map.
    fn refresh_derived(&self, s: &mut EnvState) {
        let n = s.container.len();
        for o in 0..n {
            s.set_flag(ObjectId(o), Flag::ContainsObject, false);
        }
        for o in 0..n {
            if let Some(c) = s.container[o] {
                s.set_flag(c, Flag::ContainsObject, true);
            }
        }
        for o in 0..n {
            let mut cur = s.container[o];
            let mut on = false;
            let mut hops = 0;
            while let Some(c) = cur {
                if self.graph.object(c).kind == ObjectKind::Appliance {
                    on = true;
                    break;
                }
                hops += 1;
                if hops > n {
                    break;
                }
                cur = s.container[c.0];
            }
            s.set_flag(ObjectId(o), Flag::OnAppliance, on);
        }
    }

    /// Structural invariants every reachable state satisfies.
    pub fn check_state(&self, s: &EnvState) -> std::result::Result<(), String> {
        let n = self.num_objects();
        if s.presence.len() != n || s.inventory.len() != n || s.flags.len() != n || s.container.len() != n {
            return Err("state vectors do not match the catalog".into());
        }
        for o in 0..n {
            if s.presence[o] && s.inventory[o] {
                return Err(format!("{} is both present and held", self.graph.objects[o].name));
            }
        }
        if self.graph.dynamics == Dynamics::Craft {
            return Ok(());
        }
        let held = s.inventory.iter().filter(|&&h| h).count();
        if held > 1 {
            return Err(format!("{held} objects held with one hand"));
        }
        let liquids = [Flag::Coffee, Flag::Water, Flag::Wine];
        for o in 0..n {
            let id = ObjectId(o);
            if let Some(c) = s.container[o] {
                if s.inventory[o] {
                    return Err(format!("{} is held but also contained", self.graph.objects[o].name));
                }
                if !(s.presence[c.0] || s.inventory[c.0]) {
                    return Err(format!("{} sits in an absent object", self.graph.objects[o].name));
                }
                if s.is_within(c, id) {
                    return Err(format!("containment cycle through {}", self.graph.objects[o].name));
                }
            }
            let has_child = s.container.iter().any(|c| *c == Some(id));
            if has_child != s.has_flag(id, Flag::ContainsObject) {
                return Err(format!("contains_object out of sync on {}", self.graph.objects[o].name));
            }
            if liquids.iter().filter(|&&f| s.has_flag(id, f)).count() > 1 {
                return Err(format!("{} holds two liquids", self.graph.objects[o].name));
            }
        }
        Ok(())
    }
}

fn has_liquid(s: &EnvState, o: ObjectId) -> bool {
    [Flag::Coffee, Flag::Water, Flag::Wine].iter().any(|&f| s.has_flag(o, f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub option: OptionId,
    pub option_name: String,
    pub applied: bool,
    pub reward: f64,
    pub done: bool,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} option={} name={} applied={} reward={} done={}",
            self.step, self.option.0, self.option_name, self.applied, self.reward, self.done
        )
    }
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub achieved: bool,
    pub applied: bool,
}

/// A single episode stream: a world, a goal, and the seed that fixes `s0`.
#[derive(Debug, Clone)]
pub struct Env {
    world: Arc<World>,
    goal: Arc<Goal>,
    seed: u64,
    state: EnvState,
    irrelevant: usize,
    completed: bool,
    done: bool,
    trace: Option<Vec<TraceRecord>>,
}

impl Env {
    pub fn new(world: Arc<World>, goal: Arc<Goal>, seed: u64) -> Self {
        let state = world.reset(&goal, seed);
        Self {
            world,
            goal,
            seed,
            state,
            irrelevant: 0,
            completed: false,
            done: false,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn completed(&self) -> bool {
        self.completed
    }

    pub fn steps(&self) -> usize {
        self.state.step_count
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    /// Restarts the episode from the same initial state.
    pub fn reset(&mut self) -> &EnvState {
        self.state = self.world.reset(&self.goal, self.seed);
        self.irrelevant = 0;
        self.completed = false;
        self.done = false;
        if let Some(t) = &mut self.trace {
            t.clear();
        }
        &self.state
    }

    pub fn step(&mut self, option: OptionId) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::InvalidInput("step after the episode ended".into()));
        }
        let t = self.world.transition(&self.state, option, &self.goal)?;
        self.state = t.state;
        self.irrelevant += t.irrelevant as usize;
        self.completed |= t.achieved;
        self.done = t.done;
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                step: self.state.step_count,
                option,
                option_name: self.world.graph.option_name(option).to_string(),
                applied: t.applied,
                reward: t.reward,
                done: t.done,
            });
        }
        Ok(StepOutcome {
            reward: t.reward,
            done: t.done,
            achieved: t.achieved,
            applied: t.applied,
        })
    }

    /// Episode return in closed form, so that equal step counts give equal
    /// returns regardless of summation order.
    pub fn episode_return(&self) -> f64 {
        let s = &self.world.settings;
        let complete = if self.completed { s.reward_complete } else { 0.0 };
        complete
            - s.step_penalty * self.state.step_count as f64
            - s.penalty_irrelevant * self.irrelevant as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craftworld::{generate_craftworld, CraftWorldParams};
    use crate::task::TaskId;

    fn desk_world() -> (crate::domain::Domain, World) {
        let d = generate_craftworld(&CraftWorldParams::desk(), 3).unwrap();
        let w = World::new(Arc::new(d.graph.clone()), d.episode).unwrap();
        (d, w)
    }

    fn option_named(g: &TaskGraph, name: &str) -> OptionId {
        g.option_of(g.task_by_name(name).unwrap()).unwrap()
    }

    #[test]
    fn craft_reset_has_recipe_objects_and_two_distractors() {
        let (d, w) = desk_world();
        let goal = w.goal(d.split.test[0]).unwrap();
        let s = w.reset(&goal, 9);
        let present: BTreeSet<ObjectId> = (0..w.num_objects()).filter(|&o| s.presence[o]).map(ObjectId).collect();
        assert!(goal.required.is_subset(&present));
        assert_eq!(present.len(), goal.required.len() + 2);
        assert_eq!(w.reset(&goal, 9), s);
        assert_eq!(w.state_dim(), 2 * w.num_objects());
    }

    #[test]
    fn craft_recipe_in_order_succeeds() {
        let (d, w) = desk_world();
        let v = d.split.test[5];
        let goal = Arc::new(w.goal(v).unwrap());
        let mut env = Env::new(Arc::new(World::new(Arc::new(d.graph.clone()), d.episode).unwrap()), goal.clone(), 1);
        let ws = option_named(&d.graph, "use_workshop");
        let mut opts: Vec<OptionId> = goal.recipe.options.iter().copied().filter(|&o| o != ws).collect();
        opts.push(ws);
        for (i, &o) in opts.iter().enumerate() {
            let out = env.step(o).unwrap();
            assert!(out.applied);
            assert_eq!(out.done, i == 3);
        }
        assert!(env.completed());
        assert_eq!(env.episode_return(), 1.0);
        assert_eq!(env.steps(), 4);
        let _ = w;
    }

    #[test]
    fn craft_irrelevant_pickup_costs() {
        let (d, w) = desk_world();
        let goal = w.goal(d.split.test[0]).unwrap();
        let s = w.reset(&goal, 2);
        let distractor = (0..w.num_objects())
            .map(ObjectId)
            .find(|o| s.presence[o.0] && !goal.required.contains(o))
            .unwrap();
        let opt = d.graph.option_of(TaskId(distractor.0)).unwrap();
        let t = w.transition(&s, opt, &goal).unwrap();
        assert!(t.applied && t.irrelevant);
        assert!((t.reward + 0.3).abs() < 1e-15);
        // absent object: no-op
        let absent = (0..60).map(ObjectId).find(|o| !s.presence[o.0]).unwrap();
        let t = w.transition(&s, d.graph.option_of(TaskId(absent.0)).unwrap(), &goal).unwrap();
        assert!(!t.applied);
        assert_eq!(t.state.presence, s.presence);
        assert_eq!(t.state.step_count, 1);
        assert_eq!(t.reward, 0.0);
    }

    #[test]
    fn workshop_without_ingredients_is_noop() {
        let (d, w) = desk_world();
        let goal = w.goal(d.split.test[0]).unwrap();
        let s = w.reset(&goal, 2);
        let t = w.transition(&s, option_named(&d.graph, "use_workshop"), &goal).unwrap();
        assert!(!t.applied);
    }

    #[test]
    fn max_len_terminates() {
        let (d, w) = desk_world();
        let goal = Arc::new(w.goal(d.split.test[0]).unwrap());
        let ws = option_named(&d.graph, "use_workshop");
        let mut env = Env::new(Arc::new(w), goal, 0).with_trace();
        let mut n = 0;
        while !env.is_done() {
            env.step(ws).unwrap();
            n += 1;
        }
        assert_eq!(n, 10);
        assert!(env.step(ws).is_err());
        assert_eq!(env.trace().unwrap().len(), 10);
        let mut buf = Vec::new();
        write_trace(env.trace().unwrap(), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step=1 option=60 name=use_workshop"));
    }

    #[test]
    fn out_of_range_option_is_rejected() {
        let (d, w) = desk_world();
        let goal = w.goal(d.split.test[0]).unwrap();
        let s = w.reset(&goal, 0);
        assert!(matches!(w.transition(&s, OptionId(61), &goal), Err(Error::InvalidInput(_))));
    }
}
