//! Tasks, task variants, preconditions and recipes.
//!
//! A task groups variants that share an end goal. A variant lists the variants it
//! depends on; variants without preconditions are base tasks and are bound 1:1 to
//! an option of the library. The recipe of a variant is the set of base tasks it
//! transitively requires.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub usize);

/// Index of an option in the library; equals the position of its base task
/// among all base tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OptionId(pub usize);

/// Reference to variant `variant` (0-based) of task `task`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariantRef {
    pub task: TaskId,
    pub variant: usize,
}

impl VariantRef {
    pub fn new(task: usize, variant: usize) -> Self {
        Self {
            task: TaskId(task),
            variant,
        }
    }
}

impl fmt::Display for VariantRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}.v{}", self.task.0, self.variant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    /// Collectible ingredient (grid worlds).
    Simple,
    /// Crafted product (grid worlds).
    Complex,
    Workshop,
    /// Movable kitchen object.
    Item,
    Receptacle,
    Appliance,
    /// Liquid source such as a sink or coffee machine.
    Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Liquid {
    Coffee,
    Water,
    Wine,
}

impl Liquid {
    pub const ALL: [Liquid; 3] = [Liquid::Coffee, Liquid::Water, Liquid::Wine];

    pub fn name(self) -> &'static str {
        match self {
            Liquid::Coffee => "coffee",
            Liquid::Water => "water",
            Liquid::Wine => "wine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Liquid::ALL.into_iter().find(|l| l.name() == s)
    }

    pub fn flag(self) -> Flag {
        match self {
            Liquid::Coffee => Flag::Coffee,
            Liquid::Water => Flag::Water,
            Liquid::Wine => Flag::Wine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSpec {
    pub name: String,
    pub kind: ObjectKind,
    /// Liquid dispensed by a [`ObjectKind::Source`].
    pub liquid: Option<Liquid>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub members: Vec<ObjectId>,
}

/// Per-object metadata bits tracked by the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flag {
    ContainsObject,
    Coffee,
    Water,
    Wine,
    Cooked,
    Sliced,
    Broken,
    OnAppliance,
    ApplianceOn,
}

impl Flag {
    pub const ALL: [Flag; 9] = [
        Flag::ContainsObject,
        Flag::Coffee,
        Flag::Water,
        Flag::Wine,
        Flag::Cooked,
        Flag::Sliced,
        Flag::Broken,
        Flag::OnAppliance,
        Flag::ApplianceOn,
    ];

    pub fn bit(self) -> u16 {
        1 << (self as u16)
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::ContainsObject => "contains_object",
            Flag::Coffee => "coffee",
            Flag::Water => "water",
            Flag::Wine => "wine",
            Flag::Cooked => "cooked",
            Flag::Sliced => "sliced",
            Flag::Broken => "broken",
            Flag::OnAppliance => "on_appliance",
            Flag::ApplianceOn => "appliance_on",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Flag::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// One conjunct of a goal condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GoalAtom {
    Held(ObjectId),
    Present(ObjectId),
    Flag(ObjectId, Flag),
    /// First object sits directly in/on the second.
    In(ObjectId, ObjectId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Pickup,
    Puton,
    Cookon,
    Slice,
    Break,
    Fill,
    Workshop,
}

impl OptionKind {
    pub fn name(self) -> &'static str {
        match self {
            OptionKind::Pickup => "pickup",
            OptionKind::Puton => "puton",
            OptionKind::Cookon => "cookon",
            OptionKind::Slice => "slice",
            OptionKind::Break => "break",
            OptionKind::Fill => "fill",
            OptionKind::Workshop => "workshop",
        }
    }
}

/// Binds a base task to the option that performs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptionBinding {
    pub kind: OptionKind,
    pub object: ObjectId,
    pub liquid: Option<Liquid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskVariant {
    pub preconditions: Vec<VariantRef>,
    /// Explicit goal; empty means inherit from the task or derive from preconditions.
    pub goal: Vec<GoalAtom>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub name: String,
    pub binding: Option<OptionBinding>,
    pub goal: Vec<GoalAtom>,
    pub variants: Vec<TaskVariant>,
}

impl Task {
    pub fn base(name: impl Into<String>, binding: OptionBinding) -> Self {
        Self {
            name: name.into(),
            binding: Some(binding),
            goal: Vec::new(),
            variants: vec![TaskVariant::default()],
        }
    }

    pub fn is_base(&self) -> bool {
        self.binding.is_some()
    }
}

/// Semantics used by the environment's option rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Unlimited inventory; a workshop turns held ingredients into a product.
    Craft,
    /// One object in hand; receptacles, appliances, slicing, breaking and filling.
    Kitchen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    pub name: String,
    pub dynamics: Dynamics,
    pub objects: Vec<ObjectSpec>,
    pub groups: Vec<Group>,
    pub tasks: Vec<Task>,
    options: Vec<TaskId>,
    option_of_task: HashMap<TaskId, OptionId>,
}

impl TaskGraph {
    pub fn new(
        name: impl Into<String>,
        dynamics: Dynamics,
        objects: Vec<ObjectSpec>,
        groups: Vec<Group>,
        tasks: Vec<Task>,
    ) -> Self {
        let options: Vec<TaskId> = tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_base())
            .map(|(i, _)| TaskId(i))
            .collect();
        let option_of_task = options
            .iter()
            .enumerate()
            .map(|(o, &t)| (t, OptionId(o)))
            .collect();
        Self {
            name: name.into(),
            dynamics,
            objects,
            groups,
            tasks,
            options,
            option_of_task,
        }
    }

    /// Library size `k`.
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn option_task(&self, option: OptionId) -> TaskId {
        self.options[option.0]
    }

    pub fn option_of(&self, task: TaskId) -> Option<OptionId> {
        self.option_of_task.get(&task).copied()
    }

    pub fn option_binding(&self, option: OptionId) -> OptionBinding {
        self.tasks[self.options[option.0].0]
            .binding
            .expect("option tasks carry a binding")
    }

    pub fn option_name(&self, option: OptionId) -> &str {
        &self.task(self.option_task(option)).name
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.0]
    }

    pub fn task_by_name(&self, name: &str) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.name == name).map(TaskId)
    }

    pub fn object_by_name(&self, name: &str) -> Option<ObjectId> {
        self.objects.iter().position(|o| o.name == name).map(ObjectId)
    }

    pub fn object(&self, id: ObjectId) -> &ObjectSpec {
        &self.objects[id.0]
    }

    pub fn variant(&self, r: VariantRef) -> Option<&TaskVariant> {
        self.tasks.get(r.task.0).and_then(|t| t.variants.get(r.variant))
    }

    pub fn variant_name(&self, r: VariantRef) -> String {
        match self.tasks.get(r.task.0) {
            Some(t) if t.is_base() => t.name.clone(),
            Some(t) => format!("{}#{}", t.name, r.variant + 1),
            None => r.to_string(),
        }
    }

    /// Every variant of every composite (non-base) task, in catalog order.
    pub fn composite_variants(&self) -> Vec<VariantRef> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_base())
            .flat_map(|(i, t)| (0..t.variants.len()).map(move |j| VariantRef::new(i, j)))
            .collect()
    }

    /// The liquid source object for `liquid`, if the catalog has one.
    pub fn source_of(&self, liquid: Liquid) -> Option<ObjectId> {
        self.objects
            .iter()
            .position(|o| o.kind == ObjectKind::Source && o.liquid == Some(liquid))
            .map(ObjectId)
    }

    /// Objects that must be in the scene to execute every option of `recipe`.
    pub fn required_objects(&self, recipe: &Recipe) -> BTreeSet<ObjectId> {
        let mut out = BTreeSet::new();
        for &o in &recipe.options {
            let b = self.option_binding(o);
            out.insert(b.object);
            if let (OptionKind::Fill, Some(l)) = (b.kind, b.liquid) {
                if let Some(src) = self.source_of(l) {
                    out.insert(src);
                }
            }
        }
        out
    }

    /// Goal condition of a variant: its own, else its task's, else the
    /// conjunction of the goals of its composite preconditions. Base tasks get
    /// the effect of their option.
    pub fn effective_goal(&self, r: VariantRef) -> Result<Vec<GoalAtom>> {
        let mut stack = Vec::new();
        let mut out = BTreeSet::new();
        self.collect_goal(r, &mut stack, &mut out)?;
        Ok(out.into_iter().collect())
    }

    fn collect_goal(
        &self,
        r: VariantRef,
        stack: &mut Vec<VariantRef>,
        out: &mut BTreeSet<GoalAtom>,
    ) -> Result<()> {
        let variant = self.variant(r).ok_or_else(|| self.dangling(r, "goal lookup"))?;
        let task = self.task(r.task);
        if !variant.goal.is_empty() {
            out.extend(variant.goal.iter().copied());
            return Ok(());
        }
        if !task.goal.is_empty() {
            out.extend(task.goal.iter().copied());
            return Ok(());
        }
        if let Some(b) = task.binding {
            out.extend(implicit_goal(b));
            return Ok(());
        }
        if stack.contains(&r) {
            return Err(self.cycle_error(stack, r));
        }
        stack.push(r);
        for &p in &variant.preconditions {
            if !self.task(p.task).is_base() {
                self.collect_goal(p, stack, out)?;
            }
        }
        stack.pop();
        Ok(())
    }

    fn dangling(&self, r: VariantRef, location: &str) -> Error {
        Error::DanglingReference {
            reference: r.to_string(),
            location: location.into(),
        }
    }

    fn cycle_error(&self, stack: &[VariantRef], r: VariantRef) -> Error {
        let start = stack.iter().position(|&s| s == r).unwrap_or(0);
        let mut names: Vec<String> = stack[start..].iter().map(|&v| self.variant_name(v)).collect();
        names.push(self.variant_name(r));
        Error::Cycle(names)
    }
}

fn implicit_goal(b: OptionBinding) -> Vec<GoalAtom> {
    let o = b.object;
    match b.kind {
        OptionKind::Pickup => vec![GoalAtom::Held(o)],
        OptionKind::Puton => vec![GoalAtom::Flag(o, Flag::ContainsObject)],
        OptionKind::Cookon => vec![GoalAtom::Flag(o, Flag::ApplianceOn)],
        OptionKind::Slice => vec![GoalAtom::Flag(o, Flag::Sliced)],
        OptionKind::Break => vec![GoalAtom::Flag(o, Flag::Broken)],
        OptionKind::Fill => b.liquid.map(|l| vec![GoalAtom::Flag(o, l.flag())]).unwrap_or_default(),
        OptionKind::Workshop => Vec::new(),
    }
}

/// The set of base tasks (as options) a variant transitively requires.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Recipe {
    pub variant: VariantRef,
    pub options: BTreeSet<OptionId>,
}

impl Recipe {
    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn contains(&self, o: OptionId) -> bool {
        self.options.contains(&o)
    }
}

pub fn expand_recipe(graph: &TaskGraph, variant: VariantRef) -> Result<Recipe> {
    let mut memo = HashMap::new();
    let mut stack = Vec::new();
    let options = expand_inner(graph, variant, &mut stack, &mut memo)?;
    Ok(Recipe { variant, options })
}

/// Recipes of many variants sharing one memo table.
pub fn expand_all(graph: &TaskGraph, variants: &[VariantRef]) -> Result<Vec<Recipe>> {
    let mut memo = HashMap::new();
    let mut stack = Vec::new();
    variants
        .iter()
        .map(|&v| {
            let options = expand_inner(graph, v, &mut stack, &mut memo)?;
            Ok(Recipe { variant: v, options })
        })
        .collect()
}

fn expand_inner(
    graph: &TaskGraph,
    r: VariantRef,
    stack: &mut Vec<VariantRef>,
    memo: &mut HashMap<VariantRef, BTreeSet<OptionId>>,
) -> Result<BTreeSet<OptionId>> {
    if let Some(done) = memo.get(&r) {
        return Ok(done.clone());
    }
    if stack.contains(&r) {
        return Err(graph.cycle_error(stack, r));
    }
    let variant = graph
        .variant(r)
        .ok_or_else(|| graph.dangling(r, "recipe expansion"))?;
    let mut out = BTreeSet::new();
    if let Some(o) = graph.option_of(r.task) {
        out.insert(o);
    }
    stack.push(r);
    for &p in &variant.preconditions {
        out.extend(expand_inner(graph, p, stack, memo)?);
    }
    stack.pop();
    memo.insert(r, out.clone());
    Ok(out)
}

/// Findings of [`validate_graph`]; an empty report means the graph is sound.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub cycles: Vec<Vec<String>>,
    pub dangling: Vec<String>,
    pub base_variant_violations: Vec<String>,
    pub binding_violations: Vec<String>,
    pub unreachable: Vec<String>,
    pub missing_goals: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.cycles.is_empty()
            && self.dangling.is_empty()
            && self.base_variant_violations.is_empty()
            && self.binding_violations.is_empty()
            && self.unreachable.is_empty()
            && self.missing_goals.is_empty()
    }

    pub fn findings(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.cycles.iter().map(|c| format!("cycle: {}", c.join(" -> "))));
        out.extend(self.dangling.iter().map(|d| format!("dangling reference: {d}")));
        out.extend(self.base_variant_violations.iter().map(|d| format!("base task with several variants: {d}")));
        out.extend(self.binding_violations.iter().map(|d| format!("option binding: {d}")));
        out.extend(self.unreachable.iter().map(|d| format!("unreachable: {d}")));
        out.extend(self.missing_goals.iter().map(|d| format!("no goal condition: {d}")));
        out
    }
}

pub fn validate_graph(graph: &TaskGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    for (i, task) in graph.tasks.iter().enumerate() {
        let has_empty = task.variants.iter().any(|v| v.preconditions.is_empty());
        if task.variants.is_empty() {
            report.missing_goals.push(format!("{} has no variants", task.name));
        }
        if has_empty && task.variants.len() > 1 {
            report.base_variant_violations.push(format!(
                "{} has a variant without preconditions but {} variants",
                task.name,
                task.variants.len()
            ));
        }
        match (task.binding, has_empty) {
            (None, true) => report
                .binding_violations
                .push(format!("{} has no preconditions but no option", task.name)),
            (Some(_), false) => report
                .binding_violations
                .push(format!("{} is bound to an option but has preconditions", task.name)),
            (Some(b), true) if b.object.0 >= graph.objects.len() => report
                .binding_violations
                .push(format!("{} binds unknown object {}", task.name, b.object.0)),
            _ => {}
        }
        for (j, v) in task.variants.iter().enumerate() {
            for p in &v.preconditions {
                if graph.variant(*p).is_none() {
                    report
                        .dangling
                        .push(format!("{} cites {p}", graph.variant_name(VariantRef::new(i, j))));
                }
            }
        }
    }
    if !report.dangling.is_empty() {
        return report;
    }

    report.cycles = find_cycles(graph);
    if !report.cycles.is_empty() {
        return report;
    }

    // A base task is reachable when some composite recipe uses it or it is bound
    // to an option (every option is usable on its own).
    for (i, task) in graph.tasks.iter().enumerate() {
        if task.is_base() {
            continue;
        }
        for j in 0..task.variants.len() {
            let r = VariantRef::new(i, j);
            match expand_recipe(graph, r) {
                Ok(rec) if rec.is_empty() => report
                    .unreachable
                    .push(format!("{} expands to an empty recipe", graph.variant_name(r))),
                Ok(_) => {}
                Err(e) => report.unreachable.push(format!("{}: {e}", graph.variant_name(r))),
            }
            match graph.effective_goal(r) {
                Ok(g) if g.is_empty() => report.missing_goals.push(graph.variant_name(r)),
                Ok(_) => {}
                Err(e) => report.missing_goals.push(format!("{}: {e}", graph.variant_name(r))),
            }
        }
    }
    report
}

/// Every elementary cycle reached by a depth-first walk, named by variant.
fn find_cycles(graph: &TaskGraph) -> Vec<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut marks: HashMap<VariantRef, Mark> = HashMap::new();
    let mut cycles = Vec::new();

    fn visit(
        graph: &TaskGraph,
        r: VariantRef,
        marks: &mut HashMap<VariantRef, Mark>,
        stack: &mut Vec<VariantRef>,
        cycles: &mut Vec<Vec<String>>,
    ) {
        match marks.get(&r).copied().unwrap_or(Mark::New) {
            Mark::Done => return,
            Mark::Active => {
                let start = stack.iter().position(|&s| s == r).unwrap_or(0);
                cycles.push(stack[start..].iter().map(|&v| graph.variant_name(v)).collect());
                return;
            }
            Mark::New => {}
        }
        marks.insert(r, Mark::Active);
        stack.push(r);
        if let Some(v) = graph.variant(r) {
            for &p in &v.preconditions {
                visit(graph, p, marks, stack, cycles);
            }
        }
        stack.pop();
        marks.insert(r, Mark::Done);
    }

    for (i, t) in graph.tasks.iter().enumerate() {
        for j in 0..t.variants.len() {
            let mut stack = Vec::new();
            visit(graph, VariantRef::new(i, j), &mut marks, &mut stack, &mut cycles);
        }
    }
    cycles
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be in [0, 1] and sum to 1, got {:?}",
                all
            )));
        }
        Ok(())
    }
}

/// Disjoint train / validation / test sets of composite variants.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DomainSplit {
    pub train: Vec<VariantRef>,
    pub validation: Vec<VariantRef>,
    pub test: Vec<VariantRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Validation,
    Test,
}

/// Splits each composite task's variants by the given ratios, then moves
/// variants whose recipe already landed in another split so that no recipe
/// appears in two splits.
pub fn split_variants(graph: &TaskGraph, ratios: &SplitRatios) -> Result<DomainSplit> {
    ratios.validate()?;
    let mut assignment: BTreeMap<VariantRef, Part> = BTreeMap::new();
    for (i, task) in graph.tasks.iter().enumerate() {
        if task.is_base() {
            continue;
        }
        let m = task.variants.len();
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut rng_for(ratios.seed, &[0x5911, i as u64]));
        let n_test = ((m as f64) * ratios.test).round() as usize;
        let n_val = (((m as f64) * ratios.validation).round() as usize).min(m - n_test.min(m));
        let n_test = n_test.min(m);
        for (pos, &j) in idx.iter().enumerate() {
            let part = if pos < n_test {
                Part::Test
            } else if pos < n_test + n_val {
                Part::Validation
            } else {
                Part::Train
            };
            assignment.insert(VariantRef::new(i, j), part);
        }
    }

    let variants: Vec<VariantRef> = assignment.keys().copied().collect();
    let recipes = expand_all(graph, &variants)?;
    let mut by_recipe: HashMap<&BTreeSet<OptionId>, Part> = HashMap::new();
    let mut split = DomainSplit::default();
    for rec in &recipes {
        let part = *by_recipe
            .entry(&rec.options)
            .or_insert(assignment[&rec.variant]);
        match part {
            Part::Train => split.train.push(rec.variant),
            Part::Validation => split.validation.push(rec.variant),
            Part::Test => split.test.push(rec.variant),
        }
    }
    Ok(split)
}
