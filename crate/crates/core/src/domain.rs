//! A task graph bundled with its split and episode settings, plus the TOML
//! domain file format.
//!
//! ```toml
//! [domain]
//! name = "kitchen"
//! dynamics = "kitchen"
//!
//! [[objects]]
//! name = "egg"
//! kind = "item"
//!
//! [[base_tasks]]
//! name = "pickup_egg"
//! kind = "pickup"
//! object = "egg"
//!
//! [[composite_tasks]]
//! name = "omelette"
//! goal = ["egg.cooked", "egg.in.pan"]
//! [[composite_tasks.variants]]
//! preconditions = ["pickup_egg", "break_egg"]
//! ```
//!
//! Preconditions name base tasks directly and composite variants as
//! `task#j` (1-based).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::task::{
    split_variants, validate_graph, Dynamics, DomainSplit, Flag, GoalAtom, Group, Liquid,
    ObjectId, ObjectKind, ObjectSpec, OptionBinding, OptionKind, SplitRatios, Task, TaskGraph,
    TaskVariant, VariantRef,
};

/// How objects outside the goal's recipe are added to the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistractorPolicy {
    /// Exactly `n` irrelevant objects drawn uniformly.
    FixedCount(usize),
    /// Each irrelevant object independently with probability `p`, skipping any
    /// that would make another variant of the goal task executable.
    PerObjectProb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSettings {
    pub reward_complete: f64,
    pub penalty_irrelevant: f64,
    pub step_penalty: f64,
    pub max_len: usize,
    pub distractors: DistractorPolicy,
}

impl EpisodeSettings {
    pub fn craftworld() -> Self {
        Self {
            reward_complete: 1.0,
            penalty_irrelevant: 0.3,
            step_penalty: 0.0,
            max_len: 10,
            distractors: DistractorPolicy::FixedCount(2),
        }
    }

    pub fn kitchen() -> Self {
        Self {
            reward_complete: 1.0,
            penalty_irrelevant: 0.0,
            step_penalty: 0.002,
            max_len: 500,
            distractors: DistractorPolicy::PerObjectProb(0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.reward_complete, self.penalty_irrelevant, self.step_penalty]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !finite || self.max_len == 0 {
            return Err(Error::Config(format!("invalid episode settings {self:?}")));
        }
        if let DistractorPolicy::PerObjectProb(p) = self.distractors {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("distractor probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub graph: TaskGraph,
    pub split: DomainSplit,
    pub ratios: SplitRatios,
    pub episode: EpisodeSettings,
}

impl Domain {
    /// Validates the graph and computes the split.
    pub fn new(graph: TaskGraph, ratios: SplitRatios, episode: EpisodeSettings) -> Result<Self> {
        let report = validate_graph(&graph);
        if let Some(cycle) = report.cycles.first() {
            return Err(Error::Cycle(cycle.clone()));
        }
        if !report.is_clean() {
            return Err(Error::Config(report.findings().join("; ")));
        }
        episode.validate()?;
        let split = split_variants(&graph, &ratios)?;
        Ok(Self {
            graph,
            split,
            ratios,
            episode,
        })
    }

    pub fn num_options(&self) -> usize {
        self.graph.num_options()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_toml_str(text: &str, location: &str) -> Result<Self> {
        let file: DomainFile = toml::from_str(text).map_err(|e| Error::Parse {
            location: location.to_string(),
            message: e.to_string(),
        })?;
        file.into_domain()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(&DomainFile::from_domain(self)).map_err(|e| Error::Parse {
            location: format!("domain {}", self.graph.name),
            message: e.to_string(),
        })
    }

    /// SHA-256 of the canonical serialization; ties checkpoints to a domain.
    pub fn hash(&self) -> [u8; 32] {
        let text = self
            .to_toml_string()
            .expect("a validated domain always serializes");
        Sha256::digest(text.as_bytes()).into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFile {
    domain: Header,
    objects: Vec<ObjectEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    groups: Vec<GroupEntry>,
    base_tasks: Vec<BaseEntry>,
    #[serde(default)]
    composite_tasks: Vec<CompositeEntry>,
    split: SplitRatios,
    episode: EpisodeEntry,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    dynamics: Dynamics,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectEntry {
    name: String,
    kind: ObjectKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    liquid: Option<Liquid>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupEntry {
    name: String,
    members: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseEntry {
    name: String,
    kind: OptionKind,
    object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    liquid: Option<Liquid>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompositeEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    goal: Vec<String>,
    variants: Vec<VariantEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantEntry {
    preconditions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    goal: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeEntry {
    reward_complete: f64,
    penalty_irrelevant: f64,
    step_penalty: f64,
    max_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distractor_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distractor_prob: Option<f64>,
}

impl DomainFile {
    fn from_domain(d: &Domain) -> Self {
        let g = &d.graph;
        let obj = |id: ObjectId| g.objects[id.0].name.clone();
        let atoms = |goal: &[GoalAtom]| goal.iter().map(|a| format_atom(g, *a)).collect();
        let (distractor_count, distractor_prob) = match d.episode.distractors {
            DistractorPolicy::FixedCount(n) => (Some(n), None),
            DistractorPolicy::PerObjectProb(p) => (None, Some(p)),
        };
        DomainFile {
            domain: Header {
                name: g.name.clone(),
                dynamics: g.dynamics,
            },
            objects: g
                .objects
                .iter()
                .map(|o| ObjectEntry {
                    name: o.name.clone(),
                    kind: o.kind,
                    liquid: o.liquid,
                })
                .collect(),
            groups: g
                .groups
                .iter()
                .map(|gr| GroupEntry {
                    name: gr.name.clone(),
                    members: gr.members.iter().map(|&m| obj(m)).collect(),
                })
                .collect(),
            base_tasks: g
                .tasks
                .iter()
                .filter_map(|t| {
                    t.binding.map(|b| BaseEntry {
                        name: t.name.clone(),
                        kind: b.kind,
                        object: obj(b.object),
                        liquid: b.liquid,
                    })
                })
                .collect(),
            composite_tasks: g
                .tasks
                .iter()
                .filter(|t| !t.is_base())
                .map(|t| CompositeEntry {
                    name: t.name.clone(),
                    goal: atoms(&t.goal),
                    variants: t
                        .variants
                        .iter()
                        .map(|v| VariantEntry {
                            preconditions: v.preconditions.iter().map(|&p| g.variant_name(p)).collect(),
                            goal: atoms(&v.goal),
                        })
                        .collect(),
                })
                .collect(),
            split: d.ratios,
            episode: EpisodeEntry {
                reward_complete: d.episode.reward_complete,
                penalty_irrelevant: d.episode.penalty_irrelevant,
                step_penalty: d.episode.step_penalty,
                max_len: d.episode.max_len,
                distractor_count,
                distractor_prob,
            },
        }
    }

    fn into_domain(self) -> Result<Domain> {
        let mut objects = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            if objects.iter().any(|x: &ObjectSpec| x.name == o.name) {
                return Err(Error::Config(format!("duplicate object `{}`", o.name)));
            }
            objects.push(ObjectSpec {
                name: o.name.clone(),
                kind: o.kind,
                liquid: o.liquid,
            });
        }
        let find_obj = |name: &str, location: &str| -> Result<ObjectId> {
            objects
                .iter()
                .position(|o| o.name == name)
                .map(ObjectId)
                .ok_or_else(|| Error::DanglingReference {
                    reference: name.to_string(),
                    location: location.to_string(),
                })
        };

        let mut groups = Vec::new();
        for gr in &self.groups {
            let members = gr
                .members
                .iter()
                .map(|m| find_obj(m, &format!("groups[{}]", gr.name)))
                .collect::<Result<Vec<_>>>()?;
            groups.push(Group {
                name: gr.name.clone(),
                members,
            });
        }

        let mut tasks = Vec::new();
        for b in &self.base_tasks {
            let location = format!("base_tasks[{}]", b.name);
            if b.kind == OptionKind::Fill && b.liquid.is_none() {
                return Err(Error::Config(format!("{location}: fill needs a liquid")));
            }
            tasks.push(Task::base(
                b.name.clone(),
                OptionBinding {
                    kind: b.kind,
                    object: find_obj(&b.object, &location)?,
                    liquid: b.liquid,
                },
            ));
        }
        let n_base = tasks.len();
        let mut names: Vec<String> = self.base_tasks.iter().map(|b| b.name.clone()).collect();
        names.extend(self.composite_tasks.iter().map(|c| c.name.clone()));
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate task `{n}`")));
            }
        }

        let resolve = |reference: &str, location: &str| -> Result<VariantRef> {
            let dangling = || Error::DanglingReference {
                reference: reference.to_string(),
                location: location.to_string(),
            };
            let (name, variant) = match reference.split_once('#') {
                Some((n, j)) => {
                    let j: usize = j.parse().map_err(|_| dangling())?;
                    if j == 0 {
                        return Err(dangling());
                    }
                    (n, j - 1)
                }
                None => (reference, 0),
            };
            let task = names.iter().position(|n| n == name).ok_or_else(dangling)?;
            let count = if task < n_base {
                1
            } else {
                self.composite_tasks[task - n_base].variants.len()
            };
            if variant >= count || (task >= n_base && !reference.contains('#')) {
                return Err(dangling());
            }
            Ok(VariantRef::new(task, variant))
        };

        for c in &self.composite_tasks {
            let location = format!("composite_tasks[{}]", c.name);
            let goal = c
                .goal
                .iter()
                .map(|a| parse_atom(a, &objects, &location))
                .collect::<Result<Vec<_>>>()?;
            let mut variants = Vec::new();
            for (j, v) in c.variants.iter().enumerate() {
                let vloc = format!("{location}.variants[{}]", j + 1);
                variants.push(TaskVariant {
                    preconditions: v
                        .preconditions
                        .iter()
                        .map(|p| resolve(p, &vloc))
                        .collect::<Result<Vec<_>>>()?,
                    goal: v
                        .goal
                        .iter()
                        .map(|a| parse_atom(a, &objects, &vloc))
                        .collect::<Result<Vec<_>>>()?,
                });
            }
            tasks.push(Task {
                name: c.name.clone(),
                binding: None,
                goal,
                variants,
            });
        }

        let distractors = match (self.episode.distractor_count, self.episode.distractor_prob) {
            (Some(n), None) => DistractorPolicy::FixedCount(n),
            (None, Some(p)) => DistractorPolicy::PerObjectProb(p),
            _ => {
                return Err(Error::Config(
                    "episode needs exactly one of distractor_count or distractor_prob".into(),
                ))
            }
        };
        let episode = EpisodeSettings {
            reward_complete: self.episode.reward_complete,
            penalty_irrelevant: self.episode.penalty_irrelevant,
            step_penalty: self.episode.step_penalty,
            max_len: self.episode.max_len,
            distractors,
        };
        let graph = TaskGraph::new(self.domain.name, self.domain.dynamics, objects, groups, tasks);
        Domain::new(graph, self.split, episode)
    }
}

fn format_atom(g: &TaskGraph, a: GoalAtom) -> String {
    let n = |o: ObjectId| g.objects[o.0].name.as_str();
    match a {
        GoalAtom::Held(o) => format!("{}.held", n(o)),
        GoalAtom::Present(o) => format!("{}.present", n(o)),
        GoalAtom::Flag(o, f) => format!("{}.{}", n(o), f.name()),
        GoalAtom::In(o, r) => format!("{}.in.{}", n(o), n(r)),
    }
}

fn parse_atom(text: &str, objects: &[ObjectSpec], location: &str) -> Result<GoalAtom> {
    let find = |name: &str| {
        objects
            .iter()
            .position(|o| o.name == name)
            .map(ObjectId)
            .ok_or_else(|| Error::DanglingReference {
                reference: name.to_string(),
                location: location.to_string(),
            })
    };
    let bad = || Error::Parse {
        location: location.to_string(),
        message: format!("malformed goal atom `{text}`"),
    };
    let parts: Vec<&str> = text.split('.').collect();
    match parts.as_slice() {
        [o, "held"] => Ok(GoalAtom::Held(find(o)?)),
        [o, "present"] => Ok(GoalAtom::Present(find(o)?)),
        [o, "in", r] => Ok(GoalAtom::In(find(o)?, find(r)?)),
        [o, f] => Ok(GoalAtom::Flag(find(o)?, Flag::parse(f).ok_or_else(bad)?)),
        _ => Err(bad()),
    }
}
