//! Procedural crafting domains: grouped simple objects, one workshop, and
//! composite products whose schemas pick one object from each of a few groups.

use rand::seq::index::sample;

use crate::domain::{Domain, EpisodeSettings};
use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::task::{
    Dynamics, GoalAtom, Group, ObjectId, ObjectKind, ObjectSpec, OptionBinding, OptionKind,
    SplitRatios, Task, TaskGraph, TaskVariant, VariantRef,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CraftWorldParams {
    pub num_objects: usize,
    pub group_size: usize,
    pub num_composites: usize,
    pub schema_arity: usize,
    /// Explicit schemas as 0-based group indices; overrides random sampling.
    pub schemas: Option<Vec<Vec<usize>>>,
    pub split: SplitRatios,
    pub episode: EpisodeSettings,
}

impl CraftWorldParams {
    /// 500 objects in 100 groups, 30 composites of 125 variants.
    pub fn full() -> Self {
        Self {
            num_objects: 500,
            group_size: 5,
            num_composites: 30,
            schema_arity: 3,
            schemas: None,
            split: SplitRatios {
                train: 0.8,
                validation: 0.0,
                test: 0.2,
                seed: 0,
            },
            episode: EpisodeSettings::craftworld(),
        }
    }

    /// 60 objects in 12 groups, 8 composites; 1000 variants and 61 options.
    pub fn desk() -> Self {
        Self {
            num_objects: 60,
            num_composites: 8,
            ..Self::full()
        }
    }

    pub fn num_groups(&self) -> usize {
        self.num_objects / self.group_size
    }

    fn validate(&self) -> Result<()> {
        if self.group_size == 0 || self.num_objects == 0 || self.num_objects % self.group_size != 0 {
            return Err(Error::Config(format!(
                "{} objects cannot be split into groups of {}",
                self.num_objects, self.group_size
            )));
        }
        if self.schema_arity == 0 || self.schema_arity > self.num_groups() {
            return Err(Error::Config(format!(
                "schema arity {} with {} groups",
                self.schema_arity,
                self.num_groups()
            )));
        }
        if let Some(s) = &self.schemas {
            if s.len() != self.num_composites {
                return Err(Error::Config(format!(
                    "{} schemas for {} composites",
                    s.len(),
                    self.num_composites
                )));
            }
            if s.iter().flatten().any(|&g| g >= self.num_groups()) {
                return Err(Error::Config("schema names a group that does not exist".into()));
            }
        }
        Ok(())
    }
}

/// Draws distinct sorted schemas of `arity` groups each.
fn sample_schemas(params: &CraftWorldParams, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = rng_for(seed, &[0xC4AF7]);
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(params.num_composites);
    let mut attempts = 0;
    while out.len() < params.num_composites {
        attempts += 1;
        if attempts > 1000 * (params.num_composites + 1) {
            return Err(Error::Config("could not draw enough distinct schemas".into()));
        }
        let mut s = sample(&mut rng, params.num_groups(), params.schema_arity).into_vec();
        s.sort_unstable();
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn generate_craftworld(params: &CraftWorldParams, seed: u64) -> Result<Domain> {
    params.validate()?;
    let n_groups = params.num_groups();
    let s = params.group_size;

    let mut objects = Vec::new();
    let mut groups = Vec::new();
    for g in 0..n_groups {
        let mut members = Vec::new();
        for j in 0..s {
            members.push(ObjectId(objects.len()));
            objects.push(ObjectSpec {
                name: format!("p{}_{}", g + 1, j + 1),
                kind: ObjectKind::Simple,
                liquid: None,
            });
        }
        groups.push(Group {
            name: format!("g{}", g + 1),
            members,
        });
    }
    let workshop = ObjectId(objects.len());
    objects.push(ObjectSpec {
        name: "workshop".into(),
        kind: ObjectKind::Workshop,
        liquid: None,
    });

    let mut tasks: Vec<Task> = (0..params.num_objects)
        .map(|i| {
            Task::base(
                format!("pickup_{}", objects[i].name),
                OptionBinding {
                    kind: OptionKind::Pickup,
                    object: ObjectId(i),
                    liquid: None,
                },
            )
        })
        .collect();
    let workshop_task = tasks.len();
    tasks.push(Task::base(
        "use_workshop",
        OptionBinding {
            kind: OptionKind::Workshop,
            object: workshop,
            liquid: None,
        },
    ));

    let schemas = match &params.schemas {
        Some(s) => s.clone(),
        None => sample_schemas(params, seed)?,
    };
    for (c, schema) in schemas.iter().enumerate() {
        let product = ObjectId(objects.len());
        objects.push(ObjectSpec {
            name: format!("c{}", c + 1),
            kind: ObjectKind::Complex,
            liquid: None,
        });
        tasks.push(Task {
            name: format!("make_c{}", c + 1),
            binding: None,
            goal: vec![GoalAtom::Held(product)],
            variants: ground(schema, s)
                .into_iter()
                .map(|choice| {
                    let mut pre: Vec<VariantRef> = schema
                        .iter()
                        .zip(&choice)
                        .map(|(&g, &j)| VariantRef::new(g * s + j, 0))
                        .collect();
                    pre.push(VariantRef::new(workshop_task, 0));
                    TaskVariant {
                        preconditions: pre,
                        goal: Vec::new(),
                    }
                })
                .collect(),
        });
    }

    let graph = TaskGraph::new("craftworld", Dynamics::Craft, objects, groups, tasks);
    let mut split = params.split;
    split.seed = crate::seeding::derive_seed(seed, &[split.seed]);
    Domain::new(graph, split, params.episode)
}

/// Every member choice for a schema; the last group varies fastest.
fn ground(schema: &[usize], group_size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in schema {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                (0..group_size).map(move |j| {
                    let mut p = prefix.clone();
                    p.push(j);
                    p
                })
            })
            .collect();
    }
    out
}
