//! Meta-training loop for the retriever, and retrieval quality metrics.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;

use crate::env::{Goal, World};
use crate::error::{Error, Result};
use crate::index::{target_from_trajectories, Retriever, SkipReason};
use crate::nn::{OptimizerKind, OptimizerState};
use crate::oracle::{oracle_solve, OracleConfig};
use crate::seeding::{mdp_seed, rng_for};
use crate::task::{OptionId, Recipe, VariantRef};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub top_p: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub oracle: OracleConfig,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 32,
            top_p: crate::index::DEFAULT_TOP_P,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            oracle: OracleConfig::default(),
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch size must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p < 1.0) {
            return Err(Error::Config(format!("top-p {} outside (0, 1)", self.top_p)));
        }
        if self.oracle.num_orders == 0 {
            return Err(Error::Config("oracle needs at least one order per call".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean loss over the non-skipped samples; NaN when all were skipped.
    pub mean_loss: f64,
    pub skipped: usize,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetaReport {
    pub records: Vec<IterationRecord>,
}

impl MetaReport {
    /// Mean of the finite per-iteration losses in `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let v: Vec<f64> = self.records[range]
            .iter()
            .map(|r| r.mean_loss)
            .filter(|l| l.is_finite())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn total_skipped(&self) -> usize {
        self.records.iter().map(|r| r.skipped).sum()
    }
}

/// Trains `retriever` on `train` variants with oracle supervision. `on_iter` is
/// called after every iteration.
pub fn meta_train(
    world: &World,
    train: &[VariantRef],
    retriever: &mut Retriever,
    config: &MetaTrainConfig,
    mut on_iter: impl FnMut(&IterationRecord),
) -> Result<MetaReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("no training variants".into()));
    }
    if retriever.num_options() != world.num_options() || retriever.state_dim() != world.state_dim() {
        return Err(Error::dim("retriever vs domain options", world.num_options(), retriever.num_options()));
    }
    let goals: Vec<Goal> = train.iter().map(|&v| world.goal(v)).collect::<Result<_>>()?;
    let k = world.num_options();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate)?;
    let mut rng = rng_for(config.seed, &[0x4E7A]);
    let mut report = MetaReport::default();

    for it in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch_size);
        let mut skipped = 0;
        for _ in 0..config.batch_size {
            let goal = &goals[rng.gen_range(0..goals.len())];
            let s0 = world.reset(goal, rng.gen());
            let x = world.encode(&s0);
            let fetched = retriever.select(&x, config.top_p)?.fetched_set();
            let trajs = oracle_solve(world, goal, &s0, &fetched, &config.oracle, &mut rng)?;
            let target = target_from_trajectories(&trajs, k)?;
            match target.skip {
                None => batch.push((x, target.y)),
                Some(SkipReason::NoTrajectories | SkipReason::NonPositiveReturn) => skipped += 1,
            }
        }
        let record = if batch.is_empty() {
            IterationRecord {
                iteration: it,
                mean_loss: f64::NAN,
                skipped,
                applied: false,
            }
        } else {
            let out = retriever.update(&mut opt, &batch)?;
            IterationRecord {
                iteration: it,
                mean_loss: out.loss,
                skipped,
                applied: out.applied,
            }
        };
        if it % 500 == 0 {
            log::debug!("meta iteration {it}: loss {:.6} skipped {skipped}", record.mean_loss);
        }
        on_iter(&record);
        report.records.push(record);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalMetrics {
    pub sufficient: bool,
    pub extra: usize,
    pub missing: usize,
}

impl RetrievalMetrics {
    pub fn of(recipe: &Recipe, fetched: &BTreeSet<OptionId>) -> Self {
        let missing = recipe.options.difference(fetched).count();
        Self {
            sufficient: missing == 0,
            extra: fetched.difference(&recipe.options).count(),
            missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRecord {
    pub variant: VariantRef,
    pub fetched: BTreeSet<OptionId>,
    pub metrics: RetrievalMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalSummary {
    pub sufficient_fraction: f64,
    pub mean_extra: f64,
    pub mean_missing: f64,
}

pub fn summarize(records: &[RetrievalRecord]) -> RetrievalSummary {
    let n = records.len().max(1) as f64;
    RetrievalSummary {
        sufficient_fraction: records.iter().filter(|r| r.metrics.sufficient).count() as f64 / n,
        mean_extra: records.iter().map(|r| r.metrics.extra as f64).sum::<f64>() / n,
        mean_missing: records.iter().map(|r| r.metrics.missing as f64).sum::<f64>() / n,
    }
}

/// Fetches options for each variant's fixed evaluation MDP.
pub fn evaluate_retrieval(
    world: &Arc<World>,
    retriever: &Retriever,
    variants: &[VariantRef],
    seed: u64,
    top_p: f64,
) -> Result<Vec<RetrievalRecord>> {
    variants
        .iter()
        .map(|&v| {
            let goal = world.goal(v)?;
            let s0 = world.reset(&goal, mdp_seed(seed, v));
            let fetched = retriever.select(&world.encode(&s0), top_p)?.fetched_set();
            Ok(RetrievalRecord {
                variant: v,
                metrics: RetrievalMetrics::of(&goal.recipe, &fetched),
                fetched,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craftworld::{generate_craftworld, CraftWorldParams};
    use crate::index::KeyInit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metrics_count_set_differences() {
        let recipe = Recipe {
            variant: VariantRef::new(0, 0),
            options: [OptionId(1), OptionId(2), OptionId(3)].into(),
        };
        let fetched: BTreeSet<OptionId> = [OptionId(2), OptionId(3), OptionId(4), OptionId(5)].into();
        let m = RetrievalMetrics::of(&recipe, &fetched);
        assert_eq!((m.sufficient, m.extra, m.missing), (false, 2, 1));
    }

    #[test]
    fn nine_object_smoke_run() {
        let params = CraftWorldParams {
            num_objects: 9,
            group_size: 3,
            num_composites: 2,
            schema_arity: 2,
            schemas: Some(vec![vec![0, 1], vec![1, 2]]),
            ..CraftWorldParams::desk()
        };
        let d = generate_craftworld(&params, 0).unwrap();
        let w = World::new(Arc::new(d.graph.clone()), d.episode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = Retriever::new(w.state_dim(), 16, 8, w.num_options(), KeyInit::Zeros, &mut rng).unwrap();
        let cfg = MetaTrainConfig {
            iterations: 10,
            batch_size: 8,
            ..Default::default()
        };
        let report = meta_train(&w, &d.split.train, &mut r, &cfg, |_| {}).unwrap();
        for rec in &report.records {
            assert!(rec.mean_loss.is_finite());
            if rec.iteration >= 1 {
                assert!(rec.skipped < cfg.batch_size);
            }
        }
    }
}
