//! Experiment pipeline: baselines, parallel evaluation, aggregation, sweeps and
//! the files the command-line tool writes.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::a2c::{train_policy, A2cConfig, CurvePoint, LearningCurve};
use crate::config::RunConfig;
use crate::domain::Domain;
use crate::env::{Env, World};
use crate::error::{Error, Result};
use crate::index::{Checkpoint, CheckpointExpectation, Retriever};
use crate::meta::{evaluate_retrieval, meta_train, summarize, MetaReport, RetrievalMetrics};
use crate::seeding::{mdp_seed, rng_for};
use crate::task::{OptionId, VariantRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    HrlN,
    HrlNPlusK(usize),
    HrlFull,
    OiHrl,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::HrlN => f.write_str("HRL_N"),
            Baseline::HrlNPlusK(k) => write!(f, "HRL_N+{k}"),
            Baseline::HrlFull => f.write_str("HRL_FULL"),
            Baseline::OiHrl => f.write_str("OI_HRL"),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase().replace('-', "_");
        match t.as_str() {
            "HRL_N" => Ok(Baseline::HrlN),
            "HRL_FULL" => Ok(Baseline::HrlFull),
            "OI_HRL" => Ok(Baseline::OiHrl),
            _ => {
                let k = t
                    .strip_prefix("HRL_N+")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))?;
                if k == 0 {
                    return Err(Error::Config("HRL_N+K needs k ≥ 1".into()));
                }
                Ok(Baseline::HrlNPlusK(k))
            }
        }
    }
}

pub fn parse_baselines(list: &[String]) -> Result<Vec<Baseline>> {
    list.iter().map(|s| s.parse()).collect()
}

/// Option set a baseline hands to the policy learner for one test variant.
pub fn baseline_options(
    baseline: Baseline,
    world: &World,
    variant: VariantRef,
    retriever: Option<&Retriever>,
    top_p: f64,
    master_seed: u64,
) -> Result<BTreeSet<OptionId>> {
    let goal = world.goal(variant)?;
    let k = world.num_options();
    match baseline {
        Baseline::HrlN => Ok(goal.recipe.options.clone()),
        Baseline::HrlFull => Ok((0..k).map(OptionId).collect()),
        Baseline::HrlNPlusK(extra) => {
            let mut pool: Vec<OptionId> = (0..k).map(OptionId).filter(|o| !goal.recipe.contains(*o)).collect();
            if extra == 0 || extra > pool.len() {
                return Err(Error::Config(format!(
                    "HRL_N+{extra} needs 1 ≤ k ≤ {} for {}",
                    pool.len(),
                    world.graph().variant_name(variant)
                )));
            }
            let mut rng = rng_for(mdp_seed(master_seed, variant), &[0x2B]);
            pool.shuffle(&mut rng);
            let mut set = goal.recipe.options.clone();
            set.extend(pool.into_iter().take(extra));
            Ok(set)
        }
        Baseline::OiHrl => {
            let r = retriever.ok_or_else(|| Error::Config("OI_HRL needs a trained retriever".into()))?;
            let s0 = world.reset(&goal, mdp_seed(master_seed, variant));
            Ok(r.select(&world.encode(&s0), top_p)?.fetched_set())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub variant: VariantRef,
    pub variant_id: String,
    pub baseline: Baseline,
    pub master_seed: u64,
    pub variant_seed: u64,
    pub recipe_len: usize,
    pub fetched: BTreeSet<OptionId>,
    pub metrics: RetrievalMetrics,
    pub curve: LearningCurve,
}

impl VariantRun {
    pub fn final_point(&self) -> CurvePoint {
        *self.curve.last().expect("curves start with an initial evaluation")
    }
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub master_seed: u64,
    pub top_p: f64,
    pub a2c: A2cConfig,
    pub workers: usize,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Trains one fresh policy per (variant, baseline). Output order follows the
/// baselines, then the variants, regardless of the worker count.
pub fn run_evaluation(
    world: &Arc<World>,
    retriever: Option<&Retriever>,
    variants: &[VariantRef],
    baselines: &[Baseline],
    settings: &EvalSettings,
) -> Result<Vec<VariantRun>> {
    let jobs: Vec<(Baseline, VariantRef)> = baselines
        .iter()
        .flat_map(|&b| variants.iter().map(move |&v| (b, v)))
        .collect();
    let run = |&(baseline, variant): &(Baseline, VariantRef)| -> Result<VariantRun> {
        let seed = mdp_seed(settings.master_seed, variant);
        let goal = Arc::new(world.goal(variant)?);
        let fetched = baseline_options(baseline, world, variant, retriever, settings.top_p, settings.master_seed)?;
        let metrics = RetrievalMetrics::of(&goal.recipe, &fetched);
        let actions: Vec<OptionId> = fetched.iter().copied().collect();
        let mut env = Env::new(world.clone(), goal.clone(), seed);
        let cfg = A2cConfig { seed, ..settings.a2c };
        let (_, curve) = train_policy(&mut env, &actions, &cfg)?;
        log::debug!("{baseline} {} final {:?}", world.graph().variant_name(variant), curve.last());
        Ok(VariantRun {
            variant,
            variant_id: world.graph().variant_name(variant),
            baseline,
            master_seed: settings.master_seed,
            variant_seed: seed,
            recipe_len: goal.recipe.len(),
            fetched,
            metrics,
            curve,
        })
    };
    pool(settings.workers)?.install(|| jobs.par_iter().map(run).collect())
}

/// Mean with a normal-approximation 95% interval.
pub fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = 1.96 * (var / n as f64).sqrt();
    (mean, mean - half, mean + half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub baseline: String,
    pub iteration: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Per-update mean over variants; a run that stopped earlier contributes its
/// last evaluation.
pub fn aggregate(runs: &[VariantRun], metric: impl Fn(&CurvePoint) -> f64) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for b in baselines_in(runs) {
        let group: Vec<&VariantRun> = runs.iter().filter(|r| r.baseline == b).collect();
        let iterations: BTreeSet<usize> = group.iter().flat_map(|r| r.curve.points.iter().map(|p| p.update)).collect();
        for it in iterations {
            let values: Vec<f64> = group
                .iter()
                .map(|r| {
                    let p = r.curve.points.iter().take_while(|p| p.update <= it).last().expect("curves start at update 0");
                    metric(p)
                })
                .collect();
            let (mean, ci_lo, ci_hi) = mean_ci(&values);
            rows.push(AggregateRow {
                baseline: b.to_string(),
                iteration: it,
                mean,
                ci_lo,
                ci_hi,
            });
        }
    }
    rows
}

fn baselines_in(runs: &[VariantRun]) -> Vec<Baseline> {
    let mut out: Vec<Baseline> = Vec::new();
    for r in runs {
        if !out.contains(&r.baseline) {
            out.push(r.baseline);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub baseline: String,
    pub variants: usize,
    pub mean_reward: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_length: f64,
    pub completion: f64,
    pub sufficient_fraction: f64,
    pub mean_extra: f64,
    pub mean_missing: f64,
}

pub fn final_summaries(runs: &[VariantRun]) -> Vec<FinalSummary> {
    baselines_in(runs)
        .into_iter()
        .map(|b| {
            let group: Vec<&VariantRun> = runs.iter().filter(|r| r.baseline == b).collect();
            let n = group.len() as f64;
            let rewards: Vec<f64> = group.iter().map(|r| r.final_point().mean_reward).collect();
            let (mean_reward, ci_lo, ci_hi) = mean_ci(&rewards);
            FinalSummary {
                baseline: b.to_string(),
                variants: group.len(),
                mean_reward,
                ci_lo,
                ci_hi,
                mean_length: group.iter().map(|r| r.final_point().mean_length).sum::<f64>() / n,
                completion: group.iter().map(|r| r.final_point().completion).sum::<f64>() / n,
                sufficient_fraction: group.iter().filter(|r| r.metrics.sufficient).count() as f64 / n,
                mean_extra: group.iter().map(|r| r.metrics.extra as f64).sum::<f64>() / n,
                mean_missing: group.iter().map(|r| r.metrics.missing as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucketRow {
    pub baseline: String,
    pub min_len: usize,
    pub max_len: usize,
    pub variants: usize,
    pub completion: f64,
}

/// Final completion rate per inclusive recipe-length range; empty buckets
/// are kept with a NaN rate.
pub fn completion_by_length(runs: &[VariantRun], buckets: &[[usize; 2]]) -> Vec<LengthBucketRow> {
    let mut rows = Vec::new();
    for b in baselines_in(runs) {
        for &[lo, hi] in buckets {
            let group: Vec<&VariantRun> = runs
                .iter()
                .filter(|r| r.baseline == b && (lo..=hi).contains(&r.recipe_len))
                .collect();
            let completion = group.iter().map(|r| r.final_point().completion).sum::<f64>() / group.len() as f64;
            rows.push(LengthBucketRow {
                baseline: b.to_string(),
                min_len: lo,
                max_len: hi,
                variants: group.len(),
                completion,
            });
        }
    }
    rows
}

#[derive(Debug, Serialize)]
struct RetrievalCsvRow<'a> {
    variant_id: &'a str,
    baseline: String,
    sufficient: bool,
    extra: usize,
    missing: usize,
    fetched: String,
    master_seed: u64,
    variant_seed: u64,
}

#[derive(Debug, Serialize)]
struct CurveCsvRow<'a> {
    variant_id: &'a str,
    baseline: String,
    iteration: usize,
    env_steps: usize,
    mean_reward: f64,
    mean_length: f64,
    completion: f64,
    master_seed: u64,
    variant_seed: u64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_retrieval_csv(path: &Path, runs: &[VariantRun]) -> Result<()> {
    write_rows(
        path,
        runs.iter().map(|r| RetrievalCsvRow {
            variant_id: &r.variant_id,
            baseline: r.baseline.to_string(),
            sufficient: r.metrics.sufficient,
            extra: r.metrics.extra,
            missing: r.metrics.missing,
            fetched: r.fetched.iter().map(|o| o.0.to_string()).collect::<Vec<_>>().join(" "),
            master_seed: r.master_seed,
            variant_seed: r.variant_seed,
        }),
    )
}

pub fn write_curves_csv(path: &Path, runs: &[VariantRun]) -> Result<()> {
    write_rows(
        path,
        runs.iter().flat_map(|r| {
            r.curve.points.iter().map(move |p| CurveCsvRow {
                variant_id: &r.variant_id,
                baseline: r.baseline.to_string(),
                iteration: p.update,
                env_steps: p.env_steps,
                mean_reward: p.mean_reward,
                mean_length: p.mean_length,
                completion: p.completion,
                master_seed: r.master_seed,
                variant_seed: r.variant_seed,
            })
        }),
    )
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(path, rows)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantSeed {
    pub variant_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub domain_hash: String,
    pub checkpoint_sha256: Option<String>,
    pub variant_seeds: Vec<VariantSeed>,
    pub version: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, seed: u64, domain: &Domain) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            master_seed: seed,
            config: serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?,
            domain_hash: hex(&domain.hash()),
            checkpoint_sha256: None,
            variant_seeds: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_FILE)
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// A fresh retriever trained on `train`, seeded from `seed`.
pub fn train_retriever(world: &World, train: &[VariantRef], cfg: &RunConfig, seed: u64) -> Result<(Retriever, MetaReport)> {
    let mut rng = rng_for(seed, &[0x1D3]);
    let mut r = Retriever::new(
        world.state_dim(),
        cfg.retriever.hidden,
        cfg.retriever.key_dim,
        world.num_options(),
        cfg.key_init(),
        &mut rng,
    )?;
    let meta = crate::meta::MetaTrainConfig {
        seed,
        ..cfg.meta_config()
    };
    let report = meta_train(world, train, &mut r, &meta, |_| {})?;
    Ok((r, report))
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    iteration: usize,
    mean_loss: f64,
    skipped_count: usize,
}

pub struct Prepared {
    pub domain: Domain,
    pub world: Arc<World>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let domain = cfg.build_domain()?;
    let world = Arc::new(World::new(Arc::new(domain.graph.clone()), domain.episode)?);
    Ok(Prepared { domain, world })
}

pub fn cmd_generate_domain(cfg: &RunConfig, out: &Path) -> Result<Domain> {
    ensure_dir(out)?;
    let p = prepare(cfg)?;
    p.domain.save(&out.join("domain.toml"))?;
    Ok(p.domain)
}

pub fn cmd_meta_train(cfg: &RunConfig, seed: u64, out: &Path) -> Result<(Retriever, MetaReport)> {
    ensure_dir(out)?;
    let p = prepare(cfg)?;
    let (retriever, report) = train_retriever(&p.world, &p.domain.split.train, cfg, seed)?;
    let ck = Checkpoint {
        domain_hash: p.domain.hash(),
        retriever,
    };
    let path = checkpoint_path(out);
    ck.save(&path)?;
    write_rows(
        &out.join("metrics.csv"),
        report.records.iter().map(|r| MetricsRow {
            iteration: r.iteration,
            mean_loss: r.mean_loss,
            skipped_count: r.skipped,
        }),
    )?;
    let mut m = Manifest::new("meta-train", cfg, seed, &p.domain)?;
    m.checkpoint_sha256 = Some(file_sha256(&path)?);
    m.write(&out.join("manifest_meta.json"))?;
    Ok((ck.retriever, report))
}

pub struct EvalOutcome {
    pub runs: Vec<VariantRun>,
    pub summaries: Vec<FinalSummary>,
}

pub fn test_variants(domain: &Domain, cap: usize) -> Vec<VariantRef> {
    domain.split.test.iter().copied().take(cap).collect()
}

pub fn load_checkpoint(cfg: &RunConfig, p: &Prepared, out: &Path) -> Result<Checkpoint> {
    let path = checkpoint_path(out);
    if !path.exists() {
        return Err(Error::Checkpoint {
            path,
            message: "no checkpoint; run meta-train first".into(),
        });
    }
    Checkpoint::load_expecting(
        &path,
        &CheckpointExpectation {
            k: p.world.num_options(),
            d: cfg.retriever.key_dim,
            state_dim: p.world.state_dim(),
            domain_hash: p.domain.hash(),
        },
    )
}

pub fn cmd_evaluate(cfg: &RunConfig, seed: u64, out: &Path, baselines: &[Baseline], workers: usize) -> Result<EvalOutcome> {
    ensure_dir(out)?;
    let p = prepare(cfg)?;
    let needs_index = baselines.contains(&Baseline::OiHrl);
    let checkpoint = if needs_index { Some(load_checkpoint(cfg, &p, out)?) } else { None };
    let variants = test_variants(&p.domain, cfg.evaluation.max_test_variants);
    let settings = EvalSettings {
        master_seed: seed,
        top_p: cfg.meta.top_p,
        a2c: cfg.a2c_config(seed),
        workers,
    };
    let runs = run_evaluation(&p.world, checkpoint.as_ref().map(|c| &c.retriever), &variants, baselines, &settings)?;
    write_retrieval_csv(&out.join("retrieval.csv"), &runs)?;
    write_curves_csv(&out.join("curves.csv"), &runs)?;
    write_csv(&out.join("aggregate.csv"), &aggregate(&runs, |p| p.mean_reward))?;
    write_csv(&out.join("aggregate_length.csv"), &aggregate(&runs, |p| p.mean_length))?;
    if !cfg.evaluation.length_buckets.is_empty() {
        write_csv(
            &out.join("completion_by_length.csv"),
            &completion_by_length(&runs, &cfg.evaluation.length_buckets),
        )?;
    }
    let summaries = final_summaries(&runs);
    write_csv(&out.join("summary.csv"), &summaries)?;
    let mut m = Manifest::new("evaluate", cfg, seed, &p.domain)?;
    if needs_index {
        m.checkpoint_sha256 = Some(file_sha256(&checkpoint_path(out))?);
    }
    m.variant_seeds = variants
        .iter()
        .map(|&v| VariantSeed {
            variant_id: p.domain.graph.variant_name(v),
            seed: mdp_seed(seed, v),
        })
        .collect();
    m.write(&out.join("manifest.json"))?;
    Ok(EvalOutcome { runs, summaries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub seed: u64,
    pub train_variants: usize,
    pub sufficient_fraction: f64,
    pub mean_extra: f64,
    pub mean_missing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub fraction: f64,
    pub mean_sufficient: f64,
    pub mean_extra: f64,
    pub mean_missing: f64,
}

/// Random subset of `train` of the given size fraction; the full set is
/// returned unchanged at fraction 1.
pub fn train_subset(train: &[VariantRef], fraction: f64, seed: u64) -> Vec<VariantRef> {
    if fraction >= 1.0 {
        return train.to_vec();
    }
    let n = ((train.len() as f64 * fraction).round() as usize).clamp(1, train.len());
    let mut v = train.to_vec();
    v.shuffle(&mut rng_for(seed, &[0x5EE9, fraction.to_bits()]));
    v.truncate(n);
    v
}

/// Retrains from scratch per (fraction, seed) and scores retrieval on the
/// whole test split. Seeds are `master, master + 1, ...`.
pub fn run_sweep(cfg: &RunConfig, master_seed: u64, fractions: &[f64], seeds: usize, workers: usize) -> Result<Vec<SweepRow>> {
    let p = prepare(cfg)?;
    let jobs: Vec<(f64, u64)> = fractions
        .iter()
        .flat_map(|&f| (0..seeds as u64).map(move |i| (f, master_seed.wrapping_add(i))))
        .collect();
    let run = |&(fraction, seed): &(f64, u64)| -> Result<SweepRow> {
        let train = train_subset(&p.domain.split.train, fraction, seed);
        let (r, _) = train_retriever(&p.world, &train, cfg, seed)?;
        let s = summarize(&evaluate_retrieval(&p.world, &r, &p.domain.split.test, seed, cfg.meta.top_p)?);
        Ok(SweepRow {
            fraction,
            seed,
            train_variants: train.len(),
            sufficient_fraction: s.sufficient_fraction,
            mean_extra: s.mean_extra,
            mean_missing: s.mean_missing,
        })
    };
    pool(workers)?.install(|| jobs.par_iter().map(run).collect())
}

pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummaryRow> {
    let mut fractions: Vec<f64> = Vec::new();
    for r in rows {
        if !fractions.contains(&r.fraction) {
            fractions.push(r.fraction);
        }
    }
    fractions
        .into_iter()
        .map(|f| {
            let g: Vec<&SweepRow> = rows.iter().filter(|r| r.fraction == f).collect();
            let n = g.len() as f64;
            SweepSummaryRow {
                fraction: f,
                mean_sufficient: g.iter().map(|r| r.sufficient_fraction).sum::<f64>() / n,
                mean_extra: g.iter().map(|r| r.mean_extra).sum::<f64>() / n,
                mean_missing: g.iter().map(|r| r.mean_missing).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn cmd_sweep(cfg: &RunConfig, seed: u64, out: &Path, fractions: &[f64], workers: usize) -> Result<Vec<SweepSummaryRow>> {
    ensure_dir(out)?;
    let seeds = cfg.sweep.as_ref().map_or(3, |s| s.seeds);
    let rows = run_sweep(cfg, seed, fractions, seeds, workers)?;
    write_csv(&out.join("sweep.csv"), &rows)?;
    let summary = summarize_sweep(&rows);
    write_csv(&out.join("sweep_summary.csv"), &summary)?;
    let p = prepare(cfg)?;
    Manifest::new("sweep", cfg, seed, &p.domain)?.write(&out.join("manifest_sweep.json"))?;
    Ok(summary)
}

/// Human-readable digest of whatever result files exist in `out`.
pub fn cmd_report(out: &Path) -> Result<String> {
    let mut text = String::new();
    let summary = out.join("summary.csv");
    if summary.exists() {
        text.push_str("baseline        n  reward  [95% CI]           length  completion  sufficient  extra  missing\n");
        for s in read_rows::<FinalSummary>(&summary)? {
            text.push_str(&format!(
                "{:<12} {:>4}  {:>6.3}  [{:>6.3}, {:>6.3}]  {:>6.2}  {:>10.3}  {:>10.3}  {:>5.2}  {:>7.2}\n",
                s.baseline, s.variants, s.mean_reward, s.ci_lo, s.ci_hi, s.mean_length, s.completion, s.sufficient_fraction,
                s.mean_extra, s.mean_missing
            ));
        }
    }
    let buckets = out.join("completion_by_length.csv");
    if buckets.exists() {
        text.push_str("\ncompletion by recipe length\n");
        for b in read_rows::<LengthBucketRow>(&buckets)? {
            text.push_str(&format!(
                "{:<12} {:>2}..{:<2} n={:<3} completion {:.3}\n",
                b.baseline, b.min_len, b.max_len, b.variants, b.completion
            ));
        }
    }
    let sweep = out.join("sweep_summary.csv");
    if sweep.exists() {
        text.push_str("\ntrain fraction  sufficient  extra  missing\n");
        for r in read_rows::<SweepSummaryRow>(&sweep)? {
            text.push_str(&format!(
                "{:>14.2}  {:>10.3}  {:>5.2}  {:>7.2}\n",
                r.fraction, r.mean_sufficient, r.mean_extra, r.mean_missing
            ));
        }
    }
    if text.is_empty() {
        return Err(Error::InvalidInput(format!("no result files in {}", out.display())));
    }
    fs::write(out.join("report.txt"), &text).map_err(|e| Error::io(out, e))?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_names_round_trip() {
        for b in [Baseline::HrlN, Baseline::HrlNPlusK(2), Baseline::HrlFull, Baseline::OiHrl] {
            assert_eq!(b.to_string().parse::<Baseline>().unwrap(), b);
        }
        assert!("HRL_N+0".parse::<Baseline>().is_err());
        assert!("HRL_X".parse::<Baseline>().is_err());
    }

    #[test]
    fn ci_of_constant_is_degenerate() {
        assert_eq!(mean_ci(&[0.5, 0.5, 0.5]), (0.5, 0.5, 0.5));
        let (m, lo, hi) = mean_ci(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((hi - m - 1.96 * 0.5).abs() < 1e-12 && (m - lo - 1.96 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn full_fraction_keeps_train_order() {
        let train: Vec<VariantRef> = (0..10).map(|i| VariantRef::new(1, i)).collect();
        assert_eq!(train_subset(&train, 1.0, 4), train);
        assert_eq!(train_subset(&train, 0.5, 4).len(), 5);
    }
}
