//! Learned option index: a query network maps the initial state to a query,
//! dot products with per-option keys give a softmax over the library, and the
//! smallest prefix of options whose mass exceeds `p` is fetched.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;

use crate::codec::{put_f64s, put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy_loss_and_grad, dot, softmax, Activation, DenseNet, ForwardTrace, Gradients,
    Layer, OptimizerState,
};
use crate::oracle::Trajectory;
use crate::task::OptionId;

pub const DEFAULT_TOP_P: f64 = 0.9;

/// Indices of the smallest set whose probability mass exceeds `p`, taken
/// greedily by descending probability (ties: lower index first).
pub fn top_p(probs: &[f64], p: f64) -> Result<Vec<OptionId>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!("top-p threshold {p} outside (0, 1)")));
    }
    if probs.is_empty() {
        return Err(Error::InvalidInput("top-p over an empty distribution".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = Vec::new();
    let mut mass = 0.0;
    for i in order {
        out.push(OptionId(i));
        mass += probs[i];
        if mass > p {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Fetched options in the order they were added.
    pub fetched: Vec<OptionId>,
    pub probabilities: Vec<f64>,
}

impl RetrievalResult {
    pub fn fetched_set(&self) -> BTreeSet<OptionId> {
        self.fetched.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoTrajectories,
    NonPositiveReturn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub y: Vec<f64>,
    pub skip: Option<SkipReason>,
}

/// Each trajectory of length `n` and return `r` adds `(r / n) / R` to every
/// option it uses, where `R` is the summed return of all trajectories.
pub fn target_from_trajectories(trajectories: &[Trajectory], k: usize) -> Result<Target> {
    for t in trajectories {
        if t.is_empty() {
            return Err(Error::InvalidInput("empty trajectory in supervision set".into()));
        }
        if let Some(o) = t.options.iter().find(|o| o.0 >= k) {
            return Err(Error::InvalidInput(format!("option {} outside library of {k}", o.0)));
        }
    }
    let mut y = vec![0.0; k];
    if trajectories.is_empty() {
        return Ok(Target {
            y,
            skip: Some(SkipReason::NoTrajectories),
        });
    }
    let total: f64 = trajectories.iter().map(|t| t.ret).sum();
    if !(total > 0.0) {
        return Ok(Target {
            y,
            skip: Some(SkipReason::NonPositiveReturn),
        });
    }
    for t in trajectories {
        let share = (t.ret / t.len() as f64) / total;
        for o in &t.options {
            y[o.0] += share;
        }
    }
    Ok(Target { y, skip: None })
}

/// One learned key per library option, stored row-major `k × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionIndex {
    k: usize,
    d: usize,
    keys: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyInit {
    Zeros,
    /// Glorot-uniform bounds multiplied by the given factor.
    ScaledGlorot(f64),
}

impl Default for KeyInit {
    fn default() -> Self {
        KeyInit::ScaledGlorot(DEFAULT_KEY_SCALE)
    }
}

/// Keys use the same Glorot-uniform scheme as the query network weights.
pub const DEFAULT_KEY_SCALE: f64 = 1.0;

impl OptionIndex {
    pub fn new(k: usize, d: usize, keys: Vec<f64>) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::InvalidInput("index needs k ≥ 1 and d ≥ 1".into()));
        }
        if keys.len() != k * d {
            return Err(Error::dim("index keys", k * d, keys.len()));
        }
        if !keys.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("index keys must be finite".into()));
        }
        Ok(Self { k, d, keys })
    }

    pub fn init<R: Rng + ?Sized>(k: usize, d: usize, init: KeyInit, rng: &mut R) -> Result<Self> {
        let keys = match init {
            KeyInit::Zeros => vec![0.0; k * d],
            KeyInit::ScaledGlorot(scale) => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::Config(format!("key scale must be positive, got {scale}")));
                }
                let limit = scale * (6.0 / (k + d) as f64).sqrt();
                (0..k * d).map(|_| rng.gen_range(-limit..limit)).collect()
            }
        };
        Self::new(k, d, keys)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    pub fn keys_mut(&mut self) -> &mut [f64] {
        &mut self.keys
    }

    pub fn key(&self, o: OptionId) -> &[f64] {
        &self.keys[o.0 * self.d..(o.0 + 1) * self.d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverGrads {
    pub qgn: Gradients,
    pub keys: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    /// Mean loss before the update.
    pub loss: f64,
    pub applied: bool,
}

/// Query network plus option index.
#[derive(Debug, Clone, PartialEq)]
pub struct Retriever {
    qgn: DenseNet,
    index: OptionIndex,
}

impl Retriever {
    /// `state_dim → hidden (ReLU) → d` query network, or a single linear
    /// layer when `hidden` is zero.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: usize,
        d: usize,
        k: usize,
        key_init: KeyInit,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = if hidden == 0 {
            vec![state_dim, d]
        } else {
            vec![state_dim, hidden, d]
        };
        let qgn = DenseNet::glorot(&sizes, Activation::Relu, Activation::Identity, rng)?;
        let index = OptionIndex::init(k, d, key_init, rng)?;
        Self::from_parts(qgn, index)
    }

    pub fn from_parts(qgn: DenseNet, index: OptionIndex) -> Result<Self> {
        if qgn.output_dim() != index.d() {
            return Err(Error::dim("query width vs key width", index.d(), qgn.output_dim()));
        }
        Ok(Self { qgn, index })
    }

    pub fn qgn(&self) -> &DenseNet {
        &self.qgn
    }

    pub fn qgn_mut(&mut self) -> &mut DenseNet {
        &mut self.qgn
    }

    pub fn index(&self) -> &OptionIndex {
        &self.index
    }

    pub fn index_mut(&mut self) -> &mut OptionIndex {
        &mut self.index
    }

    pub fn state_dim(&self) -> usize {
        self.qgn.input_dim()
    }

    pub fn num_options(&self) -> usize {
        self.index.k()
    }

    pub fn is_finite(&self) -> bool {
        self.qgn.is_finite() && self.index.keys.iter().all(|v| v.is_finite())
    }

    pub fn query(&self, s0: &[f64]) -> Result<Vec<f64>> {
        self.qgn.forward(s0)
    }

    fn logits_from_query(&self, q: &[f64]) -> Vec<f64> {
        self.index.keys.chunks_exact(self.index.d).map(|e| dot(q, e)).collect()
    }

    pub fn logits(&self, s0: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits_from_query(&self.query(s0)?))
    }

    pub fn probabilities(&self, s0: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.logits(s0)?)
    }

    pub fn select(&self, s0: &[f64], p: f64) -> Result<RetrievalResult> {
        let probabilities = self.probabilities(s0)?;
        let fetched = top_p(&probabilities, p)?;
        Ok(RetrievalResult {
            fetched,
            probabilities,
        })
    }

    pub fn zero_grads(&self) -> RetrieverGrads {
        RetrieverGrads {
            qgn: Gradients::zeros_like(&self.qgn),
            keys: vec![0.0; self.index.keys.len()],
        }
    }

    /// Mean cross-entropy over `(s0, y)` pairs and its gradient w.r.t. the
    /// query network and the keys.
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, RetrieverGrads)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        let d = self.index.d;
        for (s0, y) in batch {
            if y.len() != self.index.k {
                return Err(Error::dim("target vector", self.index.k, y.len()));
            }
            let trace: ForwardTrace = self.qgn.forward_trace(s0)?;
            let q = trace.output();
            let p = softmax(&self.logits_from_query(q))?;
            let (l, dz) = cross_entropy_loss_and_grad(y, &p)?;
            loss += l;
            let mut dq = vec![0.0; d];
            for (i, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let e = &self.index.keys[i * d..(i + 1) * d];
                let ge = &mut grads.keys[i * d..(i + 1) * d];
                for j in 0..d {
                    ge[j] += g * q[j];
                    dq[j] += g * e[j];
                }
            }
            self.qgn.backward_trace(&trace, &dq, &mut grads.qgn)?;
        }
        let scale = 1.0 / batch.len() as f64;
        grads.qgn.scale(scale);
        grads.keys.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grads))
    }

    /// One joint optimizer step over the query network and the keys.
    pub fn apply(&mut self, opt: &mut OptimizerState, grads: &RetrieverGrads) -> Result<bool> {
        grads.qgn.check_congruent(&self.qgn)?;
        let mut params = self.qgn.param_blocks_mut();
        params.push(self.index.keys.as_mut_slice());
        let mut blocks = grads.qgn.blocks();
        blocks.push(grads.keys.as_slice());
        opt.step_blocks(params, blocks)
    }

    pub fn update(&mut self, opt: &mut OptimizerState, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<UpdateOutcome> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        if !loss.is_finite() {
            log::warn!("non-finite retrieval loss {loss}; update skipped");
            return Ok(UpdateOutcome { loss, applied: false });
        }
        let applied = self.apply(opt, &grads)?;
        Ok(UpdateOutcome { loss, applied })
    }
}

const MAGIC: &[u8; 8] = b"OIHRLCKP";
const VERSION: u32 = 1;

/// Expected shape and domain of a checkpoint being loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointExpectation {
    pub k: usize,
    pub d: usize,
    pub state_dim: usize,
    pub domain_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub domain_hash: [u8; 32],
    pub retriever: Retriever,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.extend_from_slice(&self.domain_hash);
        put_u32(&mut out, self.retriever.index.k as u32);
        put_u32(&mut out, self.retriever.index.d as u32);
        let net = self.retriever.qgn.to_bytes();
        put_u32(&mut out, net.len() as u32);
        out.extend_from_slice(&net);
        put_f64s(&mut out, &self.retriever.index.keys);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let mut r = ByteReader::new(bytes);
        if r.take(8).map_err(fail)? != MAGIC {
            return Err(fail("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32().map_err(fail)?;
        if version != VERSION {
            return Err(fail(format!("format version {version}, expected {VERSION}")));
        }
        let mut domain_hash = [0u8; 32];
        domain_hash.copy_from_slice(r.take(32).map_err(fail)?);
        let k = r.u32().map_err(fail)? as usize;
        let d = r.u32().map_err(fail)? as usize;
        let net_len = r.u32().map_err(fail)? as usize;
        let qgn = DenseNet::from_bytes(r.take(net_len).map_err(fail)?).map_err(|e| fail(e.to_string()))?;
        let keys = r.f64s(k.checked_mul(d).ok_or_else(|| fail("shape overflow".into()))?).map_err(fail)?;
        if r.remaining() != 0 {
            return Err(fail(format!("{} trailing bytes", r.remaining())));
        }
        let index = OptionIndex::new(k, d, keys).map_err(|e| fail(e.to_string()))?;
        let retriever = Retriever::from_parts(qgn, index).map_err(|e| fail(e.to_string()))?;
        Ok(Self {
            domain_hash,
            retriever,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks shape first, then the domain hash.
    pub fn load_expecting(path: &Path, expect: &CheckpointExpectation) -> Result<Self> {
        let ck = Self::load(path)?;
        let fail = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let r = &ck.retriever;
        if r.index.k != expect.k || r.index.d != expect.d || r.state_dim() != expect.state_dim {
            return Err(fail(format!(
                "shape mismatch: checkpoint has k={}, d={}, state_dim={}; expected k={}, d={}, state_dim={}",
                r.index.k,
                r.index.d,
                r.state_dim(),
                expect.k,
                expect.d,
                expect.state_dim
            )));
        }
        if ck.domain_hash != expect.domain_hash {
            return Err(fail("domain hash mismatch: checkpoint was trained on a different domain".into()));
        }
        Ok(ck)
    }
}

/// Builds a single-layer query network from explicit weights; handy for tests.
pub fn linear_qgn(state_dim: usize, d: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<DenseNet> {
    DenseNet::new(vec![Layer::new(state_dim, d, Activation::Identity, weights, bias)?])
}
