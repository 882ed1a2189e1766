//! Toy token-sequence data and the multi-head policy.
//!
//! A policy maps a structural feature `psi(prompt_type, tokens, t)` through a
//! shared linear backbone to an embedding `phi`, and each head turns `phi` into
//! next-token logits. Heads are the individual policies; the backbone is shared.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "hvmax-policy/1";

const INIT_HALF_WIDTH: f64 = 0.1;

/// Token-class rewards: the vocabulary is cut into `J` contiguous classes of
/// `V / J` tokens each (any remainder is neutral), and reward `j` is the share of
/// a sequence's tokens that fall in class `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenClassReward {
    vocab_size: usize,
    num_objectives: usize,
}

impl TokenClassReward {
    pub fn new(vocab_size: usize, num_objectives: usize) -> Result<Self> {
        if num_objectives == 0 {
            return Err(Error::config("at least one objective is required"));
        }
        if vocab_size < num_objectives {
            return Err(Error::config(format!(
                "vocabulary of {vocab_size} tokens cannot be split into {num_objectives} classes"
            )));
        }
        Ok(Self {
            vocab_size,
            num_objectives,
        })
    }

    pub fn class_size(&self) -> usize {
        self.vocab_size / self.num_objectives
    }

    /// Tokens at or above this id are neutral.
    pub fn neutral_start(&self) -> usize {
        self.class_size() * self.num_objectives
    }

    pub fn class_of(&self, token: usize) -> Option<usize> {
        (token < self.neutral_start()).then(|| token / self.class_size())
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    pub fn rewards(&self, tokens: &[usize]) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_objectives];
        for &t in tokens {
            if let Some(c) = self.class_of(t) {
                counts[c] += 1;
            }
        }
        let len = tokens.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / len).collect()
    }
}

/// One prompt-response pair with precomputed rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub prompt_id: usize,
    pub prompt_type: usize,
    pub tokens: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    vocab_size: usize,
    seq_len: usize,
    prompt_types: usize,
    num_objectives: usize,
}

impl Dataset {
    /// Validates records against the given vocabulary and prompt-type counts.
    /// Sequence length and objective count are taken from the first record.
    pub fn new(records: Vec<Record>, vocab_size: usize, prompt_types: usize) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::argument("dataset has no records"))?;
        let seq_len = first.tokens.len();
        let num_objectives = first.rewards.len();
        if seq_len == 0 || num_objectives == 0 {
            return Err(Error::argument("records need tokens and rewards"));
        }
        for (i, r) in records.iter().enumerate() {
            let at = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            if r.tokens.len() != seq_len {
                return Err(at(format!(
                    "sequence length {} differs from {seq_len}",
                    r.tokens.len()
                )));
            }
            if r.rewards.len() != num_objectives {
                return Err(at(format!(
                    "{} rewards where {num_objectives} expected",
                    r.rewards.len()
                )));
            }
            if let Some(t) = r.tokens.iter().find(|&&t| t >= vocab_size) {
                return Err(at(format!("token {t} outside vocabulary of {vocab_size}")));
            }
            if r.prompt_type >= prompt_types {
                return Err(at(format!(
                    "prompt type {} outside [0, {prompt_types})",
                    r.prompt_type
                )));
            }
            if let Some(x) = r.rewards.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(at(format!("reward {x} outside [0, 1]")));
            }
        }
        Ok(Self {
            records,
            vocab_size,
            seq_len,
            prompt_types,
            num_objectives,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn prompt_types(&self) -> usize {
        self.prompt_types
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    /// Column means of the reward matrix.
    pub fn reward_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.num_objectives];
        for r in &self.records {
            for (m, x) in means.iter_mut().zip(&r.rewards) {
                *m += x;
            }
        }
        let n = self.len() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R, vocab_size: usize, prompt_types: usize) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Self::new(records, vocab_size, prompt_types)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub prompt_types: usize,
    pub num_objectives: usize,
    pub seed: u64,
}

/// Generates a synthetic dataset with competing token-class rewards.
///
/// Each response draws class proportions from a Dirichlet whose concentration is
/// tilted toward class `prompt_type mod J`, then fills its tokens from those
/// classes (neutral tokens are drawn at their vocabulary share).
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let DatasetConfig {
        n,
        vocab_size,
        seq_len,
        prompt_types,
        num_objectives,
        seed,
    } = *cfg;
    if n == 0 || vocab_size == 0 || seq_len == 0 || prompt_types == 0 || num_objectives == 0 {
        return Err(Error::config("n, V, T, G and J must all be at least 1"));
    }
    let reward = TokenClassReward::new(vocab_size, num_objectives)?;
    let class_size = reward.class_size();
    let neutral = vocab_size - reward.neutral_start();
    let neutral_share = neutral as f64 / vocab_size as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Gamma::new(1.0, 1.0).expect("valid gamma");
    let tilted = Gamma::new(2.0, 1.0).expect("valid gamma");
    let mut records = Vec::with_capacity(n);
    for prompt_id in 0..n {
        let prompt_type = rng.random_range(0..prompt_types);
        let favored = prompt_type % num_objectives;
        let mut weights: Vec<f64> = (0..num_objectives)
            .map(|j| {
                if j == favored {
                    tilted.sample(&mut rng)
                } else {
                    base.sample(&mut rng)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        let tokens = (0..seq_len)
            .map(|_| {
                if neutral > 0 && rng.random::<f64>() < neutral_share {
                    return reward.neutral_start() + rng.random_range(0..neutral);
                }
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut class = num_objectives - 1;
                for (j, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        class = j;
                        break;
                    }
                }
                class * class_size + rng.random_range(0..class_size)
            })
            .collect::<Vec<_>>();
        let rewards = reward.rewards(&tokens);
        records.push(Record {
            prompt_id,
            prompt_type,
            tokens,
            rewards,
        });
    }
    Dataset::new(records, vocab_size, prompt_types)
}

/// Model dimensions shared by every head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub prompt_types: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
}

impl PolicyShape {
    /// `G + V + 1`: prompt-type one-hot, previous-token one-hot, position.
    pub fn feature_dim(&self) -> usize {
        self.prompt_types + self.vocab_size + 1
    }

    pub fn param_count(&self) -> usize {
        self.embed_dim * self.feature_dim() + self.num_heads * self.vocab_size * self.embed_dim
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.seq_len == 0
            || self.prompt_types == 0
            || self.embed_dim == 0
            || self.num_heads == 0
        {
            return Err(Error::config("all policy dimensions must be at least 1"));
        }
        Ok(())
    }
}

/// Structural feature for position `t`: one-hot prompt type, one-hot previous
/// token (all zeros at `t = 0`), and `t / T`.
pub fn feature(shape: &PolicyShape, prompt_type: usize, tokens: &[usize], t: usize) -> Array1<f64> {
    let mut psi = Array1::zeros(shape.feature_dim());
    psi[prompt_type] = 1.0;
    if t > 0 {
        psi[shape.prompt_types + tokens[t - 1]] = 1.0;
    }
    psi[shape.prompt_types + shape.vocab_size] = t as f64 / shape.seq_len as f64;
    psi
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.mapv(|l| (l - max).exp()).sum().ln();
    logits.mapv(|l| l - lse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadPolicy {
    shape: PolicyShape,
    /// `d x f`
    backbone: Array2<f64>,
    /// `K` matrices of `V x d`
    heads: Vec<Array2<f64>>,
}

/// Gradient with the same layout as a [`MultiHeadPolicy`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub backbone: Array2<f64>,
    pub heads: Vec<Array2<f64>>,
}

impl PolicyGrad {
    pub fn zeros(shape: &PolicyShape) -> Self {
        Self {
            backbone: Array2::zeros((shape.embed_dim, shape.feature_dim())),
            heads: vec![Array2::zeros((shape.vocab_size, shape.embed_dim)); shape.num_heads],
        }
    }

    /// Backbone first, then heads in order, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.backbone.len() + self.heads.iter().map(|h| h.len()).sum::<usize>(),
        );
        out.extend(self.backbone.iter());
        for h in &self.heads {
            out.extend(h.iter());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.to_flat().iter().all(|&g| g == 0.0)
    }
}

impl MultiHeadPolicy {
    /// Uniform `[-0.1, 0.1]` initialization. The backbone uses `seed` and head `k`
    /// uses `seed + 1 + k`, so heads start distinct.
    pub fn init(shape: PolicyShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let dist = Uniform::new_inclusive(-INIT_HALF_WIDTH, INIT_HALF_WIDTH).expect("valid range");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Array2::from_shape_simple_fn((shape.embed_dim, shape.feature_dim()), || {
            dist.sample(&mut rng)
        });
        let heads = (0..shape.num_heads)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + k as u64));
                Array2::from_shape_simple_fn((shape.vocab_size, shape.embed_dim), || {
                    dist.sample(&mut rng)
                })
            })
            .collect();
        Ok(Self {
            shape,
            backbone,
            heads,
        })
    }

    pub fn zeros(shape: PolicyShape) -> Result<Self> {
        shape.validate()?;
        let g = PolicyGrad::zeros(&shape);
        Ok(Self {
            shape,
            backbone: g.backbone,
            heads: g.heads,
        })
    }

    pub fn from_parts(shape: PolicyShape, backbone: Array2<f64>, heads: Vec<Array2<f64>>) -> Result<Self> {
        shape.validate()?;
        let bdim = (shape.embed_dim, shape.feature_dim());
        if backbone.dim() != bdim {
            return Err(Error::DimensionMismatch {
                expected: bdim.0 * bdim.1,
                found: backbone.len(),
            });
        }
        if heads.len() != shape.num_heads {
            return Err(Error::DimensionMismatch {
                expected: shape.num_heads,
                found: heads.len(),
            });
        }
        for h in &heads {
            if h.dim() != (shape.vocab_size, shape.embed_dim) {
                return Err(Error::DimensionMismatch {
                    expected: shape.vocab_size * shape.embed_dim,
                    found: h.len(),
                });
            }
        }
        let policy = Self {
            shape,
            backbone,
            heads,
        };
        if policy.to_flat().iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("policy parameters must be finite"));
        }
        Ok(policy)
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn backbone(&self) -> &Array2<f64> {
        &self.backbone
    }

    pub fn head(&self, k: usize) -> &Array2<f64> {
        &self.heads[k]
    }

    pub fn head_mut(&mut self, k: usize) -> &mut Array2<f64> {
        &mut self.heads[k]
    }

    pub fn backbone_mut(&mut self) -> &mut Array2<f64> {
        &mut self.backbone
    }

    pub fn param_count(&self) -> usize {
        self.backbone.len() + self.heads.iter().map(|h| h.len()).sum::<usize>()
    }

    /// Same layout as [`PolicyGrad::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.backbone.iter());
        for h in &self.heads {
            out.extend(h.iter());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut it = flat.iter();
        for p in self.backbone.iter_mut() {
            *p = *it.next().unwrap();
        }
        for h in self.heads.iter_mut() {
            for p in h.iter_mut() {
                *p = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// A single-head policy sharing this backbone and carrying head `k`.
    pub fn single_head(&self, k: usize) -> Self {
        Self {
            shape: PolicyShape {
                num_heads: 1,
                ..self.shape
            },
            backbone: self.backbone.clone(),
            heads: vec![self.heads[k].clone()],
        }
    }

    /// Frobenius distance between two heads.
    pub fn head_distance(&self, a: usize, b: usize) -> f64 {
        (&self.heads[a] - &self.heads[b]).mapv(|x| x * x).sum().sqrt()
    }

    fn check_input(&self, head: usize, prompt_type: usize, tokens: &[usize]) -> Result<()> {
        if head >= self.heads.len() {
            return Err(Error::argument(format!(
                "head {head} out of range for {} heads",
                self.heads.len()
            )));
        }
        if prompt_type >= self.shape.prompt_types {
            return Err(Error::domain(format!("prompt type {prompt_type} out of range")));
        }
        if tokens.len() != self.shape.seq_len {
            return Err(Error::DimensionMismatch {
                expected: self.shape.seq_len,
                found: tokens.len(),
            });
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= self.shape.vocab_size) {
            return Err(Error::domain(format!(
                "token {t} outside vocabulary of {}",
                self.shape.vocab_size
            )));
        }
        Ok(())
    }

    fn logits(&self, head: usize, psi: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let phi = self.backbone.dot(psi);
        let logits = self.heads[head].dot(&phi);
        (phi, logits)
    }

    /// `sum_t log softmax(H_k B psi_t)[y_t]`.
    pub fn log_prob(&self, head: usize, prompt_type: usize, tokens: &[usize]) -> Result<f64> {
        self.check_input(head, prompt_type, tokens)?;
        let mut total = 0.0;
        for (t, &y) in tokens.iter().enumerate() {
            let psi = feature(&self.shape, prompt_type, tokens, t);
            let (_, logits) = self.logits(head, &psi);
            total += log_softmax(&logits)[y];
        }
        Ok(total)
    }

    /// Adds `scale * d log_prob / d params` into `grad` and returns `log_prob`.
    pub fn accumulate_log_prob_grad(
        &self,
        head: usize,
        prompt_type: usize,
        tokens: &[usize],
        scale: f64,
        grad: &mut PolicyGrad,
    ) -> Result<f64> {
        self.check_input(head, prompt_type, tokens)?;
        let mut total = 0.0;
        for (t, &y) in tokens.iter().enumerate() {
            let psi = feature(&self.shape, prompt_type, tokens, t);
            let (phi, logits) = self.logits(head, &psi);
            let logp = log_softmax(&logits);
            total += logp[y];
            // d/dlogits = onehot(y) - softmax
            let mut delta = logp.mapv(|l| -l.exp());
            delta[y] += 1.0;
            delta *= scale;
            let dphi = self.heads[head].t().dot(&delta);
            grad.heads[head] += &outer(&delta, &phi);
            grad.backbone += &outer(&dphi, &psi);
        }
        Ok(total)
    }

    /// Gradient of [`log_prob`](Self::log_prob); heads other than `head` stay zero.
    pub fn log_prob_grad(&self, head: usize, prompt_type: usize, tokens: &[usize]) -> Result<PolicyGrad> {
        let mut grad = PolicyGrad::zeros(&self.shape);
        self.accumulate_log_prob_grad(head, prompt_type, tokens, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Autoregressive sampling from `softmax(logits / temperature)`.
    /// `temperature == 0` decodes greedily (lowest token id on ties).
    pub fn sample_response(&self, head: usize, prompt_type: usize, temperature: f64, seed: u64) -> Result<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(head, prompt_type, temperature, &mut rng)
    }

    pub fn sample_with<R: Rng>(
        &self,
        head: usize,
        prompt_type: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(Error::argument(format!("temperature {temperature} must be >= 0")));
        }
        let mut tokens = vec![0usize; self.shape.seq_len];
        self.check_input(head, prompt_type, &tokens)?;
        for t in 0..self.shape.seq_len {
            let psi = feature(&self.shape, prompt_type, &tokens, t);
            let (_, logits) = self.logits(head, &psi);
            tokens[t] = if temperature == 0.0 {
                argmax(&logits)
            } else {
                let probs = log_softmax(&(logits / temperature)).mapv(f64::exp);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            };
        }
        Ok(tokens)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            vocab_size: self.shape.vocab_size,
            seq_len: self.shape.seq_len,
            prompt_types: self.shape.prompt_types,
            embed_dim: self.shape.embed_dim,
            num_heads: self.shape.num_heads,
            num_objectives: None,
            backbone: self.backbone.iter().copied().collect(),
            heads: self.heads.iter().map(|h| h.iter().copied().collect()).collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::domain(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                ck.format
            )));
        }
        let shape = PolicyShape {
            vocab_size: ck.vocab_size,
            seq_len: ck.seq_len,
            prompt_types: ck.prompt_types,
            embed_dim: ck.embed_dim,
            num_heads: ck.num_heads,
        };
        shape.validate()?;
        let backbone = Array2::from_shape_vec((shape.embed_dim, shape.feature_dim()), ck.backbone)
            .map_err(|e| Error::domain(format!("backbone: {e}")))?;
        let heads = ck
            .heads
            .into_iter()
            .map(|h| {
                Array2::from_shape_vec((shape.vocab_size, shape.embed_dim), h)
                    .map_err(|e| Error::domain(format!("head: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(shape, backbone, heads)
    }

    pub fn save_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load_json<R: std::io::Read>(r: R) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_reader(r)?)
    }
}

/// Serialized policy: dimensions plus row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub prompt_types: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Objectives the policy was trained on, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_objectives: Option<usize>,
    pub backbone: Vec<f64>,
    pub heads: Vec<Vec<f64>>,
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(ndarray::Axis(1));
    let b2 = b.view().insert_axis(ndarray::Axis(0));
    a2.dot(&b2)
}

fn argmax(x: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
