//! Reward-weighted logliks and the composite training objectives.
//!
//! For head `k` and objective `j`, the weighted loglik is the mean over pairs of
//! `r_j(x, y) * max(log p(y | x; k), -L)`. It is mapped into `[0, 1]` with scale
//! `z`, and the `K x J` matrix of normalized values is either fed to the exact
//! hypervolume (HAM) or linearly scalarized one head at a time (SCA).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hypervolume::{exact_hypervolume, hv_gradient, PointSet};
use crate::policy::{Dataset, MultiHeadPolicy, PolicyGrad};

/// Tolerance on the sum of scalarization weights.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub num_objectives: usize,
    pub num_policies: usize,
    /// Normalization scale `z > 0`.
    pub z: f64,
    /// Per-pair loglik floor `L > 0`; each `log p` is clamped at `-L`.
    pub loglik_floor: f64,
    pub batch_size: usize,
    pub delta: f64,
}

impl ObjectiveConfig {
    /// Defaults for a dataset: `L = 2 T ln V`, `z = L`, `B = min(8, n)`, `delta = 0.05`.
    pub fn for_dataset(ds: &Dataset, num_policies: usize) -> Self {
        let floor = default_loglik_floor(ds.seq_len(), ds.vocab_size());
        Self {
            num_objectives: ds.num_objectives(),
            num_policies,
            z: floor,
            loglik_floor: floor,
            batch_size: 8.min(ds.len()),
            delta: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_objectives == 0 {
            problems.push("J must be at least 1".to_string());
        }
        if self.num_policies == 0 {
            problems.push("K must be at least 1".to_string());
        }
        if !(self.z.is_finite() && self.z > 0.0) {
            problems.push(format!("z = {} must be positive", self.z));
        }
        if !(self.loglik_floor.is_finite() && self.loglik_floor > 0.0) {
            problems.push(format!("L = {} must be positive", self.loglik_floor));
        }
        if self.batch_size == 0 {
            problems.push("batch size must be at least 1".to_string());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            problems.push(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    /// Whether the mini-batch concentration guarantee applies (`z >= L`).
    pub fn concentration_holds(&self) -> bool {
        self.z >= self.loglik_floor
    }

    fn check_against(&self, policy: &MultiHeadPolicy, ds: &Dataset) -> Result<()> {
        self.validate()?;
        if ds.num_objectives() != self.num_objectives {
            return Err(Error::DimensionMismatch {
                expected: self.num_objectives,
                found: ds.num_objectives(),
            });
        }
        if policy.num_heads() != self.num_policies {
            return Err(Error::DimensionMismatch {
                expected: self.num_policies,
                found: policy.num_heads(),
            });
        }
        if policy.shape().vocab_size != ds.vocab_size() || policy.shape().seq_len != ds.seq_len() {
            return Err(Error::config("policy and dataset disagree on vocabulary or length"));
        }
        Ok(())
    }
}

/// `2 T ln V`: twice the negative loglik of a uniform policy.
pub fn default_loglik_floor(seq_len: usize, vocab_size: usize) -> f64 {
    2.0 * seq_len as f64 * (vocab_size.max(2) as f64).ln()
}

/// Indices of the pairs that make up one evaluation of the objective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    /// Every pair once, in dataset order.
    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    /// `size` pairs drawn uniformly with replacement.
    pub fn with_replacement<R: Rng>(n: usize, size: usize, rng: &mut R) -> Result<Self> {
        if size == 0 {
            return Err(Error::argument("batch size must be at least 1"));
        }
        if n == 0 {
            return Err(Error::argument("cannot draw a batch from an empty dataset"));
        }
        Ok(Self {
            indices: (0..size).map(|_| rng.random_range(0..n)).collect(),
        })
    }

    pub fn seeded(n: usize, size: usize, seed: u64) -> Result<Self> {
        Self::with_replacement(n, size, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_indices(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `K x J` matrix of normalized objective values; row `k` is head `k`'s point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix {
    rows: Vec<Vec<f64>>,
}

impl ValueMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        // validates shape and range
        PointSet::from_rows(&rows)?;
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.rows[k][j]
    }

    pub fn to_point_set(&self) -> PointSet {
        PointSet::from_rows(&self.rows).expect("value matrix rows are valid points")
    }

    /// `K` rows by `J` columns, headed `dim0,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_point_set().write_csv(w)
    }
}

/// `(value + z) / z`, clipped into `[0, 1]`.
pub fn normalize(value: f64, z: f64) -> Result<f64> {
    if z.is_nan() || z <= 0.0 || z.is_infinite() {
        return Err(Error::argument(format!("normalization scale z = {z} must be positive")));
    }
    Ok(((value + z) / z).clamp(0.0, 1.0))
}

/// Derivative of [`normalize`] with respect to `value`: `1/z` on the linear
/// piece, zero where clipped.
fn normalize_slope(value: f64, z: f64) -> f64 {
    let raw = (value + z) / z;
    if raw > 0.0 && raw <= 1.0 {
        1.0 / z
    } else {
        0.0
    }
}

/// `(1/n) sum_i weights_i * values_i`, accumulated in order.
pub fn reward_weighted_mean(weights: &[f64], values: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::argument("weighted mean over no pairs"));
    }
    if weights.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: values.len(),
        });
    }
    let sum: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    Ok(sum / weights.len() as f64)
}

fn floored_logliks(
    policy: &MultiHeadPolicy,
    head: usize,
    ds: &Dataset,
    batch: &Batch,
    floor: f64,
) -> Result<Vec<f64>> {
    batch
        .indices
        .iter()
        .map(|&i| {
            let r = ds
                .records()
                .get(i)
                .ok_or_else(|| Error::argument(format!("batch index {i} out of range")))?;
            Ok(policy.log_prob(head, r.prompt_type, &r.tokens)?.max(-floor))
        })
        .collect()
}

/// Unnormalized weighted logliks of one head for every objective.
fn head_weighted_logliks(
    policy: &MultiHeadPolicy,
    head: usize,
    ds: &Dataset,
    batch: &Batch,
    floor: f64,
) -> Result<Vec<f64>> {
    let lls = floored_logliks(policy, head, ds, batch, floor)?;
    (0..ds.num_objectives())
        .map(|j| {
            let w: Vec<f64> = batch.indices.iter().map(|&i| ds.records()[i].rewards[j]).collect();
            reward_weighted_mean(&w, &lls)
        })
        .collect()
}

/// Weighted loglik of head `k` for objective `j` over the batch.
pub fn minibatch_loglik(
    policy: &MultiHeadPolicy,
    head: usize,
    ds: &Dataset,
    objective: usize,
    batch: &Batch,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    if objective >= ds.num_objectives() {
        return Err(Error::argument(format!("objective {objective} out of range")));
    }
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    Ok(head_weighted_logliks(policy, head, ds, batch, cfg.loglik_floor)?[objective])
}

/// Weighted loglik over the whole dataset. Bit-identical to
/// [`minibatch_loglik`] with [`Batch::full`].
pub fn weighted_loglik(
    policy: &MultiHeadPolicy,
    head: usize,
    ds: &Dataset,
    objective: usize,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::argument("empty dataset"));
    }
    minibatch_loglik(policy, head, ds, objective, &Batch::full(ds.len()), cfg)
}

/// Unnormalized `K x J` weighted logliks.
pub fn raw_values(policy: &MultiHeadPolicy, ds: &Dataset, batch: &Batch, cfg: &ObjectiveConfig) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    (0..policy.num_heads())
        .map(|k| head_weighted_logliks(policy, k, ds, batch, cfg.loglik_floor))
        .collect()
}

pub fn value_matrix(policy: &MultiHeadPolicy, ds: &Dataset, batch: &Batch, cfg: &ObjectiveConfig) -> Result<ValueMatrix> {
    cfg.check_against(policy, ds)?;
    let raw = raw_values(policy, ds, batch, cfg)?;
    normalized(&raw, cfg.z)
}

fn normalized(raw: &[Vec<f64>], z: f64) -> Result<ValueMatrix> {
    let rows = raw
        .iter()
        .map(|row| row.iter().map(|&v| normalize(v, z)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    ValueMatrix::new(rows)
}

/// Hypervolume of the heads' normalized value points.
pub fn ham_value(
    policy: &MultiHeadPolicy,
    ds: &Dataset,
    batch: &Batch,
    cfg: &ObjectiveConfig,
) -> Result<(f64, ValueMatrix)> {
    let m = value_matrix(policy, ds, batch, cfg)?;
    let v = exact_hypervolume(&m.to_point_set())?;
    Ok((v, m))
}

/// Objective value, the value matrix it came from, and the parameter gradient.
#[derive(Debug, Clone)]
pub struct ObjectiveStep {
    pub value: f64,
    pub matrix: ValueMatrix,
    pub grad: PolicyGrad,
}

/// Backpropagates per-cell sensitivities `d objective / d vbar_kj` through the
/// normalization and the floored logliks.
fn backprop(
    policy: &MultiHeadPolicy,
    ds: &Dataset,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    raw: &[Vec<f64>],
    sens: &[Vec<f64>],
    heads: impl Iterator<Item = usize>,
) -> Result<PolicyGrad> {
    let mut grad = PolicyGrad::zeros(policy.shape());
    let b = batch.len() as f64;
    for k in heads {
        let coef: Vec<f64> = sens[k]
            .iter()
            .zip(&raw[k])
            .map(|(s, &v)| s * normalize_slope(v, cfg.z))
            .collect();
        if coef.iter().all(|&c| c == 0.0) {
            continue;
        }
        for &i in batch.indices() {
            let r = &ds.records()[i];
            let scale: f64 = coef.iter().zip(&r.rewards).map(|(c, rw)| c * rw).sum::<f64>() / b;
            if scale == 0.0 {
                continue;
            }
            if policy.log_prob(k, r.prompt_type, &r.tokens)? < -cfg.loglik_floor {
                continue; // floored: flat in the parameters
            }
            policy.accumulate_log_prob_grad(k, r.prompt_type, &r.tokens, scale, &mut grad)?;
        }
    }
    Ok(grad)
}

/// HAM value and its gradient with respect to the backbone and every head.
///
/// The hypervolume gradient per cell is scaled by `1/z` where the normalization
/// is unclipped, then pushed through each head's batch logliks. Each head only
/// receives gradient through its own row; the backbone through all rows.
pub fn ham_grad(policy: &MultiHeadPolicy, ds: &Dataset, batch: &Batch, cfg: &ObjectiveConfig) -> Result<ObjectiveStep> {
    cfg.check_against(policy, ds)?;
    let raw = raw_values(policy, ds, batch, cfg)?;
    let matrix = normalized(&raw, cfg.z)?;
    let ps = matrix.to_point_set();
    let value = exact_hypervolume(&ps)?;
    let hv = hv_gradient(&ps)?;
    let grad = backprop(policy, ds, batch, cfg, &raw, hv.rows(), 0..policy.num_heads())?;
    Ok(ObjectiveStep { value, matrix, grad })
}

/// Checks that `w` has `J` nonnegative entries summing to one.
pub fn check_simplex(w: &[f64], num_objectives: usize) -> Result<()> {
    if w.len() != num_objectives {
        return Err(Error::DimensionMismatch {
            expected: num_objectives,
            found: w.len(),
        });
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::argument(format!("weights {w:?} must be nonnegative")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::argument(format!("weights {w:?} sum to {sum}, not 1")));
    }
    Ok(())
}

/// `sum_j w_j * vbar_j` for one row of normalized values.
pub fn scalarize(values: &[f64], w: &[f64]) -> Result<f64> {
    check_simplex(w, values.len())?;
    Ok(values.iter().zip(w).map(|(v, wj)| v * wj).sum())
}

/// Linear scalarization of head `k`'s normalized values.
pub fn sca_value(
    policy: &MultiHeadPolicy,
    head: usize,
    ds: &Dataset,
    batch: &Batch,
    w: &[f64],
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    check_simplex(w, ds.num_objectives())?;
    let raw = head_weighted_logliks(policy, head, ds, batch, cfg.loglik_floor)?;
    let row = raw.iter().map(|&v| normalize(v, cfg.z)).collect::<Result<Vec<_>>>()?;
    scalarize(&row, w)
}

/// SCA value of head `k` and its gradient. Only the backbone and head `k` move.
pub fn sca_grad(
    policy: &MultiHeadPolicy,
    head: usize,
    ds: &Dataset,
    batch: &Batch,
    w: &[f64],
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveStep> {
    check_simplex(w, ds.num_objectives())?;
    cfg.check_against(policy, ds)?;
    if head >= policy.num_heads() {
        return Err(Error::argument(format!("head {head} out of range")));
    }
    let raw = raw_values(policy, ds, batch, cfg)?;
    let matrix = normalized(&raw, cfg.z)?;
    let value = scalarize(matrix.row(head), w)?;
    let mut sens = vec![vec![0.0; w.len()]; policy.num_heads()];
    sens[head] = w.to_vec();
    let grad = backprop(policy, ds, batch, cfg, &raw, &sens, std::iter::once(head))?;
    Ok(ObjectiveStep { value, matrix, grad })
}
