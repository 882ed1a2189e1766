//! Adam and the HAM / SCA training loops.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{
    check_simplex, ham_grad, ham_value, sca_grad, sca_value, Batch, ObjectiveConfig, ObjectiveStep,
    ValueMatrix,
};
use crate::policy::{Dataset, MultiHeadPolicy, PolicyShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam, stepping uphill.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `params += lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                found: params.len(),
            });
        }
        if grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                found: grads.len(),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                iteration: self.step + 1,
                index,
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p += lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// How each iteration's objective is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// `B` pairs with replacement, `B` from the objective config.
    MiniBatch,
    /// The whole dataset every step.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub iters: usize,
    pub adam: AdamConfig,
    pub batch_mode: BatchMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            iters: 2000,
            adam: AdamConfig::default(),
            batch_mode: BatchMode::MiniBatch,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub value: f64,
    /// Normalized values per head at this iteration, before the update.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterRecord>,
    /// Full-data objective before the first and after the last update.
    pub initial_full_value: f64,
    pub final_full_value: f64,
    pub initial_full_matrix: ValueMatrix,
    pub final_full_matrix: ValueMatrix,
}

impl TrainReport {
    /// One row per iteration, head and objective: `iter,value,head,dim,normalized_value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iter", "value", "head", "dim", "normalized_value"])?;
        for r in &self.records {
            for (k, row) in r.rows.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    wtr.write_record([
                        r.iter.to_string(),
                        r.value.to_string(),
                        k.to_string(),
                        j.to_string(),
                        x.to_string(),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn shape_for(ds: &Dataset, embed_dim: usize, num_heads: usize) -> PolicyShape {
    PolicyShape {
        vocab_size: ds.vocab_size(),
        seq_len: ds.seq_len(),
        prompt_types: ds.prompt_types(),
        embed_dim,
        num_heads,
    }
}

fn run_loop<F>(
    ds: &Dataset,
    obj: &ObjectiveConfig,
    train: &TrainConfig,
    policy: &mut MultiHeadPolicy,
    mut objective: F,
) -> Result<Vec<IterRecord>>
where
    F: FnMut(&MultiHeadPolicy, &Batch) -> Result<ObjectiveStep>,
{
    if train.iters == 0 {
        return Err(Error::config("iters must be at least 1"));
    }
    if train.batch_mode == BatchMode::MiniBatch && obj.batch_size > ds.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds dataset size {}",
            obj.batch_size,
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    rng.set_stream(1);
    let full = Batch::full(ds.len());
    let mut adam = AdamState::new(train.adam, policy.param_count());
    let mut params = policy.to_flat();
    let mut records = Vec::with_capacity(train.iters);
    for iter in 1..=train.iters {
        let sampled;
        let batch = match train.batch_mode {
            BatchMode::Full => &full,
            BatchMode::MiniBatch => {
                sampled = Batch::with_replacement(ds.len(), obj.batch_size, &mut rng)?;
                &sampled
            }
        };
        let step = objective(policy, batch)?;
        records.push(IterRecord {
            iter,
            value: step.value,
            rows: step.matrix.rows().to_vec(),
        });
        adam.step(&mut params, &step.grad.to_flat())?;
        policy.load_flat(&params)?;
    }
    Ok(records)
}

/// Trains `obj.num_policies` heads on a shared backbone by maximizing the
/// hypervolume of their normalized weighted logliks.
pub fn train_ham(ds: &Dataset, obj: &ObjectiveConfig, train: &TrainConfig) -> Result<(MultiHeadPolicy, TrainReport)> {
    obj.validate()?;
    let mut policy = MultiHeadPolicy::init(shape_for(ds, train.embed_dim, obj.num_policies), train.seed)?;
    let full = Batch::full(ds.len());
    let (initial_full_value, initial_full_matrix) = ham_value(&policy, ds, &full, obj)?;
    let records = run_loop(ds, obj, train, &mut policy, |p, b| ham_grad(p, ds, b, obj))?;
    let (final_full_value, final_full_matrix) = ham_value(&policy, ds, &full, obj)?;
    Ok((
        policy,
        TrainReport {
            records,
            initial_full_value,
            final_full_value,
            initial_full_matrix,
            final_full_matrix,
        },
    ))
}

/// Trains a single-head policy on the linear scalarization with weights `w`.
pub fn train_sca(
    ds: &Dataset,
    obj: &ObjectiveConfig,
    train: &TrainConfig,
    w: &[f64],
) -> Result<(MultiHeadPolicy, TrainReport)> {
    check_simplex(w, ds.num_objectives())?;
    let obj = ObjectiveConfig {
        num_policies: 1,
        ..*obj
    };
    obj.validate()?;
    let mut policy = MultiHeadPolicy::init(shape_for(ds, train.embed_dim, 1), train.seed)?;
    let full = Batch::full(ds.len());
    let full_value = |p: &MultiHeadPolicy| -> Result<(f64, ValueMatrix)> {
        let v = sca_value(p, 0, ds, &full, w, &obj)?;
        let (_, m) = ham_value(p, ds, &full, &obj)?;
        Ok((v, m))
    };
    let (initial_full_value, initial_full_matrix) = full_value(&policy)?;
    let records = run_loop(ds, &obj, train, &mut policy, |p, b| sca_grad(p, 0, ds, b, w, &obj))?;
    let (final_full_value, final_full_matrix) = full_value(&policy)?;
    Ok((
        policy,
        TrainReport {
            records,
            initial_full_value,
            final_full_value,
            initial_full_matrix,
            final_full_matrix,
        },
    ))
}
