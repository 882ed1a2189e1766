//! Pareto fronts over reward vectors and the grouped evaluation protocol.
//!
//! All objectives are maximized. `p` dominates `q` when `p >= q` in every
//! coordinate and `p != q`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::{Dataset, MultiHeadPolicy, TokenClassReward};

/// Mean rewards of one policy on one prompt group.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    pub values: Vec<f64>,
    pub group_id: usize,
    pub policy_id: usize,
}

impl RewardVector {
    pub fn new(values: Vec<f64>, group_id: usize, policy_id: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::argument("reward vector needs at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("reward values must be finite"));
        }
        Ok(Self {
            values,
            group_id,
            policy_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn dominates(p: &[f64], q: &[f64]) -> Result<bool> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut strictly = false;
    for (a, b) in p.iter().zip(q) {
        if a < b {
            return Ok(false);
        }
        if a > b {
            strictly = true;
        }
    }
    Ok(strictly)
}

/// The non-dominated points of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    pub method: String,
    pub points: Vec<RewardVector>,
}

impl ParetoFront {
    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn contains(&self, v: &RewardVector) -> bool {
        self.points.iter().any(|p| p == v)
    }
}

/// Maximal non-dominated subset, in input order. Identical vectors collapse to
/// their first occurrence. Quadratic pairwise filter.
pub fn pareto_front(points: &[RewardVector], method: &str) -> Result<ParetoFront> {
    let first = points
        .first()
        .ok_or_else(|| Error::argument("pareto front of no points"))?;
    let dim = first.dim();
    if let Some(bad) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let mut kept = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            if dominates(&q.values, &p.values)? || (j < i && q.values == p.values) {
                continue 'outer;
            }
        }
        kept.push(p.clone());
    }
    Ok(ParetoFront {
        method: method.to_string(),
        points: kept,
    })
}

/// True when every point of `b` is dominated by some point of `a`.
pub fn front_dominates(a: &ParetoFront, b: &ParetoFront) -> Result<bool> {
    if let (Some(pa), Some(pb)) = (a.points.first(), b.points.first()) {
        if pa.dim() != pb.dim() {
            return Err(Error::DimensionMismatch {
                expected: pa.dim(),
                found: pb.dim(),
            });
        }
    }
    for q in &b.points {
        let mut covered = false;
        for p in &a.points {
            if dominates(&p.values, &q.values)? {
                covered = true;
                break;
            }
        }
        if !covered {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Responses sampled per prompt.
    pub samples_per_prompt: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Evaluate only the first this-many prompts of each group.
    pub max_prompts_per_group: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_prompt: 4,
            temperature: 1.0,
            seed: 0,
            max_prompts_per_group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedGroup {
    pub policy_id: usize,
    pub group_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub vectors: Vec<RewardVector>,
    pub skipped: Vec<SkippedGroup>,
}

/// Samples responses from every head of every policy on every prompt group and
/// averages the token-class rewards, one [`RewardVector`] per (head, group).
///
/// Heads are numbered consecutively across `policies` to form `policy_id`. Each
/// (head, group) pair draws from its own seeded stream.
pub fn eval_policies(policies: &[MultiHeadPolicy], ds: &Dataset, cfg: &EvalConfig) -> Result<EvalOutput> {
    if ds.is_empty() {
        return Err(Error::argument("evaluation dataset is empty"));
    }
    if cfg.samples_per_prompt == 0 {
        return Err(Error::argument("samples per prompt must be at least 1"));
    }
    let reward = TokenClassReward::new(ds.vocab_size(), ds.num_objectives())?;
    let groups = ds.prompt_types();
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (i, r) in ds.records().iter().enumerate() {
        by_group[r.prompt_type].push(i);
    }
    if let Some(cap) = cfg.max_prompts_per_group {
        by_group.iter_mut().for_each(|g| g.truncate(cap));
    }

    let mut vectors = Vec::new();
    let mut skipped = Vec::new();
    let mut policy_id = 0usize;
    for policy in policies {
        let s = policy.shape();
        if s.vocab_size != ds.vocab_size() || s.seq_len != ds.seq_len() || s.prompt_types != groups {
            return Err(Error::config(
                "policy dimensions do not match the evaluation dataset",
            ));
        }
        for head in 0..policy.num_heads() {
            for (g, prompts) in by_group.iter().enumerate() {
                if prompts.is_empty() {
                    skipped.push(SkippedGroup {
                        policy_id,
                        group_id: g,
                        reason: format!("group {g} has no prompts"),
                    });
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream((policy_id * groups + g) as u64);
                let mut sums = vec![0.0; ds.num_objectives()];
                let mut count = 0usize;
                for &i in prompts {
                    let prompt_type = ds.records()[i].prompt_type;
                    for _ in 0..cfg.samples_per_prompt {
                        let y = policy.sample_with(head, prompt_type, cfg.temperature, &mut rng)?;
                        for (acc, r) in sums.iter_mut().zip(reward.rewards(&y)) {
                            *acc += r;
                        }
                        count += 1;
                    }
                }
                let means = sums.into_iter().map(|x| x / count as f64).collect();
                vectors.push(RewardVector::new(means, g, policy_id)?);
            }
            policy_id += 1;
        }
    }
    Ok(EvalOutput { vectors, skipped })
}

/// Evaluated points of one method together with its front.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: String,
    pub vectors: Vec<RewardVector>,
    pub front: ParetoFront,
}

impl MethodResult {
    pub fn new(method: &str, vectors: Vec<RewardVector>) -> Result<Self> {
        let front = pareto_front(&vectors, method)?;
        Ok(Self {
            method: method.to_string(),
            vectors,
            front,
        })
    }
}

/// `method,policy_id,group_id,r0,...,r{J-1},on_front`.
pub fn write_fronts_csv<W: Write>(w: W, results: &[MethodResult]) -> Result<()> {
    let dim = results
        .iter()
        .flat_map(|r| r.vectors.first())
        .map(RewardVector::dim)
        .next()
        .unwrap_or(0);
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["method".to_string(), "policy_id".into(), "group_id".into()];
    header.extend((0..dim).map(|j| format!("r{j}")));
    header.push("on_front".into());
    wtr.write_record(&header)?;
    for r in results {
        for v in &r.vectors {
            let mut row = vec![r.method.clone(), v.policy_id.to_string(), v.group_id.to_string()];
            row.extend(v.values.iter().map(|x| x.to_string()));
            row.push(r.front.contains(v).to_string());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyShape, Record};
    use ndarray::Array2;

    fn rv(values: &[f64]) -> RewardVector {
        RewardVector::new(values.to_vec(), 0, 0).unwrap()
    }

    fn front(points: &[&[f64]]) -> ParetoFront {
        let pts: Vec<_> = points.iter().map(|p| rv(p)).collect();
        pareto_front(&pts, "m").unwrap()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[0.5, 0.5], &[0.4, 0.4]).unwrap());
        assert!(!dominates(&[0.5, 0.4], &[0.4, 0.5]).unwrap());
        assert!(!dominates(&[0.5, 0.4], &[0.5, 0.4]).unwrap());
        assert!(dominates(&[0.5, 0.4], &[0.5, 0.3]).unwrap());
        assert!(dominates(&[0.5], &[0.5, 0.3]).is_err());
    }

    #[test]
    fn front_examples() {
        assert_eq!(front(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]).points.len(), 3);
        let f = front(&[&[1.0, 1.0], &[0.5, 0.5]]);
        assert_eq!(f.points, vec![rv(&[1.0, 1.0])]);
        let f = front(&[&[0.3, 0.7], &[0.3, 0.7], &[0.1, 0.1]]);
        assert_eq!(f.points.len(), 1);
        assert!(pareto_front(&[], "m").is_err());
    }

    #[test]
    fn front_domination_examples() {
        let a = front(&[&[1.0, 1.0]]);
        let b = front(&[&[0.5, 0.5], &[0.2, 0.8]]);
        assert!(front_dominates(&a, &b).unwrap());
        assert!(!front_dominates(&b, &a).unwrap());
        assert!(!front_dominates(&front(&[&[1.0, 0.0]]), &front(&[&[0.0, 1.0]])).unwrap());
        let shared_a = front(&[&[0.6, 0.6], &[0.9, 0.1]]);
        let shared_b = front(&[&[0.6, 0.6], &[0.1, 0.2]]);
        assert!(!front_dominates(&shared_a, &shared_b).unwrap());
        assert!(!front_dominates(&shared_b, &shared_a).unwrap());
    }

    fn saturated_policy() -> MultiHeadPolicy {
        // head prefers tokens 0..4 (class 0) by a wide margin
        let shape = PolicyShape {
            vocab_size: 8,
            seq_len: 6,
            prompt_types: 1,
            embed_dim: 1,
            num_heads: 1,
        };
        let backbone = Array2::from_elem((1, shape.feature_dim()), 1.0);
        let head = Array2::from_shape_fn((8, 1), |(v, _)| if v < 4 { 40.0 } else { -40.0 });
        MultiHeadPolicy::from_parts(shape, backbone, vec![head]).unwrap()
    }

    fn eval_set(groups: usize, per_group: usize) -> Dataset {
        let records = (0..groups * per_group)
            .map(|i| Record {
                prompt_id: i,
                prompt_type: i % groups,
                tokens: vec![0; 6],
                rewards: vec![1.0, 0.0],
            })
            .collect();
        Dataset::new(records, 8, groups).unwrap()
    }

    #[test]
    fn saturated_policy_scores_one_zero() {
        let out = eval_policies(&[saturated_policy()], &eval_set(1, 10), &EvalConfig::default()).unwrap();
        assert_eq!(out.vectors.len(), 1);
        assert!((out.vectors[0].values[0] - 1.0).abs() < 1e-9);
        assert!(out.vectors[0].values[1].abs() < 1e-9);
    }

    #[test]
    fn counts_vectors_and_skips_empty_groups() {
        let shape = PolicyShape {
            vocab_size: 8,
            seq_len: 6,
            prompt_types: 3,
            embed_dim: 2,
            num_heads: 2,
        };
        let p = MultiHeadPolicy::init(shape, 1).unwrap();
        let ds = eval_set(3, 4);
        let out = eval_policies(std::slice::from_ref(&p), &ds, &EvalConfig::default()).unwrap();
        assert_eq!(out.vectors.len(), 6);
        assert!(out.skipped.is_empty());

        // only groups 0 and 2 have prompts
        let records = (0..4)
            .map(|i| Record {
                prompt_id: i,
                prompt_type: if i % 2 == 0 { 0 } else { 2 },
                tokens: vec![0; 6],
                rewards: vec![1.0, 0.0],
            })
            .collect();
        let sparse = Dataset::new(records, 8, 3).unwrap();
        let out = eval_policies(&[p], &sparse, &EvalConfig::default()).unwrap();
        assert_eq!(out.vectors.len(), 4);
        assert_eq!(out.skipped.len(), 2);
        assert!(out.skipped.iter().all(|s| s.group_id == 1));
    }

    #[test]
    fn identical_heads_score_alike() {
        let shape = PolicyShape {
            vocab_size: 8,
            seq_len: 6,
            prompt_types: 1,
            embed_dim: 2,
            num_heads: 1,
        };
        let p = MultiHeadPolicy::init(shape, 4).unwrap();
        let ds = eval_set(1, 200);
        let cfg = EvalConfig {
            samples_per_prompt: 10,
            ..EvalConfig::default()
        };
        let out = eval_policies(&[p.clone(), p], &ds, &cfg).unwrap();
        let d: f64 = out.vectors[0]
            .values
            .iter()
            .zip(&out.vectors[1].values)
            .map(|(a, b)| (a - b).abs())
            .sum();
        // 2000 sequences per head: sampling noise well under 0.05
        assert!(d < 0.05, "{d}");
    }

    #[test]
    fn fronts_csv_layout() {
        let r = MethodResult::new("ham", vec![rv(&[0.2, 0.8]), rv(&[0.1, 0.1])]).unwrap();
        let mut buf = Vec::new();
        write_fronts_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "method,policy_id,group_id,r0,r1,on_front\nham,0,0,0.2,0.8,true\nham,0,0,0.1,0.1,false\n"
        );
    }
}
