//! Command implementations behind the `hvmax` binary.
//!
//! Each command reads a [`RunConfig`] (JSON, every field optional), writes its
//! artifacts to disk and returns a summary so the binary only handles argument
//! parsing, printing and exit codes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypervolume::{exact_hypervolume, mc_hypervolume, scalarized_hypervolume_with_error, PointSet};
use crate::objective::{check_simplex, default_loglik_floor, ham_value, Batch, ObjectiveConfig};
use crate::optim::{train_ham, train_sca, AdamConfig, BatchMode, TrainConfig};
use crate::pareto::{eval_policies, front_dominates, write_fronts_csv, EvalConfig, MethodResult, SkippedGroup};
use crate::policy::{gen_dataset, Checkpoint, Dataset, DatasetConfig, MultiHeadPolicy, PolicyShape};
use crate::svg::render_fronts;

/// The SCA weight grid used when none is configured.
pub fn default_sca_weights() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 1.0],
        vec![0.3, 0.7],
        vec![0.5, 0.5],
        vec![0.7, 0.3],
        vec![1.0, 0.0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ham,
    Sca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub prompt_types: usize,
    pub num_objectives: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: 2000,
            vocab_size: 8,
            seq_len: 6,
            prompt_types: 2,
            num_objectives: 2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub num_heads: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            num_heads: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Defaults to the loglik floor.
    pub z: Option<f64>,
    /// Defaults to `2 T ln V`.
    pub loglik_floor: Option<f64>,
    pub batch_size: usize,
    pub delta: f64,
    pub batch_mode: BatchMode,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            z: None,
            loglik_floor: None,
            batch_size: 8,
            delta: 0.05,
            batch_mode: BatchMode::MiniBatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iters: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            iters: 2000,
        }
    }
}

/// Everything a run needs; loaded from JSON and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    pub optim: OptimSection,
    pub method: Method,
    pub sca_weights: Vec<Vec<f64>>,
    pub seed: u64,
    pub dataset_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            model: ModelSection::default(),
            objective: ObjectiveSection::default(),
            optim: OptimSection::default(),
            method: Method::Ham,
            sca_weights: default_sca_weights(),
            seed: 0,
            dataset_path: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn loglik_floor(&self) -> f64 {
        self.objective
            .loglik_floor
            .unwrap_or_else(|| default_loglik_floor(self.data.seq_len, self.data.vocab_size))
    }

    pub fn z(&self) -> f64 {
        self.objective.z.unwrap_or_else(|| self.loglik_floor())
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let d = &self.data;
        for (name, v) in [
            ("data.n", d.n),
            ("data.vocab_size", d.vocab_size),
            ("data.seq_len", d.seq_len),
            ("data.prompt_types", d.prompt_types),
            ("data.num_objectives", d.num_objectives),
            ("model.embed_dim", self.model.embed_dim),
            ("model.num_heads", self.model.num_heads),
            ("objective.batch_size", self.objective.batch_size),
            ("optim.iters", self.optim.iters),
        ] {
            if v == 0 {
                p.push(format!("{name} must be at least 1"));
            }
        }
        if d.vocab_size < d.num_objectives {
            p.push(format!(
                "data.vocab_size {} is smaller than data.num_objectives {}",
                d.vocab_size, d.num_objectives
            ));
        }
        if self.objective.batch_size > d.n {
            p.push(format!(
                "objective.batch_size {} exceeds data.n {}",
                self.objective.batch_size, d.n
            ));
        }
        if !positive(self.z()) {
            p.push(format!("objective.z = {} must be positive", self.z()));
        }
        if !positive(self.loglik_floor()) {
            p.push(format!("objective.loglik_floor = {} must be positive", self.loglik_floor()));
        }
        if !(self.objective.delta > 0.0 && self.objective.delta < 1.0) {
            p.push(format!("objective.delta = {} must lie in (0, 1)", self.objective.delta));
        }
        if !positive(self.optim.lr)
            || !(0.0..1.0).contains(&self.optim.beta1)
            || !(0.0..1.0).contains(&self.optim.beta2)
            || !positive(self.optim.eps)
        {
            p.push("optim: need lr > 0, beta1 and beta2 in [0, 1), eps > 0".to_string());
        }
        if self.method == Method::Sca {
            if self.sca_weights.is_empty() {
                p.push("sca_weights is empty".to_string());
            }
            for (i, w) in self.sca_weights.iter().enumerate() {
                if let Err(e) = check_simplex(w, d.num_objectives) {
                    p.push(format!("sca_weights[{i}]: {e}"));
                }
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("\n  ")))
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            n: self.data.n,
            vocab_size: self.data.vocab_size,
            seq_len: self.data.seq_len,
            prompt_types: self.data.prompt_types,
            num_objectives: self.data.num_objectives,
            seed: self.data.seed,
        }
    }

    pub fn objective_config(&self, num_policies: usize) -> ObjectiveConfig {
        ObjectiveConfig {
            num_objectives: self.data.num_objectives,
            num_policies,
            z: self.z(),
            loglik_floor: self.loglik_floor(),
            batch_size: self.objective.batch_size,
            delta: self.objective.delta,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            embed_dim: self.model.embed_dim,
            iters: self.optim.iters,
            adam: AdamConfig {
                lr: self.optim.lr,
                beta1: self.optim.beta1,
                beta2: self.optim.beta2,
                eps: self.optim.eps,
            },
            batch_mode: self.objective.batch_mode,
            seed: self.seed,
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Process exit code for an error: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::NonFiniteGradient { .. } => 4,
        Error::DimensionMismatch { .. }
        | Error::Domain(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 3,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path, vocab_size: usize, prompt_types: usize) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Dataset::read_jsonl(BufReader::new(f), vocab_size, prompt_types)
}

pub fn load_policy(path: &Path) -> Result<MultiHeadPolicy> {
    Ok(load_checkpoint(path)?.0)
}

/// The policy and the objective count recorded with it, if any.
pub fn load_checkpoint(path: &Path) -> Result<(MultiHeadPolicy, Option<usize>)> {
    let f = File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(f))?;
    let j = ck.num_objectives;
    Ok((MultiHeadPolicy::from_checkpoint(ck)?, j))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub path: PathBuf,
    pub records: usize,
    pub reward_means: Vec<f64>,
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    let ds = gen_dataset(&cfg.dataset_config())?;
    let mut w = create(out)?;
    ds.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(GenSummary {
        path: out.to_path_buf(),
        records: ds.len(),
        reward_means: ds.reward_means(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub name: String,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub initial_full_value: f64,
    pub final_full_value: f64,
}

/// Trains one HAM policy with `model.num_heads` heads, or one single-head SCA
/// policy per weight vector, writing `<name>.ckpt.json` and `<name>_report.csv`.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out_dir: &Path) -> Result<Vec<TrainRun>> {
    cfg.validate()?;
    let ds = load_dataset(dataset, cfg.data.vocab_size, cfg.data.prompt_types)?;
    if ds.num_objectives() != cfg.data.num_objectives || ds.seq_len() != cfg.data.seq_len {
        return Err(Error::config(format!(
            "dataset has J = {}, T = {} but the config says J = {}, T = {}",
            ds.num_objectives(),
            ds.seq_len(),
            cfg.data.num_objectives,
            cfg.data.seq_len
        )));
    }
    if cfg.objective.batch_size > ds.len() {
        return Err(Error::config(format!(
            "objective.batch_size {} exceeds dataset size {}",
            cfg.objective.batch_size,
            ds.len()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let train = cfg.train_config();
    let jobs: Vec<(String, Option<Vec<f64>>)> = match cfg.method {
        Method::Ham => vec![("ham".to_string(), None)],
        Method::Sca => cfg
            .sca_weights
            .iter()
            .enumerate()
            .map(|(i, w)| (format!("sca_{i}"), Some(w.clone())))
            .collect(),
    };
    let mut runs = Vec::new();
    for (name, w) in jobs {
        let (policy, report) = match &w {
            None => train_ham(&ds, &cfg.objective_config(cfg.model.num_heads), &train)?,
            Some(w) => train_sca(&ds, &cfg.objective_config(1), &train, w)?,
        };
        let checkpoint = out_dir.join(format!("{name}.ckpt.json"));
        let mut ck = policy.to_checkpoint();
        ck.num_objectives = Some(ds.num_objectives());
        let mut f = create(&checkpoint)?;
        serde_json::to_writer(&mut f, &ck)?;
        f.flush()?;
        let report_path = out_dir.join(format!("{name}_report.csv"));
        let mut f = create(&report_path)?;
        report.write_csv(&mut f)?;
        f.flush()?;
        runs.push(TrainRun {
            name,
            checkpoint,
            report: report_path,
            initial_full_value: report.initial_full_value,
            final_full_value: report.final_full_value,
        });
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvOutput {
    pub exact: f64,
    /// `(estimate, std_error)`
    pub mc: Option<(f64, f64)>,
    pub scalarized: Option<(f64, f64)>,
}

pub fn cmd_hv(points: &Path, mc: Option<usize>, scalarized: Option<usize>, seed: u64) -> Result<HvOutput> {
    let f = File::open(points)?;
    let ps = PointSet::read_csv(BufReader::new(f))?;
    Ok(HvOutput {
        exact: exact_hypervolume(&ps)?,
        mc: mc.map(|n| mc_hypervolume(&ps, n, seed)).transpose()?,
        scalarized: scalarized.map(|n| scalarized_hypervolume_with_error(&ps, n, seed)).transpose()?,
    })
}

/// `J K sqrt(ln(J K / delta) / (2 B))`.
pub fn concentration_bound(num_objectives: usize, num_policies: usize, batch_size: usize, delta: f64) -> f64 {
    let jk = (num_objectives * num_policies) as f64;
    jk * ((jk / delta).ln() / (2.0 * batch_size as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub batch_size: usize,
    pub trials: usize,
    pub delta: f64,
    /// `|vol(V) - vol(V_hat)|` per trial.
    pub errors: Vec<f64>,
    pub bound: f64,
    pub violation_rate: f64,
}

impl BoundReport {
    pub fn mean_error(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundOptions {
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    /// Use the whole dataset as the "mini-batch" (then `V_hat == V`).
    pub full_sweep: bool,
}

/// Compares the full-data hypervolume of a fixed random policy against its
/// mini-batch estimate over many independent batches, per batch size.
pub fn verify_bound(ds: &Dataset, cfg: &RunConfig, opts: &BoundOptions) -> Result<Vec<BoundReport>> {
    let k = cfg.model.num_heads;
    let base = cfg.objective_config(k);
    if !base.concentration_holds() {
        return Err(Error::config(format!(
            "z = {} is below the loglik floor L = {}; the mini-batch bound requires z >= L",
            base.z, base.loglik_floor
        )));
    }
    if opts.trials == 0 || opts.batch_sizes.is_empty() {
        return Err(Error::config("need at least one trial and one batch size"));
    }
    let shape = PolicyShape {
        vocab_size: ds.vocab_size(),
        seq_len: ds.seq_len(),
        prompt_types: ds.prompt_types(),
        embed_dim: cfg.model.embed_dim,
        num_heads: k,
    };
    let policy = MultiHeadPolicy::init(shape, cfg.seed)?;
    let full = Batch::full(ds.len());
    let (full_value, _) = ham_value(&policy, ds, &full, &base)?;
    let j = ds.num_objectives();

    let mut reports = Vec::new();
    for &b in &opts.batch_sizes {
        let size = if opts.full_sweep { ds.len() } else { b };
        if size == 0 || size > ds.len() {
            return Err(Error::config(format!("batch size {size} outside [1, {}]", ds.len())));
        }
        let bound = concentration_bound(j, k, size, base.delta);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(size as u64);
        let mut errors = Vec::with_capacity(opts.trials);
        for _ in 0..opts.trials {
            let batch = if opts.full_sweep {
                full.clone()
            } else {
                Batch::with_replacement(ds.len(), size, &mut rng)?
            };
            let (v_hat, _) = ham_value(&policy, ds, &batch, &base)?;
            errors.push((full_value - v_hat).abs());
        }
        let violations = errors.iter().filter(|&&e| e > bound).count();
        reports.push(BoundReport {
            batch_size: size,
            trials: opts.trials,
            delta: base.delta,
            violation_rate: violations as f64 / opts.trials as f64,
            errors,
            bound,
        });
    }
    Ok(reports)
}

/// Runs [`verify_bound`] and writes `<out>` (one summary row per batch size)
/// plus `<out stem>_trials.csv` (one row per trial).
pub fn cmd_verify_bound(ds: &Dataset, cfg: &RunConfig, opts: &BoundOptions, out: &Path) -> Result<Vec<BoundReport>> {
    let reports = verify_bound(ds, cfg, opts)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["batch_size", "trials", "delta", "mean_error", "max_error", "bound", "violation_rate"])?;
    for r in &reports {
        w.write_record([
            r.batch_size.to_string(),
            r.trials.to_string(),
            r.delta.to_string(),
            r.mean_error().to_string(),
            r.max_error().to_string(),
            r.bound.to_string(),
            r.violation_rate.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&sibling(out, "_trials.csv"))?);
    w.write_record(["batch_size", "trial", "error", "bound", "violated"])?;
    for r in &reports {
        for (t, e) in r.errors.iter().enumerate() {
            w.write_record([
                r.batch_size.to_string(),
                t.to_string(),
                e.to_string(),
                r.bound.to_string(),
                (*e > r.bound).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(reports)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// A named method and the checkpoints holding its policies.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub checkpoints: Vec<PathBuf>,
}

impl std::str::FromStr for MethodSpec {
    type Err = Error;

    /// `name=path[,path...]`
    fn from_str(s: &str) -> Result<Self> {
        let (name, paths) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected name=path[,path...], got {s:?}")))?;
        let checkpoints: Vec<PathBuf> = paths.split(',').filter(|p| !p.is_empty()).map(PathBuf::from).collect();
        if name.is_empty() || checkpoints.is_empty() {
            return Err(Error::config(format!("expected name=path[,path...], got {s:?}")));
        }
        Ok(Self {
            name: name.to_string(),
            checkpoints,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominationRow {
    pub a: String,
    pub b: String,
    pub a_dominates_b: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub results: Vec<MethodResult>,
    pub domination: Vec<DominationRow>,
    pub skipped: Vec<(String, SkippedGroup)>,
    pub fronts_csv: PathBuf,
    pub svg: PathBuf,
    pub domination_csv: PathBuf,
    pub means_csv: PathBuf,
}

/// Evaluates every method, extracts fronts, compares all ordered method pairs
/// and writes `<prefix>_fronts.csv`, `<prefix>_fronts.svg`,
/// `<prefix>_domination.csv` and `<prefix>_means.csv`.
pub fn cmd_eval(methods: &[MethodSpec], dataset: &Path, out_prefix: &Path, eval: &EvalConfig) -> Result<EvalSummary> {
    if methods.is_empty() {
        return Err(Error::config("no methods to evaluate"));
    }
    let mut loaded = Vec::new();
    let mut objectives: Option<(usize, &Path)> = None;
    for m in methods {
        let mut policies = Vec::new();
        for path in &m.checkpoints {
            let (policy, j) = load_checkpoint(path)?;
            match (j, objectives) {
                (Some(j), Some((first, at))) if j != first => {
                    return Err(Error::config(format!(
                        "{} was trained on {j} objectives but {} on {first}",
                        path.display(),
                        at.display()
                    )));
                }
                (Some(j), None) => objectives = Some((j, path)),
                _ => {}
            }
            policies.push(policy);
        }
        loaded.push((m.name.clone(), policies));
    }
    let shape: PolicyShape = *loaded[0].1[0].shape();
    for (name, ps) in &loaded {
        for p in ps {
            let s = p.shape();
            if (s.vocab_size, s.seq_len, s.prompt_types) != (shape.vocab_size, shape.seq_len, shape.prompt_types) {
                return Err(Error::config(format!(
                    "checkpoints of {name} disagree with the first checkpoint on V, T or G"
                )));
            }
        }
    }
    let ds = load_dataset(dataset, shape.vocab_size, shape.prompt_types)?;
    if let Some((j, at)) = objectives {
        if j != ds.num_objectives() {
            return Err(Error::config(format!(
                "{} was trained on {j} objectives but the dataset has {}",
                at.display(),
                ds.num_objectives()
            )));
        }
    }

    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (name, policies) in &loaded {
        let out = eval_policies(policies, &ds, eval)?;
        skipped.extend(out.skipped.into_iter().map(|s| (name.clone(), s)));
        results.push(MethodResult::new(name, out.vectors)?);
    }
    let mut domination = Vec::new();
    for a in &results {
        for b in &results {
            if a.method != b.method {
                domination.push(DominationRow {
                    a: a.method.clone(),
                    b: b.method.clone(),
                    a_dominates_b: front_dominates(&a.front, &b.front)?,
                });
            }
        }
    }

    let fronts_csv = prefixed(out_prefix, "_fronts.csv");
    let mut f = create(&fronts_csv)?;
    write_fronts_csv(&mut f, &results)?;
    f.flush()?;

    let svg = prefixed(out_prefix, "_fronts.svg");
    let mut f = create(&svg)?;
    f.write_all(render_fronts(&results, ds.num_objectives()).as_bytes())?;
    f.flush()?;

    let domination_csv = prefixed(out_prefix, "_domination.csv");
    let mut w = csv::Writer::from_writer(create(&domination_csv)?);
    w.write_record(["a", "b", "a_dominates_b"])?;
    for d in &domination {
        w.write_record([d.a.as_str(), d.b.as_str(), &d.a_dominates_b.to_string()])?;
    }
    w.flush()?;

    let means_csv = prefixed(out_prefix, "_means.csv");
    let mut w = csv::Writer::from_writer(create(&means_csv)?);
    let dim = ds.num_objectives();
    let mut header = vec!["method".to_string()];
    header.extend((0..dim).map(|j| format!("r{j}")));
    w.write_record(&header)?;
    for r in &results {
        let mut row = vec![r.method.clone()];
        for j in 0..dim {
            let m = r.vectors.iter().map(|v| v.values[j]).sum::<f64>() / r.vectors.len().max(1) as f64;
            row.push(m.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    Ok(EvalSummary {
        results,
        domination,
        skipped,
        fronts_csv,
        svg,
        domination_csv,
        means_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_problems() {
        let cfg = RunConfig::default();
        assert!(cfg.problems().is_empty());
        assert_eq!(cfg.z(), cfg.loglik_floor());
        assert_eq!(cfg.sca_weights.len(), 5);

        let bad = RunConfig {
            method: Method::Sca,
            sca_weights: vec![vec![0.5, 0.6]],
            data: DataSection {
                vocab_size: 1,
                ..DataSection::default()
            },
            model: ModelSection {
                num_heads: 0,
                ..ModelSection::default()
            },
            ..RunConfig::default()
        };
        // every failure is listed at once
        assert_eq!(bad.problems().len(), 3, "{:?}", bad.problems());
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn partial_json_config() {
        let cfg: RunConfig = serde_json::from_str(r#"{"method":"sca","optim":{"iters":5}}"#).unwrap();
        assert_eq!(cfg.method, Method::Sca);
        assert_eq!(cfg.optim.iters, 5);
        assert_eq!(cfg.optim.lr, 1e-2);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn bound_formula() {
        let b = concentration_bound(2, 2, 64, 0.05);
        assert!((b - 4.0 * ((80.0f64).ln() / 128.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn method_spec_parsing() {
        let m: MethodSpec = "sca=a.json,b.json".parse().unwrap();
        assert_eq!(m.name, "sca");
        assert_eq!(m.checkpoints.len(), 2);
        assert!("noequals".parse::<MethodSpec>().is_err());
        assert!("x=".parse::<MethodSpec>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x")), 2);
        assert_eq!(exit_code(&Error::Parse { line: 1, message: "x".into() }), 3);
        assert_eq!(exit_code(&Error::NonFiniteGradient { iteration: 1, index: 0 }), 4);
    }
}
