use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hvmax::cli::{
    cmd_eval, cmd_gen_data, cmd_hv, cmd_train, cmd_verify_bound, exit_code, load_dataset, BoundOptions,
    Method, MethodSpec, RunConfig,
};
use hvmax::pareto::EvalConfig;
use hvmax::{Error, Result};

#[derive(Parser)]
#[command(name = "hvmax", version, about = "Hypervolume maximization for multi-head toy policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// JSON run configuration; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    prompt_types: Option<usize>,
    #[arg(long)]
    objectives: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    loglik_floor: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = ["ham", "sca"])]
    method: Option<String>,
    /// Dataset JSONL (overrides `dataset_path`).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(data_seed => data.seed);
        set!(n => data.n);
        set!(vocab_size => data.vocab_size);
        set!(seq_len => data.seq_len);
        set!(prompt_types => data.prompt_types);
        set!(objectives => data.num_objectives);
        set!(heads => model.num_heads);
        set!(embed_dim => model.embed_dim);
        set!(batch_size => objective.batch_size);
        set!(delta => objective.delta);
        set!(iters => optim.iters);
        set!(lr => optim.lr);
        if let Some(z) = self.z {
            cfg.objective.z = Some(z);
        }
        if let Some(l) = self.loglik_floor {
            cfg.objective.loglik_floor = Some(l);
        }
        if let Some(m) = &self.method {
            cfg.method = if m == "sca" { Method::Sca } else { Method::Ham };
        }
        if let Some(d) = &self.dataset {
            cfg.dataset_path = Some(d.clone());
        }
        Ok(cfg)
    }
}

fn dataset_path(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.dataset_path
        .clone()
        .ok_or_else(|| Error::Config("no dataset given (--dataset or dataset_path)".into()))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON lines.
    GenData {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train HAM (one multi-head checkpoint) or SCA (one checkpoint per weight).
    Train {
        #[command(flatten)]
        cfg: Overrides,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Hypervolume of a point CSV.
    Hv {
        points: PathBuf,
        /// Also report a Monte Carlo estimate with this many samples.
        #[arg(long)]
        mc: Option<usize>,
        /// Also report a random-scalarization estimate with this many draws.
        #[arg(long)]
        scalarized: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the mini-batch hypervolume error against its concentration bound.
    VerifyBound {
        #[command(flatten)]
        cfg: Overrides,
        #[arg(long, value_delimiter = ',', default_values_t = vec![16usize, 64, 256])]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        /// Use the whole dataset for every estimate.
        #[arg(long)]
        full_sweep: bool,
        #[arg(long, default_value = "bound.csv")]
        out: PathBuf,
    },
    /// Evaluate checkpoints per method, extract fronts and compare methods.
    Eval {
        /// `name=ckpt[,ckpt...]`, repeatable.
        #[arg(long = "method", required = true)]
        methods: Vec<MethodSpec>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long, default_value_t = 4)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        max_prompts_per_group: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            let s = cmd_gen_data(&cfg, &out)?;
            println!("wrote {} records to {}", s.records, s.path.display());
            for (j, m) in s.reward_means.iter().enumerate() {
                println!("  mean r{j} = {m:.4}");
            }
        }
        Command::Train { cfg, out_dir } => {
            let cfg = cfg.resolve()?;
            let dataset = dataset_path(&cfg)?;
            let out_dir = out_dir
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs"));
            for r in cmd_train(&cfg, &dataset, &out_dir)? {
                println!(
                    "{}: full-data objective {:.6} -> {:.6}  ({}, {})",
                    r.name,
                    r.initial_full_value,
                    r.final_full_value,
                    r.checkpoint.display(),
                    r.report.display()
                );
            }
        }
        Command::Hv {
            points,
            mc,
            scalarized,
            seed,
        } => {
            let out = cmd_hv(&points, mc, scalarized, seed)?;
            println!("exact {}", out.exact);
            if let Some((est, se)) = out.mc {
                println!("mc {est} +- {se}");
            }
            if let Some((est, se)) = out.scalarized {
                println!("scalarized {est} +- {se}");
            }
        }
        Command::VerifyBound {
            cfg,
            batch_sizes,
            trials,
            full_sweep,
            out,
        } => {
            let cfg = cfg.resolve()?;
            cfg.validate()?;
            let ds = match &cfg.dataset_path {
                Some(p) => load_dataset(p, cfg.data.vocab_size, cfg.data.prompt_types)?,
                None => hvmax::policy::gen_dataset(&cfg.dataset_config())?,
            };
            let opts = BoundOptions {
                batch_sizes,
                trials,
                full_sweep,
            };
            println!("batch_size  mean_error  max_error  bound  violation_rate");
            for r in cmd_verify_bound(&ds, &cfg, &opts, &out)? {
                println!(
                    "{:>10}  {:.6}  {:.6}  {:.6}  {:.4}",
                    r.batch_size,
                    r.mean_error(),
                    r.max_error(),
                    r.bound,
                    r.violation_rate
                );
            }
        }
        Command::Eval {
            methods,
            dataset,
            out_prefix,
            samples,
            temperature,
            max_prompts_per_group,
            seed,
        } => {
            let eval = EvalConfig {
                samples_per_prompt: samples,
                temperature,
                seed,
                max_prompts_per_group,
            };
            let s = cmd_eval(&methods, &dataset, &out_prefix, &eval)?;
            for (method, skip) in &s.skipped {
                eprintln!("warning: {method}: policy {} skipped: {}", skip.policy_id, skip.reason);
            }
            for r in &s.results {
                println!("{}: {} points, {} on front", r.method, r.vectors.len(), r.front.points.len());
            }
            for d in &s.domination {
                println!("{} dominates {}: {}", d.a, d.b, d.a_dominates_b);
            }
            println!("wrote {}, {}, {}", s.fronts_csv.display(), s.svg.display(), s.domination_csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
