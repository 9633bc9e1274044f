use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use safesdp::admm::{FrozenSettings, TrainConfig};
use safesdp::attack::{pgd_lower_bound, PgdConfig};
use safesdp::bounds::{optimize_alpha, theory_sdp_limit};
use safesdp::experiments::{
    default_budget, hyper_search, run_gap_experiment, write_records, GapConfig, GapKind, HyperSpace,
};
use safesdp::verify::certify;
use safesdp::{Checkpoint, InputRegion, NetworkParams, Norm};

#[derive(Parser)]
#[command(name = "safesdp", version, about = "Safe ReLU classifier training with semidefinite certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and save the best certified-safe weights.
    Train(TrainArgs),
    /// Certify an upper bound on the logit of a saved model.
    Verify(ModelArgs),
    /// Lower-bound the logit maximum of a saved model by projected gradient ascent.
    Attack(ModelArgs),
    /// Bound gaps of the relaxation and the linear bound against the attack.
    Gap(GapArgs),
    /// Random search over the ADMM hyperparameters.
    Hypersearch(HyperArgs),
    /// Large-width limit of the relaxation value for random networks.
    Theory(TheoryArgs),
}

#[derive(Args, Clone)]
struct Shape {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long = "L")]
    hidden_layers: Option<usize>,
    #[arg(long)]
    p: Option<Norm>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Shape {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(d) = self.d {
            cfg.d = d;
            cfg.h = self.h.unwrap_or(3 * d);
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(l) = self.hidden_layers {
            cfg.hidden_layers = l;
        }
        if let Some(p) = self.p {
            cfg.p = p;
        }
        if let Some(eps) = self.eps {
            cfg.eps = eps;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    shape: Shape,
    /// Outer weight steps (default depends on d, h and p).
    #[arg(long)]
    budget: Option<usize>,
    /// Tolerance of the checkpoint certification solves.
    #[arg(long)]
    tol: Option<f64>,
    /// Where to write the model checkpoint.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Optional CSV training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Exit with status 2 unless a certified-safe checkpoint was found.
    #[arg(long)]
    require_safe: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "2")]
    p: Norm,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    require_safe: bool,
}

#[derive(Args)]
struct GapArgs {
    /// JSON gap config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<Norm>>,
    #[arg(long, value_delimiter = ',')]
    kind: Option<Vec<GapKind>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "L")]
    hidden_layers: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// CSV destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HyperArgs {
    /// JSON training config used as the base of every trial.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    shape: Shape,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// JSON search space (defaults to the full ranges).
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long = "L", default_value_t = 2)]
    hidden_layers: usize,
    #[arg(long, default_value = "2")]
    p: Norm,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<NetworkParams> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))?
        .to_params()?)
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    args.shape.apply(&mut cfg);
    match args.budget {
        Some(b) => cfg.budget = b,
        None if args.config.is_none() => cfg.budget = default_budget(cfg.d, cfg.h, cfg.p),
        None => {}
    }
    if let Some(tol) = args.tol {
        cfg.frozen_tol = tol;
    }
    cfg.validate()?;
    let outcome = safesdp::admm::run_training(&cfg)?;
    if let Some(path) = &args.log {
        outcome.log.write_csv(File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    let best = outcome.best_safe.as_ref();
    let summary = serde_json::json!({
        "safe": best.is_some(),
        "weight_step": best.map(|c| c.weight_step),
        "validation_accuracy": best.map(|c| c.accuracy),
        "report": best.map(|c| &c.report),
        "train_secs": outcome.train_secs,
        "certify_secs": outcome.certify_secs,
        "config": &cfg,
    });
    Checkpoint::from_params(outcome.best_params(), Some(cfg.seed), summary.clone()).save(&args.out)?;
    emit(&summary, None)?;
    Ok(if args.require_safe && best.is_none() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn verify(args: ModelArgs) -> Result<ExitCode> {
    let params = load_model(&args.model)?;
    let region = InputRegion::new(args.p, args.eps)?;
    let report = certify(&params, &region, &FrozenSettings::with_tol(args.tol, FrozenSettings::default().max_inner))?;
    emit(&serde_json::to_value(&report)?, args.out.as_deref())?;
    Ok(if args.require_safe && !report.safe {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn attack(args: ModelArgs) -> Result<ExitCode> {
    let params = load_model(&args.model)?;
    let region = InputRegion::new(args.p, args.eps)?;
    let result = pgd_lower_bound(&params, &region, &PgdConfig::default(), args.seed)?;
    let (_, crown) = optimize_alpha(&params, &region, 100, 0.1)?;
    let value = serde_json::json!({
        "pgd": result,
        "linear_bound": crown,
    });
    emit(&value, args.out.as_deref())?;
    Ok(if args.require_safe && result.value > 0.0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn gap(args: GapArgs) -> Result<ExitCode> {
    let mut cfg: GapConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => GapConfig::default(),
    };
    if let Some(d) = args.d {
        cfg.dims = d;
    }
    if let Some(p) = args.p {
        cfg.norms = p;
    }
    if let Some(k) = args.kind {
        cfg.kinds = k;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(l) = args.hidden_layers {
        cfg.hidden_layers = l;
    }
    if let Some(eps) = args.eps {
        cfg.eps = eps;
    }
    if let Some(tol) = args.tol {
        cfg.frozen.tol = tol;
    }
    if cfg.dims.is_empty() || cfg.norms.is_empty() || cfg.kinds.is_empty() {
        bail!("gap needs at least one dimension, norm and kind");
    }
    let records = run_gap_experiment(&cfg);
    match &args.out {
        Some(path) => write_records(&records, File::create(path)?)?,
        None => write_records(&records, io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn hypersearch(args: HyperArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    args.shape.apply(&mut cfg);
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    cfg.validate()?;
    let space = match &args.space {
        Some(path) => read_json(path)?,
        None => HyperSpace::default(),
    };
    let result = hyper_search(&cfg, &space, args.trials, cfg.seed)?;
    emit(&serde_json::to_value(&result)?, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn theory(args: TheoryArgs) -> Result<ExitCode> {
    let h = args.h.unwrap_or(3 * args.d);
    let value = theory_sdp_limit(args.d, h, args.hidden_layers, args.eps, args.p);
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{}",
        serde_json::json!({ "d": args.d, "h": h, "L": args.hidden_layers, "p": args.p, "eps": args.eps, "sdp_limit": value })
    )?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Verify(a) => verify(a),
        Command::Attack(a) => attack(a),
        Command::Gap(a) => gap(a),
        Command::Hypersearch(a) => hypersearch(a),
        Command::Theory(a) => theory(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
