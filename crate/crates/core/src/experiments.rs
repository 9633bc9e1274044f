//! Experiment drivers: bound gaps on random and trained networks, safe
//! training runs, and hyperparameter search. Every record is a pure function
//! of its config and seed.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{run_training, FrozenSettings, HyperParams, TrainConfig};
use crate::attack::{pgd_lower_bound, PgdConfig};
use crate::bounds::optimize_alpha;
use crate::dataset::{SphereSampler, OUTER_RADIUS};
use crate::error::{Error, Result};
use crate::network::{init_xavier, NetworkParams};
use crate::optim::{Adam, AdamConfig};
use crate::region::{InputRegion, Norm};
use crate::verify::{certify, certify_recall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapKind {
    Random,
    Trained,
}

impl FromStr for GapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(GapKind::Random),
            "trained" => Ok(GapKind::Trained),
            other => Err(Error::config(format!("unknown network kind {other:?}"))),
        }
    }
}

/// Early-stopped supervised training used for the `trained` gap networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub target_accuracy: f64,
    pub patience: usize,
    pub tolerance: f64,
    pub max_steps: usize,
    pub validation_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 256,
            target_accuracy: 0.95,
            patience: 100,
            tolerance: 1e-3,
            max_steps: 20_000,
            validation_size: 2000,
        }
    }
}

/// Adam on the classification loss until the validation accuracy reaches the
/// target or stalls. Returns the steps taken and the final accuracy.
pub fn pretrain(
    params: &mut NetworkParams,
    norm: Norm,
    outer_radius: f64,
    config: &PretrainConfig,
    seed: u64,
) -> Result<(usize, f64)> {
    let mut sampler = SphereSampler::new(norm, params.input_dim, outer_radius, seed)?;
    let validation = SphereSampler::new(norm, params.input_dim, outer_radius, seed ^ 0x7a1d)?.batch(config.validation_size);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), params.num_params());
    let mut flat = params.to_flat();
    let mut acc = params.evaluate(&validation).accuracy;
    let mut reference = acc;
    let mut stale = 0;
    let mut steps = 0;
    while acc < config.target_accuracy && stale < config.patience && steps < config.max_steps {
        let batch = sampler.batch(config.batch);
        let (_, grad) = params.loss_and_grad(&batch)?;
        adam.step(&mut flat, &grad.to_flat(), -1.0);
        params.set_flat(&flat);
        steps += 1;
        acc = params.evaluate(&validation).accuracy;
        if acc > reference + config.tolerance {
            reference = acc;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    Ok((steps, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapConfig {
    pub dims: Vec<usize>,
    pub norms: Vec<Norm>,
    pub kinds: Vec<GapKind>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Hidden width as a multiple of `d`.
    pub width_ratio: usize,
    #[serde(rename = "L")]
    pub hidden_layers: usize,
    pub eps: f64,
    pub frozen: FrozenSettings,
    pub pgd: PgdConfig,
    pub alpha_steps: usize,
    pub alpha_lr: f64,
    pub pretrain: PretrainConfig,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            dims: vec![5, 10, 20],
            norms: vec![Norm::Linf],
            kinds: vec![GapKind::Random],
            seeds: 10,
            base_seed: 0,
            width_ratio: 3,
            hidden_layers: 2,
            eps: 1.0,
            frozen: FrozenSettings::default(),
            pgd: PgdConfig::default(),
            alpha_steps: 100,
            alpha_lr: 0.1,
            pretrain: PretrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub d: usize,
    pub h: usize,
    #[serde(rename = "L")]
    pub hidden_layers: usize,
    pub p: Norm,
    pub kind: GapKind,
    pub seed: u64,
    pub b_pgd: f64,
    pub b_sdp: f64,
    pub b_crown: f64,
    pub gap_sdp: f64,
    pub gap_crown: f64,
    pub sdp_converged: bool,
    pub pretrain_accuracy: f64,
    pub secs: f64,
}

fn job_seed(base: u64, d: usize, seed: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add((d as u64) << 20).wrapping_add(seed as u64)
}

/// One gap record: PGD lower bound against the certified relaxation bound and
/// the optimized linear bound.
pub fn gap_record(config: &GapConfig, d: usize, norm: Norm, kind: GapKind, seed: usize) -> Result<GapRecord> {
    let t0 = Instant::now();
    let h = config.width_ratio * d;
    let s = job_seed(config.base_seed, d, seed);
    let mut params = init_xavier(d, h, config.hidden_layers, s);
    let mut pretrain_accuracy = f64::NAN;
    if kind == GapKind::Trained {
        pretrain_accuracy = pretrain(&mut params, norm, OUTER_RADIUS, &config.pretrain, s)?.1;
    }
    let region = InputRegion::new(norm, config.eps)?;
    let b_pgd = pgd_lower_bound(&params, &region, &config.pgd, s)?.value;
    let report = certify(&params, &region, &config.frozen)?;
    let (_, b_crown) = optimize_alpha(&params, &region, config.alpha_steps, config.alpha_lr)?;
    Ok(GapRecord {
        d,
        h,
        hidden_layers: config.hidden_layers,
        p: norm,
        kind,
        seed: s,
        b_pgd,
        b_sdp: report.certified,
        b_crown,
        gap_sdp: report.certified - b_pgd,
        gap_crown: b_crown - b_pgd,
        sdp_converged: report.tolerances.converged,
        pretrain_accuracy,
        secs: t0.elapsed().as_secs_f64(),
    })
}

/// Records in `(d, p, kind, seed)` order. Failed records are reported on
/// stderr and skipped.
pub fn run_gap_experiment(config: &GapConfig) -> Vec<GapRecord> {
    let jobs: Vec<(usize, Norm, GapKind, usize)> = config
        .dims
        .iter()
        .flat_map(|&d| {
            config.norms.iter().flat_map(move |&p| {
                config
                    .kinds
                    .iter()
                    .flat_map(move |&k| (0..config.seeds).map(move |s| (d, p, k, s)))
            })
        })
        .collect();
    jobs.par_iter()
        .map(|&(d, p, k, s)| match gap_record(config, d, p, k, s) {
            Ok(r) => Some(r),
            Err(e) => {
                eprintln!("gap record d={d} p={p} kind={k:?} seed={s} failed: {e}");
                None
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub fn write_records<T: Serialize, W: Write>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Default number of outer steps for a `(d, h, p)` run.
pub fn default_budget(d: usize, h: usize, p: Norm) -> usize {
    if p == Norm::Linf {
        return 20_000;
    }
    match (d, h) {
        (5, _) => 5000,
        (40, _) => 30_000,
        (20, _) => 20_000,
        (d, _) if d <= 15 => 10_000,
        _ => 30_000,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub d: usize,
    pub h: usize,
    #[serde(rename = "L")]
    pub hidden_layers: usize,
    pub p: Norm,
    pub seed: u64,
    pub budget: usize,
    pub safe: bool,
    pub best_step: Option<usize>,
    pub certified: Option<f64>,
    pub recall_certified: bool,
    pub recall: f64,
    pub accuracy: f64,
    pub train_secs: f64,
    pub certify_secs: f64,
}

/// Trains, then scores the best safe checkpoint (or the final weights when no
/// checkpoint was safe) on `eval_samples` fresh points.
pub fn train_record(config: &TrainConfig, eval_samples: usize, eval_seed: u64) -> Result<TrainRecord> {
    let outcome = run_training(config)?;
    let params = outcome.best_params();
    let test = SphereSampler::new(config.p, config.d, config.outer_radius, eval_seed)?.batch(eval_samples);
    let eval = params.evaluate(&test);
    let t0 = Instant::now();
    let recall_certified = match config.p {
        Norm::L2 if config.eps == 1.0 => certify_recall(params)?,
        _ => certify(params, &config.region()?, &config.frozen())?.safe,
    };
    Ok(TrainRecord {
        d: config.d,
        h: config.h,
        hidden_layers: config.hidden_layers,
        p: config.p,
        seed: config.seed,
        budget: config.budget,
        safe: outcome.best_safe.is_some(),
        best_step: outcome.best_safe.as_ref().map(|c| c.weight_step),
        certified: outcome.best_safe.as_ref().map(|c| c.report.certified),
        recall_certified,
        recall: eval.recall_inner,
        accuracy: eval.accuracy,
        train_secs: outcome.train_secs,
        certify_secs: outcome.certify_secs + t0.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainExperimentConfig {
    pub runs: Vec<TrainConfig>,
    pub eval_samples: usize,
    pub eval_seed: u64,
}

impl Default for TrainExperimentConfig {
    fn default() -> Self {
        Self {
            runs: vec![TrainConfig::default()],
            eval_samples: 100_000,
            eval_seed: 12_345,
        }
    }
}

pub fn run_training_experiment(config: &TrainExperimentConfig) -> Vec<TrainRecord> {
    config
        .runs
        .par_iter()
        .map(|run| match train_record(run, config.eval_samples, config.eval_seed) {
            Ok(r) => Some(r),
            Err(e) => {
                eprintln!("training run d={} h={} seed={} failed: {e}", run.d, run.h, run.seed);
                None
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Closed ranges searched on a log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSpace {
    pub mu: (f64, f64),
    pub rho: (f64, f64),
    pub delta: (f64, f64),
    pub alpha: (f64, f64),
    pub eta: (f64, f64),
}

impl Default for HyperSpace {
    fn default() -> Self {
        Self {
            mu: (0.1, 10.0),
            rho: (0.1, 10.0),
            delta: (1e-4, 1e-2),
            alpha: (0.01, 1.0),
            eta: (1e-4, 1e-2),
        }
    }
}

impl HyperSpace {
    pub fn point(h: HyperParams) -> Self {
        Self {
            mu: (h.mu, h.mu),
            rho: (h.rho, h.rho),
            delta: (h.delta, h.delta),
            alpha: (h.alpha, h.alpha),
            eta: (h.eta, h.eta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("mu", self.mu),
            ("rho", self.rho),
            ("delta", self.delta),
            ("alpha", self.alpha),
            ("eta", self.eta),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, h: &HyperParams) -> bool {
        let inside = |(lo, hi): (f64, f64), v: f64| lo <= v && v <= hi;
        inside(self.mu, h.mu)
            && inside(self.rho, h.rho)
            && inside(self.delta, h.delta)
            && inside(self.alpha, h.alpha)
            && inside(self.eta, h.eta)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> HyperParams {
        let mut log_uniform = |(lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                (rng.random_range(lo.ln()..hi.ln())).exp().clamp(lo, hi)
            }
        };
        HyperParams {
            mu: log_uniform(self.mu),
            rho: log_uniform(self.rho),
            delta: log_uniform(self.delta),
            alpha: log_uniform(self.alpha),
            eta: log_uniform(self.eta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperTrial {
    pub trial: usize,
    pub hyper: HyperParams,
    /// Validation accuracy of the best safe checkpoint, 0 when none was safe.
    pub score: f64,
    pub safe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSearchResult {
    pub best: HyperParams,
    pub best_score: f64,
    pub trials: Vec<HyperTrial>,
}

/// Log-uniform random search; each trial trains `base` with sampled
/// hyperparameters under the same budget. Ties keep the earliest trial.
pub fn hyper_search(base: &TrainConfig, space: &HyperSpace, trials: usize, seed: u64) -> Result<HyperSearchResult> {
    space.validate()?;
    if trials == 0 {
        return Err(Error::config("hyper_search needs at least one trial"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let candidates: Vec<HyperParams> = (0..trials).map(|_| space.sample(&mut rng)).collect();
    let results: Vec<HyperTrial> = candidates
        .par_iter()
        .enumerate()
        .map(|(trial, &hyper)| {
            let cfg = TrainConfig { hyper, ..base.clone() };
            let (score, safe) = match run_training(&cfg) {
                Ok(out) => out.best_safe.map_or((0.0, false), |c| (c.accuracy, true)),
                Err(e) => {
                    eprintln!("trial {trial} failed: {e}");
                    (0.0, false)
                }
            };
            HyperTrial {
                trial,
                hyper,
                score,
                safe,
            }
        })
        .collect();
    let best = results
        .iter()
        .fold(&results[0], |b, t| if t.score > b.score { t } else { b });
    Ok(HyperSearchResult {
        best: best.hyper,
        best_score: best.score,
        trials: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets() {
        assert_eq!(default_budget(5, 15, Norm::L2), 5000);
        for d in [7, 8, 9, 10, 15] {
            assert_eq!(default_budget(d, 3 * d, Norm::L2), 10_000);
        }
        assert_eq!(default_budget(20, 60, Norm::L2), 20_000);
        assert_eq!(default_budget(40, 120, Norm::L2), 30_000);
        assert_eq!(default_budget(2, 6, Norm::Linf), 20_000);
    }

    #[test]
    fn log_uniform_samples_stay_in_range() {
        let space = HyperSpace::default();
        let mut rng = StdRng::seed_from_u64(3);
        let draws: Vec<HyperParams> = (0..2000).map(|_| space.sample(&mut rng)).collect();
        assert!(draws.iter().all(|h| space.contains(h)));
        // log scale: about half the draws of mu fall below the geometric midpoint 1
        let below = draws.iter().filter(|h| h.mu < 1.0).count() as f64 / 2000.0;
        assert!((below - 0.5).abs() < 0.05, "{below}");
    }

    #[test]
    fn point_space_returns_the_point() {
        let h = HyperParams::default();
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(HyperSpace::point(h).sample(&mut rng), h);
        assert!(HyperSpace {
            mu: (2.0, 1.0),
            ..HyperSpace::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn gap_record_is_ordered_and_deterministic() {
        let cfg = GapConfig {
            dims: vec![2],
            seeds: 1,
            hidden_layers: 1,
            pgd: PgdConfig {
                batch: 32,
                ..PgdConfig::default()
            },
            alpha_steps: 20,
            ..GapConfig::default()
        };
        let a = gap_record(&cfg, 2, Norm::Linf, GapKind::Random, 0).unwrap();
        let b = gap_record(&cfg, 2, Norm::Linf, GapKind::Random, 0).unwrap();
        assert_eq!(a.b_sdp, b.b_sdp);
        assert_eq!(a.b_pgd, b.b_pgd);
        assert!(a.b_pgd <= a.b_sdp + 1e-6);
        assert!(a.b_pgd <= a.b_crown + 1e-6);
    }

    #[test]
    fn pretrain_stops_at_target() {
        let mut p = init_xavier(2, 6, 1, 1);
        let cfg = PretrainConfig {
            target_accuracy: 0.0,
            ..PretrainConfig::default()
        };
        assert_eq!(pretrain(&mut p, Norm::L2, 1.3, &cfg, 0).unwrap().0, 0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Random".parse::<GapKind>().unwrap(), GapKind::Random);
        assert_eq!("trained".parse::<GapKind>().unwrap(), GapKind::Trained);
        assert!("x".parse::<GapKind>().is_err());
    }
}
