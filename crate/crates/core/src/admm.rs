//! ADMM on the dual of the relaxation with the weights as an extra block.
//!
//! The augmented Lagrangian is
//!
//! ```text
//! L = L_c(theta) - x r - <X, R> + r^2 / (2 rho) + ||R||^2 / (2 mu)
//! r = a^T y + c + s,   R = A^T(y) - S - C
//! ```
//!
//! One outer step runs inner `(y, S, X)` sweeps until `||R||_F <= delta`,
//! then updates the logit slack and multiplier `(s, x)` and takes a gradient
//! step on the weights. [`solve_frozen`] runs the inner sweeps alone, with
//! the logit constraint dropped, to solve the relaxation at fixed weights.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledSample, SphereSampler, OUTER_RADIUS};
use crate::error::{Error, Result};
use crate::network::{init_xavier, NetworkParams};
use crate::numerics::{self, SpdFactor, SymMatrix};
use crate::optim::{Adam, AdamConfig, Momentum};
use crate::region::{InputRegion, Norm};
use crate::sdp::{build_sdp, Multipliers, Penalties, SdpMatrix, SdpProblem};
use crate::verify::{self, CertificationReport};

/// Symmetric positive definite system solved with one step of iterative
/// refinement against the unregularized matrix.
#[derive(Debug)]
struct RefinedSolver {
    matrix: SymMatrix,
    factor: SpdFactor,
}

impl RefinedSolver {
    fn new(matrix: SymMatrix) -> Result<Self> {
        let factor = SpdFactor::new(&matrix)?;
        Ok(Self { matrix, factor })
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.factor.solve(rhs)?;
        let kx = self.matrix.matvec(&x);
        let res: Vec<f64> = rhs.iter().zip(&kx).map(|(b, k)| b - k).collect();
        let dx = self.factor.solve(&res)?;
        x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        Ok(x)
    }
}

/// Update rule of the weight step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightOptimizer {
    /// Adam with bias correction at learning rate `eta`.
    #[default]
    Adam,
    /// Gradient descent with optional heavy-ball momentum.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmSettings {
    pub mu: f64,
    pub rho: f64,
    /// Step length of the matrix multiplier update.
    pub nu: f64,
    /// Step length of the logit multiplier update.
    pub alpha: f64,
    /// Inner tolerance gating the logit and weight steps.
    pub delta: f64,
    /// Weight learning rate.
    pub eta: f64,
    /// Re-project `X` onto the PSD cone every this many inner sweeps (0 = never).
    pub reproject_every: usize,
    pub optimizer: WeightOptimizer,
    /// Heavy-ball coefficient for [`WeightOptimizer::Sgd`].
    pub momentum: f64,
    /// Inner sweeps allowed per outer step before proceeding regardless.
    pub max_inner_per_step: usize,
    /// Train against `a^T y + c + margin <= 0`.
    pub logit_margin: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            mu: 0.65,
            rho: 1.21,
            nu: 1.6,
            alpha: 0.046,
            delta: 2.4e-3,
            eta: 2.65e-3,
            reproject_every: 50,
            optimizer: WeightOptimizer::Adam,
            momentum: 0.0,
            max_inner_per_step: 2000,
            logit_margin: 0.0,
        }
    }
}

impl AdmmSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("rho", self.rho),
            ("delta", self.delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("nu", self.nu), ("alpha", self.alpha), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.max_inner_per_step == 0 {
            return Err(Error::config("max_inner_per_step must be at least 1"));
        }
        Ok(())
    }

    pub fn penalties(&self) -> Penalties {
        Penalties {
            mu: self.mu,
            rho: self.rho,
        }
    }
}

/// Iterates and counters of the training scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub mult: Multipliers,
    pub settings: AdmmSettings,
    pub weight_steps: usize,
    pub inner_steps: usize,
    /// `||A^T(y) - S - C||_F` after the latest inner sweep.
    pub residual: f64,
}

impl AdmmState {
    /// `y = 0`, `S = proj(-C)`, `X = 0`, `s = 0`, `x = 0`.
    pub fn initial(problem: &SdpProblem, settings: AdmmSettings) -> Result<Self> {
        let mut mult = Multipliers::zeros(&problem.block);
        let mut neg_c = problem.objective_matrix();
        neg_c.scale(-1.0);
        mult.s_mat = neg_c.psd_project()?.0;
        let residual = problem.dual_residual(&mult.y, &mult.s_mat)?.frobenius_norm();
        Ok(Self {
            mult,
            settings,
            weight_steps: 0,
            inner_steps: 0,
            residual,
        })
    }
}

/// Classifier term plus the multiplier and penalty terms.
pub fn augmented_lagrangian(
    params: &NetworkParams,
    region: &InputRegion,
    mult: &Multipliers,
    pen: Penalties,
    batch: Option<&[LabeledSample]>,
) -> Result<f64> {
    let problem = build_sdp(params, region)?;
    let classifier = match batch {
        Some(b) => params.loss_and_grad(b)?.0,
        None => 0.0,
    };
    Ok(classifier + problem.lagrangian_terms(mult, pen)?)
}

/// Parameter gradient of [`augmented_lagrangian`] at fixed multipliers.
pub fn augmented_lagrangian_grad(
    params: &NetworkParams,
    region: &InputRegion,
    mult: &Multipliers,
    pen: Penalties,
    batch: Option<&[LabeledSample]>,
) -> Result<NetworkParams> {
    let problem = build_sdp(params, region)?;
    let mut g = problem.grad_theta(params, mult, pen)?;
    if let Some(b) = batch {
        g.axpy(1.0, &params.loss_and_grad(b)?.1);
    }
    Ok(g)
}

/// Training-mode solver: weights, SDP data and ADMM iterates.
#[derive(Debug)]
pub struct AdmmTrainer {
    pub params: NetworkParams,
    pub region: InputRegion,
    /// SDP data at the current weights, with `c` shifted by the logit margin.
    pub problem: SdpProblem,
    pub state: AdmmState,
    system: RefinedSolver,
    optimizer: StepRule,
}

#[derive(Debug)]
enum StepRule {
    Adam(Adam),
    Sgd(Momentum),
}

impl AdmmTrainer {
    pub fn new(params: NetworkParams, region: InputRegion, settings: AdmmSettings) -> Result<Self> {
        settings.validate()?;
        let problem = Self::build(&params, &region, &settings)?;
        let system = Self::system(&problem, &settings)?;
        let state = AdmmState::initial(&problem, settings)?;
        let optimizer = match settings.optimizer {
            WeightOptimizer::Adam => StepRule::Adam(Adam::new(AdamConfig::with_lr(settings.eta), params.num_params())),
            WeightOptimizer::Sgd => StepRule::Sgd(Momentum::new(settings.eta, settings.momentum, params.num_params())),
        };
        Ok(Self {
            params,
            region,
            problem,
            state,
            system,
            optimizer,
        })
    }

    fn build(params: &NetworkParams, region: &InputRegion, settings: &AdmmSettings) -> Result<SdpProblem> {
        let mut problem = build_sdp(params, region)?;
        problem.offset += settings.logit_margin;
        Ok(problem)
    }

    // K = A A^T / mu + a a^T / rho
    fn system(problem: &SdpProblem, settings: &AdmmSettings) -> Result<RefinedSolver> {
        let mut k = problem.gram_aat();
        k.scale(1.0 / settings.mu);
        let a = &problem.rhs;
        for i in 0..a.len() {
            for j in 0..=i {
                k.add_to(i, j, a[i] * a[j] / settings.rho);
            }
        }
        RefinedSolver::new(k)
    }

    pub fn settings(&self) -> &AdmmSettings {
        &self.state.settings
    }

    /// `a^T y + c` of the unshifted problem.
    pub fn logit_bound(&self) -> f64 {
        self.problem.dual_value(&self.state.mult.y) - self.state.settings.logit_margin
    }

    /// `grad_y L` at the current iterates.
    pub fn y_gradient(&self) -> Result<Vec<f64>> {
        let (p, m, st) = (&self.problem, &self.state.mult, &self.state.settings);
        let r = p.dual_value(&m.y) + m.logit_slack;
        let res = p.dual_residual(&m.y, &m.s_mat)?;
        let ax = p.apply_a(&m.x_mat)?;
        let ares = p.apply_a(&res)?;
        Ok((0..p.num_constraints())
            .map(|k| -m.logit_mult * p.rhs[k] - ax[k] + p.rhs[k] * r / st.rho + ares[k] / st.mu)
            .collect())
    }

    /// Step 1: exact minimization over `y`.
    pub fn update_y(&mut self) -> Result<()> {
        let (p, m, st) = (&self.problem, &self.state.mult, &self.state.settings);
        let mut sc = m.s_mat.clone();
        sc.core.axpy(1.0, &p.objective);
        let asc = p.apply_a(&sc)?;
        let ax = p.apply_a(&m.x_mat)?;
        let shift = (p.offset + m.logit_slack) / st.rho - m.logit_mult;
        let rhs: Vec<f64> = (0..p.num_constraints())
            .map(|k| asc[k] / st.mu + ax[k] - p.rhs[k] * shift)
            .collect();
        self.state.mult.y = self.system.solve(&rhs)?;
        Ok(())
    }

    /// Step 2: `S = proj(V)` with `V = A^T(y) - C - mu X`. Returns `V`.
    pub fn update_s(&mut self) -> Result<SdpMatrix> {
        let v = frozen_v(&self.problem, &self.state.mult, self.state.settings.mu)?;
        self.state.mult.s_mat = v.psd_project()?.0;
        Ok(v)
    }

    /// Step 3: `X <- X - nu R / mu`, with the periodic PSD re-projection
    /// applied when the inner sweep counter hits the cadence. Returns `||R||_F`.
    pub fn update_x(&mut self) -> Result<f64> {
        let st = self.state.settings;
        let res = self.problem.dual_residual(&self.state.mult.y, &self.state.mult.s_mat)?;
        self.state.mult.x_mat.axpy(-st.nu / st.mu, &res);
        if st.reproject_every > 0 && self.state.inner_steps > 0 && self.state.inner_steps % st.reproject_every == 0 {
            self.state.mult.x_mat = self.state.mult.x_mat.psd_project()?.0;
        }
        self.state.residual = res.frobenius_norm();
        Ok(self.state.residual)
    }

    /// Steps 1-3. Returns the dual residual.
    pub fn inner_iteration(&mut self) -> Result<f64> {
        self.update_y()?;
        self.update_s()?;
        self.state.inner_steps += 1;
        self.update_x()
    }

    /// Step 4.
    pub fn inner_converged(&self) -> bool {
        inner_converged(self.state.residual, self.state.settings.delta)
    }

    /// Steps 5-6.
    pub fn update_s_x(&mut self) {
        let st = self.state.settings;
        let m = &mut self.state.mult;
        let (s, x) = logit_step(self.problem.dual_value(&m.y), m.logit_mult, st.rho, st.alpha);
        m.logit_slack = s;
        m.logit_mult = x;
    }

    pub fn lagrangian(&self, batch: Option<&[LabeledSample]>) -> Result<f64> {
        let classifier = match batch {
            Some(b) => self.params.loss_and_grad(b)?.0,
            None => 0.0,
        };
        Ok(classifier + self.problem.lagrangian_terms(&self.state.mult, self.state.settings.penalties())?)
    }

    pub fn theta_gradient(&self, batch: Option<&[LabeledSample]>) -> Result<NetworkParams> {
        let mut g = self
            .problem
            .grad_theta(&self.params, &self.state.mult, self.state.settings.penalties())?;
        if let Some(b) = batch {
            g.axpy(1.0, &self.params.loss_and_grad(b)?.1);
        }
        Ok(g)
    }

    /// Step 7: gradient step on the weights, then rebuild the SDP data and
    /// refactor the `y` system.
    pub fn weight_step(&mut self, batch: &[LabeledSample]) -> Result<()> {
        let g = self.theta_gradient(Some(batch))?;
        if self.state.settings.eta > 0.0 {
            let mut flat = self.params.to_flat();
            match &mut self.optimizer {
                StepRule::Adam(a) => a.step(&mut flat, &g.to_flat(), -1.0),
                StepRule::Sgd(m) => m.descend(&mut flat, &g.to_flat()),
            }
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("weights after step"));
            }
            self.params.set_flat(&flat);
            self.problem = Self::build(&self.params, &self.region, &self.state.settings)?;
            self.system = Self::system(&self.problem, &self.state.settings)?;
        }
        self.state.weight_steps += 1;
        Ok(())
    }

    /// Inner sweeps until the gate opens (or the per-step cap is hit), then
    /// steps 5-7. Returns the number of inner sweeps and the Lagrangian
    /// before the weight step.
    pub fn outer_step(&mut self, batch: &[LabeledSample]) -> Result<(usize, f64)> {
        let mut inner = 0;
        while inner < self.state.settings.max_inner_per_step {
            self.inner_iteration()?;
            inner += 1;
            if self.inner_converged() {
                break;
            }
        }
        self.update_s_x();
        let lagrangian = self.lagrangian(Some(batch))?;
        self.weight_step(batch)?;
        Ok((inner, lagrangian))
    }
}

pub fn inner_converged(residual: f64, delta: f64) -> bool {
    residual <= delta
}

/// `s = max(0, rho x - (a^T y + c))`, `x <- x - alpha (a^T y + c + s) / rho`.
pub fn logit_step(dual_value: f64, x: f64, rho: f64, alpha: f64) -> (f64, f64) {
    let s = (rho * x - dual_value).max(0.0);
    (s, x - alpha * (dual_value + s) / rho)
}

fn frozen_v(problem: &SdpProblem, m: &Multipliers, mu: f64) -> Result<SdpMatrix> {
    let mut v = problem.apply_at(&m.y)?;
    v.core.axpy(-1.0, &problem.objective);
    v.axpy(-mu, &m.x_mat);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrozenSettings {
    /// Target for `||A^T(y) - S - C||_F`.
    pub tol: f64,
    /// Target for `||A(X) - a|| / (1 + ||a||)`; defaults to `tol`.
    pub primal_tol: Option<f64>,
    pub max_inner: usize,
    pub mu: f64,
    pub nu: f64,
    pub reproject_every: usize,
    /// Residual-balancing cadence for `mu` (0 = fixed `mu`).
    pub adapt_every: usize,
    /// Number of `mu` changes after which `mu` stays fixed.
    pub max_mu_changes: usize,
}

impl Default for FrozenSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            primal_tol: None,
            max_inner: 20_000,
            mu: 1.0,
            nu: 1.6,
            reproject_every: 50,
            adapt_every: 50,
            max_mu_changes: 10,
        }
    }
}

impl FrozenSettings {
    pub fn with_tol(tol: f64, max_inner: usize) -> Self {
        Self {
            tol,
            max_inner,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSolution {
    pub y: Vec<f64>,
    pub s_mat: SdpMatrix,
    pub x_mat: SdpMatrix,
    /// `||A^T(y) - S - C||_F`
    pub residual: f64,
    /// `||A(X) - a|| / (1 + ||a||)`
    pub primal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub mu: f64,
}

impl FrozenSolution {
    /// `a^T y + c`
    pub fn dual_value(&self, problem: &SdpProblem) -> f64 {
        problem.dual_value(&self.y)
    }

    pub fn multipliers(&self) -> Multipliers {
        Multipliers {
            y: self.y.clone(),
            s_mat: self.s_mat.clone(),
            x_mat: self.x_mat.clone(),
            logit_slack: 0.0,
            logit_mult: 0.0,
        }
    }
}

/// Solves the relaxation at fixed weights from a cold start.
pub fn solve_frozen(problem: &SdpProblem, tol: f64, max_inner: usize) -> Result<FrozenSolution> {
    solve_frozen_with(problem, &FrozenSettings::with_tol(tol, max_inner), None)
}

/// Dual ADMM at fixed weights: the inner sweeps with the logit constraint
/// removed, so the `y` system is `A A^T y = A(S + C) + mu (A(X) - a)` and is
/// factored once. `mu` is rebalanced between primal and dual residuals.
pub fn solve_frozen_with(
    problem: &SdpProblem,
    settings: &FrozenSettings,
    warm: Option<&Multipliers>,
) -> Result<FrozenSolution> {
    if !(settings.tol >= 0.0) || !(settings.mu > 0.0) {
        return Err(Error::config("frozen solve needs tol >= 0 and mu > 0"));
    }
    let system = RefinedSolver::new(problem.gram_aat())?;
    let mut m = match warm {
        Some(w) => w.clone(),
        None => AdmmState::initial(problem, AdmmSettings::default())?.mult,
    };
    let primal_tol = settings.primal_tol.unwrap_or(settings.tol);
    let a_scale = 1.0 + numerics::norm2(&problem.rhs);
    let c_scale = 1.0 + problem.objective.frobenius_norm();
    let mut mu = settings.mu;
    let mut residual = f64::INFINITY;
    let mut primal = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut mu_changes = 0;
    while iterations < settings.max_inner {
        let mut sc = m.s_mat.clone();
        sc.core.axpy(1.0, &problem.objective);
        let asc = problem.apply_a(&sc)?;
        let ax = problem.apply_a(&m.x_mat)?;
        let rhs: Vec<f64> = (0..problem.num_constraints())
            .map(|k| asc[k] + mu * (ax[k] - problem.rhs[k]))
            .collect();
        m.y = system.solve(&rhs)?;
        let v = frozen_v(problem, &m, mu)?;
        m.s_mat = v.psd_project()?.0;
        let res = problem.dual_residual(&m.y, &m.s_mat)?;
        m.x_mat.axpy(-settings.nu / mu, &res);
        iterations += 1;
        if settings.reproject_every > 0 && iterations % settings.reproject_every == 0 {
            m.x_mat = m.x_mat.psd_project()?.0;
        }
        residual = res.frobenius_norm();
        let ax = problem.apply_a(&m.x_mat)?;
        primal = ax
            .iter()
            .zip(&problem.rhs)
            .map(|(l, r)| (l - r) * (l - r))
            .sum::<f64>()
            .sqrt()
            / a_scale;
        if !residual.is_finite() || !primal.is_finite() {
            return Err(Error::NonFinite("frozen solve residual"));
        }
        if residual <= settings.tol && primal <= primal_tol {
            converged = true;
            break;
        }
        if settings.adapt_every > 0
            && iterations % settings.adapt_every == 0
            && mu_changes < settings.max_mu_changes
        {
            let dual = residual / c_scale;
            if primal > 5.0 * dual && mu < 1e4 {
                mu *= 1.5;
                mu_changes += 1;
            } else if dual > 5.0 * primal && mu > 1e-4 {
                mu /= 1.5;
                mu_changes += 1;
            }
        }
    }
    Ok(FrozenSolution {
        y: m.y,
        s_mat: m.s_mat,
        x_mat: m.x_mat,
        residual,
        primal_residual: primal,
        iterations,
        converged,
        mu,
    })
}

/// Step sizes and penalty weights searched over by the hyperparameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub mu: f64,
    pub rho: f64,
    pub delta: f64,
    pub alpha: f64,
    pub eta: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        let s = AdmmSettings::default();
        Self {
            mu: s.mu,
            rho: s.rho,
            delta: s.delta,
            alpha: s.alpha,
            eta: s.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d: usize,
    pub h: usize,
    #[serde(rename = "L")]
    pub hidden_layers: usize,
    pub p: Norm,
    /// Radius of the certified region around the origin.
    pub eps: f64,
    pub outer_radius: f64,
    pub seed: u64,
    /// Number of outer (weight) steps.
    pub budget: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub hyper: HyperParams,
    pub nu: f64,
    pub reproject_every: usize,
    pub max_inner_per_step: usize,
    pub optimizer: WeightOptimizer,
    pub momentum: f64,
    pub logit_margin: f64,
    /// Certify every this many weight steps (and after the last one).
    pub checkpoint_every: usize,
    pub frozen_tol: f64,
    pub frozen_max_inner: usize,
    pub validation_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = AdmmSettings::default();
        Self {
            d: 5,
            h: 15,
            hidden_layers: 2,
            p: Norm::L2,
            eps: 1.0,
            outer_radius: OUTER_RADIUS,
            seed: 0,
            budget: 5000,
            batch_size: 256,
            hyper: HyperParams::default(),
            nu: s.nu,
            reproject_every: s.reproject_every,
            max_inner_per_step: s.max_inner_per_step,
            optimizer: s.optimizer,
            momentum: s.momentum,
            logit_margin: s.logit_margin,
            checkpoint_every: 100,
            frozen_tol: 1e-6,
            frozen_max_inner: 20_000,
            validation_size: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn settings(&self) -> AdmmSettings {
        AdmmSettings {
            mu: self.hyper.mu,
            rho: self.hyper.rho,
            nu: self.nu,
            alpha: self.hyper.alpha,
            delta: self.hyper.delta,
            eta: self.hyper.eta,
            reproject_every: self.reproject_every,
            optimizer: self.optimizer,
            momentum: self.momentum,
            max_inner_per_step: self.max_inner_per_step,
            logit_margin: self.logit_margin,
        }
    }

    pub fn region(&self) -> Result<InputRegion> {
        InputRegion::new(self.p, self.eps)
    }

    pub fn frozen(&self) -> FrozenSettings {
        FrozenSettings::with_tol(self.frozen_tol, self.frozen_max_inner)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.hidden_layers == 0 {
            return Err(Error::config("d, h and L must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be positive"));
        }
        self.region()?;
        self.settings().validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iter: usize,
    pub inner_iters: usize,
    pub lagrangian: f64,
    pub logit_bound: f64,
    /// Accuracy on the batch used for the step.
    pub accuracy: f64,
}

/// One record per weight step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainLogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: TrainLogRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeCheckpoint {
    pub params: NetworkParams,
    pub weight_step: usize,
    /// Accuracy on the fixed validation set.
    pub accuracy: f64,
    pub report: CertificationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_params: NetworkParams,
    pub best_safe: Option<SafeCheckpoint>,
    pub log: TrainLog,
    pub train_secs: f64,
    pub certify_secs: f64,
}

impl TrainOutcome {
    /// The best safe checkpoint if any, otherwise the final weights.
    pub fn best_params(&self) -> &NetworkParams {
        self.best_safe.as_ref().map_or(&self.final_params, |c| &c.params)
    }
}

/// Full training run: Xavier init, `budget` outer steps, periodic
/// certification keeping the most accurate certified-safe weights.
pub fn run_training(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let params = init_xavier(config.d, config.h, config.hidden_layers, config.seed);
    run_training_from(config, params)
}

pub fn run_training_from(config: &TrainConfig, params: NetworkParams) -> Result<TrainOutcome> {
    config.validate()?;
    let region = config.region()?;
    let mut sampler = SphereSampler::new(config.p, config.d, config.outer_radius, config.seed)?;
    let validation = SphereSampler::new(
        config.p,
        config.d,
        config.outer_radius,
        config.seed ^ 0x5eed_0f_7a11,
    )?
    .batch(config.validation_size);
    let frozen = config.frozen();
    let mut trainer = AdmmTrainer::new(params, region, config.settings())?;
    let mut log = TrainLog::default();
    let mut best: Option<SafeCheckpoint> = None;
    let mut certify_secs = 0.0;
    let start = Instant::now();

    let checkpoint = |trainer: &AdmmTrainer, best: &mut Option<SafeCheckpoint>| -> Result<f64> {
        let t0 = Instant::now();
        // only a strictly more accurate checkpoint can replace the current best
        let accuracy = trainer.params.evaluate(&validation).accuracy;
        if best.as_ref().is_some_and(|b| accuracy <= b.accuracy) {
            return Ok(t0.elapsed().as_secs_f64());
        }
        let problem = build_sdp(&trainer.params, &region)?;
        let warm = Multipliers {
            logit_slack: 0.0,
            logit_mult: 0.0,
            ..trainer.state.mult.clone()
        };
        let (report, _) = verify::certify_problem(&problem, &trainer.params, &frozen, Some(&warm))?;
        if report.safe {
            *best = Some(SafeCheckpoint {
                params: trainer.params.clone(),
                weight_step: trainer.state.weight_steps,
                accuracy,
                report,
            });
        }
        Ok(t0.elapsed().as_secs_f64())
    };

    for iter in 0..config.budget {
        let batch = sampler.batch(config.batch_size);
        let accuracy = trainer.params.evaluate(&batch).accuracy;
        let (inner_iters, lagrangian) = trainer.outer_step(&batch)?;
        log.push(TrainLogRecord {
            iter,
            inner_iters,
            lagrangian,
            logit_bound: trainer.logit_bound(),
            accuracy,
        });
        if (iter + 1) % config.checkpoint_every == 0 && iter + 1 < config.budget {
            certify_secs += checkpoint(&trainer, &mut best)?;
        }
    }
    certify_secs += checkpoint(&trainer, &mut best)?;
    let total = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        final_params: trainer.params,
        best_safe: best,
        log,
        train_secs: total - certify_secs,
        certify_secs,
    })
}
