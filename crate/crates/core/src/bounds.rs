//! Linear-relaxation output bounds with optimizable lower slopes, interval
//! intermediate bounds, and closed-form limits for random networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::region::{InputRegion, Norm};

/// Pre-activation bounds of every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreactBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl PreactBounds {
    pub fn is_unstable(&self, layer: usize, j: usize) -> bool {
        self.lower[layer][j] < 0.0 && self.upper[layer][j] > 0.0
    }

    pub fn unstable_count(&self) -> usize {
        (0..self.lower.len())
            .map(|l| (0..self.lower[l].len()).filter(|&j| self.is_unstable(l, j)).count())
            .sum()
    }
}

/// Lower-line slopes, one per hidden neuron (ignored for stable neurons).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub slopes: Vec<Vec<f64>>,
}

impl AlphaVector {
    pub fn constant(params: &NetworkParams, value: f64) -> Self {
        Self {
            slopes: vec![vec![value.clamp(0.0, 1.0); params.hidden_dim]; params.hidden_layers],
        }
    }

    /// `alpha = 1` where `u > -l`, else 0.
    pub fn adaptive(bounds: &PreactBounds) -> Self {
        Self {
            slopes: bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(l, u)| l.iter().zip(u).map(|(l, u)| if *u > -*l { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn clamp(&mut self) {
        self.slopes.iter_mut().flatten().for_each(|a| *a = a.clamp(0.0, 1.0));
    }
}

/// Interval arithmetic from the input region through every hidden layer.
pub fn interval_bounds(params: &NetworkParams, region: &InputRegion) -> PreactBounds {
    let mut lower = Vec::with_capacity(params.hidden_layers);
    let mut upper = Vec::with_capacity(params.hidden_layers);
    let first = &params.layers[0];
    let (mut lo, mut hi): (Vec<f64>, Vec<f64>) = (0..first.weight.rows)
        .map(|j| {
            let r = region.eps * region.norm.dual_of(first.weight.row(j));
            (first.bias[j] - r, first.bias[j] + r)
        })
        .unzip();
    lower.push(lo.clone());
    upper.push(hi.clone());
    for layer in &params.layers[1..params.hidden_layers] {
        let post_lo: Vec<f64> = lo.iter().map(|v| v.max(0.0)).collect();
        let post_hi: Vec<f64> = hi.iter().map(|v| v.max(0.0)).collect();
        let (nlo, nhi): (Vec<f64>, Vec<f64>) = (0..layer.weight.rows)
            .map(|j| {
                let mut c = layer.bias[j];
                let mut r = 0.0;
                for (i, &w) in layer.weight.row(j).iter().enumerate() {
                    c += w * 0.5 * (post_lo[i] + post_hi[i]);
                    r += w.abs() * 0.5 * (post_hi[i] - post_lo[i]);
                }
                (c - r, c + r)
            })
            .unzip();
        lo = nlo;
        hi = nhi;
        lower.push(lo.clone());
        upper.push(hi.clone());
    }
    PreactBounds { lower, upper }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Relax {
    Identity,
    Zero,
    /// `x <= s (y - l)`
    Upper { slope: f64, lower: f64 },
    /// `x >= alpha y`
    Lower,
}

// one backward sweep: bound, per-layer lambdas (coefficients on post-activations)
// and the branch taken per neuron
struct Sweep {
    bound: f64,
    lambdas: Vec<Vec<f64>>,
    relax: Vec<Vec<Relax>>,
    input_coef: Vec<f64>,
}

fn sweep(params: &NetworkParams, region: &InputRegion, bounds: &PreactBounds, alpha: &AlphaVector) -> Sweep {
    let depth = params.hidden_layers;
    let out = params.output();
    let mut lambda: Vec<f64> = out.weight.row(0).to_vec();
    let mut constant = out.bias[0];
    let mut lambdas = vec![Vec::new(); depth];
    let mut relax = vec![Vec::new(); depth];
    for l in (0..depth).rev() {
        let layer = &params.layers[l];
        let mut mu = vec![0.0; lambda.len()];
        let mut rl = Vec::with_capacity(lambda.len());
        for j in 0..lambda.len() {
            let (lo, hi) = (bounds.lower[l][j], bounds.upper[l][j]);
            let r = if lo >= 0.0 {
                Relax::Identity
            } else if hi <= 0.0 {
                Relax::Zero
            } else if lambda[j] >= 0.0 {
                Relax::Upper {
                    slope: hi / (hi - lo),
                    lower: lo,
                }
            } else {
                Relax::Lower
            };
            match r {
                Relax::Identity => mu[j] = lambda[j],
                Relax::Zero => {}
                Relax::Upper { slope, lower } => {
                    mu[j] = lambda[j] * slope;
                    constant -= lambda[j] * slope * lower;
                }
                Relax::Lower => mu[j] = lambda[j] * alpha.slopes[l][j],
            }
            rl.push(r);
        }
        constant += mu.iter().zip(&layer.bias).map(|(m, b)| m * b).sum::<f64>();
        lambdas[l] = lambda;
        relax[l] = rl;
        lambda = layer.weight.matvec_t(&mu);
    }
    let bound = constant + region.eps * region.norm.dual_of(&lambda);
    Sweep {
        bound,
        lambdas,
        relax,
        input_coef: lambda,
    }
}

fn check_shapes(params: &NetworkParams, bounds: &PreactBounds, alpha: &AlphaVector) -> Result<()> {
    params.validate()?;
    let ok = |v: &Vec<Vec<f64>>| v.len() == params.hidden_layers && v.iter().all(|r| r.len() == params.hidden_dim);
    if !ok(&bounds.lower) || !ok(&bounds.upper) || !ok(&alpha.slopes) {
        return Err(Error::DimensionMismatch {
            context: "bounds or alpha layout",
            expected: params.hidden_layers * params.hidden_dim,
            got: alpha.slopes.iter().map(Vec::len).sum(),
        });
    }
    Ok(())
}

/// Sound upper bound on the logit over the region for the given slopes.
pub fn crown_upper_bound(
    params: &NetworkParams,
    region: &InputRegion,
    bounds: &PreactBounds,
    alpha: &AlphaVector,
) -> Result<f64> {
    check_shapes(params, bounds, alpha)?;
    Ok(sweep(params, region, bounds, alpha).bound)
}

/// Bound and its (sub)gradient with respect to the slopes.
pub fn crown_bound_and_grad(
    params: &NetworkParams,
    region: &InputRegion,
    bounds: &PreactBounds,
    alpha: &AlphaVector,
) -> Result<(f64, AlphaVector)> {
    check_shapes(params, bounds, alpha)?;
    let sw = sweep(params, region, bounds, alpha);
    let mut grad = AlphaVector::constant(params, 0.0);
    // adjoint of the input coefficient under eps * ||.||_q
    let mut g_lambda: Vec<f64> = match region.norm {
        Norm::L2 => {
            let n = Norm::L2.of(&sw.input_coef);
            if n > 0.0 {
                sw.input_coef.iter().map(|v| region.eps * v / n).collect()
            } else {
                vec![0.0; sw.input_coef.len()]
            }
        }
        Norm::Linf => sw
            .input_coef
            .iter()
            .map(|&v| if v == 0.0 { 0.0 } else { region.eps * v.signum() })
            .collect(),
    };
    for l in 0..params.hidden_layers {
        let layer = &params.layers[l];
        // mu_l feeds lambda_{l-1} = W_l^T mu_l and the constant mu_l . b_l
        let g_mu: Vec<f64> = layer
            .weight
            .matvec(&g_lambda)
            .iter()
            .zip(&layer.bias)
            .map(|(g, b)| g + b)
            .collect();
        let mut g_next = vec![0.0; g_mu.len()];
        for j in 0..g_mu.len() {
            let lam = sw.lambdas[l][j];
            match sw.relax[l][j] {
                Relax::Identity => g_next[j] = g_mu[j],
                Relax::Zero => {}
                Relax::Upper { slope, lower } => g_next[j] = g_mu[j] * slope - slope * lower,
                Relax::Lower => {
                    g_next[j] = g_mu[j] * alpha.slopes[l][j];
                    grad.slopes[l][j] = g_mu[j] * lam;
                }
            }
        }
        g_lambda = g_next;
    }
    Ok((sw.bound, grad))
}

/// Projected gradient descent on the slopes, keeping the best iterate and
/// never returning worse than either constant endpoint.
pub fn optimize_alpha(
    params: &NetworkParams,
    region: &InputRegion,
    steps: usize,
    lr: f64,
) -> Result<(AlphaVector, f64)> {
    let bounds = interval_bounds(params, region);
    optimize_alpha_with(params, region, &bounds, steps, lr)
}

pub fn optimize_alpha_with(
    params: &NetworkParams,
    region: &InputRegion,
    bounds: &PreactBounds,
    steps: usize,
    lr: f64,
) -> Result<(AlphaVector, f64)> {
    let mut best: Option<(AlphaVector, f64)> = None;
    for start in [
        AlphaVector::constant(params, 0.0),
        AlphaVector::constant(params, 1.0),
        AlphaVector::adaptive(bounds),
    ] {
        let b = crown_upper_bound(params, region, bounds, &start)?;
        if best.as_ref().is_none_or(|(_, v)| b < *v) {
            best = Some((start, b));
        }
    }
    let (mut alpha, _) = best.clone().expect("three candidates");
    for _ in 0..steps {
        let (b, g) = crown_bound_and_grad(params, region, bounds, &alpha)?;
        if best.as_ref().is_none_or(|(_, v)| b < *v) {
            best = Some((alpha.clone(), b));
        }
        for (a, ga) in alpha.slopes.iter_mut().flatten().zip(g.slopes.iter().flatten()) {
            *a -= lr * ga;
        }
        alpha.clamp();
    }
    let b = crown_upper_bound(params, region, bounds, &alpha)?;
    if best.as_ref().is_none_or(|(_, v)| b < *v) {
        best = Some((alpha, b));
    }
    Ok(best.expect("at least one candidate"))
}

/// `(eps / 2) sum_j W2_j [W2_j >= 0] sum_i |W1_ji|` for a one-hidden-layer net.
pub fn closed_form_b(params: &NetworkParams, eps: f64) -> Result<f64> {
    if params.hidden_layers != 1 {
        return Err(Error::config(format!(
            "closed form needs one hidden layer, got {}",
            params.hidden_layers
        )));
    }
    let w1 = &params.layers[0].weight;
    let w2 = params.output().weight.row(0);
    Ok(0.5
        * eps
        * w2
            .iter()
            .enumerate()
            .filter(|(_, &w)| w >= 0.0)
            .map(|(j, &w)| w * w1.row(j).iter().map(|v| v.abs()).sum::<f64>())
            .sum::<f64>())
}

/// Large-width limit of the relaxation value for Xavier-initialized
/// networks with `h` proportional to `d`.
pub fn theory_sdp_limit(d: usize, h: usize, hidden_layers: usize, eps: f64, norm: Norm) -> f64 {
    let (d, h, l) = (d as f64, h as f64, hidden_layers as i32);
    let nuclear = match norm {
        Norm::L2 => eps * eps,
        Norm::Linf => d * eps * eps,
    };
    let two = 2f64.powi(l - 1);
    let s3 = 3f64.sqrt();
    two / 3f64.powi(l + 1).sqrt() * (1.0 + (h / d).sqrt()) * nuclear.sqrt()
        + (h / (3.0 * d)).sqrt() * two / 3f64.powi(l).sqrt()
        + ((2.0 / s3).powi(l - 1) - 1.0) / (2.0 * s3 - 3.0)
}

/// Limiting spectral norm of a `b x a` Xavier matrix.
pub fn bai_yin_norm(a: f64, b: f64) -> f64 {
    (a.sqrt() + b.sqrt()) / (3.0 * a).sqrt()
}

/// Limiting Euclidean norm of a length-`b` Xavier bias with fan-in `a`.
pub fn bai_yin_bias_norm(a: f64, b: f64) -> f64 {
    (b / (3.0 * a)).sqrt()
}
