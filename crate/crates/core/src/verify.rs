//! Rigorous upper bounds from approximate dual iterates.
//!
//! For any `y`, write `S~ = A^T(y) - C`. Every feasible primal `X` satisfies
//! `<C, X> + c = a^T y + c - <S~, X> <= a^T y + c + tr(X) max(0, -lambda_min(S~))`,
//! so an a-priori cap `tau >= tr(X)` turns any `y` into a valid bound.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::admm::{self, FrozenSettings, FrozenSolution};
use crate::error::Result;
use crate::network::NetworkParams;
use crate::region::{InputRegion, Norm};
use crate::sdp::{build_sdp, SdpProblem};

/// Relative inflation applied to the trace cap to absorb rounding in the
/// numerically computed spectral norms.
pub const TRACE_CAP_INFLATION: f64 = 1e-9;

/// Per-block caps of `tr P[x_l x_l^T]`, `l = 0..=L`.
pub fn block_trace_caps(params: &NetworkParams, region: &InputRegion) -> Vec<f64> {
    let eps2 = region.eps * region.eps;
    let cap0 = match region.norm {
        Norm::L2 => eps2,
        Norm::Linf => params.input_dim as f64 * eps2,
    };
    let mut caps = vec![cap0];
    let mut root = cap0.sqrt();
    for layer in &params.layers[..params.hidden_layers] {
        let bnorm = layer.bias.iter().map(|v| v * v).sum::<f64>().sqrt();
        root = layer.weight.spectral_norm() * root + bnorm;
        caps.push(root * root);
    }
    caps
}

/// Upper bound on the trace of every feasible point of the relaxation,
/// slack block included.
pub fn trace_cap(params: &NetworkParams, region: &InputRegion) -> f64 {
    let caps = block_trace_caps(params, region);
    let roots: Vec<f64> = caps.iter().map(|c| c.sqrt()).collect();
    let eps2 = region.eps * region.eps;
    let sqrt_h = (params.hidden_dim as f64).sqrt();
    // the unit entry and the P blocks
    let mut tau = 1.0 + caps.iter().sum::<f64>();
    // input slacks: eps^2 - P_ii summed over the input rows
    tau += match region.norm {
        Norm::L2 => eps2,
        Norm::Linf => params.input_dim as f64 * eps2,
    };
    for l in 1..=params.hidden_layers {
        let layer = &params.layers[l - 1];
        let wnorm = layer.weight.spectral_norm();
        let bnorm = layer.bias.iter().map(|v| v * v).sum::<f64>().sqrt();
        // sum_j P(0, x_l,j) <= sqrt(h) ||P[x_l]||_2 <= sqrt(h) sqrt(cap_l)
        tau += sqrt_h * roots[l];
        // sum_j (P(0, x_l,j) - W_j P[x_{l-1}] - b_j)
        tau += sqrt_h * (roots[l] + wnorm * roots[l - 1] + bnorm);
    }
    tau * (1.0 + TRACE_CAP_INFLATION)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    /// `a^T y + c`
    pub dual_value: f64,
    /// Smallest eigenvalue of `A^T(y) - C`.
    pub lambda_min: f64,
    pub tau: f64,
    pub certified: f64,
    pub safe: bool,
}

impl CertifiedBound {
    pub fn from_parts(dual_value: f64, lambda_min: f64, tau: f64) -> Self {
        let certified = dual_value + tau * (-lambda_min).max(0.0);
        Self {
            dual_value,
            lambda_min,
            tau,
            certified,
            safe: certified <= 0.0,
        }
    }
}

pub fn certify_dual(problem: &SdpProblem, y: &[f64], params: &NetworkParams) -> Result<CertifiedBound> {
    let mut s = problem.apply_at(y)?;
    s.core.axpy(-1.0, &problem.objective);
    let lambda_min = s.lambda_min()?;
    let tau = trace_cap(params, &problem.region);
    Ok(CertifiedBound::from_parts(problem.dual_value(y), lambda_min, tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol: f64,
    pub max_inner: usize,
    pub residual: f64,
    pub primal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub solve_secs: f64,
    pub certify_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub dual_value: f64,
    pub lambda_min: f64,
    pub tau: f64,
    pub certified: f64,
    pub safe: bool,
    pub tolerances: Tolerances,
    pub timings: Timings,
}

impl CertificationReport {
    pub fn bound(&self) -> CertifiedBound {
        CertifiedBound {
            dual_value: self.dual_value,
            lambda_min: self.lambda_min,
            tau: self.tau,
            certified: self.certified,
            safe: self.safe,
        }
    }
}

/// Solves the relaxation at fixed weights and certifies the result.
pub fn certify(params: &NetworkParams, region: &InputRegion, settings: &FrozenSettings) -> Result<CertificationReport> {
    let problem = build_sdp(params, region)?;
    certify_problem(&problem, params, settings, None).map(|(r, _)| r)
}

/// Like [`certify`] for a built problem, optionally warm-started.
pub fn certify_problem(
    problem: &SdpProblem,
    params: &NetworkParams,
    settings: &FrozenSettings,
    warm: Option<&crate::sdp::Multipliers>,
) -> Result<(CertificationReport, FrozenSolution)> {
    let t0 = Instant::now();
    let sol = admm::solve_frozen_with(problem, settings, warm)?;
    let solve_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let b = certify_dual(problem, &sol.y, params)?;
    let certify_secs = t1.elapsed().as_secs_f64();
    Ok((
        CertificationReport {
            dual_value: b.dual_value,
            lambda_min: b.lambda_min,
            tau: b.tau,
            certified: b.certified,
            safe: b.safe,
            tolerances: Tolerances {
                tol: settings.tol,
                max_inner: settings.max_inner,
                residual: sol.residual,
                primal_residual: sol.primal_residual,
                iterations: sol.iterations,
                converged: sol.converged,
            },
            timings: Timings {
                solve_secs,
                certify_secs,
            },
        },
        sol,
    ))
}

/// True iff the logit is certified nonpositive on the closed unit l2 ball.
pub fn certify_recall(params: &NetworkParams) -> Result<bool> {
    Ok(certify(params, &InputRegion::unit_l2(), &FrozenSettings::default())?.safe)
}
