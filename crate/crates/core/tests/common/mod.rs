#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use safesdp::dataset::LabeledSample;
use safesdp::numerics::SymMatrix;
use safesdp::sdp::{BlockIndex, Multipliers, SdpMatrix};
use safesdp::{NetworkParams, Norm};

/// Exact maximum of a one-hidden-layer network over a planar ball.
///
/// The logit is linear on every cell cut out by the hidden hyperplanes, so
/// the maximum sits at a cell vertex or, for the disk, at the point of the
/// boundary where some pattern's gradient is normal. All such candidates lie
/// in the region, so the largest logit among them is the exact maximum.
pub fn brute_force_max_2d(p: &NetworkParams, norm: Norm, eps: f64) -> f64 {
    assert_eq!((p.input_dim, p.hidden_layers), (2, 1));
    let h = p.hidden_dim;
    let w1 = &p.layers[0].weight;
    let b1 = &p.layers[0].bias;
    let w2 = p.output().weight.row(0).to_vec();
    let mut cand: Vec<[f64; 2]> = Vec::new();
    // hidden lines a . x + c = 0
    let lines: Vec<([f64; 2], f64)> = (0..h).map(|j| ([w1.get(j, 0), w1.get(j, 1)], b1[j])).collect();
    for (i, (a, c)) in lines.iter().enumerate() {
        for (a2, c2) in &lines[i + 1..] {
            let det = a[0] * a2[1] - a[1] * a2[0];
            if det.abs() > 1e-14 {
                cand.push([(-c * a2[1] + c2 * a[1]) / det, (-a[0] * c2 + a2[0] * c) / det]);
            }
        }
    }
    match norm {
        Norm::L2 => {
            for (a, c) in &lines {
                let n2 = a[0] * a[0] + a[1] * a[1];
                if n2 == 0.0 {
                    continue;
                }
                // foot of the perpendicular, then +- along the line
                let foot = [-c * a[0] / n2, -c * a[1] / n2];
                let rest = eps * eps - (c * c) / n2;
                if rest >= 0.0 {
                    let t = (rest / n2).sqrt();
                    cand.push([foot[0] - t * a[1], foot[1] + t * a[0]]);
                    cand.push([foot[0] + t * a[1], foot[1] - t * a[0]]);
                }
            }
            for mask in 0..(1u32 << h) {
                let mut g = [0.0; 2];
                for j in 0..h {
                    if mask >> j & 1 == 1 {
                        g[0] += w2[j] * w1.get(j, 0);
                        g[1] += w2[j] * w1.get(j, 1);
                    }
                }
                let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
                if n > 0.0 {
                    cand.push([eps * g[0] / n, eps * g[1] / n]);
                }
            }
            for k in 0..64 {
                let t = k as f64 * std::f64::consts::TAU / 64.0;
                cand.push([eps * t.cos(), eps * t.sin()]);
            }
        }
        Norm::Linf => {
            for s0 in [-eps, eps] {
                for s1 in [-eps, eps] {
                    cand.push([s0, s1]);
                }
            }
            for (a, c) in &lines {
                for fixed in [-eps, eps] {
                    if a[1] != 0.0 {
                        cand.push([fixed, -(c + a[0] * fixed) / a[1]]);
                    }
                    if a[0] != 0.0 {
                        cand.push([-(c + a[1] * fixed) / a[0], fixed]);
                    }
                }
            }
        }
    }
    let inside = |x: &[f64; 2]| match norm {
        Norm::L2 => x[0] * x[0] + x[1] * x[1] <= eps * eps * (1.0 + 1e-12),
        Norm::Linf => x[0].abs() <= eps * (1.0 + 1e-12) && x[1].abs() <= eps * (1.0 + 1e-12),
    };
    cand.iter()
        .filter(|x| inside(x))
        .map(|x| p.logit(x))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn random_sym(rng: &mut StdRng, n: usize) -> SymMatrix {
    SymMatrix::from_lower_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn random_sdp(rng: &mut StdRng, block: &BlockIndex, psd: bool) -> SdpMatrix {
    let core = random_sym(rng, block.core_order);
    let slack: Vec<f64> = (0..block.slack_count)
        .map(|_| rng.random_range(if psd { 0.0..1.0 } else { -1.0..1.0 }))
        .collect();
    let m = SdpMatrix { core, slack };
    if psd {
        m.psd_project().unwrap().0
    } else {
        m
    }
}

/// Arbitrary multipliers with `S`, `X` PSD and `s >= 0`.
pub fn random_multipliers(block: &BlockIndex, seed: u64) -> Multipliers {
    let mut rng = StdRng::seed_from_u64(seed);
    Multipliers {
        y: (0..block.num_constraints()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        s_mat: random_sdp(&mut rng, block, true),
        x_mat: random_sdp(&mut rng, block, true),
        logit_slack: rng.random_range(0.0..1.0),
        logit_mult: rng.random_range(-1.0..1.0),
    }
}

/// Relative error `||g - fd|| / max(||fd||, 1e-12)` of `grad` against central
/// differences of `f` at `params`.
pub fn fd_relative_error(
    params: &NetworkParams,
    grad: &NetworkParams,
    step: f64,
    mut f: impl FnMut(&NetworkParams) -> f64,
) -> f64 {
    let base = params.to_flat();
    let g = grad.to_flat();
    let mut q = params.clone();
    let mut err2 = 0.0;
    let mut ref2 = 0.0;
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] += step;
        q.set_flat(&x);
        let up = f(&q);
        x[i] -= 2.0 * step;
        q.set_flat(&x);
        let dn = f(&q);
        let fd = (up - dn) / (2.0 * step);
        err2 += (g[i] - fd) * (g[i] - fd);
        ref2 += fd * fd;
    }
    err2.sqrt() / ref2.sqrt().max(1e-12)
}

pub fn mixed_batch(d: usize, count: usize, seed: u64) -> Vec<LabeledSample> {
    safesdp::dataset::sample_d2(count, d, 1.3, seed).unwrap()
}
