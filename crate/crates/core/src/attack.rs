//! Projected gradient ascent on the logit: a lower bound on its maximum over
//! the input region.

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataset::sample_ball_with;
use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::optim::{Adam, AdamConfig};
use crate::region::{InputRegion, Norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Stop after this many steps without an improvement above `tolerance`.
    pub patience: usize,
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            patience: 100,
            tolerance: 1e-4,
            max_steps: 10_000,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.patience == 0 {
            return Err(Error::config("pgd batch and patience must be at least 1"));
        }
        if !(self.tolerance > 0.0) || !(self.lr > 0.0) {
            return Err(Error::config("pgd tolerance and learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdResult {
    pub value: f64,
    pub point: Vec<f64>,
    pub steps: usize,
}

/// Euclidean projection onto the region.
pub fn project(point: &[f64], region: &InputRegion) -> Vec<f64> {
    let mut x = point.to_vec();
    project_in_place(&mut x, region);
    x
}

pub fn project_in_place(x: &mut [f64], region: &InputRegion) {
    let eps = region.eps;
    match region.norm {
        Norm::L2 => {
            let n = Norm::L2.of(x);
            if n > eps {
                let s = eps / n;
                x.iter_mut().for_each(|v| *v *= s);
            }
        }
        Norm::Linf => x.iter_mut().for_each(|v| *v = v.clamp(-eps, eps)),
    }
}

/// Per-point Adam ascent from uniform starts in the region; reports the best
/// value seen over the whole batch.
pub fn pgd_lower_bound(
    params: &NetworkParams,
    region: &InputRegion,
    config: &PgdConfig,
    seed: u64,
) -> Result<PgdResult> {
    config.validate()?;
    params.validate()?;
    let d = params.input_dim;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut points = sample_ball_with(&mut rng, config.batch, d, region.norm, region.eps);
    let adam_cfg = AdamConfig {
        lr: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        ..AdamConfig::default()
    };
    let mut optimizers: Vec<Adam> = (0..config.batch).map(|_| Adam::new(adam_cfg, d)).collect();

    let mut best = f64::NEG_INFINITY;
    let mut best_point = points[0].clone();
    let mut reference = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut steps = 0;
    loop {
        let mut grads = Vec::with_capacity(points.len());
        for x in &points {
            let (value, g) = params.input_gradient(x)?;
            if value > best {
                best = value;
                best_point.clone_from(x);
            }
            grads.push(g);
        }
        if best > reference + config.tolerance {
            reference = best;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience || steps >= config.max_steps {
            break;
        }
        for ((x, g), opt) in points.iter_mut().zip(&grads).zip(&mut optimizers) {
            opt.step(x, g, 1.0);
            project_in_place(x, region);
        }
        steps += 1;
    }
    Ok(PgdResult {
        value: best,
        point: best_point,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;

    #[test]
    fn projection_examples() {
        let r2 = InputRegion::unit_l2();
        let ri = InputRegion::new(Norm::Linf, 1.0).unwrap();
        assert_eq!(project(&[0.1, -0.2], &r2), vec![0.1, -0.2]);
        let p = project(&[3.0, 4.0], &r2);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project(&[2.0, -0.5], &ri), vec![1.0, -0.5]);
        assert_eq!(project(&p, &r2), p);
    }

    fn linear_net(w: &[f64]) -> NetworkParams {
        // one hidden layer of identity pairs: relu(x) - relu(-x) = x
        let d = w.len();
        let mut p = NetworkParams::zeros(d, 2 * d, 1);
        for (i, &wi) in w.iter().enumerate() {
            p.layers[0].weight.set(2 * i, i, 1.0);
            p.layers[0].weight.set(2 * i + 1, i, -1.0);
            let out: &mut Layer = p.output_mut();
            out.weight.set(0, 2 * i, wi);
            out.weight.set(0, 2 * i + 1, -wi);
        }
        p
    }

    #[test]
    fn linear_net_reaches_dual_norm() {
        let w = [0.5, -1.0, 2.0];
        let p = linear_net(&w);
        let r2 = InputRegion::new(Norm::L2, 0.7).unwrap();
        let got = pgd_lower_bound(&p, &r2, &PgdConfig::default(), 1).unwrap();
        let want = 0.7 * Norm::L2.dual_of(&w);
        assert!(got.value <= want + 1e-12 && got.value >= want - 1e-3, "{} {}", got.value, want);
        assert!(r2.contains(&got.point, 1e-12));

        let ri = InputRegion::new(Norm::Linf, 0.7).unwrap();
        let got = pgd_lower_bound(&p, &ri, &PgdConfig::default(), 2).unwrap();
        let want = 0.7 * Norm::Linf.dual_of(&w);
        assert!(got.value >= want - 1e-3, "{} {}", got.value, want);
        assert!((p.logit(&got.point) - got.value).abs() < 1e-15);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = crate::network::init_xavier(3, 6, 2, 0);
        let r = InputRegion::unit_l2();
        let cfg = PgdConfig {
            batch: 16,
            ..PgdConfig::default()
        };
        assert_eq!(
            pgd_lower_bound(&p, &r, &cfg, 5).unwrap(),
            pgd_lower_bound(&p, &r, &cfg, 5).unwrap()
        );
    }

    proptest::proptest! {
        #[test]
        fn projection_is_idempotent_and_lands_inside(
            x in proptest::collection::vec(-5.0f64..5.0, 1..6),
            eps in 0.1f64..3.0,
            linf in proptest::bool::ANY,
        ) {
            let r = InputRegion::new(if linf { Norm::Linf } else { Norm::L2 }, eps).unwrap();
            let p = project(&x, &r);
            proptest::prop_assert!(r.contains(&p, 1e-12));
            let q = project(&p, &r);
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() <= 1e-15);
            }
            if r.contains(&x, 0.0) {
                proptest::prop_assert_eq!(p, x);
            }
        }
    }
}
