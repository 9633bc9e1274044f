//! Adversarial Spheres data: two concentric l2 spheres (`D2`) or two
//! concentric l-inf box surfaces (`Dinf`), inner radius 1 and outer radius `R`.

use std::io::Write;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::Norm;

/// Outer radius used throughout the experiments.
pub const OUTER_RADIUS: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    /// 1 for the outer class, 0 for the inner class.
    pub y: u8,
}

impl LabeledSample {
    pub fn is_outer(&self) -> bool {
        self.y == 1
    }
}

/// Streaming sampler over `D2` (`Norm::L2`) or `Dinf` (`Norm::Linf`).
#[derive(Debug, Clone)]
pub struct SphereSampler {
    norm: Norm,
    dim: usize,
    outer_radius: f64,
    rng: StdRng,
}

impl SphereSampler {
    pub fn new(norm: Norm, dim: usize, outer_radius: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dataset dimension must be at least 1"));
        }
        if !(outer_radius > 1.0) {
            return Err(Error::config(format!(
                "outer radius must exceed 1, got {outer_radius}"
            )));
        }
        Ok(Self {
            norm,
            dim,
            outer_radius,
            rng: StdRng::seed_from_u64(seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&mut self) -> LabeledSample {
        let y = u8::from(self.rng.random_bool(0.5));
        let r = if y == 1 { self.outer_radius } else { 1.0 };
        let x = match self.norm {
            Norm::L2 => {
                let z = gaussian_direction(&mut self.rng, self.dim);
                z.into_iter().map(|v| r * v).collect()
            }
            Norm::Linf => {
                // uniform face, then uniform on that face
                let face = self.rng.random_range(0..2 * self.dim);
                let mut x: Vec<f64> = (0..self.dim)
                    .map(|_| self.rng.random_range(-r..=r))
                    .collect();
                x[face / 2] = if face % 2 == 0 { r } else { -r };
                x
            }
        };
        LabeledSample { x, y }
    }

    pub fn batch(&mut self, count: usize) -> Vec<LabeledSample> {
        (0..count).map(|_| self.sample()).collect()
    }
}

fn gaussian_direction(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-300 {
            return z.into_iter().map(|v| v / n).collect();
        }
    }
}

pub fn sample_d2(count: usize, dim: usize, outer_radius: f64, seed: u64) -> Result<Vec<LabeledSample>> {
    Ok(SphereSampler::new(Norm::L2, dim, outer_radius, seed)?.batch(count))
}

pub fn sample_dinf(count: usize, dim: usize, outer_radius: f64, seed: u64) -> Result<Vec<LabeledSample>> {
    Ok(SphereSampler::new(Norm::Linf, dim, outer_radius, seed)?.batch(count))
}

/// Points i.i.d. uniform in `{x : ||x||_p <= eps}`.
pub fn sample_ball(count: usize, dim: usize, norm: Norm, eps: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StdRng::seed_from_u64(seed);
    sample_ball_with(&mut rng, count, dim, norm, eps)
}

pub fn sample_ball_with(
    rng: &mut StdRng,
    count: usize,
    dim: usize,
    norm: Norm,
    eps: f64,
) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| match norm {
            Norm::Linf => (0..dim).map(|_| rng.random_range(-eps..=eps)).collect(),
            Norm::L2 => {
                let u: f64 = rng.random();
                let r = eps * u.powf(1.0 / dim as f64);
                gaussian_direction(rng, dim)
                    .into_iter()
                    .map(|v| r * v)
                    .collect()
            }
        })
        .collect()
}

/// One row per sample: the coordinates followed by the label.
pub fn write_csv<W: Write>(samples: &[LabeledSample], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for s in samples {
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        row.push(s.y.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
