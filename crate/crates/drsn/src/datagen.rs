//! Synthetic speckled-target data.
//!
//! Each sample is a convex-ish bright region (a randomly oriented ellipse
//! with a harmonically perturbed radius) on a darker background, multiplied
//! by per-pixel gamma speckle with unit mean, the standard multiplicative
//! noise model for coherent imaging. The mask is the exact clean region.

use crate::error::{Error, Result};
use crate::model::SegSample;
use crate::rng::SplitMix64;
use crate::scalar::{rf, Real};
use crate::tensor::Tensor4;

/// Parameters of the synthetic dataset.
#[derive(Clone, Copy, Debug)]
pub struct SynthSpec {
    pub count: usize,
    /// Square image side length.
    pub size: usize,
    pub seed: u64,
    /// Clean intensity inside the target.
    pub mu_target: f64,
    /// Clean intensity of the background.
    pub mu_background: f64,
    /// Number of looks: the gamma shape of the speckle (mean stays 1).
    pub looks: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            count: 1,
            size: 80,
            seed: 0,
            mu_target: 0.7,
            mu_background: 0.2,
            looks: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Input("sample count must be >= 1".into()));
        }
        if self.size < 16 {
            return Err(Error::Input(format!(
                "image size must be >= 16, got {}",
                self.size
            )));
        }
        if !(self.mu_target > self.mu_background && self.mu_background > 0.0) {
            return Err(Error::Input(format!(
                "need mu_target > mu_background > 0, got {} and {}",
                self.mu_target, self.mu_background
            )));
        }
        if self.looks == 0 {
            return Err(Error::Input("looks must be >= 1".into()));
        }
        Ok(())
    }
}

struct Shape {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    phi: f64,
    eps1: f64,
    psi1: f64,
    eps2: f64,
    psi2: f64,
}

impl Shape {
    fn draw(size: f64, rng: &mut SplitMix64) -> Shape {
        Shape {
            cy: rng.uniform(0.3, 0.7) * size,
            cx: rng.uniform(0.3, 0.7) * size,
            a: rng.uniform(0.15, 0.33) * size,
            b: rng.uniform(0.15, 0.33) * size,
            phi: rng.uniform(0.0, std::f64::consts::PI),
            eps1: rng.uniform(0.0, 0.15),
            psi1: rng.uniform(0.0, std::f64::consts::TAU),
            eps2: rng.uniform(0.0, 0.10),
            psi2: rng.uniform(0.0, std::f64::consts::TAU),
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        let u = c as f64 + 0.5 - self.cx;
        let v = r as f64 + 0.5 - self.cy;
        let xr = u * self.phi.cos() + v * self.phi.sin();
        let yr = -u * self.phi.sin() + v * self.phi.cos();
        let rho = ((xr / self.a).powi(2) + (yr / self.b).powi(2)).sqrt();
        let theta = yr.atan2(xr);
        let boundary = 1.0
            + self.eps1 * (2.0 * theta + self.psi1).cos()
            + self.eps2 * (3.0 * theta + self.psi2).cos();
        rho <= boundary
    }
}

/// Unit-mean gamma draw with integer shape `looks`: the mean of `looks`
/// standard exponentials.
fn speckle_gain(looks: u32, rng: &mut SplitMix64) -> f64 {
    let mut total = 0.0;
    for _ in 0..looks {
        total += -(1.0 - rng.next_f64()).ln();
    }
    total / looks as f64
}

/// Generates the dataset; a pure function of the spec.
pub fn generate_synthetic<R: Real>(spec: &SynthSpec) -> Result<Vec<SegSample<R>>> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let size = spec.size;
    let total_px = (size * size) as f64;
    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        // Redraw until the target covers 5..40% of the image.
        let mut mask = vec![false; size * size];
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > 10_000 {
                return Err(Error::Input(
                    "could not place a target within the area bounds".into(),
                ));
            }
            let shape = Shape::draw(size as f64, &mut rng);
            let mut area = 0usize;
            for r in 0..size {
                for c in 0..size {
                    let inside = shape.contains(r, c);
                    mask[r * size + c] = inside;
                    area += inside as usize;
                }
            }
            let frac = area as f64 / total_px;
            if (0.05..=0.40).contains(&frac) {
                break;
            }
        }
        let mut image = Vec::with_capacity(size * size);
        let mut mask_vals = Vec::with_capacity(size * size);
        for &inside in &mask {
            let clean = if inside {
                spec.mu_target
            } else {
                spec.mu_background
            };
            let value = (clean * speckle_gain(spec.looks, &mut rng)).clamp(0.0, 1.0);
            image.push(rf::<R>(value));
            mask_vals.push(if inside { R::one() } else { R::zero() });
        }
        out.push(SegSample::new(
            Tensor4::from_vec(1, 1, size, size, image)?,
            Tensor4::from_vec(1, 1, size, size, mask_vals)?,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec {
            count: 3,
            size: 32,
            seed: 11,
            ..Default::default()
        };
        let a: Vec<SegSample> = generate_synthetic(&spec).unwrap();
        let b: Vec<SegSample> = generate_synthetic(&spec).unwrap();
        for (s, t) in a.iter().zip(&b) {
            assert_eq!(s.image().data(), t.image().data());
            assert_eq!(s.mask().data(), t.mask().data());
        }
    }

    #[test]
    fn foreground_fraction_within_bounds() {
        let spec = SynthSpec {
            count: 50,
            size: 40,
            seed: 5,
            ..Default::default()
        };
        for sample in generate_synthetic::<f64>(&spec).unwrap() {
            let frac = sample.mask().sum() / (40.0 * 40.0);
            assert!((0.05..=0.40).contains(&frac), "fraction {frac}");
        }
    }

    #[test]
    fn target_brighter_than_background() {
        let spec = SynthSpec {
            count: 100,
            size: 32,
            seed: 99,
            ..Default::default()
        };
        for sample in generate_synthetic::<f64>(&spec).unwrap() {
            let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0u32, 0.0, 0u32);
            for (v, m) in sample.image().data().iter().zip(sample.mask().data()) {
                if *m == 1.0 {
                    in_sum += v;
                    in_n += 1;
                } else {
                    out_sum += v;
                    out_n += 1;
                }
            }
            assert!(in_sum / in_n as f64 > out_sum / out_n as f64);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec {
            count: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            size: 8,
            count: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            mu_target: 0.1,
            mu_background: 0.2,
            count: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            looks: 0,
            count: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn multi_look_speckle_is_tamer() {
        // More looks concentrate the gain around 1.
        let var = |looks: u32, seed: u64| {
            let mut rng = SplitMix64::new(seed);
            let draws: Vec<f64> = (0..4000).map(|_| speckle_gain(looks, &mut rng)).collect();
            let mean: f64 = draws.iter().sum::<f64>() / draws.len() as f64;
            assert!((mean - 1.0).abs() < 0.1, "mean {mean}");
            draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64
        };
        assert!(var(4, 1) < var(1, 2));
    }
}
