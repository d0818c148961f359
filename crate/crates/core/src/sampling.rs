//! Seedable Gaussian perturbations and perturbed control batches.
//!
//! Each sample `k` owns ChaCha8 stream `k` under key `seed`. Within a stream,
//! entry `(t, j)` is produced by Box–Muller (cosine branch) from exactly two
//! consecutive 64-bit words, so its value depends only on `(seed, k, t, j)`.
//! Samples are generated in parallel; the result does not depend on the
//! thread count or scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};

/// A row-major `horizon × dim` control sequence (`U` in MPPI).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    horizon: usize,
    dim: usize,
    values: Vec<f64>,
}

impl ControlSequence {
    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self {
            horizon,
            dim,
            values: vec![0.0; horizon * dim],
        }
    }

    pub fn from_values(horizon: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        check_dim("control sequence", horizon * dim, values.len())?;
        Ok(Self {
            horizon,
            dim,
            values,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Control at step `t`.
    pub fn at(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// Drops the first entry and appends `tail`.
    pub fn shifted(&self, tail: &[f64]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        values.extend_from_slice(&self.values[self.dim.min(self.values.len())..]);
        values.extend_from_slice(tail);
        Self {
            horizon: self.horizon,
            dim: self.dim,
            values,
        }
    }
}

/// `K × N × m` i.i.d. zero-mean Gaussian perturbations (`ε`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTensor {
    samples: usize,
    horizon: usize,
    dim: usize,
    seed: u64,
    sigma: Vec<f64>,
    values: Vec<f64>,
}

impl NoiseTensor {
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Flat row-major values, sample-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, t: usize, j: usize) -> f64 {
        self.values[(k * self.horizon + t) * self.dim + j]
    }

    /// The `N × m` block of sample `k`.
    pub fn sample(&self, k: usize) -> &[f64] {
        let len = self.horizon * self.dim;
        &self.values[k * len..(k + 1) * len]
    }
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53;
    let u2 = (rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Draws a `samples × horizon × dim` tensor with per-dimension std `sigma`.
pub fn draw_noise(
    seed: u64,
    samples: usize,
    horizon: usize,
    dim: usize,
    sigma: &[f64],
) -> Result<NoiseTensor> {
    if samples == 0 || horizon == 0 || dim == 0 {
        return Err(Error::InvalidParameter(
            "noise tensor dimensions must all be >= 1".into(),
        ));
    }
    check_dim("noise sigma", dim, sigma.len())?;
    if let Some(bad) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {bad}")));
    }
    let block = horizon * dim;
    let mut values = vec![0.0; samples * block];
    values
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(k, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            for (idx, v) in chunk.iter_mut().enumerate() {
                *v = sigma[idx % dim] * standard_normal(&mut rng);
            }
        });
    Ok(NoiseTensor {
        samples,
        horizon,
        dim,
        seed,
        sigma: sigma.to_vec(),
        values,
    })
}

/// Perturbed controls `v = U_init + ε` together with the noise and base.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    controls: Vec<f64>,
    noises: Vec<f64>,
    base: ControlSequence,
    samples: usize,
}

impl SampleBatch {
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn horizon(&self) -> usize {
        self.base.horizon()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &ControlSequence {
        &self.base
    }

    /// Flat `K × N × m` controls.
    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    /// Flat `K × N × m` perturbations; after refinement these are
    /// `controls − base`.
    pub fn noises(&self) -> &[f64] {
        &self.noises
    }

    pub fn sample_controls(&self, k: usize) -> &[f64] {
        let len = self.horizon() * self.dim();
        &self.controls[k * len..(k + 1) * len]
    }

    /// Replaces the controls and re-derives the perturbations from the base.
    pub(crate) fn with_refined_controls(&self, controls: Vec<f64>) -> Self {
        let block = self.base.values().len();
        let noises = controls
            .chunks_exact(block)
            .flat_map(|c| c.iter().zip(self.base.values()).map(|(v, b)| v - b))
            .collect();
        Self {
            controls,
            noises,
            base: self.base.clone(),
            samples: self.samples,
        }
    }
}

/// `v^k = base + ε^k` for every sample.
pub fn perturb(base: &ControlSequence, noise: &NoiseTensor) -> Result<SampleBatch> {
    check_dim("perturb horizon", base.horizon(), noise.horizon())?;
    check_dim("perturb control dim", base.dim(), noise.dim())?;
    let controls = noise
        .values()
        .chunks_exact(base.values().len())
        .flat_map(|eps| eps.iter().zip(base.values()).map(|(e, b)| b + e))
        .collect();
    Ok(SampleBatch {
        controls,
        noises: noise.values().to_vec(),
        base: base.clone(),
        samples: noise.samples(),
    })
}

/// Mixes an episode seed with a step index into the seed of that step's
/// noise draw (SplitMix64 finalizer).
pub fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = draw_noise(7, 13, 5, 2, &[1.0, 3.0]).unwrap();
        let b = draw_noise(7, 13, 5, 2, &[1.0, 3.0]).unwrap();
        assert_eq!(a, b);
        let c = draw_noise(8, 13, 5, 2, &[1.0, 3.0]).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn entry_depends_only_on_its_indices() {
        let small = draw_noise(99, 3, 4, 1, &[1.0]).unwrap();
        let big = draw_noise(99, 10, 8, 1, &[1.0]).unwrap();
        for k in 0..3 {
            for t in 0..4 {
                assert_eq!(small.get(k, t, 0), big.get(k, t, 0));
            }
        }
    }

    #[test]
    fn tiny_sigma_gives_near_zero_noise() {
        let n = draw_noise(1, 50, 20, 1, &[1e-12]).unwrap();
        assert!(n.values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn moments_converge() {
        let k = 100_000;
        let n = draw_noise(2024, k, 1, 1, &[2.0]).unwrap();
        let mean = n.values().iter().sum::<f64>() / k as f64;
        let var = n.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        assert!(mean.abs() < 3.0 * 2.0 / (k as f64).sqrt(), "mean {mean}");
        assert!((var.sqrt() - 2.0).abs() < 0.02 * 2.0, "std {}", var.sqrt());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(draw_noise(0, 0, 1, 1, &[1.0]).is_err());
        assert!(draw_noise(0, 1, 1, 1, &[0.0]).is_err());
        assert!(draw_noise(0, 1, 1, 1, &[-1.0]).is_err());
        assert!(draw_noise(0, 1, 1, 2, &[1.0]).is_err());
    }

    #[test]
    fn perturb_adds_elementwise() {
        let base = ControlSequence::from_values(3, 2, vec![1.0, -1.0, 0.5, 2.0, 0.0, 3.0]).unwrap();
        let noise = draw_noise(5, 4, 3, 2, &[0.7, 1.3]).unwrap();
        let batch = perturb(&base, &noise).unwrap();
        for k in 0..4 {
            for t in 0..3 {
                for j in 0..2 {
                    let v = batch.sample_controls(k)[t * 2 + j];
                    assert_eq!(v, base.at(t)[j] + noise.get(k, t, j));
                }
            }
        }
        assert_eq!(batch.noises(), noise.values());
        assert_eq!(batch.base(), &base);
    }

    #[test]
    fn perturb_zero_cases() {
        let noise = draw_noise(5, 2, 3, 1, &[1.0]).unwrap();
        let zero_base = ControlSequence::zeros(3, 1);
        assert_eq!(perturb(&zero_base, &noise).unwrap().controls(), noise.values());

        let base = ControlSequence::from_values(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let zero_noise = NoiseTensor {
            values: vec![0.0; 6],
            ..noise.clone()
        };
        let batch = perturb(&base, &zero_noise).unwrap();
        assert_eq!(batch.sample_controls(1), base.values());
        assert!(perturb(&ControlSequence::zeros(2, 1), &noise).is_err());
    }

    #[test]
    fn shift_appends_tail() {
        let seq = ControlSequence::from_values(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(seq.shifted(&[0.0]).values(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn refined_noise_is_controls_minus_base() {
        let base = ControlSequence::from_values(2, 1, vec![1.0, 2.0]).unwrap();
        let batch = perturb(&base, &draw_noise(3, 2, 2, 1, &[1.0]).unwrap()).unwrap();
        let refined = batch.with_refined_controls(vec![1.5, 2.5, 0.0, 4.0]);
        assert_eq!(refined.noises(), &[0.5, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn step_seeds_differ() {
        assert_ne!(step_seed(1, 0), step_seed(1, 1));
        assert_ne!(step_seed(1, 0), step_seed(2, 0));
        assert_eq!(step_seed(42, 17), step_seed(42, 17));
    }
}
