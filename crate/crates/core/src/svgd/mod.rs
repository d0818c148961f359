//! Stein variational gradient descent on the control particles of a single
//! timestep.
//!
//! With particles `v^1..v^K`, single-step cost gradients `g_j = ∇L(v^j)` and
//! kernel `k`, the update direction is
//!
//! ```text
//! φ(v^i) = (1/K) Σ_j [ k(v^j, v^i)·(−α g_j) + ∇_{v^j} k(v^j, v^i) ]
//! ```
//!
//! and each iteration moves `v^i ← v^i + step_size·φ(v^i)`.

mod pairwise;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Named bandwidth rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `2σ² = median(‖v^i − v^j‖²) / ln K`, recomputed every iteration.
    Median,
}

/// Kernel length scale `σ_k`: a number, or `"median"` in config files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Rule(BandwidthRule),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Fixed(1.0)
    }
}

impl Bandwidth {
    pub const MEDIAN: Bandwidth = Bandwidth::Rule(BandwidthRule::Median);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvgdConfig {
    /// Iterations `M` per timestep; `0` disables refinement.
    pub iterations: usize,
    pub step_size: f64,
    pub bandwidth: Bandwidth,
    /// Cost-likelihood temperature: particles target `exp(−α L)`.
    pub alpha: f64,
    /// `exp(−‖d‖²/2σ²)` when true, `exp(−‖d‖/2σ²)` otherwise.
    pub use_squared_norm: bool,
    /// Per-particle cap on `‖∇L‖`.
    pub grad_clip: Option<f64>,
}

impl Default for SvgdConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            step_size: 0.05,
            bandwidth: Bandwidth::default(),
            alpha: 1.0,
            use_squared_norm: true,
            grad_clip: None,
        }
    }
}

impl SvgdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.iterations > 0 && !positive(self.step_size) {
            return Err(Error::InvalidParameter(format!(
                "svgd step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if !positive(self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "svgd alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if let Bandwidth::Fixed(s) = self.bandwidth {
            if !positive(s) {
                return Err(Error::InvalidParameter(format!(
                    "svgd bandwidth must be > 0, got {s}"
                )));
            }
        }
        if let Some(c) = self.grad_clip {
            if !positive(c) {
                return Err(Error::InvalidParameter(format!(
                    "svgd grad_clip must be > 0, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// RBF kernel `exp(−d / 2σ²)` with `d = ‖a − b‖²` (or `‖a − b‖`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfKernel {
    sigma: f64,
    squared: bool,
}

impl RbfKernel {
    pub fn new(sigma: f64, use_squared_norm: bool) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be > 0, got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            squared: use_squared_norm,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim("kernel argument", a.len(), b.len())?;
        let d2 = sq_dist(a, b);
        let d = if self.squared { d2 } else { d2.sqrt() };
        Ok((-d / (2.0 * self.sigma * self.sigma)).exp())
    }

    /// `∇_a k(a, b)`. In unsquared mode the kernel has a cusp at `a = b`;
    /// the zero vector is returned there.
    pub fn grad_wrt_first(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let kv = self.eval(a, b)?;
        let s2 = self.sigma * self.sigma;
        let scale = if self.squared {
            -kv / s2
        } else {
            let norm = sq_dist(a, b).sqrt();
            if norm == 0.0 {
                warn!("unsquared kernel gradient requested at coincident points; using 0");
                return Ok(vec![0.0; a.len()]);
            }
            -kv / (2.0 * s2 * norm)
        };
        Ok(a.iter().zip(b).map(|(x, y)| scale * (x - y)).collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `K × m` control particles of one timestep and their cost gradients,
/// both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    count: usize,
    dim: usize,
    particles: Vec<f64>,
    grads: Vec<f64>,
}

impl ParticleSet {
    pub fn new(count: usize, dim: usize, particles: Vec<f64>, grads: Vec<f64>) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "particle set needs at least one particle of dimension >= 1".into(),
            ));
        }
        check_dim("particles", count * dim, particles.len())?;
        check_dim("particle gradients", count * dim, grads.len())?;
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("particles"));
        }
        Ok(Self {
            count,
            dim,
            particles,
            grads,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }
}

/// Reusable buffers for repeated Stein-direction evaluations.
#[derive(Debug, Default)]
pub(crate) struct SteinWorkspace {
    x: Vec<f64>,
    attract: Vec<f64>,
    phi: Vec<f64>,
    row: Vec<f64>,
    pair_d2: Vec<f64>,
    out: Vec<f64>,
}

impl SteinWorkspace {
    /// Row-major `K × m` direction for row-major particles and gradients.
    pub(crate) fn direction(
        &mut self,
        k: usize,
        m: usize,
        particles: &[f64],
        grads: &[f64],
        cfg: &SvgdConfig,
    ) -> Result<&[f64]> {
        if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index: idx / m });
        }
        self.x.resize(k * m, 0.0);
        self.attract.resize(k * m, 0.0);
        self.phi.resize(k * m, 0.0);
        self.row.resize(k, 0.0);
        self.out.resize(k * m, 0.0);
        for i in 0..k {
            let g = &grads[i * m..(i + 1) * m];
            let scale = match cfg.grad_clip {
                Some(c) => {
                    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > c {
                        c / norm
                    } else {
                        1.0
                    }
                }
                None => 1.0,
            };
            for c in 0..m {
                self.x[c * k + i] = particles[i * m + c];
                self.attract[c * k + i] = -cfg.alpha * (scale * g[c]);
            }
        }
        let sigma2 = match cfg.bandwidth {
            Bandwidth::Fixed(s) => s * s,
            Bandwidth::Rule(BandwidthRule::Median) => self.median_sigma2(k, m, particles),
        };
        if cfg.use_squared_norm {
            pairwise::accumulate(
                k,
                m,
                &self.x,
                &self.attract,
                1.0 / sigma2,
                &mut self.phi,
                &mut self.row,
            );
        } else {
            self.accumulate_unsquared(k, m, sigma2);
        }
        let inv_k = 1.0 / k as f64;
        for i in 0..k {
            for c in 0..m {
                self.out[i * m + c] = self.phi[c * k + i] * inv_k;
            }
        }
        Ok(&self.out)
    }

    fn median_sigma2(&mut self, k: usize, m: usize, particles: &[f64]) -> f64 {
        if k < 2 {
            return 1.0;
        }
        self.pair_d2.clear();
        for i in 0..k {
            for j in i + 1..k {
                self.pair_d2.push(sq_dist(
                    &particles[i * m..(i + 1) * m],
                    &particles[j * m..(j + 1) * m],
                ));
            }
        }
        let mid = self.pair_d2.len() / 2;
        let (_, med, _) = self.pair_d2.select_nth_unstable_by(mid, f64::total_cmp);
        let h = *med / (k as f64).ln();
        if h > 0.0 {
            0.5 * h
        } else {
            1.0
        }
    }

    fn accumulate_unsquared(&mut self, k: usize, m: usize, sigma2: f64) {
        let inv = 1.0 / (2.0 * sigma2);
        let mut coincident = 0usize;
        self.phi.iter_mut().for_each(|p| *p = 0.0);
        for i in 0..k {
            for j in 0..k {
                let mut d2 = 0.0;
                for c in 0..m {
                    let d = self.x[c * k + j] - self.x[c * k + i];
                    d2 += d * d;
                }
                let norm = d2.sqrt();
                let kv = (-norm * inv).exp();
                if norm == 0.0 && i != j {
                    coincident += 1;
                }
                for c in 0..m {
                    let grad = if norm > 0.0 {
                        -kv * inv * (self.x[c * k + j] - self.x[c * k + i]) / norm
                    } else {
                        0.0
                    };
                    self.phi[c * k + i] += kv * self.attract[c * k + j] + grad;
                }
            }
        }
        if coincident > 0 {
            warn!("unsquared kernel: {coincident} coincident particle pairs, gradient taken as 0");
        }
    }
}

/// Stein direction for every particle, row-major `K × m`.
pub fn stein_direction(set: &ParticleSet, cfg: &SvgdConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut ws = SteinWorkspace::default();
    ws.direction(set.count, set.dim, &set.particles, &set.grads, cfg)
        .map(<[f64]>::to_vec)
}

/// `v ← v + step_size·φ`; returns a new set with the same gradients.
pub fn apply_update(set: &ParticleSet, direction: &[f64], step_size: f64) -> Result<ParticleSet> {
    check_dim("stein direction", set.particles.len(), direction.len())?;
    let particles = set
        .particles
        .iter()
        .zip(direction)
        .map(|(v, d)| step_size.mul_add(*d, *v))
        .collect();
    Ok(ParticleSet {
        particles,
        ..set.clone()
    })
}
