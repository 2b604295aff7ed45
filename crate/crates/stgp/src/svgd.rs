//! Stein variational gradient descent over particle copies.
//!
//! Each particle is a full flat parameter vector. One update moves particle
//! i along φ(θ_i) = (1/M)·Σ_j [κ(θ_j, θ_i)·∇log p(θ_j) +
//! (θ_i − θ_j)·κ(θ_j, θ_i)/h²] with the RBF kernel
//! κ = exp(−‖Δ‖²/(2h²)) and the median heuristic bandwidth
//! h² = median(pairwise ‖Δ‖²)/(2·ln(M+1)). The attraction term is a
//! kernel-smoothed gradient ascent; the second term repels particles from
//! each other, which is what turns M copies of the same objective into an
//! approximate posterior sample. With M = 1 both kernel sums collapse and
//! the update is exactly preconditioned gradient ascent.
//!
//! The ascent direction can be fed through either plain SGD or Adam
//! moments; decoupled weight decay (never applied to exempted coordinate
//! ranges) and frozen coordinate ranges are supported.

use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::{c, Scalar};

/// Preconditioner applied to the ascent direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgdConfig<S> {
    pub step_size: S,
    pub epochs: usize,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub adam_beta1: S,
    pub adam_beta2: S,
    pub adam_eps: S,
    /// Decoupled weight decay coefficient (0 disables it).
    pub weight_decay: S,
    /// Coordinate ranges exempt from weight decay.
    pub decay_exempt: Vec<Range<usize>>,
    /// Coordinate ranges whose updates are masked to zero.
    pub frozen: Vec<Range<usize>>,
    /// Per-epoch multiplicative step-size factor (1 keeps it constant).
    pub lr_decay: S,
    pub seed: u64,
}

impl<S: Scalar> SvgdConfig<S> {
    pub fn new(step_size: S, epochs: usize, batch_size: usize, seed: u64) -> Self {
        SvgdConfig {
            step_size,
            epochs,
            batch_size,
            optimizer: Optimizer::Adam,
            adam_beta1: c(0.9),
            adam_beta2: c(0.999),
            adam_eps: c(1e-8),
            weight_decay: S::zero(),
            decay_exempt: Vec::new(),
            frozen: Vec::new(),
            lr_decay: S::one(),
            seed,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_size > S::zero()) || !self.step_size.is_finite() {
            return Err(Error::Parameter(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(b >= S::zero() && b < S::one()) {
                return Err(Error::Parameter(format!("adam {name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > S::zero()) {
            return Err(Error::Parameter("adam epsilon must be positive".into()));
        }
        if !(self.weight_decay >= S::zero()) {
            return Err(Error::Parameter("weight decay must be nonnegative".into()));
        }
        if !(self.lr_decay > S::zero()) {
            return Err(Error::Parameter("step-size decay factor must be positive".into()));
        }
        for r in self.frozen.iter().chain(&self.decay_exempt) {
            if r.end > dim || r.start > r.end {
                return Err(Error::Shape(format!(
                    "coordinate range {r:?} out of bounds for dimension {dim}"
                )));
            }
        }
        Ok(())
    }
}

/// The objective SVGD ascends. `particle_index` lets implementations carry
/// frozen per-particle state (for example a fixed random projection); toy
/// targets ignore it.
pub trait LogJointTarget<S: Scalar>: Sync {
    /// Flat parameter dimension.
    fn dim(&self) -> usize;

    /// Number of observations (0 disables minibatching).
    fn data_len(&self) -> usize;

    /// Log density (up to a constant) and its gradient at `theta`.
    fn value_and_grad(
        &self,
        particle_index: usize,
        theta: &[S],
        batch: Option<&[usize]>,
    ) -> Result<(S, Vec<S>)>;
}

/// Squared-distance median bandwidth: h² = median‖Δ‖²/(2·ln(M+1)), with a
/// 1e-12 floor so coincident particles stay finite.
pub fn median_bandwidth_sq<S: Scalar>(particles: &[Vec<S>]) -> S {
    let m = particles.len();
    let floor = c::<S>(1e-12);
    if m < 2 {
        return floor;
    }
    let mut d2 = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            let mut s = S::zero();
            for (a, b) in particles[i].iter().zip(&particles[j]) {
                let d = *a - *b;
                s += d * d;
            }
            d2.push(s);
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = d2.len();
    let median = if n % 2 == 1 {
        d2[n / 2]
    } else {
        (d2[n / 2 - 1] + d2[n / 2]) / c(2.0)
    };
    let denom = (S::of(m as f64) + S::one()).ln() * c(2.0);
    (median / denom).max(floor)
}

// Row-major M x M kernel matrix κ_ij = exp(−‖θ_i − θ_j‖²/(2 h²)).
fn kernel_matrix<S: Scalar>(particles: &[Vec<S>], bandwidth_sq: S) -> Vec<S> {
    let m = particles.len();
    let mut k = vec![S::one(); m * m];
    let two_h2 = c::<S>(2.0) * bandwidth_sq;
    for i in 0..m {
        for j in (i + 1)..m {
            let mut s = S::zero();
            for (a, b) in particles[i].iter().zip(&particles[j]) {
                let d = *a - *b;
                s += d * d;
            }
            let v = (-s / two_h2).exp();
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    k
}

/// Stein update directions φ for every particle given per-particle
/// gradients of the log target.
pub fn svgd_directions<S: Scalar>(
    particles: &[Vec<S>],
    grads: &[Vec<S>],
    bandwidth_sq: S,
) -> Result<Vec<Vec<S>>> {
    let m = particles.len();
    if grads.len() != m {
        return Err(Error::Shape(format!("{m} particles but {} gradients", grads.len())));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let dim = particles[0].len();
    if particles.iter().any(|p| p.len() != dim) || grads.iter().any(|g| g.len() != dim) {
        return Err(Error::Shape("particle/gradient dimensions are inconsistent".into()));
    }
    let kmat = kernel_matrix(particles, bandwidth_sq);
    let minv = S::one() / S::of(m as f64);
    let phi: Vec<Vec<S>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![S::zero(); dim];
            for j in 0..m {
                let kji = kmat[j * m + i];
                let repel = kji / bandwidth_sq;
                let (pj, gi) = (&particles[j], &grads[j]);
                let pi = &particles[i];
                for d in 0..dim {
                    out[d] += kji * gi[d] + (pi[d] - pj[d]) * repel;
                }
            }
            for v in &mut out {
                *v *= minv;
            }
            out
        })
        .collect();
    Ok(phi)
}

/// One epoch's summary in the training trace.
#[derive(Debug, Clone)]
pub struct TraceRow<S> {
    pub epoch: usize,
    /// Mean over particles of the (minibatch-rescaled) log joint at the
    /// last step of the epoch.
    pub mean_value: S,
}

fn mask_frozen<S: Scalar>(phi: &mut [Vec<S>], frozen: &[Range<usize>]) {
    for p in phi.iter_mut() {
        for r in frozen {
            for v in &mut p[r.clone()] {
                *v = S::zero();
            }
        }
    }
}

fn in_ranges(idx: usize, ranges: &[Range<usize>]) -> bool {
    ranges.iter().any(|r| r.contains(&idx))
}

/// Run SVGD in place over `particles`, returning per-epoch trace rows.
/// `epoch_hook` fires after each epoch with (epoch, mean value, particles).
pub fn train<S: Scalar, T: LogJointTarget<S>>(
    target: &T,
    particles: &mut [Vec<S>],
    config: &SvgdConfig<S>,
    mut epoch_hook: impl FnMut(usize, S, &[Vec<S>]),
) -> Result<Vec<TraceRow<S>>> {
    let dim = target.dim();
    config.validate(dim)?;
    if particles.is_empty() {
        return Err(Error::Parameter("training needs at least one particle".into()));
    }
    if particles.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape(format!("all particles must have dimension {dim}")));
    }
    let m = particles.len();
    let n = target.data_len();
    let full_batch = config.batch_size == 0 || n == 0 || config.batch_size >= n;

    let mut adam_m = vec![vec![S::zero(); dim]; m];
    let mut adam_v = vec![vec![S::zero(); dim]; m];
    let mut step_count = 0u64;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut lr = config.step_size;

    for epoch in 0..config.epochs {
        // Deterministic epoch shuffle; chunks of batch_size, tail included.
        let batches: Vec<Option<Vec<usize>>> = if full_batch {
            vec![None]
        } else {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = rng_from(derive_seed(config.seed, "epoch-perm", epoch as u64));
            perm.shuffle(&mut rng);
            perm.chunks(config.batch_size).map(|chk| Some(chk.to_vec())).collect()
        };

        let mut last_mean = S::zero();
        for batch in &batches {
            step_count += 1;
            let batch_ref = batch.as_deref();
            let results: Vec<(S, Vec<S>)> = particles
                .par_iter()
                .enumerate()
                .map(|(i, p)| target.value_and_grad(i, p, batch_ref))
                .collect::<Result<Vec<_>>>()?;
            for (i, (v, g)) in results.iter().enumerate() {
                if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "particle {i} diverged at epoch {epoch}, step {step_count}"
                    )));
                }
            }
            last_mean = results.iter().map(|(v, _)| *v).sum::<S>() / S::of(m as f64);
            let grads: Vec<Vec<S>> = results.into_iter().map(|(_, g)| g).collect();
            let h2 = median_bandwidth_sq(particles);
            let mut phi = svgd_directions(particles, &grads, h2)?;
            mask_frozen(&mut phi, &config.frozen);

            match config.optimizer {
                Optimizer::Sgd => {
                    for (p, f) in particles.iter_mut().zip(&phi) {
                        for (x, d) in p.iter_mut().zip(f) {
                            *x += lr * *d;
                        }
                    }
                }
                Optimizer::Adam => {
                    let b1 = config.adam_beta1;
                    let b2 = config.adam_beta2;
                    let t = S::of(step_count as f64);
                    let corr1 = S::one() - b1.powf(t);
                    let corr2 = S::one() - b2.powf(t);
                    for ((p, f), (ms, vs)) in particles
                        .iter_mut()
                        .zip(&phi)
                        .zip(adam_m.iter_mut().zip(adam_v.iter_mut()))
                    {
                        for d in 0..dim {
                            ms[d] = b1 * ms[d] + (S::one() - b1) * f[d];
                            vs[d] = b2 * vs[d] + (S::one() - b2) * f[d] * f[d];
                            let mhat = ms[d] / corr1;
                            let vhat = vs[d] / corr2;
                            p[d] += lr * mhat / (vhat.sqrt() + config.adam_eps);
                        }
                    }
                }
            }

            if config.weight_decay > S::zero() {
                let shrink = S::one() - lr * config.weight_decay;
                for p in particles.iter_mut() {
                    for d in 0..dim {
                        if !in_ranges(d, &config.decay_exempt) && !in_ranges(d, &config.frozen)
                        {
                            p[d] *= shrink;
                        }
                    }
                }
            }
        }
        trace.push(TraceRow { epoch, mean_value: last_mean });
        epoch_hook(epoch, last_mean, particles);
        lr *= config.lr_decay;
    }
    Ok(trace)
}
