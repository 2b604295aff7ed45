//! The full regression model: latent warp, spectral basis, amplitudes, and
//! hyperparameters in one flat particle vector.
//!
//! A particle stacks [latent-network weights | frequencies (J rows of
//! 3 + p) | cosine amplitudes | sine amplitudes | 7 log hyperparameters].
//! The response surface is Z(x) = Σ_j a_j·cos θ_j + b_j·sin θ_j with
//! θ_j = ω_j·(s1, s2, t, L(s1, s2, t)). The hierarchical prior places an
//! inverse gamma on the weight variance α and on σ², τ²; log-normal priors
//! on ν and the ranges; N(0, α) on latent weights; N(0, σ²/J) on
//! amplitudes; and the spectral multivariate-t law (df = multiplier·ν) on
//! frequencies, so range and smoothness information flows through the
//! sampled frequencies as well as the prior.
//!
//! Everything needed for training is differentiated by hand here:
//! `grad_log_joint` returns the exact gradient of prior + (minibatch
//! rescaled) likelihood with respect to every particle coordinate.

use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::kernels::StPoint;
use crate::latent::{
    inr_backward, inr_forward_cached, init_inr, param_count, Backbone, InrCache, InrConfig,
    InrWeights,
};
use crate::rng::derive_seed;
use crate::scalar::{c, Scalar};
use crate::spectral::{sample_amplitudes, sample_frequencies_with_df};

/// Number of scalar hyperparameters at the tail of a particle.
pub const HYPER_COUNT: usize = 7;
/// Index of ln α (latent weight prior variance) in the hyper block.
pub const H_ALPHA: usize = 0;
/// Index of ln ν (smoothness).
pub const H_NU: usize = 1;
/// Index of ln ρ_s (spatial range).
pub const H_RHO_S: usize = 2;
/// Index of ln ρ_t (temporal range).
pub const H_RHO_T: usize = 3;
/// Index of ln ρ_l (latent range).
pub const H_RHO_L: usize = 4;
/// Index of ln σ² (process variance).
pub const H_SIGMA2: usize = 5;
/// Index of ln τ² (noise variance).
pub const H_TAU2: usize = 6;

// Hyperprior constants.
const ALPHA_SHAPE: f64 = 1.0;
const ALPHA_SCALE: f64 = 0.05;
const LOG_NU_MEAN: f64 = 0.5;
const LOG_NU_VAR: f64 = 0.5;
const LOG_RHO_S_MEAN: f64 = -2.0;
const LOG_RHO_S_VAR: f64 = 1.0;
const LOG_RHO_T_MEAN: f64 = -1.0;
const LOG_RHO_T_VAR: f64 = 0.5;
const LOG_RHO_L_MEAN: f64 = -2.0;
const LOG_RHO_L_VAR: f64 = 1.0;
const VAR_SHAPE: f64 = 0.1;
const VAR_SCALE: f64 = 0.1;

/// Model architecture: basis size, optional latent network, spectral df.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig<S> {
    /// Number of Fourier basis functions J.
    pub basis_count: usize,
    /// Latent coordinate network; `None` trains the stationary model (p = 0).
    pub inr: Option<InrConfig<S>>,
    /// Degrees of freedom of the frequency law as a multiple of ν.
    pub freq_df_multiplier: S,
}

impl<S: Scalar> ModelConfig<S> {
    pub fn new(basis_count: usize, inr: Option<InrConfig<S>>) -> Self {
        ModelConfig { basis_count, inr, freq_df_multiplier: c(2.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_count == 0 {
            return Err(Error::Parameter("basis count must be >= 1".into()));
        }
        if !(self.freq_df_multiplier > S::zero()) || !self.freq_df_multiplier.is_finite() {
            return Err(Error::Parameter(format!(
                "frequency df multiplier must be positive, got {}",
                self.freq_df_multiplier
            )));
        }
        if let Some(inr) = &self.inr {
            inr.validate()?;
        }
        Ok(())
    }

    /// Latent dimension p (0 for the stationary model).
    pub fn latent_dim(&self) -> usize {
        self.inr.as_ref().map_or(0, |i| i.latent_dim)
    }

    /// Frequency row dimension 3 + p.
    pub fn freq_dim(&self) -> usize {
        3 + self.latent_dim()
    }

    pub fn layout(&self) -> ParticleLayout {
        let inr_len = self.inr.as_ref().map_or(0, param_count);
        let freq_dim = self.freq_dim();
        let freq_len = self.basis_count * freq_dim;
        let freq_offset = inr_len;
        let amp_cos_offset = freq_offset + freq_len;
        let amp_sin_offset = amp_cos_offset + self.basis_count;
        let hyper_offset = amp_sin_offset + self.basis_count;
        ParticleLayout {
            inr_len,
            basis_count: self.basis_count,
            freq_dim,
            freq_offset,
            amp_cos_offset,
            amp_sin_offset,
            hyper_offset,
            total: hyper_offset + HYPER_COUNT,
        }
    }
}

/// Offsets of the blocks inside a flat particle vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParticleLayout {
    pub inr_len: usize,
    pub basis_count: usize,
    pub freq_dim: usize,
    pub freq_offset: usize,
    pub amp_cos_offset: usize,
    pub amp_sin_offset: usize,
    pub hyper_offset: usize,
    pub total: usize,
}

impl ParticleLayout {
    pub fn inr_range(&self) -> std::ops::Range<usize> {
        0..self.inr_len
    }

    pub fn freq_range(&self) -> std::ops::Range<usize> {
        self.freq_offset..self.amp_cos_offset
    }

    pub fn amp_cos_range(&self) -> std::ops::Range<usize> {
        self.amp_cos_offset..self.amp_sin_offset
    }

    pub fn amp_sin_range(&self) -> std::ops::Range<usize> {
        self.amp_sin_offset..self.hyper_offset
    }

    pub fn hyper_range(&self) -> std::ops::Range<usize> {
        self.hyper_offset..self.total
    }
}

/// One posterior particle: trainable vector plus the per-particle frozen
/// Gaussian projection (present only for the `ffng` backbone).
#[derive(Debug, Clone, PartialEq)]
pub struct Particle<S> {
    pub theta: Vec<S>,
    pub encoder: Option<Vec<S>>,
}

impl<S: Scalar> Particle<S> {
    /// Log-scale hyperparameters.
    pub fn hypers<'a>(&'a self, layout: &ParticleLayout) -> &'a [S] {
        &self.theta[layout.hyper_range()]
    }

    /// Natural-scale hyperparameters [α, ν, ρ_s, ρ_t, ρ_l, σ², τ²].
    pub fn natural_hypers(&self, layout: &ParticleLayout) -> [S; HYPER_COUNT] {
        let h = self.hypers(layout);
        let mut out = [S::zero(); HYPER_COUNT];
        for (o, v) in out.iter_mut().zip(h) {
            *o = v.exp();
        }
        out
    }
}

/// Default initial log hyperparameters
/// [ln α, ln ν, ln ρ_s, ln ρ_t, ln ρ_l, ln σ², ln τ²].
pub fn default_init_hypers<S: Scalar>() -> [S; HYPER_COUNT] {
    [
        c(0.05f64.ln()),
        c(0.5),
        c(-2.0),
        c(-1.0),
        c(-2.0),
        S::zero(),
        c(0.25f64.ln()),
    ]
}

fn check_particle<S: Scalar>(cfg: &ModelConfig<S>, particle: &Particle<S>) -> Result<ParticleLayout> {
    cfg.validate()?;
    let layout = cfg.layout();
    if particle.theta.len() != layout.total {
        return Err(Error::Shape(format!(
            "particle has {} coordinates, architecture needs {}",
            particle.theta.len(),
            layout.total
        )));
    }
    let wants_encoder =
        matches!(&cfg.inr, Some(i) if i.backbone == Backbone::FourierGaussian);
    match (&particle.encoder, wants_encoder) {
        (Some(enc), true) => {
            let e = cfg.inr.as_ref().unwrap().ffng_encode_dim;
            if enc.len() != 3 * e {
                return Err(Error::Shape(format!(
                    "frozen projection has {} entries, expected {}",
                    enc.len(),
                    3 * e
                )));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::Shape(
                "particle carries a frozen projection but the backbone takes none".into(),
            ))
        }
        (None, true) => {
            return Err(Error::Shape(
                "gaussian-encoding particle is missing its frozen projection".into(),
            ))
        }
    }
    Ok(layout)
}

/// Draw a fresh particle at the given initial log hyperparameters:
/// latent weights N(0, α), frequencies from the spectral t law at the
/// initial ranges, amplitudes N(0, σ²/J).
pub fn init_particle_with_hypers<S: Scalar>(
    cfg: &ModelConfig<S>,
    hypers: &[S; HYPER_COUNT],
    seed: u64,
) -> Result<Particle<S>> {
    cfg.validate()?;
    let layout = cfg.layout();
    let alpha = hypers[H_ALPHA].exp();
    let nu = hypers[H_NU].exp();
    let rho_s = hypers[H_RHO_S].exp();
    let rho_t = hypers[H_RHO_T].exp();
    let rho_l = hypers[H_RHO_L].exp();
    let sigma2 = hypers[H_SIGMA2].exp();
    let mut theta = Vec::with_capacity(layout.total);
    let mut encoder = None;
    if let Some(inr_cfg) = &cfg.inr {
        let w = init_inr(inr_cfg, alpha, derive_seed(seed, "inr", 0))?;
        theta.extend_from_slice(&w.params);
        encoder = w.encoder;
    }
    let freq_params = crate::kernels::CovarianceParams::new(
        sigma2,
        nu,
        rho_s,
        rho_t,
        rho_l,
        S::zero(),
    )?;
    let freqs = sample_frequencies_with_df(
        cfg.basis_count,
        &freq_params,
        cfg.latent_dim(),
        cfg.freq_df_multiplier * nu,
        derive_seed(seed, "freq", 0),
    )?;
    theta.extend_from_slice(freqs.as_flat());
    let amps = sample_amplitudes(cfg.basis_count, sigma2, derive_seed(seed, "amp", 0))?;
    theta.extend_from_slice(&amps.cos);
    theta.extend_from_slice(&amps.sin);
    theta.extend_from_slice(hypers);
    debug_assert_eq!(theta.len(), layout.total);
    Ok(Particle { theta, encoder })
}

/// Draw a fresh particle at the default initial hyperparameters.
pub fn init_particle<S: Scalar>(cfg: &ModelConfig<S>, seed: u64) -> Result<Particle<S>> {
    init_particle_with_hypers(cfg, &default_init_hypers(), seed)
}

// Borrowed latent-network weights for a particle.
fn inr_view<S: Scalar>(
    cfg: &ModelConfig<S>,
    particle: &Particle<S>,
    layout: &ParticleLayout,
) -> Option<InrWeights<S>> {
    cfg.inr.as_ref().map(|_| InrWeights {
        params: particle.theta[layout.inr_range()].to_vec(),
        encoder: particle.encoder.clone(),
    })
}

// One point's forward evaluation, optionally keeping what backprop needs.
struct PointEval<S> {
    z: S,
    expanded: Vec<S>,
    cos: Vec<S>,
    sin: Vec<S>,
    cache: Option<InrCache<S>>,
}

fn eval_point<S: Scalar>(
    cfg: &ModelConfig<S>,
    layout: &ParticleLayout,
    theta: &[S],
    inr_w: Option<&InrWeights<S>>,
    point: &StPoint<S>,
    keep: bool,
) -> Result<PointEval<S>> {
    let mut expanded = Vec::with_capacity(layout.freq_dim);
    expanded.push(point.s[0]);
    expanded.push(point.s[1]);
    expanded.push(point.t);
    let mut cache = None;
    if let (Some(inr_cfg), Some(w)) = (&cfg.inr, inr_w) {
        if keep {
            let (lat, cc) = inr_forward_cached(inr_cfg, w, point)?;
            expanded.extend_from_slice(&lat);
            cache = Some(cc);
        } else {
            expanded.extend_from_slice(&crate::latent::inr_forward(inr_cfg, w, point)?);
        }
    }
    let j = layout.basis_count;
    let dim = layout.freq_dim;
    let freqs = &theta[layout.freq_range()];
    let amp_cos = &theta[layout.amp_cos_range()];
    let amp_sin = &theta[layout.amp_sin_range()];
    let mut z = S::zero();
    let mut cos = Vec::with_capacity(if keep { j } else { 0 });
    let mut sin = Vec::with_capacity(if keep { j } else { 0 });
    for b in 0..j {
        let row = &freqs[b * dim..(b + 1) * dim];
        let mut theta_angle = S::zero();
        for (w, x) in row.iter().zip(&expanded) {
            theta_angle += *w * *x;
        }
        let (cv, sv) = (theta_angle.cos(), theta_angle.sin());
        z += amp_cos[b] * cv + amp_sin[b] * sv;
        if keep {
            cos.push(cv);
            sin.push(sv);
        }
    }
    Ok(PointEval { z, expanded, cos, sin, cache })
}

/// Model surface Z at several points.
pub fn forward_many<S: Scalar>(
    cfg: &ModelConfig<S>,
    particle: &Particle<S>,
    points: &[StPoint<S>],
) -> Result<Vec<S>> {
    let layout = check_particle(cfg, particle)?;
    let inr_w = inr_view(cfg, particle, &layout);
    points
        .iter()
        .map(|p| eval_point(cfg, &layout, &particle.theta, inr_w.as_ref(), p, false).map(|e| e.z))
        .collect()
}

/// Model surface Z at one point.
pub fn forward_one<S: Scalar>(
    cfg: &ModelConfig<S>,
    particle: &Particle<S>,
    point: &StPoint<S>,
) -> Result<S> {
    Ok(forward_many(cfg, particle, std::slice::from_ref(point))?[0])
}

/// Log density of N(mean, variance) at x.
pub fn normal_log_density<S: Scalar>(x: S, mean: S, variance: S) -> S {
    let two = c::<S>(2.0);
    let d = x - mean;
    -(two * S::PI() * variance).ln() / two - d * d / (two * variance)
}

/// Log density of the inverse gamma (shape a, scale b) at x:
/// a·ln b − ln Γ(a) − (a+1)·ln x − b/x.
pub fn inv_gamma_log_density<S: Scalar>(x: S, shape: S, scale: S) -> S {
    shape * scale.ln() - S::ln_gamma(shape) - (shape + S::one()) * x.ln() - scale / x
}

// Same law expressed in η = ln x (Jacobian absorbed):
// a·ln b − ln Γ(a) − a·η − b·e^{−η}.
fn inv_gamma_log_density_log_param<S: Scalar>(eta: S, shape: S, scale: S) -> S {
    shape * scale.ln() - S::ln_gamma(shape) - shape * eta - scale * (-eta).exp()
}

/// Log density at one frequency row of the zero-mean multivariate t with
/// df degrees of freedom and diagonal scale (1/ρ_s², 1/ρ_s², 1/ρ_t²,
/// 1/ρ_l², …).
pub fn mvt_log_density<S: Scalar>(row: &[S], rho_s: S, rho_t: S, rho_l: S, df: S) -> S {
    let k = S::of(row.len() as f64);
    let p = S::of((row.len() - 3) as f64);
    let half = c::<S>(0.5);
    let two = c::<S>(2.0);
    let q = mvt_quad(row, rho_s, rho_t, rho_l);
    S::ln_gamma((df + k) / two) - S::ln_gamma(df / two) - half * k * (df * S::PI()).ln()
        + two * rho_s.ln()
        + rho_t.ln()
        + p * rho_l.ln()
        - half * (df + k) * (q / df).ln_1p()
}

// Q = ρ_s²(ω₁² + ω₂²) + ρ_t²ω₃² + ρ_l²·Σ ω_L².
fn mvt_quad<S: Scalar>(row: &[S], rho_s: S, rho_t: S, rho_l: S) -> S {
    let mut q = rho_s * rho_s * (row[0] * row[0] + row[1] * row[1]);
    q += rho_t * rho_t * row[2] * row[2];
    let mut lat = S::zero();
    for v in &row[3..] {
        lat += *v * *v;
    }
    q + rho_l * rho_l * lat
}

/// Log prior density of a particle (all blocks, log-scale hypers).
pub fn log_prior<S: Scalar>(cfg: &ModelConfig<S>, particle: &Particle<S>) -> Result<S> {
    let layout = check_particle(cfg, particle)?;
    let h = particle.hypers(&layout);
    let [alpha, nu, rho_s, rho_t, rho_l, sigma2, _tau2] = particle.natural_hypers(&layout);
    let df = cfg.freq_df_multiplier * nu;
    let mut lp = S::zero();

    for w in &particle.theta[layout.inr_range()] {
        lp += normal_log_density(*w, S::zero(), alpha);
    }
    lp += inv_gamma_log_density_log_param(h[H_ALPHA], c(ALPHA_SHAPE), c(ALPHA_SCALE));

    let dim = layout.freq_dim;
    let freqs = &particle.theta[layout.freq_range()];
    for b in 0..layout.basis_count {
        lp += mvt_log_density(&freqs[b * dim..(b + 1) * dim], rho_s, rho_t, rho_l, df);
    }

    let amp_var = sigma2 / S::of(layout.basis_count as f64);
    for a in particle.theta[layout.amp_cos_range()]
        .iter()
        .chain(&particle.theta[layout.amp_sin_range()])
    {
        lp += normal_log_density(*a, S::zero(), amp_var);
    }

    lp += normal_log_density(h[H_NU], c(LOG_NU_MEAN), c(LOG_NU_VAR));
    lp += normal_log_density(h[H_RHO_S], c(LOG_RHO_S_MEAN), c(LOG_RHO_S_VAR));
    lp += normal_log_density(h[H_RHO_T], c(LOG_RHO_T_MEAN), c(LOG_RHO_T_VAR));
    lp += normal_log_density(h[H_RHO_L], c(LOG_RHO_L_MEAN), c(LOG_RHO_L_VAR));
    lp += inv_gamma_log_density_log_param(h[H_SIGMA2], c(VAR_SHAPE), c(VAR_SCALE));
    lp += inv_gamma_log_density_log_param(h[H_TAU2], c(VAR_SHAPE), c(VAR_SCALE));
    Ok(lp)
}

fn check_data<S: Scalar>(points: &[StPoint<S>], y: &[S], batch: Option<&[usize]>) -> Result<()> {
    if points.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} points but {} responses",
            points.len(),
            y.len()
        )));
    }
    if points.is_empty() {
        return Err(Error::Data("likelihood needs at least one observation".into()));
    }
    if let Some(idx) = batch {
        if idx.is_empty() {
            return Err(Error::Parameter("minibatch must not be empty".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= points.len()) {
            return Err(Error::Shape(format!(
                "minibatch index {bad} out of range for {} observations",
                points.len()
            )));
        }
    }
    Ok(())
}

/// Gaussian log likelihood over the minibatch (or everything), rescaled by
/// n/|batch| so minibatch values are unbiased for the full sum.
pub fn log_likelihood<S: Scalar>(
    cfg: &ModelConfig<S>,
    particle: &Particle<S>,
    points: &[StPoint<S>],
    y: &[S],
    batch: Option<&[usize]>,
) -> Result<S> {
    let layout = check_particle(cfg, particle)?;
    check_data(points, y, batch)?;
    let tau2 = particle.natural_hypers(&layout)[H_TAU2];
    let inr_w = inr_view(cfg, particle, &layout);
    let two = c::<S>(2.0);
    let norm = -(two * S::PI() * tau2).ln() / two;
    let mut sum = S::zero();
    let mut count = 0usize;
    let mut add = |i: usize| -> Result<()> {
        let e = eval_point(cfg, &layout, &particle.theta, inr_w.as_ref(), &points[i], false)?;
        let r = y[i] - e.z;
        sum += norm - r * r / (two * tau2);
        count += 1;
        Ok(())
    };
    match batch {
        Some(idx) => {
            for &i in idx {
                add(i)?;
            }
        }
        None => {
            for i in 0..points.len() {
                add(i)?;
            }
        }
    }
    let scale = S::of(points.len() as f64) / S::of(count as f64);
    Ok(scale * sum)
}

/// Log prior plus (rescaled) log likelihood.
pub fn log_joint<S: Scalar>(
    cfg: &ModelConfig<S>,
    particle: &Particle<S>,
    points: &[StPoint<S>],
    y: &[S],
    batch: Option<&[usize]>,
) -> Result<S> {
    Ok(log_prior(cfg, particle)? + log_likelihood(cfg, particle, points, y, batch)?)
}

/// Value and exact gradient of the log joint with respect to every
/// particle coordinate (frozen projections excluded by construction).
pub fn grad_log_joint<S: Scalar>(
    cfg: &ModelConfig<S>,
    particle: &Particle<S>,
    points: &[StPoint<S>],
    y: &[S],
    batch: Option<&[usize]>,
) -> Result<(S, Vec<S>)> {
    let layout = check_particle(cfg, particle)?;
    check_data(points, y, batch)?;
    let theta = &particle.theta;
    let h = particle.hypers(&layout);
    let [alpha, nu, rho_s, rho_t, rho_l, sigma2, tau2] = particle.natural_hypers(&layout);
    let df = cfg.freq_df_multiplier * nu;
    let inr_w = inr_view(cfg, particle, &layout);
    let j = layout.basis_count;
    let dim = layout.freq_dim;
    let p = layout.freq_dim - 3;
    let half = c::<S>(0.5);
    let two = c::<S>(2.0);

    let mut value = S::zero();
    let mut grad = vec![S::zero(); layout.total];

    // ---- Likelihood over the batch ----
    let owned_idx: Vec<usize>;
    let idx: &[usize] = match batch {
        Some(b) => b,
        None => {
            owned_idx = (0..points.len()).collect();
            &owned_idx
        }
    };
    let scale = S::of(points.len() as f64) / S::of(idx.len() as f64);
    let norm = -(two * S::PI() * tau2).ln() / two;
    let amp_cos = layout.amp_cos_offset;
    let amp_sin = layout.amp_sin_offset;
    let freq_off = layout.freq_offset;
    let mut lik = S::zero();
    let mut d_tau = S::zero();
    let mut d_latent = vec![S::zero(); p];
    let mut inr_grad = vec![S::zero(); layout.inr_len];
    for &i in idx {
        let e = eval_point(cfg, &layout, theta, inr_w.as_ref(), &points[i], true)?;
        let r = y[i] - e.z;
        lik += norm - r * r / (two * tau2);
        d_tau += -half + r * r / (two * tau2);
        let dz = scale * r / tau2;
        for k in &mut d_latent {
            *k = S::zero();
        }
        for b in 0..j {
            let (cv, sv) = (e.cos[b], e.sin[b]);
            grad[amp_cos + b] += dz * cv;
            grad[amp_sin + b] += dz * sv;
            let dth = dz * (-theta[amp_cos + b] * sv + theta[amp_sin + b] * cv);
            let row = freq_off + b * dim;
            for d in 0..dim {
                grad[row + d] += dth * e.expanded[d];
            }
            for (k, dl) in d_latent.iter_mut().enumerate() {
                *dl += dth * theta[row + 3 + k];
            }
        }
        if let (Some(inr_cfg), Some(w), Some(cache)) = (&cfg.inr, inr_w.as_ref(), &e.cache) {
            inr_backward(inr_cfg, w, cache, &d_latent, &mut inr_grad)?;
        }
    }
    value += scale * lik;
    grad[layout.hyper_offset + H_TAU2] += scale * d_tau;
    grad[layout.inr_range()]
        .iter_mut()
        .zip(&inr_grad)
        .for_each(|(g, v)| *g += *v);

    // ---- Prior: latent weights and α ----
    let mut d_alpha = S::zero();
    for (gi, w) in layout.inr_range().zip(&theta[layout.inr_range()]) {
        value += normal_log_density(*w, S::zero(), alpha);
        grad[gi] += -*w / alpha;
        d_alpha += -half + *w * *w / (two * alpha);
    }
    value += inv_gamma_log_density_log_param(h[H_ALPHA], c(ALPHA_SHAPE), c(ALPHA_SCALE));
    d_alpha += -c::<S>(ALPHA_SHAPE) + c::<S>(ALPHA_SCALE) / alpha;
    grad[layout.hyper_offset + H_ALPHA] += d_alpha;

    // ---- Prior: frequencies (multivariate t) ----
    let kdim = S::of(dim as f64);
    let pdim = S::of(p as f64);
    let mut d_nu_freq = S::zero();
    let mut d_rho_s = S::zero();
    let mut d_rho_t = S::zero();
    let mut d_rho_l = S::zero();
    let ratio = (df + kdim) / df;
    for b in 0..j {
        let row = &theta[freq_off + b * dim..freq_off + (b + 1) * dim];
        value += mvt_log_density(row, rho_s, rho_t, rho_l, df);
        let q = mvt_quad(row, rho_s, rho_t, rho_l);
        let denom = S::one() + q / df;
        // ∂/∂ω = −((df+k)/df)·ρ_d²·ω_d / (1 + Q/df)
        for d in 0..dim {
            let rho2 = match d {
                0 | 1 => rho_s * rho_s,
                2 => rho_t * rho_t,
                _ => rho_l * rho_l,
            };
            grad[freq_off + b * dim + d] += -ratio * rho2 * row[d] / denom;
        }
        let qs = rho_s * rho_s * (row[0] * row[0] + row[1] * row[1]);
        let qt = rho_t * rho_t * row[2] * row[2];
        let ql = q - qs - qt;
        d_rho_s += two - ratio * qs / denom;
        d_rho_t += S::one() - ratio * qt / denom;
        d_rho_l += pdim - ratio * ql / denom;
        // ∂/∂ln ν = df · d(log density)/d(df), since df = multiplier·ν.
        d_nu_freq += df
            * (half * S::digamma((df + kdim) / two) - half * S::digamma(df / two)
                - kdim / (two * df)
                - half * (q / df).ln_1p()
                + half * (df + kdim) * q / (df * df) / denom);
    }

    // ---- Prior: amplitudes and σ² ----
    let jn = S::of(j as f64);
    let amp_var = sigma2 / jn;
    let mut d_sigma2 = S::zero();
    for gi in layout.amp_cos_range().chain(layout.amp_sin_range()) {
        let a = theta[gi];
        value += normal_log_density(a, S::zero(), amp_var);
        grad[gi] += -a / amp_var;
        d_sigma2 += -half + a * a / (two * amp_var);
    }
    value += inv_gamma_log_density_log_param(h[H_SIGMA2], c(VAR_SHAPE), c(VAR_SCALE));
    d_sigma2 += -c::<S>(VAR_SHAPE) + c::<S>(VAR_SCALE) / sigma2;
    grad[layout.hyper_offset + H_SIGMA2] += d_sigma2;

    // ---- Prior: remaining hypers ----
    value += normal_log_density(h[H_NU], c(LOG_NU_MEAN), c(LOG_NU_VAR));
    grad[layout.hyper_offset + H_NU] +=
        d_nu_freq - (h[H_NU] - c(LOG_NU_MEAN)) / c(LOG_NU_VAR);
    value += normal_log_density(h[H_RHO_S], c(LOG_RHO_S_MEAN), c(LOG_RHO_S_VAR));
    grad[layout.hyper_offset + H_RHO_S] +=
        d_rho_s - (h[H_RHO_S] - c(LOG_RHO_S_MEAN)) / c(LOG_RHO_S_VAR);
    value += normal_log_density(h[H_RHO_T], c(LOG_RHO_T_MEAN), c(LOG_RHO_T_VAR));
    grad[layout.hyper_offset + H_RHO_T] +=
        d_rho_t - (h[H_RHO_T] - c(LOG_RHO_T_MEAN)) / c(LOG_RHO_T_VAR);
    value += normal_log_density(h[H_RHO_L], c(LOG_RHO_L_MEAN), c(LOG_RHO_L_VAR));
    grad[layout.hyper_offset + H_RHO_L] +=
        d_rho_l - (h[H_RHO_L] - c(LOG_RHO_L_MEAN)) / c(LOG_RHO_L_VAR);
    value += inv_gamma_log_density_log_param(h[H_TAU2], c(VAR_SHAPE), c(VAR_SCALE));
    grad[layout.hyper_offset + H_TAU2] += -c::<S>(VAR_SHAPE) + c::<S>(VAR_SCALE) / tau2;

    Ok((value, grad))
}

/// A trained set of particles plus the architecture they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<S> {
    pub config: ModelConfig<S>,
    pub particles: Vec<Particle<S>>,
}

impl<S: Scalar> Ensemble<S> {
    pub fn new(config: ModelConfig<S>, particles: Vec<Particle<S>>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Parameter("ensemble needs at least one particle".into()));
        }
        for p in &particles {
            check_particle(&config, p)?;
        }
        Ok(Ensemble { config, particles })
    }

    /// Binary encoding: config header then per-particle f64 blobs
    /// (little-endian, bit-exact round trip for f64 ensembles).
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_u64(self.config.basis_count as u64);
        match &self.config.inr {
            None => w.put_u8(0),
            Some(inr) => {
                w.put_u8(1);
                w.put_u8(match inr.backbone {
                    Backbone::ResMlp => 0,
                    Backbone::FourierPositional => 1,
                    Backbone::FourierGaussian => 2,
                });
                w.put_u64(inr.layers as u64);
                w.put_u64(inr.width as u64);
                w.put_u64(inr.latent_dim as u64);
                w.put_u64(inr.ffnp_freq_count as u64);
                w.put_f64(inr.ffnp_freq_constant.as_f64());
                w.put_u64(inr.ffng_encode_dim as u64);
                w.put_f64(inr.ffng_sigma.as_f64());
            }
        }
        w.put_f64(self.config.freq_df_multiplier.as_f64());
        w.put_u64(self.particles.len() as u64);
        for p in &self.particles {
            w.put_u64(p.theta.len() as u64);
            for v in &p.theta {
                w.put_f64(v.as_f64());
            }
            match &p.encoder {
                None => w.put_u8(0),
                Some(enc) => {
                    w.put_u8(1);
                    w.put_u64(enc.len() as u64);
                    for v in enc {
                        w.put_f64(v.as_f64());
                    }
                }
            }
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Ensemble<S>> {
        let mut r = ByteReader::new(bytes);
        let basis_count = r.get_usize()?;
        let inr = match r.get_u8()? {
            0 => None,
            1 => {
                let backbone = match r.get_u8()? {
                    0 => Backbone::ResMlp,
                    1 => Backbone::FourierPositional,
                    2 => Backbone::FourierGaussian,
                    other => {
                        return Err(Error::Format(format!("unknown backbone tag {other}")))
                    }
                };
                let layers = r.get_usize()?;
                let width = r.get_usize()?;
                let latent_dim = r.get_usize()?;
                let ffnp_freq_count = r.get_usize()?;
                let ffnp_freq_constant = S::of(r.get_f64()?);
                let ffng_encode_dim = r.get_usize()?;
                let ffng_sigma = S::of(r.get_f64()?);
                Some(InrConfig {
                    backbone,
                    layers,
                    width,
                    latent_dim,
                    ffnp_freq_count,
                    ffnp_freq_constant,
                    ffng_encode_dim,
                    ffng_sigma,
                })
            }
            other => return Err(Error::Format(format!("unknown latent-presence tag {other}"))),
        };
        let freq_df_multiplier = S::of(r.get_f64()?);
        let config = ModelConfig { basis_count, inr, freq_df_multiplier };
        let n = r.get_len(1 << 24)?;
        let mut particles = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.get_len(r.remaining() / 8 + 1)?;
            let mut theta = Vec::with_capacity(len);
            for _ in 0..len {
                theta.push(S::of(r.get_f64()?));
            }
            let encoder = match r.get_u8()? {
                0 => None,
                1 => {
                    let elen = r.get_len(r.remaining() / 8 + 1)?;
                    let mut enc = Vec::with_capacity(elen);
                    for _ in 0..elen {
                        enc.push(S::of(r.get_f64()?));
                    }
                    Some(enc)
                }
                other => {
                    return Err(Error::Format(format!("unknown projection tag {other}")))
                }
            };
            particles.push(Particle { theta, encoder });
        }
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} unread trailing bytes after ensemble",
                r.remaining()
            )));
        }
        Ensemble::new(config, particles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{marginalized_covariance, rff_evaluate, rff_features, FrequencySet};
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;

    fn points5() -> (Vec<StPoint<f64>>, Vec<f64>) {
        let pts = vec![
            StPoint::new(0.1, 0.2, 0.0),
            StPoint::new(0.8, 0.3, 0.2),
            StPoint::new(0.4, 0.9, 0.5),
            StPoint::new(0.6, 0.1, 0.7),
            StPoint::new(0.2, 0.7, 1.0),
        ];
        let y = vec![0.3, -0.5, 1.2, 0.1, -0.9];
        (pts, y)
    }

    #[test]
    fn layout_blocks_tile_the_vector() {
        let cfg = ModelConfig::new(6, Some(InrConfig::<f64>::res_mlp(1, 4, 2)));
        let l = cfg.layout();
        assert_eq!(l.freq_dim, 5);
        assert_eq!(l.inr_len, 16 + 20 + 10);
        assert_eq!(l.freq_offset, l.inr_len);
        assert_eq!(l.amp_cos_offset, l.freq_offset + 30);
        assert_eq!(l.amp_sin_offset, l.amp_cos_offset + 6);
        assert_eq!(l.hyper_offset, l.amp_sin_offset + 6);
        assert_eq!(l.total, l.hyper_offset + 7);
        let ranges = [
            l.inr_range(),
            l.freq_range(),
            l.amp_cos_range(),
            l.amp_sin_range(),
            l.hyper_range(),
        ];
        let mut cursor = 0;
        for r in ranges {
            assert_eq!(r.start, cursor);
            cursor = r.end;
        }
        assert_eq!(cursor, l.total);
        let stationary = ModelConfig::<f64>::new(4, None);
        assert_eq!(stationary.layout().total, 4 * 3 + 8 + 7);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = ModelConfig::new(5, Some(InrConfig::<f64>::fourier_gaussian(1, 4, 2, 3, 1.0)));
        let a = init_particle(&cfg, 42).unwrap();
        let b = init_particle(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.theta, init_particle(&cfg, 43).unwrap().theta);
        assert_eq!(a.theta.len(), cfg.layout().total);
        assert_eq!(a.encoder.as_ref().unwrap().len(), 9);
        let hypers = a.hypers(&cfg.layout());
        assert_abs_diff_eq!(hypers[H_ALPHA], 0.05f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(hypers[H_TAU2], 0.25f64.ln(), epsilon = 1e-15);
        let stationary = ModelConfig::<f64>::new(5, None);
        assert!(init_particle(&stationary, 1).unwrap().encoder.is_none());
    }

    #[test]
    fn forward_composes_latent_and_basis() {
        let inr = InrConfig::<f64>::res_mlp(1, 4, 2);
        let cfg = ModelConfig::new(3, Some(inr.clone()));
        let particle = init_particle(&cfg, 7).unwrap();
        let layout = cfg.layout();
        let pt = StPoint::new(0.3, 0.6, 0.4);
        let w = InrWeights {
            params: particle.theta[layout.inr_range()].to_vec(),
            encoder: None,
        };
        let lat = crate::latent::inr_forward(&inr, &w, &pt).unwrap();
        let freqs = FrequencySet::from_rows(
            particle.theta[layout.freq_range()].to_vec(),
            3,
            5,
        )
        .unwrap();
        let feats = rff_features(&pt, &lat, &freqs).unwrap();
        let amps = crate::spectral::AmplitudeSet::new(
            particle.theta[layout.amp_cos_range()].to_vec(),
            particle.theta[layout.amp_sin_range()].to_vec(),
        )
        .unwrap();
        let want = rff_evaluate(&feats, &amps).unwrap();
        let got = forward_one(&cfg, &particle, &pt).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        let many = forward_many(&cfg, &particle, &[pt, StPoint::new(0.0, 0.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(many[0], got, epsilon = 1e-15);
    }

    #[test]
    fn stationary_forward_reduces_to_plain_basis() {
        let cfg = ModelConfig::<f64>::new(8, None);
        let particle = init_particle(&cfg, 11).unwrap();
        let layout = cfg.layout();
        let pt = StPoint::new(0.9, -0.4, 0.2);
        let freqs =
            FrequencySet::from_rows(particle.theta[layout.freq_range()].to_vec(), 8, 3)
                .unwrap();
        let feats = rff_features(&pt, &[], &freqs).unwrap();
        let amps = crate::spectral::AmplitudeSet::new(
            particle.theta[layout.amp_cos_range()].to_vec(),
            particle.theta[layout.amp_sin_range()].to_vec(),
        )
        .unwrap();
        let want = rff_evaluate(&feats, &amps).unwrap();
        assert_abs_diff_eq!(forward_one(&cfg, &particle, &pt).unwrap(), want, epsilon = 1e-13);
    }

    #[test]
    fn amplitude_marginal_covariance_matches_closed_form() {
        // With frequencies held fixed and fresh N(0, σ²/J) amplitudes each
        // draw, cov(Z(x1), Z(x2)) = (σ²/J)·Σ cos(ωᵀΔ) exactly.
        let inr = InrConfig::<f64>::res_mlp(1, 3, 1);
        let cfg = ModelConfig::new(16, Some(inr.clone()));
        let base = init_particle(&cfg, 3).unwrap();
        let layout = cfg.layout();
        let sigma2 = base.natural_hypers(&layout)[H_SIGMA2];
        let x1 = StPoint::new(0.2, 0.4, 0.1);
        let x2 = StPoint::new(0.7, 0.1, 0.8);
        let w = InrWeights {
            params: base.theta[layout.inr_range()].to_vec(),
            encoder: None,
        };
        let l1 = crate::latent::inr_forward(&inr, &w, &x1).unwrap();
        let l2 = crate::latent::inr_forward(&inr, &w, &x2).unwrap();
        let freqs =
            FrequencySet::from_rows(base.theta[layout.freq_range()].to_vec(), 16, 4).unwrap();
        let want = marginalized_covariance(&x1, &x2, &l1, &l2, &freqs, sigma2).unwrap();
        let reps = 20_000;
        let mut products = Vec::with_capacity(reps);
        let mut particle = base.clone();
        for r in 0..reps {
            let amps = crate::spectral::sample_amplitudes(
                16,
                sigma2,
                crate::rng::derive_seed(99, "amp-draw", r as u64),
            )
            .unwrap();
            particle.theta[layout.amp_cos_range()].copy_from_slice(&amps.cos);
            particle.theta[layout.amp_sin_range()].copy_from_slice(&amps.sin);
            let z1 = forward_one(&cfg, &particle, &x1).unwrap();
            let z2 = forward_one(&cfg, &particle, &x2).unwrap();
            products.push(z1 * z2);
        }
        let n = reps as f64;
        let mean = products.iter().sum::<f64>() / n;
        let sd = (products.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let se = sd / n.sqrt();
        assert!(
            (mean - want).abs() <= 3.5 * se,
            "covariance {mean} vs {want} (se {se})"
        );
    }

    #[test]
    fn density_helpers_match_references() {
        // Reference values computed independently with scipy.
        assert_abs_diff_eq!(
            inv_gamma_log_density(0.05, 1.0, 0.05),
            1.9957322735539909,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            inv_gamma_log_density(0.05, 1.0, 0.05),
            -(0.05f64.ln()) - 1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            inv_gamma_log_density(0.7, 0.1, 0.1),
            -2.233485865558148,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normal_log_density(0.0, 0.0, 1.0),
            -0.9189385332046727,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            normal_log_density(0.3, 0.5, 0.5),
            -0.6123649429247001,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            mvt_log_density(&[0.8, -1.9, 2.3, -0.6], 0.4, 0.7, 1.3, 3.0),
            -7.997097274965065,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            mvt_log_density(&[-3.1, 0.2, 1.1], 0.4, 0.7, 1.3, 1.0),
            -6.765186281606615,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            mvt_log_density(&[0.05, 1.4, -2.2, 0.33, -0.9], 1.1, 0.25, 0.9, 5.0),
            -8.005154619199809,
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_param_density_is_jacobian_adjusted() {
        // In η = ln x the density gains the factor x: ln f_η(η) = ln f_X(x) + η.
        for (x, a, b) in [(0.05, 1.0, 0.05), (0.7, 0.1, 0.1), (2.5, 0.3, 1.2)] {
            let eta = (x as f64).ln();
            assert_abs_diff_eq!(
                inv_gamma_log_density_log_param(eta, a, b),
                inv_gamma_log_density(x, a, b) + eta,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn amplitude_prior_closed_form_at_zero() {
        // All-zero amplitudes leave only the normalization:
        // 2J · (−½·ln(2π·σ²/J)).
        for j in [4usize, 8] {
            let cfg = ModelConfig::<f64>::new(j, None);
            let layout = cfg.layout();
            let mut particle = init_particle(&cfg, 5).unwrap();
            for i in layout.amp_cos_range().chain(layout.amp_sin_range()) {
                particle.theta[i] = 0.0;
            }
            let sigma2 = particle.natural_hypers(&layout)[H_SIGMA2];
            let full = log_prior(&cfg, &particle).unwrap();
            // Remove every non-amplitude term to isolate the block.
            let h = particle.hypers(&layout);
            let mut rest = 0.0;
            rest += inv_gamma_log_density_log_param(h[H_ALPHA], 1.0, 0.05);
            let freqs = &particle.theta[layout.freq_range()];
            let [_, nu, rho_s, rho_t, rho_l, _, _] = particle.natural_hypers(&layout);
            for b in 0..j {
                rest += mvt_log_density(&freqs[b * 3..(b + 1) * 3], rho_s, rho_t, rho_l, 2.0 * nu);
            }
            rest += normal_log_density(h[H_NU], 0.5, 0.5);
            rest += normal_log_density(h[H_RHO_S], -2.0, 1.0);
            rest += normal_log_density(h[H_RHO_T], -1.0, 0.5);
            rest += normal_log_density(h[H_RHO_L], -2.0, 1.0);
            rest += inv_gamma_log_density_log_param(h[H_SIGMA2], 0.1, 0.1);
            rest += inv_gamma_log_density_log_param(h[H_TAU2], 0.1, 0.1);
            let amp_block = full - rest;
            let want = 2.0 * j as f64
                * (-0.5 * (2.0 * std::f64::consts::PI * sigma2 / j as f64).ln());
            assert_abs_diff_eq!(amp_block, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn minibatch_likelihood_is_unbiased() {
        let cfg = ModelConfig::new(4, Some(InrConfig::<f64>::res_mlp(1, 3, 1)));
        let particle = init_particle(&cfg, 9).unwrap();
        let (pts, y) = points5();
        let full = log_likelihood(&cfg, &particle, &pts, &y, None).unwrap();
        for bsize in [1usize, 2, 3] {
            let mut acc = 0.0;
            let mut count = 0usize;
            for combo in (0..pts.len()).combinations(bsize) {
                acc += log_likelihood(&cfg, &particle, &pts, &y, Some(&combo)).unwrap();
                count += 1;
            }
            assert_abs_diff_eq!(acc / count as f64, full, epsilon = 1e-10);
        }
    }

    #[test]
    fn hand_derived_noise_gradient() {
        // One observation, stationary model: the ln τ² coordinate gets
        // scale·(−½ + r²/(2τ²)) from the likelihood plus −a + b/τ² from the
        // log-scale inverse gamma.
        let cfg = ModelConfig::<f64>::new(2, None);
        let particle = init_particle(&cfg, 21).unwrap();
        let layout = cfg.layout();
        let pt = StPoint::new(0.5, 0.5, 0.5);
        let y = vec![2.0];
        let z = forward_one(&cfg, &particle, &pt).unwrap();
        let tau2 = particle.natural_hypers(&layout)[H_TAU2];
        let r = y[0] - z;
        let want = (-0.5 + r * r / (2.0 * tau2)) + (-0.1 + 0.1 / tau2);
        let (_, grad) = grad_log_joint(&cfg, &particle, &[pt], &y, None).unwrap();
        assert_abs_diff_eq!(grad[layout.hyper_offset + H_TAU2], want, epsilon = 1e-12);
    }

    fn finite_difference_check(cfg: &ModelConfig<f64>, seed: u64, batch: Option<Vec<usize>>) {
        let particle = init_particle(cfg, seed).unwrap();
        let (pts, y) = points5();
        let batch_ref = batch.as_deref();
        let (_, grad) = grad_log_joint(cfg, &particle, &pts, &y, batch_ref).unwrap();
        for i in 0..particle.theta.len() {
            let h = 1e-6 * particle.theta[i].abs().max(1.0);
            let mut pp = particle.clone();
            pp.theta[i] += h;
            let mut pm = particle.clone();
            pm.theta[i] -= h;
            let fp = log_joint(cfg, &pp, &pts, &y, batch_ref).unwrap();
            let fm = log_joint(cfg, &pm, &pts, &y, batch_ref).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-6);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-4,
                "coordinate {i}: analytic {} vs fd {fd} ({cfg:?})",
                grad[i]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_stationary() {
        finite_difference_check(&ModelConfig::<f64>::new(4, None), 31, None);
        finite_difference_check(&ModelConfig::<f64>::new(4, None), 32, Some(vec![0, 2, 4]));
    }

    #[test]
    fn gradient_matches_finite_differences_resmlp() {
        let cfg = ModelConfig::new(3, Some(InrConfig::<f64>::res_mlp(1, 4, 2)));
        finite_difference_check(&cfg, 33, None);
        finite_difference_check(&cfg, 34, Some(vec![1, 3]));
    }

    #[test]
    fn gradient_matches_finite_differences_fourier() {
        let cfg = ModelConfig::new(
            2,
            Some(InrConfig::<f64>::fourier_positional(0, 1, 1, 2, 4.0)),
        );
        finite_difference_check(&cfg, 35, None);
        let cfg2 = ModelConfig::new(
            2,
            Some(InrConfig::<f64>::fourier_gaussian(1, 3, 1, 3, 1.0)),
        );
        finite_difference_check(&cfg2, 36, None);
    }

    #[test]
    fn gradient_value_equals_log_joint() {
        let cfg = ModelConfig::new(3, Some(InrConfig::<f64>::res_mlp(1, 3, 1)));
        let particle = init_particle(&cfg, 77).unwrap();
        let (pts, y) = points5();
        let (value, _) = grad_log_joint(&cfg, &particle, &pts, &y, None).unwrap();
        let direct = log_joint(&cfg, &particle, &pts, &y, None).unwrap();
        assert_abs_diff_eq!(value, direct, epsilon = 1e-10);
        let batch = vec![0, 3];
        let (vb, _) = grad_log_joint(&cfg, &particle, &pts, &y, Some(&batch)).unwrap();
        let db = log_joint(&cfg, &particle, &pts, &y, Some(&batch)).unwrap();
        assert_abs_diff_eq!(vb, db, epsilon = 1e-10);
    }

    #[test]
    fn ensemble_round_trip_is_bit_exact() {
        let cfg = ModelConfig::new(4, Some(InrConfig::<f64>::fourier_gaussian(1, 3, 2, 3, 0.8)));
        let particles: Vec<_> =
            (0..3).map(|s| init_particle(&cfg, 100 + s).unwrap()).collect();
        let ens = Ensemble::new(cfg, particles).unwrap();
        let bytes = ens.encode();
        let back = Ensemble::<f64>::decode(&bytes).unwrap();
        assert_eq!(back.config, ens.config);
        assert_eq!(back.particles.len(), ens.particles.len());
        for (a, b) in ens.particles.iter().zip(&back.particles) {
            for (x, y) in a.theta.iter().zip(&b.theta) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.encoder, b.encoder);
        }
        assert!(Ensemble::<f64>::decode(&bytes[..bytes.len() - 3]).is_err());
        let mut garbage = bytes.clone();
        garbage.push(0);
        assert!(Ensemble::<f64>::decode(&garbage).is_err());
    }

    #[test]
    fn validation_rejects_mismatched_particles() {
        let cfg = ModelConfig::new(3, Some(InrConfig::<f64>::res_mlp(1, 3, 1)));
        let mut particle = init_particle(&cfg, 1).unwrap();
        particle.theta.pop();
        assert!(forward_one(&cfg, &particle, &StPoint::new(0.0, 0.0, 0.0)).is_err());
        let gauss = ModelConfig::new(3, Some(InrConfig::<f64>::fourier_gaussian(1, 3, 1, 2, 1.0)));
        let mut missing = init_particle(&gauss, 2).unwrap();
        missing.encoder = None;
        assert!(log_prior(&gauss, &missing).is_err());
        let mut extra = init_particle(&cfg, 3).unwrap();
        extra.encoder = Some(vec![0.0; 6]);
        assert!(log_prior(&cfg, &extra).is_err());
        let bad_cfg = ModelConfig::<f64>::new(0, None);
        assert!(bad_cfg.validate().is_err());
        let (pts, y) = points5();
        let good = init_particle(&cfg, 4).unwrap();
        assert!(log_likelihood(&cfg, &good, &pts, &y[..3], None).is_err());
        assert!(log_likelihood(&cfg, &good, &pts, &y, Some(&[9])).is_err());
        assert!(log_likelihood(&cfg, &good, &pts, &y, Some(&[])).is_err());
    }
}
