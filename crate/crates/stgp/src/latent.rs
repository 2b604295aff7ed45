//! Learned latent coordinate maps L: (s1, s2, t) → R^p.
//!
//! The latent map is a small coordinate network with one of three input
//! encodings: raw coordinates into a residual MLP, deterministic positional
//! Fourier features, or random Gaussian Fourier features with a frozen
//! projection drawn once per particle. Every backbone reduces to a sequence
//! of linear layers (plain, GeLU-activated, or residual), which keeps the
//! forward pass and the hand-written backward pass in one loop.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::StPoint;
use crate::rng::{derive_seed, rng_from};
use crate::scalar::{c, Scalar};

/// Input encoding of the latent network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Raw coordinates through a residual MLP.
    ResMlp,
    /// Deterministic positional sin/cos features per coordinate.
    FourierPositional,
    /// Random Gaussian projection features, frozen per particle.
    FourierGaussian,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Backbone::ResMlp => "resmlp",
            Backbone::FourierPositional => "ffnp",
            Backbone::FourierGaussian => "ffng",
        };
        f.write_str(name)
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resmlp" => Ok(Backbone::ResMlp),
            "ffnp" => Ok(Backbone::FourierPositional),
            "ffng" => Ok(Backbone::FourierGaussian),
            other => Err(Error::Config(format!(
                "unknown backbone '{other}' (expected resmlp, ffnp, or ffng)"
            ))),
        }
    }
}

/// Architecture of the latent network.
#[derive(Debug, Clone, PartialEq)]
pub struct InrConfig<S> {
    pub backbone: Backbone,
    /// Residual blocks (resmlp) or hidden layers (ffnp/ffng); 0 is allowed.
    pub layers: usize,
    pub width: usize,
    /// Output dimension p >= 1.
    pub latent_dim: usize,
    /// Positional encoding: number of frequencies K per coordinate.
    pub ffnp_freq_count: usize,
    /// Positional encoding: frequency scale constant.
    pub ffnp_freq_constant: S,
    /// Gaussian encoding: number of projection rows E.
    pub ffng_encode_dim: usize,
    /// Gaussian encoding: projection standard deviation.
    pub ffng_sigma: S,
}

impl<S: Scalar> InrConfig<S> {
    pub fn res_mlp(layers: usize, width: usize, latent_dim: usize) -> Self {
        InrConfig {
            backbone: Backbone::ResMlp,
            layers,
            width,
            latent_dim,
            ffnp_freq_count: 16,
            ffnp_freq_constant: c(30.0),
            ffng_encode_dim: 32,
            ffng_sigma: S::one(),
        }
    }

    pub fn fourier_positional(
        layers: usize,
        width: usize,
        latent_dim: usize,
        freq_count: usize,
        freq_constant: S,
    ) -> Self {
        InrConfig {
            backbone: Backbone::FourierPositional,
            layers,
            width,
            latent_dim,
            ffnp_freq_count: freq_count,
            ffnp_freq_constant: freq_constant,
            ffng_encode_dim: 32,
            ffng_sigma: S::one(),
        }
    }

    pub fn fourier_gaussian(
        layers: usize,
        width: usize,
        latent_dim: usize,
        encode_dim: usize,
        sigma: S,
    ) -> Self {
        InrConfig {
            backbone: Backbone::FourierGaussian,
            layers,
            width,
            latent_dim,
            ffnp_freq_count: 16,
            ffnp_freq_constant: c(30.0),
            ffng_encode_dim: encode_dim,
            ffng_sigma: sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Parameter("latent dimension must be >= 1".into()));
        }
        if self.width == 0 && (self.layers > 0 || self.backbone == Backbone::ResMlp) {
            return Err(Error::Parameter("network width must be >= 1".into()));
        }
        match self.backbone {
            Backbone::ResMlp => {}
            Backbone::FourierPositional => {
                if self.ffnp_freq_count == 0 {
                    return Err(Error::Parameter(
                        "positional encoding needs at least one frequency".into(),
                    ));
                }
                if !(self.ffnp_freq_constant > S::zero()) {
                    return Err(Error::Parameter(format!(
                        "positional frequency constant must be positive, got {}",
                        self.ffnp_freq_constant
                    )));
                }
            }
            Backbone::FourierGaussian => {
                if self.ffng_encode_dim == 0 {
                    return Err(Error::Parameter(
                        "gaussian encoding needs at least one projection row".into(),
                    ));
                }
                if !(self.ffng_sigma > S::zero()) {
                    return Err(Error::Parameter(format!(
                        "gaussian encoding sigma must be positive, got {}",
                        self.ffng_sigma
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dimension of the vector entering the first linear layer.
    pub fn feature_dim(&self) -> usize {
        match self.backbone {
            Backbone::ResMlp => 3,
            Backbone::FourierPositional => 6 * self.ffnp_freq_count,
            Backbone::FourierGaussian => 2 * self.ffng_encode_dim,
        }
    }
}

// How a linear layer's output is post-processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerKind {
    Plain,
    Activated,
    Residual,
}

// Forward-order layer shapes: (kind, rows, cols).
fn layer_plan<S: Scalar>(cfg: &InrConfig<S>) -> Vec<(LayerKind, usize, usize)> {
    let mut plan = Vec::new();
    match cfg.backbone {
        Backbone::ResMlp => {
            plan.push((LayerKind::Activated, cfg.width, 3));
            for _ in 0..cfg.layers {
                plan.push((LayerKind::Residual, cfg.width, cfg.width));
            }
            plan.push((LayerKind::Plain, cfg.latent_dim, cfg.width));
        }
        Backbone::FourierPositional | Backbone::FourierGaussian => {
            let input = cfg.feature_dim();
            if cfg.layers == 0 {
                plan.push((LayerKind::Plain, cfg.latent_dim, input));
            } else {
                plan.push((LayerKind::Activated, cfg.width, input));
                for _ in 1..cfg.layers {
                    plan.push((LayerKind::Activated, cfg.width, cfg.width));
                }
                plan.push((LayerKind::Plain, cfg.latent_dim, cfg.width));
            }
        }
    }
    plan
}

/// Offsets of one linear layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub weight_offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub bias_offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer weight/bias offsets, in forward order.
pub fn layer_segments<S: Scalar>(cfg: &InrConfig<S>) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut offset = 0;
    for (_, rows, cols) in layer_plan(cfg) {
        segments.push(Segment {
            weight_offset: offset,
            rows,
            cols,
            bias_offset: offset + rows * cols,
        });
        offset += rows * cols + rows;
    }
    segments
}

/// Number of trainable parameters.
pub fn param_count<S: Scalar>(cfg: &InrConfig<S>) -> usize {
    layer_plan(cfg).iter().map(|&(_, r, cl)| r * cl + r).sum()
}

/// Trainable weights plus the frozen Gaussian projection (if any).
#[derive(Debug, Clone, PartialEq)]
pub struct InrWeights<S> {
    /// Flat trainable parameters, layer segments in forward order
    /// (weights row-major, then bias, per layer).
    pub params: Vec<S>,
    /// Frozen E x 3 projection for the Gaussian encoding, row-major.
    pub encoder: Option<Vec<S>>,
}

/// Draw initial weights N(0, alpha) and, for the Gaussian encoding, the
/// frozen projection N(0, sigma_g^2). Deterministic in `seed`.
pub fn init_inr<S: Scalar>(cfg: &InrConfig<S>, alpha: S, seed: u64) -> Result<InrWeights<S>> {
    cfg.validate()?;
    if !(alpha >= S::zero()) || !alpha.is_finite() {
        return Err(Error::Parameter(format!(
            "weight prior variance must be nonnegative, got {alpha}"
        )));
    }
    let sd = alpha.sqrt();
    let n = param_count(cfg);
    let mut rng = rng_from(derive_seed(seed, "inr-weights", 0));
    let params: Vec<S> = (0..n).map(|_| S::std_normal(&mut rng) * sd).collect();
    let encoder = if cfg.backbone == Backbone::FourierGaussian {
        let mut enc_rng = rng_from(derive_seed(seed, "inr-encoder", 0));
        Some(
            (0..cfg.ffng_encode_dim * 3)
                .map(|_| S::std_normal(&mut enc_rng) * cfg.ffng_sigma)
                .collect(),
        )
    } else {
        None
    };
    Ok(InrWeights { params, encoder })
}

/// GeLU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
pub fn gelu<S: Scalar>(x: S) -> S {
    let k = c::<S>(0.797_884_560_802_865_4);
    let a = c::<S>(0.044715);
    let g = k * (x + a * x * x * x);
    c::<S>(0.5) * x * (S::one() + g.tanh())
}

/// Derivative of the tanh-approximated GeLU.
pub fn gelu_prime<S: Scalar>(x: S) -> S {
    let k = c::<S>(0.797_884_560_802_865_4);
    let a = c::<S>(0.044715);
    let g = k * (x + a * x * x * x);
    let t = g.tanh();
    let half = c::<S>(0.5);
    half * (S::one() + t)
        + half * x * (S::one() - t * t) * k * (S::one() + c::<S>(3.0) * a * x * x)
}

// out = W x + b for a row-major rows x cols weight block.
fn linear<S: Scalar>(w: &[S], b: &[S], rows: usize, cols: usize, x: &[S], out: &mut Vec<S>) {
    out.clear();
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        out.push(acc);
    }
}

fn input_features<S: Scalar>(cfg: &InrConfig<S>, w: &InrWeights<S>, point: &StPoint<S>) -> Result<Vec<S>> {
    let u = [point.s[0], point.s[1], point.t];
    match cfg.backbone {
        Backbone::ResMlp => Ok(u.to_vec()),
        Backbone::FourierPositional => {
            // Per coordinate: interleaved sin(f_k u), cos(f_k u) with
            // f_k = 2πk·constant/K, k = 1..K.
            let kcount = cfg.ffnp_freq_count;
            let two_pi = c::<S>(2.0) * S::PI();
            let mut feat = Vec::with_capacity(6 * kcount);
            for coord in u {
                for k in 1..=kcount {
                    let f = two_pi * S::of(k as f64) * cfg.ffnp_freq_constant
                        / S::of(kcount as f64);
                    let arg = f * coord;
                    feat.push(arg.sin());
                    feat.push(arg.cos());
                }
            }
            Ok(feat)
        }
        Backbone::FourierGaussian => {
            let enc = w.encoder.as_ref().ok_or_else(|| {
                Error::Shape("gaussian encoding requires a frozen projection".into())
            })?;
            let e = cfg.ffng_encode_dim;
            if enc.len() != e * 3 {
                return Err(Error::Shape(format!(
                    "projection has {} entries, expected {e} x 3",
                    enc.len()
                )));
            }
            let two_pi = c::<S>(2.0) * S::PI();
            let mut feat = vec![S::zero(); 2 * e];
            for row in 0..e {
                let b = &enc[row * 3..row * 3 + 3];
                let arg = two_pi * (b[0] * u[0] + b[1] * u[1] + b[2] * u[2]);
                feat[row] = arg.sin();
                feat[e + row] = arg.cos();
            }
            Ok(feat)
        }
    }
}

/// Stored forward intermediates for one point, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct InrCache<S> {
    // Input vector to each linear layer, forward order.
    inputs: Vec<Vec<S>>,
    // Pre-activation of each GeLU layer (None for plain layers).
    pres: Vec<Option<Vec<S>>>,
}

fn check_params<S: Scalar>(cfg: &InrConfig<S>, w: &InrWeights<S>) -> Result<()> {
    let want = param_count(cfg);
    if w.params.len() != want {
        return Err(Error::Shape(format!(
            "weight vector has {} entries, architecture needs {want}",
            w.params.len()
        )));
    }
    Ok(())
}

fn forward_impl<S: Scalar>(
    cfg: &InrConfig<S>,
    w: &InrWeights<S>,
    point: &StPoint<S>,
    mut cache: Option<&mut InrCache<S>>,
) -> Result<Vec<S>> {
    check_params(cfg, w)?;
    let plan = layer_plan(cfg);
    let segments = layer_segments(cfg);
    let mut x = input_features(cfg, w, point)?;
    let mut z = Vec::new();
    for ((kind, rows, cols), seg) in plan.iter().zip(&segments) {
        let wslice = &w.params[seg.weight_offset..seg.weight_offset + rows * cols];
        let bslice = &w.params[seg.bias_offset..seg.bias_offset + rows];
        if let Some(cache) = cache.as_deref_mut() {
            cache.inputs.push(x.clone());
        }
        linear(wslice, bslice, *rows, *cols, &x, &mut z);
        match kind {
            LayerKind::Plain => {
                if let Some(cache) = cache.as_deref_mut() {
                    cache.pres.push(None);
                }
                std::mem::swap(&mut x, &mut z);
            }
            LayerKind::Activated => {
                if let Some(cache) = cache.as_deref_mut() {
                    cache.pres.push(Some(z.clone()));
                }
                x.clear();
                x.extend(z.iter().map(|&v| gelu(v)));
            }
            LayerKind::Residual => {
                if let Some(cache) = cache.as_deref_mut() {
                    cache.pres.push(Some(z.clone()));
                }
                for (xv, zv) in x.iter_mut().zip(&z) {
                    *xv += gelu(*zv);
                }
            }
        }
    }
    Ok(x)
}

/// Latent coordinates L(point) in R^p.
pub fn inr_forward<S: Scalar>(
    cfg: &InrConfig<S>,
    w: &InrWeights<S>,
    point: &StPoint<S>,
) -> Result<Vec<S>> {
    forward_impl(cfg, w, point, None)
}

/// Forward pass that also returns the intermediates needed by
/// [`inr_backward`].
pub fn inr_forward_cached<S: Scalar>(
    cfg: &InrConfig<S>,
    w: &InrWeights<S>,
    point: &StPoint<S>,
) -> Result<(Vec<S>, InrCache<S>)> {
    let mut cache = InrCache { inputs: Vec::new(), pres: Vec::new() };
    let out = forward_impl(cfg, w, point, Some(&mut cache))?;
    Ok((out, cache))
}

/// Accumulate d(φ)/d(params) into `grad` for a scalar φ with
/// dφ/dL = `d_latent`, using intermediates from [`inr_forward_cached`].
pub fn inr_backward<S: Scalar>(
    cfg: &InrConfig<S>,
    w: &InrWeights<S>,
    cache: &InrCache<S>,
    d_latent: &[S],
    grad: &mut [S],
) -> Result<()> {
    check_params(cfg, w)?;
    if grad.len() != w.params.len() {
        return Err(Error::Shape(format!(
            "gradient buffer has {} entries, expected {}",
            grad.len(),
            w.params.len()
        )));
    }
    if d_latent.len() != cfg.latent_dim {
        return Err(Error::Shape(format!(
            "upstream gradient has {} entries, expected {}",
            d_latent.len(),
            cfg.latent_dim
        )));
    }
    let plan = layer_plan(cfg);
    let segments = layer_segments(cfg);
    if cache.inputs.len() != plan.len() || cache.pres.len() != plan.len() {
        return Err(Error::Shape("forward cache does not match architecture".into()));
    }
    let mut dy = d_latent.to_vec();
    let mut dz = Vec::new();
    for idx in (0..plan.len()).rev() {
        let (kind, rows, cols) = plan[idx];
        let seg = segments[idx];
        let x_in = &cache.inputs[idx];
        let wslice = &w.params[seg.weight_offset..seg.weight_offset + rows * cols];
        // dz: gradient at the pre-activation.
        match kind {
            LayerKind::Plain => {
                dz.clear();
                dz.extend_from_slice(&dy);
            }
            LayerKind::Activated | LayerKind::Residual => {
                let pre = cache.pres[idx]
                    .as_ref()
                    .ok_or_else(|| Error::Shape("missing pre-activation in cache".into()))?;
                dz.clear();
                dz.extend(dy.iter().zip(pre).map(|(&g, &z)| g * gelu_prime(z)));
            }
        }
        for r in 0..rows {
            let gw = &mut grad[seg.weight_offset + r * cols..seg.weight_offset + (r + 1) * cols];
            for (gv, xv) in gw.iter_mut().zip(x_in) {
                *gv += dz[r] * *xv;
            }
            grad[seg.bias_offset + r] += dz[r];
        }
        if idx == 0 {
            break; // no gradient into the (fixed) input features
        }
        // dx = Wᵀ dz (+ dy for residual skip).
        let mut dx = vec![S::zero(); cols];
        for r in 0..rows {
            let row = &wslice[r * cols..(r + 1) * cols];
            for (dv, wv) in dx.iter_mut().zip(row) {
                *dv += *wv * dz[r];
            }
        }
        if kind == LayerKind::Residual {
            for (dv, yv) in dx.iter_mut().zip(&dy) {
                *dv += *yv;
            }
        }
        dy = dx;
    }
    Ok(())
}
