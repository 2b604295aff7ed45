//! Experiment configuration: TOML schema, profiles, and resolution.
//!
//! A config file is a sparse set of overrides on top of a profile. The
//! `desk` profile is sized for a laptop (small basis, few particles, fast
//! epochs); `paper` is the full-scale architecture. Resolution fills every
//! unset key from the profile, validates the result, and produces a concrete
//! [`ExperimentConfig`] whose `echo_toml` output parses back to itself, so a
//! resolved configuration is always serializable and auditable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::CovarianceParams;
use crate::latent::InrConfig;
use crate::model::ModelConfig;
use crate::pipeline::LatentPreset;
use crate::scalar::Scalar;
use crate::svgd::{Optimizer, SvgdConfig};

/// Scale preset for model and training knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected desk or paper)"
            ))),
        }
    }
}

/// Latent-network architecture choice; `None` disables the expansion
/// entirely (a stationary model).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneChoice {
    None,
    ResMlp,
    Ffnp,
    Ffng,
}

impl std::fmt::Display for BackboneChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneChoice::None => "none",
            BackboneChoice::ResMlp => "resmlp",
            BackboneChoice::Ffnp => "ffnp",
            BackboneChoice::Ffng => "ffng",
        })
    }
}

impl std::str::FromStr for BackboneChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BackboneChoice::None),
            "resmlp" => Ok(BackboneChoice::ResMlp),
            "ffnp" => Ok(BackboneChoice::Ffnp),
            "ffng" => Ok(BackboneChoice::Ffng),
            other => Err(Error::Config(format!(
                "unknown backbone {other:?} (expected none, resmlp, ffnp, or ffng)"
            ))),
        }
    }
}

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource<S> {
    Csv { path: PathBuf },
    Simulate(SimSettings<S>),
}

/// Synthetic-data knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings<S> {
    pub n: usize,
    pub params: CovarianceParams<S>,
    pub latent: LatentPreset<S>,
}

/// Split protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSettings<S> {
    Random { train: f64, val: f64, test: f64 },
    PerTime { train_frac: f64, val_times: Vec<S>, test_times: Vec<S> },
}

/// Model architecture knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings<S> {
    pub basis_count: usize,
    pub particles: usize,
    pub backbone: BackboneChoice,
    pub layers: usize,
    pub width: usize,
    pub latent_dim: usize,
    pub ffnp_freq_count: usize,
    pub ffnp_freq_constant: S,
    pub ffng_encode_dim: usize,
    pub ffng_sigma: S,
    pub freq_df_multiplier: S,
}

impl<S: Scalar> ModelSettings<S> {
    /// Concrete model configuration for these settings.
    pub fn to_model_config(&self) -> ModelConfig<S> {
        let inr = match self.backbone {
            BackboneChoice::None => None,
            BackboneChoice::ResMlp => {
                Some(InrConfig::res_mlp(self.layers, self.width, self.latent_dim))
            }
            BackboneChoice::Ffnp => Some(InrConfig::fourier_positional(
                self.layers,
                self.width,
                self.latent_dim,
                self.ffnp_freq_count,
                self.ffnp_freq_constant,
            )),
            BackboneChoice::Ffng => Some(InrConfig::fourier_gaussian(
                self.layers,
                self.width,
                self.latent_dim,
                self.ffng_encode_dim,
                self.ffng_sigma,
            )),
        };
        let mut cfg = ModelConfig::new(self.basis_count, inr);
        cfg.freq_df_multiplier = self.freq_df_multiplier;
        cfg
    }
}

/// Training knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSettings<S> {
    pub step_size: S,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub weight_decay: S,
    pub lr_decay: S,
}

impl<S: Scalar> TrainingSettings<S> {
    pub fn to_svgd_config(&self, seed: u64) -> SvgdConfig<S> {
        let mut cfg = SvgdConfig::new(self.step_size, self.epochs, self.batch_size, seed);
        cfg.optimizer = self.optimizer;
        cfg.weight_decay = self.weight_decay;
        cfg.lr_decay = self.lr_decay;
        cfg
    }
}

/// Conformal calibration knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConformalSettings {
    /// Candidate neighbor counts; the winner minimizes held-out interval
    /// score.
    pub neighbor_counts: Vec<usize>,
    /// Training rows held out for neighbor-count selection.
    pub holdout: usize,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig<S> {
    pub seed: u64,
    pub alpha: S,
    pub profile: Profile,
    pub out_dir: PathBuf,
    pub source: DataSource<S>,
    pub split: SplitSettings<S>,
    pub model: ModelSettings<S>,
    pub training: TrainingSettings<S>,
    pub conformal: ConformalSettings,
}

// --- raw TOML schema ------------------------------------------------------

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<RawExperiment>,
    data: Option<RawData>,
    model: Option<RawModel>,
    training: Option<RawTraining>,
    conformal: Option<RawConformal>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    seed: Option<u64>,
    alpha: Option<f64>,
    profile: Option<String>,
    out_dir: Option<String>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: Option<String>,
    csv_path: Option<String>,
    split: Option<String>,
    train_fraction: Option<f64>,
    val_fraction: Option<f64>,
    test_fraction: Option<f64>,
    per_time_train_fraction: Option<f64>,
    val_times: Option<Vec<f64>>,
    test_times: Option<Vec<f64>>,
    simulate: Option<RawSimulate>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    kind: Option<String>,
    n: Option<usize>,
    sigma2: Option<f64>,
    tau2: Option<f64>,
    nu: Option<f64>,
    rho_s: Option<f64>,
    rho_t: Option<f64>,
    rho_l: Option<f64>,
    latent: Option<String>,
    latent_amplitude: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    basis_count: Option<usize>,
    particles: Option<usize>,
    backbone: Option<String>,
    layers: Option<usize>,
    width: Option<usize>,
    latent_dim: Option<usize>,
    ffnp_freq_count: Option<usize>,
    ffnp_freq_constant: Option<f64>,
    ffng_encode_dim: Option<usize>,
    ffng_sigma: Option<f64>,
    freq_df_multiplier: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    step_size: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    optimizer: Option<String>,
    weight_decay: Option<f64>,
    lr_decay: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConformal {
    neighbor_counts: Option<Vec<usize>>,
    holdout: Option<usize>,
}

// --- profiles -------------------------------------------------------------

fn profile_model<S: Scalar>(profile: Profile) -> ModelSettings<S> {
    match profile {
        Profile::Desk => ModelSettings {
            basis_count: 200,
            particles: 5,
            backbone: BackboneChoice::ResMlp,
            layers: 3,
            width: 64,
            latent_dim: 8,
            ffnp_freq_count: 16,
            ffnp_freq_constant: S::of(30.0),
            ffng_encode_dim: 32,
            ffng_sigma: S::one(),
            freq_df_multiplier: S::of(2.0),
        },
        Profile::Paper => ModelSettings {
            basis_count: 5000,
            particles: 10,
            backbone: BackboneChoice::ResMlp,
            layers: 5,
            width: 1024,
            latent_dim: 128,
            ffnp_freq_count: 1024,
            ffnp_freq_constant: S::of(30.0),
            ffng_encode_dim: 1024,
            ffng_sigma: S::one(),
            freq_df_multiplier: S::of(2.0),
        },
    }
}

fn profile_training<S: Scalar>(profile: Profile) -> TrainingSettings<S> {
    match profile {
        Profile::Desk => TrainingSettings {
            step_size: S::of(1e-3),
            epochs: 50,
            batch_size: 64,
            optimizer: Optimizer::Adam,
            weight_decay: S::zero(),
            lr_decay: S::one(),
        },
        Profile::Paper => TrainingSettings {
            step_size: S::of(1e-5),
            epochs: 15,
            batch_size: 1024,
            optimizer: Optimizer::Adam,
            weight_decay: S::zero(),
            lr_decay: S::one(),
        },
    }
}

// --- resolution -----------------------------------------------------------

/// Resolve raw TOML text into a full configuration. A profile given here
/// (from the command line) overrides the one in the file.
pub fn parse<S: Scalar>(
    text: &str,
    profile_override: Option<Profile>,
) -> Result<ExperimentConfig<S>> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
    resolve(raw, profile_override)
}

/// Read and resolve a config file.
pub fn load<S: Scalar>(
    path: &Path,
    profile_override: Option<Profile>,
) -> Result<ExperimentConfig<S>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    parse(&text, profile_override)
}

/// The profile's defaults with nothing overridden.
pub fn default_config<S: Scalar>(profile: Profile) -> ExperimentConfig<S> {
    resolve(RawConfig::default(), Some(profile)).expect("profile defaults are valid")
}

fn resolve<S: Scalar>(
    raw: RawConfig,
    profile_override: Option<Profile>,
) -> Result<ExperimentConfig<S>> {
    let exp = raw.experiment.unwrap_or_default();
    let profile = match profile_override {
        Some(p) => p,
        None => match &exp.profile {
            Some(name) => name.parse()?,
            None => Profile::Desk,
        },
    };
    let seed = exp.seed.unwrap_or(42);
    let alpha = S::of(exp.alpha.unwrap_or(0.05));
    let out_dir = PathBuf::from(exp.out_dir.unwrap_or_else(|| "stgp-out".into()));

    let data = raw.data.unwrap_or_default();
    let source_name = data.source.unwrap_or_else(|| "simulate".into());
    let source = match source_name.as_str() {
        "csv" => {
            let path = data.csv_path.ok_or_else(|| {
                Error::Config("data.source = \"csv\" requires data.csv_path".into())
            })?;
            DataSource::Csv { path: PathBuf::from(path) }
        }
        "simulate" => {
            let sim = data.simulate.unwrap_or_default();
            let params = CovarianceParams::new(
                S::of(sim.sigma2.unwrap_or(1.0)),
                S::of(sim.nu.unwrap_or(1.5)),
                S::of(sim.rho_s.unwrap_or(0.3)),
                S::of(sim.rho_t.unwrap_or(0.3)),
                S::of(sim.rho_l.unwrap_or(0.3)),
                S::of(sim.tau2.unwrap_or(0.1)),
            )?;
            let kind = sim.kind.unwrap_or_else(|| "stationary".into());
            let latent_name = sim.latent.clone();
            let amplitude = S::of(sim.latent_amplitude.unwrap_or(1.0));
            let latent = match kind.as_str() {
                "stationary" => {
                    if matches!(latent_name.as_deref(), Some(l) if l != "none") {
                        return Err(Error::Config(format!(
                            "simulate.kind = \"stationary\" contradicts latent = {:?}",
                            latent_name.unwrap()
                        )));
                    }
                    LatentPreset::None
                }
                "expanded" | "dimension-expanded" => {
                    match latent_name.as_deref().unwrap_or("sine-s1") {
                        "sine-s1" => LatentPreset::SineS1 { amplitude },
                        "none" => LatentPreset::None,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown latent preset {other:?} (expected none or sine-s1)"
                            )))
                        }
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown simulate.kind {other:?} (expected stationary or expanded)"
                    )))
                }
            };
            DataSource::Simulate(SimSettings { n: sim.n.unwrap_or(2000), params, latent })
        }
        other => {
            return Err(Error::Config(format!(
                "unknown data.source {other:?} (expected simulate or csv)"
            )))
        }
    };

    let split_name = data.split.unwrap_or_else(|| "random".into());
    let split = match split_name.as_str() {
        "random" => SplitSettings::Random {
            train: data.train_fraction.unwrap_or(0.8),
            val: data.val_fraction.unwrap_or(0.1),
            test: data.test_fraction.unwrap_or(0.1),
        },
        "per-time" => SplitSettings::PerTime {
            train_frac: data.per_time_train_fraction.unwrap_or(0.1),
            val_times: data.val_times.unwrap_or_default().into_iter().map(S::of).collect(),
            test_times: data.test_times.unwrap_or_default().into_iter().map(S::of).collect(),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown data.split {other:?} (expected random or per-time)"
            )))
        }
    };

    let mut model = profile_model::<S>(profile);
    if let Some(m) = raw.model {
        if let Some(v) = m.basis_count {
            model.basis_count = v;
        }
        if let Some(v) = m.particles {
            model.particles = v;
        }
        if let Some(v) = m.backbone {
            model.backbone = v.parse()?;
        }
        if let Some(v) = m.layers {
            model.layers = v;
        }
        if let Some(v) = m.width {
            model.width = v;
        }
        if let Some(v) = m.latent_dim {
            model.latent_dim = v;
        }
        if let Some(v) = m.ffnp_freq_count {
            model.ffnp_freq_count = v;
        }
        if let Some(v) = m.ffnp_freq_constant {
            model.ffnp_freq_constant = S::of(v);
        }
        if let Some(v) = m.ffng_encode_dim {
            model.ffng_encode_dim = v;
        }
        if let Some(v) = m.ffng_sigma {
            model.ffng_sigma = S::of(v);
        }
        if let Some(v) = m.freq_df_multiplier {
            model.freq_df_multiplier = S::of(v);
        }
    }

    let mut training = profile_training::<S>(profile);
    if let Some(t) = raw.training {
        if let Some(v) = t.step_size {
            training.step_size = S::of(v);
        }
        if let Some(v) = t.epochs {
            training.epochs = v;
        }
        if let Some(v) = t.batch_size {
            training.batch_size = v;
        }
        if let Some(v) = t.optimizer {
            training.optimizer = match v.as_str() {
                "adam" => Optimizer::Adam,
                "sgd" => Optimizer::Sgd,
                other => {
                    return Err(Error::Config(format!(
                        "unknown optimizer {other:?} (expected adam or sgd)"
                    )))
                }
            };
        }
        if let Some(v) = t.weight_decay {
            training.weight_decay = S::of(v);
        }
        if let Some(v) = t.lr_decay {
            training.lr_decay = S::of(v);
        }
    }

    let conf = raw.conformal.unwrap_or_default();
    let conformal = ConformalSettings {
        neighbor_counts: conf.neighbor_counts.unwrap_or_else(|| vec![40, 80, 160]),
        holdout: conf.holdout.unwrap_or(100),
    };

    let cfg = ExperimentConfig {
        seed,
        alpha,
        profile,
        out_dir,
        source,
        split,
        model,
        training,
        conformal,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl<S: Scalar> ExperimentConfig<S> {
    /// Reject inconsistent or out-of-range settings.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > S::zero() && self.alpha < S::one()) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.model.basis_count == 0 {
            return Err(Error::Config("model.basis_count must be at least 1".into()));
        }
        if self.model.particles == 0 {
            return Err(Error::Config("model.particles must be at least 1".into()));
        }
        self.model.to_model_config().validate().map_err(|e| {
            Error::Config(format!("model settings: {e}"))
        })?;
        if !(self.training.step_size > S::zero()) {
            return Err(Error::Config("training.step_size must be positive".into()));
        }
        if self.training.epochs == 0 {
            return Err(Error::Config("training.epochs must be at least 1".into()));
        }
        if !(self.training.lr_decay > S::zero() && self.training.lr_decay <= S::one()) {
            return Err(Error::Config("training.lr_decay must be in (0, 1]".into()));
        }
        if !(self.training.weight_decay >= S::zero()) {
            return Err(Error::Config("training.weight_decay must be nonnegative".into()));
        }
        match &self.split {
            SplitSettings::Random { train, val, test } => {
                let sum = train + val + test;
                if !(*train > 0.0) || *val < 0.0 || *test < 0.0 || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "split fractions must be nonnegative with positive train and sum 1, got ({train}, {val}, {test})"
                    )));
                }
            }
            SplitSettings::PerTime { train_frac, .. } => {
                if !(*train_frac > 0.0 && *train_frac <= 1.0) {
                    return Err(Error::Config(format!(
                        "per-time training fraction must be in (0, 1], got {train_frac}"
                    )));
                }
            }
        }
        if let DataSource::Simulate(sim) = &self.source {
            if sim.n == 0 {
                return Err(Error::Config("simulate.n must be at least 1".into()));
            }
        }
        if self.conformal.neighbor_counts.is_empty() {
            return Err(Error::Config("conformal.neighbor_counts must not be empty".into()));
        }
        if self.conformal.neighbor_counts.iter().any(|&k| k == 0) {
            return Err(Error::Config("conformal neighbor counts must be at least 1".into()));
        }
        if self.conformal.holdout == 0 {
            return Err(Error::Config("conformal.holdout must be at least 1".into()));
        }
        Ok(())
    }

    /// Command-line overrides applied after resolution.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        alpha: Option<f64>,
        out_dir: Option<PathBuf>,
    ) -> Result<()> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(a) = alpha {
            self.alpha = S::of(a);
        }
        if let Some(o) = out_dir {
            self.out_dir = o;
        }
        self.validate()
    }

    fn to_raw(&self) -> RawConfig {
        let (source, csv_path, simulate) = match &self.source {
            DataSource::Csv { path } => (
                "csv".to_string(),
                Some(path.to_string_lossy().into_owned()),
                None,
            ),
            DataSource::Simulate(sim) => {
                let (kind, latent, amplitude) = match sim.latent {
                    LatentPreset::None => ("stationary", "none", 1.0),
                    LatentPreset::SineS1 { amplitude } => {
                        ("expanded", "sine-s1", amplitude.as_f64())
                    }
                };
                (
                    "simulate".to_string(),
                    None,
                    Some(RawSimulate {
                        kind: Some(kind.into()),
                        n: Some(sim.n),
                        sigma2: Some(sim.params.sigma2.as_f64()),
                        tau2: Some(sim.params.tau2.as_f64()),
                        nu: Some(sim.params.nu.as_f64()),
                        rho_s: Some(sim.params.rho_s.as_f64()),
                        rho_t: Some(sim.params.rho_t.as_f64()),
                        rho_l: Some(sim.params.rho_l.as_f64()),
                        latent: Some(latent.into()),
                        latent_amplitude: Some(amplitude),
                    }),
                )
            }
        };
        let (split, tf, vf, sf, ptf, vt, tt) = match &self.split {
            SplitSettings::Random { train, val, test } => (
                "random".to_string(),
                Some(*train),
                Some(*val),
                Some(*test),
                None,
                None,
                None,
            ),
            SplitSettings::PerTime { train_frac, val_times, test_times } => (
                "per-time".to_string(),
                None,
                None,
                None,
                Some(*train_frac),
                Some(val_times.iter().map(|v| v.as_f64()).collect()),
                Some(test_times.iter().map(|v| v.as_f64()).collect()),
            ),
        };
        RawConfig {
            experiment: Some(RawExperiment {
                seed: Some(self.seed),
                alpha: Some(self.alpha.as_f64()),
                profile: Some(self.profile.to_string()),
                out_dir: Some(self.out_dir.to_string_lossy().into_owned()),
            }),
            data: Some(RawData {
                source: Some(source),
                csv_path,
                split: Some(split),
                train_fraction: tf,
                val_fraction: vf,
                test_fraction: sf,
                per_time_train_fraction: ptf,
                val_times: vt,
                test_times: tt,
                simulate,
            }),
            model: Some(RawModel {
                basis_count: Some(self.model.basis_count),
                particles: Some(self.model.particles),
                backbone: Some(self.model.backbone.to_string()),
                layers: Some(self.model.layers),
                width: Some(self.model.width),
                latent_dim: Some(self.model.latent_dim),
                ffnp_freq_count: Some(self.model.ffnp_freq_count),
                ffnp_freq_constant: Some(self.model.ffnp_freq_constant.as_f64()),
                ffng_encode_dim: Some(self.model.ffng_encode_dim),
                ffng_sigma: Some(self.model.ffng_sigma.as_f64()),
                freq_df_multiplier: Some(self.model.freq_df_multiplier.as_f64()),
            }),
            training: Some(RawTraining {
                step_size: Some(self.training.step_size.as_f64()),
                epochs: Some(self.training.epochs),
                batch_size: Some(self.training.batch_size),
                optimizer: Some(
                    match self.training.optimizer {
                        Optimizer::Adam => "adam",
                        Optimizer::Sgd => "sgd",
                    }
                    .into(),
                ),
                weight_decay: Some(self.training.weight_decay.as_f64()),
                lr_decay: Some(self.training.lr_decay.as_f64()),
            }),
            conformal: Some(RawConformal {
                neighbor_counts: Some(self.conformal.neighbor_counts.clone()),
                holdout: Some(self.conformal.holdout),
            }),
        }
    }

    /// Fully resolved TOML. Parsing this text reproduces the configuration.
    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(&self.to_raw()).expect("resolved config serializes")
    }

    /// Digest of the settings that determine the trained ensemble: seed,
    /// data, split, model, and training. Excludes alpha, the output
    /// directory, and conformal settings, which only affect downstream
    /// stages.
    pub fn reproducibility_hash(&self) -> [u8; 16] {
        let mut canon = String::new();
        canon.push_str(&format!("seed={};", self.seed));
        match &self.source {
            DataSource::Csv { path } => {
                canon.push_str(&format!("csv={};", path.to_string_lossy()));
            }
            DataSource::Simulate(sim) => {
                canon.push_str(&format!(
                    "sim=n{},s{},t{},nu{},rs{},rt{},rl{},",
                    sim.n,
                    sim.params.sigma2.as_f64(),
                    sim.params.tau2.as_f64(),
                    sim.params.nu.as_f64(),
                    sim.params.rho_s.as_f64(),
                    sim.params.rho_t.as_f64(),
                    sim.params.rho_l.as_f64()
                ));
                match sim.latent {
                    LatentPreset::None => canon.push_str("lat=none;"),
                    LatentPreset::SineS1 { amplitude } => {
                        canon.push_str(&format!("lat=sine-s1:{};", amplitude.as_f64()))
                    }
                }
            }
        }
        match &self.split {
            SplitSettings::Random { train, val, test } => {
                canon.push_str(&format!("split=random:{train},{val},{test};"));
            }
            SplitSettings::PerTime { train_frac, val_times, test_times } => {
                canon.push_str(&format!(
                    "split=per-time:{train_frac}:{:?}:{:?};",
                    val_times.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                    test_times.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
                ));
            }
        }
        let m = &self.model;
        canon.push_str(&format!(
            "model=J{},M{},{},L{},W{},p{},kc{},k{},ec{},es{},df{};",
            m.basis_count,
            m.particles,
            m.backbone,
            m.layers,
            m.width,
            m.latent_dim,
            m.ffnp_freq_count,
            m.ffnp_freq_constant.as_f64(),
            m.ffng_encode_dim,
            m.ffng_sigma.as_f64(),
            m.freq_df_multiplier.as_f64()
        ));
        let t = &self.training;
        canon.push_str(&format!(
            "train=lr{},e{},b{},{:?},wd{},dk{}",
            t.step_size.as_f64(),
            t.epochs,
            t.batch_size,
            t.optimizer,
            t.weight_decay.as_f64(),
            t.lr_decay.as_f64()
        ));
        let digest = Sha256::digest(canon.as_bytes());
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        out
    }
}
