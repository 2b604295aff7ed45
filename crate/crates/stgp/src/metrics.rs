//! Forecast verification: point accuracy and probabilistic calibration.
//!
//! RMSE, Gaussian negative log likelihood (per-point variances by default,
//! with a pooled legacy mode for table comparability), the closed-form
//! Gaussian CRPS, the interval score at level α, and closed-interval
//! empirical coverage with mean width.

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

/// How the Gaussian NLL treats the predictive standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NllMode {
    /// Mean over points of ½·log σ̂_i² + r_i²/(2 σ̂_i²).
    PerPoint,
    /// Pooled legacy form (σ̂ = mean of the σ̂_i, sum not divided by n):
    /// (n/2)·log σ̂ + Σ r_i²/(2 σ̂).
    Pooled,
}

impl std::fmt::Display for NllMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NllMode::PerPoint => "per-point",
            NllMode::Pooled => "pooled",
        })
    }
}

fn check_lengths(name: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{name}: lengths differ ({a} vs {b})")));
    }
    Ok(())
}

fn check_nonempty(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter(format!("{name}: need at least one observation")));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse<S: Scalar>(y: &[S], yhat: &[S]) -> Result<S> {
    check_lengths("rmse", y.len(), yhat.len())?;
    check_nonempty("rmse", y.len())?;
    let mut s = S::zero();
    for (a, b) in y.iter().zip(yhat) {
        let r = *a - *b;
        s += r * r;
    }
    Ok((s / S::of(y.len() as f64)).sqrt())
}

/// Gaussian negative log likelihood (constants in π omitted).
pub fn gaussian_nll<S: Scalar>(y: &[S], yhat: &[S], sd: &[S], mode: NllMode) -> Result<S> {
    check_lengths("nll", y.len(), yhat.len())?;
    check_lengths("nll", y.len(), sd.len())?;
    check_nonempty("nll", y.len())?;
    if let Some(bad) = sd.iter().find(|s| !(**s > S::zero()) || !s.is_finite()) {
        return Err(Error::Parameter(format!(
            "nll: standard deviations must be positive and finite, got {bad}"
        )));
    }
    let half = c::<S>(0.5);
    let two = c::<S>(2.0);
    let n = S::of(y.len() as f64);
    match mode {
        NllMode::PerPoint => {
            let mut s = S::zero();
            for ((a, b), sig) in y.iter().zip(yhat).zip(sd) {
                let r = *a - *b;
                s += half * (*sig * *sig).ln() + r * r / (two * *sig * *sig);
            }
            Ok(s / n)
        }
        NllMode::Pooled => {
            let pooled = sd.iter().copied().sum::<S>() / n;
            let mut s = S::zero();
            for (a, b) in y.iter().zip(yhat) {
                let r = *a - *b;
                s += r * r;
            }
            Ok(n / two * pooled.ln() + s / (two * pooled))
        }
    }
}

/// Mean closed-form CRPS of Gaussian forecasts:
/// σ̂·[z·(2Φ(z) − 1) + 2φ(z) − 1/√π] with z = (y − ŷ)/σ̂.
pub fn crps_gaussian<S: Scalar>(y: &[S], yhat: &[S], sd: &[S]) -> Result<S> {
    check_lengths("crps", y.len(), yhat.len())?;
    check_lengths("crps", y.len(), sd.len())?;
    check_nonempty("crps", y.len())?;
    if let Some(bad) = sd.iter().find(|s| !(**s > S::zero()) || !s.is_finite()) {
        return Err(Error::Parameter(format!(
            "crps: standard deviations must be positive and finite, got {bad}"
        )));
    }
    let two = c::<S>(2.0);
    let inv_sqrt_pi = S::one() / S::PI().sqrt();
    let mut s = S::zero();
    for ((a, b), sig) in y.iter().zip(yhat).zip(sd) {
        let z = (*a - *b) / *sig;
        s += *sig
            * (z * (two * S::norm_cdf(z) - S::one()) + two * S::norm_pdf(z) - inv_sqrt_pi);
    }
    Ok(s / S::of(y.len() as f64))
}

/// Mean interval score at level α:
/// (U − L) + (2/α)·(L − y)₊ + (2/α)·(y − U)₊.
pub fn interval_score<S: Scalar>(y: &[S], lower: &[S], upper: &[S], alpha: S) -> Result<S> {
    check_lengths("interval score", y.len(), lower.len())?;
    check_lengths("interval score", y.len(), upper.len())?;
    check_nonempty("interval score", y.len())?;
    if !(alpha > S::zero() && alpha < S::one()) {
        return Err(Error::Parameter(format!(
            "interval score: alpha must be in (0, 1), got {alpha}"
        )));
    }
    if let Some((l, u)) = lower.iter().zip(upper).find(|(l, u)| l > u) {
        return Err(Error::Parameter(format!(
            "interval score: crossed bounds (lower {l} > upper {u})"
        )));
    }
    let two_over_alpha = c::<S>(2.0) / alpha;
    let mut s = S::zero();
    for ((yi, l), u) in y.iter().zip(lower).zip(upper) {
        s += *u - *l
            + two_over_alpha * (*l - *yi).max(S::zero())
            + two_over_alpha * (*yi - *u).max(S::zero());
    }
    Ok(s / S::of(y.len() as f64))
}

/// Closed-interval empirical coverage and mean interval width.
pub fn coverage_and_width<S: Scalar>(y: &[S], lower: &[S], upper: &[S]) -> Result<(S, S)> {
    check_lengths("coverage", y.len(), lower.len())?;
    check_lengths("coverage", y.len(), upper.len())?;
    check_nonempty("coverage", y.len())?;
    let mut covered = 0usize;
    let mut width = S::zero();
    for ((yi, l), u) in y.iter().zip(lower).zip(upper) {
        if *l <= *yi && *yi <= *u {
            covered += 1;
        }
        width += *u - *l;
    }
    let n = S::of(y.len() as f64);
    Ok((S::of(covered as f64) / n, width / n))
}

/// All metrics for one prediction method on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<S> {
    pub rmse: S,
    pub nll: S,
    pub crps: S,
    pub coverage: S,
    pub interval_score: S,
    pub mean_width: S,
    pub n: usize,
    pub alpha: S,
    pub nll_mode: NllMode,
}

/// Compute every metric from predictions, uncertainties, and bounds.
pub fn evaluate<S: Scalar>(
    y: &[S],
    yhat: &[S],
    sd: &[S],
    lower: &[S],
    upper: &[S],
    alpha: S,
    nll_mode: NllMode,
) -> Result<EvalReport<S>> {
    let (coverage, mean_width) = coverage_and_width(y, lower, upper)?;
    Ok(EvalReport {
        rmse: rmse(y, yhat)?,
        nll: gaussian_nll(y, yhat, sd, nll_mode)?,
        crps: crps_gaussian(y, yhat, sd)?,
        coverage,
        interval_score: interval_score(y, lower, upper, alpha)?,
        mean_width,
        n: y.len(),
        alpha,
        nll_mode,
    })
}

impl<S: Scalar> EvalReport<S> {
    /// Header for the evaluation CSV.
    pub fn csv_header() -> &'static str {
        "method,n,alpha,rmse,nll,crps,coverage,interval_score,mean_width,nll_mode"
    }

    /// One CSV data row labeled with the prediction method.
    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.alpha,
            self.rmse,
            self.nll,
            self.crps,
            self.coverage,
            self.interval_score,
            self.mean_width,
            self.nll_mode
        )
    }
}

impl<S: Scalar> std::fmt::Display for EvalReport<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "n = {}, alpha = {}, nll mode = {}", self.n, self.alpha.as_f64(), self.nll_mode)?;
        writeln!(f, "{:>16} {:>12}", "metric", "value")?;
        for (name, v) in [
            ("rmse", self.rmse),
            ("nll", self.nll),
            ("crps", self.crps),
            ("coverage", self.coverage),
            ("interval_score", self.interval_score),
            ("mean_width", self.mean_width),
        ] {
            writeln!(f, "{name:>16} {:>12.6}", v.as_f64())?;
        }
        Ok(())
    }
}
