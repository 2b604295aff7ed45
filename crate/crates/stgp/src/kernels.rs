//! Matérn covariance over expanded spatio-temporal distances, plus an exact
//! small-n Gaussian process simulator/predictor used as a ground-truth oracle.
//!
//! The correlation is M(d) = σ²·(2^{1−ν}/Γ(ν))·(√(2ν)d)^ν·K_ν(√(2ν)d) with
//! the anisotropic distance d² = ‖Δs‖²/ρ_s² + Δt²/ρ_t² + ‖ΔL‖²/ρ_l², where
//! ΔL is the difference of latent expansion coordinates (absent for the
//! stationary case). ν ∈ {1/2, 3/2, 5/2} take the closed forms; other orders
//! go through the numeric Bessel evaluation.

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::{c, Scalar};

/// Hard cap on the exact-GP oracle size; dense factorizations beyond this
/// are out of scope for a ground-truth tool.
pub const GP_ORACLE_CAP: usize = 5000;

/// Spatio-temporal input location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StPoint<S> {
    /// Spatial coordinates (s1, s2).
    pub s: [S; 2],
    /// Time coordinate.
    pub t: S,
}

impl<S: Scalar> StPoint<S> {
    pub fn new(s1: S, s2: S, t: S) -> Self {
        StPoint { s: [s1, s2], t }
    }

    /// Coordinates as a fixed (s1, s2, t) array.
    pub fn coords(&self) -> [S; 3] {
        [self.s[0], self.s[1], self.t]
    }
}

/// Covariance hyperparameters on the natural scale.
///
/// ρ_l is the single shared range for all latent expansion coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceParams<S> {
    /// Process variance σ².
    pub sigma2: S,
    /// Matérn smoothness ν.
    pub nu: S,
    /// Spatial range ρ_s.
    pub rho_s: S,
    /// Temporal range ρ_t.
    pub rho_t: S,
    /// Latent range ρ_l.
    pub rho_l: S,
    /// Nugget variance τ².
    pub tau2: S,
}

impl<S: Scalar> CovarianceParams<S> {
    /// Validated constructor: ν and all ranges strictly positive and finite;
    /// σ² and τ² nonnegative (zero variances are allowed so the simulator
    /// can express the degenerate constant-zero process).
    pub fn new(sigma2: S, nu: S, rho_s: S, rho_t: S, rho_l: S, tau2: S) -> Result<Self> {
        for (name, v) in [("nu", nu), ("rho_s", rho_s), ("rho_t", rho_t), ("rho_l", rho_l)] {
            if !(v > S::zero()) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [("sigma2", sigma2), ("tau2", tau2)] {
            if !(v >= S::zero()) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(CovarianceParams { sigma2, nu, rho_s, rho_t, rho_l, tau2 })
    }
}

/// Matérn correlation M(d) at scaled distance d ≥ 0 with smoothness ν > 0.
/// M(0) = 1 exactly; half-integer orders 1/2, 3/2, 5/2 use closed forms.
pub fn matern_correlation<S: Scalar>(d: S, nu: S) -> Result<S> {
    if !(d >= S::zero()) || !d.is_finite() {
        return Err(Error::Parameter(format!("distance must be finite and >= 0, got {d}")));
    }
    if !(nu > S::zero()) || !nu.is_finite() {
        return Err(Error::Parameter(format!("nu must be strictly positive and finite, got {nu}")));
    }
    if d == S::zero() {
        return Ok(S::one());
    }
    let half = c::<S>(0.5);
    if nu == half {
        return Ok((-d).exp());
    }
    if nu == c(1.5) {
        let a = c::<S>(3.0).sqrt() * d;
        return Ok((S::one() + a) * (-a).exp());
    }
    if nu == c(2.5) {
        let a = c::<S>(5.0).sqrt() * d;
        return Ok((S::one() + a + a * a / c(3.0)) * (-a).exp());
    }
    Ok(matern_general(d, nu))
}

// General-order route through the numeric Bessel evaluation.
fn matern_general<S: Scalar>(d: S, nu: S) -> S {
    let x = (c::<S>(2.0) * nu).sqrt() * d;
    // Below this the correlation is 1 to double precision and the Bessel
    // argument risks overflow in the scaled integrand.
    if x < c(1e-30) {
        return S::one();
    }
    let log_pref = (S::one() - nu) * c::<S>(2.0).ln() - nu.ln_gamma() + nu * x.ln();
    let k = S::bessel_k(nu, x);
    if k <= S::zero() {
        return S::zero(); // underflowed tail
    }
    (log_pref + k.ln()).exp()
}

/// Anisotropic spatio-temporal distance
/// √(‖a.s − b.s‖²/ρ_s² + (a.t − b.t)²/ρ_t²).
pub fn st_distance<S: Scalar>(a: &StPoint<S>, b: &StPoint<S>, params: &CovarianceParams<S>) -> S {
    let ds1 = a.s[0] - b.s[0];
    let ds2 = a.s[1] - b.s[1];
    let dt = a.t - b.t;
    ((ds1 * ds1 + ds2 * ds2) / (params.rho_s * params.rho_s)
        + dt * dt / (params.rho_t * params.rho_t))
        .sqrt()
}

/// Distance with latent expansion coordinates appended:
/// √(st² + ‖la − lb‖²/ρ_l²). Latent slices must have equal length.
pub fn expanded_distance<S: Scalar>(
    a: &StPoint<S>,
    b: &StPoint<S>,
    la: &[S],
    lb: &[S],
    params: &CovarianceParams<S>,
) -> Result<S> {
    if la.len() != lb.len() {
        return Err(Error::Shape(format!(
            "latent coordinate lengths differ: {} vs {}",
            la.len(),
            lb.len()
        )));
    }
    let base = st_distance(a, b, params);
    let mut lat = S::zero();
    for (&x, &y) in la.iter().zip(lb) {
        let dl = x - y;
        lat += dl * dl;
    }
    Ok((base * base + lat / (params.rho_l * params.rho_l)).sqrt())
}

/// Full covariance σ²·M(d) between two (possibly latent-expanded) locations,
/// without the nugget.
pub fn matern_covariance<S: Scalar>(
    a: &StPoint<S>,
    b: &StPoint<S>,
    la: &[S],
    lb: &[S],
    params: &CovarianceParams<S>,
) -> Result<S> {
    let d = expanded_distance(a, b, la, lb, params)?;
    Ok(params.sigma2 * matern_correlation(d, params.nu)?)
}

// Dense covariance matrix C = σ² M + τ² I, row-major.
fn build_covariance<S: Scalar>(
    points: &[StPoint<S>],
    latents: Option<&[Vec<S>]>,
    params: &CovarianceParams<S>,
) -> Result<Vec<S>> {
    let n = points.len();
    if let Some(ls) = latents {
        if ls.len() != n {
            return Err(Error::Shape(format!(
                "latent rows ({}) must match points ({n})",
                ls.len()
            )));
        }
    }
    let empty: &[S] = &[];
    let mut cov = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let (la, lb) = match latents {
                Some(ls) => (ls[i].as_slice(), ls[j].as_slice()),
                None => (empty, empty),
            };
            let mut v = matern_covariance(&points[i], &points[j], la, lb, params)?;
            if i == j {
                v += params.tau2;
            }
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
    }
    Ok(cov)
}

// In-place lower Cholesky of a flat row-major SPD matrix; fails on a
// non-positive pivot.
fn cholesky_in_place<S: Scalar>(mat: &mut [S], n: usize) -> std::result::Result<(), usize> {
    for i in 0..n {
        for j in 0..=i {
            let mut s = mat[i * n + j];
            for k in 0..j {
                s -= mat[i * n + k] * mat[j * n + k];
            }
            if i == j {
                if !(s > S::zero()) {
                    return Err(i);
                }
                mat[i * n + i] = s.sqrt();
            } else {
                mat[i * n + j] = s / mat[j * n + j];
            }
        }
    }
    // Zero the strict upper triangle so the factor is self-describing.
    for i in 0..n {
        for j in (i + 1)..n {
            mat[i * n + j] = S::zero();
        }
    }
    Ok(())
}

// Factor C, escalating diagonal jitter 1e-10·σ² × 10 up to 1e-4·σ² if the
// plain factorization breaks down.
fn cholesky_with_jitter<S: Scalar>(cov: &[S], n: usize, sigma2: S) -> Result<Vec<S>> {
    let mut jitter = S::zero();
    loop {
        let mut mat = cov.to_vec();
        if jitter > S::zero() {
            for i in 0..n {
                mat[i * n + i] += jitter;
            }
        }
        match cholesky_in_place(&mut mat, n) {
            Ok(()) => return Ok(mat),
            Err(row) => {
                let next = if jitter == S::zero() {
                    c::<S>(1e-10) * sigma2
                } else {
                    jitter * c(10.0)
                };
                if next > c::<S>(1e-4) * sigma2 || !(next > S::zero()) {
                    return Err(Error::Numerical(format!(
                        "covariance factorization failed at row {row} even with jitter {jitter}"
                    )));
                }
                jitter = next;
            }
        }
    }
}

// Solve L z = b in place.
fn forward_solve<S: Scalar>(l: &[S], n: usize, b: &mut [S]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

// Solve Lᵀ z = b in place.
fn backward_solve<S: Scalar>(l: &[S], n: usize, b: &mut [S]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Draw one exact zero-mean GP realization (nugget included) at the given
/// locations. Deterministic in `seed`; n is capped at [`GP_ORACLE_CAP`].
pub fn gp_simulate<S: Scalar>(
    points: &[StPoint<S>],
    latents: Option<&[Vec<S>]>,
    params: &CovarianceParams<S>,
    seed: u64,
) -> Result<Vec<S>> {
    let n = points.len();
    if n > GP_ORACLE_CAP {
        return Err(Error::SizeLimit { what: "gp_simulate points".into(), n, cap: GP_ORACLE_CAP });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if params.sigma2 == S::zero() && params.tau2 == S::zero() {
        return Ok(vec![S::zero(); n]); // degenerate constant-zero process
    }
    let cov = build_covariance(points, latents, params)?;
    let chol = cholesky_with_jitter(&cov, n, params.sigma2)?;
    let mut rng = rng_from(seed);
    let z: Vec<S> = (0..n).map(|_| S::std_normal(&mut rng)).collect();
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut s = S::zero();
        for k in 0..=i {
            s += chol[i * n + k] * z[k];
        }
        y[i] = s;
    }
    Ok(y)
}

/// Exact GP prediction (kriging) with known hyperparameters: returns the
/// posterior mean and variance (including the nugget) at each test location.
pub fn gp_predict<S: Scalar>(
    train: &[StPoint<S>],
    train_latents: Option<&[Vec<S>]>,
    train_y: &[S],
    test: &[StPoint<S>],
    test_latents: Option<&[Vec<S>]>,
    params: &CovarianceParams<S>,
) -> Result<Vec<(S, S)>> {
    let n = train.len();
    if n == 0 {
        return Err(Error::Parameter("gp_predict requires at least one training point".into()));
    }
    if n > GP_ORACLE_CAP {
        return Err(Error::SizeLimit { what: "gp_predict train points".into(), n, cap: GP_ORACLE_CAP });
    }
    if train_y.len() != n {
        return Err(Error::Shape(format!(
            "train_y length {} must match train points {n}",
            train_y.len()
        )));
    }
    if !(params.sigma2 > S::zero()) {
        return Err(Error::Parameter("gp_predict requires sigma2 > 0".into()));
    }
    if let Some(ls) = test_latents {
        if ls.len() != test.len() {
            return Err(Error::Shape(format!(
                "test latent rows ({}) must match test points ({})",
                ls.len(),
                test.len()
            )));
        }
    }
    let cov = build_covariance(train, train_latents, params)?;
    let chol = cholesky_with_jitter(&cov, n, params.sigma2)?;
    // w = C⁻¹ y, shared across all test points.
    let mut w = train_y.to_vec();
    forward_solve(&chol, n, &mut w);
    backward_solve(&chol, n, &mut w);

    let empty: &[S] = &[];
    let prior_var = params.sigma2 + params.tau2;
    let mut out = Vec::with_capacity(test.len());
    let mut k_vec = vec![S::zero(); n];
    for (q, point) in test.iter().enumerate() {
        let lq = match test_latents {
            Some(ls) => ls[q].as_slice(),
            None => empty,
        };
        for i in 0..n {
            let li = match train_latents {
                Some(ls) => ls[i].as_slice(),
                None => empty,
            };
            k_vec[i] = matern_covariance(point, &train[i], lq, li, params)?;
        }
        let mut mean = S::zero();
        for i in 0..n {
            mean += k_vec[i] * w[i];
        }
        let mut v = k_vec.clone();
        forward_solve(&chol, n, &mut v);
        let mut reduction = S::zero();
        for value in &v {
            reduction += *value * *value;
        }
        let var = (prior_var - reduction).max(S::zero());
        out.push((mean, var));
    }
    Ok(out)
}
