//! Datasets, split protocols, normalization, and synthetic data generation.
//!
//! A [`Dataset`] holds spatio-temporal rows with their responses, per-row
//! split tags, and the two fitted transforms the rest of the pipeline relies
//! on: coordinate scaling to the unit cube (fitted on every row, so train
//! and test share one geometry) and response normalization (fitted on
//! training rows only, so no test information leaks into the model). Both
//! transforms are invertible and travel with the dataset, which lets
//! downstream stages report results in the original units.

pub mod config;
pub mod experiment;

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{gp_simulate, CovarianceParams, StPoint, GP_ORACLE_CAP};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::{c, Scalar};

/// Which split a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

/// Response normalization: z = (y − mean)/sd, fitted on training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization<S> {
    pub mean: S,
    pub sd: S,
}

impl<S: Scalar> Normalization<S> {
    /// Fit mean and (population) standard deviation over the given rows.
    pub fn fit(y: &[S], rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parameter("normalization: no rows to fit on".into()));
        }
        let n = S::of(rows.len() as f64);
        let mut mean = S::zero();
        for &i in rows {
            mean += y[i];
        }
        mean /= n;
        let mut var = S::zero();
        for &i in rows {
            let d = y[i] - mean;
            var += d * d;
        }
        var /= n;
        let sd = var.sqrt();
        if !(sd > S::zero()) || !sd.is_finite() {
            return Err(Error::Parameter(format!(
                "normalization: degenerate response spread (sd = {sd})"
            )));
        }
        Ok(Normalization { mean, sd })
    }

    pub fn apply(&self, y: S) -> S {
        (y - self.mean) / self.sd
    }

    pub fn invert(&self, z: S) -> S {
        z * self.sd + self.mean
    }

    /// Map a standard deviation from normalized to original units.
    pub fn invert_sd(&self, sd: S) -> S {
        sd * self.sd
    }
}

/// Per-axis affine map of coordinates onto [0, 1], fitted on every row.
/// A constant axis (zero span) maps to the center of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordScaling<S> {
    pub mins: [S; 3],
    pub spans: [S; 3],
}

impl<S: Scalar> CoordScaling<S> {
    pub fn fit(points: &[StPoint<S>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter("coordinate scaling: no points to fit on".into()));
        }
        let mut mins = [S::infinity(); 3];
        let mut maxs = [S::neg_infinity(); 3];
        for p in points {
            for (axis, v) in [p.s[0], p.s[1], p.t].into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Parameter(
                        "coordinate scaling: non-finite coordinate".into(),
                    ));
                }
                mins[axis] = mins[axis].min(v);
                maxs[axis] = maxs[axis].max(v);
            }
        }
        let mut spans = [S::zero(); 3];
        for axis in 0..3 {
            spans[axis] = maxs[axis] - mins[axis];
        }
        Ok(CoordScaling { mins, spans })
    }

    fn fwd(&self, axis: usize, v: S) -> S {
        if self.spans[axis] > S::zero() {
            (v - self.mins[axis]) / self.spans[axis]
        } else {
            c(0.5)
        }
    }

    fn bwd(&self, axis: usize, u: S) -> S {
        if self.spans[axis] > S::zero() {
            self.mins[axis] + u * self.spans[axis]
        } else {
            self.mins[axis]
        }
    }

    pub fn apply(&self, p: &StPoint<S>) -> StPoint<S> {
        StPoint::new(self.fwd(0, p.s[0]), self.fwd(1, p.s[1]), self.fwd(2, p.t))
    }

    pub fn invert(&self, p: &StPoint<S>) -> StPoint<S> {
        StPoint::new(self.bwd(0, p.s[0]), self.bwd(1, p.s[1]), self.bwd(2, p.t))
    }
}

/// Deterministic latent fields used by the dimension-expanded simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentPreset<S> {
    /// No latent coordinates (stationary process).
    None,
    /// One latent coordinate a·sin(2π s₁): smooth nonstationarity along the
    /// first spatial axis.
    SineS1 { amplitude: S },
}

impl<S: Scalar> LatentPreset<S> {
    /// Number of latent coordinates per point.
    pub fn dim(&self) -> usize {
        match self {
            LatentPreset::None => 0,
            LatentPreset::SineS1 { .. } => 1,
        }
    }

    /// Latent coordinates at one point.
    pub fn values(&self, p: &StPoint<S>) -> Vec<S> {
        match self {
            LatentPreset::None => Vec::new(),
            LatentPreset::SineS1 { amplitude } => {
                vec![*amplitude * (c::<S>(2.0) * S::PI() * p.s[0]).sin()]
            }
        }
    }
}

/// Ground truth recorded alongside simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth<S> {
    pub params: CovarianceParams<S>,
    pub latent: LatentPreset<S>,
}

/// Where simulated coordinates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleLayout {
    /// n points uniform on [0,1]² × [0,1].
    Uniform { n: usize },
    /// Inclusive linspace grid (an axis with one level sits at 0.5).
    Grid { nx: usize, ny: usize, nt: usize },
}

impl SampleLayout {
    pub fn count(&self) -> usize {
        match self {
            SampleLayout::Uniform { n } => *n,
            SampleLayout::Grid { nx, ny, nt } => nx * ny * nt,
        }
    }
}

/// Full description of a synthetic dataset draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec<S> {
    pub layout: SampleLayout,
    pub params: CovarianceParams<S>,
    pub latent: LatentPreset<S>,
    pub seed: u64,
}

/// Rows, responses, split tags, and the fitted transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub points: Vec<StPoint<S>>,
    pub y: Vec<S>,
    pub tags: Vec<SplitTag>,
    pub norm: Option<Normalization<S>>,
    pub scaling: Option<CoordScaling<S>>,
    pub truth: Option<SimulationTruth<S>>,
}

impl<S: Scalar> Dataset<S> {
    /// Fresh unsplit dataset; every row starts tagged as training.
    pub fn new(points: Vec<StPoint<S>>, y: Vec<S>) -> Result<Self> {
        if points.len() != y.len() {
            return Err(Error::Shape(format!(
                "dataset: {} points but {} responses",
                points.len(),
                y.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::Parameter("dataset: no rows".into()));
        }
        for (i, (p, v)) in points.iter().zip(&y).enumerate() {
            let finite =
                p.s[0].is_finite() && p.s[1].is_finite() && p.t.is_finite() && v.is_finite();
            if !finite {
                return Err(Error::Data(format!("row {i}: non-finite value")));
            }
        }
        let tags = vec![SplitTag::Train; points.len()];
        Ok(Dataset { points, y, tags, norm: None, scaling: None, truth: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row indices carrying the given tag.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i] == tag).collect()
    }

    /// Points and responses for one split, in row order.
    pub fn rows_of(&self, tag: SplitTag) -> (Vec<StPoint<S>>, Vec<S>) {
        let idx = self.indices(tag);
        (
            idx.iter().map(|&i| self.points[i]).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    /// (train, val, test) row counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for t in &self.tags {
            match t {
                SplitTag::Train => c.0 += 1,
                SplitTag::Val => c.1 += 1,
                SplitTag::Test => c.2 += 1,
            }
        }
        c
    }

    /// Fit coordinate scaling on all rows and apply it in place.
    pub fn scale_coords(&mut self) -> Result<()> {
        if self.scaling.is_some() {
            return Err(Error::Parameter("dataset: coordinates already scaled".into()));
        }
        let scaling = CoordScaling::fit(&self.points)?;
        for p in &mut self.points {
            *p = scaling.apply(p);
        }
        self.scaling = Some(scaling);
        Ok(())
    }

    /// Fit response normalization on training rows and apply it to every
    /// row in place.
    pub fn normalize(&mut self) -> Result<()> {
        if self.norm.is_some() {
            return Err(Error::Parameter("dataset: responses already normalized".into()));
        }
        let train = self.indices(SplitTag::Train);
        let norm = Normalization::fit(&self.y, &train)?;
        for v in &mut self.y {
            *v = norm.apply(*v);
        }
        self.norm = Some(norm);
        Ok(())
    }
}

// --- CSV ingestion --------------------------------------------------------

const CSV_HEADER: [&str; 4] = ["s1", "s2", "t", "y"];

/// Load a `s1,s2,t,y` CSV. Malformed rows are rejected with their 1-based
/// file line number (the header is line 1).
pub fn load_csv<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != CSV_HEADER {
        return Err(Error::Data(format!(
            "{}: expected header {}, found {}",
            path.display(),
            CSV_HEADER.join(","),
            found.join(",")
        )));
    }
    let mut points = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if record.len() != 4 {
            return Err(Error::Data(format!(
                "line {line}: expected 4 fields, found {}",
                record.len()
            )));
        }
        let mut vals = [0.0f64; 4];
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}: non-numeric value {:?} in column {}",
                    field, CSV_HEADER[k]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "line {line}: non-finite value {:?} in column {}",
                    field, CSV_HEADER[k]
                )));
            }
            vals[k] = v;
        }
        points.push(StPoint::new(S::of(vals[0]), S::of(vals[1]), S::of(vals[2])));
        y.push(S::of(vals[3]));
    }
    if points.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Dataset::new(points, y)
}

/// Write rows as `s1,s2,t,y`. Values print in shortest round-trip form, so
/// a write→load cycle reproduces them exactly.
pub fn write_csv<S: Scalar>(dataset: &Dataset<S>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for (p, v) in dataset.points.iter().zip(&dataset.y) {
        writeln!(out, "{},{},{},{}", p.s[0], p.s[1], p.t, v)?;
    }
    out.flush()?;
    Ok(())
}

// --- split protocols ------------------------------------------------------

/// Tag rows train/val/test uniformly at random with sizes ⌊f·n⌋ for val and
/// test, remainder to train. Deterministic in `seed`.
pub fn split_random<S: Scalar>(
    dataset: &mut Dataset<S>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<()> {
    let n = dataset.len();
    if n < 3 {
        return Err(Error::Parameter(format!(
            "random split: need at least 3 rows, got {n}"
        )));
    }
    let (ft, fv, fs) = fractions;
    if !(ft >= 0.0 && fv >= 0.0 && fs >= 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "random split: fractions must be nonnegative and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let n_val = (fv * n as f64).floor() as usize;
    let n_test = (fs * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 {
        return Err(Error::Parameter("random split: training split is empty".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(derive_seed(seed, "split-random", 0));
    perm.shuffle(&mut rng);
    for (rank, &row) in perm.iter().enumerate() {
        dataset.tags[row] = if rank < n_train {
            SplitTag::Train
        } else if rank < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    Ok(())
}

/// Per-time-step protocol: rows at `val_times`/`test_times` go wholly to
/// val/test; every other time step contributes a random ⌊frac·size⌋-row
/// sample to train and drops the rest. Steps whose sample would be empty are
/// skipped with a warning. Time steps are identified by exact time value.
pub fn split_per_time<S: Scalar>(
    dataset: &mut Dataset<S>,
    train_frac: f64,
    val_times: &[S],
    test_times: &[S],
    seed: u64,
) -> Result<()> {
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::Parameter(format!(
            "per-time split: training fraction must be in (0, 1], got {train_frac}"
        )));
    }
    let in_list = |t: S, list: &[S]| list.iter().any(|v| v.as_f64() == t.as_f64());
    for v in val_times {
        if in_list(*v, test_times) {
            return Err(Error::Parameter(format!(
                "per-time split: time {v} appears in both val and test windows"
            )));
        }
    }
    // Group rows by exact time, ordered by time value.
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, p) in dataset.points.iter().enumerate() {
        let t = p.t.as_f64();
        match groups.iter_mut().find(|(g, _)| *g == t) {
            Some((_, rows)) => rows.push(i),
            None => groups.push((t, vec![i])),
        }
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times"));
    for list in [val_times, test_times] {
        for t in list {
            if !groups.iter().any(|(g, _)| *g == t.as_f64()) {
                log::warn!("per-time split: no rows at designated time {t}");
            }
        }
    }

    let mut keep = vec![None::<SplitTag>; dataset.len()];
    for (ordinal, (t, rows)) in groups.iter().enumerate() {
        let t_s = S::of(*t);
        if in_list(t_s, test_times) {
            for &r in rows {
                keep[r] = Some(SplitTag::Test);
            }
        } else if in_list(t_s, val_times) {
            for &r in rows {
                keep[r] = Some(SplitTag::Val);
            }
        } else {
            let take = (train_frac * rows.len() as f64).floor() as usize;
            if take == 0 {
                log::warn!(
                    "per-time split: time step {t} has {} rows, none sampled at fraction {train_frac}; skipped",
                    rows.len()
                );
                continue;
            }
            let mut order = rows.clone();
            let mut rng = rng_from(derive_seed(seed, "split-time", ordinal as u64));
            order.shuffle(&mut rng);
            for &r in &order[..take] {
                keep[r] = Some(SplitTag::Train);
            }
        }
    }

    let mut points = Vec::new();
    let mut y = Vec::new();
    let mut tags = Vec::new();
    for (i, tag) in keep.into_iter().enumerate() {
        if let Some(tag) = tag {
            points.push(dataset.points[i]);
            y.push(dataset.y[i]);
            tags.push(tag);
        }
    }
    if !tags.contains(&SplitTag::Train) {
        return Err(Error::Parameter("per-time split: training split is empty".into()));
    }
    dataset.points = points;
    dataset.y = y;
    dataset.tags = tags;
    Ok(())
}

// --- simulation -----------------------------------------------------------

/// Latent coordinate rows for a preset, or None for a stationary preset.
pub fn latent_rows<S: Scalar>(
    preset: &LatentPreset<S>,
    points: &[StPoint<S>],
) -> Option<Vec<Vec<S>>> {
    if preset.dim() == 0 {
        None
    } else {
        Some(points.iter().map(|p| preset.values(p)).collect())
    }
}

/// Draw exact-GP responses at the given points under a covariance and
/// latent preset. Deterministic in `seed`.
pub fn simulate_at_points<S: Scalar>(
    points: &[StPoint<S>],
    params: &CovarianceParams<S>,
    latent: &LatentPreset<S>,
    seed: u64,
) -> Result<Vec<S>> {
    let rows = latent_rows(latent, points);
    gp_simulate(points, rows.as_deref(), params, seed)
}

/// Simulate a full dataset: coordinates from the layout, responses from the
/// exact GP oracle, ground truth recorded on the dataset.
pub fn simulate_dataset<S: Scalar>(spec: &SimulationSpec<S>) -> Result<Dataset<S>> {
    let n = spec.layout.count();
    if n == 0 {
        return Err(Error::Parameter("simulate: zero points requested".into()));
    }
    if n > GP_ORACLE_CAP {
        return Err(Error::SizeLimit { what: "simulate points".into(), n, cap: GP_ORACLE_CAP });
    }
    let points: Vec<StPoint<S>> = match spec.layout {
        SampleLayout::Uniform { n } => {
            let mut rng = rng_from(derive_seed(spec.seed, "sim-coords", 0));
            (0..n)
                .map(|_| {
                    StPoint::new(
                        S::of(rng.random::<f64>()),
                        S::of(rng.random::<f64>()),
                        S::of(rng.random::<f64>()),
                    )
                })
                .collect()
        }
        SampleLayout::Grid { nx, ny, nt } => {
            let axis = |count: usize, i: usize| -> S {
                if count <= 1 {
                    c(0.5)
                } else {
                    S::of(i as f64 / (count - 1) as f64)
                }
            };
            let mut pts = Vec::with_capacity(n);
            for it in 0..nt {
                for iy in 0..ny {
                    for ix in 0..nx {
                        pts.push(StPoint::new(axis(nx, ix), axis(ny, iy), axis(nt, it)));
                    }
                }
            }
            pts
        }
    };
    let y = simulate_at_points(
        &points,
        &spec.params,
        &spec.latent,
        derive_seed(spec.seed, "sim-response", 0),
    )?;
    let mut ds = Dataset::new(points, y)?;
    ds.truth = Some(SimulationTruth { params: spec.params.clone(), latent: spec.latent });
    Ok(ds)
}
