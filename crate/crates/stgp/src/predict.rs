//! Posterior prediction and locally calibrated conformal intervals.
//!
//! The particle ensemble gives a predictive mean and a variance that
//! combines cross-particle spread with the posterior-mean noise level:
//! σ̂²(x) = Var_particles[f(x)] + τ̂². Gaussian bands Ŷ ± z_{1−α/2}·σ̂ come
//! straight from that. Conformal bands replace z with an empirical quantile
//! of nearby calibration scores δ_j = |Y_j − Ŷ_j|/σ̂_j, so miscalibration of
//! the model is corrected locally in space and time. Neighbor lookups run on
//! coordinates scaled by the posterior mean ranges (s/ρ̂_s, t/ρ̂_t), through a
//! kd-tree for large calibration sets and brute force for small ones; both
//! routes order ties identically, so they return the same neighbors exactly.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::kernels::StPoint;
use crate::metrics::interval_score;
use crate::model::{Ensemble, ParticleLayout, HYPER_COUNT, H_RHO_S, H_RHO_T, H_TAU2};
use crate::scalar::{c, Scalar};

/// Gaussian predictive summary at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary<S> {
    /// Predictive mean (average of particle surfaces).
    pub mean: S,
    /// Predictive standard deviation including observation noise.
    pub sd: S,
    /// Lower Gaussian credible bound at the requested level.
    pub lower: S,
    /// Upper Gaussian credible bound at the requested level.
    pub upper: S,
}

/// Natural-scale hyperparameter means over a set of raw particle vectors.
pub fn natural_hyper_means_from<S: Scalar>(
    layout: &ParticleLayout,
    thetas: &[Vec<S>],
) -> Result<[S; HYPER_COUNT]> {
    if thetas.is_empty() {
        return Err(Error::Parameter("hyper means: need at least one particle".into()));
    }
    let mut out = [S::zero(); HYPER_COUNT];
    for theta in thetas {
        if theta.len() != layout.total {
            return Err(Error::Shape(format!(
                "hyper means: particle has {} parameters, layout expects {}",
                theta.len(),
                layout.total
            )));
        }
        for (o, v) in out.iter_mut().zip(&theta[layout.hyper_range()]) {
            *o += v.exp();
        }
    }
    let m = S::of(thetas.len() as f64);
    for o in &mut out {
        *o /= m;
    }
    Ok(out)
}

/// Natural-scale hyperparameter means [α, ν, ρ_s, ρ_t, ρ_l, σ², τ²]
/// averaged over the ensemble.
pub fn posterior_hyper_means<S: Scalar>(ensemble: &Ensemble<S>) -> Result<[S; HYPER_COUNT]> {
    let layout = ensemble.config.layout();
    let thetas: Vec<Vec<S>> = ensemble.particles.iter().map(|p| p.theta.clone()).collect();
    natural_hyper_means_from(&layout, &thetas)
}

/// Predictive mean, standard deviation, and central Gaussian band at each
/// point. The variance is the particle spread of the surface plus the
/// posterior-mean noise variance; a single-particle ensemble contributes no
/// spread, so its bands reflect noise only.
pub fn predict_summaries<S: Scalar>(
    ensemble: &Ensemble<S>,
    points: &[StPoint<S>],
    alpha: S,
) -> Result<Vec<PosteriorSummary<S>>> {
    if !(alpha > S::zero() && alpha < S::one()) {
        return Err(Error::Parameter(format!(
            "predict: alpha must be in (0, 1), got {alpha}"
        )));
    }
    let layout = ensemble.config.layout();
    let m = ensemble.particles.len();
    if m == 1 {
        log::warn!(
            "predictive spread from a single particle is zero; bands reflect observation noise only"
        );
    }
    let mut tau2_hat = S::zero();
    for p in &ensemble.particles {
        tau2_hat += p.hypers(&layout)[H_TAU2].exp();
    }
    tau2_hat /= S::of(m as f64);

    let mut sum = vec![S::zero(); points.len()];
    let mut sum_sq = vec![S::zero(); points.len()];
    for particle in &ensemble.particles {
        let z = crate::model::forward_many(&ensemble.config, particle, points)?;
        for (i, v) in z.into_iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let inv_m = S::one() / S::of(m as f64);
    let z = S::norm_quantile(S::one() - alpha / c::<S>(2.0));
    Ok(sum
        .into_iter()
        .zip(sum_sq)
        .map(|(s, sq)| {
            let mean = s * inv_m;
            let spread = (sq * inv_m - mean * mean).max(S::zero());
            let sd = (spread + tau2_hat).sqrt();
            PosteriorSummary { mean, sd, lower: mean - z * sd, upper: mean + z * sd }
        })
        .collect())
}

// --- neighbor index -------------------------------------------------------

/// Calibration sets at or above this size get a kd-tree; smaller ones use
/// brute force.
const KD_THRESHOLD: usize = 2000;
/// Maximum points per kd leaf.
const KD_LEAF: usize = 16;
/// Relative change in either range that forces an index rebuild.
const REBUILD_TOL: f64 = 0.01;

/// Candidate neighbor ordered by squared distance, then index, so that tied
/// distances resolve the same way in every lookup route.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand<S> {
    d2: S,
    idx: u32,
}

impl<S: Scalar> Eq for Cand<S> {}

impl<S: Scalar> PartialOrd for Cand<S> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Cand<S> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Finite distances are enforced at build and query time.
        self.d2
            .partial_cmp(&other.d2)
            .expect("neighbor distances are finite")
            .then(self.idx.cmp(&other.idx))
    }
}

#[derive(Debug, Clone)]
enum KdNode<S> {
    /// Range into the shared `order` permutation.
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: S, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct KdTree<S> {
    nodes: Vec<KdNode<S>>,
    order: Vec<u32>,
    root: usize,
}

fn dist2<S: Scalar>(a: &[S; 3], b: &[S; 3]) -> S {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

impl<S: Scalar> KdTree<S> {
    fn build(pts: &[[S; 3]]) -> Self {
        let mut order: Vec<u32> = (0..pts.len() as u32).collect();
        let mut nodes = Vec::new();
        let n = pts.len();
        let root = Self::build_rec(pts, &mut order, 0, n, &mut nodes);
        KdTree { nodes, order, root }
    }

    fn build_rec(
        pts: &[[S; 3]],
        order: &mut [u32],
        lo: usize,
        hi: usize,
        nodes: &mut Vec<KdNode<S>>,
    ) -> usize {
        let len = hi - lo;
        if len <= KD_LEAF {
            nodes.push(KdNode::Leaf { start: lo, end: hi });
            return nodes.len() - 1;
        }
        let mut axis = 0;
        let mut best_spread = S::neg_infinity();
        for a in 0..3 {
            let mut min = S::infinity();
            let mut max = S::neg_infinity();
            for &i in &order[lo..hi] {
                let v = pts[i as usize][a];
                min = min.min(v);
                max = max.max(v);
            }
            if max - min > best_spread {
                best_spread = max - min;
                axis = a;
            }
        }
        let mid = lo + len / 2;
        order[lo..hi].select_nth_unstable_by(mid - lo, |a, b| {
            pts[*a as usize][axis]
                .partial_cmp(&pts[*b as usize][axis])
                .expect("neighbor coordinates are finite")
        });
        let value = pts[order[mid] as usize][axis];
        let left = Self::build_rec(pts, order, lo, mid, nodes);
        let right = Self::build_rec(pts, order, mid, hi, nodes);
        nodes.push(KdNode::Split { axis, value, left, right });
        nodes.len() - 1
    }

    fn query_rec(
        &self,
        pts: &[[S; 3]],
        node: usize,
        q: &[S; 3],
        k: usize,
        heap: &mut BinaryHeap<Cand<S>>,
    ) {
        match &self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let cand = Cand { d2: dist2(q, &pts[i as usize]), idx: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let delta = q[*axis] - *value;
                let (near, far) =
                    if delta < S::zero() { (*left, *right) } else { (*right, *left) };
                self.query_rec(pts, near, q, k, heap);
                // Visit the far side whenever the splitting plane is not
                // strictly farther than the current worst candidate; the ≤
                // keeps tied distances from being pruned away.
                let visit = match heap.peek() {
                    Some(worst) if heap.len() >= k => delta * delta <= worst.d2,
                    _ => true,
                };
                if visit {
                    self.query_rec(pts, far, q, k, heap);
                }
            }
        }
    }
}

/// K-nearest-neighbor index over calibration points in range-scaled
/// coordinates.
#[derive(Debug, Clone)]
pub struct NeighborIndex<S> {
    scaled: Vec<[S; 3]>,
    rho_s: S,
    rho_t: S,
    tree: Option<KdTree<S>>,
}

impl<S: Scalar> NeighborIndex<S> {
    /// Build over `points`, scaling space by 1/ρ_s and time by 1/ρ_t.
    pub fn build(points: &[StPoint<S>], rho_s: S, rho_t: S) -> Result<Self> {
        Self::build_impl(points, rho_s, rho_t, points.len() >= KD_THRESHOLD)
    }

    fn build_impl(
        points: &[StPoint<S>],
        rho_s: S,
        rho_t: S,
        use_tree: bool,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter("neighbor index: need at least one point".into()));
        }
        if !(rho_s > S::zero()) || !rho_s.is_finite() || !(rho_t > S::zero()) || !rho_t.is_finite()
        {
            return Err(Error::Parameter(format!(
                "neighbor index: ranges must be positive and finite, got rho_s = {rho_s}, rho_t = {rho_t}"
            )));
        }
        let scaled: Vec<[S; 3]> = points
            .iter()
            .map(|p| [p.s[0] / rho_s, p.s[1] / rho_s, p.t / rho_t])
            .collect();
        for (i, s) in scaled.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "neighbor index: point {i} has a non-finite scaled coordinate"
                )));
            }
        }
        let tree = use_tree.then(|| KdTree::build(&scaled));
        Ok(NeighborIndex { scaled, rho_s, rho_t, tree })
    }

    /// Number of indexed points.
    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    /// True when the index holds no points (never, post-build).
    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    /// True when either range has drifted more than 1% from the build-time
    /// value, so distances would no longer match the posterior.
    pub fn needs_rebuild(&self, rho_s: S, rho_t: S) -> bool {
        let rel = |new: S, old: S| ((new - old) / old).abs() > c::<S>(REBUILD_TOL);
        rel(rho_s, self.rho_s) || rel(rho_t, self.rho_t)
    }

    /// Indices of the k nearest points to `point`, ordered by (distance,
    /// index). Requests beyond the index size return every point.
    pub fn query(&self, point: &StPoint<S>, k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(Error::Parameter("neighbor query: k must be at least 1".into()));
        }
        let q = [point.s[0] / self.rho_s, point.s[1] / self.rho_s, point.t / self.rho_t];
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "neighbor query: point has a non-finite scaled coordinate".into(),
            ));
        }
        let k = k.min(self.scaled.len());
        let mut cands: Vec<Cand<S>> = match &self.tree {
            Some(tree) => {
                let mut heap = BinaryHeap::with_capacity(k + 1);
                tree.query_rec(&self.scaled, tree.root, &q, k, &mut heap);
                heap.into_vec()
            }
            None => {
                let mut all: Vec<Cand<S>> = self
                    .scaled
                    .iter()
                    .enumerate()
                    .map(|(i, p)| Cand { d2: dist2(&q, p), idx: i as u32 })
                    .collect();
                all.sort_unstable();
                all.truncate(k);
                all
            }
        };
        cands.sort_unstable();
        Ok(cands.into_iter().map(|c| c.idx as usize).collect())
    }
}

// --- conformal intervals --------------------------------------------------

/// A conformal band around a predictive mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformalBand<S> {
    pub lower: S,
    pub upper: S,
    /// The score multiple of σ̂ that sets the half width.
    pub score: S,
    /// True when too few calibration scores exist for the finite-sample
    /// guarantee at this α, so the band fell back to the largest score.
    pub fallback: bool,
}

fn check_conformal_inputs<S: Scalar>(scores: &[S], sd: S, alpha: S) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Parameter("conformal: need at least one calibration score".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(**s >= S::zero()) || !s.is_finite()) {
        return Err(Error::Parameter(format!(
            "conformal: scores must be finite and nonnegative, got {bad}"
        )));
    }
    if !(sd > S::zero()) || !sd.is_finite() {
        return Err(Error::Parameter(format!(
            "conformal: predictive sd must be positive and finite, got {sd}"
        )));
    }
    if !(alpha > S::zero() && alpha < S::one()) {
        return Err(Error::Parameter(format!(
            "conformal: alpha must be in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Rank of the conformal quantile: the smallest integer at or above
/// (1 − α)(K + 1), computed with a dust guard so products that are integers
/// in exact arithmetic do not round up from binary representation error.
fn quantile_rank<S: Scalar>(count: usize, alpha: S) -> usize {
    let x = ((S::one() - alpha) * S::of((count + 1) as f64)).as_f64();
    (x - 1e-9 * x.max(1.0)).ceil() as usize
}

/// Split-conformal band from calibration scores: the half width is the
/// ⌈(1 − α)(K + 1)⌉-th smallest score times σ̂. When that rank exceeds K the
/// guarantee is unattainable; the band widens to the largest score and is
/// flagged.
pub fn conformal_interval<S: Scalar>(
    scores: &[S],
    mean: S,
    sd: S,
    alpha: S,
) -> Result<ConformalBand<S>> {
    check_conformal_inputs(scores, sd, alpha)?;
    let k = scores.len();
    let rank = quantile_rank(k, alpha);
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let (score, fallback) = if rank > k {
        (sorted[k - 1], true)
    } else {
        (sorted[rank - 1], false)
    };
    Ok(ConformalBand { lower: mean - score * sd, upper: mean + score * sd, score, fallback })
}

/// The same band computed by scanning a symmetric candidate grid and keeping
/// every value whose plausibility (1 + #{δ_j ≥ δ(y)})/(K + 1) exceeds α.
/// `grid_size` must be odd so the grid contains the predictive mean itself.
/// Agrees with the closed form to within one grid spacing.
pub fn conformal_interval_grid<S: Scalar>(
    scores: &[S],
    mean: S,
    sd: S,
    alpha: S,
    grid_size: usize,
) -> Result<ConformalBand<S>> {
    check_conformal_inputs(scores, sd, alpha)?;
    if grid_size < 3 || grid_size % 2 == 0 {
        return Err(Error::Parameter(format!(
            "conformal grid: size must be odd and at least 3, got {grid_size}"
        )));
    }
    let k = scores.len();
    let kp1 = S::of((k + 1) as f64);
    let mut delta_max = S::zero();
    for s in scores {
        delta_max = delta_max.max(*s);
    }
    let lo = mean - delta_max * sd;
    let hi = mean + delta_max * sd;
    let step = (hi - lo) / S::of((grid_size - 1) as f64);
    let mut lower = None;
    let mut upper = None;
    for g in 0..grid_size {
        let y0 = lo + step * S::of(g as f64);
        let d0 = ((y0 - mean) / sd).abs();
        let above = scores.iter().filter(|s| **s >= d0).count();
        let plausibility = S::of((1 + above) as f64) / kp1;
        if plausibility > alpha {
            if lower.is_none() {
                lower = Some(y0);
            }
            upper = Some(y0);
        }
    }
    // The mean sits on the grid and always has plausibility 1.
    let lower = lower.expect("grid contains the predictive mean");
    let upper = upper.expect("grid contains the predictive mean");
    let score = ((upper - mean) / sd).max((mean - lower) / sd);
    let fallback = quantile_rank(k, alpha) > k;
    Ok(ConformalBand { lower, upper, score, fallback })
}

// --- calibration sets and neighbor-count selection ------------------------

/// Calibration data prepared for local conformal lookup: points, their
/// normalized absolute residual scores, and the neighbor index over them.
#[derive(Debug, Clone)]
pub struct CalibrationSet<S> {
    points: Vec<StPoint<S>>,
    scores: Vec<S>,
    index: NeighborIndex<S>,
}

impl<S: Scalar> CalibrationSet<S> {
    /// Build from an ensemble and held-out observations: predicts each
    /// calibration point, forms δ_j = |Y_j − Ŷ_j|/σ̂_j, and indexes the
    /// points under the posterior mean ranges.
    pub fn build(
        ensemble: &Ensemble<S>,
        points: &[StPoint<S>],
        y: &[S],
        alpha: S,
    ) -> Result<Self> {
        if points.len() != y.len() {
            return Err(Error::Shape(format!(
                "calibration: {} points but {} responses",
                points.len(),
                y.len()
            )));
        }
        let summaries = predict_summaries(ensemble, points, alpha)?;
        let scores: Vec<S> = summaries
            .iter()
            .zip(y)
            .map(|(s, yi)| (*yi - s.mean).abs() / s.sd)
            .collect();
        let hypers = posterior_hyper_means(ensemble)?;
        let index = NeighborIndex::build(points, hypers[H_RHO_S], hypers[H_RHO_T])?;
        Ok(CalibrationSet { points: points.to_vec(), scores, index })
    }

    /// Assemble directly from points, precomputed scores, and an index built
    /// over the same points.
    pub fn from_parts(
        points: Vec<StPoint<S>>,
        scores: Vec<S>,
        index: NeighborIndex<S>,
    ) -> Result<Self> {
        if points.len() != scores.len() || index.len() != points.len() {
            return Err(Error::Shape(format!(
                "calibration: {} points, {} scores, index of {}",
                points.len(),
                scores.len(),
                index.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(**s >= S::zero()) || !s.is_finite()) {
            return Err(Error::Parameter(format!(
                "calibration: scores must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(CalibrationSet { points, scores, index })
    }

    /// Number of calibration points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the set is empty (never, post-build).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The normalized calibration scores, in point order.
    pub fn scores(&self) -> &[S] {
        &self.scores
    }

    /// True when the index no longer matches the given posterior ranges.
    pub fn needs_rebuild(&self, rho_s: S, rho_t: S) -> bool {
        self.index.needs_rebuild(rho_s, rho_t)
    }

    /// Conformal band at `point` from the scores of its `k` nearest
    /// calibration points.
    pub fn band_for(
        &self,
        summary: &PosteriorSummary<S>,
        point: &StPoint<S>,
        k: usize,
        alpha: S,
    ) -> Result<ConformalBand<S>> {
        let neighbors = self.index.query(point, k)?;
        let local: Vec<S> = neighbors.iter().map(|&i| self.scores[i]).collect();
        conformal_interval(&local, summary.mean, summary.sd, alpha)
    }
}

/// Pick the neighbor count whose conformal bands minimize the mean interval
/// score on held-out points. Ties keep the earliest candidate.
pub fn choose_neighbor_count<S: Scalar>(
    calibration: &CalibrationSet<S>,
    holdout_points: &[StPoint<S>],
    holdout_y: &[S],
    holdout_summaries: &[PosteriorSummary<S>],
    candidates: &[usize],
    alpha: S,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Parameter("neighbor selection: no candidate counts".into()));
    }
    if holdout_points.is_empty() {
        return Err(Error::Parameter("neighbor selection: no held-out points".into()));
    }
    if holdout_points.len() != holdout_y.len() || holdout_points.len() != holdout_summaries.len() {
        return Err(Error::Shape(format!(
            "neighbor selection: {} points, {} responses, {} summaries",
            holdout_points.len(),
            holdout_y.len(),
            holdout_summaries.len()
        )));
    }
    let mut best: Option<(S, usize)> = None;
    for &k in candidates {
        let mut lower = Vec::with_capacity(holdout_points.len());
        let mut upper = Vec::with_capacity(holdout_points.len());
        for (point, summary) in holdout_points.iter().zip(holdout_summaries) {
            let band = calibration.band_for(summary, point, k, alpha)?;
            lower.push(band.lower);
            upper.push(band.upper);
        }
        let score = interval_score(holdout_y, &lower, &upper, alpha)?;
        let better = match &best {
            None => true,
            Some((s, _)) => score < *s,
        };
        if better {
            best = Some((score, k));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::InrConfig;
    use crate::model::{init_particle, ModelConfig};
    use crate::rng::{derive_seed, rng_from};
    use crate::scalar::Scalar;
    use approx::assert_abs_diff_eq;

    fn small_ensemble(m: usize, seed: u64) -> Ensemble<f64> {
        let cfg = ModelConfig::new(8, Some(InrConfig::res_mlp(1, 8, 2)));
        let particles = (0..m)
            .map(|i| init_particle(&cfg, derive_seed(seed, "particle", i as u64)).unwrap())
            .collect();
        Ensemble::new(cfg, particles).unwrap()
    }

    fn random_points(n: usize, seed: u64, scale: f64) -> Vec<StPoint<f64>> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| {
                StPoint::new(
                    f64::std_normal(&mut rng) * scale,
                    f64::std_normal(&mut rng) * scale,
                    f64::std_normal(&mut rng) * scale,
                )
            })
            .collect()
    }

    #[test]
    fn summaries_match_manual_ensemble_statistics() {
        let ens = small_ensemble(3, 7);
        let points = random_points(5, 8, 0.5);
        let alpha = 0.2;
        let got = predict_summaries(&ens, &points, alpha).unwrap();
        let layout = ens.config.layout();
        let tau2: f64 = ens
            .particles
            .iter()
            .map(|p| p.hypers(&layout)[H_TAU2].exp())
            .sum::<f64>()
            / 3.0;
        let z = f64::norm_quantile(0.9);
        for (i, point) in points.iter().enumerate() {
            let vals: Vec<f64> = ens
                .particles
                .iter()
                .map(|p| crate::model::forward_one(&ens.config, p, point).unwrap())
                .collect();
            let mean = vals.iter().sum::<f64>() / 3.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            let sd = (var + tau2).sqrt();
            assert_abs_diff_eq!(got[i].mean, mean, epsilon = 1e-12);
            assert_abs_diff_eq!(got[i].sd, sd, epsilon = 1e-12);
            assert_abs_diff_eq!(got[i].upper - got[i].mean, z * sd, epsilon = 1e-12);
            assert_abs_diff_eq!(got[i].mean - got[i].lower, z * sd, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_particle_band_is_noise_only() {
        let ens = small_ensemble(1, 11);
        let layout = ens.config.layout();
        let tau2 = ens.particles[0].hypers(&layout)[H_TAU2].exp();
        let points = random_points(4, 12, 0.5);
        let got = predict_summaries(&ens, &points, 0.05).unwrap();
        for s in &got {
            assert_abs_diff_eq!(s.sd, tau2.sqrt(), epsilon = 1e-13);
        }
    }

    #[test]
    fn hyper_means_average_natural_scale() {
        let ens = small_ensemble(2, 21);
        let layout = ens.config.layout();
        let want: Vec<f64> = (0..HYPER_COUNT)
            .map(|h| {
                ens.particles
                    .iter()
                    .map(|p| p.hypers(&layout)[h].exp())
                    .sum::<f64>()
                    / 2.0
            })
            .collect();
        let got = posterior_hyper_means(&ens).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(*g, *w, epsilon = 1e-14);
        }
        assert!(natural_hyper_means_from::<f64>(&layout, &[]).is_err());
        assert!(natural_hyper_means_from(&layout, &[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn kd_and_brute_routes_agree_exactly() {
        let mut points = random_points(2800, 31, 2.0);
        // Inject exact duplicates so tied distances actually occur.
        for i in 0..200 {
            let p = points[i * 13 % 2800];
            points.push(p);
        }
        let kd = NeighborIndex::build_impl(&points, 0.7, 1.3, true).unwrap();
        let brute = NeighborIndex::build_impl(&points, 0.7, 1.3, false).unwrap();
        assert!(kd.tree.is_some());
        assert!(brute.tree.is_none());
        let queries = random_points(50, 32, 2.0);
        for q in &queries {
            for k in [1usize, 7, 64] {
                let a = kd.query(q, k).unwrap();
                let b = brute.query(q, k).unwrap();
                assert_eq!(a, b, "split at k = {k}");
                assert_eq!(a.len(), k);
            }
        }
        // Query a duplicated point itself: both copies must appear, lower
        // index first.
        let dup = points[0];
        let dup_other = points.iter().rposition(|p| *p == dup).unwrap();
        let got = kd.query(&dup, 2).unwrap();
        assert_eq!(got[0], 0);
        assert!(got.contains(&dup_other) || points[got[1]] == dup);
    }

    #[test]
    fn build_thresholds_and_rebuild_rule() {
        let points = random_points(64, 41, 1.0);
        let idx = NeighborIndex::build(&points, 1.0, 1.0).unwrap();
        assert!(idx.tree.is_none(), "small sets stay brute force");
        assert_eq!(idx.len(), 64);
        let big = random_points(KD_THRESHOLD, 42, 1.0);
        let idx_big = NeighborIndex::build(&big, 1.0, 1.0).unwrap();
        assert!(idx_big.tree.is_some(), "large sets get a tree");
        assert!(!idx.needs_rebuild(1.005, 1.0));
        assert!(!idx.needs_rebuild(1.0, 0.995));
        assert!(idx.needs_rebuild(1.02, 1.0));
        assert!(idx.needs_rebuild(1.0, 0.97));
        // k beyond the index returns everything.
        let all = idx.query(&points[0], 1000).unwrap();
        assert_eq!(all.len(), 64);
        assert!(idx.query(&points[0], 0).is_err());
        assert!(NeighborIndex::<f64>::build(&[], 1.0, 1.0).is_err());
        assert!(NeighborIndex::build(&points, 0.0, 1.0).is_err());
        assert!(NeighborIndex::build(&points, 1.0, f64::NAN).is_err());
        let bad = vec![StPoint::new(f64::INFINITY, 0.0, 0.0)];
        assert!(NeighborIndex::build(&bad, 1.0, 1.0).is_err());
    }

    #[test]
    fn closed_form_quantile_hand_cases() {
        // Four scores at α = 0.3: rank ⌈0.7·5⌉ = 4, the largest, no fallback.
        let band = conformal_interval(&[1.0, 2.0, 3.0, 4.0], 10.0, 2.0, 0.3).unwrap();
        assert_eq!(band.score, 4.0);
        assert!(!band.fallback);
        assert_abs_diff_eq!(band.lower, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(band.upper, 18.0, epsilon = 1e-12);
        // K = 19 at α = 0.05: rank 19 = K, still inside, no fallback.
        let scores19: Vec<f64> = (1..=19).map(|i| i as f64).collect();
        let b19 = conformal_interval(&scores19, 0.0, 1.0, 0.05).unwrap();
        assert_eq!(b19.score, 19.0);
        assert!(!b19.fallback);
        // K = 18 at α = 0.05: rank ⌈0.95·19⌉ = 19 > K, fallback to the max.
        let scores18: Vec<f64> = (1..=18).map(|i| i as f64).collect();
        let b18 = conformal_interval(&scores18, 0.0, 1.0, 0.05).unwrap();
        assert_eq!(b18.score, 18.0);
        assert!(b18.fallback);
        // Binary dust: (1 − 0.1)·10 computes as slightly above 9; the rank
        // must still be 9, not 10, so no fallback with 9 scores.
        let scores9: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let b9 = conformal_interval(&scores9, 0.0, 1.0, 0.1).unwrap();
        assert!(!b9.fallback);
        assert_eq!(b9.score, 9.0);
        // Unsorted input is sorted internally.
        let shuffled = conformal_interval(&[4.0, 1.0, 3.0, 2.0], 10.0, 2.0, 0.3).unwrap();
        assert_eq!(shuffled.score, 4.0);
        // Validation.
        assert!(conformal_interval(&[], 0.0, 1.0, 0.05).is_err());
        assert!(conformal_interval(&[-1.0], 0.0, 1.0, 0.05).is_err());
        assert!(conformal_interval(&[1.0], 0.0, 0.0, 0.05).is_err());
        assert!(conformal_interval(&[1.0], 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn grid_matches_closed_form_within_one_spacing() {
        let mut rng = rng_from(55);
        let mut checked = 0;
        while checked < 500 {
            let k = 25 + (f64::std_normal(&mut rng).abs() * 60.0) as usize;
            let alpha = 0.02 + f64::std_normal(&mut rng).abs().min(2.8) * 0.1;
            if quantile_rank::<f64>(k, alpha) > k {
                continue; // stay away from the fallback regime
            }
            let scores: Vec<f64> =
                (0..k).map(|_| f64::std_normal(&mut rng).abs()).collect();
            let mean = f64::std_normal(&mut rng) * 3.0;
            let sd = 0.2 + f64::std_normal(&mut rng).abs();
            let closed = conformal_interval(&scores, mean, sd, alpha).unwrap();
            let grid = conformal_interval_grid(&scores, mean, sd, alpha, 2001).unwrap();
            let delta_max = scores.iter().cloned().fold(0.0, f64::max);
            let spacing = 2.0 * delta_max * sd / 2000.0;
            // The grid band sits inside the closed band, within one spacing.
            assert!(grid.upper <= closed.upper + 1e-10);
            assert!(grid.lower >= closed.lower - 1e-10);
            assert!(closed.upper - grid.upper <= spacing + 1e-10);
            assert!(grid.lower - closed.lower <= spacing + 1e-10);
            assert!(!grid.fallback);
            checked += 1;
        }
        // Odd grid keeps the mean inside even for tiny score sets.
        let tiny = conformal_interval_grid(&[0.5], 3.0, 1.0, 0.05, 2001).unwrap();
        assert!(tiny.lower <= 3.0 && 3.0 <= tiny.upper);
        assert!(conformal_interval_grid(&[0.5], 3.0, 1.0, 0.05, 2000).is_err());
        assert!(conformal_interval_grid(&[0.5], 3.0, 1.0, 0.05, 1).is_err());
    }

    #[test]
    fn fallback_widens_to_largest_score() {
        // K = 10 at α = 0.05 cannot reach the 95% rank.
        let scores: Vec<f64> = vec![0.1, 0.5, 0.9, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 1.0];
        let band = conformal_interval(&scores, 2.0, 0.5, 0.05).unwrap();
        assert!(band.fallback);
        assert_eq!(band.score, 1.0);
        assert_abs_diff_eq!(band.lower, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(band.upper, 2.5, epsilon = 1e-12);
        let grid = conformal_interval_grid(&scores, 2.0, 0.5, 0.05, 2001).unwrap();
        assert!(grid.fallback);
    }

    #[test]
    fn iid_scores_reach_nominal_coverage() {
        // Distribution-free guarantee: with K = 99 exchangeable scores and
        // α = 0.05, the band covers a fresh draw with probability exactly
        // 95/100. Calibration is redrawn per query, so the only randomness
        // left is binomial.
        let queries = 2000;
        let k = 99;
        let mut covered = 0;
        for q in 0..queries {
            let mut rng = rng_from(derive_seed(777, "coverage-query", q));
            let scores: Vec<f64> =
                (0..k).map(|_| f64::std_normal(&mut rng).abs()).collect();
            let band = conformal_interval(&scores, 0.0, 1.0, 0.05).unwrap();
            assert!(!band.fallback);
            let y = f64::std_normal(&mut rng);
            if band.lower <= y && y <= band.upper {
                covered += 1;
            }
        }
        let rate = covered as f64 / queries as f64;
        // Mean 0.95, binomial SE ≈ 0.0049: 0.94 is about 2 SE below.
        assert!(rate >= 0.94, "coverage {rate} below 0.94");
        assert!(rate <= 0.97, "coverage {rate} implausibly high");
    }

    #[test]
    fn neighbor_count_selection_prefers_local_scale() {
        // Two spatial clusters with very different score magnitudes. Local
        // bands need only the small within-cluster scores; pulling in the far
        // cluster inflates the quantile and the interval score.
        let mut rng = rng_from(101);
        let mut points = Vec::new();
        let mut scores = Vec::new();
        for i in 0..150 {
            let jitter = 0.01 * f64::std_normal(&mut rng);
            points.push(StPoint::new(
                0.3 * f64::std_normal(&mut rng),
                0.3 * f64::std_normal(&mut rng),
                (i as f64) / 150.0,
            ));
            scores.push(0.1 + 0.01 * jitter.abs());
        }
        for i in 0..150 {
            points.push(StPoint::new(
                10.0 + 0.3 * f64::std_normal(&mut rng),
                10.0 + 0.3 * f64::std_normal(&mut rng),
                (i as f64) / 150.0,
            ));
            scores.push(3.0 + 0.1 * f64::std_normal(&mut rng).abs());
        }
        let index = NeighborIndex::build(&points, 1.0, 1.0).unwrap();
        let calib = CalibrationSet::from_parts(points, scores, index).unwrap();
        let holdout: Vec<StPoint<f64>> = (0..30)
            .map(|i| {
                StPoint::new(
                    0.2 * f64::std_normal(&mut rng),
                    0.2 * f64::std_normal(&mut rng),
                    (i as f64) / 30.0,
                )
            })
            .collect();
        let summaries: Vec<PosteriorSummary<f64>> = (0..30)
            .map(|_| PosteriorSummary { mean: 0.0, sd: 1.0, lower: -2.0, upper: 2.0 })
            .collect();
        let y: Vec<f64> = (0..30).map(|_| 0.08 * f64::std_normal(&mut rng)).collect();
        let picked =
            choose_neighbor_count(&calib, &holdout, &y, &summaries, &[25, 300], 0.05).unwrap();
        assert_eq!(picked, 25);
        // Ties keep the earliest candidate: with every within-cluster score
        // equal, any k that stays inside the near cluster gives the same band.
        let flat_points: Vec<StPoint<f64>> = (0..150)
            .map(|i| StPoint::new((i % 12) as f64 * 0.01, (i / 12) as f64 * 0.01, i as f64 * 0.01))
            .collect();
        let flat_scores = vec![0.1; 150];
        let flat_index = NeighborIndex::build(&flat_points, 1.0, 1.0).unwrap();
        let flat = CalibrationSet::from_parts(flat_points.clone(), flat_scores, flat_index).unwrap();
        let picked_flat = choose_neighbor_count(
            &flat,
            &flat_points[..10],
            &vec![0.0; 10],
            &vec![PosteriorSummary { mean: 0.0, sd: 1.0, lower: -1.0, upper: 1.0 }; 10],
            &[40, 80],
            0.05,
        )
        .unwrap();
        assert_eq!(picked_flat, 40);
        // Validation.
        assert!(choose_neighbor_count(&flat, &[], &[], &[], &[40], 0.05).is_err());
        assert!(
            choose_neighbor_count(&flat, &flat_points[..10], &vec![0.0; 9], &[], &[40], 0.05)
                .is_err()
        );
        assert!(choose_neighbor_count(
            &flat,
            &flat_points[..10],
            &vec![0.0; 10],
            &vec![PosteriorSummary { mean: 0.0, sd: 1.0, lower: -1.0, upper: 1.0 }; 10],
            &[],
            0.05
        )
        .is_err());
    }

    #[test]
    fn calibration_set_end_to_end() {
        let ens = small_ensemble(3, 61);
        let points = random_points(60, 62, 0.5);
        let mut rng = rng_from(63);
        let y: Vec<f64> = (0..60).map(|_| f64::std_normal(&mut rng)).collect();
        let calib = CalibrationSet::build(&ens, &points, &y, 0.05).unwrap();
        assert_eq!(calib.len(), 60);
        assert!(calib.scores().iter().all(|s| s.is_finite() && *s >= 0.0));
        let summary = predict_summaries(&ens, &points[..1], 0.05).unwrap()[0];
        let band = calib.band_for(&summary, &points[0], 30, 0.05).unwrap();
        assert!(band.lower <= summary.mean && summary.mean <= band.upper);
        // Ranges move more than 1% → rebuild flagged.
        let hypers = posterior_hyper_means(&ens).unwrap();
        assert!(!calib.needs_rebuild(hypers[H_RHO_S], hypers[H_RHO_T]));
        assert!(calib.needs_rebuild(hypers[H_RHO_S] * 1.2, hypers[H_RHO_T]));
        // Mismatched lengths rejected.
        assert!(CalibrationSet::build(&ens, &points, &y[..10], 0.05).is_err());
        // predict_summaries validation.
        assert!(predict_summaries(&ens, &points, 0.0).is_err());
        assert!(predict_summaries(&ens, &points, 1.0).is_err());
    }
}
