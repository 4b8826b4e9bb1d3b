//! Region-based constrained sampling.
//!
//! Three constructions are fit to the live points: an MLFriends union of
//! equal-radius balls (in a covariance-whitened metric), a bootstrapped
//! ellipsoid in u-space and a bootstrapped ellipsoid in v-space. Proposals
//! come from the whole cube, the u-space ellipsoid or the ball union, and are
//! kept only if they fall inside all three constructions.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrps::{make_point, ConstrainedSampler, SamplerCounters};
use crate::math::unit_ball_volume;
use crate::model::Problem;
use crate::nscore::LivePoint;
use crate::EngineRng;

pub const DEFAULT_BOOTSTRAP_ROUNDS: usize = 30;
pub const DEFAULT_MAX_REJECTIONS: usize = 1_000_000;
pub const DEFAULT_WINDOW: usize = 1000;
/// Observations a source needs in the current window before its measured
/// rate replaces the volume-based prediction.
const MIN_OBSERVATIONS: usize = 50;
/// Slack so construction points stay inside after rounding.
const COVER_SLACK: f64 = 1e-9;

/// Uniform draw inside the unit `d`-ball.
fn unit_ball_draw(d: usize, rng: &mut EngineRng) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            let radius = rng.random::<f64>().powf(1.0 / d as f64);
            return g * (radius / norm);
        }
    }
}

fn in_unit_cube(u: &[f64]) -> bool {
    u.iter().all(|x| (0.0..=1.0).contains(x))
}

fn mean_and_cov(points: &[&[f64]]) -> (DVector<f64>, DMatrix<f64>) {
    let n = points.len();
    let d = points[0].len();
    let mut mean = DVector::zeros(d);
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += x;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let diff = DVector::from_fn(d, |i, _| p[i] - mean[i]);
        cov += &diff * diff.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    (mean, cov)
}

/// Covariance made safely positive definite: a relative ridge when
/// near-singular, falling back to the diagonal plus ridge.
fn regularize(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let trace = cov.trace();
    let ridge = if trace > 0.0 { 1e-10 * trace / d as f64 } else { 1e-20 };
    let eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min > 1e-12 * max && max > 0.0 && Cholesky::new(cov.clone()).is_some() {
        return cov.clone();
    }
    let ridged = cov + DMatrix::identity(d, d) * ridge;
    if Cholesky::new(ridged.clone()).is_some() {
        return ridged;
    }
    DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| cov[(i, i)].max(0.0) + ridge))
}

fn mahalanobis2(chol: &Cholesky<f64, nalgebra::Dyn>, mean: &DVector<f64>, x: &[f64]) -> f64 {
    let diff = DVector::from_fn(mean.len(), |i, _| x[i] - mean[i]);
    let solved = chol.l().solve_lower_triangular(&diff).expect("cholesky factor is invertible");
    solved.norm_squared()
}

/// Union of equal balls centered on the live points, in a whitened metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallUnion {
    dim: usize,
    /// Centers in whitened coordinates, row-major `n x d`.
    whitened: Vec<f64>,
    pub r2: f64,
    /// Maps u-space to whitened space.
    pub whitening: DMatrix<f64>,
    unwhitening: DMatrix<f64>,
    /// `ln sqrt(det C)`: log volume scale of the whitening.
    log_det_half: f64,
    /// Estimated log volume of the union in u-space (overlaps removed).
    #[serde(with = "crate::math::json_f64")]
    pub log_volume: f64,
}

impl BallUnion {
    /// Balls of squared radius `r2` in the plain Euclidean metric.
    pub fn euclidean(centers: &[Vec<f64>], r2: f64, rng: &mut EngineRng) -> Result<Self> {
        let Some(first) = centers.first() else {
            return Err(Error::Usage("a ball union needs at least one center".into()));
        };
        let d = first.len();
        let refs: Vec<&[f64]> = centers.iter().map(|c| c.as_slice()).collect();
        let mut balls = whitened_union(&refs, DMatrix::identity(d, d), DMatrix::identity(d, d), 0.0, r2);
        balls.log_volume = if r2 > 0.0 { estimate_union_volume(&balls, rng) } else { f64::NEG_INFINITY };
        Ok(balls)
    }

    pub fn n_balls(&self) -> usize {
        self.whitened.len() / self.dim
    }

    fn whiten(&self, u: &[f64]) -> DVector<f64> {
        &self.whitening * DVector::from_column_slice(u)
    }

    fn center(&self, i: usize) -> &[f64] {
        &self.whitened[i * self.dim..(i + 1) * self.dim]
    }

    fn dist2_to(&self, z: &DVector<f64>, i: usize) -> f64 {
        self.center(i).iter().zip(z.iter()).map(|(c, x)| (c - x) * (c - x)).sum()
    }

    pub fn nearest_dist2(&self, u: &[f64]) -> f64 {
        let z = self.whiten(u);
        (0..self.n_balls()).map(|i| self.dist2_to(&z, i)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        let z = self.whiten(u);
        (0..self.n_balls()).any(|i| self.dist2_to(&z, i) <= self.r2)
    }

    /// Number of balls covering `u`.
    pub fn multiplicity(&self, u: &[f64]) -> usize {
        let z = self.whiten(u);
        (0..self.n_balls()).filter(|&i| self.dist2_to(&z, i) <= self.r2).count()
    }

    /// Log of the summed ball volumes, the measure the raw union proposal covers.
    pub fn log_proposal_volume(&self) -> f64 {
        (self.n_balls() as f64).ln() + self.log_ball_volume()
    }

    fn log_ball_volume(&self) -> f64 {
        unit_ball_volume(self.dim).ln() + 0.5 * self.dim as f64 * self.r2.ln() + self.log_det_half
    }

    /// Pick a ball uniformly and draw uniformly inside it.
    fn raw_draw(&self, rng: &mut EngineRng) -> Vec<f64> {
        let i = rng.random_range(0..self.n_balls());
        let y = unit_ball_draw(self.dim, rng) * self.r2.sqrt();
        let z = DVector::from_column_slice(self.center(i)) + y;
        (&self.unwhitening * z).iter().copied().collect()
    }

    /// Draw uniformly from the union: a ball draw accepted with probability
    /// one over the number of covering balls. `None` if the correction rejects.
    pub fn draw(&self, rng: &mut EngineRng) -> Option<Vec<f64>> {
        let u = self.raw_draw(rng);
        let x: f64 = rng.random();
        let z = self.whiten(&u);
        // accept iff x * k < 1, so counting can stop once that fails
        let mut k = 0usize;
        for i in 0..self.n_balls() {
            if self.dist2_to(&z, i) <= self.r2 {
                k += 1;
                if x * k as f64 >= 1.0 {
                    return None;
                }
            }
        }
        Some(u)
    }
}

/// Whitening from the sample covariance, or the identity if it is degenerate.
fn whitening_of(points: &[&[f64]]) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let d = points[0].len();
    let identity = (DMatrix::identity(d, d), DMatrix::identity(d, d), 0.0);
    if points.len() < 2 {
        return identity;
    }
    let (_, cov) = mean_and_cov(points);
    let eig = cov.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if !(max > 0.0) || eig.eigenvalues.min() <= 1e-12 * max {
        return identity;
    }
    let inv_sqrt = DVector::from_fn(d, |i, _| 1.0 / eig.eigenvalues[i].sqrt());
    let sqrt = DVector::from_fn(d, |i, _| eig.eigenvalues[i].sqrt());
    let q = &eig.eigenvectors;
    let w = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();
    let winv = q * DMatrix::from_diagonal(&sqrt) * q.transpose();
    let log_det_half = 0.5 * eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
    (w, winv, log_det_half)
}

/// Largest over `left_out` of the squared distance to the nearest point of `selected`.
fn max_nearest_dist2(z: &[f64], d: usize, selected: &[usize], left_out: &[usize]) -> f64 {
    left_out
        .iter()
        .map(|&i| {
            let zi = &z[i * d..(i + 1) * d];
            selected
                .iter()
                .map(|&j| z[j * d..(j + 1) * d].iter().zip(zi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Split `0..n` into a with-replacement resample's distinct members and the left-out rest.
fn bootstrap_split(n: usize, rng: &mut EngineRng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut chosen = vec![false; n];
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let j = rng.random_range(0..n);
        chosen[j] = true;
        draws.push(j);
    }
    let (sel, out): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| chosen[i]);
    (draws, sel, out)
}

fn estimate_union_volume(balls: &BallUnion, rng: &mut EngineRng) -> f64 {
    const PROBES: usize = 200;
    let inverse_counts: f64 = (0..PROBES).map(|_| 1.0 / balls.multiplicity(&balls.raw_draw(rng)).max(1) as f64).sum();
    balls.log_proposal_volume() + (inverse_counts / PROBES as f64).ln()
}

/// MLFriends: bootstrapped radius such that left-out live points are covered
/// by balls around the selected ones.
pub fn fit_mlfriends(live_u: &[&[f64]], n_bootstrap: usize, rng: &mut EngineRng) -> Result<BallUnion> {
    if live_u.len() < 2 {
        return Err(Error::Usage(format!("MLFriends needs at least 2 points, got {}", live_u.len())));
    }
    if n_bootstrap < 1 {
        return Err(Error::Usage("need at least one bootstrap round".into()));
    }
    let (whitening, unwhitening, log_det_half) = whitening_of(live_u);
    let mut balls = whitened_union(live_u, whitening, unwhitening, log_det_half, 0.0);
    let d = balls.dim;
    let mut r2 = 0.0f64;
    for _ in 0..n_bootstrap {
        let (_, selected, left_out) = bootstrap_split(live_u.len(), rng);
        r2 = r2.max(max_nearest_dist2(&balls.whitened, d, &selected, &left_out));
    }
    balls.r2 = r2;
    balls.log_volume = if r2 > 0.0 { estimate_union_volume(&balls, rng) } else { f64::NEG_INFINITY };
    Ok(balls)
}

fn whitened_union(
    points: &[&[f64]],
    whitening: DMatrix<f64>,
    unwhitening: DMatrix<f64>,
    log_det_half: f64,
    r2: f64,
) -> BallUnion {
    let d = points[0].len();
    let mut whitened = Vec::with_capacity(points.len() * d);
    for p in points {
        whitened.extend((&whitening * DVector::from_column_slice(p)).iter());
    }
    BallUnion { dim: d, whitened, r2, whitening, unwhitening, log_det_half, log_volume: f64::NEG_INFINITY }
}

/// Deterministic leave-one-out radius in a fixed metric: the largest
/// nearest-neighbour distance (squared).
pub fn leave_one_out_r2(points: &[&[f64]], whitening: &DMatrix<f64>) -> f64 {
    let balls = whitened_union(points, whitening.clone(), whitening.clone(), 0.0, 0.0);
    let n = points.len();
    (0..n)
        .map(|i| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            max_nearest_dist2(&balls.whitened, balls.dim, &others, &[i])
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    U,
    V,
}

/// `{x : (x - c)^T P (x - c) <= 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub precision: DMatrix<f64>,
    /// Lower Cholesky factor of the enlarged covariance `P^-1`.
    chol: DMatrix<f64>,
    pub space: Space,
    /// Enlargement applied to the sample covariance.
    pub enlargement: f64,
}

impl Ellipsoid {
    pub fn mahalanobis2(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_fn(self.center.len(), |i, _| x[i] - self.center[i]);
        (diff.transpose() * &self.precision * &diff)[(0, 0)]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.mahalanobis2(x) <= 1.0
    }

    pub fn log_volume(&self) -> f64 {
        let d = self.center.len();
        unit_ball_volume(d).ln() + self.chol.diagonal().iter().map(|x| x.abs().ln()).sum::<f64>()
    }

    /// Uniform draw inside the ellipsoid.
    pub fn draw(&self, rng: &mut EngineRng) -> Vec<f64> {
        let y = unit_ball_draw(self.center.len(), rng);
        (&self.center + &self.chol * y).iter().copied().collect()
    }
}

/// Bootstrapped enclosing ellipsoid: sample mean and covariance, enlarged by
/// the largest Mahalanobis distance of left-out points over the bootstrap
/// rounds, and never less than what covers every construction point.
pub fn fit_ellipsoid(points: &[&[f64]], space: Space, n_bootstrap: usize, rng: &mut EngineRng) -> Result<Ellipsoid> {
    if points.is_empty() {
        return Err(Error::Usage("cannot fit an ellipsoid to zero points".into()));
    }
    let d = points[0].len();
    let (mean, cov) = mean_and_cov(points);
    let cov = if points.len() < 2 { DMatrix::identity(d, d) * 1e-20 } else { regularize(&cov) };
    let chol = Cholesky::new(cov.clone()).expect("regularized covariance is positive definite");
    let cover = points.iter().map(|p| mahalanobis2(&chol, &mean, p)).fold(0.0, f64::max);
    let mut factor = cover;
    if points.len() >= 2 {
        for _ in 0..n_bootstrap {
            let (draws, _, left_out) = bootstrap_split(points.len(), rng);
            if left_out.is_empty() {
                continue;
            }
            let resample: Vec<&[f64]> = draws.iter().map(|&j| points[j]).collect();
            let (m, c) = mean_and_cov(&resample);
            let Some(ch) = Cholesky::new(regularize(&c)) else { continue };
            let worst = left_out.iter().map(|&i| mahalanobis2(&ch, &m, points[i])).fold(0.0, f64::max);
            if worst.is_finite() {
                factor = factor.max(worst);
            }
        }
    }
    let factor = if factor > 0.0 { factor } else { 1.0 } * (1.0 + COVER_SLACK);
    let scaled = cov * factor;
    let scaled_chol = Cholesky::new(scaled.clone()).expect("scaled covariance is positive definite");
    Ok(Ellipsoid { center: mean, precision: scaled_chol.inverse(), chol: scaled_chol.l(), space, enlargement: factor })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    WholePrior,
    UEllipsoid,
    BallUnion,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::WholePrior, Source::UEllipsoid, Source::BallUnion];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::WholePrior => "whole-prior",
            Source::UEllipsoid => "u-ellipsoid",
            Source::BallUnion => "ball-union",
        }
    }

    fn index(&self) -> usize {
        match self {
            Source::WholePrior => 0,
            Source::UEllipsoid => 1,
            Source::BallUnion => 2,
        }
    }
}

/// Sliding windows of recent proposals per source: did the raw draw land in
/// the intersection region?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    windows: [VecDeque<bool>; 3],
    capacity: usize,
    observed_any: bool,
}

impl Default for SourceStats {
    fn default() -> Self {
        SourceStats::with_window(DEFAULT_WINDOW)
    }
}

impl SourceStats {
    pub fn with_window(capacity: usize) -> Self {
        SourceStats { windows: Default::default(), capacity: capacity.max(1), observed_any: false }
    }

    pub fn record(&mut self, source: Source, accepted: bool) {
        let w = &mut self.windows[source.index()];
        if w.len() == self.capacity {
            w.pop_front();
        }
        w.push_back(accepted);
        self.observed_any = true;
    }

    /// Forget measured rates (the region changed) but remember that warm-up is over.
    pub fn reset_windows(&mut self) {
        for w in &mut self.windows {
            w.clear();
        }
    }

    pub fn observations(&self, source: Source) -> usize {
        self.windows[source.index()].len()
    }

    pub fn rate(&self, source: Source) -> Option<f64> {
        let w = &self.windows[source.index()];
        if w.is_empty() {
            None
        } else {
            Some(w.iter().filter(|&&a| a).count() as f64 / w.len() as f64)
        }
    }
}

/// Log volumes of the proposal measures, which set the predicted rate of a
/// source as `V(region) / V(source)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceVolumes {
    pub log_ellipsoid: f64,
    /// Union volume with overlaps removed.
    pub log_union: f64,
}

impl SourceVolumes {
    fn log_proposal(&self, source: Source) -> f64 {
        match source {
            Source::WholePrior => 0.0,
            Source::UEllipsoid => self.log_ellipsoid,
            Source::BallUnion => self.log_union,
        }
    }
}

/// Pick the proposal source with the best expected fraction of draws that
/// land in the intersection region.
pub fn choose_source(stats: &SourceStats, volumes: &SourceVolumes) -> Source {
    if !stats.observed_any || volumes.log_union > 0.0 {
        return Source::WholePrior;
    }
    // pooled estimate of ln V(region) from sources with enough data
    let mut pooled = Vec::new();
    for s in Source::ALL {
        if let Some(rate) = stats.rate(s).filter(|_| stats.observations(s) >= MIN_OBSERVATIONS) {
            if rate > 0.0 {
                pooled.push(rate.ln() + volumes.log_proposal(s));
            }
        }
    }
    let log_region = if pooled.is_empty() { 0.0 } else { pooled.iter().sum::<f64>() / pooled.len() as f64 };
    let score = |s: Source| -> f64 {
        match stats.rate(s) {
            Some(rate) if stats.observations(s) >= MIN_OBSERVATIONS => rate.ln(),
            _ => log_region - volumes.log_proposal(s),
        }
    };
    let mut best = Source::WholePrior;
    let mut best_score = score(best);
    for s in [Source::UEllipsoid, Source::BallUnion] {
        let sc = score(s);
        if sc > best_score {
            best = s;
            best_score = sc;
        }
    }
    best
}

/// The three fitted constructions plus proposal bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub balls: BallUnion,
    pub u_ell: Ellipsoid,
    /// Absent when the v-space filter is disabled.
    pub v_ell: Option<Ellipsoid>,
    pub source: Source,
    pub acceptance_stats: SourceStats,
}

/// Which constraints reject a point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Rejections {
    pub cube: bool,
    pub balls: bool,
    pub u_ell: bool,
    pub v_ell: bool,
}

impl Rejections {
    pub fn any(&self) -> bool {
        self.cube || self.balls || self.u_ell || self.v_ell
    }
}

impl RegionSet {
    /// Fit all constructions to the live points.
    pub fn fit(
        problem: &Problem,
        live: &[LivePoint],
        n_bootstrap: usize,
        use_v_ell: bool,
        rng: &mut EngineRng,
    ) -> Result<Self> {
        let us: Vec<&[f64]> = live.iter().map(|p| p.u.as_slice()).collect();
        let balls = fit_mlfriends(&us, n_bootstrap, rng)?;
        let u_ell = fit_ellipsoid(&us, Space::U, n_bootstrap, rng)?;
        let v_ell = if use_v_ell {
            let vs: Vec<&[f64]> = live.iter().map(|p| p.v.as_slice()).collect();
            Some(fit_ellipsoid(&vs, Space::V, n_bootstrap, rng)?)
        } else {
            None
        };
        let _ = problem;
        Ok(RegionSet { balls, u_ell, v_ell, source: Source::WholePrior, acceptance_stats: SourceStats::default() })
    }

    pub fn volumes(&self) -> SourceVolumes {
        SourceVolumes { log_ellipsoid: self.u_ell.log_volume(), log_union: self.balls.log_volume }
    }

    pub fn rejections(&self, u: &[f64], problem: &Problem) -> Rejections {
        let cube = !in_unit_cube(u);
        let v_ell = match (&self.v_ell, cube) {
            (Some(e), false) => !e.contains(&problem.transform(u)),
            _ => false,
        };
        Rejections { cube, balls: !self.balls.contains(u), u_ell: !self.u_ell.contains(u), v_ell }
    }

    pub fn choose_source(&mut self) -> Source {
        self.source = choose_source(&self.acceptance_stats, &self.volumes());
        self.source
    }
}

/// True iff `u` is in the cube, the ball union, the u-space ellipsoid and
/// (when enabled) its transform is in the v-space ellipsoid.
pub fn region_contains(rs: &RegionSet, u: &[f64], problem: &Problem) -> bool {
    in_unit_cube(u)
        && rs.u_ell.contains(u)
        && rs.balls.contains(u)
        && rs.v_ell.as_ref().is_none_or(|e| e.contains(&problem.transform(u)))
}

/// Draw one point uniformly from the intersection region using `source`,
/// recording each proposal's outcome. Fails after `max_rejections`
/// consecutive misses.
pub fn sample_region(
    rs: &mut RegionSet,
    source: Source,
    problem: &Problem,
    max_rejections: usize,
    rng: &mut EngineRng,
) -> Result<Vec<f64>> {
    let d = problem.dim();
    for _ in 0..max_rejections {
        let candidate = match source {
            Source::WholePrior => Some((0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>()),
            Source::UEllipsoid => Some(rs.u_ell.draw(rng)),
            Source::BallUnion => rs.balls.draw(rng),
        };
        // an overlap-correction miss is part of drawing one uniform union
        // point, not a miss of the region filter
        let Some(u) = candidate else { continue };
        let inside = region_contains(rs, &u, problem);
        rs.acceptance_stats.record(source, inside);
        if inside {
            return Ok(u);
        }
    }
    Err(Error::RegionStale(max_rejections))
}

/// Refit about once per e-fold of volume, or whenever forced.
pub fn refit_schedule(iteration: u64, last_fit: Option<u64>, width: usize, forced: bool) -> bool {
    match last_fit {
        None => true,
        Some(last) => forced || iteration.saturating_sub(last) >= width as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub n_bootstrap: usize,
    pub use_v_ell: bool,
    pub max_rejections: usize,
    /// Candidates evaluated per batch; above 1 the likelihoods run on the rayon pool.
    pub batch: usize,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            n_bootstrap: DEFAULT_BOOTSTRAP_ROUNDS,
            use_v_ell: true,
            max_rejections: DEFAULT_MAX_REJECTIONS,
            batch: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegionSamplerState {
    region: Option<RegionSet>,
    last_fit: Option<u64>,
    counters: SamplerCounters,
    refits: u64,
}

/// Constrained sampler drawing from the fitted region by rejection.
#[derive(Debug, Clone)]
pub struct RegionSampler {
    pub config: RegionConfig,
    region: Option<RegionSet>,
    last_fit: Option<u64>,
    counters: SamplerCounters,
    refits: u64,
    refit_summary: Option<String>,
    /// Likelihood evaluations per call, in call order (not persisted).
    pub eval_trace: Vec<u32>,
    /// Source that produced each accepted point (not persisted).
    pub source_trace: Vec<Source>,
}

impl RegionSampler {
    pub fn new(config: RegionConfig) -> Self {
        RegionSampler {
            config,
            region: None,
            last_fit: None,
            counters: SamplerCounters::default(),
            refits: 0,
            refit_summary: None,
            eval_trace: Vec::new(),
            source_trace: Vec::new(),
        }
    }

    pub fn region(&self) -> Option<&RegionSet> {
        self.region.as_ref()
    }

    pub fn refits(&self) -> u64 {
        self.refits
    }

    fn refit(&mut self, problem: &Problem, live: &[LivePoint], rng: &mut EngineRng) -> Result<()> {
        let mut fresh = RegionSet::fit(problem, live, self.config.n_bootstrap, self.config.use_v_ell, rng)?;
        if let Some(old) = &self.region {
            fresh.acceptance_stats = old.acceptance_stats.clone();
            fresh.acceptance_stats.reset_windows();
            fresh.source = old.source;
        }
        self.refits += 1;
        self.last_fit = Some(self.counters.calls);
        let vol = fresh.volumes();
        self.refit_summary = Some(format!(
            "refit #{} at call {}: r2={:.4e} log V(u-ell)={:.3} log V(union)={:.3}{} source={}",
            self.refits,
            self.counters.calls,
            fresh.balls.r2,
            vol.log_ellipsoid,
            vol.log_union,
            fresh.v_ell.as_ref().map_or(String::new(), |e| format!(" log V(v-ell)={:.3}", e.log_volume())),
            fresh.source.as_str(),
        ));
        self.region = Some(fresh);
        Ok(())
    }

    fn draw_candidates(&mut self, problem: &Problem, rng: &mut EngineRng) -> Result<Vec<(Source, Vec<f64>)>> {
        let region = self.region.as_mut().expect("region fitted");
        let mut out = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch.max(1) {
            let source = region.choose_source();
            let u = sample_region(region, source, problem, self.config.max_rejections, rng)?;
            out.push((source, u));
        }
        Ok(out)
    }
}

impl ConstrainedSampler for RegionSampler {
    fn sample(
        &mut self,
        problem: &Problem,
        live: &[LivePoint],
        threshold: f64,
        serial: u64,
        rng: &mut EngineRng,
    ) -> Result<LivePoint> {
        let width = live.len() + 1;
        if live.len() >= 2 && refit_schedule(self.counters.calls, self.last_fit, width, false) {
            self.refit(problem, live, rng)?;
        }
        if self.region.is_none() {
            return Err(Error::Exhausted { threshold, reason: "no region could be fitted".into() });
        }
        let mut evals: u32 = 0;
        let mut stale_refits = 0;
        loop {
            let candidates = match self.draw_candidates(problem, rng) {
                Ok(c) => c,
                Err(Error::RegionStale(n)) => {
                    stale_refits += 1;
                    if stale_refits > 1 || live.len() < 2 {
                        return Err(Error::Exhausted {
                            threshold,
                            reason: format!("region stale after {n} rejections"),
                        });
                    }
                    self.refit(problem, live, rng)?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let evaluated: Vec<Result<(Vec<f64>, f64)>> = if candidates.len() > 1 {
                candidates.par_iter().map(|(_, u)| problem.evaluate(u)).collect()
            } else {
                candidates.iter().map(|(_, u)| problem.evaluate(u)).collect()
            };
            for ((source, u), result) in candidates.into_iter().zip(evaluated) {
                let (v, logl) = result?;
                evals += 1;
                self.counters.evals += 1;
                if logl > threshold {
                    self.counters.calls += 1;
                    self.eval_trace.push(evals);
                    self.source_trace.push(source);
                    return Ok(make_point(u, v, logl, threshold, serial));
                }
            }
            if evals as u64 > 100 * self.config.max_rejections as u64 {
                return Err(Error::Exhausted {
                    threshold,
                    reason: format!("{evals} likelihood evaluations without success"),
                });
            }
        }
    }

    fn counters(&self) -> SamplerCounters {
        self.counters
    }

    fn label(&self) -> &'static str {
        self.region.as_ref().map_or("whole-prior", |r| r.source.as_str())
    }

    fn take_refit_summary(&mut self) -> Option<String> {
        self.refit_summary.take()
    }

    fn save_state(&self) -> serde_json::Value {
        serde_json::to_value(RegionSamplerState {
            region: self.region.clone(),
            last_fit: self.last_fit,
            counters: self.counters,
            refits: self.refits,
        })
        .expect("region state serializes")
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<()> {
        let s: RegionSamplerState = serde_json::from_value(state.clone())?;
        self.region = s.region;
        self.last_fit = s.last_fit;
        self.counters = s.counters;
        self.refits = s.refits;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> EngineRng {
        EngineRng::seed_from_u64(seed)
    }

    #[test]
    fn identical_points_have_zero_radius() {
        let pts = vec![vec![0.3, 0.4]; 10];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let balls = fit_mlfriends(&refs, 30, &mut rng(1)).unwrap();
        assert_eq!(balls.r2, 0.0);
        assert!(fit_mlfriends(&refs[..1], 30, &mut rng(1)).is_err());
    }

    #[test]
    fn two_points_radius_is_their_distance() {
        // collinear pair: covariance is rank one, so the metric stays Euclidean
        let pts = [vec![0.2, 0.2], vec![0.5, 0.6]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let balls = fit_mlfriends(&refs, 40, &mut rng(2)).unwrap();
        assert!((balls.r2 - 0.25).abs() < 1e-12, "{}", balls.r2);
    }

    #[test]
    fn duplicate_never_increases_loo_radius() {
        let mut r = rng(3);
        for _ in 0..50 {
            let pts: Vec<Vec<f64>> = (0..20).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let w = DMatrix::identity(2, 2);
            let base = leave_one_out_r2(&refs, &w);
            let mut with_dup = refs.clone();
            with_dup.push(refs[r.random_range(0..20)]);
            assert!(leave_one_out_r2(&with_dup, &w) <= base);
        }
    }

    #[test]
    fn ellipsoid_covers_diamond() {
        let pts = [vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let e = fit_ellipsoid(&refs, Space::U, 30, &mut rng(4)).unwrap();
        assert!(e.center.norm() < 1e-12);
        assert!(refs.iter().all(|p| e.contains(p)));
    }

    #[test]
    fn one_dimensional_ellipsoid() {
        let pts = [vec![0.0], vec![1.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let e = fit_ellipsoid(&refs, Space::U, 30, &mut rng(5)).unwrap();
        assert!((e.center[0] - 0.5).abs() < 1e-12);
        assert!(refs.iter().all(|p| e.contains(p)));
    }

    #[test]
    fn degenerate_points_do_not_abort() {
        let pts = [vec![0.1, 0.1, 0.1], vec![0.2, 0.2, 0.2], vec![0.3, 0.3, 0.3]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let e = fit_ellipsoid(&refs, Space::U, 10, &mut rng(6)).unwrap();
        assert!(refs.iter().all(|p| e.mahalanobis2(p) <= 1.0 + 1e-9));
        let same = vec![vec![0.4, 0.4]; 5];
        let refs: Vec<&[f64]> = same.iter().map(|p| p.as_slice()).collect();
        let e = fit_ellipsoid(&refs, Space::U, 10, &mut rng(6)).unwrap();
        assert!(e.contains(&[0.4, 0.4]));
    }

    #[test]
    fn source_choice_rules() {
        let vol = SourceVolumes { log_ellipsoid: 0.2f64.ln(), log_union: 0.04f64.ln() };
        let mut stats = SourceStats::default();
        assert_eq!(choose_source(&stats, &vol), Source::WholePrior);
        for i in 0..200 {
            stats.record(Source::BallUnion, i % 2 == 0);
            stats.record(Source::UEllipsoid, i % 10 == 0);
        }
        assert_eq!(choose_source(&stats, &vol), Source::BallUnion);
        let wide = SourceVolumes { log_union: 0.5, ..vol };
        assert_eq!(choose_source(&stats, &wide), Source::WholePrior);
        // after a refit the measured windows are gone: smallest proposal volume wins
        stats.reset_windows();
        assert_eq!(choose_source(&stats, &vol), Source::BallUnion);
    }

    #[test]
    fn refit_rules() {
        assert!(refit_schedule(400, Some(0), 400, false));
        assert!(!refit_schedule(1, Some(0), 400, false));
        assert!(refit_schedule(1, Some(0), 400, true));
        assert!(refit_schedule(0, None, 400, false));
    }
}
