//! Random-walk constrained samplers for higher dimensions.
//!
//! Slice sampling along a line uses doubling to bracket the slice and the
//! shrinkage procedure to draw from it; the doubling acceptability test keeps
//! the move reversible. Axis-slice walks cycle a random permutation of the
//! coordinate axes, hit-and-run walks draw random directions.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrps::{make_point, ConstrainedSampler, SamplerCounters};
use crate::model::Problem;
use crate::nscore::LivePoint;
use crate::region::{RegionConfig, RegionSampler};
use crate::EngineRng;

/// Bracket widths below this are treated as a pathological model.
const MIN_BRACKET: f64 = 1e-12;
/// Walk restarts from fresh seeds before giving up on a replacement.
const MAX_WALK_RETRIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub n_steps: usize,
    pub max_expand: usize,
    /// Initial bracket width as a fraction of the cube width.
    pub initial_scale: f64,
}

impl StepConfig {
    pub fn new(n_steps: usize, max_expand: usize, initial_scale: f64) -> Result<Self> {
        if n_steps < 1 {
            return Err(Error::Usage("n_steps must be at least 1".into()));
        }
        if !(initial_scale > 0.0 && initial_scale <= 1.0) {
            return Err(Error::Usage(format!("initial_scale must be in (0, 1], got {initial_scale}")));
        }
        Ok(StepConfig { n_steps, max_expand, initial_scale })
    }

    /// `n_steps = 2d`, ten doublings, a tenth of the cube as initial width.
    pub fn for_dim(d: usize) -> Self {
        StepConfig { n_steps: 2 * d.max(1), max_expand: 10, initial_scale: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    AxisSlice,
    HitAndRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkState {
    pub current: LivePoint,
    pub threshold: f64,
    pub n_evals: u64,
}

impl WalkState {
    pub fn new(current: LivePoint, threshold: f64) -> Result<Self> {
        if !(current.logl > threshold) {
            return Err(Error::Walk(format!(
                "start point has logl {} which does not exceed threshold {threshold}",
                current.logl
            )));
        }
        Ok(WalkState { current, threshold, n_evals: 0 })
    }
}

/// Line through the current point, parametrized by `t`.
struct Line<'a> {
    origin: &'a [f64],
    direction: &'a [f64],
    t_min: f64,
    t_max: f64,
}

impl<'a> Line<'a> {
    fn new(origin: &'a [f64], direction: &'a [f64]) -> Self {
        let (mut t_min, mut t_max) = (f64::NEG_INFINITY, f64::INFINITY);
        for (&x, &d) in origin.iter().zip(direction) {
            if d > 0.0 {
                t_min = t_min.max(-x / d);
                t_max = t_max.min((1.0 - x) / d);
            } else if d < 0.0 {
                t_min = t_min.max((1.0 - x) / d);
                t_max = t_max.min(-x / d);
            }
        }
        Line { origin, direction, t_min, t_max }
    }

    fn at(&self, t: f64) -> Vec<f64> {
        self.origin.iter().zip(self.direction).map(|(x, d)| x + t * d).collect()
    }
}

/// Slice membership along a line; counts likelihood evaluations.
struct Slice<'a> {
    line: Line<'a>,
    problem: &'a Problem,
    threshold: f64,
    n_evals: u64,
}

/// `(u, v, logl)` of a point inside the slice.
type SlicePoint = (Vec<f64>, Vec<f64>, f64);

impl Slice<'_> {
    fn eval(&mut self, t: f64) -> Result<Option<SlicePoint>> {
        let u = self.line.at(t);
        if t < self.line.t_min || t > self.line.t_max || u.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Ok(None);
        }
        let (v, logl) = self.problem.evaluate(&u)?;
        self.n_evals += 1;
        Ok((logl > self.threshold).then_some((u, v, logl)))
    }

    fn inside(&mut self, t: f64) -> Result<bool> {
        Ok(self.eval(t)?.is_some())
    }

    /// Doubling acceptability test: would the same interval have been
    /// bracketed starting from `t1`?
    fn acceptable(&mut self, t1: f64, left: f64, right: f64, w: f64) -> Result<bool> {
        let (mut lh, mut rh) = (left, right);
        let mut differs = false;
        while rh - lh > 1.1 * w {
            let mid = 0.5 * (lh + rh);
            if (0.0 < mid && t1 >= mid) || (0.0 >= mid && t1 < mid) {
                differs = true;
            }
            if t1 < mid {
                rh = mid;
            } else {
                lh = mid;
            }
            if differs && !self.inside(lh)? && !self.inside(rh)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// One slice-sampling move along `direction` (unit length).
pub fn slice_step(
    ws: &WalkState,
    direction: &[f64],
    cfg: &StepConfig,
    problem: &Problem,
    rng: &mut EngineRng,
) -> Result<WalkState> {
    let origin = ws.current.u.clone();
    let mut slice = Slice { line: Line::new(&origin, direction), problem, threshold: ws.threshold, n_evals: 0 };
    let w = cfg.initial_scale;
    let mut left = -w * rng.random::<f64>();
    let mut right = left + w;
    let mut k = cfg.max_expand;
    while k > 0 && (slice.inside(left)? || slice.inside(right)?) {
        if rng.random::<f64>() < 0.5 {
            left -= right - left;
        } else {
            right += right - left;
        }
        k -= 1;
    }
    // proposals outside the cube are certain rejections, so draw from the clipped bracket
    let mut lo = left.max(slice.line.t_min);
    let mut hi = right.min(slice.line.t_max);
    loop {
        if hi - lo < MIN_BRACKET {
            return Err(Error::Walk(format!(
                "slice bracket collapsed below {MIN_BRACKET:e} at threshold {} (u = {:?})",
                ws.threshold, origin
            )));
        }
        let t1 = lo + rng.random::<f64>() * (hi - lo);
        if let Some((u, v, logl)) = slice.eval(t1)? {
            if slice.acceptable(t1, left, right, w)? {
                let mut current = ws.current.clone();
                current.u = u;
                current.v = v;
                current.logl = logl;
                return Ok(WalkState { current, threshold: ws.threshold, n_evals: ws.n_evals + slice.n_evals });
            }
        }
        if t1 < 0.0 {
            lo = t1;
        } else {
            hi = t1;
        }
    }
}

/// Isotropic unit direction, optionally shaped by a metric factor `A`
/// (direction ∝ A g with g standard normal).
pub fn random_direction(d: usize, metric: Option<&DMatrix<f64>>, rng: &mut EngineRng) -> Vec<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dir = match metric {
            Some(a) => a * g,
            None => g,
        };
        let norm = dir.norm();
        if norm > 0.0 && norm.is_finite() {
            return dir.iter().map(|x| x / norm).collect();
        }
    }
}

/// Random-direction slice move.
pub fn hit_and_run_step(
    ws: &WalkState,
    cfg: &StepConfig,
    problem: &Problem,
    metric: Option<&DMatrix<f64>>,
    rng: &mut EngineRng,
) -> Result<WalkState> {
    let direction = random_direction(problem.dim(), metric, rng);
    slice_step(ws, &direction, cfg, problem, rng)
}

/// Walk `n_steps` moves from `seed` and return the end point as a fresh live
/// point born at `threshold`, together with the evaluations spent.
#[allow(clippy::too_many_arguments)]
pub fn generate_independent(
    seed: &LivePoint,
    threshold: f64,
    cfg: &StepConfig,
    scheme: Scheme,
    problem: &Problem,
    metric: Option<&DMatrix<f64>>,
    serial: u64,
    rng: &mut EngineRng,
) -> Result<(LivePoint, u64)> {
    let d = problem.dim();
    let mut ws = WalkState::new(seed.clone(), threshold)?;
    let mut axes: Vec<usize> = (0..d).collect();
    for step in 0..cfg.n_steps {
        ws = match scheme {
            Scheme::AxisSlice => {
                if step % d == 0 {
                    axes.shuffle(rng);
                }
                let mut direction = vec![0.0; d];
                direction[axes[step % d]] = 1.0;
                slice_step(&ws, &direction, cfg, problem, rng)?
            }
            Scheme::HitAndRun => hit_and_run_step(&ws, cfg, problem, metric, rng)?,
        };
    }
    let p = ws.current;
    Ok((make_point(p.u, p.v, p.logl, threshold, serial), ws.n_evals))
}

/// Cholesky factor of the live-point covariance, for shaping directions.
fn live_metric(live: &[LivePoint]) -> Option<DMatrix<f64>> {
    let n = live.len();
    if n < 2 {
        return None;
    }
    let d = live[0].u.len();
    let mean = DVector::from_fn(d, |i, _| live.iter().map(|p| p.u[i]).sum::<f64>() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for p in live {
        let diff = DVector::from_fn(d, |i, _| p.u[i] - mean[i]);
        cov += &diff * diff.transpose();
    }
    cov /= (n - 1) as f64;
    Cholesky::new(cov).map(|c| c.l())
}

/// Step-sampling constrained sampler.
#[derive(Debug, Clone)]
pub struct StepSampler {
    pub config: StepConfig,
    pub scheme: Scheme,
    /// Shape hit-and-run directions by the live-point covariance.
    pub whitened: bool,
    counters: SamplerCounters,
}

impl StepSampler {
    pub fn new(config: StepConfig, scheme: Scheme) -> Self {
        StepSampler { config, scheme, whitened: true, counters: SamplerCounters::default() }
    }

    /// Bracket width matched to the spread of the live points.
    fn adapted(&self, live: &[LivePoint]) -> StepConfig {
        let n = live.len();
        if n < 2 {
            return self.config;
        }
        let d = live[0].u.len();
        let mut var = 0.0;
        for i in 0..d {
            let mean = live.iter().map(|p| p.u[i]).sum::<f64>() / n as f64;
            var += live.iter().map(|p| (p.u[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        }
        let scale = (3.0 * (var / d as f64).sqrt()).clamp(1e-9, 1.0);
        StepConfig { initial_scale: scale.min(self.config.initial_scale), ..self.config }
    }
}

impl ConstrainedSampler for StepSampler {
    fn sample(
        &mut self,
        problem: &Problem,
        live: &[LivePoint],
        threshold: f64,
        serial: u64,
        rng: &mut EngineRng,
    ) -> Result<LivePoint> {
        let candidates: Vec<&LivePoint> = live.iter().filter(|p| p.logl > threshold).collect();
        if candidates.is_empty() {
            return Err(Error::Exhausted {
                threshold,
                reason: "no live point above the threshold to start a walk".into(),
            });
        }
        let cfg = self.adapted(live);
        let metric = if self.whitened && self.scheme == Scheme::HitAndRun { live_metric(live) } else { None };
        let mut last_error = String::new();
        for _ in 0..MAX_WALK_RETRIES {
            let seed = candidates[rng.random_range(0..candidates.len())];
            match generate_independent(seed, threshold, &cfg, self.scheme, problem, metric.as_ref(), serial, rng) {
                Ok((point, evals)) => {
                    self.counters.evals += evals;
                    self.counters.calls += 1;
                    return Ok(point);
                }
                Err(Error::Walk(msg)) => last_error = msg,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Exhausted { threshold, reason: format!("random walks kept failing: {last_error}") })
    }

    fn counters(&self) -> SamplerCounters {
        self.counters
    }

    fn label(&self) -> &'static str {
        match self.scheme {
            Scheme::AxisSlice => "slice",
            Scheme::HitAndRun => "hit-and-run",
        }
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<()> {
        self.counters = serde_json::from_value(state.clone())?;
        Ok(())
    }
}

/// Dimension above which stepping is used from the start.
pub const AUTO_STEP_DIM: usize = 20;
/// Region acceptance below which the sampler switches to stepping.
pub const AUTO_MIN_ACCEPTANCE: f64 = 1e-4;
/// Calls over which region acceptance is averaged before deciding.
const AUTO_WINDOW: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AutoState {
    stepping: bool,
    recent: VecDeque<u64>,
    region: serde_json::Value,
    step: serde_json::Value,
}

/// Region rejection while it is efficient, step sampling otherwise.
#[derive(Debug, Clone)]
pub struct AutoSampler {
    pub region: RegionSampler,
    pub step: StepSampler,
    pub min_acceptance: f64,
    stepping: bool,
    /// Evaluations of the most recent region calls.
    recent: VecDeque<u64>,
}

impl AutoSampler {
    pub fn new(dim: usize, region: RegionConfig, step: StepConfig) -> Self {
        AutoSampler {
            region: RegionSampler::new(region),
            step: StepSampler::new(step, Scheme::HitAndRun),
            min_acceptance: AUTO_MIN_ACCEPTANCE,
            stepping: dim > AUTO_STEP_DIM,
            recent: VecDeque::with_capacity(AUTO_WINDOW),
        }
    }

    pub fn is_stepping(&self) -> bool {
        self.stepping
    }

    fn recent_region_acceptance(&self) -> Option<f64> {
        if self.recent.len() < AUTO_WINDOW {
            return None;
        }
        Some(AUTO_WINDOW as f64 / self.recent.iter().sum::<u64>() as f64)
    }
}

impl ConstrainedSampler for AutoSampler {
    fn sample(
        &mut self,
        problem: &Problem,
        live: &[LivePoint],
        threshold: f64,
        serial: u64,
        rng: &mut EngineRng,
    ) -> Result<LivePoint> {
        if !self.stepping {
            if self.recent_region_acceptance().is_some_and(|a| a < self.min_acceptance) {
                self.stepping = true;
            } else {
                let before = self.region.counters().evals;
                let point = self.region.sample(problem, live, threshold, serial, rng)?;
                if self.recent.len() == AUTO_WINDOW {
                    self.recent.pop_front();
                }
                self.recent.push_back(self.region.counters().evals - before);
                return Ok(point);
            }
        }
        self.step.sample(problem, live, threshold, serial, rng)
    }

    fn counters(&self) -> SamplerCounters {
        let (r, s) = (self.region.counters(), self.step.counters());
        SamplerCounters { calls: r.calls + s.calls, evals: r.evals + s.evals }
    }

    fn label(&self) -> &'static str {
        if self.stepping {
            self.step.label()
        } else {
            self.region.label()
        }
    }

    fn take_refit_summary(&mut self) -> Option<String> {
        self.region.take_refit_summary()
    }

    fn save_state(&self) -> serde_json::Value {
        serde_json::to_value(AutoState {
            stepping: self.stepping,
            recent: self.recent.clone(),
            region: self.region.save_state(),
            step: self.step.save_state(),
        })
        .expect("auto sampler state serializes")
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<()> {
        let s: AutoState = serde_json::from_value(state.clone())?;
        self.stepping = s.stepping;
        self.recent = s.recent;
        self.region.restore_state(&s.region)?;
        self.step.restore_state(&s.step)
    }
}
