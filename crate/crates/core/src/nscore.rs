//! The vanilla nested-sampling loop with a fixed number of live points.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrps::ConstrainedSampler;
use crate::math::logaddexp;
use crate::model::Problem;
use crate::EngineRng;

/// Default termination fraction: stop once the live points could add less
/// than 1% to the evidence.
pub const DEFAULT_FRAC: f64 = 0.01;

/// A point in the current live population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivePoint {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(with = "crate::math::json_f64")]
    pub logl: f64,
    /// Threshold in force when the point was drawn.
    #[serde(with = "crate::math::json_f64")]
    pub birth_logl: f64,
    /// Monotone creation index; also the point's node id in the tree.
    pub serial: u64,
}

impl LivePoint {
    /// Total order used everywhere live points are ranked: by likelihood,
    /// then oldest first.
    pub fn order_key(&self) -> (f64, u64) {
        (self.logl, self.serial)
    }

    fn precedes(&self, other: &LivePoint) -> bool {
        self.logl < other.logl || (self.logl == other.logl && self.serial < other.serial)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    /// Removed during iteration; carries the shell between two thresholds.
    Shell,
    /// A live point closed out at termination with an equal share of the remaining volume.
    Final,
}

/// A removed point that becomes a weighted posterior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadRecord {
    pub point: LivePoint,
    /// Log prior volume: the remaining volume after this removal for shells,
    /// the equal share of the remainder for final records.
    #[serde(with = "crate::math::json_f64")]
    pub logv: f64,
    /// Log weight: `logl` plus the log of the volume this sample stands for.
    #[serde(with = "crate::math::json_f64")]
    pub logw: f64,
    pub n_live_at_death: usize,
    pub kind: RecordKind,
}

/// `logv + ln((n - 1) / n)`.
pub fn shrink_logv(logv: f64, n_live: usize) -> f64 {
    debug_assert!(n_live >= 2);
    logv + (-1.0 / n_live as f64).ln_1p()
}

/// Log of the shell width `V_prev - V_next` when one of `n_live` points is removed.
pub fn shell_logwidth(logv_prev: f64, n_live: usize) -> f64 {
    logv_prev - (n_live as f64).ln()
}

/// Insert keeping ascending `(logl, serial)` order; returns the insertion index,
/// which equals the number of points ranked below the new one.
pub(crate) fn insert_sorted(live: &mut Vec<LivePoint>, point: LivePoint) -> usize {
    let idx = live.partition_point(|p| p.precedes(&point));
    live.insert(idx, point);
    idx
}

pub(crate) fn draw_prior_point(problem: &Problem, serial: u64, rng: &mut EngineRng) -> Result<LivePoint> {
    let u: Vec<f64> = (0..problem.dim()).map(|_| rng.random::<f64>()).collect();
    let (v, logl) = problem.evaluate(&u)?;
    Ok(LivePoint { u, v, logl, birth_logl: f64::NEG_INFINITY, serial })
}

/// Mutable state of a vanilla run.
#[derive(Debug, Clone)]
pub struct RunState {
    /// Live points sorted ascending by `(logl, serial)`.
    pub live: Vec<LivePoint>,
    pub dead: Vec<DeadRecord>,
    pub logv_current: f64,
    pub logz_current: f64,
    pub rng: EngineRng,
    pub next_serial: u64,
}

impl RunState {
    pub fn n_live(&self) -> usize {
        self.live.len()
    }

    pub fn max_live_logl(&self) -> f64 {
        self.live.last().map_or(f64::NEG_INFINITY, |p| p.logl)
    }
}

/// Draw `n` live points from the prior.
pub fn init_live(problem: &Problem, n: usize, seed: u64) -> Result<RunState> {
    if n < 2 {
        return Err(Error::Usage(format!("need at least 2 live points, got {n}")));
    }
    let mut rng = EngineRng::seed_from_u64(seed);
    let mut live = Vec::with_capacity(n);
    for serial in 0..n as u64 {
        let p = draw_prior_point(problem, serial, &mut rng)?;
        insert_sorted(&mut live, p);
    }
    Ok(RunState {
        live,
        dead: Vec::new(),
        logv_current: 0.0,
        logz_current: f64::NEG_INFINITY,
        rng,
        next_serial: n as u64,
    })
}

/// Replace the worst live point. On sampler failure the state is left as it
/// was before the call.
pub fn ns_step(state: &mut RunState, problem: &Problem, lrps: &mut dyn ConstrainedSampler) -> Result<DeadRecord> {
    if state.live.is_empty() {
        return Err(Error::Usage("no live points".into()));
    }
    let n = state.live.len();
    let worst = state.live.remove(0);
    let threshold = worst.logl;
    let replacement = match lrps.sample(problem, &state.live, threshold, state.next_serial, &mut state.rng) {
        Ok(p) => p,
        Err(e) => {
            state.live.insert(0, worst);
            return Err(e);
        }
    };
    debug_assert!(replacement.logl > threshold);
    state.next_serial += 1;

    let logw = worst.logl + shell_logwidth(state.logv_current, n);
    state.logv_current = shrink_logv(state.logv_current, n);
    state.logz_current = logaddexp(state.logz_current, logw);
    let record =
        DeadRecord { point: worst, logv: state.logv_current, logw, n_live_at_death: n, kind: RecordKind::Shell };
    state.dead.push(record.clone());
    insert_sorted(&mut state.live, replacement);
    Ok(record)
}

/// True when the live points can no longer contribute more than `frac` of
/// the accumulated evidence: `V_next * max L_live < frac * Z`.
pub fn termination_check(state: &RunState, frac: f64) -> bool {
    would_terminate(state.logv_current, state.live.len(), state.max_live_logl(), state.logz_current, frac)
}

/// True when every live point sits on the same likelihood value: no point
/// can be drawn strictly above the threshold, so the live set is closed out.
pub fn plateau_reached(state: &RunState) -> bool {
    on_plateau(&state.live)
}

pub(crate) fn on_plateau(live: &[LivePoint]) -> bool {
    match (live.first(), live.last()) {
        (Some(lo), Some(hi)) => lo.logl == hi.logl,
        _ => false,
    }
}

pub(crate) fn would_terminate(logv: f64, n_live: usize, max_logl: f64, logz: f64, frac: f64) -> bool {
    if logz == f64::NEG_INFINITY || n_live < 2 {
        return false;
    }
    shrink_logv(logv, n_live) + max_logl < frac.ln() + logz
}

/// Equal-split records for a set of remaining live points.
pub(crate) fn closeout_records(live: &[LivePoint], logv_current: f64) -> Vec<DeadRecord> {
    let n = live.len();
    let logv = logv_current - (n as f64).ln();
    live.iter()
        .map(|p| DeadRecord {
            point: p.clone(),
            logv,
            logw: p.logl + logv,
            n_live_at_death: n,
            kind: RecordKind::Final,
        })
        .collect()
}

/// Close out the run: every remaining live point becomes a sample carrying
/// an equal share of the remaining volume.
pub fn finalize_live(state: &mut RunState) -> Vec<DeadRecord> {
    let records = closeout_records(&state.live, state.logv_current);
    for r in &records {
        state.logz_current = logaddexp(state.logz_current, r.logw);
    }
    state.live.clear();
    state.dead.extend(records.iter().cloned());
    records
}

/// Run vanilla nested sampling to termination and close out the live points.
pub fn run_vanilla(
    problem: &Problem,
    n_live: usize,
    frac: f64,
    lrps: &mut dyn ConstrainedSampler,
    seed: u64,
) -> Result<RunState> {
    if !(frac > 0.0) {
        return Err(Error::Usage(format!("termination fraction must be positive, got {frac}")));
    }
    let mut state = init_live(problem, n_live, seed)?;
    while !termination_check(&state, frac) && !plateau_reached(&state) {
        ns_step(&mut state, problem, lrps)?;
    }
    finalize_live(&mut state);
    Ok(state)
}
