//! The constrained-sampler interface and a few reference implementations.
//!
//! A constrained sampler draws a new prior point whose likelihood strictly
//! exceeds a threshold, given the current live points (sorted ascending by
//! likelihood, the removed point already excluded).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Problem, ShellGeometry};
use crate::nscore::LivePoint;
use crate::EngineRng;

/// Cumulative bookkeeping every sampler exposes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerCounters {
    pub calls: u64,
    pub evals: u64,
}

impl SamplerCounters {
    /// Accepted points per likelihood evaluation.
    pub fn efficiency(&self) -> f64 {
        if self.evals == 0 {
            0.0
        } else {
            self.calls as f64 / self.evals as f64
        }
    }
}

pub trait ConstrainedSampler {
    /// Draw a point with `logl > threshold`. The returned point carries the
    /// given `serial` and `birth_logl == threshold`.
    fn sample(
        &mut self,
        problem: &Problem,
        live: &[LivePoint],
        threshold: f64,
        serial: u64,
        rng: &mut EngineRng,
    ) -> Result<LivePoint>;

    fn counters(&self) -> SamplerCounters;

    /// Short tag for progress lines (e.g. the current proposal source).
    fn label(&self) -> &'static str {
        "custom"
    }

    /// One-line summary emitted after a region refit, if one happened during the last call.
    fn take_refit_summary(&mut self) -> Option<String> {
        None
    }

    /// Opaque state needed to continue a run bit-for-bit after resume.
    fn save_state(&self) -> serde_json::Value {
        serde_json::to_value(self.counters()).unwrap_or(serde_json::Value::Null)
    }

    fn restore_state(&mut self, _state: &serde_json::Value) -> Result<()> {
        Ok(())
    }
}

pub(crate) fn make_point(u: Vec<f64>, v: Vec<f64>, logl: f64, threshold: f64, serial: u64) -> LivePoint {
    LivePoint { u, v, logl, birth_logl: threshold, serial }
}

/// Exact sampler for any problem: uniform draws from the whole cube until one
/// clears the threshold.
#[derive(Debug, Clone)]
pub struct RejectionSampler {
    pub max_draws: u64,
    counters: SamplerCounters,
}

impl Default for RejectionSampler {
    fn default() -> Self {
        RejectionSampler { max_draws: 10_000_000, counters: SamplerCounters::default() }
    }
}

impl ConstrainedSampler for RejectionSampler {
    fn sample(
        &mut self,
        problem: &Problem,
        _live: &[LivePoint],
        threshold: f64,
        serial: u64,
        rng: &mut EngineRng,
    ) -> Result<LivePoint> {
        for _ in 0..self.max_draws {
            let u: Vec<f64> = (0..problem.dim()).map(|_| rng.random::<f64>()).collect();
            let (v, logl) = problem.evaluate(&u)?;
            self.counters.evals += 1;
            if logl > threshold {
                self.counters.calls += 1;
                return Ok(make_point(u, v, logl, threshold, serial));
            }
        }
        Err(Error::Exhausted { threshold, reason: format!("{} prior draws rejected", self.max_draws) })
    }

    fn counters(&self) -> SamplerCounters {
        self.counters
    }

    fn label(&self) -> &'static str {
        "whole-prior"
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<()> {
        self.counters = serde_json::from_value(state.clone())?;
        Ok(())
    }
}

/// Exact-geometry reference sampler for the sphere-shell problem: draws
/// uniformly inside the annulus `logl > threshold`, rejecting draws that
/// leave the unit square.
#[derive(Debug, Clone)]
pub struct ExactShellSampler {
    geometry: ShellGeometry,
    counters: SamplerCounters,
}

impl ExactShellSampler {
    pub fn new(problem: &Problem) -> Result<Self> {
        let geometry = problem
            .shell_geometry()
            .ok_or_else(|| Error::Usage(format!("problem '{}' has no analytic shell geometry", problem.name())))?;
        Ok(ExactShellSampler { geometry, counters: SamplerCounters::default() })
    }
}

impl ConstrainedSampler for ExactShellSampler {
    fn sample(
        &mut self,
        problem: &Problem,
        _live: &[LivePoint],
        threshold: f64,
        serial: u64,
        rng: &mut EngineRng,
    ) -> Result<LivePoint> {
        let (inner, outer) = self.geometry.radial_bounds(threshold);
        let (a, b) = (inner * inner, outer * outer);
        for _ in 0..10_000_000u64 {
            let r = (a + rng.random::<f64>() * (b - a)).sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let u = vec![self.geometry.center + r * phi.cos(), self.geometry.center + r * phi.sin()];
            if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
                continue;
            }
            let (v, logl) = problem.evaluate(&u)?;
            self.counters.evals += 1;
            // rounding at the annulus edges
            if logl > threshold {
                self.counters.calls += 1;
                return Ok(make_point(u, v, logl, threshold, serial));
            }
        }
        Err(Error::Exhausted { threshold, reason: "annulus draws never cleared the threshold".into() })
    }

    fn counters(&self) -> SamplerCounters {
        self.counters
    }

    fn label(&self) -> &'static str {
        "exact-shell"
    }
}

/// A deliberately biased sampler that only proposes in a tiny neighbourhood
/// of the current worst live point. Used to check that the insertion-rank
/// diagnostic detects a broken sampler.
#[derive(Debug, Clone)]
pub struct WorstNeighbourSampler {
    pub scale: f64,
    counters: SamplerCounters,
}

impl Default for WorstNeighbourSampler {
    fn default() -> Self {
        WorstNeighbourSampler { scale: 1e-3, counters: SamplerCounters::default() }
    }
}

impl ConstrainedSampler for WorstNeighbourSampler {
    fn sample(
        &mut self,
        problem: &Problem,
        live: &[LivePoint],
        threshold: f64,
        serial: u64,
        rng: &mut EngineRng,
    ) -> Result<LivePoint> {
        let anchor = live
            .iter()
            .find(|p| p.logl > threshold)
            .ok_or_else(|| Error::Exhausted { threshold, reason: "no live point above threshold".into() })?;
        for _ in 0..1_000_000u64 {
            let u: Vec<f64> = anchor
                .u
                .iter()
                .map(|&x| {
                    let step: f64 = rng.sample(StandardNormal);
                    (x + self.scale * step).clamp(0.0, 1.0)
                })
                .collect();
            let (v, logl) = problem.evaluate(&u)?;
            self.counters.evals += 1;
            if logl > threshold {
                self.counters.calls += 1;
                return Ok(make_point(u, v, logl, threshold, serial));
            }
        }
        Err(Error::Exhausted { threshold, reason: "neighbourhood exhausted".into() })
    }

    fn counters(&self) -> SamplerCounters {
        self.counters
    }

    fn label(&self) -> &'static str {
        "worst-neighbour"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog;
    use rand::SeedableRng;

    #[test]
    fn shell_sampler_stays_in_annulus() {
        let p = catalog("sphere-shell").unwrap();
        let mut s = ExactShellSampler::new(&p).unwrap();
        let mut rng = EngineRng::seed_from_u64(4);
        for (i, t) in [-3000.0, -100.0, -1.0, -1e-6].into_iter().enumerate() {
            let pt = s.sample(&p, &[], t, i as u64, &mut rng).unwrap();
            assert!(pt.logl > t);
            assert_eq!(pt.birth_logl, t);
        }
        assert!(ExactShellSampler::new(&catalog("gauss2d").unwrap()).is_err());
    }
}
