//! Bootstrapped evidence integration.
//!
//! Each ensemble member sees a with-replacement resample of the root edges
//! and is blind to the other subtrees. Members shrink their private volume by
//! Beta-distributed factors, so the spread of their evidences carries both
//! the sampling scatter of the likelihoods and the volume uncertainty. A
//! separate point-estimate integrator sees everything and shrinks
//! deterministically; it provides the reported evidence and posterior weights.

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::math::logaddexp;
use crate::nscore::RecordKind;
use crate::tree::{DeathEvent, DeathObserver};
use crate::EngineRng;

/// Default ensemble size.
pub const DEFAULT_K: usize = 30;

/// `ln t` with `t ~ Beta(n, 1)`, drawn as `U^(1/n)`.
pub fn beta_shrink(n_visible: usize, rng: &mut EngineRng) -> f64 {
    debug_assert!(n_visible >= 1);
    // 1 - U lies in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    u.ln() / n_visible as f64
}

/// One bootstrap member.
#[derive(Debug, Clone)]
pub struct BootstrapIntegrator {
    /// Copies of each root edge in this member's resample.
    multiplicity: Vec<u32>,
    /// Open nodes this member can see, counted with multiplicity.
    visible_open: usize,
    pub logv: f64,
    pub logz: f64,
    /// Log weight per dead node id; blind nodes are absent.
    pub per_sample_logw: Vec<(u64, f64)>,
    closing: Option<(f64, usize)>,
    rng: EngineRng,
    deterministic: bool,
}

impl BootstrapIntegrator {
    /// The resampled root edges as a multiset of edge indices.
    pub fn visible_roots(&self) -> Vec<usize> {
        self.multiplicity.iter().enumerate().flat_map(|(edge, &m)| std::iter::repeat_n(edge, m as usize)).collect()
    }

    pub fn multiplicity(&self, edge: usize) -> u32 {
        self.multiplicity[edge]
    }

    pub fn visible_open(&self) -> usize {
        self.visible_open
    }

    fn shrink(&mut self, n: usize) -> f64 {
        if self.deterministic {
            (-1.0 / n as f64).ln_1p()
        } else {
            beta_shrink(n, &mut self.rng)
        }
    }

    fn update(&mut self, event: &DeathEvent) {
        let m = self.multiplicity[event.root_edge] as usize;
        let logl = event.record.point.logl;
        match event.record.kind {
            RecordKind::Shell => {
                if m > 0 {
                    let n = self.visible_open;
                    let mut node_logw = f64::NEG_INFINITY;
                    for copy in 0..m {
                        let log_t = self.shrink(n - copy);
                        // shell between V and V * t
                        let width = self.logv + (-log_t.exp_m1()).ln();
                        node_logw = logaddexp(node_logw, logl + width);
                        self.logv += log_t;
                    }
                    self.per_sample_logw.push((event.id(), node_logw));
                    self.logz = logaddexp(self.logz, node_logw);
                }
                let children = event.children.len();
                self.visible_open = self.visible_open + m * children - m;
            }
            RecordKind::Final => {
                let (logv, n) = *self.closing.get_or_insert((self.logv, self.visible_open));
                if m > 0 && n > 0 {
                    let logw = (m as f64).ln() + logl + logv - (n as f64).ln();
                    self.per_sample_logw.push((event.id(), logw));
                    self.logz = logaddexp(self.logz, logw);
                }
            }
        }
    }
}

/// The all-seeing integrator with deterministic `(n-1)/n` shrinkage.
#[derive(Debug, Clone, Default)]
pub struct PointIntegrator {
    pub logz: f64,
    pub per_sample_logw: Vec<(u64, f64)>,
}

/// Bootstrap members plus the point estimate.
#[derive(Debug, Clone)]
pub struct IntegratorEnsemble {
    pub members: Vec<BootstrapIntegrator>,
    pub point_estimate: PointIntegrator,
    open_per_edge: Vec<usize>,
}

fn check_sizes(root_edges: usize, k: usize) -> Result<()> {
    if root_edges < 2 {
        return Err(Error::Usage(format!("need at least 2 root edges to bootstrap, got {root_edges}")));
    }
    if k < 2 {
        return Err(Error::Usage(format!("ensemble needs at least 2 members, got {k}")));
    }
    Ok(())
}

fn member_rng(seed: u64, index: usize) -> EngineRng {
    let mut rng = EngineRng::seed_from_u64(seed);
    // stream 0 belongs to the explorer
    rng.set_stream(index as u64 + 1);
    rng
}

/// Build `k` members, each with an i.i.d. with-replacement resample of the
/// `root_edges` root-edge ids. Member `i` draws from substream `i + 1` of `seed`.
pub fn make_ensemble(root_edges: usize, k: usize, seed: u64) -> Result<IntegratorEnsemble> {
    check_sizes(root_edges, k)?;
    let members = (0..k)
        .map(|i| {
            let mut rng = member_rng(seed, i);
            let mut multiplicity = vec![0u32; root_edges];
            for _ in 0..root_edges {
                multiplicity[rng.random_range(0..root_edges)] += 1;
            }
            new_member(multiplicity, rng, false)
        })
        .collect();
    Ok(IntegratorEnsemble::from_members(members, root_edges))
}

/// `k` identical members that see every edge once and shrink deterministically.
pub fn make_degenerate_ensemble(root_edges: usize, k: usize) -> Result<IntegratorEnsemble> {
    check_sizes(root_edges, k)?;
    let members = (0..k).map(|i| new_member(vec![1; root_edges], member_rng(0, i), true)).collect();
    Ok(IntegratorEnsemble::from_members(members, root_edges))
}

fn new_member(multiplicity: Vec<u32>, rng: EngineRng, deterministic: bool) -> BootstrapIntegrator {
    let visible_open = multiplicity.iter().map(|&m| m as usize).sum();
    BootstrapIntegrator {
        multiplicity,
        visible_open,
        logv: 0.0,
        logz: f64::NEG_INFINITY,
        per_sample_logw: Vec::new(),
        closing: None,
        rng,
        deterministic,
    }
}

impl IntegratorEnsemble {
    fn from_members(members: Vec<BootstrapIntegrator>, root_edges: usize) -> Self {
        IntegratorEnsemble {
            members,
            point_estimate: PointIntegrator { logz: f64::NEG_INFINITY, per_sample_logw: Vec::new() },
            open_per_edge: vec![1; root_edges],
        }
    }

    /// Open nodes per root edge, as tracked from the events seen so far.
    pub fn open_per_edge(&self) -> &[usize] {
        &self.open_per_edge
    }

    /// Per-member visible open counts at the current threshold.
    pub fn visibility(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.visible_open).collect()
    }

    pub fn logz_samples(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.logz).collect()
    }

    /// Fold one dead node into every integrator.
    pub fn ensemble_update(&mut self, event: &DeathEvent) {
        self.point_estimate.per_sample_logw.push((event.id(), event.record.logw));
        self.point_estimate.logz = logaddexp(self.point_estimate.logz, event.record.logw);
        for member in &mut self.members {
            member.update(event);
        }
        if event.record.kind == RecordKind::Shell {
            let edge = &mut self.open_per_edge[event.root_edge];
            *edge = *edge + event.children.len() - 1;
        } else {
            self.open_per_edge[event.root_edge] -= 1;
        }
    }

    /// Evidence center, spread and normalized posterior weights.
    pub fn combine(&self) -> Combined {
        let logz_mean = self.point_estimate.logz;
        let samples: Vec<f64> = self.logz_samples().into_iter().filter(|z| z.is_finite()).collect();
        let logz_sigma = sample_std(&samples);
        let posterior =
            self.point_estimate.per_sample_logw.iter().map(|&(id, lw)| (id, (lw - logz_mean).exp())).collect();
        Combined { logz_mean, logz_sigma, posterior }
    }
}

impl DeathObserver for IntegratorEnsemble {
    fn on_death(&mut self, event: &DeathEvent) {
        self.ensemble_update(event);
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 || xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub logz_mean: f64,
    pub logz_sigma: f64,
    /// `(dead node id, weight)` with weights summing to one.
    pub posterior: Vec<(u64, f64)>,
}

/// Kish effective sample size `(sum w)^2 / sum w^2`; zero for no weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        0.0
    } else {
        sum * sum / sum_sq
    }
}
