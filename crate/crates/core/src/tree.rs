//! Reactive nested sampling: points form a tree rooted at the full prior
//! volume. A breadth-first pass pops the lowest-likelihood open node and an
//! attachment policy decides how many children continue from it, so the
//! number of live points can vary along the run.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrps::ConstrainedSampler;
use crate::math::logaddexp;
use crate::model::Problem;
use crate::nscore::{
    closeout_records, draw_prior_point, insert_sorted, on_plateau, shell_logwidth, shrink_logv, would_terminate,
    DeadRecord, LivePoint, DEFAULT_FRAC,
};
use crate::EngineRng;

/// One sampled point in the tree. The root itself is implicit: its children
/// have `parent == None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub point: LivePoint,
    pub parent: Option<u64>,
    /// Index of the root edge this node descends from.
    pub root_edge: usize,
    pub children: Vec<u64>,
}

impl Node {
    pub fn id(&self) -> u64 {
        self.point.serial
    }
}

/// Open nodes sorted ascending by `(logl, serial)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorerStack {
    pub open: Vec<LivePoint>,
}

impl ExplorerStack {
    pub fn width(&self) -> usize {
        self.open.len()
    }
}

/// Number of open nodes; the effective live-point count at the next removal.
pub fn width_at(stack: &ExplorerStack) -> usize {
    stack.width()
}

/// Evidence fraction above which a node counts as important.
pub const DEFAULT_WEIGHT_FRAC: f64 = 0.1;

/// Rules deciding how many children a removed node gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttachmentPolicy {
    pub min_width: usize,
    pub max_width: usize,
    /// Widen when a node carries more than this fraction of the evidence so far.
    pub weight_frac_threshold: f64,
}

impl AttachmentPolicy {
    pub fn new(min_width: usize, max_width: usize, weight_frac_threshold: f64) -> Result<Self> {
        if min_width < 2 {
            return Err(Error::Usage(format!("min width must be at least 2, got {min_width}")));
        }
        if max_width < min_width {
            return Err(Error::Usage(format!("max width {max_width} is below min width {min_width}")));
        }
        if !(weight_frac_threshold > 0.0) {
            return Err(Error::Usage(format!(
                "weight fraction threshold must be positive, got {weight_frac_threshold}"
            )));
        }
        Ok(AttachmentPolicy { min_width, max_width, weight_frac_threshold })
    }

    /// Default widening: up to 4x the base width, triggered at 10% of the evidence.
    pub fn with_defaults(min_width: usize) -> Result<Self> {
        Self::new(min_width, 4 * min_width, DEFAULT_WEIGHT_FRAC)
    }

    /// Fixed width with widening disabled; reduces to vanilla nested sampling.
    pub fn constant(width: usize) -> Result<Self> {
        Self::new(width, width, f64::INFINITY)
    }
}

/// What the policy gets to see about the node being removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStats {
    /// Open nodes at this threshold, including the one being removed.
    pub width: usize,
    /// Log weight of the removed node.
    pub logw: f64,
    /// Log evidence including the removed node.
    pub logz: f64,
    /// Whether the termination criterion holds at this threshold.
    pub terminated: bool,
}

/// Number of children to attach to the node being removed.
pub fn should_attach_child(policy: &AttachmentPolicy, stats: &NodeStats) -> usize {
    if stats.terminated {
        return 0;
    }
    let remaining = stats.width.saturating_sub(1);
    let floor = policy.min_width.saturating_sub(remaining);
    let important = stats.logw - stats.logz > policy.weight_frac_threshold.ln();
    if !important {
        return floor;
    }
    let wanted = floor.max(1) + 1;
    wanted.min(policy.max_width.saturating_sub(remaining)).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// Remaining live volume is below the termination fraction.
    Converged,
    /// All open nodes share one likelihood value.
    Plateau,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::Plateau => "plateau",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "converged" => Some(StopReason::Converged),
            "plateau" => Some(StopReason::Plateau),
            _ => None,
        }
    }
}

/// Everything that happens when a node is removed; this is also the dead
/// event written to the checkpoint stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeathEvent {
    pub record: DeadRecord,
    pub parent: Option<u64>,
    pub root_edge: usize,
    /// Ids of children attached at this removal.
    pub children: Vec<u64>,
    /// Insertion rank of each child among the open nodes, with the open count after insertion.
    pub child_ranks: Vec<(usize, usize)>,
}

impl DeathEvent {
    pub fn id(&self) -> u64 {
        self.record.point.serial
    }
}

/// Receives every death event in order.
pub trait DeathObserver {
    fn on_death(&mut self, event: &DeathEvent);
}

/// Serializable state of an [`Explorer`] between iterations, excluding the
/// dead sequence (which is replayed from the event stream).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorerSnapshot {
    pub open: Vec<Node>,
    #[serde(with = "crate::math::json_f64")]
    pub logv: f64,
    #[serde(with = "crate::math::json_f64")]
    pub logz: f64,
    pub iteration: u64,
    pub next_serial: u64,
    #[serde(with = "crate::rng_serde")]
    pub rng: EngineRng,
    pub stop: Option<StopReason>,
}

/// Breadth-first reactive explorer.
#[derive(Debug, Clone)]
pub struct Explorer {
    problem: Problem,
    policy: AttachmentPolicy,
    frac: f64,
    nodes: Vec<Node>,
    root_edges: usize,
    stack: ExplorerStack,
    events: Vec<DeathEvent>,
    logv: f64,
    logz: f64,
    iteration: u64,
    next_serial: u64,
    rng: EngineRng,
    stop: Option<StopReason>,
}

/// Create the root's children: `n_init` prior draws, all open.
pub fn build_root(
    problem: &Problem,
    n_init: usize,
    policy: AttachmentPolicy,
    frac: f64,
    seed: u64,
) -> Result<Explorer> {
    if n_init < policy.min_width {
        return Err(Error::Usage(format!("initial width {n_init} is below min width {}", policy.min_width)));
    }
    if !(frac > 0.0) {
        return Err(Error::Usage(format!("termination fraction must be positive, got {frac}")));
    }
    let mut rng = EngineRng::seed_from_u64(seed);
    let mut stack = ExplorerStack::default();
    let mut nodes = Vec::with_capacity(n_init);
    for serial in 0..n_init as u64 {
        let point = draw_prior_point(problem, serial, &mut rng)?;
        insert_sorted(&mut stack.open, point.clone());
        nodes.push(Node { point, parent: None, root_edge: serial as usize, children: Vec::new() });
    }
    Ok(Explorer {
        problem: problem.clone(),
        policy,
        frac,
        nodes,
        root_edges: n_init,
        stack,
        events: Vec::new(),
        logv: 0.0,
        logz: f64::NEG_INFINITY,
        iteration: 0,
        next_serial: n_init as u64,
        rng,
        stop: None,
    })
}

impl Explorer {
    pub fn with_default_frac(problem: &Problem, n_init: usize, policy: AttachmentPolicy, seed: u64) -> Result<Self> {
        build_root(problem, n_init, policy, DEFAULT_FRAC, seed)
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn policy(&self) -> &AttachmentPolicy {
        &self.policy
    }

    pub fn stack(&self) -> &ExplorerStack {
        &self.stack
    }

    pub fn width(&self) -> usize {
        self.stack.width()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root_edges(&self) -> usize {
        self.root_edges
    }

    pub fn events(&self) -> &[DeathEvent] {
        &self.events
    }

    pub fn logv(&self) -> f64 {
        self.logv
    }

    pub fn logz(&self) -> f64 {
        self.logz
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn is_done(&self) -> bool {
        self.stop.is_some()
    }

    pub fn max_open_logl(&self) -> f64 {
        self.stack.open.last().map_or(f64::NEG_INFINITY, |p| p.logl)
    }

    /// The dead sequence as plain records.
    pub fn dead_records(&self) -> impl Iterator<Item = &DeadRecord> {
        self.events.iter().map(|e| &e.record)
    }

    fn termination_reason(&self) -> Option<StopReason> {
        let width = self.stack.width();
        if width == 0 || on_plateau(&self.stack.open) {
            return Some(StopReason::Plateau);
        }
        if would_terminate(self.logv, width, self.max_open_logl(), self.logz, self.frac) {
            return Some(StopReason::Converged);
        }
        None
    }

    /// Advance by one removal, or close out the open nodes when the run is
    /// finished. Returns the events produced (empty once done). On sampler
    /// failure the tree is left unchanged.
    pub fn step(&mut self, lrps: &mut dyn ConstrainedSampler) -> Result<Vec<DeathEvent>> {
        if self.stop.is_some() {
            return Ok(Vec::new());
        }
        if let Some(reason) = self.termination_reason() {
            return Ok(self.close_out(reason));
        }
        let width = self.stack.width();
        let worst = self.stack.open.remove(0);
        let threshold = worst.logl;
        let logw = worst.logl + shell_logwidth(self.logv, width);
        let logv = shrink_logv(self.logv, width);
        let logz = logaddexp(self.logz, logw);
        let n_children = should_attach_child(&self.policy, &NodeStats { width, logw, logz, terminated: false });

        let mut children = Vec::with_capacity(n_children);
        for j in 0..n_children {
            match lrps.sample(&self.problem, &self.stack.open, threshold, self.next_serial + j as u64, &mut self.rng) {
                Ok(p) => children.push(p),
                Err(e) => {
                    self.stack.open.insert(0, worst);
                    return Err(e);
                }
            }
        }

        let id = worst.serial;
        let (parent, root_edge) = {
            let node = &self.nodes[id as usize];
            (node.parent, node.root_edge)
        };
        let mut child_ids = Vec::with_capacity(children.len());
        let mut child_ranks = Vec::with_capacity(children.len());
        for child in children {
            let cid = child.serial;
            debug_assert_eq!(cid as usize, self.nodes.len());
            let rank = insert_sorted(&mut self.stack.open, child.clone());
            child_ranks.push((rank, self.stack.width()));
            self.nodes.push(Node { point: child, parent: Some(id), root_edge, children: Vec::new() });
            child_ids.push(cid);
        }
        self.next_serial += child_ids.len() as u64;
        self.nodes[id as usize].children = child_ids.clone();
        self.logv = logv;
        self.logz = logz;
        self.iteration += 1;

        let event = DeathEvent {
            record: DeadRecord {
                point: worst,
                logv,
                logw,
                n_live_at_death: width,
                kind: crate::nscore::RecordKind::Shell,
            },
            parent,
            root_edge,
            children: child_ids,
            child_ranks,
        };
        self.events.push(event.clone());
        Ok(vec![event])
    }

    fn close_out(&mut self, reason: StopReason) -> Vec<DeathEvent> {
        let records = closeout_records(&self.stack.open, self.logv);
        let events: Vec<DeathEvent> = records
            .into_iter()
            .map(|record| {
                let node = &self.nodes[record.point.serial as usize];
                DeathEvent {
                    parent: node.parent,
                    root_edge: node.root_edge,
                    record,
                    children: Vec::new(),
                    child_ranks: Vec::new(),
                }
            })
            .collect();
        for e in &events {
            self.logz = logaddexp(self.logz, e.record.logw);
        }
        self.stack.open.clear();
        self.stop = Some(reason);
        self.events.extend(events.iter().cloned());
        events
    }

    pub fn snapshot(&self) -> ExplorerSnapshot {
        ExplorerSnapshot {
            open: self.stack.open.iter().map(|p| self.nodes[p.serial as usize].clone()).collect(),
            logv: self.logv,
            logz: self.logz,
            iteration: self.iteration,
            next_serial: self.next_serial,
            rng: self.rng.clone(),
            stop: self.stop,
        }
    }

    /// Rebuild an explorer from a snapshot and the dead events that preceded it.
    pub fn restore(
        problem: &Problem,
        policy: AttachmentPolicy,
        frac: f64,
        root_edges: usize,
        snapshot: ExplorerSnapshot,
        events: Vec<DeathEvent>,
    ) -> Result<Self> {
        let mut slots: Vec<Option<Node>> = vec![None; snapshot.next_serial as usize];
        let mut place = |node: Node| -> Result<()> {
            let id = node.id() as usize;
            match slots.get_mut(id) {
                Some(slot @ None) => {
                    *slot = Some(node);
                    Ok(())
                }
                _ => Err(Error::Checkpoint(format!("node {id} duplicated or out of range"))),
            }
        };
        for e in &events {
            place(Node {
                point: e.record.point.clone(),
                parent: e.parent,
                root_edge: e.root_edge,
                children: e.children.clone(),
            })?;
        }
        let mut stack = ExplorerStack::default();
        for node in snapshot.open {
            insert_sorted(&mut stack.open, node.point.clone());
            place(node)?;
        }
        let nodes = slots
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or_else(|| Error::Checkpoint(format!("node {i} missing from checkpoint"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Explorer {
            problem: problem.clone(),
            policy,
            frac,
            nodes,
            root_edges,
            stack,
            events,
            logv: snapshot.logv,
            logz: snapshot.logz,
            iteration: snapshot.iteration,
            next_serial: snapshot.next_serial,
            rng: snapshot.rng,
            stop: snapshot.stop,
        })
    }
}

/// Run the explorer to completion, forwarding every event to the observers.
/// On sampler failure the error is returned and everything recorded so far
/// stays available on the explorer.
pub fn breadth_first_run(
    explorer: &mut Explorer,
    lrps: &mut dyn ConstrainedSampler,
    observers: &mut [&mut dyn DeathObserver],
) -> Result<StopReason> {
    loop {
        if let Some(reason) = explorer.stop_reason() {
            return Ok(reason);
        }
        for event in explorer.step(lrps)? {
            for obs in observers.iter_mut() {
                obs.on_death(&event);
            }
        }
    }
}
