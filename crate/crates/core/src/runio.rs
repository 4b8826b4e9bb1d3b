//! Run orchestration: configuration, checkpoint/resume, output files,
//! progress lines and the insertion-rank diagnostic.
//!
//! A run directory holds four files:
//!
//! - `checkpoint.jsonl`: a header line (format version, configuration and its
//!   hash), one line per dead node, a snapshot line every `snapshot_every`
//!   iterations and a final `done` line. Only the last line may be partial.
//! - `results.json`: evidence, its spread, ESS, sample count and run status.
//! - `samples.csv`: `weight,logl,v0,...` for every dead node in death order.
//! - `diagnostics.json`: the KS test of insertion ranks.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::integrate::{effective_sample_size, make_ensemble, IntegratorEnsemble, DEFAULT_K};
use crate::lrps::ConstrainedSampler;
use crate::model::{catalog, Problem};
use crate::nscore::DEFAULT_FRAC;
use crate::region::{RegionConfig, RegionSampler};
use crate::stepsampler::{AutoSampler, Scheme, StepConfig, StepSampler};
use crate::tree::{build_root, AttachmentPolicy, DeathEvent, Explorer, ExplorerSnapshot};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 100;
/// Fewer ranks than this and the diagnostic reports "insufficient data".
pub const MIN_RANKS: usize = 100;

pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const RESULTS_FILE: &str = "results.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Region,
    Slice,
    HitAndRun,
    Auto,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "region" => Ok(SamplerKind::Region),
            "slice" => Ok(SamplerKind::Slice),
            "hitandrun" => Ok(SamplerKind::HitAndRun),
            "auto" => Ok(SamplerKind::Auto),
            other => Err(Error::Usage(format!("unknown sampler '{other}'; expected region, slice, hitandrun or auto"))),
        }
    }
}

/// Everything that determines a run. `out`, `resume`, `stop_after` and
/// `progress` do not affect the numbers and are excluded from the hash.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub n_live: usize,
    pub max_width: usize,
    pub frac: f64,
    pub k_bootstrap: usize,
    pub sampler: SamplerKind,
    /// Walk length for step samplers; `None` means `2 d`.
    pub n_steps: Option<usize>,
    pub seed: u64,
    pub snapshot_every: u64,
    pub out: PathBuf,
    pub resume: bool,
    /// Stop (as if killed) once this many iterations are done.
    pub stop_after: Option<u64>,
    /// Emit throttled progress lines on stderr.
    pub progress: bool,
}

impl RunConfig {
    pub fn new(problem: impl Into<String>, n_live: usize, seed: u64, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            problem: problem.into(),
            n_live,
            max_width: n_live,
            frac: DEFAULT_FRAC,
            k_bootstrap: DEFAULT_K,
            sampler: SamplerKind::Region,
            n_steps: None,
            seed,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            out: out.into(),
            resume: false,
            stop_after: None,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<Problem> {
        let problem = catalog(&self.problem)?;
        if self.n_live < 2 {
            return Err(Error::Usage(format!("--n-live must be at least 2, got {}", self.n_live)));
        }
        if self.max_width < self.n_live {
            return Err(Error::Usage(format!(
                "--max-width ({}) must be at least --n-live ({})",
                self.max_width, self.n_live
            )));
        }
        if !(self.frac > 0.0 && self.frac < 1.0) {
            return Err(Error::Usage(format!("--frac must be in (0, 1), got {}", self.frac)));
        }
        if self.k_bootstrap < 2 {
            return Err(Error::Usage(format!("--k-bootstrap must be at least 2, got {}", self.k_bootstrap)));
        }
        if self.n_steps == Some(0) {
            return Err(Error::Usage("--n-steps must be at least 1".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Usage("snapshot interval must be at least 1".into()));
        }
        Ok(problem)
    }

    fn hashed(&self) -> HashedConfig {
        HashedConfig {
            problem: self.problem.clone(),
            n_live: self.n_live,
            max_width: self.max_width,
            frac: self.frac,
            k_bootstrap: self.k_bootstrap,
            sampler: self.sampler,
            n_steps: self.n_steps,
            seed: self.seed,
            snapshot_every: self.snapshot_every,
        }
    }

    /// Hex SHA-256 of the canonical JSON of the hashed fields.
    pub fn config_hash(&self) -> String {
        self.hashed().hash()
    }

    fn policy(&self) -> Result<AttachmentPolicy> {
        AttachmentPolicy::new(self.n_live, self.max_width, crate::tree::DEFAULT_WEIGHT_FRAC)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HashedConfig {
    problem: String,
    n_live: usize,
    max_width: usize,
    frac: f64,
    k_bootstrap: usize,
    sampler: SamplerKind,
    n_steps: Option<usize>,
    seed: u64,
    snapshot_every: u64,
}

impl HashedConfig {
    fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One line of the checkpoint stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CheckpointRecord {
    Header { version: u32, config: serde_json::Value, hash: String },
    Dead { event: DeathEvent },
    Snapshot { n_events: usize, explorer: Box<ExplorerSnapshot>, sampler: serde_json::Value },
    Done { reason: String, n_events: usize },
}

/// A parsed checkpoint: records with the byte offset just past each line.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub records: Vec<(CheckpointRecord, u64)>,
    /// A partial final line was found and ignored.
    pub had_partial_tail: bool,
}

impl Checkpoint {
    pub fn header_hash(&self) -> Option<&str> {
        match self.records.first() {
            Some((CheckpointRecord::Header { hash, .. }, _)) => Some(hash),
            _ => None,
        }
    }

    pub fn events(&self) -> impl Iterator<Item = &DeathEvent> {
        self.records.iter().filter_map(|(r, _)| match r {
            CheckpointRecord::Dead { event } => Some(event),
            _ => None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.records.iter().any(|(r, _)| matches!(r, CheckpointRecord::Done { .. }))
    }
}

/// Parse a checkpoint file. A final line without a newline is treated as
/// an interrupted write and skipped; any other unreadable line is an error,
/// as is a dead sequence whose likelihoods decrease.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut had_partial_tail = false;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            had_partial_tail = true;
            break;
        };
        let line = &bytes[offset..offset + len];
        let record: CheckpointRecord = serde_json::from_slice(line)
            .map_err(|e| Error::Checkpoint(format!("{}: line {line_no} is corrupt: {e}", path.display())))?;
        offset += len + 1;
        records.push((record, offset as u64));
    }
    if !matches!(records.first(), Some((CheckpointRecord::Header { .. }, _))) {
        return Err(Error::Checkpoint(format!("{}: missing header line", path.display())));
    }
    let mut last = f64::NEG_INFINITY;
    for (r, _) in &records {
        if let CheckpointRecord::Dead { event } = r {
            let logl = event.record.point.logl;
            if logl < last {
                return Err(Error::Checkpoint(format!(
                    "{}: dead likelihoods decrease at node {} ({logl} after {last})",
                    path.display(),
                    event.id()
                )));
            }
            last = logl;
        }
    }
    Ok(Checkpoint { records, had_partial_tail })
}

/// Appends records, flushing at iteration boundaries.
pub struct CheckpointSink {
    writer: BufWriter<File>,
    n_events: usize,
}

impl CheckpointSink {
    fn create(path: &Path, config: &RunConfig) -> Result<Self> {
        let file = File::create(path)?;
        let mut sink = CheckpointSink { writer: BufWriter::new(file), n_events: 0 };
        let hashed = config.hashed();
        sink.append(&CheckpointRecord::Header {
            version: FORMAT_VERSION,
            hash: hashed.hash(),
            config: serde_json::to_value(&hashed)?,
        })?;
        sink.flush()?;
        Ok(sink)
    }

    /// Reopen for appending after dropping everything past `keep_bytes`.
    fn reopen(path: &Path, keep_bytes: u64, n_events: usize) -> Result<Self> {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(keep_bytes)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(CheckpointSink { writer: BufWriter::new(file), n_events })
    }

    pub fn append(&mut self, record: &CheckpointRecord) -> Result<()> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")?;
        if matches!(record, CheckpointRecord::Dead { .. }) {
            self.n_events += 1;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Insertion rank of a new live point and the live count after insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankStat {
    pub rank: usize,
    pub n: usize,
}

pub fn ranks_from_events<'a>(events: impl IntoIterator<Item = &'a DeathEvent>) -> Vec<RankStat> {
    events.into_iter().flat_map(|e| e.child_ranks.iter().map(|&(rank, n)| RankStat { rank, n })).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostic {
    pub n_ranks: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// `"ok"` or `"insufficient data"`.
    pub status: String,
}

/// Kolmogorov survival function `Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against U(0,1): the statistic and its asymptotic
/// p-value with Stephens' small-sample correction.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    (d, kolmogorov_q((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// Under a correct sampler the insertion ranks are uniform; test the
/// transformed ranks `(rank + 0.5) / n` with KS.
pub fn rank_diagnostic(ranks: &[RankStat]) -> RankDiagnostic {
    if ranks.len() < MIN_RANKS {
        return RankDiagnostic {
            n_ranks: ranks.len(),
            statistic: None,
            p_value: None,
            status: "insufficient data".into(),
        };
    }
    let xs: Vec<f64> = ranks.iter().map(|r| (r.rank as f64 + 0.5) / r.n as f64).collect();
    let (d, p) = ks_uniform(&xs);
    RankDiagnostic { n_ranks: ranks.len(), statistic: Some(d), p_value: Some(p), status: "ok".into() }
}

/// What a progress line shows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressState {
    pub iteration: u64,
    pub width: usize,
    pub logv: f64,
    pub logz: f64,
    pub logz_sigma: f64,
    pub max_logl: f64,
    pub source: String,
    pub acceptance: f64,
    /// Set on the final line: the termination reason.
    pub done: Option<String>,
}

fn fmt_num(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.3}")
    }
}

pub fn progress_report(s: &ProgressState) -> String {
    let logv = if s.logv == 0.0 { "0.0".to_string() } else { fmt_num(s.logv) };
    let mut line = format!(
        "it={} width={} logv={} logz={} +- {:.3} max_logl={} source={} acc={:.4}",
        s.iteration,
        s.width,
        logv,
        fmt_num(s.logz),
        s.logz_sigma,
        fmt_num(s.max_logl),
        s.source,
        s.acceptance
    );
    if let Some(reason) = &s.done {
        line.push_str(&format!(" done ({reason})"));
    }
    line
}

/// Rate limiter for progress lines: at most one per interval.
#[derive(Debug, Clone)]
pub struct ProgressThrottle {
    interval: Duration,
    last: Option<Instant>,
}

impl Default for ProgressThrottle {
    fn default() -> Self {
        ProgressThrottle::new(Duration::from_secs(1))
    }
}

impl ProgressThrottle {
    pub fn new(interval: Duration) -> Self {
        ProgressThrottle { interval, last: None }
    }

    /// Whether a line may be emitted at `now`; records the emission if so.
    pub fn ready(&mut self, now: Instant) -> bool {
        match self.last {
            Some(t) if now.duration_since(t) < self.interval => false,
            _ => {
                self.last = Some(now);
                true
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Interrupted,
    Failed,
}

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub problem: String,
    pub status: RunStatus,
    /// Termination reason, or the error for failed runs.
    pub reason: String,
    #[serde(with = "crate::math::json_f64")]
    pub logz: f64,
    pub logz_sigma: f64,
    pub ess: f64,
    pub n_samples: usize,
    pub n_iterations: u64,
    pub n_evals: u64,
    pub ref_logz: Option<f64>,
    pub logz_samples: Vec<f64>,
    pub config_hash: String,
}

fn make_sampler(config: &RunConfig, dim: usize) -> Box<dyn ConstrainedSampler> {
    let step = StepConfig { n_steps: config.n_steps.unwrap_or(2 * dim), ..StepConfig::for_dim(dim) };
    match config.sampler {
        SamplerKind::Region => Box::new(RegionSampler::new(RegionConfig::default())),
        SamplerKind::Slice => Box::new(StepSampler::new(step, Scheme::AxisSlice)),
        SamplerKind::HitAndRun => Box::new(StepSampler::new(step, Scheme::HitAndRun)),
        SamplerKind::Auto => Box::new(AutoSampler::new(dim, RegionConfig::default(), step)),
    }
}

/// Rebuild a run from an existing checkpoint, truncating the file to its
/// latest snapshot. Returns `None` when there is nothing to resume from.
fn resume_from(
    config: &RunConfig,
    problem: &Problem,
    path: &Path,
    sampler: &mut dyn ConstrainedSampler,
) -> Result<Option<(Explorer, IntegratorEnsemble, CheckpointSink, bool)>> {
    if !path.exists() {
        return Ok(None);
    }
    let ckpt = read_checkpoint(path)?;
    let expected = config.config_hash();
    let found = ckpt.header_hash().unwrap_or_default();
    if found != expected {
        return Err(Error::Usage(format!(
            "checkpoint in {} was written with a different configuration (hash {found}, current {expected}); \
             rerun without --resume or restore the original settings",
            path.display()
        )));
    }
    let policy = config.policy()?;
    let mut ensemble = make_ensemble(config.n_live, config.k_bootstrap, config.seed)?;

    if ckpt.is_done() {
        let events: Vec<DeathEvent> = ckpt.events().cloned().collect();
        let snapshot = ckpt.records.iter().rev().find_map(|(r, _)| match r {
            CheckpointRecord::Snapshot { explorer, sampler, .. } => Some((explorer.clone(), sampler.clone())),
            _ => None,
        });
        let reason = ckpt.records.iter().find_map(|(r, _)| match r {
            CheckpointRecord::Done { reason, .. } => Some(reason.clone()),
            _ => None,
        });
        let (mut snap, sampler_state) =
            snapshot.ok_or_else(|| Error::Checkpoint("completed checkpoint has no final snapshot".into()))?;
        snap.stop = reason.as_deref().and_then(crate::tree::StopReason::parse);
        sampler.restore_state(&sampler_state)?;
        for e in &events {
            ensemble.ensemble_update(e);
        }
        let n = events.len();
        let explorer = Explorer::restore(problem, policy, config.frac, config.n_live, *snap, events)?;
        let sink = CheckpointSink::reopen(path, ckpt.records.last().map_or(0, |r| r.1), n)?;
        return Ok(Some((explorer, ensemble, sink, true)));
    }

    let latest = ckpt.records.iter().rev().find_map(|(r, end)| match r {
        CheckpointRecord::Snapshot { n_events, explorer, sampler } => {
            Some((*n_events, explorer.clone(), sampler.clone(), *end))
        }
        _ => None,
    });
    let Some((n_events, snap, sampler_state, end)) = latest else {
        // nothing durable beyond the header: start over, keeping the header line
        let header_end = ckpt.records[0].1;
        let explorer = build_root(problem, config.n_live, policy, config.frac, config.seed)?;
        let sink = CheckpointSink::reopen(path, header_end, 0)?;
        return Ok(Some((explorer, ensemble, sink, false)));
    };
    let events: Vec<DeathEvent> = ckpt.events().take(n_events).cloned().collect();
    if events.len() != n_events {
        return Err(Error::Checkpoint(format!("snapshot expects {n_events} dead events, file has {}", events.len())));
    }
    sampler.restore_state(&sampler_state)?;
    for e in &events {
        ensemble.ensemble_update(e);
    }
    let explorer = Explorer::restore(problem, policy, config.frac, config.n_live, *snap, events)?;
    let sink = CheckpointSink::reopen(path, end, n_events)?;
    Ok(Some((explorer, ensemble, sink, false)))
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    dir: &Path,
    problem: &Problem,
    config: &RunConfig,
    explorer: &Explorer,
    ensemble: &IntegratorEnsemble,
    sampler: &dyn ConstrainedSampler,
    status: RunStatus,
    reason: String,
) -> Result<RunResults> {
    let combined = ensemble.combine();
    let weights: Vec<f64> = combined.posterior.iter().map(|&(_, w)| w).collect();
    let results = RunResults {
        problem: problem.name().to_string(),
        status,
        reason,
        logz: combined.logz_mean,
        logz_sigma: combined.logz_sigma,
        ess: effective_sample_size(&weights),
        n_samples: weights.len(),
        n_iterations: explorer.iteration(),
        n_evals: sampler.counters().evals,
        ref_logz: problem.ref_logz(),
        logz_samples: ensemble.logz_samples(),
        config_hash: config.config_hash(),
    };
    fs::write(dir.join(RESULTS_FILE), serde_json::to_string_pretty(&results)? + "\n")?;

    let mut csv = String::from("weight,logl");
    for i in 0..problem.dim() {
        csv.push_str(&format!(",v{i}"));
    }
    csv.push('\n');
    for (event, w) in explorer.events().iter().zip(&weights) {
        csv.push_str(&format!("{w:e},{:e}", event.record.point.logl));
        for x in &event.record.point.v {
            csv.push_str(&format!(",{x:e}"));
        }
        csv.push('\n');
    }
    fs::write(dir.join(SAMPLES_FILE), csv)?;

    let diag = rank_diagnostic(&ranks_from_events(explorer.events()));
    fs::write(dir.join(DIAGNOSTICS_FILE), serde_json::to_string_pretty(&diag)? + "\n")?;
    Ok(results)
}

/// Execute (or resume) a run and write all outputs. On sampler exhaustion
/// the partial results are written with status `failed` and the error is
/// returned.
pub fn run(config: &RunConfig) -> Result<RunResults> {
    let problem = config.validate()?;
    let mut sampler = make_sampler(config, problem.dim());
    fs::create_dir_all(&config.out)?;
    let path = config.out.join(CHECKPOINT_FILE);

    let resumed = if config.resume { resume_from(config, &problem, &path, sampler.as_mut())? } else { None };
    let (mut explorer, mut ensemble, mut sink, already_done) = match resumed {
        Some(state) => state,
        None => (
            build_root(&problem, config.n_live, config.policy()?, config.frac, config.seed)?,
            make_ensemble(config.n_live, config.k_bootstrap, config.seed)?,
            CheckpointSink::create(&path, config)?,
            false,
        ),
    };
    if already_done {
        let reason = explorer.stop_reason().map_or("done", |r| r.as_str()).to_string();
        return write_outputs(
            &config.out,
            &problem,
            config,
            &explorer,
            &ensemble,
            sampler.as_ref(),
            RunStatus::Completed,
            reason,
        );
    }

    let mut throttle = ProgressThrottle::default();
    let progress =
        |explorer: &Explorer, ensemble: &IntegratorEnsemble, sampler: &dyn ConstrainedSampler, done: Option<String>| {
            let combined = ensemble.combine();
            progress_report(&ProgressState {
                iteration: explorer.iteration(),
                width: explorer.width(),
                logv: explorer.logv(),
                logz: explorer.logz(),
                logz_sigma: combined.logz_sigma,
                max_logl: explorer.max_open_logl(),
                source: sampler.label().to_string(),
                acceptance: sampler.counters().efficiency(),
                done,
            })
        };

    while !explorer.is_done() {
        if config.stop_after.is_some_and(|n| explorer.iteration() >= n) {
            sink.flush()?;
            return write_outputs(
                &config.out,
                &problem,
                config,
                &explorer,
                &ensemble,
                sampler.as_ref(),
                RunStatus::Interrupted,
                format!("stopped after {} iterations", explorer.iteration()),
            );
        }
        let events = match explorer.step(sampler.as_mut()) {
            Ok(events) => events,
            Err(e) => {
                sink.flush()?;
                write_outputs(
                    &config.out,
                    &problem,
                    config,
                    &explorer,
                    &ensemble,
                    sampler.as_ref(),
                    RunStatus::Failed,
                    e.to_string(),
                )?;
                return Err(e);
            }
        };
        for event in &events {
            sink.append(&CheckpointRecord::Dead { event: event.clone() })?;
            ensemble.ensemble_update(event);
        }
        if explorer.is_done() || explorer.iteration() % config.snapshot_every == 0 {
            sink.append(&CheckpointRecord::Snapshot {
                n_events: sink.n_events,
                explorer: Box::new(explorer.snapshot()),
                sampler: sampler.save_state(),
            })?;
        }
        sink.flush()?;
        if config.progress {
            if let Some(summary) = sampler.take_refit_summary() {
                eprintln!("{summary}");
            }
            if throttle.ready(Instant::now()) {
                eprintln!("{}", progress(&explorer, &ensemble, sampler.as_ref(), None));
            }
        }
    }
    let reason = explorer.stop_reason().map_or("done", |r| r.as_str()).to_string();
    sink.append(&CheckpointRecord::Done { reason: reason.clone(), n_events: sink.n_events })?;
    sink.flush()?;
    if config.progress {
        eprintln!("{}", progress(&explorer, &ensemble, sampler.as_ref(), Some(reason.clone())));
    }
    write_outputs(&config.out, &problem, config, &explorer, &ensemble, sampler.as_ref(), RunStatus::Completed, reason)
}

/// Recompute the rank diagnostic from the checkpoint in `dir`.
pub fn diagnose(dir: &Path) -> Result<RankDiagnostic> {
    let ckpt = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    Ok(rank_diagnostic(&ranks_from_events(ckpt.events())))
}
