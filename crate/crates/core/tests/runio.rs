use std::fs;
use std::io::Write;
use std::path::Path;

use rnest::runio::{
    read_checkpoint, run, CheckpointRecord, RunConfig, RunStatus, CHECKPOINT_FILE, DIAGNOSTICS_FILE, RESULTS_FILE,
    SAMPLES_FILE,
};
use rnest::Error;

fn config(dir: &Path, seed: u64) -> RunConfig {
    let mut c = RunConfig::new("gauss2d", 60, seed, dir);
    c.k_bootstrap = 8;
    c.snapshot_every = 25;
    c
}

fn outputs(dir: &Path) -> Vec<Vec<u8>> {
    [RESULTS_FILE, SAMPLES_FILE, DIAGNOSTICS_FILE, CHECKPOINT_FILE]
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&config(a.path(), 3)).unwrap();
    run(&config(b.path(), 3)).unwrap();
    assert_eq!(outputs(a.path()), outputs(b.path()));
}

#[test]
fn interrupted_then_resumed_matches_uninterrupted() {
    let reference = tempfile::tempdir().unwrap();
    run(&config(reference.path(), 5)).unwrap();
    for stop in [0, 7, 25, 26, 140] {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), 5);
        c.stop_after = Some(stop);
        assert_eq!(run(&c).unwrap().status, RunStatus::Interrupted);
        c.stop_after = None;
        c.resume = true;
        assert_eq!(run(&c).unwrap().status, RunStatus::Completed);
        assert_eq!(outputs(dir.path()), outputs(reference.path()), "interrupted at {stop}");
    }
}

#[test]
fn checkpoint_counts_events_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), 1);
    c.stop_after = Some(0);
    run(&c).unwrap();
    let ckpt = read_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.records.len(), 1);
    c.stop_after = Some(10);
    run(&c).unwrap();
    let ckpt = read_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.records.len(), 11);
    assert_eq!(ckpt.events().count(), 10);
    c.stop_after = Some(50);
    run(&c).unwrap();
    let ckpt = read_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let snapshots = ckpt.records.iter().filter(|(r, _)| matches!(r, CheckpointRecord::Snapshot { .. })).count();
    assert_eq!((ckpt.events().count(), snapshots), (50, 2));
}

#[test]
fn partial_final_line_is_skipped() {
    let reference = tempfile::tempdir().unwrap();
    run(&config(reference.path(), 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), 9);
    c.stop_after = Some(60);
    run(&c).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"type\":\"dead\",\"ev").unwrap();
    assert!(read_checkpoint(&path).unwrap().had_partial_tail);
    c.stop_after = None;
    c.resume = true;
    run(&c).unwrap();
    assert_eq!(outputs(dir.path()), outputs(reference.path()));
}

#[test]
fn corrupt_inner_line_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), 2);
    c.stop_after = Some(30);
    run(&c).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{not json";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    c.resume = true;
    c.stop_after = None;
    assert!(matches!(run(&c), Err(Error::Checkpoint(_))));
}

#[test]
fn decreasing_likelihoods_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), 2);
    c.stop_after = Some(20);
    run(&c).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines.swap(2, 12);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn changed_config_is_refused_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), 4);
    c.stop_after = Some(30);
    run(&c).unwrap();
    c.n_live = 70;
    c.resume = true;
    c.stop_after = None;
    assert!(matches!(run(&c), Err(Error::Usage(_))));
}

#[test]
fn resuming_a_finished_run_reemits_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), 6);
    run(&c).unwrap();
    let before = outputs(dir.path());
    fs::remove_file(dir.path().join(RESULTS_FILE)).unwrap();
    c.resume = true;
    let r = run(&c).unwrap();
    assert_eq!(r.status, RunStatus::Completed);
    assert_eq!(outputs(dir.path()), before);
}

#[test]
fn unknown_problem_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), 1);
    c.problem = "nope".into();
    assert!(matches!(run(&c), Err(Error::Usage(_))));
}

#[test]
fn every_sampler_completes() {
    use rnest::runio::SamplerKind;
    for kind in [SamplerKind::Region, SamplerKind::Slice, SamplerKind::HitAndRun, SamplerKind::Auto] {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), 8);
        c.sampler = kind;
        let r = run(&c).unwrap();
        assert_eq!(r.status, RunStatus::Completed, "{kind:?}");
        assert!((r.logz - r.ref_logz.unwrap()).abs() < 1.0, "{kind:?}: {}", r.logz);
    }
}

#[test]
fn default_run_matches_reference_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&RunConfig::new("gauss2d", 400, 1, dir.path())).unwrap();
    assert_eq!(r.status, RunStatus::Completed);
    assert!((r.logz - r.ref_logz.unwrap()).abs() < 3.0 * r.logz_sigma, "{} +- {}", r.logz, r.logz_sigma);
    let samples = fs::read_to_string(dir.path().join(SAMPLES_FILE)).unwrap();
    let mut lines = samples.lines();
    assert_eq!(lines.next().unwrap().split(',').take(2).collect::<Vec<_>>(), ["weight", "logl"]);
    let total: f64 = lines.map(|l| l.split(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let ckpt = read_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert!(ckpt.is_done());
    let ranks = rnest::runio::ranks_from_events(ckpt.events());
    assert!(ranks.iter().all(|s| s.rank < s.n));
}

#[test]
fn ks_calibration_on_uniform_ranks() {
    use rand::{Rng, SeedableRng};
    use rnest::runio::{rank_diagnostic, RankStat};
    let mut rng = rnest::EngineRng::seed_from_u64(10);
    let trials = 200;
    let passing = (0..trials)
        .filter(|_| {
            let ranks: Vec<RankStat> =
                (0..10_000).map(|_| RankStat { rank: rng.random_range(0..400), n: 400 }).collect();
            rank_diagnostic(&ranks).p_value.unwrap() > 0.01
        })
        .count();
    assert!(passing as f64 >= 0.95 * trials as f64, "{passing}/{trials}");
}

#[test]
fn ks_statistic_on_exact_grid() {
    use rnest::runio::ks_uniform;
    for count in [10usize, 100, 1000] {
        let xs: Vec<f64> = (0..count).map(|i| (i as f64 + 0.5) / count as f64).collect();
        let (d, _) = ks_uniform(&xs);
        assert!(d <= 0.5 / count as f64 + 1e-12, "count {count}: {d}");
    }
}

#[test]
fn too_few_ranks_is_not_a_failure() {
    use rnest::runio::{rank_diagnostic, RankStat};
    let d = rank_diagnostic(&[RankStat { rank: 0, n: 10 }; 5]);
    assert_eq!((d.status.as_str(), d.p_value), ("insufficient data", None));
}

#[test]
fn invalid_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad: [fn(&mut RunConfig); 4] =
        [|c| c.n_live = 1, |c| c.max_width = 10, |c| c.frac = 0.0, |c| c.k_bootstrap = 1];
    for f in bad {
        let mut c = config(dir.path(), 1);
        f(&mut c);
        assert!(matches!(run(&c), Err(Error::Usage(_))));
    }
}
