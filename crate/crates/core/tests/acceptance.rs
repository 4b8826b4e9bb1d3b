//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p rnest-core --test acceptance`.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rnest::integrate::{beta_shrink, make_ensemble, IntegratorEnsemble};
use rnest::lrps::{ConstrainedSampler, ExactShellSampler, RejectionSampler, WorstNeighbourSampler};
use rnest::model::catalog;
use rnest::nscore::{run_vanilla, DeadRecord, LivePoint};
use rnest::region::{BallUnion, RegionConfig, RegionSampler};
use rnest::runio::{self, ks_uniform, rank_diagnostic, ranks_from_events, RunConfig};
use rnest::stepsampler::{slice_step, StepConfig, WalkState};
use rnest::tree::{breadth_first_run, build_root, AttachmentPolicy, Explorer};
use rnest::{EngineRng, Problem};

const FRAC: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Tree run with a fixed width and a region sampler, integrated by a `k`-member ensemble.
fn tree_run(
    problem: &Problem,
    n: usize,
    k: usize,
    seed: u64,
    sampler: &mut dyn ConstrainedSampler,
) -> (Explorer, IntegratorEnsemble) {
    let mut explorer = build_root(problem, n, AttachmentPolicy::constant(n).unwrap(), FRAC, seed).unwrap();
    let mut ensemble = make_ensemble(n, k, seed).unwrap();
    breadth_first_run(&mut explorer, sampler, &mut [&mut ensemble]).unwrap();
    (explorer, ensemble)
}

fn gauss2d_runs(seeds: std::ops::RangeInclusive<u64>) -> Vec<(f64, f64, f64, f64)> {
    let problem = catalog("gauss2d").unwrap();
    let reference = problem.ref_logz().unwrap();
    seeds
        .into_par_iter()
        .map(|seed| {
            let start = Instant::now();
            let mut sampler = RegionSampler::new(RegionConfig::default());
            let (_, ensemble) = tree_run(&problem, 400, 30, seed, &mut sampler);
            let c = ensemble.combine();
            (c.logz_mean, c.logz_sigma, reference, start.elapsed().as_secs_f64())
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let runs = gauss2d_runs(1..=20);
    let within = runs.iter().filter(|(z, s, r, _)| (z - r).abs() < 3.0 * s).count();
    let slowest = runs.iter().map(|r| r.3).fold(0.0, f64::max);
    outcome(
        within >= 18 && slowest < 60.0,
        format!("{within}/20 runs within 3 sigma (need >= 18); slowest run {slowest:.2} s (limit 60 s)"),
    )
}

fn criterion_2() -> Outcome {
    let runs = gauss2d_runs(1..=50);
    let within = runs.iter().filter(|(z, s, r, _)| (z - r).abs() <= *s).count();
    let mean_sigma = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
    outcome(
        (23..=45).contains(&within),
        format!("{within}/50 runs within 1 sigma (band 23-45); mean sigma {mean_sigma:.4}"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 1..=10 {
        for n in [2usize, 10, 100] {
            let problem = Problem::flat(2, 3.7).unwrap();
            let state = run_vanilla(&problem, n, FRAC, &mut RejectionSampler::default(), seed).unwrap();
            worst = worst.max((state.logz_current - 3.7).abs());
            for policy in [AttachmentPolicy::constant(n).unwrap(), AttachmentPolicy::with_defaults(n).unwrap()] {
                let mut explorer = build_root(&problem, n, policy, FRAC, seed).unwrap();
                let mut ensemble = make_ensemble(n, 4, seed).unwrap();
                breadth_first_run(&mut explorer, &mut RejectionSampler::default(), &mut [&mut ensemble]).unwrap();
                worst = worst.max((explorer.logz() - 3.7).abs());
                worst = worst.max((ensemble.combine().logz_mean - 3.7).abs());
            }
        }
    }
    outcome(worst < 1e-9, format!("max |logz - 3.7| = {worst:.3e} over 10 seeds x 3 widths, vanilla and tree"))
}

fn same_record(a: &DeadRecord, b: &DeadRecord) -> bool {
    let bits = |p: &LivePoint| {
        (p.u.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), p.logl.to_bits(), p.birth_logl.to_bits(), p.serial)
    };
    bits(&a.point) == bits(&b.point)
        && a.logv.to_bits() == b.logv.to_bits()
        && a.logw.to_bits() == b.logw.to_bits()
        && a.n_live_at_death == b.n_live_at_death
        && a.kind == b.kind
}

fn criterion_4() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["gauss2d", "funnel2d"] {
        let problem = catalog(name).unwrap();
        for seed in [1, 2, 3] {
            let vanilla =
                run_vanilla(&problem, 100, FRAC, &mut RegionSampler::new(RegionConfig::default()), seed).unwrap();
            let mut explorer = build_root(&problem, 100, AttachmentPolicy::constant(100).unwrap(), FRAC, seed).unwrap();
            breadth_first_run(&mut explorer, &mut RegionSampler::new(RegionConfig::default()), &mut []).unwrap();
            let tree: Vec<&DeadRecord> = explorer.dead_records().collect();
            let equal = tree.len() == vanilla.dead.len()
                && tree.iter().zip(&vanilla.dead).all(|(a, b)| same_record(a, b))
                && explorer.logz().to_bits() == vanilla.logz_current.to_bits();
            pass &= equal;
            if seed == 1 {
                details.push(format!("{name}: {} records {}", tree.len(), if equal { "identical" } else { "DIFFER" }));
            } else if !equal {
                details.push(format!("{name} seed {seed} differs"));
            }
        }
    }
    outcome(pass, format!("{} (3 seeds each)", details.join("; ")))
}

fn criterion_5() -> Outcome {
    let problem = catalog("sphere-shell").unwrap();
    let geometry = problem.shell_geometry().unwrap();
    let n = 400;
    let mut ratios = Vec::new();
    let mut seed = 0;
    while ratios.len() < 10_000 {
        seed += 1;
        let mut sampler = ExactShellSampler::new(&problem).unwrap();
        let state = run_vanilla(&problem, n, FRAC, &mut sampler, seed).unwrap();
        let volumes: Vec<Option<f64>> = state
            .dead
            .iter()
            .filter(|r| r.kind == rnest::nscore::RecordKind::Shell)
            .map(|r| geometry.constrained_volume(r.point.logl))
            .collect();
        for w in volumes.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                ratios.push(b / a);
            }
        }
    }
    let m = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / m;
    let sd = (ratios.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let expected = (n as f64 - 1.0) / n as f64;
    let z = (mean - expected) / (sd / m.sqrt());
    outcome(
        z.abs() < 2.5758,
        format!("{} ratios from {seed} runs: mean {mean:.6} vs {expected:.6}, z = {z:.2} (|z| < 2.576)", ratios.len()),
    )
}

fn criterion_6() -> Outcome {
    let centers = vec![vec![0.0, 0.0], vec![0.6, 0.0], vec![0.3, 0.5]];
    let r = 0.45f64;
    let mut rng = EngineRng::seed_from_u64(6);
    let balls = BallUnion::euclidean(&centers, r * r, &mut rng).unwrap();
    let (lo_x, hi_x, lo_y, hi_y) = (-r, 0.6 + r, -r, 0.5 + r);
    let grid = 20;
    let cell = |x: f64, lo: f64, hi: f64| (((x - lo) / (hi - lo) * grid as f64) as usize).min(grid - 1);
    let mut counts = vec![0f64; grid * grid];
    let draws = 100_000;
    let mut accepted = 0;
    while accepted < draws {
        if let Some(u) = balls.draw(&mut rng) {
            counts[cell(u[1], lo_y, hi_y) * grid + cell(u[0], lo_x, hi_x)] += 1.0;
            accepted += 1;
        }
    }
    // oracle: covered area per cell from a fine sub-grid
    let sub = 60;
    let mut area = vec![0f64; grid * grid];
    for gy in 0..grid {
        for gx in 0..grid {
            let mut inside = 0;
            for sy in 0..sub {
                for sx in 0..sub {
                    let x = lo_x + (hi_x - lo_x) * (gx as f64 + (sx as f64 + 0.5) / sub as f64) / grid as f64;
                    let y = lo_y + (hi_y - lo_y) * (gy as f64 + (sy as f64 + 0.5) / sub as f64) / grid as f64;
                    if centers.iter().any(|c| (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r) {
                        inside += 1;
                    }
                }
            }
            area[gy * grid + gx] = inside as f64;
        }
    }
    let total: f64 = area.iter().sum();
    let mut chi2 = 0.0;
    let mut cells = 0;
    let mut pooled = (0.0, 0.0);
    for (o, a) in counts.iter().zip(&area) {
        let e = a / total * draws as f64;
        if e >= 5.0 {
            chi2 += (o - e).powi(2) / e;
            cells += 1;
        } else {
            pooled.0 += o;
            pooled.1 += e;
        }
    }
    if pooled.1 > 0.0 {
        chi2 += (pooled.0 - pooled.1).powi(2) / pooled.1;
        cells += 1;
    }
    let p = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
    outcome(p > 0.01, format!("chi2 = {chi2:.1} over {cells} cells, p = {p:.3} (need > 0.01)"))
}

fn criterion_7() -> Outcome {
    let problem = catalog("bimodal2d").unwrap();
    let fractions: Vec<f64> = (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            let mut sampler = RegionSampler::new(RegionConfig::default());
            let (explorer, ensemble) = tree_run(&problem, 400, 4, seed, &mut sampler);
            let c = ensemble.combine();
            let total: f64 = c.posterior.iter().map(|p| p.1).sum();
            let right: f64 = explorer
                .events()
                .iter()
                .zip(&c.posterior)
                .filter(|(e, _)| e.record.point.v[0] > 0.0)
                .map(|(_, p)| p.1)
                .sum();
            right / total
        })
        .collect();
    let ok = fractions.iter().filter(|f| (*f - 0.5).abs() <= 0.05).count();
    let worst = fractions.iter().map(|f| (f - 0.5).abs()).fold(0.0, f64::max);
    outcome(
        ok >= 18,
        format!("{ok}/20 runs with mode split within 0.05 of 0.5 (need >= 18); worst deviation {worst:.3}"),
    )
}

fn final_quarter_acceptance(trace: &[u32]) -> f64 {
    let tail = &trace[trace.len() - trace.len() / 4..];
    tail.len() as f64 / tail.iter().map(|&e| e as f64).sum::<f64>()
}

fn criterion_8() -> Outcome {
    let problem = catalog("funnel2d").unwrap();
    let pairs: Vec<(f64, f64)> = (1..=20u64)
        .into_par_iter()
        .map(|seed| {
            let mut acc = [0.0; 2];
            for (i, use_v_ell) in [true, false].into_iter().enumerate() {
                let mut sampler = RegionSampler::new(RegionConfig { use_v_ell, ..RegionConfig::default() });
                let mut explorer =
                    build_root(&problem, 400, AttachmentPolicy::constant(400).unwrap(), FRAC, seed).unwrap();
                breadth_first_run(&mut explorer, &mut sampler, &mut []).unwrap();
                acc[i] = final_quarter_acceptance(&sampler.eval_trace);
            }
            (acc[0], acc[1])
        })
        .collect();
    let wins = pairs.iter().filter(|(on, off)| on >= off).count();
    let mean = |f: fn(&(f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
    outcome(
        wins >= 18,
        format!(
            "{wins}/20 paired runs with v-ellipsoid acceptance >= without (need >= 18); mean {:.3} vs {:.3}",
            mean(|p| p.0),
            mean(|p| p.1)
        ),
    )
}

fn read_outputs(dir: &Path) -> Vec<Vec<u8>> {
    [runio::RESULTS_FILE, runio::SAMPLES_FILE, runio::DIAGNOSTICS_FILE, runio::CHECKPOINT_FILE]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

fn criterion_9() -> Outcome {
    let reference = tempfile::tempdir().unwrap();
    let base = RunConfig::new("gauss2d", 400, 1, reference.path());
    let total = runio::run(&base).unwrap().n_iterations;
    let expected = read_outputs(reference.path());
    let mut rng = EngineRng::seed_from_u64(9);
    let stops: Vec<u64> = (0..10).map(|_| rng.random_range(0..total)).collect();
    let mismatched: Vec<u64> = stops
        .par_iter()
        .filter(|&&stop| {
            let dir = tempfile::tempdir().unwrap();
            let mut c = RunConfig { out: dir.path().to_path_buf(), stop_after: Some(stop), ..base.clone() };
            runio::run(&c).unwrap();
            c.stop_after = None;
            c.resume = true;
            runio::run(&c).unwrap();
            read_outputs(dir.path()) != expected
        })
        .copied()
        .collect();
    outcome(
        mismatched.is_empty(),
        format!("interrupted at {stops:?} of {total} iterations; {} mismatching resumes", mismatched.len()),
    )
}

fn rejection_rate(make: fn(&Problem) -> Box<dyn ConstrainedSampler>) -> f64 {
    let problem = catalog("sphere-shell").unwrap();
    let rejected = (1..=100u64)
        .into_par_iter()
        .filter(|&seed| {
            let mut sampler = make(&problem);
            let mut explorer = build_root(&problem, 400, AttachmentPolicy::constant(400).unwrap(), FRAC, seed).unwrap();
            while !explorer.is_done() && explorer.iteration() < 3000 {
                explorer.step(sampler.as_mut()).unwrap();
            }
            let d = rank_diagnostic(&ranks_from_events(explorer.events()));
            d.p_value.is_some_and(|p| p < 0.01)
        })
        .count();
    rejected as f64 / 100.0
}

fn criterion_10() -> Outcome {
    let exact = rejection_rate(|p| Box::new(ExactShellSampler::new(p).unwrap()));
    let broken = rejection_rate(|_| Box::new(WorstNeighbourSampler::default()));
    outcome(
        exact <= 0.05 && broken >= 0.99,
        format!(
            "rejection rate {:.0}% with the exact sampler (<= 5%), {:.0}% with the broken one (>= 99%)",
            exact * 100.0,
            broken * 100.0
        ),
    )
}

fn criterion_11() -> Outcome {
    let draws = 1_000_000;
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, n) in [1usize, 10, 400].into_iter().enumerate() {
        let mut rng = EngineRng::seed_from_u64(11 + i as u64);
        let t: Vec<f64> = (0..draws).map(|_| beta_shrink(n, &mut rng).exp()).collect();
        let m = draws as f64;
        let mean = t.iter().sum::<f64>() / m;
        let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let m4 = t.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
        let nf = n as f64;
        let (mu, sigma2) = (nf / (nf + 1.0), nf / ((nf + 1.0).powi(2) * (nf + 2.0)));
        let z_mean = (mean - mu) / (var / m).sqrt();
        let z_var = (var - sigma2) / ((m4 - var * var) / m).sqrt();
        pass &= z_mean.abs() < 5.0 && z_var.abs() < 5.0;
        lines.push(format!("n={n}: z_mean {z_mean:.2}, z_var {z_var:.2}"));
    }
    outcome(pass, format!("{} (all |z| < 5)", lines.join("; ")))
}

fn criterion_12() -> Outcome {
    let problem = Problem::new(
        "step",
        1,
        |u: &[f64]| u.to_vec(),
        |v: &[f64]| if (0.3..=0.7).contains(&v[0]) { 0.0 } else { -1e300 },
    )
    .unwrap();
    let cfg = StepConfig::for_dim(1);
    let mut rng = EngineRng::seed_from_u64(12);
    let mut xs = Vec::with_capacity(100_000);
    for serial in 0..100_000u64 {
        let u0 = 0.3 + 0.4 * rng.random::<f64>();
        let (v, logl) = problem.evaluate(&[u0]).unwrap();
        let start = LivePoint { u: vec![u0], v, logl, birth_logl: -1.0, serial };
        let ws = slice_step(&WalkState::new(start, -1.0).unwrap(), &[1.0], &cfg, &problem, &mut rng).unwrap();
        xs.push((ws.current.u[0] - 0.3) / 0.4);
    }
    let outside = xs.iter().filter(|x| !(0.0..=1.0).contains(*x)).count();
    let (d, p) = ks_uniform(&xs);
    outcome(
        outside == 0 && p > 0.01,
        format!("KS D = {d:.5}, p = {p:.3} over 10^5 outputs (need > 0.01); {outside} outside"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("evidence accuracy", criterion_1),
        ("uncertainty coverage", criterion_2),
        ("flat-likelihood exactness", criterion_3),
        ("vanilla/tree equivalence", criterion_4),
        ("shrinkage calibration", criterion_5),
        ("union-sampling uniformity", criterion_6),
        ("multi-modality", criterion_7),
        ("funnel benefit", criterion_8),
        ("resume determinism", criterion_9),
        ("diagnostic power", criterion_10),
        ("beta-shrink moments", criterion_11),
        ("slice-sampler correctness", criterion_12),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        println!(
            "criterion {:>2} {:<28} {}  {}  [{:.1} s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
