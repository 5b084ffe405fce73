//! Worker-pool ensemble runs and their output files.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use geogan_core::arch::{CriticParams, GeneratorParams};
use geogan_core::conditioner::{condition, ConditionedRealization, ConditioningProblem};
use geogan_core::ensemble::{boundary_artifact, ensemble_stats, influence_profile, EnsembleStats};
use geogan_core::Mask;

use crate::error::{Error, Result};
use crate::gvox;

/// Conditions `n` realizations with seeds `seed_base..seed_base + n` on up to
/// `workers` threads. Results come back in seed order and do not depend on the
/// number of workers.
pub fn run_ensemble(
    problem: &ConditioningProblem,
    g: &GeneratorParams<f32>,
    d: &CriticParams<f32>,
    n: usize,
    seed_base: u64,
    workers: usize,
) -> Result<(Vec<ConditionedRealization>, EnsembleStats)> {
    if n == 0 {
        return Err(Error::Invalid("ensemble size must be at least 1".into()));
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<geogan_core::Result<ConditionedRealization>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let p = ConditioningProblem {
                    seed: seed_base + i as u64,
                    ..problem.clone()
                };
                let r = condition(&p, g, d);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    let runs = slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<geogan_core::Result<Vec<_>>>()?;
    let stats = ensemble_stats(&runs, problem.mode)?;
    Ok((runs, stats))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, e.into())
}

fn opt(v: Option<f64>) -> String {
    v.map(|a| a.to_string()).unwrap_or_default()
}

/// Writes `mean.gvox`, `std.gvox`, `profile.csv`, `ensemble_report.csv` and
/// `summary.json` into `dir`; returns the paths written.
pub fn write_outputs(dir: &Path, stats: &EnsembleStats, mask: &Mask) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mean = dir.join("mean.gvox");
    let std = dir.join("std.gvox");
    gvox::write(&mean, &stats.mean)?;
    gvox::write(&std, &stats.std)?;

    let profile = dir.join("profile.csv");
    let mut w = csv::Writer::from_path(&profile).map_err(|e| csv_err(&profile, e))?;
    w.write_record(["distance", "mean_std", "voxel_count"])
        .map_err(|e| csv_err(&profile, e))?;
    for row in influence_profile(&stats.std, mask)? {
        w.write_record([
            row.distance.to_string(),
            row.mean_std.to_string(),
            row.voxel_count.to_string(),
        ])
        .map_err(|e| csv_err(&profile, e))?;
    }
    w.flush().map_err(|e| Error::io(&profile, e))?;

    let report = dir.join("ensemble_report.csv");
    let mut w = csv::Writer::from_path(&report).map_err(|e| csv_err(&report, e))?;
    w.write_record([
        "seed",
        "converged",
        "iterations",
        "attempts",
        "content_loss",
        "perceptual_loss",
        "accuracy",
    ])
    .map_err(|e| csv_err(&report, e))?;
    for m in &stats.members {
        w.write_record([
            m.seed.to_string(),
            m.converged.to_string(),
            m.iterations.to_string(),
            m.attempts.to_string(),
            m.content_loss.to_string(),
            m.perceptual_loss.to_string(),
            opt(m.accuracy),
        ])
        .map_err(|e| csv_err(&report, e))?;
    }
    w.flush().map_err(|e| Error::io(&report, e))?;

    let border = boundary_artifact(&stats.mean, 2)?;
    let summary = dir.join("summary.json");
    let body = serde_json::json!({
        "members": stats.members.len(),
        "converged": stats.count,
        "std_convention": "population",
        "boundary_artifact": {
            "border_voxels": 2,
            "border_mean": border.border_mean,
            "interior_mean": border.interior_mean,
            "deviation": border.deviation,
        },
    });
    std::fs::write(&summary, format!("{body:#}\n")).map_err(|e| Error::io(&summary, e))?;
    Ok(vec![mean, std, profile, report, summary])
}
