//! Per-voxel statistics of conditioned ensembles.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::arch::{CriticParams, GeneratorParams};
use crate::conditioner::{condition, ConditionMode, ConditionedRealization, ConditioningProblem};
use crate::error::{arg_err, Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Mask, Volume};

/// Summary of one ensemble member.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberRecord {
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub attempts: usize,
    pub content_loss: f64,
    pub perceptual_loss: f64,
    pub accuracy: Option<f64>,
}

impl From<&ConditionedRealization> for MemberRecord {
    fn from(r: &ConditionedRealization) -> Self {
        Self {
            seed: r.seed,
            converged: r.converged,
            iterations: r.iterations,
            attempts: r.attempts,
            content_loss: r.content_loss,
            perceptual_loss: r.perceptual_loss,
            accuracy: r.accuracy,
        }
    }
}

/// Population mean and standard deviation over the converged members.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    /// Number of members that entered the statistics.
    pub count: usize,
    pub mean: Volume,
    pub std: Volume,
    /// Every member, sorted by seed.
    pub members: Vec<MemberRecord>,
}

/// Statistics of the converged realizations: thresholded volumes in binary
/// mode, raw volumes otherwise. Members are accumulated in seed order, so the
/// input order does not matter.
pub fn ensemble_stats(
    realizations: &[ConditionedRealization],
    mode: ConditionMode,
) -> Result<EnsembleStats> {
    let mut sorted: Vec<&ConditionedRealization> = realizations.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    let members: Vec<MemberRecord> = sorted.iter().map(|r| MemberRecord::from(*r)).collect();
    let used: Vec<&Volume> = sorted
        .iter()
        .filter(|r| r.converged)
        .map(|r| match mode {
            ConditionMode::Binary => r.thresholded.as_ref().unwrap_or(&r.volume),
            ConditionMode::Continuous => &r.volume,
        })
        .collect();
    if used.is_empty() {
        let diagnostics: Vec<String> = members
            .iter()
            .map(|m| {
                format!(
                    "seed {}: not converged after {} attempts, content loss {:.3e}",
                    m.seed, m.attempts, m.content_loss
                )
            })
            .collect();
        return Err(Error::EmptyEnsemble { diagnostics });
    }
    let dims = used[0].dims();
    if let Some(v) = used.iter().find(|v| v.dims() != dims) {
        return Err(arg_err(
            "ensemble_stats",
            format!("member dims {:?} differ from {dims:?}", v.dims()),
        ));
    }
    let n = used.len() as f64;
    let len = used[0].len();
    let mut mean = vec![0.0f64; len];
    for v in &used {
        for (m, x) in mean.iter_mut().zip(v.to_f32()) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; len];
    for v in &used {
        for ((s, x), m) in var.iter_mut().zip(v.to_f32()).zip(&mean) {
            let d = x as f64 - m;
            *s += d * d;
        }
    }
    let std: Vec<f32> = var.iter().map(|s| (s / n).sqrt() as f32).collect();
    Ok(EnsembleStats {
        count: used.len(),
        mean: Volume::gray(
            dims,
            mean.iter().map(|&m| m.clamp(0.0, 1.0) as f32).collect(),
        )?,
        std: Volume::gray(dims, std)?,
        members,
    })
}

/// Conditions `n` realizations with seeds `seed_base..seed_base + n`, one after
/// another, and summarises them.
pub fn run_ensemble<T: Scalar>(
    problem: &ConditioningProblem,
    g: &GeneratorParams<T>,
    d: &CriticParams<T>,
    n: usize,
    seed_base: u64,
) -> Result<(Vec<ConditionedRealization>, EnsembleStats)> {
    if n == 0 {
        return Err(arg_err("run_ensemble", "ensemble size must be at least 1"));
    }
    let runs = (0..n as u64)
        .map(|i| {
            let p = ConditioningProblem {
                seed: seed_base + i,
                ..problem.clone()
            };
            condition(&p, g, d)
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = ensemble_stats(&runs, problem.mode)?;
    Ok((runs, stats))
}

/// One bucket of the influence profile.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    /// Chebyshev distance to the nearest mask voxel.
    pub distance: u32,
    pub mean_std: f64,
    pub voxel_count: usize,
}

/// Mean of `std` grouped by Chebyshev distance to the mask.
pub fn influence_profile(std: &Volume, mask: &Mask) -> Result<Vec<ProfileRow>> {
    if std.dims() != mask.dims() {
        return Err(arg_err("influence_profile", "std and mask dims differ"));
    }
    let dist = mask.chebyshev_distance();
    let max = dist.iter().copied().max().unwrap_or(0) as usize;
    let mut sums = vec![0.0f64; max + 1];
    let mut counts = vec![0usize; max + 1];
    for (i, &d) in dist.iter().enumerate() {
        sums[d as usize] += std.at(i) as f64;
        counts[d as usize] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(d, (s, c))| ProfileRow {
            distance: d as u32,
            mean_std: s / c as f64,
            voxel_count: c,
        })
        .collect())
}

/// Mean-map level near the faces of the cube against the interior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryArtifact {
    pub border_mean: f64,
    pub interior_mean: f64,
    /// `border_mean - interior_mean`.
    pub deviation: f64,
}

/// Compares voxels within `border` of any face with the rest.
pub fn boundary_artifact(mean: &Volume, border: usize) -> Result<BoundaryArtifact> {
    let dims = mean.dims();
    if dims.iter().any(|&d| d <= 2 * border) {
        return Err(arg_err(
            "boundary_artifact",
            format!("border {border} leaves no interior in {dims:?}"),
        ));
    }
    let (mut b, mut nb, mut c, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                let edge = (0..3).any(|k| p[k] < border || p[k] >= dims[k] - border);
                let v = mean.get(x, y, z) as f64;
                if edge {
                    b += v;
                    nb += 1;
                } else {
                    c += v;
                    nc += 1;
                }
            }
        }
    }
    let border_mean = if nb > 0 { b / nb as f64 } else { 0.0 };
    let interior_mean = c / nc as f64;
    Ok(BoundaryArtifact {
        border_mean,
        interior_mean,
        deviation: border_mean - interior_mean,
    })
}
