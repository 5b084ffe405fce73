//! The `geogan` command line.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use geogan_core::arch::{self, ArchSpec, OutputMode};
use geogan_core::conditioner::{
    condition, make_plane_mask, make_well_mask, ConditionMode, ConditioningProblem, PerceptualForm,
};
use geogan_core::synthetic::{make_channels, make_granular, ChannelSpec, GranularSpec};
use geogan_core::trainer::{extract_patches, TrainingConfig};
use geogan_core::{Axis, Mask, Volume};

use crate::error::Error;
use crate::manifest::RunManifest;
use crate::{checkpoint, ensemble, gckp, gvox, pgm, train};

#[derive(Debug, Parser)]
#[command(
    name = "geogan",
    version,
    about = "Conditional simulation of voxel geomodels with 3D GANs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic training image.
    MakeSynthetic(MakeSyntheticArgs),
    /// Train a generator/critic pair on patches of a training image.
    Train(TrainArgs),
    /// Draw unconditional samples.
    Sample(SampleArgs),
    /// Condition one realization to data at a mask.
    Condition(ConditionArgs),
    /// Condition an ensemble and write mean/std maps.
    Ensemble(EnsembleArgs),
    /// Export an axis-aligned slice as a PGM image.
    ExportSlice(ExportSliceArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Channels,
    Granular,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputModeArg {
    Indicator,
    Gray,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Binary,
    Continuous,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FormArg {
    CriticScore,
    LogSigmoid,
}

fn dim(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if (1..=gvox::MAX_DIM).contains(&v) => Ok(v),
        _ => Err(format!("expected an integer in 1..={}", gvox::MAX_DIM)),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MakeSyntheticArgs {
    #[arg(value_enum)]
    pub kind: SyntheticKind,
    /// Edge length of the cubic volume.
    #[arg(long, default_value_t = 64, value_parser = dim)]
    pub dims: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'o', long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub channel_count: usize,
    #[arg(long, default_value_t = 4.0)]
    pub channel_radius: f64,
    #[arg(long, default_value_t = 6.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 32.0)]
    pub wavelength: f64,
    #[arg(long, value_enum, default_value_t = AxisArg::X)]
    pub axis: AxisArg,
    #[arg(long, default_value_t = 400)]
    pub sphere_count: usize,
    #[arg(long, default_value_t = 3.0)]
    pub radius_min: f64,
    #[arg(long, default_value_t = 6.0)]
    pub radius_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training image (GVOX).
    pub ti: PathBuf,
    /// Final checkpoint; also rewritten every --checkpoint-every steps.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
    /// Total generator steps (including steps done before a resume).
    #[arg(long = "steps", default_value_t = 1000)]
    pub total_gen_steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub critic_iters_per_gen: u64,
    #[arg(long, default_value_t = 10.0)]
    pub gp_weight: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.9)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 64)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 32)]
    pub output_size: usize,
    /// Defaults to `indicator` for binary training images and `gray` otherwise.
    #[arg(long, value_enum)]
    pub output_mode: Option<OutputModeArg>,
    #[arg(long, default_value_t = 0.2)]
    pub critic_slope: f64,
    /// Spacing of patch origins.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub patch_stride: u64,
    #[arg(long)]
    pub max_patches: Option<usize>,
    /// CSV training log; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    #[arg(short = 'n', long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Sample `i` uses latent seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; files are named `sample_<i>.gvox`.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(skip)]
#[command(group(ArgGroup::new("geometry").required(true).multiple(false).args(["mask", "well_center", "well_column", "planes"])))]
pub struct ProblemArgs {
    /// Conditioning data (GVOX), read at the mask voxels.
    #[arg(long)]
    pub data: PathBuf,
    /// Binary GVOX mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Vertical well through the centre of the domain.
    #[arg(long)]
    pub well_center: bool,
    /// Vertical well at column `IX,IY`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub well_column: Option<Vec<usize>>,
    /// Centre planes orthogonal to the listed axes, e.g. `xyz`.
    #[arg(long)]
    pub planes: Option<String>,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.01)]
    pub perceptual_weight: f64,
    #[arg(long, value_enum, default_value_t = FormArg::CriticScore)]
    pub perceptual_form: FormArg,
    #[arg(long, default_value_t = 1e-3)]
    pub content_tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ConditionArgs {
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start the first attempt from the latent vector `sample` drew for this seed.
    #[arg(long)]
    pub initial_z_seed: Option<u64>,
    /// Realization (GVOX): thresholded in binary mode, raw otherwise.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
    /// JSON report; defaults to the output path with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EnsembleArgs {
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(short = 'n', long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    /// Output directory.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportSliceArgs {
    pub volume: PathBuf,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    #[arg(long)]
    pub index: usize,
    #[arg(short = 'o', long)]
    pub output: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout/stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn flags<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample(a),
        Command::Condition(a) => condition_cmd(a),
        Command::Ensemble(a) => ensemble_cmd(a),
        Command::ExportSlice(a) => export_slice(a),
    }
}

fn make_synthetic(a: MakeSyntheticArgs) -> CmdResult {
    let mut m = RunManifest::new("make-synthetic", flags(&a));
    m.seeds.insert("seed".into(), a.seed);
    let dims = [a.dims; 3];
    let v = match a.kind {
        SyntheticKind::Channels => make_channels(&ChannelSpec {
            dims,
            channel_count: a.channel_count,
            channel_radius: a.channel_radius,
            amplitude: a.amplitude,
            wavelength: a.wavelength,
            axis: a.axis.into(),
            seed: a.seed,
        }),
        SyntheticKind::Granular => make_granular(&GranularSpec {
            dims,
            sphere_count: a.sphere_count,
            radius_min: a.radius_min,
            radius_max: a.radius_max,
            smoothing: a.smoothing,
            seed: a.seed,
        }),
    }
    .map_err(|e| usage(e.to_string()))?;
    gvox::write(&a.output, &v)?;
    m.output(&a.output)?;
    m.append(&parent_dir(&a.output))?;
    println!(
        "wrote {} ({}^3, {:?}, mean {:.4})",
        a.output.display(),
        a.dims,
        v.dtype(),
        v.to_f32().iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let mut m = RunManifest::new("train", flags(&a));
    m.seeds.insert("seed".into(), a.seed);
    let ti = gvox::read(&a.ti)?;
    m.input(&a.ti)?;
    let output_mode = match a.output_mode {
        Some(OutputModeArg::Indicator) => OutputMode::Indicator,
        Some(OutputModeArg::Gray) => OutputMode::Gray,
        None if ti.is_binary() => OutputMode::Indicator,
        None => OutputMode::Gray,
    };
    let spec = ArchSpec {
        latent_dim: a.latent_dim,
        base_channels: a.base_channels,
        output_size: a.output_size,
        output_mode,
        critic_slope: a.critic_slope,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = TrainingConfig {
        batch_size: a.batch_size as usize,
        critic_iters_per_gen: a.critic_iters_per_gen as usize,
        gp_weight: a.gp_weight,
        learning_rate: a.learning_rate,
        adam_beta1: a.adam_beta1,
        adam_beta2: a.adam_beta2,
        total_gen_steps: a.total_gen_steps,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let patches = extract_patches(
        &ti,
        spec.output_size,
        a.patch_stride as usize,
        a.seed,
        a.max_patches,
    )
    .map_err(|e| usage(e.to_string()))?;
    let start = match &a.resume {
        Some(p) => {
            let ckpt = gckp::read(p)?;
            m.input(p)?;
            let (state, seed) =
                checkpoint::to_state(&ckpt, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2)?;
            if seed != cfg.seed {
                return Err(usage(format!(
                    "--seed {} differs from the checkpoint's seed {seed}",
                    cfg.seed
                )));
            }
            if state.generator.spec != spec {
                return Err(usage("architecture flags differ from the checkpoint"));
            }
            train::Start::Resume(Box::new(state))
        }
        None => train::Start::Fresh(spec),
    };
    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| a.output.with_extension("csv"));
    let out = train::run(&patches, start, &cfg, &a.output, Some(&log_path))?;
    m.output(&a.output)?;
    m.logs.push(log_path.display().to_string());
    m.append(&parent_dir(&a.output))?;
    if let Some(last) = out.log.records.last() {
        println!(
            "step {}: critic {:.5}, generator {:.5}, penalty {:.5}",
            last.step + 1,
            last.critic_loss,
            last.gen_loss,
            last.gp
        );
    }
    println!(
        "wrote {} after {} steps ({} patches)",
        a.output.display(),
        out.state.step,
        patches.len()
    );
    Ok(())
}

fn sample(a: SampleArgs) -> CmdResult {
    let mut m = RunManifest::new("sample", flags(&a));
    m.seeds.insert("seed".into(), a.seed);
    let ckpt = gckp::read(&a.checkpoint)?;
    m.input(&a.checkpoint)?;
    let (g, _) = checkpoint::load_models(&ckpt)?;
    std::fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    let s = g.spec.output_size;
    for i in 0..a.n {
        let z = arch::sample_latent::<f32>(1, g.spec.latent_dim, a.seed + i)?;
        let out = arch::generate(&g, &z)?;
        let v = Volume::gray([s; 3], out.data)?;
        let path = a.output.join(format!("sample_{i:03}.gvox"));
        let clamped = gvox::write(&path, &v)?;
        if clamped > 0 {
            eprintln!("{}: clamped {clamped} voxels to [0, 1]", path.display());
        }
        m.output(&path)?;
        println!("wrote {}", path.display());
    }
    m.append(&a.output)?;
    Ok(())
}

fn parse_axes(s: &str) -> std::result::Result<Vec<Axis>, Failure> {
    let axes = s
        .chars()
        .map(|c| match c.to_ascii_lowercase() {
            'x' => Ok(Axis::X),
            'y' => Ok(Axis::Y),
            'z' => Ok(Axis::Z),
            _ => Err(usage(format!(
                "--planes: unknown axis {c:?} (use letters from xyz)"
            ))),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if axes.is_empty() {
        return Err(usage("--planes needs at least one axis"));
    }
    Ok(axes)
}

/// Builds the conditioning problem; records the data (and mask) as inputs.
fn build_problem(
    p: &ProblemArgs,
    output_size: usize,
    m: &mut RunManifest,
) -> std::result::Result<ConditioningProblem, Failure> {
    let data = gvox::read(&p.data)?;
    m.input(&p.data)?;
    let dims = [output_size; 3];
    if data.dims() != dims {
        return Err(usage(format!(
            "--data dims {:?} differ from the generator output {output_size}^3",
            data.dims()
        )));
    }
    let mask = if let Some(path) = &p.mask {
        let v = gvox::read(path)?;
        m.input(path)?;
        Mask::from_volume(&v).map_err(|e| usage(format!("--mask: {e}")))?
    } else if p.well_center {
        make_well_mask(dims, None)?
    } else if let Some(c) = &p.well_column {
        make_well_mask(dims, Some((c[0], c[1])))
            .map_err(|e| usage(format!("--well-column: {e}")))?
    } else if let Some(axes) = &p.planes {
        make_plane_mask(dims, &parse_axes(axes)?)?.0
    } else {
        return Err(usage(
            "one of --mask, --well-center, --well-column or --planes is required",
        ));
    };
    let mode = match p.mode {
        ModeArg::Binary => ConditionMode::Binary,
        ModeArg::Continuous => ConditionMode::Continuous,
    };
    let problem = ConditioningProblem {
        perceptual_weight: p.perceptual_weight,
        perceptual_form: match p.perceptual_form {
            FormArg::CriticScore => PerceptualForm::CriticScore,
            FormArg::LogSigmoid => PerceptualForm::LogSigmoid,
        },
        content_tol: p.content_tol,
        max_iters: p.max_iters,
        lr: p.lr,
        momentum: p.momentum,
        restarts: p.restarts,
        ..ConditioningProblem::new(mask.apply(&data)?, mask, mode)
    };
    problem.validate().map_err(|e| usage(e.to_string()))?;
    Ok(problem)
}

fn condition_cmd(a: ConditionArgs) -> CmdResult {
    let mut m = RunManifest::new("condition", flags(&a));
    m.seeds.insert("seed".into(), a.seed);
    let ckpt = gckp::read(&a.checkpoint)?;
    m.input(&a.checkpoint)?;
    let (g, d) = checkpoint::load_models(&ckpt)?;
    let mut problem = build_problem(&a.problem, g.spec.output_size, &mut m)?;
    problem.seed = a.seed;
    if let Some(s) = a.initial_z_seed {
        m.seeds.insert("initial_z_seed".into(), s);
        let z = arch::sample_latent::<f32>(1, g.spec.latent_dim, s)?;
        problem.initial_z = Some(z.data.iter().map(|&v| v as f64).collect());
    }
    let r = condition(&problem, &g, &d)?;
    let vol = r.thresholded.as_ref().unwrap_or(&r.volume);
    gvox::write(&a.output, vol)?;
    m.output(&a.output)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.output.with_extension("json"));
    let report = serde_json::json!({
        "seed": r.seed,
        "converged": r.converged,
        "iterations": r.iterations,
        "attempts": r.attempts,
        "content_loss": r.content_loss,
        "perceptual_loss": r.perceptual_loss,
        "accuracy": r.accuracy,
        "mask_voxels": problem.mask.count(),
    });
    std::fs::write(&report_path, format!("{report:#}\n"))
        .map_err(|e| Error::io(&report_path, e))?;
    m.output(&report_path)?;
    m.append(&parent_dir(&a.output))?;
    println!(
        "converged: {}, iterations: {}, attempts: {}, content loss: {:.6e}, accuracy: {}",
        r.converged,
        r.iterations,
        r.attempts,
        r.content_loss,
        r.accuracy
            .map(|v| v.to_string())
            .unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn ensemble_cmd(a: EnsembleArgs) -> CmdResult {
    let mut m = RunManifest::new("ensemble", flags(&a));
    m.seeds.insert("seed_base".into(), a.seed_base);
    let ckpt = gckp::read(&a.checkpoint)?;
    m.input(&a.checkpoint)?;
    let (g, d) = checkpoint::load_models(&ckpt)?;
    let problem = build_problem(&a.problem, g.spec.output_size, &mut m)?;
    let (_, stats) = ensemble::run_ensemble(
        &problem,
        &g,
        &d,
        a.n as usize,
        a.seed_base,
        a.workers as usize,
    )?;
    for path in ensemble::write_outputs(&a.output, &stats, &problem.mask)? {
        m.output(&path)?;
    }
    m.append(&a.output)?;
    let converged = stats.members.iter().filter(|r| r.converged).count();
    println!(
        "{converged}/{} realizations converged; outputs in {}",
        a.n,
        a.output.display()
    );
    Ok(())
}

fn export_slice(a: ExportSliceArgs) -> CmdResult {
    let mut m = RunManifest::new("export-slice", flags(&a));
    let v = gvox::read(&a.volume)?;
    m.input(&a.volume)?;
    let bytes = pgm::encode_slice(&v, a.axis.into(), a.index)
        .map_err(|e| usage(format!("--index: {e}")))?;
    std::fs::write(&a.output, bytes).map_err(|e| Error::io(&a.output, e))?;
    m.output(&a.output)?;
    m.append(&parent_dir(&a.output))?;
    println!("wrote {}", a.output.display());
    Ok(())
}
