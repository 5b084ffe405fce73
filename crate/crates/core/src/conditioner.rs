//! Conditioning by latent-vector search.
//!
//! A trained generator is held fixed while `z` is moved by momentum gradient
//! descent on `content + lambda * perceptual`. The content term only sees the
//! voxels selected by a [`Mask`]; the perceptual term is the critic's verdict on
//! the whole sample.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{self, Bound, CriticParams, GeneratorParams, NormMode};
use crate::error::{arg_err, Result};
use crate::optim::SgdMomentum;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};
use crate::volume::{Axis, Mask, Volume};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionMode {
    /// Indicator data; masked cross-entropy drives the search, unit accuracy stops it.
    Binary,
    /// Gray data; masked squared error drives and stops the search.
    Continuous,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PerceptualForm {
    /// `-mean(D(G(z)))`, well defined for an unbounded critic.
    #[default]
    CriticScore,
    /// `mean(log(1 - sigmoid(D(G(z)))))`.
    LogSigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningProblem {
    pub y: Volume,
    pub mask: Mask,
    pub mode: ConditionMode,
    pub perceptual_weight: f64,
    pub perceptual_form: PerceptualForm,
    pub content_tol: f64,
    pub max_iters: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Fresh starting points tried after the first attempt fails.
    pub restarts: usize,
    pub seed: u64,
    /// Starting point of the first attempt instead of a random draw.
    pub initial_z: Option<Vec<f64>>,
}

impl ConditioningProblem {
    /// A problem with the default search settings.
    pub fn new(y: Volume, mask: Mask, mode: ConditionMode) -> Self {
        Self {
            y,
            mask,
            mode,
            perceptual_weight: 0.01,
            perceptual_form: PerceptualForm::CriticScore,
            content_tol: 1e-3,
            max_iters: 5000,
            lr: 0.05,
            momentum: 0.9,
            restarts: 5,
            seed: 0,
            initial_z: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.dims() != self.mask.dims() {
            return Err(arg_err(
                "ConditioningProblem",
                format!(
                    "data dims {:?} differ from mask dims {:?}",
                    self.y.dims(),
                    self.mask.dims()
                ),
            ));
        }
        if !(self.perceptual_weight >= 0.0) {
            return Err(arg_err(
                "ConditioningProblem",
                "perceptual_weight must be >= 0",
            ));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.content_tol >= 0.0) {
            return Err(arg_err(
                "ConditioningProblem",
                "lr must be positive, momentum in [0, 1), content_tol >= 0",
            ));
        }
        if self.mode == ConditionMode::Binary {
            check_binary_at_mask("ConditioningProblem", &self.y, &self.mask)?;
        }
        Ok(())
    }
}

fn check_binary_at_mask(op: &'static str, y: &Volume, mask: &Mask) -> Result<()> {
    match mask.indices().find(|&i| {
        let v = y.at(i);
        v != 0.0 && v != 1.0
    }) {
        Some(i) => Err(arg_err(
            op,
            format!("value {} at masked voxel {i} is not 0 or 1", y.at(i)),
        )),
        None => Ok(()),
    }
}

/// Outcome of [`condition`]; fields describe the attempt that was kept.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedRealization {
    pub seed: u64,
    pub z: Vec<f64>,
    /// Raw generator output.
    pub volume: Volume,
    /// `volume` thresholded at 0.5 (binary mode only).
    pub thresholded: Option<Volume>,
    pub content_loss: f64,
    pub perceptual_loss: f64,
    /// Indicator accuracy at the mask (binary mode only).
    pub accuracy: Option<f64>,
    /// Updates of `z` made in the kept attempt.
    pub iterations: usize,
    /// Attempts started, including the kept one.
    pub attempts: usize,
    pub converged: bool,
}

fn masked_constants<T: Scalar>(
    graph: &mut Graph<T>,
    op: &'static str,
    gen_out: Tensor,
    y: &Volume,
    mask: &Mask,
) -> Result<(Tensor, Tensor, Tensor, f64)> {
    let count = mask.count();
    if count == 0 {
        return Err(arg_err(op, "mask selects no voxels"));
    }
    if y.dims() != mask.dims() || graph.numel(gen_out) != mask.data().len() {
        return Err(arg_err(
            op,
            format!(
                "generator output ({} voxels), data {:?} and mask {:?} must agree",
                graph.numel(gen_out),
                y.dims(),
                mask.dims()
            ),
        ));
    }
    let shape = graph.shape(gen_out).to_vec();
    let m: Vec<T> = mask
        .data()
        .iter()
        .map(|&b| T::from_f64_lossy(b as f64))
        .collect();
    let ym: Vec<T> = mask
        .data()
        .iter()
        .enumerate()
        .map(|(i, &b)| T::from_f64_lossy(if b == 1 { y.at(i) as f64 } else { 0.0 }))
        .collect();
    let not_ym: Vec<T> = mask
        .data()
        .iter()
        .enumerate()
        .map(|(i, &b)| T::from_f64_lossy(if b == 1 { 1.0 - y.at(i) as f64 } else { 0.0 }))
        .collect();
    Ok((
        graph.constant(m, &shape)?,
        graph.constant(ym, &shape)?,
        graph.constant(not_ym, &shape)?,
        count as f64,
    ))
}

/// Mean of `(G(z) - y)^2` over the masked voxels.
pub fn content_loss_mse<T: Scalar>(
    graph: &mut Graph<T>,
    gen_out: Tensor,
    y: &Volume,
    mask: &Mask,
) -> Result<Tensor> {
    let (m, ym, _, count) = masked_constants(graph, "content_loss_mse", gen_out, y, mask)?;
    let gm = graph.mul(gen_out, m)?;
    let diff = graph.sub(gm, ym)?;
    let sq = graph.square(diff);
    let total = graph.sum(sq)?;
    Ok(graph.affine_scale(total, 1.0 / count))
}

/// Mean binary cross-entropy over the masked voxels, with the prediction clamped
/// to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn content_loss_bce<T: Scalar>(
    graph: &mut Graph<T>,
    gen_out: Tensor,
    y: &Volume,
    mask: &Mask,
) -> Result<Tensor> {
    check_binary_at_mask("content_loss_bce", y, mask)?;
    let (_, ym, not_ym, count) = masked_constants(graph, "content_loss_bce", gen_out, y, mask)?;
    let p = graph.clamp(gen_out, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = graph.log(p)?;
    let q = graph.affine(p, -1.0, 1.0);
    let log_q = graph.log(q)?;
    let a = graph.mul(ym, log_p)?;
    let b = graph.mul(not_ym, log_q)?;
    let ab = graph.add(a, b)?;
    let total = graph.sum(ab)?;
    Ok(graph.affine_scale(total, -1.0 / count))
}

/// Critic-based realism term; lower means "more real".
pub fn perceptual_loss<T: Scalar>(
    graph: &mut Graph<T>,
    critic: &CriticParams<T>,
    bound: &Bound,
    gen_out: Tensor,
    form: PerceptualForm,
) -> Result<Tensor> {
    let scores = critic.forward(graph, bound, gen_out)?;
    perceptual_from_scores(graph, scores, form)
}

/// [`perceptual_loss`] on precomputed critic scores.
pub fn perceptual_from_scores<T: Scalar>(
    graph: &mut Graph<T>,
    scores: Tensor,
    form: PerceptualForm,
) -> Result<Tensor> {
    match form {
        PerceptualForm::CriticScore => {
            let m = graph.mean(scores)?;
            Ok(graph.neg(m))
        }
        PerceptualForm::LogSigmoid => {
            // 1 - sigmoid(s) == sigmoid(-s), which stays accurate for large s
            let neg = graph.neg(scores);
            let q = graph.sigmoid(neg);
            let q = graph.clamp(q, 1e-30, 1.0);
            let l = graph.log(q)?;
            graph.mean(l)
        }
    }
}

/// Handles of one evaluation of the conditioning objective.
#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub gen_out: Tensor,
    pub content: Tensor,
    pub perceptual: Tensor,
    pub total: Tensor,
}

/// `content + lambda * perceptual` at latent `z` (`[1, latent_dim]`), with the
/// generator in evaluation mode.
pub fn total_loss<T: Scalar>(
    graph: &mut Graph<T>,
    problem: &ConditioningProblem,
    z: Tensor,
    generator: (&GeneratorParams<T>, &Bound),
    critic: (&CriticParams<T>, &Bound),
) -> Result<Losses> {
    let (gen_out, _) = generator.0.forward(graph, generator.1, z, NormMode::Eval)?;
    let content = match problem.mode {
        ConditionMode::Binary => content_loss_bce(graph, gen_out, &problem.y, &problem.mask)?,
        ConditionMode::Continuous => content_loss_mse(graph, gen_out, &problem.y, &problem.mask)?,
    };
    let perceptual = perceptual_loss(graph, critic.0, critic.1, gen_out, problem.perceptual_form)?;
    let total = if problem.perceptual_weight == 0.0 {
        content
    } else {
        let weighted = graph.affine_scale(perceptual, problem.perceptual_weight);
        graph.add(content, weighted)?
    };
    Ok(Losses {
        gen_out,
        content,
        perceptual,
        total,
    })
}

/// `(TP + TN) / (P + N)` over the masked voxels, comparing values as indicators.
pub fn accuracy(thresholded: &Volume, y: &Volume, mask: &Mask) -> Result<f64> {
    if mask.count() == 0 {
        return Err(arg_err("accuracy", "mask selects no voxels"));
    }
    if thresholded.dims() != mask.dims() || y.dims() != mask.dims() {
        return Err(arg_err("accuracy", "volume and mask dims differ"));
    }
    check_binary_at_mask("accuracy", thresholded, mask)?;
    check_binary_at_mask("accuracy", y, mask)?;
    let correct = mask
        .indices()
        .filter(|&i| thresholded.at(i) == y.at(i))
        .count();
    Ok(correct as f64 / mask.count() as f64)
}

/// Union of one-voxel-thick planes through the centre, one orthogonal to each
/// listed axis. Also returns `(axis, index)` of every plane.
pub fn make_plane_mask(dims: [usize; 3], axes: &[Axis]) -> Result<(Mask, Vec<(Axis, usize)>)> {
    if axes.is_empty() {
        return Err(arg_err("make_plane_mask", "at least one axis is required"));
    }
    if dims.contains(&0) {
        return Err(arg_err("make_plane_mask", format!("invalid dims {dims:?}")));
    }
    let mut planes: Vec<(Axis, usize)> = Vec::new();
    for &a in axes {
        if !planes.iter().any(|&(b, _)| b == a) {
            planes.push((a, dims[a.index()] / 2));
        }
    }
    let mut data = vec![0u8; dims.iter().product()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                if planes.iter().any(|&(a, i)| p[a.index()] == i) {
                    data[x + dims[0] * (y + dims[1] * z)] = 1;
                }
            }
        }
    }
    Ok((Mask::new(dims, data)?, planes))
}

/// A vertical (z-direction) column of voxels at `column = (ix, iy)`, or through
/// the centre when `None`.
pub fn make_well_mask(dims: [usize; 3], column: Option<(usize, usize)>) -> Result<Mask> {
    if dims.contains(&0) {
        return Err(arg_err("make_well_mask", format!("invalid dims {dims:?}")));
    }
    let (ix, iy) = column.unwrap_or((dims[0] / 2, dims[1] / 2));
    if ix >= dims[0] || iy >= dims[1] {
        return Err(arg_err(
            "make_well_mask",
            format!("column ({ix}, {iy}) outside dims {dims:?}"),
        ));
    }
    let mut data = vec![0u8; dims.iter().product()];
    for z in 0..dims[2] {
        data[ix + dims[0] * (iy + dims[1] * z)] = 1;
    }
    Mask::new(dims, data)
}

struct Attempt {
    z: Vec<f64>,
    out: Vec<f64>,
    content: f64,
    perceptual: f64,
    accuracy: Option<f64>,
    iterations: usize,
    converged: bool,
}

impl Attempt {
    fn better_than(&self, other: &Attempt) -> bool {
        match (self.converged, other.converged) {
            (true, false) => true,
            (false, true) => false,
            _ => self.content < other.content,
        }
    }
}

fn indicator(values: &[f64], dims: [usize; 3]) -> Result<Volume> {
    Volume::binary(dims, values.iter().map(|&v| u8::from(v >= 0.5)).collect())
}

fn run_attempt<T: Scalar>(
    problem: &ConditioningProblem,
    g: &GeneratorParams<T>,
    d: &CriticParams<T>,
    z0: Vec<T>,
) -> Result<Option<Attempt>> {
    let dims = problem.mask.dims();
    let dim = z0.len();
    let mut z = z0;
    let mut opt = SgdMomentum::<T>::new(problem.lr, problem.momentum, dim);
    let mut iterations = 0;
    loop {
        let mut graph = Graph::new();
        let gb = g.params.bind(&mut graph, false)?;
        let db = d.params.bind(&mut graph, false)?;
        let zt = graph.variable(z.clone(), &[1, dim])?;
        let losses = total_loss(&mut graph, problem, zt, (g, &gb), (d, &db))?;
        let content = graph.item(losses.content).as_f64();
        let perceptual = graph.item(losses.perceptual).as_f64();
        let total = graph.item(losses.total).as_f64();
        if !content.is_finite() || !perceptual.is_finite() || !total.is_finite() {
            return Ok(None);
        }
        let out: Vec<f64> = graph
            .value(losses.gen_out)
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let (acc, converged) = match problem.mode {
            ConditionMode::Binary => {
                let a = accuracy(&indicator(&out, dims)?, &problem.y, &problem.mask)?;
                (Some(a), a == 1.0)
            }
            ConditionMode::Continuous => (None, content < problem.content_tol),
        };
        if converged || iterations == problem.max_iters {
            return Ok(Some(Attempt {
                z: z.iter().map(|v| v.as_f64()).collect(),
                out,
                content,
                perceptual,
                accuracy: acc,
                iterations,
                converged,
            }));
        }
        graph.backward(losses.total)?;
        let grad = graph
            .grad(zt)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); dim]);
        if grad.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        opt.step(&mut z, &grad);
        iterations += 1;
    }
}

/// Searches for a latent vector whose sample honours the conditioning data.
///
/// Attempt `k` starts from `problem.initial_z` (first attempt only, when set) or
/// from a standard normal draw on stream `k` of the problem's seed. The first
/// converged attempt is returned; if none converges, the one with the lowest
/// content loss is returned with `converged == false`.
pub fn condition<T: Scalar>(
    problem: &ConditioningProblem,
    g: &GeneratorParams<T>,
    d: &CriticParams<T>,
) -> Result<ConditionedRealization> {
    problem.validate()?;
    let s = g.spec.output_size;
    if problem.mask.dims() != [s, s, s] {
        return Err(arg_err(
            "condition",
            format!(
                "mask dims {:?} differ from generator output {s}^3",
                problem.mask.dims()
            ),
        ));
    }
    let dim = g.spec.latent_dim;
    if let Some(z) = &problem.initial_z {
        if z.len() != dim {
            return Err(arg_err(
                "condition",
                format!("initial_z has {} entries, latent_dim is {dim}", z.len()),
            ));
        }
    }
    let mut best: Option<Attempt> = None;
    let mut attempts = 0;
    for k in 0..=problem.restarts {
        attempts += 1;
        let z0: Vec<T> = match (&problem.initial_z, k) {
            (Some(z), 0) => z.iter().map(|&v| T::from_f64_lossy(v)).collect(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
                rng.set_stream(k as u64);
                arch::latent_from_rng::<T>(&mut rng, 1, dim).data
            }
        };
        if let Some(a) = run_attempt(problem, g, d, z0)? {
            let done = a.converged;
            if best.as_ref().is_none_or(|b| a.better_than(b)) {
                best = Some(a);
            }
            if done {
                break;
            }
        }
    }
    let Some(best) = best else {
        return Err(crate::Error::NonFinite(format!(
            "conditioning with seed {} diverged in all {attempts} attempts",
            problem.seed
        )));
    };
    let dims = problem.mask.dims();
    let volume = Volume::gray(
        dims,
        best.out.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
    )?;
    let thresholded = match problem.mode {
        ConditionMode::Binary => Some(indicator(&best.out, dims)?),
        ConditionMode::Continuous => None,
    };
    Ok(ConditionedRealization {
        seed: problem.seed,
        z: best.z,
        volume,
        thresholded,
        content_loss: best.content,
        perceptual_loss: best.perceptual,
        accuracy: best.accuracy,
        iterations: best.iterations,
        attempts,
        converged: best.converged,
    })
}
