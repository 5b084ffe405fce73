//! Wasserstein GAN training with a one-sided gradient penalty.
//!
//! Each generator update is preceded by `critic_iters_per_gen` critic updates.
//! All randomness of generator step `k` (batch indices, latent draws and the
//! interpolation weights) comes from one ChaCha stream keyed by `(seed, k)`, so a
//! run resumed from a checkpoint replays exactly the same draws.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{
    self, ArchSpec, BatchStats, Bound, CriticParams, GeneratorParams, ModelParams, NormMode,
};
use crate::error::{arg_err, Error, Result};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NdArray, Tensor};
use crate::volume::Volume;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub critic_iters_per_gen: usize,
    pub gp_weight: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub total_gen_steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            critic_iters_per_gen: 5,
            gp_weight: 10.0,
            learning_rate: 1e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            total_gen_steps: 1000,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.critic_iters_per_gen == 0 {
            return Err(arg_err(
                "TrainingConfig",
                "batch_size and critic_iters_per_gen must be >= 1",
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.gp_weight >= 0.0) {
            return Err(arg_err(
                "TrainingConfig",
                "learning_rate must be positive, gp_weight non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(arg_err("TrainingConfig", "Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Losses of one generator step; critic values are averaged over the critic
/// iterations that preceded it.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub gp: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
}

/// Graph handles of the critic objective.
#[derive(Clone, Copy, Debug)]
pub struct CriticLoss {
    pub total: Tensor,
    pub fake_mean: Tensor,
    pub real_mean: Tensor,
    /// Unweighted `mean(max(0, |grad D(x_hat)| - 1)^2)`.
    pub penalty: Tensor,
}

/// One-sided gradient penalty of `critic` at `x_hat` (a leaf requiring grad).
pub fn gradient_penalty<T: Scalar>(
    graph: &mut Graph<T>,
    critic: &CriticParams<T>,
    bound: &Bound,
    x_hat: Tensor,
) -> Result<Tensor> {
    gradient_penalty_with(graph, x_hat, |g, x| critic.forward(g, bound, x))
}

/// `mean(max(0, |grad_x sum(score(x))| - 1)^2)` with per-sample gradient norms,
/// for any per-sample scoring function.
pub fn gradient_penalty_with<T: Scalar, F>(
    graph: &mut Graph<T>,
    x_hat: Tensor,
    score: F,
) -> Result<Tensor>
where
    F: FnOnce(&mut Graph<T>, Tensor) -> Result<Tensor>,
{
    let scores = score(graph, x_hat)?;
    let total = graph.sum(scores)?;
    let grad = graph.grad_of(total, x_hat, true)?;
    let norm = graph.l2_norm_per_sample(grad)?;
    let excess = graph.affine(norm, 1.0, -1.0);
    let hinge = graph.max_with_zero(excess);
    let sq = graph.square(hinge);
    graph.mean(sq)
}

/// `mean(D(G(z))) - mean(D(x_real)) + gp_weight * penalty` with
/// `x_hat = eps * x_real + (1 - eps) * G(z)`, one `eps` per sample.
///
/// The generator runs on batch statistics with constant parameters; its
/// statistics are returned for the running averages.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss<T: Scalar>(
    graph: &mut Graph<T>,
    critic: &CriticParams<T>,
    critic_bound: &Bound,
    generator: &GeneratorParams<T>,
    real: &NdArray<T>,
    z: &NdArray<T>,
    eps: &[T],
    gp_weight: f64,
) -> Result<(CriticLoss, Vec<BatchStats<T>>)> {
    let n = real.shape[0];
    if z.shape[0] != n || eps.len() != n {
        return Err(arg_err(
            "critic_loss",
            format!(
                "batch sizes differ: real {n}, latent {}, eps {}",
                z.shape[0],
                eps.len()
            ),
        ));
    }
    let g_bound = generator.params.bind(graph, false)?;
    let zt = graph.leaf_from(z, false)?;
    let (fake, stats) = generator.forward(graph, &g_bound, zt, NormMode::Train)?;
    let fake_v = graph.value(fake).to_vec();
    let fake = graph.constant(fake_v.clone(), &real.shape)?;
    let real_t = graph.leaf_from(real, false)?;

    let per = real.len() / n;
    let mut mix = Vec::with_capacity(real.len());
    for (s, &e) in eps.iter().enumerate() {
        for i in s * per..(s + 1) * per {
            mix.push(e * real.data[i] + (T::one() - e) * fake_v[i]);
        }
    }
    let x_hat = graph.variable(mix, &real.shape)?;

    let d_fake = critic.forward(graph, critic_bound, fake)?;
    let d_real = critic.forward(graph, critic_bound, real_t)?;
    let fake_mean = graph.mean(d_fake)?;
    let real_mean = graph.mean(d_real)?;
    let w = graph.sub(fake_mean, real_mean)?;
    let penalty = gradient_penalty(graph, critic, critic_bound, x_hat)?;
    let weighted = graph.affine_scale(penalty, gp_weight);
    let total = graph.add(w, weighted)?;
    Ok((
        CriticLoss {
            total,
            fake_mean,
            real_mean,
            penalty,
        },
        stats,
    ))
}

/// `-mean(D(G(z)))` with the generator on batch statistics.
pub fn generator_loss<T: Scalar>(
    graph: &mut Graph<T>,
    critic: &CriticParams<T>,
    critic_bound: &Bound,
    generator: &GeneratorParams<T>,
    generator_bound: &Bound,
    z: &NdArray<T>,
) -> Result<(Tensor, Vec<BatchStats<T>>)> {
    let zt = graph.leaf_from(z, false)?;
    let (fake, stats) = generator.forward(graph, generator_bound, zt, NormMode::Train)?;
    let scores = critic.forward(graph, critic_bound, fake)?;
    let m = graph.mean(scores)?;
    Ok((graph.neg(m), stats))
}

/// Axis-aligned cubic patches of edge `size` on a `stride` lattice, randomly
/// subsampled (order preserved) to at most `max_count` when given.
pub fn extract_patches(
    v: &Volume,
    size: usize,
    stride: usize,
    seed: u64,
    max_count: Option<usize>,
) -> Result<Vec<Volume>> {
    let dims = v.dims();
    if size == 0 || stride == 0 {
        return Err(arg_err(
            "extract_patches",
            "size and stride must be positive",
        ));
    }
    if dims.iter().any(|&d| d < size) {
        return Err(arg_err(
            "extract_patches",
            format!("patch size {size} exceeds volume dims {dims:?}"),
        ));
    }
    let starts = |d: usize| (0..=d - size).step_by(stride).collect::<Vec<_>>();
    let (xs, ys, zs) = (starts(dims[0]), starts(dims[1]), starts(dims[2]));
    let mut origins = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                origins.push([x, y, z]);
            }
        }
    }
    if let Some(max) = max_count {
        if origins.len() > max {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..origins.len()).collect();
            for i in 0..max {
                let j = rng.random_range(i..order.len());
                order.swap(i, j);
            }
            let mut keep = order[..max].to_vec();
            keep.sort_unstable();
            origins = keep.into_iter().map(|i| origins[i]).collect();
        }
    }
    origins
        .into_iter()
        .map(|o| v.sub_volume(o, [size; 3]))
        .collect()
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub generator: GeneratorParams<f32>,
    pub critic: CriticParams<f32>,
    pub gen_opt: Adam<f32>,
    pub critic_opt: Adam<f32>,
    /// Completed generator steps.
    pub step: u64,
}

/// Callbacks invoked by [`Trainer::run`].
pub trait TrainHooks {
    /// Seconds since the run started; `0` where no clock is available.
    fn elapsed_seconds(&mut self) -> f64 {
        0.0
    }

    /// Called after each generator step, e.g. to write periodic checkpoints.
    fn after_step(&mut self, _trainer: &Trainer, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

pub struct Trainer {
    cfg: TrainingConfig,
    patches: Vec<Vec<f32>>,
    state: TrainerState,
}

fn trainable_sizes(p: &ModelParams<f32>) -> Vec<usize> {
    p.tensors
        .iter()
        .filter(|t| !ModelParams::<f32>::is_buffer(&t.name))
        .map(|t| t.array.len())
        .collect()
}

fn step_params(
    opt: &mut Adam<f32>,
    params: &mut ModelParams<f32>,
    bound: &Bound,
    graph: &Graph<f32>,
) {
    let mut grads: Vec<Vec<f32>> = Vec::new();
    let mut bufs: Vec<&mut [f32]> = Vec::new();
    for (t, &h) in params.tensors.iter_mut().zip(&bound.handles) {
        if ModelParams::<f32>::is_buffer(&t.name) {
            continue;
        }
        grads.push(
            graph
                .grad(h)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.array.len()]),
        );
        bufs.push(&mut t.array.data);
    }
    let grefs: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
    opt.step(&mut bufs, &grefs);
}

fn check_finite(step: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("step {step}: {what} = {v}")))
    }
}

// NaN reaching the penalty's square root is divergence, not a caller bug.
fn non_finite_domain(step: u64, e: Error) -> Error {
    match e {
        Error::Domain { op, value, .. } if !value.is_finite() => {
            Error::NonFinite(format!("step {step}: {op} received {value}"))
        }
        other => other,
    }
}

impl Trainer {
    /// Fresh run: parameters initialised from `cfg.seed`.
    pub fn new(dataset: &[Volume], spec: &ArchSpec, cfg: &TrainingConfig) -> Result<Self> {
        let (generator, critic) = arch::init::<f32>(spec, cfg.seed)?;
        let state = TrainerState {
            gen_opt: Adam::new(
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                &trainable_sizes(&generator.params),
            ),
            critic_opt: Adam::new(
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                &trainable_sizes(&critic.params),
            ),
            generator,
            critic,
            step: 0,
        };
        Self::resume(dataset, cfg, state)
    }

    /// Continues from a saved state.
    pub fn resume(dataset: &[Volume], cfg: &TrainingConfig, state: TrainerState) -> Result<Self> {
        cfg.validate()?;
        let spec = state.generator.spec;
        spec.validate()?;
        if dataset.is_empty() {
            return Err(arg_err("train", "dataset is empty"));
        }
        let s = spec.output_size;
        if let Some(bad) = dataset.iter().find(|v| v.dims() != [s, s, s]) {
            return Err(arg_err(
                "train",
                format!("patch dims {:?} do not match output size {s}", bad.dims()),
            ));
        }
        Ok(Self {
            cfg: cfg.clone(),
            patches: dataset.iter().map(|v| v.to_f32()).collect(),
            state,
        })
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(0x5eed));
        rng.set_stream(step);
        rng
    }

    fn real_batch(&self, rng: &mut ChaCha8Rng) -> NdArray<f32> {
        let n = self.cfg.batch_size;
        let mut data = Vec::with_capacity(n * self.patches[0].len());
        for _ in 0..n {
            let i = rng.random_range(0..self.patches.len());
            data.extend_from_slice(&self.patches[i]);
        }
        NdArray {
            shape: self.state.generator.spec.sample_shape(n).to_vec(),
            data,
        }
    }

    /// One generator update preceded by the critic updates.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.state.step;
        let mut rng = self.step_rng(step);
        let spec = self.state.generator.spec;
        let n = self.cfg.batch_size;
        let (mut critic_sum, mut gp_sum) = (0.0, 0.0);

        for _ in 0..self.cfg.critic_iters_per_gen {
            let real = self.real_batch(&mut rng);
            let z = arch::latent_from_rng::<f32>(&mut rng, n, spec.latent_dim);
            let eps: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
            let mut graph = Graph::new();
            let bound = self.state.critic.params.bind(&mut graph, true)?;
            let (loss, stats) = critic_loss(
                &mut graph,
                &self.state.critic,
                &bound,
                &self.state.generator,
                &real,
                &z,
                &eps,
                self.cfg.gp_weight,
            )
            .map_err(|e| non_finite_domain(step, e))?;
            let value = graph.item(loss.total) as f64;
            check_finite(step, "critic loss", value)?;
            graph.backward(loss.total)?;
            step_params(
                &mut self.state.critic_opt,
                &mut self.state.critic.params,
                &bound,
                &graph,
            );
            if !self.state.critic.params.all_finite() {
                return Err(Error::NonFinite(format!(
                    "step {step}: critic parameters became non-finite"
                )));
            }
            self.state.generator.update_running_stats(&stats);
            critic_sum += value;
            gp_sum += graph.item(loss.penalty) as f64;
        }

        let z = arch::latent_from_rng::<f32>(&mut rng, n, spec.latent_dim);
        let mut graph = Graph::new();
        let g_bound = self.state.generator.params.bind(&mut graph, true)?;
        let d_bound = self.state.critic.params.bind(&mut graph, false)?;
        let (loss, stats) = generator_loss(
            &mut graph,
            &self.state.critic,
            &d_bound,
            &self.state.generator,
            &g_bound,
            &z,
        )?;
        let gen_loss = graph.item(loss) as f64;
        check_finite(step, "generator loss", gen_loss)?;
        graph.backward(loss)?;
        step_params(
            &mut self.state.gen_opt,
            &mut self.state.generator.params,
            &g_bound,
            &graph,
        );
        self.state.generator.update_running_stats(&stats);

        if !self.state.generator.params.all_finite() || !self.state.critic.params.all_finite() {
            return Err(Error::NonFinite(format!(
                "step {step}: parameters became non-finite"
            )));
        }
        self.state.step += 1;
        let k = self.cfg.critic_iters_per_gen as f64;
        Ok(StepRecord {
            step,
            critic_loss: critic_sum / k,
            gen_loss,
            gp: gp_sum / k,
            seconds: 0.0,
        })
    }

    /// Runs until `cfg.total_gen_steps` generator updates have been made in total.
    pub fn run(&mut self, hooks: &mut dyn TrainHooks) -> Result<TrainingLog> {
        let mut log = TrainingLog::default();
        while self.state.step < self.cfg.total_gen_steps {
            let mut rec = self.step()?;
            rec.seconds = hooks.elapsed_seconds();
            hooks.after_step(self, &rec)?;
            log.records.push(rec);
        }
        Ok(log)
    }
}

/// Trains from scratch and returns the final networks and the log.
pub fn train(
    dataset: &[Volume],
    spec: &ArchSpec,
    cfg: &TrainingConfig,
) -> Result<(GeneratorParams<f32>, CriticParams<f32>, TrainingLog)> {
    let mut trainer = Trainer::new(dataset, spec, cfg)?;
    let log = trainer.run(&mut NoHooks)?;
    let state = trainer.into_state();
    Ok((state.generator, state.critic, log))
}
