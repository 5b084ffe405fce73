//! DCGAN-style 3D generator and Wasserstein critic.
//!
//! Generator: the flat latent vector is projected to a `4^3` feature map by a
//! transposed convolution with a 4-voxel kernel, then every upsampling stage
//! doubles each spatial extent (kernel 4, stride 2, padding 1). Hidden stages
//! use batch normalisation and ReLU; the last stage emits one channel through
//! `tanh`, mapped affinely to `[0, 1]`.
//!
//! Critic: mirror image with strided convolutions, biases and leaky ReLU, no
//! normalisation, and a final 4-voxel convolution to one raw score per sample.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NdArray, Tensor};

pub const KERNEL: usize = 4;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMode {
    Indicator,
    Gray,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchSpec {
    pub latent_dim: usize,
    pub base_channels: usize,
    pub output_size: usize,
    pub output_mode: OutputMode,
    pub critic_slope: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            base_channels: 32,
            output_size: 32,
            output_mode: OutputMode::Indicator,
            critic_slope: 0.2,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.output_size.is_power_of_two() || self.output_size < 16 {
            return Err(arg_err(
                "ArchSpec",
                format!(
                    "output_size {} must be a power of two >= 16",
                    self.output_size
                ),
            ));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(arg_err(
                "ArchSpec",
                "latent_dim and base_channels must be positive",
            ));
        }
        if !(self.critic_slope >= 0.0 && self.critic_slope < 1.0) {
            return Err(arg_err("ArchSpec", "critic_slope must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Number of stride-2 stages; the first feature map is `4^3`.
    pub fn stages(&self) -> usize {
        self.output_size.trailing_zeros() as usize - 2
    }

    /// Generator feature widths from the `4^3` map down to the last hidden stage.
    /// The critic uses the same widths in reverse.
    pub fn widths(&self) -> Vec<usize> {
        let n = self.stages();
        (0..n).map(|i| self.base_channels << (n - 1 - i)).collect()
    }

    pub fn sample_shape(&self, n: usize) -> [usize; 5] {
        let s = self.output_size;
        [n, 1, s, s, s]
    }
}

/// One named parameter or buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub array: NdArray<T>,
}

/// Ordered named tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub tensors: Vec<NamedTensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn get(&self, name: &str) -> Option<&NdArray<T>> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.array)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NdArray<T>> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .map(|t| &mut t.array)
    }

    fn index_of(&self, name: &str) -> usize {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Running statistics are carried along but never optimised.
    pub fn is_buffer(name: &str) -> bool {
        name.ends_with(".running_mean") || name.ends_with(".running_var")
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| !Self::is_buffer(&t.name))
            .map(|t| t.array.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.array.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    array: t.array.cast(),
                })
                .collect(),
        }
    }

    /// Puts every tensor on `graph`; trainable tensors require grad when
    /// `trainable` is set, buffers never do.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Result<Bound> {
        let handles = self
            .tensors
            .iter()
            .map(|t| graph.leaf_from(&t.array, trainable && !Self::is_buffer(&t.name)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { handles })
    }
}

/// Graph handles of a [`ModelParams`], in the same order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub handles: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T> {
    pub spec: ArchSpec,
    pub params: ModelParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams<T> {
    pub spec: ArchSpec,
    pub params: ModelParams<T>,
}

/// Batch normalisation statistics source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; the forward pass reports them for the running averages.
    Train,
    /// Running averages; a single latent vector maps to a fixed volume.
    Eval,
}

/// Per-channel batch mean and unbiased variance of one normalisation layer.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub layer: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn normal_array<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> NdArray<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    NdArray {
        shape: shape.to_vec(),
        data: (0..n)
            .map(|_| T::from_f64_lossy(dist.sample(rng)))
            .collect(),
    }
}

fn filled<T: Scalar>(shape: &[usize], v: f64) -> NdArray<T> {
    NdArray {
        shape: shape.to_vec(),
        data: vec![T::from_f64_lossy(v); shape.iter().product()],
    }
}

fn named<T>(name: String, array: NdArray<T>) -> NamedTensor<T> {
    NamedTensor { name, array }
}

fn push_bn<T: Scalar>(tensors: &mut Vec<NamedTensor<T>>, prefix: &str, c: usize) {
    tensors.push(named(format!("{prefix}.bn.gamma"), filled(&[c], 1.0)));
    tensors.push(named(format!("{prefix}.bn.beta"), filled(&[c], 0.0)));
    tensors.push(named(
        format!("{prefix}.bn.running_mean"),
        filled(&[c], 0.0),
    ));
    tensors.push(named(format!("{prefix}.bn.running_var"), filled(&[c], 1.0)));
}

/// Builds both networks: kernels ~ Normal(0, 0.02), biases 0, batch-norm scale
/// 1 and shift 0. Deterministic in `seed`.
pub fn init<T: Scalar>(
    spec: &ArchSpec,
    seed: u64,
) -> Result<(GeneratorParams<T>, CriticParams<T>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = spec.widths();
    let k = [KERNEL; 3];

    let mut g = Vec::new();
    g.push(named(
        "g.proj.weight".into(),
        normal_array(
            &mut rng,
            &[spec.latent_dim, widths[0], k[0], k[1], k[2]],
            INIT_STD,
        ),
    ));
    push_bn(&mut g, "g.proj", widths[0]);
    for i in 0..widths.len() {
        let cout = widths.get(i + 1).copied().unwrap_or(1);
        g.push(named(
            format!("g.up{i}.weight"),
            normal_array(&mut rng, &[widths[i], cout, k[0], k[1], k[2]], INIT_STD),
        ));
        if i + 1 < widths.len() {
            push_bn(&mut g, &format!("g.up{i}"), cout);
        } else {
            g.push(named(format!("g.up{i}.bias"), filled(&[1], 0.0)));
        }
    }

    let mut d = Vec::new();
    let rev: Vec<usize> = widths.iter().rev().copied().collect();
    for (i, &cout) in rev.iter().enumerate() {
        let cin = if i == 0 { 1 } else { rev[i - 1] };
        d.push(named(
            format!("d.down{i}.weight"),
            normal_array(&mut rng, &[cout, cin, k[0], k[1], k[2]], INIT_STD),
        ));
        d.push(named(format!("d.down{i}.bias"), filled(&[cout], 0.0)));
    }
    d.push(named(
        "d.head.weight".into(),
        normal_array(&mut rng, &[1, widths[0], k[0], k[1], k[2]], INIT_STD),
    ));
    d.push(named("d.head.bias".into(), filled(&[1], 0.0)));

    Ok((
        GeneratorParams {
            spec: *spec,
            params: ModelParams { tensors: g },
        },
        CriticParams {
            spec: *spec,
            params: ModelParams { tensors: d },
        },
    ))
}

/// `n` i.i.d. standard normal latent vectors, shape `[n, latent_dim]`.
pub fn sample_latent<T: Scalar>(n: usize, latent_dim: usize, seed: u64) -> Result<NdArray<T>> {
    if n == 0 || latent_dim == 0 {
        return Err(arg_err(
            "sample_latent",
            "n and latent_dim must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(latent_from_rng(&mut rng, n, latent_dim))
}

pub(crate) fn latent_from_rng<T: Scalar>(
    rng: &mut ChaCha8Rng,
    n: usize,
    latent_dim: usize,
) -> NdArray<T> {
    let data = (0..n * latent_dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(v)
        })
        .collect();
    NdArray {
        shape: vec![n, latent_dim],
        data,
    }
}

fn batch_norm<T: Scalar>(
    graph: &mut Graph<T>,
    x: Tensor,
    params: &ModelParams<T>,
    bound: &Bound,
    prefix: &str,
    mode: NormMode,
    stats: &mut Vec<BatchStats<T>>,
) -> Result<Tensor> {
    let h = |name: &str| bound.handles[params.index_of(&format!("{prefix}.bn.{name}"))];
    let (gamma, beta) = (h("gamma"), h("beta"));
    let shape = graph.shape(x).to_vec();
    let count = (shape.iter().product::<usize>() / shape[1]) as f64;
    match mode {
        NormMode::Train => {
            let s = graph.sum_channels(x)?;
            let mean = graph.affine_scale(s, 1.0 / count);
            let mb = graph.broadcast_channels(mean, &shape)?;
            let centered = graph.sub(x, mb)?;
            let sq = graph.square(centered);
            let ss = graph.sum_channels(sq)?;
            let var = graph.affine_scale(ss, 1.0 / count);
            let var_eps = graph.affine(var, 1.0, BN_EPS);
            let std = graph.sqrt(var_eps)?;
            let inv = graph.reciprocal(std)?;
            let scale = graph.mul(inv, gamma)?;
            let sb = graph.broadcast_channels(scale, &shape)?;
            let y = graph.mul(centered, sb)?;
            let bb = graph.broadcast_channels(beta, &shape)?;
            let unbias = if count > 1.0 {
                count / (count - 1.0)
            } else {
                1.0
            };
            stats.push(BatchStats {
                layer: String::from(prefix),
                mean: graph.value(mean).to_vec(),
                var: graph
                    .value(var)
                    .iter()
                    .map(|&v| v * T::from_f64_lossy(unbias))
                    .collect(),
            });
            graph.add(y, bb)
        }
        NormMode::Eval => {
            let rm = h("running_mean");
            let rv = h("running_var");
            let var_eps = graph.affine(rv, 1.0, BN_EPS);
            let std = graph.sqrt(var_eps)?;
            let inv = graph.reciprocal(std)?;
            let scale = graph.mul(inv, gamma)?;
            let shifted = graph.mul(rm, scale)?;
            let shift = graph.sub(beta, shifted)?;
            let sb = graph.broadcast_channels(scale, &shape)?;
            let y = graph.mul(x, sb)?;
            let bb = graph.broadcast_channels(shift, &shape)?;
            graph.add(y, bb)
        }
    }
}

impl<T: Scalar> GeneratorParams<T> {
    /// Runs the generator on bound parameters. `z` is `[N, latent_dim]`; the
    /// result is `[N, 1, S, S, S]` with values in `[0, 1]`.
    pub fn forward(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        z: Tensor,
        mode: NormMode,
    ) -> Result<(Tensor, Vec<BatchStats<T>>)> {
        let spec = &self.spec;
        let zs = graph.shape(z).to_vec();
        if zs.len() != 2 || zs[1] != spec.latent_dim {
            return Err(dim_err(
                "generate",
                format!("latent batch must be [N, {}], got {zs:?}", spec.latent_dim),
            ));
        }
        let p = &self.params;
        let w = |name: &str| bound.handles[p.index_of(name)];
        let mut stats = Vec::new();
        let z5 = graph.reshape(z, &[zs[0], spec.latent_dim, 1, 1, 1])?;
        let mut h = graph.conv_transpose3d(z5, w("g.proj.weight"), 1, 0)?;
        h = batch_norm(graph, h, p, bound, "g.proj", mode, &mut stats)?;
        h = graph.relu(h);
        let n = spec.stages();
        for i in 0..n {
            h = graph.conv_transpose3d(h, w(&format!("g.up{i}.weight")), 2, 1)?;
            if i + 1 < n {
                h = batch_norm(graph, h, p, bound, &format!("g.up{i}"), mode, &mut stats)?;
                h = graph.relu(h);
            } else {
                h = graph.add_channel_bias(h, w(&format!("g.up{i}.bias")))?;
                h = graph.tanh(h);
                h = graph.affine(h, 0.5, 0.5);
            }
        }
        Ok((h, stats))
    }

    /// Folds batch statistics into the running averages
    /// (`running = 0.9 * running + 0.1 * batch`).
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let one_m = T::from_f64_lossy(1.0 - BN_MOMENTUM);
        for s in stats {
            for (key, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let name = format!("{}.bn.{key}", s.layer);
                let run = self.params.get_mut(&name).expect("batch-norm buffer");
                for (r, &b) in run.data.iter_mut().zip(batch.iter()) {
                    *r = m * *r + one_m * b;
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> GeneratorParams<U> {
        GeneratorParams {
            spec: self.spec,
            params: self.params.cast(),
        }
    }
}

impl<T: Scalar> CriticParams<T> {
    /// Raw critic scores `[N]` for `x: [N, 1, S, S, S]`.
    pub fn forward(&self, graph: &mut Graph<T>, bound: &Bound, x: Tensor) -> Result<Tensor> {
        let spec = &self.spec;
        let xs = graph.shape(x).to_vec();
        if xs.len() != 5 || xs[1..] != spec.sample_shape(1)[1..] {
            return Err(dim_err(
                "criticize",
                format!(
                    "expected [N, 1, {s}, {s}, {s}], got {xs:?}",
                    s = spec.output_size
                ),
            ));
        }
        let p = &self.params;
        let w = |name: &str| bound.handles[p.index_of(name)];
        let mut h = x;
        for i in 0..spec.stages() {
            h = graph.conv3d(h, w(&format!("d.down{i}.weight")), 2, 1)?;
            h = graph.add_channel_bias(h, w(&format!("d.down{i}.bias")))?;
            h = graph.leaky_relu(h, spec.critic_slope);
        }
        h = graph.conv3d(h, w("d.head.weight"), 1, 0)?;
        h = graph.add_channel_bias(h, w("d.head.bias"))?;
        graph.reshape(h, &[xs[0]])
    }

    pub fn cast<U: Scalar>(&self) -> CriticParams<U> {
        CriticParams {
            spec: self.spec,
            params: self.params.cast(),
        }
    }
}

/// Eval-mode generation of a latent batch outside any caller graph.
pub fn generate<T: Scalar>(g: &GeneratorParams<T>, z: &NdArray<T>) -> Result<NdArray<T>> {
    let mut graph = Graph::new();
    let bound = g.params.bind(&mut graph, false)?;
    let zt = graph.leaf_from(z, false)?;
    let (out, _) = g.forward(&mut graph, &bound, zt, NormMode::Eval)?;
    Ok(graph.to_array(out))
}

/// Critic scores of a batch outside any caller graph.
pub fn criticize<T: Scalar>(d: &CriticParams<T>, x: &NdArray<T>) -> Result<Vec<T>> {
    let mut graph = Graph::new();
    let bound = d.params.bind(&mut graph, false)?;
    let xt = graph.leaf_from(x, false)?;
    let s = d.forward(&mut graph, &bound, xt)?;
    Ok(graph.value(s).to_vec())
}
