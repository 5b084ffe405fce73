//! Mapping between training state and GCKP entries.
//!
//! Besides the network tensors a checkpoint carries `meta.*` entries for the
//! architecture, seed and step, and `adam.*` entries for the optimizer moments.
//! Integers and `f64` values are stored as four 16-bit chunks, each exactly
//! representable in `f32`.

use geogan_core::arch::{self, ArchSpec, CriticParams, GeneratorParams, ModelParams, OutputMode};
use geogan_core::optim::Adam;
use geogan_core::trainer::TrainerState;
use geogan_core::NdArray;

use crate::error::{Error, Result};
use crate::gckp::Checkpoint;

fn encode_u64(v: u64) -> NdArray<f32> {
    NdArray {
        shape: vec![4],
        data: (0..4).map(|k| ((v >> (16 * k)) & 0xffff) as f32).collect(),
    }
}

fn decode_u64(a: &NdArray<f32>, name: &str) -> Result<u64> {
    if a.shape != [4]
        || a.data
            .iter()
            .any(|&c| !(0.0..=65535.0).contains(&c) || c.fract() != 0.0)
    {
        return Err(Error::Invalid(format!(
            "checkpoint entry {name} is not an encoded integer"
        )));
    }
    Ok(a.data
        .iter()
        .enumerate()
        .map(|(k, &c)| (c as u64) << (16 * k))
        .sum())
}

fn required<'a>(ckpt: &'a Checkpoint, name: &str) -> Result<&'a NdArray<f32>> {
    ckpt.get(name)
        .ok_or_else(|| Error::Invalid(format!("checkpoint has no entry {name}")))
}

fn read_u64(ckpt: &Checkpoint, name: &str) -> Result<u64> {
    decode_u64(required(ckpt, name)?, name)
}

pub fn spec_entries(spec: &ArchSpec, ckpt: &mut Checkpoint) {
    let mode = match spec.output_mode {
        OutputMode::Indicator => 0,
        OutputMode::Gray => 1,
    };
    ckpt.push("meta.latent_dim", encode_u64(spec.latent_dim as u64));
    ckpt.push("meta.base_channels", encode_u64(spec.base_channels as u64));
    ckpt.push("meta.output_size", encode_u64(spec.output_size as u64));
    ckpt.push("meta.output_mode", encode_u64(mode));
    ckpt.push("meta.critic_slope", encode_u64(spec.critic_slope.to_bits()));
}

pub fn read_spec(ckpt: &Checkpoint) -> Result<ArchSpec> {
    let output_mode = match read_u64(ckpt, "meta.output_mode")? {
        0 => OutputMode::Indicator,
        1 => OutputMode::Gray,
        m => return Err(Error::Invalid(format!("unknown output mode code {m}"))),
    };
    let spec = ArchSpec {
        latent_dim: read_u64(ckpt, "meta.latent_dim")? as usize,
        base_channels: read_u64(ckpt, "meta.base_channels")? as usize,
        output_size: read_u64(ckpt, "meta.output_size")? as usize,
        output_mode,
        critic_slope: f64::from_bits(read_u64(ckpt, "meta.critic_slope")?),
    };
    spec.validate()?;
    Ok(spec)
}

/// Fills a freshly initialised parameter set from the checkpoint by name.
fn fill(template: &mut ModelParams<f32>, ckpt: &Checkpoint) -> Result<()> {
    for t in &mut template.tensors {
        let a = required(ckpt, &t.name)?;
        if a.shape != t.array.shape {
            return Err(Error::Invalid(format!(
                "checkpoint tensor {} has shape {:?}, expected {:?}",
                t.name, a.shape, t.array.shape
            )));
        }
        t.array = a.clone();
    }
    Ok(())
}

/// Networks stored in a checkpoint.
pub fn load_models(ckpt: &Checkpoint) -> Result<(GeneratorParams<f32>, CriticParams<f32>)> {
    let spec = read_spec(ckpt)?;
    let (mut g, mut d) = arch::init::<f32>(&spec, 0)?;
    fill(&mut g.params, ckpt)?;
    fill(&mut d.params, ckpt)?;
    Ok((g, d))
}

fn adam_entries(prefix: &str, opt: &Adam<f32>, params: &ModelParams<f32>, ckpt: &mut Checkpoint) {
    ckpt.push(format!("adam.{prefix}.steps"), encode_u64(opt.steps));
    let trainable = params
        .tensors
        .iter()
        .filter(|t| !ModelParams::<f32>::is_buffer(&t.name));
    for ((t, m), v) in trainable.zip(&opt.m).zip(&opt.v) {
        let shape = vec![m.len()];
        ckpt.push(
            format!("adam.{prefix}.m:{}", t.name),
            NdArray {
                shape: shape.clone(),
                data: m.clone(),
            },
        );
        ckpt.push(
            format!("adam.{prefix}.v:{}", t.name),
            NdArray {
                shape,
                data: v.clone(),
            },
        );
    }
}

fn read_adam(
    prefix: &str,
    opt: &mut Adam<f32>,
    params: &ModelParams<f32>,
    ckpt: &Checkpoint,
) -> Result<()> {
    opt.steps = read_u64(ckpt, &format!("adam.{prefix}.steps"))?;
    let trainable = params
        .tensors
        .iter()
        .filter(|t| !ModelParams::<f32>::is_buffer(&t.name));
    for ((t, m), v) in trainable.zip(opt.m.iter_mut()).zip(opt.v.iter_mut()) {
        for (key, buf) in [("m", m), ("v", v)] {
            let name = format!("adam.{prefix}.{key}:{}", t.name);
            let a = required(ckpt, &name)?;
            if a.data.len() != buf.len() {
                return Err(Error::Invalid(format!(
                    "checkpoint entry {name} has the wrong length"
                )));
            }
            buf.copy_from_slice(&a.data);
        }
    }
    Ok(())
}

/// Full training state plus the run seed.
pub fn from_state(state: &TrainerState, seed: u64) -> Checkpoint {
    let mut ckpt = Checkpoint::default();
    spec_entries(&state.generator.spec, &mut ckpt);
    ckpt.push("meta.seed", encode_u64(seed));
    ckpt.push("meta.step", encode_u64(state.step));
    for t in state
        .generator
        .params
        .tensors
        .iter()
        .chain(&state.critic.params.tensors)
    {
        ckpt.push(t.name.clone(), t.array.clone());
    }
    adam_entries("g", &state.gen_opt, &state.generator.params, &mut ckpt);
    adam_entries("d", &state.critic_opt, &state.critic.params, &mut ckpt);
    ckpt
}

/// Rebuilds a training state; learning rate and betas come from the caller.
/// Returns the state and the seed recorded with it.
pub fn to_state(ckpt: &Checkpoint, lr: f64, beta1: f64, beta2: f64) -> Result<(TrainerState, u64)> {
    let (generator, critic) = load_models(ckpt)?;
    let sizes = |p: &ModelParams<f32>| -> Vec<usize> {
        p.tensors
            .iter()
            .filter(|t| !ModelParams::<f32>::is_buffer(&t.name))
            .map(|t| t.array.len())
            .collect()
    };
    let mut gen_opt = Adam::new(lr, beta1, beta2, &sizes(&generator.params));
    let mut critic_opt = Adam::new(lr, beta1, beta2, &sizes(&critic.params));
    read_adam("g", &mut gen_opt, &generator.params, ckpt)?;
    read_adam("d", &mut critic_opt, &critic.params, ckpt)?;
    let state = TrainerState {
        generator,
        critic,
        gen_opt,
        critic_opt,
        step: read_u64(ckpt, "meta.step")?,
    };
    Ok((state, read_u64(ckpt, "meta.seed")?))
}
