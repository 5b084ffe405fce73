//! Small deterministic training images: sinuous channels in a matrix, and
//! smoothed sphere packs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::volume::{Axis, Volume};

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub dims: [usize; 3],
    pub channel_count: usize,
    pub channel_radius: f64,
    /// Lateral meander amplitude in voxels.
    pub amplitude: f64,
    /// Meander wavelength in voxels along the principal axis.
    pub wavelength: f64,
    /// Direction the channels run along.
    pub axis: Axis,
    pub seed: u64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            dims: [64; 3],
            channel_count: 12,
            channel_radius: 4.0,
            amplitude: 6.0,
            wavelength: 32.0,
            axis: Axis::X,
            seed: 0,
        }
    }
}

/// Centre line of one channel: the lateral coordinate follows
/// `lateral + amplitude * sin(2 pi t / wavelength + phase)`; the vertical one is fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centerline {
    pub lateral: f64,
    pub vertical: f64,
    pub phase: f64,
}

/// Axes `(principal, lateral, vertical)` for channels running along `axis`.
fn frame(axis: Axis) -> (usize, usize, usize) {
    match axis {
        Axis::X => (0, 1, 2),
        Axis::Y => (1, 0, 2),
        Axis::Z => (2, 0, 1),
    }
}

impl ChannelSpec {
    fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(arg_err(
                "make_channels",
                format!("invalid dims {:?}", self.dims),
            ));
        }
        if self.channel_count == 0 {
            return Ok(());
        }
        if !(self.channel_radius > 0.0) || !(self.wavelength > 0.0) || !(self.amplitude >= 0.0) {
            return Err(arg_err(
                "make_channels",
                "radius and wavelength must be positive, amplitude non-negative",
            ));
        }
        let (_, lat, ver) = frame(self.axis);
        let r = self.channel_radius.ceil() as usize;
        let a = self.amplitude.ceil() as usize;
        if 2 * (r + a) >= self.dims[lat] || 2 * r >= self.dims[ver] {
            return Err(arg_err(
                "make_channels",
                format!(
                    "channels of radius {} and amplitude {} do not fit in dims {:?}",
                    self.channel_radius, self.amplitude, self.dims
                ),
            ));
        }
        Ok(())
    }

    /// The randomly placed centre lines; centres sit on integer coordinates.
    pub fn centerlines(&self) -> Result<Vec<Centerline>> {
        self.validate()?;
        let (_, lat, ver) = frame(self.axis);
        let r = self.channel_radius.ceil() as usize;
        let a = self.amplitude.ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.channel_count)
            .map(|_| Centerline {
                lateral: rng.random_range(r + a..self.dims[lat] - r - a) as f64,
                vertical: rng.random_range(r..self.dims[ver] - r) as f64,
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect())
    }
}

/// Binary volume with value 1 inside any channel.
pub fn make_channels(spec: &ChannelSpec) -> Result<Volume> {
    let lines = spec.centerlines()?;
    let dims = spec.dims;
    let (prin, lat, ver) = frame(spec.axis);
    let r2 = spec.channel_radius * spec.channel_radius;
    let mut data = vec![0u8; dims.iter().product()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let inside = lines.iter().any(|c| {
                    let centre = c.lateral
                        + spec.amplitude * (2.0 * PI * p[prin] / spec.wavelength + c.phase).sin();
                    let dl = p[lat] - centre;
                    let dv = p[ver] - c.vertical;
                    dl * dl + dv * dv <= r2
                });
                if inside {
                    data[x + dims[0] * (y + dims[1] * z)] = 1;
                }
            }
        }
    }
    Volume::binary(dims, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GranularSpec {
    pub dims: [usize; 3],
    pub sphere_count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Standard deviation of the Gaussian blur in voxels; 0 disables it.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for GranularSpec {
    fn default() -> Self {
        Self {
            dims: [64; 3],
            sphere_count: 400,
            radius_min: 3.0,
            radius_max: 6.0,
            smoothing: 1.0,
            seed: 0,
        }
    }
}

/// Sphere pack before smoothing: 1 inside any sphere.
pub fn sphere_union(spec: &GranularSpec) -> Result<Volume> {
    let dims = spec.dims;
    if dims.contains(&0) {
        return Err(arg_err("make_granular", format!("invalid dims {dims:?}")));
    }
    if !(spec.radius_min > 0.0) || !(spec.radius_max >= spec.radius_min) || !(spec.smoothing >= 0.0)
    {
        return Err(arg_err(
            "make_granular",
            "need 0 < radius_min <= radius_max and smoothing >= 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = vec![0u8; dims.iter().product()];
    for _ in 0..spec.sphere_count {
        let c = [
            rng.random_range(0.0..dims[0] as f64),
            rng.random_range(0.0..dims[1] as f64),
            rng.random_range(0.0..dims[2] as f64),
        ];
        let r = if spec.radius_max > spec.radius_min {
            rng.random_range(spec.radius_min..spec.radius_max)
        } else {
            spec.radius_min
        };
        let lo = |k: usize| (c[k] - r).floor().max(0.0) as usize;
        let hi = |k: usize| ((c[k] + r).ceil() as usize).min(dims[k] - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let d2 = (x as f64 - c[0]).powi(2)
                        + (y as f64 - c[1]).powi(2)
                        + (z as f64 - c[2]).powi(2);
                    if d2 <= r * r {
                        data[x + dims[0] * (y + dims[1] * z)] = 1;
                    }
                }
            }
        }
    }
    Volume::binary(dims, data)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with edge values repeated past the border.
pub fn gaussian_blur(values: &[f64], dims: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as isize;
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut cur = values.to_vec();
    for axis in 0..3 {
        let n = dims[axis] as isize;
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = ((i / strides[axis]) % dims[axis]) as isize;
            let base = i - pos as usize * strides[axis];
            *out = kernel
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    let p = (pos + k as isize - half).clamp(0, n - 1) as usize;
                    w * cur[base + p * strides[axis]]
                })
                .sum();
        }
        cur = next;
    }
    cur
}

/// Gray volume: blurred sphere pack rescaled to span `[0, 1]`.
pub fn make_granular(spec: &GranularSpec) -> Result<Volume> {
    let pack = sphere_union(spec)?;
    let raw: Vec<f64> = pack.to_f32().into_iter().map(f64::from).collect();
    let blurred = gaussian_blur(&raw, spec.dims, spec.smoothing);
    let (lo, hi) = blurred
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let data = if hi > lo {
        blurred
            .iter()
            .map(|&v| ((v - lo) / (hi - lo)) as f32)
            .collect()
    } else {
        vec![0.0; blurred.len()]
    };
    Volume::gray(spec.dims, data)
}
