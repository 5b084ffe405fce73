//! Voxel volumes and conditioning masks.
//!
//! Volumes are stored x-fastest: `index = x + nx * (y + ny * z)`. This is the
//! same order as the spatial part of a `[N, C, D, H, W]` tensor with `D = z`,
//! `H = y`, `W = x`, so a single-channel sample and a volume share one buffer
//! layout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

#[derive(Clone, Debug, PartialEq)]
pub enum VolumeData {
    /// Indicator values in `{0, 1}`.
    Binary(Vec<u8>),
    /// Gray levels, nominally in `[0, 1]`.
    Gray(Vec<f32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    BinaryU8,
    GrayF32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: VolumeData,
}

fn check_dims(op: &'static str, dims: [usize; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(arg_err(op, format!("dims {dims:?} must be positive")));
    }
    if dims.iter().product::<usize>() != len {
        return Err(dim_err(
            op,
            format!(
                "dims {dims:?} need {} voxels, got {len}",
                dims.iter().product::<usize>()
            ),
        ));
    }
    Ok(())
}

impl Volume {
    pub fn binary(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        check_dims("Volume::binary", dims, data.len())?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(arg_err(
                "Volume::binary",
                format!("value {} at index {i} is not 0/1", data[i]),
            ));
        }
        Ok(Self {
            dims,
            data: VolumeData::Binary(data),
        })
    }

    pub fn gray(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        check_dims("Volume::gray", dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(arg_err(
                "Volume::gray",
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(Self {
            dims,
            data: VolumeData::Gray(data),
        })
    }

    pub fn zeros(dims: [usize; 3], dtype: DType) -> Self {
        let n = dims.iter().product();
        let data = match dtype {
            DType::BinaryU8 => VolumeData::Binary(vec![0; n]),
            DType::GrayF32 => VolumeData::Gray(vec![0.0; n]),
        };
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            VolumeData::Binary(_) => DType::BinaryU8,
            VolumeData::Gray(_) => DType::GrayF32,
        }
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn is_binary(&self) -> bool {
        self.dtype() == DType::BinaryU8
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Value at a flat index as `f32`.
    #[inline]
    pub fn at(&self, i: usize) -> f32 {
        match &self.data {
            VolumeData::Binary(v) => v[i] as f32,
            VolumeData::Gray(v) => v[i],
        }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.at(self.index(x, y, z))
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            VolumeData::Binary(v) => v.iter().map(|&b| b as f32).collect(),
            VolumeData::Gray(v) => v.clone(),
        }
    }

    /// Indicator volume: 1 where the value is at least `level`.
    pub fn threshold(&self, level: f32) -> Volume {
        let data = (0..self.len())
            .map(|i| u8::from(self.at(i) >= level))
            .collect();
        Volume {
            dims: self.dims,
            data: VolumeData::Binary(data),
        }
    }

    /// Fraction of voxels equal to one (binary) or at least 0.5 (gray).
    pub fn fraction_on(&self) -> f64 {
        let on = (0..self.len()).filter(|&i| self.at(i) >= 0.5).count();
        on as f64 / self.len() as f64
    }

    /// Copies the box `[origin, origin + size)`.
    pub fn sub_volume(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Volume> {
        for a in 0..3 {
            if size[a] == 0 || origin[a] + size[a] > self.dims[a] {
                return Err(arg_err(
                    "sub_volume",
                    format!("box {origin:?}+{size:?} outside dims {:?}", self.dims),
                ));
            }
        }
        let mut idx = Vec::with_capacity(size.iter().product());
        for z in 0..size[2] {
            for y in 0..size[1] {
                let start = self.index(origin[0], origin[1] + y, origin[2] + z);
                idx.push(start..start + size[0]);
            }
        }
        let data = match &self.data {
            VolumeData::Binary(v) => {
                VolumeData::Binary(idx.into_iter().flat_map(|r| v[r].iter().copied()).collect())
            }
            VolumeData::Gray(v) => {
                VolumeData::Gray(idx.into_iter().flat_map(|r| v[r].iter().copied()).collect())
            }
        };
        Ok(Volume { dims: size, data })
    }

    /// 2D cross-section orthogonal to `axis`, returned as `(width, height, values)`
    /// with the lower remaining axis running fastest.
    pub fn slice(&self, axis: Axis, index: usize) -> Result<(usize, usize, Vec<f32>)> {
        let a = axis.index();
        if index >= self.dims[a] {
            return Err(arg_err(
                "slice",
                format!(
                    "index {index} outside extent {} of axis {axis:?}",
                    self.dims[a]
                ),
            ));
        }
        let [nx, ny, nz] = self.dims;
        let (w, h) = match axis {
            Axis::X => (ny, nz),
            Axis::Y => (nx, nz),
            Axis::Z => (nx, ny),
        };
        let mut out = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let (x, y, z) = match axis {
                    Axis::X => (index, u, v),
                    Axis::Y => (u, index, v),
                    Axis::Z => (u, v, index),
                };
                out.push(self.get(x, y, z));
            }
        }
        Ok((w, h, out))
    }
}

/// Binary conditioning mask with at least one set voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl Mask {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        check_dims("Mask::new", dims, data.len())?;
        if data.iter().any(|&v| v > 1) {
            return Err(arg_err("Mask::new", "mask values must be 0/1"));
        }
        if !data.contains(&1) {
            return Err(arg_err("Mask::new", "mask is empty"));
        }
        Ok(Self { dims, data })
    }

    pub fn from_volume(v: &Volume) -> Result<Self> {
        match v.data() {
            VolumeData::Binary(d) => Self::new(v.dims(), d.clone()),
            VolumeData::Gray(_) => Err(arg_err("Mask::from_volume", "mask volume must be binary")),
        }
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            dims: self.dims,
            data: VolumeData::Binary(self.data.clone()),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.data[i] == 1
    }

    /// Flat indices of the set voxels, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
    }

    /// Zeroes every voxel of `v` outside the mask.
    pub fn apply(&self, v: &Volume) -> Result<Volume> {
        if v.dims() != self.dims {
            return Err(dim_err(
                "Mask::apply",
                format!("{:?} vs {:?}", v.dims(), self.dims),
            ));
        }
        let data = match v.data() {
            VolumeData::Binary(d) => {
                VolumeData::Binary(d.iter().zip(&self.data).map(|(&a, &m)| a * m).collect())
            }
            VolumeData::Gray(d) => VolumeData::Gray(
                d.iter()
                    .zip(&self.data)
                    .map(|(&a, &m)| if m == 1 { a } else { 0.0 })
                    .collect(),
            ),
        };
        Ok(Volume {
            dims: self.dims,
            data,
        })
    }

    /// Chebyshev distance of every voxel to the nearest set voxel.
    pub fn chebyshev_distance(&self) -> Vec<u32> {
        let [nx, ny, nz] = self.dims;
        let mut dist = vec![u32::MAX; self.data.len()];
        let mut frontier: Vec<usize> = self.indices().collect();
        for &i in &frontier {
            dist[i] = 0;
        }
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for &i in &frontier {
                let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if xx < 0
                                || yy < 0
                                || zz < 0
                                || xx >= nx as i64
                                || yy >= ny as i64
                                || zz >= nz as i64
                            {
                                continue;
                            }
                            let j = xx as usize + nx * (yy as usize + ny * zz as usize);
                            if dist[j] == u32::MAX {
                                dist[j] = d;
                                next.push(j);
                            }
                        }
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}
