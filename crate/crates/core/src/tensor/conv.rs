//! 3D convolution kernels.
//!
//! Three linear maps share one [`ConvGeometry`]:
//!
//! * `forward`: `y[n,f,o] = sum_{c,k} w[f,c,k] * x[n,c,o*s+k-p]`
//! * `adjoint`: the transpose of `forward` in `x` (a transposed convolution)
//! * `weight_grad`: the transpose of `forward` in `w`
//!
//! Each of them is the derivative of the others, which is what lets the graph
//! differentiate convolutions any number of times. The fast path lowers every map
//! to a GEMM over an im2col buffer; [`reference`] holds the direct nested-loop
//! forms that the fast path is tested against.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Scalar;

/// Sizes of one convolution, always described from the forward (`conv3d`) side.
///
/// `input` is the spatial extent of the convolution input `x`, `output` the
/// extent of `y`. For a transposed convolution the roles swap: its input is `y`
/// and its output is `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Geometry of `conv3d(x, w)` for `x: [N,C,D,H,W]` and `w: [F,C,kd,kh,kw]`.
    pub fn for_conv(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x.len() != 5 || w.len() != 5 {
            return Err(dim_err(
                "conv3d",
                alloc::format!("expected rank-5 input and kernel, got {x:?} and {w:?}"),
            ));
        }
        if x[1] != w[1] {
            return Err(dim_err(
                "conv3d",
                alloc::format!("input has {} channels but kernel expects {}", x[1], w[1]),
            ));
        }
        if stride == 0 {
            return Err(arg_err("conv3d", "stride must be positive"));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = x[2 + a] + 2 * padding;
            if padded < w[2 + a] {
                return Err(dim_err(
                    "conv3d",
                    alloc::format!(
                        "padded extent {padded} smaller than kernel extent {}",
                        w[2 + a]
                    ),
                ));
            }
            output[a] = (padded - w[2 + a]) / stride + 1;
        }
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            out_channels: w[0],
            input: [x[2], x[3], x[4]],
            kernel: [w[2], w[3], w[4]],
            output,
            stride,
            padding,
        })
    }

    /// Geometry of `conv_transpose3d(y, w)` for `y: [N,F,D,H,W]`, `w: [F,C,kd,kh,kw]`
    /// producing a spatial extent of `out`. `None` selects the canonical
    /// `(D-1)*stride - 2*padding + kd`.
    pub fn for_transpose(
        y: &[usize],
        w: &[usize],
        stride: usize,
        padding: usize,
        out: Option<[usize; 3]>,
    ) -> Result<Self> {
        if y.len() != 5 || w.len() != 5 {
            return Err(dim_err(
                "conv_transpose3d",
                alloc::format!("expected rank-5 input and kernel, got {y:?} and {w:?}"),
            ));
        }
        if y[1] != w[0] {
            return Err(dim_err(
                "conv_transpose3d",
                alloc::format!("input has {} channels but kernel expects {}", y[1], w[0]),
            ));
        }
        if stride == 0 {
            return Err(arg_err("conv_transpose3d", "stride must be positive"));
        }
        let mut input = [0; 3];
        for a in 0..3 {
            input[a] = match out {
                Some(o) => o[a],
                None => {
                    let full = (y[2 + a] - 1) * stride + w[2 + a];
                    if full <= 2 * padding {
                        return Err(dim_err(
                            "conv_transpose3d",
                            "padding removes the whole output",
                        ));
                    }
                    full - 2 * padding
                }
            };
        }
        let geo = Self::for_conv(
            &[y[0], w[1], input[0], input[1], input[2]],
            w,
            stride,
            padding,
        )
        .map_err(|_| dim_err("conv_transpose3d", "output extent incompatible with kernel"))?;
        let geo = Self {
            out_channels: w[0],
            ..geo
        };
        if geo.output != [y[2], y[3], y[4]] {
            return Err(dim_err(
                "conv_transpose3d",
                alloc::format!(
                    "requested output {:?} does not map back onto input {:?}",
                    input,
                    &y[2..]
                ),
            ));
        }
        Ok(geo)
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.in_channels,
            self.input[0],
            self.input[1],
            self.input[2],
        ]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.out_channels,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the im2col matrix (`C * kd * kh * kw`).
    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }

    /// For kernel offset `k` along axis `a`, the range of output positions that read
    /// a valid (non-padding) input voxel.
    fn valid_range(&self, a: usize, k: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let p = self.padding as isize;
        let k = k as isize;
        let n_in = self.input[a] as isize;
        let n_out = self.output[a] as isize;
        // need 0 <= o*s + k - p < n_in
        let lo = (p - k + s - 1).div_euclid(s).max(0);
        let hi = ((n_in - 1 + p - k).div_euclid(s) + 1).min(n_out);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

/// Gathers one sample into a `[C*K, P]` row-major column buffer.
fn im2col<T: Scalar>(geo: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let [id, ih, iw] = geo.input;
    let [kd, kh, kw] = geo.kernel;
    let [od, oh, ow] = geo.output;
    let p_total = od * oh * ow;
    let s = geo.stride;
    let pad = geo.padding;
    cols.fill(T::zero());
    for c in 0..geo.in_channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            let (da, db) = geo.valid_range(0, a);
            for b in 0..kh {
                let (ha, hb) = geo.valid_range(1, b);
                for e in 0..kw {
                    let (wa, wb) = geo.valid_range(2, e);
                    let row = ((c * kd + a) * kh + b) * kw + e;
                    let dst = &mut cols[row * p_total..(row + 1) * p_total];
                    for o0 in da..db {
                        let z = o0 * s + a - pad;
                        for o1 in ha..hb {
                            let y = o1 * s + b - pad;
                            let src = &xc[(z * ih + y) * iw..(z * ih + y + 1) * iw];
                            let drow = &mut dst[(o0 * oh + o1) * ow..(o0 * oh + o1 + 1) * ow];
                            if s == 1 {
                                let x0 = wa + e - pad;
                                drow[wa..wb].copy_from_slice(&src[x0..x0 + (wb - wa)]);
                            } else {
                                for o2 in wa..wb {
                                    drow[o2] = src[o2 * s + e - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a `[C*K, P]` column buffer back into one sample.
fn col2im<T: Scalar>(geo: &ConvGeometry, cols: &[T], x: &mut [T]) {
    let [id, ih, iw] = geo.input;
    let [kd, kh, kw] = geo.kernel;
    let [od, oh, ow] = geo.output;
    let p_total = od * oh * ow;
    let s = geo.stride;
    let pad = geo.padding;
    for c in 0..geo.in_channels {
        let xc = &mut x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            let (da, db) = geo.valid_range(0, a);
            for b in 0..kh {
                let (ha, hb) = geo.valid_range(1, b);
                for e in 0..kw {
                    let (wa, wb) = geo.valid_range(2, e);
                    let row = ((c * kd + a) * kh + b) * kw + e;
                    let src = &cols[row * p_total..(row + 1) * p_total];
                    for o0 in da..db {
                        let z = o0 * s + a - pad;
                        for o1 in ha..hb {
                            let y = o1 * s + b - pad;
                            let dst = &mut xc[(z * ih + y) * iw..(z * ih + y + 1) * iw];
                            let srow = &src[(o0 * oh + o1) * ow..(o0 * oh + o1 + 1) * ow];
                            for o2 in wa..wb {
                                dst[o2 * s + e - pad] = dst[o2 * s + e - pad] + srow[o2];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y = conv3d(x, w)`; `y` is overwritten.
pub fn forward<T: Scalar>(geo: &ConvGeometry, x: &[T], w: &[T], y: &mut [T]) {
    let rows = geo.col_rows();
    let p = geo.out_volume();
    let in_stride = geo.in_channels * geo.in_volume();
    let out_stride = geo.out_channels * p;
    let f = geo.out_channels;
    let mut cols = vec![T::zero(); rows * p];
    for n in 0..geo.batch {
        im2col(geo, &x[n * in_stride..(n + 1) * in_stride], &mut cols);
        // y_n[F,P] = w[F,rows] * cols[rows,P]
        T::gemm(
            f,
            rows,
            p,
            T::one(),
            w,
            rows as isize,
            1,
            &cols,
            p as isize,
            1,
            T::zero(),
            &mut y[n * out_stride..(n + 1) * out_stride],
            p as isize,
            1,
        );
    }
}

/// `x = conv3d_adjoint(g, w)` (transposed convolution); `x` is overwritten.
pub fn adjoint<T: Scalar>(geo: &ConvGeometry, g: &[T], w: &[T], x: &mut [T]) {
    let rows = geo.col_rows();
    let p = geo.out_volume();
    let in_stride = geo.in_channels * geo.in_volume();
    let out_stride = geo.out_channels * p;
    let f = geo.out_channels;
    let mut cols = vec![T::zero(); rows * p];
    x.fill(T::zero());
    for n in 0..geo.batch {
        // cols[rows,P] = w^T[rows,F] * g_n[F,P]
        T::gemm(
            rows,
            f,
            p,
            T::one(),
            w,
            1,
            rows as isize,
            &g[n * out_stride..(n + 1) * out_stride],
            p as isize,
            1,
            T::zero(),
            &mut cols,
            p as isize,
            1,
        );
        col2im(geo, &cols, &mut x[n * in_stride..(n + 1) * in_stride]);
    }
}

/// `w = sum_n g_n * im2col(x_n)^T`; `w` is overwritten.
pub fn weight_grad<T: Scalar>(geo: &ConvGeometry, x: &[T], g: &[T], w: &mut [T]) {
    let rows = geo.col_rows();
    let p = geo.out_volume();
    let in_stride = geo.in_channels * geo.in_volume();
    let out_stride = geo.out_channels * p;
    let f = geo.out_channels;
    let mut cols = vec![T::zero(); rows * p];
    w.fill(T::zero());
    for n in 0..geo.batch {
        im2col(geo, &x[n * in_stride..(n + 1) * in_stride], &mut cols);
        // w[F,rows] += g_n[F,P] * cols^T[P,rows]
        T::gemm(
            f,
            p,
            rows,
            T::one(),
            &g[n * out_stride..(n + 1) * out_stride],
            p as isize,
            1,
            &cols,
            1,
            p as isize,
            T::one(),
            w,
            rows as isize,
            1,
        );
    }
}

/// Direct nested-loop forms of the three convolution maps.
///
/// These are deliberately naive and serve as the oracle for the GEMM path.
pub mod reference {
    use super::ConvGeometry;
    use crate::scalar::Scalar;

    fn x_index(geo: &ConvGeometry, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        let [id, ih, iw] = geo.input;
        (((n * geo.in_channels + c) * id + z) * ih + y) * iw + x
    }

    fn y_index(geo: &ConvGeometry, n: usize, f: usize, z: usize, y: usize, x: usize) -> usize {
        let [od, oh, ow] = geo.output;
        (((n * geo.out_channels + f) * od + z) * oh + y) * ow + x
    }

    fn w_index(geo: &ConvGeometry, f: usize, c: usize, a: usize, b: usize, e: usize) -> usize {
        let [kd, kh, kw] = geo.kernel;
        (((f * geo.in_channels + c) * kd + a) * kh + b) * kw + e
    }

    /// Maps an output position and kernel offset to an input position, or `None`
    /// inside the zero padding.
    fn source(geo: &ConvGeometry, axis: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o * geo.stride + k) as isize - geo.padding as isize;
        (i >= 0 && (i as usize) < geo.input[axis]).then_some(i as usize)
    }

    /// Visits every (n, f, c, output position, kernel offset) tuple that touches a
    /// real input voxel, passing (x index, y index, w index).
    fn for_each_tap(geo: &ConvGeometry, mut visit: impl FnMut(usize, usize, usize)) {
        let [od, oh, ow] = geo.output;
        let [kd, kh, kw] = geo.kernel;
        for n in 0..geo.batch {
            for f in 0..geo.out_channels {
                for c in 0..geo.in_channels {
                    for o0 in 0..od {
                        for o1 in 0..oh {
                            for o2 in 0..ow {
                                for a in 0..kd {
                                    let Some(z) = source(geo, 0, o0, a) else {
                                        continue;
                                    };
                                    for b in 0..kh {
                                        let Some(y) = source(geo, 1, o1, b) else {
                                            continue;
                                        };
                                        for e in 0..kw {
                                            let Some(x) = source(geo, 2, o2, e) else {
                                                continue;
                                            };
                                            visit(
                                                x_index(geo, n, c, z, y, x),
                                                y_index(geo, n, f, o0, o1, o2),
                                                w_index(geo, f, c, a, b, e),
                                            );
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(geo: &ConvGeometry, x: &[T], w: &[T], y: &mut [T]) {
        y.fill(T::zero());
        for_each_tap(geo, |xi, yi, wi| y[yi] = y[yi] + x[xi] * w[wi]);
    }

    pub fn adjoint<T: Scalar>(geo: &ConvGeometry, g: &[T], w: &[T], x: &mut [T]) {
        x.fill(T::zero());
        for_each_tap(geo, |xi, yi, wi| x[xi] = x[xi] + g[yi] * w[wi]);
    }

    pub fn weight_grad<T: Scalar>(geo: &ConvGeometry, x: &[T], g: &[T], w: &mut [T]) {
        w.fill(T::zero());
        for_each_tap(geo, |xi, yi, wi| w[wi] = w[wi] + g[yi] * x[xi]);
    }
}
