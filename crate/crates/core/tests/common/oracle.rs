//! Naive loop forms of the convolutions and the ten shape cases they are
//! compared on.

use super::{rng, uniform};
use geogan_core::tensor::conv::ConvGeometry;
use geogan_core::Graph;

/// Seven nested loops straight from the definition (batch, out channel, three
/// output axes, in channel, three kernel axes).
pub fn naive_conv3d(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [n, c, d, h, wd] = xs;
    let [f, _, kd, kh, kw] = ws;
    let od = (d + 2 * pad - kd) / stride + 1;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; n * f * od * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for i in 0..od {
                for j in 0..oh {
                    for k in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for e in 0..kw {
                                        let zi = (i * stride + a) as isize - pad as isize;
                                        let yi = (j * stride + bb) as isize - pad as isize;
                                        let xi = (k * stride + e) as isize - pad as isize;
                                        if zi < 0 || yi < 0 || xi < 0 {
                                            continue;
                                        }
                                        let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                                        if zi >= d || yi >= h || xi >= wd {
                                            continue;
                                        }
                                        acc += x[(((b * c + ci) * d + zi) * h + yi) * wd + xi]
                                            * w[(((o * c + ci) * kd + a) * kh + bb) * kw + e];
                                    }
                                }
                            }
                        }
                        y[(((b * f + o) * od + i) * oh + j) * ow + k] = acc;
                    }
                }
            }
        }
    }
    (y, [n, f, od, oh, ow])
}

/// Scatter form of the transposed convolution.
pub fn naive_conv_transpose3d(
    y: &[f64],
    ys: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [n, cin, d, h, wd] = ys;
    let [_, cout, kd, kh, kw] = ws;
    let full = [
        (d - 1) * stride + kd,
        (h - 1) * stride + kh,
        (wd - 1) * stride + kw,
    ];
    let out = [full[0] - 2 * pad, full[1] - 2 * pad, full[2] - 2 * pad];
    let mut x = vec![0.0; n * cout * out[0] * out[1] * out[2]];
    for b in 0..n {
        for ci in 0..cin {
            for i in 0..d {
                for j in 0..h {
                    for k in 0..wd {
                        let v = y[(((b * cin + ci) * d + i) * h + j) * wd + k];
                        for co in 0..cout {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for e in 0..kw {
                                        let zi = (i * stride + a) as isize - pad as isize;
                                        let yi = (j * stride + bb) as isize - pad as isize;
                                        let xi = (k * stride + e) as isize - pad as isize;
                                        if zi < 0 || yi < 0 || xi < 0 {
                                            continue;
                                        }
                                        let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                                        if zi >= out[0] || yi >= out[1] || xi >= out[2] {
                                            continue;
                                        }
                                        x[(((b * cout + co) * out[0] + zi) * out[1] + yi)
                                            * out[2]
                                            + xi] +=
                                            v * w[(((ci * cout + co) * kd + a) * kh + bb) * kw + e];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (x, [n, cout, out[0], out[1], out[2]])
}

/// (input shape, kernel shape, stride, padding) for conv3d.
pub const CASES: [([usize; 5], [usize; 5], usize, usize); 10] = [
    ([1, 2, 5, 5, 5], [3, 2, 3, 3, 3], 2, 1),
    ([2, 3, 8, 8, 8], [4, 3, 4, 4, 4], 2, 1),
    ([2, 3, 8, 8, 8], [2, 3, 3, 3, 3], 1, 1),
    ([1, 1, 7, 6, 5], [2, 1, 3, 2, 4], 1, 0),
    ([1, 2, 9, 9, 9], [2, 2, 3, 3, 3], 3, 2),
    ([3, 1, 4, 4, 4], [1, 1, 4, 4, 4], 1, 0),
    ([1, 4, 6, 6, 6], [3, 4, 2, 2, 2], 2, 0),
    ([2, 2, 5, 7, 6], [2, 2, 3, 3, 3], 2, 2),
    ([1, 1, 16, 16, 16], [2, 1, 4, 4, 4], 2, 1),
    ([1, 2, 3, 3, 3], [2, 2, 1, 1, 1], 1, 0),
];

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of the fast conv3d from the loop oracle, per case.
pub fn conv3d_errors() -> Vec<f64> {
    CASES
        .iter()
        .enumerate()
        .map(|(i, &(xs, ws, s, p))| {
            let mut r = rng(i as u64);
            let x = uniform(&mut r, xs.iter().product(), -1.0, 1.0);
            let w = uniform(&mut r, ws.iter().product(), -1.0, 1.0);
            let (want, shape) = naive_conv3d(&x, xs, &w, ws, s, p);
            let mut g = Graph::<f64>::new();
            let xt = g.constant(x, &xs).unwrap();
            let wt = g.constant(w, &ws).unwrap();
            let y = g.conv3d(xt, wt, s, p).unwrap();
            assert_eq!(g.shape(y), &shape);
            max_abs_diff(g.value(y), &want)
        })
        .collect()
}

/// Same for the transposed convolution against the scatter oracle.
pub fn conv_transpose3d_errors() -> Vec<f64> {
    CASES
        .iter()
        .enumerate()
        .map(|(i, &(xs, ws, s, p))| {
            let mut r = rng(100 + i as u64);
            // transpose kernel layout is [C_in, C_out, k...]; reuse the conv kernel
            let geo = ConvGeometry::for_conv(&xs, &ws, s, p).unwrap();
            let ys = [xs[0], ws[0], geo.output[0], geo.output[1], geo.output[2]];
            let y = uniform(&mut r, ys.iter().product(), -1.0, 1.0);
            let w = uniform(&mut r, ws.iter().product(), -1.0, 1.0);
            let (want, shape) = naive_conv_transpose3d(&y, ys, &w, ws, s, p);
            let mut g = Graph::<f64>::new();
            let yt = g.constant(y, &ys).unwrap();
            let wt = g.constant(w, &ws).unwrap();
            let x = g.conv_transpose3d(yt, wt, s, p).unwrap();
            assert_eq!(g.shape(x), &shape);
            max_abs_diff(g.value(x), &want)
        })
        .collect()
}

/// Relative mismatch of <conv3d(x), y> and <x, conv_transpose3d(y)>, per case.
pub fn adjoint_errors() -> Vec<f64> {
    CASES
        .iter()
        .enumerate()
        .map(|(i, &(xs, ws, s, p))| {
            let mut r = rng(300 + i as u64);
            let geo = ConvGeometry::for_conv(&xs, &ws, s, p).unwrap();
            let x = uniform(&mut r, xs.iter().product(), -1.0, 1.0);
            let y = uniform(&mut r, geo.output_shape().iter().product(), -1.0, 1.0);
            let w = uniform(&mut r, ws.iter().product(), -1.0, 1.0);
            let mut g = Graph::<f64>::new();
            let xt = g.constant(x.clone(), &xs).unwrap();
            let yt = g.constant(y.clone(), &geo.output_shape()).unwrap();
            let wt = g.constant(w, &ws).unwrap();
            let cx = g.conv3d(xt, wt, s, p).unwrap();
            let ty = g
                .conv_transpose3d_sized(yt, wt, s, p, [xs[2], xs[3], xs[4]])
                .unwrap();
            let lhs = dot(g.value(cx), &y);
            let rhs = dot(&x, g.value(ty));
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
        })
        .collect()
}
