//! Finite-difference sweeps over every differentiable graph operation, in double
//! precision, ten random instances each. Each entry is the worst relative error
//! seen for one operation.

use super::{away_from_zero, gradcheck, rng, uniform, weighted_sum, Input};
use geogan_core::{Graph, Result, Tensor};

pub const INSTANCES: u64 = 10;

type Unary = fn(&mut Graph<f64>, Tensor) -> Result<Tensor>;
type Binary = fn(&mut Graph<f64>, Tensor, Tensor) -> Result<Tensor>;

fn worst(f: impl Fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(f).fold(0.0, f64::max)
}

pub fn unary() -> Vec<(&'static str, f64)> {
    // (name, op, needs positive input)
    let ops: [(&str, Unary, bool); 11] = [
        ("relu", |g, x| Ok(g.relu(x)), false),
        ("max_with_zero", |g, x| Ok(g.max_with_zero(x)), false),
        ("leaky_relu", |g, x| Ok(g.leaky_relu(x, 0.2)), false),
        ("sigmoid", |g, x| Ok(g.sigmoid(x)), false),
        ("tanh", |g, x| Ok(g.tanh(x)), false),
        ("affine", |g, x| Ok(g.affine(x, -1.7, 0.3)), false),
        ("square", |g, x| Ok(g.square(x)), false),
        ("log", |g, x| g.log(x), true),
        ("sqrt", |g, x| g.sqrt(x), true),
        ("reciprocal", |g, x| g.reciprocal(x), true),
        ("clamp", |g, x| Ok(g.clamp(x, -1.0, 1.0)), false),
    ];
    ops.into_iter()
        .map(|(name, op, positive)| {
            let err = worst(|seed| {
                let mut r = rng(seed);
                let values = if positive {
                    uniform(&mut r, 12, 0.2, 3.0)
                } else {
                    away_from_zero(&mut r, 12, 2.0)
                };
                gradcheck(
                    |g, ts| {
                        let y = op(g, ts[0])?;
                        weighted_sum(g, y, 100 + seed)
                    },
                    &[Input::new(values, &[3, 4])],
                )
            });
            (name, err)
        })
        .collect()
}

/// Same-shape operands plus scalar broadcasting on either side.
pub fn binary() -> Vec<(&'static str, f64)> {
    let ops: [(&str, Binary); 3] = [
        ("add", |g, a, b| g.add(a, b)),
        ("sub", |g, a, b| g.sub(a, b)),
        ("mul", |g, a, b| g.mul(a, b)),
    ];
    ops.into_iter()
        .map(|(name, op)| {
            let err = worst(|seed| {
                let mut r = rng(seed);
                let a = uniform(&mut r, 6, -2.0, 2.0);
                let b = uniform(&mut r, 6, -2.0, 2.0);
                let s = uniform(&mut r, 1, -2.0, 2.0);
                let f = |g: &mut Graph<f64>, ts: &[Tensor]| {
                    let y = op(g, ts[0], ts[1])?;
                    weighted_sum(g, y, 7 + seed)
                };
                gradcheck(f, &[Input::new(a.clone(), &[2, 3]), Input::new(b, &[2, 3])])
                    .max(gradcheck(
                        f,
                        &[Input::new(a.clone(), &[2, 3]), Input::new(s.clone(), &[])],
                    ))
                    .max(gradcheck(f, &[Input::new(s, &[1]), Input::new(a, &[2, 3])]))
            });
            (name, err)
        })
        .collect()
}

pub fn reductions() -> Vec<(&'static str, f64)> {
    let ops: [(&str, Unary); 8] = [
        ("sum", |g, x| g.sum(x)),
        ("mean", |g, x| g.mean(x)),
        ("sum_per_sample", |g, x| g.sum_per_sample(x)),
        ("l2_norm_per_sample", |g, x| g.l2_norm_per_sample(x)),
        ("sum_channels", |g, x| g.sum_channels(x)),
        ("reshape", |g, x| g.reshape(x, &[6, 4])),
        ("broadcast_channels", |g, x| {
            let c = g.sum_channels(x)?;
            g.broadcast_channels(c, &[3, 2, 2, 2])
        }),
        ("broadcast_samples", |g, x| {
            let s = g.sum_per_sample(x)?;
            let m = g.broadcast_samples(s, &[3, 5])?;
            let e = g.sum(m)?;
            g.expand(e, &[2, 2])
        }),
    ];
    ops.into_iter()
        .map(|(name, op)| {
            let err = worst(|seed| {
                let mut r = rng(seed);
                let x = uniform(&mut r, 24, -2.0, 2.0);
                gradcheck(
                    |g, ts| {
                        let y = op(g, ts[0])?;
                        weighted_sum(g, y, 50 + seed)
                    },
                    &[Input::new(x, &[3, 2, 2, 2])],
                )
            });
            (name, err)
        })
        .collect()
}

type Case = ([usize; 5], [usize; 5], usize, usize);

fn conv_sweep(cases: &[Case], transpose: bool) -> f64 {
    worst(|seed| {
        let (xs, ws, s, p) = cases[seed as usize % cases.len()];
        let mut r = rng(seed);
        let x = uniform(&mut r, xs.iter().product(), -1.0, 1.0);
        let w = uniform(&mut r, ws.iter().product(), -1.0, 1.0);
        gradcheck(
            |g, ts| {
                let y = if transpose {
                    g.conv_transpose3d(ts[0], ts[1], s, p)?
                } else {
                    g.conv3d(ts[0], ts[1], s, p)?
                };
                weighted_sum(g, y, seed)
            },
            &[Input::new(x, &xs), Input::new(w, &ws)],
        )
    })
}

pub fn conv3d() -> f64 {
    conv_sweep(
        &[
            ([1, 2, 5, 5, 5], [3, 2, 3, 3, 3], 2, 1),
            ([2, 1, 4, 4, 4], [2, 1, 2, 2, 2], 1, 0),
            ([1, 2, 6, 4, 5], [2, 2, 4, 4, 4], 2, 1),
        ],
        false,
    )
}

pub fn conv_transpose3d() -> f64 {
    conv_sweep(
        &[
            ([1, 2, 2, 2, 2], [2, 3, 4, 4, 4], 2, 1),
            ([2, 1, 3, 3, 3], [1, 2, 3, 3, 3], 1, 1),
            ([1, 3, 1, 1, 1], [3, 2, 4, 4, 4], 1, 0),
        ],
        true,
    )
}

/// conv_transpose -> bias -> relu -> conv -> sigmoid -> mean, every parameter checked.
pub fn generator_like_stack() -> f64 {
    worst(|seed| {
        let mut r = rng(seed);
        let z = uniform(&mut r, 2 * 3, -1.0, 1.0);
        let w1 = uniform(&mut r, 3 * 2 * 64, -0.5, 0.5);
        let b1 = uniform(&mut r, 2, -0.1, 0.1);
        let w2 = uniform(&mut r, 2 * 2 * 27, -0.5, 0.5);
        gradcheck(
            |g, ts| {
                let h = g.conv_transpose3d(ts[0], ts[1], 1, 0)?; // [2,2,4,4,4]
                let h = g.add_channel_bias(h, ts[2])?;
                let h = g.relu(h);
                let y = g.conv3d(h, ts[3], 2, 1)?;
                let y = g.sigmoid(y);
                g.mean(y)
            },
            &[
                Input::new(z, &[2, 3, 1, 1, 1]),
                Input::new(w1, &[3, 2, 4, 4, 4]),
                Input::new(b1, &[2]),
                Input::new(w2, &[2, 2, 3, 3, 3]),
            ],
        )
    })
}

/// d/dx |grad f(x)|^2 with f(x) = sum(x^3); the inner gradient is built with
/// `create_graph` and differentiated again.
pub fn second_order() -> f64 {
    worst(|seed| {
        let mut r = rng(seed);
        let x = uniform(&mut r, 7, -1.5, 1.5);
        gradcheck(
            |g, ts| {
                let sq = g.square(ts[0]);
                let cube = g.mul(sq, ts[0])?;
                let f = g.sum(cube)?;
                let d = g.grad_of(f, ts[0], true)?;
                let d2 = g.square(d);
                g.sum(d2)
            },
            &[Input::new(x, &[7])],
        )
    })
}

/// Second-order derivatives through a conv/leaky-relu critic: the structure the
/// gradient penalty differentiates.
pub fn second_order_through_convolutions() -> f64 {
    worst(|seed| {
        let mut r = rng(seed);
        let x = uniform(&mut r, 2 * 4 * 4 * 4, 0.0, 1.0);
        let w1 = away_from_zero(&mut r, 2 * 64, 0.5);
        let b1 = uniform(&mut r, 2, -0.1, 0.1);
        let w2 = uniform(&mut r, 2 * 8, -0.5, 0.5);
        gradcheck(
            |g, ts| {
                let xv = g.variable(x.clone(), &[2, 1, 4, 4, 4])?;
                let h = g.conv3d(xv, ts[0], 2, 1)?; // [2,2,2,2,2]
                let h = g.add_channel_bias(h, ts[1])?;
                let h = g.leaky_relu(h, 0.2);
                let s = g.conv3d(h, ts[2], 1, 0)?; // [2,1,1,1,1]
                let total = g.sum(s)?;
                let grad = g.grad_of(total, xv, true)?;
                let norm = g.l2_norm_per_sample(grad)?;
                let hinge = g.affine(norm, 1.0, -0.5);
                let hinge = g.max_with_zero(hinge);
                let sq = g.square(hinge);
                g.mean(sq)
            },
            &[
                Input::new(w1, &[2, 1, 4, 4, 4]),
                Input::new(b1, &[2]),
                Input::new(w2, &[1, 2, 2, 2, 2]),
            ],
        )
    })
}

/// Every sweep above, in one list.
pub fn all() -> Vec<(&'static str, f64)> {
    let mut out = unary();
    out.extend(binary());
    out.extend(reductions());
    out.push(("conv3d", conv3d()));
    out.push(("conv_transpose3d", conv_transpose3d()));
    out.push(("generator-like stack", generator_like_stack()));
    out.push(("second order", second_order()));
    out.push((
        "second order through convolutions",
        second_order_through_convolutions(),
    ));
    out
}
