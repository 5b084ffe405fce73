mod common;

use common::{gradcheck, Input};
use geogan_core::arch::{self, ArchSpec, NormMode, OutputMode, KERNEL};
use geogan_core::{Graph, NdArray};
use proptest::prelude::*;

fn small() -> ArchSpec {
    ArchSpec {
        latent_dim: 8,
        base_channels: 4,
        output_size: 32,
        ..ArchSpec::default()
    }
}

fn tiny() -> ArchSpec {
    ArchSpec {
        latent_dim: 3,
        base_channels: 2,
        output_size: 16,
        output_mode: OutputMode::Gray,
        ..ArchSpec::default()
    }
}

/// Hand count: the projection kernel, one transposed kernel per stage, batch
/// norm (4 vectors) after every hidden stage, one output bias; the critic
/// mirrors the widths with a bias per stage plus a 1-channel head.
fn closed_form_count(spec: &ArchSpec) -> (usize, usize) {
    let k3 = KERNEL * KERNEL * KERNEL;
    let n = (spec.output_size.trailing_zeros() - 2) as usize;
    let w: Vec<usize> = (0..n).map(|i| spec.base_channels << (n - 1 - i)).collect();
    let mut g = spec.latent_dim * w[0] * k3 + 4 * w[0];
    for i in 0..n {
        let cout = if i + 1 < n { w[i + 1] } else { 1 };
        g += w[i] * cout * k3;
        g += if i + 1 < n { 4 * cout } else { 1 };
    }
    let mut d = 0;
    let mut cin = 1;
    for i in (0..n).rev() {
        d += w[i] * cin * k3 + w[i];
        cin = w[i];
    }
    d += w[0] * k3 + 1;
    (g, d)
}

#[test]
fn three_upsampling_stages_for_32() {
    assert_eq!(ArchSpec::default().stages(), 3);
    let (g, _) = arch::init::<f32>(&ArchSpec::default(), 0).unwrap();
    let ups = g
        .params
        .tensors
        .iter()
        .filter(|t| t.name.ends_with(".weight") && t.name.starts_with("g.up"))
        .count();
    assert_eq!(ups, 3);
}

#[test]
fn parameter_count_matches_closed_form() {
    for spec in [ArchSpec::default(), small(), tiny()] {
        let (g, d) = arch::init::<f32>(&spec, 1).unwrap();
        let total =
            |p: &arch::ModelParams<f32>| p.tensors.iter().map(|t| t.array.len()).sum::<usize>();
        assert_eq!(
            (total(&g.params), total(&d.params)),
            closed_form_count(&spec),
            "{spec:?}"
        );
    }
}

#[test]
fn init_statistics() {
    let (g, d) = arch::init::<f64>(&ArchSpec::default(), 3).unwrap();
    let kernels: Vec<f64> = g
        .params
        .tensors
        .iter()
        .chain(&d.params.tensors)
        .filter(|t| t.name.ends_with(".weight"))
        .flat_map(|t| t.array.data.clone())
        .collect();
    let n = kernels.len() as f64;
    let mean = kernels.iter().sum::<f64>() / n;
    let std = (kernels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(
        mean.abs() < 1e-3 && (std - 0.02).abs() < 1e-3,
        "mean {mean}, std {std}"
    );
    for t in g.params.tensors.iter().chain(&d.params.tensors) {
        if t.name.ends_with(".bias")
            || t.name.ends_with(".beta")
            || t.name.ends_with("running_mean")
        {
            assert!(t.array.data.iter().all(|&v| v == 0.0), "{}", t.name);
        }
        if t.name.ends_with(".gamma") || t.name.ends_with("running_var") {
            assert!(t.array.data.iter().all(|&v| v == 1.0), "{}", t.name);
        }
    }
}

#[test]
fn generator_shape_range_and_stage_chain() {
    let spec = small();
    let (g, _) = arch::init::<f32>(&spec, 2).unwrap();
    let z = arch::sample_latent::<f32>(2, spec.latent_dim, 4).unwrap();
    let out = arch::generate(&g, &z).unwrap();
    assert_eq!(out.shape, vec![2, 1, 32, 32, 32]);
    assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn output_depends_on_latent() {
    let spec = tiny();
    let (g, _) = arch::init::<f64>(&spec, 5).unwrap();
    let z = arch::sample_latent::<f64>(1, spec.latent_dim, 6).unwrap();
    let mut graph = Graph::new();
    let b = g.params.bind(&mut graph, false).unwrap();
    let zt = graph.leaf_from(&z, true).unwrap();
    let (out, _) = g.forward(&mut graph, &b, zt, NormMode::Eval).unwrap();
    let m = graph.mean(out).unwrap();
    graph.backward(m).unwrap();
    let norm = graph
        .grad(zt)
        .unwrap()
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    assert!(norm > 1e-8, "gradient norm {norm}");
}

#[test]
fn critic_scores_and_sensitivity() {
    let spec = small();
    let (g, mut d) = arch::init::<f32>(&spec, 7).unwrap();
    let z = arch::sample_latent::<f32>(3, spec.latent_dim, 8).unwrap();
    let x = arch::generate(&g, &z).unwrap();
    let before = arch::criticize(&d, &x).unwrap();
    assert_eq!(before.len(), 3);
    for v in &mut d.params.get_mut("d.head.weight").unwrap().data {
        *v *= 2.0;
    }
    let after = arch::criticize(&d, &x).unwrap();
    assert!(before.iter().zip(&after).all(|(a, b)| a != b));
    let wrong = NdArray::<f32>::zeros(&[1, 1, 16, 16, 16]);
    assert!(matches!(
        arch::criticize(&d, &wrong),
        Err(geogan_core::Error::Dimension { .. })
    ));
}

#[test]
fn critic_input_gradient_matches_finite_differences() {
    let spec = tiny();
    let (_, d) = arch::init::<f64>(&spec, 9).unwrap();
    let mut r = common::rng(10);
    let mut worst: f64 = 0.0;
    for _ in 0..2 {
        let x = common::uniform(&mut r, 16 * 16 * 16, 0.0, 1.0);
        let err = gradcheck(
            |g, t| {
                let b = d.params.bind(g, false)?;
                let s = d.forward(g, &b, t[0])?;
                g.sum(s)
            },
            &[Input::new(x, &[1, 1, 16, 16, 16])],
        );
        worst = worst.max(err);
    }
    println!("critic input gradient: max rel err {worst:.2e}");
    assert!(worst < 1e-4);
}

#[test]
fn generator_parameter_gradient_matches_finite_differences() {
    // batch statistics in play (train mode, N = 2)
    let spec = tiny();
    let (g, d) = arch::init::<f64>(&spec, 11).unwrap();
    let z = arch::sample_latent::<f64>(2, spec.latent_dim, 12).unwrap();
    let last = g
        .params
        .tensors
        .iter()
        .position(|t| t.name == "g.up1.weight")
        .unwrap();
    let w = g.params.tensors[last].array.clone();
    let err = gradcheck(
        |graph, t| {
            let mut b = g.params.bind(graph, false)?;
            b.handles[last] = t[0];
            let db = d.params.bind(graph, false)?;
            let (loss, _) = geogan_core::trainer::generator_loss(graph, &d, &db, &g, &b, &z)?;
            Ok(loss)
        },
        &[Input::new(w.data.clone(), &w.shape)],
    );
    println!("generator loss wrt g.up1.weight: max rel err {err:.2e}");
    assert!(err < 1e-3);
}

#[test]
fn latent_moments_over_1e5_draws() {
    let (n, dim) = (100_000, 2);
    let z = arch::sample_latent::<f64>(n, dim, 13).unwrap();
    for c in 0..dim {
        let col: Vec<f64> = (0..n).map(|i| z.data[i * dim + c]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "component {c}: mean {mean}");
        assert!((0.97..1.03).contains(&var), "component {c}: var {var}");
    }
    assert_eq!(z, arch::sample_latent::<f64>(n, dim, 13).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn outputs_stay_in_unit_interval(scale in 0.0f64..50.0, seed in 0u64..1000) {
        let spec = tiny();
        let (g, _) = arch::init::<f64>(&spec, seed).unwrap();
        let mut z = arch::sample_latent::<f64>(2, spec.latent_dim, seed + 1).unwrap();
        z.data.iter_mut().for_each(|v| *v *= scale);
        let out = arch::generate(&g, &z).unwrap();
        prop_assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
