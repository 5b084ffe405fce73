use geogan_core::synthetic::{
    make_channels, make_granular, sphere_union, ChannelSpec, GranularSpec,
};
use geogan_core::{Axis, DType};
use proptest::prelude::*;

fn lattice_disc(r: f64) -> usize {
    let k = r.ceil() as i64;
    let mut n = 0;
    for a in -k..=k {
        for b in -k..=k {
            if ((a * a + b * b) as f64) <= r * r {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn straight_channel_is_a_lattice_cylinder() {
    for (axis, r) in [(Axis::X, 2.0), (Axis::Y, 2.5), (Axis::Z, 3.0)] {
        let spec = ChannelSpec {
            dims: [32; 3],
            channel_count: 1,
            channel_radius: r,
            amplitude: 0.0,
            axis,
            seed: 3,
            ..ChannelSpec::default()
        };
        let v = make_channels(&spec).unwrap();
        let on = v.to_f32().iter().filter(|&&x| x == 1.0).count();
        assert_eq!(on, 32 * lattice_disc(r), "{axis:?} r {r}");
    }
}

#[test]
fn channels_are_binary_deterministic_and_seed_sensitive() {
    let a = make_channels(&ChannelSpec::default()).unwrap();
    assert_eq!(a.dtype(), DType::BinaryU8);
    assert_eq!(a, make_channels(&ChannelSpec::default()).unwrap());
    let f = a.fraction_on();
    assert!(f > 0.05 && f < 0.6, "fraction {f}");
    for seed in 1..4 {
        let b = make_channels(&ChannelSpec {
            seed,
            ..ChannelSpec::default()
        })
        .unwrap();
        let differ = a
            .to_f32()
            .iter()
            .zip(b.to_f32())
            .filter(|(x, y)| **x != *y)
            .count();
        assert!(
            differ as f64 >= 0.01 * a.len() as f64,
            "seed {seed}: {differ}"
        );
    }
}

#[test]
fn channel_halves_are_comparable() {
    for seed in 0..5 {
        let v = make_channels(&ChannelSpec {
            seed,
            ..ChannelSpec::default()
        })
        .unwrap();
        let half = |lo: usize, hi: usize| {
            let mut on = 0;
            for z in 0..64 {
                for y in 0..64 {
                    for x in lo..hi {
                        on += v.get(x, y, z) as usize;
                    }
                }
            }
            on as f64 / (64.0 * 64.0 * 32.0)
        };
        let (l, r) = (half(0, 32), half(32, 64));
        assert!((l - r).abs() < 0.15, "seed {seed}: {l} vs {r}");
    }
}

#[test]
fn impossible_geometry_is_rejected() {
    assert!(make_channels(&ChannelSpec {
        dims: [0, 4, 4],
        ..ChannelSpec::default()
    })
    .is_err());
    assert!(make_channels(&ChannelSpec {
        channel_radius: -1.0,
        ..ChannelSpec::default()
    })
    .is_err());
    assert!(make_granular(&GranularSpec {
        radius_min: 4.0,
        radius_max: 2.0,
        ..GranularSpec::default()
    })
    .is_err());
}

#[test]
fn granular_spans_unit_interval_and_keeps_porosity() {
    for seed in 0..3 {
        let spec = GranularSpec {
            seed,
            ..GranularSpec::default()
        };
        let v = make_granular(&spec).unwrap();
        let vals = v.to_f32();
        let (lo, hi) = vals
            .iter()
            .fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        assert_eq!((lo, hi), (0.0, 1.0));
        let smoothed = v.threshold(0.5).fraction_on();
        let raw = sphere_union(&spec).unwrap().fraction_on();
        println!("seed {seed}: union {raw:.4}, smoothed+threshold {smoothed:.4}");
        assert!((smoothed - raw).abs() <= 0.05);
        assert_eq!(v, make_granular(&spec).unwrap());
    }
}

#[test]
fn granular_seeds_differ() {
    let a = make_granular(&GranularSpec::default()).unwrap().to_f32();
    let b = make_granular(&GranularSpec {
        seed: 1,
        ..GranularSpec::default()
    })
    .unwrap()
    .to_f32();
    let differ = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    assert!(differ as f64 >= 0.01 * a.len() as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn granular_values_in_range(seed in any::<u64>(), count in 0usize..40, smoothing in 0.0f64..2.0) {
        let v = make_granular(&GranularSpec { dims: [12, 10, 8], sphere_count: count, radius_min: 1.0, radius_max: 3.0, smoothing, seed }).unwrap();
        prop_assert!(v.to_f32().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
