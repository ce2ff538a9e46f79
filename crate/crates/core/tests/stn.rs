use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdac_core::autodiff::Graph;
use stdac_core::gradcheck::grad_check;
use stdac_core::params::ParamStore;
use stdac_core::stn::{
    affine_grid, bilinear_sample, linspace, warp, AffineTheta, LocNetConfig, LocalizationNet,
    SamplingGrid, StLayer, IDENTITY, INITIAL_SCALE,
};
use stdac_core::{Error, Tensor};

fn image(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Tensor {
    let mut s = seed.wrapping_add(1);
    Tensor::from_fn(&[n, h, w, c], |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 1000) as f64 / 1000.0
    })
}

fn grid_tensor(points: &[(f64, f64)], h: usize, w: usize) -> SamplingGrid {
    let flat = points.iter().flat_map(|&(x, y)| [x, y]).collect();
    SamplingGrid::from_tensor(Tensor::new(&[1, h, w, 2], flat).unwrap()).unwrap()
}

#[test]
fn locnet_on_mnist_input_yields_six_parameters_near_identity() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = LocNetConfig {
        size: 28,
        channels: 1,
    };
    let net = LocalizationNet::build(&mut store, "st", cfg, &mut rng).unwrap();
    assert!(net.uses_conv_stack());
    let mut g = Graph::no_grad();
    let x = g.input(image(5, 28, 28, 1, 9));
    let theta = net.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(theta), &[5, 6]);
    for row in g.value(theta).data().chunks(6) {
        for (got, want) in row
            .iter()
            .zip([INITIAL_SCALE, 0.0, 0.0, 0.0, INITIAL_SCALE, 0.0])
        {
            assert!((got - want).abs() < 1e-12, "{row:?}");
        }
    }
}

#[test]
fn locnet_rejects_maps_below_the_conv_minimum() {
    assert_eq!(LocNetConfig::min_size(), 28);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = LocalizationNet::build(
        &mut store,
        "st",
        LocNetConfig {
            size: 7,
            channels: 128,
        },
        &mut rng,
    )
    .unwrap_err();
    match err {
        Error::Config(msg) => assert!(msg.contains("28"), "{msg}"),
        other => panic!("expected a configuration error, got {other}"),
    }
    let err = LocalizationNet::build(
        &mut store,
        "st2",
        LocNetConfig {
            size: 27,
            channels: 1,
        },
        &mut rng,
    );
    assert!(err.is_err());
}

#[test]
fn identity_theta_gives_the_canonical_grid() {
    let grid = affine_grid(&AffineTheta::new(&[IDENTITY]), 4, 5).unwrap();
    let (xs, ys) = (linspace(5), linspace(4));
    for i in 0..4 {
        for j in 0..5 {
            assert_eq!(grid.point(0, i, j), (xs[j], ys[i]));
        }
    }
}

#[test]
fn translation_shifts_x_coordinates() {
    let grid = affine_grid(&AffineTheta::new(&[[1.0, 0.0, 0.5, 0.0, 1.0, 0.0]]), 3, 4).unwrap();
    let xs = linspace(4);
    for i in 0..3 {
        for j in 0..4 {
            assert!((grid.point(0, i, j).0 - (xs[j] + 0.5)).abs() < 1e-15);
        }
    }
}

#[test]
fn half_scale_on_three_by_three() {
    let grid = affine_grid(&AffineTheta::new(&[[0.5, 0.0, 0.0, 0.0, 0.5, 0.0]]), 3, 3).unwrap();
    for i in 0..3 {
        let row: Vec<f64> = (0..3).map(|j| grid.point(0, i, j).0).collect();
        assert_eq!(row, vec![-0.5, 0.0, 0.5]);
    }
}

#[test]
fn center_sample_averages_four_corners() {
    let x = Tensor::new(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = bilinear_sample(&x, &grid_tensor(&[(0.0, 0.0)], 1, 1)).unwrap();
    assert_eq!(out.data(), &[2.5]);
}

#[test]
fn far_outside_samples_read_zero_with_zero_input_gradient() {
    let x = image(1, 4, 4, 2, 1);
    let out = bilinear_sample(&x, &grid_tensor(&[(-3.0, -3.0)], 1, 1)).unwrap();
    assert_eq!(out.data(), &[0.0, 0.0]);

    let mut g = Graph::new();
    let xv = g.leaf(x);
    let gv = g.input(Tensor::new(&[1, 1, 1, 2], vec![-3.0, -3.0]).unwrap());
    let y = g.bilinear_sample(xv, gv).unwrap();
    let l = g.sum(y).unwrap();
    g.backward(l).unwrap();
    assert!(g
        .grad(xv)
        .map_or(true, |t| t.data().iter().all(|v| *v == 0.0)));
}

proptest! {
    #[test]
    fn points_beyond_the_padding_band_are_zero(
        size in 2usize..8, dx in 1e-9f64..3.0, dy in 1e-9f64..3.0, seed in any::<u64>(),
    ) {
        let bound = -1.0 - 2.0 / (size as f64 - 1.0);
        let p = (bound - dx, bound - dy);
        let mut g = Graph::new();
        let xv = g.leaf(image(1, size, size, 1, seed));
        let gv = g.input(Tensor::new(&[1, 1, 1, 2], vec![p.0, p.1]).unwrap());
        let y = g.bilinear_sample(xv, gv).unwrap();
        prop_assert_eq!(g.value(y).data()[0], 0.0);
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        prop_assert!(g.grad(xv).map_or(true, |t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn identity_warp_reproduces_the_input(n in 1usize..3, h in 1usize..9, w in 1usize..9, c in 1usize..3, seed in any::<u64>()) {
        let x = image(n, h, w, c, seed);
        let out = warp(&x, &AffineTheta::identity(n)).unwrap();
        prop_assert!(out.max_abs_diff(&x) <= 1e-12);
    }
}

#[test]
fn st_layer_forced_to_identity_is_a_no_op() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = LocalizationNet::build(
        &mut store,
        "st",
        LocNetConfig {
            size: 28,
            channels: 1,
        },
        &mut rng,
    )
    .unwrap();
    let mut layer = StLayer::new(net);
    layer.theta_override = Some(IDENTITY);
    let x = image(3, 28, 28, 1, 2);
    let (out, theta) = layer.apply(&store, &x).unwrap();
    assert!(out.max_abs_diff(&x) <= 1e-12);
    assert_eq!(theta.row(2), IDENTITY);
}

#[test]
fn locnet_parameters_receive_gradient_on_a_toy_image() {
    // 6×6 is below the conv-stack minimum, so the dense-only net is used.
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = LocalizationNet::build_for(
        &mut store,
        "st",
        LocNetConfig {
            size: 6,
            channels: 1,
        },
        &mut rng,
    )
    .unwrap();
    assert!(!net.uses_conv_stack());
    let layer = StLayer::new(net);
    let x = image(1, 6, 6, 1, 4);
    let weights = image(1, 6, 6, 1, 8);

    let loss_at = |store: &ParamStore| {
        let mut g = Graph::no_grad();
        let xv = g.input(x.clone());
        let out = layer.forward(&mut g, store, xv).unwrap();
        let w = g.input(weights.clone());
        let p = g.mul(out.output, w).unwrap();
        let l = g.sum(p).unwrap();
        g.value(l).data()[0]
    };

    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = layer.forward(&mut g, &store, xv).unwrap();
    let w = g.input(weights.clone());
    let p = g.mul(out.output, w).unwrap();
    let l = g.sum(p).unwrap();
    g.backward(l).unwrap();
    store.accumulate_grads(&g);
    drop(g);

    let mut nonzero = 0;
    let h = 1e-5;
    for id in store.ids() {
        let analytic = store.get(id).grad().clone();
        for k in 0..analytic.len() {
            let a = analytic.data()[k];
            if a != 0.0 {
                nonzero += 1;
            }
            let mut probe = store.clone();
            let base = probe.get(id).value().data()[k];
            probe.get_mut(id).value_mut().data_mut()[k] = base + h;
            let plus = loss_at(&probe);
            probe.get_mut(id).value_mut().data_mut()[k] = base - h;
            let minus = loss_at(&probe);
            let numeric = (plus - minus) / (2.0 * h);
            let err = stdac_core::gradcheck::relative_error(a, numeric);
            assert!(
                err <= 1e-4,
                "{} [{k}]: analytic {a} numeric {numeric}",
                store.get(id).name()
            );
        }
    }
    assert!(nonzero > 0);
}

#[test]
fn samples_in_a_batch_are_transformed_independently() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = LocalizationNet::build_flat(
        &mut store,
        "st",
        LocNetConfig {
            size: 8,
            channels: 1,
        },
        &mut rng,
    )
    .unwrap();
    // Give the head nonzero weights so θ depends on the image.
    let head_w = store.id("st/fc2/weight").unwrap();
    let n = store.get(head_w).value().len();
    store
        .get_mut(head_w)
        .value_mut()
        .data_mut()
        .copy_from_slice(
            &image(1, 1, 1, n, 3)
                .data()
                .iter()
                .map(|v| v - 0.5)
                .collect::<Vec<_>>(),
        );
    let layer = StLayer::new(net);
    let a = image(1, 8, 8, 1, 1);
    let b = image(1, 8, 8, 1, 2);
    let ab = Tensor::concat_rows(&[a.clone(), b.clone()]).unwrap();
    let ba = Tensor::concat_rows(&[b, a]).unwrap();
    let (out_ab, th_ab) = layer.apply(&store, &ab).unwrap();
    let (out_ba, th_ba) = layer.apply(&store, &ba).unwrap();
    assert_ne!(th_ab.row(0), th_ab.row(1));
    assert_eq!(th_ab.row(0), th_ba.row(1));
    assert_eq!(th_ab.row(1), th_ba.row(0));
    assert_eq!(out_ab.slice_rows(0, 1), out_ba.slice_rows(1, 2));
    assert_eq!(out_ab.slice_rows(1, 2), out_ba.slice_rows(0, 1));
}

fn smooth(x: f64, y: f64) -> f64 {
    (2.0 * x).sin() * (1.5 * y).cos() + 0.3 * x * y
}

/// Row-major 2×3 maps composed as `first ∘ second` on target coordinates:
/// sampling with `first` and then with `second` reads the source at
/// `first(second(p))`.
fn compose(first: [f64; 6], second: [f64; 6]) -> [f64; 6] {
    let [a, b, c, d, e, f] = first;
    let [p, q, r, s, t, u] = second;
    [
        a * p + b * s,
        a * q + b * t,
        a * r + b * u + c,
        d * p + e * s,
        d * q + e * t,
        d * r + e * u + f,
    ]
}

#[test]
fn consecutive_warps_match_the_composed_map() {
    let size = 33;
    let coords = linspace(size);
    let img = Tensor::from_fn(&[1, size, size, 1], |k| {
        smooth(coords[k % size], coords[k / size])
    });
    // Both maps keep [-1, 1]² inside itself, so zero padding never enters.
    let first = [0.85, -0.08, 0.05, 0.08, 0.85, -0.04];
    let second = [0.9, 0.05, -0.03, -0.05, 0.9, 0.02];
    let twice = warp(
        &warp(&img, &AffineTheta::new(&[first])).unwrap(),
        &AffineTheta::new(&[second]),
    )
    .unwrap();
    let composed_map = compose(first, second);
    let once = warp(&img, &AffineTheta::new(&[composed_map])).unwrap();
    let grid = affine_grid(&AffineTheta::new(&[composed_map]), size, size).unwrap();

    let (mut err_twice, mut err_once, mut gap) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..size {
        for j in 0..size {
            let (x, y) = grid.point(0, i, j);
            let exact = smooth(x, y);
            let k = i * size + j;
            err_twice = err_twice.max((twice.data()[k] - exact).abs());
            err_once = err_once.max((once.data()[k] - exact).abs());
            gap = gap.max((twice.data()[k] - once.data()[k]).abs());
        }
    }
    // Bilinear error bound h²/8·(max|f_xx| + max|f_yy|) per resampling;
    // the maps are contractions, so the second pass obeys the same bound.
    let h = 2.0 / (size as f64 - 1.0);
    let per_pass = h * h / 8.0 * (4.0 + 2.25);
    assert!(err_once <= per_pass, "{err_once}");
    assert!(err_twice <= 2.0 * per_pass, "{err_twice}");
    assert!(gap <= 3.0 * per_pass, "{gap}");
}

#[test]
fn sampler_gradients_at_a_generic_grid() {
    let x = image(1, 5, 6, 1, 17);
    let points: Vec<f64> = [(-0.61, 0.23), (0.37, -0.48), (0.12, 0.71), (-0.29, -0.83)]
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect();
    let grid = Tensor::new(&[1, 2, 2, 2], points).unwrap();
    let r = grad_check(
        |g, v| {
            let y = g.bilinear_sample(v[0], v[1])?;
            g.sum(y)
        },
        &[x, grid],
        1e-5,
    )
    .unwrap();
    assert_eq!(r.skipped, 0);
    assert!(r.max_rel_err <= 1e-4, "{}", r.max_rel_err);
}
