//! Random finite-difference cases for every differentiable graph op.
//! Shared by the core gradient tests and the workspace acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdac_core::autodiff::{Graph, Padding, Var};
use stdac_core::gradcheck::{grad_check, GradCheckReport};
use stdac_core::{Result, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const CASES: u64 = 100;

pub struct OpCase {
    pub name: &'static str,
    pub run: fn(u64) -> GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Random linear functional of `y`, so every output coordinate matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = uniform(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.input(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check<F>(build: F, inputs: &[Tensor]) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check(build, inputs, STEP).expect("gradient check runs")
}

fn conv_same(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[2, 4, 4, 2], -1.0, 1.0);
    let k = uniform(&mut r, &[3, 3, 2, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[3], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], Padding::Same)?;
            project(g, y, seed)
        },
        &[x, k, b],
    )
}

fn conv_valid(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[1, 5, 4, 1], -1.0, 1.0);
    let k = uniform(&mut r, &[2, 3, 1, 2], -1.0, 1.0);
    let b = uniform(&mut r, &[2], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], Padding::Valid)?;
            project(g, y, seed)
        },
        &[x, k, b],
    )
}

fn dense(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[3, 4], -1.0, 1.0);
    let w = uniform(&mut r, &[4, 5], -1.0, 1.0);
    let b = uniform(&mut r, &[5], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            project(g, y, seed)
        },
        &[x, w, b],
    )
}

fn maxpool(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[2, 4, 5, 2], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.maxpool2d(v[0])?;
            project(g, y, seed)
        },
        &[x],
    )
}

fn bn_train(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[3, 2, 2, 3], -2.0, 2.0);
    let gamma = uniform(&mut r, &[3], 0.5, 1.5);
    let beta = uniform(&mut r, &[3], -0.5, 0.5);
    check(
        |g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            project(g, y, seed)
        },
        &[x, gamma, beta],
    )
}

fn bn_eval(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[4, 3], -2.0, 2.0);
    let gamma = uniform(&mut r, &[3], 0.5, 1.5);
    let beta = uniform(&mut r, &[3], -0.5, 0.5);
    let mean: Vec<f64> = (0..3).map(|_| r.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..3).map(|_| r.gen_range(0.5..2.0)).collect();
    check(
        |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
            project(g, y, seed)
        },
        &[x, gamma, beta],
    )
}

fn relu(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[4, 6], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.relu(v[0])?;
            project(g, y, seed)
        },
        &[x],
    )
}

fn tanh(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[4, 6], -2.0, 2.0);
    check(
        |g, v| {
            let y = g.tanh(v[0])?;
            project(g, y, seed)
        },
        &[x],
    )
}

fn softmax(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[3, 5], -3.0, 3.0);
    check(
        |g, v| {
            let y = g.softmax(v[0])?;
            project(g, y, seed)
        },
        &[x],
    )
}

fn l2_normalize(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[3, 5], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.l2_normalize_rows(v[0])?;
            project(g, y, seed)
        },
        &[x],
    )
}

fn gram(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[4, 3], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.gram(v[0])?;
            project(g, y, seed)
        },
        &[x],
    )
}

fn affine_grid(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let theta = uniform(&mut r, &[2, 6], -1.0, 1.0);
    check(
        |g, v| {
            let y = g.affine_grid(v[0], 3, 4)?;
            project(g, y, seed)
        },
        &[theta],
    )
}

fn bilinear(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[2, 4, 5, 2], -1.0, 1.0);
    let grid = uniform(&mut r, &[2, 3, 3, 2], -1.2, 1.2);
    check(
        |g, v| {
            let y = g.bilinear_sample(v[0], v[1])?;
            project(g, y, seed)
        },
        &[x, grid],
    )
}

fn warp(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[2, 5, 5, 1], 0.0, 1.0);
    let theta = Tensor::from_fn(&[2, 6], |i| {
        let base = if i % 6 == 0 || i % 6 == 4 { 0.9 } else { 0.0 };
        base + r.gen_range(-0.2..0.2)
    });
    check(
        |g, v| {
            let grid = g.affine_grid(v[1], 5, 5)?;
            let y = g.bilinear_sample(v[0], grid)?;
            project(g, y, seed)
        },
        &[x, theta],
    )
}

fn pair_loss(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let s = uniform(&mut r, &[3, 3], 0.05, 0.95);
    let targets: Vec<f64> = (0..9).map(|_| f64::from(r.gen_range(0..2u8))).collect();
    let mut weights: Vec<f64> = (0..9).map(|_| f64::from(r.gen_range(0..2u8))).collect();
    weights[r.gen_range(0..9)] = 1.0;
    check(|g, v| g.pair_loss(v[0], &targets, &weights, 1e-7), &[s])
}

fn composite(seed: u64) -> GradCheckReport {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut r, &[2, 4, 4, 1], -1.0, 1.0);
    let k = uniform(&mut r, &[3, 3, 1, 2], -1.0, 1.0);
    let kb = uniform(&mut r, &[2], -0.5, 0.5);
    let w = uniform(&mut r, &[8, 3], -1.0, 1.0);
    let wb = uniform(&mut r, &[3], -0.5, 0.5);
    check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], Padding::Same)?;
            let y = g.maxpool2d(y)?;
            let y = g.flatten(y)?;
            let y = g.dense(y, v[3], v[4])?;
            let y = g.softmax(y)?;
            project(g, y, seed)
        },
        &[x, k, kb, w, wb],
    )
}

pub const OPS: &[OpCase] = &[
    OpCase {
        name: "conv2d same",
        run: conv_same,
    },
    OpCase {
        name: "conv2d valid",
        run: conv_valid,
    },
    OpCase {
        name: "dense",
        run: dense,
    },
    OpCase {
        name: "maxpool2d",
        run: maxpool,
    },
    OpCase {
        name: "batch_norm train",
        run: bn_train,
    },
    OpCase {
        name: "batch_norm eval",
        run: bn_eval,
    },
    OpCase {
        name: "relu",
        run: relu,
    },
    OpCase {
        name: "tanh",
        run: tanh,
    },
    OpCase {
        name: "softmax",
        run: softmax,
    },
    OpCase {
        name: "l2_normalize_rows",
        run: l2_normalize,
    },
    OpCase {
        name: "gram",
        run: gram,
    },
    OpCase {
        name: "affine_grid",
        run: affine_grid,
    },
    OpCase {
        name: "bilinear_sample",
        run: bilinear,
    },
    OpCase {
        name: "affine warp",
        run: warp,
    },
    OpCase {
        name: "pair_loss",
        run: pair_loss,
    },
    OpCase {
        name: "conv-pool-dense-softmax",
        run: composite,
    },
];

/// Worst error and coordinate counts over `CASES` seeds.
pub fn sweep(op: &OpCase) -> GradCheckReport {
    let mut total = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for seed in 0..CASES {
        let r = (op.run)(seed);
        total.max_rel_err = total.max_rel_err.max(r.max_rel_err);
        total.checked += r.checked;
        total.skipped += r.skipped;
    }
    total
}
