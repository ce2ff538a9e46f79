//! Brute-force references for the clustering metrics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdac_core::metrics::{ari, clustering_accuracy, nmi, Partition};

pub const INSTANCES: u64 = 200;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Best accuracy over every bijection of labels `0..k`.
pub fn brute_force_acc(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    let best = permutations(k)
        .iter()
        .map(|perm| {
            pred.iter()
                .zip(truth)
                .filter(|(p, t)| perm[**p] == **t)
                .count()
        })
        .max()
        .unwrap_or(0);
    best as f64 / pred.len() as f64
}

/// ARI from an explicit O(n²) tally of agreeing and disagreeing pairs.
pub fn pair_counting_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => n11 += 1,
                (true, false) => n10 += 1,
                (false, true) => n01 += 1,
                (false, false) => n00 += 1,
            }
        }
    }
    let den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if den == 0 {
        return 1.0;
    }
    let num = 2 * (n00 * n11 - n01 * n10);
    let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
    (num / g) as f64 / (den / g) as f64
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

fn entropy_of<K: Ord>(labels: impl Iterator<Item = K>, n: f64) -> f64 {
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    counts
        .values()
        .map(|&c| c as f64 / n)
        .map(|p| -p * p.ln())
        .sum()
}

/// NMI as (H(P) + H(T) − H(P,T)) / √(H(P)·H(T)) from raw label counts.
pub fn direct_entropy_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let hp = entropy_of(pred.iter(), n);
    let ht = entropy_of(truth.iter(), n);
    let hj = entropy_of(pred.iter().zip(truth), n);
    match (hp == 0.0, ht == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => ((hp + ht - hj) / (hp * ht).sqrt()).clamp(0.0, 1.0),
    }
}

pub fn random_instance(seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=60);
    let kp = rng.gen_range(1..=6);
    let kt = rng.gen_range(1..=6);
    let pred = (0..n).map(|_| rng.gen_range(0..kp)).collect();
    let truth = (0..n).map(|_| rng.gen_range(0..kt)).collect();
    (pred, truth)
}

pub struct OracleReport {
    pub acc_mismatches: usize,
    pub ari_max_diff: f64,
    pub nmi_max_diff: f64,
}

pub fn compare_random_instances() -> OracleReport {
    let mut r = OracleReport {
        acc_mismatches: 0,
        ari_max_diff: 0.0,
        nmi_max_diff: 0.0,
    };
    for seed in 0..INSTANCES {
        let (p, t) = random_instance(seed);
        let (pp, tp) = (Partition::new(p.clone()), Partition::new(t.clone()));
        if clustering_accuracy(&pp, &tp).unwrap() != brute_force_acc(&p, &t) {
            r.acc_mismatches += 1;
        }
        r.ari_max_diff = r
            .ari_max_diff
            .max((ari(&pp, &tp).unwrap() - pair_counting_ari(&p, &t)).abs());
        r.nmi_max_diff = r
            .nmi_max_diff
            .max((nmi(&pp, &tp).unwrap() - direct_entropy_nmi(&p, &t)).abs());
    }
    r
}
