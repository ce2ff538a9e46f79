//! Clustering evaluation: accuracy under the best label matching,
//! normalized mutual information and adjusted Rand index.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Cluster label per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition(Vec<usize>);

impl Partition {
    pub fn new(labels: Vec<usize>) -> Self {
        Partition(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Relabels to `0..k` in order of first appearance; returns `k`.
    pub fn compact(&self) -> (Vec<usize>, usize) {
        let mut map = BTreeMap::new();
        let out = self
            .0
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        (out, map.len())
    }
}

impl From<Vec<usize>> for Partition {
    fn from(v: Vec<usize>) -> Self {
        Partition(v)
    }
}

impl From<&[u8]> for Partition {
    fn from(v: &[u8]) -> Self {
        Partition(v.iter().map(|&l| l as usize).collect())
    }
}

/// Joint counts of predicted (rows) vs true (columns) clusters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

pub fn contingency_table(pred: &Partition, truth: &Partition) -> Result<ContingencyTable> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let (p, kp) = pred.compact();
    let (t, kt) = truth.compact();
    let mut counts = vec![vec![0u64; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        counts[a][b] += 1;
    }
    let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
    let col_sums = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    Ok(ContingencyTable {
        counts,
        row_sums,
        col_sums,
        total: pred.len() as u64,
    })
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian
/// method with potentials, O(n³)). Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let cur = cost[r0 - 1][c - 1] - u[r0] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for c in 1..=n {
        if owner[c] > 0 {
            assignment[owner[c] - 1] = c - 1;
        }
    }
    assignment
}

/// Fraction of samples matched under the best one-to-one mapping of
/// predicted to true clusters.
pub fn clustering_accuracy(pred: &Partition, truth: &Partition) -> Result<f64> {
    let table = contingency_table(pred, truth)?;
    let k = table.counts.len().max(table.col_sums.len());
    let count = |i: usize, j: usize| {
        table
            .counts
            .get(i)
            .and_then(|r| r.get(j))
            .copied()
            .unwrap_or(0)
    };
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| -(count(i, j) as f64)).collect())
        .collect();
    let assignment = min_cost_assignment(&cost);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| count(i, j))
        .sum();
    Ok(matched as f64 / table.total as f64)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * math::ln(p)
        })
        .sum()
}

/// Mutual information normalized by the geometric mean of the two
/// entropies (natural log). Both entropies zero gives 1, exactly one
/// zero gives 0.
pub fn nmi(pred: &Partition, truth: &Partition) -> Result<f64> {
    let t = contingency_table(pred, truth)?;
    let n = t.total as f64;
    let hp = entropy(&t.row_sums, n);
    let ht = entropy(&t.col_sums, n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    if is_relabeling(&t) {
        // I = H(P) = H(T) exactly, but the sums below would round differently
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * math::ln(c * n / (t.row_sums[i] as f64 * t.col_sums[j] as f64));
        }
    }
    Ok((mi / math::sqrt(hp * ht)).clamp(0.0, 1.0))
}

/// Every cluster of each partition meets exactly one cluster of the other.
fn is_relabeling(t: &ContingencyTable) -> bool {
    let rows_ok = t
        .counts
        .iter()
        .all(|r| r.iter().filter(|&&c| c > 0).count() <= 1);
    let cols_ok = (0..t.col_sums.len()).all(|j| t.counts.iter().filter(|r| r[j] > 0).count() <= 1);
    rows_ok && cols_ok
}

/// Adjusted Rand index from pair counts.
pub fn ari(pred: &Partition, truth: &Partition) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: pred.len(),
        });
    }
    let t = contingency_table(pred, truth)?;
    // exact integer ratio, rounded once: 2(index·N − a·b) / ((a+b)·N − 2a·b)
    let c2 = |c: u64| (c as i128) * (c as i128 - 1) / 2;
    let index: i128 = t.counts.iter().flatten().map(|&c| c2(c)).sum();
    let a: i128 = t.row_sums.iter().map(|&c| c2(c)).sum();
    let b: i128 = t.col_sums.iter().map(|&c| c2(c)).sum();
    let n = c2(t.total);
    let den = (a + b) * n - 2 * a * b;
    if den == 0 {
        // only when both partitions are all-singletons or a single cluster
        return Ok(1.0);
    }
    Ok(ratio(2 * (index * n - a * b), den))
}

/// `num / den` after reducing by the gcd, so the division is correctly
/// rounded whenever the reduced terms fit in 53 bits.
fn ratio(num: i128, den: i128) -> f64 {
    let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
    (num / g) as f64 / (den / g) as f64
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// ACC, NMI and ARI of one partition against the truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn score(pred: &Partition, truth: &Partition) -> Result<Scores> {
    Ok(Scores {
        acc: clustering_accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
    })
}
