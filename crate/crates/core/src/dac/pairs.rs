use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::math;
use crate::metrics::Partition;
use crate::{Error, Result, Tensor};

/// Clamp applied to similarities before the logarithms of the loss.
pub const LOG_CLAMP: f64 = 1e-7;

/// `[n, k]` per-image label features.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelFeatures(Tensor);

impl LabelFeatures {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Dimension {
                op: "label_features",
                axis: "rank",
                expected: 2,
                found: t.rank(),
            });
        }
        Ok(LabelFeatures(t))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.0.shape()[1];
        &self.0.data()[i * k..(i + 1) * k]
    }
}

/// `n×n` dot products between label features.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(Tensor);

impl SimilarityMatrix {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 || t.shape()[0] != t.shape()[1] {
            return Err(Error::Shape {
                op: "similarity",
                msg: alloc::format!("expected a square matrix, got {:?}", t.shape()),
            });
        }
        Ok(SimilarityMatrix(t))
    }

    pub fn n(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.data()[i * self.n() + j]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }
}

pub fn pairwise_similarity(f: &LabelFeatures) -> SimilarityMatrix {
    let mut g = Graph::no_grad();
    let x = g.input(f.0.clone());
    let s = g.gram(x).expect("rank checked on construction");
    SimilarityMatrix(g.value(s).clone())
}

/// Adaptive selection thresholds: `u(λ) = u0 − λ`, `l(λ) = l0 + λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdState {
    pub lambda: f64,
    pub u0: f64,
    pub l0: f64,
    /// Increment of λ per epoch.
    pub rate: f64,
}

impl ThresholdState {
    pub fn new(u0: f64, l0: f64, rate: f64) -> Self {
        ThresholdState {
            lambda: 0.0,
            u0,
            l0,
            rate,
        }
    }

    /// Initial thresholds for MNIST.
    pub fn mnist() -> Self {
        Self::new(0.99, 0.9, 0.0045)
    }

    /// Initial thresholds for Fashion-MNIST.
    pub fn fashion() -> Self {
        Self::new(0.99, 0.8, 0.0045)
    }

    pub fn upper(&self) -> f64 {
        self.u0 - self.lambda
    }

    pub fn lower(&self) -> f64 {
        self.l0 + self.lambda
    }

    /// The schedule has closed: every pair is now labeled.
    pub fn exhausted(&self) -> bool {
        self.lower() >= self.upper()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdUpdate {
    pub state: ThresholdState,
    pub stop: bool,
}

/// Advances λ by one epoch's increment.
pub fn update_thresholds(t: &ThresholdState) -> ThresholdUpdate {
    let state = ThresholdState {
        lambda: t.lambda + t.rate,
        ..*t
    };
    ThresholdUpdate {
        state,
        stop: state.exhausted(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairLabel {
    /// Same cluster (r = 1).
    Positive,
    /// Different clusters (r = 0).
    Negative,
    /// Not selected for training (v = 0).
    Excluded,
}

/// Pseudo labels for every ordered pair of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLabels {
    n: usize,
    labels: Vec<PairLabel>,
}

impl PairLabels {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> PairLabel {
        self.labels[i * self.n + j]
    }

    /// r_ij as 0/1, zero for excluded pairs.
    pub fn targets(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|l| (*l == PairLabel::Positive) as u8 as f64)
            .collect()
    }

    /// Selection mask v_ij.
    pub fn weights(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|l| (*l != PairLabel::Excluded) as u8 as f64)
            .collect()
    }

    /// `(positive, negative, excluded)` counts; they sum to n².
    pub fn counts(&self) -> (usize, usize, usize) {
        self.labels.iter().fold((0, 0, 0), |(p, q, e), l| match l {
            PairLabel::Positive => (p + 1, q, e),
            PairLabel::Negative => (p, q + 1, e),
            PairLabel::Excluded => (p, q, e + 1),
        })
    }

    pub fn selected(&self) -> usize {
        let (p, q, _) = self.counts();
        p + q
    }
}

/// Positive at or above `u(λ)`, negative below `l(λ)`, excluded between.
/// With `include_diagonal` false the self-pairs are always excluded.
pub fn generate_pair_labels(
    s: &SimilarityMatrix,
    t: &ThresholdState,
    include_diagonal: bool,
) -> PairLabels {
    let n = s.n();
    let (u, l) = (t.upper(), t.lower());
    let mut labels = vec![PairLabel::Excluded; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j && !include_diagonal {
                continue;
            }
            let v = s.get(i, j);
            labels[i * n + j] = if v >= u {
                PairLabel::Positive
            } else if v < l {
                PairLabel::Negative
            } else {
                PairLabel::Excluded
            };
        }
    }
    PairLabels { n, labels }
}

/// Binary cross-entropy of one pair, `−r·ln g − (1−r)·ln(1−g)`, with each
/// log argument floored at [`LOG_CLAMP`]. Terms with a zero factor vanish.
pub fn pair_loss_term(r: f64, g: f64) -> f64 {
    let mut loss = 0.0;
    if r != 0.0 {
        loss -= r * math::ln(g.max(LOG_CLAMP));
    }
    if r != 1.0 {
        loss -= (1.0 - r) * math::ln((1.0 - g).max(LOG_CLAMP));
    }
    loss
}

/// Mean pair loss over selected pairs.
pub fn dac_loss(s: &SimilarityMatrix, labels: &PairLabels) -> Result<f64> {
    if labels.n() != s.n() {
        return Err(Error::LengthMismatch {
            left: s.n(),
            right: labels.n(),
        });
    }
    let mut g = Graph::no_grad();
    let x = g.input(s.0.clone());
    let l = g.pair_loss(x, &labels.targets(), &labels.weights(), LOG_CLAMP)?;
    Ok(g.value(l).data()[0])
}

/// Cluster of each row: index of its largest feature, lowest index on ties.
pub fn cluster_assign(f: &LabelFeatures) -> Partition {
    let labels = (0..f.rows())
        .map(|i| {
            f.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (j, &v)| {
                    if v > bv {
                        (j, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect();
    Partition::new(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(rows: &[&[f64]]) -> LabelFeatures {
        let k = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LabelFeatures::new(Tensor::new(&[rows.len(), k], data).unwrap()).unwrap()
    }

    fn sim1(v: f64) -> SimilarityMatrix {
        SimilarityMatrix::from_tensor(Tensor::new(&[1, 1], vec![v]).unwrap()).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let s = pairwise_similarity(&feats(&[&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(0, 2), 0.0);
        let s = pairwise_similarity(&feats(&[&[0.6, 0.8], &[0.8, 0.6]]));
        assert!((s.get(0, 1) - 0.96).abs() < 1e-15);
    }

    #[test]
    fn trichotomy_with_mnist_thresholds() {
        let t = ThresholdState::mnist();
        assert_eq!(
            generate_pair_labels(&sim1(0.995), &t, true).get(0, 0),
            PairLabel::Positive
        );
        assert_eq!(
            generate_pair_labels(&sim1(0.5), &t, true).get(0, 0),
            PairLabel::Negative
        );
        assert_eq!(
            generate_pair_labels(&sim1(0.95), &t, true).get(0, 0),
            PairLabel::Excluded
        );
        assert_eq!(
            generate_pair_labels(&sim1(0.99), &t, true).get(0, 0),
            PairLabel::Positive
        );
        assert_eq!(
            generate_pair_labels(&sim1(0.9), &t, true).get(0, 0),
            PairLabel::Excluded
        );
        assert_eq!(
            generate_pair_labels(&sim1(1.0), &t, false).get(0, 0),
            PairLabel::Excluded
        );
    }

    #[test]
    fn loss_terms() {
        assert!(pair_loss_term(1.0, 1.0) < 1e-6);
        assert!((pair_loss_term(1.0, 0.9) - 0.105360516).abs() < 1e-9);
        assert!((pair_loss_term(0.0, 0.1) - 0.105360516).abs() < 1e-9);
    }

    #[test]
    fn loss_needs_a_selected_pair() {
        let s = sim1(0.95);
        let labels = generate_pair_labels(&s, &ThresholdState::mnist(), true);
        assert_eq!(dac_loss(&s, &labels), Err(Error::NoSelectedPairs));
    }

    #[test]
    fn schedule_closes_after_ten_epochs() {
        let mut t = ThresholdState::mnist();
        let mut epochs = 0;
        loop {
            let up = update_thresholds(&t);
            epochs += 1;
            assert!(up.state.upper() <= t.upper() && up.state.lower() >= t.lower());
            t = up.state;
            if up.stop {
                break;
            }
        }
        assert_eq!(epochs, 10);
        let frozen = ThresholdState::new(0.99, 0.9, 0.0);
        let up = update_thresholds(&frozen);
        assert_eq!(up.state, frozen);
        assert!(!up.stop);
        assert_eq!(ThresholdState::fashion().l0, 0.8);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(
            cluster_assign(&feats(&[&[0.0, 0.0, 0.0, 1.0]])).labels(),
            &[3]
        );
        assert_eq!(cluster_assign(&feats(&[&[0.4, 0.4, 0.2]])).labels(), &[0]);
    }
}
