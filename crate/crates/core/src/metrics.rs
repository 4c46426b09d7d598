//! Evaluation measures for classification, detection and clustering.
//!
//! Clustering F1 is the pair-counting F1: a pair of patterns is a positive
//! when both land in the same predicted cluster, and it is correct when they
//! also share a true class. NMI is normalized by the geometric mean of the
//! two entropies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::novelty::{f1, Decision};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Square matrix over labels `0..k`, with `k` large enough for both inputs.
    pub fn new(truth: &[usize], pred: &[usize]) -> Result<Self> {
        check_lengths(truth.len(), pred.len())?;
        let k = truth.iter().chain(pred).max().map_or(0, |&m| m + 1);
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(pred) {
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Empty("accuracy of no predictions"));
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision and recall of the novel flags; each is 0 when its denominator is.
pub fn detection_prf(truth: &[Decision], pred: &[Decision]) -> Result<DetectionScores> {
    check_lengths(truth.len(), pred.len())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (Decision::Novel, Decision::Novel) => tp += 1,
            (Decision::Normal, Decision::Novel) => fp += 1,
            (Decision::Novel, Decision::Normal) => fn_ += 1,
            (Decision::Normal, Decision::Normal) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(DetectionScores {
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub purity: f64,
    pub nmi: f64,
    pub rand: f64,
    pub pair_f1: f64,
}

/// Sparse contingency table with marginals, keyed by compacted labels.
struct Contingency {
    n: u64,
    cells: BTreeMap<(usize, usize), u64>,
    truth_sizes: BTreeMap<usize, u64>,
    pred_sizes: BTreeMap<usize, u64>,
}

impl Contingency {
    fn new(truth: &[usize], pred: &[usize]) -> Self {
        let mut cells = BTreeMap::new();
        let mut truth_sizes = BTreeMap::new();
        let mut pred_sizes = BTreeMap::new();
        for (&t, &p) in truth.iter().zip(pred) {
            *cells.entry((t, p)).or_insert(0) += 1;
            *truth_sizes.entry(t).or_insert(0) += 1;
            *pred_sizes.entry(p).or_insert(0) += 1;
        }
        Self {
            n: truth.len() as u64,
            cells,
            truth_sizes,
            pred_sizes,
        }
    }
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

fn entropy(sizes: &BTreeMap<usize, u64>, n: f64) -> f64 {
    sizes
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Pair-counting totals: (same in both, same in prediction, same in truth, all pairs).
fn pair_counts(c: &Contingency) -> (u64, u64, u64, u64) {
    let both = c.cells.values().map(|&v| pairs(v)).sum();
    let pred_same = c.pred_sizes.values().map(|&v| pairs(v)).sum();
    let truth_same = c.truth_sizes.values().map(|&v| pairs(v)).sum();
    (both, pred_same, truth_same, pairs(c.n))
}

pub fn purity(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Empty("purity of no assignments"));
    }
    let c = Contingency::new(truth, pred);
    let mut best: BTreeMap<usize, u64> = BTreeMap::new();
    for (&(_, p), &v) in &c.cells {
        let e = best.entry(p).or_insert(0);
        *e = (*e).max(v);
    }
    Ok(best.values().sum::<u64>() as f64 / c.n as f64)
}

/// Normalized mutual information. Two single-cluster partitions score 1;
/// if exactly one side has zero entropy the score is 0.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Empty("NMI of no assignments"));
    }
    let c = Contingency::new(truth, pred);
    let n = c.n as f64;
    let ht = entropy(&c.truth_sizes, n);
    let hp = entropy(&c.pred_sizes, n);
    if c.truth_sizes.len() == 1 && c.pred_sizes.len() == 1 {
        return Ok(1.0);
    }
    if ht <= 0.0 || hp <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (&(t, p), &v) in &c.cells {
        let pij = v as f64 / n;
        let pi = c.truth_sizes[&t] as f64 / n;
        let pj = c.pred_sizes[&p] as f64 / n;
        mi += pij * (pij / (pi * pj)).ln();
    }
    Ok((mi / (ht * hp).sqrt()).clamp(0.0, 1.0))
}

pub fn rand_index(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    if truth.len() < 2 {
        return Err(Error::InsufficientPoints {
            what: "pair counting",
            needed: 2,
            found: truth.len(),
        });
    }
    let (both, pred_same, truth_same, total) = pair_counts(&Contingency::new(truth, pred));
    let neither = total + both - pred_same - truth_same;
    Ok((both + neither) as f64 / total as f64)
}

pub fn pair_f1(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    if truth.len() < 2 {
        return Err(Error::InsufficientPoints {
            what: "pair counting",
            needed: 2,
            found: truth.len(),
        });
    }
    let (both, pred_same, truth_same, _) = pair_counts(&Contingency::new(truth, pred));
    // No co-clustered pair on either side: the partitions agree on every pair.
    if pred_same == 0 && truth_same == 0 {
        return Ok(1.0);
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(f1(ratio(both, pred_same), ratio(both, truth_same)))
}

pub fn clustering_scores(truth: &[usize], pred: &[usize]) -> Result<ClusteringScores> {
    Ok(ClusteringScores {
        purity: purity(truth, pred)?,
        nmi: nmi(truth, pred)?,
        rand: rand_index(truth, pred)?,
        pair_f1: pair_f1(truth, pred)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// O(N²) reference: (rand, pair F1).
    fn brute_pairs(truth: &[usize], pred: &[usize]) -> (f64, f64) {
        let (mut agree, mut total, mut tp, mut fp, mut fn_) = (0, 0, 0, 0, 0);
        for i in 0..truth.len() {
            for j in i + 1..truth.len() {
                let st = truth[i] == truth[j];
                let sp = pred[i] == pred[j];
                total += 1;
                if st == sp {
                    agree += 1;
                }
                match (st, sp) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f = if tp + fp + fn_ == 0 { 1.0 } else { f1(p, r) };
        (agree as f64 / total as f64, f)
    }

    #[test]
    fn identical_singletons_score_one() {
        let t = [4, 3, 5];
        let p = [0, 1, 2];
        let s = clustering_scores(&t, &p).unwrap();
        assert_eq!((s.purity, s.rand, s.pair_f1), (1.0, 1.0, 1.0));
        assert_relative_eq!(s.nmi, 1.0, epsilon = 1e-12);
        assert_eq!(pair_f1(&[0, 1, 2], &[0, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_relative_eq!(accuracy(&[1, 1, 2], &[1, 2, 2]).unwrap(), 2.0 / 3.0);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn confusion_counts() {
        let m = ConfusionMatrix::new(&[0, 0, 1, 2], &[0, 1, 1, 0]).unwrap();
        assert_eq!(m.num_labels(), 3);
        assert_eq!(m.get(0, 1), 1);
        assert_eq!(m.get(2, 0), 1);
        assert_eq!(m.total(), 4);
        assert_eq!(m.correct(), 2);
    }

    #[test]
    fn detection_examples() {
        use Decision::*;
        let perfect = detection_prf(&[Novel, Normal], &[Novel, Normal]).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let silent = detection_prf(&[Novel, Normal], &[Normal, Normal]).unwrap();
        assert_eq!((silent.precision, silent.recall, silent.f1), (0.0, 0.0, 0.0));
        let mixed = detection_prf(&[Novel, Normal, Novel], &[Novel, Novel, Normal]).unwrap();
        assert_eq!((mixed.precision, mixed.recall, mixed.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn one_cluster_against_two_classes() {
        let s = clustering_scores(&[0, 0, 1, 1], &[5, 5, 5, 5]).unwrap();
        assert_eq!(s.purity, 0.5);
        assert_relative_eq!(s.rand, 2.0 / 6.0);
        assert_eq!(s.nmi, 0.0);
        assert_relative_eq!(s.pair_f1, f1(2.0 / 6.0, 1.0));
    }

    #[test]
    fn relabeled_identical_scores_one() {
        let s = clustering_scores(&[0, 0, 1, 2, 2, 2], &[7, 7, 3, 0, 0, 0]).unwrap();
        assert_eq!((s.purity, s.rand, s.pair_f1), (1.0, 1.0, 1.0));
        assert_relative_eq!(s.nmi, 1.0, epsilon = 1e-12);
        let single = clustering_scores(&[4, 4, 4], &[1, 1, 1]).unwrap();
        assert_eq!(
            (single.purity, single.nmi, single.rand, single.pair_f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn pair_measures_need_two() {
        assert!(rand_index(&[0], &[0]).is_err());
        assert!(pair_f1(&[], &[]).is_err());
    }

    #[test]
    fn nmi_known_value() {
        // Independent halves: mutual information zero.
        assert_relative_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0, epsilon = 1e-15);
    }

    fn labelings() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (2usize..=50).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..5, n),
                proptest::collection::vec(0usize..6, n),
            )
        })
    }

    proptest! {
        #[test]
        fn pair_formulas_match_enumeration((t, p) in labelings()) {
            let (r, f) = brute_pairs(&t, &p);
            prop_assert!((rand_index(&t, &p).unwrap() - r).abs() < 1e-12);
            prop_assert!((pair_f1(&t, &p).unwrap() - f).abs() < 1e-12);
        }

        #[test]
        fn scores_bounded_and_permutation_invariant((t, p) in labelings(), shift in 1usize..20) {
            let s = clustering_scores(&t, &p).unwrap();
            for v in [s.purity, s.nmi, s.rand, s.pair_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let relabeled: Vec<usize> = p.iter().map(|&l| (l * 7 + shift) % 97).collect();
            let s2 = clustering_scores(&t, &relabeled).unwrap();
            prop_assert_eq!(s.purity, s2.purity);
            prop_assert!((s.nmi - s2.nmi).abs() < 1e-12);
            prop_assert_eq!(s.rand, s2.rand);
            prop_assert_eq!(s.pair_f1, s2.pair_f1);
        }
    }
}
