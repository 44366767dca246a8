use serde::{Deserialize, Serialize};

use crate::corpus::EmotionLabel;

const FINE: usize = EmotionLabel::COUNT;
const COARSE: usize = 3;

/// Precision, recall and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
}

/// Per-class scores from a square confusion matrix (rows gold, columns
/// predicted). Empty denominators give 0.
pub fn class_scores<R: AsRef<[usize]>>(confusion: &[R]) -> Vec<ClassScores> {
    let n = confusion.len();
    (0..n)
        .map(|c| {
            let tp = confusion[c].as_ref()[c];
            let support: usize = confusion[c].as_ref().iter().sum();
            let predicted: usize = confusion.iter().map(|r| r.as_ref()[c]).sum();
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 over every row of the matrix. Classes
/// missing from both gold and predictions count as F1 = 0.
pub fn macro_f1<R: AsRef<[usize]>>(confusion: &[R]) -> f64 {
    let scores = class_scores(confusion);
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64
}

fn accuracy<R: AsRef<[usize]>>(confusion: &[R]) -> f64 {
    let total: usize = confusion
        .iter()
        .map(|r| r.as_ref().iter().sum::<usize>())
        .sum();
    if total == 0 {
        return 0.0;
    }
    let trace: usize = (0..confusion.len()).map(|i| confusion[i].as_ref()[i]).sum();
    trace as f64 / total as f64
}

/// Folds a fine confusion matrix onto neutral/positive/negative.
pub fn coarsen(confusion7: &[[usize; FINE]; FINE]) -> [[usize; COARSE]; COARSE] {
    let mut out = [[0; COARSE]; COARSE];
    for g in EmotionLabel::ALL {
        for p in EmotionLabel::ALL {
            out[g.to_coarse().index()][p.to_coarse().index()] += confusion7[g.index()][p.index()];
        }
    }
    out
}

/// Evaluation summary for the seven fine and three coarse classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub acc7: f64,
    pub acc3: f64,
    pub f1_7: f64,
    pub f1_3: f64,
    /// Rows gold, columns predicted, in label index order.
    pub confusion7: [[usize; FINE]; FINE],
    pub confusion3: [[usize; COARSE]; COARSE],
    pub per_class: Vec<ClassScores>,
}

impl Metrics {
    pub fn from_confusion(confusion7: [[usize; FINE]; FINE]) -> Self {
        let confusion3 = coarsen(&confusion7);
        Metrics {
            total: confusion7.iter().flatten().sum(),
            acc7: accuracy(&confusion7),
            acc3: accuracy(&confusion3),
            f1_7: macro_f1(&confusion7),
            f1_3: macro_f1(&confusion3),
            confusion7,
            confusion3,
            per_class: class_scores(&confusion7),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (EmotionLabel, EmotionLabel)>) -> Self {
        Metrics::from_confusion(confusion(pairs))
    }
}

/// Counts `(gold, predicted)` pairs into a 7×7 matrix.
pub fn confusion(
    pairs: impl IntoIterator<Item = (EmotionLabel, EmotionLabel)>,
) -> [[usize; FINE]; FINE] {
    let mut m = [[0; FINE]; FINE];
    for (g, p) in pairs {
        m[g.index()][p.index()] += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EmotionLabel::*;

    #[test]
    fn toy_two_class_macro_f1() {
        // class 0: P = 1/1, R = 1/2 -> 2/3; class 1: P = 2/3, R = 2/2 -> 4/5
        let f1 = macro_f1(&[[1usize, 1], [0, 2]]);
        assert!((f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor() {
        let pairs: Vec<_> = EmotionLabel::ALL
            .iter()
            .flat_map(|&l| [(l, l), (l, l)])
            .collect();
        let m = Metrics::from_pairs(pairs);
        assert_eq!((m.acc7, m.acc3, m.f1_7, m.f1_3), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_neutral_on_the_published_test_counts() {
        let counts = [349, 282, 159, 145, 182, 113, 98];
        let pairs: Vec<_> = EmotionLabel::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&l, n)| std::iter::repeat_n((l, Neutral), n))
            .collect();
        let m = Metrics::from_pairs(pairs);
        assert_eq!(m.total, 1328);
        assert!((m.acc7 - 349.0 / 1328.0).abs() < 1e-12);
        let nonzero_cols = (0..7)
            .filter(|&c| m.confusion7.iter().any(|r| r[c] > 0))
            .count();
        assert_eq!(nonzero_cols, 1);
    }

    #[test]
    fn absent_classes_pull_the_macro_average_down() {
        let m = Metrics::from_pairs([(Joyful, Joyful), (Sad, Sad)]);
        assert!((m.f1_7 - 2.0 / 7.0).abs() < 1e-12);
        assert_eq!(m.per_class[Neutral.index()].f1, 0.0);
    }

    #[test]
    fn coarse_mapping_merges_positive_errors() {
        let m = Metrics::from_pairs([(Joyful, Peaceful), (Mad, Sad), (Neutral, Neutral)]);
        assert!((m.acc7 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.acc3, 1.0);
    }

    fn label() -> impl Strategy<Value = EmotionLabel> {
        (0usize..7).prop_map(|i| EmotionLabel::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn coarse_accuracy_dominates_fine(pairs in prop::collection::vec((label(), label()), 1..200)) {
            let m = Metrics::from_pairs(pairs.clone());
            prop_assert!(m.acc3 >= m.acc7);
            prop_assert_eq!(m.total, pairs.len());
            let mut reversed = pairs;
            reversed.reverse();
            prop_assert_eq!(Metrics::from_pairs(reversed), m);
        }
    }
}
