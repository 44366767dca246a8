//! Inter-annotator agreement and gold-label aggregation for four-way
//! crowd annotation.

mod io;

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::corpus::EmotionLabel;

pub use io::{read_annotations, write_gold_csv, AgreementReport};

/// Annotations per item.
pub const ANNOTATORS_PER_ITEM: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AgreementError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("annotation integrity: {0}")]
    Integrity(String),
    #[error("annotation file line {line}: {message}")]
    Parse { line: u64, message: String },
}

pub type Result<T, E = AgreementError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub annotator: String,
    pub label: EmotionLabel,
}

/// One utterance with its four crowd labels, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationItem {
    pub utterance_id: String,
    labels: [Annotation; ANNOTATORS_PER_ITEM],
}

impl AnnotationItem {
    pub fn new(utterance_id: impl Into<String>, labels: Vec<Annotation>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        let labels: [Annotation; ANNOTATORS_PER_ITEM] =
            labels.try_into().map_err(|v: Vec<Annotation>| {
                AgreementError::Integrity(format!(
                    "utterance `{utterance_id}` has {} annotations, expected {ANNOTATORS_PER_ITEM}",
                    v.len()
                ))
            })?;
        for i in 0..ANNOTATORS_PER_ITEM {
            for j in 0..i {
                if labels[i].annotator == labels[j].annotator {
                    return Err(AgreementError::Integrity(format!(
                        "utterance `{utterance_id}` annotated twice by `{}`",
                        labels[i].annotator
                    )));
                }
            }
        }
        Ok(AnnotationItem {
            utterance_id,
            labels,
        })
    }

    pub fn annotations(&self) -> &[Annotation; ANNOTATORS_PER_ITEM] {
        &self.labels
    }

    pub fn labels(&self) -> [EmotionLabel; ANNOTATORS_PER_ITEM] {
        std::array::from_fn(|i| self.labels[i].label)
    }
}

/// Agreement pattern of one item, named by its label-frequency multiset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum FoldClass {
    /// {4}
    F1,
    /// {3,1}
    F2,
    /// {2,1,1}
    F3,
    /// {2,2}
    F4,
    /// {1,1,1,1}
    F5,
}

impl FoldClass {
    pub const ALL: [FoldClass; 5] = [
        FoldClass::F1,
        FoldClass::F2,
        FoldClass::F3,
        FoldClass::F4,
        FoldClass::F5,
    ];

    /// Folds with a unique majority label.
    pub fn has_majority(self) -> bool {
        matches!(self, FoldClass::F1 | FoldClass::F2 | FoldClass::F3)
    }

    pub fn name(self) -> &'static str {
        match self {
            FoldClass::F1 => "F1",
            FoldClass::F2 => "F2",
            FoldClass::F3 => "F3",
            FoldClass::F4 => "F4",
            FoldClass::F5 => "F5",
        }
    }
}

impl std::fmt::Display for FoldClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn label_counts(labels: &[EmotionLabel]) -> [usize; EmotionLabel::COUNT] {
    let mut counts = [0usize; EmotionLabel::COUNT];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Classifies four labels by their frequency multiset. Permutation invariant.
pub fn classify_fold(labels: &[EmotionLabel]) -> Result<FoldClass> {
    if labels.len() != ANNOTATORS_PER_ITEM {
        return Err(AgreementError::Argument(format!(
            "fold classification needs {ANNOTATORS_PER_ITEM} labels, got {}",
            labels.len()
        )));
    }
    let mut freq: Vec<usize> = label_counts(labels)
        .into_iter()
        .filter(|&c| c > 0)
        .collect();
    freq.sort_unstable_by(|a, b| b.cmp(a));
    Ok(match freq.as_slice() {
        [4] => FoldClass::F1,
        [3, 1] => FoldClass::F2,
        [2, 1, 1] => FoldClass::F3,
        [2, 2] => FoldClass::F4,
        [1, 1, 1, 1] => FoldClass::F5,
        _ => unreachable!("four labels always form one of five multisets"),
    })
}

/// The label held by a strict plurality, if one exists.
fn majority_label(labels: &[EmotionLabel]) -> Option<EmotionLabel> {
    let counts = label_counts(labels);
    let max = *counts.iter().max()?;
    let mut winners = EmotionLabel::ALL
        .iter()
        .filter(|l| counts[l.index()] == max);
    let first = *winners.next()?;
    winners.next().is_none().then_some(first)
}

/// Cohen's kappa between two annotators' label sequences.
///
/// When chance agreement is 1 (both annotators constant on the same label)
/// the result is 1.0. If chance agreement is 1 but observed agreement is
/// not, the ratio is undefined and 0.0 is returned with a warning.
pub fn cohen_kappa(a: &[EmotionLabel], b: &[EmotionLabel]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(AgreementError::Argument(format!(
            "cohen_kappa needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(AgreementError::Argument(
            "cohen_kappa needs at least one item".into(),
        ));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let ca = label_counts(a);
    let cb = label_counts(b);
    let chance: f64 = ca
        .iter()
        .zip(&cb)
        .map(|(&x, &y)| (x as f64 / n) * (y as f64 / n))
        .sum();
    if (1.0 - chance).abs() < f64::EPSILON {
        if observed == 1.0 {
            return Ok(1.0);
        }
        log::warn!("cohen_kappa: chance agreement is 1 with observed {observed}; returning 0");
        return Ok(0.0);
    }
    Ok((observed - chance) / (1.0 - chance))
}

/// Fleiss' kappa for `raters` raters. `items[i][j]` is the number of raters
/// that put item `i` into category `j`.
pub fn fleiss_kappa<C: AsRef<[usize]>>(items: &[C], raters: usize) -> Result<f64> {
    if raters < 2 {
        return Err(AgreementError::Argument(format!(
            "fleiss_kappa needs at least 2 raters, got {raters}"
        )));
    }
    if items.is_empty() {
        return Err(AgreementError::Argument(
            "fleiss_kappa needs at least one item".into(),
        ));
    }
    let categories = items[0].as_ref().len();
    let mut totals = vec![0usize; categories];
    let mut mean_agreement = 0.0;
    let r = raters as f64;
    for (i, item) in items.iter().enumerate() {
        let counts = item.as_ref();
        if counts.len() != categories {
            return Err(AgreementError::Argument(format!(
                "item {i} has {} categories, expected {categories}",
                counts.len()
            )));
        }
        let sum: usize = counts.iter().sum();
        if sum != raters {
            return Err(AgreementError::Argument(format!(
                "item {i} has {sum} ratings, expected {raters}"
            )));
        }
        let sq: usize = counts.iter().map(|c| c * c).sum();
        mean_agreement += (sq as f64 - r) / (r * (r - 1.0));
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    let n_items = items.len() as f64;
    mean_agreement /= n_items;
    let chance: f64 = totals
        .iter()
        .map(|&t| (t as f64 / (n_items * r)).powi(2))
        .sum();
    if (1.0 - chance).abs() < f64::EPSILON {
        return Ok(if mean_agreement == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((mean_agreement - chance) / (1.0 - chance))
}

fn check_k(k: usize) -> Result<()> {
    if !(2..=ANNOTATORS_PER_ITEM).contains(&k) {
        return Err(AgreementError::Argument(format!(
            "annotator count must be in 2..=4, got {k}"
        )));
    }
    Ok(())
}

/// Kappa using the first `k` annotations of every item: Cohen's for two
/// annotators, Fleiss' for three or four.
pub fn kappa_for(items: &[AnnotationItem], k: usize) -> Result<f64> {
    check_k(k)?;
    if k == 2 {
        let a: Vec<_> = items.iter().map(|it| it.labels[0].label).collect();
        let b: Vec<_> = items.iter().map(|it| it.labels[1].label).collect();
        return cohen_kappa(&a, &b);
    }
    let counts: Vec<[usize; EmotionLabel::COUNT]> = items
        .iter()
        .map(|it| label_counts(&it.labels()[..k]))
        .collect();
    fleiss_kappa(&counts, k)
}

/// Fraction of items in which at least two of the first `k` annotators agree.
pub fn partial_agreement(items: &[AnnotationItem], k: usize) -> Result<f64> {
    check_k(k)?;
    if items.is_empty() {
        return Ok(0.0);
    }
    let agreeing = items
        .iter()
        .filter(|it| {
            let l = it.labels();
            (0..k).any(|i| (0..i).any(|j| l[i] == l[j]))
        })
        .count();
    Ok(agreeing as f64 / items.len() as f64)
}

/// How a gold label was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Majority,
    Lae,
    /// No annotator of the item had a scored history; first annotation used.
    Fallback,
}

impl Resolution {
    pub fn name(self) -> &'static str {
        match self {
            Resolution::Majority => "majority",
            Resolution::Lae => "lae",
            Resolution::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldEntry {
    pub utterance_id: String,
    pub label: EmotionLabel,
    pub fold: FoldClass,
    pub resolution: Resolution,
}

/// Disagreement count of one annotator against majority gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotatorRecord {
    pub annotator_id: String,
    /// Labels differing from majority gold on F1–F3 items.
    pub lae: usize,
    /// F1–F3 items this annotator labeled.
    pub items_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub counts: BTreeMap<FoldClass, usize>,
    pub ratios: BTreeMap<FoldClass, f64>,
    /// Fraction resolved by majority vote (F1–F3).
    pub majority_coverage: f64,
    /// Fraction resolved by annotator ranking (F4–F5, including fallbacks).
    pub ranking_coverage: f64,
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldAssignment {
    /// One entry per input item, in input order.
    pub gold: Vec<GoldEntry>,
    pub folds: FoldReport,
    /// Sorted by annotator id.
    pub annotators: Vec<AnnotatorRecord>,
}

impl GoldAssignment {
    pub fn unresolved(&self) -> impl Iterator<Item = &GoldEntry> {
        self.gold
            .iter()
            .filter(|g| g.resolution == Resolution::Fallback)
    }

    pub fn labels(&self) -> Vec<EmotionLabel> {
        self.gold.iter().map(|g| g.label).collect()
    }
}

/// Three-phase voting/ranking.
///
/// 1. Items in F1–F3 take their majority label.
/// 2. Every annotator's LAE is the number of their F1–F3 labels that differ
///    from that gold.
/// 3. Each F4/F5 item takes the label of its annotator with the lowest LAE,
///    ties broken by the smallest annotator id. Annotators with no F1–F3
///    history rank behind every scored annotator; an item whose four
///    annotators are all unscored falls back to its first annotation.
pub fn assign_gold(items: &[AnnotationItem]) -> Result<GoldAssignment> {
    if items.is_empty() {
        return Err(AgreementError::Argument(
            "assign_gold needs at least one item".into(),
        ));
    }
    let folds: Vec<FoldClass> = items
        .iter()
        .map(|it| classify_fold(&it.labels()))
        .collect::<Result<_>>()?;

    let majority: Vec<Option<EmotionLabel>> = items
        .iter()
        .zip(&folds)
        .map(|(it, f)| {
            f.has_majority()
                .then(|| majority_label(&it.labels()).expect("majority fold"))
        })
        .collect();

    let mut records: HashMap<&str, (usize, usize)> = HashMap::new();
    for (it, gold) in items.iter().zip(&majority) {
        for a in &it.labels {
            let entry = records.entry(a.annotator.as_str()).or_default();
            if let Some(g) = gold {
                entry.1 += 1;
                if a.label != *g {
                    entry.0 += 1;
                }
            }
        }
    }

    let mut gold = Vec::with_capacity(items.len());
    for ((it, &fold), maj) in items.iter().zip(&folds).zip(&majority) {
        let (label, resolution) = match maj {
            Some(l) => (*l, Resolution::Majority),
            None => {
                let best = it
                    .labels
                    .iter()
                    .filter_map(|a| {
                        let (lae, scored) = records[a.annotator.as_str()];
                        (scored > 0).then_some((lae, a.annotator.as_str(), a.label))
                    })
                    .min();
                match best {
                    Some((_, _, label)) => (label, Resolution::Lae),
                    None => {
                        log::warn!(
                            "utterance `{}`: no annotator has a scored history",
                            it.utterance_id
                        );
                        (it.labels[0].label, Resolution::Fallback)
                    }
                }
            }
        };
        gold.push(GoldEntry {
            utterance_id: it.utterance_id.clone(),
            label,
            fold,
            resolution,
        });
    }

    let n = items.len() as f64;
    let mut counts: BTreeMap<FoldClass, usize> = FoldClass::ALL.iter().map(|&f| (f, 0)).collect();
    for f in &folds {
        *counts.get_mut(f).expect("all folds present") += 1;
    }
    let ratios = counts.iter().map(|(&f, &c)| (f, c as f64 / n)).collect();
    let majority_count = gold
        .iter()
        .filter(|g| g.resolution == Resolution::Majority)
        .count();
    let unresolved = gold
        .iter()
        .filter(|g| g.resolution == Resolution::Fallback)
        .count();

    let mut annotators: Vec<AnnotatorRecord> = records
        .into_iter()
        .map(|(id, (lae, scored))| AnnotatorRecord {
            annotator_id: id.to_string(),
            lae,
            items_scored: scored,
        })
        .collect();
    annotators.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));

    Ok(GoldAssignment {
        gold,
        folds: FoldReport {
            counts,
            ratios,
            majority_coverage: majority_count as f64 / n,
            ranking_coverage: (items.len() - majority_count) as f64 / n,
            unresolved,
        },
        annotators,
    })
}

/// Raw counts of annotator selections (columns) per gold label (rows).
pub fn annotation_confusion(
    items: &[AnnotationItem],
    gold: &[EmotionLabel],
) -> Result<[[usize; EmotionLabel::COUNT]; EmotionLabel::COUNT]> {
    if items.len() != gold.len() {
        return Err(AgreementError::Argument(format!(
            "{} items but {} gold labels",
            items.len(),
            gold.len()
        )));
    }
    let mut m = [[0usize; EmotionLabel::COUNT]; EmotionLabel::COUNT];
    for (it, g) in items.iter().zip(gold) {
        for a in &it.labels {
            m[g.index()][a.label.index()] += 1;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    fn item(id: &str, labels: [(&str, EmotionLabel); 4]) -> AnnotationItem {
        AnnotationItem::new(
            id,
            labels
                .iter()
                .map(|(a, l)| Annotation {
                    annotator: a.to_string(),
                    label: *l,
                })
                .collect(),
        )
        .unwrap()
    }

    fn anon(id: &str, labels: [EmotionLabel; 4]) -> AnnotationItem {
        item(
            id,
            [
                ("w1", labels[0]),
                ("w2", labels[1]),
                ("w3", labels[2]),
                ("w4", labels[3]),
            ],
        )
    }

    #[test]
    fn fold_examples() {
        assert_eq!(classify_fold(&[Joyful; 4]).unwrap(), FoldClass::F1);
        assert_eq!(
            classify_fold(&[Joyful, Joyful, Neutral, Sad]).unwrap(),
            FoldClass::F3
        );
        assert_eq!(
            classify_fold(&[Joyful, Joyful, Neutral, Neutral]).unwrap(),
            FoldClass::F4
        );
        assert_eq!(
            classify_fold(&[Neutral, Joyful, Joyful, Joyful]).unwrap(),
            FoldClass::F2
        );
        assert_eq!(
            classify_fold(&[Neutral, Joyful, Sad, Mad]).unwrap(),
            FoldClass::F5
        );
        assert!(matches!(
            classify_fold(&[Joyful; 3]),
            Err(AgreementError::Argument(_))
        ));
    }

    #[test]
    fn cohen_kappa_examples() {
        let k = cohen_kappa(
            &[Joyful, Joyful, Neutral, Neutral],
            &[Joyful, Neutral, Neutral, Neutral],
        )
        .unwrap();
        assert!((k - 0.5).abs() < 1e-12);
        let a = [Joyful, Sad, Mad, Joyful];
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        assert!(cohen_kappa(&a, &a[..3]).is_err());
        assert!(cohen_kappa(&[], &[]).is_err());
    }

    #[test]
    fn cohen_kappa_degenerate_cases() {
        assert_eq!(cohen_kappa(&[Sad; 5], &[Sad; 5]).unwrap(), 1.0);
        // Constant but different: chance agreement is 0, kappa is defined.
        assert_eq!(cohen_kappa(&[Sad; 3], &[Mad; 3]).unwrap(), 0.0);
    }

    #[test]
    fn fleiss_kappa_examples() {
        let k = fleiss_kappa(&[[4usize, 0], [2, 2]], 4).unwrap();
        assert!((k - 1.0 / 9.0).abs() < 1e-12, "{k}");
        assert_eq!(
            fleiss_kappa(&[[4usize, 0, 0], [0, 4, 0], [0, 0, 4]], 4).unwrap(),
            1.0
        );
        assert!(fleiss_kappa(&[[3usize, 0], [2, 2]], 4).is_err());
        assert!(fleiss_kappa::<[usize; 2]>(&[], 4).is_err());
    }

    #[test]
    fn partial_agreement_examples() {
        let all_distinct = [anon("u", [Joyful, Neutral, Sad, Mad])];
        assert_eq!(partial_agreement(&all_distinct, 4).unwrap(), 0.0);

        let items = [
            anon("a", [Joyful, Neutral, Sad, Mad]),
            anon("b", [Joyful, Joyful, Sad, Mad]),
        ];
        assert_eq!(partial_agreement(&items, 2).unwrap(), 0.5);
        let repeated = [anon("c", [Joyful, Neutral, Sad, Joyful])];
        assert_eq!(partial_agreement(&repeated, 4).unwrap(), 1.0);
        assert!(partial_agreement(&items, 5).is_err());
        assert!(partial_agreement(&items, 1).is_err());
    }

    #[test]
    fn majority_item_gets_majority_label() {
        let g = assign_gold(&[anon("u", [Joyful, Joyful, Joyful, Neutral])]).unwrap();
        assert_eq!(g.gold[0].label, Joyful);
        assert_eq!(g.gold[0].fold, FoldClass::F2);
        assert_eq!(g.gold[0].resolution, Resolution::Majority);
    }

    /// Five-item fixture traced by hand:
    ///   m1 (N J J S) gold J: w1 +1, w4 +1
    ///   m2 (J N J J) gold J: w2 +1
    ///   m3 (M M S P) gold M: w3 +1, w4 +1
    ///   m4 (S P M M) gold M: w1 +1, w2 +1
    /// LAE w1 2, w2 2, w3 1, w4 2, so the F4 item (J J N N) takes w3's N.
    #[test]
    fn lae_resolution_traced_by_hand() {
        let items = vec![
            anon("m1", [Neutral, Joyful, Joyful, Sad]),
            anon("m2", [Joyful, Neutral, Joyful, Joyful]),
            anon("m3", [Mad, Mad, Scared, Peaceful]),
            anon("m4", [Scared, Peaceful, Mad, Mad]),
            anon("f4", [Joyful, Joyful, Neutral, Neutral]),
        ];
        let g = assign_gold(&items).unwrap();
        let lae: HashMap<_, _> = g
            .annotators
            .iter()
            .map(|r| (r.annotator_id.as_str(), r.lae))
            .collect();
        assert_eq!((lae["w1"], lae["w2"], lae["w3"], lae["w4"]), (2, 2, 1, 2));
        assert!(g.annotators.iter().all(|r| r.items_scored == 4));
        assert_eq!(g.labels(), vec![Joyful, Joyful, Mad, Mad, Neutral]);
        assert_eq!(g.gold[4].fold, FoldClass::F4);
        assert_eq!(g.gold[4].resolution, Resolution::Lae);
        assert!((g.folds.majority_coverage - 0.8).abs() < 1e-12);
        assert!((g.folds.ratios.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lae_ties_go_to_smallest_annotator_id() {
        let items = vec![
            item("m", [("b", Sad), ("a", Sad), ("c", Sad), ("d", Sad)]),
            item("x", [("b", Joyful), ("a", Mad), ("c", Joyful), ("d", Mad)]),
        ];
        let g = assign_gold(&items).unwrap();
        assert_eq!(g.gold[1].label, Mad);
    }

    #[test]
    fn unscored_annotators_rank_last_and_all_unscored_falls_back() {
        let items = vec![
            item("m", [("a", Sad), ("b", Sad), ("c", Sad), ("d", Joyful)]),
            // `new` has no history; `d` is scored with LAE 1 and wins.
            item(
                "x",
                [("new", Mad), ("d", Peaceful), ("p", Scared), ("q", Neutral)],
            ),
            item(
                "y",
                [("p", Mad), ("q", Peaceful), ("r", Scared), ("s", Neutral)],
            ),
        ];
        let g = assign_gold(&items).unwrap();
        assert_eq!(g.gold[1].label, Peaceful);
        assert_eq!(g.gold[1].resolution, Resolution::Lae);
        assert_eq!(g.gold[2].label, Mad);
        assert_eq!(g.gold[2].resolution, Resolution::Fallback);
        assert_eq!(g.folds.unresolved, 1);
    }

    #[test]
    fn item_validation() {
        let two = vec![
            Annotation {
                annotator: "a".into(),
                label: Sad,
            },
            Annotation {
                annotator: "b".into(),
                label: Sad,
            },
        ];
        assert!(matches!(
            AnnotationItem::new("u", two),
            Err(AgreementError::Integrity(_))
        ));
        let dup = vec![
            Annotation {
                annotator: "a".into(),
                label: Sad,
            },
            Annotation {
                annotator: "a".into(),
                label: Sad,
            },
            Annotation {
                annotator: "b".into(),
                label: Sad,
            },
            Annotation {
                annotator: "c".into(),
                label: Sad,
            },
        ];
        assert!(AnnotationItem::new("u", dup).is_err());
    }

    #[test]
    fn confusion_examples() {
        let m = annotation_confusion(&[anon("u", [Joyful; 4])], &[Joyful]).unwrap();
        assert_eq!(m[Joyful.index()][Joyful.index()], 4);
        assert_eq!(m.iter().flatten().sum::<usize>(), 4);

        let m = annotation_confusion(&[anon("u", [Joyful, Joyful, Joyful, Neutral])], &[Joyful])
            .unwrap();
        assert_eq!(m[Joyful.index()][Joyful.index()], 3);
        assert_eq!(m[Joyful.index()][Neutral.index()], 1);
    }
}
