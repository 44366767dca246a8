use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::Serialize;

use super::{
    annotation_confusion, kappa_for, partial_agreement, AgreementError, Annotation, AnnotationItem,
    FoldClass, GoldAssignment, Result, ANNOTATORS_PER_ITEM,
};
use crate::corpus::EmotionLabel;

/// Parses `utterance_id,annotator_id,label` rows (header required), grouping
/// rows by utterance in first-appearance order.
pub fn read_annotations(text: &str) -> Result<Vec<AnnotationItem>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AgreementError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["utterance_id", "annotator_id", "label"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(AgreementError::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Annotation>> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| AgreementError::Parse {
            line,
            message: e.to_string(),
        })?;
        let label: EmotionLabel = rec[2]
            .parse()
            .map_err(|e: crate::corpus::ParseLabelError| AgreementError::Parse {
                line,
                message: e.to_string(),
            })?;
        let id = rec[0].to_string();
        let group = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::with_capacity(ANNOTATORS_PER_ITEM)
        });
        group.push(Annotation {
            annotator: rec[1].to_string(),
            label,
        });
    }
    order
        .into_iter()
        .map(|id| {
            let labels = groups.remove(&id).expect("grouped");
            AnnotationItem::new(id, labels)
        })
        .collect()
}

/// Writes `utterance_id,label,fold,resolution`.
pub fn write_gold_csv<W: Write>(out: W, assignment: &GoldAssignment) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["utterance_id", "label", "fold", "resolution"])?;
    for g in &assignment.gold {
        w.write_record([
            g.utterance_id.as_str(),
            g.label.name(),
            g.fold.name(),
            g.resolution.name(),
        ])?;
    }
    w.flush()
}

fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

/// Agreement summary. `Kappa` and `Partial` are percentages with two
/// decimals, keyed by annotator count.
#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub items: usize,
    #[serde(rename = "Kappa")]
    pub kappa: BTreeMap<String, f64>,
    #[serde(rename = "Partial")]
    pub partial: BTreeMap<String, f64>,
    /// Fold ratios in percent.
    pub folds: BTreeMap<FoldClass, f64>,
    pub fold_counts: BTreeMap<FoldClass, usize>,
    pub majority_coverage: f64,
    pub ranking_coverage: f64,
    pub unresolved: Vec<String>,
    pub labels: Vec<&'static str>,
    /// Rows: gold label; columns: annotator selections.
    pub confusion: Vec<Vec<usize>>,
}

impl AgreementReport {
    pub fn build(items: &[AnnotationItem], assignment: &GoldAssignment) -> Result<Self> {
        let mut kappa = BTreeMap::new();
        let mut partial = BTreeMap::new();
        for k in 2..=ANNOTATORS_PER_ITEM {
            kappa.insert(k.to_string(), percent(kappa_for(items, k)?));
            partial.insert(k.to_string(), percent(partial_agreement(items, k)?));
        }
        let confusion = annotation_confusion(items, &assignment.labels())?;
        Ok(AgreementReport {
            items: items.len(),
            kappa,
            partial,
            folds: assignment
                .folds
                .ratios
                .iter()
                .map(|(&f, &r)| (f, percent(r)))
                .collect(),
            fold_counts: assignment.folds.counts.clone(),
            majority_coverage: assignment.folds.majority_coverage,
            ranking_coverage: assignment.folds.ranking_coverage,
            unresolved: assignment
                .unresolved()
                .map(|g| g.utterance_id.clone())
                .collect(),
            labels: EmotionLabel::ALL.iter().map(|l| l.name()).collect(),
            confusion: confusion.iter().map(|r| r.to_vec()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agreement::assign_gold;

    #[test]
    fn rows_are_grouped_per_utterance() {
        let text = "utterance_id,annotator_id,label\n\
                    u1,a,joyful\nu2,a,sad\nu1,b,Joyful\nu1,c,neutral\nu1,d,joyful\n\
                    u2,b,sad\nu2,c,sad\nu2,d,mad\n";
        let items = read_annotations(text).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].utterance_id, "u1");
        assert_eq!(items[0].annotations()[3].annotator, "d");
    }

    #[test]
    fn short_item_names_the_utterance() {
        let text = "utterance_id,annotator_id,label\nu9,a,sad\nu9,b,sad\nu9,c,sad\n";
        let err = read_annotations(text).unwrap_err();
        assert!(err.to_string().contains("u9"), "{err}");
    }

    #[test]
    fn bad_label_reports_line() {
        let text = "utterance_id,annotator_id,label\nu1,a,sad\nu1,b,glad\n";
        assert_eq!(
            read_annotations(text).unwrap_err(),
            AgreementError::Parse {
                line: 3,
                message: "unknown emotion label `glad`".into()
            }
        );
    }

    #[test]
    fn report_uses_table_style_keys() {
        let text = "utterance_id,annotator_id,label\nu1,a,sad\nu1,b,sad\nu1,c,sad\nu1,d,sad\n\
                    u2,a,mad\nu2,b,mad\nu2,c,mad\nu2,d,mad\n";
        let items = read_annotations(text).unwrap();
        let g = assign_gold(&items).unwrap();
        let report = AgreementReport::build(&items, &g).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["Kappa"]["2"], 100.0);
        assert_eq!(json["Kappa"]["4"], 100.0);
        assert_eq!(json["Partial"]["3"], 100.0);
        assert_eq!(json["folds"]["F1"], 100.0);

        let mut buf = Vec::new();
        write_gold_csv(&mut buf, &g).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "utterance_id,label,fold,resolution\nu1,sad,F1,majority\nu2,mad,F1,majority\n"
        );
    }
}
