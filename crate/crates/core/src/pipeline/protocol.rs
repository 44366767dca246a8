use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, Dataset, Metrics, PipelineError, Result, TrainConfig};
use crate::corpus::{split_corpus, Corpus, DataSplit, Partition};
use crate::embeddings::EmbeddingTable;
use crate::models::{Architecture, Model, ModelConfig};

/// Settings for the full split, sweep and report run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub split_seed: u64,
    /// Episode counts; `None` scales 77/11/9 to the corpus.
    pub targets: Option<(usize, usize, usize)>,
    /// Previous-utterance counts to sweep.
    pub contexts: Vec<usize>,
    pub architectures: Vec<Architecture>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            split_seed: 0,
            targets: None,
            contexts: (1..=5).collect(),
            architectures: Architecture::ALL.to_vec(),
        }
    }
}

/// 77/11/9 episode proportions for `n` episodes, at least one each in dev
/// and test.
pub fn proportional_targets(n: usize) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(PipelineError::Argument(format!(
            "need at least 3 episodes to split, have {n}"
        )));
    }
    let dev = ((n as f64 * 11.0 / 97.0).round() as usize).max(1);
    let test = ((n as f64 * 9.0 / 97.0).round() as usize).max(1);
    Ok((n - dev - test, dev, test))
}

/// Development-set scores of one architecture at one context size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevRow {
    pub architecture: Architecture,
    /// Previous utterances; `None` for the single-utterance CNN.
    pub context: Option<usize>,
    pub acc7: f64,
    pub f1_7: f64,
    pub best_epoch: usize,
}

/// Test-set scores of an architecture at its best dev context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub architecture: Architecture,
    pub context: Option<usize>,
    pub acc7: f64,
    pub acc3: f64,
    pub f1_7: f64,
    pub f1_3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub split: DataSplit,
    pub dev: Vec<DevRow>,
    pub test: Vec<TestRow>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl ProtocolReport {
    /// Dev Acc7/F1_7 by context (rows) and architecture (columns), then
    /// test Acc7/Acc3/F1_7/F1_3 per architecture, in percent.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let seq: Vec<Architecture> = {
            let mut v: Vec<_> = self
                .dev
                .iter()
                .map(|r| r.architecture)
                .filter(|a| a.uses_context())
                .collect();
            v.dedup();
            v
        };
        let mut contexts: Vec<usize> = self.dev.iter().filter_map(|r| r.context).collect();
        contexts.sort_unstable();
        contexts.dedup();

        s.push_str("## Development\n\n| n |");
        for a in &seq {
            let _ = write!(s, " {a} Acc7 | {a} F1_7 |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|---|".repeat(seq.len()));
        s.push('\n');
        for c in &contexts {
            let _ = write!(s, "| {c} |");
            for a in &seq {
                match self
                    .dev
                    .iter()
                    .find(|r| r.architecture == *a && r.context == Some(*c))
                {
                    Some(r) => {
                        let _ = write!(s, " {} | {} |", pct(r.acc7), pct(r.f1_7));
                    }
                    None => s.push_str(" - | - |"),
                }
            }
            s.push('\n');
        }
        if let Some(r) = self.dev.iter().find(|r| r.context.is_none()) {
            let _ = writeln!(
                s,
                "\nBase {}: Acc7 {} F1_7 {}",
                r.architecture,
                pct(r.acc7),
                pct(r.f1_7)
            );
        }

        s.push_str("\n## Evaluation\n\n| model | n | Acc7 | Acc3 | F1_7 | F1_3 |\n|---|---|---|---|---|---|\n");
        for r in &self.test {
            let n = r.context.map_or("-".to_string(), |c| c.to_string());
            let _ = writeln!(
                s,
                "| {} | {n} | {} | {} | {} | {} |",
                r.architecture,
                pct(r.acc7),
                pct(r.acc3),
                pct(r.f1_7),
                pct(r.f1_3)
            );
        }
        s
    }
}

/// Splits the corpus by episode, trains every architecture at every
/// context size, and scores each architecture on test at the context with
/// the best dev macro-F1 (earliest on ties).
pub fn run_protocol(
    corpus: &Corpus,
    table: &EmbeddingTable,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    proto: &ProtocolConfig,
) -> Result<ProtocolReport> {
    if proto.architectures.is_empty() {
        return Err(PipelineError::Argument("no architectures to run".into()));
    }
    if proto.contexts.is_empty() && proto.architectures.iter().any(|a| a.uses_context()) {
        return Err(PipelineError::Argument("no context sizes to sweep".into()));
    }
    let targets = match proto.targets {
        Some(t) => t,
        None => proportional_targets(corpus.episodes.len())?,
    };
    let split = split_corpus(corpus, proto.split_seed, targets)?;
    let t = model_cfg.max_tokens;
    let train_set = Dataset::from_partition(corpus, &split, Partition::Train, table, t)?;
    let dev_set = Dataset::from_partition(corpus, &split, Partition::Dev, table, t)?;
    let test_set = Dataset::from_partition(corpus, &split, Partition::Test, table, t)?;

    let mut dev_rows = Vec::new();
    let mut test_rows = Vec::new();
    for &arch in &proto.architectures {
        let contexts: Vec<Option<usize>> = if arch.uses_context() {
            proto.contexts.iter().map(|&c| Some(c)).collect()
        } else {
            vec![None]
        };
        let mut best: Option<(f64, Option<usize>, Metrics)> = None;
        for context in contexts {
            let mut cfg = ModelConfig {
                architecture: arch,
                ..model_cfg.clone()
            };
            if let Some(c) = context {
                cfg = cfg.with_previous(c);
            }
            let mut model = Model::new(cfg.clone())?;
            let snapshot = serde_json::json!({ "model": cfg, "train": train_cfg, "split": split });
            let log = train(&mut model, &train_set, &dev_set, train_cfg, snapshot)?;
            let dev = evaluate(&model, &dev_set)?;
            log::info!(
                "{arch} n={context:?}: dev acc7 {:.4} f1_7 {:.4}",
                dev.acc7,
                dev.f1_7
            );
            dev_rows.push(DevRow {
                architecture: arch,
                context,
                acc7: dev.acc7,
                f1_7: dev.f1_7,
                best_epoch: log.best_epoch,
            });
            if best.as_ref().is_none_or(|(f, _, _)| dev.f1_7 > *f) {
                best = Some((dev.f1_7, context, evaluate(&model, &test_set)?));
            }
        }
        let (_, context, m) = best.expect("at least one run");
        test_rows.push(TestRow {
            architecture: arch,
            context,
            acc7: m.acc7,
            acc3: m.acc3,
            f1_7: m.f1_7,
            f1_3: m.f1_3,
        });
    }
    Ok(ProtocolReport {
        split,
        dev: dev_rows,
        test: test_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions_match_the_reference_split() {
        assert_eq!(proportional_targets(97).unwrap(), (77, 11, 9));
        assert_eq!(proportional_targets(3).unwrap(), (1, 1, 1));
        assert!(proportional_targets(2).is_err());
    }
}
