use std::io::Write;

use serde::Serialize;

use super::{PipelineError, Result, SceneData};
use crate::autodiff::Graph;
use crate::models::{Architecture, Model, SceneContext};

/// Raw `h × A` products of one scene, one row per utterance, columns
/// oldest window slot first and the current utterance last.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionMap {
    pub scene: String,
    pub window: usize,
    pub utterance_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl AttentionMap {
    /// `utt_index,w_prev{k-1},...,w_prev1,w_current`.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["utt_index".to_string()];
        h.extend((1..self.window).rev().map(|i| format!("w_prev{i}")));
        h.push("w_current".into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(rec)?;
        }
        w.flush()
    }
}

pub fn export_attention(model: &Model, scene: &SceneData) -> Result<AttentionMap> {
    let arch = model.config().architecture;
    if arch != Architecture::ScnnCa {
        return Err(PipelineError::Argument(format!(
            "attention export needs an scnn-ca checkpoint, got {arch}"
        )));
    }
    let window = model.config().window;
    let mut ctx = SceneContext::new(window);
    let mut rows = Vec::with_capacity(scene.examples.len());
    for ex in &scene.examples {
        let mut g = Graph::new();
        let f = model.forward(&mut g, &ex.x, ctx.history())?;
        rows.push(
            g.value(f.attention.expect("scnn-ca attention"))
                .data()
                .to_vec(),
        );
        ctx.push(g.value(f.h).clone());
    }
    Ok(AttentionMap {
        scene: scene.id.clone(),
        window,
        utterance_ids: scene.examples.iter().map(|e| e.id.clone()).collect(),
        rows,
    })
}
