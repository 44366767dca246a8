//! The base CNN and the four sequence architectures.

mod config;
mod context;

pub use config::{Architecture, ModelConfig, UnknownArchitecture};
pub use context::{window_slots, SceneContext, Slot};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    Checkpoint, CheckpointError, Graph, ParamId, ParamStore, Tensor, TensorError, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
struct Layout {
    conv1: Vec<(ParamId, ParamId)>,
    conv2: Vec<(ParamId, ParamId)>,
    attention: Option<ParamId>,
    fusion: Option<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Utterance feature vector `h` (length `r·f`).
    pub h: Var,
    /// Window-convolution vector `v` (length `d·b`).
    pub seq_features: Option<Var>,
    /// `h × A` (1×k) or `hᵀ × a` (rf×db).
    pub attention: Option<Var>,
    /// Vector entering the fusion convolution.
    pub fusion_input: Option<Var>,
    /// Fused vector `q`.
    pub fused: Option<Var>,
    pub logits: Var,
}

/// Metadata stored alongside model weights in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub embedding_fingerprint: Option<String>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Builds a model with Glorot-uniform weights and zero biases, seeded
    /// from `config.seed`. The fusion kernel takes the absolute value of
    /// its draw.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let (m, f, rf) = (config.embedding_dim, config.filters, config.feature_len());

        let mut conv1 = Vec::with_capacity(config.max_region);
        for rho in 1..=config.max_region {
            let w = p.add_glorot(
                format!("conv1.w.{rho}"),
                &[f, rho * m],
                rho * m,
                f,
                &mut rng,
            )?;
            let b = p.add(format!("conv1.b.{rho}"), Tensor::zeros(&[f]))?;
            conv1.push((w, b));
        }

        let arch = config.architecture;
        let mut conv2 = Vec::new();
        if arch.uses_seq_conv() {
            let d = config.seq_filters;
            for beta in 1..=config.seq_max_region {
                let w = p.add_glorot(
                    format!("conv2.w.{beta}"),
                    &[d, beta * rf],
                    beta * rf,
                    d,
                    &mut rng,
                )?;
                let b = p.add(format!("conv2.b.{beta}"), Tensor::zeros(&[d]))?;
                conv2.push((w, b));
            }
        }

        let attention = match arch {
            Architecture::ScnnCa => {
                Some(p.add_glorot("attn.A", &[rf, config.window], rf, config.window, &mut rng)?)
            }
            Architecture::ScnnVa => {
                let db = config.seq_feature_len();
                Some(p.add_glorot("attn.a", &[1, db], 1, db, &mut rng)?)
            }
            _ => None,
        };

        let fusion = if arch.uses_context() {
            let field = config.fusion_field;
            // Window vectors are non-negative, so a kernel with a negative
            // sum would start with every fused unit dead under ReLU.
            let k = p.add_glorot("fuse.kernel", &[field], field, 1, &mut rng)?;
            for w in p.value_mut(k).data_mut() {
                *w = w.abs();
            }
            let b = p.add("fuse.bias", Tensor::zeros(&[1]))?;
            Some((k, b))
        } else {
            None
        };

        let q = config.head_input_len();
        let c = config.classes;
        let out_w = p.add_glorot("out.w", &[c, q], q, c, &mut rng)?;
        let out_b = p.add("out.b", Tensor::zeros(&[c]))?;

        Ok(Model {
            config,
            params: p,
            layout: Layout {
                conv1,
                conv2,
                attention,
                fusion,
                out: (out_w, out_b),
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Forward pass with this model's own weights.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        history: &[Tensor],
    ) -> Result<Forward, ModelError> {
        self.forward_with(&self.params, g, x, history)
    }

    /// Forward pass reading weights from `store`, which must share this
    /// model's parameter layout. `x` is the `t×m` utterance matrix and
    /// `history` holds earlier feature vectors of the scene, oldest first;
    /// they enter the graph as constants.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: &Tensor,
        history: &[Tensor],
    ) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        if x.shape() != [cfg.max_tokens, cfg.embedding_dim] {
            return Err(ModelError::Tensor(TensorError::Argument(format!(
                "utterance matrix has shape {:?}, expected [{}, {}]",
                x.shape(),
                cfg.max_tokens,
                cfg.embedding_dim
            ))));
        }
        let xv = g.constant(x.clone())?;
        let h = self.encode(store, g, xv)?;
        let mut fwd = Forward {
            h,
            seq_features: None,
            attention: None,
            fusion_input: None,
            fused: None,
            logits: h,
        };

        if cfg.architecture == Architecture::Cnn {
            fwd.logits = self.output(store, g, h)?;
            return Ok(fwd);
        }

        let rows = self.window_rows(g, h, history)?;
        let rf = cfg.feature_len();
        let fusion_input = match cfg.architecture {
            Architecture::Cnn => unreachable!(),
            Architecture::ScnnC => g.concat(&rows)?,
            Architecture::ScnnV => {
                let v = self.seq_conv(store, g, &rows)?;
                fwd.seq_features = Some(v);
                g.concat(&[h, v])?
            }
            Architecture::ScnnCa => {
                let z = g.stack_rows(&rows)?;
                let a = g.param(store, self.layout.attention.expect("attention"))?;
                let h_row = g.reshape(h, &[1, rf])?;
                let ha = g.matmul(h_row, a)?;
                fwd.attention = Some(ha);
                let u = g.matmul(ha, z)?;
                g.reshape(u, &[rf])?
            }
            Architecture::ScnnVa => {
                let v = self.seq_conv(store, g, &rows)?;
                fwd.seq_features = Some(v);
                let db = cfg.seq_feature_len();
                let a = g.param(store, self.layout.attention.expect("attention"))?;
                let h_col = g.reshape(h, &[rf, 1])?;
                let ha = g.matmul(h_col, a)?;
                fwd.attention = Some(ha);
                let v_col = g.reshape(v, &[db, 1])?;
                let u_col = g.matmul(ha, v_col)?;
                let u_row = g.transpose(u_col)?;
                g.reshape(u_row, &[rf])?
            }
        };
        fwd.fusion_input = Some(fusion_input);

        let (kid, bid) = self.layout.fusion.expect("fusion");
        let kernel = g.param(store, kid)?;
        let bias = g.param(store, bid)?;
        let q = g.conv1d(fusion_input, kernel, bias, cfg.fusion_stride)?;
        let q = g.relu(q)?;
        fwd.fused = Some(q);
        fwd.logits = self.output(store, g, q)?;
        Ok(fwd)
    }

    /// `h`: max-pooled ReLU feature maps of every token region, concatenated.
    fn encode(&self, store: &ParamStore, g: &mut Graph, x: Var) -> Result<Var, ModelError> {
        let mut pooled = Vec::with_capacity(self.layout.conv1.len());
        for &(w, b) in &self.layout.conv1 {
            let (w, b) = (g.param(store, w)?, g.param(store, b)?);
            let c = g.conv_text(x, w, b)?;
            let c = g.relu(c)?;
            pooled.push(g.maxpool_time(c)?);
        }
        Ok(g.concat(&pooled)?)
    }

    fn seq_conv(&self, store: &ParamStore, g: &mut Graph, rows: &[Var]) -> Result<Var, ModelError> {
        let y = g.stack_rows(rows)?;
        let mut pooled = Vec::with_capacity(self.layout.conv2.len());
        for &(w, b) in &self.layout.conv2 {
            let (w, b) = (g.param(store, w)?, g.param(store, b)?);
            let c = g.conv_text(y, w, b)?;
            let c = g.relu(c)?;
            pooled.push(g.maxpool_time(c)?);
        }
        Ok(g.concat(&pooled)?)
    }

    fn output(&self, store: &ParamStore, g: &mut Graph, q: Var) -> Result<Var, ModelError> {
        let (w, b) = self.layout.out;
        let (w, b) = (g.param(store, w)?, g.param(store, b)?);
        Ok(g.linear(w, q, b)?)
    }

    fn window_rows(
        &self,
        g: &mut Graph,
        h: Var,
        history: &[Tensor],
    ) -> Result<Vec<Var>, ModelError> {
        let rf = self.config.feature_len();
        let mut consts: Vec<Option<Var>> = vec![None; history.len()];
        let mut rows = Vec::with_capacity(self.config.window);
        for slot in window_slots(history.len(), self.config.window) {
            let var = match slot {
                Slot::Current => h,
                Slot::Previous(i) => match consts[i] {
                    Some(v) => v,
                    None => {
                        if history[i].shape() != [rf] {
                            return Err(ModelError::Tensor(TensorError::Argument(format!(
                                "history vector has shape {:?}, expected [{rf}]",
                                history[i].shape()
                            ))));
                        }
                        let v = g.constant(history[i].clone())?;
                        consts[i] = Some(v);
                        v
                    }
                },
            };
            rows.push(var);
        }
        Ok(rows)
    }

    /// Serialises weights together with the configuration.
    pub fn to_checkpoint(
        &self,
        embedding_fingerprint: Option<String>,
        provenance: serde_json::Value,
    ) -> Result<Checkpoint, ModelError> {
        let meta = CheckpointMeta {
            model: self.config.clone(),
            embedding_fingerprint,
            provenance,
        };
        Ok(Checkpoint {
            meta: serde_json::to_string(&meta)?,
            tensors: self.params.named_values(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, CheckpointMeta), ModelError> {
        let meta: CheckpointMeta = serde_json::from_str(&ck.meta)?;
        let mut model = Model::new(meta.model.clone())?;
        model.params.load_values(&ck.tensors)?;
        Ok((model, meta))
    }
}
