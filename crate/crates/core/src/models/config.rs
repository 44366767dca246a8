use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::conv1d_output_len;

/// The five classifier variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Single-utterance CNN with a dense output layer.
    #[serde(rename = "cnn")]
    Cnn,
    /// Feature vectors of the window concatenated, fused by 1-D convolution.
    #[serde(rename = "scnn-c")]
    ScnnC,
    /// A second convolution over the stacked window, joined with the current vector.
    #[serde(rename = "scnn-v")]
    ScnnV,
    /// `h × A × Z` attention over the stacked window.
    #[serde(rename = "scnn-ca")]
    ScnnCa,
    /// `(hᵀ × a × vᵀ)ᵀ` attention between the current vector and the window convolution.
    #[serde(rename = "scnn-va")]
    ScnnVa,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Cnn,
        Architecture::ScnnC,
        Architecture::ScnnV,
        Architecture::ScnnCa,
        Architecture::ScnnVa,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::ScnnC => "scnn-c",
            Architecture::ScnnV => "scnn-v",
            Architecture::ScnnCa => "scnn-ca",
            Architecture::ScnnVa => "scnn-va",
        }
    }

    /// Whether the model reads previous utterances.
    pub fn uses_context(self) -> bool {
        self != Architecture::Cnn
    }

    /// Whether the model has the sequence convolution over the window.
    pub fn uses_seq_conv(self) -> bool {
        matches!(self, Architecture::ScnnV | Architecture::ScnnVa)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown architecture `{0}` (valid: cnn, scnn-c, scnn-v, scnn-ca, scnn-va)")]
pub struct UnknownArchitecture(pub String);

impl FromStr for Architecture {
    type Err = UnknownArchitecture;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .iter()
            .copied()
            .find(|a| a.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownArchitecture(s.to_string()))
    }
}

/// All model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// `t`: rows of the utterance matrix.
    pub max_tokens: usize,
    /// `m`: embedding width.
    pub embedding_dim: usize,
    /// `r`: token regions 1..=r in the utterance convolution.
    pub max_region: usize,
    /// `f`: filters per token region.
    pub filters: usize,
    /// `b`: sequence regions 1..=b in the window convolution.
    pub seq_max_region: usize,
    /// `d`: filters per sequence region.
    pub seq_filters: usize,
    /// `F`: receptive field of the fusion convolution.
    pub fusion_field: usize,
    /// `S`: stride of the fusion convolution.
    pub fusion_stride: usize,
    /// `k`: window length, the current utterance included.
    pub window: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::ScnnCa,
            max_tokens: 40,
            embedding_dim: 200,
            max_region: 3,
            filters: 100,
            seq_max_region: 2,
            seq_filters: 50,
            fusion_field: 3,
            fusion_stride: 1,
            window: 4,
            classes: 7,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Sets the window from a count of previous utterances (`k = n + 1`).
    pub fn with_previous(mut self, previous: usize) -> Self {
        self.window = previous + 1;
        self
    }

    /// Previous utterances in the window (`k − 1`).
    pub fn previous(&self) -> usize {
        self.window - 1
    }

    /// `r·f`: length of an utterance feature vector.
    pub fn feature_len(&self) -> usize {
        self.max_region * self.filters
    }

    /// `r·f·k`: length of the concatenated window.
    pub fn concat_len(&self) -> usize {
        self.feature_len() * self.window
    }

    /// `d·b`: length of the window-convolution vector.
    pub fn seq_feature_len(&self) -> usize {
        self.seq_max_region * self.seq_filters
    }

    /// `r·f + d·b`.
    pub fn joint_len(&self) -> usize {
        self.feature_len() + self.seq_feature_len()
    }

    /// Length of the vector entering the fusion convolution, if the
    /// architecture has one.
    pub fn fusion_input_len(&self) -> Option<usize> {
        match self.architecture {
            Architecture::Cnn => None,
            Architecture::ScnnC => Some(self.concat_len()),
            Architecture::ScnnV => Some(self.joint_len()),
            Architecture::ScnnCa | Architecture::ScnnVa => Some(self.feature_len()),
        }
    }

    /// Length of the fused vector `q`; `(n − F)/S + 1` after stride padding.
    pub fn fused_len(&self) -> Option<usize> {
        self.fusion_input_len()
            .map(|n| conv1d_output_len(n, self.fusion_field, self.fusion_stride))
    }

    /// Width of the input to the dense output layer.
    pub fn head_input_len(&self) -> usize {
        self.fused_len().unwrap_or_else(|| self.feature_len())
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("max_tokens", self.max_tokens),
            ("embedding_dim", self.embedding_dim),
            ("max_region", self.max_region),
            ("filters", self.filters),
            ("seq_max_region", self.seq_max_region),
            ("seq_filters", self.seq_filters),
            ("fusion_field", self.fusion_field),
            ("fusion_stride", self.fusion_stride),
            ("window", self.window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.classes < 2 {
            return Err(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.max_region > self.max_tokens {
            return Err(format!(
                "max_region {} exceeds max_tokens {}",
                self.max_region, self.max_tokens
            ));
        }
        if self.architecture.uses_seq_conv() && self.seq_max_region > self.window {
            return Err(format!(
                "seq_max_region {} exceeds window {}",
                self.seq_max_region, self.window
            ));
        }
        if let Some(n) = self.fusion_input_len() {
            if self.fusion_field > n {
                return Err(format!(
                    "fusion_field {} exceeds fusion input length {n}",
                    self.fusion_field
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_sizes_of_the_default_shapes() {
        let c = ModelConfig {
            architecture: Architecture::ScnnC,
            ..ModelConfig::default()
        };
        assert_eq!(c.feature_len(), 300);
        assert_eq!(c.concat_len(), 1200);
        assert_eq!(c.fused_len(), Some(1198));

        let v = ModelConfig {
            architecture: Architecture::ScnnV,
            window: 6,
            ..ModelConfig::default()
        };
        assert_eq!(v.seq_feature_len(), 100);
        assert_eq!(v.joint_len(), 400);
        assert_eq!(v.fused_len(), Some(398));
        assert_eq!(ModelConfig::default().with_previous(3).window, 4);
    }

    #[test]
    fn validation_catches_inconsistent_shapes() {
        let bad = ModelConfig {
            architecture: Architecture::ScnnV,
            window: 1,
            ..ModelConfig::default()
        };
        assert!(bad.validate().unwrap_err().contains("seq_max_region"));
        let bad = ModelConfig {
            max_tokens: 2,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            filters: 0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn architecture_tags() {
        for a in Architecture::ALL {
            assert_eq!(a.tag().parse::<Architecture>().unwrap(), a);
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                format!("\"{}\"", a.tag())
            );
        }
        let err = "lstm".parse::<Architecture>().unwrap_err();
        assert!(err.to_string().contains("scnn-va"));
    }
}
