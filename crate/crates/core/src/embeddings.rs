//! Frozen pretrained word vectors in word2vec text format.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("word2vec line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vector for `{token}` has {got} values, table dimension is {dim}")]
    Dimension {
        token: String,
        got: usize,
        dim: usize,
    },
}

/// What a lookup returns for tokens outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum OovPolicy {
    #[default]
    Zero,
    /// A fixed pseudo-random vector per (seed, token), uniform in ±0.25.
    SeededRandom { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
    oov: OovPolicy,
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

impl EmbeddingTable {
    pub fn new(dim: usize, oov: OovPolicy) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            order: Vec::new(),
            vectors: HashMap::new(),
            oov,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn set_oov_policy(&mut self, oov: OovPolicy) {
        self.oov = oov;
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Adds a vector. Returns `false` (keeping the existing vector) if the
    /// token is already present.
    pub fn insert(
        &mut self,
        token: impl Into<String>,
        vector: Vec<f64>,
    ) -> Result<bool, EmbeddingError> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::Dimension {
                token,
                got: vector.len(),
                dim: self.dim,
            });
        }
        if self.vectors.contains_key(&token) {
            return Ok(false);
        }
        self.order.push(token.clone());
        self.vectors.insert(token, vector);
        Ok(true)
    }

    /// Parses `count dim` followed by `token v1 … vdim` lines.
    pub fn from_word2vec_text(text: &str, oov: OovPolicy) -> Result<Self, EmbeddingError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| EmbeddingError::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_header = |s: &str| {
            s.parse::<usize>().map_err(|_| EmbeddingError::Parse {
                line: 1,
                message: format!("bad header `{header}`"),
            })
        };
        let (count, dim) = match fields[..] {
            [c, d] => (parse_header(c)?, parse_header(d)?),
            _ => {
                return Err(EmbeddingError::Parse {
                    line: 1,
                    message: format!("bad header `{header}`"),
                })
            }
        };
        if dim == 0 {
            return Err(EmbeddingError::Parse {
                line: 1,
                message: "dimension must be positive".into(),
            });
        }
        let mut table = EmbeddingTable::new(dim, oov);
        for (line, text) in lines {
            if text.trim().is_empty() {
                continue;
            }
            let mut parts = text.split_whitespace();
            let token = parts.next().expect("non-empty line");
            let values = parts
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Parse {
                    line,
                    message: format!("bad value: {e}"),
                })?;
            if values.len() != dim {
                return Err(EmbeddingError::Parse {
                    line,
                    message: format!("`{token}` has {} values, header says {dim}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::Parse {
                    line,
                    message: format!("`{token}` has a non-finite value"),
                });
            }
            if !table.insert(token, values)? {
                log::warn!(
                    "word2vec line {line}: duplicate token `{token}`, keeping the first vector"
                );
            }
        }
        if table.len() != count {
            log::warn!(
                "word2vec header announces {count} vectors, file has {}",
                table.len()
            );
        }
        Ok(table)
    }

    pub fn load_word2vec_text(path: &Path, oov: OovPolicy) -> Result<Self, EmbeddingError> {
        let text = std::fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_word2vec_text(&text, oov)
    }

    pub fn write_word2vec_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for token in &self.order {
            write!(out, "{token}")?;
            for v in &self.vectors[token] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Vector for `token`, lowercased before lookup.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        let key = token.to_lowercase();
        if let Some(v) = self.vectors.get(&key) {
            return v.clone();
        }
        match self.oov {
            OovPolicy::Zero => vec![0.0; self.dim],
            OovPolicy::SeededRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes(), FNV_OFFSET) ^ seed);
                (0..self.dim)
                    .map(|_| rng.random_range(-0.25..0.25))
                    .collect()
            }
        }
    }

    /// `t × dim` input matrix: one row per token, zero rows past the end,
    /// tokens beyond `t` dropped.
    pub fn embed_utterance<S: AsRef<str>>(&self, tokens: &[S], t: usize) -> Tensor {
        assert!(t >= 1, "t must be positive");
        if tokens.len() > t {
            log::debug!("truncating utterance of {} tokens to {t}", tokens.len());
        }
        let mut data = vec![0.0; t * self.dim];
        for (row, tok) in data.chunks_exact_mut(self.dim).zip(tokens) {
            row.copy_from_slice(&self.lookup(tok.as_ref()));
        }
        Tensor::matrix(t, self.dim, data).expect("t × dim")
    }

    /// Stable digest of the vocabulary and vectors, stored in checkpoints to
    /// detect a mismatched table at evaluation time.
    pub fn fingerprint(&self) -> u64 {
        let mut tokens: Vec<&String> = self.order.iter().collect();
        tokens.sort();
        let mut h = fnv1a(&(self.dim as u64).to_le_bytes(), FNV_OFFSET);
        for t in tokens {
            h = fnv1a(t.as_bytes(), h);
            for v in &self.vectors[t] {
                h = fnv1a(&v.to_bits().to_le_bytes(), h);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "3 4\nthe 0.1 0.2 0.3 0.4\ncat 1 2 3 4\nsat -1 -2 -3 -4\n";

    #[test]
    fn loads_header_and_vectors() {
        let t = EmbeddingTable::from_word2vec_text(SMALL, OovPolicy::Zero).unwrap();
        assert_eq!((t.dim(), t.len()), (4, 3));
        assert_eq!(t.lookup("cat"), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.lookup("CAT"), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn short_line_is_a_parse_error_at_that_line() {
        let text = "3 4\nthe 0.1 0.2 0.3 0.4\ncat 1 2 3\nsat -1 -2 -3 -4\n";
        match EmbeddingTable::from_word2vec_text(text, OovPolicy::Zero) {
            Err(EmbeddingError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(EmbeddingTable::from_word2vec_text("", OovPolicy::Zero).is_err());
        assert!(EmbeddingTable::from_word2vec_text("x y\n", OovPolicy::Zero).is_err());
    }

    #[test]
    fn duplicates_keep_first() {
        let text = "2 1\na 1\na 2\n";
        let t = EmbeddingTable::from_word2vec_text(text, OovPolicy::Zero).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup("a"), vec![1.0]);
    }

    #[test]
    fn embed_pads_and_truncates() {
        let t = EmbeddingTable::from_word2vec_text(SMALL, OovPolicy::Zero).unwrap();
        let empty: [&str; 0] = [];
        let x = t.embed_utterance(&empty, 5);
        assert_eq!(x.shape(), &[5, 4]);
        assert!(x.data().iter().all(|&v| v == 0.0));

        let x = t.embed_utterance(&["the", "cat"], 4);
        assert_eq!(x.row(0), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(x.row(1), &[1.0, 2.0, 3.0, 4.0]);
        assert!(x.row(2).iter().chain(x.row(3)).all(|&v| v == 0.0));

        let x = t.embed_utterance(&["sat", "cat", "the"], 2);
        assert_eq!(x.shape(), &[2, 4]);
        assert_eq!(x.row(0), &[-1.0, -2.0, -3.0, -4.0]);
    }

    #[test]
    fn oov_policies_are_deterministic() {
        let zero = EmbeddingTable::from_word2vec_text(SMALL, OovPolicy::Zero).unwrap();
        assert_eq!(zero.lookup("dog"), vec![0.0; 4]);

        let rand_a =
            EmbeddingTable::from_word2vec_text(SMALL, OovPolicy::SeededRandom { seed: 3 }).unwrap();
        let v1 = rand_a.lookup("dog");
        assert_eq!(v1, rand_a.lookup("Dog"));
        assert_eq!(v1, rand_a.clone().lookup("dog"));
        assert!(v1.iter().any(|&v| v != 0.0));
        assert_ne!(v1, rand_a.lookup("bird"));
        let rand_b =
            EmbeddingTable::from_word2vec_text(SMALL, OovPolicy::SeededRandom { seed: 4 }).unwrap();
        assert_ne!(v1, rand_b.lookup("dog"));
    }

    #[test]
    fn write_then_read_preserves_table() {
        let t = EmbeddingTable::from_word2vec_text(SMALL, OovPolicy::Zero).unwrap();
        let mut buf = Vec::new();
        t.write_word2vec_text(&mut buf).unwrap();
        let back =
            EmbeddingTable::from_word2vec_text(std::str::from_utf8(&buf).unwrap(), OovPolicy::Zero)
                .unwrap();
        assert_eq!(back, t);
        assert_eq!(back.fingerprint(), t.fingerprint());
    }

    #[test]
    fn bundled_fixture_has_fifty_dimensions() {
        let text = include_str!("../tests/fixtures/embeddings50.txt");
        let t = EmbeddingTable::from_word2vec_text(text, OovPolicy::Zero).unwrap();
        assert_eq!(t.dim(), 50);
        assert!(t.len() >= 20);
    }
}
