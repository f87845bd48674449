use serde::{Deserialize, Serialize};

use crate::RetrievalError;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    /// Unit-norm vector of length [`Embedder::dim`].
    fn embed(&self, text: &str) -> Vec<f64>;
    /// Identifies the embedding space; vectors from different ids are not
    /// comparable.
    fn id(&self) -> String;
}

/// Signed feature hashing of lowercase character n-grams, l2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedNgramEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self { dim: 256, n: 3 }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let normalized: String = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        let mut v = vec![0.0; self.dim];
        if chars.len() >= self.n {
            let mut buf = String::new();
            for gram in chars.windows(self.n) {
                buf.clear();
                buf.extend(gram);
                let h = fnv1a(buf.as_bytes());
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[(h % self.dim as u64) as usize] += sign;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    fn id(&self) -> String {
        format!("hashed-char{}-{}", self.n, self.dim)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_vectors() {
        let e = HashedNgramEmbedder::default();
        let a = e.embed("Foam rolling after practice");
        assert_eq!(a, e.embed("Foam rolling after practice"));
        assert_eq!(a.len(), 256);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, e.embed("  foam   ROLLING after practice "));
        let empty = e.embed("");
        assert_eq!(empty[0], 1.0);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
