use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::RetrievalError;

/// Maximum chunk length in characters.
pub const CHUNK_CHARS: usize = 800;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub url: String,
    pub title: String,
    pub main_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub source_url: String,
    pub title: String,
    /// Position of the chunk within its document.
    pub index: usize,
    /// Offset of the first character, counted in characters.
    pub offset: usize,
    pub text: String,
}

/// Contiguous, non-overlapping windows of at most `size` characters.
pub fn chunk_text_with(doc: &CleanDocument, size: usize) -> Vec<Chunk> {
    assert!(size > 0, "chunk size must be positive");
    let chars: Vec<char> = doc.main_text.chars().collect();
    chars
        .chunks(size)
        .enumerate()
        .map(|(i, c)| Chunk {
            source_url: doc.url.clone(),
            title: doc.title.clone(),
            index: i,
            offset: i * size,
            text: c.iter().collect(),
        })
        .collect()
}

pub fn chunk_text(doc: &CleanDocument) -> Vec<Chunk> {
    chunk_text_with(doc, CHUNK_CHARS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    /// Insertion position of the chunk in the index.
    pub id: usize,
    pub score: f64,
}

/// Flat exact cosine index over unit vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    pub dimension: usize,
    pub embedder_id: String,
    vectors: Vec<Vec<f64>>,
}

impl VectorIndex {
    pub fn new(dimension: usize, embedder_id: impl Into<String>) -> Self {
        Self { dimension, embedder_id: embedder_id.into(), vectors: Vec::new() }
    }

    pub fn build<'a>(embedder: &dyn Embedder, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut idx = Self::new(embedder.dim(), embedder.id());
        for t in texts {
            idx.vectors.push(embedder.embed(t));
        }
        idx
    }

    pub fn add(&mut self, vector: Vec<f64>) -> Result<usize, RetrievalError> {
        if vector.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, got: vector.len() });
        }
        self.vectors.push(vector);
        Ok(self.vectors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Top `k` by dot product, ties by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, got: query.len() });
        }
        let mut hits: Vec<SearchHit> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(id, v)| SearchHit { id, score: v.iter().zip(query).map(|(a, b)| a * b).sum() })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Embeds `query` with `embedder`, refusing a different embedding space.
    pub fn search_text(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        if embedder.id() != self.embedder_id {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, got: embedder.dim() });
        }
        self.search(&embedder.embed(query), k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashedNgramEmbedder;
    use proptest::prelude::*;

    fn doc(n: usize) -> CleanDocument {
        CleanDocument {
            url: "https://a.org/x".into(),
            title: "t".into(),
            main_text: (0..n).map(|i| char::from(b'a' + (i % 26) as u8)).collect(),
        }
    }

    #[test]
    fn chunk_boundaries() {
        let offs = |n| chunk_text(&doc(n)).iter().map(|c| (c.offset, c.text.chars().count())).collect::<Vec<_>>();
        assert_eq!(offs(2400), [(0, 800), (800, 800), (1600, 800)]);
        assert_eq!(offs(801), [(0, 800), (800, 1)]);
        assert_eq!(offs(800), [(0, 800)]);
        assert!(offs(0).is_empty());
    }

    #[test]
    fn identical_text_scores_one() {
        let e = HashedNgramEmbedder::default();
        let texts = ["ice baths after games", "sleep hygiene for athletes", "hydration and cramps"];
        let idx = VectorIndex::build(&e, texts);
        let hits = idx.search_text(&e, "sleep hygiene for athletes", 2).unwrap();
        assert_eq!(hits[0].id, 1);
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        let all = idx.search_text(&e, "x", 10).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let mut idx = VectorIndex::new(4, "test");
        assert!(idx.add(vec![1.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(matches!(idx.add(vec![1.0]), Err(RetrievalError::DimensionMismatch { expected: 4, got: 1 })));
        assert!(idx.search(&[1.0, 0.0], 1).is_err());
        let other = HashedNgramEmbedder { dim: 4, n: 2 };
        assert!(idx.search_text(&other, "q", 1).is_err());
    }

    #[test]
    fn ties_go_to_lower_id() {
        let mut idx = VectorIndex::new(2, "test");
        for _ in 0..3 {
            idx.add(vec![0.6, 0.8]).unwrap();
        }
        let ids: Vec<usize> = idx.search(&[0.6, 0.8], 3).unwrap().iter().map(|h| h.id).collect();
        assert_eq!(ids, [0, 1, 2]);
    }

    proptest! {
        #[test]
        fn reassembly_is_exact(text in "\\PC{0,3000}", size in 1usize..1000) {
            let d = CleanDocument { url: "u".into(), title: String::new(), main_text: text.clone() };
            let chunks = chunk_text_with(&d, size);
            let mut next = 0;
            for c in &chunks {
                prop_assert_eq!(c.offset, next);
                let n = c.text.chars().count();
                prop_assert!(n <= size && n > 0);
                next += n;
            }
            prop_assert_eq!(chunks.iter().map(|c| c.text.as_str()).collect::<String>(), text);
        }
    }
}
