use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::index::CleanDocument;

/// Documents kept after reranking.
pub const TOP_M: usize = 5;

pub trait Scorer: Send + Sync {
    /// One relevance score per document, higher is better.
    fn score_all(&self, query: &str, docs: &[CleanDocument]) -> Vec<f64>;
}

/// Adapts a pairwise `(query, document text) -> score` function, such as a
/// cross-encoder call.
pub struct Pairwise<F>(pub F);

impl<F: Fn(&str, &str) -> f64 + Send + Sync> Scorer for Pairwise<F> {
    fn score_all(&self, query: &str, docs: &[CleanDocument]) -> Vec<f64> {
        docs.iter().map(|d| (self.0)(query, &d.main_text)).collect()
    }
}

const STOPWORDS: [&str; 24] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on", "or", "that", "the",
    "this", "to", "was", "with", "how", "what",
];

pub fn terms(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

/// Share of the query's idf mass found in the document (title plus text).
/// Document frequencies come from the batch being ranked.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalScorer;

impl Scorer for LexicalScorer {
    fn score_all(&self, query: &str, docs: &[CleanDocument]) -> Vec<f64> {
        let doc_terms: Vec<HashSet<String>> =
            docs.iter().map(|d| terms(&format!("{} {}", d.title, d.main_text)).into_iter().collect()).collect();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for set in &doc_terms {
            for t in set {
                *df.entry(t.as_str()).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let q: Vec<String> = terms(query).into_iter().collect::<HashSet<_>>().into_iter().collect();
        let idf = |t: &str| (1.0 + n / (1.0 + *df.get(t).unwrap_or(&0) as f64)).ln();
        let total: f64 = q.iter().map(|t| idf(t)).sum();
        doc_terms
            .iter()
            .map(|set| {
                if total == 0.0 {
                    return 0.0;
                }
                q.iter().filter(|t| set.contains(*t)).map(|t| idf(t)).sum::<f64>() / total
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub doc: CleanDocument,
    pub score: f64,
}

/// Scores, sorts descending and keeps `top_m`. Equal scores keep input
/// order, except that documents with identical text are ordered by url.
pub fn rerank(query: &str, docs: Vec<CleanDocument>, scorer: &dyn Scorer, top_m: usize) -> Vec<ScoredDocument> {
    let scores = scorer.score_all(query, &docs);
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    let groups: Vec<usize> = docs.iter().enumerate().map(|(i, d)| *first_seen.entry(d.main_text.as_str()).or_insert(i)).collect();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then(groups[a].cmp(&groups[b])).then_with(|| docs[a].url.cmp(&docs[b].url))
    });
    let mut slots: Vec<Option<CleanDocument>> = docs.into_iter().map(Some).collect();
    order
        .into_iter()
        .take(top_m)
        .map(|i| ScoredDocument { doc: slots[i].take().expect("each index once"), score: scores[i] })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(url: &str, text: &str) -> CleanDocument {
        CleanDocument { url: url.into(), title: String::new(), main_text: text.into() }
    }

    #[test]
    fn matching_doc_ranks_first() {
        let docs = vec![d("https://a.org/1", "tax policy news"), d("https://a.org/2", "foam rolling reduces muscle soreness")];
        let out = rerank("reduce muscle soreness foam rolling", docs, &LexicalScorer, 5);
        assert_eq!(out[0].doc.url, "https://a.org/2");
        assert_eq!(out[1].score, 0.0);
        assert!(out[0].score > 0.5 && out[0].score <= 1.0);
    }

    #[test]
    fn identical_docs_order_by_url() {
        let docs = vec![d("https://z.org/", "same text"), d("https://b.org/", "same text"), d("https://m.org/", "same text")];
        let urls: Vec<String> = rerank("text", docs, &LexicalScorer, 5).into_iter().map(|s| s.doc.url).collect();
        assert_eq!(urls, ["https://b.org/", "https://m.org/", "https://z.org/"]);
    }

    #[test]
    fn constant_scorer_preserves_order() {
        let docs: Vec<_> = ["c", "a", "b", "d", "e", "f"].iter().map(|u| d(&format!("https://{u}.org/"), u)).collect();
        let out = rerank("q", docs, &Pairwise(|_: &str, _: &str| 1.0), TOP_M);
        let urls: Vec<&str> = out.iter().map(|s| s.doc.url.as_str()).collect();
        assert_eq!(urls, ["https://c.org/", "https://a.org/", "https://b.org/", "https://d.org/", "https://e.org/"]);
    }

    #[test]
    fn idf_weights_rare_terms() {
        // "sleep" is in every document, "melatonin" in one.
        let docs = vec![d("https://a.org/1", "sleep melatonin"), d("https://a.org/2", "sleep"), d("https://a.org/3", "sleep")];
        let s = LexicalScorer.score_all("sleep melatonin", &docs);
        let idf_sleep = (1.0f64 + 3.0 / 4.0).ln();
        let idf_mel = (1.0f64 + 3.0 / 2.0).ln();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - idf_sleep / (idf_sleep + idf_mel)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn output_is_sorted_and_bounded(texts in proptest::collection::vec("[a-e ]{0,20}", 1..12), q in "[a-e ]{1,10}") {
            let docs: Vec<_> = texts.iter().enumerate().map(|(i, t)| d(&format!("https://x.org/{i}"), t)).collect();
            let out = rerank(&q, docs, &LexicalScorer, TOP_M);
            prop_assert!(out.len() <= TOP_M.min(texts.len()));
            prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
            prop_assert!(out.iter().all(|s| (0.0..=1.0).contains(&s.score)));
        }
    }
}
