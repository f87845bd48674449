use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheHit, ResponseCache};
use crate::embed::{Embedder, HashedNgramEmbedder};
use crate::fetch::{fetch_and_clean, FetchConfig, FetchFailure, Fetcher};
use crate::index::{chunk_text, Chunk, CleanDocument, VectorIndex};
use crate::query::ContextualizedQuery;
use crate::rerank::{rerank, LexicalScorer, Scorer, TOP_M};
use crate::search::{search_trusted, SearchMode, SearchProvider, SearchResult};
use crate::synthesis::{synthesize_with, CacheProvenance, CoachResponse, LlmClient, SynthesisConfig};
use crate::whitelist::WhitelistHandle;
use crate::RetrievalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub max_results: usize,
    pub top_m: usize,
    pub top_k: usize,
    pub fetch: FetchConfig,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self { max_results: 10, top_m: TOP_M, top_k: 8, fetch: FetchConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSnippet {
    pub chunk: Chunk,
    pub url: String,
    pub title: String,
    /// Cosine similarity to the rewritten query.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidencePack {
    pub query: ContextualizedQuery,
    /// Most similar first.
    pub snippets: Vec<EvidenceSnippet>,
    /// Distinct snippet urls in snippet order.
    pub source_list: Vec<String>,
}

impl EvidencePack {
    pub fn new(query: ContextualizedQuery, snippets: Vec<EvidenceSnippet>) -> Self {
        let mut source_list: Vec<String> = Vec::new();
        for s in &snippets {
            if !source_list.contains(&s.url) {
                source_list.push(s.url.clone());
            }
        }
        Self { query, snippets, source_list }
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub mode: SearchMode,
    pub results: usize,
    pub dropped_off_whitelist: usize,
    pub fetch_failures: Vec<FetchFailure>,
    pub documents: usize,
    pub chunks: usize,
    /// Pages could not be read, so search snippets stood in for them.
    pub used_search_snippets: bool,
}

pub struct Retriever {
    pub provider: Arc<dyn SearchProvider>,
    pub fetcher: Arc<dyn Fetcher>,
    pub whitelist: WhitelistHandle,
    pub scorer: Arc<dyn Scorer>,
    pub embedder: Arc<dyn Embedder>,
    pub config: RetrieverConfig,
}

fn snippet_document(r: &SearchResult) -> CleanDocument {
    let text = [r.title.trim(), r.snippet.trim()].iter().filter(|s| !s.is_empty()).cloned().collect::<Vec<_>>().join(". ");
    CleanDocument { url: r.url.clone(), title: r.title.clone(), main_text: text }
}

impl Retriever {
    pub fn new(provider: Arc<dyn SearchProvider>, fetcher: Arc<dyn Fetcher>, whitelist: WhitelistHandle) -> Self {
        Self {
            provider,
            fetcher,
            whitelist,
            scorer: Arc::new(LexicalScorer),
            embedder: Arc::new(HashedNgramEmbedder::default()),
            config: RetrieverConfig::default(),
        }
    }

    pub fn with_config(mut self, config: RetrieverConfig) -> Self {
        self.config = config;
        self
    }

    /// Search, fetch, rerank, chunk, embed and select the top chunks. Video
    /// results are used as their search snippets without fetching.
    pub async fn retrieve(
        &self,
        query: &ContextualizedQuery,
        mode: SearchMode,
    ) -> Result<(EvidencePack, RetrievalReport), RetrievalError> {
        let whitelist = self.whitelist.snapshot();
        let found = search_trusted(self.provider.as_ref(), &whitelist, query, mode, self.config.max_results).await?;
        let mut report = RetrievalReport {
            mode,
            results: found.results.len(),
            dropped_off_whitelist: found.dropped,
            fetch_failures: Vec::new(),
            documents: 0,
            chunks: 0,
            used_search_snippets: false,
        };

        let mut docs = if mode == SearchMode::Video {
            Vec::new()
        } else {
            let urls: Vec<String> = found.results.iter().map(|r| r.url.clone()).collect();
            let batch = fetch_and_clean(self.fetcher.as_ref(), &whitelist, &urls, &self.config.fetch).await;
            report.fetch_failures = batch.failures;
            batch.documents
        };
        if docs.is_empty() {
            report.used_search_snippets = true;
            docs = found.results.iter().map(snippet_document).filter(|d| !d.main_text.is_empty()).collect();
        }
        for d in &mut docs {
            if d.title.is_empty() {
                if let Some(r) = found.results.iter().find(|r| r.url == d.url) {
                    d.title = r.title.clone();
                }
            }
        }
        // The whitelist is checked again so nothing downstream depends on a
        // fetcher or provider behaving.
        docs.retain(|d| whitelist.allows_url(&d.url));
        if docs.is_empty() {
            return Err(RetrievalError::EmptyEvidence);
        }
        report.documents = docs.len();

        let ranked = rerank(&query.rewritten, docs, self.scorer.as_ref(), self.config.top_m);
        let chunks: Vec<Chunk> = ranked.iter().flat_map(|s| chunk_text(&s.doc)).collect();
        report.chunks = chunks.len();
        let index = VectorIndex::build(self.embedder.as_ref(), chunks.iter().map(|c| c.text.as_str()));
        let hits = index.search_text(self.embedder.as_ref(), &query.rewritten, self.config.top_k)?;
        let snippets = hits
            .into_iter()
            .map(|h| {
                let chunk = chunks[h.id].clone();
                EvidenceSnippet { url: chunk.source_url.clone(), title: chunk.title.clone(), chunk, score: h.score }
            })
            .collect();
        Ok((EvidencePack::new(query.clone(), snippets), report))
    }
}

/// How a web answer was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebAnswer {
    pub response: CoachResponse,
    /// Present only when retrieval ran this turn.
    pub report: Option<RetrievalReport>,
    pub cache_key: String,
    /// Cosine between the probe and the stored query on a cache hit.
    pub cache_similarity: Option<f64>,
}

/// Cache in front of retrieval and synthesis. A hit skips search, fetch,
/// rerank and indexing entirely.
pub struct CoachingPipeline {
    pub retriever: Retriever,
    pub llm: std::sync::Arc<dyn LlmClient>,
    pub cache: ResponseCache<CoachResponse>,
    pub synthesis: SynthesisConfig,
}

pub fn cache_key(query: &ContextualizedQuery, mode: SearchMode) -> String {
    match mode {
        SearchMode::Text => query.rewritten.clone(),
        SearchMode::Video => format!("video {}", query.rewritten),
    }
}

impl CoachingPipeline {
    pub async fn answer(&self, query: &ContextualizedQuery, mode: SearchMode) -> Result<WebAnswer, RetrievalError> {
        if !query.anonymization_verified {
            return Err(RetrievalError::Unverified);
        }
        let key = cache_key(query, mode);
        if let Some(CacheHit { mut value, layer, similarity, .. }) = self.cache.lookup(&key) {
            value.cache_provenance = CacheProvenance::from(layer);
            return Ok(WebAnswer { response: value, report: None, cache_key: key, cache_similarity: Some(similarity) });
        }
        let (pack, report) = self.retriever.retrieve(query, mode).await?;
        let mut response = synthesize_with(&pack, self.llm.as_ref(), &self.synthesis).await?;
        response.cache_provenance = CacheProvenance::Fresh;
        if response.audit.pass {
            self.cache.store(&key, response.clone())?;
        }
        Ok(WebAnswer { response, report: Some(report), cache_key: key, cache_similarity: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetch::FixtureFetcher;
    use crate::search::FixtureSearchProvider;
    use crate::whitelist::Whitelist;

    fn result(url: &str, title: &str) -> SearchResult {
        SearchResult { url: url.into(), title: title.into(), snippet: format!("{title} summary"), domain: String::new(), video: false }
    }

    fn page(body: &str) -> String {
        format!("<html><body><nav><a href='/'>Menu</a></nav><article><p>{body}</p></article></body></html>")
    }

    fn retriever(fetcher: FixtureFetcher) -> (Retriever, Arc<FixtureSearchProvider>) {
        let provider = Arc::new(FixtureSearchProvider::new().with(
            "*",
            SearchMode::Text,
            vec![
                result("https://www.nih.gov/sleep", "Sleep and recovery"),
                result("https://junk.example/sleep", "Miracle sleep pills"),
                result("https://acsm.org/soreness", "Muscle soreness"),
            ],
        ));
        let wl = WhitelistHandle::new(Whitelist::from_domains(["nih.gov", "acsm.org"]).unwrap());
        (Retriever::new(provider.clone(), Arc::new(fetcher), wl), provider)
    }

    #[tokio::test]
    async fn end_to_end_pack() {
        let long = "Sleep duration of seven to nine hours improves recovery in athletes. ".repeat(30);
        let f = FixtureFetcher::new()
            .page("https://www.nih.gov/sleep", &page(&long))
            .page("https://acsm.org/soreness", &page("Foam rolling eases delayed onset muscle soreness."));
        let (r, provider) = retriever(f);
        let q = ContextualizedQuery::anonymous("Strategies to improve sleep for a basketball player").unwrap();
        let (pack, report) = r.retrieve(&q, SearchMode::Text).await.unwrap();
        assert_eq!(provider.calls(), 1);
        assert_eq!(report.dropped_off_whitelist, 1);
        assert_eq!(report.documents, 2);
        assert!(report.chunks >= 3);
        assert!(pack.snippets.len() <= 8 && !pack.snippets.is_empty());
        assert!(pack.snippets.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(pack.snippets[0].url, "https://www.nih.gov/sleep");
        assert!(pack.source_list.iter().all(|u| !u.contains("junk")));
        assert!(pack.snippets.iter().all(|s| !s.chunk.text.contains("Menu")));
    }

    #[tokio::test]
    async fn unreadable_pages_fall_back_to_search_snippets() {
        let (r, _) = retriever(FixtureFetcher::new());
        let q = ContextualizedQuery::anonymous("soreness").unwrap();
        let (pack, report) = r.retrieve(&q, SearchMode::Text).await.unwrap();
        assert!(report.used_search_snippets);
        assert_eq!(report.fetch_failures.len(), 2);
        assert_eq!(pack.source_list.len(), 2);
    }
}
