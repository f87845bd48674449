//! Web evidence retrieval and cited answer synthesis.
//!
//! A user question is rewritten into an anonymized search query, sent to a
//! search provider, filtered against a trusted-domain list, fetched and
//! cleaned, reranked, chunked and indexed. The best chunks become an
//! evidence pack that a language model turns into an answer with numbered
//! citations.

pub mod cache;
pub mod embed;
pub mod extract;
pub mod fetch;
pub mod index;
pub mod pipeline;
pub mod query;
pub mod rerank;
pub mod search;
pub mod synthesis;
pub mod testkit;
pub mod whitelist;

pub use cache::{CacheConfig, CacheHit, CacheLayer, Clock, ManualClock, ResponseCache, SystemClock};
pub use embed::{Embedder, HashedNgramEmbedder};
pub use fetch::{fetch_and_clean, FetchConfig, FetchError, Fetcher, FixtureFetcher, HttpFetcher};
pub use index::{chunk_text, Chunk, CleanDocument, VectorIndex};
pub use pipeline::{CoachingPipeline, EvidencePack, EvidenceSnippet, RetrievalReport, Retriever, RetrieverConfig, WebAnswer};
pub use query::{contextualize_query, ContextualizedQuery, QueryContext};
pub use rerank::{rerank, LexicalScorer, Scorer};
pub use search::{search_trusted, FixtureSearchProvider, SearchMode, SearchProvider, SearchResult};
pub use synthesis::{
    audit_citations, build_prompt, synthesize, synthesize_with, CacheProvenance, CitationAudit, CoachResponse, ExtractiveLlm,
    LlmClient, LlmRequest, OpenAiCompatibleClient, ScriptedLlm, SourceRef, SynthesisConfig,
};
pub use whitelist::{Whitelist, WhitelistHandle};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("whitelist: {0}")]
    Whitelist(String),
    #[error("anonymization failed: {0}")]
    ScrubFailure(String),
    #[error("query was not verified as anonymized")]
    Unverified,
    #[error("search provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no trusted results ({dropped} dropped by the whitelist)")]
    ZeroResults { dropped: usize },
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no evidence to synthesize from")]
    EmptyEvidence,
    #[error("language model unavailable: {0}")]
    LlmUnavailable(String),
    #[error("citation markers still unresolved after re-prompt: {0:?}")]
    MalformedMarkers(Vec<usize>),
    #[error("cache: {0}")]
    Cache(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
