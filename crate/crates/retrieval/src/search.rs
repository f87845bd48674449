use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::cache::canonical_key;
use crate::query::ContextualizedQuery;
use crate::whitelist::{url_domain, url_host, Whitelist};
use crate::RetrievalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Text,
    Video,
}

impl SearchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Text => "text",
            SearchMode::Video => "video",
        }
    }
}

const VIDEO_CUES: [&str; 7] = ["video", "videos", "watch", "show me", "youtube", "clip", "demonstration"];

/// Keyword fallback for when the caller does not set a mode.
pub fn detect_mode(text: &str) -> SearchMode {
    let lower = format!(" {} ", canonical_key(text));
    if VIDEO_CUES.iter().any(|c| lower.contains(&format!(" {c} "))) {
        SearchMode::Video
    } else {
        SearchMode::Text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    /// Registrable domain of `url`.
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub video: bool,
}

#[async_trait]
pub trait SearchProvider: Send + Sync {
    async fn search(&self, query: &str, mode: SearchMode, max_results: usize) -> Result<Vec<SearchResult>, RetrievalError>;
    /// Number of searches issued so far.
    fn calls(&self) -> usize;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureFile {
    pub query: String,
    #[serde(default)]
    pub mode: SearchMode,
    pub results: Vec<SearchResult>,
}

/// Replays recorded result lists keyed by canonical query and mode. A
/// fixture whose query is `*` answers any query of its mode.
#[derive(Debug, Default)]
pub struct FixtureSearchProvider {
    fixtures: HashMap<(String, SearchMode), Vec<SearchResult>>,
    delay: Duration,
    calls: AtomicUsize,
    unavailable: AtomicBool,
}

impl FixtureSearchProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: &str, mode: SearchMode, results: Vec<SearchResult>) {
        let key = if query == "*" { "*".to_string() } else { canonical_key(query) };
        self.fixtures.insert((key, mode), results);
    }

    pub fn with(mut self, query: &str, mode: SearchMode, results: Vec<SearchResult>) -> Self {
        self.insert(query, mode, results);
        self
    }

    /// Loads every `*.json` file in `dir` as a [`FixtureFile`].
    pub fn from_dir(dir: &Path) -> Result<Self, RetrievalError> {
        let mut p = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            let f: FixtureFile = serde_json::from_str(&text)
                .map_err(|e| RetrievalError::ProviderUnavailable(format!("{}: {e}", path.display())))?;
            p.insert(&f.query, f.mode, f.results);
        }
        Ok(p)
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn set_unavailable(&self, down: bool) {
        self.unavailable.store(down, Ordering::SeqCst);
    }
}

#[async_trait]
impl SearchProvider for FixtureSearchProvider {
    async fn search(&self, query: &str, mode: SearchMode, max_results: usize) -> Result<Vec<SearchResult>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        if self.unavailable.load(Ordering::SeqCst) {
            return Err(RetrievalError::ProviderUnavailable("fixture provider marked down".into()));
        }
        let results = self
            .fixtures
            .get(&(canonical_key(query), mode))
            .or_else(|| self.fixtures.get(&("*".to_string(), mode)))
            .cloned()
            .unwrap_or_default();
        Ok(results.into_iter().take(max_results).collect())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Google Programmable Search JSON API. The engine ids carry the domain
/// restriction; results are still filtered locally.
#[derive(Debug)]
pub struct GoogleCseProvider {
    client: reqwest::Client,
    api_key: String,
    engine_id: String,
    video_engine_id: Option<String>,
    endpoint: String,
    calls: AtomicUsize,
}

impl GoogleCseProvider {
    pub fn new(api_key: impl Into<String>, engine_id: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::builder().timeout(Duration::from_secs(10)).build().unwrap_or_default(),
            api_key: api_key.into(),
            engine_id: engine_id.into(),
            video_engine_id: None,
            endpoint: "https://www.googleapis.com/customsearch/v1".into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_video_engine(mut self, id: impl Into<String>) -> Self {
        self.video_engine_id = Some(id.into());
        self
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }
}

#[derive(Deserialize)]
struct CseResponse {
    #[serde(default)]
    items: Vec<CseItem>,
}

#[derive(Deserialize)]
struct CseItem {
    link: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    snippet: String,
}

#[async_trait]
impl SearchProvider for GoogleCseProvider {
    async fn search(&self, query: &str, mode: SearchMode, max_results: usize) -> Result<Vec<SearchResult>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let cx = match mode {
            SearchMode::Video => self.video_engine_id.as_deref().unwrap_or(&self.engine_id),
            SearchMode::Text => &self.engine_id,
        };
        let num = max_results.clamp(1, 10).to_string();
        let resp = self
            .client
            .get(&self.endpoint)
            .query(&[("key", self.api_key.as_str()), ("cx", cx), ("q", query), ("num", num.as_str())])
            .send()
            .await
            .map_err(|e| RetrievalError::ProviderUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RetrievalError::ProviderUnavailable(format!("status {}", resp.status())));
        }
        let body: CseResponse = resp.json().await.map_err(|e| RetrievalError::ProviderUnavailable(e.to_string()))?;
        Ok(body
            .items
            .into_iter()
            .map(|i| SearchResult { url: i.link, title: i.title, snippet: i.snippet, domain: String::new(), video: false })
            .collect())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedResults {
    pub results: Vec<SearchResult>,
    /// Results removed because their domain is not whitelisted.
    pub dropped: usize,
    pub mode: SearchMode,
}

/// Searches with the rewritten query and keeps only whitelisted results.
/// Refuses to run for a query that was not verified as anonymized.
pub async fn search_trusted(
    provider: &dyn SearchProvider,
    whitelist: &Whitelist,
    query: &ContextualizedQuery,
    mode: SearchMode,
    max_results: usize,
) -> Result<TrustedResults, RetrievalError> {
    if !query.anonymization_verified {
        return Err(RetrievalError::Unverified);
    }
    let raw = provider.search(&query.rewritten, mode, max_results).await?;
    let total = raw.len();
    let mut seen = std::collections::HashSet::new();
    let results: Vec<SearchResult> = raw
        .into_iter()
        .filter_map(|mut r| {
            if !whitelist.allows_url(&r.url) {
                return None;
            }
            let domain = url_domain(&r.url).or_else(|| url_host(&r.url))?;
            r.domain = domain;
            r.video = mode == SearchMode::Video;
            Some(r)
        })
        .filter(|r| seen.insert(r.url.clone()))
        .collect();
    let dropped = total - results.len();
    if results.is_empty() {
        return Err(RetrievalError::ZeroResults { dropped });
    }
    Ok(TrustedResults { results, dropped, mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(url: &str) -> SearchResult {
        SearchResult { url: url.into(), title: url.into(), snippet: String::new(), domain: String::new(), video: false }
    }

    fn wl() -> Whitelist {
        Whitelist::from_domains(["nih.gov", "mayoclinic.org", "youtube.com"]).unwrap()
    }

    fn verified(text: &str) -> ContextualizedQuery {
        ContextualizedQuery::anonymous(text).unwrap()
    }

    #[tokio::test]
    async fn off_whitelist_results_are_dropped_and_counted() {
        let p = FixtureSearchProvider::new().with(
            "sleep tips",
            SearchMode::Text,
            vec![
                r("https://www.nih.gov/a"),
                r("https://spam.example.com/b"),
                r("https://mayoclinic.org/c"),
                r("https://health.blogspot.com/d"),
                r("https://ods.od.nih.gov/e"),
            ],
        );
        let out = search_trusted(&p, &wl(), &verified("Sleep tips?"), SearchMode::Text, 10).await.unwrap();
        assert_eq!(out.results.len(), 3);
        assert_eq!(out.dropped, 2);
        assert!(out.results.iter().all(|r| r.domain == "nih.gov" || r.domain == "mayoclinic.org"));
        assert_eq!(p.calls(), 1);
    }

    #[tokio::test]
    async fn video_branch_is_separate() {
        let p = FixtureSearchProvider::new()
            .with("*", SearchMode::Text, vec![r("https://nih.gov/text")])
            .with("*", SearchMode::Video, vec![r("https://www.youtube.com/watch?v=1")]);
        let q = verified("show me a video of hamstring stretches");
        let mode = detect_mode(&q.original);
        assert_eq!(mode, SearchMode::Video);
        let out = search_trusted(&p, &wl(), &q, mode, 5).await.unwrap();
        assert!(out.results[0].video);
        assert_eq!(out.results[0].domain, "youtube.com");
        assert_eq!(detect_mode("How can I sleep better?"), SearchMode::Text);
    }

    #[tokio::test]
    async fn unverified_query_makes_no_call() {
        let p = FixtureSearchProvider::new();
        let mut q = verified("sleep");
        q.anonymization_verified = false;
        let err = search_trusted(&p, &wl(), &q, SearchMode::Text, 5).await.unwrap_err();
        assert!(matches!(err, RetrievalError::Unverified));
        assert_eq!(p.calls(), 0);
    }

    #[tokio::test]
    async fn zero_results_and_outage_are_distinct() {
        let p = FixtureSearchProvider::new().with("*", SearchMode::Text, vec![r("https://bad.example/x")]);
        let err = search_trusted(&p, &wl(), &verified("q"), SearchMode::Text, 5).await.unwrap_err();
        assert!(matches!(err, RetrievalError::ZeroResults { dropped: 1 }));
        p.set_unavailable(true);
        let err = search_trusted(&p, &wl(), &verified("q"), SearchMode::Text, 5).await.unwrap_err();
        assert!(matches!(err, RetrievalError::ProviderUnavailable(_)));
    }

    #[test]
    fn fixture_dir_loading() {
        let dir = tempfile::tempdir().unwrap();
        let f = FixtureFile { query: "Foam Rolling?".into(), mode: SearchMode::Text, results: vec![r("https://nih.gov/f")] };
        std::fs::write(dir.path().join("a.json"), serde_json::to_string(&f).unwrap()).unwrap();
        let p = FixtureSearchProvider::from_dir(dir.path()).unwrap();
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let got = rt.block_on(p.search("foam rolling", SearchMode::Text, 5)).unwrap();
        assert_eq!(got.len(), 1);
    }
}
