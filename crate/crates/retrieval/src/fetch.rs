use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::extract::clean_document;
use crate::index::CleanDocument;
use crate::whitelist::Whitelist;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FetchError {
    #[error("timed out")]
    Timeout,
    #[error("http error: {0}")]
    HttpError(String),
    #[error("no readable text after cleaning")]
    EmptyAfterClean,
    #[error("domain not whitelisted")]
    NotWhitelisted,
}

#[async_trait]
pub trait Fetcher: Send + Sync {
    /// Raw HTML of `url`.
    async fn fetch(&self, url: &str) -> Result<String, FetchError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchConfig {
    pub concurrency: usize,
    pub per_host: usize,
    pub timeout_ms: u64,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self { concurrency: 8, per_host: 2, timeout_ms: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchFailure {
    pub url: String,
    pub error: FetchError,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FetchBatch {
    /// Successful documents in input order.
    pub documents: Vec<CleanDocument>,
    pub failures: Vec<FetchFailure>,
}

fn host_of(url: &str) -> String {
    url::Url::parse(url).ok().and_then(|u| u.host_str().map(str::to_ascii_lowercase)).unwrap_or_default()
}

/// Fetches and cleans `urls` with bounded global and per-host concurrency.
/// Each url fails on its own; the batch never does.
pub async fn fetch_and_clean(
    fetcher: &dyn Fetcher,
    whitelist: &Whitelist,
    urls: &[String],
    config: &FetchConfig,
) -> FetchBatch {
    let hosts: Mutex<HashMap<String, Arc<Semaphore>>> = Mutex::new(HashMap::new());
    let per_host = config.per_host.max(1);
    let timeout = Duration::from_millis(config.timeout_ms);
    let results: Vec<(String, Result<CleanDocument, FetchError>)> = stream::iter(urls.iter().cloned())
        .map(|url| {
            let sem = hosts.lock().entry(host_of(&url)).or_insert_with(|| Arc::new(Semaphore::new(per_host))).clone();
            async move {
                if !whitelist.allows_url(&url) {
                    return (url, Err(FetchError::NotWhitelisted));
                }
                let _permit = sem.acquire_owned().await.expect("semaphore never closed");
                let html = match tokio::time::timeout(timeout, fetcher.fetch(&url)).await {
                    Err(_) => Err(FetchError::Timeout),
                    Ok(r) => r,
                };
                let doc = html.and_then(|h| clean_document(&url, &h).ok_or(FetchError::EmptyAfterClean));
                (url, doc)
            }
        })
        .buffered(config.concurrency.max(1))
        .collect()
        .await;

    let mut batch = FetchBatch::default();
    for (url, r) in results {
        match r {
            Ok(d) => batch.documents.push(d),
            Err(error) => batch.failures.push(FetchFailure { url, error }),
        }
    }
    batch
}

#[derive(Debug)]
pub struct HttpFetcher {
    client: reqwest::Client,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .user_agent("sepa-retrieval/0.1")
            .build()
            .unwrap_or_default();
        Self { client }
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

#[async_trait]
impl Fetcher for HttpFetcher {
    async fn fetch(&self, url: &str) -> Result<String, FetchError> {
        let resp = self.client.get(url).send().await.map_err(|e| {
            if e.is_timeout() {
                FetchError::Timeout
            } else {
                FetchError::HttpError(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(FetchError::HttpError(format!("status {}", resp.status())));
        }
        resp.text().await.map_err(|e| FetchError::HttpError(e.to_string()))
    }
}

#[derive(Debug, Clone)]
enum Page {
    Html(String, Duration),
    Fail(FetchError),
}

/// Serves canned pages with optional per-url delays; tracks how many
/// fetches were in flight at once, overall and per host.
#[derive(Debug, Default)]
pub struct FixtureFetcher {
    pages: HashMap<String, Page>,
    calls: AtomicUsize,
    in_flight: Mutex<(usize, HashMap<String, usize>)>,
    peak: Mutex<(usize, usize)>,
}

impl FixtureFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn page(mut self, url: &str, html: &str) -> Self {
        self.pages.insert(url.to_string(), Page::Html(html.to_string(), Duration::ZERO));
        self
    }

    pub fn slow_page(mut self, url: &str, html: &str, delay: Duration) -> Self {
        self.pages.insert(url.to_string(), Page::Html(html.to_string(), delay));
        self
    }

    pub fn failing(mut self, url: &str, error: FetchError) -> Self {
        self.pages.insert(url.to_string(), Page::Fail(error));
        self
    }

    pub fn insert(&mut self, url: &str, html: &str) {
        self.pages.insert(url.to_string(), Page::Html(html.to_string(), Duration::ZERO));
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest observed (total, single host) concurrency.
    pub fn peak_concurrency(&self) -> (usize, usize) {
        *self.peak.lock()
    }
}

#[async_trait]
impl Fetcher for FixtureFetcher {
    async fn fetch(&self, url: &str) -> Result<String, FetchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let host = host_of(url);
        {
            let mut f = self.in_flight.lock();
            f.0 += 1;
            let h = f.1.entry(host.clone()).or_default();
            *h += 1;
            let per_host = *h;
            let mut p = self.peak.lock();
            p.0 = p.0.max(f.0);
            p.1 = p.1.max(per_host);
        }
        let page = self.pages.get(url).cloned();
        let result = match page {
            Some(Page::Html(html, delay)) => {
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                } else {
                    tokio::task::yield_now().await;
                }
                Ok(html)
            }
            Some(Page::Fail(e)) => Err(e),
            None => Err(FetchError::HttpError("status 404 Not Found".into())),
        };
        let mut f = self.in_flight.lock();
        f.0 -= 1;
        if let Some(h) = f.1.get_mut(&host) {
            *h -= 1;
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(s: &str) -> String {
        format!("<html><body><article><p>{s}</p></article></body></html>")
    }

    fn wl() -> Whitelist {
        Whitelist::from_domains(["nih.gov", "acsm.org"]).unwrap()
    }

    #[tokio::test(start_paused = true)]
    async fn one_timeout_does_not_sink_the_batch() {
        let f = FixtureFetcher::new()
            .page("https://nih.gov/a", &article("alpha text"))
            .slow_page("https://nih.gov/b", &article("beta"), Duration::from_secs(30))
            .page("https://acsm.org/c", &article("gamma text"));
        let urls: Vec<String> = ["https://nih.gov/a", "https://nih.gov/b", "https://acsm.org/c"].map(String::from).into();
        let batch = fetch_and_clean(&f, &wl(), &urls, &FetchConfig::default()).await;
        assert_eq!(batch.documents.len(), 2);
        assert_eq!(batch.documents[0].url, "https://nih.gov/a");
        assert_eq!(batch.documents[1].url, "https://acsm.org/c");
        assert_eq!(batch.failures, vec![FetchFailure { url: "https://nih.gov/b".into(), error: FetchError::Timeout }]);
    }

    #[tokio::test]
    async fn per_url_error_kinds() {
        let f = FixtureFetcher::new()
            .page("https://nih.gov/js", "<html><body><script>x()</script></body></html>")
            .failing("https://nih.gov/500", FetchError::HttpError("status 500".into()));
        let urls: Vec<String> =
            ["https://nih.gov/js", "https://nih.gov/500", "https://evil.com/x"].map(String::from).into();
        let batch = fetch_and_clean(&f, &wl(), &urls, &FetchConfig::default()).await;
        assert!(batch.documents.is_empty());
        let kinds: Vec<_> = batch.failures.iter().map(|f| f.error.clone()).collect();
        assert_eq!(
            kinds,
            [FetchError::EmptyAfterClean, FetchError::HttpError("status 500".into()), FetchError::NotWhitelisted]
        );
        assert_eq!(f.calls(), 2);
    }

    #[tokio::test(start_paused = true)]
    async fn concurrency_limits_hold() {
        let mut f = FixtureFetcher::new();
        let mut urls = Vec::new();
        for i in 0..12 {
            let url = if i % 2 == 0 { format!("https://nih.gov/{i}") } else { format!("https://s{i}.acsm.org/{i}") };
            f = f.slow_page(&url, &article("text"), Duration::from_millis(100));
            urls.push(url);
        }
        let batch = fetch_and_clean(&f, &wl(), &urls, &FetchConfig::default()).await;
        assert_eq!(batch.documents.len(), 12);
        let (total, host) = f.peak_concurrency();
        assert!(total <= 8 && total > 2, "{total}");
        assert_eq!(host, 2);
    }
}
