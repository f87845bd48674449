//! Randomized offline fixtures: search results over a mix of trusted and
//! untrusted hosts, canned pages, and a whitelist drawn from a small pool.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fetch::{FetchError, FixtureFetcher};
use crate::pipeline::{EvidencePack, RetrievalReport, Retriever};
use crate::query::ContextualizedQuery;
use crate::search::{FixtureSearchProvider, SearchMode, SearchResult};
use crate::synthesis::{synthesize, CoachResponse, ScriptedLlm};
use crate::whitelist::{Whitelist, WhitelistHandle};
use crate::RetrievalError;

pub const TRUSTED_POOL: [&str; 10] = [
    "nih.gov", "mayoclinic.org", "acsm.org", "bbc.co.uk", "nhs.uk", "cdc.gov", "who.int", "youtube.com",
    "hopkinsmedicine.org", "sportsmed.org",
];

/// Hosts that look close to trusted ones but are not.
pub const DECOY_HOSTS: [&str; 12] = [
    "evil-nih.gov",
    "nih.gov.evil.com",
    "nhs.uk.attacker.net",
    "mayoclinic.org.example",
    "health.blogspot.com",
    "fake-cdc.gov",
    "youtube.com.mirror.io",
    "co.uk",
    "192.0.2.7",
    "acsm.org-news.info",
    "wh0.int",
    "bbc.co.uk.phish.net",
];

const WORDS: [&str; 32] = [
    "sleep", "recovery", "soreness", "muscle", "hydration", "protein", "stretching", "athletes", "training", "load",
    "injury", "risk", "stress", "heart", "rate", "variability", "cold", "water", "immersion", "foam", "rolling",
    "nutrition", "carbohydrate", "fatigue", "performance", "rest", "days", "tendon", "ankle", "knee", "warm", "up",
];

#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub seed: u64,
    pub whitelist: Vec<String>,
    pub mode: SearchMode,
    pub results: Vec<SearchResult>,
    pub query: String,
}

pub struct FuzzRun {
    pub case: FuzzCase,
    pub outcome: Result<(EvidencePack, RetrievalReport), RetrievalError>,
    pub response: Option<Result<CoachResponse, RetrievalError>>,
    pub llm: Arc<ScriptedLlm>,
}

fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let s: Vec<&str> = (0..words).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
    let mut out = s.join(" ");
    out[..1].make_ascii_uppercase();
    out.push('.');
    out
}

fn random_url(rng: &mut ChaCha8Rng, trusted: &[String]) -> String {
    let path = format!("/a{}", rng.gen_range(0..1000));
    match rng.gen_range(0..10) {
        0..=3 if !trusted.is_empty() => {
            let d = trusted.choose(rng).expect("non-empty");
            let sub = ["", "www.", "news.", "pubmed.ncbi."][rng.gen_range(0..4)];
            let host = if rng.gen_bool(0.1) { format!("{sub}{d}").to_uppercase() } else { format!("{sub}{d}") };
            format!("https://{host}{path}")
        }
        4 => {
            let d = TRUSTED_POOL.choose(rng).expect("non-empty");
            format!("https://{d}{path}")
        }
        5 => ["ftp://nih.gov/file", "javascript:alert(1)", "https://user@nih.gov.evil.com/x", "not a url", "https:///nohost"]
            [rng.gen_range(0..5)]
        .to_string(),
        _ => format!("https://{}{path}", DECOY_HOSTS.choose(rng).expect("non-empty")),
    }
}

pub fn fuzz_case(seed: u64) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<String> = TRUSTED_POOL.iter().map(|s| s.to_string()).collect();
    pool.shuffle(&mut rng);
    let whitelist: Vec<String> = pool.into_iter().take(rng.gen_range(1..=6)).collect();
    let mode = if rng.gen_bool(0.2) { SearchMode::Video } else { SearchMode::Text };
    let results = (0..rng.gen_range(1..=12))
        .map(|_| {
            let url = random_url(&mut rng, &whitelist);
            let title = sentence(&mut rng, 3);
            let snippet = sentence(&mut rng, 8);
            SearchResult { url, title, snippet, domain: String::new(), video: false }
        })
        .collect();
    let query = sentence(&mut rng, 6);
    FuzzCase { seed, whitelist, mode, results, query }
}

fn page(rng: &mut ChaCha8Rng) -> String {
    let paras: String = (0..rng.gen_range(1..8))
        .map(|_| format!("<p>{}</p>", (0..rng.gen_range(1..12)).map(|_| sentence(rng, 12)).collect::<Vec<_>>().join(" ")))
        .collect();
    format!(
        "<html><head><title>{}</title><script>track()</script></head><body><nav><a href='/'>Home</a></nav>\
         <article>{paras}</article><footer>Links</footer></body></html>",
        sentence(rng, 3)
    )
}

/// A scripted reply citing numbers 1..=6, some of them out of range, mixed
/// with uncited statements.
fn adversarial_reply(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(1..5))
        .map(|_| {
            let s = sentence(rng, 7);
            match rng.gen_range(0..3) {
                0 => s,
                _ => format!("{} [{}].", s.trim_end_matches('.'), rng.gen_range(1..=6)),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs retrieval and synthesis for one randomized case, entirely offline.
pub async fn run_fuzz_case(seed: u64) -> FuzzRun {
    let case = fuzz_case(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut fetcher = FixtureFetcher::new();
    for r in &case.results {
        match rng.gen_range(0..6) {
            0 => fetcher = fetcher.failing(&r.url, FetchError::HttpError("status 503".into())),
            1 => fetcher.insert(&r.url, "<html><body><script>x()</script></body></html>"),
            _ => fetcher.insert(&r.url, &page(&mut rng)),
        }
    }
    let provider = Arc::new(FixtureSearchProvider::new().with("*", case.mode, case.results.clone()));
    let whitelist = WhitelistHandle::new(Whitelist::from_domains(&case.whitelist).expect("pool domains parse"));
    let retriever = Retriever::new(provider, Arc::new(fetcher), whitelist);
    let query = ContextualizedQuery::anonymous(&case.query).expect("generated text has no identifiers");
    let outcome = retriever.retrieve(&query, case.mode).await;
    let llm = Arc::new(ScriptedLlm::new([adversarial_reply(&mut rng), adversarial_reply(&mut rng)]));
    let response = match &outcome {
        Ok((pack, _)) => Some(synthesize(pack, llm.as_ref()).await),
        Err(_) => None,
    };
    FuzzRun { case, outcome, response, llm }
}
