#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use chrono::{Duration as Days, Utc};

use sepa_core::evaluation::{generate_cohort, CohortConfig, SyntheticCohort};
use sepa_core::ingestion::write_export;
use sepa_core::modeling::ModelTier;
use sepa_core::Task;
use sepa_retrieval::{
    CacheConfig, CoachingPipeline, ExtractiveLlm, FixtureFetcher, FixtureSearchProvider, LlmClient, ResponseCache,
    Retriever, SearchMode, SearchResult, SynthesisConfig, Whitelist, WhitelistHandle,
};
use sepa_service::jobs::{train_model, TrainRequest};
use sepa_service::{App, Store};

pub const PAGE_URL: &str = "https://www.nih.gov/recovery";
pub const PAGE: &str = "<html><body><article><p>Sleeping at least eight hours after hard training lowers next-day \
                        soreness in team-sport athletes.</p><p>Light cycling on rest days helps clear fatigue.</p>\
                        </article></body></html>";

pub fn small_cohort() -> SyntheticCohort {
    generate_cohort(&CohortConfig { users: 6, days: 24, seed: 31, ..CohortConfig::reference() })
}

/// Export archive of cohort user `i`, keeping check-ins from the first
/// `labeled_days` days only.
pub fn archive(c: &SyntheticCohort, i: usize, labeled_days: usize) -> Vec<u8> {
    let cutoff = c.config.start_date + Days::days(labeled_days as i64);
    let reports: Vec<_> = c.reports[i].iter().filter(|r| r.date < cutoff).cloned().collect();
    write_export(&c.records[i], &reports, Some(&c.profiles[i]))
}

pub struct Web {
    pub provider: Arc<FixtureSearchProvider>,
    pub fetcher: Arc<FixtureFetcher>,
}

pub fn web(search_delay: Duration) -> Web {
    let result = SearchResult {
        url: PAGE_URL.into(),
        title: "Recovery".into(),
        snippet: "Sleep and recovery".into(),
        domain: String::new(),
        video: false,
    };
    let provider = FixtureSearchProvider::new()
        .with("*", SearchMode::Text, vec![result.clone()])
        .with("*", SearchMode::Video, vec![SearchResult { video: true, ..result }])
        .with_delay(search_delay);
    let fetcher = FixtureFetcher::new().page(PAGE_URL, PAGE);
    Web { provider: Arc::new(provider), fetcher: Arc::new(fetcher) }
}

pub fn pipeline(w: &Web, llm: Arc<dyn LlmClient>) -> CoachingPipeline {
    CoachingPipeline {
        retriever: Retriever::new(
            w.provider.clone(),
            w.fetcher.clone(),
            WhitelistHandle::new(Whitelist::from_domains(["nih.gov"]).unwrap()),
        ),
        llm,
        cache: ResponseCache::new(CacheConfig::default()),
        synthesis: SynthesisConfig::default(),
    }
}

pub fn app(w: &Web) -> App {
    let store = Arc::new(Store::open_in_memory().unwrap());
    App::new(store, pipeline(w, Arc::new(ExtractiveLlm::default()))).unwrap()
}

/// Trains and registers generalized models for every task on `c`.
pub fn train_generalized(app: &App, c: &SyntheticCohort) {
    for task in Task::ALL {
        let m = train_model(&c.rows, TrainRequest { task, tier: ModelTier::GeneralizedColdStart }, Utc::now()).unwrap();
        app.store.save_model(&m).unwrap();
    }
    *app.registry.write() = app.store.load_registry().unwrap();
}
