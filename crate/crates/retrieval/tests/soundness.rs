use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use sepa_core::ingestion::{Sex, UserProfile};
use sepa_core::{Task, UserId};
use sepa_retrieval::cache::{CacheConfig, CacheLayer, ManualClock, ResponseCache};
use sepa_retrieval::embed::{Embedder, HashedNgramEmbedder};
use sepa_retrieval::index::{chunk_text, CleanDocument, VectorIndex};
use sepa_retrieval::pipeline::{CoachingPipeline, Retriever};
use sepa_retrieval::search::{FixtureSearchProvider, SearchMode, SearchProvider, SearchResult};
use sepa_retrieval::synthesis::{audit_citations, CacheProvenance, ScriptedLlm, SynthesisConfig};
use sepa_retrieval::testkit::run_fuzz_case;
use sepa_retrieval::{contextualize_query, FixtureFetcher, RetrievalError, Whitelist, WhitelistHandle};

/// Plain suffix match on the parsed host, independent of the public
/// suffix list.
fn host_trusted(url: &str, domains: &[String]) -> bool {
    let Ok(u) = url::Url::parse(url) else { return false };
    if !matches!(u.scheme(), "http" | "https") {
        return false;
    }
    let Some(host) = u.host_str() else { return false };
    let host = host.to_ascii_lowercase();
    domains.iter().any(|d| host == *d || host.ends_with(&format!(".{d}")))
}

#[tokio::test]
async fn fuzzed_pipelines_never_leave_the_whitelist() {
    let mut packs = 0;
    let mut dropped = 0;
    let mut responses = 0;
    for seed in 0..1000u64 {
        let run = run_fuzz_case(seed).await;
        let wl = &run.case.whitelist;
        let trusted_inputs = run.case.results.iter().filter(|r| host_trusted(&r.url, wl)).count();
        match &run.outcome {
            Ok((pack, report)) => {
                packs += 1;
                dropped += report.dropped_off_whitelist;
                for s in &pack.snippets {
                    assert!(host_trusted(&s.url, wl), "seed {seed}: snippet {}", s.url);
                    assert!(host_trusted(&s.chunk.source_url, wl), "seed {seed}: chunk {}", s.chunk.source_url);
                }
                for u in &pack.source_list {
                    assert!(host_trusted(u, wl), "seed {seed}: source {u}");
                }
            }
            Err(RetrievalError::ZeroResults { .. }) => {
                assert_eq!(trusted_inputs, 0, "seed {seed}: trusted results were discarded");
            }
            Err(e) => panic!("seed {seed}: {e}"),
        }
        if let Some(Ok(resp)) = &run.response {
            responses += 1;
            let pack_urls: BTreeSet<&str> =
                run.outcome.as_ref().unwrap().0.source_list.iter().map(String::as_str).collect();
            for s in &resp.sources {
                assert!(host_trusted(&s.url, wl), "seed {seed}: cited {}", s.url);
                assert!(pack_urls.contains(s.url.as_str()), "seed {seed}: cited url outside the pack");
            }
            let numbers: BTreeSet<usize> = resp.sources.iter().map(|s| s.n).collect();
            for sent in &resp.audit.sentences {
                assert!(sent.citation_ids.iter().all(|n| numbers.contains(n)), "seed {seed}");
            }
        }
    }
    assert!(packs > 500, "{packs}");
    assert!(dropped > 1000, "{dropped}");
    assert!(responses > 100, "{responses}");
}

#[test]
fn chunks_reassemble_byte_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let len = rng.gen_range(1..5000);
        let text: String = (0..len)
            .map(|_| match rng.gen_range(0..10) {
                0 => 'é',
                1 => '\n',
                2 => '😀',
                _ => char::from(rng.gen_range(b' '..b'~')),
            })
            .collect();
        let doc = CleanDocument { url: "https://nih.gov/x".into(), title: String::new(), main_text: text.clone() };
        let chunks = chunk_text(&doc);
        assert_eq!(chunks.iter().map(|c| c.text.as_str()).collect::<String>().as_bytes(), text.as_bytes());
        assert!(chunks.iter().all(|c| c.text.chars().count() <= 800));
    }
}

#[test]
fn flat_index_matches_brute_force_on_1000_chunks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let words = ["sleep", "knee", "load", "hydration", "protein", "ice", "stretch", "tendon", "rest", "sprint"];
    let texts: Vec<String> = (0..1000)
        .map(|_| (0..rng.gen_range(3..40)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" "))
        .collect();
    let e = HashedNgramEmbedder::default();
    let index = VectorIndex::build(&e, texts.iter().map(String::as_str));
    assert_eq!(index.len(), 1000);
    for q in ["sleep and rest", "knee tendon load", "protein hydration sprint", "ice"] {
        let qv = e.embed(q);
        let mut brute: Vec<(usize, f64)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let v = e.embed(t);
                let dot: f64 = v.iter().zip(&qv).map(|(a, b)| a * b).sum();
                let na = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
                (i, dot / (na * nb))
            })
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let hits = index.search(&qv, 1000).unwrap();
        assert_eq!(hits.len(), 1000);
        for (h, (id, score)) in hits.iter().zip(&brute) {
            assert!((h.score - score).abs() < 1e-12);
            if h.id != *id {
                // Only acceptable when the two scores tie to rounding.
                assert!((brute.iter().find(|b| b.0 == h.id).unwrap().1 - score).abs() < 1e-12);
            }
        }
        let top = index.search(&qv, 8).unwrap();
        assert_eq!(top.iter().map(|h| h.id).collect::<Vec<_>>(), hits[..8].iter().map(|h| h.id).collect::<Vec<_>>());
    }
}

// Cosines computed by a separate Python implementation of the hashed
// trigram embedder over the canonicalized queries.
const PARAPHRASE_COSINE: f64 = 0.972_517_992_528_285_1;
const BELOW_THRESHOLD_COSINE: f64 = 0.901_789_685_947_427_7;

#[test]
fn semantic_cache_threshold_against_reference_cosines() {
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()));
    let cache: ResponseCache<String> = ResponseCache::new(CacheConfig::default()).with_clock(clock.clone());
    cache.store("Strategies to reduce soreness for a 21-year-old basketball player with high soreness (74%)", "a".into()).unwrap();
    let hit = cache
        .lookup("Strategies to reduce soreness for a 21-year-old basketball player with high soreness (76%)")
        .expect("paraphrase should hit");
    assert_eq!(hit.layer, CacheLayer::Semantic);
    assert!((hit.similarity - PARAPHRASE_COSINE).abs() < 1e-9, "{}", hit.similarity);
    assert!(hit.similarity >= cache.config().semantic_threshold);

    cache.store("Strategies to improve sleep for a 21-year-old basketball player", "b".into()).unwrap();
    let e = HashedNgramEmbedder::default();
    let c = sepa_retrieval::embed::cosine(
        &e.embed("strategies to improve sleep for a 21 year old basketball player"),
        &e.embed("strategies for improving sleep for a 21 year old basketball player"),
    )
    .unwrap();
    assert!((c - BELOW_THRESHOLD_COSINE).abs() < 1e-9, "{c}");
    assert!(cache.lookup("strategies for improving sleep for a 21-year-old basketball player").is_none());

    clock.advance(chrono::Duration::days(8));
    assert!(cache
        .lookup("Strategies to reduce soreness for a 21-year-old basketball player with high soreness (76%)")
        .is_none());
}

fn athlete() -> UserProfile {
    UserProfile {
        user_id: UserId::new("u-7731"),
        age: 21.0,
        sex: Sex::Female,
        weight_kg: 64.0,
        height_cm: 178.0,
        sport: "volleyball".into(),
        display_name: Some("Riley Quinn".into()),
    }
}

fn coaching(llm: Arc<ScriptedLlm>) -> (CoachingPipeline, Arc<FixtureSearchProvider>, Arc<FixtureFetcher>) {
    let url = "https://www.nih.gov/recovery";
    let provider = Arc::new(FixtureSearchProvider::new().with(
        "*",
        SearchMode::Text,
        vec![SearchResult { url: url.into(), title: "Recovery".into(), snippet: String::new(), domain: String::new(), video: false }],
    ));
    let fetcher = Arc::new(FixtureFetcher::new().page(
        url,
        "<html><body><article><p>Cold water immersion after matches reduces next-day soreness in volleyball players.</p></article></body></html>",
    ));
    let wl = WhitelistHandle::new(Whitelist::from_domains(["nih.gov"]).unwrap());
    let pipeline = CoachingPipeline {
        retriever: Retriever::new(provider.clone(), fetcher.clone(), wl),
        llm,
        cache: ResponseCache::new(CacheConfig::default()),
        synthesis: SynthesisConfig::default(),
    };
    (pipeline, provider, fetcher)
}

#[tokio::test]
async fn cache_hits_make_no_provider_calls_and_no_pii_reaches_the_model() {
    let llm = Arc::new(ScriptedLlm::new(["Cold water immersion reduces soreness [1]."]));
    let (pipeline, provider, fetcher) = coaching(llm.clone());
    let p = athlete();
    let q = contextualize_query(
        "Riley Quinn here (u-7731, riley@club.org). How can I recover after Saturday's 2024-06-01 match?",
        &p,
        &[(Task::Soreness, 5.5)],
        &[],
    )
    .unwrap();

    let first = pipeline.answer(&q, SearchMode::Text).await.unwrap();
    assert_eq!(first.response.cache_provenance, CacheProvenance::Fresh);
    assert_eq!((provider.calls(), fetcher.calls()), (1, 1));

    let second = pipeline.answer(&q, SearchMode::Text).await.unwrap();
    assert_eq!(second.response.cache_provenance, CacheProvenance::Memory);
    assert!(second.report.is_none());
    assert_eq!((provider.calls(), fetcher.calls()), (1, 1));
    assert_eq!(second.response.text, first.response.text);

    for req in llm.requests() {
        let all = format!("{} {}", req.system, req.prompt).to_lowercase();
        for banned in ["riley", "quinn", "u-7731", "club.org", "2024-06-01"] {
            assert!(!all.contains(banned), "{banned} reached the model");
        }
    }
}

#[derive(Deserialize)]
struct Transcript {
    sources: usize,
    text: String,
    #[serde(default)]
    uncited: usize,
}

#[derive(Deserialize)]
struct Transcripts {
    golden: Vec<Transcript>,
    adversarial: Vec<Transcript>,
}

fn transcripts() -> Transcripts {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/transcripts.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn audit_passes_golden_and_fails_adversarial_transcripts() {
    let t = transcripts();
    for g in &t.golden {
        let a = audit_citations(&g.text, g.sources);
        assert!(a.pass && a.unresolved.is_empty(), "{:#?}", a);
    }
    for adv in &t.adversarial {
        let a = audit_citations(&adv.text, adv.sources);
        assert!(!a.pass, "{}", adv.text);
        assert_eq!(a.uncited_claims, adv.uncited, "{:#?}", a.sentences);
    }
}

