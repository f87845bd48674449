use std::collections::{BTreeSet, VecDeque};
use std::sync::OnceLock;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::pipeline::EvidencePack;
use crate::RetrievalError;

/// Default prompt length cap in characters.
pub const PROMPT_CAP: usize = 12_000;

const SYSTEM_PROMPT: &str = "You are an experienced sports-medicine coach advising an athlete. \
Answer using the numbered sources below. Put a marker such as [2] after every sentence that states a fact, \
naming the source that supports it. Only use the numbers listed. If the sources do not support a statement, \
leave it out. Keep the answer short and practical.";

const CORRECTION: &str = "Your previous answer broke the citation rules. Add a citation marker to each factual \
sentence or remove the sentences the sources do not support. Only cite the numbers listed above.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub n: usize,
    pub url: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[async_trait]
pub trait LlmClient: Send + Sync {
    async fn complete(&self, request: &LlmRequest) -> Result<String, RetrievalError>;
    /// Whether the endpoint is configured not to retain prompts.
    fn no_retention(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltPrompt {
    pub system: String,
    pub prompt: String,
    /// Citation number to snippet source, in numbering order.
    pub sources: Vec<SourceRef>,
}

fn render(query: &str, blocks: &[(usize, &str, &str, String)]) -> String {
    let mut out = String::from("Sources:\n");
    for (n, url, title, text) in blocks {
        out.push_str(&format!("[{n}] {title} ({url})\n{text}\n\n"));
    }
    out.push_str(&format!("Question: {query}\n"));
    out
}

/// Numbered snippet blocks and the rewritten query. Lowest-similarity
/// snippets are dropped until the prompt fits `cap`; a lone snippet that is
/// still too long is truncated.
pub fn build_prompt_with_cap(pack: &EvidencePack, cap: usize) -> Result<BuiltPrompt, RetrievalError> {
    if pack.snippets.is_empty() {
        return Err(RetrievalError::EmptyEvidence);
    }
    let query = pack.query.rewritten.as_str();
    let mut keep = pack.snippets.len();
    loop {
        let mut blocks: Vec<(usize, &str, &str, String)> = pack.snippets[..keep]
            .iter()
            .enumerate()
            .map(|(i, s)| (i + 1, s.url.as_str(), s.title.as_str(), s.chunk.text.clone()))
            .collect();
        let mut prompt = render(query, &blocks);
        let total = SYSTEM_PROMPT.chars().count() + prompt.chars().count();
        if total > cap && keep > 1 {
            keep -= 1;
            continue;
        }
        if total > cap {
            let excess = total - cap;
            let text = &mut blocks[0].3;
            let len = text.chars().count();
            *text = text.chars().take(len.saturating_sub(excess)).collect();
            prompt = render(query, &blocks);
        }
        let sources = blocks
            .iter()
            .map(|(n, url, title, _)| SourceRef { n: *n, url: url.to_string(), title: title.to_string() })
            .collect();
        return Ok(BuiltPrompt { system: SYSTEM_PROMPT.to_string(), prompt, sources });
    }
}

pub fn build_prompt(pack: &EvidencePack) -> Result<BuiltPrompt, RetrievalError> {
    build_prompt_with_cap(pack, PROMPT_CAP)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditedSentence {
    pub text: String,
    pub is_factual_claim: bool,
    /// Resolvable citation numbers.
    pub citation_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationAudit {
    pub sentences: Vec<AuditedSentence>,
    pub pass: bool,
    pub uncited_claims: usize,
    /// Marker numbers that name no source.
    pub unresolved: Vec<usize>,
}

impl CitationAudit {
    pub fn uncited(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().filter(|s| s.is_factual_claim && s.citation_ids.is_empty()).map(|s| s.text.as_str())
    }
}

fn marker_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"\[(\d+(?:\s*,\s*\d+)*)\]").expect("static pattern"))
}

fn leading_markers_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"^(?:\s*\[\d+(?:\s*,\s*\d+)*\])+").expect("static pattern"))
}

fn markers(text: &str) -> Vec<usize> {
    marker_re()
        .captures_iter(text)
        .flat_map(|c| c[1].split(',').filter_map(|n| n.trim().parse().ok()).collect::<Vec<usize>>())
        .collect()
}

const ABBREVIATIONS: [&str; 8] = ["e.g.", "i.e.", "etc.", "vs.", "dr.", "approx.", "min.", "no."];

/// Splits prose into sentences. Markers that follow the closing
/// punctuation stay with the sentence they follow.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut rest = line.trim();
        while !rest.is_empty() {
            let bytes: Vec<(usize, char)> = rest.char_indices().collect();
            let mut cut = rest.len();
            for (k, &(i, c)) in bytes.iter().enumerate() {
                if !matches!(c, '.' | '!' | '?') {
                    continue;
                }
                let next = bytes.get(k + 1).map(|x| x.1);
                if next.is_some_and(|n| !n.is_whitespace() && n != '[') {
                    continue;
                }
                let head = rest[..=i].to_lowercase();
                if ABBREVIATIONS.iter().any(|a| head.ends_with(a) && head[..head.len() - a.len()].ends_with([' ', '('])) {
                    continue;
                }
                let after = &rest[i + c.len_utf8()..];
                let tail = leading_markers_re().find(after).map_or(0, |m| m.end());
                cut = i + c.len_utf8() + tail;
                break;
            }
            let sentence = rest[..cut].trim();
            if !sentence.is_empty() {
                out.push(sentence.to_string());
            }
            rest = rest[cut..].trim_start();
        }
    }
    out
}

const HEDGES: [&str; 23] = [
    "hi", "hello", "hey", "sorry", "great question", "good question", "thanks", "here are", "here is", "here's", "in summary",
    "to summarize", "overall", "let me know", "i hope", "hope this", "feel free", "good luck", "keep it up",
    "based on the sources", "according to your", "that said", "in short",
];

const IMPERATIVES: [&str; 16] = [
    "track", "keep", "log", "check", "monitor", "review", "look", "watch", "aim", "try", "consider", "make sure",
    "note", "compare", "record", "use",
];

fn strip_list_prefix(s: &str) -> &str {
    let t = s.trim_start_matches(['-', '*', '•', ' ']);
    match t.split_once(". ") {
        Some((num, rest)) if !num.is_empty() && num.chars().all(|c| c.is_ascii_digit()) => rest,
        _ => t,
    }
}

/// Claim rules, applied in order. A sentence is not a factual claim when
/// it is a question, a markdown heading or a short label ending in `:`,
/// fewer than three words, opens with a greeting or hedged transition, is a
/// statement about the user's own records (opens with "your"), or is an
/// instruction whose object is the user's own data (imperative verb plus
/// "your"). Everything else is a claim.
pub fn is_factual_claim(sentence: &str) -> bool {
    let plain = marker_re().replace_all(sentence, "");
    let s = strip_list_prefix(plain.trim()).trim();
    let lower = s.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if s.ends_with('?') || s.starts_with('#') || words.len() < 3 {
        return false;
    }
    if s.ends_with(':') && words.len() <= 8 {
        return false;
    }
    let starts = |p: &str| lower.starts_with(p) && lower[p.len()..].starts_with(|c: char| !c.is_alphanumeric());
    if HEDGES.iter().any(|h| starts(h)) {
        return false;
    }
    if words[0] == "your" {
        return false;
    }
    let mentions_own = words.iter().any(|w| w.trim_matches(|c: char| !c.is_alphanumeric()) == "your");
    !(mentions_own && IMPERATIVES.iter().any(|v| starts(v)))
}

/// Sentence-level audit against `source_count` numbered sources.
pub fn audit_citations(text: &str, source_count: usize) -> CitationAudit {
    let mut unresolved = BTreeSet::new();
    let sentences: Vec<AuditedSentence> = split_sentences(text)
        .into_iter()
        .map(|s| {
            let ids = markers(&s);
            let mut valid: Vec<usize> = Vec::new();
            for n in ids {
                if (1..=source_count).contains(&n) {
                    if !valid.contains(&n) {
                        valid.push(n);
                    }
                } else {
                    unresolved.insert(n);
                }
            }
            AuditedSentence { is_factual_claim: is_factual_claim(&s), citation_ids: valid, text: s }
        })
        .collect();
    let uncited_claims = sentences.iter().filter(|s| s.is_factual_claim && s.citation_ids.is_empty()).count();
    CitationAudit { sentences, pass: uncited_claims == 0, uncited_claims, unresolved: unresolved.into_iter().collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CacheProvenance {
    Fresh,
    Memory,
    Disk,
    Semantic,
    /// No web evidence was involved.
    #[default]
    None,
}

impl From<crate::cache::CacheLayer> for CacheProvenance {
    fn from(l: crate::cache::CacheLayer) -> Self {
        match l {
            crate::cache::CacheLayer::Memory => CacheProvenance::Memory,
            crate::cache::CacheLayer::Disk => CacheProvenance::Disk,
            crate::cache::CacheLayer::Semantic => CacheProvenance::Semantic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoachResponse {
    /// Markdown with inline `[n]` markers.
    pub text: String,
    /// Cited sources only, by number.
    pub sources: Vec<SourceRef>,
    pub audit: CitationAudit,
    pub used_web: bool,
    pub cache_provenance: CacheProvenance,
    pub attempts: u32,
    pub no_retention: bool,
    #[serde(default)]
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub prompt_cap: usize,
    pub timeout_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { prompt_cap: PROMPT_CAP, timeout_ms: 60_000, temperature: 0.2, max_tokens: 700 }
    }
}

async fn call(llm: &dyn LlmClient, req: &LlmRequest, timeout: Duration) -> Result<String, RetrievalError> {
    match tokio::time::timeout(timeout, llm.complete(req)).await {
        Ok(r) => r,
        Err(_) => Err(RetrievalError::LlmUnavailable("timed out".into())),
    }
}

pub async fn synthesize(pack: &EvidencePack, llm: &dyn LlmClient) -> Result<CoachResponse, RetrievalError> {
    synthesize_with(pack, llm, &SynthesisConfig::default()).await
}

/// One generation, then at most one corrective re-prompt when claims lack
/// citations or markers do not resolve. Markers that still do not resolve
/// after the re-prompt are an error; uncited claims are returned with a
/// failing audit.
pub async fn synthesize_with(
    pack: &EvidencePack,
    llm: &dyn LlmClient,
    config: &SynthesisConfig,
) -> Result<CoachResponse, RetrievalError> {
    let built = build_prompt_with_cap(pack, config.prompt_cap)?;
    let timeout = Duration::from_millis(config.timeout_ms);
    let mut req = LlmRequest {
        system: built.system.clone(),
        prompt: built.prompt.clone(),
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let mut text = call(llm, &req, timeout).await?;
    let mut audit = audit_citations(&text, built.sources.len());
    let mut attempts = 1;
    let mut notices = Vec::new();
    if !audit.pass || !audit.unresolved.is_empty() {
        req.prompt = format!("{}\nPrevious answer:\n{text}\n\n{CORRECTION}\n", built.prompt);
        text = call(llm, &req, timeout).await?;
        audit = audit_citations(&text, built.sources.len());
        attempts = 2;
    }
    if !audit.unresolved.is_empty() {
        return Err(RetrievalError::MalformedMarkers(audit.unresolved));
    }
    if !audit.pass {
        notices.push(format!("{} statement(s) lack a citation", audit.uncited_claims));
    }
    let cited: BTreeSet<usize> = audit.sentences.iter().flat_map(|s| s.citation_ids.iter().copied()).collect();
    let sources = built.sources.into_iter().filter(|s| cited.contains(&s.n)).collect();
    Ok(CoachResponse {
        text,
        sources,
        audit,
        used_web: true,
        cache_provenance: CacheProvenance::Fresh,
        attempts,
        no_retention: llm.no_retention(),
        notices,
    })
}

/// Replays canned replies in order and records every request.
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    replies: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<LlmRequest>>,
    delay: Duration,
}

impl ScriptedLlm {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(replies: I) -> Self {
        Self { replies: Mutex::new(replies.into_iter().map(Into::into).collect()), ..Self::default() }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn push(&self, reply: impl Into<String>) {
        self.replies.lock().push_back(reply.into());
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.requests.lock().clone()
    }
}

#[async_trait]
impl LlmClient for ScriptedLlm {
    async fn complete(&self, request: &LlmRequest) -> Result<String, RetrievalError> {
        self.requests.lock().push(request.clone());
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        self.replies.lock().pop_front().ok_or_else(|| RetrievalError::LlmUnavailable("script exhausted".into()))
    }
}

/// Offline stand-in: answers with the first full sentence of each of the
/// top three sources, each cited. Headings and fragments are skipped.
#[derive(Debug, Default)]
pub struct ExtractiveLlm {
    delay: Duration,
}

impl ExtractiveLlm {
    pub fn with_delay(delay: Duration) -> Self {
        Self { delay }
    }
}

fn block_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"^\[(\d+)\] .*\(\S+\)$").expect("static pattern"))
}

#[async_trait]
impl LlmClient for ExtractiveLlm {
    async fn complete(&self, request: &LlmRequest) -> Result<String, RetrievalError> {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let mut blocks: Vec<(String, Vec<&str>)> = Vec::new();
        for line in request.prompt.lines() {
            if let Some(c) = block_re().captures(line) {
                blocks.push((c[1].to_string(), Vec::new()));
            } else if line.starts_with("Question:") {
                break;
            } else if let Some((_, body)) = blocks.last_mut() {
                body.push(line);
            }
        }
        let mut lines = Vec::new();
        for (n, body) in blocks.iter().take(3) {
            let first = body
                .iter()
                .flat_map(|l| split_sentences(l))
                .find(|s| s.trim_end().ends_with(['.', '!', '?']) && s.split_whitespace().count() >= 4);
            if let Some(first) = first {
                let first = first.trim_end_matches(['.', '!', '?']).trim();
                lines.push(format!("{first} [{n}]."));
            }
        }
        if lines.is_empty() {
            return Err(RetrievalError::LlmUnavailable("no usable source text".into()));
        }
        Ok(format!("Here is what the sources say:\n{}", lines.join("\n")))
    }

    fn no_retention(&self) -> bool {
        true
    }
}

/// Chat-completions endpoint in the common OpenAI-compatible shape.
#[derive(Debug)]
pub struct OpenAiCompatibleClient {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    no_retention: bool,
}

impl OpenAiCompatibleClient {
    /// Reads the key from `key_env` when set.
    pub fn new(base_url: &str, model: &str, key_env: &str, no_retention: bool) -> Self {
        Self {
            client: reqwest::Client::builder().timeout(Duration::from_secs(60)).build().unwrap_or_default(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: std::env::var(key_env).ok(),
            no_retention,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[async_trait]
impl LlmClient for OpenAiCompatibleClient {
    async fn complete(&self, request: &LlmRequest) -> Result<String, RetrievalError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "store": !self.no_retention,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.prompt},
            ],
        });
        let mut req = self.client.post(format!("{}/chat/completions", self.base_url)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| RetrievalError::LlmUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RetrievalError::LlmUnavailable(format!("status {}", resp.status())));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| RetrievalError::LlmUnavailable(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| RetrievalError::LlmUnavailable("empty choices".into()))
    }

    fn no_retention(&self) -> bool {
        self.no_retention
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Chunk;
    use crate::pipeline::EvidenceSnippet;
    use crate::query::ContextualizedQuery;

    pub(crate) fn pack(n: usize, len: usize) -> EvidencePack {
        let snippets = (0..n)
            .map(|i| EvidenceSnippet {
                chunk: Chunk {
                    source_url: format!("https://nih.gov/{i}"),
                    title: format!("Doc {i}"),
                    index: 0,
                    offset: 0,
                    text: "x".repeat(len),
                },
                url: format!("https://nih.gov/{i}"),
                title: format!("Doc {i}"),
                score: 1.0 - i as f64 * 0.1,
            })
            .collect();
        EvidencePack::new(ContextualizedQuery::anonymous("recovery tips").unwrap(), snippets)
    }

    #[test]
    fn prompt_numbering_and_cap() {
        let p = build_prompt(&pack(3, 50)).unwrap();
        let a = p.prompt.find("[1] Doc 0").unwrap();
        let b = p.prompt.find("[2] Doc 1").unwrap();
        let c = p.prompt.find("[3] Doc 2").unwrap();
        assert!(a < b && b < c);
        assert!(p.prompt.ends_with("Question: recovery tips\n"));

        let big = pack(5, 3000);
        let capped = build_prompt(&big).unwrap();
        assert_eq!(capped.sources.len(), 3);
        assert!(capped.system.chars().count() + capped.prompt.chars().count() <= PROMPT_CAP);
        assert!(!capped.prompt.contains("[4]"));

        let huge = build_prompt_with_cap(&pack(1, 20_000), 2000).unwrap();
        assert!(huge.system.chars().count() + huge.prompt.chars().count() <= 2000);
        assert!(matches!(build_prompt(&pack(0, 1)), Err(RetrievalError::EmptyEvidence)));
    }

    #[test]
    fn sentence_split_keeps_trailing_markers() {
        let s = split_sentences("Studies show X improves Y. [1] Sleep helps, e.g. naps. [2][3]\nHow does that sound? Mean 7.5 hours.");
        assert_eq!(s, ["Studies show X improves Y. [1]", "Sleep helps, e.g. naps. [2][3]", "How does that sound?", "Mean 7.5 hours."]);
    }

    #[test]
    fn audit_rules() {
        let a = audit_citations("Studies show X improves Y. [1]", 1);
        assert!(a.pass && a.sentences[0].is_factual_claim && a.sentences[0].citation_ids == [1]);
        let q = audit_citations("How does that sound?", 0);
        assert!(q.pass && !q.sentences[0].is_factual_claim);
        let r = audit_citations("Research indicates Z improves recovery.", 2);
        assert_eq!((r.uncited_claims, r.pass), (1, false));
        let own = audit_citations("Your soreness score was 5 yesterday. Keep logging your sleep every night.", 0);
        assert!(own.pass);
        let bad = audit_citations("Ice reduces swelling after sprains [4].", 3);
        assert_eq!(bad.unresolved, [4]);
        assert!(!bad.pass);
        let multi = audit_citations("Protein timing matters for repair [1, 3].", 3);
        assert_eq!(multi.sentences[0].citation_ids, [1, 3]);
    }

    #[test]
    fn audit_is_idempotent() {
        let text = "Hi there! Foam rolling reduces soreness [1]. Hydration matters for cramps. Try it tonight?";
        assert_eq!(audit_citations(text, 2), audit_citations(text, 2));
    }

    #[tokio::test]
    async fn corrective_reprompt_fixes_uncited_claim() {
        let llm = ScriptedLlm::new(["Cold baths cut soreness.", "Cold baths cut soreness [1]."]);
        let r = synthesize(&pack(2, 100), &llm).await.unwrap();
        assert!(r.audit.pass);
        assert_eq!(r.attempts, 2);
        assert_eq!(r.sources.len(), 1);
        assert_eq!(r.sources[0].url, "https://nih.gov/0");
        let reqs = llm.requests();
        assert_eq!(reqs.len(), 2);
        assert!(reqs[1].prompt.contains("Previous answer:\nCold baths cut soreness."));
    }

    #[tokio::test]
    async fn persistent_bad_marker_is_an_error() {
        let llm = ScriptedLlm::new(["Ice helps sprains heal [4].", "Ice helps sprains heal [9]."]);
        let err = synthesize(&pack(3, 100), &llm).await.unwrap_err();
        assert!(matches!(err, RetrievalError::MalformedMarkers(ref v) if v == &[9]));
    }

    #[tokio::test]
    async fn uncited_after_retry_is_flagged_not_hidden() {
        let llm = ScriptedLlm::new(["Magnesium cures cramps.", "Magnesium cures cramps."]);
        let r = synthesize(&pack(1, 100), &llm).await.unwrap();
        assert!(!r.audit.pass);
        assert_eq!(r.audit.uncited().collect::<Vec<_>>(), ["Magnesium cures cramps."]);
        assert_eq!(r.notices.len(), 1);
    }

    #[tokio::test]
    async fn extractive_client_cites_what_it_quotes() {
        let mut p = pack(2, 0);
        p.snippets[0].chunk.text = "Cold water immersion reduces soreness after games. More text.".into();
        p.snippets[1].chunk.text = "Sleep extension improves sprint times in athletes.".into();
        let r = synthesize(&p, &ExtractiveLlm::default()).await.unwrap();
        assert!(r.audit.pass, "{:?}", r.audit);
        assert_eq!(r.attempts, 1);
        assert_eq!(r.sources.len(), 2);
        assert!(r.no_retention);
    }

    #[tokio::test]
    async fn extractive_client_skips_headings_and_spans_paragraphs() {
        let mut p = pack(2, 0);
        p.snippets[0].chunk.text = "Recovering well\n\nRest days help muscles rebuild after hard weeks. Drink water.".into();
        p.snippets[1].chunk.text = "Sleep\n\nShort\n\nSeven to nine hours suits most adults.".into();
        let r = synthesize(&p, &ExtractiveLlm::default()).await.unwrap();
        assert_eq!(
            r.text,
            "Here is what the sources say:\nRest days help muscles rebuild after hard weeks [1].\nSeven to nine hours suits most adults [2]."
        );
    }
}
