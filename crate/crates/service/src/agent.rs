//! The conversational loop: route a question to tools, gather the user's
//! data and risk scores, optionally answer from trusted web evidence, and
//! record the turn.

use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use sepa_core::featurization::DailyFeatureRow;
use sepa_core::ingestion::UserProfile;
use sepa_core::modeling::{tier_select, ModelTier, PredictionSet, RiskPrediction};
use sepa_core::{Task, UserId};
use sepa_retrieval::cache::canonical_key;
use sepa_retrieval::search::detect_mode;
use sepa_retrieval::{
    audit_citations, contextualize_query, CacheProvenance, CoachResponse, CoachingPipeline, ContextualizedQuery,
    LlmClient, LlmRequest, SearchMode,
};

use crate::latency::TurnTiming;

/// Prompt history is cut to this many turns.
pub const HISTORY_TURNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    GetDailyData,
    GetPredictions,
    WebSearch,
    VideoSearch,
}

impl ToolName {
    pub const ALL: [ToolName; 4] =
        [ToolName::GetDailyData, ToolName::GetPredictions, ToolName::WebSearch, ToolName::VideoSearch];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::GetDailyData => "get_daily_data",
            ToolName::GetPredictions => "get_predictions",
            ToolName::WebSearch => "web_search",
            ToolName::VideoSearch => "video_search",
        }
    }

    pub fn parse(s: &str) -> Option<ToolName> {
        ToolName::ALL.into_iter().find(|t| t.as_str() == s.trim())
    }

    fn is_web(self) -> bool {
        matches!(self, ToolName::WebSearch | ToolName::VideoSearch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: ToolName,
    pub description: String,
    /// JSON schema of the arguments.
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRegistry {
    tools: Vec<ToolDescriptor>,
}

impl ToolRegistry {
    pub fn new(tools: Vec<ToolDescriptor>) -> Result<Self, String> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &tools {
            if !seen.insert(t.name) {
                return Err(format!("tool `{}` registered twice", t.name.as_str()));
            }
        }
        Ok(Self { tools })
    }

    pub fn standard() -> Self {
        let question = serde_json::json!({
            "type": "object",
            "properties": {"question": {"type": "string"}},
            "required": ["question"]
        });
        let tools = vec![
            ToolDescriptor {
                name: ToolName::GetDailyData,
                description: "Latest nightly and daily wearable metrics for the user".into(),
                parameters: serde_json::json!({"type": "object", "properties": {}}),
            },
            ToolDescriptor {
                name: ToolName::GetPredictions,
                description: "Today's stress, soreness and injury risk scores on a 1-7 scale".into(),
                parameters: serde_json::json!({"type": "object", "properties": {}}),
            },
            ToolDescriptor {
                name: ToolName::WebSearch,
                description: "Search trusted health and sports-science sites and answer with citations".into(),
                parameters: question.clone(),
            },
            ToolDescriptor {
                name: ToolName::VideoSearch,
                description: "Find exercise or technique videos from trusted channels".into(),
                parameters: question,
            },
        ];
        Self::new(tools).expect("standard tools are unique")
    }

    pub fn names(&self) -> Vec<ToolName> {
        self.tools.iter().map(|t| t.name).collect()
    }

    pub fn descriptors(&self) -> &[ToolDescriptor] {
        &self.tools
    }

    pub fn contains(&self, name: ToolName) -> bool {
        self.tools.iter().any(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: ToolName,
    pub arguments: serde_json::Value,
}

impl ToolInvocation {
    fn new(tool: ToolName, query: &str) -> Self {
        let arguments = if tool.is_web() { serde_json::json!({"question": query}) } else { serde_json::json!({}) };
        Self { tool, arguments }
    }
}

const ADVICE_CUES: [&str; 29] = [
    "how can i", "how do i", "how should", "what should", "should i", "what can i", "how to", "tips", "advice",
    "what helps", "what can help", "strategies", "strategy", "recommend", "recommendations", "suggest", "suggested", "help me", "ways to",
    "improve", "reduce", "prevent", "optimize", "best way", "what are some", "could you give", "can you give",
    "what advice", "insights",
];

const METRIC_CUES: [&str; 16] = [
    "heart rate", "resting hr", "hrv", "heart rate variability", "sleep", "slept", "deep sleep", "rem", "spo2",
    "oxygen", "steps", "calories", "vo2", "workout", "breathing rate", "respiration",
];

const OWN_DATA_CUES: [&str; 10] =
    ["what was my", "what is my", "what s my", "how much did i", "how long did i", "how many", "did i", "my data", "show my", "last night"];

const PREDICTION_CUES: [&str; 9] =
    ["risk", "today", "forecast", "predict", "prediction", "predictions", "tomorrow", "score", "scores"];

fn has_cue(text: &str, cues: &[&str]) -> bool {
    cues.iter().any(|c| text.contains(&format!(" {c} ")))
}

/// Offline routing by phrase rules. Depends only on the query text and the
/// available tools.
pub fn route_query(query: &str, available: &[ToolName]) -> Vec<ToolInvocation> {
    let text = format!(" {} ", canonical_key(query));
    let mut picked = Vec::new();
    let advice = has_cue(&text, &ADVICE_CUES);
    let own_metric = has_cue(&text, &METRIC_CUES) && (has_cue(&text, &OWN_DATA_CUES) || text.contains(" yesterday "));
    if own_metric && !advice {
        picked.push(ToolName::GetDailyData);
    }
    if has_cue(&text, &PREDICTION_CUES) {
        picked.push(ToolName::GetPredictions);
    }
    if detect_mode(query) == SearchMode::Video {
        picked.push(ToolName::VideoSearch);
    } else if advice {
        picked.push(ToolName::WebSearch);
    }
    picked.retain(|t| available.contains(t));
    picked.into_iter().map(|t| ToolInvocation::new(t, query)).collect()
}

#[async_trait]
pub trait Router: Send + Sync {
    async fn route(&self, query: &str, history: &[Turn], available: &[ToolName]) -> Vec<ToolInvocation>;
}

pub struct RuleRouter;

#[async_trait]
impl Router for RuleRouter {
    async fn route(&self, query: &str, _history: &[Turn], available: &[ToolName]) -> Vec<ToolInvocation> {
        route_query(query, available)
    }
}

/// Lets a language model pick tools; falls back to the rules when the model
/// fails or names nothing usable.
pub struct LlmRouter {
    pub llm: Arc<dyn LlmClient>,
    pub tools: ToolRegistry,
}

#[async_trait]
impl Router for LlmRouter {
    async fn route(&self, query: &str, history: &[Turn], available: &[ToolName]) -> Vec<ToolInvocation> {
        let catalog: String = self
            .tools
            .descriptors()
            .iter()
            .filter(|d| available.contains(&d.name))
            .map(|d| format!("- {}: {}\n", d.name.as_str(), d.description))
            .collect();
        let request = LlmRequest {
            system: "You pick which tools a sports coaching assistant needs for the athlete's latest message. \
                     Reply with a comma separated list of tool names, or `none`."
                .into(),
            prompt: format!("Tools:\n{catalog}\nConversation:\n{}\nLatest message: {query}\n", render_history(history)),
            temperature: 0.0,
            max_tokens: 40,
        };
        match self.llm.complete(&request).await {
            Ok(reply) if reply.trim().eq_ignore_ascii_case("none") => Vec::new(),
            Ok(reply) => {
                let mut tools: Vec<ToolName> =
                    reply.split([',', '\n', ' ']).filter_map(ToolName::parse).filter(|t| available.contains(t)).collect();
                tools.dedup();
                if tools.is_empty() {
                    route_query(query, available)
                } else {
                    tools.into_iter().map(|t| ToolInvocation::new(t, query)).collect()
                }
            }
            Err(e) => {
                log::warn!("tool selection failed, using rules: {e}");
                route_query(query, available)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub tool_invocations: Vec<ToolInvocation>,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub user_id: UserId,
    pub turns: Vec<Turn>,
    pub tier: ModelTier,
    pub created_at: DateTime<Utc>,
}

impl ConversationState {
    pub fn new(user_id: UserId, tier: ModelTier, now: DateTime<Utc>) -> Self {
        Self { user_id, turns: Vec::new(), tier, created_at: now }
    }

    /// The last `n` turns.
    pub fn history(&self, n: usize) -> &[Turn] {
        &self.turns[self.turns.len().saturating_sub(n)..]
    }
}

fn render_history(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", if t.role == Role::User { "athlete" } else { "coach" }, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Where the agent reads a user's data from.
pub trait UserDataSource: Send + Sync {
    fn profile(&self, user: &UserId) -> Result<Option<UserProfile>, String>;
    fn latest_row(&self, user: &UserId) -> Result<Option<DailyFeatureRow>, String>;
    fn labeled_days(&self, user: &UserId) -> Result<usize, String>;
    /// Tier-gated scores for the latest day, `None` without feature data.
    fn predictions(&self, user: &UserId) -> Result<Option<PredictionSet>, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub response: CoachResponse,
    pub timing: TurnTiming,
    pub invocations: Vec<ToolInvocation>,
    /// The anonymized query sent to search, when one was built.
    pub search_query: Option<ContextualizedQuery>,
}

const METRICS: [(&str, &str, &str); 6] = [
    ("sleep_stage.duration.night", "sleep last night", "min"),
    ("sleep_stage.deep.duration.night", "deep sleep", "min"),
    ("sleep_stage.rem.duration.night", "REM sleep", "min"),
    ("heart_rate.min.night", "resting heart rate (overnight low)", "bpm"),
    ("hrv.mean.night", "overnight HRV", "ms"),
    ("workout.duration.day_minus_1", "workout time yesterday", "min"),
];

/// Readable lines for the headline metrics of a feature row.
pub fn daily_facts(row: &DailyFeatureRow) -> Vec<String> {
    let mut out = vec![format!("Your latest data: {}", row.date)];
    for (key, label, unit) in METRICS {
        if let Some(v) = row.features.get(key).filter(|v| v.is_finite()) {
            out.push(format!("Your {label}: {v:.0} {unit}"));
        }
    }
    out
}

fn insights(row: &DailyFeatureRow) -> Vec<String> {
    match row.features.get("sleep_stage.duration.night") {
        Some(&m) if m.is_finite() && m < 360.0 => vec!["short sleep last night".to_string()],
        _ => Vec::new(),
    }
}

pub fn prediction_facts(set: &PredictionSet) -> Vec<String> {
    set.predictions
        .iter()
        .map(|(task, p)| match p {
            RiskPrediction::Available { value, tier, .. } => {
                format!("Your {} today: {value:.1} of 7 ({})", task.display_name(), tier.as_str().replace('_', " "))
            }
            RiskPrediction::Unavailable { reason, .. } => format!("Your {}: {reason}", task.display_name()),
        })
        .collect()
}

const GREETING: &str = "Hi! What would you like to know about your sleep, recovery, training load or today's risk scores?";

fn template_answer(facts: &[String], wanted_web: bool) -> String {
    if facts.is_empty() {
        if wanted_web {
            return "Sorry, I could not reach trusted sources for that just now, so I would rather not guess. Could you \
                    try again in a moment?"
                .into();
        }
        return GREETING.into();
    }
    format!("Here is what I found:\n{}", facts.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n"))
}

pub struct Agent {
    pub pipeline: Arc<CoachingPipeline>,
    pub data: Arc<dyn UserDataSource>,
    pub router: Arc<dyn Router>,
    /// Writes answers that need no web evidence. Without one, answers are
    /// assembled from templates.
    pub responder: Option<Arc<dyn LlmClient>>,
    pub tools: ToolRegistry,
}

impl Agent {
    pub fn new(pipeline: Arc<CoachingPipeline>, data: Arc<dyn UserDataSource>) -> Self {
        Self { pipeline, data, router: Arc::new(RuleRouter), responder: None, tools: ToolRegistry::standard() }
    }

    pub fn with_responder(mut self, llm: Arc<dyn LlmClient>) -> Self {
        self.responder = Some(llm);
        self
    }

    pub fn with_router(mut self, router: Arc<dyn Router>) -> Self {
        self.router = router;
        self
    }

    async fn direct_answer(
        &self,
        history: &[Turn],
        query: &str,
        facts: &[String],
        wanted_web: bool,
        notices: &mut Vec<String>,
    ) -> (String, bool) {
        let Some(llm) = &self.responder else { return (template_answer(facts, wanted_web), true) };
        let request = LlmRequest {
            system: "You are a supportive sports coach. Use only the athlete data given. Do not state medical or \
                     scientific facts you cannot support from it."
                .into(),
            prompt: format!(
                "Conversation so far:\n{}\n\nAthlete data:\n{}\n\nAthlete: {query}\n",
                render_history(history),
                if facts.is_empty() { "(none)".to_string() } else { facts.join("\n") }
            ),
            temperature: 0.3,
            max_tokens: 400,
        };
        match llm.complete(&request).await {
            Ok(text) if !text.trim().is_empty() => (text, llm.no_retention()),
            Ok(_) | Err(_) => {
                notices.push("the language model did not answer; showing a summary instead".into());
                (template_answer(facts, wanted_web), true)
            }
        }
    }

    /// One exchange. Tool failures become notices on the response; the turn
    /// itself always completes.
    pub async fn run_turn(&self, state: &mut ConversationState, query: &str) -> TurnOutcome {
        let start = tokio::time::Instant::now();
        let user = state.user_id.clone();
        let invocations = self.router.route(query, state.history(HISTORY_TURNS), &self.tools.names()).await;
        let routed = |t: ToolName| invocations.iter().any(|i| i.tool == t);
        let web_tool = invocations.iter().map(|i| i.tool).find(|t| t.is_web());
        let mut notices: Vec<String> = Vec::new();
        let mut facts: Vec<String> = Vec::new();

        let profile = self.data.profile(&user).unwrap_or_else(|e| {
            notices.push(format!("profile unavailable: {e}"));
            None
        });
        let needs_row = routed(ToolName::GetDailyData) || web_tool.is_some();
        let row = if needs_row {
            self.data.latest_row(&user).unwrap_or_else(|e| {
                notices.push(format!("daily data unavailable: {e}"));
                None
            })
        } else {
            None
        };
        if routed(ToolName::GetDailyData) {
            match &row {
                Some(r) => facts.extend(daily_facts(r)),
                None => notices.push("no wearable data has been processed yet".into()),
            }
        }

        let predictions = if routed(ToolName::GetPredictions) || web_tool.is_some() {
            self.data.predictions(&user).unwrap_or_else(|e| {
                notices.push(format!("risk scores unavailable: {e}"));
                None
            })
        } else {
            None
        };
        match &predictions {
            Some(set) => state.tier = set.tier,
            None => {
                if let Ok(d) = self.data.labeled_days(&user) {
                    state.tier = tier_select(d).tier;
                }
            }
        }
        if routed(ToolName::GetPredictions) {
            match &predictions {
                Some(set) => facts.extend(prediction_facts(set)),
                None => notices.push("no risk scores yet: upload wearable data first".into()),
            }
        }

        let mut response: Option<CoachResponse> = None;
        let mut search_query = None;
        if let Some(tool) = web_tool {
            let mode = if tool == ToolName::VideoSearch { SearchMode::Video } else { SearchMode::Text };
            let scores: Vec<(Task, f64)> = predictions
                .iter()
                .flat_map(|s| s.predictions.iter())
                .filter_map(|(t, p)| p.value().map(|v| (*t, v)))
                .collect();
            let context = row.as_ref().map(insights).unwrap_or_default();
            let built = match &profile {
                Some(p) => contextualize_query(query, p, &scores, &context),
                None => ContextualizedQuery::anonymous(query),
            };
            match built {
                Ok(q) if q.anonymization_verified => {
                    match self.pipeline.answer(&q, mode).await {
                        Ok(answer) => response = Some(answer.response),
                        Err(e) => notices.push(format!("web search unavailable ({e}); answered without it")),
                    }
                    search_query = Some(q);
                }
                Ok(_) | Err(_) => notices.push("could not anonymize the question; answered without the web".into()),
            }
        }

        let mut response = match response {
            Some(r) => r,
            None => {
                let (text, no_retention) =
                    self.direct_answer(state.history(HISTORY_TURNS), query, &facts, web_tool.is_some(), &mut notices).await;
                let audit = audit_citations(&text, 0);
                CoachResponse {
                    text,
                    sources: Vec::new(),
                    audit,
                    used_web: false,
                    cache_provenance: CacheProvenance::None,
                    attempts: u32::from(self.responder.is_some()),
                    no_retention,
                    notices: Vec::new(),
                }
            }
        };
        response.notices.extend(notices);

        let now = Utc::now();
        state.turns.push(Turn { role: Role::User, text: query.to_string(), tool_invocations: invocations.clone(), at: now });
        state.turns.push(Turn { role: Role::Agent, text: response.text.clone(), tool_invocations: Vec::new(), at: now });

        let timing = TurnTiming {
            turn_id: format!("turn-{}", uuid::Uuid::new_v4().simple()),
            used_web: response.used_web,
            elapsed_ms: start.elapsed().as_secs_f64() * 1000.0,
            cache_provenance: response.cache_provenance,
        };
        TurnOutcome { response, timing, invocations, search_query }
    }
}

/// Conversations by user. Turns of one user run one at a time; different
/// users proceed independently.
#[derive(Default)]
pub struct Sessions {
    inner: parking_lot::Mutex<HashMap<UserId, Arc<tokio::sync::Mutex<ConversationState>>>>,
}

impl Sessions {
    fn slot(&self, user: &UserId, tier: ModelTier) -> Arc<tokio::sync::Mutex<ConversationState>> {
        self.inner
            .lock()
            .entry(user.clone())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(ConversationState::new(user.clone(), tier, Utc::now()))))
            .clone()
    }

    pub async fn run_turn(&self, agent: &Agent, user: &UserId, query: &str) -> TurnOutcome {
        let tier = agent.data.labeled_days(user).map(|d| tier_select(d).tier).unwrap_or(ModelTier::GeneralizedColdStart);
        let slot = self.slot(user, tier);
        let mut state = slot.lock().await;
        agent.run_turn(&mut state, query).await
    }

    pub async fn state(&self, user: &UserId) -> Option<ConversationState> {
        let slot = self.inner.lock().get(user).cloned()?;
        let state = slot.lock().await;
        Some(state.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tools(q: &str) -> Vec<ToolName> {
        route_query(q, &ToolName::ALL).into_iter().map(|i| i.tool).collect()
    }

    #[test]
    fn routing_examples() {
        assert_eq!(tools("How can I improve my muscle recovery?"), [ToolName::WebSearch]);
        assert_eq!(tools("What was my resting heart rate yesterday?"), [ToolName::GetDailyData]);
        assert!(tools("hello").is_empty());
        assert_eq!(tools("What is my injury risk today?"), [ToolName::GetPredictions]);
        assert_eq!(tools("Show me a video of a proper squat"), [ToolName::VideoSearch]);
        assert_eq!(tools("How much did I sleep last night?"), [ToolName::GetDailyData]);
        assert_eq!(tools("What helps tight hamstrings after long runs?"), [ToolName::WebSearch]);
        assert_eq!(
            tools("Could you give me a suggested workout about an hour long that hits legs, based on my current injury risk level?"),
            [ToolName::GetPredictions, ToolName::WebSearch]
        );
    }

    #[test]
    fn routing_respects_available_tools() {
        assert!(route_query("How can I improve my muscle recovery?", &[ToolName::GetDailyData]).is_empty());
        let r = route_query("How can I reduce stress?", &[ToolName::WebSearch]);
        assert_eq!(r[0].arguments["question"], "How can I reduce stress?");
    }

    #[test]
    fn duplicate_tools_rejected() {
        let t = ToolRegistry::standard().descriptors()[0].clone();
        assert!(ToolRegistry::new(vec![t.clone(), t]).is_err());
        assert_eq!(ToolRegistry::standard().names(), ToolName::ALL);
    }

    #[test]
    fn templated_answers_pass_the_citation_audit() {
        let row = DailyFeatureRow {
            user_id: UserId::new("u"),
            date: chrono::NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
            features: METRICS.iter().enumerate().map(|(i, (k, _, _))| (k.to_string(), 50.0 + i as f64)).collect(),
            labels: None,
        };
        let set = PredictionSet {
            user_id: UserId::new("u"),
            date: row.date,
            tier: ModelTier::GeneralizedColdStart,
            labeled_days: 3,
            predictions: [
                (Task::Soreness, RiskPrediction::Available {
                    value: 3.25,
                    tier: ModelTier::GeneralizedColdStart,
                    model_version: "gbt-soreness-v1".into(),
                    produced_at: Utc::now(),
                }),
                (Task::Stress, RiskPrediction::Unavailable {
                    tier: ModelTier::GeneralizedColdStart,
                    reason: "needs more labeled days".into(),
                }),
            ]
            .into_iter()
            .collect(),
        };
        let mut facts = daily_facts(&row);
        facts.extend(prediction_facts(&set));
        assert_eq!(facts.len(), 9);
        for (f, web) in [(facts.as_slice(), false), (&[][..], false), (&[][..], true)] {
            let text = template_answer(f, web);
            let audit = audit_citations(&text, 0);
            assert!(audit.pass, "{text}\n{audit:#?}");
        }
    }

    #[test]
    fn history_window() {
        let mut s = ConversationState::new(UserId::new("u"), ModelTier::GeneralizedColdStart, Utc::now());
        for i in 0..13 {
            s.turns.push(Turn { role: Role::User, text: i.to_string(), tool_invocations: vec![], at: Utc::now() });
        }
        let h = s.history(HISTORY_TURNS);
        assert_eq!(h.len(), 10);
        assert_eq!(h[0].text, "3");
        assert_eq!(s.history(50).len(), 13);
    }

    proptest! {
        #[test]
        fn router_is_pure_and_bounded(q in "[a-zA-Z ?']{0,60}", mask in 0u8..16) {
            let available: Vec<ToolName> = ToolName::ALL.into_iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, t)| t).collect();
            let a = route_query(&q, &available);
            prop_assert_eq!(&a, &route_query(&q, &available));
            prop_assert!(a.iter().all(|i| available.contains(&i.tool)));
            prop_assert!(a.iter().filter(|i| i.tool.is_web()).count() <= 1);
        }
    }
}
