use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use sepa_core::ingestion::UserProfile;
use sepa_core::Task;

use crate::RetrievalError;

/// Risk percent at or above which a task is mentioned in the rewritten query.
pub const ELEVATED_PERCENT: u32 = 50;
const HIGH_PERCENT: u32 = 67;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryContext {
    pub age: u32,
    pub sex: String,
    pub sport: String,
    pub insights: Vec<String>,
    /// Available predictions as percents of the 1-7 scale.
    pub risk_predictions: IndexMap<Task, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualizedQuery {
    pub original: String,
    pub rewritten: String,
    pub context: QueryContext,
    pub anonymization_verified: bool,
}

impl ContextualizedQuery {
    /// A query sent without personal context; still scrubbed and verified.
    pub fn anonymous(text: &str) -> Result<Self, RetrievalError> {
        let rewritten = collapse(&scrub_generic(text));
        verify(&rewritten, &[])?;
        Ok(Self {
            original: text.to_string(),
            rewritten,
            context: QueryContext {
                age: 0,
                sex: String::new(),
                sport: String::new(),
                insights: Vec::new(),
                risk_predictions: IndexMap::new(),
            },
            anonymization_verified: true,
        })
    }
}

/// Maps a 1-7 score onto 0-100 %.
pub fn score_to_percent(score: f64) -> u32 {
    (((score.clamp(1.0, 7.0) - 1.0) / 6.0) * 100.0).round() as u32
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern"))
}

fn email_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    regex(&R, r"(?i)[a-z0-9._%+-]+@[a-z0-9.-]+\.[a-z]{2,}")
}

fn date_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    regex(
        &R,
        r"(?ix)
        \b\d{4}-\d{1,2}-\d{1,2}\b
        | \b\d{1,2}/\d{1,2}/\d{2,4}\b
        | \b(?:jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)[a-z]*\.?\s+\d{1,2}(?:st|nd|rd|th)?\b
        | \b\d{1,2}(?:st|nd|rd|th)?\s+(?:of\s+)?(?:jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)[a-z]*\b",
    )
}

fn phone_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    regex(&R, r"\+?\d[\d\s().-]{6,}\d")
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn scrub_generic(text: &str) -> String {
    let t = email_re().replace_all(text, " ");
    let t = date_re().replace_all(&t, " ");
    phone_re().replace_all(&t, " ").into_owned()
}

/// Identifier strings that must never appear in outbound text.
fn identifiers(profile: &UserProfile) -> Vec<String> {
    let mut out = vec![profile.user_id.as_str().to_string()];
    if let Some(name) = &profile.display_name {
        out.push(name.clone());
        out.extend(name.split_whitespace().filter(|p| p.chars().count() >= 2).map(str::to_string));
    }
    out.retain(|s| !s.trim().is_empty());
    out
}

/// Removes emails, dates, phone numbers and the profile's identifiers
/// (whole words, any case).
pub fn scrub(text: &str, profile: &UserProfile) -> String {
    let mut t = scrub_generic(text);
    for ident in identifiers(profile) {
        let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(&ident))).expect("escaped pattern");
        t = re.replace_all(&t, " ").into_owned();
    }
    collapse(&t)
}

/// Fails if any identifier survives as a substring (three or more
/// characters) or a whole word (shorter ones), or if an email or date
/// pattern remains.
fn verify(text: &str, idents: &[String]) -> Result<(), RetrievalError> {
    let lower = text.to_lowercase();
    for ident in idents {
        let id = ident.to_lowercase();
        let present = if id.chars().count() >= 3 {
            lower.contains(&id)
        } else {
            Regex::new(&format!(r"\b{}\b", regex::escape(&id))).expect("escaped pattern").is_match(&lower)
        };
        if present {
            return Err(RetrievalError::ScrubFailure("profile identifier".into()));
        }
    }
    if email_re().is_match(text) {
        return Err(RetrievalError::ScrubFailure("email address".into()));
    }
    if date_re().is_match(text) {
        return Err(RetrievalError::ScrubFailure("calendar date".into()));
    }
    Ok(())
}

const TEAM_SPORTS: [&str; 14] = [
    "basketball", "soccer", "football", "volleyball", "tennis", "hockey", "baseball", "rugby", "handball", "lacrosse",
    "softball", "cricket", "golf", "badminton",
];

fn athlete_phrase(age: u32, sport: &str) -> String {
    let sport = sport.trim().to_lowercase();
    let noun = if TEAM_SPORTS.contains(&sport.as_str()) { "player" } else { "athlete" };
    match (age, sport.is_empty()) {
        (0, true) => "an athlete".to_string(),
        (0, false) => format!("a {sport} {noun}"),
        (a, true) => format!("a {a}-year-old athlete"),
        (a, false) => format!("a {a}-year-old {sport} {noun}"),
    }
}

/// Turns a question into a search intent ("How can I reduce soreness?" →
/// "Strategies to reduce soreness").
fn intent(text: &str) -> String {
    let t = collapse(text.trim().trim_end_matches(['?', '.', '!']));
    let lower = t.to_lowercase();
    let prefixes = [
        "how can i ",
        "how do i ",
        "how should i ",
        "how could i ",
        "what can i do to ",
        "what should i do to ",
        "how to ",
        "ways to ",
        "tips to ",
    ];
    let body = prefixes.iter().find_map(|p| lower.strip_prefix(p).map(|_| &t[p.len()..]));
    let mut out = match body {
        Some(rest) => format!("Strategies to {rest}"),
        None => t.clone(),
    };
    for (from, to) in [(" my ", " "), (" me ", " "), (" i ", " ")] {
        out = format!(" {out} ").replace(from, to).trim().to_string();
    }
    out
}

fn risk_phrase(task: Task, pct: u32) -> String {
    let level = if pct >= HIGH_PERCENT { "high" } else { "elevated" };
    format!("{level} {} ({pct}%)", task.display_name())
}

fn join_and(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Deterministic template: intent, demographics, elevated risks and
/// recent-metric flags, then a scrub and a verification pass. The query is
/// only marked verified when no identifier, email or date survives.
pub fn contextualize_query(
    original: &str,
    profile: &UserProfile,
    predictions: &[(Task, f64)],
    insights: &[String],
) -> Result<ContextualizedQuery, RetrievalError> {
    let age = profile.age.round().max(0.0) as u32;
    let risk_predictions: IndexMap<Task, u32> = predictions.iter().map(|(t, v)| (*t, score_to_percent(*v))).collect();
    let mut qualifiers: Vec<String> = risk_predictions
        .iter()
        .filter(|(_, p)| **p >= ELEVATED_PERCENT)
        .map(|(t, p)| risk_phrase(*t, *p))
        .collect();
    qualifiers.extend(insights.iter().map(|s| collapse(s)).filter(|s| !s.is_empty()));

    let mut rewritten = format!("{} for {}", intent(&scrub(original, profile)), athlete_phrase(age, &profile.sport));
    if !qualifiers.is_empty() {
        rewritten.push_str(" with ");
        rewritten.push_str(&join_and(&qualifiers));
    }
    let rewritten = scrub(&rewritten, profile);
    verify(&rewritten, &identifiers(profile))?;

    Ok(ContextualizedQuery {
        original: original.to_string(),
        rewritten,
        context: QueryContext {
            age,
            sex: profile.sex.as_str().to_string(),
            sport: profile.sport.clone(),
            insights: insights.to_vec(),
            risk_predictions,
        },
        anonymization_verified: true,
    })
}
