//! Per-turn response times and their five-number summaries.

use serde::{Deserialize, Serialize};

use sepa_retrieval::CacheProvenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTiming {
    pub turn_id: String,
    pub used_web: bool,
    /// Wall time of the whole turn.
    pub elapsed_ms: f64,
    pub cache_provenance: CacheProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Summaries keyed by whether the turn used the web.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub web: Option<FiveNumber>,
    pub no_web: Option<FiveNumber>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LatencyError {
    #[error("no recorded turns")]
    NoData,
}

/// Nearest-rank quantile: the ⌈p·n⌉-th smallest value. At p = 0.5 this is
/// the lower median for even n.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn five_number(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(FiveNumber {
        n: v.len(),
        min: v[0],
        q1: nearest_rank(&v, 0.25),
        median: nearest_rank(&v, 0.5),
        q3: nearest_rank(&v, 0.75),
        max: v[v.len() - 1],
    })
}

pub fn latency_report(timings: &[TurnTiming]) -> Result<LatencyReport, LatencyError> {
    if timings.is_empty() {
        return Err(LatencyError::NoData);
    }
    let group = |web: bool| {
        let v: Vec<f64> = timings.iter().filter(|t| t.used_web == web).map(|t| t.elapsed_ms).collect();
        five_number(&v)
    };
    Ok(LatencyReport { web: group(true), no_web: group(false) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(ms: f64, web: bool) -> TurnTiming {
        TurnTiming { turn_id: String::new(), used_web: web, elapsed_ms: ms, cache_provenance: CacheProvenance::None }
    }

    #[test]
    fn three_turns() {
        let r = latency_report(&[t(6.0, false), t(2.0, false), t(4.0, false)]).unwrap();
        let s = r.no_web.unwrap();
        assert_eq!((s.n, s.min, s.q1, s.median, s.q3, s.max), (3, 2.0, 2.0, 4.0, 6.0, 6.0));
        assert!(r.web.is_none());
    }

    #[test]
    fn even_count_uses_lower_median() {
        let s = five_number(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.0, 2.0, 3.0));
    }

    #[test]
    fn empty_window() {
        assert_eq!(latency_report(&[]), Err(LatencyError::NoData));
    }

    proptest! {
        #[test]
        fn summary_is_ordered_and_drawn_from_data(v in proptest::collection::vec(0.001f64..1e5, 1..60)) {
            let s = five_number(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            for q in [s.q1, s.median, s.q3] {
                prop_assert!(v.contains(&q));
            }
            // At least half the values are at or below the median, and at least half at or above it.
            let below = v.iter().filter(|&&x| x <= s.median).count();
            let above = v.iter().filter(|&&x| x >= s.median).count();
            prop_assert!(2 * below >= v.len() && 2 * above >= v.len());
        }
    }
}
