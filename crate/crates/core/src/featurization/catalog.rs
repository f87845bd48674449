use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ingestion::{SleepStageKind, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Std,
    Skewness,
    Min,
    Max,
    DfaAlpha,
    SampleEntropy,
    /// Lag-1 autocorrelation.
    SecondOrderLag1,
    /// Lag-2 autocorrelation.
    SecondOrderLag2,
    /// Variance of first differences.
    SecondOrderDiffVar,
    /// Sum of record values (minutes for sleep epochs and workouts).
    Duration,
    Count,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Std => "std",
            Statistic::Skewness => "skewness",
            Statistic::Min => "min",
            Statistic::Max => "max",
            Statistic::DfaAlpha => "dfa_alpha",
            Statistic::SampleEntropy => "sample_entropy",
            Statistic::SecondOrderLag1 => "second_order_lag1",
            Statistic::SecondOrderLag2 => "second_order_lag2",
            Statistic::SecondOrderDiffVar => "second_order_diffvar",
            Statistic::Duration => "duration",
            Statistic::Count => "count",
        }
    }
}

/// Time window relative to the prediction date `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// The just-completed night: `[D-1 20:00, D 10:00)`.
    Night,
    DayMinus1,
    DayMinus2,
    DayMinus3,
    /// `[D-3 00:00, D 00:00)`.
    Trailing72h,
}

impl Window {
    pub fn as_str(self) -> &'static str {
        match self {
            Window::Night => "night",
            Window::DayMinus1 => "day_minus_1",
            Window::DayMinus2 => "day_minus_2",
            Window::DayMinus3 => "day_minus_3",
            Window::Trailing72h => "trailing_72h",
        }
    }

    /// Half-open `[start, end)` bounds for prediction date `date`.
    pub fn bounds(self, date: NaiveDate) -> (DateTime<Utc>, DateTime<Utc>) {
        let midnight = date.and_time(NaiveTime::MIN).and_utc();
        let day = Duration::days(1);
        match self {
            Window::Night => (midnight - Duration::hours(4), midnight + Duration::hours(10)),
            Window::DayMinus1 => (midnight - day, midnight),
            Window::DayMinus2 => (midnight - day * 2, midnight - day),
            Window::DayMinus3 => (midnight - day * 3, midnight - day * 2),
            Window::Trailing72h => (midnight - day * 3, midnight),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub stream: Stream,
    /// Restricts sleep records to one stage.
    pub stage: Option<SleepStageKind>,
    pub statistic: Statistic,
    pub window: Window,
}

impl CatalogEntry {
    fn new(stream: Stream, stage: Option<SleepStageKind>, statistic: Statistic, window: Window) -> Self {
        let name = match stage {
            Some(st) => format!(
                "{}.{}.{}.{}",
                stream.as_str(),
                stage_str(st),
                statistic.as_str(),
                window.as_str()
            ),
            None => format!("{}.{}.{}", stream.as_str(), statistic.as_str(), window.as_str()),
        };
        Self { name, stream, stage, statistic, window }
    }
}

pub(crate) fn stage_str(stage: SleepStageKind) -> &'static str {
    match stage {
        SleepStageKind::Awake => "awake",
        SleepStageKind::Light => "light",
        SleepStageKind::Deep => "deep",
        SleepStageKind::Rem => "rem",
    }
}

/// Constant per-user features appended after the catalog columns.
pub const DEMOGRAPHIC_FEATURES: [&str; 4] =
    ["demographic.age", "demographic.sex", "demographic.weight", "demographic.height"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl FeatureCatalog {
    /// The standard catalog: basic moments of every continuous stream per
    /// day and over the trailing 72 hours, night-time vitals, long-range
    /// and entropy features of heart rate and HRV, sleep architecture,
    /// fitness and workout load.
    pub fn standard() -> Self {
        use Statistic::*;
        use Window::*;
        let basic = [Mean, Std, Skewness, Min, Max];
        let advanced = [DfaAlpha, SampleEntropy, SecondOrderLag1, SecondOrderLag2, SecondOrderDiffVar];
        let mut entries = Vec::new();

        let continuous = [
            Stream::HeartRate,
            Stream::Hrv,
            Stream::Spo2,
            Stream::RespRate,
            Stream::Steps,
            Stream::ActiveCalories,
            Stream::WeatherTemp,
            Stream::WeatherHumidity,
        ];
        for stream in continuous {
            for window in [DayMinus1, DayMinus2, DayMinus3, Trailing72h] {
                for stat in basic {
                    entries.push(CatalogEntry::new(stream, None, stat, window));
                }
            }
        }
        for stream in [Stream::HeartRate, Stream::Hrv, Stream::Spo2, Stream::RespRate] {
            for stat in basic {
                entries.push(CatalogEntry::new(stream, None, stat, Night));
            }
        }
        for window in [Night, DayMinus1, Trailing72h] {
            for stat in advanced {
                entries.push(CatalogEntry::new(Stream::HeartRate, None, stat, window));
            }
        }
        for stat in advanced {
            entries.push(CatalogEntry::new(Stream::Hrv, None, stat, Night));
        }
        entries.push(CatalogEntry::new(Stream::SleepStage, None, Duration, Night));
        for stage in [SleepStageKind::Awake, SleepStageKind::Light, SleepStageKind::Deep, SleepStageKind::Rem] {
            entries.push(CatalogEntry::new(Stream::SleepStage, Some(stage), Duration, Night));
        }
        entries.push(CatalogEntry::new(Stream::SleepStage, Some(SleepStageKind::Awake), Count, Night));
        for window in [DayMinus1, Trailing72h] {
            entries.push(CatalogEntry::new(Stream::Vo2max, None, Mean, window));
            entries.push(CatalogEntry::new(Stream::Workout, None, Count, window));
            entries.push(CatalogEntry::new(Stream::Workout, None, Duration, window));
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Column names: catalog entries followed by demographics.
    pub fn feature_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.name.clone())
            .chain(DEMOGRAPHIC_FEATURES.iter().map(|s| s.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn standard_catalog_is_large_and_unique() {
        let cat = FeatureCatalog::standard();
        assert!(cat.len() >= 200, "catalog has {} entries", cat.len());
        let names: HashSet<_> = cat.feature_names().into_iter().collect();
        assert_eq!(names.len(), cat.len() + DEMOGRAPHIC_FEATURES.len());
        assert!(names.contains("heart_rate.dfa_alpha.night"));
        assert!(names.contains("sleep_stage.deep.duration.night"));
    }

    #[test]
    fn window_bounds() {
        let d = NaiveDate::from_ymd_opt(2024, 3, 10).unwrap();
        let (s, e) = Window::Night.bounds(d);
        assert_eq!(s.to_rfc3339(), "2024-03-09T20:00:00+00:00");
        assert_eq!(e.to_rfc3339(), "2024-03-10T10:00:00+00:00");
        let (s, e) = Window::Trailing72h.bounds(d);
        assert_eq!(s.to_rfc3339(), "2024-03-07T00:00:00+00:00");
        assert_eq!(e.to_rfc3339(), "2024-03-10T00:00:00+00:00");
        assert_eq!(Window::DayMinus3.bounds(d).0, s);
    }
}
