use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, NaiveDate, Utc};
use indexmap::IndexMap;
use rayon::prelude::*;

use super::catalog::{FeatureCatalog, Statistic, Window};
use super::stats;
use super::{DailyFeatureRow, Labels};
use crate::ingestion::{RawRecord, SelfReport, SleepStageKind, Stream, UserProfile};

/// Borrowed inputs for one user.
#[derive(Debug, Clone, Copy)]
pub struct UserData<'a> {
    pub records: &'a [RawRecord],
    pub reports: &'a [SelfReport],
    pub profile: &'a UserProfile,
}

struct RawDay {
    date: NaiveDate,
    values: Vec<Option<f64>>,
    labels: Option<Labels>,
}

struct Sample {
    ts: DateTime<Utc>,
    value: f64,
    stage: Option<SleepStageKind>,
}

/// Builds one row per calendar day that has at least one record, using the
/// standard catalog and per-user imputation only.
pub fn aggregate_daily(
    records: &[RawRecord],
    reports: &[SelfReport],
    profile: &UserProfile,
) -> Vec<DailyFeatureRow> {
    aggregate_daily_with(&FeatureCatalog::standard(), records, reports, profile, None)
}

/// Like [`aggregate_daily`], with an explicit catalog and optional cohort
/// medians (one per column of `catalog.feature_names()`) as the imputation
/// fallback.
pub fn aggregate_daily_with(
    catalog: &FeatureCatalog,
    records: &[RawRecord],
    reports: &[SelfReport],
    profile: &UserProfile,
    cohort_medians: Option<&[f64]>,
) -> Vec<DailyFeatureRow> {
    let days = compute_days(catalog, records, reports, profile);
    impute(catalog, profile, days, cohort_medians)
}

/// Aggregates several users, imputing with cohort medians where a user has
/// no history of their own.
pub fn aggregate_cohort(catalog: &FeatureCatalog, users: &[UserData<'_>]) -> Vec<DailyFeatureRow> {
    let per_user: Vec<Vec<RawDay>> = users
        .par_iter()
        .map(|u| compute_days(catalog, u.records, u.reports, u.profile))
        .collect();

    let width = catalog.feature_names().len();
    let medians: Vec<f64> = (0..width)
        .map(|j| {
            let observed: Vec<f64> =
                per_user.iter().flatten().filter_map(|d| d.values[j]).collect();
            median(observed).unwrap_or(f64::NAN)
        })
        .collect();

    per_user
        .into_iter()
        .zip(users)
        .flat_map(|(days, u)| impute(catalog, u.profile, days, Some(&medians)))
        .collect()
}

fn day_labels(reports: &[SelfReport]) -> BTreeMap<NaiveDate, Labels> {
    let mut by_day: BTreeMap<NaiveDate, Vec<&SelfReport>> = BTreeMap::new();
    for r in reports {
        by_day.entry(r.date).or_default().push(r);
    }
    by_day
        .into_iter()
        .map(|(date, rs)| {
            let n = rs.len() as f64;
            let avg = |f: fn(&SelfReport) -> u8| rs.iter().map(|r| f64::from(f(r))).sum::<f64>() / n;
            let labels = Labels {
                stress_avg: avg(|r| r.stress),
                soreness_avg: avg(|r| r.soreness),
                injury_avg: avg(|r| r.injury_risk),
            };
            (date, labels)
        })
        .collect()
}

fn compute_days(
    catalog: &FeatureCatalog,
    records: &[RawRecord],
    reports: &[SelfReport],
    profile: &UserProfile,
) -> Vec<RawDay> {
    let mut streams: HashMap<Stream, Vec<Sample>> = HashMap::new();
    let mut dates = BTreeSet::new();
    for r in records {
        dates.insert(r.timestamp.date_naive());
        streams.entry(r.stream).or_default().push(Sample {
            ts: r.timestamp,
            value: r.value,
            stage: r.sleep_stage,
        });
    }
    for samples in streams.values_mut() {
        samples.sort_by_key(|s| s.ts);
    }
    let labels = day_labels(reports);
    let demographics = [profile.age, profile.sex.code(), profile.weight_kg, profile.height_cm];

    dates
        .into_iter()
        .map(|date| {
            let mut series_cache: HashMap<(Stream, Option<SleepStageKind>, Window), (bool, Vec<f64>)> =
                HashMap::new();
            let mut values: Vec<Option<f64>> = catalog
                .entries
                .iter()
                .map(|e| {
                    let (any, series) = series_cache
                        .entry((e.stream, e.stage, e.window))
                        .or_insert_with(|| window_series(&streams, e.stream, e.stage, e.window, date));
                    compute_statistic(e.statistic, *any, series)
                })
                .collect();
            values.extend(demographics.iter().map(|v| Some(*v)));
            RawDay { date, values, labels: labels.get(&date).copied() }
        })
        .collect()
}

/// Values of `stream` inside the window, optionally restricted to one sleep
/// stage. The flag reports whether the stream had any record in the window
/// before stage filtering.
fn window_series(
    streams: &HashMap<Stream, Vec<Sample>>,
    stream: Stream,
    stage: Option<SleepStageKind>,
    window: Window,
    date: NaiveDate,
) -> (bool, Vec<f64>) {
    let Some(samples) = streams.get(&stream) else {
        return (false, Vec::new());
    };
    let (start, end) = window.bounds(date);
    let lo = samples.partition_point(|s| s.ts < start);
    let hi = samples.partition_point(|s| s.ts < end);
    let slice = &samples[lo..hi];
    let values = slice
        .iter()
        .filter(|s| stage.is_none() || s.stage == stage)
        .map(|s| s.value)
        .collect();
    (!slice.is_empty(), values)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn compute_statistic(stat: Statistic, any_in_window: bool, xs: &[f64]) -> Option<f64> {
    match stat {
        Statistic::Duration => any_in_window.then(|| xs.iter().sum()),
        Statistic::Count => any_in_window.then_some(xs.len() as f64),
        _ if xs.is_empty() => None,
        Statistic::Mean => finite(stats::mean(xs)),
        Statistic::Std => finite(stats::std_dev(xs)),
        Statistic::Skewness => finite(stats::skewness(xs)),
        Statistic::Min => finite(stats::min(xs)),
        Statistic::Max => finite(stats::max(xs)),
        Statistic::DfaAlpha => stats::dfa_alpha(xs).ok().and_then(finite),
        Statistic::SampleEntropy => stats::sample_entropy(xs, 2, 0.2).ok().and_then(finite),
        Statistic::SecondOrderLag1 => finite(stats::autocorrelation(xs, 1)),
        Statistic::SecondOrderLag2 => finite(stats::autocorrelation(xs, 2)),
        Statistic::SecondOrderDiffVar => finite(stats::diff_variance(xs)),
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
}

fn sorted_median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Fills gaps with, in order: the median of the user's earlier observations
/// of that feature, the cohort median, the user's median over all days, and
/// finally zero.
fn impute(
    catalog: &FeatureCatalog,
    profile: &UserProfile,
    days: Vec<RawDay>,
    cohort_medians: Option<&[f64]>,
) -> Vec<DailyFeatureRow> {
    let names = catalog.feature_names();
    let width = names.len();
    let user_medians: Vec<Option<f64>> = (0..width)
        .map(|j| median(days.iter().filter_map(|d| d.values[j]).collect()))
        .collect();
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); width];
    let user_id = &profile.user_id;

    days.into_iter()
        .map(|day| {
            let mut features = IndexMap::with_capacity(width);
            for (j, name) in names.iter().enumerate() {
                let value = match day.values[j] {
                    Some(v) => v,
                    None => sorted_median(&history[j])
                        .or_else(|| cohort_medians.map(|m| m[j]).filter(|m| m.is_finite()))
                        .or(user_medians[j])
                        .unwrap_or(0.0),
                };
                features.insert(name.clone(), value);
            }
            for (j, v) in day.values.iter().enumerate() {
                if let Some(v) = v {
                    let h = &mut history[j];
                    let pos = h.partition_point(|x| x < v);
                    h.insert(pos, *v);
                }
            }
            DailyFeatureRow { user_id: user_id.clone(), date: day.date, features, labels: day.labels }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{Sex, Slot};
    use crate::UserId;
    use chrono::{Duration, TimeZone};

    fn profile() -> UserProfile {
        UserProfile {
            user_id: UserId::new("u1"),
            age: 21.0,
            sex: Sex::Male,
            weight_kg: 80.0,
            height_cm: 185.0,
            sport: "basketball".into(),
            display_name: None,
        }
    }

    fn report(day: u32, slot: Slot, stress: u8) -> SelfReport {
        SelfReport {
            user_id: UserId::new("u1"),
            date: NaiveDate::from_ymd_opt(2024, 3, day).unwrap(),
            slot,
            stress,
            soreness: 2,
            injury_risk: 1,
        }
    }

    fn hr_day(day: u32, base: f64) -> Vec<RawRecord> {
        let start = Utc.with_ymd_and_hms(2024, 3, day, 0, 0, 0).unwrap();
        (0..288)
            .map(|i| {
                let v = base + ((i * 7919) % 13) as f64;
                RawRecord::new(Stream::HeartRate, start + Duration::minutes(5 * i), v)
            })
            .collect()
    }

    #[test]
    fn label_is_mean_of_available_slots() {
        let mut records = hr_day(1, 60.0);
        records.extend(hr_day(2, 62.0));
        records.extend(hr_day(3, 61.0));
        let reports = vec![
            report(1, Slot::Morning, 4),
            report(1, Slot::Afternoon, 5),
            report(1, Slot::Evening, 6),
            report(2, Slot::Morning, 3),
        ];
        let rows = aggregate_daily(&records, &reports, &profile());
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].labels.unwrap().stress_avg, 5.0);
        assert_eq!(rows[1].labels.unwrap().stress_avg, 3.0);
        assert!(rows[2].labels.is_none());
    }

    #[test]
    fn rows_share_feature_order_and_have_no_nan() {
        let mut records = hr_day(1, 60.0);
        records.extend(hr_day(4, 60.0));
        let rows = aggregate_daily(&records, &[], &profile());
        let names = FeatureCatalog::standard().feature_names();
        for row in &rows {
            let keys: Vec<&String> = row.features.keys().collect();
            assert_eq!(keys, names.iter().collect::<Vec<_>>());
            assert!(row.features.values().all(|v| v.is_finite()));
        }
        // Day 4's trailing window sees day 1 through day_minus_3.
        let d4 = &rows[1];
        assert!(d4.features["heart_rate.mean.day_minus_3"] > 60.0);
        assert_eq!(d4.features["demographic.age"], 21.0);
    }

    #[test]
    fn windowed_statistics_are_computed_from_the_right_day() {
        let mut records = hr_day(1, 50.0);
        records.extend(hr_day(2, 90.0));
        let rows = aggregate_daily(&records, &[], &profile());
        let day2 = rows.iter().find(|r| r.date.to_string() == "2024-03-02").unwrap();
        let expected: f64 = (0..288).map(|i| 50.0 + ((i * 7919) % 13) as f64).sum::<f64>() / 288.0;
        assert!((day2.features["heart_rate.mean.day_minus_1"] - expected).abs() < 1e-9);
        assert!(day2.features["heart_rate.dfa_alpha.day_minus_1"].is_finite());
    }

    #[test]
    fn missing_streams_fall_back_to_cohort_median() {
        let records = hr_day(2, 60.0);
        let cat = FeatureCatalog::standard();
        let names = cat.feature_names();
        let mut medians = vec![f64::NAN; names.len()];
        let idx = names.iter().position(|n| n == "weather_temp.mean.day_minus_1").unwrap();
        medians[idx] = 12.5;
        let rows = aggregate_daily_with(&cat, &records, &[], &profile(), Some(&medians));
        assert_eq!(rows[0].features["weather_temp.mean.day_minus_1"], 12.5);
        // No cohort value and no history at all: constant zero.
        assert_eq!(rows[0].features["weather_humidity.mean.day_minus_1"], 0.0);
    }

    #[test]
    fn trailing_median_imputation_uses_only_earlier_days() {
        let cat = FeatureCatalog::standard();
        let night = |day: u32, v: f64| {
            RawRecord::new(Stream::Spo2, Utc.with_ymd_and_hms(2024, 3, day, 3, 0, 0).unwrap(), v)
        };
        let records = vec![night(1, 95.0), night(2, 97.0), night(3, 99.0), night(5, 90.0)];
        let rows = aggregate_daily_with(&cat, &records, &[], &profile(), None);
        assert_eq!(rows[0].features["spo2.mean.night"], 95.0);
        assert_eq!(rows[3].features["spo2.mean.night"], 90.0);
        // Day 5 sees nothing on day 4: median of the earlier day-minus-1
        // observations (95 on day 2, 97 on day 3).
        assert_eq!(rows[3].features["spo2.mean.day_minus_1"], 96.0);
        // Day 1 has no history and no cohort: the user's overall median.
        assert_eq!(rows[0].features["spo2.mean.day_minus_1"], 96.0);
    }
}
