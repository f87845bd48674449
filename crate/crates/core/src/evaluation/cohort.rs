use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::featurization::{aggregate_cohort, DailyFeatureRow, FeatureCatalog, FeatureMatrix, Labels, UserData};
use crate::ingestion::{RawRecord, SelfReport, Sex, SleepStageKind, Slot, Stream, UserProfile};
use crate::{Task, UserId};

/// How strongly each target depends on who the user is, scaled by the
/// cohort's heterogeneity. Stress is mostly personal, soreness mostly
/// explained by shared training-load effects.
pub const TASK_HETEROGENEITY: [(Task, f64); 3] = [(Task::Stress, 1.0), (Task::Soreness, 0.1), (Task::Injury, 0.8)];

const WARMUP_DAYS: i64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub users: usize,
    pub days: usize,
    pub heterogeneity: f64,
    pub noise: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl CohortConfig {
    /// 28 users observed for 45 labeled days each.
    pub fn reference() -> Self {
        Self {
            users: 28,
            days: 45,
            heterogeneity: 1.0,
            noise: 0.5,
            seed: 2024,
            start_date: NaiveDate::from_ymd_opt(2024, 2, 5).expect("valid date"),
        }
    }

    fn validate(&self) {
        assert!(self.users >= 2, "cohort needs at least 2 users");
        assert!(self.days >= 20, "cohort needs at least 20 days");
        assert!(self.heterogeneity >= 0.0 && self.noise >= 0.0);
    }
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Label function of one task: a sparse linear model on standardized driver
/// features with per-user slope deviations and offsets, plus one mild
/// interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLabelModel {
    pub drivers: Vec<String>,
    pub beta: Vec<f64>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub interaction: f64,
    /// Per-user `(slope deviations, offset)`, already scaled by heterogeneity.
    pub users: BTreeMap<UserId, (Vec<f64>, f64)>,
}

impl TaskLabelModel {
    /// Noise-free label for a row's features, clipped to `[1, 7]`.
    pub fn evaluate(&self, user: &UserId, values: &[f64]) -> f64 {
        let z: Vec<f64> = values.iter().zip(&self.center).zip(&self.scale).map(|((v, c), s)| (v - c) / s).collect();
        let (dev, offset) = self.users.get(user).map_or((None, 0.0), |(d, o)| (Some(d), *o));
        let mut y = 4.0 + offset + self.interaction * (z[0] * z[1]).tanh();
        for (j, zj) in z.iter().enumerate() {
            y += (self.beta[j] + dev.map_or(0.0, |d| d[j])) * zj;
        }
        y.clamp(1.0, 7.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub noise: f64,
    pub tasks: IndexMap<Task, TaskLabelModel>,
}

impl LabelModel {
    pub fn task(&self, task: Task) -> &TaskLabelModel {
        &self.tasks[&task]
    }

    /// Noise-free label of a feature row.
    pub fn true_label(&self, task: Task, row: &DailyFeatureRow) -> f64 {
        let m = self.task(task);
        let values: Vec<f64> = m.drivers.iter().map(|d| row.features[d.as_str()]).collect();
        m.evaluate(&row.user_id, &values)
    }
}

pub struct SyntheticCohort {
    pub config: CohortConfig,
    pub profiles: Vec<UserProfile>,
    /// Per user, in profile order.
    pub records: Vec<Vec<RawRecord>>,
    /// Integer check-ins consistent with the labels, per user.
    pub reports: Vec<Vec<SelfReport>>,
    /// Labeled rows carrying the exact real-valued labels.
    pub rows: Vec<DailyFeatureRow>,
    pub label_model: LabelModel,
}

impl SyntheticCohort {
    pub fn matrix(&self) -> FeatureMatrix {
        FeatureMatrix::from_rows(&self.rows).expect("cohort rows share one layout")
    }

    pub fn user_data(&self) -> Vec<UserData<'_>> {
        self.profiles
            .iter()
            .zip(&self.records)
            .zip(&self.reports)
            .map(|((profile, records), reports)| UserData { records, reports, profile })
            .collect()
    }
}

struct Baseline {
    rhr: f64,
    hrv: f64,
    spo2: f64,
    resp: f64,
    vo2: f64,
    sleep_need: f64,
    bedtime: f64,
    workout_p: f64,
    workout_len: f64,
    steps: f64,
    stress_reactivity: f64,
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

fn at(date: NaiveDate, minutes: f64) -> DateTime<Utc> {
    date.and_hms_opt(0, 0, 0).expect("midnight").and_utc() + Duration::seconds((minutes * 60.0).round() as i64)
}

fn sample_profile(rng: &mut ChaCha8Rng, i: usize) -> (UserProfile, Baseline) {
    let sex = if rng.gen_bool(0.5) { Sex::Female } else { Sex::Male };
    let male = sex == Sex::Male;
    let profile = UserProfile {
        user_id: UserId::new(format!("u{:03}", i + 1)),
        age: f64::from(rng.gen_range(18..=24)),
        sex,
        weight_kg: (normal(rng, if male { 80.0 } else { 66.0 }, 8.0)).round(),
        height_cm: (normal(rng, if male { 184.0 } else { 171.0 }, 7.0)).round(),
        sport: ["basketball", "soccer", "track", "swimming", "rowing"][rng.gen_range(0..5)].to_string(),
        display_name: None,
    };
    let base = Baseline {
        rhr: normal(rng, 56.0, 6.0),
        hrv: normal(rng, 65.0, 15.0).max(25.0),
        spo2: normal(rng, 96.5, 0.7),
        resp: normal(rng, 14.5, 1.2),
        vo2: normal(rng, if male { 52.0 } else { 45.0 }, 5.0),
        sleep_need: normal(rng, 450.0, 30.0),
        bedtime: normal(rng, 23.0 * 60.0, 30.0),
        workout_p: rng.gen_range(0.45..0.85),
        workout_len: normal(rng, 80.0, 15.0).max(40.0),
        steps: normal(rng, 9000.0, 2000.0).max(3000.0),
        stress_reactivity: rng.gen_range(0.5..1.5),
    };
    (profile, base)
}

/// Temperature and humidity every three hours, shared by all users.
fn weather(rng: &mut ChaCha8Rng, first: NaiveDate, n_days: usize) -> Vec<RawRecord> {
    let mut out = Vec::new();
    let mut anomaly = 0.0;
    for d in 0..n_days {
        anomaly = 0.7 * anomaly + normal(rng, 0.0, 2.0);
        let date = first + Duration::days(d as i64);
        for h in (0..24).step_by(3) {
            let diurnal = -(2.0 * std::f64::consts::PI * (f64::from(h) - 3.0) / 24.0).cos();
            let temp = 9.0 + 0.1 * d as f64 + anomaly + 5.0 * diurnal + normal(rng, 0.0, 0.5);
            let hum = (70.0 - 2.0 * anomaly - 12.0 * diurnal + normal(rng, 0.0, 3.0)).clamp(15.0, 100.0);
            let ts = at(date, f64::from(h) * 60.0);
            out.push(RawRecord::new(Stream::WeatherTemp, ts, temp));
            out.push(RawRecord::new(Stream::WeatherHumidity, ts, hum));
        }
    }
    out
}

/// Sensor records of one user for `n_days` consecutive days.
fn simulate_user(rng: &mut ChaCha8Rng, b: &Baseline, first: NaiveDate, n_days: usize) -> Vec<RawRecord> {
    let mut out = Vec::new();
    let mut stress = 0.0;
    let mut fatigue = 0.0;
    let mut prev_workout = 0.0;
    let mut vo2 = b.vo2;
    for d in 0..n_days {
        let date = first + Duration::days(d as i64);
        stress = 0.6 * stress + normal(rng, 0.0, 0.8);
        let s = stress * b.stress_reactivity;

        // Night ending on the morning of `date`.
        let sleep_min = (b.sleep_need + normal(rng, 0.0, 35.0) - 18.0 * s + 0.15 * prev_workout).clamp(240.0, 600.0);
        let bed = b.bedtime + normal(rng, 0.0, 25.0) - 24.0 * 60.0;
        let epochs = (sleep_min / 10.0).round() as usize;
        let deep_frac = (0.17 + 0.0006 * prev_workout - 0.01 * s + normal(rng, 0.0, 0.02)).clamp(0.05, 0.35);
        let rem_frac = (0.22 + normal(rng, 0.0, 0.02)).clamp(0.1, 0.3);
        let awake_frac = (0.05 + 0.015 * s.max(0.0) + normal(rng, 0.0, 0.01)).clamp(0.01, 0.2);
        let n_deep = (deep_frac * epochs as f64).round() as usize;
        let n_rem = (rem_frac * epochs as f64).round() as usize;
        let n_awake = (awake_frac * epochs as f64).round() as usize;
        let mut stages: Vec<SleepStageKind> = std::iter::repeat(SleepStageKind::Deep)
            .take(n_deep)
            .chain(std::iter::repeat(SleepStageKind::Rem).take(n_rem))
            .chain(std::iter::repeat(SleepStageKind::Awake).take(n_awake))
            .collect();
        stages.resize(epochs.max(stages.len()), SleepStageKind::Light);
        stages.shuffle(rng);
        for (k, stage) in stages.iter().enumerate() {
            out.push(RawRecord::sleep(at(date, bed + 10.0 * k as f64), 10.0, *stage));
        }
        let wake = bed + sleep_min;

        let night_hr = b.rhr + 2.5 * s + 0.03 * prev_workout + 1.5 * fatigue;
        let night_hrv = (b.hrv - 5.0 * s - 0.04 * prev_workout - 2.0 * fatigue).max(10.0);
        let mut t = bed;
        while t < wake {
            out.push(RawRecord::new(Stream::Hrv, at(date, t), (night_hrv + normal(rng, 0.0, 7.0)).max(5.0)));
            if (t - bed) % 15.0 < 5.0 {
                out.push(RawRecord::new(Stream::Spo2, at(date, t), (b.spo2 + normal(rng, 0.0, 0.6)).min(100.0)));
                out.push(RawRecord::new(Stream::RespRate, at(date, t), b.resp + 0.3 * s + normal(rng, 0.0, 0.6)));
            }
            t += 5.0;
        }

        let workout = if rng.gen_bool(b.workout_p) {
            (b.workout_len + normal(rng, 0.0, 20.0)).clamp(20.0, 150.0)
        } else {
            0.0
        };
        let w_start = rng.gen_range(15.0 * 60.0..18.0 * 60.0);
        if workout > 0.0 {
            out.push(RawRecord::new(Stream::Workout, at(date, w_start), workout));
        }

        for k in 0..288 {
            let m = 5.0 * k as f64;
            let asleep = (m >= bed.max(0.0) && m < wake) || m >= b.bedtime;
            let hr = if asleep {
                night_hr + normal(rng, 0.0, 3.0)
            } else if workout > 0.0 && m >= w_start && m < w_start + workout {
                b.rhr + 85.0 + normal(rng, 0.0, 10.0)
            } else {
                b.rhr + 18.0 + 3.0 * s + normal(rng, 0.0, 6.0)
            };
            out.push(RawRecord::new(Stream::HeartRate, at(date, m), hr));
        }

        let active = workout > 0.0;
        for h in 7..23 {
            let m = f64::from(h) * 60.0;
            let in_workout = active && m + 60.0 > w_start && m < w_start + workout;
            let steps = (b.steps / 16.0 * (1.0 + normal(rng, 0.0, 0.35)) + if in_workout { 2500.0 } else { 0.0 }).max(0.0);
            let kcal = (steps * 0.04 + if in_workout { 4.0 * workout.min(60.0) } else { 0.0 } + normal(rng, 0.0, 8.0))
                .max(0.0);
            out.push(RawRecord::new(Stream::Steps, at(date, m), steps.round()));
            out.push(RawRecord::new(Stream::ActiveCalories, at(date, m), kcal));
        }

        vo2 += 0.02 * (workout / 60.0 - 0.5) + normal(rng, 0.0, 0.15);
        out.push(RawRecord::new(Stream::Vo2max, at(date, 8.0 * 60.0), vo2));

        fatigue = 0.6 * fatigue + workout / 60.0;
        prev_workout = workout;
    }
    out.sort_by_key(|r| r.timestamp);
    out
}

struct TaskSpec {
    task: Task,
    drivers: &'static [&'static str],
    beta: &'static [f64],
    slope_sd: f64,
    offset_sd: f64,
}

const TASKS: [TaskSpec; 3] = [
    TaskSpec {
        task: Task::Stress,
        drivers: &[
            "sleep_stage.duration.night",
            "sleep_stage.awake.duration.night",
            "hrv.mean.day_minus_1",
            "heart_rate.mean.day_minus_1",
            "workout.duration.day_minus_1",
        ],
        beta: &[-0.2, 0.2, -0.2, 0.2, 0.2],
        slope_sd: 0.8,
        offset_sd: 0.6,
    },
    TaskSpec {
        task: Task::Soreness,
        drivers: &[
            "workout.duration.day_minus_1",
            "workout.duration.trailing_72h",
            "sleep_stage.deep.duration.night",
        ],
        beta: &[0.9, 0.5, -0.3],
        slope_sd: 0.4,
        offset_sd: 1.0,
    },
    TaskSpec {
        task: Task::Injury,
        drivers: &[
            "workout.duration.trailing_72h",
            "steps.mean.day_minus_1",
            "active_calories.mean.day_minus_1",
            "hrv.mean.night",
        ],
        beta: &[0.4, 0.3, 0.2, -0.2],
        slope_sd: 0.5,
        offset_sd: 1.0,
    },
];

fn heterogeneity_of(task: Task) -> f64 {
    TASK_HETEROGENEITY.iter().find(|(t, _)| *t == task).map_or(1.0, |(_, h)| *h)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, if v > 0.0 { v.sqrt() } else { 1.0 })
}

/// Simulates raw sensor streams for a cohort, aggregates them with the
/// standard catalog, and labels each day from a known function of the
/// resulting features. Identical configs give identical cohorts.
pub fn generate_cohort(config: &CohortConfig) -> SyntheticCohort {
    config.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first = config.start_date - Duration::days(WARMUP_DAYS);
    let n_days = config.days + WARMUP_DAYS as usize;
    let shared_weather = weather(&mut rng, first, n_days);

    let mut profiles = Vec::with_capacity(config.users);
    let mut records = Vec::with_capacity(config.users);
    for i in 0..config.users {
        let mut user_rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0xA5A5_0000 + i as u64));
        let (profile, base) = sample_profile(&mut user_rng, i);
        let mut recs = simulate_user(&mut user_rng, &base, first, n_days);
        recs.extend(shared_weather.iter().cloned());
        recs.sort_by_key(|r| r.timestamp);
        profiles.push(profile);
        records.push(recs);
    }

    let catalog = FeatureCatalog::standard();
    let users: Vec<UserData<'_>> =
        profiles.iter().zip(&records).map(|(profile, r)| UserData { records: r, reports: &[], profile }).collect();
    let mut rows: Vec<DailyFeatureRow> = aggregate_cohort(&catalog, &users)
        .into_iter()
        .filter(|r| r.date >= config.start_date && r.date < config.start_date + Duration::days(config.days as i64))
        .collect();

    let mut tasks = IndexMap::new();
    for spec in &TASKS {
        let h = config.heterogeneity * heterogeneity_of(spec.task);
        let (center, scale): (Vec<f64>, Vec<f64>) = spec
            .drivers
            .iter()
            .map(|d| mean_std(&rows.iter().map(|r| r.features[*d]).collect::<Vec<_>>()))
            .unzip();
        let users = profiles
            .iter()
            .map(|p| {
                let dev = spec.drivers.iter().map(|_| h * normal(&mut rng, 0.0, spec.slope_sd)).collect();
                (p.user_id.clone(), (dev, h * normal(&mut rng, 0.0, spec.offset_sd)))
            })
            .collect();
        tasks.insert(
            spec.task,
            TaskLabelModel {
                drivers: spec.drivers.iter().map(|s| s.to_string()).collect(),
                beta: spec.beta.to_vec(),
                center,
                scale,
                interaction: 0.15,
                users,
            },
        );
    }
    let label_model = LabelModel { noise: config.noise, tasks };

    for row in &mut rows {
        let mut y = [0.0; 3];
        for (k, task) in Task::ALL.iter().enumerate() {
            let eps = if config.noise > 0.0 { normal(&mut rng, 0.0, config.noise) } else { 0.0 };
            y[k] = (label_model.true_label(*task, row) + eps).clamp(1.0, 7.0);
        }
        row.labels = Some(Labels { stress_avg: y[0], soreness_avg: y[1], injury_avg: y[2] });
    }

    let mut reports: Vec<Vec<SelfReport>> = vec![Vec::new(); profiles.len()];
    let index: BTreeMap<&UserId, usize> = profiles.iter().enumerate().map(|(i, p)| (&p.user_id, i)).collect();
    for row in &rows {
        let labels = row.labels.expect("labeled above");
        for slot in [Slot::Morning, Slot::Afternoon, Slot::Evening] {
            let mut score = |v: f64| (v + normal(&mut rng, 0.0, 0.3)).round().clamp(1.0, 7.0) as u8;
            let report = SelfReport {
                user_id: row.user_id.clone(),
                date: row.date,
                slot,
                stress: score(labels.stress_avg),
                soreness: score(labels.soreness_avg),
                injury_risk: score(labels.injury_avg),
            };
            reports[index[&row.user_id]].push(report);
        }
    }

    SyntheticCohort { config: config.clone(), profiles, records, reports, rows, label_model }
}
