use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{r_squared, EvalError};
use crate::modeling::{Dataset, Learner};
use crate::UserId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    RollingOrigin,
    GroupKfold,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::RollingOrigin => "rolling_origin",
            Protocol::GroupKfold => "group_kfold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingOriginConfig {
    pub runs: usize,
    /// First origin; the earliest prediction is for day `min_train_days + 1`.
    pub min_train_days: usize,
    pub master_seed: u64,
}

impl Default for RollingOriginConfig {
    fn default() -> Self {
        Self { runs: 5, min_train_days: 10, master_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupKFoldConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for GroupKFoldConfig {
    fn default() -> Self {
        Self { k: 5, seed: 0 }
    }
}

/// One out-of-sample prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub run: usize,
    /// Held-out fold; 0 under rolling origin.
    pub fold: usize,
    pub user: UserId,
    pub date: NaiveDate,
    /// 1-based position of `date` among the user's labeled days.
    pub day_index: usize,
    /// Training rows were restricted to each user's first `origin` labeled
    /// days; equals `day_index − 1` under rolling origin.
    pub origin: Option<usize>,
    /// Latest training date belonging to this point's user, if any.
    pub user_train_last: Option<NaiveDate>,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeR2 {
    pub n: usize,
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldR2 {
    pub fold: usize,
    pub test_users: Vec<UserId>,
    pub n_test: usize,
    /// `None` when the fold's labels are constant.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub protocol: Protocol,
    pub model: String,
    pub runs: usize,
    pub points: Vec<CvPoint>,
    pub cumulative_r2: Vec<CumulativeR2>,
    pub folds: Vec<FoldR2>,
    pub pooled_r2: Option<f64>,
    /// Users left out for having too few labeled days.
    pub skipped_users: Vec<UserId>,
}

impl CvResult {
    /// Mean cumulative R² at the last origin.
    pub fn final_r2(&self) -> Option<f64> {
        match self.protocol {
            Protocol::RollingOrigin => self.cumulative_r2.last().map(|c| c.mean),
            Protocol::GroupKfold => self.pooled_r2,
        }
    }

    pub fn write_points_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "protocol", "model", "run", "fold", "user", "date", "day_index", "origin", "y_true", "y_pred",
        ])?;
        for p in &self.points {
            w.write_record([
                self.protocol.as_str(),
                &self.model,
                &p.run.to_string(),
                &p.fold.to_string(),
                p.user.as_str(),
                &p.date.to_string(),
                &p.day_index.to_string(),
                &p.origin.map(|o| o.to_string()).unwrap_or_default(),
                &p.y_true.to_string(),
                &p.y_pred.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        match self.protocol {
            Protocol::RollingOrigin => {
                w.write_record(["model", "n", "runs", "r2_mean", "r2_std"])?;
                for c in &self.cumulative_r2 {
                    w.write_record([
                        self.model.as_str(),
                        &c.n.to_string(),
                        &c.per_run.len().to_string(),
                        &c.mean.to_string(),
                        &c.std.to_string(),
                    ])?;
                }
            }
            Protocol::GroupKfold => {
                w.write_record(["model", "fold", "n_test", "r2"])?;
                for f in &self.folds {
                    w.write_record([self.model.as_str(), &f.fold.to_string(), &f.n_test.to_string(), &fmt(f.r2)])?;
                }
                let n: usize = self.folds.iter().map(|f| f.n_test).sum();
                w.write_record([self.model.as_str(), "pooled", &n.to_string(), &fmt(self.pooled_r2)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Row indices of each user's labeled days in date order.
fn per_user_days(data: &Dataset) -> BTreeMap<&UserId, Vec<usize>> {
    let mut by_user: BTreeMap<&UserId, Vec<usize>> = BTreeMap::new();
    for (i, u) in data.users.iter().enumerate() {
        by_user.entry(u).or_default().push(i);
    }
    for rows in by_user.values_mut() {
        rows.sort_by_key(|&i| data.dates[i]);
    }
    by_user
}

/// Pools each user's first `N` labeled days, trains once per origin and run,
/// and predicts every user's day `N + 1`. Within a run the origins are fitted
/// through [`Learner::fit_path`], so warm-started learners continue from the
/// previous origin's model.
pub fn rolling_origin_cv(
    data: &Dataset,
    learner: &dyn Learner,
    config: &RollingOriginConfig,
) -> Result<CvResult, EvalError> {
    if config.runs == 0 {
        return Err(EvalError::Model(crate::modeling::ModelError::InvalidConfig("runs must be positive".into())));
    }
    let by_user = per_user_days(data);
    let need = config.min_train_days + 1;
    let (eligible, skipped): (Vec<_>, Vec<_>) = by_user.into_iter().partition(|(_, rows)| rows.len() >= need);
    let skipped_users: Vec<UserId> = skipped.into_iter().map(|(u, _)| u.clone()).collect();
    if eligible.is_empty() {
        return Err(EvalError::TooFewDays);
    }
    let last_origin = eligible.iter().map(|(_, r)| r.len() - 1).max().unwrap_or(0);
    let origins: Vec<usize> = (config.min_train_days..=last_origin).collect();

    let outcomes: Vec<Result<Vec<CvPoint>, EvalError>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let steps: Vec<(Dataset, u64)> = origins
                .iter()
                .map(|&n| {
                    let train_idx: Vec<usize> =
                        eligible.iter().flat_map(|(_, rows)| rows[..n.min(rows.len())].iter().copied()).collect();
                    (data.subset(&train_idx), mix_seed(&[config.master_seed, run as u64, n as u64]))
                })
                .collect();
            let models = learner.fit_path(&steps)?;
            let mut pts = Vec::new();
            for (&n, model) in origins.iter().zip(&models) {
                for (user, rows) in eligible.iter().filter(|(_, rows)| rows.len() > n) {
                    let i = rows[n];
                    pts.push(CvPoint {
                        run,
                        fold: 0,
                        user: (*user).clone(),
                        date: data.dates[i],
                        day_index: n + 1,
                        origin: Some(n),
                        user_train_last: Some(data.dates[rows[n - 1]]),
                        y_true: data.y[i],
                        y_pred: model.predict(user, &data.x[i])?,
                    });
                }
            }
            Ok(pts)
        })
        .collect();

    let mut points = Vec::new();
    for o in outcomes {
        points.extend(o?);
    }
    sort_points(&mut points);
    let cumulative_r2 = cumulative_r2(&points, config.runs, config.min_train_days)?;
    Ok(CvResult {
        protocol: Protocol::RollingOrigin,
        model: learner.name().to_string(),
        runs: config.runs,
        points,
        cumulative_r2,
        folds: Vec::new(),
        pooled_r2: None,
        skipped_users,
    })
}

fn sort_points(points: &mut [CvPoint]) {
    points.sort_by(|a, b| (a.run, a.fold, a.day_index, &a.user).cmp(&(b.run, b.fold, b.day_index, &b.user)));
}

/// Per origin `N`, the R² of all predictions for days `first_origin + 1`
/// through `N + 1`, computed per run and then averaged. Independent of the
/// order of `points`.
pub fn cumulative_r2(points: &[CvPoint], runs: usize, first_origin: usize) -> Result<Vec<CumulativeR2>, EvalError> {
    let mut by_origin: BTreeMap<usize, Vec<Vec<&CvPoint>>> = BTreeMap::new();
    for p in points {
        if let Some(n) = p.origin.filter(|&n| n >= first_origin) {
            let slot = by_origin.entry(n).or_insert_with(|| vec![Vec::new(); runs]);
            if p.run < runs {
                slot[p.run].push(p);
            }
        }
    }
    let mut pooled: Vec<Vec<(f64, f64)>> = vec![Vec::new(); runs];
    let mut out = Vec::new();
    for (n, per_run) in by_origin {
        for (run, mut pts) in per_run.into_iter().enumerate() {
            pts.sort_by(|a, b| (&a.user, a.date).cmp(&(&b.user, b.date)));
            pooled[run].extend(pts.iter().map(|p| (p.y_true, p.y_pred)));
        }
        let mut scores = Vec::with_capacity(runs);
        for run_points in &pooled {
            let (t, p): (Vec<f64>, Vec<f64>) = run_points.iter().copied().unzip();
            match r_squared(&t, &p) {
                Ok(r) => scores.push(r),
                Err(EvalError::DegenerateTruth | EvalError::BadLengths(..)) => {}
                Err(e) => return Err(e),
            }
        }
        if scores.is_empty() {
            continue;
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let std = if scores.len() > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (scores.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push(CumulativeR2 { n, per_run: scores, mean, std });
    }
    Ok(out)
}

/// Folds of users, shuffled by `seed` and dealt round-robin.
pub fn assign_folds(users: &[UserId], k: usize, seed: u64) -> Result<Vec<Vec<UserId>>, EvalError> {
    let mut sorted: Vec<UserId> = users.to_vec();
    sorted.sort();
    sorted.dedup();
    if k < 2 || sorted.len() < k {
        return Err(EvalError::TooFewGroups { have: sorted.len(), need: k.max(2) });
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xF01D])));
    let mut folds = vec![Vec::new(); k];
    for (i, u) in sorted.into_iter().enumerate() {
        folds[i % k].push(u);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// Trains on `k − 1` folds of users and tests on the held-out users.
pub fn group_kfold_cv(data: &Dataset, learner: &dyn Learner, config: &GroupKFoldConfig) -> Result<CvResult, EvalError> {
    let folds = assign_folds(&data.users, config.k, config.seed)?;
    let by_user = per_user_days(data);
    let outcomes: Vec<Result<Vec<CvPoint>, EvalError>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test_users)| {
            let train_idx: Vec<usize> = by_user
                .iter()
                .filter(|(u, _)| test_users.binary_search(u).is_err())
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();
            let model = learner.fit(&data.subset(&train_idx), mix_seed(&[config.seed, f as u64]))?;
            let mut pts = Vec::new();
            for user in test_users {
                for (pos, &i) in by_user[user].iter().enumerate() {
                    pts.push(CvPoint {
                        run: 0,
                        fold: f,
                        user: user.clone(),
                        date: data.dates[i],
                        day_index: pos + 1,
                        origin: None,
                        user_train_last: None,
                        y_true: data.y[i],
                        y_pred: model.predict(user, &data.x[i])?,
                    });
                }
            }
            Ok(pts)
        })
        .collect();

    let mut points = Vec::new();
    for o in outcomes {
        points.extend(o?);
    }
    sort_points(&mut points);
    let fold_scores = folds
        .iter()
        .enumerate()
        .map(|(f, users)| {
            let (t, p): (Vec<f64>, Vec<f64>) =
                points.iter().filter(|q| q.fold == f).map(|q| (q.y_true, q.y_pred)).unzip();
            FoldR2 { fold: f, test_users: users.clone(), n_test: t.len(), r2: r_squared(&t, &p).ok() }
        })
        .collect();
    let (t, p): (Vec<f64>, Vec<f64>) = points.iter().map(|q| (q.y_true, q.y_pred)).unzip();
    Ok(CvResult {
        protocol: Protocol::GroupKfold,
        model: learner.name().to_string(),
        runs: 1,
        pooled_r2: Some(r_squared(&t, &p)?),
        points,
        cumulative_r2: Vec::new(),
        folds: fold_scores,
        skipped_users: Vec::new(),
    })
}
