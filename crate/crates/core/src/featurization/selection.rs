use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{DailyFeatureRow, FeatureError, FeatureMatrix};
use crate::Task;

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.9;
pub const DEFAULT_SELECTED_FEATURES: usize = 65;

const MIN_ROWS_FOR_CORRELATION: usize = 10;

/// Pearson correlation; 0 when either column is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson on columns of different length");
    let n = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// A feature removed because it correlates with an earlier survivor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearDrop {
    pub feature: String,
    pub correlated_with: String,
    pub r: f64,
}

/// Fitted selection, serializable as an audit snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorState {
    pub correlation_threshold: f64,
    /// Catalog order.
    pub kept_features: Vec<String>,
    /// Scores of every feature that survived the correlation scan, catalog order.
    pub f_scores: IndexMap<String, f64>,
    pub target_task: Option<Task>,
    #[serde(default)]
    pub collinear_drops: Vec<CollinearDrop>,
}

impl SelectorState {
    /// Scored features by descending F, ties in catalog order.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        let mut r: Vec<(&str, f64)> = self.f_scores.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1));
        r
    }

    pub fn project_row(&self, row: &DailyFeatureRow) -> Result<Vec<f64>, FeatureError> {
        row.values_of(&self.kept_features)
    }

    pub fn project(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        m.select_columns(&self.kept_features)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selector state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        serde_json::from_str(s).map_err(|e| FeatureError::Malformed(e.to_string()))
    }
}

/// Greedy scan in column order: a column is dropped when its |r| with any
/// earlier survivor exceeds `threshold`.
pub fn remove_multicollinear(m: &FeatureMatrix, threshold: f64) -> Result<SelectorState, FeatureError> {
    if m.n_features() < 2 || m.n_rows() < MIN_ROWS_FOR_CORRELATION {
        return Err(FeatureError::InsufficientData(format!(
            "correlation scan needs 2 features and {MIN_ROWS_FOR_CORRELATION} rows, have {} and {}",
            m.n_features(),
            m.n_rows()
        )));
    }
    let cols: Vec<Option<Vec<f64>>> = (0..m.n_features()).map(|j| standardize(&m.column(j))).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut drops = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let partner = col.as_ref().and_then(|cj| {
            kept.iter().find_map(|&k| {
                let ck = cols[k].as_ref()?;
                let r = dot(cj, ck).clamp(-1.0, 1.0);
                (r.abs() > threshold).then_some((k, r))
            })
        });
        match partner {
            Some((k, r)) => drops.push(CollinearDrop {
                feature: m.names[j].clone(),
                correlated_with: m.names[k].clone(),
                r,
            }),
            None => kept.push(j),
        }
    }
    Ok(SelectorState {
        correlation_threshold: threshold,
        kept_features: kept.iter().map(|&j| m.names[j].clone()).collect(),
        f_scores: IndexMap::new(),
        target_task: None,
        collinear_drops: drops,
    })
}

/// Keeps the `k` columns with the largest univariate regression F statistic
/// against `labels`.
pub fn select_f_test(m: &FeatureMatrix, labels: &[f64], k: usize) -> Result<SelectorState, FeatureError> {
    let n = labels.len();
    if n != m.n_rows() {
        return Err(FeatureError::LayoutMismatch(format!("{} labels for {} rows", n, m.n_rows())));
    }
    if n < 3 {
        return Err(FeatureError::TooFewLabeledRows { have: n, need: 3 });
    }
    if n < 2 * k {
        log::warn!("F-test selecting {k} features from only {n} labeled rows");
    }
    let scores: IndexMap<String, f64> =
        (0..m.n_features()).map(|j| (m.names[j].clone(), f_statistic(&m.column(j), labels))).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    Ok(SelectorState {
        correlation_threshold: 1.0,
        kept_features: chosen.iter().map(|&j| m.names[j].clone()).collect(),
        f_scores: scores,
        target_task: None,
        collinear_drops: Vec::new(),
    })
}

/// F of the simple regression `y ~ a + b·x`: SSR / (SSE / (n − 2)).
fn f_statistic(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    let ssr = sxy * sxy / sxx;
    let sse = (syy - ssr).max(0.0);
    if sse <= syy * 1e-15 {
        return f64::MAX;
    }
    ssr / (sse / (n - 2.0))
}

fn standardize(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss <= 0.0 {
        return None;
    }
    let s = ss.sqrt();
    Some(col.iter().map(|v| (v - mean) / s).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Correlation scan followed by F-test selection for one task.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSelector {
    pub correlation_threshold: f64,
    pub k: usize,
}

impl Default for FeatureSelector {
    fn default() -> Self {
        Self { correlation_threshold: DEFAULT_CORRELATION_THRESHOLD, k: DEFAULT_SELECTED_FEATURES }
    }
}

impl FeatureSelector {
    /// The correlation scan uses every row; the F-test uses the labeled ones.
    pub fn fit(&self, m: &FeatureMatrix, task: Task) -> Result<SelectorState, FeatureError> {
        let mut state = remove_multicollinear(m, self.correlation_threshold)?;
        let labeled = m.labeled(task);
        let idx: Vec<usize> = labeled.iter().map(|(i, _)| *i).collect();
        let y: Vec<f64> = labeled.iter().map(|(_, v)| *v).collect();
        let sub = m.select_rows(&idx).select_columns(&state.kept_features)?;
        let k = self.k.min(sub.n_features());
        let ranked = select_f_test(&sub, &y, k)?;
        state.kept_features = ranked.kept_features;
        state.f_scores = ranked.f_scores;
        state.target_task = Some(task);
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::UserId;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(cols: &[(&str, Vec<f64>)]) -> FeatureMatrix {
        let n = cols[0].1.len();
        let d = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        FeatureMatrix {
            names: cols.iter().map(|(n, _)| n.to_string()).collect(),
            keys: (0..n).map(|i| (UserId::new("u"), d + chrono::Duration::days(i as i64))).collect(),
            values: (0..n).map(|i| cols.iter().map(|(_, c)| c[i]).collect()).collect(),
            labels: vec![None; n],
        }
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Closed-form F from the sample correlation.
    fn f_oracle(x: &[f64], y: &[f64]) -> f64 {
        let r = pearson(x, y);
        r * r * (x.len() as f64 - 2.0) / (1.0 - r * r)
    }

    #[test]
    fn identical_and_negated_columns_drop_the_later() {
        let a = noise(1, 30);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let m = matrix(&[("a", a.clone()), ("b", noise(2, 30)), ("a2", a), ("neg", neg)]);
        let s = remove_multicollinear(&m, 0.9).unwrap();
        assert_eq!(s.kept_features, vec!["a", "b"]);
        assert_eq!(s.collinear_drops.len(), 2);
        assert!(s.collinear_drops.iter().all(|d| d.correlated_with == "a"));
        assert!((s.collinear_drops[1].r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn weakly_correlated_columns_all_kept() {
        let cols: Vec<(String, Vec<f64>)> = (0..6).map(|i| (format!("f{i}"), noise(10 + i, 40))).collect();
        for i in 0..cols.len() {
            for j in 0..i {
                assert!(pearson(&cols[i].1, &cols[j].1).abs() < 0.9);
            }
        }
        let named: Vec<(&str, Vec<f64>)> = cols.iter().map(|(n, c)| (n.as_str(), c.clone())).collect();
        let s = remove_multicollinear(&matrix(&named), 0.9).unwrap();
        assert_eq!(s.kept_features.len(), 6);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let m = matrix(&[("a", noise(1, 5)), ("b", noise(2, 5))]);
        assert!(remove_multicollinear(&m, 0.9).is_err());
    }

    #[test]
    fn f_statistic_matches_correlation_form() {
        for seed in 0..5 {
            let x = noise(seed, 50);
            let y: Vec<f64> = x.iter().zip(noise(seed + 100, 50)).map(|(a, e)| 0.3 * a + e).collect();
            let f = f_statistic(&x, &y);
            let o = f_oracle(&x, &y);
            assert!((f - o).abs() <= 1e-9 * o.max(1.0), "{f} vs {o}");
        }
    }

    #[test]
    fn copied_feature_ranks_first() {
        let signal = noise(7, 60);
        let y: Vec<f64> = signal.iter().zip(noise(8, 60)).map(|(s, e)| s + 1e-3 * e).collect();
        let m = matrix(&[("n1", noise(3, 60)), ("n2", noise(4, 60)), ("sig", signal.clone()), ("n3", noise(5, 60))]);
        let s = select_f_test(&m, &y, 1).unwrap();
        assert_eq!(s.kept_features, vec!["sig"]);
        assert_eq!(s.ranking()[0].0, "sig");
        let o = f_oracle(&signal, &y);
        assert!((s.f_scores["sig"] - o).abs() <= 1e-6 * o);
    }

    #[test]
    fn informative_outranks_noise() {
        let x = noise(11, 80);
        let y: Vec<f64> = x.iter().zip(noise(12, 80)).map(|(a, e)| 2.0 * a + e).collect();
        let m = matrix(&[("noise", noise(13, 80)), ("info", x)]);
        let s = select_f_test(&m, &y, 2).unwrap();
        assert!(s.f_scores["info"] > s.f_scores["noise"]);
        assert_eq!(s.ranking()[0].0, "info");
    }

    #[test]
    fn k_all_is_identity() {
        let m = matrix(&[("a", noise(1, 20)), ("b", noise(2, 20)), ("c", noise(3, 20))]);
        let s = select_f_test(&m, &noise(4, 20), 3).unwrap();
        assert_eq!(s.kept_features, m.names);
    }

    #[test]
    fn too_few_labels() {
        let m = matrix(&[("a", vec![1.0, 2.0])]);
        assert!(matches!(
            select_f_test(&m, &[1.0, 2.0], 1),
            Err(FeatureError::TooFewLabeledRows { have: 2, .. })
        ));
    }

    #[test]
    fn state_round_trips_as_json() {
        let m = matrix(&[("a", noise(1, 20)), ("b", noise(2, 20))]);
        let mut s = remove_multicollinear(&m, 0.9).unwrap();
        let f = select_f_test(&m, &noise(3, 20), 1).unwrap();
        s.f_scores = f.f_scores;
        s.kept_features = f.kept_features;
        s.target_task = Some(Task::Soreness);
        assert_eq!(SelectorState::from_json(&s.to_json()).unwrap(), s);
    }

    fn random_matrix() -> impl Strategy<Value = (FeatureMatrix, Vec<f64>)> {
        (2usize..9, 10usize..40, any::<u64>()).prop_map(|(p, n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            // Mix a few latent columns so some pairs are strongly correlated.
            let cols: Vec<(String, Vec<f64>)> = (0..p)
                .map(|j| {
                    let w: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    let eps = rng.gen_range(0.0..0.5);
                    let c = (0..n)
                        .map(|i| (0..3).map(|b| w[b] * base[b][i]).sum::<f64>() + eps * rng.gen_range(-1.0..1.0))
                        .collect();
                    (format!("f{j}"), c)
                })
                .collect();
            let named: Vec<(&str, Vec<f64>)> = cols.iter().map(|(a, c)| (a.as_str(), c.clone())).collect();
            let y = (0..n).map(|_| rng.gen_range(1.0..7.0)).collect();
            (matrix(&named), y)
        })
    }

    proptest! {
        #[test]
        fn no_surviving_pair_exceeds_threshold((m, _) in random_matrix(), t in 0.3f64..0.99) {
            let s = remove_multicollinear(&m, t).unwrap();
            let cols: Vec<Vec<f64>> = s.kept_features.iter().map(|f| m.column(m.index_of(f).unwrap())).collect();
            for i in 0..cols.len() {
                for j in 0..i {
                    prop_assert!(pearson(&cols[i], &cols[j]).abs() <= t + 1e-12);
                }
            }
        }

        #[test]
        fn top_k_is_nested((m, y) in random_matrix()) {
            for k in 0..m.n_features() {
                let a = select_f_test(&m, &y, k).unwrap().kept_features;
                let b = select_f_test(&m, &y, k + 1).unwrap().kept_features;
                prop_assert_eq!(a.len(), k);
                prop_assert!(a.iter().all(|f| b.contains(f)));
            }
        }

        #[test]
        fn selection_is_deterministic((m, y) in random_matrix()) {
            let a = select_f_test(&m, &y, 2).unwrap();
            let b = select_f_test(&m, &y, 2).unwrap();
            prop_assert_eq!(a.kept_features, b.kept_features);
        }
    }
}
