use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gbt::{Presorted, RegressionTree, TreeBuilder};
use super::{Dataset, Model, ModelError};
use crate::UserId;

/// Bagged regression trees with per-node feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Share of features tried at each node.
    pub feature_fraction: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, min_samples_leaf: 3, feature_fraction: 1.0 / 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
}

pub fn train_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<RandomForest, ModelError> {
    if data.is_empty() {
        return Err(ModelError::NoLabeledData);
    }
    if params.n_trees == 0 || !(params.feature_fraction > 0.0 && params.feature_fraction <= 1.0) {
        return Err(ModelError::InvalidConfig("forest needs trees and a feature fraction in (0, 1]".into()));
    }
    let d = data.check_width()?;
    let n = data.len();
    let mtry = ((d as f64 * params.feature_fraction).round() as usize).clamp(1, d.max(1));
    let builder = TreeBuilder {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: Some(mtry),
    };
    let order = data.canonical_order();
    let x: Vec<Vec<f64>> = order.iter().map(|&i| data.x[i].clone()).collect();
    let y: Vec<f64> = order.iter().map(|&i| data.y[i]).collect();
    let sorted = Presorted::new(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..params.n_trees)
        .map(|_| {
            let mut counts = vec![0.0; n];
            for _ in 0..n {
                counts[rng.gen_range(0..n)] += 1.0;
            }
            builder.build(&x, &y, &counts, &sorted, Some(&mut rng))
        })
        .collect();
    Ok(RandomForest { trees, n_features: d })
}

impl Model for RandomForest {
    fn predict(&self, _user: &UserId, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn data(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::default();
        let day = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        for i in 0..120 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = 4.0 + 2.0 * x[2] + rng.gen_range(-0.1..0.1);
            d.push(UserId::new("u"), day + chrono::Duration::days(i), x, y);
        }
        d
    }

    #[test]
    fn learns_a_single_informative_feature() {
        let train = data(1);
        let test = data(2);
        let f = train_forest(&train, &ForestParams::default(), 3).unwrap();
        let u = UserId::new("u");
        let mse: f64 = test.x.iter().zip(&test.y).map(|(x, y)| (f.predict(&u, x).unwrap() - y).powi(2)).sum::<f64>()
            / test.len() as f64;
        let var: f64 = {
            let m = test.y.iter().sum::<f64>() / test.len() as f64;
            test.y.iter().map(|y| (y - m).powi(2)).sum::<f64>() / test.len() as f64
        };
        assert!(mse < 0.5 * var, "mse {mse} var {var}");
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let d = data(4);
        let p = ForestParams { n_trees: 10, ..ForestParams::default() };
        assert_eq!(train_forest(&d, &p, 9).unwrap(), train_forest(&d, &p, 9).unwrap());
        assert_ne!(train_forest(&d, &p, 9).unwrap(), train_forest(&d, &p, 10).unwrap());
    }
}
