use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Model, ModelError};
use crate::UserId;

const MIN_TRAINING_ROWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 4, learning_rate: 0.1, min_samples_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary regression tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            Node::Split { .. } => None,
        })
    }
}

/// Row indices of every feature sorted by value, computed once per dataset.
pub(crate) struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub(crate) fn new(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let order = (0..d)
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.len() as u32).collect();
                idx.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }
}

/// Exact greedy, level-wise least-squares tree growth.
#[derive(Debug, Clone, Copy)]
pub struct TreeBuilder {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per node; `None` tries all of them.
    pub max_features: Option<usize>,
}

struct Growing {
    sum: f64,
    weight: f64,
    sum_sq: f64,
    split: Option<(usize, f64, usize, usize)>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Scan {
    sum: f64,
    weight: f64,
    last: f64,
}

impl TreeBuilder {
    /// Fits `targets` with per-row multiplicities `weights` (0 excludes a row).
    pub(crate) fn build<R: Rng>(
        &self,
        x: &[Vec<f64>],
        targets: &[f64],
        weights: &[f64],
        sorted: &Presorted,
        mut rng: Option<&mut R>,
    ) -> RegressionTree {
        let n = targets.len();
        let n_features = sorted.order.len();
        let mut node_of: Vec<usize> = vec![0; n];
        let mut root = Growing { sum: 0.0, weight: 0.0, sum_sq: 0.0, split: None };
        for i in 0..n {
            root.sum += weights[i] * targets[i];
            root.weight += weights[i];
            root.sum_sq += weights[i] * targets[i] * targets[i];
        }
        let mut nodes = vec![root];
        let mut level: Vec<usize> = vec![0];
        let min_leaf = self.min_samples_leaf.max(1) as f64;

        for _depth in 0..self.max_depth {
            let open: Vec<usize> =
                level.iter().copied().filter(|&id| nodes[id].weight >= 2.0 * min_leaf).collect();
            if open.is_empty() {
                break;
            }
            // Slot of each open node in the per-level scratch arrays.
            let mut slot = vec![usize::MAX; nodes.len()];
            for (s, &id) in open.iter().enumerate() {
                slot[id] = s;
            }
            let allowed: Option<Vec<Vec<bool>>> = match (self.max_features, rng.as_deref_mut()) {
                (Some(m), Some(r)) if m < n_features => Some(
                    open.iter()
                        .map(|_| {
                            let mut mask = vec![false; n_features];
                            for f in sample(r, n_features, m.max(1)).into_iter() {
                                mask[f] = true;
                            }
                            mask
                        })
                        .collect(),
                ),
                _ => None,
            };
            let mut best: Vec<Option<Candidate>> = open.iter().map(|_| None).collect();
            let mut scan: Vec<Scan> = open.iter().map(|_| Scan { sum: 0.0, weight: 0.0, last: f64::NAN }).collect();
            for f in 0..n_features {
                for s in scan.iter_mut() {
                    *s = Scan { sum: 0.0, weight: 0.0, last: f64::NAN };
                }
                for &i in &sorted.order[f] {
                    let i = i as usize;
                    let w = weights[i];
                    if w == 0.0 {
                        continue;
                    }
                    let s = match slot.get(node_of[i]) {
                        Some(&s) if s != usize::MAX => s,
                        _ => continue,
                    };
                    if let Some(mask) = &allowed {
                        if !mask[s][f] {
                            continue;
                        }
                    }
                    let v = x[i][f];
                    let st = &mut scan[s];
                    if st.weight > 0.0 && v > st.last {
                        let node = &nodes[open[s]];
                        let (wl, wr) = (st.weight, node.weight - st.weight);
                        if wl >= min_leaf && wr >= min_leaf {
                            let sr = node.sum - st.sum;
                            let gain = st.sum * st.sum / wl + sr * sr / wr - node.sum * node.sum / node.weight;
                            if best[s].as_ref().map_or(true, |b| gain > b.gain) {
                                let mid = st.last + (v - st.last) / 2.0;
                                let threshold = if mid < v { mid } else { st.last };
                                best[s] = Some(Candidate { gain, feature: f, threshold });
                            }
                        }
                    }
                    st.sum += w * targets[i];
                    st.weight += w;
                    st.last = v;
                }
            }
            let mut next = Vec::new();
            for (s, &id) in open.iter().enumerate() {
                let Some(c) = best[s].take() else { continue };
                let node = &nodes[id];
                let centered_ss = node.sum_sq - node.sum * node.sum / node.weight;
                if centered_ss <= 1e-20 * node.weight || c.gain <= 1e-10 * centered_ss {
                    continue;
                }
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes[id].split = Some((c.feature, c.threshold, l, r));
                nodes.push(Growing { sum: 0.0, weight: 0.0, sum_sq: 0.0, split: None });
                nodes.push(Growing { sum: 0.0, weight: 0.0, sum_sq: 0.0, split: None });
                next.push(l);
                next.push(r);
            }
            if next.is_empty() {
                break;
            }
            for i in 0..n {
                if let Some((f, t, l, r)) = nodes[node_of[i]].split {
                    let child = if x[i][f] <= t { l } else { r };
                    node_of[i] = child;
                    let w = weights[i];
                    let g = &mut nodes[child];
                    g.sum += w * targets[i];
                    g.weight += w;
                    g.sum_sq += w * targets[i] * targets[i];
                }
            }
            level = next;
        }

        RegressionTree {
            nodes: nodes
                .into_iter()
                .map(|g| match g.split {
                    Some((feature, threshold, left, right)) => Node::Split { feature, threshold, left, right },
                    None => Node::Leaf { value: if g.weight > 0.0 { g.sum / g.weight } else { 0.0 } },
                })
                .collect(),
        }
    }
}

/// Squared-loss boosted trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtEnsemble {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub base_score: f64,
    pub n_features: usize,
}

impl GbtEnsemble {
    /// Prediction using only the first `k` trees.
    pub fn predict_truncated(&self, x: &[f64], k: usize) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().take(k).map(|t| t.predict(x)).sum::<f64>()
    }
}

pub fn gbt_train(data: &Dataset, params: &GbtParams) -> Result<GbtEnsemble, ModelError> {
    if data.len() < MIN_TRAINING_ROWS {
        return Err(ModelError::TooFewRows { have: data.len(), need: MIN_TRAINING_ROWS });
    }
    if !(params.learning_rate > 0.0) {
        return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
    }
    let d = data.check_width()?;
    let n = data.len();
    // Shifted mean: exact when every label is equal.
    let base_score = data.y[0] + data.y.iter().map(|v| v - data.y[0]).sum::<f64>() / n as f64;
    let builder = TreeBuilder { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf, max_features: None };
    let sorted = Presorted::new(&data.x);
    let weights = vec![1.0; n];
    let mut pred = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let resid: Vec<f64> = data.y.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let tree = builder.build::<rand_chacha::ChaCha8Rng>(&data.x, &resid, &weights, &sorted, None);
        for (p, x) in pred.iter_mut().zip(&data.x) {
            *p += params.learning_rate * tree.predict(x);
        }
        trees.push(tree);
    }
    Ok(GbtEnsemble {
        trees,
        learning_rate: params.learning_rate,
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        base_score,
        n_features: d,
    })
}

pub fn gbt_predict(ensemble: &GbtEnsemble, features: &[f64]) -> f64 {
    ensemble.predict_truncated(features, ensemble.trees.len())
}

impl Model for GbtEnsemble {
    fn predict(&self, _user: &UserId, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(gbt_predict(self, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let n = y.len();
        let day = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        Dataset { users: vec![UserId::new("u"); n], dates: vec![day; n], x, y }
    }

    fn mse(e: &GbtEnsemble, d: &Dataset, k: usize) -> f64 {
        d.x.iter().zip(&d.y).map(|(x, y)| (y - e.predict_truncated(x, k)).powi(2)).sum::<f64>() / d.len() as f64
    }

    /// Best single threshold by trying every midpoint.
    fn brute_force_stump(x: &[f64], y: &[f64]) -> f64 {
        let mut xs: Vec<f64> = x.to_vec();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut best = (f64::INFINITY, f64::NAN);
        for w in xs.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let sse = |v: &[(&f64, &f64)]| {
                let m = v.iter().map(|p| *p.1).sum::<f64>() / v.len() as f64;
                v.iter().map(|p| (p.1 - m).powi(2)).sum::<f64>()
            };
            let left: Vec<(&f64, &f64)> = x.iter().zip(y).filter(|(a, _)| **a <= t).collect();
            let right: Vec<(&f64, &f64)> = x.iter().zip(y).filter(|(a, _)| **a > t).collect();
            let total = sse(&left) + sse(&right);
            if total < best.0 {
                best = (total, t);
            }
        }
        best.1
    }

    #[test]
    fn stump_recovers_threshold() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v <= 11.0 { 2.0 } else { 5.0 }).collect();
        let d = dataset(x.iter().map(|&v| vec![v]).collect(), y.clone());
        let e = gbt_train(&d, &GbtParams { n_trees: 1, max_depth: 1, learning_rate: 1.0, min_samples_leaf: 1 }).unwrap();
        let Node::Split { threshold, .. } = e.trees[0].nodes[0] else { panic!("no split") };
        let oracle = brute_force_stump(&x, &y);
        assert_eq!(threshold, oracle);
        assert!((threshold - 11.0).abs() <= 1.0);
        assert!((gbt_predict(&e, &[3.0]) - 2.0).abs() < 1e-12);
        assert!((gbt_predict(&e, &[20.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_trees_predict_the_mean() {
        let d = dataset((0..20).map(|i| vec![i as f64]).collect(), (0..20).map(|i| (i % 7) as f64 + 1.0).collect());
        let e = gbt_train(&d, &GbtParams { n_trees: 0, ..GbtParams::default() }).unwrap();
        let mean = d.y.iter().sum::<f64>() / 20.0;
        assert_eq!(e.base_score, mean);
        assert_eq!(gbt_predict(&e, &[100.0]), mean);
    }

    #[test]
    fn constant_labels_give_zero_leaves() {
        let d = dataset((0..25).map(|i| vec![i as f64, (i * i) as f64]).collect(), vec![3.7; 25]);
        let e = gbt_train(&d, &GbtParams { n_trees: 10, ..GbtParams::default() }).unwrap();
        assert!(e.trees.iter().flat_map(|t| t.leaf_values()).all(|v| v == 0.0));
        assert_eq!(gbt_predict(&e, &[-5.0, 1e6]), 3.7);
    }

    #[test]
    fn too_few_rows() {
        let d = dataset(vec![vec![0.0]; 19], vec![1.0; 19]);
        assert!(matches!(gbt_train(&d, &GbtParams::default()), Err(ModelError::TooFewRows { have: 19, need: 20 })));
    }

    fn random_data(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y = x.iter().map(|r| 4.0 + r[0] * r[1 % d] + (3.0 * r[0]).sin() + rng.gen_range(-0.3..0.3)).collect();
        dataset(x, y)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn constant_labels_predict_constant(c in 1.0f64..7.0, seed in any::<u64>()) {
            let mut d = random_data(seed, 30, 3);
            d.y = vec![c; 30];
            let e = gbt_train(&d, &GbtParams { n_trees: 5, ..GbtParams::default() }).unwrap();
            for x in &random_data(seed ^ 1, 10, 3).x {
                prop_assert!((gbt_predict(&e, x) - c).abs() < 1e-12);
            }
        }

        #[test]
        fn each_tree_lowers_training_error(seed in any::<u64>(), depth in 1usize..5) {
            let d = random_data(seed, 60, 4);
            let e = gbt_train(&d, &GbtParams { n_trees: 15, max_depth: depth, ..GbtParams::default() }).unwrap();
            for k in 0..e.trees.len() {
                prop_assert!(mse(&e, &d, k + 1) <= mse(&e, &d, k) + 1e-12);
                prop_assert!(e.trees[k].depth() <= depth);
            }
        }
    }
}
