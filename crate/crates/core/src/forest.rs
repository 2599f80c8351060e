//! CART regression trees and bootstrap-aggregated forests.
//!
//! Every tree is grown on its own bootstrap resample of the `N` training
//! rows. The forest prediction is the mean of the tree outputs and its
//! uncertainty is their population standard deviation, in target units.
//! Each tree keeps its bootstrap multiset so that out-of-bag predictions can
//! be formed for any training row.
//!
//! Randomness comes from one ChaCha8 stream per tree: the generator is
//! seeded with the forest seed and switched to stream `tree_index`. Trees are
//! therefore independent of scheduling and parallel fits equal serial fits
//! bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialization format version of [`ForestModel`].
pub const MODEL_VERSION: u32 = 1;

const LEAF: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub n_trees: usize,
    /// Features considered at each split.
    pub max_features: usize,
    pub min_samples_split: usize,
}

impl Hyperparameters {
    pub const fn new(n_trees: usize, max_features: usize, min_samples_split: usize) -> Self {
        Hyperparameters {
            n_trees,
            max_features,
            min_samples_split,
        }
    }

    pub fn validate(&self, feature_count: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.max_features == 0 {
            return Err(Error::Config("max_features must be positive".into()));
        }
        if self.max_features > feature_count {
            return Err(Error::Config(format!(
                "max_features = {} exceeds the {feature_count} available features",
                self.max_features
            )));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionWithUncertainty {
    pub mean: f64,
    /// Population standard deviation of the tree outputs.
    pub sigma: f64,
}

impl PredictionWithUncertainty {
    pub fn from_samples(samples: &[f64]) -> Self {
        PredictionWithUncertainty {
            mean: crate::stats::mean(samples),
            sigma: crate::stats::population_std(samples),
        }
    }
}

/// A regression tree stored as flat node arrays. Node 0 is the root;
/// `feature[i] == -1` marks a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    feature: Vec<i32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    /// Leaf mean (for internal nodes, the mean of the node's samples).
    value: Vec<f64>,
    count: Vec<u32>,
    /// Sum-of-squares reduction achieved by the split at this node.
    impurity_decrease: Vec<f64>,
}

impl RegressionTree {
    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.feature.iter().filter(|&&f| f == LEAF).count()
    }

    pub fn split_count(&self) -> usize {
        self.node_count() - self.leaf_count()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        while self.feature[node] != LEAF {
            node = if x[self.feature[node] as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        self.value[node]
    }

    /// Leaf values with their sample counts.
    pub fn leaves(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        (0..self.node_count())
            .filter(|&i| self.feature[i] == LEAF)
            .map(|i| (self.value[i], self.count[i]))
    }

    /// `(feature, threshold)` of every internal node in preorder.
    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.node_count())
            .filter(|&i| self.feature[i] != LEAF)
            .map(|i| (self.feature[i] as usize, self.threshold[i]))
    }

    fn accumulate_importance(&self, out: &mut [f64]) {
        for i in 0..self.node_count() {
            if self.feature[i] != LEAF {
                out[self.feature[i] as usize] += self.impurity_decrease[i];
            }
        }
    }

    fn push_node(&mut self, value: f64, count: usize) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.count.push(count as u32);
        self.impurity_decrease.push(0.0);
        self.feature.len() - 1
    }
}

/// Column-major view of the training matrix.
struct Columns {
    data: Vec<Vec<f64>>,
}

impl Columns {
    fn from_rows(rows: &[Vec<f64>], width: usize) -> Self {
        let data = (0..width)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Columns { data }
    }

    fn width(&self) -> usize {
        self.data.len()
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    child_sse: f64,
    /// Position in the sorted sample list where the right child starts.
    pivot: usize,
}

struct TreeBuilder<'a> {
    columns: &'a Columns,
    targets: &'a [f64],
    hp: Hyperparameters,
    rng: ChaCha8Rng,
    tree: RegressionTree,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, samples: &mut [u32]) -> usize {
        let n = samples.len();
        let values: Vec<f64> = samples.iter().map(|&i| self.targets[i as usize]).collect();
        let mean = crate::stats::mean(&values);
        let node = self.tree.push_node(mean, n);
        if n < self.hp.min_samples_split {
            return node;
        }
        let sse: f64 = samples
            .iter()
            .map(|&i| {
                let d = self.targets[i as usize] - mean;
                d * d
            })
            .sum();
        if sse <= 0.0 {
            return node;
        }
        let Some(split) = self.best_split(samples, mean, sse) else {
            return node;
        };

        // order samples by the chosen feature so the pivot partitions them
        let col = &self.columns.data[split.feature];
        samples.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
        let (lo, hi) = samples.split_at_mut(split.pivot);
        let left = self.grow(lo);
        let right = self.grow(hi);

        self.tree.feature[node] = split.feature as i32;
        self.tree.threshold[node] = split.threshold;
        self.tree.left[node] = left as u32;
        self.tree.right[node] = right as u32;
        self.tree.impurity_decrease[node] = sse - split.child_sse;
        node
    }

    /// Visits `max_features` features in random order, continuing past that
    /// only while every visited feature is constant within the node.
    /// Returns the non-constant ones sorted by index.
    fn candidate_features(&mut self, samples: &[u32]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.columns.width()).collect();
        order.shuffle(&mut self.rng);
        let mut picked = Vec::with_capacity(self.hp.max_features);
        for (visited, f) in order.into_iter().enumerate() {
            if visited >= self.hp.max_features && !picked.is_empty() {
                break;
            }
            let col = &self.columns.data[f];
            let first = col[samples[0] as usize];
            if samples.iter().any(|&i| col[i as usize] != first) {
                picked.push(f);
            }
        }
        picked.sort_unstable();
        picked
    }

    fn best_split(&mut self, samples: &[u32], mean: f64, sse: f64) -> Option<Split> {
        let candidates = self.candidate_features(samples);
        let n = samples.len();
        let min_gain = 1e-12 * sse;
        let mut best: Option<Split> = None;
        let mut sorted = samples.to_vec();
        for f in candidates {
            let col = &self.columns.data[f];
            sorted.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let centred: Vec<f64> = sorted.iter().map(|&i| self.targets[i as usize] - mean).collect();
            let total: f64 = centred.iter().sum();
            let total_sq: f64 = centred.iter().map(|d| d * d).sum();
            let (mut sum_l, mut sq_l) = (0.0, 0.0);
            for k in 0..n - 1 {
                sum_l += centred[k];
                sq_l += centred[k] * centred[k];
                let a = col[sorted[k] as usize];
                let b = col[sorted[k + 1] as usize];
                if a == b {
                    continue;
                }
                let n_l = (k + 1) as f64;
                let n_r = (n - k - 1) as f64;
                let sum_r = total - sum_l;
                let sq_r = total_sq - sq_l;
                let child = (sq_l - sum_l * sum_l / n_l) + (sq_r - sum_r * sum_r / n_r);
                if child > sse - min_gain {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => child < b.child_sse - min_gain,
                };
                if better {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        child_sse: child.max(0.0),
                        pivot: k + 1,
                    });
                }
            }
        }
        best
    }
}

/// A fitted random forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    version: u32,
    hyperparams: Hyperparameters,
    seed: u64,
    feature_count: usize,
    training_rows: usize,
    training_target_range: [f64; 2],
    trees: Vec<RegressionTree>,
    bootstrap_index_sets: Vec<Vec<u32>>,
}

fn check_training_input(features: &[Vec<f64>], targets: &[f64]) -> Result<usize> {
    if features.is_empty() || targets.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::InsufficientData(
            "a forest needs at least 2 training rows".into(),
        ));
    }
    let width = features[0].len();
    for row in features {
        if row.len() != width {
            return Err(Error::Dimension {
                expected: width,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite target value".into()));
    }
    Ok(width)
}

fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index as u64);
    rng
}

/// Fits a forest; every tree sees an independent bootstrap resample of size
/// `N` drawn from its own RNG stream.
pub fn fit_forest(
    features: &[Vec<f64>],
    targets: &[f64],
    hp: Hyperparameters,
    seed: u64,
) -> Result<ForestModel> {
    fit(features, targets, hp, seed, None)
}

/// Fits a forest on caller-supplied bootstrap multisets (one per tree).
/// Split-feature sampling still uses the seeded per-tree streams.
pub fn fit_forest_with_bootstraps(
    features: &[Vec<f64>],
    targets: &[f64],
    hp: Hyperparameters,
    seed: u64,
    bootstraps: Vec<Vec<u32>>,
) -> Result<ForestModel> {
    fit(features, targets, hp, seed, Some(bootstraps))
}

fn fit(
    features: &[Vec<f64>],
    targets: &[f64],
    hp: Hyperparameters,
    seed: u64,
    bootstraps: Option<Vec<Vec<u32>>>,
) -> Result<ForestModel> {
    let width = check_training_input(features, targets)?;
    hp.validate(width)?;
    let n = features.len();
    if let Some(sets) = &bootstraps {
        if sets.len() != hp.n_trees {
            return Err(Error::Config(format!(
                "{} bootstrap sets for {} trees",
                sets.len(),
                hp.n_trees
            )));
        }
        if sets.iter().any(|s| s.len() != n || s.iter().any(|&i| i as usize >= n)) {
            return Err(Error::Config(format!(
                "every bootstrap set must hold {n} indices below {n}"
            )));
        }
    }
    let columns = Columns::from_rows(features, width);

    let grown: Vec<(RegressionTree, Vec<u32>)> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let bootstrap = match &bootstraps {
                Some(sets) => sets[t].clone(),
                None => (0..n).map(|_| rng.gen_range(0..n as u32)).collect(),
            };
            let mut builder = TreeBuilder {
                columns: &columns,
                targets,
                hp,
                rng,
                tree: RegressionTree {
                    feature: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    value: Vec::new(),
                    count: Vec::new(),
                    impurity_decrease: Vec::new(),
                },
            };
            let mut samples = bootstrap.clone();
            builder.grow(&mut samples);
            (builder.tree, bootstrap)
        })
        .collect();
    let (trees, bootstrap_index_sets) = grown.into_iter().unzip();

    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ForestModel {
        version: MODEL_VERSION,
        hyperparams: hp,
        seed,
        feature_count: width,
        training_rows: n,
        training_target_range: [lo, hi],
        trees,
        bootstrap_index_sets,
    })
}

/// Normalized impurity importances. `defined` is false when no tree has a
/// split (e.g. constant target); `values` are then all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportances {
    pub values: Vec<f64>,
    pub defined: bool,
}

impl ForestModel {
    pub fn hyperparams(&self) -> Hyperparameters {
        self.hyperparams
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn training_rows(&self) -> usize {
        self.training_rows
    }

    pub fn training_target_range(&self) -> [f64; 2] {
        self.training_target_range
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn bootstrap_index_sets(&self) -> &[Vec<u32>] {
        &self.bootstrap_index_sets
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_count {
            return Err(Error::Dimension {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(())
    }

    /// Output of every tree for `x`, in tree order.
    pub fn tree_predictions(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionWithUncertainty> {
        Ok(PredictionWithUncertainty::from_samples(
            &self.tree_predictions(x)?,
        ))
    }

    /// Number of trees whose bootstrap sample excludes training row `row`.
    pub fn oob_tree_count(&self, row: usize) -> usize {
        self.bootstrap_index_sets
            .iter()
            .filter(|s| !s.contains(&(row as u32)))
            .count()
    }

    /// Prediction for training row `row` (given its features `x`) using only
    /// the trees that did not see it. Returns [`Error::NoOobTrees`] when
    /// every tree sampled the row.
    pub fn oob_predict(&self, row: usize, x: &[f64]) -> Result<PredictionWithUncertainty> {
        self.check_dims(x)?;
        if row >= self.training_rows {
            return Err(Error::Validation(format!(
                "row {row} is not a training row (forest has {})",
                self.training_rows
            )));
        }
        let outputs: Vec<f64> = self
            .trees
            .iter()
            .zip(&self.bootstrap_index_sets)
            .filter(|(_, s)| !s.contains(&(row as u32)))
            .map(|(t, _)| t.predict(x))
            .collect();
        if outputs.is_empty() {
            return Err(Error::NoOobTrees(row));
        }
        Ok(PredictionWithUncertainty::from_samples(&outputs))
    }

    /// Total sum-of-squares reduction per feature over all splits of all
    /// trees, normalized to sum to one.
    pub fn feature_importances(&self) -> FeatureImportances {
        let mut values = vec![0.0; self.feature_count];
        for t in &self.trees {
            t.accumulate_importance(&mut values);
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return FeatureImportances {
                values: vec![0.0; self.feature_count],
                defined: false,
            };
        }
        values.iter_mut().for_each(|v| *v /= total);
        FeatureImportances {
            values,
            defined: true,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(s)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}
