//! Model architectures, leave-one-out cross-validation and tuning.
//!
//! * `linear`: ordinary least squares on the features most correlated with
//!   the target.
//! * `single_rf`: one forest on the base features.
//! * `two_layer`: one layer-1 forest per property on the base features; a
//!   layer-2 forest then sees the base features plus every property's
//!   predicted mean and uncertainty.
//! * `imputation`: one forest on the base features plus the *measured*
//!   values of the other four properties. It needs lab data for the
//!   candidate so it cannot be used for design, only as a reference.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetTable, FeatureOptions};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestModel, Hyperparameters, PredictionWithUncertainty};
use crate::stats::{self, derive_seed};

pub use crate::dataset::TargetId;

const TAG_LAYER1: u64 = 1;
const TAG_LAYER2: u64 = 2;
const TAG_SINGLE: u64 = 3;
const TAG_IMPUTATION: u64 = 4;
const TAG_FOLD: u64 = 5;

/// Ridge added to the normal equations, relative to their mean diagonal.
pub const LINEAR_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    SingleRf,
    TwoLayer,
    Imputation,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Linear,
        ModelKind::SingleRf,
        ModelKind::TwoLayer,
        ModelKind::Imputation,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::SingleRf => "single_rf",
            ModelKind::TwoLayer => "two_layer",
            ModelKind::Imputation => "imputation",
        }
    }

    /// Tuned defaults. The linear model only reads `max_features`.
    pub fn default_hyperparameters(self) -> Hyperparameters {
        match self {
            ModelKind::Linear => Hyperparameters::new(1, 8, 2),
            ModelKind::SingleRf => Hyperparameters::new(200, 3, 2),
            ModelKind::TwoLayer => Hyperparameters::new(512, 6, 2),
            ModelKind::Imputation => Hyperparameters::new(512, 13, 2),
        }
    }

    /// Largest admissible `max_features` for a table with `base` features.
    /// Both layers of the two-layer model share one setting, so layer 1
    /// bounds it.
    pub fn max_feature_limit(self, base: usize) -> usize {
        match self {
            ModelKind::Imputation => base + TargetId::ALL.len() - 1,
            _ => base,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Coefficient of determination.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Validation(format!(
            "r_squared: {} truths vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InsufficientData("r_squared needs 2 or more points".into()));
    }
    let m = stats::mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("r_squared of a constant truth vector".into()));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Selected feature indices, ascending.
    pub selected_features: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub feature_count: usize,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_count {
            return Err(Error::Dimension {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        Ok(self.intercept
            + self
                .selected_features
                .iter()
                .zip(&self.coefficients)
                .map(|(&j, c)| c * x[j])
                .sum::<f64>())
    }
}

/// Ranks features by |Pearson r| with the target (undefined counts as 0,
/// ties go to the lower index) and fits OLS with intercept on the top
/// `max_features`.
pub fn fit_linear(features: &[Vec<f64>], target: &[f64], max_features: usize) -> Result<LinearModel> {
    if features.is_empty() || features.len() != target.len() {
        return Err(Error::InsufficientData("linear fit needs matching, non-empty inputs".into()));
    }
    if max_features == 0 {
        return Err(Error::Config("max_features must be positive".into()));
    }
    let p = features[0].len();
    let n = features.len();
    let m = max_features.min(p);
    if n <= m {
        return Err(Error::InsufficientData(format!(
            "linear fit with {m} features needs more than {m} rows, got {n}"
        )));
    }
    let columns: Vec<Vec<f64>> = (0..p).map(|j| features.iter().map(|r| r[j]).collect()).collect();
    let score: Vec<f64> = columns
        .iter()
        .map(|c| stats::pearson(c, target).map_or(0.0, f64::abs))
        .collect();
    let mut ranked: Vec<usize> = (0..p).collect();
    ranked.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let mut selected = ranked[..m].to_vec();
    selected.sort_unstable();

    let means: Vec<f64> = selected.iter().map(|&j| stats::mean(&columns[j])).collect();
    let y_mean = stats::mean(target);
    let xc = DMatrix::from_fn(n, m, |i, k| columns[selected[k]][i] - means[k]);
    let yc = DVector::from_fn(n, |i, _| target[i] - y_mean);
    let mut gram = xc.transpose() * &xc;
    let mean_diag = gram.diagonal().mean();
    let ridge = if mean_diag > 0.0 { LINEAR_RIDGE * mean_diag } else { LINEAR_RIDGE };
    for k in 0..m {
        gram[(k, k)] += ridge;
    }
    let rhs = xc.transpose() * yc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("normal equations are not positive definite".into()))?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Degenerate("non-finite coefficients".into()));
    }
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel {
        selected_features: selected,
        coefficients,
        intercept,
        feature_count: p,
    })
}

/// Which statistic of a layer-1 prediction a layer-2 input carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub target: TargetId,
    pub statistic: Statistic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoLayerConfig {
    /// Drop the final target's own predicted mean from the layer-2 inputs.
    pub exclude_own_mean: bool,
}

impl TwoLayerConfig {
    pub fn channels(&self, final_target: TargetId) -> Vec<Channel> {
        let mut out = Vec::with_capacity(10);
        for target in TargetId::ALL {
            if !(self.exclude_own_mean && target == final_target) {
                out.push(Channel {
                    target,
                    statistic: Statistic::Mean,
                });
            }
            out.push(Channel {
                target,
                statistic: Statistic::Sigma,
            });
        }
        out
    }
}

/// Layer-1 forests, one per property, each trained on the rows where that
/// property is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOne {
    forests: Vec<ForestModel>,
    /// Table row indices each forest was trained on, in training order.
    training_rows: Vec<Vec<usize>>,
}

impl LayerOne {
    pub fn forest(&self, target: TargetId) -> &ForestModel {
        &self.forests[target.index()]
    }

    pub fn training_rows(&self, target: TargetId) -> &[usize] {
        &self.training_rows[target.index()]
    }

    pub fn predict_all(&self, x: &[f64]) -> Result<Vec<PredictionWithUncertainty>> {
        self.forests.iter().map(|f| f.predict(x)).collect()
    }
}

pub fn fit_layer_one(table: &DatasetTable, hp: Hyperparameters, seed: u64) -> Result<LayerOne> {
    let fitted: Vec<(ForestModel, Vec<usize>)> = TargetId::ALL
        .par_iter()
        .map(|&target| {
            let (rows, x, y) = table.training_set(target);
            if rows.len() < 2 {
                return Err(Error::TargetRows {
                    target,
                    rows: rows.len(),
                    needed: 2,
                });
            }
            let forest = fit_forest(&x, &y, hp, derive_seed(seed, TAG_LAYER1, target.index() as u64))?;
            Ok((forest, rows))
        })
        .collect::<Result<_>>()?;
    let (forests, training_rows) = fitted.into_iter().unzip();
    Ok(LayerOne {
        forests,
        training_rows,
    })
}

/// A training row whose layer-2 input for `target` came from the full
/// layer-1 forest instead of an out-of-bag prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OobFallback {
    pub record: String,
    pub target: TargetId,
    /// `true` when the row was in every bootstrap; `false` when the layer-1
    /// forest never trained on it (property not measured).
    pub in_every_bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerModel {
    pub layer1: LayerOne,
    pub layer2: ForestModel,
    pub final_target: TargetId,
    pub augmentation_spec: Vec<Channel>,
    pub imputed_precond: Option<f64>,
    pub feature_options: FeatureOptions,
    pub oob_fallbacks: Vec<OobFallback>,
}

impl TwoLayerModel {
    pub fn base_feature_count(&self) -> usize {
        self.feature_options.feature_count()
    }

    /// Base features followed by the layer-1 channels, using full-forest
    /// layer-1 predictions.
    pub fn augment(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.base_feature_count() {
            return Err(Error::Dimension {
                expected: self.base_feature_count(),
                got: x.len(),
            });
        }
        let preds = self.layer1.predict_all(x)?;
        Ok(augment_with(x, &preds, &self.augmentation_spec))
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionWithUncertainty> {
        self.layer2.predict(&self.augment(x)?)
    }

    /// Per-tree layer-2 outputs, for empirical probability estimates.
    pub fn tree_predictions(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layer2.tree_predictions(&self.augment(x)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn augment_with(x: &[f64], preds: &[PredictionWithUncertainty], spec: &[Channel]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + spec.len());
    out.extend_from_slice(x);
    for ch in spec {
        let p = preds[ch.target.index()];
        out.push(match ch.statistic {
            Statistic::Mean => p.mean,
            Statistic::Sigma => p.sigma,
        });
    }
    out
}

pub fn fit_two_layer(
    table: &DatasetTable,
    final_target: TargetId,
    hp: Hyperparameters,
    seed: u64,
) -> Result<TwoLayerModel> {
    fit_two_layer_with(table, final_target, hp, seed, TwoLayerConfig::default())
}

pub fn fit_two_layer_with(
    table: &DatasetTable,
    final_target: TargetId,
    hp: Hyperparameters,
    seed: u64,
    config: TwoLayerConfig,
) -> Result<TwoLayerModel> {
    check_final_rows(table, final_target)?;
    let layer1 = fit_layer_one(table, hp, seed)?;
    fit_two_layer_from(layer1, table, final_target, hp, seed, config)
}

fn check_final_rows(table: &DatasetTable, final_target: TargetId) -> Result<()> {
    let n = table.rows_with(final_target).len();
    if n < 3 {
        return Err(Error::TargetRows {
            target: final_target,
            rows: n,
            needed: 3,
        });
    }
    Ok(())
}

/// Builds the layer-2 forest on top of already fitted layer-1 forests. With
/// the same `seed`, `fit_two_layer_with` is exactly `fit_layer_one` followed
/// by this.
pub fn fit_two_layer_from(
    layer1: LayerOne,
    table: &DatasetTable,
    final_target: TargetId,
    hp: Hyperparameters,
    seed: u64,
    config: TwoLayerConfig,
) -> Result<TwoLayerModel> {
    check_final_rows(table, final_target)?;
    let spec = config.channels(final_target);
    let (rows, _, y) = table.training_set(final_target);
    let mut fallbacks = Vec::new();
    let mut augmented = Vec::with_capacity(rows.len());
    for &r in &rows {
        let x = table.feature_row(r);
        let mut preds = Vec::with_capacity(TargetId::ALL.len());
        for target in TargetId::ALL {
            let forest = layer1.forest(target);
            let pos = layer1.training_rows(target).iter().position(|&t| t == r);
            let pred = match pos.map(|p| forest.oob_predict(p, &x)) {
                Some(Ok(p)) => p,
                Some(Err(Error::NoOobTrees(_))) | None => {
                    fallbacks.push(OobFallback {
                        record: table.records()[r].id.clone(),
                        target,
                        in_every_bootstrap: pos.is_some(),
                    });
                    forest.predict(&x)?
                }
                Some(Err(e)) => return Err(e),
            };
            preds.push(pred);
        }
        augmented.push(augment_with(&x, &preds, &spec));
    }
    let layer2 = fit_forest(
        &augmented,
        &y,
        hp,
        derive_seed(seed, TAG_LAYER2, final_target.index() as u64),
    )?;
    Ok(TwoLayerModel {
        layer1,
        layer2,
        final_target,
        augmentation_spec: spec,
        imputed_precond: table.imputed_precond(),
        feature_options: table.options(),
        oob_fallbacks: fallbacks,
    })
}

/// Two-layer models for every property, sharing one set of layer-1 forests.
pub fn fit_two_layer_all(
    table: &DatasetTable,
    hp: Hyperparameters,
    seed: u64,
    config: TwoLayerConfig,
) -> Result<Vec<TwoLayerModel>> {
    let layer1 = fit_layer_one(table, hp, seed)?;
    TargetId::ALL
        .par_iter()
        .map(|&t| fit_two_layer_from(layer1.clone(), table, t, hp, seed, config))
        .collect()
}

pub fn predict_two_layer(model: &TwoLayerModel, x: &[f64]) -> Result<PredictionWithUncertainty> {
    model.predict(x)
}

/// Base features followed by the measured values of the other four
/// properties, in canonical order. `None` if any of them is missing.
pub fn imputation_features(table: &DatasetTable, row: usize, final_target: TargetId) -> Option<Vec<f64>> {
    let mut x = table.feature_row(row);
    let measured = &table.records()[row].measured;
    for t in TargetId::ALL {
        if t != final_target {
            x.push(measured.get(t)?);
        }
    }
    Some(x)
}

/// Single-layer forest over base features plus the measured other
/// properties, trained on fully measured rows only.
pub fn fit_imputation(
    table: &DatasetTable,
    final_target: TargetId,
    hp: Hyperparameters,
    seed: u64,
) -> Result<ForestModel> {
    let rows = table.fully_measured_rows();
    if rows.len() < 2 {
        return Err(Error::TargetRows {
            target: final_target,
            rows: rows.len(),
            needed: 2,
        });
    }
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| imputation_features(table, r, final_target).unwrap())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|&r| table.records()[r].measured.get(final_target).unwrap())
        .collect();
    fit_forest(&x, &y, hp, derive_seed(seed, TAG_IMPUTATION, final_target.index() as u64))
}

pub fn fit_single_rf(
    table: &DatasetTable,
    target: TargetId,
    hp: Hyperparameters,
    seed: u64,
) -> Result<ForestModel> {
    let (rows, x, y) = table.training_set(target);
    if rows.len() < 2 {
        return Err(Error::TargetRows {
            target,
            rows: rows.len(),
            needed: 2,
        });
    }
    fit_forest(&x, &y, hp, derive_seed(seed, TAG_SINGLE, target.index() as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub record: String,
    pub truth: f64,
    pub prediction: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub target: TargetId,
    pub model_kind: ModelKind,
    pub hyperparams: Hyperparameters,
    pub seed: u64,
    pub per_fold: Vec<FoldResult>,
    pub r2: f64,
}

impl CrossValReport {
    /// One line per fold: `record,truth,prediction,sigma`.
    pub fn write_folds_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["model", "target", "record", "truth", "prediction", "sigma"])?;
        for f in &self.per_fold {
            w.write_record([
                self.model_kind.token().to_string(),
                self.target.token().to_string(),
                f.record.clone(),
                f.truth.to_string(),
                f.prediction.to_string(),
                f.sigma.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seed for the fold that holds out table row `row`.
pub fn fold_seed(seed: u64, row: usize) -> u64 {
    derive_seed(seed, TAG_FOLD, row as u64)
}

fn fold_rows(table: &DatasetTable, target: TargetId, kind: ModelKind) -> Vec<usize> {
    match kind {
        ModelKind::Imputation => table.fully_measured_rows(),
        _ => table.rows_with(target),
    }
}

fn annotate(table: &DatasetTable, row: usize, e: Error) -> Error {
    Error::Fold {
        fold: row,
        record: table.records()[row].id.clone(),
        source: Box::new(e),
    }
}

/// Trains `kind` on `train` and predicts the held-out record `held`.
fn predict_held_out(
    train: &DatasetTable,
    full: &DatasetTable,
    held: usize,
    target: TargetId,
    kind: ModelKind,
    hp: Hyperparameters,
    seed: u64,
) -> Result<PredictionWithUncertainty> {
    let record = &full.records()[held];
    let x = train.features_for(record)?;
    match kind {
        ModelKind::Linear => {
            let (_, xs, ys) = train.training_set(target);
            let model = fit_linear(&xs, &ys, hp.max_features)?;
            Ok(PredictionWithUncertainty {
                mean: model.predict(&x)?,
                sigma: 0.0,
            })
        }
        ModelKind::SingleRf => fit_single_rf(train, target, hp, seed)?.predict(&x),
        ModelKind::TwoLayer => fit_two_layer(train, target, hp, seed)?.predict(&x),
        ModelKind::Imputation => {
            let model = fit_imputation(train, target, hp, seed)?;
            let mut xi = x;
            for t in TargetId::ALL {
                if t != target {
                    xi.push(record.measured.get(t).ok_or_else(|| {
                        Error::Validation(format!("record `{}` lacks measured {t}", record.id))
                    })?);
                }
            }
            model.predict(&xi)
        }
    }
}

fn build_report(
    table: &DatasetTable,
    target: TargetId,
    kind: ModelKind,
    hp: Hyperparameters,
    seed: u64,
    folds: Vec<(usize, PredictionWithUncertainty)>,
) -> Result<CrossValReport> {
    let per_fold: Vec<FoldResult> = folds
        .into_iter()
        .map(|(row, p)| FoldResult {
            record: table.records()[row].id.clone(),
            truth: table.records()[row].measured.get(target).unwrap(),
            prediction: p.mean,
            sigma: p.sigma,
        })
        .collect();
    let truth: Vec<f64> = per_fold.iter().map(|f| f.truth).collect();
    let pred: Vec<f64> = per_fold.iter().map(|f| f.prediction).collect();
    Ok(CrossValReport {
        target,
        model_kind: kind,
        hyperparams: hp,
        seed,
        r2: r_squared(&truth, &pred)?,
        per_fold,
    })
}

/// Leave-one-out cross-validation: each fold retrains the whole model
/// (both layers for `two_layer`) without the held-out record.
pub fn loocv(
    table: &DatasetTable,
    target: TargetId,
    kind: ModelKind,
    hp: Hyperparameters,
    seed: u64,
) -> Result<CrossValReport> {
    let rows = fold_rows(table, target, kind);
    if rows.len() < 3 {
        return Err(Error::TargetRows {
            target,
            rows: rows.len(),
            needed: 3,
        });
    }
    let folds = rows
        .par_iter()
        .map(|&row| {
            let train = table.without(row).map_err(|e| annotate(table, row, e))?;
            predict_held_out(&train, table, row, target, kind, hp, fold_seed(seed, row))
                .map(|p| (row, p))
                .map_err(|e| annotate(table, row, e))
        })
        .collect::<Result<Vec<_>>>()?;
    build_report(table, target, kind, hp, seed, folds)
}

/// LOOCV for all five properties. For `two_layer` the layer-1 forests of a
/// fold are fitted once and shared across properties; results equal five
/// separate [`loocv`] calls.
pub fn loocv_all(
    table: &DatasetTable,
    kind: ModelKind,
    hp: Hyperparameters,
    seed: u64,
) -> Result<Vec<CrossValReport>> {
    if kind != ModelKind::TwoLayer {
        return TargetId::ALL
            .iter()
            .map(|&t| loocv(table, t, kind, hp, seed))
            .collect();
    }
    for t in TargetId::ALL {
        let n = table.rows_with(t).len();
        if n < 3 {
            return Err(Error::TargetRows {
                target: t,
                rows: n,
                needed: 3,
            });
        }
    }
    let per_row: Vec<Vec<(TargetId, PredictionWithUncertainty)>> = (0..table.len())
        .into_par_iter()
        .map(|row| {
            let wanted: Vec<TargetId> = TargetId::ALL
                .into_iter()
                .filter(|&t| table.records()[row].measured.get(t).is_some())
                .collect();
            if wanted.is_empty() {
                return Ok(Vec::new());
            }
            let seed = fold_seed(seed, row);
            let train = table.without(row)?;
            let x = train.features_for(&table.records()[row])?;
            let layer1 = fit_layer_one(&train, hp, seed)?;
            wanted
                .into_iter()
                .map(|t| {
                    let model =
                        fit_two_layer_from(layer1.clone(), &train, t, hp, seed, TwoLayerConfig::default())?;
                    Ok((t, model.predict(&x)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .enumerate()
        .map(|(row, r)| r.map_err(|e| annotate(table, row, e)))
        .collect::<Result<_>>()?;

    TargetId::ALL
        .iter()
        .map(|&t| {
            let folds = per_row
                .iter()
                .enumerate()
                .filter_map(|(row, preds)| preds.iter().find(|(pt, _)| *pt == t).map(|(_, p)| (row, *p)))
                .collect();
            build_report(table, t, kind, hp, seed, folds)
        })
        .collect()
}

/// Default tuning grid: n_trees ∈ {100, 200, 512}, max_features ∈
/// {1..limit}, min_samples_split ∈ {2, 3, 5}. The linear model only varies
/// `max_features`.
pub fn default_grid(kind: ModelKind, base_features: usize) -> Vec<Hyperparameters> {
    let limit = kind.max_feature_limit(base_features);
    if kind == ModelKind::Linear {
        return (1..=limit).map(|m| Hyperparameters::new(1, m, 2)).collect();
    }
    let mut grid = Vec::new();
    for n_trees in [100, 200, 512] {
        for max_features in 1..=limit {
            for min_samples_split in [2, 3, 5] {
                grid.push(Hyperparameters::new(n_trees, max_features, min_samples_split));
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyperparams: Hyperparameters,
    /// LOOCV R² summed over the scored properties.
    pub summed_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub model_kind: ModelKind,
    /// `None` when all five properties were scored.
    pub target: Option<TargetId>,
    pub best: Hyperparameters,
    pub best_summed_r2: f64,
    pub scores: Vec<GridScore>,
}

/// Picks the grid point with the highest LOOCV R² for `target`, or summed
/// over all five properties when `target` is `None` (one shared setting for
/// every property). Ties go to fewer trees, then fewer features, then the
/// smaller split size.
pub fn tune(
    table: &DatasetTable,
    grid: &[Hyperparameters],
    kind: ModelKind,
    target: Option<TargetId>,
    seed: u64,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let scores = grid
        .iter()
        .map(|&hp| {
            let reports = match target {
                Some(t) => vec![loocv(table, t, kind, hp, seed)?],
                None => loocv_all(table, kind, hp, seed)?,
            };
            Ok(GridScore {
                hyperparams: hp,
                summed_r2: reports.iter().map(|r| r.r2).sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .min_by(|a, b| {
            b.summed_r2
                .total_cmp(&a.summed_r2)
                .then(a.hyperparams.n_trees.cmp(&b.hyperparams.n_trees))
                .then(a.hyperparams.max_features.cmp(&b.hyperparams.max_features))
                .then(a.hyperparams.min_samples_split.cmp(&b.hyperparams.min_samples_split))
        })
        .expect("grid is non-empty");
    Ok(TuneResult {
        model_kind: kind,
        target,
        best: best.hyperparams,
        best_summed_r2: best.summed_r2,
        scores,
    })
}
