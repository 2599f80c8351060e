//! Candidate generation over a water/cement grid and probability-of-success
//! scoring against multi-property criteria.
//!
//! Each candidate is proportioned from a fixed free-water content and a
//! constant wet density. The sand share of the aggregate is linear in w/c,
//! anchored at two reference mixes. Every property of a candidate is
//! predicted as a distribution; the probability of meeting a bound is the
//! mass of that distribution inside the acceptance region, and the joint
//! probability is the product over bounds (properties treated as
//! independent).

use std::collections::HashSet;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CementType, Measured, MixComposition, MixRecord, TargetId};
use crate::error::{Error, Result};
use crate::forest::PredictionWithUncertainty;
use crate::models::TwoLayerModel;
use crate::stats::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Free water, kg/m³.
    pub water_mass: f64,
    /// Fresh concrete density, kg/m³.
    pub wet_density: f64,
    /// Two `(w/c, sand share of total aggregate)` anchor points.
    pub fine_fraction_anchors: [(f64, f64); 2],
    pub cement_type: CementType,
    pub preconditioning_days: f64,
    pub wc_min: f64,
    pub wc_max: f64,
    pub wc_step: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            water_mass: 205.0,
            wet_density: 2412.0,
            fine_fraction_anchors: [(0.6, 0.3674), (0.8, 0.4035)],
            cement_type: CementType::CemI_52_5N,
            preconditioning_days: 17.0,
            wc_min: 0.4,
            wc_max: 0.95,
            wc_step: 0.05,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.water_mass > 0.0) {
            return Err(Error::Config("water_mass must be positive".into()));
        }
        if !(self.wet_density > self.water_mass) {
            return Err(Error::Config("wet_density must exceed water_mass".into()));
        }
        let [(a, _), (b, _)] = self.fine_fraction_anchors;
        if a == b {
            return Err(Error::Config("anchor w/c values must differ".into()));
        }
        if !(self.wc_step > 0.0) {
            return Err(Error::Config("wc_step must be positive".into()));
        }
        if !(self.wc_min > 0.0 && self.wc_max <= 2.0 && self.wc_min <= self.wc_max) {
            return Err(Error::Config(
                "w/c grid must satisfy 0 < min <= max <= 2".into(),
            ));
        }
        if !(self.preconditioning_days >= 0.0) {
            return Err(Error::Config("preconditioning_days must be non-negative".into()));
        }
        Ok(())
    }

    /// Inclusive grid, snapped to 1e-9 so that e.g. 0.4 + 4·0.05 is 0.6.
    pub fn wc_grid(&self) -> Vec<f64> {
        let count = ((self.wc_max - self.wc_min) / self.wc_step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| ((self.wc_min + i as f64 * self.wc_step) * 1e9).round() / 1e9)
            .collect()
    }

    /// Sand share of total aggregate at `wc`, linear through the anchors.
    pub fn sand_share(&self, wc: f64) -> f64 {
        let [(w0, s0), (w1, s1)] = self.fine_fraction_anchors;
        s0 + (wc - w0) * (s1 - s0) / (w1 - w0)
    }
}

/// Component masses in kg/m³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixMasses {
    pub cement: f64,
    pub gravel: f64,
    pub sand: f64,
    pub water: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub wc: f64,
    pub cement_type: CementType,
    pub composition: MixComposition,
    pub masses: MixMasses,
    pub sand_share: f64,
    pub preconditioning_days: f64,
    pub est_mass_per_m3: f64,
}

impl Candidate {
    pub fn label(&self) -> String {
        format!("wc{:.2}", self.wc)
    }

    pub fn to_record(&self) -> MixRecord {
        MixRecord {
            id: self.label(),
            cement_type: self.cement_type,
            composition: self.composition,
            est_mass_per_m3: self.est_mass_per_m3,
            preconditioning_days: Some(self.preconditioning_days),
            measured: Measured::default(),
        }
    }
}

pub fn generate_candidate(params: &GeneratorParams, wc: f64) -> Result<Candidate> {
    let cement = params.water_mass / wc;
    let aggregate = params.wet_density - params.water_mass - cement;
    if !(aggregate > 0.0) {
        return Err(Error::Validation(format!(
            "w/c {wc}: cement {cement:.1} kg/m³ leaves no room for aggregate"
        )));
    }
    let share = params.sand_share(wc);
    if !(0.0..=1.0).contains(&share) {
        return Err(Error::Validation(format!(
            "w/c {wc}: extrapolated sand share {share:.4} is outside [0, 1]"
        )));
    }
    let masses = MixMasses {
        cement,
        gravel: (1.0 - share) * aggregate,
        sand: share * aggregate,
        water: params.water_mass,
    };
    let pct = |m: f64| m / params.wet_density * 100.0;
    Ok(Candidate {
        wc,
        cement_type: params.cement_type,
        composition: MixComposition::new(
            pct(masses.cement),
            pct(masses.gravel),
            pct(masses.sand),
            pct(masses.water),
        ),
        masses,
        sand_share: share,
        preconditioning_days: params.preconditioning_days,
        est_mass_per_m3: params.wet_density,
    })
}

/// One candidate per grid w/c, in grid order.
pub fn generate_candidates(params: &GeneratorParams) -> Result<Vec<Candidate>> {
    params.validate()?;
    params
        .wc_grid()
        .into_iter()
        .map(|wc| generate_candidate(params, wc))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundDirection {
    /// value < threshold
    Upper,
    /// value > threshold
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub target: TargetId,
    pub direction: BoundDirection,
    pub threshold: f64,
}

impl Bound {
    pub fn upper(target: TargetId, threshold: f64) -> Self {
        Bound {
            target,
            direction: BoundDirection::Upper,
            threshold,
        }
    }

    pub fn lower(target: TargetId, threshold: f64) -> Self {
        Bound {
            target,
            direction: BoundDirection::Lower,
            threshold,
        }
    }

    fn op(&self) -> &'static str {
        match self.direction {
            BoundDirection::Upper => "<",
            BoundDirection::Lower => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetCriteria {
    pub name: String,
    pub bounds: Vec<Bound>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundDoc {
    target: String,
    op: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriteriaDoc {
    name: String,
    bounds: Vec<BoundDoc>,
}

impl TargetCriteria {
    pub fn new(name: impl Into<String>, bounds: Vec<Bound>) -> Result<Self> {
        let c = TargetCriteria {
            name: name.into(),
            bounds,
        };
        c.validate()?;
        Ok(c)
    }

    /// Low carbonation coefficient criteria.
    pub fn low_k() -> Self {
        TargetCriteria::new(
            "Low-K",
            vec![
                Bound::upper(TargetId::CarbonationK, 1.2),
                Bound::upper(TargetId::EnvImpact, 0.150),
                Bound::lower(TargetId::Strength, 30.0),
                Bound::upper(TargetId::Density, 2350.0),
                Bound::upper(TargetId::Cost, 0.028),
            ],
        )
        .unwrap()
    }

    /// Low embodied carbon criteria.
    pub fn low_e() -> Self {
        TargetCriteria::new(
            "Low-E",
            vec![
                Bound::upper(TargetId::CarbonationK, 2.4),
                Bound::upper(TargetId::EnvImpact, 0.108),
                Bound::lower(TargetId::Strength, 20.0),
                Bound::upper(TargetId::Density, 2350.0),
                Bound::upper(TargetId::Cost, 0.028),
            ],
        )
        .unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Validation(format!("criteria `{}` has no bounds", self.name)));
        }
        let mut seen = HashSet::new();
        for b in &self.bounds {
            if b.threshold.is_nan() {
                return Err(Error::Validation(format!("bound on {} is NaN", b.target)));
            }
            if !seen.insert(b.target) {
                return Err(Error::Validation(format!(
                    "criteria `{}` bounds {} twice",
                    self.name, b.target
                )));
            }
        }
        Ok(())
    }

    /// Parses `{"name": .., "bounds": [{"target": "k4", "op": "<", "value": 1.2}, ..]}`.
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CriteriaDoc = serde_json::from_str(s)
            .map_err(|e| Error::Validation(format!("criteria schema: {e}")))?;
        let bounds = doc
            .bounds
            .into_iter()
            .map(|b| {
                let target = TargetId::from_str(&b.target)
                    .map_err(|_| Error::Validation(format!("criteria schema: unknown target `{}`", b.target)))?;
                let direction = match b.op.as_str() {
                    "<" => BoundDirection::Upper,
                    ">" => BoundDirection::Lower,
                    other => {
                        return Err(Error::Validation(format!(
                            "criteria schema: unknown op `{other}` (expected `<` or `>`)"
                        )))
                    }
                };
                Ok(Bound {
                    target,
                    direction,
                    threshold: b.value,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TargetCriteria::new(doc.name, bounds)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CriteriaDoc {
            name: self.name.clone(),
            bounds: self
                .bounds
                .iter()
                .map(|b| BoundDoc {
                    target: b.target.token().into(),
                    op: b.op().into(),
                    value: b.threshold,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// How a prediction is turned into a distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilityMode {
    /// Normal distribution with the forest mean and spread.
    #[default]
    Gaussian,
    /// Empirical distribution of the individual tree outputs.
    Empirical,
}

impl FromStr for ProbabilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ProbabilityMode::Gaussian),
            "empirical" => Ok(ProbabilityMode::Empirical),
            other => Err(Error::Config(format!("unknown probability mode `{other}`"))),
        }
    }
}

/// Probability that a `N(mean, sigma²)` value satisfies `bound`. With
/// `sigma = 0` this is the indicator of strict satisfaction, 0.5 on the
/// boundary.
pub fn probability_of_bound(pred: &PredictionWithUncertainty, bound: &Bound) -> f64 {
    let p_below = if pred.sigma > 0.0 {
        normal_cdf((bound.threshold - pred.mean) / pred.sigma)
    } else if pred.mean < bound.threshold {
        1.0
    } else if pred.mean > bound.threshold {
        0.0
    } else {
        0.5
    };
    match bound.direction {
        BoundDirection::Upper => p_below,
        BoundDirection::Lower => 1.0 - p_below,
    }
}

/// Fraction of samples strictly inside the bound; ties count one half.
pub fn empirical_probability(samples: &[f64], bound: &Bound) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let score: f64 = samples
        .iter()
        .map(|&v| {
            let inside = match bound.direction {
                BoundDirection::Upper => v < bound.threshold,
                BoundDirection::Lower => v > bound.threshold,
            };
            if inside {
                1.0
            } else if v == bound.threshold {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    score / samples.len() as f64
}

/// Per-bound probabilities (in bound order) and their product.
pub fn probability_of_success(
    preds: &[(TargetId, PredictionWithUncertainty)],
    criteria: &TargetCriteria,
) -> Result<(Vec<(TargetId, f64)>, f64)> {
    let mut per_target = Vec::with_capacity(criteria.bounds.len());
    let mut joint = 1.0;
    for b in &criteria.bounds {
        let pred = preds
            .iter()
            .find(|(t, _)| *t == b.target)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Validation(format!("no prediction for target {}", b.target)))?;
        let p = probability_of_bound(pred, b);
        per_target.push((b.target, p));
        joint *= p;
    }
    Ok((per_target, joint))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub target: TargetId,
    pub mean: f64,
    pub sigma: f64,
    /// Present when the criteria bound this target.
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub candidate: Candidate,
    pub per_target: Vec<TargetOutcome>,
    pub joint_probability: f64,
}

impl DesignResult {
    pub fn outcome(&self, target: TargetId) -> Option<&TargetOutcome> {
        self.per_target.iter().find(|o| o.target == target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub criteria_name: String,
    pub mode: ProbabilityMode,
    pub params: GeneratorParams,
    /// In grid order.
    pub results: Vec<DesignResult>,
    pub best: usize,
}

impl ScanReport {
    pub fn best_result(&self) -> &DesignResult {
        &self.results[self.best]
    }

    pub fn at_wc(&self, wc: f64) -> Option<&DesignResult> {
        self.results
            .iter()
            .find(|r| (r.candidate.wc - wc).abs() < 1e-9)
    }

    /// wc, fractions, five means, five sigmas, five probabilities, joint.
    /// Unbounded targets have an empty probability cell.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header: Vec<String> = ["wc", "cement_pct", "gravel_pct", "sand_pct", "water_pct"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for prefix in ["mean", "sigma", "p"] {
            header.extend(TargetId::ALL.iter().map(|t| format!("{prefix}_{t}")));
        }
        header.push("joint".into());
        w.write_record(&header)?;
        for r in &self.results {
            let c = &r.candidate.composition;
            let mut row = vec![
                format!("{:.2}", r.candidate.wc),
                format!("{:.4}", c.cement_pct),
                format!("{:.4}", c.gravel_pct),
                format!("{:.4}", c.sand_pct),
                format!("{:.4}", c.water_pct),
            ];
            let cell = |t: TargetId, f: &dyn Fn(&TargetOutcome) -> Option<f64>| {
                r.outcome(t).and_then(f).map_or_else(String::new, |v| format!("{v:.6}"))
            };
            row.extend(TargetId::ALL.iter().map(|&t| cell(t, &|o| Some(o.mean))));
            row.extend(TargetId::ALL.iter().map(|&t| cell(t, &|o| Some(o.sigma))));
            row.extend(TargetId::ALL.iter().map(|&t| cell(t, &|o| o.probability)));
            row.push(format!("{:.6}", r.joint_probability));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn score_candidate(
    candidate: Candidate,
    models: &[TwoLayerModel],
    criteria: &TargetCriteria,
    mode: ProbabilityMode,
) -> Result<DesignResult> {
    let record = candidate.to_record();
    let mut per_target = Vec::with_capacity(models.len());
    let mut joint = 1.0;
    for model in models {
        let x = model_features(model, &record)?;
        let samples = model.tree_predictions(&x)?;
        let pred = PredictionWithUncertainty::from_samples(&samples);
        let probability = criteria
            .bounds
            .iter()
            .find(|b| b.target == model.final_target)
            .map(|b| match mode {
                ProbabilityMode::Gaussian => probability_of_bound(&pred, b),
                ProbabilityMode::Empirical => empirical_probability(&samples, b),
            });
        if let Some(p) = probability {
            joint *= p;
        }
        per_target.push(TargetOutcome {
            target: model.final_target,
            mean: pred.mean,
            sigma: pred.sigma,
            probability,
        });
    }
    Ok(DesignResult {
        candidate,
        per_target,
        joint_probability: joint,
    })
}

fn model_features(model: &TwoLayerModel, record: &MixRecord) -> Result<Vec<f64>> {
    let fv = crate::dataset::derive_features(record, model.imputed_precond.unwrap_or(0.0))?;
    let mut x = fv.0.to_vec();
    if model.feature_options.include_mass {
        x.push(record.est_mass_per_m3);
    }
    Ok(x)
}

/// Scores every grid candidate and returns them in grid order with the
/// argmax. Ties in joint probability go to the lower cement fraction.
pub fn scan(
    models: &[TwoLayerModel],
    criteria: &TargetCriteria,
    params: &GeneratorParams,
    mode: ProbabilityMode,
) -> Result<ScanReport> {
    criteria.validate()?;
    for b in &criteria.bounds {
        if !models.iter().any(|m| m.final_target == b.target) {
            return Err(Error::Validation(format!(
                "no trained model for criterion target {}",
                b.target
            )));
        }
    }
    let candidates = generate_candidates(params)?;
    if candidates.is_empty() {
        return Err(Error::Config("empty w/c grid".into()));
    }
    let results: Vec<DesignResult> = candidates
        .into_par_iter()
        .map(|c| score_candidate(c, models, criteria, mode))
        .collect::<Result<_>>()?;
    let best = (0..results.len())
        .max_by(|&a, &b| {
            let (ra, rb) = (&results[a], &results[b]);
            ra.joint_probability
                .total_cmp(&rb.joint_probability)
                .then(
                    rb.candidate
                        .composition
                        .cement_pct
                        .total_cmp(&ra.candidate.composition.cement_pct),
                )
        })
        .unwrap();
    Ok(ScanReport {
        criteria_name: criteria.name.clone(),
        mode,
        params: *params,
        results,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(mean: f64, sigma: f64) -> PredictionWithUncertainty {
        PredictionWithUncertainty { mean, sigma }
    }

    #[test]
    fn grid_is_inclusive_and_snapped() {
        let g = GeneratorParams::default().wc_grid();
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.4);
        assert_eq!(g[4], 0.6);
        assert_eq!(g[8], 0.8);
        assert_eq!(*g.last().unwrap(), 0.95);
    }

    #[test]
    fn sand_share_hits_anchors() {
        let p = GeneratorParams::default();
        assert!((p.sand_share(0.6) - 0.3674).abs() < 1e-15);
        assert!((p.sand_share(0.8) - 0.4035).abs() < 1e-15);
    }

    #[test]
    fn invalid_params() {
        let d = GeneratorParams::default();
        for p in [
            GeneratorParams { wet_density: 100.0, ..d },
            GeneratorParams { fine_fraction_anchors: [(0.6, 0.3), (0.6, 0.4)], ..d },
            GeneratorParams { wc_max: 2.5, ..d },
        ] {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn non_positive_aggregate_is_error() {
        let p = GeneratorParams::default();
        // cement = 205 / 0.09 ≈ 2278 > 2412 - 205
        assert!(generate_candidate(&p, 0.09).is_err());
    }

    #[test]
    fn bound_probability_examples() {
        let b = Bound::upper(TargetId::CarbonationK, 1.2);
        assert_eq!(probability_of_bound(&pred(1.2, 0.4), &b), 0.5);
        assert_eq!(probability_of_bound(&pred(0.6, 0.0), &b), 1.0);
        assert_eq!(probability_of_bound(&pred(1.2, 0.0), &b), 0.5);
        assert_eq!(probability_of_bound(&pred(1.3, 0.0), &b), 0.0);
        let lower = Bound::lower(TargetId::Strength, 30.0);
        assert_eq!(probability_of_bound(&pred(31.0, 0.0), &lower), 1.0);
        assert!((probability_of_bound(&pred(1.5, 0.3), &b) - 0.158655).abs() < 1e-6);
    }

    #[test]
    fn vacuous_bound() {
        let b = Bound::upper(TargetId::Cost, f64::INFINITY);
        assert_eq!(probability_of_bound(&pred(5.0, 2.0), &b), 1.0);
        assert_eq!(probability_of_bound(&pred(5.0, 0.0), &b), 1.0);
    }

    #[test]
    fn success_is_product() {
        let preds: Vec<_> = TargetId::ALL.iter().map(|&t| (t, pred(0.0, 1.0))).collect();
        let c = TargetCriteria::new(
            "x",
            vec![
                Bound::upper(TargetId::CarbonationK, 1.2815515655446004),
                Bound::upper(TargetId::EnvImpact, 0.8416212335729143),
                Bound::upper(TargetId::Strength, f64::INFINITY),
            ],
        )
        .unwrap();
        let (per, joint) = probability_of_success(&preds, &c).unwrap();
        assert!((per[0].1 - 0.9).abs() < 1e-9);
        assert!((per[1].1 - 0.8).abs() < 1e-9);
        assert!((joint - 0.72).abs() < 1e-9);
        let zero = TargetCriteria::new("z", vec![Bound::upper(TargetId::Cost, f64::NEG_INFINITY)]).unwrap();
        assert_eq!(probability_of_success(&preds, &zero).unwrap().1, 0.0);
    }

    #[test]
    fn missing_prediction_named() {
        let preds = vec![(TargetId::Cost, pred(0.0, 1.0))];
        let err = probability_of_success(&preds, &TargetCriteria::low_k()).unwrap_err();
        assert!(err.to_string().contains("k4"));
    }

    #[test]
    fn criteria_json() {
        let c = TargetCriteria::from_json(
            r#"{"name":"Low-K","bounds":[{"target":"k4","op":"<","value":1.2},{"target":"strength","op":">","value":30}]}"#,
        )
        .unwrap();
        assert_eq!(c.bounds[1], Bound::lower(TargetId::Strength, 30.0));
        let again = TargetCriteria::from_json(&TargetCriteria::low_e().to_json().unwrap()).unwrap();
        assert_eq!(again, TargetCriteria::low_e());
        for bad in [
            r#"{"name":"x","bounds":[{"target":"slump","op":"<","value":1}]}"#,
            r#"{"name":"x","bounds":[{"target":"k4","op":"<=","value":1}]}"#,
            r#"{"name":"x","bounds":[]}"#,
            r#"{"name":"x","bounds":[{"target":"k4","op":"<","value":1},{"target":"k4","op":">","value":0}]}"#,
        ] {
            assert!(TargetCriteria::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn empirical_counts_ties_as_half() {
        let b = Bound::upper(TargetId::Cost, 2.0);
        assert_eq!(empirical_probability(&[1.0, 2.0, 3.0, 1.5], &b), 0.625);
    }
}
