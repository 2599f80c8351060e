//! Training data: mix records, derived ratio features and correlation maps.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// The 21-row training table shipped with the crate.
pub const SUPPLEMENTARY_CSV: &str = include_str!("../data/supplementary.csv");

/// Exact header of the training CSV.
pub const CSV_HEADER: [&str; 13] = [
    "mix",
    "cement_type",
    "cement_pct",
    "gravel_pct",
    "sand_pct",
    "water_pct",
    "est_mass_per_m3",
    "precond_days",
    "k4",
    "env_impact",
    "strength",
    "density",
    "cost",
];

pub const MISSING: &str = "-";

/// Canonical feature order.
pub const FEATURE_NAMES: [&str; 9] = [
    "cement_type_code",
    "cement_pct",
    "gravel_pct",
    "sand_pct",
    "water_pct",
    "water_cement_ratio",
    "total_agg_cement_ratio",
    "sand_total_agg_ratio",
    "preconditioning_days",
];

pub const MASS_FEATURE_NAME: &str = "est_mass_per_m3";

pub const BASE_FEATURE_COUNT: usize = FEATURE_NAMES.len();

/// A measured concrete property, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetId {
    #[serde(rename = "k4")]
    CarbonationK,
    #[serde(rename = "env_impact")]
    EnvImpact,
    #[serde(rename = "strength")]
    Strength,
    #[serde(rename = "density")]
    Density,
    #[serde(rename = "cost")]
    Cost,
}

impl TargetId {
    pub const ALL: [TargetId; 5] = [
        TargetId::CarbonationK,
        TargetId::EnvImpact,
        TargetId::Strength,
        TargetId::Density,
        TargetId::Cost,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Token used in CSV headers, criteria files and CLI flags.
    pub fn token(self) -> &'static str {
        match self {
            TargetId::CarbonationK => "k4",
            TargetId::EnvImpact => "env_impact",
            TargetId::Strength => "strength",
            TargetId::Density => "density",
            TargetId::Cost => "cost",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            TargetId::CarbonationK => "mm/day^0.5",
            TargetId::EnvImpact => "kgCO2e/kg",
            TargetId::Strength => "MPa",
            TargetId::Density => "kg/m3",
            TargetId::Cost => "GBP/kg",
        }
    }
}

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for TargetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetId::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| Error::Validation(format!("unknown target `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum CementType {
    #[serde(rename = "IIA 32.5 R")]
    CemIIA_32_5R,
    #[serde(rename = "I 52.5 N")]
    CemI_52_5N,
}

impl CementType {
    /// Numeric encoding used as a feature.
    pub fn code(self) -> f64 {
        match self {
            CementType::CemIIA_32_5R => 0.0,
            CementType::CemI_52_5N => 1.0,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            CementType::CemIIA_32_5R => "IIA 32.5 R",
            CementType::CemI_52_5N => "I 52.5 N",
        }
    }
}

impl FromStr for CementType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "IIA 32.5 R" => Ok(CementType::CemIIA_32_5R),
            "I 52.5 N" => Ok(CementType::CemI_52_5N),
            other => Err(Error::Validation(format!("unknown cement type `{other}`"))),
        }
    }
}

/// Mass fractions in percent of total mix mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixComposition {
    pub cement_pct: f64,
    pub gravel_pct: f64,
    pub sand_pct: f64,
    pub water_pct: f64,
}

impl MixComposition {
    pub const SUM_TOLERANCE: f64 = 0.5;

    pub fn new(cement_pct: f64, gravel_pct: f64, sand_pct: f64, water_pct: f64) -> Self {
        MixComposition {
            cement_pct,
            gravel_pct,
            sand_pct,
            water_pct,
        }
    }

    pub fn total(&self) -> f64 {
        self.cement_pct + self.gravel_pct + self.sand_pct + self.water_pct
    }

    /// Checks every fraction is in (0, 100) and the total is 100 ± 0.5.
    pub fn validate(&self) -> Result<()> {
        let parts = [
            ("cement_pct", self.cement_pct),
            ("gravel_pct", self.gravel_pct),
            ("sand_pct", self.sand_pct),
            ("water_pct", self.water_pct),
        ];
        for (name, v) in parts {
            if !(v.is_finite() && v > 0.0 && v < 100.0) {
                return Err(Error::Validation(format!(
                    "{name} = {v} is outside (0, 100)"
                )));
            }
        }
        let total = self.total();
        if (total - 100.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "fractions sum to {total}, expected 100 ± {}",
                Self::SUM_TOLERANCE
            )));
        }
        Ok(())
    }
}

/// Optional measured properties of one mix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub k4: Option<f64>,
    pub env_impact: Option<f64>,
    pub strength: Option<f64>,
    pub density: Option<f64>,
    pub cost: Option<f64>,
}

impl Measured {
    pub fn get(&self, target: TargetId) -> Option<f64> {
        match target {
            TargetId::CarbonationK => self.k4,
            TargetId::EnvImpact => self.env_impact,
            TargetId::Strength => self.strength,
            TargetId::Density => self.density,
            TargetId::Cost => self.cost,
        }
    }

    pub fn set(&mut self, target: TargetId, value: Option<f64>) {
        let slot = match target {
            TargetId::CarbonationK => &mut self.k4,
            TargetId::EnvImpact => &mut self.env_impact,
            TargetId::Strength => &mut self.strength,
            TargetId::Density => &mut self.density,
            TargetId::Cost => &mut self.cost,
        };
        *slot = value;
    }

    pub fn all_present(&self) -> bool {
        TargetId::ALL.iter().all(|&t| self.get(t).is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub id: String,
    pub cement_type: CementType,
    pub composition: MixComposition,
    pub est_mass_per_m3: f64,
    pub preconditioning_days: Option<f64>,
    pub measured: Measured,
}

impl MixRecord {
    pub fn validate(&self) -> Result<()> {
        self.composition
            .validate()
            .map_err(|e| Error::Validation(format!("mix `{}`: {e}", self.id)))?;
        for t in TargetId::ALL {
            if let Some(v) = self.measured.get(t) {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Validation(format!(
                        "mix `{}`: {t} = {v} must be strictly positive",
                        self.id
                    )));
                }
            }
        }
        if self.measured.k4.is_some() && self.preconditioning_days.is_none() {
            return Err(Error::Validation(format!(
                "mix `{}`: carbonation coefficient present without preconditioning time",
                self.id
            )));
        }
        Ok(())
    }
}

/// The nine canonical input features of one mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; BASE_FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn cement_type_code(&self) -> f64 {
        self.0[0]
    }
    pub fn cement_pct(&self) -> f64 {
        self.0[1]
    }
    pub fn gravel_pct(&self) -> f64 {
        self.0[2]
    }
    pub fn sand_pct(&self) -> f64 {
        self.0[3]
    }
    pub fn water_pct(&self) -> f64 {
        self.0[4]
    }
    pub fn water_cement_ratio(&self) -> f64 {
        self.0[5]
    }
    pub fn total_agg_cement_ratio(&self) -> f64 {
        self.0[6]
    }
    pub fn sand_total_agg_ratio(&self) -> f64 {
        self.0[7]
    }
    pub fn preconditioning_days(&self) -> f64 {
        self.0[8]
    }
}

/// Builds the canonical feature vector for a record. Missing
/// preconditioning time is replaced by `imputed_precond`.
pub fn derive_features(record: &MixRecord, imputed_precond: f64) -> Result<FeatureVector> {
    let c = &record.composition;
    if c.cement_pct == 0.0 {
        return Err(Error::DivisionByZero("cement fraction is zero"));
    }
    let aggregate = c.gravel_pct + c.sand_pct;
    if aggregate == 0.0 {
        return Err(Error::DivisionByZero("aggregate fraction is zero"));
    }
    Ok(FeatureVector([
        record.cement_type.code(),
        c.cement_pct,
        c.gravel_pct,
        c.sand_pct,
        c.water_pct,
        c.water_pct / c.cement_pct,
        aggregate / c.cement_pct,
        c.sand_pct / aggregate,
        record.preconditioning_days.unwrap_or(imputed_precond),
    ]))
}

/// Which columns make up a model's input vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Append the estimated mass per m³ after the nine canonical features.
    pub include_mass: bool,
}

impl FeatureOptions {
    pub fn feature_count(&self) -> usize {
        BASE_FEATURE_COUNT + usize::from(self.include_mass)
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        let mut names = FEATURE_NAMES.to_vec();
        if self.include_mass {
            names.push(MASS_FEATURE_NAME);
        }
        names
    }
}

/// Records plus their aligned feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    records: Vec<MixRecord>,
    features: Vec<FeatureVector>,
    imputed_precond: Option<f64>,
    options: FeatureOptions,
}

impl DatasetTable {
    pub fn from_records(records: Vec<MixRecord>) -> Result<Self> {
        Self::with_options(records, FeatureOptions::default())
    }

    pub fn with_options(records: Vec<MixRecord>, options: FeatureOptions) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate mix id `{}`", r.id)));
            }
        }
        let needs_imputation = records.iter().any(|r| r.preconditioning_days.is_none());
        let imputed_precond = match impute_preconditioning(&records) {
            Ok(v) => Some(v),
            Err(e) if needs_imputation => return Err(e),
            Err(_) => None,
        };
        let features = records
            .iter()
            .map(|r| derive_features(r, imputed_precond.unwrap_or(0.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetTable {
            records,
            features,
            imputed_precond,
            options,
        })
    }

    /// The bundled 21-row training table.
    pub fn supplementary() -> Self {
        parse_training_csv(SUPPLEMENTARY_CSV.as_bytes()).expect("bundled fixture is valid")
    }

    pub fn records(&self) -> &[MixRecord] {
        &self.records
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Median preconditioning time substituted for missing values.
    pub fn imputed_precond(&self) -> Option<f64> {
        self.imputed_precond
    }

    pub fn options(&self) -> FeatureOptions {
        self.options
    }

    pub fn feature_count(&self) -> usize {
        self.options.feature_count()
    }

    /// Model input row for record `i`.
    pub fn feature_row(&self, i: usize) -> Vec<f64> {
        let mut row = self.features[i].0.to_vec();
        if self.options.include_mass {
            row.push(self.records[i].est_mass_per_m3);
        }
        row
    }

    /// Model input row for a record outside the table, using this table's
    /// imputed preconditioning time and feature options.
    pub fn features_for(&self, record: &MixRecord) -> Result<Vec<f64>> {
        let fv = derive_features(record, self.imputed_precond.unwrap_or(0.0))?;
        let mut row = fv.0.to_vec();
        if self.options.include_mass {
            row.push(record.est_mass_per_m3);
        }
        Ok(row)
    }

    /// Indices of records with `target` measured.
    pub fn rows_with(&self, target: TargetId) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.records[i].measured.get(target).is_some())
            .collect()
    }

    /// Indices of records with every target measured.
    pub fn fully_measured_rows(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.records[i].measured.all_present())
            .collect()
    }

    /// Feature rows and target values for the records where `target` is
    /// measured.
    pub fn training_set(&self, target: TargetId) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
        let rows = self.rows_with(target);
        let x = rows.iter().map(|&i| self.feature_row(i)).collect();
        let y = rows
            .iter()
            .map(|&i| self.records[i].measured.get(target).unwrap())
            .collect();
        (rows, x, y)
    }

    /// A new table without record `index`; the preconditioning imputation is
    /// recomputed from the remaining rows.
    pub fn without(&self, index: usize) -> Result<Self> {
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .map(|(_, r)| r.clone())
            .collect();
        Self::with_options(records, self.options)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }
}

/// Median of the present preconditioning times (lower median for even
/// counts).
pub fn impute_preconditioning(records: &[MixRecord]) -> Result<f64> {
    let present: Vec<f64> = records
        .iter()
        .filter_map(|r| r.preconditioning_days)
        .collect();
    stats::lower_median(&present).ok_or_else(|| {
        Error::InsufficientData("no record has a preconditioning time to impute from".into())
    })
}

fn parse_optional(row: usize, column: &str, raw: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw == MISSING {
        return Ok(None);
    }
    parse_number(row, column, raw).map(Some)
}

fn parse_number(row: usize, column: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Parses the training CSV. Row numbers in errors are 1-based data rows.
pub fn parse_training_csv<R: Read>(source: R) -> Result<DatasetTable> {
    parse_training_csv_with(source, FeatureOptions::default())
}

pub fn parse_training_csv_with<R: Read>(source: R, options: FeatureOptions) -> Result<DatasetTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Header {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut records = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = n + 1;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let cement_type = cell(1).parse::<CementType>().map_err(|_| Error::Parse {
            row: line,
            column: CSV_HEADER[1].into(),
            value: cell(1).into(),
        })?;
        let mut measured = Measured::default();
        for (k, t) in TargetId::ALL.into_iter().enumerate() {
            measured.set(t, parse_optional(line, CSV_HEADER[8 + k], cell(8 + k))?);
        }
        records.push(MixRecord {
            id: cell(0).to_string(),
            cement_type,
            composition: MixComposition {
                cement_pct: parse_number(line, CSV_HEADER[2], cell(2))?,
                gravel_pct: parse_number(line, CSV_HEADER[3], cell(3))?,
                sand_pct: parse_number(line, CSV_HEADER[4], cell(4))?,
                water_pct: parse_number(line, CSV_HEADER[5], cell(5))?,
            },
            est_mass_per_m3: parse_number(line, CSV_HEADER[6], cell(6))?,
            preconditioning_days: parse_optional(line, CSV_HEADER[7], cell(7))?,
            measured,
        });
    }
    DatasetTable::with_options(records, options)
}

fn fmt_optional(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |v| v.to_string())
}

/// Writes records in the training CSV format.
pub fn write_training_csv<W: Write>(table: &DatasetTable, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in table.records() {
        let c = &r.composition;
        let mut fields = vec![
            r.id.clone(),
            r.cement_type.token().to_string(),
            c.cement_pct.to_string(),
            c.gravel_pct.to_string(),
            c.sand_pct.to_string(),
            c.water_pct.to_string(),
            r.est_mass_per_m3.to_string(),
            fmt_optional(r.preconditioning_days),
        ];
        fields.extend(TargetId::ALL.iter().map(|&t| fmt_optional(r.measured.get(t))));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "spearman" => Ok(CorrelationMethod::Spearman),
            other => Err(Error::Config(format!("unknown correlation method `{other}`"))),
        }
    }
}

/// Square correlation map; `None` entries are undefined (zero variance over
/// the shared rows, or fewer than two shared rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub method: CorrelationMethod,
}

impl CorrelationMatrix {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.index_of(a)?;
        let j = self.index_of(b)?;
        self.values[i][j]
    }

    /// Square CSV with a label row and label column. Undefined entries are
    /// written as `NaN`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut fields = vec![label.clone()];
            fields.extend(
                row.iter()
                    .map(|v| v.map_or_else(|| "NaN".to_string(), |v| format!("{v:.6}"))),
            );
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column values for correlation; preconditioning is taken raw (no
/// imputation) so missing entries are excluded pairwise.
fn correlation_columns(table: &DatasetTable) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let mut labels: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut columns: Vec<Vec<Option<f64>>> = (0..BASE_FEATURE_COUNT)
        .map(|j| {
            table
                .records()
                .iter()
                .zip(table.features())
                .map(|(r, f)| {
                    if j == 8 {
                        r.preconditioning_days
                    } else {
                        Some(f.0[j])
                    }
                })
                .collect()
        })
        .collect();
    for t in TargetId::ALL {
        labels.push(t.token().to_string());
        columns.push(table.records().iter().map(|r| r.measured.get(t)).collect());
    }
    (labels, columns)
}

/// Pairwise-deletion correlation over the nine features and five targets.
pub fn correlation_matrix(
    table: &DatasetTable,
    method: CorrelationMethod,
) -> Result<CorrelationMatrix> {
    if table.is_empty() {
        return Err(Error::InsufficientData("no records".into()));
    }
    if table.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 records, got {}",
            table.len()
        )));
    }
    let (labels, columns) = correlation_columns(table);
    let n = labels.len();
    let mut values = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let (a, b): (Vec<f64>, Vec<f64>) = columns[i]
                .iter()
                .zip(&columns[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            let r = match method {
                CorrelationMethod::Pearson => stats::pearson(&a, &b),
                CorrelationMethod::Spearman => stats::spearman(&a, &b),
            };
            // self-correlation is exactly 1 whenever it is defined
            let r = if i == j { r.map(|_| 1.0) } else { r };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels,
        values,
        method,
    })
}
