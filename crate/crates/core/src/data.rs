//! Trial ingestion and preprocessing: CSV loading, feature-kind inference,
//! median/mode imputation, z-score standardization, and named feature groups.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

/// Arm coding: dense ordinal codes with 0 reserved for the control arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCoding {
    /// Display name per code; index = code.
    names: Vec<String>,
}

impl ArmCoding {
    /// Build from a name -> code map. Codes must be dense ordinals 0..k.
    pub fn from_codes(codes: &BTreeMap<String, u8>) -> Result<Self> {
        if codes.len() < 2 {
            return Err(Error::config("arm_codes must define at least 2 arms"));
        }
        let mut names = vec![None; codes.len()];
        for (name, &code) in codes {
            let slot = names
                .get_mut(code as usize)
                .ok_or_else(|| Error::config(format!("arm code {code} is not contiguous from 0")))?;
            if slot.is_some() {
                return Err(Error::config(format!("duplicate arm code {code}")));
            }
            *slot = Some(name.clone());
        }
        Ok(Self {
            names: names.into_iter().map(|n| n.expect("dense codes")).collect(),
        })
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::config("need at least 2 arms"));
        }
        Ok(Self { names })
    }

    pub fn n_arms(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, code: u8) -> &str {
        &self.names[code as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn code_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|c| c as u8)
    }
}

/// Patient-level trial data: features (possibly with missing cells), arm
/// codes, and a binary outcome. Immutable after construction; preprocessing
/// steps return new frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFrame {
    ids: Vec<String>,
    features: Matrix,
    arms: Vec<u8>,
    outcomes: Vec<u8>,
    arm_coding: ArmCoding,
}

impl TrialFrame {
    pub fn new(
        ids: Vec<String>,
        features: Matrix,
        arms: Vec<u8>,
        outcomes: Vec<u8>,
        arm_coding: ArmCoding,
    ) -> Result<Self> {
        let n = features.n_rows();
        if ids.len() != n || arms.len() != n || outcomes.len() != n {
            return Err(Error::data(format!(
                "column length mismatch: {} ids, {} rows, {} arms, {} outcomes",
                ids.len(),
                n,
                arms.len(),
                outcomes.len()
            )));
        }
        for &y in &outcomes {
            if y > 1 {
                return Err(Error::data(format!("outcome {y} outside {{0, 1}}")));
            }
        }
        for &a in &arms {
            if (a as usize) >= arm_coding.n_arms() {
                return Err(Error::data(format!("arm code {a} outside coding")));
            }
        }
        let distinct: std::collections::BTreeSet<u8> = arms.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(Error::data("fewer than 2 distinct arms present"));
        }
        Ok(Self { ids, features, arms, outcomes, arm_coding })
    }

    pub fn n_patients(&self) -> usize {
        self.features.n_rows()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        self.features.names()
    }

    pub fn arms(&self) -> &[u8] {
        &self.arms
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn outcomes_f64(&self) -> Vec<f64> {
        self.outcomes.iter().map(|&y| y as f64).collect()
    }

    pub fn arm_coding(&self) -> &ArmCoding {
        &self.arm_coding
    }

    pub fn n_arms(&self) -> usize {
        self.arm_coding.n_arms()
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_arms()];
        for &a in &self.arms {
            counts[a as usize] += 1;
        }
        counts
    }

    fn with_features(&self, features: Matrix) -> Self {
        Self {
            ids: self.ids.clone(),
            features,
            arms: self.arms.clone(),
            outcomes: self.outcomes.clone(),
            arm_coding: self.arm_coding.clone(),
        }
    }

    /// Restrict to the given rows, keeping arm codes as they are.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        TrialFrame::new(
            rows.iter().map(|&r| self.ids[r].clone()).collect(),
            self.features.select_rows(rows),
            rows.iter().map(|&r| self.arms[r]).collect(),
            rows.iter().map(|&r| self.outcomes[r]).collect(),
            self.arm_coding.clone(),
        )
    }

    /// Collapse to a two-arm frame: rows whose arm is in `treated_arms` are
    /// recoded 1, rows in `control_arm` are recoded 0, everything else is
    /// dropped. Used for pooled and pairwise comparisons.
    pub fn binary_view(&self, treated_arms: &[u8], control_arm: u8) -> Result<Self> {
        if treated_arms.is_empty() {
            return Err(Error::config("treated arm set is empty"));
        }
        if treated_arms.contains(&control_arm) {
            return Err(Error::config("control arm also listed as treated"));
        }
        let mut rows = Vec::new();
        let mut new_arms = Vec::new();
        for (i, &a) in self.arms.iter().enumerate() {
            if a == control_arm {
                rows.push(i);
                new_arms.push(0u8);
            } else if treated_arms.contains(&a) {
                rows.push(i);
                new_arms.push(1u8);
            }
        }
        let treated_name = treated_arms
            .iter()
            .map(|&a| self.arm_coding.name(a))
            .collect::<Vec<_>>()
            .join("+");
        let coding = ArmCoding::from_names(vec![
            self.arm_coding.name(control_arm).to_string(),
            treated_name,
        ])?;
        TrialFrame::new(
            rows.iter().map(|&r| self.ids[r].clone()).collect(),
            self.features.select_rows(&rows),
            new_arms,
            rows.iter().map(|&r| self.outcomes[r]).collect(),
            coding,
        )
    }
}

/// Named, non-overlapping feature groups partitioning the feature columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroups {
    groups: Vec<(String, Vec<String>)>,
}

impl FeatureGroups {
    pub fn new(groups: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut seen_groups = std::collections::BTreeSet::new();
        let mut seen_features = std::collections::BTreeSet::new();
        for (name, members) in &groups {
            if !seen_groups.insert(name.clone()) {
                return Err(Error::config(format!("duplicate group name '{name}'")));
            }
            for f in members {
                if !seen_features.insert(f.clone()) {
                    return Err(Error::config(format!(
                        "feature '{f}' appears in more than one group"
                    )));
                }
            }
        }
        Ok(Self { groups })
    }

    pub fn names(&self) -> Vec<&str> {
        self.groups.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn members(&self, group: &str) -> Option<&[String]> {
        self.groups
            .iter()
            .find(|(n, _)| n == group)
            .map(|(_, m)| m.as_slice())
    }

    pub fn group_of(&self, feature: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, m)| m.iter().any(|f| f == feature))
            .map(|(n, _)| n.as_str())
    }

    /// Check the groups exactly partition the given feature columns.
    pub fn validate_partition(&self, feature_names: &[String]) -> Result<()> {
        let mut covered = std::collections::BTreeSet::new();
        for (group, members) in &self.groups {
            for f in members {
                if !feature_names.contains(f) {
                    return Err(Error::config(format!(
                        "group '{group}' references unknown feature '{f}'"
                    )));
                }
                covered.insert(f.clone());
            }
        }
        for f in feature_names {
            if !covered.contains(f) {
                return Err(Error::config(format!("feature '{f}' belongs to no group")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

/// Per-feature preprocessing audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub name: String,
    pub kind: FeatureKind,
    /// Value substituted for missing cells (median or mode), if imputation ran.
    pub imputation_value: Option<f64>,
    pub imputed_cells: usize,
    /// Standardization statistics; binary features record none.
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub features: Vec<FeatureReport>,
}

impl PreprocessReport {
    /// Merge standardization stats into an imputation report (or vice versa).
    pub fn merge(mut self, other: PreprocessReport) -> PreprocessReport {
        for (mine, theirs) in self.features.iter_mut().zip(other.features) {
            if mine.imputation_value.is_none() {
                mine.imputation_value = theirs.imputation_value;
                mine.imputed_cells = theirs.imputed_cells;
            }
            if mine.mean.is_none() {
                mine.mean = theirs.mean;
                mine.sd = theirs.sd;
            }
        }
        self
    }
}

/// Column-role schema for loading a trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSchema {
    pub arm_column: String,
    /// Arm display name -> dense ordinal code (0 = control).
    pub arm_codes: BTreeMap<String, u8>,
    pub outcome_column: String,
    #[serde(default)]
    pub id_column: Option<String>,
    /// Group name -> ordered member features. Optional; when present the
    /// groups must partition the feature columns.
    #[serde(default)]
    pub feature_groups: BTreeMap<String, Vec<String>>,
    /// Explicit kind overrides that win over inference.
    #[serde(default)]
    pub kind_overrides: BTreeMap<String, FeatureKind>,
    /// Columns to drop entirely.
    #[serde(default)]
    pub excluded_columns: Vec<String>,
}

impl TrialSchema {
    pub fn feature_groups(&self) -> Result<FeatureGroups> {
        FeatureGroups::new(
            self.feature_groups
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>().map_err(|_| {
        Error::data(format!("row {}: cannot parse '{raw}' in column '{col}'", row + 1))
    })
}

/// Load a trial CSV through a column-role schema. Missing markers are the
/// empty string, "NA", and "NaN" (case-insensitive); anything else must parse
/// as a number.
pub fn load_trial_csv(path: impl AsRef<Path>, schema: &TrialSchema) -> Result<TrialFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    load_trial_records(
        &headers,
        reader.records().map(|r| r.map_err(Error::from)),
        schema,
    )
}

fn load_trial_records<I>(headers: &[String], records: I, schema: &TrialSchema) -> Result<TrialFrame>
where
    I: Iterator<Item = Result<csv::StringRecord>>,
{
    let mut seen = std::collections::BTreeSet::new();
    for h in headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::data(format!("duplicate column name '{h}'")));
        }
    }
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(format!("column '{name}' not found in CSV header")))
    };
    let arm_col = col_index(&schema.arm_column)?;
    let outcome_col = col_index(&schema.outcome_column)?;
    let id_col = schema.id_column.as_deref().map(col_index).transpose()?;
    for excluded in &schema.excluded_columns {
        col_index(excluded)?;
    }

    let mut feature_cols: Vec<usize> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let is_role = i == arm_col || i == outcome_col || Some(i) == id_col;
        if !is_role && !schema.excluded_columns.contains(h) {
            feature_cols.push(i);
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::data("CSV contains no feature columns"));
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&i| headers[i].clone()).collect();

    let coding = ArmCoding::from_codes(&schema.arm_codes)?;
    let mut ids = Vec::new();
    let mut arms = Vec::new();
    let mut outcomes = Vec::new();
    let mut data = Vec::new();
    for (row, record) in records.enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::data(format!(
                "row {}: {} fields, expected {}",
                row + 1,
                record.len(),
                headers.len()
            )));
        }
        let arm_raw = record.get(arm_col).unwrap_or("").trim();
        let arm = schema.arm_codes.get(arm_raw).copied().ok_or_else(|| {
            Error::data(format!("row {}: unknown arm value '{arm_raw}'", row + 1))
        })?;
        let outcome_raw = record.get(outcome_col).unwrap_or("");
        let outcome = parse_cell(outcome_raw, row, &schema.outcome_column)?;
        let outcome = if outcome == 0.0 {
            0u8
        } else if outcome == 1.0 {
            1u8
        } else {
            return Err(Error::data(format!(
                "row {}: outcome '{}' outside {{0, 1}}",
                row + 1,
                outcome_raw.trim()
            )));
        };
        ids.push(match id_col {
            Some(c) => record.get(c).unwrap_or("").trim().to_string(),
            None => format!("row{}", row + 1),
        });
        arms.push(arm);
        outcomes.push(outcome);
        for (&c, name) in feature_cols.iter().zip(&feature_names) {
            data.push(parse_cell(record.get(c).unwrap_or(""), row, name)?);
        }
    }
    let n = ids.len();
    let features = Matrix::new(n, feature_names.len(), data, feature_names)?;
    TrialFrame::new(ids, features, arms, outcomes, coding)
}

/// Write a frame back out in the same schema `load_trial_csv` reads.
/// Finite doubles use Rust's shortest round-trip formatting, so a reload
/// reproduces every value bit-identically.
pub fn write_trial_csv(frame: &TrialFrame, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["id".to_string(), "arm".to_string(), "outcome".to_string()];
    header.extend(frame.feature_names().iter().cloned());
    writer.write_record(&header)?;
    for i in 0..frame.n_patients() {
        let mut record = vec![
            frame.ids()[i].clone(),
            frame.arm_coding().name(frame.arms()[i]).to_string(),
            frame.outcomes()[i].to_string(),
        ];
        for &v in frame.features().row(i) {
            record.push(if v.is_nan() { "NA".to_string() } else { format!("{v}") });
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Schema matching `write_trial_csv` output for a given frame.
pub fn roundtrip_schema(frame: &TrialFrame) -> TrialSchema {
    TrialSchema {
        arm_column: "arm".into(),
        arm_codes: frame
            .arm_coding()
            .names()
            .iter()
            .enumerate()
            .map(|(c, n)| (n.clone(), c as u8))
            .collect(),
        outcome_column: "outcome".into(),
        id_column: Some("id".into()),
        feature_groups: BTreeMap::new(),
        kind_overrides: BTreeMap::new(),
        excluded_columns: Vec::new(),
    }
}

/// A feature is binary iff its non-missing values all lie in {0, 1};
/// schema overrides win. Errors on an all-missing column.
pub fn infer_feature_kinds(frame: &TrialFrame, schema: Option<&TrialSchema>) -> Result<Vec<FeatureKind>> {
    let mut kinds = Vec::with_capacity(frame.features().n_cols());
    for (c, name) in frame.feature_names().iter().enumerate() {
        if let Some(overridden) = schema.and_then(|s| s.kind_overrides.get(name)) {
            kinds.push(*overridden);
            continue;
        }
        let col = frame.features().column(c);
        let non_missing: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if non_missing.is_empty() {
            return Err(Error::data(format!("column '{name}' is entirely missing")));
        }
        let binary = non_missing.iter().all(|&v| v == 0.0 || v == 1.0);
        kinds.push(if binary { FeatureKind::Binary } else { FeatureKind::Continuous });
    }
    Ok(kinds)
}

/// Fill missing cells: column median for continuous features, mode for
/// binary (ties toward 0). Returns the imputed frame plus a report.
pub fn impute(frame: &TrialFrame, kinds: &[FeatureKind]) -> Result<(TrialFrame, PreprocessReport)> {
    if kinds.len() != frame.features().n_cols() {
        return Err(Error::config("kinds do not cover all features"));
    }
    let mut features = frame.features().clone();
    let mut report = PreprocessReport::default();
    for (c, (name, &kind)) in frame.feature_names().iter().zip(kinds).enumerate() {
        let col = features.column(c);
        let non_missing: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if non_missing.is_empty() {
            return Err(Error::data(format!(
                "column '{name}' is entirely missing; nothing to impute from"
            )));
        }
        let fill = match kind {
            FeatureKind::Continuous => stats::median(&non_missing),
            FeatureKind::Binary => {
                let ones = non_missing.iter().filter(|&&v| v == 1.0).count();
                let zeros = non_missing.len() - ones;
                if ones > zeros {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let mut imputed_cells = 0;
        let filled: Vec<f64> = col
            .iter()
            .map(|&v| {
                if v.is_nan() {
                    imputed_cells += 1;
                    fill
                } else {
                    v
                }
            })
            .collect();
        features.set_column(c, &filled);
        report.features.push(FeatureReport {
            name: name.clone(),
            kind,
            imputation_value: Some(fill),
            imputed_cells,
            mean: None,
            sd: None,
        });
    }
    Ok((frame.with_features(features), report))
}

/// Z-score continuous columns; binary columns keep their original scale.
/// Constant columns are centered only. Requires fully imputed input.
pub fn standardize(frame: &TrialFrame, kinds: &[FeatureKind]) -> Result<(TrialFrame, PreprocessReport)> {
    if kinds.len() != frame.features().n_cols() {
        return Err(Error::config("kinds do not cover all features"));
    }
    if frame.features().has_missing() {
        return Err(Error::data("standardize requires imputed (complete) data"));
    }
    let mut features = frame.features().clone();
    let mut report = PreprocessReport::default();
    for (c, (name, &kind)) in frame.feature_names().iter().zip(kinds).enumerate() {
        let (mean, sd) = match kind {
            FeatureKind::Binary => (None, None),
            FeatureKind::Continuous => {
                let col = features.column(c);
                let m = stats::mean(&col);
                let s = stats::population_sd(&col);
                let transformed: Vec<f64> = if s == 0.0 {
                    col.iter().map(|v| v - m).collect()
                } else {
                    col.iter().map(|v| (v - m) / s).collect()
                };
                features.set_column(c, &transformed);
                (Some(m), Some(s))
            }
        };
        report.features.push(FeatureReport {
            name: name.clone(),
            kind,
            imputation_value: None,
            imputed_cells: 0,
            mean,
            sd,
        });
    }
    Ok((frame.with_features(features), report))
}

/// Restrict the feature matrix to the union of the requested groups,
/// preserving the frame's column order.
pub fn select_features(frame: &TrialFrame, groups: &FeatureGroups, include: &[&str]) -> Result<Matrix> {
    if include.is_empty() {
        return Err(Error::config("empty feature selection"));
    }
    let mut wanted = std::collections::BTreeSet::new();
    for group in include {
        let members = groups
            .members(group)
            .ok_or_else(|| Error::config(format!("unknown feature group '{group}'")))?;
        for f in members {
            wanted.insert(f.clone());
        }
    }
    let cols: Vec<usize> = frame
        .feature_names()
        .iter()
        .enumerate()
        .filter(|(_, name)| wanted.contains(*name))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(Error::config("selected groups cover no frame columns"));
    }
    Ok(frame.features().select_cols(&cols))
}
