//! Predictor schema and numeric encoding.
//!
//! Five nominal predictors are one-hot expanded in a fixed column order after
//! the continuous `age` column. Income is excluded unless explicitly enabled,
//! in which case it is appended last and rows without an income value are
//! dropped.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{ClientProfile, IdCombo};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("family type {0:?} does not match any known family type")]
    UnmappableFamilyType(String),
    #[error("no profiles to encode")]
    NoProfiles,
    #[error("every profile was dropped for missing income")]
    EmptyAfterFiltering,
    #[error("profile {0} has no age and missing ages are rejected")]
    MissingAge(IdCombo),
    #[error("no ages available to impute from")]
    NoAgesToImpute,
    #[error("standardization stats cover {expected} columns, dataset has {actual}")]
    StatsWidthMismatch { expected: usize, actual: usize },
}

/// The five nominal predictor fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalField {
    Race,
    FamilyType,
    ReasonHomeless,
    Employment,
    Citizenship,
}

impl CategoricalField {
    pub const ALL: [CategoricalField; 5] = [
        CategoricalField::Race,
        CategoricalField::FamilyType,
        CategoricalField::ReasonHomeless,
        CategoricalField::Employment,
        CategoricalField::Citizenship,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CategoricalField::Race => "race",
            CategoricalField::FamilyType => "family_type",
            CategoricalField::ReasonHomeless => "reason_homeless",
            CategoricalField::Employment => "employment",
            CategoricalField::Citizenship => "citizenship",
        }
    }

    /// Labels indexed by category code.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            CategoricalField::Race => Race::LABELS,
            CategoricalField::FamilyType => FamilyType::LABELS,
            CategoricalField::ReasonHomeless => ReasonHomeless::LABELS,
            CategoricalField::Employment => Employment::LABELS,
            CategoricalField::Citizenship => Citizenship::LABELS,
        }
    }

    /// Code assigned to unrecognised values; `None` when the field has no
    /// catch-all category.
    pub fn residual(self) -> Option<u8> {
        match self {
            CategoricalField::Race => Some(Race::Other.code()),
            CategoricalField::FamilyType => None,
            CategoricalField::ReasonHomeless => Some(ReasonHomeless::Other.code()),
            CategoricalField::Employment => Some(Employment::Unknown.code()),
            CategoricalField::Citizenship => Some(Citizenship::Unknown.code()),
        }
    }

    pub fn cardinality(self) -> usize {
        self.labels().len()
    }
}

impl fmt::Display for CategoricalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Map a raw category string to its code: trimmed, case-insensitive match
/// against the field's labels, otherwise the field's residual code.
pub fn canonicalize(raw: &str, field: CategoricalField) -> Result<u8, FeatureError> {
    let needle = raw.trim();
    if let Some(code) = field
        .labels()
        .iter()
        .position(|label| label.eq_ignore_ascii_case(needle))
    {
        return Ok(code as u8);
    }
    field
        .residual()
        .ok_or_else(|| FeatureError::UnmappableFamilyType(raw.to_string()))
}

/// A category enum whose discriminants are its codes.
pub trait Category: Copy + Eq + fmt::Debug + 'static {
    const FIELD: CategoricalField;
    const LABELS: &'static [&'static str];

    fn code(self) -> u8;
    fn from_code(code: u8) -> Option<Self>;

    fn label(self) -> &'static str {
        Self::LABELS[self.code() as usize]
    }

    fn canonicalize(raw: &str) -> Result<Self, FeatureError> {
        let code = canonicalize(raw, Self::FIELD)?;
        Ok(Self::from_code(code).expect("canonical code is in range"))
    }
}

macro_rules! category {
    ($name:ident, $field:expr, [$($variant:ident = $code:literal => $label:literal),+ $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum $name {
            $($variant = $code),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
        }

        impl Category for $name {
            const FIELD: CategoricalField = $field;
            const LABELS: &'static [&'static str] = &[$($label),+];

            fn code(self) -> u8 {
                self as u8
            }

            fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some($name::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

category!(Race, CategoricalField::Race, [
    White = 0 => "White",
    Black = 1 => "Black",
    Hispanic = 2 => "Hispanic",
    Other = 3 => "Other",
]);

category!(FamilyType, CategoricalField::FamilyType, [
    Single = 0 => "Single",
    AdultFamilies = 1 => "Adult Families",
    FamiliesWithChildren = 2 => "Families with Children",
]);

category!(ReasonHomeless, CategoricalField::ReasonHomeless, [
    Eviction = 0 => "Eviction",
    Discord = 1 => "Discord",
    DomesticViolence = 2 => "Domestic Violence",
    Overcrowding = 3 => "Overcrowding",
    Other = 4 => "Other",
]);

category!(Employment, CategoricalField::Employment, [
    Unemployed = 0 => "Unemployed",
    Employed = 1 => "Employed",
    Unknown = 2 => "Unknown",
]);

category!(Citizenship, CategoricalField::Citizenship, [
    Unknown = 0 => "Unknown",
    Citizen = 1 => "Citizen",
    NonResident = 2 => "Non-Resident",
    Undocumented = 3 => "Undocumented",
]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub field: CategoricalField,
    /// Index of the first one-hot column of this field.
    pub offset: usize,
    pub codes: BTreeMap<u8, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    pub name: String,
    pub column: usize,
}

/// Column layout of the design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<String>,
    pub continuous: Vec<ContinuousSpec>,
    pub categorical: Vec<CategoricalSpec>,
    pub include_income: bool,
}

impl FeatureSchema {
    pub fn new(include_income: bool) -> Self {
        let mut columns = vec!["age".to_string()];
        let mut continuous = vec![ContinuousSpec {
            name: "age".into(),
            column: 0,
        }];
        let mut categorical = Vec::new();
        for field in CategoricalField::ALL {
            let offset = columns.len();
            let mut codes = BTreeMap::new();
            for (code, label) in field.labels().iter().enumerate() {
                columns.push(format!("{}={}", field.name(), label));
                codes.insert(code as u8, label.to_string());
            }
            categorical.push(CategoricalSpec {
                field,
                offset,
                codes,
            });
        }
        if include_income {
            continuous.push(ContinuousSpec {
                name: "income".into(),
                column: columns.len(),
            });
            columns.push("income".into());
        }
        FeatureSchema {
            columns,
            continuous,
            categorical,
            include_income,
        }
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn continuous_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.continuous.iter().map(|c| c.column)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Matrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    /// Panics if `data.len() != n_rows * n_cols`.
    pub fn from_vec(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_rows * n_cols, "matrix data length");
        Matrix {
            n_rows,
            n_cols,
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            n_rows: rows.len(),
            n_cols,
            data,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row width");
        self.data.extend_from_slice(row);
        self.n_rows += 1;
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Where a design-matrix row came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowId {
    Profile(IdCombo),
    /// SMOTE sample interpolated between two rows of the input dataset.
    Synthetic { parent: usize, neighbor: usize },
}

impl RowId {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, RowId::Synthetic { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub matrix: Matrix,
    pub labels: Vec<u8>,
    pub schema: FeatureSchema,
    pub row_ids: Vec<RowId>,
}

impl EncodedDataset {
    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn select(&self, idx: &[usize]) -> EncodedDataset {
        EncodedDataset {
            matrix: self.matrix.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            schema: self.schema.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }
}

/// Handling of profiles without an age.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MissingAge {
    Reject,
    /// Impute the median age of the profiles being encoded.
    ImputeMedian,
    /// Impute a fixed value, e.g. the training-split median for a test split.
    Impute(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub dataset: EncodedDataset,
    pub dropped_missing_income: usize,
    pub imputed_age: usize,
    /// Value used for imputation, if any row needed one.
    pub age_fill: Option<f64>,
}

/// Median of the present ages, `None` when no profile has one.
pub fn median_age(profiles: &[ClientProfile]) -> Option<f64> {
    let mut ages: Vec<f64> = profiles.iter().filter_map(|p| p.age).collect();
    if ages.is_empty() {
        return None;
    }
    ages.sort_by(f64::total_cmp);
    let mid = ages.len() / 2;
    Some(if ages.len() % 2 == 1 {
        ages[mid]
    } else {
        (ages[mid - 1] + ages[mid]) / 2.0
    })
}

pub fn encode(
    profiles: &[ClientProfile],
    schema: &FeatureSchema,
    missing_age: MissingAge,
) -> Result<Encoded, FeatureError> {
    if profiles.is_empty() {
        return Err(FeatureError::NoProfiles);
    }
    let fill = match missing_age {
        MissingAge::Reject => None,
        MissingAge::Impute(v) => Some(v),
        MissingAge::ImputeMedian => median_age(profiles),
    };

    let n_cols = schema.n_cols();
    let mut matrix = Matrix::zeros(0, n_cols);
    let mut labels = Vec::with_capacity(profiles.len());
    let mut row_ids = Vec::with_capacity(profiles.len());
    let mut dropped = 0;
    let mut imputed = 0;
    let mut row = vec![0.0; n_cols];

    for p in profiles {
        if schema.include_income && p.income.is_none() {
            dropped += 1;
            continue;
        }
        row.iter_mut().for_each(|v| *v = 0.0);
        row[0] = match (p.age, missing_age, fill) {
            (Some(a), _, _) => a,
            (None, MissingAge::Reject, _) => return Err(FeatureError::MissingAge(p.id.clone())),
            (None, _, Some(f)) => {
                imputed += 1;
                f
            }
            (None, _, None) => return Err(FeatureError::NoAgesToImpute),
        };
        for spec in &schema.categorical {
            row[spec.offset + p.code_of(spec.field) as usize] = 1.0;
        }
        if schema.include_income {
            row[n_cols - 1] = p.income.expect("filtered above");
        }
        matrix.push_row(&row);
        labels.push(p.readmit);
        row_ids.push(RowId::Profile(p.id.clone()));
    }
    if labels.is_empty() {
        return Err(FeatureError::EmptyAfterFiltering);
    }
    Ok(Encoded {
        dataset: EncodedDataset {
            matrix,
            labels,
            schema: schema.clone(),
            row_ids,
        },
        dropped_missing_income: dropped,
        imputed_age: imputed,
        age_fill: if imputed > 0 { fill } else { None },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: usize,
    pub mean: f64,
    pub sd: f64,
}

impl ColumnStats {
    fn scales(&self) -> bool {
        self.sd.is_finite() && self.sd > 0.0
    }
}

/// z-score statistics for the continuous columns of a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub n_cols: usize,
    pub columns: Vec<ColumnStats>,
}

impl Standardizer {
    /// Sample mean and (n-1) standard deviation per continuous column.
    pub fn fit(data: &EncodedDataset) -> Self {
        let n = data.n_rows();
        let columns = data
            .schema
            .continuous_columns()
            .map(|column| {
                let mean = if n == 0 {
                    0.0
                } else {
                    data.matrix.rows().map(|r| r[column]).sum::<f64>() / n as f64
                };
                let sd = if n < 2 {
                    0.0
                } else {
                    let ss: f64 = data.matrix.rows().map(|r| (r[column] - mean).powi(2)).sum();
                    (ss / (n - 1) as f64).sqrt()
                };
                ColumnStats { column, mean, sd }
            })
            .collect();
        Standardizer {
            n_cols: data.n_cols(),
            columns,
        }
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for c in self.columns.iter().filter(|c| c.scales()) {
            row[c.column] = (row[c.column] - c.mean) / c.sd;
        }
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        for c in self.columns.iter().filter(|c| c.scales()) {
            row[c.column] = row[c.column] * c.sd + c.mean;
        }
    }

    fn check(&self, data: &EncodedDataset) -> Result<(), FeatureError> {
        if self.n_cols != data.n_cols() {
            return Err(FeatureError::StatsWidthMismatch {
                expected: self.n_cols,
                actual: data.n_cols(),
            });
        }
        Ok(())
    }
}

/// z-score the continuous columns, fitting statistics on `data` unless
/// `stats` is supplied. One-hot and zero-variance columns pass through.
pub fn standardize(
    data: &EncodedDataset,
    stats: Option<&Standardizer>,
) -> Result<(EncodedDataset, Standardizer), FeatureError> {
    let stats = match stats {
        Some(s) => {
            s.check(data)?;
            s.clone()
        }
        None => Standardizer::fit(data),
    };
    let mut out = data.clone();
    for i in 0..out.n_rows() {
        stats.apply_row(out.matrix.row_mut(i));
    }
    Ok((out, stats))
}

pub fn unstandardize(
    data: &EncodedDataset,
    stats: &Standardizer,
) -> Result<EncodedDataset, FeatureError> {
    stats.check(data)?;
    let mut out = data.clone();
    for i in 0..out.n_rows() {
        stats.invert_row(out.matrix.row_mut(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ClientKey, ResidenceEpisode};
    use chrono::NaiveDate;

    fn profile(age: Option<f64>, income: Option<f64>) -> ClientProfile {
        let d = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        ClientProfile {
            id: ClientKey::new("C1", "F1", "K1").unwrap().id_combo(),
            age,
            race: Race::Black,
            family_type: FamilyType::FamiliesWithChildren,
            reason_homeless: ReasonHomeless::Eviction,
            employment: Employment::Employed,
            citizenship: Citizenship::Citizen,
            income,
            episodes: vec![ResidenceEpisode {
                entry_date: d,
                exit_date: Some(d + chrono::Days::new(10)),
                exit_reason: Some("x".into()),
            }],
            total_los_days: 10,
            incident_count: 0,
            readmit: 0,
        }
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize("eviction", CategoricalField::ReasonHomeless), Ok(0));
        assert_eq!(canonicalize("EMPLOYED", CategoricalField::Employment), Ok(1));
        assert_eq!(canonicalize("martian", CategoricalField::Race), Ok(3));
        assert_eq!(canonicalize("  non-resident ", CategoricalField::Citizenship), Ok(2));
        assert_eq!(canonicalize("", CategoricalField::Citizenship), Ok(0));
        assert_eq!(
            canonicalize("commune", CategoricalField::FamilyType),
            Err(FeatureError::UnmappableFamilyType("commune".into()))
        );
    }

    #[test]
    fn every_label_round_trips() {
        let mut n = 0;
        for field in CategoricalField::ALL {
            for (code, label) in field.labels().iter().enumerate() {
                assert_eq!(canonicalize(label, field), Ok(code as u8));
                assert_eq!(field.labels()[canonicalize(label, field).unwrap() as usize], *label);
                n += 1;
            }
        }
        assert_eq!(n, 19);
        for r in Race::ALL {
            assert_eq!(Race::canonicalize(r.label()), Ok(*r));
        }
    }

    #[test]
    fn schema_layout() {
        let s = FeatureSchema::new(false);
        assert_eq!(s.n_cols(), 20);
        assert_eq!(s.columns[0], "age");
        assert_eq!(s.columns[1], "race=White");
        assert_eq!(s.columns[19], "citizenship=Undocumented");
        let s = FeatureSchema::new(true);
        assert_eq!(s.n_cols(), 21);
        assert_eq!(s.columns[20], "income");
    }

    #[test]
    fn encode_single_profile() {
        let enc = encode(&[profile(Some(30.0), None)], &FeatureSchema::new(false), MissingAge::Reject).unwrap();
        let m = &enc.dataset.matrix;
        assert_eq!((m.n_rows(), m.n_cols()), (1, 20));
        assert_eq!(m.get(0, 0), 30.0);
        let ones: Vec<usize> = (1..20).filter(|&j| m.get(0, j) == 1.0).collect();
        // race=Black, family=Families with Children, reason=Eviction, emp=Employed, cit=Citizen
        assert_eq!(ones, vec![2, 7, 8, 14, 17]);
        assert_eq!((1..20).map(|j| m.get(0, j)).sum::<f64>(), 5.0);
    }

    #[test]
    fn income_mode_drops_missing() {
        let schema = FeatureSchema::new(true);
        let enc = encode(&[profile(Some(30.0), None), profile(Some(40.0), Some(900.0))], &schema, MissingAge::Reject).unwrap();
        assert_eq!(enc.dropped_missing_income, 1);
        assert_eq!(enc.dataset.n_rows(), 1);
        assert_eq!(enc.dataset.matrix.get(0, 20), 900.0);
        assert_eq!(
            encode(&[profile(Some(30.0), None)], &schema, MissingAge::Reject),
            Err(FeatureError::EmptyAfterFiltering)
        );
    }

    #[test]
    fn identical_profiles_identical_rows() {
        let p = profile(Some(30.0), None);
        let enc = encode(&[p.clone(), p], &FeatureSchema::new(false), MissingAge::Reject).unwrap();
        assert_eq!(enc.dataset.matrix.row(0), enc.dataset.matrix.row(1));
    }

    #[test]
    fn missing_age_policies() {
        let ps = [profile(Some(20.0), None), profile(None, None), profile(Some(40.0), None)];
        let schema = FeatureSchema::new(false);
        assert!(matches!(encode(&ps, &schema, MissingAge::Reject), Err(FeatureError::MissingAge(_))));
        let enc = encode(&ps, &schema, MissingAge::ImputeMedian).unwrap();
        assert_eq!(enc.imputed_age, 1);
        assert_eq!(enc.dataset.matrix.get(1, 0), 30.0);
        let enc = encode(&ps, &schema, MissingAge::Impute(55.0)).unwrap();
        assert_eq!(enc.dataset.matrix.get(1, 0), 55.0);
        assert_eq!(encode(&ps[1..2], &schema, MissingAge::ImputeMedian), Err(FeatureError::NoAgesToImpute));
    }

    #[test]
    fn standardize_examples() {
        let ps: Vec<_> = [20.0, 30.0, 40.0].iter().map(|&a| profile(Some(a), None)).collect();
        let ds = encode(&ps, &FeatureSchema::new(false), MissingAge::Reject).unwrap().dataset;
        let (z, stats) = standardize(&ds, None).unwrap();
        assert_eq!(stats.columns[0].mean, 30.0);
        assert_eq!(stats.columns[0].sd, 10.0);
        let ages: Vec<f64> = z.matrix.rows().map(|r| r[0]).collect();
        assert_eq!(ages, vec![-1.0, 0.0, 1.0]);
        // one-hot columns untouched
        assert_eq!(z.matrix.row(0)[1..], ds.matrix.row(0)[1..]);

        let fixed = Standardizer {
            n_cols: 20,
            columns: vec![ColumnStats { column: 0, mean: 30.0, sd: 10.0 }],
        };
        let one = encode(&[profile(Some(50.0), None)], &FeatureSchema::new(false), MissingAge::Reject).unwrap().dataset;
        let (z, _) = standardize(&one, Some(&fixed)).unwrap();
        assert_eq!(z.matrix.get(0, 0), 2.0);

        let bad = Standardizer { n_cols: 21, columns: vec![] };
        assert!(matches!(standardize(&one, Some(&bad)), Err(FeatureError::StatsWidthMismatch { .. })));
    }

    #[test]
    fn constant_column_passes_through() {
        let ps: Vec<_> = (0..3).map(|_| profile(Some(33.0), None)).collect();
        let ds = encode(&ps, &FeatureSchema::new(false), MissingAge::Reject).unwrap().dataset;
        let (z, stats) = standardize(&ds, None).unwrap();
        assert_eq!(stats.columns[0].sd, 0.0);
        assert_eq!(z, ds);
    }
}
