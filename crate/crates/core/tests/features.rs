use std::path::PathBuf;

use chrono::NaiveDate;
use readmit::cohort::{ClientKey, ClientProfile, ResidenceEpisode};
use readmit::features::{
    self, Citizenship, Employment, FamilyType, FeatureError, FeatureSchema, MissingAge, Race,
    ReasonHomeless,
};

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/schema").join(name);
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn schema_files_match_golden() {
    assert_eq!(format!("{}\n", FeatureSchema::new(false).to_json()), golden("schema.json"));
    assert_eq!(format!("{}\n", FeatureSchema::new(true).to_json()), golden("schema_income.json"));
    let parsed: FeatureSchema = serde_json::from_str(&golden("schema.json")).unwrap();
    assert_eq!(parsed, FeatureSchema::new(false));
}

fn profile(i: usize, age: Option<f64>, income: Option<f64>) -> ClientProfile {
    let d = NaiveDate::from_ymd_opt(2014, 3, 1).unwrap();
    ClientProfile {
        id: ClientKey::new(&format!("C{i}"), "F", "K").unwrap().id_combo(),
        age,
        race: Race::Hispanic,
        family_type: FamilyType::Single,
        reason_homeless: ReasonHomeless::Overcrowding,
        employment: Employment::Unknown,
        citizenship: Citizenship::Undocumented,
        income,
        episodes: vec![ResidenceEpisode { entry_date: d, exit_date: Some(d), exit_reason: None }],
        total_los_days: 0,
        incident_count: 0,
        readmit: (i % 2) as u8,
    }
}

#[test]
fn every_row_has_one_hot_per_field() {
    let profiles: Vec<_> = (0..5).map(|i| profile(i, Some(20.0 + i as f64), None)).collect();
    let enc = features::encode(&profiles, &FeatureSchema::new(false), MissingAge::Reject).unwrap();
    for row in enc.dataset.matrix.rows() {
        assert_eq!(row.len(), 20);
        assert_eq!(row[1..].iter().sum::<f64>(), 5.0);
        assert_eq!(row[3], 1.0); // race=Hispanic
        assert_eq!(row[5], 1.0); // family_type=Single
    }
}

#[test]
fn income_mode_drops_rows_without_income() {
    let profiles = vec![profile(0, Some(30.0), Some(900.0)), profile(1, Some(31.0), None)];
    let enc = features::encode(&profiles, &FeatureSchema::new(true), MissingAge::Reject).unwrap();
    assert_eq!(enc.dataset.n_rows(), 1);
    assert_eq!(enc.dropped_missing_income, 1);
    assert_eq!(enc.dataset.matrix.get(0, 20), 900.0);
    let none = vec![profile(1, Some(31.0), None)];
    assert_eq!(
        features::encode(&none, &FeatureSchema::new(true), MissingAge::Reject).unwrap_err(),
        FeatureError::EmptyAfterFiltering
    );
}

#[test]
fn missing_age_imputes_median_or_fails() {
    let profiles = vec![profile(0, Some(20.0), None), profile(1, None, None), profile(2, Some(40.0), None), profile(3, Some(50.0), None)];
    let enc = features::encode(&profiles, &FeatureSchema::new(false), MissingAge::ImputeMedian).unwrap();
    assert_eq!(enc.dataset.matrix.get(1, 0), 40.0);
    assert_eq!(enc.imputed_age, 1);
    assert!(matches!(
        features::encode(&profiles, &FeatureSchema::new(false), MissingAge::Reject),
        Err(FeatureError::MissingAge(_))
    ));
}
