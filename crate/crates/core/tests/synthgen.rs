use std::fs::File;
use std::path::Path;

use readmit::cohort::{self, ClientProfile};
use readmit::eval::{cv_evaluate, AgeHandling, CvConfig};
use readmit::features::{Category, Employment, ReasonHomeless};
use readmit::models::{ModelKind, TrainConfig};
use readmit::resample::{SmoteConfig, SmoteRatio};
use readmit::synthgen::{emit_raw_files, generate, CohortSpec};

fn unify_dir(dir: &Path) -> cohort::Unified {
    let open = |n: &str| File::open(dir.join(n)).unwrap();
    let demo = cohort::read_demographics(open("demographics.csv"), "demographics.csv").unwrap();
    let exits = cohort::read_exits(open("exits.csv"), "exits.csv").unwrap();
    let incidents = cohort::read_incidents(open("incidents.csv"), "incidents.csv").unwrap();
    let as_of = cohort::latest_date(&demo, &exits, &incidents).unwrap();
    cohort::unify(&demo, &exits, &incidents, as_of).unwrap()
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn default_cohort_round_trips_through_raw_files() {
    let spec = CohortSpec::default();
    let cohort = generate(&spec).unwrap();
    assert_eq!(cohort.len(), 6779);
    let dir = tempfile::tempdir().unwrap();
    emit_raw_files(&cohort, dir.path()).unwrap();
    let unified = unify_dir(dir.path());
    assert_eq!(unified.removed, 0);
    assert!(unified.warnings.is_empty(), "{:?}", &unified.warnings[..3]);
    assert_eq!(unified.profiles, cohort);
}

#[test]
fn emitted_rows_follow_episodes() {
    let cohort = generate(&CohortSpec { n: 200, ..CohortSpec::default() }).unwrap();
    let single = cohort.iter().find(|p| p.readmit == 0).unwrap().clone();
    let multi = cohort.iter().find(|p| p.episodes.len() == 2).unwrap().clone();
    for (p, rows) in [(single, 1), (multi, 2)] {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_raw_files(std::slice::from_ref(&p), dir.path()).unwrap();
        assert_eq!(line_count(&files.demographics), rows);
        assert_eq!(line_count(&files.exits), rows);
        assert_eq!(line_count(&files.incidents), p.incident_count);
        assert_eq!(unify_dir(dir.path()).profiles, vec![p]);
    }
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_raw_files(&[], dir.path()).is_err());
}

#[test]
fn marginals_match_the_spec() {
    let spec = CohortSpec::default();
    for seed in 0..3 {
        let cohort = generate(&CohortSpec { seed, ..spec.clone() }).unwrap();
        let n = cohort.len() as f64;
        let share = |f: &dyn Fn(&ClientProfile) -> bool| cohort.iter().filter(|p| f(p)).count() as f64 / n;
        assert_eq!(cohort.iter().filter(|p| p.readmit == 1).count(), 1288);
        assert!((share(&|p| p.employment == Employment::Employed) - spec.employed_rate).abs() < 0.02);
        for &reason in ReasonHomeless::ALL.iter() {
            let w = spec.reason_weights[reason.code() as usize];
            assert!((share(&|p| p.reason_homeless == reason) - w).abs() < 0.02, "{reason:?}");
        }
        let mean_age = cohort.iter().map(|p| p.age.unwrap()).sum::<f64>() / n;
        // mean of N(35, 12) truncated to [18, 85] is about 36.9
        assert!((mean_age - 36.9).abs() < 0.6, "{mean_age}");
    }
}

fn pooled_auc(signal: f64, seed: u64) -> f64 {
    let cohort = generate(&CohortSpec { signal_strength: signal, seed, ..CohortSpec::default() }).unwrap();
    let config = CvConfig {
        model: ModelKind::Gbm,
        smote: SmoteConfig::new(SmoteRatio::Original, seed),
        train: TrainConfig::default(),
        folds: 5,
        seed,
        include_income: false,
        missing_age: AgeHandling::ImputeMedian,
    };
    cv_evaluate(&cohort, &config).unwrap().auc
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn null_signal_gives_chance_auc() {
    for seed in 0..5 {
        let a = pooled_auc(0.0, seed);
        assert!((0.47..=0.53).contains(&a), "seed {seed}: {a}");
    }
}

#[test]
fn auc_grows_with_signal_strength() {
    let medians: Vec<f64> = [0.0, 0.4, 0.8, 1.6]
        .iter()
        .map(|&s| median((0..3).map(|seed| pooled_auc(s, seed)).collect()))
        .collect();
    for w in medians.windows(2) {
        assert!(w[0] <= w[1], "{medians:?}");
    }
}
