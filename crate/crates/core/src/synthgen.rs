//! Synthetic client cohorts.
//!
//! Cohort size, readmission rate, employment rate and the ranking of the
//! top homelessness reasons follow published figures for the shelter
//! network. Everything else (race, family and citizenship mixes, the age
//! distribution, incomes, stay lengths) is a placeholder and is marked as
//! such in the spec file's `provenance` map.
//!
//! Readmission is drawn from a logistic model over three risk features
//! (unemployed, evicted, younger age) whose intercept is solved so the
//! expected positive rate matches `minority_rate`; the realized count is then
//! forced to exactly `round(n * minority_rate)`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::csv_io::{csv_writer, fmt_opt_num};
use crate::cohort::{
    total_length_of_stay, ClientKey, ClientProfile, ResidenceEpisode, DEMOGRAPHICS_HEADER,
    EXITS_HEADER, INCIDENTS_HEADER,
};
use crate::features::{Category, Citizenship, Employment, FamilyType, Race, ReasonHomeless};
use crate::models::sigmoid;
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("cannot calibrate the readmission intercept: {0}")]
    InfeasibleSpec(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub const EXIT_REASONS: [&str; 4] = [
    "48-hour curfew violation",
    "Family reunification",
    "Independent living",
    "Other",
];
pub const INCIDENT_TYPES: [&str; 4] = [
    "Verbal altercation",
    "Physical altercation",
    "Medical emergency",
    "Property damage",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeSpec {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n: usize,
    pub minority_rate: f64,
    pub employed_rate: f64,
    pub employment_unknown_rate: f64,
    /// Eviction, Discord, Domestic Violence, Overcrowding, Other.
    pub reason_weights: Vec<f64>,
    /// White, Black, Hispanic, Other.
    pub race_weights: Vec<f64>,
    /// Single, Adult Families, Families with Children.
    pub family_weights: Vec<f64>,
    /// Unknown, Citizen, Non-Resident, Undocumented.
    pub citizenship_weights: Vec<f64>,
    pub age: AgeSpec,
    pub income_missing_rate: f64,
    /// Log-odds added per unit of each risk feature.
    pub signal_strength: f64,
    pub window_start: NaiveDate,
    pub seed: u64,
    /// Where each default value comes from (`published` or `placeholder`).
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

/// The shipped default spec, also written to `spec_default.json`.
pub const DEFAULT_SPEC_JSON: &str = include_str!("../spec_default.json");

impl Default for CohortSpec {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SPEC_JSON).expect("bundled spec_default.json parses")
    }
}

fn check_weights(name: &str, w: &[f64], len: usize) -> Result<(), SynthError> {
    if w.len() != len {
        return Err(SynthError::InvalidSpec(format!("{name} needs {len} weights, got {}", w.len())));
    }
    if w.iter().any(|v| !(0.0..=1.0).contains(v)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SynthError::InvalidSpec(format!("{name} must be in [0,1] and sum to 1")));
    }
    Ok(())
}

impl CohortSpec {
    pub fn from_json(s: &str) -> Result<Self, SynthError> {
        let spec: CohortSpec =
            serde_json::from_str(s).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n < 100 {
            return Err(SynthError::InvalidSpec(format!("n must be at least 100, got {}", self.n)));
        }
        for (name, r) in [
            ("minority_rate", self.minority_rate),
            ("employed_rate", self.employed_rate),
            ("employment_unknown_rate", self.employment_unknown_rate),
            ("income_missing_rate", self.income_missing_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::InvalidSpec(format!("{name} must be in [0, 1]")));
            }
        }
        if self.employed_rate + self.employment_unknown_rate > 1.0 {
            return Err(SynthError::InvalidSpec("employment rates exceed 1".into()));
        }
        check_weights("reason_weights", &self.reason_weights, 5)?;
        check_weights("race_weights", &self.race_weights, 4)?;
        check_weights("family_weights", &self.family_weights, 3)?;
        check_weights("citizenship_weights", &self.citizenship_weights, 4)?;
        let a = &self.age;
        if !(a.sd > 0.0 && a.min < a.max && a.min >= 0.0 && a.max <= 120.0) {
            return Err(SynthError::InvalidSpec("age distribution out of range".into()));
        }
        if !self.signal_strength.is_finite() {
            return Err(SynthError::InvalidSpec("signal_strength must be finite".into()));
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        (self.n as f64 * self.minority_rate).round() as usize
    }

    /// Risk score whose log-odds weight is `signal_strength`.
    fn risk(&self, age: f64, employment: Employment, reason: ReasonHomeless) -> f64 {
        f64::from(u8::from(employment == Employment::Unemployed))
            + f64::from(u8::from(reason == ReasonHomeless::Eviction))
            + (self.age.mean - age) / self.age.sd
    }
}

fn draw<C: Category>(rng: &mut ChaCha8Rng, w: &[f64]) -> C {
    let i = WeightedIndex::new(w).expect("validated weights").sample(rng);
    C::from_code(i as u8).expect("weight index in range")
}

/// Intercept `b` with mean(sigmoid(b + s * risk)) == rate, by bisection.
fn solve_intercept(risk: &[f64], strength: f64, rate: f64) -> Result<f64, SynthError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(SynthError::InfeasibleSpec(format!("minority_rate {rate} must be strictly inside (0, 1)")));
    }
    let mean_p = |b: f64| risk.iter().map(|r| sigmoid(b + strength * r)).sum::<f64>() / risk.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    if !(mean_p(lo) < rate && mean_p(hi) > rate) {
        return Err(SynthError::InfeasibleSpec("target rate not bracketed".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    if (mean_p(b) - rate).abs() > 0.005 {
        return Err(SynthError::InfeasibleSpec("bisection did not converge".into()));
    }
    Ok(b)
}

fn plus_days(d: NaiveDate, n: u64) -> NaiveDate {
    d.checked_add_days(Days::new(n)).expect("date in range")
}

fn episodes_for(rng: &mut ChaCha8Rng, spec: &CohortSpec, count: usize) -> Vec<ResidenceEpisode> {
    let stay = Exp::<f64>::new(1.0 / 110.0).expect("rate");
    let gap = Exp::<f64>::new(1.0 / 180.0).expect("rate");
    let reasons = WeightedIndex::new([0.35, 0.25, 0.25, 0.15]).expect("weights");
    let mut entry = plus_days(spec.window_start, rng.gen_range(0..1400));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let exit = plus_days(entry, 1 + stay.sample(rng).floor() as u64);
        out.push(ResidenceEpisode {
            entry_date: entry,
            exit_date: Some(exit),
            exit_reason: Some(EXIT_REASONS[reasons.sample(rng)].to_string()),
        });
        entry = plus_days(exit, 1 + gap.sample(rng).floor() as u64);
    }
    out
}

/// Generate a cohort; profiles come out sorted by id.
pub fn generate(spec: &CohortSpec) -> Result<Vec<ClientProfile>, SynthError> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, "synth"));
    let n = spec.n;
    let unemployed = 1.0 - spec.employed_rate - spec.employment_unknown_rate;
    let employment_w = [unemployed.max(0.0), spec.employed_rate, spec.employment_unknown_rate];
    let age_dist = Normal::new(spec.age.mean, spec.age.sd).expect("validated sd");

    struct Draw {
        age: f64,
        race: Race,
        family: FamilyType,
        reason: ReasonHomeless,
        employment: Employment,
        citizenship: Citizenship,
        income: Option<f64>,
    }
    let draws: Vec<Draw> = (0..n)
        .map(|_| {
            let age = loop {
                let a = age_dist.sample(&mut rng).round();
                if (spec.age.min..=spec.age.max).contains(&a) {
                    break a;
                }
            };
            let employment: Employment = draw(&mut rng, &employment_w);
            let income = if rng.gen::<f64>() < spec.income_missing_rate {
                None
            } else {
                let (mu, sd) = if employment == Employment::Employed { (1420.0, 350.0) } else { (350.0, 250.0) };
                let v: f64 = Normal::new(mu, sd).expect("sd").sample(&mut rng);
                Some(v.max(0.0).round())
            };
            Draw {
                age,
                race: draw(&mut rng, &spec.race_weights),
                family: draw(&mut rng, &spec.family_weights),
                reason: draw(&mut rng, &spec.reason_weights),
                employment,
                citizenship: draw(&mut rng, &spec.citizenship_weights),
                income,
            }
        })
        .collect();

    let risk: Vec<f64> = draws.iter().map(|d| spec.risk(d.age, d.employment, d.reason)).collect();
    let intercept = solve_intercept(&risk, spec.signal_strength, spec.minority_rate)?;
    let p: Vec<f64> = risk.iter().map(|r| sigmoid(intercept + spec.signal_strength * r)).collect();
    let u: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let mut label: Vec<u8> = (0..n).map(|i| u8::from(u[i] < p[i])).collect();

    // Force the exact positive count by flipping the draws nearest the boundary.
    let target = spec.positives();
    let have = label.iter().filter(|&&y| y == 1).count();
    let flip_from = u8::from(have > target);
    let mut candidates: Vec<usize> = (0..n).filter(|&i| label[i] == flip_from).collect();
    candidates.sort_by(|&a, &b| (u[a] - p[a]).abs().total_cmp(&(u[b] - p[b]).abs()).then(a.cmp(&b)));
    for &i in candidates.iter().take(have.abs_diff(target)) {
        label[i] = 1 - flip_from;
    }

    let multi = WeightedIndex::new([0.7, 0.2, 0.1]).expect("weights");
    let incidents = Poisson::new(0.2).expect("rate");
    let mut profiles = Vec::with_capacity(n);
    for (i, d) in draws.into_iter().enumerate() {
        let n_episodes = if label[i] == 1 { 2 + multi.sample(&mut rng) } else { 1 };
        let episodes = episodes_for(&mut rng, spec, n_episodes);
        let incident_count = (0..n_episodes).map(|_| incidents.sample(&mut rng) as usize).sum();
        let key = ClientKey::new(&format!("C{:07}", i + 1), &format!("F{:07}", i / 2 + 1), &format!("K{:07}", i + 1))
            .expect("non-empty");
        profiles.push(ClientProfile {
            id: key.id_combo(),
            age: Some(d.age),
            race: d.race,
            family_type: d.family,
            reason_homeless: d.reason,
            employment: d.employment,
            citizenship: d.citizenship,
            income: d.income,
            total_los_days: total_length_of_stay(&episodes, spec.window_start).expect("closed episodes"),
            episodes,
            incident_count,
            readmit: label[i],
        });
    }
    profiles.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(profiles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFiles {
    pub demographics: PathBuf,
    pub exits: PathBuf,
    pub incidents: PathBuf,
}

impl RawFiles {
    pub fn in_dir(dir: &Path) -> Self {
        RawFiles {
            demographics: dir.join("demographics.csv"),
            exits: dir.join("exits.csv"),
            incidents: dir.join("incidents.csv"),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, SynthError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> SynthError + '_ {
    move |e| SynthError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Write one demographic row per episode, one exit row per closed episode and
/// `incident_count` incident rows spread over the stays, so that unifying the
/// files reproduces `cohort`.
pub fn emit_raw_files(cohort: &[ClientProfile], dir: &Path) -> Result<RawFiles, SynthError> {
    if cohort.is_empty() {
        return Err(SynthError::InvalidSpec("cannot emit an empty cohort".into()));
    }
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = RawFiles::in_dir(dir);
    let mut demo = csv_writer(create(&files.demographics)?);
    let mut exits = csv_writer(create(&files.exits)?);
    let mut incidents = csv_writer(create(&files.incidents)?);
    demo.write_record(DEMOGRAPHICS_HEADER).map_err(io_err(&files.demographics))?;
    exits.write_record(EXITS_HEADER).map_err(io_err(&files.exits))?;
    incidents.write_record(INCIDENTS_HEADER).map_err(io_err(&files.incidents))?;

    for p in cohort {
        let key = p.id.key().ok_or_else(|| SynthError::InvalidSpec(format!("malformed id {}", p.id)))?;
        let ids = [key.cares_id.as_str(), key.family_id.as_str(), key.case_id.as_str()];
        for ep in &p.episodes {
            let entry = ep.entry_date.to_string();
            let age = fmt_opt_num(p.age);
            let income = fmt_opt_num(p.income);
            let mut row: Vec<&str> = ids.to_vec();
            row.extend([
                age.as_str(),
                p.race.label(),
                p.family_type.label(),
                p.reason_homeless.label(),
                p.employment.label(),
                p.citizenship.label(),
                income.as_str(),
                entry.as_str(),
                "true",
            ]);
            demo.write_record(&row).map_err(io_err(&files.demographics))?;
            if let Some(exit) = ep.exit_date {
                let exit = exit.to_string();
                let mut row: Vec<&str> = ids.to_vec();
                row.extend([exit.as_str(), ep.exit_reason.as_deref().unwrap_or("")]);
                exits.write_record(&row).map_err(io_err(&files.exits))?;
            }
        }
        for j in 0..p.incident_count {
            let ep = &p.episodes[j % p.episodes.len()];
            let span = ep
                .exit_date
                .map_or(0, |x| (x - ep.entry_date).num_days().max(0) as u64);
            let date = plus_days(ep.entry_date, (j as u64 * 7) % (span + 1)).to_string();
            let mut row: Vec<&str> = ids.to_vec();
            row.extend([date.as_str(), INCIDENT_TYPES[j % INCIDENT_TYPES.len()]]);
            incidents.write_record(&row).map_err(io_err(&files.incidents))?;
        }
    }
    demo.flush().map_err(|e| SynthError::Io { path: files.demographics.clone(), source: e })?;
    exits.flush().map_err(|e| SynthError::Io { path: files.exits.clone(), source: e })?;
    incidents.flush().map_err(|e| SynthError::Io { path: files.incidents.clone(), source: e })?;
    Ok(files)
}
