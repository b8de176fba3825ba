//! Metrics, ROC curves, pooled cross-validation and the SMOTE ratio sweep.
//!
//! Cross-validation pools out-of-fold probabilities over every input profile,
//! so a single confusion matrix and AUC describe the whole cohort. Scaling
//! statistics, age imputation and SMOTE only ever see training folds.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::ClientProfile;
use crate::features::{self, FeatureError, FeatureSchema, MissingAge};
use crate::models::{Model, ModelError, ModelKind, TrainConfig};
use crate::resample::{self, ResampleError, SmoteConfig, SmoteRatio};
use crate::seed;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("no positive rows")]
    NoPositives,
    #[error("empty confusion matrix")]
    EmptyMatrix,
    #[error("ROC curve needs both classes")]
    SingleClass,
    #[error("no SMOTE ratios given")]
    NoRatios,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }
}

fn check_lengths(labels: &[u8], scores: &[f64]) -> Result<(), EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    Ok(())
}

/// Tally predictions; a row is predicted positive when `p >= threshold`.
pub fn confusion(labels: &[u8], probabilities: &[f64], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    check_lengths(labels, probabilities)?;
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(probabilities) {
        if !(0.0..=1.0).contains(&p) {
            return Err(EvalError::InvalidProbability(p));
        }
        match (y == 1, p >= threshold) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Recall of the positive class.
pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.positives() == 0 {
        return Err(EvalError::NoPositives);
    }
    Ok(cm.tp as f64 / cm.positives() as f64)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    Ok((cm.tp + cm.tn) as f64 / cm.total() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Plot data: header `fpr,tpr,threshold`, one point per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "fpr,tpr,threshold")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
        }
        Ok(())
    }
}

/// ROC curve over the distinct scores in descending order, starting from an
/// infinite threshold at (0, 0).
pub fn roc_curve(labels: &[u8], scores: &[f64]) -> Result<RocCurve, EvalError> {
    check_lengths(labels, scores)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) * 0.5)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeHandling {
    Reject,
    /// Fill missing ages with the training-fold median.
    ImputeMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub model: ModelKind,
    pub smote: SmoteConfig,
    pub train: TrainConfig,
    pub folds: usize,
    /// Seed of the fold assignment.
    pub seed: u64,
    pub include_income: bool,
    pub missing_age: AgeHandling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub fold: usize,
    pub n_train: usize,
    pub n_synthetic: usize,
    pub n_test: usize,
    pub test_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub confusion: ConfusionMatrix,
    pub auc: f64,
    pub roc: RocCurve,
    /// Out-of-fold probability for every evaluated profile, in input order.
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
    pub folds: Vec<FoldTrace>,
    pub dropped_missing_income: usize,
}

fn run_fold(
    profiles: &[ClientProfile],
    train_idx: &[usize],
    test_idx: &[usize],
    schema: &FeatureSchema,
    config: &CvConfig,
    smote_seed: u64,
) -> Result<(Vec<f64>, usize), EvalError> {
    let train: Vec<ClientProfile> = train_idx.iter().map(|&i| profiles[i].clone()).collect();
    let test: Vec<ClientProfile> = test_idx.iter().map(|&i| profiles[i].clone()).collect();
    let policy = match config.missing_age {
        AgeHandling::Reject => MissingAge::Reject,
        AgeHandling::ImputeMedian => features::median_age(&train)
            .map(MissingAge::Impute)
            .unwrap_or(MissingAge::ImputeMedian),
    };
    let train_ds = features::encode(&train, schema, policy)?.dataset;
    let test_ds = features::encode(&test, schema, policy)?.dataset;
    let (train_ds, stats) = features::standardize(&train_ds, None)?;
    let (test_ds, _) = features::standardize(&test_ds, Some(&stats))?;
    let smote_cfg = SmoteConfig {
        seed: smote_seed,
        ..config.smote
    };
    let augmented = resample::smote(&train_ds, &smote_cfg)?;
    let n_syn = augmented.n_rows() - train_ds.n_rows();
    let model = Model::fit(config.model, &augmented.matrix, &augmented.labels, &config.train)?;
    Ok((model.predict_proba(&test_ds.matrix)?, n_syn))
}

/// Stratified k-fold evaluation with pooled out-of-fold predictions.
pub fn cv_evaluate(profiles: &[ClientProfile], config: &CvConfig) -> Result<CvResult, EvalError> {
    let schema = FeatureSchema::new(config.include_income);
    let kept: Vec<ClientProfile>;
    let (profiles, dropped) = if config.include_income {
        kept = profiles.iter().filter(|p| p.income.is_some()).cloned().collect();
        (&kept[..], profiles.len() - kept.len())
    } else {
        (profiles, 0)
    };
    if profiles.is_empty() {
        return Err(FeatureError::EmptyAfterFiltering.into());
    }
    let labels: Vec<u8> = profiles.iter().map(|p| p.readmit).collect();
    let plan = resample::stratified_folds(&labels, config.folds, seed::derive(config.seed, "folds"))?;

    let per_fold: Vec<_> = (0..plan.n_folds)
        .into_par_iter()
        .map(|fold| {
            let train_idx = plan.train_indices(fold);
            let test_idx = plan.test_indices(fold);
            let smote_seed = seed::derive_indexed(config.smote.seed, "smote", fold);
            run_fold(profiles, &train_idx, &test_idx, &schema, config, smote_seed)
                .map(|(p, n_syn)| (fold, train_idx.len(), test_idx, p, n_syn))
        })
        .collect::<Result<_, _>>()?;

    let mut probabilities = vec![f64::NAN; profiles.len()];
    let mut folds = Vec::with_capacity(per_fold.len());
    for (fold, n_train, test_idx, probs, n_synthetic) in per_fold {
        for (&i, p) in test_idx.iter().zip(probs) {
            probabilities[i] = p;
        }
        folds.push(FoldTrace {
            fold,
            n_train,
            n_synthetic,
            n_test: test_idx.len(),
            test_positives: test_idx.iter().filter(|&&i| labels[i] == 1).count(),
        });
    }
    debug_assert!(probabilities.iter().all(|p| p.is_finite()));
    let confusion = confusion(&labels, &probabilities, DEFAULT_THRESHOLD)?;
    let roc = roc_curve(&labels, &probabilities)?;
    Ok(CvResult {
        confusion,
        auc: auc(&roc),
        roc,
        probabilities,
        labels,
        folds,
        dropped_missing_income: dropped,
    })
}

/// One column of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: String,
    pub accuracy: f64,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
    pub auc: f64,
    pub sensitivity: f64,
}

impl SweepRow {
    pub fn from_result(ratio: &SmoteRatio, result: &CvResult) -> Result<Self, EvalError> {
        let cm = result.confusion;
        Ok(SweepRow {
            ratio: ratio.label(),
            accuracy: accuracy(&cm)?,
            tp: cm.tp,
            fn_: cm.fn_,
            fp: cm.fp,
            tn: cm.tn,
            auc: result.auc,
            sensitivity: sensitivity(&cm)?,
        })
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        ConfusionMatrix::new(self.tp, self.fn_, self.fp, self.tn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Aligned text table: one column per ratio, one line per metric.
    pub fn render_table(&self) -> String {
        let mut lines: Vec<(String, Vec<String>)> = vec![("SMOTE Ratio".into(), vec![])];
        let metric_rows: [(&str, fn(&SweepRow) -> String); 7] = [
            ("Accuracy", |r| format!("{:.2}", r.accuracy)),
            ("True Positives", |r| r.tp.to_string()),
            ("False Negatives", |r| r.fn_.to_string()),
            ("False Positives", |r| r.fp.to_string()),
            ("True Negatives", |r| r.tn.to_string()),
            ("AUC", |r| format!("{:.2}", r.auc)),
            ("Sensitivity", |r| format!("{:.3}", r.sensitivity)),
        ];
        for row in &self.rows {
            let label = if row.ratio == "original" { "Original".to_string() } else { row.ratio.clone() };
            lines[0].1.push(label);
        }
        for (name, f) in metric_rows {
            lines.push((name.to_string(), self.rows.iter().map(f).collect()));
        }
        let head_w = lines.iter().map(|(h, _)| h.len()).max().unwrap_or(0);
        let col_w: Vec<usize> = (0..self.rows.len())
            .map(|c| lines.iter().map(|(_, v)| v[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, (head, cells)) in lines.iter().enumerate() {
            let _ = write!(out, "{head:<head_w$}");
            for (cell, w) in cells.iter().zip(&col_w) {
                let _ = write!(out, " | {cell:>w$}");
            }
            out.push('\n');
            if i == 0 {
                let width = head_w + col_w.iter().map(|w| w + 3).sum::<usize>();
                out.push_str(&"-".repeat(width));
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: ModelKind,
    pub ratios: Vec<SmoteRatio>,
    pub folds: usize,
    pub seed: u64,
    pub k: usize,
    pub include_income: bool,
    pub missing_age: AgeHandling,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model: ModelKind::Gbm,
            ratios: SmoteRatio::table_sweep(),
            folds: 5,
            seed: 0,
            k: 5,
            include_income: false,
            missing_age: AgeHandling::ImputeMedian,
            train: TrainConfig::default(),
        }
    }
}

impl SweepConfig {
    /// Cross-validation settings for the `index`-th ratio. Folds are shared
    /// by every ratio; SMOTE draws get a per-ratio seed.
    pub fn cv_config(&self, index: usize) -> CvConfig {
        CvConfig {
            model: self.model,
            smote: SmoteConfig {
                ratio: self.ratios[index],
                k: self.k,
                seed: seed::derive_indexed(self.seed, "smote", index),
            },
            train: TrainConfig {
                seed: seed::derive(self.seed, "train"),
                ..self.train
            },
            folds: self.folds,
            seed: self.seed,
            include_income: self.include_income,
            missing_age: self.missing_age,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub report: SweepReport,
    /// Pooled ROC curve per ratio, labelled like the report rows.
    pub curves: Vec<(String, RocCurve)>,
    pub results: Vec<CvResult>,
}

/// Run one pooled cross-validation per ratio, rows in the order given.
pub fn sweep(profiles: &[ClientProfile], config: &SweepConfig) -> Result<SweepOutcome, EvalError> {
    if config.ratios.is_empty() {
        return Err(EvalError::NoRatios);
    }
    let results: Vec<CvResult> = (0..config.ratios.len())
        .into_par_iter()
        .map(|i| cv_evaluate(profiles, &config.cv_config(i)))
        .collect::<Result<_, _>>()?;
    let rows = config
        .ratios
        .iter()
        .zip(&results)
        .map(|(r, res)| SweepRow::from_result(r, res))
        .collect::<Result<_, _>>()?;
    let curves = config
        .ratios
        .iter()
        .zip(&results)
        .map(|(r, res)| (r.label(), res.roc.clone()))
        .collect();
    Ok(SweepOutcome {
        report: SweepReport { rows },
        curves,
        results,
    })
}

/// `report.json`: provenance plus the sweep rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool: String,
    pub seed: u64,
    pub config: SweepConfig,
    pub n_profiles: usize,
    pub rows: Vec<SweepRow>,
}
