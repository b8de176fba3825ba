//! Stratified fold assignment and SMOTE minority oversampling.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{EncodedDataset, RowId};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("class {class} has {count} rows, fewer than {n_folds} folds")]
    ClassTooSmall {
        class: u8,
        count: usize,
        n_folds: usize,
    },
    #[error("minority class has {minority} rows; SMOTE with k={k} needs at least {}", k + 1)]
    MinorityTooSmall { minority: usize, k: usize },
    #[error("invalid SMOTE ratio {0:?}: expected `original` or a number in (0, 1]")]
    InvalidRatio(String),
    #[error("SMOTE neighbour count must be at least 1")]
    InvalidK,
}

/// Target minority/majority count ratio after oversampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SmoteRatio {
    /// No oversampling.
    Original,
    Ratio(f64),
}

impl SmoteRatio {
    pub fn new(ratio: f64) -> Result<Self, ResampleError> {
        if ratio > 0.0 && ratio <= 1.0 {
            Ok(SmoteRatio::Ratio(ratio))
        } else {
            Err(ResampleError::InvalidRatio(ratio.to_string()))
        }
    }

    /// Table label: `original`, or the ratio with at least one decimal.
    pub fn label(&self) -> String {
        match self {
            SmoteRatio::Original => "original".into(),
            SmoteRatio::Ratio(r) if r.fract() == 0.0 => format!("{r:.1}"),
            SmoteRatio::Ratio(r) => r.to_string(),
        }
    }

    /// The nine ratios swept in the reference evaluation table.
    pub fn table_sweep() -> Vec<SmoteRatio> {
        std::iter::once(SmoteRatio::Original)
            .chain((3..=10).map(|t| SmoteRatio::Ratio(t as f64 / 10.0)))
            .collect()
    }
}

impl fmt::Display for SmoteRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for SmoteRatio {
    type Err = ResampleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("original") {
            return Ok(SmoteRatio::Original);
        }
        t.parse::<f64>()
            .ok()
            .and_then(|r| SmoteRatio::new(r).ok())
            .ok_or_else(|| ResampleError::InvalidRatio(s.to_string()))
    }
}

impl TryFrom<String> for SmoteRatio {
    type Error = ResampleError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SmoteRatio> for String {
    fn from(r: SmoteRatio) -> String {
        r.label()
    }
}

/// Parse a comma-separated ratio list such as `original,0.3,1.0`.
pub fn parse_ratios(list: &str) -> Result<Vec<SmoteRatio>, ResampleError> {
    list.split(',').map(str::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub ratio: SmoteRatio,
    pub k: usize,
    pub seed: u64,
}

impl SmoteConfig {
    pub fn new(ratio: SmoteRatio, seed: u64) -> Self {
        SmoteConfig { ratio, k: 5, seed }
    }
}

/// Synthetic rows needed to lift `minority` to `ratio * majority`.
pub fn synthetic_count(ratio: SmoteRatio, minority: usize, majority: usize) -> usize {
    match ratio {
        SmoteRatio::Original => 0,
        SmoteRatio::Ratio(r) => {
            // guard against products like 0.3 * 5490 landing a hair above an integer
            let target = (r * majority as f64 - 1e-9).ceil().max(0.0) as usize;
            target.saturating_sub(minority)
        }
    }
}

/// Row-to-fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Shuffle each class with a seeded RNG and deal its rows round-robin over
/// the folds. Negatives continue the deal where positives stopped so fold
/// sizes differ by at most one.
pub fn stratified_folds(labels: &[u8], n_folds: usize, seed: u64) -> Result<FoldPlan, ResampleError> {
    if n_folds < 2 {
        return Err(ResampleError::TooFewFolds(n_folds));
    }
    let mut rng = seed::rng(seed);
    let mut assignments = vec![0; labels.len()];
    let mut dealt = 0;
    for class in [1u8, 0u8] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < n_folds {
            return Err(ResampleError::ClassTooSmall {
                class,
                count: rows.len(),
                n_folds,
            });
        }
        rows.shuffle(&mut rng);
        for row in rows {
            assignments[row] = dealt % n_folds;
            dealt += 1;
        }
    }
    Ok(FoldPlan {
        n_folds,
        assignments,
        seed,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other minority rows of each minority row (positions into
/// `minority`), nearest first, ties by lower position.
fn nearest_neighbours(data: &EncodedDataset, minority: &[usize], k: usize) -> Vec<Vec<usize>> {
    minority
        .par_iter()
        .enumerate()
        .map(|(a, &row)| {
            let x = data.matrix.row(row);
            let mut d: Vec<(f64, usize)> = minority
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(b, &other)| (squared_distance(x, data.matrix.row(other)), b))
                .collect();
            let by = |l: &(f64, usize), r: &(f64, usize)| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1));
            if d.len() > k {
                d.select_nth_unstable_by(k - 1, by);
                d.truncate(k);
            }
            d.sort_by(by);
            d.into_iter().map(|(_, b)| b).collect()
        })
        .collect()
}

/// Append synthetic minority (label 1) rows until the minority/majority ratio
/// reaches `config.ratio`. Each synthetic row interpolates a minority row and
/// one of its `k` nearest minority neighbours. Original rows keep their order
/// and values; synthetic rows follow them.
pub fn smote(data: &EncodedDataset, config: &SmoteConfig) -> Result<EncodedDataset, ResampleError> {
    if config.k == 0 {
        return Err(ResampleError::InvalidK);
    }
    if matches!(config.ratio, SmoteRatio::Original) {
        return Ok(data.clone());
    }
    let minority: Vec<usize> = (0..data.n_rows()).filter(|&i| data.labels[i] == 1).collect();
    let m = minority.len();
    let majority = data.n_rows() - m;
    if m <= config.k {
        return Err(ResampleError::MinorityTooSmall {
            minority: m,
            k: config.k,
        });
    }
    let n_syn = synthetic_count(config.ratio, m, majority);
    let mut out = data.clone();
    if n_syn == 0 {
        return Ok(out);
    }

    let mut rng = seed::rng(config.seed);
    let full_rounds = n_syn / m;
    let mut remainder: Vec<usize> = index::sample(&mut rng, m, n_syn % m).into_vec();
    remainder.sort_unstable();
    let parents = (0..full_rounds)
        .flat_map(|_| 0..m)
        .chain(remainder)
        .collect::<Vec<_>>();

    let neighbours = nearest_neighbours(data, &minority, config.k);
    let n_cols = data.n_cols();
    let mut row = vec![0.0; n_cols];
    for a in parents {
        let b = neighbours[a][rng.gen_range(0..neighbours[a].len())];
        let u: f64 = rng.gen();
        let x = data.matrix.row(minority[a]);
        let y = data.matrix.row(minority[b]);
        for j in 0..n_cols {
            let (lo, hi) = if x[j] <= y[j] { (x[j], y[j]) } else { (y[j], x[j]) };
            row[j] = (x[j] + u * (y[j] - x[j])).clamp(lo, hi);
        }
        out.matrix.push_row(&row);
        out.labels.push(1);
        out.row_ids.push(RowId::Synthetic {
            parent: minority[a],
            neighbor: minority[b],
        });
    }
    Ok(out)
}
