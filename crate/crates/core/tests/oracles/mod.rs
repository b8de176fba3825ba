//! Slow, obviously-correct reference implementations used to check the
//! library. None of them share code with the crate beyond plain data types.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Penalized log-likelihood with `beta[0]` as the unpenalized intercept.
pub fn objective(x: &[Vec<f64>], y: &[u8], beta: &[f64], ridge: f64) -> f64 {
    let mut ll = 0.0;
    for (row, &yi) in x.iter().zip(y) {
        let mut z = beta[0];
        for j in 0..row.len() {
            z += beta[j + 1] * row[j];
        }
        ll += f64::from(yi) * z - log1pexp(z);
    }
    ll - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Ridge logistic regression by cyclic one-coordinate Newton steps with
/// backtracking, run until no coefficient moves by more than 1e-13.
pub fn logistic_coordinate_newton(x: &[Vec<f64>], y: &[u8], ridge: f64) -> Vec<f64> {
    let d = x[0].len();
    let mut beta = vec![0.0; d + 1];
    let feature = |row: &Vec<f64>, j: usize| if j == 0 { 1.0 } else { row[j - 1] };
    for _sweep in 0..200_000 {
        let mut biggest: f64 = 0.0;
        for j in 0..=d {
            let mut g = 0.0;
            let mut h = 0.0;
            for (row, &yi) in x.iter().zip(y) {
                let mut z = beta[0];
                for k in 0..d {
                    z += beta[k + 1] * row[k];
                }
                let p = logistic(z);
                let v = feature(row, j);
                g += (f64::from(yi) - p) * v;
                h += p * (1.0 - p) * v * v;
            }
            if j > 0 {
                g -= ridge * beta[j];
                h += ridge;
            }
            let before = objective(x, y, &beta, ridge);
            let mut step = g / h.max(1e-300);
            let old = beta[j];
            loop {
                beta[j] = old + step;
                if objective(x, y, &beta, ridge) >= before - 1e-15 * before.abs() || step.abs() < 1e-16 {
                    break;
                }
                step *= 0.5;
            }
            biggest = biggest.max((beta[j] - old).abs());
        }
        if biggest < 1e-13 {
            break;
        }
    }
    beta
}

/// Random non-degenerate logistic data: `n` rows, `d` standard-normal-ish
/// features, labels drawn from a moderate true model.
pub fn logistic_dataset(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut r = rng(seed);
    loop {
        let w: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0) + r.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<u8> = x
            .iter()
            .map(|row| {
                let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                u8::from(r.gen::<f64>() < logistic(z))
            })
            .collect();
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos >= 5 && pos <= n - 5 {
            return (x, y);
        }
    }
}

/// Area under the ROC curve as P(score+ > score-) + P(tie)/2 over all pairs.
pub fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..labels.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..labels.len() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// (fpr, tpr) of the rule `score >= t`, counted directly.
pub fn rates_at(labels: &[u8], scores: &[f64], t: f64) -> (f64, f64) {
    let pos = labels.iter().filter(|&&v| v == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let tp = labels.iter().zip(scores).filter(|(&l, &s)| l == 1 && s >= t).count() as f64;
    let fp = labels.iter().zip(scores).filter(|(&l, &s)| l == 0 && s >= t).count() as f64;
    (fp / neg, tp / pos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stump {
    /// `None` when no split lowers the squared error.
    pub split: Option<(usize, f64)>,
    pub base_score: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    pub fn predict(&self, row: &[f64], learning_rate: f64) -> f64 {
        let leaf = match self.split {
            Some((f, t)) if row[f] > t => self.right,
            _ => self.left,
        };
        logistic(self.base_score + learning_rate * leaf)
    }
}

fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// One boosting round with a depth-one tree, found by trying every feature
/// and every midpoint between consecutive distinct values. Among splits whose
/// squared error is within `1e-9` of the best, the lowest feature and then
/// the lowest threshold wins.
pub fn exhaustive_stump(x: &[Vec<f64>], y: &[u8]) -> Stump {
    let n = y.len() as f64;
    let prevalence = y.iter().filter(|&&v| v == 1).count() as f64 / n;
    let base_score = (prevalence / (1.0 - prevalence)).ln();
    let p0 = logistic(base_score);
    let r: Vec<f64> = y.iter().map(|&v| f64::from(v) - p0).collect();
    let h = p0 * (1.0 - p0);
    let leaf = |idx: &[usize]| {
        let s: f64 = idx.iter().map(|&i| r[i]).sum();
        (s / (h * idx.len() as f64).max(1e-12)).clamp(-10.0, 10.0)
    };
    let all: Vec<usize> = (0..r.len()).collect();
    let parent = sse(&r);
    let tol = 1e-9 * (r.iter().map(|v| v * v).sum::<f64>() + f64::MIN_POSITIVE);

    let mut candidates = Vec::new();
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = x.iter().map(|row| row[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, rr): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
            let lv: Vec<f64> = l.iter().map(|&i| r[i]).collect();
            let rv: Vec<f64> = rr.iter().map(|&i| r[i]).collect();
            candidates.push((sse(&lv) + sse(&rv), f, t, l, rr));
        }
    }
    let best = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    if !(best < parent - tol) {
        let v = leaf(&all);
        return Stump { split: None, base_score, left: v, right: v };
    }
    let (_, f, t, l, rr) = candidates.into_iter().find(|c| c.0 <= best + tol).expect("a best candidate");
    Stump {
        split: Some((f, t)),
        base_score,
        left: leaf(&l),
        right: leaf(&rr),
    }
}
