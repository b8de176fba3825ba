use serde::{Deserialize, Serialize};

use super::{check_training, sigmoid, softplus, LogisticParams, ModelError};
use crate::features::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub n_iter: usize,
}

impl LogisticModel {
    fn margin(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }
}

/// Ridge-penalized Bernoulli log-likelihood at `(intercept, weights)`.
pub fn penalized_log_likelihood(x: &Matrix, y: &[u8], intercept: f64, weights: &[f64], ridge: f64) -> f64 {
    let ll: f64 = x
        .rows()
        .zip(y)
        .map(|(row, &yi)| {
            let z = intercept + weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
            f64::from(yi) * z - softplus(z)
        })
        .sum();
    ll - 0.5 * ridge * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`penalized_log_likelihood`]; element 0 is the intercept.
pub fn penalized_gradient(x: &Matrix, y: &[u8], intercept: f64, weights: &[f64], ridge: f64) -> Vec<f64> {
    let d = weights.len();
    let mut g = vec![0.0; d + 1];
    for (row, &yi) in x.rows().zip(y) {
        let z = intercept + weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
        let r = f64::from(yi) - sigmoid(z);
        g[0] += r;
        for j in 0..d {
            g[j + 1] += r * row[j];
        }
    }
    for j in 0..d {
        g[j + 1] -= ridge * weights[j];
    }
    g
}

/// Solve `a x = b` for symmetric positive definite `a` (row-major, n x n).
/// Adds diagonal jitter if the factorization breaks down.
fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(1.0);
    let mut jitter = 0.0;
    for _ in 0..8 {
        if let Some(l) = cholesky(a, n, jitter) {
            // forward then backward substitution
            let mut z = b.to_vec();
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[i * n + k] * z[k]).sum();
                z[i] = (z[i] - s) / l[i * n + i];
            }
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|k| l[k * n + i] * z[k]).sum();
                z[i] = (z[i] - s) / l[i * n + i];
            }
            return Some(z);
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 100.0 };
    }
    None
}

fn cholesky(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] + jitter - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Newton-Raphson (IRLS) maximization of the ridge-penalized log-likelihood,
/// with step halving whenever a full step would lower the objective.
/// Converged once the largest coefficient change drops below `tol`.
pub fn fit_logistic(x: &Matrix, y: &[u8], params: &LogisticParams) -> Result<LogisticModel, ModelError> {
    check_training(x, y)?;
    let d = x.n_cols();
    let n = d + 1;
    let ridge = params.ridge;
    let mut beta = vec![0.0; n];
    let mut objective = penalized_log_likelihood(x, y, 0.0, &beta[1..], ridge);
    let mut converged = false;
    let mut n_iter = 0;

    let mut hess = vec![0.0; n * n];
    let mut grad = vec![0.0; n];
    let mut xt = vec![0.0; n];
    while n_iter < params.max_iter {
        n_iter += 1;
        hess.iter_mut().for_each(|v| *v = 0.0);
        grad.iter_mut().for_each(|v| *v = 0.0);
        for (row, &yi) in x.rows().zip(y) {
            xt[0] = 1.0;
            xt[1..].copy_from_slice(row);
            let z: f64 = xt.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = sigmoid(z);
            let w = p * (1.0 - p);
            let r = f64::from(yi) - p;
            for i in 0..n {
                grad[i] += r * xt[i];
                let wi = w * xt[i];
                if wi != 0.0 {
                    for j in 0..=i {
                        hess[i * n + j] += wi * xt[j];
                    }
                }
            }
        }
        for i in 1..n {
            grad[i] -= ridge * beta[i];
            hess[i * n + i] += ridge;
        }
        for i in 0..n {
            for j in 0..i {
                hess[j * n + i] = hess[i * n + j];
            }
        }
        let step = solve_spd(&hess, &grad, n).ok_or(ModelError::Diverged)?;

        let mut t = 1.0;
        let mut candidate = beta.clone();
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                candidate[i] = beta[i] + t * step[i];
            }
            let obj = penalized_log_likelihood(x, y, candidate[0], &candidate[1..], ridge);
            if obj.is_finite() && obj >= objective - 1e-12 * objective.abs() {
                objective = obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let change = (0..n).map(|i| (t * step[i]).abs()).fold(0.0, f64::max);
        if accepted {
            beta.copy_from_slice(&candidate);
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(ModelError::Diverged);
        }
        if change < params.tol || !accepted {
            converged = accepted;
            break;
        }
    }
    Ok(LogisticModel {
        intercept: beta[0],
        weights: beta[1..].to_vec(),
        converged,
        n_iter,
    })
}

pub fn predict_proba_logistic(model: &LogisticModel, x: &Matrix) -> Result<Vec<f64>, ModelError> {
    if x.n_cols() != model.weights.len() {
        return Err(ModelError::WidthMismatch {
            expected: model.weights.len(),
            actual: x.n_cols(),
        });
    }
    Ok(x.rows().map(|r| sigmoid(model.margin(r))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_pair() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0]]);
        let m = fit_logistic(&x, &[1, 0], &LogisticParams::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        let p = predict_proba_logistic(&m, &x).unwrap();
        assert!(p[0] > 0.99, "p = {}", p[0]);
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0]]);
        assert_eq!(fit_logistic(&x, &[0, 0], &LogisticParams::default()), Err(ModelError::SingleClass));
    }

    #[test]
    fn prediction_examples() {
        let x = Matrix::from_rows(&[vec![3.0, -2.0]]);
        let zero = LogisticModel { weights: vec![0.0, 0.0], intercept: 0.0, converged: true, n_iter: 0 };
        assert_eq!(predict_proba_logistic(&zero, &x).unwrap(), vec![0.5]);
        let sat = LogisticModel { intercept: 20.0, ..zero.clone() };
        assert!(predict_proba_logistic(&sat, &x).unwrap()[0] > 0.999);
        let narrow = Matrix::from_rows(&[vec![1.0]]);
        assert_eq!(
            predict_proba_logistic(&zero, &narrow),
            Err(ModelError::WidthMismatch { expected: 2, actual: 1 })
        );
    }

    #[test]
    fn cholesky_solves() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = solve_spd(&a, &[2.0, 1.0], 2).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
    }
}
