//! Penalized logistic regression by IRLS and ridge-stabilized least squares.
//! The first design column is the intercept.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) const MAX_ITER: usize = 100;
/// Max-norm tolerance on the mean-scale penalized gradient.
pub(crate) const GRAD_TOL: f64 = 1e-8;
/// Newton decrement `g' H^-1 g / 2` below which further steps are lost in
/// the rounding of the objective (matters for raw-scale numeric features).
const DECREMENT_TOL: f64 = 1e-15;
/// Line-search slack per unit objective and √n: a mean over many rows is only
/// resolved to a few ulps per row, and rejecting steps inside that noise stalls.
const OBJECTIVE_RESOLUTION: f64 = 4.0 * f64::EPSILON;
pub(crate) const LOGISTIC_RIDGE: f64 = 1e-6;
pub(crate) const LINEAR_RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Fit {
    pub beta: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn objective(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    let n = y.len() as f64;
    let ll: f64 = eta.iter().zip(y).map(|(e, t)| t * e - softplus(*e)).sum::<f64>() / n;
    ll - 0.5 * LOGISTIC_RIDGE * beta.norm_squared()
}

/// Maximizes the mean log-likelihood minus `ridge/2 ‖β‖²`. Targets may be
/// fractional (quasi-binomial). The penalty keeps separable data finite.
pub(crate) fn logistic(x: &DMatrix<f64>, y: &[f64]) -> Result<Fit> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let mut beta = DVector::zeros(p);
    let m = mean.clamp(1e-6, 1.0 - 1e-6);
    beta[0] = (m / (1.0 - m)).ln();
    let target = DVector::from_column_slice(y);
    let mut current = objective(x, y, &beta);
    for it in 0..=MAX_ITER {
        let eta = x * &beta;
        let prob = eta.map(sigmoid);
        let grad = x.tr_mul(&(&target - &prob)) / nf - &beta * LOGISTIC_RIDGE;
        if grad.amax() < GRAD_TOL {
            return Ok(Fit {
                beta: beta.iter().copied().collect(),
                iterations: it,
            });
        }
        if it == MAX_ITER {
            break;
        }
        let weights = prob.map(|q| q * (1.0 - q));
        let mut weighted = x.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(weights.iter()) {
            row *= *w;
        }
        let hessian = x.tr_mul(&weighted) / nf + DMatrix::identity(p, p) * LOGISTIC_RIDGE;
        let step = hessian
            .cholesky()
            .ok_or(Error::NoConvergence(it))?
            .solve(&grad);
        if grad.dot(&step) / 2.0 < DECREMENT_TOL {
            return Ok(Fit {
                beta: (&beta + &step).iter().copied().collect(),
                iterations: it + 1,
            });
        }
        let slack = OBJECTIVE_RESOLUTION * nf.sqrt() * current.abs().max(1.0);
        let mut t = 1.0;
        loop {
            let candidate = &beta + &step * t;
            let value = objective(x, y, &candidate);
            if value >= current - slack || t < 1e-10 {
                beta = candidate;
                current = value;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NoConvergence(MAX_ITER))
}

/// Least squares on the normal equations with a tiny ridge.
pub(crate) fn linear(x: &DMatrix<f64>, y: &[f64]) -> Result<Fit> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let gram = x.tr_mul(x) / nf + DMatrix::identity(p, p) * LINEAR_RIDGE;
    let rhs = x.tr_mul(&DVector::from_column_slice(y)) / nf;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("singular least-squares system".into()))?
        .solve(&rhs);
    Ok(Fit {
        beta: beta.iter().copied().collect(),
        iterations: 1,
    })
}

pub(crate) fn linear_predictor(beta: &[f64], row: &[f64]) -> f64 {
    beta.iter().zip(row).map(|(b, v)| b * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[&[f64]]) -> DMatrix<f64> {
        let p = rows[0].len() + 1;
        DMatrix::from_fn(rows.len(), p, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] })
    }

    #[test]
    fn recovers_saturated_probabilities() {
        // one binary feature: fitted probabilities equal the group shares
        let mut rows = vec![];
        let mut y = vec![];
        for i in 0..100 {
            rows.push(vec![f64::from(i % 2)]);
            y.push(if i % 2 == 0 { f64::from(u8::from(i % 10 < 3)) } else { f64::from(u8::from(i % 10 < 8)) });
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = design(&refs);
        let fit = logistic(&x, &y).unwrap();
        let p0 = sigmoid(fit.beta[0]);
        let p1 = sigmoid(fit.beta[0] + fit.beta[1]);
        assert!((p0 - 0.4).abs() < 1e-4, "{p0}");
        assert!((p1 - 0.8).abs() < 1e-4, "{p1}");
    }

    #[test]
    fn separable_data_converges() {
        let xs = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let rows: Vec<[f64; 1]> = xs.iter().map(|v| [*v]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let fit = logistic(&design(&refs), &y).unwrap();
        assert!(fit.iterations <= MAX_ITER);
        assert!(fit.beta.iter().all(|b| b.is_finite()));
        assert!(fit.beta[1] > 1.0);
    }

    #[test]
    fn least_squares_exact_line() {
        let rows: Vec<[f64; 1]> = (0..10).map(|i| [f64::from(i)]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..10).map(|i| 0.5 + 0.1 * f64::from(i)).collect();
        let fit = linear(&design(&refs), &y).unwrap();
        assert!((fit.beta[0] - 0.5).abs() < 1e-6 && (fit.beta[1] - 0.1).abs() < 1e-6);
    }
}
