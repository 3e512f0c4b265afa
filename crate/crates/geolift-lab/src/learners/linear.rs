//! Ridge and penalized-logistic linear baselines.
//!
//! Both center the design (ridge) or leave the intercept unpenalized
//! (logistic), so the penalty never shrinks the level.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge regression: minimizes `||y - b0 - X b||^2 + lambda ||b||^2` with an
/// unpenalized intercept (via column centering). Returns `(b0, b)`.
pub(crate) fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<(f64, DVector<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok((y_mean, DVector::zeros(0)));
    }
    let x_means = DVector::from_fn(p, |j, _| x.column(j).sum() / n as f64);
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for a in 0..p {
        for b in a..p {
            let mut s = 0.0;
            for r in 0..n {
                s += (x[(r, a)] - x_means[a]) * (x[(r, b)] - x_means[b]);
            }
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
        gram[(a, a)] += lambda;
        let mut s = 0.0;
        for r in 0..n {
            s += (x[(r, a)] - x_means[a]) * (y[r] - y_mean);
        }
        rhs[a] = s;
    }
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Numerical("ridge normal equations are singular; increase ridge_lambda".into())
    })?;
    let coefs = chol.solve(&rhs);
    let intercept = y_mean - x_means.dot(&coefs);
    Ok((intercept, coefs))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Penalized logistic regression by iteratively reweighted least squares,
/// ridge penalty `lambda` on the slopes only. Returns `(b0, b)`.
/// The caller must have screened out single-class targets.
pub(crate) fn fit_logistic(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<(f64, DVector<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    let mut beta = DVector::<f64>::zeros(p + 1); // [intercept, slopes]
    let eta_of = |beta: &DVector<f64>, r: usize| -> f64 {
        let mut e = beta[0];
        for j in 0..p {
            e += beta[j + 1] * x[(r, j)];
        }
        e.clamp(-30.0, 30.0)
    };
    for _ in 0..100 {
        let mut hessian = DMatrix::zeros(p + 1, p + 1);
        let mut gradient = DVector::zeros(p + 1);
        for r in 0..n {
            let pr = sigmoid(eta_of(&beta, r));
            let w = (pr * (1.0 - pr)).max(1e-10);
            let resid = y[r] - pr;
            for a in 0..=p {
                let xa = if a == 0 { 1.0 } else { x[(r, a - 1)] };
                gradient[a] += xa * resid;
                for b in a..=p {
                    let xb = if b == 0 { 1.0 } else { x[(r, b - 1)] };
                    hessian[(a, b)] += w * xa * xb;
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                hessian[(a, b)] = hessian[(b, a)];
            }
        }
        for j in 1..=p {
            hessian[(j, j)] += lambda;
            gradient[j] -= lambda * beta[j];
        }
        let chol = Cholesky::new(hessian).ok_or_else(|| {
            Error::Numerical("logistic IRLS step is singular; increase ridge_lambda".into())
        })?;
        let step = chol.solve(&gradient);
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let slopes = DVector::from_fn(p, |j, _| beta[j + 1]);
    Ok((beta[0], slopes))
}
