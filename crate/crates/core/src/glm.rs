//! Internal IRLS fitting for logistic and Poisson GLMs.
//!
//! Canonical links only. The Hessian carries a small ridge so collinear
//! telemetry counts stay solvable; separation is detected rather than fatal.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Family {
    Logistic,
    Poisson,
}

#[derive(Clone, Debug)]
pub(crate) struct GlmFit {
    /// Intercept first, then one coefficient per design column.
    pub coef: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub separation: bool,
    #[allow(dead_code)] // read by the invariant tests
    pub log_like: f64,
    /// Log-likelihood after each IRLS step.
    #[allow(dead_code)]
    pub log_like_trace: Vec<f64>,
}

/// Hessian ridge for treatment models, per the propensity contract.
pub(crate) const PROPENSITY_RIDGE: f64 = 1e-6;
/// Numerical-only ridge for outcome and rate models.
pub(crate) const OUTCOME_RIDGE: f64 = 1e-10;
pub(crate) const GLM_MAX_ITER: usize = 100;
pub(crate) const GLM_GRAD_TOL: f64 = 1e-8;

fn mean_response(family: Family, eta: f64) -> f64 {
    match family {
        Family::Logistic => 1.0 / (1.0 + (-eta).exp()),
        Family::Poisson => eta.exp().min(1e12),
    }
}

fn log_like(family: Family, y: &[f64], mu: &DVector<f64>) -> f64 {
    match family {
        Family::Logistic => y
            .iter()
            .zip(mu.iter())
            .map(|(&yi, &m)| {
                let m = m.clamp(1e-12, 1.0 - 1e-12);
                yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
            })
            .sum(),
        // log(y!) dropped: constant in the coefficients.
        Family::Poisson => y
            .iter()
            .zip(mu.iter())
            .map(|(&yi, &m)| yi * m.max(1e-12).ln() - m)
            .sum(),
    }
}

/// Design matrix with a leading intercept column from named dataset columns.
pub(crate) fn design(d: &Dataset, covariates: &[String]) -> Result<DMatrix<f64>> {
    let n = d.n();
    let mut x = DMatrix::<f64>::zeros(n, covariates.len() + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    for (j, name) in covariates.iter().enumerate() {
        let col = d.column_by_name(name)?;
        for i in 0..n {
            x[(i, j + 1)] = col[i];
        }
    }
    Ok(x)
}

pub(crate) fn predict(x: &DMatrix<f64>, coef: &DVector<f64>, family: Family) -> DVector<f64> {
    (x * coef).map(|eta| mean_response(family, eta))
}

/// IRLS with a ridge-stabilized Hessian. Converged means the penalized
/// score's max-norm dropped below `GLM_GRAD_TOL`.
pub(crate) fn fit(x: &DMatrix<f64>, y: &[f64], family: Family, ridge: f64) -> Result<GlmFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Estimation("response length mismatch".into()));
    }
    if n <= p + 1 {
        return Err(Error::InsufficientSample(format!(
            "{n} rows for {p} coefficients"
        )));
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut coef = DVector::<f64>::zeros(p);
    coef[0] = match family {
        Family::Logistic => {
            let pb = ybar.clamp(1e-6, 1.0 - 1e-6);
            (pb / (1.0 - pb)).ln()
        }
        Family::Poisson => ybar.max(1e-6).ln(),
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut mu = predict(x, &coef, family);
    let mut trace = Vec::new();
    for iter in 1..=GLM_MAX_ITER {
        iterations = iter;
        // Working weights: mu(1-mu) for logistic, mu for Poisson.
        let w: DVector<f64> = match family {
            Family::Logistic => mu.map(|m| (m * (1.0 - m)).max(1e-10)),
            Family::Poisson => mu.map(|m| m.max(1e-10)),
        };
        let eta = x * &coef;
        // Working response z = eta + (y - mu) / w.
        let mut z = eta.clone();
        for i in 0..n {
            z[i] += (y[i] - mu[i]) / w[i];
        }
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for i in 0..n {
            let xi = x.row(i);
            for a in 0..p {
                xtwz[a] += w[i] * xi[a] * z[i];
                for b in a..p {
                    xtwx[(a, b)] += w[i] * xi[a] * xi[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
            xtwx[(a, a)] += ridge;
        }
        let chol = xtwx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateData("singular weighted design".into()))?;
        let new_coef = chol.solve(&xtwz);
        if new_coef.iter().any(|v| !v.is_finite()) {
            // Blow-up (typically separation): keep the last stabilized step.
            break;
        }
        coef = new_coef;
        mu = predict(x, &coef, family);
        trace.push(log_like(family, y, &mu));

        // Penalized score X'(y - mu) - ridge * beta.
        let mut grad_max: f64 = 0.0;
        for a in 0..p {
            let mut g = -ridge * coef[a];
            for i in 0..n {
                g += x[(i, a)] * (y[i] - mu[i]);
            }
            grad_max = if g.is_finite() { grad_max.max(g.abs()) } else { f64::INFINITY };
        }
        if grad_max < GLM_GRAD_TOL {
            converged = true;
            break;
        }
    }

    let extreme_fit = mu.iter().any(|&m| !(1e-6..=1.0 - 1e-6).contains(&m));
    let huge_coef = coef.iter().any(|c| c.abs() > 20.0);
    let separation = family == Family::Logistic && extreme_fit && (!converged || huge_coef);

    Ok(GlmFit {
        log_like: log_like(family, y, &mu),
        coef,
        converged,
        iterations,
        separation,
        log_like_trace: trace,
    })
}

/// Robust (sandwich) covariance A^-1 B A^-1 with A = X'WX and
/// B = sum of squared-residual score outer products.
pub(crate) fn sandwich_cov(
    x: &DMatrix<f64>,
    y: &[f64],
    fit: &GlmFit,
    family: Family,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    let mu = predict(x, &fit.coef, family);
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let w = match family {
            Family::Logistic => (mu[i] * (1.0 - mu[i])).max(1e-10),
            Family::Poisson => mu[i].max(1e-10),
        };
        let r = y[i] - mu[i];
        for s in 0..p {
            for t in 0..p {
                let xst = x[(i, s)] * x[(i, t)];
                a[(s, t)] += w * xst;
                b[(s, t)] += r * r * xst;
            }
        }
    }
    for s in 0..p {
        a[(s, s)] += ridge;
    }
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::DegenerateData("singular information matrix".into()))?;
    Ok(&a_inv * b * &a_inv)
}
