//! Positivity diagnostics: propensity estimation, common-support trimming,
//! standardized mean differences, and effective sample size.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{self, Family};

/// Fitted logistic treatment model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Covariate names in design order (intercept excluded).
    pub covariates: Vec<String>,
    /// Intercept first, then one coefficient per covariate.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Perfect or near-perfect separation was detected; coefficients come
    /// from the last ridge-stabilized step.
    pub separation: bool,
}

impl PropensityModel {
    /// Propensity scores for every row of `d`.
    pub fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        let x = glm::design(d, &self.covariates)?;
        let coef = nalgebra::DVector::from_column_slice(&self.coefficients);
        Ok(glm::predict(&x, &coef, Family::Logistic).iter().copied().collect())
    }
}

/// Fit T ~ adjustment by IRLS. An empty adjustment set gives the
/// intercept-only model e(x) = mean(T).
pub fn fit_propensity(d: &Dataset, adjustment: &[String]) -> Result<PropensityModel> {
    let t = d.column(d.treatment_index()).to_vec();
    let x = glm::design(d, adjustment)?;
    let fit = glm::fit(&x, &t, Family::Logistic, glm::PROPENSITY_RIDGE)?;
    Ok(PropensityModel {
        covariates: adjustment.to_vec(),
        coefficients: fit.coef.iter().copied().collect(),
        converged: fit.converged,
        iterations: fit.iterations,
        separation: fit.separation,
    })
}

/// Support interval and exclusion counts from common-support trimming.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrimSummary {
    pub ps_range_treated: (f64, f64),
    pub ps_range_control: (f64, f64),
    pub common_support: (f64, f64),
    pub n_before: usize,
    pub n_after: usize,
    pub excluded_treated: usize,
    pub excluded_control: usize,
}

/// Drop rows whose propensity falls outside the closed common-support
/// interval [max of group minima, min of group maxima]. Disjoint group
/// ranges are a positivity violation.
pub fn trim_common_support(d: &Dataset, m: &PropensityModel) -> Result<(Dataset, TrimSummary)> {
    let e = m.predict(d)?;
    let t = d.column(d.treatment_index());
    let mut t_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut c_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut any_t = false;
    let mut any_c = false;
    for i in 0..d.n() {
        if t[i] == 1.0 {
            any_t = true;
            t_range = (t_range.0.min(e[i]), t_range.1.max(e[i]));
        } else {
            any_c = true;
            c_range = (c_range.0.min(e[i]), c_range.1.max(e[i]));
        }
    }
    if !any_t || !any_c {
        return Err(Error::Positivity("a treatment group is empty".into()));
    }
    let lo = t_range.0.max(c_range.0);
    let hi = t_range.1.min(c_range.1);
    if lo > hi {
        return Err(Error::Positivity(format!(
            "common support is empty: treated in [{}, {}], control in [{}, {}]",
            t_range.0, t_range.1, c_range.0, c_range.1
        )));
    }
    let mut kept = Vec::with_capacity(d.n());
    let mut excluded_treated = 0usize;
    let mut excluded_control = 0usize;
    for i in 0..d.n() {
        if e[i] >= lo && e[i] <= hi {
            kept.push(i);
        } else if t[i] == 1.0 {
            excluded_treated += 1;
        } else {
            excluded_control += 1;
        }
    }
    if kept.is_empty() {
        return Err(Error::Positivity("no rows remain inside common support".into()));
    }
    let trimmed = d.select_rows(&kept);
    let summary = TrimSummary {
        ps_range_treated: t_range,
        ps_range_control: c_range,
        common_support: (lo, hi),
        n_before: d.n(),
        n_after: kept.len(),
        excluded_treated,
        excluded_control,
    };
    Ok((trimmed, summary))
}

/// Standardized mean difference of one covariate between treatment groups:
/// (mean_t - mean_c) / sqrt((var_t + var_c) / 2). Means are weighted when
/// weights are supplied; the pooled-SD denominator always uses unweighted
/// sample variances. `None` when the pooled variance is zero.
pub fn smd(d: &Dataset, covariate: &str, weights: Option<&[f64]>) -> Result<Option<f64>> {
    let x = d.column_by_name(covariate)?;
    let t = d.column(d.treatment_index());
    let n = d.n();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Domain("weight vector length mismatch".into()));
        }
    }
    let group = |val: f64| -> Vec<usize> { (0..n).filter(|&i| t[i] == val).collect() };
    let treated = group(1.0);
    let control = group(0.0);
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Domain("both treatment groups must be non-empty".into()));
    }
    let wmean = |rows: &[usize]| -> f64 {
        match weights {
            Some(w) => {
                let sw: f64 = rows.iter().map(|&i| w[i]).sum();
                rows.iter().map(|&i| w[i] * x[i]).sum::<f64>() / sw
            }
            None => rows.iter().map(|&i| x[i]).sum::<f64>() / rows.len() as f64,
        }
    };
    let var = |rows: &[usize]| -> f64 {
        let m = rows.iter().map(|&i| x[i]).sum::<f64>() / rows.len() as f64;
        if rows.len() < 2 {
            return 0.0;
        }
        rows.iter().map(|&i| (x[i] - m) * (x[i] - m)).sum::<f64>() / (rows.len() - 1) as f64
    };
    let pooled = (var(&treated) + var(&control)) / 2.0;
    if pooled <= 0.0 {
        return Ok(None);
    }
    Ok(Some((wmean(&treated) - wmean(&control)) / pooled.sqrt()))
}

/// Effective sample size of a weighted sample: (sum w)^2 / sum w^2.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Domain("ess of an empty weight vector".into()));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Domain("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq == 0.0 {
        return Err(Error::Domain("all weights are zero".into()));
    }
    Ok(sum * sum / sq)
}

/// Hajek IPW weights T/e + (1-T)/(1-e), normalized to mean one within each
/// treatment group.
pub fn hajek_weights(t: &[f64], e: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut w = vec![0.0; n];
    for i in 0..n {
        w[i] = if t[i] == 1.0 { 1.0 / e[i] } else { 1.0 / (1.0 - e[i]) };
    }
    for group in [1.0, 0.0] {
        let idx: Vec<usize> = (0..n).filter(|&i| t[i] == group).collect();
        if idx.is_empty() {
            continue;
        }
        let mean: f64 = idx.iter().map(|&i| w[i]).sum::<f64>() / idx.len() as f64;
        for &i in &idx {
            w[i] /= mean;
        }
    }
    w
}

/// Full overlap diagnostics for one run, serialized into the run report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapReport {
    pub ps_range_treated: (f64, f64),
    pub ps_range_control: (f64, f64),
    pub common_support: (f64, f64),
    pub n_before: usize,
    pub n_after: usize,
    pub excluded_treated: usize,
    pub excluded_control: usize,
    /// Unweighted SMD per covariate on the untrimmed sample.
    pub smd_before: Vec<(String, Option<f64>)>,
    /// Hajek-weighted SMD per covariate on the trimmed sample.
    pub smd_after: Vec<(String, Option<f64>)>,
    pub ess_overall: f64,
    pub ess_treated: f64,
    pub ess_control: f64,
    /// Balance adequacy: max |weighted SMD| against the configured threshold.
    pub balance_ok: bool,
    pub balance_threshold: f64,
}

/// Assemble the overlap report: trim summary plus balance and ESS on the
/// trimmed sample under Hajek weights.
pub fn overlap_report(
    full: &Dataset,
    trimmed: &Dataset,
    trim: &TrimSummary,
    m: &PropensityModel,
    covariates: &[String],
    balance_threshold: f64,
) -> Result<OverlapReport> {
    let e = m.predict(trimmed)?;
    let t = trimmed.column(trimmed.treatment_index()).to_vec();
    let w = hajek_weights(&t, &e);
    let mut smd_before = Vec::new();
    let mut smd_after = Vec::new();
    let mut max_abs = 0.0f64;
    for c in covariates {
        smd_before.push((c.clone(), smd(full, c, None)?));
        let after = smd(trimmed, c, Some(&w))?;
        if let Some(v) = after {
            max_abs = max_abs.max(v.abs());
        }
        smd_after.push((c.clone(), after));
    }
    let treated_w: Vec<f64> = (0..trimmed.n()).filter(|&i| t[i] == 1.0).map(|i| w[i]).collect();
    let control_w: Vec<f64> = (0..trimmed.n()).filter(|&i| t[i] == 0.0).map(|i| w[i]).collect();
    Ok(OverlapReport {
        ps_range_treated: trim.ps_range_treated,
        ps_range_control: trim.ps_range_control,
        common_support: trim.common_support,
        n_before: trim.n_before,
        n_after: trim.n_after,
        excluded_treated: trim.excluded_treated,
        excluded_control: trim.excluded_control,
        smd_before,
        smd_after,
        ess_overall: ess(&w)?,
        ess_treated: ess(&treated_w)?,
        ess_control: ess(&control_w)?,
        balance_ok: max_abs < balance_threshold,
        balance_threshold,
    })
}
