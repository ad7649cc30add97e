//! Effect estimation on the probability scale: regression adjustment, Hajek
//! IPW, doubly robust AIPW, risk ratios with E-value sensitivity, and
//! percentile bootstrap confidence intervals.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::glm::{self, Family};
use crate::overlap::PropensityModel;

/// Propensity bounds checked after trimming; values outside are a positivity error.
const PS_BOUNDS: (f64, f64) = (1e-6, 1.0 - 1e-6);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Reg,
    Ipw,
    Dr,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Reg => write!(f, "reg"),
            EstimatorKind::Ipw => write!(f, "ipw"),
            EstimatorKind::Dr => write!(f, "dr"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectScale {
    RiskDifference,
    RiskRatio,
}

/// One effect estimate. An undefined estimate carries no point or interval.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator: EstimatorKind,
    pub scale: EffectScale,
    pub point: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_used: usize,
    pub defined: bool,
    /// Populated when the estimate is undefined or noteworthy.
    pub diagnostic: Option<String>,
}

impl EffectEstimate {
    pub fn defined(estimator: EstimatorKind, point: f64, n_used: usize) -> Self {
        Self {
            estimator,
            scale: EffectScale::RiskDifference,
            point: Some(point),
            ci_low: None,
            ci_high: None,
            n_used,
            defined: true,
            diagnostic: None,
        }
    }

    pub fn undefined(estimator: EstimatorKind, diagnostic: String) -> Self {
        Self {
            estimator,
            scale: EffectScale::RiskDifference,
            point: None,
            ci_low: None,
            ci_high: None,
            n_used: 0,
            defined: false,
            diagnostic: Some(diagnostic),
        }
    }

    /// Attach a bootstrap interval, widened if needed so it contains the point.
    pub fn with_ci(mut self, lo: f64, hi: f64) -> Self {
        if let Some(p) = self.point {
            self.ci_low = Some(lo.min(p));
            self.ci_high = Some(hi.max(p));
        }
        self
    }
}

fn outcome_models(
    d: &Dataset,
    w: &[String],
) -> Result<std::result::Result<(Vec<f64>, Vec<f64>), String>> {
    // Logistic y ~ t + w, then predictions with t fixed at 1 and at 0.
    let t_name = d.treatment_name().to_string();
    let mut covs = vec![t_name];
    covs.extend_from_slice(w);
    let x = glm::design(d, &covs)?;
    let y = d.column(d.outcome_index()).to_vec();
    let fit = match glm::fit(&x, &y, Family::Logistic, glm::OUTCOME_RIDGE) {
        Ok(f) => f,
        Err(Error::DegenerateData(msg)) => return Ok(Err(msg)),
        Err(e) => return Err(e),
    };
    if !fit.converged && !fit.separation {
        return Ok(Err(format!(
            "outcome model did not converge in {} iterations",
            fit.iterations
        )));
    }
    let coef = fit.coef;
    let mut x1 = x.clone();
    let mut x0 = x;
    for i in 0..d.n() {
        x1[(i, 1)] = 1.0;
        x0[(i, 1)] = 0.0;
    }
    let m1 = glm::predict(&x1, &coef, Family::Logistic);
    let m0 = glm::predict(&x0, &coef, Family::Logistic);
    Ok(Ok((m1.iter().copied().collect(), m0.iter().copied().collect())))
}

/// Regression adjustment: logistic outcome model, effect as the mean
/// difference of predicted probabilities with treatment set to 1 versus 0.
pub fn estimate_reg(d: &Dataset, w: &[String]) -> Result<EffectEstimate> {
    let n = d.n();
    match outcome_models(d, w)? {
        Err(diag) => Ok(EffectEstimate::undefined(EstimatorKind::Reg, diag)),
        Ok((m1, m0)) => {
            let tau = (0..n).map(|i| m1[i] - m0[i]).sum::<f64>() / n as f64;
            Ok(EffectEstimate::defined(EstimatorKind::Reg, tau, n))
        }
    }
}

fn checked_propensities(d: &Dataset, m: &PropensityModel) -> Result<Vec<f64>> {
    let e = m.predict(d)?;
    if e.iter().any(|&v| v <= PS_BOUNDS.0 || v >= PS_BOUNDS.1) {
        return Err(Error::Positivity(
            "propensity scores outside (1e-6, 1-1e-6) after trimming".into(),
        ));
    }
    Ok(e)
}

/// Hajek IPW estimator on a trimmed dataset.
pub fn estimate_ipw(d: &Dataset, m: &PropensityModel) -> Result<EffectEstimate> {
    let e = checked_propensities(d, m)?;
    let t = d.column(d.treatment_index());
    let y = d.column(d.outcome_index());
    let n = d.n();
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        if t[i] == 1.0 {
            num1 += y[i] / e[i];
            den1 += 1.0 / e[i];
        } else {
            num0 += y[i] / (1.0 - e[i]);
            den0 += 1.0 / (1.0 - e[i]);
        }
    }
    if den1 == 0.0 || den0 == 0.0 {
        return Ok(EffectEstimate::undefined(
            EstimatorKind::Ipw,
            "a treatment group is empty".into(),
        ));
    }
    let tau = num1 / den1 - num0 / den0;
    Ok(EffectEstimate::defined(EstimatorKind::Ipw, tau, n))
}

/// Doubly robust AIPW estimator: outcome regression augmented with inverse
/// probability weighted residuals.
pub fn estimate_dr(d: &Dataset, w: &[String], m: &PropensityModel) -> Result<EffectEstimate> {
    let e = checked_propensities(d, m)?;
    let n = d.n();
    match outcome_models(d, w)? {
        Err(diag) => Ok(EffectEstimate::undefined(EstimatorKind::Dr, diag)),
        Ok((m1, m0)) => {
            let t = d.column(d.treatment_index());
            let y = d.column(d.outcome_index());
            let mut acc = 0.0;
            for i in 0..n {
                let aug = if t[i] == 1.0 {
                    (y[i] - m1[i]) / e[i]
                } else {
                    -(y[i] - m0[i]) / (1.0 - e[i])
                };
                acc += m1[i] - m0[i] + aug;
            }
            Ok(EffectEstimate::defined(EstimatorKind::Dr, acc / n as f64, n))
        }
    }
}

/// Risk-ratio fit from a log-link Poisson working model with robust
/// (sandwich) standard errors; Wald 95% interval.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiskRatioFit {
    pub rr: f64,
    pub ci: (f64, f64),
}

pub fn estimate_rr(d: &Dataset, w: &[String]) -> Result<Option<RiskRatioFit>> {
    let t_name = d.treatment_name().to_string();
    let mut covs = vec![t_name];
    covs.extend_from_slice(w);
    let x = glm::design(d, &covs)?;
    let y = d.column(d.outcome_index()).to_vec();
    let fit = match glm::fit(&x, &y, Family::Poisson, glm::OUTCOME_RIDGE) {
        Ok(f) => f,
        Err(Error::DegenerateData(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if !fit.converged {
        return Ok(None);
    }
    let cov = glm::sandwich_cov(&x, &y, &fit, Family::Poisson, glm::OUTCOME_RIDGE)?;
    let beta = fit.coef[1];
    let se = cov[(1, 1)].max(0.0).sqrt();
    Ok(Some(RiskRatioFit {
        rr: beta.exp(),
        ci: ((beta - 1.96 * se).exp(), (beta + 1.96 * se).exp()),
    }))
}

/// E-value of a risk ratio: r + sqrt(r (r - 1)) for r >= 1, applied to 1/r
/// otherwise.
pub fn evalue_point(rr: f64) -> Result<f64> {
    if rr <= 0.0 || !rr.is_finite() {
        return Err(Error::Domain(format!("risk ratio {rr} must be positive")));
    }
    let r = if rr >= 1.0 { rr } else { 1.0 / rr };
    Ok(r + (r * (r - 1.0)).sqrt())
}

/// E-values for a point estimate and the confidence bound closest to the
/// null. The bound's E-value is 1 when the interval crosses 1.
pub fn evalue(rr: f64, ci_bound: f64) -> Result<(f64, f64)> {
    let point = evalue_point(rr)?;
    if ci_bound <= 0.0 || !ci_bound.is_finite() {
        return Err(Error::Domain(format!("ci bound {ci_bound} must be positive")));
    }
    let crosses = (rr >= 1.0 && ci_bound <= 1.0) || (rr < 1.0 && ci_bound >= 1.0);
    let bound = if crosses { 1.0 } else { evalue_point(ci_bound)? };
    Ok((point, bound))
}

/// Risk ratio, its interval, and both E-values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub rr: f64,
    pub rr_ci: (f64, f64),
    pub evalue_point: f64,
    pub evalue_ci: f64,
}

/// Poisson-with-sandwich risk ratio plus E-values for the (t, y) query
/// adjusted for `w`. `None` when the working model fails.
pub fn sensitivity_analysis(d: &Dataset, w: &[String]) -> Result<Option<SensitivityResult>> {
    let Some(fit) = estimate_rr(d, w)? else {
        return Ok(None);
    };
    let closest = if fit.rr >= 1.0 { fit.ci.0 } else { fit.ci.1 };
    let (point, ci) = evalue(fit.rr, closest)?;
    Ok(Some(SensitivityResult {
        rr: fit.rr,
        rr_ci: fit.ci,
        evalue_point: point,
        evalue_ci: ci,
    }))
}

/// Percentile bootstrap interval over unit resampling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    pub failed: usize,
    /// More than 20% of replicates failed to produce an estimate.
    pub unstable: bool,
}

/// Resample rows with replacement B times, re-evaluating `estimator` (which
/// must refit its nuisance models) on each replicate. Deterministic given
/// the seed; replicate k draws from the (seed, k) substream regardless of
/// scheduling.
pub fn bootstrap_ci<F>(d: &Dataset, b: usize, seed: u64, estimator: F) -> Result<BootstrapCi>
where
    F: Fn(&Dataset) -> Option<f64> + Sync,
{
    if b < 100 {
        return Err(Error::Config(format!("bootstrap B = {b} must be at least 100")));
    }
    let n = d.n();
    let stats: Vec<Option<f64>> = exec::map_indexed(b, |k| {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, k as u64);
        let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        estimator(&d.select_rows(&rows))
    });
    let mut values: Vec<f64> = stats.iter().filter_map(|&v| v).collect();
    let failed = b - values.len();
    if values.is_empty() {
        return Err(Error::Estimation("every bootstrap replicate failed".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let alpha = 0.025;
    let m = values.len();
    let lo_idx = ((alpha * m as f64).floor() as usize).min(m - 1);
    let hi_idx = (((1.0 - alpha) * m as f64).ceil() as usize).saturating_sub(1).min(m - 1);
    Ok(BootstrapCi {
        lo: values[lo_idx],
        hi: values[hi_idx],
        replicates: b,
        failed,
        unstable: (failed as f64) > 0.2 * b as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{VariableSpec, VarKind, VarRole, Window};
    use crate::overlap::fit_propensity;
    use approx::assert_relative_eq;

    fn schema_wty() -> Vec<VariableSpec> {
        vec![
            VariableSpec::new("W", VarKind::Binary, VarRole::Covariate, Window::PreTreatment),
            VariableSpec::new("T", VarKind::Binary, VarRole::Treatment, Window::PreTreatment),
            VariableSpec::new("Y", VarKind::Binary, VarRole::Outcome, Window::Outcome),
        ]
    }

    fn balanced_randomized() -> Dataset {
        // 2x2x2 cells with equal treatment probability; Y depends on T only.
        let mut w = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        for (wi, ti, yi, count) in [
            (0.0, 0.0, 0.0, 30),
            (0.0, 0.0, 1.0, 10),
            (0.0, 1.0, 0.0, 20),
            (0.0, 1.0, 1.0, 20),
            (1.0, 0.0, 0.0, 30),
            (1.0, 0.0, 1.0, 10),
            (1.0, 1.0, 0.0, 20),
            (1.0, 1.0, 1.0, 20),
        ] {
            for _ in 0..count {
                w.push(wi);
                t.push(ti);
                y.push(yi);
            }
        }
        Dataset::from_columns(schema_wty(), vec![w, t, y]).unwrap()
    }

    #[test]
    fn reg_with_no_covariates_is_the_naive_difference() {
        let d = balanced_randomized();
        let est = estimate_reg(&d, &[]).unwrap();
        let naive = d.describe_by_treatment().naive_risk_difference.unwrap();
        assert_relative_eq!(est.point.unwrap(), naive, epsilon = 1e-6);
    }

    #[test]
    fn ipw_symmetric_fixture_is_zero() {
        // Constant e = 0.5 via intercept-only fit on a balanced design;
        // outcomes symmetric across arms.
        let w = vec![0.0, 0.0, 0.0, 0.0];
        let t = vec![1.0, 1.0, 0.0, 0.0];
        let y = vec![1.0, 0.0, 1.0, 0.0];
        let d = Dataset::from_columns(schema_wty(), vec![w, t, y]).unwrap();
        let m = fit_propensity(&d, &[]).unwrap();
        let est = estimate_ipw(&d, &m).unwrap();
        assert_relative_eq!(est.point.unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ipw_two_strata_hand_fixture() {
        // Stratum W=0: e = 0.25, treated mean Y = 1.0, control mean Y = 0.5.
        // Stratum W=1: e = 0.75, treated mean Y = 0.5, control mean Y = 0.0.
        // Hajek weighting recovers per-stratum means weighted by stratum sizes.
        let mut cols = (Vec::new(), Vec::new(), Vec::new());
        let mut push = |w: f64, t: f64, y: f64, k: usize| {
            for _ in 0..k {
                cols.0.push(w);
                cols.1.push(t);
                cols.2.push(y);
            }
        };
        push(0.0, 1.0, 1.0, 1);
        push(0.0, 0.0, 1.0, 1);
        push(0.0, 0.0, 0.0, 1);
        push(0.0, 0.0, 1.0, 1);
        // W=0 has 4 rows, 1 treated -> e(W=0) = 0.25.
        push(1.0, 1.0, 1.0, 1);
        push(1.0, 1.0, 0.0, 1);
        push(1.0, 1.0, 0.0, 1);
        push(1.0, 0.0, 0.0, 1);
        // W=1 has 4 rows, 3 treated -> e(W=1) = 0.75.
        let d = Dataset::from_columns(schema_wty(), vec![cols.0, cols.1, cols.2]).unwrap();
        let m = fit_propensity(&d, &["W".to_string()]).unwrap();
        // Hand computation with e = (0.25, 0.75):
        // treated: sum y/e = 1/0.25 + (1+0+0)/0.75 ; sum 1/e = 1/0.25 + 3/0.75
        // control: sum y/(1-e) = (1+0+1)/0.75 + 0/0.25 ; sum 1/(1-e) = 3/0.75 + 1/0.25
        let treated = (1.0 / 0.25 + 1.0 / 0.75) / (1.0 / 0.25 + 3.0 / 0.75);
        let control = (2.0 / 0.75) / (3.0 / 0.75 + 1.0 / 0.25);
        let est = estimate_ipw(&d, &m).unwrap();
        assert_relative_eq!(est.point.unwrap(), treated - control, epsilon = 1e-4);
    }

    #[test]
    fn dr_equals_reg_under_constant_propensity() {
        // With a constant propensity the logistic score equations make the
        // treated and control residual sums vanish at the MLE, so the AIPW
        // augmentation cancels exactly and DR reduces to REG.
        let d = balanced_randomized();
        let m = fit_propensity(&d, &[]).unwrap();
        let w_set = ["W".to_string()];
        let reg = estimate_reg(&d, &w_set).unwrap().point.unwrap();
        let dr = estimate_dr(&d, &w_set, &m).unwrap().point.unwrap();
        assert_relative_eq!(dr, reg, epsilon = 1e-9);
    }

    #[test]
    fn rr_closed_form_two_group() {
        // risks 0.8 vs 0.4, no covariates -> RR = 2.
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for (ti, yi, k) in [(1.0, 1.0, 40), (1.0, 0.0, 10), (0.0, 1.0, 20), (0.0, 0.0, 30)] {
            for _ in 0..k {
                t.push(ti);
                y.push(yi);
                w.push(0.0);
            }
        }
        let d = Dataset::from_columns(schema_wty(), vec![w, t, y]).unwrap();
        let fit = estimate_rr(&d, &[]).unwrap().unwrap();
        assert_relative_eq!(fit.rr, 2.0, epsilon = 1e-6);
        assert!(fit.ci.0 < 2.0 && 2.0 < fit.ci.1);
    }

    #[test]
    fn rr_is_one_for_identical_groups() {
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for (ti, yi, k) in [(1.0, 1.0, 30), (1.0, 0.0, 20), (0.0, 1.0, 30), (0.0, 0.0, 20)] {
            for _ in 0..k {
                t.push(ti);
                y.push(yi);
                w.push(0.0);
            }
        }
        let d = Dataset::from_columns(schema_wty(), vec![w, t, y]).unwrap();
        let fit = estimate_rr(&d, &[]).unwrap().unwrap();
        assert_relative_eq!(fit.rr, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn evalue_closed_forms() {
        assert_relative_eq!(evalue_point(1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(evalue_point(4.0).unwrap(), 4.0 + 12f64.sqrt(), epsilon = 1e-12);
        // Frozen: E(1.19) = 1.66549973712, E(1.12) = 1.4866060556.
        let (p, c) = evalue(1.19, 1.12).unwrap();
        assert_relative_eq!(p, 1.66549973712, epsilon = 1e-9);
        assert_relative_eq!(c, 1.4866060556, epsilon = 1e-9);
        // Interval crossing one collapses the bound E-value to 1.
        let (_, c) = evalue(1.19, 0.98).unwrap();
        assert_relative_eq!(c, 1.0, epsilon = 1e-12);
        assert!(evalue_point(0.0).is_err());
        assert!(evalue_point(-2.0).is_err());
    }

    #[test]
    fn evalue_symmetry_and_monotonicity() {
        for r in [1.1, 1.5, 2.0, 3.7] {
            assert_relative_eq!(
                evalue_point(r).unwrap(),
                evalue_point(1.0 / r).unwrap(),
                epsilon = 1e-12
            );
        }
        let mut prev = 1.0;
        for k in 1..40 {
            let r = 1.0 + 0.1 * k as f64;
            let e = evalue_point(r).unwrap();
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_degenerate_on_constants() {
        let d = balanced_randomized();
        let constant = |_: &Dataset| Some(0.25);
        let a = bootstrap_ci(&d, 200, 9, constant).unwrap();
        assert_relative_eq!(a.lo, 0.25, epsilon = 1e-12);
        assert_relative_eq!(a.hi, 0.25, epsilon = 1e-12);

        let est = |dd: &Dataset| {
            let desc = dd.describe_by_treatment();
            desc.naive_risk_difference
        };
        let b1 = bootstrap_ci(&d, 300, 42, est).unwrap();
        let b2 = bootstrap_ci(&d, 300, 42, est).unwrap();
        assert_eq!(b1.lo, b2.lo);
        assert_eq!(b1.hi, b2.hi);
        assert!(b1.lo <= b1.hi);
        assert!(!b1.unstable);
    }

    #[test]
    fn bootstrap_flags_unstable_when_replicates_fail() {
        let d = balanced_randomized();
        let flaky = |dd: &Dataset| {
            // Fails whenever the resample has an even treated count.
            let t = dd.column(dd.treatment_index());
            let k: usize = t.iter().map(|&v| v as usize).sum();
            if k % 2 == 0 {
                None
            } else {
                Some(0.1)
            }
        };
        let b = bootstrap_ci(&d, 200, 5, flaky).unwrap();
        assert!(b.failed > 0);
        assert!(b.unstable);
    }

    #[test]
    fn rejects_small_b() {
        let d = balanced_randomized();
        assert!(bootstrap_ci(&d, 50, 1, |_| Some(0.0)).is_err());
    }
}
