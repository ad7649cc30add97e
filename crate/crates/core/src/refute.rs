//! Falsification tests, grid execution, and constraint-ladder aggregation.
//!
//! A run is one (algorithm, alpha, seed, level) tuple: discovery, gate,
//! overlap, estimation, refutation, label. Failures are recorded in the run
//! record, never aborting the grid. Runs execute in parallel with per-run
//! seeds; aggregation is a deterministic fold over sorted run identities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ci::{CiTester, DgLrtTester, FisherZTester, OracleCiTester};
use crate::dataset::Dataset;
use crate::discovery::{pc, score_greedy, Algorithm, DiscoveryConfig};
use crate::effect::{
    estimate_dr, estimate_ipw, estimate_reg, sensitivity_analysis, EffectEstimate, EstimatorKind,
    SensitivityResult,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{BackgroundKnowledge, CausalGraph, ConstraintLevel};
use crate::identify::{gate, AdmissibilityVerdict, FailureReason};
use crate::overlap::{fit_propensity, overlap_report, trim_common_support, OverlapReport};

const SEED_BOOTSTRAP: u64 = 0xB007;
const SEED_PLACEBO: u64 = 0x91AC_EB0;
const SEED_SUBSET: u64 = 0x5B5E_7;

/// Decision label for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionLabel {
    Trust,
    Caution,
    Reject,
}

impl std::fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecisionLabel::Trust => write!(f, "trust"),
            DecisionLabel::Caution => write!(f, "caution"),
            DecisionLabel::Reject => write!(f, "reject"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Trust iff the ATE is defined and its interval excludes zero.
    CiRule,
    /// Full protocol: interval excludes zero, placebo passes, subsets
    /// sign-consistent; magnitude-sensitive runs demote to caution.
    Protocol,
}

/// Placebo refutation: effect re-estimated under a seeded random permutation
/// of the treatment, with a permutation-distribution p-value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub placebo_tau: Option<f64>,
    /// Fraction of permutation draws at least as extreme as the placebo
    /// estimate; absent when the placebo estimate itself is undefined.
    pub p_value: Option<f64>,
    pub permutations: usize,
}

/// Subset refutation: re-estimates on seeded subsamples at each fraction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsetResult {
    pub fraction: f64,
    pub estimate: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsetTest {
    pub results: Vec<SubsetResult>,
    /// (min, max) over defined subset estimates.
    pub range: Option<(f64, f64)>,
    /// No defined subset estimate flips sign against the full-sample point.
    pub sign_consistent: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Refutations {
    pub placebo: PlaceboResult,
    pub subsets: SubsetTest,
}

/// Everything recorded about one grid run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub seed: u64,
    pub level: ConstraintLevel,
    pub graph: Option<CausalGraph>,
    pub verdict: Option<AdmissibilityVerdict>,
    pub overlap: Option<OverlapReport>,
    pub estimates: Vec<EffectEstimate>,
    pub sensitivity: Option<SensitivityResult>,
    pub refutations: Option<Refutations>,
    pub label: DecisionLabel,
    pub error: Option<String>,
}

impl RunRecord {
    /// The primary (doubly robust) risk-difference estimate, when defined.
    pub fn primary_ate(&self) -> Option<f64> {
        self.estimates
            .iter()
            .find(|e| e.estimator == EstimatorKind::Dr)
            .and_then(|e| e.point)
    }

    pub fn estimate(&self, kind: EstimatorKind) -> Option<&EffectEstimate> {
        self.estimates.iter().find(|e| e.estimator == kind)
    }

    pub fn identifiable(&self) -> bool {
        self.verdict.as_ref().map(|v| v.identifiable).unwrap_or(false)
    }
}

/// Per-level aggregates per the constraint-ladder formulas.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelSummary {
    pub runs: usize,
    /// Fraction of runs with a defined ATE.
    pub identifiable_rate: f64,
    pub mean_ate: Option<f64>,
    /// Population standard deviation over defined ATEs.
    pub sd_ate: Option<f64>,
    pub label_rates: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderSummary {
    pub levels: BTreeMap<ConstraintLevel, LevelSummary>,
}

/// Tunable policy knobs for refutation and labeling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefuteSettings {
    pub placebo_permutations: usize,
    pub subset_fractions: Vec<f64>,
    pub bootstrap_b: usize,
    pub label_mode: LabelMode,
    /// Placebo p-value below this fails the protocol label.
    pub placebo_min_p: f64,
    /// Subset range wider than this fraction of |point| demotes to caution.
    pub caution_range_frac: f64,
    /// Balance threshold reported in overlap diagnostics.
    pub balance_threshold: f64,
}

impl Default for RefuteSettings {
    fn default() -> Self {
        Self {
            placebo_permutations: 200,
            subset_fractions: vec![0.1, 0.5, 0.8, 0.9],
            bootstrap_b: 1000,
            label_mode: LabelMode::CiRule,
            placebo_min_p: 0.05,
            caution_range_frac: 0.5,
            balance_threshold: 0.1,
        }
    }
}

/// Which CI decision procedure drives PC.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum TesterChoice {
    DgLrt,
    FisherZ,
    /// d-separation oracle on a known graph; available for synthetic runs.
    Oracle,
}

/// One grid's execution plan at a fixed constraint level.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub algorithms: Vec<Algorithm>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub level: ConstraintLevel,
    pub estimators: Vec<EstimatorKind>,
    pub settings: RefuteSettings,
    pub tester: TesterChoice,
    /// Ground-truth graph backing the oracle tester.
    pub oracle_graph: Option<CausalGraph>,
    pub max_condset: usize,
}

/// Permute the treatment column with the (seed, index) substream.
fn permuted_treatment(d: &Dataset, seed: u64, index: u64) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut t = d.column(d.treatment_index()).to_vec();
    let mut rng = crate::rng::substream(seed, index);
    t.shuffle(&mut rng);
    t
}

/// Placebo test: permute the treatment, re-estimate with the same adjustment
/// set, and place the placebo estimate inside its own permutation
/// distribution. `estimator` must refit nuisances on the dataset it is given.
pub fn placebo_test<F>(d: &Dataset, estimator: F, permutations: usize, seed: u64) -> Result<PlaceboResult>
where
    F: Fn(&Dataset) -> Option<f64> + Sync,
{
    if permutations < 200 {
        return Err(Error::Config(format!(
            "placebo requires at least 200 permutations, got {permutations}"
        )));
    }
    let t_idx = d.treatment_index();
    let estimates: Vec<Option<f64>> = exec::map_indexed(permutations + 1, |k| {
        let t = permuted_treatment(d, seed, k as u64);
        let dd = d.with_column_replaced(t_idx, t).ok()?;
        estimator(&dd)
    });
    let placebo_tau = estimates[0];
    let p_value = placebo_tau.map(|tau0| {
        let draws: Vec<f64> = estimates[1..].iter().filter_map(|&v| v).collect();
        if draws.is_empty() {
            return 1.0;
        }
        let extreme = draws.iter().filter(|v| v.abs() >= tau0.abs()).count();
        extreme as f64 / draws.len() as f64
    });
    Ok(PlaceboResult {
        placebo_tau,
        p_value,
        permutations,
    })
}

/// Subset stability: re-estimate on seeded subsamples at each fraction.
/// Fraction 1.0 reuses the dataset as-is and reproduces the full estimate.
pub fn subset_test<F>(
    d: &Dataset,
    estimator: F,
    fractions: &[f64],
    seed: u64,
    full_estimate: f64,
) -> Result<SubsetTest>
where
    F: Fn(&Dataset) -> Option<f64> + Sync,
{
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) || f <= 0.0 {
            return Err(Error::Config(format!("subset fraction {f} must lie in (0, 1]")));
        }
    }
    let n = d.n();
    let results: Vec<SubsetResult> = exec::map_indexed(fractions.len(), |k| {
        let fraction = fractions[k];
        let estimate = if fraction >= 1.0 {
            estimator(d)
        } else {
            use rand::seq::SliceRandom;
            let mut rows: Vec<usize> = (0..n).collect();
            let mut rng = crate::rng::substream(seed, k as u64);
            rows.shuffle(&mut rng);
            let keep = ((fraction * n as f64).floor() as usize).max(1);
            rows.truncate(keep);
            estimator(&d.select_rows(&rows))
        };
        SubsetResult { fraction, estimate }
    });
    let defined: Vec<f64> = results.iter().filter_map(|r| r.estimate).collect();
    let range = if defined.is_empty() {
        None
    } else {
        Some((
            defined.iter().cloned().fold(f64::INFINITY, f64::min),
            defined.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ))
    };
    let sign_consistent = defined
        .iter()
        .all(|&v| v == 0.0 || full_estimate == 0.0 || v.signum() == full_estimate.signum());
    Ok(SubsetTest {
        results,
        range,
        sign_consistent,
    })
}

/// Decision label for a run under the chosen mode.
pub fn label(rec: &RunRecord, mode: LabelMode, settings: &RefuteSettings) -> DecisionLabel {
    let Some(dr) = rec.estimate(EstimatorKind::Dr) else {
        return DecisionLabel::Reject;
    };
    let (Some(point), Some(lo), Some(hi)) = (dr.point, dr.ci_low, dr.ci_high) else {
        return DecisionLabel::Reject;
    };
    let ci_excludes_zero = lo > 0.0 || hi < 0.0;
    match mode {
        LabelMode::CiRule => {
            if ci_excludes_zero {
                DecisionLabel::Trust
            } else {
                DecisionLabel::Reject
            }
        }
        LabelMode::Protocol => {
            let Some(refutations) = &rec.refutations else {
                return DecisionLabel::Reject;
            };
            let placebo_ok = refutations
                .placebo
                .p_value
                .map(|p| p > settings.placebo_min_p)
                .unwrap_or(false);
            let sign_ok = refutations.subsets.sign_consistent;
            let magnitude_sensitive = refutations
                .subsets
                .range
                .map(|(lo, hi)| (hi - lo) > settings.caution_range_frac * point.abs())
                .unwrap_or(true);
            if sign_ok && magnitude_sensitive {
                DecisionLabel::Caution
            } else if ci_excludes_zero && placebo_ok && sign_ok {
                DecisionLabel::Trust
            } else {
                DecisionLabel::Reject
            }
        }
    }
}

fn tester_for(plan: &RunPlan, d: &Dataset) -> Result<Box<dyn CiTester>> {
    Ok(match plan.tester {
        TesterChoice::DgLrt => Box::new(DgLrtTester::new(d)?),
        TesterChoice::FisherZ => Box::new(FisherZTester::new(d)),
        TesterChoice::Oracle => {
            let g = plan
                .oracle_graph
                .clone()
                .ok_or_else(|| Error::Config("oracle tester requires a known graph".into()))?;
            // The oracle answers queries by dataset column index.
            let remapped = remap_to_columns(&g, d)?;
            Box::new(OracleCiTester::new(remapped))
        }
    })
}

fn remap_to_columns(g: &CausalGraph, d: &Dataset) -> Result<CausalGraph> {
    let nodes = d.names();
    let dir: Vec<(String, String)> = g
        .directed_edges()
        .iter()
        .map(|&(a, b)| (g.node_name(a).to_string(), g.node_name(b).to_string()))
        .collect();
    let refs: Vec<(&str, &str)> = dir.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    CausalGraph::dag(nodes, &refs)
}

/// Execute one run of the pipeline: discovery, gate, overlap, estimation,
/// refutation, label.
#[allow(clippy::too_many_arguments)]
fn run_one(
    d: &Dataset,
    algorithm: Algorithm,
    alpha: f64,
    seed: u64,
    level: ConstraintLevel,
    plan: &RunPlan,
    tester: &dyn CiTester,
    knowledge: &BackgroundKnowledge,
) -> RunRecord {
    let settings = &plan.settings;
    let mut record = RunRecord {
        algorithm,
        alpha,
        seed,
        level,
        graph: None,
        verdict: None,
        overlap: None,
        estimates: Vec::new(),
        sensitivity: None,
        refutations: None,
        label: DecisionLabel::Reject,
        error: None,
    };

    let cfg = match DiscoveryConfig::new(algorithm, alpha, seed, knowledge.clone()) {
        Ok(c) => c.with_max_condset(plan.max_condset),
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let graph = match algorithm {
        Algorithm::Pc => pc(d, &cfg, tester),
        Algorithm::ScoreGreedy => score_greedy(d, &cfg),
    };
    let graph = match graph {
        Ok(g) => g,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.graph = Some(graph.clone());

    let verdict = match gate(&graph, d.treatment_name(), d.outcome_name()) {
        Ok(v) => v,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    if !verdict.identifiable {
        record.verdict = Some(verdict);
        return record;
    }
    let adjustment: Vec<String> = verdict
        .adjustment_set
        .clone()
        .expect("identifiable verdicts carry a set")
        .into_iter()
        .collect();

    // Positivity: fit the treatment model, trim to common support.
    let propensity = match fit_propensity(d, &adjustment) {
        Ok(m) => m,
        Err(e) => {
            record.verdict = Some(AdmissibilityVerdict::failed(FailureReason::PositivityViolation));
            record.error = Some(e.to_string());
            return record;
        }
    };
    let (trimmed, trim) = match trim_common_support(d, &propensity) {
        Ok(x) => x,
        Err(Error::Positivity(msg)) => {
            record.verdict = Some(AdmissibilityVerdict::failed(FailureReason::PositivityViolation));
            record.error = Some(msg);
            return record;
        }
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    match overlap_report(d, &trimmed, &trim, &propensity, &adjustment, settings.balance_threshold) {
        Ok(r) => record.overlap = Some(r),
        Err(e) => record.error = Some(e.to_string()),
    }

    // The estimator closure refits both nuisance models on whatever rows it
    // receives; bootstrap, placebo, and subset tests all share it.
    let adj = adjustment.clone();
    let dr_closure = move |dd: &Dataset| -> Option<f64> {
        let m = fit_propensity(dd, &adj).ok()?;
        estimate_dr(dd, &adj, &m).ok().and_then(|e| e.point)
    };

    let run_seed = crate::rng::mix(seed, (alpha.to_bits() >> 12) ^ level as u64);
    let mut estimates = Vec::new();
    for kind in &plan.estimators {
        let est = match kind {
            EstimatorKind::Reg => estimate_reg(&trimmed, &adjustment),
            EstimatorKind::Ipw => estimate_ipw(&trimmed, &propensity),
            EstimatorKind::Dr => estimate_dr(&trimmed, &adjustment, &propensity),
        };
        match est {
            Ok(e) => estimates.push(e),
            Err(Error::Positivity(msg)) => {
                record.verdict = Some(AdmissibilityVerdict::failed(FailureReason::PositivityViolation));
                record.error = Some(msg);
                return record;
            }
            Err(e) => {
                estimates.push(EffectEstimate::undefined(*kind, e.to_string()));
            }
        }
    }

    // Percentile bootstrap: one pass over replicates feeds every estimator.
    let adj_ci = adjustment.clone();
    let boot_seed = crate::rng::mix(run_seed, SEED_BOOTSTRAP);
    let n_rows = trimmed.n();
    let replicates: Vec<[Option<f64>; 3]> = exec::map_indexed(settings.bootstrap_b, |k| {
        use rand::Rng;
        let mut rng = crate::rng::substream(boot_seed, k as u64);
        let rows: Vec<usize> = (0..n_rows).map(|_| rng.gen_range(0..n_rows)).collect();
        let dd = trimmed.select_rows(&rows);
        let Ok(m) = fit_propensity(&dd, &adj_ci) else {
            return [None, None, None];
        };
        [
            estimate_reg(&dd, &adj_ci).ok().and_then(|e| e.point),
            estimate_ipw(&dd, &m).ok().and_then(|e| e.point),
            estimate_dr(&dd, &adj_ci, &m).ok().and_then(|e| e.point),
        ]
    });
    for kind in &plan.estimators {
        let slot_idx = match kind {
            EstimatorKind::Reg => 0,
            EstimatorKind::Ipw => 1,
            EstimatorKind::Dr => 2,
        };
        let mut values: Vec<f64> = replicates.iter().filter_map(|r| r[slot_idx]).collect();
        if values.is_empty() {
            continue;
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
        let m = values.len();
        let lo = values[((0.025 * m as f64).floor() as usize).min(m - 1)];
        let hi = values[(((0.975) * m as f64).ceil() as usize).saturating_sub(1).min(m - 1)];
        if let Some(slot) = estimates.iter_mut().find(|e| e.estimator == *kind) {
            *slot = slot.clone().with_ci(lo, hi);
        }
    }
    record.estimates = estimates;
    record.verdict = Some(verdict);

    record.sensitivity = sensitivity_analysis(&trimmed, &adjustment).ok().flatten();

    let full_dr = record.primary_ate();
    if let Some(full) = full_dr {
        let placebo = placebo_test(
            &trimmed,
            &dr_closure,
            settings.placebo_permutations.max(200),
            crate::rng::mix(run_seed, SEED_PLACEBO),
        );
        let subsets = subset_test(
            &trimmed,
            &dr_closure,
            &settings.subset_fractions,
            crate::rng::mix(run_seed, SEED_SUBSET),
            full,
        );
        match (placebo, subsets) {
            (Ok(p), Ok(s)) => {
                record.refutations = Some(Refutations {
                    placebo: p,
                    subsets: s,
                });
            }
            (Err(e), _) | (_, Err(e)) => record.error = Some(e.to_string()),
        }
    }

    record.label = label(&record, settings.label_mode, settings);
    record
}

/// Full cartesian grid execution at one constraint level: every
/// (algorithm, alpha, seed) tuple is an independent run.
pub fn run_grid(d: &Dataset, plan: &RunPlan) -> Result<Vec<RunRecord>> {
    let knowledge = BackgroundKnowledge::for_level(plan.level, d.specs());
    let tester = tester_for(plan, d)?;
    let mut tuples = Vec::new();
    for &algorithm in &plan.algorithms {
        for &alpha in &plan.alphas {
            for &seed in &plan.seeds {
                tuples.push((algorithm, alpha, seed));
            }
        }
    }
    let tester_ref: &dyn CiTester = tester.as_ref();
    let records = exec::map_indexed(tuples.len(), |k| {
        let (algorithm, alpha, seed) = tuples[k];
        run_one(d, algorithm, alpha, seed, plan.level, plan, tester_ref, &knowledge)
    });
    Ok(records)
}

/// Aggregate records per constraint level: identifiable rate, mean and
/// population SD over defined ATEs, and per-label rates.
pub fn ladder_summary(records: &[RunRecord]) -> LadderSummary {
    let mut levels: BTreeMap<ConstraintLevel, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        levels.entry(r.level).or_default().push(r);
    }
    let summaries = levels
        .into_iter()
        .map(|(level, recs)| {
            let n = recs.len();
            let defined: Vec<f64> = recs.iter().filter_map(|r| r.primary_ate()).collect();
            let identifiable_rate = defined.len() as f64 / n as f64;
            let (mean_ate, sd_ate) = if defined.is_empty() {
                (None, None)
            } else {
                let mean = defined.iter().sum::<f64>() / defined.len() as f64;
                let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / defined.len() as f64;
                (Some(mean), Some(var.sqrt()))
            };
            let mut label_rates = BTreeMap::new();
            for lab in [DecisionLabel::Trust, DecisionLabel::Caution, DecisionLabel::Reject] {
                let k = recs.iter().filter(|r| r.label == lab).count();
                label_rates.insert(lab.to_string(), k as f64 / n as f64);
            }
            (
                level,
                LevelSummary {
                    runs: n,
                    identifiable_rate,
                    mean_ate,
                    sd_ate,
                    label_rates,
                },
            )
        })
        .collect();
    LadderSummary { levels: summaries }
}

/// Flat CSV row for external plotting; `None` serializes as an empty cell.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "level,algorithm,alpha,seed,identifiable,adjustment_set,ate_reg,ate_ipw,ate_dr,ci_low,ci_high,placebo_p,label\n",
    );
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let adjustment = r
            .verdict
            .as_ref()
            .and_then(|v| v.adjustment_set.as_ref())
            .map(|s| s.iter().cloned().collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let point = |kind| r.estimate(kind).and_then(|e: &EffectEstimate| e.point);
        let dr = r.estimate(EstimatorKind::Dr);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.level,
            r.algorithm,
            r.alpha,
            r.seed,
            r.identifiable(),
            adjustment,
            fmt(point(EstimatorKind::Reg)),
            fmt(point(EstimatorKind::Ipw)),
            fmt(point(EstimatorKind::Dr)),
            fmt(dr.and_then(|e| e.ci_low)),
            fmt(dr.and_then(|e| e.ci_high)),
            fmt(r.refutations.as_ref().and_then(|x| x.placebo.p_value)),
            r.label,
        ));
    }
    out
}
