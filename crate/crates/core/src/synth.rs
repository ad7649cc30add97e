//! Synthetic structural causal models mirroring the telemetry domain, with an
//! interventional Monte-Carlo oracle that supplies ground truth for the
//! acceptance tests.
//!
//! Noise is drawn per (row, node) substream, so sampling is identical under
//! any parallelism and an intervention on one node never shifts the noise
//! consumed by another.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::dataset::{default_schema, Dataset, VariableSpec, VarKind};
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::CausalGraph;

/// Structural mechanism of one node given its graph parents.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Mechanism {
    /// Bernoulli with logit-linear mean: binary nodes.
    Logistic {
        parents: Vec<String>,
        intercept: f64,
        coefficients: Vec<f64>,
    },
    /// Gaussian with linear mean: continuous nodes.
    LinearGaussian {
        parents: Vec<String>,
        intercept: f64,
        coefficients: Vec<f64>,
        noise_sd: f64,
    },
    /// Poisson with log-linear rate: count nodes.
    PoissonCount {
        parents: Vec<String>,
        intercept: f64,
        coefficients: Vec<f64>,
    },
}

impl Mechanism {
    fn parents(&self) -> &[String] {
        match self {
            Mechanism::Logistic { parents, .. }
            | Mechanism::LinearGaussian { parents, .. }
            | Mechanism::PoissonCount { parents, .. } => parents,
        }
    }

    fn linear(&self, values: &[f64]) -> f64 {
        let (intercept, coefficients) = match self {
            Mechanism::Logistic {
                intercept,
                coefficients,
                ..
            }
            | Mechanism::LinearGaussian {
                intercept,
                coefficients,
                ..
            }
            | Mechanism::PoissonCount {
                intercept,
                coefficients,
                ..
            } => (intercept, coefficients),
        };
        intercept + coefficients.iter().zip(values).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// A full data-generating hypothesis: DAG, schema, per-node mechanisms, seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScmSpec {
    pub graph: CausalGraph,
    pub schema: Vec<VariableSpec>,
    pub mechanisms: BTreeMap<String, Mechanism>,
    pub seed: u64,
}

/// Preset generating scenarios, each matched to one validation concern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Strong self-selection through platform commitment and progression,
    /// with a genuine direct treatment effect.
    PaperLike,
    /// Same selection structure, zero treatment effect.
    NullEffect,
    /// No direct treatment-outcome edge; the effect flows through an
    /// engagement mediator.
    MediationOnly,
    /// Near-deterministic selection on a continuous covariate: positivity
    /// fails.
    PositivityViolation,
    /// Treatment-outcome orientation resolvable only through background
    /// knowledge (a shielded triangle), with independent noise variables.
    KnowledgeOnly,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::PaperLike,
        Scenario::NullEffect,
        Scenario::MediationOnly,
        Scenario::PositivityViolation,
        Scenario::KnowledgeOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::PaperLike => "paper_like",
            Scenario::NullEffect => "null_effect",
            Scenario::MediationOnly => "mediation_only",
            Scenario::PositivityViolation => "positivity_violation",
            Scenario::KnowledgeOnly => "knowledge_only",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

impl ScmSpec {
    /// Validate mechanism/graph/schema agreement.
    pub fn new(
        graph: CausalGraph,
        schema: Vec<VariableSpec>,
        mechanisms: BTreeMap<String, Mechanism>,
        seed: u64,
    ) -> Result<Self> {
        crate::dataset::validate_schema(&schema)?;
        if graph.class() != crate::graph::GraphClass::Dag {
            return Err(Error::Graph("scm graph must be a DAG".into()));
        }
        for spec in &schema {
            graph.node_index(&spec.name)?;
            let mech = mechanisms
                .get(&spec.name)
                .ok_or_else(|| Error::Config(format!("no mechanism for {:?}", spec.name)))?;
            let graph_parents: Vec<String> = {
                let idx = graph.node_index(&spec.name)?;
                let mut p: Vec<String> = graph
                    .parents(idx)
                    .into_iter()
                    .map(|i| graph.node_name(i).to_string())
                    .collect();
                p.sort();
                p
            };
            let mut mech_parents = mech.parents().to_vec();
            mech_parents.sort();
            if graph_parents != mech_parents {
                return Err(Error::Config(format!(
                    "mechanism parents for {:?} do not match the graph",
                    spec.name
                )));
            }
            let ok = matches!(
                (spec.kind, mech),
                (VarKind::Binary, Mechanism::Logistic { .. })
                    | (VarKind::Continuous, Mechanism::LinearGaussian { .. })
                    | (VarKind::Count, Mechanism::PoissonCount { .. })
            );
            if !ok {
                return Err(Error::Config(format!(
                    "mechanism family for {:?} does not match its kind",
                    spec.name
                )));
            }
        }
        Ok(Self {
            graph,
            schema,
            mechanisms,
            seed,
        })
    }

    fn topological_order(&self) -> Vec<usize> {
        let n = self.graph.node_count();
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while order.len() < n {
            for v in 0..n {
                if placed[v] {
                    continue;
                }
                if self.graph.parents(v).iter().all(|&p| placed[p]) {
                    placed[v] = true;
                    order.push(v);
                }
            }
        }
        order
    }

    /// Ancestral sampling; deterministic given the spec seed.
    pub fn sample(&self, n: usize) -> Result<Dataset> {
        self.sample_with(n, 0, &BTreeMap::new())
    }

    /// Sampling with `do()` interventions: intervened nodes are severed from
    /// their parents and fixed. `stream` selects an independent noise stream.
    pub fn sample_with(
        &self,
        n: usize,
        stream: u64,
        interventions: &BTreeMap<String, f64>,
    ) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        for name in interventions.keys() {
            self.graph.node_index(name)?;
        }
        let order = self.topological_order();
        let p = self.graph.node_count();
        let name_of: Vec<&str> = (0..p).map(|v| self.graph.node_name(v)).collect();
        let fixed: BTreeMap<usize, f64> = interventions
            .iter()
            .map(|(k, v)| (self.graph.node_index(k).expect("checked"), *v))
            .collect();
        let base = crate::rng::mix(self.seed, stream);

        let rows: Vec<Vec<f64>> = exec::map_indexed(n, |i| {
            let mut row = vec![0.0; p];
            for &v in &order {
                if let Some(&val) = fixed.get(&v) {
                    row[v] = val;
                    continue;
                }
                let mech = &self.mechanisms[name_of[v]];
                let parent_vals: Vec<f64> = mech
                    .parents()
                    .iter()
                    .map(|pn| row[self.graph.node_index(pn).expect("validated")])
                    .collect();
                let eta = mech.linear(&parent_vals);
                let mut rng = crate::rng::substream(base, (i as u64) * (p as u64) + v as u64);
                row[v] = match mech {
                    Mechanism::Logistic { .. } => {
                        let prob = 1.0 / (1.0 + (-eta).exp());
                        f64::from(rng.gen_bool(prob.clamp(0.0, 1.0)))
                    }
                    Mechanism::LinearGaussian { noise_sd, .. } => {
                        let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                        eta + noise_sd * z
                    }
                    Mechanism::PoissonCount { .. } => {
                        let rate = eta.exp().clamp(1e-9, 1e6);
                        rand_distr::Poisson::new(rate).expect("positive rate").sample(&mut rng)
                    }
                };
            }
            row
        });

        let mut cols = vec![Vec::with_capacity(n); self.schema.len()];
        for row in &rows {
            for (j, spec) in self.schema.iter().enumerate() {
                cols[j].push(row[self.graph.node_index(&spec.name).expect("validated")]);
            }
        }
        Dataset::from_columns(self.schema.clone(), cols)
    }

    /// Interventional ground truth: E[y | do(t=1)] - E[y | do(t=0)] by
    /// Monte Carlo with common per-row noise across arms.
    pub fn true_ate(&self, t: &str, y: &str, n_mc: usize) -> Result<f64> {
        if n_mc < 10_000 {
            return Err(Error::Config(format!(
                "n_mc = {n_mc} is too small for a trustworthy oracle (need at least 10,000)"
            )));
        }
        let one: BTreeMap<String, f64> = [(t.to_string(), 1.0)].into_iter().collect();
        let zero: BTreeMap<String, f64> = [(t.to_string(), 0.0)].into_iter().collect();
        // Same noise stream in both arms: paired comparison.
        let d1 = self.sample_with(n_mc, 0xD0, &one)?;
        let d0 = self.sample_with(n_mc, 0xD0, &zero)?;
        let y1 = d1.column_by_name(y)?;
        let y0 = d0.column_by_name(y)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(mean(y1) - mean(y0))
    }

    /// Preset scenario specs over the six-variable schema.
    pub fn scenario(sc: Scenario, seed: u64) -> Self {
        let schema = default_schema();
        let nodes: Vec<String> = schema.iter().map(|s| s.name.clone()).collect();
        let mech = |pairs: Vec<(&str, Mechanism)>| -> BTreeMap<String, Mechanism> {
            pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
        };
        let logistic = |parents: &[&str], intercept: f64, coefficients: &[f64]| Mechanism::Logistic {
            parents: parents.iter().map(|s| s.to_string()).collect(),
            intercept,
            coefficients: coefficients.to_vec(),
        };
        let gaussian = |parents: &[&str], intercept: f64, coefficients: &[f64], sd: f64| {
            Mechanism::LinearGaussian {
                parents: parents.iter().map(|s| s.to_string()).collect(),
                intercept,
                coefficients: coefficients.to_vec(),
                noise_sd: sd,
            }
        };
        let poisson = |parents: &[&str], intercept: f64, coefficients: &[f64]| Mechanism::PoissonCount {
            parents: parents.iter().map(|s| s.to_string()).collect(),
            intercept,
            coefficients: coefficients.to_vec(),
        };

        let (graph, mechanisms) = match sc {
            Scenario::PaperLike | Scenario::NullEffect => {
                let graph = CausalGraph::dag(
                    nodes.clone(),
                    &[
                        ("Web3", "PvP"),
                        ("Web3", "R1"),
                        ("Web3", "Total_PvE_Battle"),
                        ("Time_Play_Level1", "Total_PvE_Battle"),
                        ("Total_PvE_Battle", "Total_Session"),
                        ("Total_PvE_Battle", "PvP"),
                        ("PvP", "R1"),
                    ],
                )
                .expect("preset graph is a DAG");
                let effect = if sc == Scenario::PaperLike { 0.85 } else { 0.0 };
                let mechanisms = mech(vec![
                    ("Web3", logistic(&[], -0.08, &[])),
                    ("Time_Play_Level1", gaussian(&[], 7.8, &[], 2.0)),
                    (
                        "Total_PvE_Battle",
                        poisson(&["Web3", "Time_Play_Level1"], 1.845, &[0.45, 0.03]),
                    ),
                    ("Total_Session", poisson(&["Total_PvE_Battle"], 1.127, &[0.02])),
                    (
                        "PvP",
                        logistic(&["Web3", "Total_PvE_Battle"], -2.45, &[1.3, 0.06]),
                    ),
                    ("R1", logistic(&["Web3", "PvP"], 0.2, &[1.1, effect])),
                ]);
                (graph, mechanisms)
            }
            Scenario::MediationOnly => {
                let graph = CausalGraph::dag(
                    nodes.clone(),
                    &[
                        ("Web3", "PvP"),
                        ("Web3", "R1"),
                        ("Web3", "Total_PvE_Battle"),
                        ("Time_Play_Level1", "Total_PvE_Battle"),
                        ("Total_PvE_Battle", "Total_Session"),
                        ("Total_PvE_Battle", "PvP"),
                        ("PvP", "Total_Session"),
                        ("Total_Session", "R1"),
                    ],
                )
                .expect("preset graph is a DAG");
                let mechanisms = mech(vec![
                    ("Web3", logistic(&[], -0.08, &[])),
                    ("Time_Play_Level1", gaussian(&[], 7.8, &[], 2.0)),
                    (
                        "Total_PvE_Battle",
                        poisson(&["Web3", "Time_Play_Level1"], 1.845, &[0.45, 0.03]),
                    ),
                    (
                        "Total_Session",
                        poisson(&["Total_PvE_Battle", "PvP"], 1.0, &[0.03, 0.55]),
                    ),
                    (
                        "PvP",
                        logistic(&["Web3", "Total_PvE_Battle"], -2.45, &[1.3, 0.06]),
                    ),
                    ("R1", logistic(&["Web3", "Total_Session"], -0.9, &[1.0, 0.18])),
                ]);
                (graph, mechanisms)
            }
            Scenario::PositivityViolation => {
                let graph = CausalGraph::dag(
                    nodes.clone(),
                    &[
                        ("Time_Play_Level1", "PvP"),
                        ("Web3", "R1"),
                        ("Total_PvE_Battle", "Total_Session"),
                        ("PvP", "R1"),
                    ],
                )
                .expect("preset graph is a DAG");
                let mechanisms = mech(vec![
                    ("Web3", logistic(&[], -0.08, &[])),
                    ("Time_Play_Level1", gaussian(&[], 7.8, &[], 2.0)),
                    ("Total_PvE_Battle", poisson(&[], 2.3, &[])),
                    ("Total_Session", poisson(&["Total_PvE_Battle"], 1.127, &[0.02])),
                    // Near-deterministic threshold selection on onboarding time.
                    ("PvP", logistic(&["Time_Play_Level1"], -3800.0, &[400.0])),
                    ("R1", logistic(&["Web3", "PvP"], 0.2, &[1.1, 0.85])),
                ]);
                (graph, mechanisms)
            }
            Scenario::KnowledgeOnly => {
                let graph = CausalGraph::dag(
                    nodes.clone(),
                    &[("Web3", "PvP"), ("Web3", "R1"), ("PvP", "R1")],
                )
                .expect("preset graph is a DAG");
                let mechanisms = mech(vec![
                    ("Web3", logistic(&[], -0.08, &[])),
                    ("Time_Play_Level1", gaussian(&[], 7.8, &[], 2.0)),
                    ("Total_PvE_Battle", poisson(&[], 2.3, &[])),
                    ("Total_Session", poisson(&[], 1.35, &[])),
                    ("PvP", logistic(&["Web3"], -1.9, &[1.4])),
                    ("R1", logistic(&["Web3", "PvP"], 0.2, &[1.0, 0.8])),
                ]);
                (graph, mechanisms)
            }
        };
        ScmSpec::new(graph, schema, mechanisms, seed).expect("presets are self-consistent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ci::{dg_lrt, CiTester, OracleCiTester};

    #[test]
    fn rejects_empty_sample() {
        let spec = ScmSpec::scenario(Scenario::PaperLike, 1);
        assert!(spec.sample(0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = ScmSpec::scenario(Scenario::PaperLike, 5);
        let a = spec.sample(500).unwrap();
        let b = spec.sample(500).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn zero_coefficient_treatment_is_independent_of_parents() {
        // Null scenario with the Web3 -> PvP coefficient zeroed: PvP must be
        // independent of Web3 in large samples.
        let mut spec = ScmSpec::scenario(Scenario::KnowledgeOnly, 7);
        spec.mechanisms.insert(
            "PvP".to_string(),
            Mechanism::Logistic {
                parents: vec!["Web3".to_string()],
                intercept: -1.0,
                coefficients: vec![0.0],
            },
        );
        let d = spec.sample(10_000).unwrap();
        let x = d.column_index("Web3").unwrap();
        let t = d.column_index("PvP").unwrap();
        let r = dg_lrt(&d, x, t, &[]).unwrap();
        assert!(r.p_value > 0.01, "p = {}", r.p_value);
    }

    #[test]
    fn paper_like_calibration_targets() {
        let spec = ScmSpec::scenario(Scenario::PaperLike, 11);
        let d = spec.sample(20_000).unwrap();
        let desc = d.describe_by_treatment();
        let by_name = |n: &str| desc.variables.iter().find(|v| v.name == n).unwrap().overall;
        assert!((by_name("PvP") - 0.2586).abs() < 0.05, "treated = {}", by_name("PvP"));
        assert!((by_name("R1") - 0.7039).abs() < 0.05, "retention = {}", by_name("R1"));
    }

    #[test]
    fn true_ate_null_is_zero() {
        let spec = ScmSpec::scenario(Scenario::NullEffect, 3);
        let ate = spec.true_ate("PvP", "R1", 100_000).unwrap();
        assert!(ate.abs() < 2.0 / (100_000f64).sqrt() + 1e-3, "{ate}");
    }

    #[test]
    fn true_ate_requires_mc_budget() {
        let spec = ScmSpec::scenario(Scenario::PaperLike, 3);
        assert!(spec.true_ate("PvP", "R1", 100).is_err());
    }

    #[test]
    fn mediation_chain_matches_closed_form() {
        // T -> M -> Y with binary M: E[Y|do(T=t)] sums over the two mediator
        // levels, all terms in closed form.
        use crate::dataset::{VarRole, Window};
        let schema = vec![
            VariableSpec::new("T", VarKind::Binary, VarRole::Treatment, Window::PreTreatment),
            VariableSpec::new("M", VarKind::Binary, VarRole::Covariate, Window::PreTreatment),
            VariableSpec::new("Y", VarKind::Binary, VarRole::Outcome, Window::Outcome),
        ];
        let graph = CausalGraph::dag(
            vec!["T".into(), "M".into(), "Y".into()],
            &[("T", "M"), ("M", "Y")],
        )
        .unwrap();
        let mechanisms: BTreeMap<String, Mechanism> = [
            (
                "T".to_string(),
                Mechanism::Logistic {
                    parents: vec![],
                    intercept: 0.0,
                    coefficients: vec![],
                },
            ),
            (
                "M".to_string(),
                Mechanism::Logistic {
                    parents: vec!["T".to_string()],
                    intercept: -0.4,
                    coefficients: vec![1.1],
                },
            ),
            (
                "Y".to_string(),
                Mechanism::Logistic {
                    parents: vec!["M".to_string()],
                    intercept: -0.2,
                    coefficients: vec![0.9],
                },
            ),
        ]
        .into_iter()
        .collect();
        let spec = ScmSpec::new(graph, schema, mechanisms, 17).unwrap();
        let sigma = |x: f64| 1.0 / (1.0 + (-x as f64).exp());
        let ey = |t: f64| {
            let pm = sigma(-0.4 + 1.1 * t);
            pm * sigma(0.7) + (1.0 - pm) * sigma(-0.2)
        };
        let closed = ey(1.0) - ey(0.0);
        let mc = spec.true_ate("T", "Y", 200_000).unwrap();
        assert!((mc - closed).abs() < 0.01, "mc = {mc}, closed = {closed}");
    }

    #[test]
    fn do_leaves_nontreatment_marginals_unchanged() {
        let spec = ScmSpec::scenario(Scenario::PaperLike, 19);
        let natural = spec.sample_with(50_000, 0xD0, &BTreeMap::new()).unwrap();
        let dosed = spec
            .sample_with(
                50_000,
                0xD0,
                &[("PvP".to_string(), 1.0)].into_iter().collect(),
            )
            .unwrap();
        // Parents of the treatment keep their distribution under do().
        for col in ["Web3", "Total_PvE_Battle", "Time_Play_Level1"] {
            let a = natural.column_by_name(col).unwrap();
            let b = dosed.column_by_name(col).unwrap();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!((mean(a) - mean(b)).abs() < 1e-9, "{col}");
        }
    }

    #[test]
    fn true_ate_is_stable_across_seeds() {
        let a = ScmSpec::scenario(Scenario::PaperLike, 101).true_ate("PvP", "R1", 150_000).unwrap();
        let b = ScmSpec::scenario(Scenario::PaperLike, 202).true_ate("PvP", "R1", 150_000).unwrap();
        // Paired sampling puts the per-arm MC standard error near
        // sqrt(0.25 / n); allow three of those.
        let se = (0.25f64 / 150_000.0).sqrt();
        assert!((a - b).abs() < 3.0 * 2.0 * se, "{a} vs {b}");
    }

    #[test]
    fn samples_respect_graph_d_separations() {
        // Every d-separation of the generating DAG must be accepted by a CI
        // test on a large sample at alpha = 0.01 (failure rate <= 5%).
        let spec = ScmSpec::scenario(Scenario::PaperLike, 23);
        let d = spec.sample(50_000).unwrap();
        let oracle = OracleCiTester::new(spec.graph.clone());
        let p = d.p();
        let mut checked = 0usize;
        let mut failures = 0usize;
        for x in 0..p {
            for y in (x + 1)..p {
                for z_mask in 0u32..(1 << p) {
                    if z_mask & (1 << x) != 0 || z_mask & (1 << y) != 0 {
                        continue;
                    }
                    let z: Vec<usize> = (0..p).filter(|&j| z_mask & (1 << j) != 0).collect();
                    if z.len() > 2 {
                        continue;
                    }
                    if oracle.test(x, y, &z).unwrap().p_value == 1.0 {
                        checked += 1;
                        let r = dg_lrt(&d, x, y, &z).unwrap();
                        if !r.independent_at(0.01) {
                            failures += 1;
                        }
                    }
                }
            }
        }
        assert!(checked > 0);
        assert!(
            (failures as f64) <= 0.05 * checked as f64,
            "{failures} of {checked} implied independencies rejected"
        );
    }
}
