//! Pipeline orchestration: configuration, end-to-end execution, and report
//! emission.
//!
//! A run executes dataset loading (or synthesis), the discovery grid per
//! constraint level, the admissibility gate, overlap diagnostics, estimation,
//! refutation, labeling, and ladder aggregation, then writes `report.json`,
//! `runs.csv`, and one edge-list file per discovered graph. Output bytes are
//! a deterministic function of (config, data, seeds).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VariableSpec, VarRole};
use crate::discovery::{Algorithm, DEFAULT_ALPHA_GRID};
use crate::effect::EstimatorKind;
use crate::error::{Error, Result};
use crate::graph::{to_edgelist, ConstraintLevel};
use crate::refute::{
    ladder_summary, run_grid, runs_csv, DecisionLabel, LabelMode, LadderSummary, RefuteSettings,
    RunPlan, RunRecord, TesterChoice,
};
use crate::synth::{Scenario, ScmSpec};

pub const REPORT_SCHEMA_VERSION: &str = "1";

/// Where the sample comes from: a CSV file or a synthetic scenario.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Synth {
        scenario: Scenario,
        n: usize,
        #[serde(default = "default_synth_seed")]
        synth_seed: u64,
    },
}

fn default_synth_seed() -> u64 {
    1
}

/// Tree-structured pipeline configuration, parsed from a single JSON document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSource,
    /// Column schema; optional for synthetic sources, which carry their own.
    #[serde(default)]
    pub schema: Option<Vec<VariableSpec>>,
    pub treatment: String,
    pub outcome: String,
    #[serde(default = "default_levels")]
    pub levels: Vec<ConstraintLevel>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_placebo_permutations")]
    pub placebo_permutations: usize,
    #[serde(default = "default_subset_fractions")]
    pub subset_fractions: Vec<f64>,
    #[serde(default = "default_label_mode")]
    pub label_mode: LabelMode,
    #[serde(default = "default_ci_test")]
    pub ci_test: TesterChoice,
    #[serde(default = "default_max_condset")]
    pub max_condset: usize,
    #[serde(default = "default_balance_threshold")]
    pub balance_threshold: f64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_levels() -> Vec<ConstraintLevel> {
    vec![ConstraintLevel::C3]
}
fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Pc]
}
fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHA_GRID.to_vec()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Reg, EstimatorKind::Ipw, EstimatorKind::Dr]
}
fn default_bootstrap_b() -> usize {
    1000
}
fn default_placebo_permutations() -> usize {
    200
}
fn default_subset_fractions() -> Vec<f64> {
    vec![0.1, 0.5, 0.8, 0.9]
}
fn default_label_mode() -> LabelMode {
    LabelMode::CiRule
}
fn default_ci_test() -> TesterChoice {
    TesterChoice::DgLrt
}
fn default_max_condset() -> usize {
    8
}
fn default_balance_threshold() -> f64 {
    0.1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read config {:?}: {e}", path.as_ref())))?;
        Self::from_json(&text)
    }

    /// Field-level validation; all problems are reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Some(schema) = &self.schema {
            if let Err(e) = crate::dataset::validate_schema(schema) {
                problems.push(format!("schema: {e}"));
            } else {
                self.check_names(schema, &mut problems);
            }
        } else if let DataSource::Csv { .. } = self.data {
            problems.push("schema: required when data comes from a CSV file".into());
        } else {
            self.check_names(&crate::dataset::default_schema(), &mut problems);
        }
        if self.levels.is_empty() {
            problems.push("levels: must not be empty".into());
        }
        if self.algorithms.is_empty() {
            problems.push("algorithms: must not be empty".into());
        }
        if self.alphas.is_empty() {
            problems.push("alphas: must not be empty".into());
        }
        for &a in &self.alphas {
            if !(a > 0.0 && a < 1.0) {
                problems.push(format!("alphas: {a} outside (0, 1)"));
            }
        }
        if self.seeds.is_empty() {
            problems.push("seeds: must not be empty".into());
        }
        if self.estimators.is_empty() {
            problems.push("estimators: must not be empty".into());
        }
        if !self.estimators.contains(&EstimatorKind::Dr) {
            problems.push("estimators: the doubly robust estimator is required as primary".into());
        }
        if self.bootstrap_b < 100 {
            problems.push(format!("bootstrap_b: {} below the minimum of 100", self.bootstrap_b));
        }
        if self.placebo_permutations < 200 {
            problems.push(format!(
                "placebo_permutations: {} below the minimum of 200",
                self.placebo_permutations
            ));
        }
        for &f in &self.subset_fractions {
            if !(f > 0.0 && f <= 1.0) {
                problems.push(format!("subset_fractions: {f} outside (0, 1]"));
            }
        }
        if self.ci_test == TesterChoice::Oracle && !matches!(self.data, DataSource::Synth { .. }) {
            problems.push("ci_test: oracle mode requires a synthetic data source".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn check_names(&self, schema: &[VariableSpec], problems: &mut Vec<String>) {
        match schema.iter().find(|s| s.name == self.treatment) {
            None => problems.push(format!("treatment: {:?} not in schema", self.treatment)),
            Some(s) if s.role != VarRole::Treatment => {
                problems.push(format!("treatment: {:?} is not the schema treatment", self.treatment))
            }
            _ => {}
        }
        match schema.iter().find(|s| s.name == self.outcome) {
            None => problems.push(format!("outcome: {:?} not in schema", self.outcome)),
            Some(s) if s.role != VarRole::Outcome => {
                problems.push(format!("outcome: {:?} is not the schema outcome", self.outcome))
            }
            _ => {}
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetInfo {
    pub n: usize,
    pub p: usize,
    pub hash: String,
    pub dropped_rows: usize,
}

/// Overall decision per the validation protocol, aggregated over the grid.
#[derive(Clone, Debug, Serialize)]
pub struct OverallDecision {
    pub label: DecisionLabel,
    pub rationale: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema_version: String,
    pub config: PipelineConfig,
    pub dataset: DatasetInfo,
    pub runs: Vec<RunRecord>,
    pub ladder: LadderSummary,
    pub decision: OverallDecision,
}

/// Decide the overall assessment: trust when at least one run earned trust
/// and defined effects are stable and sign-consistent across all identifiable
/// runs; caution when identifiable results exist but are mixed; reject when
/// nothing identifiable survives.
fn overall_decision(records: &[RunRecord]) -> OverallDecision {
    let defined: Vec<f64> = records.iter().filter_map(|r| r.primary_ate()).collect();
    if defined.is_empty() {
        return OverallDecision {
            label: DecisionLabel::Reject,
            rationale: "no run passed the admissibility gate with a defined effect".into(),
        };
    }
    let trusted = records.iter().filter(|r| r.label == DecisionLabel::Trust).count();
    let sign_consistent = defined.iter().all(|&v| v >= 0.0) || defined.iter().all(|&v| v <= 0.0);
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    let sd = (defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / defined.len() as f64).sqrt();
    let stable = sd <= 0.02;
    if trusted > 0 && sign_consistent && stable {
        OverallDecision {
            label: DecisionLabel::Trust,
            rationale: format!(
                "{trusted} trusted run(s); defined effects stable (sd = {sd:.4}) and sign-consistent"
            ),
        }
    } else if sign_consistent {
        OverallDecision {
            label: DecisionLabel::Caution,
            rationale: format!(
                "effects sign-consistent but {} (sd = {sd:.4})",
                if trusted == 0 { "no run earned trust" } else { "magnitude unstable" }
            ),
        }
    } else {
        OverallDecision {
            label: DecisionLabel::Reject,
            rationale: "identifiable effects disagree in sign".into(),
        }
    }
}

/// Files written by a pipeline run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub report_path: PathBuf,
    pub runs_csv_path: PathBuf,
    pub graph_paths: Vec<PathBuf>,
    pub report: String,
}

/// Load or synthesize the configured dataset.
pub fn load_data(config: &PipelineConfig) -> Result<(Dataset, Option<ScmSpec>)> {
    match &config.data {
        DataSource::Csv { path } => {
            let schema = config
                .schema
                .as_ref()
                .ok_or_else(|| Error::Config("schema required for CSV data".into()))?;
            Ok((Dataset::load_csv(path, schema)?, None))
        }
        DataSource::Synth {
            scenario,
            n,
            synth_seed,
        } => {
            let spec = ScmSpec::scenario(*scenario, *synth_seed);
            let d = spec.sample(*n)?;
            Ok((d, Some(spec)))
        }
    }
}

/// Execute the configured grid over every constraint level.
pub fn execute(config: &PipelineConfig) -> Result<(Dataset, Vec<RunRecord>)> {
    let (data, scm) = load_data(config)?;
    let settings = RefuteSettings {
        placebo_permutations: config.placebo_permutations,
        subset_fractions: config.subset_fractions.clone(),
        bootstrap_b: config.bootstrap_b,
        label_mode: config.label_mode,
        balance_threshold: config.balance_threshold,
        ..RefuteSettings::default()
    };
    let mut records = Vec::new();
    for &level in &config.levels {
        let plan = RunPlan {
            algorithms: config.algorithms.clone(),
            alphas: config.alphas.clone(),
            seeds: config.seeds.clone(),
            level,
            estimators: config.estimators.clone(),
            settings: settings.clone(),
            tester: config.ci_test.clone(),
            oracle_graph: scm.as_ref().map(|s| s.graph.clone()),
            max_condset: config.max_condset,
        };
        records.extend(run_grid(&data, &plan)?);
    }
    sort_records(&mut records);
    Ok((data, records))
}

fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        (a.level, a.algorithm, a.alpha, a.seed)
            .partial_cmp(&(b.level, b.algorithm, b.alpha, b.seed))
            .expect("finite keys")
    });
}

/// Run end to end and write `report.json`, `runs.csv`, and `graphs/*.edgelist`
/// under the output directory. Rejection everywhere is still a successful run.
pub fn run(config: &PipelineConfig) -> Result<RunArtifacts> {
    let (data, records) = execute(config)?;
    write_report(config, &data, records)
}

/// Assemble and write the report files for completed grid records.
pub fn write_report(config: &PipelineConfig, data: &Dataset, records: Vec<RunRecord>) -> Result<RunArtifacts> {
    let out_dir = &config.out_dir;
    std::fs::create_dir_all(out_dir).map_err(Error::Io)?;
    let graphs_dir = out_dir.join("graphs");
    std::fs::create_dir_all(&graphs_dir).map_err(Error::Io)?;

    let dataset_hash = data.hash();
    let mut graph_paths = Vec::new();
    for r in &records {
        if let Some(g) = &r.graph {
            let file = graphs_dir.join(format!(
                "{}_{}_a{}_s{}.edgelist",
                r.level, r.algorithm, r.alpha, r.seed
            ));
            let comments = vec![
                format!("algorithm={}", r.algorithm),
                format!("alpha={}", r.alpha),
                format!("seed={}", r.seed),
                format!("level={}", r.level),
                format!("dataset={dataset_hash}"),
            ];
            std::fs::write(&file, to_edgelist(g, &comments))?;
            graph_paths.push(file);
        }
    }

    let ladder = ladder_summary(&records);
    let decision = overall_decision(&records);
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        config: config.clone(),
        dataset: DatasetInfo {
            n: data.n(),
            p: data.p(),
            hash: dataset_hash,
            dropped_rows: data.dropped_rows(),
        },
        runs: records,
        ladder,
        decision,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, &json)?;
    let runs_csv_path = out_dir.join("runs.csv");
    std::fs::write(&runs_csv_path, runs_csv(&report.runs))?;
    Ok(RunArtifacts {
        report_path,
        runs_csv_path,
        graph_paths,
        report: json,
    })
}

/// Summaries of label counts, used by the CLI log line.
pub fn label_counts(records: &[RunRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.label.to_string()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_config(out: &Path) -> PipelineConfig {
        PipelineConfig {
            data: DataSource::Synth {
                scenario: Scenario::KnowledgeOnly,
                n: 4000,
                synth_seed: 3,
            },
            schema: None,
            treatment: "PvP".into(),
            outcome: "R1".into(),
            levels: vec![ConstraintLevel::C2],
            algorithms: vec![Algorithm::Pc],
            alphas: vec![0.01],
            seeds: vec![1],
            estimators: default_estimators(),
            bootstrap_b: 100,
            placebo_permutations: 200,
            subset_fractions: vec![0.5],
            label_mode: LabelMode::CiRule,
            ci_test: TesterChoice::DgLrt,
            max_condset: 3,
            balance_threshold: 0.1,
            out_dir: out.to_path_buf(),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_config(dir.path());
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = PipelineConfig::from_json(&text).unwrap();
        assert_eq!(back.treatment, "PvP");
        assert!(matches!(back.data, DataSource::Synth { .. }));
    }

    #[test]
    fn missing_treatment_is_field_level_error() {
        let text = r#"{
            "data": {"scenario": "paper_like", "n": 100},
            "treatment": "NotAColumn",
            "outcome": "R1"
        }"#;
        let err = PipelineConfig::from_json(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("treatment"), "{msg}");
        assert!(msg.contains("NotAColumn"), "{msg}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = r#"{
            "data": {"scenario": "paper_like", "n": 100},
            "treatment": "PvP",
            "outcome": "R1",
            "surprise": 1
        }"#;
        assert!(PipelineConfig::from_json(text).is_err());
    }

    #[test]
    fn oracle_tester_requires_synth_source() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_config(dir.path());
        cfg.ci_test = TesterChoice::Oracle;
        assert!(cfg.validate().is_ok());
        cfg.data = DataSource::Csv {
            path: PathBuf::from("x.csv"),
        };
        cfg.schema = Some(crate::dataset::default_schema());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_record_report_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_config(dir.path());
        cfg.out_dir = dir.path().join("empty");
        let (data, _) = load_data(&cfg).unwrap();
        let artifacts = write_report(&cfg, &data, Vec::new()).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&artifacts.report).unwrap();
        assert_eq!(parsed["runs"].as_array().unwrap().len(), 0);
        assert_eq!(parsed["decision"]["label"], "reject");
    }
}
