//! Typed tabular samples with a declared treatment/outcome schema.
//!
//! Columns carry a kind (binary / count / continuous), a causal role, and a
//! temporal window tag. Validation enforces the six-variable-style contract:
//! exactly one binary treatment, exactly one binary outcome observed in the
//! outcome window, and all other variables pre-treatment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Binary,
    Count,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarRole {
    Treatment,
    Outcome,
    Covariate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    PreTreatment,
    Outcome,
}

/// Declaration of one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    pub role: VarRole,
    pub window: Window,
}

impl VariableSpec {
    pub fn new(name: &str, kind: VarKind, role: VarRole, window: Window) -> Self {
        Self {
            name: name.to_string(),
            kind,
            role,
            window,
        }
    }
}

/// Check the schema-level invariants shared by all constructors.
pub fn validate_schema(specs: &[VariableSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Schema("schema has no variables".into()));
    }
    let mut seen = BTreeSet::new();
    for s in specs {
        if s.name.trim().is_empty() || s.name.chars().any(char::is_whitespace) {
            return Err(Error::Schema(format!(
                "variable name {:?} must be non-empty and whitespace-free",
                s.name
            )));
        }
        if !seen.insert(s.name.clone()) {
            return Err(Error::Schema(format!("duplicate variable name {:?}", s.name)));
        }
    }
    let treatments: Vec<_> = specs.iter().filter(|s| s.role == VarRole::Treatment).collect();
    let outcomes: Vec<_> = specs.iter().filter(|s| s.role == VarRole::Outcome).collect();
    if treatments.len() != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one treatment variable, found {}",
            treatments.len()
        )));
    }
    if outcomes.len() != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one outcome variable, found {}",
            outcomes.len()
        )));
    }
    if treatments[0].kind != VarKind::Binary {
        return Err(Error::Schema("treatment variable must be binary".into()));
    }
    if outcomes[0].kind != VarKind::Binary {
        return Err(Error::Schema("outcome variable must be binary".into()));
    }
    for s in specs {
        let want = if s.role == VarRole::Outcome {
            Window::Outcome
        } else {
            Window::PreTreatment
        };
        if s.window != want {
            return Err(Error::Schema(format!(
                "variable {:?} has window {:?}, expected {:?} for its role",
                s.name, s.window, want
            )));
        }
    }
    Ok(())
}

/// Validated n x p sample, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    specs: Vec<VariableSpec>,
    cols: Vec<Vec<f64>>,
    n: usize,
    dropped_rows: usize,
}

/// Per-variable means overall and within treatment strata.
#[derive(Clone, Debug, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub overall: f64,
    pub treated: Option<f64>,
    pub control: Option<f64>,
}

/// Output of [`Dataset::describe_by_treatment`].
#[derive(Clone, Debug, Serialize)]
pub struct TreatmentDescription {
    pub variables: Vec<VariableSummary>,
    /// mean(Y | T=1) - mean(Y | T=0); absent when a stratum is empty.
    pub naive_risk_difference: Option<f64>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

fn check_value(spec: &VariableSpec, v: f64, row: usize) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite value in column {:?} at row {row}",
            spec.name
        )));
    }
    match spec.kind {
        VarKind::Binary => {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Domain(format!(
                    "binary column {:?} has value {v} at row {row}, expected 0 or 1",
                    spec.name
                )));
            }
        }
        VarKind::Count => {
            if v < 0.0 || (v - v.round()).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "count column {:?} has value {v} at row {row}, expected a non-negative integer",
                    spec.name
                )));
            }
        }
        VarKind::Continuous => {}
    }
    Ok(())
}

impl Dataset {
    /// Build from column vectors, validating every cell.
    pub fn from_columns(specs: Vec<VariableSpec>, cols: Vec<Vec<f64>>) -> Result<Self> {
        validate_schema(&specs)?;
        if cols.len() != specs.len() {
            return Err(Error::Schema(format!(
                "{} columns supplied for {} schema variables",
                cols.len(),
                specs.len()
            )));
        }
        let n = cols.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::Domain("dataset has no rows".into()));
        }
        for (spec, col) in specs.iter().zip(&cols) {
            if col.len() != n {
                return Err(Error::Schema(format!(
                    "column {:?} has {} rows, expected {n}",
                    spec.name,
                    col.len()
                )));
            }
            for (row, &v) in col.iter().enumerate() {
                check_value(spec, v, row)?;
            }
        }
        Ok(Self {
            specs,
            cols,
            n,
            dropped_rows: 0,
        })
    }

    /// Column frame without the treatment/outcome schema contract: cell
    /// values are still validated per kind, names must be unique. Intended
    /// for conditional-independence diagnostics on arbitrary frames.
    pub fn from_analysis_columns(specs: Vec<VariableSpec>, cols: Vec<Vec<f64>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &specs {
            if !seen.insert(s.name.clone()) {
                return Err(Error::Schema(format!("duplicate variable name {:?}", s.name)));
            }
        }
        if cols.len() != specs.len() {
            return Err(Error::Schema(format!(
                "{} columns supplied for {} schema variables",
                cols.len(),
                specs.len()
            )));
        }
        let n = cols.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::Domain("dataset has no rows".into()));
        }
        for (spec, col) in specs.iter().zip(&cols) {
            if col.len() != n {
                return Err(Error::Schema(format!(
                    "column {:?} has {} rows, expected {n}",
                    spec.name,
                    col.len()
                )));
            }
            for (row, &v) in col.iter().enumerate() {
                check_value(spec, v, row)?;
            }
        }
        Ok(Self {
            specs,
            cols,
            n,
            dropped_rows: 0,
        })
    }

    /// Rows already validated upstream (bootstrap resamples, subsamples).
    pub(crate) fn from_columns_unchecked(specs: Vec<VariableSpec>, cols: Vec<Vec<f64>>) -> Self {
        let n = cols.first().map_or(0, Vec::len);
        Self {
            specs,
            cols,
            n,
            dropped_rows: 0,
        }
    }

    /// Load a comma-separated file with a header row. Header order may differ
    /// from schema order; rows with missing cells in any schema column are
    /// dropped and counted.
    pub fn load_csv<P: AsRef<Path>>(path: P, specs: &[VariableSpec]) -> Result<Self> {
        validate_schema(specs)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())
            .map_err(|e| Error::Schema(format!("cannot open {:?}: {e}", path.as_ref())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
            .clone();
        let mut col_of = Vec::with_capacity(specs.len());
        for spec in specs {
            let idx = headers
                .iter()
                .position(|h| h == spec.name)
                .ok_or_else(|| Error::Schema(format!("missing column {:?}", spec.name)))?;
            col_of.push(idx);
        }

        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); specs.len()];
        let mut dropped = 0usize;
        let mut kept = 0usize;
        for (row_idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse {
                row: row_idx,
                column: String::new(),
                message: e.to_string(),
            })?;
            let mut parsed = Vec::with_capacity(specs.len());
            let mut missing = false;
            for (spec, &ci) in specs.iter().zip(&col_of) {
                let cell = record.get(ci).unwrap_or("");
                if is_missing(cell) {
                    missing = true;
                    break;
                }
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: row_idx,
                    column: spec.name.clone(),
                    message: format!("cannot parse {cell:?} as a number"),
                })?;
                check_value(spec, v, row_idx)?;
                parsed.push(v);
            }
            if missing {
                dropped += 1;
                continue;
            }
            for (col, v) in cols.iter_mut().zip(parsed) {
                col.push(v);
            }
            kept += 1;
        }
        if kept == 0 {
            return Err(Error::Domain("no complete rows after missingness removal".into()));
        }
        Ok(Self {
            specs: specs.to_vec(),
            cols,
            n: kept,
            dropped_rows: dropped,
        })
    }

    /// Canonical CSV serialization: schema column order, shortest round-trip
    /// float formatting.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.specs.iter().map(|s| s.name.as_str()).collect();
        out.push_str(&names.join(","));
        out.push('\n');
        for row in 0..self.n {
            for (j, col) in self.cols.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", col[row]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// SHA-256 of the canonical CSV serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_csv_string().as_bytes());
        let mut s = String::with_capacity(71);
        s.push_str("sha256:");
        for b in digest {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.specs.len()
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn column(&self, idx: usize) -> &[f64] {
        &self.cols[idx]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[f64]> {
        Ok(self.column(self.column_index(name)?))
    }

    pub fn treatment_index(&self) -> usize {
        self.specs
            .iter()
            .position(|s| s.role == VarRole::Treatment)
            .expect("schema validated")
    }

    pub fn outcome_index(&self) -> usize {
        self.specs
            .iter()
            .position(|s| s.role == VarRole::Outcome)
            .expect("schema validated")
    }

    pub fn treatment_name(&self) -> &str {
        &self.specs[self.treatment_index()].name
    }

    pub fn outcome_name(&self) -> &str {
        &self.specs[self.outcome_index()].name
    }

    /// New dataset holding the given rows (duplicates allowed, order kept).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let cols = self
            .cols
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        Dataset::from_columns_unchecked(self.specs.clone(), cols)
    }

    /// Copy with one column replaced; values must already satisfy the column kind.
    pub fn with_column_replaced(&self, idx: usize, values: Vec<f64>) -> Result<Dataset> {
        if values.len() != self.n {
            return Err(Error::Schema(format!(
                "replacement column has {} rows, expected {}",
                values.len(),
                self.n
            )));
        }
        for (row, &v) in values.iter().enumerate() {
            check_value(&self.specs[idx], v, row)?;
        }
        let mut cols = self.cols.clone();
        cols[idx] = values;
        Ok(Dataset::from_columns_unchecked(self.specs.clone(), cols))
    }

    /// Per-variable means overall and by treatment stratum, plus the naive
    /// treated-control outcome difference.
    pub fn describe_by_treatment(&self) -> TreatmentDescription {
        let t = self.column(self.treatment_index());
        let treated: Vec<usize> = (0..self.n).filter(|&i| t[i] == 1.0).collect();
        let control: Vec<usize> = (0..self.n).filter(|&i| t[i] == 0.0).collect();
        let mean = |col: &[f64], rows: &[usize]| -> Option<f64> {
            if rows.is_empty() {
                None
            } else {
                Some(rows.iter().map(|&i| col[i]).sum::<f64>() / rows.len() as f64)
            }
        };
        let variables = self
            .specs
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let col = &self.cols[j];
                VariableSummary {
                    name: s.name.clone(),
                    overall: col.iter().sum::<f64>() / self.n as f64,
                    treated: mean(col, &treated),
                    control: mean(col, &control),
                }
            })
            .collect();
        let y = self.column(self.outcome_index());
        let naive = match (mean(y, &treated), mean(y, &control)) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        TreatmentDescription {
            variables,
            naive_risk_difference: naive,
        }
    }
}

/// The six-variable telemetry-style schema used by the synthetic scenarios.
pub fn default_schema() -> Vec<VariableSpec> {
    vec![
        VariableSpec::new("Web3", VarKind::Binary, VarRole::Covariate, Window::PreTreatment),
        VariableSpec::new(
            "Time_Play_Level1",
            VarKind::Continuous,
            VarRole::Covariate,
            Window::PreTreatment,
        ),
        VariableSpec::new(
            "Total_PvE_Battle",
            VarKind::Count,
            VarRole::Covariate,
            Window::PreTreatment,
        ),
        VariableSpec::new(
            "Total_Session",
            VarKind::Count,
            VarRole::Covariate,
            Window::PreTreatment,
        ),
        VariableSpec::new("PvP", VarKind::Binary, VarRole::Treatment, Window::PreTreatment),
        VariableSpec::new("R1", VarKind::Binary, VarRole::Outcome, Window::Outcome),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_schema() -> Vec<VariableSpec> {
        default_schema()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "Web3,Time_Play_Level1,Total_PvE_Battle,Total_Session,PvP,R1\n";

    #[test]
    fn loads_valid_fixture() {
        let f = write_temp(&format!(
            "{HEADER}1,7.5,10,4,1,1\n0,8.1,3,2,0,1\n1,6.9,12,5,1,0\n0,7.0,8,3,0,0\n"
        ));
        let d = Dataset::load_csv(f.path(), &fixture_schema()).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.dropped_rows(), 0);
    }

    #[test]
    fn drops_row_with_missing_cell() {
        let f = write_temp(&format!(
            "{HEADER}1,7.5,10,4,1,1\n0,8.1,3,,0,1\n1,6.9,12,5,1,0\n"
        ));
        let d = Dataset::load_csv(f.path(), &fixture_schema()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.dropped_rows(), 1);
    }

    #[test]
    fn binary_domain_error_names_row() {
        let f = write_temp(&format!("{HEADER}1,7.5,10,4,1,1\n0,8.1,3,2,2,1\n"));
        let err = Dataset::load_csv(f.path(), &fixture_schema()).unwrap_err();
        match err {
            Error::Domain(msg) => {
                assert!(msg.contains("PvP"), "{msg}");
                assert!(msg.contains("row 1"), "{msg}");
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_temp("Web3,PvP,R1\n1,1,1\n");
        let err = Dataset::load_csv(f.path(), &fixture_schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn header_order_may_differ() {
        let f = write_temp("R1,PvP,Total_Session,Total_PvE_Battle,Time_Play_Level1,Web3\n1,1,4,10,7.5,1\n0,0,2,3,8.1,0\n");
        let d = Dataset::load_csv(f.path(), &fixture_schema()).unwrap();
        assert_eq!(d.column_by_name("Web3").unwrap(), &[1.0, 0.0]);
        assert_eq!(d.column_by_name("R1").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn describe_matches_hand_arithmetic() {
        // rows {(T=1,Y=1),(T=1,Y=1),(T=0,Y=0),(T=0,Y=1)}
        let f = write_temp(&format!(
            "{HEADER}0,1,0,0,1,1\n0,1,0,0,1,1\n0,1,0,0,0,0\n0,1,0,0,0,1\n"
        ));
        let d = Dataset::load_csv(f.path(), &fixture_schema()).unwrap();
        let desc = d.describe_by_treatment();
        let r1 = desc.variables.iter().find(|v| v.name == "R1").unwrap();
        assert_eq!(r1.treated, Some(1.0));
        assert_eq!(r1.control, Some(0.5));
        assert_eq!(desc.naive_risk_difference, Some(0.5));
    }

    #[test]
    fn all_treated_flags_undefined_control() {
        let f = write_temp(&format!("{HEADER}0,1,0,0,1,1\n1,2,3,4,1,0\n"));
        let d = Dataset::load_csv(f.path(), &fixture_schema()).unwrap();
        let desc = d.describe_by_treatment();
        assert!(desc.naive_risk_difference.is_none());
        assert!(desc.variables[0].control.is_none());
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let f = write_temp(&format!(
            "{HEADER}1,7.25,10,4,1,1\n0,8.125,3,2,0,1\n1,6.5,12,5,1,0\n"
        ));
        let d = Dataset::load_csv(f.path(), &fixture_schema()).unwrap();
        let g = write_temp(&d.to_csv_string());
        let d2 = Dataset::load_csv(g.path(), &fixture_schema()).unwrap();
        for j in 0..d.p() {
            for i in 0..d.n() {
                assert!((d.column(j)[i] - d2.column(j)[i]).abs() <= 1e-12);
            }
        }
        assert_eq!(d.to_csv_string(), d2.to_csv_string());
    }

    #[test]
    fn row_permutation_leaves_statistics_unchanged() {
        let f = write_temp(&format!(
            "{HEADER}1,7.5,10,4,1,1\n0,8.1,3,2,0,1\n1,6.9,12,5,1,0\n0,7.0,8,3,0,0\n"
        ));
        let d = Dataset::load_csv(f.path(), &fixture_schema()).unwrap();
        let perm = d.select_rows(&[3, 1, 0, 2]);
        let a = d.describe_by_treatment();
        let b = perm.describe_by_treatment();
        for (x, y) in a.variables.iter().zip(&b.variables) {
            assert!((x.overall - y.overall).abs() < 1e-12);
        }
        assert_eq!(a.naive_risk_difference, b.naive_risk_difference);
    }

    #[test]
    fn schema_requires_one_binary_treatment() {
        let mut specs = fixture_schema();
        specs[4].kind = VarKind::Count;
        assert!(matches!(validate_schema(&specs), Err(Error::Schema(_))));
        let mut specs = fixture_schema();
        specs[0].role = VarRole::Treatment;
        assert!(matches!(validate_schema(&specs), Err(Error::Schema(_))));
    }
}
