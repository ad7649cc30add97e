//! Conditional independence tests for mixed binary/count/continuous data.
//!
//! Two data-driven tests are provided: the Fisher-z partial correlation test
//! and a Gaussian likelihood-ratio test on a one-hot embedding of discrete
//! columns (binary columns embed to their single indicator after dropping the
//! reference level; count columns are taken as numeric). An oracle tester
//! backed by d-separation on a known graph supports discovery testing without
//! sampling noise.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::dataset::{Dataset, VarKind};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;

/// Outcome of one conditional independence test.
#[derive(Clone, Debug, PartialEq)]
pub struct CiTestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Chi-square degrees of freedom for the LRT; conditioning-set size for
    /// Fisher-z; zero for the oracle.
    pub dof_or_condset: usize,
    /// Set when a correlation had to be clamped away from +-1.
    pub clamped: bool,
}

impl CiTestResult {
    /// Independence decision at level `alpha`: p > alpha.
    pub fn independent_at(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// A conditional independence decision procedure over dataset column indices.
pub trait CiTester: Sync {
    fn test(&self, x: usize, y: usize, z: &[usize]) -> Result<CiTestResult>;

    /// Human-readable name for run provenance.
    fn name(&self) -> &'static str;
}

const CORR_CLAMP: f64 = 1.0 - 1e-12;
const COV_RIDGE: f64 = 1e-10;

fn covariance_matrix(columns: &[&[f64]]) -> DMatrix<f64> {
    let k = columns.len();
    let n = columns[0].len();
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let mut s = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut acc = 0.0;
            for r in 0..n {
                acc += (columns[i][r] - means[i]) * (columns[j][r] - means[j]);
            }
            let v = acc / n as f64;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

fn log_det_psd(s: &DMatrix<f64>) -> Result<f64> {
    if s.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = s.clone().cholesky().or_else(|| {
        let mut ridged = s.clone();
        for i in 0..ridged.nrows() {
            ridged[(i, i)] += COV_RIDGE;
        }
        ridged.cholesky()
    });
    let chol = chol.ok_or_else(|| Error::DegenerateData("singular covariance".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Returns the partial correlation and whether the ridge fallback was needed
/// (near-singular correlation, i.e. effectively perfect linear dependence).
fn partial_correlation(corr: &DMatrix<f64>) -> Result<(f64, bool)> {
    // Precision-matrix formulation over [x, y, z...]: r = -P01 / sqrt(P00 P11).
    let mut ridged_fallback = false;
    let inv = corr.clone().try_inverse().filter(|m| m.iter().all(|v| v.is_finite()));
    let inv = match inv {
        Some(m) => Some(m),
        None => {
            ridged_fallback = true;
            let mut ridged = corr.clone();
            for i in 0..ridged.nrows() {
                ridged[(i, i)] += COV_RIDGE;
            }
            ridged.try_inverse()
        }
    };
    let p = inv.ok_or_else(|| Error::DegenerateData("singular correlation matrix".into()))?;
    let denom = (p[(0, 0)] * p[(1, 1)]).sqrt();
    if !denom.is_finite() || denom == 0.0 {
        return Err(Error::DegenerateData("degenerate precision diagonal".into()));
    }
    Ok((-p[(0, 1)] / denom, ridged_fallback))
}

fn corr_from_cov(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = s.nrows();
    let mut sd = Vec::with_capacity(k);
    for i in 0..k {
        let v = s[(i, i)];
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::DegenerateData(format!("constant column at position {i}")));
        }
        sd.push(v.sqrt());
    }
    let mut c = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            c[(i, j)] = s[(i, j)] / (sd[i] * sd[j]);
        }
    }
    Ok(c)
}

/// Fisher-z partial correlation test of x against y given z.
///
/// statistic = atanh(r) * sqrt(n - |z| - 3), two-sided standard normal p.
pub fn fisher_z(d: &Dataset, x: usize, y: usize, z: &[usize]) -> Result<CiTestResult> {
    let n = d.n();
    if n <= z.len() + 3 {
        return Err(Error::InsufficientSample(format!(
            "n = {n} with |z| = {} requires n > |z| + 3",
            z.len()
        )));
    }
    let mut cols: Vec<&[f64]> = vec![d.column(x), d.column(y)];
    cols.extend(z.iter().map(|&j| d.column(j)));
    let cov = covariance_matrix(&cols);
    let corr = corr_from_cov(&cov)?;
    let (r, ridged) = partial_correlation(&corr)?;
    let clamped = ridged || r.abs() >= CORR_CLAMP;
    let r = r.clamp(-CORR_CLAMP, CORR_CLAMP);
    let statistic = r.atanh() * ((n - z.len()) as f64 - 3.0).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = 2.0 * (1.0 - normal.cdf(statistic.abs()));
    Ok(CiTestResult {
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        dof_or_condset: z.len(),
        clamped,
    })
}

/// One-hot embedding of a dataset: binary columns become their indicator
/// (one reference level dropped), count and continuous columns stay numeric.
#[derive(Clone, Debug)]
struct Embedded {
    /// Embedded column blocks per original variable.
    blocks: Vec<Vec<Vec<f64>>>,
    n: usize,
}

fn embed(d: &Dataset) -> Result<Embedded> {
    let mut blocks = Vec::with_capacity(d.p());
    for (j, spec) in d.specs().iter().enumerate() {
        let col = d.column(j);
        let block = match spec.kind {
            VarKind::Binary => {
                let levels: BTreeSet<u64> = col.iter().map(|&v| v as u64).collect();
                if levels.len() < 2 {
                    // Constant indicator: no usable embedding dimension.
                    vec![]
                } else {
                    vec![col.to_vec()]
                }
            }
            VarKind::Count | VarKind::Continuous => vec![col.to_vec()],
        };
        blocks.push(block);
    }
    Ok(Embedded { blocks, n: d.n() })
}

/// Degenerate-Gaussian likelihood-ratio test of x independent of y given z.
///
/// -2 ln L = n (ln det S_xz + ln det S_yz - ln det S_xyz - ln det S_z) with
/// chi-square reference on dx * dy degrees of freedom.
pub fn dg_lrt(d: &Dataset, x: usize, y: usize, z: &[usize]) -> Result<CiTestResult> {
    let emb = embed(d)?;
    dg_lrt_embedded(&emb, d, x, y, z)
}

fn variance_ok(col: &[f64]) -> bool {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var > 1e-14
}

fn dg_lrt_embedded(emb: &Embedded, d: &Dataset, x: usize, y: usize, z: &[usize]) -> Result<CiTestResult> {
    let name = |j: usize| d.specs()[j].name.clone();
    for &j in [x, y].iter().chain(z) {
        if emb.blocks[j].is_empty() || emb.blocks[j].iter().any(|c| !variance_ok(c)) {
            return Err(Error::DegenerateData(format!("constant column {:?}", name(j))));
        }
    }
    let dx = emb.blocks[x].len();
    let dy = emb.blocks[y].len();
    let dz: usize = z.iter().map(|&j| emb.blocks[j].len()).sum();
    let total = dx + dy + dz;
    let n = emb.n;
    if total >= n || n <= total + 3 {
        return Err(Error::InsufficientSample(format!(
            "embedded dimension {total} too large for n = {n}"
        )));
    }

    // Column layout: x block, y block, z blocks.
    let mut cols: Vec<&[f64]> = Vec::with_capacity(total);
    for c in &emb.blocks[x] {
        cols.push(c);
    }
    for c in &emb.blocks[y] {
        cols.push(c);
    }
    for &j in z {
        for c in &emb.blocks[j] {
            cols.push(c);
        }
    }
    let s = covariance_matrix(&cols);
    let idx_x: Vec<usize> = (0..dx).collect();
    let idx_y: Vec<usize> = (dx..dx + dy).collect();
    let idx_z: Vec<usize> = (dx + dy..total).collect();
    let sub = |rows: &[usize]| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), rows.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in rows.iter().enumerate() {
                m[(a, b)] = s[(i, j)];
            }
        }
        m
    };
    let xz: Vec<usize> = idx_x.iter().chain(&idx_z).copied().collect();
    let yz: Vec<usize> = idx_y.iter().chain(&idx_z).copied().collect();
    let xyz: Vec<usize> = (0..total).collect();

    let stat = n as f64
        * (log_det_psd(&sub(&xz))? + log_det_psd(&sub(&yz))?
            - log_det_psd(&sub(&xyz))?
            - log_det_psd(&sub(&idx_z))?);
    let statistic = stat.max(0.0);
    let dof = dx * dy;
    let chi = ChiSquared::new(dof as f64).expect("positive dof");
    let p_value = (1.0 - chi.cdf(statistic)).clamp(0.0, 1.0);
    Ok(CiTestResult {
        statistic,
        p_value,
        dof_or_condset: dof,
        clamped: false,
    })
}

/// Fisher-z tester with the correlation work shared across queries.
pub struct FisherZTester {
    data: Dataset,
}

impl FisherZTester {
    pub fn new(d: &Dataset) -> Self {
        Self { data: d.clone() }
    }
}

impl CiTester for FisherZTester {
    fn test(&self, x: usize, y: usize, z: &[usize]) -> Result<CiTestResult> {
        fisher_z(&self.data, x, y, z)
    }

    fn name(&self) -> &'static str {
        "fisher_z"
    }
}

/// Degenerate-Gaussian LRT tester with the embedding computed once.
pub struct DgLrtTester {
    data: Dataset,
    emb: Embedded,
}

impl DgLrtTester {
    pub fn new(d: &Dataset) -> Result<Self> {
        Ok(Self {
            data: d.clone(),
            emb: embed(d)?,
        })
    }
}

impl CiTester for DgLrtTester {
    fn test(&self, x: usize, y: usize, z: &[usize]) -> Result<CiTestResult> {
        dg_lrt_embedded(&self.emb, &self.data, x, y, z)
    }

    fn name(&self) -> &'static str {
        "dg_lrt"
    }
}

/// Oracle tester: reads independence straight off a known DAG, so discovery
/// can be exercised without sampling noise. p is 1 when d-separated, else 0.
pub struct OracleCiTester {
    graph: CausalGraph,
}

impl OracleCiTester {
    /// The graph's node order must match the dataset column order it stands in for.
    pub fn new(graph: CausalGraph) -> Self {
        Self { graph }
    }
}

impl CiTester for OracleCiTester {
    fn test(&self, x: usize, y: usize, z: &[usize]) -> Result<CiTestResult> {
        let zset: BTreeSet<usize> = z.iter().copied().collect();
        let sep = self.graph.d_separated(x, y, &zset)?;
        Ok(CiTestResult {
            statistic: if sep { 0.0 } else { f64::INFINITY },
            p_value: if sep { 1.0 } else { 0.0 },
            dof_or_condset: z.len(),
            clamped: false,
        })
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}
