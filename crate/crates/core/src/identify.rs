//! The admissibility gate: backdoor checking, minimal adjustment-set search,
//! and verdicts over discovered graphs.
//!
//! A graph either supports estimation of the target effect or it does not.
//! CPDAGs are handled by enumerating consistent DAG extensions: the query is
//! identifiable only when every extension agrees on the minimal adjustment
//! set. Identification failure is an expected outcome, not an error.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{consistent_extensions, CausalGraph, GraphClass};

/// Extension-enumeration budget: above this many undirected edges the gate
/// conservatively fails with `UnresolvedAdjacency`.
pub const EXTENSION_BUDGET: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    NotDag,
    NoValidAdjustment,
    UnresolvedAdjacency,
    PositivityViolation,
}

/// Outcome of the admissibility gate for one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityVerdict {
    pub identifiable: bool,
    /// Present exactly when identifiable.
    pub adjustment_set: Option<BTreeSet<String>>,
    pub graph_class_ok: bool,
    pub failure_reason: FailureReason,
}

impl AdmissibilityVerdict {
    pub fn identified(adjustment_set: BTreeSet<String>) -> Self {
        Self {
            identifiable: true,
            adjustment_set: Some(adjustment_set),
            graph_class_ok: true,
            failure_reason: FailureReason::None,
        }
    }

    pub fn failed(reason: FailureReason) -> Self {
        Self {
            identifiable: false,
            adjustment_set: None,
            graph_class_ok: reason != FailureReason::NotDag,
            failure_reason: reason,
        }
    }
}

/// Backdoor criterion: `w` blocks every path into `t` that reaches `y`
/// (d-separation in the graph with t's outgoing edges removed) and contains
/// no descendant of `t`.
pub fn backdoor_valid(g: &CausalGraph, t: usize, y: usize, w: &BTreeSet<usize>) -> Result<bool> {
    if g.class() != GraphClass::Dag {
        return Err(Error::Graph("backdoor check requires a DAG".into()));
    }
    if t == y || w.contains(&t) || w.contains(&y) {
        return Err(Error::Domain(
            "treatment and outcome must be distinct and outside the adjustment set".into(),
        ));
    }
    let descendants = g.descendants(t);
    if w.iter().any(|v| descendants.contains(v)) {
        return Ok(false);
    }
    g.without_outgoing(t).d_separated(t, y, w)
}

/// Valid backdoor sets over non-descendant candidates, smallest first, up to
/// `max_size`, in lexicographic node order within each size.
pub fn valid_adjustment_sets(
    g: &CausalGraph,
    t: usize,
    y: usize,
    max_size: usize,
) -> Result<Vec<BTreeSet<usize>>> {
    let descendants = g.descendants(t);
    let candidates: Vec<usize> = (0..g.node_count())
        .filter(|&v| v != t && v != y && !descendants.contains(&v))
        .collect();
    let mut out = Vec::new();
    for size in 0..=candidates.len().min(max_size) {
        for combo in combinations(&candidates, size) {
            let w: BTreeSet<usize> = combo.into_iter().collect();
            if backdoor_valid(g, t, y, &w)? {
                out.push(w);
            }
        }
    }
    Ok(out)
}

/// Smallest valid backdoor set; ties resolved by lexicographic node order.
pub fn minimal_adjustment(g: &CausalGraph, t: usize, y: usize) -> Result<Option<BTreeSet<usize>>> {
    let descendants = g.descendants(t);
    let candidates: Vec<usize> = (0..g.node_count())
        .filter(|&v| v != t && v != y && !descendants.contains(&v))
        .collect();
    for size in 0..=candidates.len() {
        for combo in combinations(&candidates, size) {
            let w: BTreeSet<usize> = combo.into_iter().collect();
            if backdoor_valid(g, t, y, &w)? {
                return Ok(Some(w));
            }
        }
    }
    Ok(None)
}

fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i]);
            rec(pool, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(pool, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Gate a graph for the (t, y) query.
///
/// DAGs go straight to minimal-adjustment search. CPDAGs are resolved by
/// consistent-extension enumeration within [`EXTENSION_BUDGET`]; beyond the
/// budget, or when extensions disagree, the verdict is `UnresolvedAdjacency`.
/// Positivity is assessed downstream and merged into the verdict by the
/// pipeline.
pub fn gate(g: &CausalGraph, t: &str, y: &str) -> Result<AdmissibilityVerdict> {
    let ti = g.node_index(t)?;
    let yi = g.node_index(y)?;
    let name_set = |w: &BTreeSet<usize>| -> BTreeSet<String> {
        w.iter().map(|&v| g.node_name(v).to_string()).collect()
    };

    if g.class() == GraphClass::Dag {
        return Ok(match minimal_adjustment(g, ti, yi)? {
            Some(w) => AdmissibilityVerdict::identified(name_set(&w)),
            None => AdmissibilityVerdict::failed(FailureReason::NoValidAdjustment),
        });
    }

    if g.undirected_edges().is_empty() {
        // Fully oriented CPDAG: treat the directed part as a DAG.
        let dag = CausalGraph::from_parts(
            g.nodes().to_vec(),
            g.directed_edges().clone(),
            BTreeSet::new(),
        );
        return gate(&dag, t, y);
    }

    let Some(extensions) = consistent_extensions(g, EXTENSION_BUDGET) else {
        return Ok(AdmissibilityVerdict::failed(FailureReason::UnresolvedAdjacency));
    };
    if extensions.is_empty() {
        return Ok(AdmissibilityVerdict::failed(FailureReason::NotDag));
    }
    let mut agreed: Option<Option<BTreeSet<usize>>> = None;
    for ext in &extensions {
        let w = minimal_adjustment(ext, ti, yi)?;
        match &agreed {
            None => agreed = Some(w),
            Some(prev) if *prev == w => {}
            Some(_) => {
                return Ok(AdmissibilityVerdict::failed(FailureReason::UnresolvedAdjacency));
            }
        }
    }
    Ok(match agreed.expect("at least one extension") {
        Some(w) => AdmissibilityVerdict::identified(name_set(&w)),
        None => AdmissibilityVerdict::failed(FailureReason::NoValidAdjustment),
    })
}
