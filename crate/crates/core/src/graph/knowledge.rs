//! Background knowledge: forbidden/required edges and the constraint ladder.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CausalGraph, PdagBuf};
use crate::dataset::{VariableSpec, VarRole};
use crate::error::{Error, Result, ViolationReport};

/// Nested constraint levels, weakest to strongest.
///
/// C0 forbids edges out of the outcome. C1 additionally forbids edges into
/// `Web3`. C2 additionally requires `Total_PvE_Battle -> Total_Session`.
/// C3 additionally forbids the treatment causing `Time_Play_Level1`.
/// Constraints that reference variables absent from the schema are skipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintLevel {
    C0,
    C1,
    C2,
    C3,
}

impl ConstraintLevel {
    pub const ALL: [ConstraintLevel; 4] = [
        ConstraintLevel::C0,
        ConstraintLevel::C1,
        ConstraintLevel::C2,
        ConstraintLevel::C3,
    ];
}

impl std::fmt::Display for ConstraintLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for ConstraintLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C0" | "c0" => Ok(ConstraintLevel::C0),
            "C1" | "c1" => Ok(ConstraintLevel::C1),
            "C2" | "c2" => Ok(ConstraintLevel::C2),
            "C3" | "c3" => Ok(ConstraintLevel::C3),
            other => Err(Error::Config(format!("unknown constraint level {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BackgroundKnowledge {
    forbidden: BTreeSet<(String, String)>,
    required: BTreeSet<(String, String)>,
    pub level: Option<ConstraintLevel>,
}

impl BackgroundKnowledge {
    /// Explicit constraint sets. Rejects overlapping forbidden/required pairs
    /// and required edges that form a directed cycle among themselves.
    pub fn new(
        forbidden: BTreeSet<(String, String)>,
        required: BTreeSet<(String, String)>,
    ) -> Result<Self> {
        for pair in forbidden.intersection(&required) {
            return Err(Error::Config(format!(
                "edge {} -> {} is both forbidden and required",
                pair.0, pair.1
            )));
        }
        if required_edges_cycle(&required) {
            return Err(Error::Config("required edges form a directed cycle".into()));
        }
        Ok(Self {
            forbidden,
            required,
            level: None,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The constraint-ladder knowledge for a schema. Wildcards are expanded
    /// over the schema's variable names.
    pub fn for_level(level: ConstraintLevel, specs: &[VariableSpec]) -> Self {
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let outcome = specs
            .iter()
            .find(|s| s.role == VarRole::Outcome)
            .map(|s| s.name.as_str());
        let treatment = specs
            .iter()
            .find(|s| s.role == VarRole::Treatment)
            .map(|s| s.name.as_str());
        let mut forbidden = BTreeSet::new();
        let mut required = BTreeSet::new();

        // C0: outcomes cannot cause prior behaviors.
        if let Some(y) = outcome {
            for &v in &names {
                if v != y {
                    forbidden.insert((y.to_string(), v.to_string()));
                }
            }
        }
        // C1: nothing causes the platform-level attribute.
        if level >= ConstraintLevel::C1 && names.contains(&"Web3") {
            for &v in &names {
                if v != "Web3" {
                    forbidden.insert((v.to_string(), "Web3".to_string()));
                }
            }
        }
        // C2: the composite engagement aggregate is driven by baseline progression.
        if level >= ConstraintLevel::C2
            && names.contains(&"Total_PvE_Battle")
            && names.contains(&"Total_Session")
        {
            required.insert(("Total_PvE_Battle".to_string(), "Total_Session".to_string()));
        }
        // C3: combat does not cause onboarding friction.
        if level >= ConstraintLevel::C3 && names.contains(&"Time_Play_Level1") {
            if let Some(t) = treatment {
                forbidden.insert((t.to_string(), "Time_Play_Level1".to_string()));
            }
        }

        forbidden = forbidden.difference(&required).cloned().collect();
        let mut k = Self::new(forbidden, required).expect("ladder constraints are consistent");
        k.level = Some(level);
        k
    }

    pub fn is_forbidden(&self, a: &str, b: &str) -> bool {
        self.forbidden.contains(&(a.to_string(), b.to_string()))
    }

    pub fn is_required(&self, a: &str, b: &str) -> bool {
        self.required.contains(&(a.to_string(), b.to_string()))
    }

    pub fn forbidden(&self) -> &BTreeSet<(String, String)> {
        &self.forbidden
    }

    pub fn required(&self) -> &BTreeSet<(String, String)> {
        &self.required
    }

}

fn required_edges_cycle(required: &BTreeSet<(String, String)>) -> bool {
    let nodes: BTreeSet<&str> = required
        .iter()
        .flat_map(|(a, b)| [a.as_str(), b.as_str()])
        .collect();
    let order: Vec<&str> = nodes.into_iter().collect();
    let idx = |n: &str| order.iter().position(|&o| o == n).unwrap();
    let edges: BTreeSet<(usize, usize)> = required
        .iter()
        .map(|(a, b)| (idx(a), idx(b)))
        .collect();
    !super::directed_is_acyclic(order.len(), &edges)
}

/// Enforce background knowledge on a graph.
///
/// Required edges are inserted or oriented; forbidden directed orientations
/// are reversed when the opposite direction is allowed and acyclic, otherwise
/// the edge is removed; forbidden orientations of undirected edges are fixed
/// the allowed way. Unsatisfiable constraints produce a violation report
/// instead of being dropped.
pub fn apply_knowledge(g: &CausalGraph, k: &BackgroundKnowledge) -> Result<CausalGraph> {
    let mut buf = PdagBuf::from_graph(g);
    let mut violations = Vec::new();
    let name = |i: usize| g.node_name(i);

    for (a, b) in k.required() {
        let (ia, ib) = match (g.node_index(a), g.node_index(b)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => {
                violations.push(format!("required edge {a} -> {b} references an unknown node"));
                continue;
            }
        };
        if buf.has_directed(ia, ib) {
            continue;
        }
        // Free the pair, then insert the required orientation if it is acyclic.
        let had_reverse = buf.has_directed(ib, ia);
        let had_undirected = buf.has_undirected(ia, ib);
        buf.remove_edge(ia, ib);
        if buf.creates_cycle(ia, ib) {
            violations.push(format!("required edge {a} -> {b} creates a directed cycle"));
            // Restore what was there.
            if had_reverse {
                buf.directed.insert((ib, ia));
            } else if had_undirected {
                buf.add_undirected(ia, ib);
            }
        } else {
            buf.directed.insert((ia, ib));
        }
    }

    for (a, b) in k.forbidden() {
        let (ia, ib) = match (g.node_index(a), g.node_index(b)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => continue,
        };
        let reverse_allowed = !k.is_forbidden(name(ib), name(ia));
        if buf.has_directed(ia, ib) {
            buf.directed.remove(&(ia, ib));
            if reverse_allowed && !buf.creates_cycle(ib, ia) {
                buf.directed.insert((ib, ia));
            }
            // else: edge removed entirely.
        } else if buf.has_undirected(ia, ib) {
            buf.remove_edge(ia, ib);
            if reverse_allowed && !buf.creates_cycle(ib, ia) {
                buf.directed.insert((ib, ia));
            }
        }
    }

    if !buf.is_acyclic() {
        violations.push("resulting directed edges form a cycle".into());
    }
    if violations.is_empty() {
        Ok(buf.into_graph(g.nodes().to_vec()))
    } else {
        Err(Error::Knowledge(ViolationReport { entries: violations }))
    }
}
