//! Constraint-aware structure learning.
//!
//! Two searches: PC (stable skeleton variant, collider orientation, Meek
//! closure) driven by a pluggable CI tester, and a greedy hill-climbing BIC
//! search over DAGs standing in for the score-based family. Both honor
//! background knowledge and are deterministic given their configuration.

mod pc;
mod score;

pub use pc::pc;
pub use score::{bic_score, score_greedy};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BackgroundKnowledge;

/// The default 7-point significance grid.
pub const DEFAULT_ALPHA_GRID: [f64; 7] = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pc,
    ScoreGreedy,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Pc => write!(f, "pc"),
            Algorithm::ScoreGreedy => write!(f, "score_greedy"),
        }
    }
}

/// Identity and settings of one discovery run.
#[derive(Clone, Debug)]
pub struct DiscoveryConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub seed: u64,
    pub knowledge: BackgroundKnowledge,
    /// Largest conditioning set the PC skeleton phase may use.
    pub max_condset: usize,
}

impl DiscoveryConfig {
    pub fn new(algorithm: Algorithm, alpha: f64, seed: u64, knowledge: BackgroundKnowledge) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
            return Err(Error::Config(format!("alpha {alpha} must lie in (0, 1)")));
        }
        Ok(Self {
            algorithm,
            alpha,
            seed,
            knowledge,
            max_condset: usize::MAX,
        })
    }

    pub fn with_max_condset(mut self, max_condset: usize) -> Self {
        self.max_condset = max_condset;
        self
    }
}
