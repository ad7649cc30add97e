//! Greedy hill-climbing DAG search maximizing a Gaussian BIC score.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use super::{Algorithm, DiscoveryConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::CausalGraph;

const SCORE_EPS: f64 = 1e-9;
const VAR_FLOOR: f64 = 1e-12;

/// Per-node conditional Gaussian BIC terms, decomposable over nodes.
struct Scorer<'a> {
    d: &'a Dataset,
    n: f64,
    cache: BTreeMap<(usize, Vec<usize>), f64>,
}

impl<'a> Scorer<'a> {
    fn new(d: &'a Dataset) -> Self {
        Self {
            d,
            n: d.n() as f64,
            cache: BTreeMap::new(),
        }
    }

    fn local(&mut self, v: usize, parents: &BTreeSet<usize>) -> Result<f64> {
        let key = (v, parents.iter().copied().collect::<Vec<_>>());
        if let Some(&s) = self.cache.get(&key) {
            return Ok(s);
        }
        let n = self.d.n();
        if n <= parents.len() + 2 {
            return Err(Error::InsufficientSample(format!(
                "{n} rows cannot support {} parents",
                parents.len()
            )));
        }
        let y = DVector::from_column_slice(self.d.column(v));
        let p = parents.len() + 1;
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        for (j, &pa) in key.1.iter().enumerate() {
            let col = self.d.column(pa);
            for i in 0..n {
                x[(i, j + 1)] = col[i];
            }
        }
        let xtx = x.transpose() * &x;
        let mut xtx = xtx;
        for i in 0..p {
            xtx[(i, i)] += 1e-8;
        }
        let beta = xtx
            .cholesky()
            .ok_or_else(|| Error::DegenerateData("singular design in score".into()))?
            .solve(&(x.transpose() * &y));
        let resid = &y - &x * beta;
        let sigma2 = (resid.dot(&resid) / self.n).max(VAR_FLOOR);
        let log_like = -0.5 * self.n * (sigma2.ln() + 1.0 + (2.0 * std::f64::consts::PI).ln());
        // Regression coefficients plus the residual variance.
        let k = (p + 1) as f64;
        let score = log_like - 0.5 * k * self.n.ln();
        self.cache.insert(key, score);
        Ok(score)
    }
}

/// Total BIC score of a DAG on a dataset (higher is better).
pub fn bic_score(d: &Dataset, g: &CausalGraph) -> Result<f64> {
    let mut scorer = Scorer::new(d);
    let mut total = 0.0;
    for v in 0..g.node_count() {
        let parents: BTreeSet<usize> = g.parents(v).into_iter().collect();
        total += scorer.local(v, &parents)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

/// Greedy hill climbing over DAGs with add/delete/reverse moves, honoring
/// background knowledge. Deterministic given the seed, which fixes the
/// tie-breaking order among equal-score moves.
pub fn score_greedy(d: &Dataset, cfg: &DiscoveryConfig) -> Result<CausalGraph> {
    if cfg.algorithm != Algorithm::ScoreGreedy {
        return Err(Error::Config("configuration does not select score_greedy".into()));
    }
    let p = d.p();
    let names = d.names();
    let k = &cfg.knowledge;
    let forbidden = |a: usize, b: usize| k.is_forbidden(&names[a], &names[b]);
    let required = |a: usize, b: usize| k.is_required(&names[a], &names[b]);

    // Start from the required edges.
    let mut parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p];
    for (a, b) in k.required() {
        if let (Ok(ia), Ok(ib)) = (
            names.iter().position(|n| n == a).ok_or(()),
            names.iter().position(|n| n == b).ok_or(()),
        ) {
            parents[ib].insert(ia);
        }
    }

    let creates_cycle = |parents: &Vec<BTreeSet<usize>>, a: usize, b: usize| -> bool {
        // Would a -> b close a cycle: is a reachable from b via child edges?
        let mut stack = vec![b];
        let mut seen = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if v == a {
                return true;
            }
            if !seen.insert(v) {
                continue;
            }
            for w in 0..parents.len() {
                if parents[w].contains(&v) {
                    stack.push(w);
                }
            }
        }
        false
    };

    // Seeded tie-break ranks over the ordered-pair move space.
    let mut rank: Vec<usize> = (0..p * p * 3).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::substream(cfg.seed, 0x5C0E);
        rank.shuffle(&mut rng);
    }
    let move_rank = |m: &Move| -> usize {
        match *m {
            Move::Add(a, b) => rank[(a * p + b) * 3],
            Move::Delete(a, b) => rank[(a * p + b) * 3 + 1],
            Move::Reverse(a, b) => rank[(a * p + b) * 3 + 2],
        }
    };

    let mut scorer = Scorer::new(d);
    let mut node_scores: Vec<f64> = Vec::with_capacity(p);
    for v in 0..p {
        node_scores.push(scorer.local(v, &parents[v])?);
    }

    loop {
        let mut best: Option<(f64, usize, Move)> = None;
        for a in 0..p {
            for b in 0..p {
                if a == b {
                    continue;
                }
                let has_ab = parents[b].contains(&a);
                let has_ba = parents[a].contains(&b);

                // Add a -> b.
                if !has_ab && !has_ba && !forbidden(a, b) && !creates_cycle(&parents, a, b) {
                    let mut pa = parents[b].clone();
                    pa.insert(a);
                    if let Ok(s) = scorer.local(b, &pa) {
                        let delta = s - node_scores[b];
                        consider(&mut best, delta, move_rank(&Move::Add(a, b)), Move::Add(a, b));
                    }
                }
                // Delete a -> b.
                if has_ab && !required(a, b) {
                    let mut pa = parents[b].clone();
                    pa.remove(&a);
                    if let Ok(s) = scorer.local(b, &pa) {
                        let delta = s - node_scores[b];
                        consider(&mut best, delta, move_rank(&Move::Delete(a, b)), Move::Delete(a, b));
                    }
                }
                // Reverse a -> b into b -> a.
                if has_ab && !required(a, b) && !forbidden(b, a) {
                    let mut pa_b = parents[b].clone();
                    pa_b.remove(&a);
                    let mut pa_a = parents[a].clone();
                    pa_a.insert(b);
                    // Acyclicity without the old edge.
                    let mut tmp = parents.clone();
                    tmp[b].remove(&a);
                    if !creates_cycle(&tmp, b, a) {
                        if let (Ok(sb), Ok(sa)) = (scorer.local(b, &pa_b), scorer.local(a, &pa_a)) {
                            let delta = sb - node_scores[b] + sa - node_scores[a];
                            consider(
                                &mut best,
                                delta,
                                move_rank(&Move::Reverse(a, b)),
                                Move::Reverse(a, b),
                            );
                        }
                    }
                }
            }
        }
        match best {
            Some((delta, _, mv)) if delta > SCORE_EPS => {
                match mv {
                    Move::Add(a, b) => {
                        parents[b].insert(a);
                        node_scores[b] = scorer.local(b, &parents[b])?;
                    }
                    Move::Delete(a, b) => {
                        parents[b].remove(&a);
                        node_scores[b] = scorer.local(b, &parents[b])?;
                    }
                    Move::Reverse(a, b) => {
                        parents[b].remove(&a);
                        parents[a].insert(b);
                        node_scores[b] = scorer.local(b, &parents[b])?;
                        node_scores[a] = scorer.local(a, &parents[a])?;
                    }
                }
            }
            _ => break,
        }
    }

    let mut directed = BTreeSet::new();
    for (b, pa) in parents.iter().enumerate() {
        for &a in pa {
            directed.insert((a, b));
        }
    }
    Ok(CausalGraph::from_parts(names, directed, BTreeSet::new()))
}

fn consider(best: &mut Option<(f64, usize, Move)>, delta: f64, rank: usize, mv: Move) {
    let better = match best {
        None => true,
        Some((bd, br, _)) => delta > *bd + SCORE_EPS || ((delta - *bd).abs() <= SCORE_EPS && rank < *br),
    };
    if better {
        *best = Some((delta, rank, mv));
    }
}
