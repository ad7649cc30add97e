//! The PC algorithm, stable-skeleton variant.

use std::collections::{BTreeMap, BTreeSet};

use super::{Algorithm, DiscoveryConfig};
use crate::ci::CiTester;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{apply_knowledge, meek_closure, CausalGraph, PdagBuf};

/// Lexicographic size-k subsets of `pool`.
fn subsets_of_size(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > pool.len() {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| pool[i]).collect());
        // Advance the combination cursor.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + pool.len() - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

struct Skeleton {
    adjacency: Vec<BTreeSet<usize>>,
    sepsets: BTreeMap<(usize, usize), Vec<usize>>,
}

/// Stable skeleton phase: for each conditioning-set size, removal decisions
/// are taken against a snapshot of the adjacency sets and applied in a batch,
/// which makes the result independent of pair ordering.
fn skeleton_stable(
    p: usize,
    tester: &dyn CiTester,
    alpha: f64,
    max_condset: usize,
    names: &[String],
) -> Result<Skeleton> {
    let mut adjacency: Vec<BTreeSet<usize>> = (0..p)
        .map(|i| (0..p).filter(|&j| j != i).collect())
        .collect();
    let mut sepsets = BTreeMap::new();

    let mut level = 0usize;
    loop {
        let snapshot = adjacency.clone();
        let mut removals: Vec<(usize, usize)> = Vec::new();
        for x in 0..p {
            for y in (x + 1)..p {
                if !snapshot[x].contains(&y) {
                    continue;
                }
                if removals.contains(&(x, y)) {
                    continue;
                }
                let mut separated = false;
                'sides: for (a, b) in [(x, y), (y, x)] {
                    let pool: Vec<usize> = snapshot[a].iter().copied().filter(|&v| v != b).collect();
                    for cond in subsets_of_size(&pool, level) {
                        let res = tester.test(a, b, &cond).map_err(|e| match e {
                            Error::DegenerateData(msg) => Error::DegenerateData(format!(
                                "testing {} against {}: {msg}",
                                names[a], names[b]
                            )),
                            other => other,
                        })?;
                        if res.independent_at(alpha) {
                            sepsets.insert((x, y), cond);
                            separated = true;
                            break 'sides;
                        }
                    }
                }
                if separated {
                    removals.push((x, y));
                }
            }
        }
        for (x, y) in removals {
            adjacency[x].remove(&y);
            adjacency[y].remove(&x);
        }
        level += 1;
        if level > max_condset {
            break;
        }
        let any_big_enough = (0..p).any(|x| adjacency[x].len() > level);
        if !any_big_enough {
            break;
        }
    }
    Ok(Skeleton { adjacency, sepsets })
}

/// PC with background knowledge: skeleton, knowledge pre-orientation,
/// collider orientation, Meek closure, then knowledge enforcement. The output
/// is a DAG when fully oriented, otherwise a CPDAG whose undirected edges are
/// left for the admissibility gate to reason about.
pub fn pc(d: &Dataset, cfg: &DiscoveryConfig, tester: &dyn CiTester) -> Result<CausalGraph> {
    if cfg.algorithm != Algorithm::Pc {
        return Err(Error::Config("configuration does not select pc".into()));
    }
    let p = d.p();
    let names: Vec<String> = d.names();
    let skel = skeleton_stable(p, tester, cfg.alpha, cfg.max_condset, &names)?;

    let mut buf = PdagBuf::new(p);
    for x in 0..p {
        for &y in skel.adjacency[x].iter().filter(|&&y| y > x) {
            buf.add_undirected(x, y);
        }
    }
    let k = &cfg.knowledge;
    let forbidden = |a: usize, b: usize| k.is_forbidden(&names[a], &names[b]);

    // Knowledge pre-orientation on skeleton edges: required directions first,
    // then one-sided forbidden pairs.
    let undirected: Vec<(usize, usize)> = buf.undirected.iter().copied().collect();
    for (a, b) in undirected {
        if k.is_required(&names[a], &names[b]) && !buf.creates_cycle(a, b) {
            buf.orient(a, b);
        } else if k.is_required(&names[b], &names[a]) && !buf.creates_cycle(b, a) {
            buf.orient(b, a);
        } else if forbidden(a, b) && !forbidden(b, a) && !buf.creates_cycle(b, a) {
            buf.orient(b, a);
        } else if forbidden(b, a) && !forbidden(a, b) && !buf.creates_cycle(a, b) {
            buf.orient(a, b);
        }
    }

    // Collider orientation: unshielded x - z - y with z outside sepset(x, y).
    for z in 0..p {
        let neighbors: Vec<usize> = skel.adjacency[z].iter().copied().collect();
        for (i, &x) in neighbors.iter().enumerate() {
            for &y in &neighbors[i + 1..] {
                if skel.adjacency[x].contains(&y) {
                    continue;
                }
                let sep = skel.sepsets.get(&(x.min(y), x.max(y)));
                let in_sep = sep.map(|s| s.contains(&z)).unwrap_or(true);
                if !in_sep {
                    if !forbidden(x, z) {
                        buf.orient(x, z);
                    }
                    if !forbidden(y, z) {
                        buf.orient(y, z);
                    }
                }
            }
        }
    }

    meek_closure(&mut buf, &forbidden);
    let oriented = buf.into_graph(names);
    apply_knowledge(&oriented, k)
}
