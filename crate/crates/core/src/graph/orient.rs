//! Orientation machinery: Meek rules, CPDAG construction from a DAG, and
//! consistent DAG extensions of a partially directed graph.

use std::collections::BTreeSet;

use super::{directed_is_acyclic, CausalGraph};

/// Mutable partially-directed graph used while orienting.
#[derive(Clone, Debug)]
pub(crate) struct PdagBuf {
    pub n: usize,
    pub directed: BTreeSet<(usize, usize)>,
    pub undirected: BTreeSet<(usize, usize)>,
}

impl PdagBuf {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            directed: BTreeSet::new(),
            undirected: BTreeSet::new(),
        }
    }

    pub fn from_graph(g: &CausalGraph) -> Self {
        Self {
            n: g.node_count(),
            directed: g.directed_edges().clone(),
            undirected: g.undirected_edges().clone(),
        }
    }

    pub fn into_graph(self, nodes: Vec<String>) -> CausalGraph {
        CausalGraph::from_parts(nodes, self.directed, self.undirected)
    }

    pub fn add_undirected(&mut self, a: usize, b: usize) {
        self.undirected.insert((a.min(b), a.max(b)));
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) {
        self.directed.remove(&(a, b));
        self.directed.remove(&(b, a));
        self.undirected.remove(&(a.min(b), a.max(b)));
    }

    pub fn has_directed(&self, a: usize, b: usize) -> bool {
        self.directed.contains(&(a, b))
    }

    pub fn has_undirected(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&(a.min(b), a.max(b)))
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.has_directed(a, b) || self.has_directed(b, a) || self.has_undirected(a, b)
    }

    /// Turn the undirected edge a-b into a -> b. No-op unless a-b is undirected.
    pub fn orient(&mut self, a: usize, b: usize) -> bool {
        if self.undirected.remove(&(a.min(b), a.max(b))) {
            self.directed.insert((a, b));
            true
        } else {
            false
        }
    }

    pub fn parents(&self, v: usize) -> Vec<usize> {
        self.directed
            .iter()
            .filter(|&&(_, b)| b == v)
            .map(|&(a, _)| a)
            .collect()
    }

    /// Would adding a -> b close a directed cycle?
    pub fn creates_cycle(&self, a: usize, b: usize) -> bool {
        // Cycle iff a is reachable from b through directed edges.
        let mut seen = BTreeSet::new();
        let mut stack = vec![b];
        while let Some(v) = stack.pop() {
            if v == a {
                return true;
            }
            if !seen.insert(v) {
                continue;
            }
            for &(s, t) in &self.directed {
                if s == v {
                    stack.push(t);
                }
            }
        }
        false
    }

    pub fn is_acyclic(&self) -> bool {
        directed_is_acyclic(self.n, &self.directed)
    }
}

/// Unshielded colliders x -> z <- y (x, y non-adjacent) of the directed part.
pub(crate) fn unshielded_colliders(buf: &PdagBuf) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for z in 0..buf.n {
        let pa = buf.parents(z);
        for (i, &x) in pa.iter().enumerate() {
            for &y in &pa[i + 1..] {
                if !buf.adjacent(x, y) {
                    out.insert((x.min(y), z, x.max(y)));
                }
            }
        }
    }
    out
}

/// Close orientations under Meek's rules, skipping any orientation vetoed by
/// `forbidden(a, b)`. Deterministic scan order.
pub(crate) fn meek_closure(buf: &mut PdagBuf, forbidden: &dyn Fn(usize, usize) -> bool) {
    loop {
        let mut changed = false;
        let undirected: Vec<(usize, usize)> = buf.undirected.iter().copied().collect();
        for (u, v) in undirected {
            for (a, b) in [(u, v), (v, u)] {
                if !buf.has_undirected(a, b) {
                    break;
                }
                if forbidden(a, b) {
                    continue;
                }
                if meek_r1(buf, a, b) || meek_r2(buf, a, b) || meek_r3(buf, a, b) || meek_r4(buf, a, b) {
                    buf.orient(a, b);
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

// R1: c -> a, a - b, c and b non-adjacent  =>  a -> b.
fn meek_r1(buf: &PdagBuf, a: usize, b: usize) -> bool {
    buf.parents(a).iter().any(|&c| c != b && !buf.adjacent(c, b))
}

// R2: a -> c -> b with a - b  =>  a -> b.
fn meek_r2(buf: &PdagBuf, a: usize, b: usize) -> bool {
    (0..buf.n).any(|c| buf.has_directed(a, c) && buf.has_directed(c, b))
}

// R3: a - c -> b and a - d -> b with c, d non-adjacent  =>  a -> b.
fn meek_r3(buf: &PdagBuf, a: usize, b: usize) -> bool {
    let into_b: Vec<usize> = buf
        .parents(b)
        .into_iter()
        .filter(|&c| buf.has_undirected(a, c))
        .collect();
    for (i, &c) in into_b.iter().enumerate() {
        for &d in &into_b[i + 1..] {
            if !buf.adjacent(c, d) {
                return true;
            }
        }
    }
    false
}

// R4: c -> d -> b with a adjacent to both c and d, and c, b non-adjacent
//  =>  a -> b. Only fires once background knowledge has introduced
// orientations beyond colliders.
fn meek_r4(buf: &PdagBuf, a: usize, b: usize) -> bool {
    for d in buf.parents(b) {
        if d == a || !buf.adjacent(a, d) {
            continue;
        }
        for c in buf.parents(d) {
            if c != a && c != b && buf.adjacent(a, c) && !buf.adjacent(c, b) {
                return true;
            }
        }
    }
    false
}

/// The CPDAG of the Markov equivalence class of a DAG: skeleton plus
/// v-structures, closed under Meek's rules.
pub fn dag_to_cpdag(g: &CausalGraph) -> CausalGraph {
    let n = g.node_count();
    let mut skel = PdagBuf::new(n);
    for &(a, b) in g.directed_edges() {
        skel.add_undirected(a, b);
    }
    // Orient v-structures found in the DAG.
    let dag_buf = PdagBuf::from_graph(g);
    for (x, z, y) in unshielded_colliders(&dag_buf) {
        skel.orient(x, z);
        skel.orient(y, z);
    }
    meek_closure(&mut skel, &|_, _| false);
    skel.into_graph(g.nodes().to_vec())
}

/// All consistent DAG extensions of a partially directed graph: orientations
/// of the undirected edges that keep the graph acyclic and introduce no new
/// unshielded collider. Returns `None` when the number of undirected edges
/// exceeds `max_undirected`.
pub fn consistent_extensions(g: &CausalGraph, max_undirected: usize) -> Option<Vec<CausalGraph>> {
    let und: Vec<(usize, usize)> = g.undirected_edges().iter().copied().collect();
    if und.len() > max_undirected {
        return None;
    }
    let base = PdagBuf::from_graph(g);
    let allowed = unshielded_colliders(&base);
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << und.len()) {
        let mut buf = PdagBuf {
            n: base.n,
            directed: base.directed.clone(),
            undirected: BTreeSet::new(),
        };
        for (k, &(a, b)) in und.iter().enumerate() {
            if mask & (1 << k) == 0 {
                buf.directed.insert((a, b));
            } else {
                buf.directed.insert((b, a));
            }
        }
        if !buf.is_acyclic() {
            continue;
        }
        if !unshielded_colliders(&buf).is_subset(&allowed) {
            continue;
        }
        out.push(buf.into_graph(g.nodes().to_vec()));
    }
    Some(out)
}
