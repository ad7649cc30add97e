//! Brute-force oracles shared by the integration and acceptance suites.
//!
//! Everything here is deliberately independent of the library's own
//! reachability, orientation, and adjustment-search code paths: paths are
//! enumerated explicitly, closures come from boolean matrix powers, and
//! equivalence classes from exhaustive orientation filtering.

#![allow(dead_code)]

use std::collections::BTreeSet;

use effectgate::graph::CausalGraph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Directed edges as an adjacency matrix.
pub fn adjacency(g: &CausalGraph) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let mut m = vec![vec![false; n]; n];
    for e in g.edges() {
        let a = g.node_index(&e.a).unwrap();
        let b = g.node_index(&e.b).unwrap();
        use effectgate::graph::Mark;
        if e.mark_a == Mark::Tail && e.mark_b == Mark::Arrow {
            m[a][b] = true;
        }
    }
    m
}

/// Transitive closure by repeated boolean matrix product: descendants oracle.
pub fn descendants_by_matrix(g: &CausalGraph, x: usize) -> BTreeSet<usize> {
    let n = g.node_count();
    let adj = adjacency(g);
    let mut reach = adj.clone();
    for _ in 0..n {
        let mut next = reach.clone();
        for i in 0..n {
            for k in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if adj[k][j] {
                            next[i][j] = true;
                        }
                    }
                }
            }
        }
        reach = next;
    }
    (0..n).filter(|&v| reach[x][v] && v != x).collect()
}

/// Every simple path between x and y, walking edges in either direction.
/// Each step records (from, to, forward?) where forward means from -> to.
fn all_paths(adj: &[Vec<bool>], x: usize, y: usize) -> Vec<Vec<(usize, bool)>> {
    // Path representation: sequence of (node, arrived_forward) after x.
    let n = adj.len();
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<(usize, bool)>, BTreeSet<usize>)> =
        vec![(x, Vec::new(), [x].into_iter().collect())];
    while let Some((v, path, visited)) = stack.pop() {
        if v == y && !path.is_empty() {
            out.push(path);
            continue;
        }
        if v == y {
            continue;
        }
        for w in 0..n {
            if visited.contains(&w) {
                continue;
            }
            let forward = adj[v][w];
            let backward = adj[w][v];
            if !forward && !backward {
                continue;
            }
            for dir in [true, false] {
                if (dir && forward) || (!dir && backward) {
                    let mut p = path.clone();
                    p.push((w, dir));
                    let mut vis = visited.clone();
                    vis.insert(w);
                    stack.push((w, p, vis));
                }
            }
        }
    }
    out
}

/// Is this path blocked by z under d-separation semantics? Colliders need a
/// descendant (or themselves) in z to stay open; non-colliders block when in z.
fn path_blocked(
    adj: &[Vec<bool>],
    x: usize,
    path: &[(usize, bool)],
    z: &BTreeSet<usize>,
    desc_cache: &[BTreeSet<usize>],
) -> bool {
    // Interior nodes only: path = [(v1, dir1), ..., (y, dirk)].
    for i in 0..path.len().saturating_sub(1) {
        let (v, arrived_forward) = path[i];
        let (_, leaves_forward) = path[i + 1];
        let incoming = arrived_forward; // edge points into v
        let outgoing_into_v = !leaves_forward; // next edge points into v
        let is_collider = incoming && outgoing_into_v;
        if is_collider {
            let opens = z.contains(&v) || desc_cache[v].iter().any(|d| z.contains(d));
            if !opens {
                return true;
            }
        } else if z.contains(&v) {
            return true;
        }
    }
    let _ = (adj, x);
    false
}

/// d-separation by exhaustive path enumeration.
pub fn d_separated_by_paths(g: &CausalGraph, x: usize, y: usize, z: &BTreeSet<usize>) -> bool {
    let adj = adjacency(g);
    let n = g.node_count();
    let desc: Vec<BTreeSet<usize>> = (0..n).map(|v| descendants_by_matrix(g, v)).collect();
    all_paths(&adj, x, y)
        .iter()
        .all(|p| path_blocked(&adj, x, p, z, &desc))
}

/// Backdoor validity by path enumeration: w has no descendant of t and blocks
/// every path whose first edge points into t.
pub fn backdoor_valid_by_paths(g: &CausalGraph, t: usize, y: usize, w: &BTreeSet<usize>) -> bool {
    let desc_t = descendants_by_matrix(g, t);
    if w.iter().any(|v| desc_t.contains(v)) {
        return false;
    }
    let adj = adjacency(g);
    let n = g.node_count();
    let desc: Vec<BTreeSet<usize>> = (0..n).map(|v| descendants_by_matrix(g, v)).collect();
    for path in all_paths(&adj, t, y) {
        let first_into_t = !path[0].1;
        if first_into_t && !path_blocked(&adj, t, &path, w, &desc) {
            return false;
        }
    }
    true
}

/// Smallest valid adjustment set by exhaustive subset search over all
/// non-(t, y) nodes, size then lexicographic order.
pub fn minimal_adjustment_by_enumeration(
    g: &CausalGraph,
    t: usize,
    y: usize,
) -> Option<BTreeSet<usize>> {
    let n = g.node_count();
    let candidates: Vec<usize> = (0..n).filter(|&v| v != t && v != y).collect();
    let k = candidates.len();
    let mut best: Option<BTreeSet<usize>> = None;
    for mask in 0u32..(1 << k) {
        let w: BTreeSet<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &v)| v)
            .collect();
        if backdoor_valid_by_paths(g, t, y, &w) {
            let better = match &best {
                None => true,
                Some(b) => w.len() < b.len() || (w.len() == b.len() && w < *b),
            };
            if better {
                best = Some(w);
            }
        }
    }
    best
}

/// All DAGs Markov-equivalent to `dag`: orientations of its skeleton that are
/// acyclic and share its unshielded colliders.
pub fn equivalence_class(dag: &CausalGraph) -> Vec<BTreeSet<(usize, usize)>> {
    let n = dag.node_count();
    let adj = adjacency(dag);
    let mut skeleton: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if adj[a][b] || adj[b][a] {
                skeleton.push((a, b));
            }
        }
    }
    let truth_vstructs = vstructs_of(&adj, n);
    let mut members = Vec::new();
    for mask in 0u32..(1 << skeleton.len()) {
        let mut m = vec![vec![false; n]; n];
        for (k, &(a, b)) in skeleton.iter().enumerate() {
            if mask & (1 << k) == 0 {
                m[a][b] = true;
            } else {
                m[b][a] = true;
            }
        }
        if !acyclic(&m) {
            continue;
        }
        if vstructs_of(&m, n) != truth_vstructs {
            continue;
        }
        let edges: BTreeSet<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).filter(move |&b| a != b).map(move |b| (a, b)))
            .filter(|&(a, b)| m[a][b])
            .collect();
        members.push(edges);
    }
    members
}

fn vstructs_of(m: &[Vec<bool>], n: usize) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for z in 0..n {
        for x in 0..n {
            for y in (x + 1)..n {
                if x == z || y == z {
                    continue;
                }
                let shielded = m[x][y] || m[y][x];
                if m[x][z] && m[y][z] && !shielded {
                    out.insert((x, z, y));
                }
            }
        }
    }
    out
}

fn acyclic(m: &[Vec<bool>]) -> bool {
    let n = m.len();
    let mut indeg = vec![0usize; n];
    for a in 0..n {
        for b in 0..n {
            if m[a][b] {
                indeg[b] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop() {
        seen += 1;
        for b in 0..n {
            if m[v][b] {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    queue.push(b);
                }
            }
        }
    }
    seen == n
}

/// The CPDAG implied by the equivalence class: an edge is directed when every
/// member orients it the same way.
pub fn cpdag_from_equivalence_class(
    nodes: Vec<String>,
    members: &[BTreeSet<(usize, usize)>],
) -> CausalGraph {
    let mut directed: Vec<(usize, usize)> = Vec::new();
    let mut undirected: Vec<(usize, usize)> = Vec::new();
    let first = &members[0];
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(a, b) in first {
        pairs.insert((a.min(b), a.max(b)));
    }
    for (a, b) in pairs {
        let all_ab = members.iter().all(|m| m.contains(&(a, b)));
        let all_ba = members.iter().all(|m| m.contains(&(b, a)));
        if all_ab {
            directed.push((a, b));
        } else if all_ba {
            directed.push((b, a));
        } else {
            undirected.push((a, b));
        }
    }
    let dir_names: Vec<(String, String)> = directed
        .iter()
        .map(|&(a, b)| (nodes[a].clone(), nodes[b].clone()))
        .collect();
    let und_names: Vec<(String, String)> = undirected
        .iter()
        .map(|&(a, b)| (nodes[a].clone(), nodes[b].clone()))
        .collect();
    let dir_refs: Vec<(&str, &str)> = dir_names.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let und_refs: Vec<(&str, &str)> = und_names.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    if und_refs.is_empty() {
        CausalGraph::dag(nodes, &dir_refs).unwrap()
    } else {
        CausalGraph::cpdag(nodes, &dir_refs, &und_refs).unwrap()
    }
}

/// Random DAG over `n` nodes: random topological order, each forward pair an
/// edge with probability `p`.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, p: f64) -> CausalGraph {
    let nodes: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(p) {
                edges.push((nodes[order[i]].clone(), nodes[order[j]].clone()));
            }
        }
    }
    let refs: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    CausalGraph::dag(nodes, &refs).unwrap()
}

/// Deterministic test RNG.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
