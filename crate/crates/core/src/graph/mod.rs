//! Causal graph representation and structural queries.
//!
//! Graphs are DAGs or CPDAGs over a fixed ordered node list. Directed edges
//! are stored as ordered index pairs, undirected edges as normalized pairs.
//! All query APIs are side-effect free; graphs are immutable after
//! construction.

mod knowledge;
mod orient;

pub use knowledge::{apply_knowledge, BackgroundKnowledge, ConstraintLevel};
pub use orient::{consistent_extensions, dag_to_cpdag};

pub(crate) use orient::{meek_closure, PdagBuf};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphClass {
    Dag,
    Cpdag,
}

/// Endpoint mark of an edge. A directed edge a -> b is (Tail, Arrow);
/// an undirected edge is (Tail, Tail).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Tail,
    Arrow,
}

/// One edge in endpoint-mark form, by node name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub mark_a: Mark,
    pub mark_b: Mark,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalGraph {
    nodes: Vec<String>,
    index: BTreeMap<String, usize>,
    directed: BTreeSet<(usize, usize)>,
    undirected: BTreeSet<(usize, usize)>,
    class: GraphClass,
}

fn build_index(nodes: &[String]) -> Result<BTreeMap<String, usize>> {
    let mut index = BTreeMap::new();
    for (i, name) in nodes.iter().enumerate() {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Graph(format!(
                "node name {name:?} must be non-empty and whitespace-free"
            )));
        }
        if index.insert(name.clone(), i).is_some() {
            return Err(Error::Graph(format!("duplicate node name {name:?}")));
        }
    }
    Ok(index)
}

impl CausalGraph {
    /// DAG from named directed edges.
    pub fn dag(nodes: Vec<String>, edges: &[(&str, &str)]) -> Result<Self> {
        let index = build_index(&nodes)?;
        let mut directed = BTreeSet::new();
        for (a, b) in edges {
            let (ia, ib) = (
                *index.get(*a).ok_or_else(|| Error::UnknownNode(a.to_string()))?,
                *index.get(*b).ok_or_else(|| Error::UnknownNode(b.to_string()))?,
            );
            if ia == ib {
                return Err(Error::Graph(format!("self-loop on {a:?}")));
            }
            if directed.contains(&(ib, ia)) || !directed.insert((ia, ib)) {
                return Err(Error::Graph(format!("duplicate edge between {a:?} and {b:?}")));
            }
        }
        let g = Self {
            nodes,
            index,
            directed,
            undirected: BTreeSet::new(),
            class: GraphClass::Dag,
        };
        if !g.directed_part_is_acyclic() {
            return Err(Error::Graph("directed edges form a cycle".into()));
        }
        Ok(g)
    }

    /// CPDAG from named directed and undirected edges.
    pub fn cpdag(
        nodes: Vec<String>,
        directed_edges: &[(&str, &str)],
        undirected_edges: &[(&str, &str)],
    ) -> Result<Self> {
        let index = build_index(&nodes)?;
        let mut directed = BTreeSet::new();
        let mut undirected = BTreeSet::new();
        let mut pairs = BTreeSet::new();
        let lookup = |name: &str| -> Result<usize> {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownNode(name.to_string()))
        };
        for (a, b) in directed_edges {
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(Error::Graph(format!("self-loop on {a:?}")));
            }
            if !pairs.insert((ia.min(ib), ia.max(ib))) {
                return Err(Error::Graph(format!("duplicate edge between {a:?} and {b:?}")));
            }
            directed.insert((ia, ib));
        }
        for (a, b) in undirected_edges {
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(Error::Graph(format!("self-loop on {a:?}")));
            }
            if !pairs.insert((ia.min(ib), ia.max(ib))) {
                return Err(Error::Graph(format!("duplicate edge between {a:?} and {b:?}")));
            }
            undirected.insert((ia.min(ib), ia.max(ib)));
        }
        let g = Self {
            nodes,
            index,
            directed,
            undirected,
            class: GraphClass::Cpdag,
        };
        if !g.directed_part_is_acyclic() {
            return Err(Error::Graph("directed sub-part forms a cycle".into()));
        }
        Ok(g)
    }

    pub(crate) fn from_parts(
        nodes: Vec<String>,
        directed: BTreeSet<(usize, usize)>,
        undirected: BTreeSet<(usize, usize)>,
    ) -> Self {
        let index = build_index(&nodes).expect("nodes validated by caller");
        let class = if undirected.is_empty() {
            GraphClass::Dag
        } else {
            GraphClass::Cpdag
        };
        Self {
            nodes,
            index,
            directed,
            undirected,
            class,
        }
    }

    pub fn empty_dag(nodes: Vec<String>) -> Result<Self> {
        Self::dag(nodes, &[])
    }

    pub fn class(&self) -> GraphClass {
        self.class
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn node_name(&self, idx: usize) -> &str {
        &self.nodes[idx]
    }

    /// Directed edges as (from, to) index pairs.
    pub fn directed_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.directed
    }

    /// Undirected edges as normalized (low, high) index pairs.
    pub fn undirected_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.undirected
    }

    pub fn edge_count(&self) -> usize {
        self.directed.len() + self.undirected.len()
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

    pub fn parents(&self, v: usize) -> Vec<usize> {
        self.directed
            .iter()
            .filter(|&&(_, b)| b == v)
            .map(|&(a, _)| a)
            .collect()
    }

    pub fn children(&self, v: usize) -> Vec<usize> {
        self.directed
            .iter()
            .filter(|&&(a, _)| a == v)
            .map(|&(_, b)| b)
            .collect()
    }

    pub fn undirected_neighbors(&self, v: usize) -> Vec<usize> {
        self.undirected
            .iter()
            .filter_map(|&(a, b)| {
                if a == v {
                    Some(b)
                } else if b == v {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// All nodes adjacent to `v` regardless of edge kind.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: BTreeSet<usize> = self.parents(v).into_iter().collect();
        out.extend(self.children(v));
        out.extend(self.undirected_neighbors(v));
        out.into_iter().collect()
    }

    /// Edges in endpoint-mark form, canonical order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.edge_count());
        for &(a, b) in &self.directed {
            out.push(Edge {
                a: self.nodes[a].clone(),
                b: self.nodes[b].clone(),
                mark_a: Mark::Tail,
                mark_b: Mark::Arrow,
            });
        }
        for &(a, b) in &self.undirected {
            out.push(Edge {
                a: self.nodes[a].clone(),
                b: self.nodes[b].clone(),
                mark_a: Mark::Tail,
                mark_b: Mark::Tail,
            });
        }
        out
    }

    pub(crate) fn directed_part_is_acyclic(&self) -> bool {
        directed_is_acyclic(self.nodes.len(), &self.directed)
    }

    /// Nodes reachable from `x` by directed paths, excluding `x` itself.
    pub fn descendants(&self, x: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = self.children(x).into();
        while let Some(v) = queue.pop_front() {
            if v != x && seen.insert(v) {
                queue.extend(self.children(v));
            }
        }
        seen
    }

    /// Nodes with a directed path to `x`, excluding `x` itself.
    pub fn ancestors(&self, x: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = self.parents(x).into();
        while let Some(v) = queue.pop_front() {
            if v != x && seen.insert(v) {
                queue.extend(self.parents(v));
            }
        }
        seen
    }

    pub fn descendants_by_name(&self, name: &str) -> Result<BTreeSet<String>> {
        let x = self.node_index(name)?;
        Ok(self
            .descendants(x)
            .into_iter()
            .map(|i| self.nodes[i].clone())
            .collect())
    }

    /// Standard d-separation on a DAG via active-trail reachability.
    pub fn d_separated(&self, x: usize, y: usize, z: &BTreeSet<usize>) -> Result<bool> {
        if self.class != GraphClass::Dag {
            return Err(Error::Graph("d-separation requires a DAG".into()));
        }
        for &v in z.iter().chain([&x, &y]) {
            if v >= self.nodes.len() {
                return Err(Error::UnknownNode(format!("index {v}")));
            }
        }
        if x == y {
            return Err(Error::Domain("d-separation endpoints must differ".into()));
        }
        if z.contains(&x) || z.contains(&y) {
            return Err(Error::Domain(
                "conditioning set must not contain the endpoints".into(),
            ));
        }

        // Nodes that are in z or have a descendant in z: colliders open there.
        let mut anc_of_z: BTreeSet<usize> = z.clone();
        let mut queue: VecDeque<usize> = z.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            for p in self.parents(v) {
                if anc_of_z.insert(p) {
                    queue.push_back(p);
                }
            }
        }

        // Trail state: (node, arrived-moving-upstream?). Upstream = toward parents.
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
        enum Dir {
            Up,
            Down,
        }
        let mut visited: BTreeSet<(usize, Dir)> = BTreeSet::new();
        let mut stack = vec![(x, Dir::Up)];
        while let Some((v, dir)) = stack.pop() {
            if !visited.insert((v, dir)) {
                continue;
            }
            if v == y {
                return Ok(false);
            }
            match dir {
                Dir::Up => {
                    if !z.contains(&v) {
                        for p in self.parents(v) {
                            stack.push((p, Dir::Up));
                        }
                        for c in self.children(v) {
                            stack.push((c, Dir::Down));
                        }
                    }
                }
                Dir::Down => {
                    if !z.contains(&v) {
                        for c in self.children(v) {
                            stack.push((c, Dir::Down));
                        }
                    }
                    if anc_of_z.contains(&v) {
                        for p in self.parents(v) {
                            stack.push((p, Dir::Up));
                        }
                    }
                }
            }
        }
        Ok(true)
    }

    pub fn d_separated_by_name(&self, x: &str, y: &str, z: &[&str]) -> Result<bool> {
        let xi = self.node_index(x)?;
        let yi = self.node_index(y)?;
        let zi = z
            .iter()
            .map(|n| self.node_index(n))
            .collect::<Result<BTreeSet<_>>>()?;
        self.d_separated(xi, yi, &zi)
    }

    /// Copy with every edge out of `v` removed (used by the backdoor check).
    pub(crate) fn without_outgoing(&self, v: usize) -> CausalGraph {
        let directed = self
            .directed
            .iter()
            .copied()
            .filter(|&(a, _)| a != v)
            .collect();
        let mut g = self.clone();
        g.directed = directed;
        g
    }

    /// Skeleton as normalized node pairs.
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        let mut s: BTreeSet<(usize, usize)> = self.undirected.clone();
        for &(a, b) in &self.directed {
            s.insert((a.min(b), a.max(b)));
        }
        s
    }
}

pub(crate) fn directed_is_acyclic(n: usize, directed: &BTreeSet<(usize, usize)>) -> bool {
    let mut indeg = vec![0usize; n];
    for &(_, b) in directed {
        indeg[b] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop_front() {
        seen += 1;
        for &(a, b) in directed {
            if a == v {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    queue.push_back(b);
                }
            }
        }
    }
    seen == n
}

// --- serde: graphs serialize as { class, nodes, edges } ---

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    class: GraphClass,
    nodes: Vec<String>,
    edges: Vec<Edge>,
}

impl Serialize for CausalGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRepr {
            class: self.class,
            nodes: self.nodes.clone(),
            edges: self.edges(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CausalGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(deserializer)?;
        let mut directed = Vec::new();
        let mut undirected = Vec::new();
        for e in &repr.edges {
            match (e.mark_a, e.mark_b) {
                (Mark::Tail, Mark::Arrow) => directed.push((e.a.as_str(), e.b.as_str())),
                (Mark::Arrow, Mark::Tail) => directed.push((e.b.as_str(), e.a.as_str())),
                (Mark::Tail, Mark::Tail) => undirected.push((e.a.as_str(), e.b.as_str())),
                (Mark::Arrow, Mark::Arrow) => {
                    return Err(serde::de::Error::custom("bidirected edges are unsupported"))
                }
            }
        }
        let g = match repr.class {
            GraphClass::Dag if undirected.is_empty() => CausalGraph::dag(repr.nodes, &directed),
            _ => CausalGraph::cpdag(repr.nodes, &directed, &undirected),
        };
        g.map_err(serde::de::Error::custom)
    }
}

// --- graph deviation metrics ---

/// Deviation counts of a graph against a baseline over the same node set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub arrow_precision: f64,
    pub arrow_recall: f64,
    pub arrow_tp: usize,
    pub arrow_fp: usize,
    pub arrow_fn: usize,
    pub adj_precision: f64,
    pub adj_recall: f64,
    pub adj_tp: usize,
    pub adj_fp: usize,
    pub adj_fn: usize,
    pub shd: usize,
}

fn ratio(tp: usize, other: usize) -> f64 {
    if tp + other == 0 {
        0.0
    } else {
        tp as f64 / (tp + other) as f64
    }
}

/// Adjacency metrics compare skeletons; arrow metrics compare directed edges;
/// SHD counts insertions, deletions, and reorientations (cost 1 each).
pub fn graph_metrics(g: &CausalGraph, baseline: &CausalGraph) -> Result<GraphMetrics> {
    let g_names: BTreeSet<_> = g.nodes().iter().collect();
    let b_names: BTreeSet<_> = baseline.nodes().iter().collect();
    if g_names != b_names {
        return Err(Error::Graph("node sets differ".into()));
    }
    // Remap g's indices into baseline index space.
    let remap: Vec<usize> = g
        .nodes()
        .iter()
        .map(|n| baseline.node_index(n).expect("same node set"))
        .collect();
    let g_dir: BTreeSet<(usize, usize)> = g
        .directed_edges()
        .iter()
        .map(|&(a, b)| (remap[a], remap[b]))
        .collect();
    let g_und: BTreeSet<(usize, usize)> = g
        .undirected_edges()
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (remap[a], remap[b]);
            (x.min(y), x.max(y))
        })
        .collect();
    let g_skel: BTreeSet<(usize, usize)> = g_dir
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .chain(g_und.iter().copied())
        .collect();
    let b_dir = baseline.directed_edges().clone();
    let b_und = baseline.undirected_edges().clone();
    let b_skel = baseline.skeleton();

    let adj_tp = g_skel.intersection(&b_skel).count();
    let adj_fp = g_skel.difference(&b_skel).count();
    let adj_fn = b_skel.difference(&g_skel).count();

    let arrow_tp = g_dir.intersection(&b_dir).count();
    let arrow_fp = g_dir.difference(&b_dir).count();
    let arrow_fn = b_dir.difference(&g_dir).count();

    let mut shd = adj_fp + adj_fn;
    for &pair in g_skel.intersection(&b_skel) {
        let (a, b) = pair;
        let g_kind = if g_und.contains(&pair) {
            0
        } else if g_dir.contains(&(a, b)) {
            1
        } else {
            2
        };
        let b_kind = if b_und.contains(&pair) {
            0
        } else if b_dir.contains(&(a, b)) {
            1
        } else {
            2
        };
        if g_kind != b_kind {
            shd += 1;
        }
    }

    Ok(GraphMetrics {
        arrow_precision: ratio(arrow_tp, arrow_fp),
        arrow_recall: ratio(arrow_tp, arrow_fn),
        arrow_tp,
        arrow_fp,
        arrow_fn,
        adj_precision: ratio(adj_tp, adj_fp),
        adj_recall: ratio(adj_tp, adj_fn),
        adj_tp,
        adj_fp,
        adj_fn,
        shd,
    })
}

// --- edge-list text format ---

/// Canonical edge-list serialization. Comment lines are written first, then
/// `node NAME` declarations in node order, then edges (`A -> B`, `A -- B`)
/// in canonical order. Round-trips bit-exactly through [`parse_edgelist`].
pub fn to_edgelist(g: &CausalGraph, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    for n in g.nodes() {
        out.push_str("node ");
        out.push_str(n);
        out.push('\n');
    }
    let mut lines: Vec<(usize, usize, u8)> = g
        .directed_edges()
        .iter()
        .map(|&(a, b)| (a, b, 0u8))
        .chain(g.undirected_edges().iter().map(|&(a, b)| (a, b, 1u8)))
        .collect();
    lines.sort();
    for (a, b, kind) in lines {
        let sep = if kind == 0 { "->" } else { "--" };
        out.push_str(&format!("{} {} {}\n", g.node_name(a), sep, g.node_name(b)));
    }
    out
}

/// Parse the edge-list format; returns the graph and preserved comment lines.
pub fn parse_edgelist(text: &str) -> Result<(CausalGraph, Vec<String>)> {
    let mut comments = Vec::new();
    let mut nodes: Vec<String> = Vec::new();
    let mut directed: Vec<(String, String)> = Vec::new();
    let mut undirected: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            comments.push(rest.trim_start().to_string());
            continue;
        }
        if let Some(rest) = line.strip_prefix("node ") {
            nodes.push(rest.trim().to_string());
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Graph(format!(
                "line {}: expected 'A -> B', 'A -- B', or 'node A', got {line:?}",
                lineno + 1
            )));
        }
        match parts[1] {
            "->" => directed.push((parts[0].to_string(), parts[2].to_string())),
            "--" => undirected.push((parts[0].to_string(), parts[2].to_string())),
            other => {
                return Err(Error::Graph(format!(
                    "line {}: unknown edge kind {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    let dir_refs: Vec<(&str, &str)> = directed.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let und_refs: Vec<(&str, &str)> = undirected.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let graph = if und_refs.is_empty() {
        CausalGraph::dag(nodes, &dir_refs)?
    } else {
        CausalGraph::cpdag(nodes, &dir_refs, &und_refs)?
    };
    Ok((graph, comments))
}
