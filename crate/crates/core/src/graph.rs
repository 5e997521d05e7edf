//! Unigram co-occurrence graphs, Girvan–Newman clustering, module
//! significance, degree-distribution fits, ego subgraphs and export.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use quick_xml::events::Event;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;
use crate::stats::{self, TestResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexRole {
    Category,
    TransitionalCode,
    #[default]
    Plain,
}

impl VertexRole {
    pub fn as_str(self) -> &'static str {
        match self {
            VertexRole::Category => "category",
            VertexRole::TransitionalCode => "transitional_code",
            VertexRole::Plain => "plain",
        }
    }
}

impl FromStr for VertexRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(VertexRole::Category),
            "transitional_code" => Ok(VertexRole::TransitionalCode),
            "plain" => Ok(VertexRole::Plain),
            other => Err(Error::parse("vertex role", other)),
        }
    }
}

/// Undirected weighted graph over sorted lemma labels. Edges are stored
/// once, keyed by `(i, j)` with `i < j`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnigramGraph {
    pub vertices: Vec<String>,
    pub roles: Vec<VertexRole>,
    pub edges: BTreeMap<(usize, usize), u32>,
}

impl UnigramGraph {
    /// Builds a graph from labelled edges. Vertices are sorted; duplicate
    /// edges keep the last weight.
    pub fn from_edges<'a>(
        vertices: impl IntoIterator<Item = (&'a str, VertexRole)>,
        edges: impl IntoIterator<Item = (&'a str, &'a str, u32)>,
    ) -> Result<Self> {
        let mut vs: Vec<(String, VertexRole)> = vertices.into_iter().map(|(v, r)| (v.to_string(), r)).collect();
        vs.sort_by(|a, b| a.0.cmp(&b.0));
        vs.dedup_by(|a, b| a.0 == b.0);
        let mut g = UnigramGraph {
            vertices: vs.iter().map(|v| v.0.clone()).collect(),
            roles: vs.iter().map(|v| v.1).collect(),
            edges: BTreeMap::new(),
        };
        for (a, b, w) in edges {
            let i = g.index(a).ok_or_else(|| Error::NotFound(format!("vertex `{a}`")))?;
            let j = g.index(b).ok_or_else(|| Error::NotFound(format!("vertex `{b}`")))?;
            if i == j {
                return Err(Error::Validation(format!("self-loop on `{a}`")));
            }
            if w == 0 {
                continue;
            }
            g.edges.insert((i.min(j), i.max(j)), w);
        }
        Ok(g)
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.vertices.binary_search_by(|v| v.as_str().cmp(label)).ok()
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<u32> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        self.edges.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn role(&self, label: &str) -> Option<VertexRole> {
        self.index(label).map(|i| self.roles[i])
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbour lists with weights, indexed like `vertices`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, u32)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (&(i, j), &w) in &self.edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency().iter().map(Vec::len).collect()
    }

    pub fn strengths(&self) -> Vec<u64> {
        let mut s = vec![0u64; self.vertices.len()];
        for (&(i, j), &w) in &self.edges {
            s[i] += u64::from(w);
            s[j] += u64::from(w);
        }
        s
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().map(|&w| u64::from(w)).sum()
    }
}

/// Edge weight = number of matrix columns where both unigrams are present.
pub fn cooccurrence_graph(binary: &BinaryMatrix, roles: &HashMap<String, VertexRole>) -> Result<UnigramGraph> {
    if binary.unigrams.is_empty() {
        return Err(Error::Empty("binary matrix"));
    }
    let mut order: Vec<usize> = (0..binary.unigrams.len()).collect();
    order.sort_by(|&a, &b| binary.unigrams[a].cmp(&binary.unigrams[b]));
    let vertices: Vec<String> = order.iter().map(|&r| binary.unigrams[r].clone()).collect();
    let roles = vertices.iter().map(|v| roles.get(v).copied().unwrap_or_default()).collect();
    let mut edges = BTreeMap::new();
    for i in 0..order.len() {
        let a = &binary.presence[order[i]];
        for j in i + 1..order.len() {
            let b = &binary.presence[order[j]];
            let w = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as u32;
            if w > 0 {
                edges.insert((i, j), w);
            }
        }
    }
    Ok(UnigramGraph { vertices, roles, edges })
}

#[derive(Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Edge betweenness over unordered vertex pairs, with edge length
/// `1 / weight`. Paths of equal length (within a relative 1e-9) share
/// their pair's unit of flow equally.
pub fn edge_betweenness(graph: &UnigramGraph) -> BTreeMap<(usize, usize), f64> {
    let adj = graph.adjacency();
    let all: Vec<usize> = (0..graph.vertices.len()).collect();
    betweenness_within(&adj, &all)
}

fn betweenness_within(adj: &[Vec<(usize, u32)>], sources: &[usize]) -> BTreeMap<(usize, usize), f64> {
    let n = adj.len();
    let mut scores: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut dist = vec![f64::INFINITY; n];
    let mut sigma = vec![0.0f64; n];
    let mut delta = vec![0.0f64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut done = vec![false; n];
    for &s in sources {
        let mut touched = Vec::new();
        let mut order = Vec::new();
        let mut heap = BinaryHeap::new();
        dist[s] = 0.0;
        sigma[s] = 1.0;
        touched.push(s);
        heap.push((Dist(0.0), s));
        while let Some((Dist(d), v)) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            order.push(v);
            for &(w, weight) in &adj[v] {
                if done[w] {
                    continue;
                }
                let nd = d + 1.0 / f64::from(weight);
                if dist[w].is_infinite() {
                    touched.push(w);
                }
                if dist[w].is_finite() && same_length(nd, dist[w]) {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                } else if nd < dist[w] {
                    dist[w] = nd;
                    sigma[w] = sigma[v];
                    preds[w].clear();
                    preds[w].push(v);
                    heap.push((Dist(nd), w));
                }
            }
        }
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
                *scores.entry((v.min(w), v.max(w))).or_default() += c;
                delta[v] += c;
            }
        }
        for &v in &touched {
            dist[v] = f64::INFINITY;
            sigma[v] = 0.0;
            delta[v] = 0.0;
            preds[v].clear();
            done[v] = false;
        }
    }
    for v in scores.values_mut() {
        *v /= 2.0;
    }
    scores
}

/// Connected components as sorted vertex-index lists, ordered by first
/// member.
fn components(n: usize, adj: &[Vec<(usize, u32)>], within: Option<&[usize]>) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let starts: Vec<usize> = within.map_or_else(|| (0..n).collect(), <[usize]>::to_vec);
    for s in starts {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &(w, _) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out.sort();
    out
}

/// Newman–Girvan modularity of a vertex partition on the weighted graph.
pub fn modularity(graph: &UnigramGraph, communities: &[Vec<usize>]) -> f64 {
    let total = graph.total_weight() as f64;
    if total == 0.0 {
        return 0.0;
    }
    let mut community_of = vec![usize::MAX; graph.vertices.len()];
    for (c, members) in communities.iter().enumerate() {
        for &v in members {
            community_of[v] = c;
        }
    }
    let mut internal = vec![0.0; communities.len()];
    for (&(i, j), &w) in &graph.edges {
        if community_of[i] == community_of[j] && community_of[i] != usize::MAX {
            internal[community_of[i]] += f64::from(w);
        }
    }
    let strengths = graph.strengths();
    communities
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let s: f64 = members.iter().map(|&v| strengths[v] as f64).sum();
            internal[c] / total - (s / (2.0 * total)).powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub removed: (String, String),
    pub betweenness: f64,
    pub components: usize,
    /// Set when this removal split a component.
    pub modularity: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub initial_components: usize,
    pub initial_modularity: f64,
    pub steps: Vec<RemovalStep>,
    /// Index of the chosen step; `None` means the initial components.
    pub chosen_step: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Modules numbered from 1 in order of their smallest member.
    pub modules: Vec<Vec<String>>,
    pub eliminated: Vec<String>,
    pub modularity: f64,
    pub min_cluster_size: usize,
}

impl Partition {
    /// 1-based module id of a vertex.
    pub fn module_of(&self, label: &str) -> Option<usize> {
        self.modules
            .iter()
            .position(|m| m.binary_search_by(|v| v.as_str().cmp(label)).is_ok())
            .map(|i| i + 1)
    }

    pub fn is_eliminated(&self, label: &str) -> bool {
        self.eliminated.binary_search_by(|v| v.as_str().cmp(label)).is_ok()
    }
}

/// Girvan–Newman divisive clustering.
///
/// Removes the highest-betweenness edge until no edges remain, recording
/// every removal that splits a component. The returned partition is the
/// recorded split (or the starting components) with maximum modularity among
/// those whose non-singleton components all reach `min_cluster_size`;
/// earlier splits win ties. Singletons of that split are eliminated.
pub fn girvan_newman(graph: &UnigramGraph, min_cluster_size: usize) -> Result<(Partition, Dendrogram)> {
    if graph.vertices.is_empty() {
        return Err(Error::Empty("graph"));
    }
    if min_cluster_size < 2 {
        return Err(Error::Config("minimum cluster size must be at least 2".into()));
    }
    let n = graph.vertices.len();
    if graph.edges.is_empty() {
        warn!("graph has no edges: every vertex eliminated");
        return Ok((
            Partition {
                modules: Vec::new(),
                eliminated: graph.vertices.clone(),
                modularity: 0.0,
                min_cluster_size,
            },
            Dendrogram {
                initial_components: n,
                ..Dendrogram::default()
            },
        ));
    }
    let mut adj = graph.adjacency();
    let mut comps = components(n, &adj, None);
    let feasible = |cs: &[Vec<usize>]| cs.iter().all(|c| c.len() == 1 || c.len() >= min_cluster_size);
    let initial_modularity = modularity(graph, &comps);
    let mut best: Option<(f64, Option<usize>, Vec<Vec<usize>>)> =
        feasible(&comps).then(|| (initial_modularity, None, comps.clone()));
    let mut dendrogram = Dendrogram {
        initial_components: comps.len(),
        initial_modularity,
        ..Dendrogram::default()
    };
    // betweenness is cached per component and refreshed only where an edge
    // was removed
    let mut cached: Vec<BTreeMap<(usize, usize), f64>> =
        comps.iter().map(|c| betweenness_within(&adj, c)).collect();
    loop {
        let mut top: Option<((usize, usize), f64, usize)> = None;
        for (ci, scores) in cached.iter().enumerate() {
            for (&e, &b) in scores {
                top = match top {
                    None => Some((e, b, ci)),
                    Some((te, tb, tc)) => {
                        if b > tb && !same_length(b, tb) || same_length(b, tb) && e < te {
                            Some((e, b, ci))
                        } else {
                            Some((te, tb, tc))
                        }
                    }
                };
            }
        }
        let Some(((i, j), b, ci)) = top else { break };
        adj[i].retain(|&(w, _)| w != j);
        adj[j].retain(|&(w, _)| w != i);
        let old = comps.remove(ci);
        cached.remove(ci);
        let pieces = components(n, &adj, Some(&old));
        let split = pieces.len() > 1;
        for p in pieces {
            let scores = betweenness_within(&adj, &p);
            let at = comps.partition_point(|c| c < &p);
            comps.insert(at, p);
            cached.insert(at, scores);
        }
        let q = split.then(|| modularity(graph, &comps));
        if let Some(q) = q {
            if feasible(&comps) && best.as_ref().is_none_or(|(bq, _, _)| q > bq + 1e-12) {
                best = Some((q, Some(dendrogram.steps.len()), comps.clone()));
            }
        }
        dendrogram.steps.push(RemovalStep {
            removed: (graph.vertices[i].clone(), graph.vertices[j].clone()),
            betweenness: b,
            components: comps.len(),
            modularity: q,
        });
    }
    let (q, chosen, chosen_comps) = best.expect("the all-singleton split is always feasible");
    dendrogram.chosen_step = chosen;
    let mut modules = Vec::new();
    let mut eliminated = Vec::new();
    for c in chosen_comps {
        let labels: Vec<String> = c.iter().map(|&v| graph.vertices[v].clone()).collect();
        if labels.len() == 1 {
            eliminated.extend(labels);
        } else {
            modules.push(labels);
        }
    }
    eliminated.sort();
    info!("girvan-newman: {} modules, {} eliminated, Q = {q:.4}", modules.len(), eliminated.len());
    Ok((
        Partition {
            modules,
            eliminated,
            modularity: q,
            min_cluster_size,
        },
        dendrogram,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Module,
    AntiModule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleReport {
    pub module: usize,
    pub members: Vec<String>,
    pub within: Vec<f64>,
    pub cross: Vec<f64>,
    pub test: TestResult,
    pub verdict: Verdict,
}

/// Per-module rank-sum test of within-module against cross-module vertex
/// strengths. Modules whose samples are both all zero are skipped.
pub fn module_significance(graph: &UnigramGraph, partition: &Partition, alpha: f64) -> Result<Vec<ModuleReport>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let adj = graph.adjacency();
    let mut out = Vec::new();
    for (mi, members) in partition.modules.iter().enumerate() {
        let idx: Vec<usize> = members
            .iter()
            .map(|m| graph.index(m).ok_or_else(|| Error::NotFound(format!("vertex `{m}`"))))
            .collect::<Result<_>>()?;
        let inside: BTreeSet<usize> = idx.iter().copied().collect();
        let mut within = Vec::new();
        let mut cross = Vec::new();
        for &v in &idx {
            let (mut a, mut b) = (0.0, 0.0);
            for &(w, weight) in &adj[v] {
                if inside.contains(&w) {
                    a += f64::from(weight);
                } else {
                    b += f64::from(weight);
                }
            }
            within.push(a);
            cross.push(b);
        }
        if within.iter().chain(&cross).all(|&x| x == 0.0) {
            info!("module {} skipped: no edge weight", mi + 1);
            continue;
        }
        let test = stats::wilcoxon_rank_sum(&within, &cross)?;
        let verdict = if test.p_value > alpha { Verdict::AntiModule } else { Verdict::Module };
        out.push(ModuleReport {
            module: mi + 1,
            members: members.clone(),
            within,
            cross,
            test,
            verdict,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeFit {
    /// `(degree, vertex count)` for every non-zero degree.
    pub histogram: Vec<(usize, usize)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Log-log least-squares fit of the degree histogram. `None` when fewer than
/// three distinct non-zero degrees occur.
pub fn degree_distribution_fit(graph: &UnigramGraph) -> Option<DegreeFit> {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for d in graph.degrees() {
        if d > 0 {
            *hist.entry(d).or_default() += 1;
        }
    }
    if hist.len() < 3 {
        info!("degree fit not applicable: {} distinct degrees", hist.len());
        return None;
    }
    let x: Vec<f64> = hist.keys().map(|&d| (d as f64).ln()).collect();
    let y: Vec<f64> = hist.values().map(|&c| (c as f64).ln()).collect();
    let fit = stats::least_squares(&x, &y).ok()?;
    Some(DegreeFit {
        histogram: hist.into_iter().collect(),
        slope: fit.slope,
        intercept: fit.intercept,
        // a flat histogram is fitted exactly by a horizontal line
        r_squared: fit.r_squared.unwrap_or(1.0).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewNode {
    pub id: String,
    /// Original vertices behind the node.
    pub members: Vec<String>,
    pub module: Option<usize>,
    pub strength: u64,
    pub relative_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEdge {
    pub source: String,
    pub target: String,
    pub weight: u64,
    pub relative_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphView {
    pub focus: String,
    pub extras: Vec<String>,
    pub nodes: Vec<ViewNode>,
    pub edges: Vec<ViewEdge>,
}

impl SubgraphView {
    pub fn node(&self, id: &str) -> Option<&ViewNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&ViewEdge> {
        self.edges
            .iter()
            .find(|e| (e.source == a && e.target == b) || (e.source == b && e.target == a))
    }
}

/// Supervertex id for a module.
pub fn module_node_id(module: usize) -> String {
    format!("module {module}")
}

/// The focus vertex, the extra vertices, and the focus's neighbours grouped
/// by module into supervertices. Eliminated neighbours stay single nodes.
pub fn ego_subgraph(graph: &UnigramGraph, focus: &str, extras: &[String], partition: &Partition) -> Result<SubgraphView> {
    let f = graph
        .index(focus)
        .ok_or_else(|| Error::NotFound(format!("focus vertex `{focus}` is not in the graph")))?;
    let mut node_of: BTreeMap<usize, String> = BTreeMap::new();
    node_of.insert(f, focus.to_string());
    let mut kept_extras = Vec::new();
    for e in extras {
        match graph.index(e) {
            Some(i) if i != f => {
                node_of.insert(i, e.clone());
                kept_extras.push(e.clone());
            }
            Some(_) => {}
            None => warn!("extra vertex `{e}` is not in the graph"),
        }
    }
    let adj = graph.adjacency();
    for &(n, _) in &adj[f] {
        if node_of.contains_key(&n) {
            continue;
        }
        let label = &graph.vertices[n];
        let id = partition.module_of(label).map_or_else(|| label.clone(), module_node_id);
        node_of.insert(n, id);
    }
    let mut nodes: BTreeMap<String, ViewNode> = BTreeMap::new();
    for (&v, id) in &node_of {
        let node = nodes.entry(id.clone()).or_insert_with(|| ViewNode {
            id: id.clone(),
            members: Vec::new(),
            module: None,
            strength: 0,
            relative_degree: 0.0,
        });
        node.members.push(graph.vertices[v].clone());
    }
    for node in nodes.values_mut() {
        node.module = partition.module_of(&node.members[0]);
    }
    let mut weights: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (&(i, j), &w) in &graph.edges {
        let (Some(a), Some(b)) = (node_of.get(&i), node_of.get(&j)) else {
            continue;
        };
        if a == b {
            continue;
        }
        let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        *weights.entry(key).or_default() += u64::from(w);
    }
    let total: u64 = weights.values().sum();
    let mut edges = Vec::new();
    for ((a, b), w) in weights {
        nodes.get_mut(&a).expect("node").strength += w;
        nodes.get_mut(&b).expect("node").strength += w;
        edges.push(ViewEdge {
            source: a,
            target: b,
            weight: w,
            relative_weight: if total == 0 { 0.0 } else { w as f64 / total as f64 },
        });
    }
    for node in nodes.values_mut() {
        node.relative_degree = if total == 0 {
            0.0
        } else {
            node.strength as f64 / (2 * total) as f64
        };
    }
    Ok(SubgraphView {
        focus: focus.to_string(),
        extras: kept_extras,
        nodes: nodes.into_values().collect(),
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    GraphMl,
    Dot,
    Csv,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::GraphMl => "graphml",
            ExportFormat::Dot => "dot",
            ExportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphml" => Ok(ExportFormat::GraphMl),
            "dot" => Ok(ExportFormat::Dot),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(Error::Config(format!("unknown graph format `{other}`"))),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Format-neutral graph with string attributes, the unit of export and
/// import.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportGraph {
    pub nodes: Vec<(String, BTreeMap<String, String>)>,
    pub edges: Vec<(String, String, BTreeMap<String, String>)>,
}

/// Attributes exported as numbers.
const NUMERIC_KEYS: [&str; 4] = ["weight", "relative_degree", "relative_weight", "strength"];

impl ExportGraph {
    pub fn from_graph(graph: &UnigramGraph, partition: Option<&Partition>) -> Self {
        let strengths = graph.strengths();
        let total: u64 = strengths.iter().sum();
        let nodes = graph
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut a = BTreeMap::new();
                a.insert("role".to_string(), graph.roles[i].as_str().to_string());
                if let Some(p) = partition {
                    let m = p.module_of(v).map_or_else(|| "eliminated".to_string(), |m| m.to_string());
                    a.insert("module".to_string(), m);
                }
                let rel = if total == 0 { 0.0 } else { strengths[i] as f64 / total as f64 };
                a.insert("relative_degree".to_string(), format!("{rel}"));
                (v.clone(), a)
            })
            .collect();
        let edges = graph
            .edges
            .iter()
            .map(|(&(i, j), &w)| {
                let mut a = BTreeMap::new();
                a.insert("weight".to_string(), w.to_string());
                (graph.vertices[i].clone(), graph.vertices[j].clone(), a)
            })
            .collect();
        ExportGraph { nodes, edges }
    }

    pub fn from_view(view: &SubgraphView) -> Self {
        let nodes = view
            .nodes
            .iter()
            .map(|n| {
                let mut a = BTreeMap::new();
                let kind = if n.id == view.focus {
                    "focus"
                } else if view.extras.contains(&n.id) {
                    "extra"
                } else if n.members.len() > 1 || n.id.starts_with("module ") {
                    "supervertex"
                } else {
                    "neighbour"
                };
                a.insert("kind".to_string(), kind.to_string());
                a.insert("members".to_string(), n.members.join(";"));
                if let Some(m) = n.module {
                    a.insert("module".to_string(), m.to_string());
                }
                a.insert("strength".to_string(), n.strength.to_string());
                a.insert("relative_degree".to_string(), format!("{}", n.relative_degree));
                (n.id.clone(), a)
            })
            .collect();
        let edges = view
            .edges
            .iter()
            .map(|e| {
                let mut a = BTreeMap::new();
                a.insert("weight".to_string(), e.weight.to_string());
                a.insert("relative_weight".to_string(), format!("{}", e.relative_weight));
                (e.source.clone(), e.target.clone(), a)
            })
            .collect();
        ExportGraph { nodes, edges }
    }

    /// Rebuilds a `UnigramGraph` from exported roles and weights.
    pub fn to_unigram_graph(&self) -> Result<UnigramGraph> {
        let roles: Vec<(&str, VertexRole)> = self
            .nodes
            .iter()
            .map(|(id, a)| Ok((id.as_str(), a.get("role").map_or(Ok(VertexRole::Plain), |r| r.parse())?)))
            .collect::<Result<_>>()?;
        let edges: Vec<(&str, &str, u32)> = self
            .edges
            .iter()
            .map(|(s, t, a)| {
                let w = a
                    .get("weight")
                    .ok_or_else(|| Error::parse("graph", "edge without weight"))?
                    .parse::<u32>()
                    .map_err(|_| Error::parse("graph", "non-integer weight"))?;
                Ok((s.as_str(), t.as_str(), w))
            })
            .collect::<Result<_>>()?;
        UnigramGraph::from_edges(roles, edges)
    }

    pub fn render(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::GraphMl => self.to_graphml(),
            ExportFormat::Dot => self.to_dot(),
            ExportFormat::Csv => self.to_csv(),
        }
    }

    fn keys(&self) -> (BTreeSet<&str>, BTreeSet<&str>) {
        let nk = self.nodes.iter().flat_map(|(_, a)| a.keys().map(String::as_str)).collect();
        let ek = self.edges.iter().flat_map(|(_, _, a)| a.keys().map(String::as_str)).collect();
        (nk, ek)
    }

    pub fn to_graphml(&self) -> String {
        use quick_xml::escape::escape;
        let (nk, ek) = self.keys();
        let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
        for (kind, keys) in [("node", &nk), ("edge", &ek)] {
            for k in keys.iter() {
                let ty = if NUMERIC_KEYS.contains(k) { "double" } else { "string" };
                s.push_str(&format!(
                    "  <key id=\"{kind}_{k}\" for=\"{kind}\" attr.name=\"{k}\" attr.type=\"{ty}\"/>\n"
                ));
            }
        }
        s.push_str("  <graph id=\"G\" edgedefault=\"undirected\">\n");
        for (id, attrs) in &self.nodes {
            s.push_str(&format!("    <node id=\"{}\">", escape(id.as_str())));
            for (k, v) in attrs {
                s.push_str(&format!("<data key=\"node_{k}\">{}</data>", escape(v.as_str())));
            }
            s.push_str("</node>\n");
        }
        for (a, b, attrs) in &self.edges {
            s.push_str(&format!(
                "    <edge source=\"{}\" target=\"{}\">",
                escape(a.as_str()),
                escape(b.as_str())
            ));
            for (k, v) in attrs {
                s.push_str(&format!("<data key=\"edge_{k}\">{}</data>", escape(v.as_str())));
            }
            s.push_str("</edge>\n");
        }
        s.push_str("  </graph>\n</graphml>\n");
        s
    }

    pub fn from_graphml(text: &str) -> Result<Self> {
        let bad = |d: String| Error::parse("graphml", d);
        let mut reader = quick_xml::Reader::from_str(text);
        reader.config_mut().trim_text(true);
        let mut key_names: HashMap<String, String> = HashMap::new();
        let mut out = ExportGraph::default();
        enum Open {
            Node,
            Edge,
        }
        let mut open: Option<Open> = None;
        let mut data_key: Option<String> = None;
        let attr = |e: &quick_xml::events::BytesStart, name: &str| -> Result<Option<String>> {
            for a in e.attributes() {
                let a = a.map_err(|e| bad(e.to_string()))?;
                if a.key.as_ref() == name.as_bytes() {
                    return Ok(Some(a.unescape_value().map_err(|e| bad(e.to_string()))?.into_owned()));
                }
            }
            Ok(None)
        };
        loop {
            let ev = reader.read_event().map_err(|e| bad(e.to_string()))?;
            match ev {
                Event::Eof => break,
                Event::Start(ref e) | Event::Empty(ref e) => {
                    let empty = matches!(ev, Event::Empty(_));
                    match e.name().as_ref() {
                        b"key" => {
                            let id = attr(e, "id")?.ok_or_else(|| bad("key without id".into()))?;
                            let name = attr(e, "attr.name")?.unwrap_or_else(|| id.clone());
                            key_names.insert(id, name);
                        }
                        b"node" => {
                            let id = attr(e, "id")?.ok_or_else(|| bad("node without id".into()))?;
                            out.nodes.push((id, BTreeMap::new()));
                            open = (!empty).then_some(Open::Node);
                        }
                        b"edge" => {
                            let s = attr(e, "source")?.ok_or_else(|| bad("edge without source".into()))?;
                            let t = attr(e, "target")?.ok_or_else(|| bad("edge without target".into()))?;
                            out.edges.push((s, t, BTreeMap::new()));
                            open = (!empty).then_some(Open::Edge);
                        }
                        b"data" => {
                            let k = attr(e, "key")?.ok_or_else(|| bad("data without key".into()))?;
                            let name = key_names.get(&k).cloned().unwrap_or(k);
                            if empty {
                                insert_attr(&mut out, &open, name, String::new());
                            } else {
                                data_key = Some(name);
                            }
                        }
                        _ => {}
                    }
                }
                Event::Text(t) => {
                    if let Some(k) = data_key.take() {
                        let v = t.unescape().map_err(|e| bad(e.to_string()))?.into_owned();
                        insert_attr(&mut out, &open, k, v);
                    }
                }
                Event::End(ref e) => match e.name().as_ref() {
                    b"node" | b"edge" => open = None,
                    b"data" => {
                        if let Some(k) = data_key.take() {
                            insert_attr(&mut out, &open, k, String::new());
                        }
                    }
                    _ => {}
                },
                _ => {}
            }
        }

        fn insert_attr(g: &mut ExportGraph, open: &Option<Open>, k: String, v: String) {
            match open {
                Some(Open::Node) => {
                    g.nodes.last_mut().expect("open node").1.insert(k, v);
                }
                Some(Open::Edge) => {
                    g.edges.last_mut().expect("open edge").2.insert(k, v);
                }
                None => {}
            }
        }
        Ok(out)
    }

    pub fn to_dot(&self) -> String {
        let q = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let attrs = |a: &BTreeMap<String, String>| {
            a.iter().map(|(k, v)| format!("{k}={}", q(v))).collect::<Vec<_>>().join(", ")
        };
        let mut s = String::from("graph G {\n");
        for (id, a) in &self.nodes {
            s.push_str(&format!("  {} [{}];\n", q(id), attrs(a)));
        }
        for (x, y, a) in &self.edges {
            s.push_str(&format!("  {} -- {} [{}];\n", q(x), q(y), attrs(a)));
        }
        s.push_str("}\n");
        s
    }

    /// Edge list `source,target,weight`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source", "target", "weight"]).expect("memory");
        for (x, y, a) in &self.edges {
            let weight = a.get("weight").map_or("", String::as_str);
            w.write_record([x.as_str(), y.as_str(), weight]).expect("memory");
        }
        String::from_utf8(w.into_inner().expect("memory")).expect("utf-8 input")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain<'a>(vs: &[&'a str]) -> Vec<(&'a str, VertexRole)> {
        vs.iter().map(|v| (*v, VertexRole::Plain)).collect()
    }

    fn graph(vs: &[&str], es: &[(&str, &str, u32)]) -> UnigramGraph {
        UnigramGraph::from_edges(plain(vs), es.iter().copied()).unwrap()
    }

    fn two_triangles() -> UnigramGraph {
        graph(
            &["a", "b", "c", "d", "e", "f"],
            &[("a", "b", 1), ("b", "c", 1), ("a", "c", 1), ("d", "e", 1), ("e", "f", 1), ("d", "f", 1), ("c", "d", 1)],
        )
    }

    #[test]
    fn cooccurrence_counts_shared_documents() {
        let m = BinaryMatrix {
            label: "t".into(),
            unigrams: vec!["v".into(), "u".into(), "w".into()],
            documents: (1..=4).map(|i| format!("d{i}")).collect(),
            presence: vec![
                vec![false, true, true, true],
                vec![true, true, true, false],
                vec![true, false, false, false],
            ],
        };
        let g = cooccurrence_graph(&m, &HashMap::new()).unwrap();
        assert_eq!(g.vertices, vec!["u", "v", "w"]);
        assert_eq!(g.weight("u", "v"), Some(2));
        assert_eq!(g.weight("v", "u"), Some(2));
        assert_eq!(g.weight("v", "w"), None);
        assert_eq!(g.weight("u", "w"), Some(1));
    }

    #[test]
    fn bridge_carries_all_cross_pairs() {
        let g = two_triangles();
        let b = edge_betweenness(&g);
        let (c, d) = (g.index("c").unwrap(), g.index("d").unwrap());
        assert!((b[&(c, d)] - 9.0).abs() < 1e-12);
        let total: f64 = b.values().sum();
        // unit weights: sum over pairs of path length = 15 pairs, 6*1 + 9*... computed by hand
        let mut expected = 0.0;
        let dist = [[0, 1, 1, 2, 3, 3], [1, 0, 1, 2, 3, 3], [1, 1, 0, 1, 2, 2], [2, 2, 1, 0, 1, 1], [3, 3, 2, 1, 0, 1], [3, 3, 2, 1, 1, 0]];
        for i in 0..6 {
            for j in i + 1..6 {
                expected += f64::from(dist[i][j]);
            }
        }
        assert!((total - expected).abs() < 1e-9);
    }

    #[test]
    fn two_triangles_split_at_bridge() {
        let (p, trace) = girvan_newman(&two_triangles(), 2).unwrap();
        assert_eq!(trace.steps[0].removed, ("c".to_string(), "d".to_string()));
        assert_eq!(p.modules, vec![vec!["a", "b", "c"], vec!["d", "e", "f"]]);
        assert!(p.eliminated.is_empty());
        assert!(p.modularity >= trace.initial_modularity);
    }

    #[test]
    fn path_splits_in_the_middle() {
        let g = graph(&["a", "b", "c", "d"], &[("a", "b", 1), ("b", "c", 1), ("c", "d", 1)]);
        let b = edge_betweenness(&g);
        assert!((b[&(1, 2)] - 4.0).abs() < 1e-12);
        assert!((b[&(0, 1)] - 3.0).abs() < 1e-12);
        let (p, trace) = girvan_newman(&g, 2).unwrap();
        assert_eq!(trace.steps[0].removed, ("b".to_string(), "c".to_string()));
        assert_eq!(p.modules, vec![vec!["a", "b"], vec!["c", "d"]]);
    }

    #[test]
    fn single_edge_is_one_module() {
        let g = graph(&["a", "b"], &[("a", "b", 3)]);
        let (p, _) = girvan_newman(&g, 2).unwrap();
        assert_eq!(p.modules, vec![vec!["a", "b"]]);
    }

    #[test]
    fn edgeless_graph_is_all_eliminated() {
        let g = graph(&["a", "b"], &[]);
        let (p, _) = girvan_newman(&g, 2).unwrap();
        assert!(p.modules.is_empty());
        assert_eq!(p.eliminated, vec!["a", "b"]);
        assert!(girvan_newman(&UnigramGraph::default(), 2).is_err());
    }

    #[test]
    fn heavy_edges_are_short() {
        // a-b heavy, b-c light: the shortest a..c route is through b either way,
        // but with a parallel route a-d-c of heavy edges the light one carries nothing
        let g = graph(&["a", "b", "c", "d"], &[("a", "b", 1), ("b", "c", 1), ("a", "d", 5), ("d", "c", 5)]);
        let b = edge_betweenness(&g);
        let (a, bb, c, d) = (0, 1, 2, 3);
        assert!(b[&(a, d)] > b[&(a, bb)]);
        assert!(b[&(c, d)] > b[&(bb, c)]);
    }

    #[test]
    fn clique_with_weak_link_is_a_module() {
        let vs = ["a", "b", "c", "d", "e", "x", "y", "z", "w", "v"];
        let mut es = Vec::new();
        for (i, a) in vs[..5].iter().enumerate() {
            for b in &vs[i + 1..5] {
                es.push((*a, *b, 3));
            }
        }
        for (i, a) in vs[5..].iter().enumerate() {
            for b in &vs[5 + i + 1..] {
                es.push((*a, *b, 3));
            }
        }
        es.push(("e", "x", 1));
        let g = graph(&vs, &es);
        let (p, _) = girvan_newman(&g, 2).unwrap();
        assert_eq!(p.modules.len(), 2);
        let reports = module_significance(&g, &p, 0.05).unwrap();
        assert!(reports.iter().all(|r| r.verdict == Verdict::Module));
        assert!(reports[0].test.p_value < 0.05);
    }

    #[test]
    fn loosely_tied_group_is_an_anti_module() {
        let g = graph(&["a", "b", "x", "y"], &[("a", "b", 1), ("a", "x", 4), ("b", "y", 4)]);
        let p = Partition {
            modules: vec![vec!["a".into(), "b".into()], vec!["x".into(), "y".into()]],
            eliminated: vec![],
            modularity: 0.0,
            min_cluster_size: 2,
        };
        let reports = module_significance(&g, &p, 0.05).unwrap();
        assert_eq!(reports[0].verdict, Verdict::AntiModule);
        // x and y have no edge between them and no cross weight? they do: 4 each
        assert!(reports.len() == 2);
    }

    #[test]
    fn degree_fit_cases() {
        // star plus chain: degrees 1,1,1,2,4 ... check against explicit regression
        let g = graph(
            &["h", "a", "b", "c", "d", "e", "f"],
            &[("h", "a", 1), ("h", "b", 1), ("h", "c", 1), ("h", "d", 1), ("d", "e", 1), ("e", "f", 1), ("a", "b", 1)],
        );
        let fit = degree_distribution_fit(&g).unwrap();
        assert_eq!(fit.histogram, vec![(1, 2), (2, 4), (4, 1)]);
        assert!((0.0..=1.0).contains(&fit.r_squared));

        let square = graph(&["a", "b", "c", "d"], &[("a", "b", 1), ("b", "c", 1), ("c", "d", 1), ("a", "d", 1)]);
        assert!(degree_distribution_fit(&square).is_none());
    }

    #[test]
    fn ego_view_aggregates_modules() {
        let g = graph(
            &["f", "n1", "n2", "n3", "x", "lone"],
            &[("f", "n1", 2), ("f", "n2", 1), ("f", "n3", 4), ("n1", "n2", 1), ("n3", "x", 1), ("f", "lone", 1)],
        );
        let p = Partition {
            modules: vec![vec!["n1".into(), "n2".into(), "n3".into()]],
            eliminated: vec!["f".into(), "lone".into(), "x".into()],
            modularity: 0.0,
            min_cluster_size: 2,
        };
        let v = ego_subgraph(&g, "f", &["x".to_string()], &p).unwrap();
        let ids: Vec<&str> = v.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, vec!["f", "lone", "module 1", "x"]);
        assert_eq!(v.edge("f", "module 1").unwrap().weight, 7);
        assert_eq!(v.edge("module 1", "x").unwrap().weight, 1);
        assert!(v.edge("f", "x").is_none());
        let sum: f64 = v.nodes.iter().map(|n| n.relative_degree).sum();
        assert!(sum <= 1.0 + 1e-12);
        assert!(matches!(ego_subgraph(&g, "absent", &[], &p), Err(Error::NotFound(_))));
    }

    #[test]
    fn graphml_round_trip() {
        let mut g = two_triangles();
        g.roles[0] = VertexRole::Category;
        g.roles[3] = VertexRole::TransitionalCode;
        let (p, _) = girvan_newman(&g, 2).unwrap();
        let text = ExportGraph::from_graph(&g, Some(&p)).to_graphml();
        let back = ExportGraph::from_graphml(&text).unwrap();
        assert_eq!(back, ExportGraph::from_graph(&g, Some(&p)));
        assert_eq!(back.to_unigram_graph().unwrap(), g);
        assert_eq!(text, ExportGraph::from_graph(&g, Some(&p)).to_graphml());

        let empty = ExportGraph::default().to_graphml();
        assert_eq!(ExportGraph::from_graphml(&empty).unwrap(), ExportGraph::default());
        assert!("png".parse::<ExportFormat>().is_err());
    }

    #[test]
    fn dot_and_csv_render() {
        let g = graph(&["a b", "c"], &[("a b", "c", 2)]);
        let e = ExportGraph::from_graph(&g, None);
        assert!(e.to_dot().contains("\"a b\" -- \"c\" [weight=\"2\"];"));
        assert_eq!(e.to_csv(), "source,target,weight\na b,c,2\n");
    }
}
