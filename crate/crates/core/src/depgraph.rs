//! Handler dependency graph and related-set decomposition.
//!
//! Vertices are handlers, numbered in input order. An edge `u -> v` means an
//! output pattern of `u` overlaps an input pattern of `v`. Strongly connected
//! components are condensed into composite vertices. Each leaf of the
//! condensed graph roots one related set (itself plus its ancestors), pairs of
//! vertices with conflicting outputs add the union of their ancestor sets, and
//! sets contained in other sets are dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::Serialize;

use crate::appdsl::{extract_io_events, AppSpec, EventPattern, HandlerIo};

/// A handler of an installed app instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct HandlerRef {
    pub app: String,
    pub handler: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HandlerVertex {
    pub id: usize,
    /// One member for a plain handler, several for a condensed cycle.
    pub members: Vec<HandlerRef>,
    pub inputs: BTreeSet<EventPattern>,
    pub outputs: BTreeSet<EventPattern>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DependencyGraph {
    pub vertices: Vec<HandlerVertex>,
    pub edges: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RelatedSet {
    pub members: BTreeSet<usize>,
}

impl RelatedSet {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        RelatedSet {
            members: members.into_iter().collect(),
        }
    }
}

impl std::fmt::Display for RelatedSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.members.iter().map(|m| m.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

fn overlap(outs: &BTreeSet<EventPattern>, ins: &BTreeSet<EventPattern>) -> bool {
    outs.iter().any(|o| ins.iter().any(|i| o.overlaps(i)))
}

fn raw_edges(nodes: &[(Vec<HandlerRef>, BTreeSet<EventPattern>, BTreeSet<EventPattern>)]) -> Vec<Vec<usize>> {
    (0..nodes.len())
        .map(|u| {
            (0..nodes.len())
                .filter(|&v| u != v && overlap(&nodes[u].2, &nodes[v].1))
                .collect()
        })
        .collect()
}

/// Tarjan's algorithm. Returns the component index of every vertex;
/// components are numbered in order of their smallest member.
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<usize> {
    struct State<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        comps: Vec<Vec<usize>>,
    }
    fn visit(s: &mut State, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for i in 0..s.adj[v].len() {
            let w = s.adj[v][i];
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                Some(_) => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = s.stack.pop().expect("component root is on the stack");
                s.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            s.comps.push(comp);
        }
    }
    let n = adj.len();
    let mut s = State {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        comps: Vec::new(),
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    let mut comps = s.comps;
    comps.sort_by_key(|c| *c.iter().min().expect("components are nonempty"));
    let mut of = vec![0; n];
    for (ci, c) in comps.iter().enumerate() {
        for &v in c {
            of[v] = ci;
        }
    }
    of
}

/// Builds the condensed dependency graph. Vertex ids follow input order;
/// a composite vertex takes the position of its first member.
pub fn build_graph(handlers: &[(HandlerRef, HandlerIo)]) -> DependencyGraph {
    let nodes: Vec<_> = handlers
        .iter()
        .map(|(r, io)| (vec![r.clone()], io.inputs.clone(), io.outputs.clone()))
        .collect();
    condense(&nodes)
}

fn condense(nodes: &[(Vec<HandlerRef>, BTreeSet<EventPattern>, BTreeSet<EventPattern>)]) -> DependencyGraph {
    let adj = raw_edges(nodes);
    let comp = strongly_connected(&adj);
    let count = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut vertices: Vec<HandlerVertex> = (0..count)
        .map(|id| HandlerVertex {
            id,
            members: Vec::new(),
            inputs: BTreeSet::new(),
            outputs: BTreeSet::new(),
        })
        .collect();
    for (i, (members, ins, outs)) in nodes.iter().enumerate() {
        let v = &mut vertices[comp[i]];
        v.members.extend(members.iter().cloned());
        v.inputs.extend(ins.iter().cloned());
        v.outputs.extend(outs.iter().cloned());
    }
    let mut edges = BTreeSet::new();
    for (u, succ) in adj.iter().enumerate() {
        for &v in succ {
            if comp[u] != comp[v] {
                edges.insert((comp[u], comp[v]));
            }
        }
    }
    DependencyGraph { vertices, edges }
}

impl DependencyGraph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        !self.edges.iter().any(|&(u, _)| u == v)
    }

    /// Every vertex with a path to `v`, excluding `v`.
    pub fn ancestors(&self, v: usize) -> BTreeSet<usize> {
        let mut preds: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            preds.entry(b).or_default().push(a);
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            for &p in preds.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
                if p != v && seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        seen
    }

    fn closure(&self, v: usize) -> BTreeSet<usize> {
        let mut s = self.ancestors(v);
        s.insert(v);
        s
    }

    /// Number of handlers covered by a set of vertex ids.
    pub fn handler_count(&self, set: &RelatedSet) -> usize {
        set.members
            .iter()
            .map(|&v| self.vertices[v].members.len())
            .sum()
    }

    /// App instance ids whose handlers appear in the set.
    pub fn apps_of(&self, set: &RelatedSet) -> BTreeSet<String> {
        set.members
            .iter()
            .flat_map(|&v| self.vertices[v].members.iter().map(|m| m.app.clone()))
            .collect()
    }

    pub fn has_cycle(&self) -> bool {
        let adj: Vec<Vec<usize>> = (0..self.len())
            .map(|u| {
                self.edges
                    .iter()
                    .filter(|&&(a, _)| a == u)
                    .map(|&(_, b)| b)
                    .collect()
            })
            .collect();
        let comp = strongly_connected(&adj);
        comp.iter().copied().max().map_or(0, |m| m + 1) != self.len()
    }

    /// Graph in dot format.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dependencies {\n    rankdir=LR;\n");
        for v in &self.vertices {
            let label: Vec<String> = v
                .members
                .iter()
                .map(|m| format!("{}.{}", m.app, m.handler))
                .collect();
            let _ = writeln!(
                out,
                "    v{} [label=\"{}: {}\"];",
                v.id,
                v.id,
                label.join("\\n").replace('"', "\\\"")
            );
        }
        for (u, v) in &self.edges {
            let _ = writeln!(out, "    v{u} -> v{v};");
        }
        out.push_str("}\n");
        out
    }
}

/// One set per leaf: the leaf and all of its ancestors, in leaf order.
pub fn related_sets(g: &DependencyGraph) -> Vec<RelatedSet> {
    (0..g.len())
        .filter(|&v| g.is_leaf(v))
        .map(|v| RelatedSet {
            members: g.closure(v),
        })
        .collect()
}

/// Pairs of distinct vertices whose outputs conflict, as `(u, v)` with
/// `u < v`.
pub fn conflicting_pairs(g: &DependencyGraph) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for u in 0..g.len() {
        for v in u + 1..g.len() {
            let clash = g.vertices[u]
                .outputs
                .iter()
                .any(|a| g.vertices[v].outputs.iter().any(|b| a.conflicts(b)));
            if clash {
                out.push((u, v));
            }
        }
    }
    out
}

/// Pairs of distinct vertices that can issue the same concrete output, as
/// `(u, v)` with `u < v`.
pub fn repeated_pairs(g: &DependencyGraph) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for u in 0..g.len() {
        for v in u + 1..g.len() {
            let same = g.vertices[u]
                .outputs
                .iter()
                .any(|a| !a.is_wildcard() && g.vertices[v].outputs.contains(a));
            if same {
                out.push((u, v));
            }
        }
    }
    out
}

/// Sets added for conflicting outputs, without duplicates, in pair order.
/// The result depends only on the graph.
pub fn merge_conflicts(g: &DependencyGraph, _initial: &[RelatedSet]) -> Vec<RelatedSet> {
    merge_pairs(g, conflicting_pairs(g))
}

/// For each pair, the union of both vertices with their ancestors.
pub fn merge_pairs(g: &DependencyGraph, pairs: Vec<(usize, usize)>) -> Vec<RelatedSet> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (u, v) in pairs {
        let mut members = g.closure(u);
        members.extend(g.closure(v));
        let set = RelatedSet { members };
        if seen.insert(set.clone()) {
            out.push(set);
        }
    }
    out
}

fn canonical_order<T: Ord>(sets: &mut [BTreeSet<T>]) {
    sets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.iter().cmp(b.iter())));
}

fn maximal<T: Ord + Clone>(sets: &[BTreeSet<T>]) -> Vec<BTreeSet<T>> {
    let unique: BTreeSet<&BTreeSet<T>> = sets.iter().collect();
    let mut out: Vec<BTreeSet<T>> = unique
        .iter()
        .filter(|s| !unique.iter().any(|o| o.len() > s.len() && s.is_subset(o)))
        .map(|s| (*s).clone())
        .collect();
    canonical_order(&mut out);
    out
}

/// Keeps only maximal sets, ordered by descending size and then
/// lexicographically.
pub fn prune_subsets(sets: &[RelatedSet]) -> Vec<RelatedSet> {
    let raw: Vec<BTreeSet<usize>> = sets.iter().map(|s| s.members.clone()).collect();
    maximal(&raw)
        .into_iter()
        .map(|members| RelatedSet { members })
        .collect()
}

/// Every stage of the decomposition, for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct RelatedSetAnalysis {
    pub graph: DependencyGraph,
    pub initial: Vec<RelatedSet>,
    pub conflicts: Vec<RelatedSet>,
    pub final_sets: Vec<RelatedSet>,
    /// Sets for handlers that can issue the same command, which must run
    /// together for repeated commands to be observable.
    pub repeats: Vec<RelatedSet>,
    /// App instance groups to verify jointly: the apps of each final or
    /// repeat set, with subsumed groups dropped.
    pub app_groups: Vec<BTreeSet<String>>,
}

impl RelatedSetAnalysis {
    pub fn total_handlers(&self) -> usize {
        self.graph.vertices.iter().map(|v| v.members.len()).sum()
    }

    pub fn max_set_handlers(&self) -> usize {
        self.final_sets
            .iter()
            .map(|s| self.graph.handler_count(s))
            .max()
            .unwrap_or(0)
    }

    /// Human-readable table of vertices and sets.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<4} {:<32} {:<40} outputs", "id", "handler", "inputs");
        for v in &self.graph.vertices {
            let name: Vec<String> = v
                .members
                .iter()
                .map(|m| format!("{}.{}", m.app, m.handler))
                .collect();
            let ins: Vec<String> = v.inputs.iter().map(|p| p.to_string()).collect();
            let outs: Vec<String> = v.outputs.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(
                out,
                "{:<4} {:<32} {:<40} {}",
                v.id,
                name.join("+"),
                ins.join(", "),
                outs.join(", ")
            );
        }
        let edges: Vec<String> = self.graph.edges.iter().map(|(u, v)| format!("{u}->{v}")).collect();
        let _ = writeln!(out, "edges: {}", edges.join(" "));
        let fmt = |sets: &[RelatedSet]| {
            sets.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(out, "initial related sets: {}", fmt(&self.initial));
        let _ = writeln!(out, "conflict sets: {}", fmt(&self.conflicts));
        let _ = writeln!(out, "final related sets: {}", fmt(&self.final_sets));
        if !self.repeats.is_empty() {
            let _ = writeln!(out, "repeat sets: {}", fmt(&self.repeats));
        }
        for g in &self.app_groups {
            let _ = writeln!(
                out,
                "app group: {}",
                g.iter().cloned().collect::<Vec<_>>().join(", ")
            );
        }
        out
    }
}

/// Runs the whole decomposition over a list of handlers.
pub fn analyze(handlers: &[(HandlerRef, HandlerIo)]) -> RelatedSetAnalysis {
    let graph = build_graph(handlers);
    let initial = related_sets(&graph);
    let conflicts = merge_conflicts(&graph, &initial);
    let all: Vec<RelatedSet> = initial.iter().chain(&conflicts).cloned().collect();
    let final_sets = prune_subsets(&all);
    let repeats = merge_pairs(&graph, repeated_pairs(&graph));
    let groups: Vec<BTreeSet<String>> = final_sets
        .iter()
        .chain(&repeats)
        .map(|s| graph.apps_of(s))
        .collect();
    let app_groups = maximal(&groups);
    RelatedSetAnalysis {
        graph,
        initial,
        conflicts,
        final_sets,
        repeats,
        app_groups,
    }
}

/// Handler list for installed app instances, in instance and declaration
/// order.
pub fn handlers_of<'a>(apps: impl IntoIterator<Item = (&'a str, &'a AppSpec)>) -> Vec<(HandlerRef, HandlerIo)> {
    apps.into_iter()
        .flat_map(|(id, app)| {
            extract_io_events(app).into_iter().map(move |io| {
                (
                    HandlerRef {
                        app: id.to_string(),
                        handler: io.handler.clone(),
                    },
                    io,
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn io(ins: &[&str], outs: &[&str]) -> HandlerIo {
        HandlerIo {
            handler: String::new(),
            inputs: ins.iter().map(|s| EventPattern::parse(s).unwrap()).collect(),
            outputs: outs.iter().map(|s| EventPattern::parse(s).unwrap()).collect(),
        }
    }

    fn handlers(spec: &[(&[&str], &[&str])]) -> Vec<(HandlerRef, HandlerIo)> {
        spec.iter()
            .enumerate()
            .map(|(i, (ins, outs))| {
                (
                    HandlerRef {
                        app: format!("a{i}"),
                        handler: "h".into(),
                    },
                    io(ins, outs),
                )
            })
            .collect()
    }

    fn sets(v: &[&[usize]]) -> BTreeSet<RelatedSet> {
        v.iter().map(|s| RelatedSet::new(s.iter().copied())).collect()
    }

    #[test]
    fn two_cycle_condenses_to_one_vertex() {
        let hs = handlers(&[
            (&["contact/open"], &["switch/on"]),
            (&["switch/..."], &["switch/on", "contact/open"]),
        ]);
        let g = build_graph(&hs);
        assert_eq!(g.len(), 1);
        assert_eq!(g.vertices[0].members.len(), 2);
        assert!(g.edges.is_empty());
        assert_eq!(
            g.vertices[0].inputs,
            io(&["contact/open", "switch/..."], &[]).inputs
        );
    }

    #[test]
    fn composite_takes_position_of_first_member() {
        // 0 -> 1 <-> 2, 3 isolated
        let hs = handlers(&[
            (&["x/1"], &["y/1"]),
            (&["y/..."], &["z/1"]),
            (&["z/1"], &["y/2"]),
            (&["w/1"], &[]),
        ]);
        let g = build_graph(&hs);
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges, BTreeSet::from([(0, 1)]));
        assert_eq!(g.vertices[2].members[0].app, "a3");
        assert!(!g.has_cycle());
    }

    #[test]
    fn edgeless_graph_gives_singletons_and_chain_gives_one_set() {
        let g = build_graph(&handlers(&[(&["a/1"], &[]), (&["b/1"], &[]), (&["c/1"], &[])]));
        assert_eq!(
            related_sets(&g).into_iter().collect::<BTreeSet<_>>(),
            sets(&[&[0], &[1], &[2]])
        );
        let chain = build_graph(&handlers(&[
            (&["a/1"], &["b/1"]),
            (&["b/1"], &["c/1"]),
            (&["c/1"], &[]),
        ]));
        assert_eq!(related_sets(&chain), vec![RelatedSet::new([0, 1, 2])]);
    }

    #[test]
    fn wildcard_output_conflicts_with_concrete() {
        let g = build_graph(&handlers(&[(&["a/1"], &["switch/..."]), (&["b/1"], &["switch/on"])]));
        assert_eq!(conflicting_pairs(&g), vec![(0, 1)]);
        let disjoint = build_graph(&handlers(&[(&["a/1"], &["switch/on"]), (&["b/1"], &["lock/locked"])]));
        assert!(merge_conflicts(&disjoint, &related_sets(&disjoint)).is_empty());
    }

    #[test]
    fn prune_keeps_maximal_sets_in_canonical_order() {
        let pruned = prune_subsets(&[
            RelatedSet::new([1]),
            RelatedSet::new([1, 2]),
            RelatedSet::new([1, 2, 3]),
        ]);
        assert_eq!(pruned, vec![RelatedSet::new([1, 2, 3])]);
        let disjoint = [RelatedSet::new([2]), RelatedSet::new([0]), RelatedSet::new([1])];
        assert_eq!(
            prune_subsets(&disjoint),
            vec![RelatedSet::new([0]), RelatedSet::new([1]), RelatedSet::new([2])]
        );
        let mixed = prune_subsets(&[
            RelatedSet::new([3]),
            RelatedSet::new([2, 4]),
            RelatedSet::new([1, 2, 6]),
            RelatedSet::new([0, 1]),
            RelatedSet::new([2, 4]),
        ]);
        assert_eq!(
            mixed,
            vec![
                RelatedSet::new([1, 2, 6]),
                RelatedSet::new([0, 1]),
                RelatedSet::new([2, 4]),
                RelatedSet::new([3]),
            ]
        );
        assert_eq!(prune_subsets(&mixed), mixed);
    }

    #[test]
    fn dot_output_lists_every_vertex_and_edge() {
        let g = build_graph(&handlers(&[(&["a/1"], &["b/1"]), (&["b/1"], &[])]));
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("v0 -> v1;"));
        assert!(dot.contains("v1 [label=\"1: a1.h\"];"));
    }
}
