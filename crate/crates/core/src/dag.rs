// SPDX-License-Identifier: Apache-2.0

//! Structural algorithms over the node/edge lists of a [`GbcGraph`].

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::error::{GbcError, Result};
use crate::graph::GbcGraph;

/// Index-based adjacency view of a graph.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub children: Vec<Vec<usize>>,
    pub parents: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Fails on edges whose endpoints are not node ids.
    pub fn build(graph: &GbcGraph) -> Result<Self> {
        let index = graph.index();
        let n = graph.nodes.len();
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        for e in &graph.edges {
            let s = *index
                .get(e.source.as_str())
                .ok_or_else(|| GbcError::UnknownNode(e.source.clone()))?;
            let t = *index
                .get(e.target.as_str())
                .ok_or_else(|| GbcError::UnknownNode(e.target.clone()))?;
            children[s].push(t);
            parents[t].push(s);
        }
        Ok(Adjacency { children, parents })
    }

    /// Same as [`Adjacency::build`] but silently skips dangling edges.
    pub fn build_lenient(graph: &GbcGraph) -> Self {
        let index = graph.index();
        let n = graph.nodes.len();
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        for e in &graph.edges {
            if let (Some(&s), Some(&t)) = (index.get(e.source.as_str()), index.get(e.target.as_str())) {
                children[s].push(t);
                parents[t].push(s);
            }
        }
        Adjacency { children, parents }
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Kahn's algorithm. Sources start in id order; nodes that become ready
    /// while one node is processed are enqueued in id order.
    ///
    /// On a cycle returns `Err((u, v))` for one edge lying on a cycle.
    pub fn toposort(&self, ids: &[&str]) -> std::result::Result<Vec<usize>, (usize, usize)> {
        let n = self.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut sources: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        sources.sort_by(|&a, &b| ids[a].cmp(ids[b]).then(a.cmp(&b)));
        let mut queue: VecDeque<usize> = sources.into();
        let mut order = Vec::with_capacity(n);
        let mut ready = Vec::new();
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &self.children[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push(v);
                }
            }
            ready.sort_by(|&a, &b| ids[a].cmp(ids[b]).then(a.cmp(&b)));
            queue.extend(ready.drain(..));
        }
        if order.len() == n {
            return Ok(order);
        }
        // Every unfinished node has an unfinished parent; walking parents
        // must revisit a node, and the edge that closes the walk is on a cycle.
        let start = (0..n).find(|&i| indegree[i] > 0).expect("unfinished node");
        let mut seen = vec![usize::MAX; n];
        let mut cur = start;
        let mut step = 0;
        loop {
            seen[cur] = step;
            step += 1;
            let p = *self.parents[cur]
                .iter()
                .find(|&&p| indegree[p] > 0)
                .expect("unfinished parent");
            if seen[p] != usize::MAX {
                return Err((p, cur));
            }
            cur = p;
        }
    }

    /// All nodes reachable from `from` through at least one edge.
    pub fn reachable(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = self.children[from].clone();
        while let Some(u) = stack.pop() {
            if !seen[u] {
                seen[u] = true;
                stack.extend(self.children[u].iter().copied());
            }
        }
        seen
    }
}

fn ids(graph: &GbcGraph) -> Vec<&str> {
    graph.nodes.iter().map(|n| n.id.as_str()).collect()
}

fn cycle_error(graph: &GbcGraph, (u, v): (usize, usize)) -> GbcError {
    GbcError::CycleDetected {
        from: graph.nodes[u].id.clone(),
        to: graph.nodes[v].id.clone(),
    }
}

pub(crate) fn topological_indices(graph: &GbcGraph) -> Result<(Adjacency, Vec<usize>)> {
    let adj = Adjacency::build(graph)?;
    let order = adj.toposort(&ids(graph)).map_err(|e| cycle_error(graph, e))?;
    Ok((adj, order))
}

/// Node ids in a deterministic topological order.
pub fn topological_order(graph: &GbcGraph) -> Result<Vec<String>> {
    let (_, order) = topological_indices(graph)?;
    Ok(order.into_iter().map(|i| graph.nodes[i].id.clone()).collect())
}

/// Number of edges on the longest directed path.
pub fn diameter(graph: &GbcGraph) -> Result<usize> {
    let (adj, order) = topological_indices(graph)?;
    Ok(longest_path(&adj, &order))
}

pub(crate) fn longest_path(adj: &Adjacency, order: &[usize]) -> usize {
    let mut depth = vec![0usize; adj.len()];
    let mut best = 0;
    for &u in order {
        best = best.max(depth[u]);
        for &v in &adj.children[u] {
            depth[v] = depth[v].max(depth[u] + 1);
        }
    }
    best
}

/// Ids of every node reachable from `id`, excluding `id` itself.
pub fn descendants(graph: &GbcGraph, id: &str) -> Result<BTreeSet<String>> {
    let index: HashMap<&str, usize> = graph.index();
    let &start = index
        .get(id)
        .ok_or_else(|| GbcError::UnknownNode(id.to_string()))?;
    let adj = Adjacency::build(graph)?;
    let seen = adj.reachable(start);
    Ok(seen
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s && i != start)
        .map(|(i, _)| graph.nodes[i].id.clone())
        .collect())
}
