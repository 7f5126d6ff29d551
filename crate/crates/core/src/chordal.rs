//! Chordal graphs, clique trees and positive-semidefinite completability.
//!
//! Vertices are 0-based throughout.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Simple undirected graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Graph {
            adj: vec![Vec::new(); n],
        }
    }

    /// Builds from an edge list; self-loops and duplicates are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        Graph {
            adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    /// Union of complete graphs on each of the given vertex sets.
    pub fn from_cliques(n: usize, sets: &[Vec<usize>]) -> Self {
        let mut adj = vec![BTreeSet::new(); n];
        for s in sets {
            for &a in s {
                for &b in s {
                    if a != b {
                        adj[a].insert(b);
                    }
                }
            }
        }
        Graph {
            adj: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (a, nb) in self.adj.iter().enumerate() {
            for &b in nb {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    #[cfg(test)]
    fn is_subgraph_of(&self, other: &Graph) -> bool {
        self.vertex_count() == other.vertex_count()
            && self.edges().iter().all(|&(a, b)| other.has_edge(a, b))
    }
}

/// Graph over the index pairs `(i, j)`, `i ≥ j`, of a coupled problem; two
/// pairs are adjacent when some index set contains all four indices.
#[derive(Debug, Clone)]
pub struct PairGraph {
    pub pairs: Vec<(usize, usize)>,
    pub graph: Graph,
}

/// Sparsity graph over index pairs for a family of index sets.
pub fn sparsity_graph(index_sets: &[Vec<usize>]) -> PairGraph {
    let mut pair_set = BTreeSet::new();
    for s in index_sets {
        for &a in s {
            for &b in s {
                if a >= b {
                    pair_set.insert((a, b));
                }
            }
        }
    }
    // Order pairs column-major like svec: by column, then row.
    let mut pairs: Vec<(usize, usize)> = pair_set.into_iter().collect();
    pairs.sort_by_key(|&(r, c)| (c, r));
    let pos: BTreeMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let groups: Vec<Vec<usize>> = index_sets
        .iter()
        .map(|s| {
            let mut g = Vec::new();
            for &a in s {
                for &b in s {
                    if a >= b {
                        g.push(pos[&(a, b)]);
                    }
                }
            }
            g
        })
        .collect();
    PairGraph {
        graph: Graph::from_cliques(pairs.len(), &groups),
        pairs,
    }
}

/// Matrix-index graph: vertices `0..n`, `a ~ b` when some index set holds both.
pub fn index_graph(n: usize, index_sets: &[Vec<usize>]) -> Graph {
    Graph::from_cliques(n, index_sets)
}

/// Outcome of a chordality test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chordality {
    /// Perfect elimination ordering (eliminate `peo[0]` first).
    Chordal { peo: Vec<usize> },
    /// A chordless cycle of length at least four.
    NotChordal { cycle: Vec<usize> },
}

impl Chordality {
    pub fn is_chordal(&self) -> bool {
        matches!(self, Chordality::Chordal { .. })
    }
}

/// Maximum cardinality search; returns vertices in visit order.
/// Ties go to the lowest vertex index.
fn mcs_visit_order(g: &Graph) -> Vec<usize> {
    let n = g.vertex_count();
    let mut weight = vec![0usize; n];
    let mut done = vec![false; n];
    // Buckets keyed by weight, each ordered by vertex index.
    let mut buckets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n + 1];
    buckets[0].extend(0..n);
    let mut top = 0usize;
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        while buckets[top].is_empty() {
            top -= 1;
        }
        let v = *buckets[top].iter().next().unwrap();
        buckets[top].remove(&v);
        done[v] = true;
        order.push(v);
        for &u in g.neighbors(v) {
            if !done[u] {
                buckets[weight[u]].remove(&u);
                weight[u] += 1;
                buckets[weight[u]].insert(u);
                top = top.max(weight[u]);
            }
        }
    }
    order
}

/// Checks whether `order` is a perfect elimination ordering of `g`.
/// On failure returns `(v, u, w)`: `u`, `w` later neighbors of `v` that are
/// not adjacent.
fn peo_violation(g: &Graph, order: &[usize]) -> Option<(usize, usize, usize)> {
    let n = g.vertex_count();
    let mut pos = vec![0usize; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    for &v in order {
        let later: Vec<usize> = g
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&u| pos[u] > pos[v])
            .collect();
        if let Some(&first) = later.iter().min_by_key(|&&u| pos[u]) {
            for &w in &later {
                if w != first && !g.has_edge(first, w) {
                    return Some((v, first, w));
                }
            }
        }
    }
    None
}

/// Shortest `u`–`w` path avoiding `v` and the other neighbours of `v`.
fn chordless_cycle_through(g: &Graph, v: usize, u: usize, w: usize) -> Option<Vec<usize>> {
    let n = g.vertex_count();
    let mut blocked = vec![false; n];
    blocked[v] = true;
    for &x in g.neighbors(v) {
        if x != u && x != w {
            blocked[x] = true;
        }
    }
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut q = VecDeque::new();
    seen[u] = true;
    q.push_back(u);
    while let Some(x) = q.pop_front() {
        if x == w {
            let mut path = vec![w];
            let mut c = w;
            while c != u {
                c = prev[c];
                path.push(c);
            }
            path.reverse();
            let mut cycle = vec![v];
            cycle.extend(path);
            return Some(cycle);
        }
        for &y in g.neighbors(x) {
            if !seen[y] && !blocked[y] {
                // u and w are non-adjacent, so never step u→w directly.
                seen[y] = true;
                prev[y] = x;
                q.push_back(y);
            }
        }
    }
    None
}

/// Tests chordality by maximum cardinality search.
pub fn is_chordal(g: &Graph) -> Chordality {
    let mut peo = mcs_visit_order(g);
    peo.reverse();
    match peo_violation(g, &peo) {
        None => Chordality::Chordal { peo },
        Some((v, u, w)) => {
            if let Some(cycle) = chordless_cycle_through(g, v, u, w) {
                return Chordality::NotChordal { cycle };
            }
            // Every chordless cycle passes through some vertex and two of its
            // non-adjacent neighbours, so an exhaustive sweep must succeed.
            for v in 0..g.vertex_count() {
                let nb = g.neighbors(v);
                for (a, &u) in nb.iter().enumerate() {
                    for &w in &nb[a + 1..] {
                        if !g.has_edge(u, w) {
                            if let Some(cycle) = chordless_cycle_through(g, v, u, w) {
                                return Chordality::NotChordal { cycle };
                            }
                        }
                    }
                }
            }
            unreachable!("PEO violation without a chordless cycle")
        }
    }
}

/// Chordal supergraph together with an elimination order that is perfect for it.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub graph: Graph,
    pub peo: Vec<usize>,
    pub fill_edges: Vec<(usize, usize)>,
    /// `100 · added / original` edges (0 when the input has no edges).
    pub fill_percent: f64,
}

/// Chordal embedding. Chordal input is returned unchanged; otherwise a
/// greedy minimum-degree elimination (lowest index breaks ties) adds fill.
pub fn chordal_embed(g: &Graph) -> Embedding {
    if let Chordality::Chordal { peo } = is_chordal(g) {
        return Embedding {
            graph: g.clone(),
            peo,
            fill_edges: Vec::new(),
            fill_percent: 0.0,
        };
    }
    let n = g.vertex_count();
    let mut work: Vec<BTreeSet<usize>> = (0..n)
        .map(|v| g.neighbors(v).iter().copied().collect())
        .collect();
    let mut alive = vec![true; n];
    let mut by_degree: BTreeSet<(usize, usize)> = (0..n).map(|v| (work[v].len(), v)).collect();
    let mut peo = Vec::with_capacity(n);
    let mut fill = Vec::new();
    while let Some(&(d, v)) = by_degree.iter().next() {
        by_degree.remove(&(d, v));
        alive[v] = false;
        peo.push(v);
        let nb: Vec<usize> = work[v].iter().copied().collect();
        for &u in &nb {
            by_degree.remove(&(work[u].len(), u));
            work[u].remove(&v);
        }
        for (a, &x) in nb.iter().enumerate() {
            for &y in &nb[a + 1..] {
                if work[x].insert(y) {
                    work[y].insert(x);
                    fill.push((x.min(y), x.max(y)));
                }
            }
        }
        for &u in &nb {
            if alive[u] {
                by_degree.insert((work[u].len(), u));
            }
        }
    }
    fill.sort_unstable();
    let mut edges = g.edges();
    edges.extend(fill.iter().copied());
    let graph = Graph::from_edges(n, &edges);
    let orig = g.edge_count();
    Embedding {
        graph,
        peo,
        fill_percent: if orig == 0 {
            0.0
        } else {
            100.0 * fill.len() as f64 / orig as f64
        },
        fill_edges: fill,
    }
}

/// Maximal cliques of a chordal graph given a perfect elimination ordering.
/// Cliques are sorted internally and listed in lexicographic order.
pub fn cliques(g: &Graph, peo: &[usize]) -> Result<Vec<Vec<usize>>> {
    let n = g.vertex_count();
    if peo.len() != n || peo_violation(g, peo).is_some() {
        return Err(Error::NotChordal);
    }
    let mut pos = vec![0usize; n];
    for (k, &v) in peo.iter().enumerate() {
        pos[v] = k;
    }
    let later: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            g.neighbors(v)
                .iter()
                .copied()
                .filter(|&u| pos[u] > pos[v])
                .collect()
        })
        .collect();
    // C(v) = {v} ∪ later(v) is non-maximal iff some u has first follower v
    // and |later(u)| = |later(v)| + 1.
    let mut dominated = vec![false; n];
    for u in 0..n {
        if let Some(&f) = later[u].iter().min_by_key(|&&x| pos[x]) {
            if later[u].len() == later[f].len() + 1 {
                dominated[f] = true;
            }
        }
    }
    let mut out: Vec<Vec<usize>> = (0..n)
        .filter(|&v| !dominated[v])
        .map(|v| {
            let mut c = later[v].clone();
            c.push(v);
            c.sort_unstable();
            c
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Rooted tree over cliques.
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueTree {
    pub cliques: Vec<Vec<usize>>,
    /// `parent[root] == root`.
    pub parent: Vec<usize>,
    pub root: usize,
    pub children: Vec<Vec<usize>>,
    /// `C̄ₖ ∩ C̄_parent(k)` (empty for the root), sorted.
    pub separators: Vec<Vec<usize>>,
    /// `C̄ₖ \ separator`, sorted.
    pub residuals: Vec<Vec<usize>>,
    pub depth: Vec<usize>,
    pub height: usize,
}

impl CliqueTree {
    /// Builds from cliques and a parent array (`parent[root] == root`).
    pub fn from_parent(cliques: Vec<Vec<usize>>, parent: Vec<usize>) -> Result<Self> {
        let q = cliques.len();
        if q == 0 || parent.len() != q {
            return Err(Error::Malformed(
                "clique tree needs one parent per clique".into(),
            ));
        }
        let roots: Vec<usize> = (0..q).filter(|&k| parent[k] == k).collect();
        if roots.len() != 1 {
            return Err(Error::Malformed(format!(
                "clique tree must have exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); q];
        for k in 0..q {
            if parent[k] >= q {
                return Err(Error::Malformed(format!(
                    "parent of clique {k} out of range"
                )));
            }
            if k != root {
                children[parent[k]].push(k);
            }
        }
        let mut depth = vec![usize::MAX; q];
        depth[root] = 0;
        let mut stack = vec![root];
        let mut reached = 0;
        while let Some(k) = stack.pop() {
            reached += 1;
            for &c in &children[k] {
                depth[c] = depth[k] + 1;
                stack.push(c);
            }
        }
        if reached != q {
            return Err(Error::Malformed("parent array contains a cycle".into()));
        }
        let cliques: Vec<Vec<usize>> = cliques
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        let separators: Vec<Vec<usize>> = (0..q)
            .map(|k| {
                if k == root {
                    Vec::new()
                } else {
                    let p: BTreeSet<usize> = cliques[parent[k]].iter().copied().collect();
                    cliques[k]
                        .iter()
                        .copied()
                        .filter(|v| p.contains(v))
                        .collect()
                }
            })
            .collect();
        let residuals = (0..q)
            .map(|k| {
                cliques[k]
                    .iter()
                    .copied()
                    .filter(|v| separators[k].binary_search(v).is_err())
                    .collect()
            })
            .collect();
        let height = depth.iter().copied().max().unwrap_or(0);
        Ok(CliqueTree {
            cliques,
            parent,
            root,
            children,
            separators,
            residuals,
            depth,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    pub fn max_clique_size(&self) -> usize {
        self.cliques.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Cliques ordered so that every child precedes its parent.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![(self.root, false)];
        while let Some((k, expanded)) = stack.pop() {
            if expanded {
                out.push(k);
            } else {
                stack.push((k, true));
                for &c in self.children[k].iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Cliques on the tree path from `a` to `b`, inclusive.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let (mut x, mut y) = (a, b);
        let mut left = Vec::new();
        let mut right = Vec::new();
        while self.depth[x] > self.depth[y] {
            left.push(x);
            x = self.parent[x];
        }
        while self.depth[y] > self.depth[x] {
            right.push(y);
            y = self.parent[y];
        }
        while x != y {
            left.push(x);
            right.push(y);
            x = self.parent[x];
            y = self.parent[y];
        }
        left.push(x);
        left.extend(right.into_iter().rev());
        left
    }

    /// For each vertex `0..n`, the clique nearest the root that contains it.
    pub fn top_clique_of(&self, n: usize) -> Vec<Option<usize>> {
        let mut top = vec![None; n];
        for (k, res) in self.residuals.iter().enumerate() {
            for &v in res {
                if v < n {
                    top[v] = Some(k);
                }
            }
        }
        top
    }
}

/// Tree centre (minimum height); ties by larger clique, then lower index.
fn choose_root(cliques: &[Vec<usize>], adj: &[Vec<usize>]) -> usize {
    let q = cliques.len();
    let bfs = |s: usize| -> Vec<usize> {
        let mut d = vec![usize::MAX; q];
        d[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if d[y] == usize::MAX {
                    d[y] = d[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        d
    };
    let argmax = |d: &[usize]| {
        (0..q)
            .max_by_key(|&k| (d[k], std::cmp::Reverse(k)))
            .unwrap()
    };
    let a = argmax(&bfs(0));
    let da = bfs(a);
    let b = argmax(&da);
    let db = bfs(b);
    let ecc = |k: usize| da[k].max(db[k]);
    let best = (0..q).map(ecc).min().unwrap();
    (0..q)
        .filter(|&k| ecc(k) == best)
        .min_by_key(|&k| (std::cmp::Reverse(cliques[k].len()), k))
        .unwrap()
}

fn find(uf: &mut [usize], mut x: usize) -> usize {
    while uf[x] != x {
        uf[x] = uf[uf[x]];
        x = uf[x];
    }
    x
}

/// Clique tree as a maximum-weight spanning tree of the clique intersection
/// graph (weights `|Cᵢ ∩ Cⱼ|`). Disconnected clique sets are joined with
/// zero-weight links. The root is the tree centre.
pub fn clique_tree(cliques: &[Vec<usize>]) -> Result<CliqueTree> {
    let q = cliques.len();
    if q == 0 {
        return Err(Error::Malformed("no cliques".into()));
    }
    let mut by_vertex: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, c) in cliques.iter().enumerate() {
        for &v in c {
            by_vertex.entry(v).or_default().push(k);
        }
    }
    let mut weights: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for ks in by_vertex.values() {
        for (a, &i) in ks.iter().enumerate() {
            for &j in &ks[a + 1..] {
                *weights.entry((i.min(j), i.max(j))).or_insert(0) += 1;
            }
        }
    }
    let mut edges: Vec<(usize, usize, usize)> =
        weights.into_iter().map(|((i, j), w)| (w, i, j)).collect();
    edges.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut uf: Vec<usize> = (0..q).collect();
    let mut adj = vec![Vec::new(); q];
    for (_, i, j) in edges {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    // Zero-weight links: chain component representatives (lowest index).
    let mut reps: Vec<usize> = Vec::new();
    let mut seen = BTreeSet::new();
    for k in 0..q {
        let r = find(&mut uf, k);
        if seen.insert(r) {
            reps.push(k);
        }
    }
    for w in reps.windows(2) {
        adj[w[0]].push(w[1]);
        adj[w[1]].push(w[0]);
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
    }
    let root = choose_root(cliques, &adj);
    let mut parent = vec![usize::MAX; q];
    parent[root] = root;
    let mut queue = VecDeque::from([root]);
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if parent[y] == usize::MAX {
                parent[y] = x;
                queue.push_back(y);
            }
        }
    }
    let tree = CliqueTree::from_parent(cliques.to_vec(), parent)?;
    debug_assert!(verify_cip(&tree));
    Ok(tree)
}

/// Clique intersection property: for every vertex, the cliques containing
/// it form a connected subtree (equivalently, `Cᵢ ∩ Cⱼ` lies in every
/// clique on the path between `i` and `j`).
pub fn verify_cip(t: &CliqueTree) -> bool {
    let mut tops: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, c) in t.cliques.iter().enumerate() {
        for &v in c {
            let parent_has = k != t.root && t.cliques[t.parent[k]].binary_search(&v).is_ok();
            if !parent_has {
                *tops.entry(v).or_insert(0) += 1;
            }
        }
    }
    tops.values().all(|&c| c == 1)
}

/// Chordal embedding of a matrix-index graph together with its clique tree.
#[derive(Debug, Clone)]
pub struct Structure {
    pub embedding: Embedding,
    pub tree: CliqueTree,
}

/// Embeds `g`, extracts its cliques and builds the clique tree.
pub fn analyze_structure(g: &Graph) -> Result<Structure> {
    let embedding = chordal_embed(g);
    let cl = cliques(&embedding.graph, &embedding.peo)?;
    let tree = clique_tree(&cl)?;
    Ok(Structure { embedding, tree })
}

/// Symmetric matrix with only some entries specified. The diagonal must be
/// specified.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSymMatrix {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl PartialSymMatrix {
    pub fn new(n: usize, diagonal: &[f64]) -> Result<Self> {
        if diagonal.len() != n {
            return Err(Error::InvalidDimension(format!(
                "diagonal has {} entries for order {n}",
                diagonal.len()
            )));
        }
        let entries = diagonal
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i, i), v))
            .collect();
        Ok(PartialSymMatrix { n, entries })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries.insert((i.max(j), i.min(j)), v);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries.get(&(i.max(j), i.min(j))).copied()
    }

    pub fn specification_graph(&self) -> Graph {
        let edges: Vec<(usize, usize)> = self
            .entries
            .keys()
            .filter(|(i, j)| i != j)
            .copied()
            .collect();
        Graph::from_edges(self.n, &edges)
    }

    /// Dense principal block on `idx`; every entry must be specified.
    pub fn block(&self, idx: &[usize]) -> Result<DMatrix<f64>> {
        let k = idx.len();
        let mut m = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..=a {
                let v = self.get(idx[a], idx[b]).ok_or_else(|| {
                    Error::Malformed(format!(
                        "entry ({}, {}) is unspecified but lies inside a clique",
                        idx[a] + 1,
                        idx[b] + 1
                    ))
                })?;
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        Ok(m)
    }
}

/// Grone's test: a partial matrix with chordal specification pattern is PSD
/// completable iff every clique block is PSD.
pub fn psd_completable(m: &PartialSymMatrix, t: &CliqueTree) -> Result<bool> {
    for c in &t.cliques {
        let block = m.block(c)?;
        let eig = SymmetricEigen::new(block).eigenvalues;
        let norm = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * norm {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cycle(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n, &edges)
    }

    fn complete(n: usize) -> Graph {
        Graph::from_cliques(n, &[(0..n).collect()])
    }

    fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Graph {
        let mut e = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(p) {
                    e.push((a, b));
                }
            }
        }
        Graph::from_edges(n, &e)
    }

    fn is_chordless_cycle(g: &Graph, c: &[usize]) -> bool {
        let k = c.len();
        if k < 4 {
            return false;
        }
        for a in 0..k {
            for b in a + 1..k {
                let consecutive = b == a + 1 || (a == 0 && b == k - 1);
                if g.has_edge(c[a], c[b]) != consecutive {
                    return false;
                }
            }
        }
        true
    }

    // Exhaustive search for an induced cycle of length ≥ 4.
    fn brute_has_chordless_cycle(g: &Graph) -> bool {
        let n = g.vertex_count();
        fn extend(g: &Graph, path: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
            let last = *path.last().unwrap();
            let first = path[0];
            if path.len() >= 4 && g.has_edge(last, first) {
                return true;
            }
            for &x in g.neighbors(last) {
                if used[x] || x < first {
                    continue;
                }
                // x must not touch any interior path vertex except `last`
                // and may touch `first` only as closing vertex.
                let ok = path
                    .iter()
                    .skip(1)
                    .take(path.len().saturating_sub(2))
                    .all(|&p| !g.has_edge(x, p));
                if !ok {
                    continue;
                }
                if path.len() >= 2 && g.has_edge(x, first) && path.len() + 1 < 4 {
                    continue;
                }
                used[x] = true;
                path.push(x);
                if extend(g, path, used) {
                    return true;
                }
                path.pop();
                used[x] = false;
            }
            false
        }
        for s in 0..n {
            let mut used = vec![false; n];
            used[s] = true;
            let mut path = vec![s];
            if extend(g, &mut path, &mut used) {
                return true;
            }
        }
        false
    }

    fn brute_maximal_cliques(g: &Graph) -> Vec<Vec<usize>> {
        let n = g.vertex_count();
        let mut all = Vec::new();
        for mask in 1u32..(1 << n) {
            let s: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) != 0).collect();
            let complete = s
                .iter()
                .enumerate()
                .all(|(a, &x)| s[a + 1..].iter().all(|&y| g.has_edge(x, y)));
            if complete {
                all.push((mask, s));
            }
        }
        let mut out: Vec<Vec<usize>> = all
            .iter()
            .filter(|(m, _)| !all.iter().any(|(m2, _)| m2 != m && m2 & m == *m))
            .map(|(_, s)| s.clone())
            .collect();
        out.sort();
        out
    }

    fn example_sets() -> Vec<Vec<usize>> {
        vec![vec![0, 1, 3], vec![0, 2, 3], vec![3, 4]]
    }

    #[test]
    fn sparsity_graph_of_worked_example() {
        let pg = sparsity_graph(&example_sets());
        let idx = |p: (usize, usize)| pg.pairs.iter().position(|&x| x == p).unwrap();
        // (1,1)–(1,2): share subproblem 1.
        assert!(pg.graph.has_edge(idx((0, 0)), idx((1, 0))));
        // (2,1)–(3,1): no common subproblem.
        assert!(!pg.graph.has_edge(idx((1, 0)), idx((2, 0))));
        // (4,4) is in every subproblem.
        let v44 = idx((3, 3));
        assert_eq!(pg.pairs.len(), 11);
        assert_eq!(pg.graph.degree(v44), 10);
    }

    #[test]
    fn sparsity_graph_trivial_cases() {
        let pg = sparsity_graph(&[vec![0, 1]]);
        assert_eq!(pg.pairs.len(), 3);
        assert_eq!(pg.graph.edge_count(), 3);
        let pg = sparsity_graph(&[vec![0], vec![1]]);
        assert_eq!(pg.pairs.len(), 2);
        assert_eq!(pg.graph.edge_count(), 0);
    }

    #[test]
    fn chordality_examples() {
        match is_chordal(&cycle(4)) {
            Chordality::NotChordal { cycle: c } => {
                assert_eq!(c.len(), 4);
                assert!(is_chordless_cycle(&cycle(4), &c));
            }
            _ => panic!("4-cycle reported chordal"),
        }
        assert!(is_chordal(&complete(5)).is_chordal());
        let tree = Graph::from_edges(6, &[(0, 1), (0, 2), (2, 3), (2, 4), (4, 5)]);
        assert!(is_chordal(&tree).is_chordal());
    }

    #[test]
    fn chordality_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..400 {
            let n = rng.random_range(1..=8);
            let p = rng.random_range(0.2..0.8);
            let g = random_graph(&mut rng, n, p);
            let res = is_chordal(&g);
            assert_eq!(
                res.is_chordal(),
                !brute_has_chordless_cycle(&g),
                "{g:?} {res:?}"
            );
            if let Chordality::NotChordal { cycle } = res {
                assert!(is_chordless_cycle(&g, &cycle), "bad witness {cycle:?}");
            }
        }
    }

    #[test]
    fn embedding_examples() {
        let e = chordal_embed(&complete(4));
        assert!(e.fill_edges.is_empty());
        assert_eq!(e.fill_percent, 0.0);
        let e = chordal_embed(&cycle(4));
        assert_eq!(e.fill_edges.len(), 1);
        assert!((e.fill_percent - 25.0).abs() < 1e-12);
        assert!(is_chordal(&e.graph).is_chordal());
    }

    #[test]
    fn embedding_is_chordal_supergraph() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let n = rng.random_range(1..=14);
            let p = rng.random_range(0.1..0.6);
            let g = random_graph(&mut rng, n, p);
            let e = chordal_embed(&g);
            assert!(g.is_subgraph_of(&e.graph));
            assert!(is_chordal(&e.graph).is_chordal());
            assert!(peo_violation(&e.graph, &e.peo).is_none());
            assert_eq!(e.graph.edge_count(), g.edge_count() + e.fill_edges.len());
        }
    }

    #[test]
    fn cliques_examples() {
        let g = index_graph(5, &example_sets());
        let Chordality::Chordal { peo } = is_chordal(&g) else {
            panic!("example is chordal")
        };
        assert_eq!(cliques(&g, &peo).unwrap(), example_sets());
        let Chordality::Chordal { peo } = is_chordal(&complete(4)) else {
            panic!()
        };
        assert_eq!(cliques(&complete(4), &peo).unwrap(), vec![vec![0, 1, 2, 3]]);
        let path = Graph::from_edges(3, &[(0, 1), (1, 2)]);
        let Chordality::Chordal { peo } = is_chordal(&path) else {
            panic!()
        };
        assert_eq!(cliques(&path, &peo).unwrap(), vec![vec![0, 1], vec![1, 2]]);
        assert!(matches!(
            cliques(&cycle(4), &[0, 1, 2, 3]),
            Err(Error::NotChordal)
        ));
    }

    #[test]
    fn cliques_agree_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let n = rng.random_range(1..=8);
            let p = rng.random_range(0.2..0.7);
            let g = random_graph(&mut rng, n, p);
            let e = chordal_embed(&g);
            let ours = cliques(&e.graph, &e.peo).unwrap();
            assert_eq!(ours, brute_maximal_cliques(&e.graph));
        }
    }

    #[test]
    fn clique_tree_examples() {
        let t = clique_tree(&example_sets()).unwrap();
        // Centre is clique {1,3,4}... any of the two 3-cliques; both link through 4.
        assert_eq!(t.len(), 3);
        assert_eq!(t.height, 1);
        assert!(verify_cip(&t));
        let t = clique_tree(&[vec![0, 1, 2]]).unwrap();
        assert_eq!((t.len(), t.height, t.root), (1, 0, 0));
        assert!(verify_cip(&t));
    }

    #[test]
    fn worked_example_tree_shape() {
        // K₂ = {1,3,4} with children K₁ = {1,2,4} and K₃ = {4,5}.
        let t = CliqueTree::from_parent(example_sets(), vec![1, 1, 1]).unwrap();
        assert!(verify_cip(&t));
        assert_eq!(t.children[1], vec![0, 2]);
        assert_eq!(t.separators[0], vec![0, 3]);
        assert_eq!(t.separators[2], vec![3]);
        assert_eq!(t.residuals[1], vec![0, 2, 3]);
    }

    #[test]
    fn path_tree_is_rooted_at_centre() {
        let cl: Vec<Vec<usize>> = (0..9).map(|i| vec![i, i + 1]).collect();
        let t = clique_tree(&cl).unwrap();
        assert_eq!(t.height, 4);
        assert_eq!(t.root, 4);
    }

    #[test]
    fn disconnected_cliques_form_one_tree() {
        let cl = vec![vec![0, 1], vec![2, 3], vec![4]];
        let t = clique_tree(&cl).unwrap();
        assert!(verify_cip(&t));
        assert_eq!(t.postorder().len(), 3);
        assert!(t.separators.iter().all(Vec::is_empty));
    }

    fn brute_cip(t: &CliqueTree) -> bool {
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                let inter: Vec<usize> = t.cliques[i]
                    .iter()
                    .copied()
                    .filter(|v| t.cliques[j].contains(v))
                    .collect();
                for k in t.path(i, j) {
                    if !inter.iter().all(|v| t.cliques[k].contains(v)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    #[test]
    fn miswired_tree_fails_cip() {
        // Chain {0,1}-{1,2}-{2,3}-{3,4}; hang {3,4} off {0,1} instead.
        let cl: Vec<Vec<usize>> = (0..4).map(|i| vec![i, i + 1]).collect();
        let good = CliqueTree::from_parent(cl.clone(), vec![1, 1, 1, 2]).unwrap();
        assert!(verify_cip(&good) && brute_cip(&good));
        let bad = CliqueTree::from_parent(cl, vec![1, 1, 1, 0]).unwrap();
        assert!(!verify_cip(&bad) && !brute_cip(&bad));
    }

    #[test]
    fn cip_check_matches_pairwise_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..200 {
            let n = rng.random_range(2..=9);
            let g = random_graph(&mut rng, n, 0.35);
            let e = chordal_embed(&g);
            let cl = cliques(&e.graph, &e.peo).unwrap();
            let t = clique_tree(&cl).unwrap();
            assert!(verify_cip(&t) && brute_cip(&t));
            // Random re-wiring: both checks must still agree.
            let q = cl.len();
            if q >= 3 {
                let mut parent: Vec<usize> = (0..q)
                    .map(|k| if k == 0 { 0 } else { rng.random_range(0..k) })
                    .collect();
                parent[0] = 0;
                let r = CliqueTree::from_parent(cl, parent).unwrap();
                assert_eq!(verify_cip(&r), brute_cip(&r));
            }
        }
    }

    #[test]
    fn residuals_partition_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..50 {
            let n = rng.random_range(2..=20);
            let g = random_graph(&mut rng, n, 0.2);
            let s = analyze_structure(&g).unwrap();
            let mut all: Vec<usize> = s.tree.residuals.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn completability_examples() {
        let full = PartialSymMatrix::new(2, &[1.0, 1.0]).map(|mut m| {
            m.set(0, 1, 0.5);
            m
        });
        let full = full.unwrap();
        let t = clique_tree(&[vec![0, 1]]).unwrap();
        assert!(psd_completable(&full, &t).unwrap());

        let path_tree = clique_tree(&[vec![0, 1], vec![1, 2]]).unwrap();
        let mut m = PartialSymMatrix::new(3, &[1.0, 1.0, 1.0]).unwrap();
        m.set(0, 1, 0.9);
        m.set(1, 2, 0.9);
        assert!(psd_completable(&m, &path_tree).unwrap());
        // Grid oracle over the free entry.
        let found = (0..=2000).any(|k| {
            let x = -1.0 + k as f64 / 1000.0;
            let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, x, 0.9, 1.0, 0.9, x, 0.9, 1.0]);
            SymmetricEigen::new(d).eigenvalues.min() >= -1e-12
        });
        assert!(found);
        m.set(0, 1, 1.5);
        assert!(!psd_completable(&m, &path_tree).unwrap());

        let m = PartialSymMatrix::new(3, &[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            psd_completable(&m, &path_tree),
            Err(Error::Malformed(_))
        ));
    }
}
