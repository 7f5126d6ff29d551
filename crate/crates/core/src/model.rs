//! Coupled SDPs, validation, subproblem assignment and domain-space
//! decomposition of sparse inequality-form SDPs.
//!
//! A coupled SDP is
//!
//! ```text
//! minimize   Σᵢ Wⁱ • X_{JᵢJᵢ}
//! subject to Qⁱⱼ • X_{JᵢJᵢ} = bⁱⱼ,   X_{JᵢJᵢ} ⪰ 0,
//! ```
//!
//! where `X` is zero outside the union of the `Jᵢ × Jᵢ` blocks.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::chordal::{self, CliqueTree, Graph, PairGraph};
use crate::error::{Error, Result};
use crate::symcone::{svec, svec_dim, svec_index, SymMatrix};

/// One block of a coupled SDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    /// Strictly increasing global indices (0-based).
    pub j: Vec<usize>,
    pub w: SymMatrix,
    pub q: Vec<SymMatrix>,
    pub b: Vec<f64>,
}

impl Subproblem {
    pub fn order(&self) -> usize {
        self.j.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.q.len()
    }

    /// `m × svec_dim` matrix whose rows are `svec(Qⱼ)ᵀ`.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        let d = svec_dim(self.order());
        let mut out = DMatrix::zeros(self.q.len(), d);
        for (r, q) in self.q.iter().enumerate() {
            out.row_mut(r).copy_from(&svec(q).values().transpose());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSdp {
    pub n: usize,
    pub subproblems: Vec<Subproblem>,
}

/// Global svec coordinates touched by a coupled problem.
#[derive(Debug, Clone)]
pub struct Coordinates {
    /// `(row, col)`, `row ≥ col`, ordered by column then row.
    pub pairs: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
    /// For each subproblem, global coordinate of each local svec coordinate.
    pub local: Vec<Vec<usize>>,
}

impl Coordinates {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i.max(j), i.min(j))).copied()
    }

    pub fn is_diagonal(&self, k: usize) -> bool {
        self.pairs[k].0 == self.pairs[k].1
    }
}

impl CoupledSdp {
    pub fn index_sets(&self) -> Vec<Vec<usize>> {
        self.subproblems.iter().map(|s| s.j.clone()).collect()
    }

    pub fn constraint_count(&self) -> usize {
        self.subproblems
            .iter()
            .map(Subproblem::constraint_count)
            .sum()
    }

    /// Sparsity graph over index pairs.
    pub fn sparsity_graph(&self) -> PairGraph {
        chordal::sparsity_graph(&self.index_sets())
    }

    /// Graph on matrix indices `0..n`.
    pub fn index_graph(&self) -> Graph {
        chordal::index_graph(self.n, &self.index_sets())
    }

    pub fn coordinates(&self) -> Coordinates {
        let mut set = std::collections::BTreeSet::new();
        for s in &self.subproblems {
            for &a in &s.j {
                for &b in &s.j {
                    if a >= b {
                        set.insert((b, a));
                    }
                }
            }
        }
        // BTreeSet over (col, row) gives column-major order.
        let pairs: Vec<(usize, usize)> = set.into_iter().map(|(c, r)| (r, c)).collect();
        let index: HashMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let local = self
            .subproblems
            .iter()
            .map(|s| {
                let nj = s.j.len();
                let mut out = vec![0; svec_dim(nj)];
                for c in 0..nj {
                    for r in c..nj {
                        out[svec_index(nj, r, c)] = index[&(s.j[r], s.j[c])];
                    }
                }
                out
            })
            .collect();
        Coordinates {
            pairs,
            index,
            local,
        }
    }

    /// Objective `Σᵢ Wⁱ • X_{JᵢJᵢ}`.
    pub fn objective(&self, x: &SymMatrix) -> f64 {
        self.subproblems
            .iter()
            .map(|s| s.w.dot(&x.principal(&s.j)))
            .sum()
    }

    /// Dual objective `Σᵢ bⁱᵀvⁱ`.
    pub fn dual_objective(&self, v: &[Vec<f64>]) -> f64 {
        self.subproblems
            .iter()
            .zip(v)
            .map(|(s, vi)| s.b.iter().zip(vi).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        if self.subproblems.is_empty() {
            issues.push(ValidationIssue {
                subproblem: None,
                kind: IssueKind::Empty,
                message: "problem has no subproblems".into(),
            });
        }
        let mut covered = vec![false; self.n];
        for (i, s) in self.subproblems.iter().enumerate() {
            let mut push = |kind, message: String| {
                issues.push(ValidationIssue {
                    subproblem: Some(i),
                    kind,
                    message,
                })
            };
            if s.j.is_empty() {
                push(IssueKind::IndexSet, "index set is empty".into());
                continue;
            }
            if s.j.windows(2).any(|w| w[0] >= w[1]) {
                push(
                    IssueKind::IndexSet,
                    "indices are not strictly increasing".into(),
                );
            }
            if let Some(&bad) = s.j.iter().find(|&&v| v >= self.n) {
                push(
                    IssueKind::IndexSet,
                    format!("index {} exceeds order {}", bad + 1, self.n),
                );
                continue;
            }
            for &v in &s.j {
                covered[v] = true;
            }
            let nj = s.j.len();
            if s.w.order() != nj {
                push(
                    IssueKind::Dimension,
                    format!("W has order {}, expected {nj}", s.w.order()),
                );
            }
            if let Some((k, q)) = s.q.iter().enumerate().find(|(_, q)| q.order() != nj) {
                push(
                    IssueKind::Dimension,
                    format!("Q{} has order {}, expected {nj}", k + 1, q.order()),
                );
                continue;
            }
            if s.b.len() != s.q.len() {
                push(
                    IssueKind::Dimension,
                    format!("b has length {}, expected {}", s.b.len(), s.q.len()),
                );
            }
            let rank = numerical_rank(&s.q_matrix().transpose());
            if rank < s.q.len() {
                push(
                    IssueKind::Rank,
                    format!(
                        "constraint matrices have rank {rank} but {} constraints",
                        s.q.len()
                    ),
                );
            }
        }
        let missing: Vec<usize> = (0..self.n).filter(|&v| !covered[v]).collect();
        if !missing.is_empty() {
            issues.push(ValidationIssue {
                subproblem: None,
                kind: IssueKind::Coverage,
                message: format!(
                    "indices not covered by any subproblem: {:?}",
                    missing.iter().map(|v| v + 1).collect::<Vec<_>>()
                ),
            });
        }
        ValidationReport { issues }
    }
}

/// Rank with singular values below `1e-10 · σ_max` treated as zero.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * max).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    Empty,
    IndexSet,
    Coverage,
    Dimension,
    Rank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub subproblem: Option<usize>,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.issues.is_empty() {
            return writeln!(f, "ok");
        }
        for i in &self.issues {
            match i.subproblem {
                Some(s) => writeln!(f, "subproblem {}: {}", s + 1, i.message)?,
                None => writeln!(f, "{}", i.message)?,
            }
        }
        Ok(())
    }
}

/// Subproblem → clique map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// `phi[k]`: subproblems held by clique `k`, increasing.
    pub phi: Vec<Vec<usize>>,
    /// `owner[i]`: clique holding subproblem `i`.
    pub owner: Vec<usize>,
}

fn assign_sets(sets: &[Vec<usize>], t: &CliqueTree) -> Result<Assignment> {
    let mut phi = vec![Vec::new(); t.len()];
    let mut owner = Vec::with_capacity(sets.len());
    for (i, j) in sets.iter().enumerate() {
        let best = (0..t.len())
            .filter(|&k| j.iter().all(|v| t.cliques[k].binary_search(v).is_ok()))
            .min_by_key(|&k| (t.depth[k], k))
            .ok_or_else(|| {
                Error::Decomposition(format!(
                    "index set {} of subproblem {} is not contained in any clique",
                    fmt_one_based(j),
                    i + 1
                ))
            })?;
        phi[best].push(i);
        owner.push(best);
    }
    Ok(Assignment { phi, owner })
}

/// Assigns each subproblem to the eligible clique nearest the root (lowest
/// index on ties).
pub fn assign_subproblems(p: &CoupledSdp, t: &CliqueTree) -> Result<Assignment> {
    assign_sets(&p.index_sets(), t)
}

/// Builds the clique tree of a coupled problem's index graph and assigns
/// subproblems to it.
pub fn tree_for(p: &CoupledSdp) -> Result<(CliqueTree, Assignment)> {
    let s = chordal::analyze_structure(&p.index_graph())?;
    let a = assign_subproblems(p, &s.tree)?;
    Ok((s.tree, a))
}

fn fmt_one_based(j: &[usize]) -> String {
    let v: Vec<String> = j.iter().map(|x| (x + 1).to_string()).collect();
    format!("{{{}}}", v.join(","))
}

/// A symmetric block placed at the index set `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub j: Vec<usize>,
    pub mat: SymMatrix,
}

/// `minimize cᵀy  s.t.  Σᵢ yᵢ E_{Jᵢ}ᵀQⁱE_{Jᵢ} + Σ E_{Jₖ}ᵀMᵏE_{Jₖ} ⪯ 0`,
/// optionally with `yᵢ ≥ 0` for flagged variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInequalitySdp {
    pub n: usize,
    pub c: Vec<f64>,
    pub terms: Vec<Term>,
    pub constants: Vec<Term>,
    /// Empty, or one flag per variable.
    pub nonneg: Vec<bool>,
}

impl SparseInequalitySdp {
    pub fn variable_count(&self) -> usize {
        self.terms.len()
    }

    fn is_nonneg(&self, i: usize) -> bool {
        self.nonneg.get(i).copied().unwrap_or(false)
    }

    pub fn check(&self) -> Result<()> {
        if self.c.len() != self.terms.len() {
            return Err(Error::InvalidDimension(format!(
                "cost has length {} for {} variables",
                self.c.len(),
                self.terms.len()
            )));
        }
        if !self.nonneg.is_empty() && self.nonneg.len() != self.terms.len() {
            return Err(Error::InvalidDimension(format!(
                "{} sign flags for {} variables",
                self.nonneg.len(),
                self.terms.len()
            )));
        }
        for t in self.terms.iter().chain(&self.constants) {
            if t.j.is_empty() || t.j.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Malformed(
                    "term index sets must be nonempty and strictly increasing".into(),
                ));
            }
            if t.j.iter().any(|&v| v >= self.n) {
                return Err(Error::Malformed(format!(
                    "term index {} exceeds order {}",
                    fmt_one_based(&t.j),
                    self.n
                )));
            }
            if t.mat.order() != t.j.len() {
                return Err(Error::InvalidDimension(format!(
                    "term block has order {} for index set {}",
                    t.mat.order(),
                    fmt_one_based(&t.j)
                )));
            }
        }
        Ok(())
    }

    /// Aggregate constant `Σ E_{Jₖ}ᵀMᵏE_{Jₖ}`.
    pub fn constant_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for t in &self.constants {
            scatter_add(&mut m, &t.j, t.mat.as_matrix(), 1.0);
        }
        m
    }

    /// `Σ yᵢ E_{Jᵢ}ᵀQⁱE_{Jᵢ} + Σ E_{Jₖ}ᵀMᵏE_{Jₖ}`.
    pub fn lmi_value(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant_matrix();
        for (t, &yi) in self.terms.iter().zip(y) {
            scatter_add(&mut m, &t.j, t.mat.as_matrix(), yi);
        }
        m
    }

    /// Pattern graph of `Σ E_{Jᵢ}ᵀE_{Jᵢ}` over all terms.
    pub fn pattern_graph(&self) -> Graph {
        let sets: Vec<Vec<usize>> = self
            .terms
            .iter()
            .chain(&self.constants)
            .map(|t| t.j.clone())
            .collect();
        chordal::index_graph(self.n, &sets)
    }

    /// The undecomposed dual as a single-block coupled problem:
    /// `minimize −M • Z  s.t.  Qⁱ • Z_{JᵢJᵢ} = −cᵢ,  Z ⪰ 0`.
    /// Sign-constrained variables get a trailing diagonal slack each.
    pub fn dense_dual(&self) -> Result<CoupledSdp> {
        self.check()?;
        let slacks: Vec<usize> = (0..self.terms.len())
            .filter(|&i| self.is_nonneg(i))
            .collect();
        let order = self.n + slacks.len();
        let mut w = DMatrix::zeros(order, order);
        w.view_mut((0, 0), (self.n, self.n))
            .copy_from(&(-self.constant_matrix()));
        let mut q = Vec::with_capacity(self.terms.len());
        for (i, t) in self.terms.iter().enumerate() {
            let mut m = DMatrix::zeros(order, order);
            scatter_add(&mut m, &t.j, t.mat.as_matrix(), 1.0);
            if let Some(s) = slacks.iter().position(|&k| k == i) {
                m[(self.n + s, self.n + s)] = -1.0;
            }
            q.push(SymMatrix::from_lower(m)?);
        }
        Ok(CoupledSdp {
            n: order,
            subproblems: vec![Subproblem {
                j: (0..order).collect(),
                w: SymMatrix::from_lower(w)?,
                q,
                b: self.c.iter().map(|c| -c).collect(),
            }],
        })
    }
}

pub(crate) fn scatter_add(m: &mut DMatrix<f64>, j: &[usize], block: &DMatrix<f64>, a: f64) {
    for (r, &gr) in j.iter().enumerate() {
        for (c, &gc) in j.iter().enumerate() {
            m[(gr, gc)] += a * block[(r, c)];
        }
    }
}

/// Splits the aggregate matrix `m` over the cliques: every entry is shared
/// equally among the `k` cliques containing both of its indices. Returns one
/// block per clique (in clique order).
pub fn split_shared(m: &DMatrix<f64>, cliques: &[Vec<usize>]) -> Result<Vec<SymMatrix>> {
    let n = m.nrows();
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for c in cliques {
        for (a, &r) in c.iter().enumerate() {
            for &s in &c[..=a] {
                *count.entry((r.max(s), r.min(s))).or_insert(0) += 1;
            }
        }
    }
    for r in 0..n {
        for s in 0..=r {
            if m[(r, s)] != 0.0 && !count.contains_key(&(r, s)) {
                return Err(Error::Decomposition(format!(
                    "entry ({}, {}) is not covered by any clique",
                    r + 1,
                    s + 1
                )));
            }
        }
    }
    cliques
        .iter()
        .map(|c| {
            let k = c.len();
            let block = DMatrix::from_fn(k, k, |a, b| {
                let (r, s) = (c[a].max(c[b]), c[a].min(c[b]));
                m[(r, s)] / count[&(r, s)] as f64
            });
            SymMatrix::from_lower(block)
        })
        .collect()
}

/// Where each variable of the inequality-form problem landed in the
/// decomposed coupled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub problem: CoupledSdp,
    pub tree: CliqueTree,
    /// Subproblem `k` belongs to clique `k`.
    pub assignment: Assignment,
    /// Clique owning each variable's constraint.
    pub variable_owner: Vec<usize>,
    /// Row of each variable's constraint inside its owner's subproblem.
    pub variable_row: Vec<usize>,
    /// Private slack index of each sign-constrained variable.
    pub slack_index: Vec<Option<usize>>,
    pub fill_edges: Vec<(usize, usize)>,
    pub fill_percent: f64,
}

impl Decomposition {
    /// `y` from the constraint multipliers of the coupled problem.
    pub fn recover_y(&self, v: &[Vec<f64>]) -> Vec<f64> {
        self.variable_owner
            .iter()
            .zip(&self.variable_row)
            .map(|(&k, &r)| v[k][r])
            .collect()
    }
}

/// Domain-space decomposition: embeds the pattern, finds its clique tree
/// and emits the dual as one subproblem per clique.
pub fn domain_space_decompose(s: &SparseInequalitySdp) -> Result<Decomposition> {
    s.check()?;
    let st = chordal::analyze_structure(&s.pattern_graph())?;
    decompose_on_tree(
        s,
        st.tree,
        st.embedding.fill_edges,
        st.embedding.fill_percent,
    )
}

/// Domain-space decomposition over a caller-supplied clique tree (which
/// must satisfy the clique intersection property and cover every term).
pub fn domain_space_decompose_with_tree(
    s: &SparseInequalitySdp,
    tree: CliqueTree,
) -> Result<Decomposition> {
    s.check()?;
    if !chordal::verify_cip(&tree) {
        return Err(Error::Decomposition(
            "supplied tree violates the clique intersection property".into(),
        ));
    }
    let g = s.pattern_graph();
    let covered = Graph::from_cliques(s.n, &tree.cliques);
    let fill: Vec<(usize, usize)> = covered
        .edges()
        .into_iter()
        .filter(|&(a, b)| !g.has_edge(a, b))
        .collect();
    let pct = if g.edge_count() == 0 {
        0.0
    } else {
        100.0 * fill.len() as f64 / g.edge_count() as f64
    };
    decompose_on_tree(s, tree, fill, pct)
}

fn decompose_on_tree(
    s: &SparseInequalitySdp,
    tree: CliqueTree,
    fill_edges: Vec<(usize, usize)>,
    fill_percent: f64,
) -> Result<Decomposition> {
    let q = tree.len();
    let var_sets: Vec<Vec<usize>> = s.terms.iter().map(|t| t.j.clone()).collect();
    let var_asg = assign_sets(&var_sets, &tree)?;
    for t in &s.constants {
        if !tree
            .cliques
            .iter()
            .any(|c| t.j.iter().all(|v| c.binary_search(v).is_ok()))
        {
            return Err(Error::Decomposition(format!(
                "constant block on {} is not contained in any clique",
                fmt_one_based(&t.j)
            )));
        }
    }
    let mut covered = vec![false; s.n];
    for c in &tree.cliques {
        for &v in c {
            if v >= s.n {
                return Err(Error::Decomposition(format!(
                    "clique index {} out of range",
                    v + 1
                )));
            }
            covered[v] = true;
        }
    }
    if let Some(v) = covered.iter().position(|c| !c) {
        return Err(Error::Decomposition(format!(
            "index {} is in no clique",
            v + 1
        )));
    }

    // Private slack indices, appended to the owning clique.
    let mut slack_index = vec![None; s.terms.len()];
    let mut cliques = tree.cliques.clone();
    let mut next = s.n;
    for (k, vars) in var_asg.phi.iter().enumerate() {
        for &i in vars {
            if s.is_nonneg(i) {
                slack_index[i] = Some(next);
                cliques[k].push(next);
                next += 1;
            }
        }
    }
    let order = next;

    let w_blocks = split_shared(&(-s.constant_matrix()), &tree.cliques)?;
    let mut subproblems = Vec::with_capacity(q);
    let mut variable_row = vec![0; s.terms.len()];
    for k in 0..q {
        let c = &cliques[k];
        let nk = c.len();
        let pos: HashMap<usize, usize> = c.iter().enumerate().map(|(a, &v)| (v, a)).collect();
        let mut w = DMatrix::zeros(nk, nk);
        let base = tree.cliques[k].len();
        w.view_mut((0, 0), (base, base))
            .copy_from(w_blocks[k].as_matrix());
        let mut qs = Vec::new();
        let mut b = Vec::new();
        for &i in &var_asg.phi[k] {
            let t = &s.terms[i];
            let mut m = DMatrix::zeros(nk, nk);
            let local: Vec<usize> = t.j.iter().map(|v| pos[v]).collect();
            scatter_add(&mut m, &local, t.mat.as_matrix(), 1.0);
            if let Some(sl) = slack_index[i] {
                m[(pos[&sl], pos[&sl])] = -1.0;
            }
            variable_row[i] = qs.len();
            qs.push(SymMatrix::from_lower(m)?);
            b.push(-s.c[i]);
        }
        subproblems.push(Subproblem {
            j: c.clone(),
            w: SymMatrix::from_lower(w)?,
            q: qs,
            b,
        });
    }
    let tree = CliqueTree::from_parent(cliques, tree.parent.clone())?;
    let problem = CoupledSdp {
        n: order,
        subproblems,
    };
    let assignment = Assignment {
        phi: (0..q).map(|k| vec![k]).collect(),
        owner: (0..q).collect(),
    };
    Ok(Decomposition {
        problem,
        tree,
        assignment,
        variable_owner: var_asg.owner,
        variable_row,
        slack_index,
        fill_edges,
        fill_percent,
    })
}
