//! Simulated agent network over a clique tree.
//!
//! Each clique is an agent holding only the subproblems assigned to it.
//! Search directions are computed by tree-ordered block elimination of the
//! reduced KKT system: on the way up every agent eliminates the coordinates
//! whose topmost clique it is, together with those equality multipliers
//! that can be resolved there, and sends its parent a Schur-complement
//! quadratic over the remaining (separator) coordinates and the multipliers
//! it could not resolve. On the way down the parent returns the solved
//! separator values and every agent back-substitutes.
//!
//! Which multipliers an agent resolves depends only on the constraint data,
//! so it is decided once when the network is built. The local factorization
//! is computed once per interior-point iteration and reused for the second
//! right-hand side.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::chordal::CliqueTree;
use crate::error::{Error, Result};
use crate::ipm::{Backend, BlockKkt, BlockRhs, ReducedSolution, ScalarKind};
use crate::linalg::BunchKaufman;
use crate::model::{Assignment, Coordinates, CoupledSdp};

/// Relative singular-value threshold for resolving multipliers at an agent.
const RANK_TOL: f64 = 1e-10;

/// Counters for one interior-point iteration (or any span of work).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    /// Upward-downward passes.
    pub passes: usize,
    /// Depth-sequential message rounds (`2h` per pass).
    pub rounds: usize,
    /// Messages sent along tree edges (`2(q−1)` per pass).
    pub messages: usize,
    /// Local factorizations, summed over agents.
    pub factorizations: usize,
}

impl std::ops::AddAssign for LedgerEntry {
    fn add_assign(&mut self, o: LedgerEntry) {
        self.passes += o.passes;
        self.rounds += o.rounds;
        self.messages += o.messages;
        self.factorizations += o.factorizations;
    }
}

/// Upward message of a direction pass.
#[derive(Debug, Clone)]
pub struct QuadMessage {
    pub from: usize,
    /// Global coordinates of the separator part.
    pub coords: Vec<usize>,
    /// Number of unresolved multipliers carried after the coordinates.
    pub carried: usize,
    pub vector: DVector<f64>,
}

/// Downward message of a direction pass: solved separator values and the
/// child's carried multipliers.
#[derive(Debug, Clone)]
pub struct DownMessage {
    pub values: DVector<f64>,
}

/// Message of a scalar reduction pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMessage {
    pub kind: ScalarKind,
    pub payload: Vec<f64>,
}

/// Upward message of the factorization pass.
#[derive(Debug, Clone)]
struct SchurMessage {
    from: usize,
    coords: Vec<usize>,
    matrix: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct LocalFactor {
    bk: BunchKaufman,
    k_zr: DMatrix<f64>,
}

/// One computational agent (clique).
#[derive(Debug, Clone)]
pub struct Agent {
    pub clique: usize,
    pub members: Vec<usize>,
    /// Subproblems held by this agent.
    pub phi: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Local coordinates: eliminated ones first, then the separator part.
    coords: Vec<usize>,
    n_elim: usize,
    local: HashMap<usize, usize>,
    /// Start of each held subproblem's multipliers within the incoming block.
    own_offsets: Vec<usize>,
    /// `(child, start, count)` of multipliers carried up from children.
    child_slots: Vec<(usize, usize, usize)>,
    m_in: usize,
    /// Orthogonal change of multiplier basis; the first `rank` transformed
    /// multipliers are resolved here, the rest are carried up.
    t: DMatrix<f64>,
    rank: usize,
    /// Constraint rows of the carried multipliers over the separator part.
    carried_rows: DMatrix<f64>,
    // Per-iteration state.
    blocks: Vec<BlockKkt>,
    factor: Option<LocalFactor>,
    b_z: DVector<f64>,
    solution: DVector<f64>,
    pub factorization_count: usize,
    pub communication_count: usize,
}

impl Agent {
    pub fn eliminated_coordinates(&self) -> &[usize] {
        &self.coords[..self.n_elim]
    }

    pub fn separator_coordinates(&self) -> &[usize] {
        &self.coords[self.n_elim..]
    }

    /// Multipliers resolved by this agent.
    pub fn resolved(&self) -> usize {
        self.rank
    }

    /// Multipliers handed to the parent unresolved.
    pub fn carried(&self) -> usize {
        self.m_in - self.rank
    }

    fn n_sep(&self) -> usize {
        self.coords.len() - self.n_elim
    }

    fn dim(&self) -> usize {
        self.coords.len() + self.m_in
    }

    /// Indices of the eliminated block `Z` and the remaining block `R`
    /// within the local unknown vector `[E, S, M']`.
    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let nc = self.coords.len();
        let mut z: Vec<usize> = (0..self.n_elim).collect();
        z.extend(nc..nc + self.rank);
        let mut r: Vec<usize> = (self.n_elim..nc).collect();
        r.extend(nc + self.rank..nc + self.m_in);
        (z, r)
    }
}

/// The agent network. Implements [`Backend`], so it can drive the
/// interior-point iteration directly.
#[derive(Debug, Clone)]
pub struct Network {
    pub agents: Vec<Agent>,
    order: Vec<usize>,
    root: usize,
    height: usize,
    owner: Vec<usize>,
    ledger: LedgerEntry,
    total: LedgerEntry,
}

impl Network {
    /// One agent per clique. Fails when the constraints are linearly
    /// dependent (some multiplier cannot be resolved even at the root).
    pub fn new(p: &CoupledSdp, tree: &CliqueTree, asg: &Assignment) -> Result<Self> {
        let q = tree.len();
        if asg.phi.len() != q || asg.owner.len() != p.subproblems.len() {
            return Err(Error::Malformed(
                "assignment does not match tree and problem".into(),
            ));
        }
        for (i, sp) in p.subproblems.iter().enumerate() {
            let c = &tree.cliques[asg.owner[i]];
            if sp.j.iter().any(|v| c.binary_search(v).is_err()) {
                return Err(Error::Decomposition(format!(
                    "subproblem {} is not contained in its clique {}",
                    i + 1,
                    asg.owner[i] + 1
                )));
            }
        }
        let coords = p.coordinates();
        let top = top_cliques(tree, &coords);
        let order = tree.postorder();
        let mut agents: Vec<Option<Agent>> = vec![None; q];
        for &k in &order {
            let mut avail: Vec<usize> = Vec::new();
            for &i in &asg.phi[k] {
                avail.extend_from_slice(&coords.local[i]);
            }
            for &c in &tree.children[k] {
                avail.extend_from_slice(agents[c].as_ref().unwrap().separator_coordinates());
            }
            avail.sort_unstable();
            avail.dedup();
            let (mut lc, sep): (Vec<usize>, Vec<usize>) =
                avail.into_iter().partition(|&g| top[g] == k);
            if k == tree.root && !sep.is_empty() {
                return Err(Error::Decomposition(
                    "root clique has separator coordinates".into(),
                ));
            }
            let n_elim = lc.len();
            lc.extend(sep);
            let local: HashMap<usize, usize> =
                lc.iter().enumerate().map(|(a, &g)| (g, a)).collect();

            let mut own_offsets = Vec::new();
            let mut m_in = 0;
            for &i in &asg.phi[k] {
                own_offsets.push(m_in);
                m_in += p.subproblems[i].constraint_count();
            }
            let mut child_slots = Vec::new();
            for &c in &tree.children[k] {
                let cc = agents[c].as_ref().unwrap().carried();
                child_slots.push((c, m_in, cc));
                m_in += cc;
            }

            // Constraint rows over local coordinates.
            let nc = lc.len();
            let mut rows = DMatrix::zeros(m_in, nc);
            for (t, &i) in asg.phi[k].iter().enumerate() {
                let qm = p.subproblems[i].q_matrix();
                for j in 0..qm.nrows() {
                    for (a, &g) in coords.local[i].iter().enumerate() {
                        rows[(own_offsets[t] + j, local[&g])] = qm[(j, a)];
                    }
                }
            }
            for &(c, start, cnt) in &child_slots {
                let ch = agents[c].as_ref().unwrap();
                for (a, &g) in ch.separator_coordinates().iter().enumerate() {
                    let col = local[&g];
                    for j in 0..cnt {
                        rows[(start + j, col)] = ch.carried_rows[(j, a)];
                    }
                }
            }

            let (t, rank) = multiplier_basis(&rows, n_elim);
            if k == tree.root && rank < m_in {
                return Err(Error::Singular(format!(
                    "constraints resolved at clique {} are linearly dependent ({} of {} independent)",
                    k + 1,
                    rank,
                    m_in
                )));
            }
            let transformed = &t * &rows;
            let carried_rows = transformed
                .view((rank, n_elim), (m_in - rank, nc - n_elim))
                .into_owned();

            agents[k] = Some(Agent {
                clique: k,
                members: tree.cliques[k].clone(),
                phi: asg.phi[k].clone(),
                parent: (k != tree.root).then(|| tree.parent[k]),
                children: tree.children[k].clone(),
                coords: lc,
                n_elim,
                local,
                own_offsets,
                child_slots,
                m_in,
                t,
                rank,
                carried_rows,
                blocks: Vec::new(),
                factor: None,
                b_z: DVector::zeros(0),
                solution: DVector::zeros(0),
                factorization_count: 0,
                communication_count: 0,
            });
        }
        Ok(Network {
            agents: agents.into_iter().map(Option::unwrap).collect(),
            order,
            root: tree.root,
            height: tree.height,
            owner: asg.owner.clone(),
            ledger: LedgerEntry::default(),
            total: LedgerEntry::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Counters accumulated since construction.
    pub fn total_ledger(&self) -> LedgerEntry {
        let mut t = self.total;
        t += self.ledger;
        t
    }

    fn count_pass(&mut self) {
        let q = self.agents.len();
        self.ledger.passes += 1;
        self.ledger.rounds += 2 * self.height;
        self.ledger.messages += 2 * (q - 1);
        if q > 1 {
            for a in &mut self.agents {
                a.communication_count += 2;
            }
        }
    }

    /// Hands each agent the data of its own subproblems and factors the
    /// local systems bottom-up. Counts one factorization per agent.
    pub fn factor(&mut self, coords: &Coordinates, blocks: &[BlockKkt]) -> Result<()> {
        for a in &mut self.agents {
            a.blocks = a.phi.iter().map(|&i| blocks[i].clone()).collect();
            a.factor = None;
        }
        let mut inbox: Vec<Vec<SchurMessage>> = vec![Vec::new(); self.agents.len()];
        for idx in 0..self.order.len() {
            let k = self.order[idx];
            let msgs = std::mem::take(&mut inbox[k]);
            let a = &mut self.agents[k];
            let (schur, f) = factor_agent(a, coords, &msgs)?;
            a.factor = Some(f);
            a.factorization_count += 1;
            self.ledger.factorizations += 1;
            if let Some(p) = a.parent {
                inbox[p].push(SchurMessage {
                    from: k,
                    coords: a.separator_coordinates().to_vec(),
                    matrix: schur,
                });
            }
        }
        Ok(())
    }

    /// One upward-downward direction pass for the given right-hand sides.
    pub fn direction_pass(
        &mut self,
        coords: &Coordinates,
        rhs: &[BlockRhs],
    ) -> Result<ReducedSolution> {
        let q = self.agents.len();
        let mut inbox: Vec<Vec<QuadMessage>> = vec![Vec::new(); q];
        for idx in 0..self.order.len() {
            let k = self.order[idx];
            let msgs = std::mem::take(&mut inbox[k]);
            let a = &mut self.agents[k];
            let f = a
                .factor
                .as_ref()
                .ok_or_else(|| Error::Singular(format!("clique {} has no factorization", k + 1)))?;
            let mut b = DVector::zeros(a.dim());
            let nc = a.coords.len();
            for (t, &i) in a.phi.iter().enumerate() {
                for (ai, &g) in coords.local[i].iter().enumerate() {
                    b[a.local[&g]] -= rhs[i].r[ai];
                }
                let off = nc + a.own_offsets[t];
                b.rows_mut(off, rhs[i].r_primal.len())
                    .copy_from(&rhs[i].r_primal);
            }
            for m in &msgs {
                let &(_, start, cnt) = a.child_slots.iter().find(|s| s.0 == m.from).unwrap();
                for (ai, &g) in m.coords.iter().enumerate() {
                    b[a.local[&g]] += m.vector[ai];
                }
                for j in 0..cnt {
                    b[nc + start + j] += m.vector[m.coords.len() + j];
                }
            }
            let bm = &a.t * b.rows(nc, a.m_in);
            b.rows_mut(nc, a.m_in).copy_from(&bm);
            let (z, r) = a.split();
            let b_z = DVector::from_fn(z.len(), |i, _| b[z[i]]);
            let b_r = DVector::from_fn(r.len(), |i, _| b[r[i]]);
            let y = f.bk.solve(&b_z);
            let up = b_r - f.k_zr.tr_mul(&y);
            a.b_z = b_z;
            if let Some(p) = a.parent {
                inbox[p].push(QuadMessage {
                    from: k,
                    coords: a.separator_coordinates().to_vec(),
                    carried: a.carried(),
                    vector: up,
                });
            }
        }

        let mut dx = DVector::zeros(coords.len());
        let mut lam: Vec<DVector<f64>> = rhs
            .iter()
            .map(|r| DVector::zeros(r.r_primal.len()))
            .collect();
        let mut down: Vec<Option<DownMessage>> = vec![None; q];
        for idx in (0..self.order.len()).rev() {
            let k = self.order[idx];
            let a = &mut self.agents[k];
            let f = a.factor.as_ref().unwrap();
            let (z, r) = a.split();
            let u_r = match down[k].take() {
                Some(m) => m.values,
                None => DVector::zeros(r.len()),
            };
            let u_z = f.bk.solve(&(&a.b_z - &f.k_zr * &u_r));
            let mut sol = DVector::zeros(a.dim());
            for (i, &zi) in z.iter().enumerate() {
                sol[zi] = u_z[i];
            }
            for (i, &ri) in r.iter().enumerate() {
                sol[ri] = u_r[i];
            }
            let nc = a.coords.len();
            let m_back = a.t.tr_mul(&sol.rows(nc, a.m_in));
            sol.rows_mut(nc, a.m_in).copy_from(&m_back);
            for e in 0..a.n_elim {
                dx[a.coords[e]] = sol[e];
            }
            for (t, &i) in a.phi.iter().enumerate() {
                let off = nc + a.own_offsets[t];
                let len = lam[i].len();
                lam[i].copy_from(&sol.rows(off, len));
            }
            a.solution = sol;
            let a = &self.agents[k];
            for &(c, start, cnt) in &a.child_slots {
                let ch = &self.agents[c];
                let ns = ch.n_sep();
                let mut v = DVector::zeros(ns + cnt);
                for (i, g) in ch.separator_coordinates().iter().enumerate() {
                    v[i] = a.solution[a.local[g]];
                }
                for j in 0..cnt {
                    v[ns + j] = a.solution[nc + start + j];
                }
                down[c] = Some(DownMessage { values: v });
            }
        }
        self.count_pass();
        Ok(ReducedSolution {
            dx,
            dv: lam.into_iter().map(|l| -l).collect(),
        })
    }

    /// Upward reduction and downward broadcast of per-subproblem values.
    pub fn scalar_reduce_pass(&mut self, kind: ScalarKind, local: &[Vec<f64>]) -> Vec<f64> {
        let q = self.agents.len();
        let mut inbox: Vec<Vec<(usize, ScalarMessage)>> = vec![Vec::new(); q];
        let mut result = kind.identity();
        for &k in &self.order {
            let a = &self.agents[k];
            let mut acc = kind.identity();
            for &i in &a.phi {
                kind.combine(&mut acc, &local[i]);
            }
            // Children in fixed order.
            let mut msgs = std::mem::take(&mut inbox[k]);
            msgs.sort_by_key(|m| m.0);
            for (_, m) in msgs {
                kind.combine(&mut acc, &m.payload);
            }
            match a.parent {
                Some(p) => inbox[p].push((k, ScalarMessage { kind, payload: acc })),
                None => result = acc,
            }
        }
        self.count_pass();
        result
    }

    /// Owner agent of subproblem `i`.
    pub fn owner_of(&self, i: usize) -> usize {
        self.owner[i]
    }

    pub fn root(&self) -> usize {
        self.root
    }
}

impl Backend for Network {
    fn prepare(&mut self, coords: &Coordinates, blocks: &[BlockKkt]) -> Result<()> {
        self.factor(coords, blocks)
    }

    fn solve(&mut self, coords: &Coordinates, rhs: &[BlockRhs]) -> Result<ReducedSolution> {
        self.direction_pass(coords, rhs)
    }

    fn reduce(&mut self, kind: ScalarKind, local: &[Vec<f64>]) -> Vec<f64> {
        self.scalar_reduce_pass(kind, local)
    }

    fn take_ledger(&mut self) -> LedgerEntry {
        let e = std::mem::take(&mut self.ledger);
        self.total += e;
        e
    }
}

/// Topmost clique containing each coordinate's index pair.
fn top_cliques(tree: &CliqueTree, coords: &Coordinates) -> Vec<usize> {
    let mut by_depth: Vec<usize> = (0..tree.len()).collect();
    by_depth.sort_by_key(|&k| (tree.depth[k], k));
    let mut top = vec![usize::MAX; coords.len()];
    for k in by_depth {
        let c = &tree.cliques[k];
        for (x, &a) in c.iter().enumerate() {
            for &b in &c[..=x] {
                if let Some(g) = coords.index_of(a, b) {
                    if top[g] == usize::MAX {
                        top[g] = k;
                    }
                }
            }
        }
    }
    top
}

/// Orthogonal `T` such that the first `rank` rows of `T·rows` restricted to
/// the first `n_elim` columns are independent and the rest vanish there.
fn multiplier_basis(rows: &DMatrix<f64>, n_elim: usize) -> (DMatrix<f64>, usize) {
    let m = rows.nrows();
    if m == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    if n_elim == 0 {
        return (DMatrix::identity(m, m), 0);
    }
    let re = rows.columns(0, n_elim);
    // Pad with zero columns so that the left singular basis is complete.
    let mut padded = DMatrix::zeros(m, n_elim.max(m));
    padded.columns_mut(0, n_elim).copy_from(&re);
    let svd = padded.svd(true, false);
    let u = svd.u.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[idx[0]];
    let scale = rows.amax().max(smax);
    let rank = idx
        .iter()
        .filter(|&&i| svd.singular_values[i] > RANK_TOL * scale)
        .count();
    let mut t = DMatrix::zeros(m, m);
    for (r, &i) in idx.iter().enumerate() {
        t.row_mut(r).copy_from(&u.column(i).transpose());
    }
    (t, rank)
}

/// Assembles the local KKT block, factors the eliminated part and returns
/// the Schur complement sent to the parent.
fn factor_agent(
    a: &Agent,
    coords: &Coordinates,
    msgs: &[SchurMessage],
) -> Result<(DMatrix<f64>, LocalFactor)> {
    let nc = a.coords.len();
    let n = a.dim();
    let mut k = DMatrix::zeros(n, n);
    for (t, (&i, blk)) in a.phi.iter().zip(&a.blocks).enumerate() {
        let loc: Vec<usize> = coords.local[i].iter().map(|g| a.local[g]).collect();
        for (x, &lx) in loc.iter().enumerate() {
            for (y, &ly) in loc.iter().enumerate() {
                k[(lx, ly)] += blk.hessian[(x, y)];
            }
        }
        let off = nc + a.own_offsets[t];
        for j in 0..blk.q.nrows() {
            for (x, &lx) in loc.iter().enumerate() {
                k[(off + j, lx)] = blk.q[(j, x)];
                k[(lx, off + j)] = blk.q[(j, x)];
            }
        }
    }
    let mut msgs: Vec<&SchurMessage> = msgs.iter().collect();
    msgs.sort_by_key(|m| m.from);
    for m in msgs {
        // The child's separator coordinates map into ours; its carried
        // multipliers occupy our slot for it.
        let &(_, start, _) = a.child_slots.iter().find(|x| x.0 == m.from).unwrap();
        let ns = m.coords.len();
        let map = |x: usize| {
            if x < ns {
                a.local[&m.coords[x]]
            } else {
                nc + start + (x - ns)
            }
        };
        let s = &m.matrix;
        for x in 0..s.nrows() {
            let mx = map(x);
            for y in 0..s.ncols() {
                k[(mx, map(y))] += s[(x, y)];
            }
        }
    }
    // Change of multiplier basis (congruence on the multiplier block).
    if a.m_in > 0 {
        let kcm = k.view((0, nc), (nc, a.m_in)) * a.t.transpose();
        let kmm = &a.t * k.view((nc, nc), (a.m_in, a.m_in)) * a.t.transpose();
        k.view_mut((0, nc), (nc, a.m_in)).copy_from(&kcm);
        k.view_mut((nc, 0), (a.m_in, nc))
            .copy_from(&kcm.transpose());
        k.view_mut((nc, nc), (a.m_in, a.m_in)).copy_from(&kmm);
        // Carried rows vanish on the eliminated coordinates by construction.
        for r in nc + a.rank..n {
            for e in 0..a.n_elim {
                k[(r, e)] = 0.0;
                k[(e, r)] = 0.0;
            }
        }
    }
    let (z, r) = a.split();
    let k_zz = k.select_rows(&z).select_columns(&z);
    let k_zr = k.select_rows(&z).select_columns(&r);
    let k_rr = k.select_rows(&r).select_columns(&r);
    let bk = BunchKaufman::new(&k_zz).map_err(|e| {
        Error::Singular(format!(
            "local system of clique {} is singular: {e}",
            a.clique + 1
        ))
    })?;
    let mut x = DMatrix::zeros(z.len(), r.len());
    for c in 0..r.len() {
        x.set_column(c, &bk.solve(&k_zr.column(c).into_owned()));
    }
    let schur = k_rr - k_zr.tr_mul(&x);
    let schur = (&schur + schur.transpose()) * 0.5;
    Ok((schur, LocalFactor { bk, k_zr }))
}
