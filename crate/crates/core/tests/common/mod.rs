//! Shared instance generators and harnesses for the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treesdp::ipm::{Backend, BlockKkt, BlockRhs, CentralBackend, ReducedSolution, ScalarKind};
use treesdp::model::{
    numerical_rank, Coordinates, CoupledSdp, SparseInequalitySdp, Subproblem, Term,
};
use treesdp::mpassing::{LedgerEntry, Network};
use treesdp::symcone::SymMatrix;
use treesdp::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sym(rng: &mut impl Rng, n: usize) -> SymMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize(&((&a + a.transpose()) * 0.5)).unwrap()
}

pub fn random_spd(rng: &mut impl Rng, n: usize) -> SymMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrize(&(&a * a.transpose() / n as f64 + DMatrix::identity(n, n))).unwrap()
}

/// Index sets forming a random clique tree: each new set shares one or two
/// indices with a random earlier set and adds fresh ones.
pub fn tree_sets(rng: &mut impl Rng, cliques: usize, max_n: usize) -> Vec<Vec<usize>> {
    let first = rng.random_range(2..=4);
    let mut sets = vec![(0..first).collect::<Vec<usize>>()];
    let mut n = first;
    while sets.len() < cliques {
        let parent = sets[rng.random_range(0..sets.len())].clone();
        let share = rng.random_range(1..=2.min(parent.len() - 1));
        let fresh = rng.random_range(1..=3).min(max_n.saturating_sub(n));
        if fresh == 0 {
            break;
        }
        let mut s: Vec<usize> = Vec::new();
        while s.len() < share {
            let v = parent[rng.random_range(0..parent.len())];
            if !s.contains(&v) {
                s.push(v);
            }
        }
        s.extend(n..n + fresh);
        n += fresh;
        s.sort_unstable();
        sets.push(s);
    }
    sets
}

/// A coupled SDP over the given index sets with strictly feasible primal
/// (data generated from an interior point) and dual (`W` near `I`).
pub fn coupled_problem(rng: &mut impl Rng, sets: &[Vec<usize>], m: usize) -> CoupledSdp {
    let n = sets.iter().flatten().max().map_or(0, |v| v + 1);
    let x0 = random_spd(rng, n);
    let subproblems = sets
        .iter()
        .map(|j| {
            let nj = j.len();
            let m = m.min(nj * (nj + 1) / 2);
            let q: Vec<SymMatrix> = (0..m).map(|_| random_sym(rng, nj)).collect();
            let xb = x0.principal(j);
            let b = q.iter().map(|qq| qq.dot(&xb)).collect();
            let mut w = random_spd(rng, nj).into_matrix();
            for qq in &q {
                w += qq.as_matrix() * rng.random_range(-0.3..0.3);
            }
            Subproblem {
                j: j.clone(),
                w: SymMatrix::symmetrize(&w).unwrap(),
                q,
                b,
            }
        })
        .collect();
    CoupledSdp { n, subproblems }
}

/// Rank of all constraints stacked over the global coordinates.
pub fn global_rank(p: &CoupledSdp) -> (usize, usize) {
    let coords = p.coordinates();
    let rows = p.constraint_count();
    let mut a = DMatrix::zeros(rows, coords.len());
    let mut r0 = 0;
    for (i, sp) in p.subproblems.iter().enumerate() {
        let qm = sp.q_matrix();
        for j in 0..qm.nrows() {
            for (c, &g) in coords.local[i].iter().enumerate() {
                a[(r0 + j, g)] = qm[(j, c)];
            }
        }
        r0 += qm.nrows();
    }
    (numerical_rank(&a), rows)
}

/// Random tree-structured instance with `2..=12` cliques and `n ≤ 60`.
/// Overlapping blocks can make the stacked constraints dependent even when
/// every block is full rank; such draws drop constraints until they are not.
pub fn random_instance(seed: u64) -> CoupledSdp {
    let mut r = rng(seed);
    let q = r.random_range(2..=12);
    let sets = tree_sets(&mut r, q, 60);
    let m = r.random_range(1..=3);
    let mut p = coupled_problem(&mut r, &sets, m);
    loop {
        let (rank, rows) = global_rank(&p);
        if rank == rows {
            return p;
        }
        let k = (0..p.subproblems.len())
            .max_by_key(|&k| (p.subproblems[k].constraint_count(), k))
            .unwrap();
        p.subproblems[k].q.pop();
        p.subproblems[k].b.pop();
    }
}

/// Sparse inequality-form SDP with `y = 0` strictly feasible and a strictly
/// feasible dual, so both optima exist and coincide.
pub fn inequality_instance(seed: u64, n: usize) -> SparseInequalitySdp {
    let mut r = rng(seed);
    let vars = r.random_range(n..=2 * n);
    let mut terms: Vec<Term> = Vec::with_capacity(vars);
    while terms.len() < vars {
        let size = r.random_range(2..=3.min(n));
        let mut j: Vec<usize> = Vec::new();
        while j.len() < size {
            let v = r.random_range(0..n);
            if !j.contains(&v) {
                j.push(v);
            }
        }
        j.sort_unstable();
        // Distinct index sets keep the grouped constraints independent.
        if terms.iter().any(|t| t.j == j) {
            continue;
        }
        let mat = random_sym(&mut r, size);
        terms.push(Term { j, mat });
    }
    // −I plus a small perturbation on the term patterns keeps y = 0 strictly
    // feasible without adding new sparsity.
    let mut constants: Vec<Term> = (0..n)
        .map(|i| Term {
            j: vec![i],
            mat: SymMatrix::from_diagonal(&[-1.0]),
        })
        .collect();
    for t in terms.iter().take(3) {
        constants.push(Term {
            j: t.j.clone(),
            mat: random_sym(&mut r, t.j.len()).scale(0.05),
        });
    }
    let z0 = random_spd(&mut r, n);
    let c = terms
        .iter()
        .map(|t| -t.mat.dot(&z0.principal(&t.j)))
        .collect();
    SparseInequalitySdp {
        n,
        c,
        terms,
        constants,
        nonneg: vec![],
    }
}

/// Drives the agent network and records how far its reduced solutions are
/// from the central dense or sparse solve of the same system.
pub struct Shadow {
    pub net: Network,
    central: CentralBackend,
    pub worst: f64,
    pub solves: usize,
    /// Relative difference of every solve, in order.
    pub diffs: Vec<f64>,
}

impl Shadow {
    pub fn new(net: Network) -> Self {
        Shadow {
            net,
            central: CentralBackend::new(1200),
            worst: 0.0,
            solves: 0,
            diffs: Vec::new(),
        }
    }
}

impl Backend for Shadow {
    fn prepare(&mut self, c: &Coordinates, b: &[BlockKkt]) -> Result<()> {
        self.central.prepare(c, b)?;
        self.net.prepare(c, b)
    }

    fn solve(&mut self, c: &Coordinates, r: &[BlockRhs]) -> Result<ReducedSolution> {
        let a = self.central.solve(c, r)?;
        let b = self.net.solve(c, r)?;
        let d = a.relative_difference(&b);
        self.worst = self.worst.max(d);
        self.diffs.push(d);
        self.solves += 1;
        Ok(b)
    }

    fn reduce(&mut self, k: ScalarKind, l: &[Vec<f64>]) -> Vec<f64> {
        self.net.reduce(k, l)
    }

    fn take_ledger(&mut self) -> LedgerEntry {
        self.central.take_ledger();
        self.net.take_ledger()
    }
}
