//! Predictor-corrector primal-dual interior-point method for coupled SDPs.
//!
//! Search directions come from the reduced problem
//!
//! ```text
//! minimize   Σᵢ ½ Δxⁱᵀ Hⁱ Δxⁱ + rⁱᵀ Δxⁱ
//! subject to 𝒬ⁱ Δxⁱ = r_primalⁱ
//! ```
//!
//! over the svec coordinates of the global variable, with `Hⁱ = (Fⁱ)⁻¹Uⁱ`.
//! How that problem is solved (one global factorization, or elimination
//! over a clique tree) is left to a [`Backend`].
//!
//! Sign convention: the consensus multiplier enters the dual residual as
//! `R_dualⁱ = Wⁱ − Σⱼ vⁱⱼ Qⁱⱼ − smat(v̄ⁱ) − Sⁱ`, so the linearized dual
//! equation reads `𝒬ⁱᵀΔvⁱ + Δv̄ⁱ + Δsⁱ = r_dualⁱ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chordal::CliqueTree;
use crate::error::{Error, Result};
use crate::linalg::{amd_order, BunchKaufman, SparseLdl};
use crate::model::{Assignment, Coordinates, CoupledSdp};
use crate::mpassing::{LedgerEntry, Network};
use crate::symcone::{min_ratio_eig, smat_raw, svec_dim, svec_raw, NtScaling, SymMatrix};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Central,
    Distributed,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Fraction of the distance to the cone boundary, in (0, 1).
    pub tau: f64,
    /// Exponent `a` of the centering rule, in {1, 2, 3}.
    pub sigma_exp: i32,
    /// Bound on the surrogate duality gap μ.
    pub tol: f64,
    /// Bound on the squared primal and dual residual norms.
    pub feas_tol: f64,
    pub max_iters: usize,
    /// Iterate norm beyond which the run is declared divergent.
    pub divergence_threshold: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Evaluate per-block work on the rayon pool.
    pub parallel: bool,
    /// Largest reduced KKT system solved densely by the central backend.
    pub dense_limit: usize,
    /// Largest subproblem order accepted; the per-block Hessian has
    /// `(k(k+1)/2)²` entries.
    pub max_block_order: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: 0.98,
            sigma_exp: 1,
            tol: 1e-9,
            feas_tol: 1e-9,
            max_iters: 100,
            divergence_threshold: 1e8,
            mode: Mode::Central,
            seed: 0,
            parallel: false,
            dense_limit: 1200,
            max_block_order: 160,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Malformed(format!(
                "tau must lie in (0,1), got {}",
                self.tau
            )));
        }
        if !(1..=3).contains(&self.sigma_exp) {
            return Err(Error::Malformed(format!(
                "sigma exponent must be 1, 2 or 3, got {}",
                self.sigma_exp
            )));
        }
        if !(self.tol > 0.0) || !(self.feas_tol > 0.0) {
            return Err(Error::Malformed("tolerances must be positive".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Malformed(
                "divergence threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Primal-dual iterate. `x` holds the entries `X_rc` of the global variable
/// at the coordinates of the problem (off-diagonals unscaled).
#[derive(Debug, Clone)]
pub struct IterateState {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
    pub x: DVector<f64>,
    pub xbar: Vec<SymMatrix>,
    pub s: Vec<SymMatrix>,
    pub v: Vec<DVector<f64>>,
    pub vbar: Vec<DVector<f64>>,
    pub k: usize,
    pub mu: f64,
}

impl IterateState {
    /// Diagonal starting point with entries drawn uniformly from (0.1, 2);
    /// `v = v̄ = 0`.
    pub fn initial(p: &CoupledSdp, coords: &Coordinates, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DVector::zeros(coords.len());
        for (k, &(r, c)) in coords.pairs.iter().enumerate() {
            if r == c {
                x[k] = rng.random_range(0.1..2.0);
            }
        }
        let s = p
            .subproblems
            .iter()
            .map(|sp| {
                let d: Vec<f64> = (0..sp.order())
                    .map(|_| rng.random_range(0.1..2.0))
                    .collect();
                SymMatrix::from_diagonal(&d)
            })
            .collect();
        let mut st = IterateState {
            n: p.n,
            pairs: coords.pairs.clone(),
            xbar: gather_blocks(&x, p, coords),
            x,
            s,
            v: p.subproblems
                .iter()
                .map(|sp| DVector::zeros(sp.constraint_count()))
                .collect(),
            vbar: p
                .subproblems
                .iter()
                .map(|sp| DVector::zeros(svec_dim(sp.order())))
                .collect(),
            k: 0,
            mu: 0.0,
        };
        st.mu = st.gap(p);
        st
    }

    /// The global variable, zero outside the coordinates.
    pub fn global_x(&self) -> SymMatrix {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (k, &(r, c)) in self.pairs.iter().enumerate() {
            m[(r, c)] = self.x[k];
        }
        SymMatrix::from_lower(m).expect("square")
    }

    /// Surrogate duality gap `Σ X̄ⁱ•Sⁱ / Σ|Jᵢ|`.
    pub fn gap(&self, p: &CoupledSdp) -> f64 {
        let num: f64 = self.xbar.iter().zip(&self.s).map(|(x, s)| x.dot(s)).sum();
        num / total_order(p) as f64
    }

    /// `max ‖X̄ⁱ − X_{JᵢJᵢ}‖_max`.
    pub fn consensus_error(&self, p: &CoupledSdp, coords: &Coordinates) -> f64 {
        let g = gather_blocks(&self.x, p, coords);
        g.iter()
            .zip(&self.xbar)
            .map(|(a, b)| (a.as_matrix() - b.as_matrix()).amax())
            .fold(0.0, f64::max)
    }

    /// `‖Σᵢ(E⊗ₛE)ᵀv̄ⁱ‖ / (1 + maxᵢ‖v̄ⁱ‖)`.
    pub fn null_sum(&self, coords: &Coordinates) -> f64 {
        relative_null_sum(&self.vbar, coords)
    }
}

fn total_order(p: &CoupledSdp) -> usize {
    p.subproblems
        .iter()
        .map(|s| s.order())
        .sum::<usize>()
        .max(1)
}

fn gather_blocks(x: &DVector<f64>, p: &CoupledSdp, coords: &Coordinates) -> Vec<SymMatrix> {
    p.subproblems
        .iter()
        .zip(&coords.local)
        .map(|(sp, loc)| {
            let nj = sp.order();
            let mut m = DMatrix::zeros(nj, nj);
            let mut k = 0;
            for c in 0..nj {
                for r in c..nj {
                    m[(r, c)] = x[loc[k]];
                    k += 1;
                }
            }
            SymMatrix::from_lower(m).expect("square")
        })
        .collect()
}

fn relative_null_sum(vbar: &[DVector<f64>], coords: &Coordinates) -> f64 {
    let mut acc = DVector::<f64>::zeros(coords.len());
    let mut scale = 0.0_f64;
    for (vb, loc) in vbar.iter().zip(&coords.local) {
        for (a, &g) in loc.iter().enumerate() {
            acc[g] += vb[a];
        }
        scale = scale.max(vb.norm());
    }
    acc.norm() / (1.0 + scale)
}

/// Per-block residuals, all in svec form.
#[derive(Debug, Clone)]
pub struct BlockResiduals {
    pub r_primal: DVector<f64>,
    pub r_dual: DVector<f64>,
    pub r_cent: DVector<f64>,
}

/// Residuals of every block at the perturbation `δ = σμ`.
pub fn residuals(
    state: &IterateState,
    p: &CoupledSdp,
    sigma_mu: f64,
    scalings: &[NtScaling],
) -> Vec<BlockResiduals> {
    (0..p.subproblems.len())
        .map(|i| block_residuals(state, p, i, sigma_mu, &scalings[i]))
        .collect()
}

fn block_residuals(
    state: &IterateState,
    p: &CoupledSdp,
    i: usize,
    sigma_mu: f64,
    sc: &NtScaling,
) -> BlockResiduals {
    let (r_primal, r_dual) = feasibility_residuals(state, p, i);
    let xs = state.xbar[i].as_matrix() * state.s[i].as_matrix();
    let mut rc = sc.hd(&xs).into_matrix() * -1.0;
    for d in 0..rc.nrows() {
        rc[(d, d)] += sigma_mu;
    }
    BlockResiduals {
        r_primal,
        r_dual,
        r_cent: svec_raw(&rc),
    }
}

fn feasibility_residuals(
    state: &IterateState,
    p: &CoupledSdp,
    i: usize,
) -> (DVector<f64>, DVector<f64>) {
    let sp = &p.subproblems[i];
    let xb = state.xbar[i].as_matrix();
    let r_primal = DVector::from_fn(sp.constraint_count(), |j, _| {
        sp.b[j] - sp.q[j].as_matrix().dot(xb)
    });
    let mut rd = sp.w.as_matrix() - state.s[i].as_matrix();
    for (j, q) in sp.q.iter().enumerate() {
        rd -= q.as_matrix() * state.v[i][j];
    }
    let r_dual = svec_raw(&rd) - &state.vbar[i];
    (r_primal, r_dual)
}

/// Constant part of one block of the reduced problem within an iteration.
#[derive(Debug, Clone)]
pub struct BlockKkt {
    /// `(Fⁱ)⁻¹Uⁱ`, symmetrized.
    pub hessian: DMatrix<f64>,
    /// Rows `svec(Qⁱⱼ)ᵀ`.
    pub q: DMatrix<f64>,
}

/// Right-hand side of one block of the reduced problem.
#[derive(Debug, Clone)]
pub struct BlockRhs {
    pub r: DVector<f64>,
    pub r_primal: DVector<f64>,
}

/// Solution of the reduced problem: `Δx` over the global svec coordinates
/// and the equality multipliers `Δvⁱ`.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub dx: DVector<f64>,
    pub dv: Vec<DVector<f64>>,
}

impl ReducedSolution {
    /// `max(‖Δx − Δx'‖, ‖Δv − Δv'‖) / max(1, ‖Δx‖, ‖Δv‖)`.
    pub fn relative_difference(&self, other: &ReducedSolution) -> f64 {
        let mut num = (&self.dx - &other.dx).norm_squared();
        let mut den = self.dx.norm_squared();
        for (a, b) in self.dv.iter().zip(&other.dv) {
            num += (a - b).norm_squared();
            den += a.norm_squared();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

enum KktFactor {
    Dense(BunchKaufman),
    Sparse(SparseLdl),
}

/// Factorization of the assembled reduced KKT matrix
/// `[H Bᵀ; B 0]`, `H = Σ EᵢᵀHⁱEᵢ`, rows of `B` equal to `𝒬ⁱEᵢ`.
/// The unknowns are `(Δx, λ)` with `λ = −Δv`.
pub struct CentralKkt {
    nc: usize,
    offsets: Vec<usize>,
    factor: KktFactor,
}

impl CentralKkt {
    pub fn factor(coords: &Coordinates, blocks: &[BlockKkt], dense_limit: usize) -> Result<Self> {
        let nc = coords.len();
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(nc);
        for b in blocks {
            offsets.push(offsets.last().unwrap() + b.q.nrows());
        }
        let dim = *offsets.last().unwrap();
        let factor = if dim <= dense_limit {
            let mut k = DMatrix::zeros(dim, dim);
            for (i, b) in blocks.iter().enumerate() {
                let loc = &coords.local[i];
                for (a, &ga) in loc.iter().enumerate() {
                    for (c, &gc) in loc.iter().enumerate() {
                        k[(ga, gc)] += b.hessian[(a, c)];
                    }
                }
                for j in 0..b.q.nrows() {
                    let row = offsets[i] + j;
                    for (a, &ga) in loc.iter().enumerate() {
                        k[(row, ga)] = b.q[(j, a)];
                        k[(ga, row)] = b.q[(j, a)];
                    }
                }
            }
            KktFactor::Dense(BunchKaufman::new(&k)?)
        } else {
            let (triplets, perm) = sparse_kkt(coords, blocks, &offsets)?;
            KktFactor::Sparse(SparseLdl::factor(dim, &triplets, &perm)?)
        };
        Ok(CentralKkt {
            nc,
            offsets,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.factor, KktFactor::Dense(_))
    }

    pub fn solve(&self, coords: &Coordinates, rhs: &[BlockRhs]) -> ReducedSolution {
        let mut b = DVector::zeros(self.dim());
        for (i, r) in rhs.iter().enumerate() {
            for (a, &g) in coords.local[i].iter().enumerate() {
                b[g] -= r.r[a];
            }
            b.rows_mut(self.offsets[i], r.r_primal.len())
                .copy_from(&r.r_primal);
        }
        let sol = match &self.factor {
            KktFactor::Dense(f) => f.solve(&b),
            KktFactor::Sparse(f) => f.solve(&b),
        };
        let dx = sol.rows(0, self.nc).into_owned();
        let dv = (0..rhs.len())
            .map(|i| -sol.rows(self.offsets[i], self.offsets[i + 1] - self.offsets[i]))
            .collect();
        ReducedSolution { dx, dv }
    }
}

/// Triplets of the KKT matrix and an ordering for pivot-free `LDLᵀ`:
/// coordinates in minimum-degree order, each multiplier right after the
/// last coordinate it touches.
fn sparse_kkt(
    coords: &Coordinates,
    blocks: &[BlockKkt],
    offsets: &[usize],
) -> Result<(Vec<(usize, usize, f64)>, Vec<usize>)> {
    let nc = coords.len();
    let mut triplets = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (i, b) in blocks.iter().enumerate() {
        let loc = &coords.local[i];
        for (a, &ga) in loc.iter().enumerate() {
            for (c, &gc) in loc.iter().enumerate().take(a + 1) {
                triplets.push((ga, gc, b.hessian[(a, c)]));
                if a != c {
                    adj[ga].push(gc);
                    adj[gc].push(ga);
                }
            }
        }
        for j in 0..b.q.nrows() {
            for (a, &ga) in loc.iter().enumerate() {
                let v = b.q[(j, a)];
                if v != 0.0 {
                    triplets.push((offsets[i] + j, ga, v));
                }
            }
        }
    }
    for nb in &mut adj {
        nb.sort_unstable();
        nb.dedup();
    }
    let order = amd_order(&adj)?;
    let mut pos = vec![0usize; nc];
    for (new, &old) in order.iter().enumerate() {
        pos[old] = new;
    }
    // after[p]: multipliers placed right after coordinate position p.
    let mut after: Vec<Vec<usize>> = vec![Vec::new(); nc.max(1)];
    for (i, b) in blocks.iter().enumerate() {
        for j in 0..b.q.nrows() {
            let last = coords.local[i]
                .iter()
                .enumerate()
                .filter(|&(a, _)| b.q[(j, a)] != 0.0)
                .map(|(_, &g)| pos[g])
                .max()
                .ok_or_else(|| {
                    Error::Singular(format!(
                        "constraint {} of subproblem {} is zero",
                        j + 1,
                        i + 1
                    ))
                })?;
            after[last].push(offsets[i] + j);
        }
    }
    let mut perm = Vec::with_capacity(*offsets.last().unwrap());
    for (p, &c) in order.iter().enumerate() {
        perm.push(c);
        perm.extend_from_slice(&after[p]);
    }
    Ok((triplets, perm))
}

/// Solves the reduced problem with one global factorization.
pub fn solve_directions_central(
    coords: &Coordinates,
    blocks: &[BlockKkt],
    rhs: &[BlockRhs],
) -> Result<ReducedSolution> {
    Ok(CentralKkt::factor(coords, blocks, usize::MAX)?.solve(coords, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionKind {
    Predictor,
    Corrector,
}

/// Newton directions of one predictor or corrector step.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    pub kind: DirectionKind,
    /// `ΔX` entries at the global coordinates (off-diagonals unscaled).
    pub dx: DVector<f64>,
    pub dxbar: Vec<SymMatrix>,
    pub ds: Vec<SymMatrix>,
    pub dv: Vec<DVector<f64>>,
    /// svec form.
    pub dvbar: Vec<DVector<f64>>,
}

/// `Δv̄ⁱ = HⁱΔx̄ⁱ + rⁱ − 𝒬ⁱᵀΔvⁱ` for every block.
pub fn recover_consensus_duals(
    coords: &Coordinates,
    blocks: &[BlockKkt],
    rhs: &[BlockRhs],
    sol: &ReducedSolution,
) -> Vec<DVector<f64>> {
    (0..blocks.len())
        .map(|i| {
            let dxb = local_svec(&sol.dx, &coords.local[i]);
            &blocks[i].hessian * dxb + &rhs[i].r - blocks[i].q.tr_mul(&sol.dv[i])
        })
        .collect()
}

fn local_svec(dx: &DVector<f64>, loc: &[usize]) -> DVector<f64> {
    DVector::from_fn(loc.len(), |a, _| dx[loc[a]])
}

/// Everything an iteration knows about one block before the direction solve.
struct BlockStep {
    scaling: NtScaling,
    res: BlockResiduals,
}

/// Completes a reduced solution into a full direction set.
/// `shift[i]` is subtracted from `r_centⁱ` (the corrector's second-order term).
fn complete_directions(
    kind: DirectionKind,
    coords: &Coordinates,
    p: &CoupledSdp,
    steps: &[BlockStep],
    blocks: &[BlockKkt],
    rhs: &[BlockRhs],
    shift: Option<&[DVector<f64>]>,
    sol: ReducedSolution,
    parallel: bool,
) -> DirectionSet {
    let dx = DVector::from_fn(coords.len(), |k, _| {
        if coords.is_diagonal(k) {
            sol.dx[k]
        } else {
            sol.dx[k] / SQRT2
        }
    });
    let per_block = map_blocks(parallel, p.subproblems.len(), |i| {
        let dxb = local_svec(&sol.dx, &coords.local[i]);
        let st = &steps[i];
        let mut t = st.res.r_cent.clone();
        if let Some(h) = shift {
            t -= &h[i];
        }
        // F⁻¹(t − UΔx̄), with F⁻¹U taken as the same H used in the reduced system.
        let ds = st.scaling.f_solve(&t) - &blocks[i].hessian * &dxb;
        let nj = p.subproblems[i].order();
        let dvbar = &blocks[i].hessian * &dxb + &rhs[i].r - blocks[i].q.tr_mul(&sol.dv[i]);
        (
            SymMatrix::from_lower(smat_raw(nj, dxb.as_slice())).expect("square"),
            SymMatrix::from_lower(smat_raw(nj, ds.as_slice())).expect("square"),
            dvbar,
        )
    });
    let mut dxbar = Vec::with_capacity(per_block.len());
    let mut ds = Vec::with_capacity(per_block.len());
    let mut dvbar = Vec::with_capacity(per_block.len());
    for (a, b, c) in per_block {
        dxbar.push(a);
        ds.push(b);
        dvbar.push(c);
    }
    DirectionSet {
        kind,
        dx,
        dxbar,
        ds,
        dv: sol.dv,
        dvbar,
    }
}

/// Relative residuals of a direction set substituted into the full block
/// Newton system.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktCheck {
    /// Worst of the primal, dual and centering block rows.
    pub residual: f64,
    /// `‖Σᵢ(E⊗ₛE)ᵀΔv̄ⁱ‖`, relative.
    pub null_sum: f64,
}

fn check_directions(
    coords: &Coordinates,
    steps: &[BlockStep],
    blocks: &[BlockKkt],
    shift: Option<&[DVector<f64>]>,
    dirs: &DirectionSet,
) -> KktCheck {
    let mut worst = 0.0_f64;
    let mut null = DVector::<f64>::zeros(coords.len());
    let mut null_scale = 0.0_f64;
    let rel = |res: &DVector<f64>, terms: &[f64]| {
        res.norm() / (1.0 + terms.iter().fold(0.0, |a: f64, b| a.max(*b)))
    };
    for (i, st) in steps.iter().enumerate() {
        let q = &blocks[i].q;
        let dxb = svec_raw(dirs.dxbar[i].as_matrix());
        let dsv = svec_raw(dirs.ds[i].as_matrix());
        let qx = q * &dxb;
        worst = worst.max(rel(
            &(&qx - &st.res.r_primal),
            &[qx.norm(), st.res.r_primal.norm()],
        ));
        let qtv = q.tr_mul(&dirs.dv[i]);
        let ux = st.scaling.u() * &dxb;
        let fs = st.scaling.f() * &dsv;
        let mut target = st.res.r_cent.clone();
        if let Some(h) = shift {
            target -= &h[i];
        }
        // Δv̄ is formed from HΔx̄ and F⁻¹r_c, and ‖H‖ grows like 1/μ near the
        // solution; the normwise backward-error scale of this row is ‖H‖‖Δx̄‖.
        let hx = blocks[i].hessian.norm() * dxb.norm();
        let finv_t = st.scaling.f_solve(&target).norm();
        let dual = &qtv + &dirs.dvbar[i] + &dsv - &st.res.r_dual;
        worst = worst.max(rel(
            &dual,
            &[
                qtv.norm(),
                dirs.dvbar[i].norm(),
                dsv.norm(),
                st.res.r_dual.norm(),
                hx,
                finv_t,
            ],
        ));
        let scaled = [
            st.scaling.u().norm() * dxb.norm(),
            st.scaling.f().norm() * dsv.norm(),
            target.norm(),
        ];
        worst = worst.max(rel(&(&ux + &fs - &target), &scaled));
        for (a, &g) in coords.local[i].iter().enumerate() {
            null[g] += dirs.dvbar[i][a];
        }
        null_scale = null_scale.max(hx).max(qtv.norm()).max(dirs.dvbar[i].norm());
    }
    KktCheck {
        residual: worst,
        null_sum: null.norm() / (1.0 + null_scale),
    }
}

/// Step length `min(1, −τ/λ)` for a most-negative ratio eigenvalue `λ`.
pub fn step_from_ratio(lambda: f64, tau: f64) -> f64 {
    if lambda < 0.0 {
        (-tau / lambda).min(1.0)
    } else {
        1.0
    }
}

/// Per-block `(λ_min(X̄⁻¹ΔX̄), λ_min(S⁻¹ΔS))`.
pub fn block_ratios(state: &IterateState, dirs: &DirectionSet) -> Result<Vec<[f64; 2]>> {
    (0..state.xbar.len())
        .map(|i| {
            Ok([
                min_ratio_eig(&state.xbar[i], &dirs.dxbar[i])?,
                min_ratio_eig(&state.s[i], &dirs.ds[i])?,
            ])
        })
        .collect()
}

/// Primal and dual step sizes `(α_p, α_d)`.
pub fn step_sizes(state: &IterateState, dirs: &DirectionSet, tau: f64) -> Result<(f64, f64)> {
    let r = block_ratios(state, dirs)?;
    let lp = r.iter().map(|x| x[0]).fold(f64::INFINITY, f64::min);
    let ld = r.iter().map(|x| x[1]).fold(f64::INFINITY, f64::min);
    Ok((step_from_ratio(lp, tau), step_from_ratio(ld, tau)))
}

/// Per-block `((X̄+α_pΔX̄)•(S+α_dΔS), X̄•S)`.
pub fn block_sigma_parts(
    state: &IterateState,
    dirs: &DirectionSet,
    ap: f64,
    ad: f64,
) -> Vec<[f64; 2]> {
    (0..state.xbar.len())
        .map(|i| {
            let x = state.xbar[i].axpy(ap, &dirs.dxbar[i]);
            let s = state.s[i].axpy(ad, &dirs.ds[i]);
            [x.dot(&s), state.xbar[i].dot(&state.s[i])]
        })
        .collect()
}

/// `σ = (σ₁/σ₂)^a` clamped to `[0, 1]`; zero when `σ₂` vanishes.
pub fn sigma_from_parts(s1: f64, s2: f64, a: i32) -> f64 {
    if s2 <= 0.0 || !s2.is_finite() {
        return 0.0;
    }
    (s1 / s2).powi(a).clamp(0.0, 1.0)
}

pub fn sigma_update(state: &IterateState, pred: &DirectionSet, ap: f64, ad: f64, a: i32) -> f64 {
    let parts = block_sigma_parts(state, pred, ap, ad);
    let s1: f64 = parts.iter().map(|x| x[0]).sum();
    let s2: f64 = parts.iter().map(|x| x[1]).sum();
    sigma_from_parts(s1, s2, a)
}

/// Per-block termination data: `‖r_primal‖², ‖r_dual‖², X̄•S, ‖X̄‖_F,
/// max(‖S‖_F, ‖v‖)`.
pub fn block_termination(state: &IterateState, p: &CoupledSdp) -> Vec<[f64; 5]> {
    (0..p.subproblems.len())
        .map(|i| {
            let (rp, rd) = feasibility_residuals(state, p, i);
            [
                rp.norm_squared(),
                rd.norm_squared(),
                state.xbar[i].dot(&state.s[i]),
                state.xbar[i].frobenius_norm(),
                state.s[i].frobenius_norm().max(state.v[i].norm()),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Ok,
    Primal,
    Dual,
}

/// Flags iterates whose largest block norm exceeds `threshold`.
pub fn infeasibility_monitor(state: &IterateState, threshold: f64) -> Divergence {
    let primal = state
        .xbar
        .iter()
        .map(SymMatrix::frobenius_norm)
        .fold(0.0, f64::max);
    let dual = state
        .s
        .iter()
        .zip(&state.v)
        .map(|(s, v)| s.frobenius_norm().max(v.norm()))
        .fold(0.0, f64::max);
    divergence_of(primal, dual, threshold)
}

fn divergence_of(primal: f64, dual: f64, threshold: f64) -> Divergence {
    if !primal.is_finite() || primal > threshold {
        Divergence::Primal
    } else if !dual.is_finite() || dual > threshold {
        Divergence::Dual
    } else {
        Divergence::Ok
    }
}

/// Kinds of scalar reduction over the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    /// `(λ̲_p, λ̲_d)`, combined by minimum.
    StepSize,
    /// `(σ₁, σ₂)`, combined by sum.
    Sigma,
    /// `(r_p, r_d, μ-partial, primal norm, dual norm)`: sums, then maxima.
    Termination,
}

impl ScalarKind {
    pub fn arity(self) -> usize {
        match self {
            ScalarKind::StepSize | ScalarKind::Sigma => 2,
            ScalarKind::Termination => 5,
        }
    }

    pub fn identity(self) -> Vec<f64> {
        match self {
            ScalarKind::StepSize => vec![f64::INFINITY; 2],
            ScalarKind::Sigma => vec![0.0; 2],
            ScalarKind::Termination => vec![0.0; 5],
        }
    }

    pub fn combine(self, acc: &mut [f64], x: &[f64]) {
        match self {
            ScalarKind::StepSize => {
                for (a, b) in acc.iter_mut().zip(x) {
                    *a = a.min(*b);
                }
            }
            ScalarKind::Sigma => {
                for (a, b) in acc.iter_mut().zip(x) {
                    *a += b;
                }
            }
            ScalarKind::Termination => {
                for k in 0..3 {
                    acc[k] += x[k];
                }
                for k in 3..5 {
                    acc[k] = acc[k].max(x[k]);
                }
            }
        }
    }
}

/// Computational engine for the per-iteration global operations.
pub trait Backend {
    /// Factors the reduced problem for the current iteration.
    fn prepare(&mut self, coords: &Coordinates, blocks: &[BlockKkt]) -> Result<()>;
    /// Solves the prepared reduced problem for one right-hand side.
    fn solve(&mut self, coords: &Coordinates, rhs: &[BlockRhs]) -> Result<ReducedSolution>;
    /// Reduces per-subproblem values to one global value.
    fn reduce(&mut self, kind: ScalarKind, local: &[Vec<f64>]) -> Vec<f64>;
    /// Counters accumulated since the last call; resets them.
    fn take_ledger(&mut self) -> LedgerEntry;
}

/// One global factorization per iteration; reductions in subproblem order.
pub struct CentralBackend {
    dense_limit: usize,
    kkt: Option<CentralKkt>,
    ledger: LedgerEntry,
}

impl CentralBackend {
    pub fn new(dense_limit: usize) -> Self {
        CentralBackend {
            dense_limit,
            kkt: None,
            ledger: LedgerEntry::default(),
        }
    }
}

impl Backend for CentralBackend {
    fn prepare(&mut self, coords: &Coordinates, blocks: &[BlockKkt]) -> Result<()> {
        self.kkt = Some(CentralKkt::factor(coords, blocks, self.dense_limit)?);
        self.ledger.factorizations += 1;
        Ok(())
    }

    fn solve(&mut self, coords: &Coordinates, rhs: &[BlockRhs]) -> Result<ReducedSolution> {
        let kkt = self.kkt.as_ref().ok_or_else(|| {
            Error::Singular("reduced system solved before it was factored".into())
        })?;
        self.ledger.passes += 1;
        Ok(kkt.solve(coords, rhs))
    }

    fn reduce(&mut self, kind: ScalarKind, local: &[Vec<f64>]) -> Vec<f64> {
        self.ledger.passes += 1;
        let mut acc = kind.identity();
        for x in local {
            kind.combine(&mut acc, x);
        }
        acc
    }

    fn take_ledger(&mut self) -> LedgerEntry {
        std::mem::take(&mut self.ledger)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIters,
    DivergingPrimal,
    DivergingDual,
    NumericalFailure,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::MaxIters => "max-iters",
            Status::DivergingPrimal => "diverging-primal",
            Status::DivergingDual => "diverging-dual",
            Status::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub mu: f64,
    pub r_primal_sq: f64,
    pub r_dual_sq: f64,
    pub alpha_p: f64,
    pub alpha_d: f64,
    pub sigma: f64,
    pub ledger: LedgerEntry,
    /// Worst relative Newton-system residual over both direction sets.
    pub kkt_residual: f64,
    /// Relative null-sum of the direction `Δv̄`.
    pub direction_null_sum: f64,
    /// Relative null-sum of the iterate `v̄`.
    pub iterate_null_sum: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub state: IterateState,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub r_primal_sq: f64,
    pub r_dual_sq: f64,
    pub trace: Vec<IterationRecord>,
    /// Explanation for non-optimal outcomes.
    pub message: Option<String>,
}

/// Solves a coupled SDP. In distributed mode the clique tree and the
/// assignment default to those of the problem's index graph.
pub fn pdipm_solve(
    p: &CoupledSdp,
    cfg: &SolverConfig,
    tree: Option<(&CliqueTree, &Assignment)>,
) -> Result<Solution> {
    match cfg.mode {
        Mode::Central => solve_with_backend(p, cfg, &mut CentralBackend::new(cfg.dense_limit)),
        Mode::Distributed => {
            let owned;
            let (t, a) = match tree {
                Some(x) => x,
                None => {
                    owned = crate::model::tree_for(p)?;
                    (&owned.0, &owned.1)
                }
            };
            let mut net = Network::new(p, t, a)?;
            solve_with_backend(p, cfg, &mut net)
        }
    }
}

fn map_blocks<T: Send>(parallel: bool, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn to_rows<const K: usize>(v: Vec<[f64; K]>) -> Vec<Vec<f64>> {
    v.into_iter().map(|x| x.to_vec()).collect()
}

/// Runs the predictor-corrector iteration on an arbitrary backend.
pub fn solve_with_backend<B: Backend>(
    p: &CoupledSdp,
    cfg: &SolverConfig,
    backend: &mut B,
) -> Result<Solution> {
    solve_observed(p, cfg, backend, &mut |_| {})
}

/// As [`solve_with_backend`], calling `observe` with every iterate
/// (including the starting point).
pub fn solve_observed<B: Backend>(
    p: &CoupledSdp,
    cfg: &SolverConfig,
    backend: &mut B,
    observe: &mut dyn FnMut(&IterateState),
) -> Result<Solution> {
    cfg.check()?;
    let report = p.validate();
    if !report.is_ok() {
        return Err(Error::Malformed(report.to_string()));
    }
    if let Some(sp) = p
        .subproblems
        .iter()
        .find(|s| s.order() > cfg.max_block_order)
    {
        return Err(Error::InvalidDimension(format!(
            "subproblem of order {} exceeds the block limit {} (Hessian of {} entries)",
            sp.order(),
            cfg.max_block_order,
            svec_dim(sp.order()).pow(2)
        )));
    }
    let coords = p.coordinates();
    let qmats: Vec<DMatrix<f64>> = p.subproblems.iter().map(|s| s.q_matrix()).collect();
    let total = total_order(p) as f64;
    let mut state = IterateState::initial(p, &coords, cfg.seed);
    observe(&state);
    let mut trace = Vec::new();

    let term0 = block_termination(&state, p);
    let mut term = ScalarKind::Termination.identity();
    for t in &term0 {
        ScalarKind::Termination.combine(&mut term, t);
    }
    let mut status = Status::MaxIters;
    let mut message = None;

    let finish = |state: IterateState, status, message, trace, term: &[f64]| {
        let x = state.global_x();
        let v: Vec<Vec<f64>> = state
            .v
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        Solution {
            status,
            iterations: state.k,
            primal_objective: p.objective(&x),
            dual_objective: p.dual_objective(&v),
            r_primal_sq: term[0],
            r_dual_sq: term[1],
            state,
            trace,
            message,
        }
    };

    loop {
        if term[0] <= cfg.feas_tol && term[1] <= cfg.feas_tol && state.mu <= cfg.tol {
            status = Status::Optimal;
            break;
        }
        match divergence_of(term[3], term[4], cfg.divergence_threshold) {
            Divergence::Primal => {
                status = Status::DivergingPrimal;
                message = Some(format!(
                    "primal iterates exceeded {:e}",
                    cfg.divergence_threshold
                ));
                break;
            }
            Divergence::Dual => {
                status = Status::DivergingDual;
                message = Some(format!(
                    "dual iterates exceeded {:e}",
                    cfg.divergence_threshold
                ));
                break;
            }
            Divergence::Ok => {}
        }
        if state.k >= cfg.max_iters {
            message = Some(format!(
                "no convergence within {} iterations",
                cfg.max_iters
            ));
            break;
        }
        match iterate(p, cfg, &coords, &qmats, total, &mut state, backend) {
            Ok((rec, t)) => {
                term = t;
                trace.push(rec);
                observe(&state);
            }
            Err(e @ (Error::NotPositiveDefinite(_) | Error::Singular(_))) => {
                status = Status::NumericalFailure;
                message = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(finish(state, status, message, trace, &term))
}

fn iterate<B: Backend>(
    p: &CoupledSdp,
    cfg: &SolverConfig,
    coords: &Coordinates,
    qmats: &[DMatrix<f64>],
    total: f64,
    state: &mut IterateState,
    backend: &mut B,
) -> Result<(IterationRecord, Vec<f64>)> {
    let nb = p.subproblems.len();
    let st: &IterateState = state;
    let steps: Vec<BlockStep> = map_blocks(cfg.parallel, nb, |i| {
        let scaling = NtScaling::new(&st.xbar[i], &st.s[i])?;
        let res = block_residuals(st, p, i, 0.0, &scaling);
        Ok(BlockStep { scaling, res })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let blocks: Vec<BlockKkt> = steps
        .iter()
        .zip(qmats)
        .map(|(s, q)| BlockKkt {
            hessian: s.scaling.hessian().clone(),
            q: q.clone(),
        })
        .collect();

    // Predictor.
    backend.prepare(coords, &blocks)?;
    let rhs_pred: Vec<BlockRhs> = steps
        .iter()
        .map(|s| BlockRhs {
            r: &s.res.r_dual - s.scaling.f_solve(&s.res.r_cent),
            r_primal: s.res.r_primal.clone(),
        })
        .collect();
    let sol = backend.solve(coords, &rhs_pred)?;
    let pred = complete_directions(
        DirectionKind::Predictor,
        coords,
        p,
        &steps,
        &blocks,
        &rhs_pred,
        None,
        sol,
        cfg.parallel,
    );
    let check_pred = check_directions(coords, &steps, &blocks, None, &pred);
    let lam = backend.reduce(ScalarKind::StepSize, &to_rows(block_ratios(state, &pred)?));
    let (ap, ad) = (
        step_from_ratio(lam[0], cfg.tau),
        step_from_ratio(lam[1], cfg.tau),
    );
    let sig = backend.reduce(
        ScalarKind::Sigma,
        &to_rows(block_sigma_parts(state, &pred, ap, ad)),
    );
    let sigma = sigma_from_parts(sig[0], sig[1], cfg.sigma_exp);

    // Corrector: same factorization, new right-hand side.
    let delta = sigma * state.mu;
    let shift: Vec<DVector<f64>> = map_blocks(cfg.parallel, nb, |i| {
        let m = pred.dxbar[i].as_matrix() * pred.ds[i].as_matrix();
        svec_raw(steps[i].scaling.hd(&m).as_matrix())
    });
    let steps: Vec<BlockStep> = steps
        .into_iter()
        .map(|mut s| {
            let mut k = 0;
            let nj = crate::symcone::order_from_dim(s.res.r_cent.len()).unwrap();
            for c in 0..nj {
                s.res.r_cent[k] += delta;
                k += nj - c;
            }
            s
        })
        .collect();
    let rhs_corr: Vec<BlockRhs> = steps
        .iter()
        .zip(&shift)
        .map(|(s, h)| BlockRhs {
            r: &s.res.r_dual - s.scaling.f_solve(&(&s.res.r_cent - h)),
            r_primal: s.res.r_primal.clone(),
        })
        .collect();
    let sol = backend.solve(coords, &rhs_corr)?;
    let corr = complete_directions(
        DirectionKind::Corrector,
        coords,
        p,
        &steps,
        &blocks,
        &rhs_corr,
        Some(&shift),
        sol,
        cfg.parallel,
    );
    let check_corr = check_directions(coords, &steps, &blocks, Some(&shift), &corr);
    let lam = backend.reduce(ScalarKind::StepSize, &to_rows(block_ratios(state, &corr)?));
    let (ap, ad) = (
        step_from_ratio(lam[0], cfg.tau),
        step_from_ratio(lam[1], cfg.tau),
    );

    // Update; X̄ⁱ is re-gathered from X so consensus holds exactly.
    state.x.axpy(ap, &corr.dx, 1.0);
    state.xbar = gather_blocks(&state.x, p, coords);
    for i in 0..nb {
        state.s[i] = state.s[i].axpy(ad, &corr.ds[i]);
        state.v[i].axpy(ad, &corr.dv[i], 1.0);
        state.vbar[i].axpy(ad, &corr.dvbar[i], 1.0);
    }
    state.k += 1;

    let term = backend.reduce(
        ScalarKind::Termination,
        &to_rows(block_termination(state, p)),
    );
    state.mu = term[2] / total;
    if !state.mu.is_finite() {
        return Err(Error::Singular("non-finite duality gap".into()));
    }
    let rec = IterationRecord {
        iter: state.k,
        mu: state.mu,
        r_primal_sq: term[0],
        r_dual_sq: term[1],
        alpha_p: ap,
        alpha_d: ad,
        sigma,
        ledger: backend.take_ledger(),
        kkt_residual: check_pred.residual.max(check_corr.residual),
        direction_null_sum: check_pred.null_sum.max(check_corr.null_sum),
        iterate_null_sum: state.null_sum(coords),
    };
    Ok((rec, term))
}

/// Single-iteration hook used by tests and diagnostics: predictor and
/// corrector reduced problems of the first iteration from the standard
/// starting point.
pub fn first_iteration_systems(
    p: &CoupledSdp,
    seed: u64,
) -> Result<(Coordinates, Vec<BlockKkt>, Vec<BlockRhs>)> {
    let coords = p.coordinates();
    let state = IterateState::initial(p, &coords, seed);
    let mut blocks = Vec::new();
    let mut rhs = Vec::new();
    for (i, sp) in p.subproblems.iter().enumerate() {
        let sc = NtScaling::new(&state.xbar[i], &state.s[i])?;
        let res = block_residuals(&state, p, i, 0.0, &sc);
        rhs.push(BlockRhs {
            r: &res.r_dual - sc.f_solve(&res.r_cent),
            r_primal: res.r_primal,
        });
        blocks.push(BlockKkt {
            hessian: sc.hessian().clone(),
            q: sp.q_matrix(),
        });
    }
    Ok((coords, blocks, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Subproblem;
    use crate::symcone::{skron, svec};

    fn sym(rows: &[Vec<f64>]) -> SymMatrix {
        SymMatrix::from_rows(rows).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(&(&a * a.transpose() + DMatrix::identity(n, n) * 0.5)).unwrap()
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(&a).unwrap()
    }

    /// Feasible coupled problem: constraints evaluated at a PD point, W
    /// chosen dual-feasible.
    fn random_problem(rng: &mut ChaCha8Rng, n: usize, sets: &[Vec<usize>], m: usize) -> CoupledSdp {
        let x0 = random_spd(rng, n);
        let subproblems = sets
            .iter()
            .map(|j| {
                let nj = j.len();
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

    fn chain_problem(seed: u64) -> CoupledSdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_problem(
            &mut rng,
            6,
            &[vec![0, 1, 2], vec![1, 2, 3], vec![3, 4], vec![2, 3, 5]],
            2,
        )
    }

    #[test]
    fn residuals_match_dense_formulas() {
        let p = chain_problem(1);
        let coords = p.coordinates();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut st = IterateState::initial(&p, &coords, 3);
        for i in 0..p.subproblems.len() {
            st.v[i] = DVector::from_fn(st.v[i].len(), |_, _| rng.random_range(-1.0..1.0));
            st.vbar[i] = DVector::from_fn(st.vbar[i].len(), |_, _| rng.random_range(-1.0..1.0));
        }
        let sc: Vec<NtScaling> = (0..4)
            .map(|i| NtScaling::new(&st.xbar[i], &st.s[i]).unwrap())
            .collect();
        let res = residuals(&st, &p, 0.3, &sc);
        for (i, sp) in p.subproblems.iter().enumerate() {
            let nj = sp.order();
            // Dense evaluation with explicit inverses.
            let d = sc[i].d();
            let d_inv = d.clone().try_inverse().unwrap();
            let xs = st.xbar[i].as_matrix() * st.s[i].as_matrix();
            let hd = (d * &xs * &d_inv + d_inv.transpose() * xs.transpose() * d.transpose()) * 0.5;
            let rc = DMatrix::identity(nj, nj) * 0.3 - hd;
            assert!((svec_raw(&rc) - &res[i].r_cent).amax() < 1e-13);
            let mut rd =
                sp.w.as_matrix() - st.s[i].as_matrix() - smat_raw(nj, st.vbar[i].as_slice());
            for (j, q) in sp.q.iter().enumerate() {
                rd -= q.as_matrix() * st.v[i][j];
                let rp = sp.b[j] - q.dot(&st.xbar[i]);
                assert!((rp - res[i].r_primal[j]).abs() < 1e-13);
            }
            assert!((svec_raw(&rd) - &res[i].r_dual).amax() < 1e-13);
        }
    }

    #[test]
    fn central_point_has_zero_centering_residual() {
        let x = SymMatrix::from_diagonal(&[2.0, 0.5]);
        let s = SymMatrix::from_diagonal(&[0.25, 1.0]);
        let sc = NtScaling::new(&x, &s).unwrap();
        let xs = x.as_matrix() * s.as_matrix();
        let rc = DMatrix::identity(2, 2) * 0.5 - sc.hd(&xs).into_matrix();
        assert!(rc.amax() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero_directions() {
        let p = chain_problem(2);
        let (coords, blocks, rhs) = first_iteration_systems(&p, 0).unwrap();
        let zero: Vec<BlockRhs> = rhs
            .iter()
            .map(|r| BlockRhs {
                r: DVector::zeros(r.r.len()),
                r_primal: DVector::zeros(r.r_primal.len()),
            })
            .collect();
        let sol = solve_directions_central(&coords, &blocks, &zero).unwrap();
        assert!(sol.dx.amax() == 0.0);
        assert!(sol.dv.iter().all(|v| v.amax() == 0.0));
        let dvbar = recover_consensus_duals(&coords, &blocks, &zero, &sol);
        assert!(dvbar.iter().all(|v| v.amax() == 0.0));
    }

    #[test]
    fn recovered_duals_sum_to_zero_and_satisfy_block_rows() {
        let p = chain_problem(3);
        let (coords, blocks, rhs) = first_iteration_systems(&p, 1).unwrap();
        let sol = solve_directions_central(&coords, &blocks, &rhs).unwrap();
        let dvbar = recover_consensus_duals(&coords, &blocks, &rhs, &sol);
        assert!(relative_null_sum(&dvbar, &coords) < 1e-9);
        for i in 0..blocks.len() {
            let dxb = local_svec(&sol.dx, &coords.local[i]);
            // First block row: −HΔx̄ + 𝒬ᵀΔv + Δv̄ = r.
            let row = -(&blocks[i].hessian * &dxb) + blocks[i].q.tr_mul(&sol.dv[i]) + &dvbar[i]
                - &rhs[i].r;
            assert!(row.amax() < 1e-10 * (1.0 + rhs[i].r.amax()));
            let prow = &blocks[i].q * &dxb - &rhs[i].r_primal;
            assert!(prow.amax() < 1e-10);
        }
    }

    #[test]
    fn sparse_and_dense_kkt_agree() {
        let p = chain_problem(4);
        let (coords, blocks, rhs) = first_iteration_systems(&p, 2).unwrap();
        let dense = CentralKkt::factor(&coords, &blocks, usize::MAX).unwrap();
        let sparse = CentralKkt::factor(&coords, &blocks, 0).unwrap();
        assert!(dense.is_dense() && !sparse.is_dense());
        let a = dense.solve(&coords, &rhs);
        let b = sparse.solve(&coords, &rhs);
        assert!(a.relative_difference(&b) < 1e-11);
    }

    /// Single-block NT direction from the unreduced three-row system
    /// `[0 A 0; Aᵀ 0 I; 0 U F]`, solved by dense LU.
    #[test]
    fn single_block_matches_unreduced_newton_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 4, &[vec![0, 1, 2, 3]], 3);
        let coords = p.coordinates();
        let st = IterateState::initial(&p, &coords, 7);
        let sc = NtScaling::new(&st.xbar[0], &st.s[0]).unwrap();
        let res = block_residuals(&st, &p, 0, 0.0, &sc);
        let a = p.subproblems[0].q_matrix();
        let (m, d) = (a.nrows(), a.ncols());
        let mut k = DMatrix::zeros(m + 2 * d, m + 2 * d);
        k.view_mut((0, m), (m, d)).copy_from(&a);
        k.view_mut((m, 0), (d, m)).copy_from(&a.transpose());
        k.view_mut((m, m + d), (d, d))
            .copy_from(&DMatrix::identity(d, d));
        let dm = sc.d();
        let gt = sc.g().transpose();
        let u = skron(dm, &(&gt * st.s[0].as_matrix())).unwrap();
        let f = skron(&(dm * st.xbar[0].as_matrix()), &gt).unwrap();
        k.view_mut((m + d, m), (d, d)).copy_from(&u);
        k.view_mut((m + d, m + d), (d, d)).copy_from(&f);
        let mut b = DVector::zeros(m + 2 * d);
        b.rows_mut(0, m).copy_from(&res.r_primal);
        b.rows_mut(m, d).copy_from(&res.r_dual);
        b.rows_mut(m + d, d).copy_from(&res.r_cent);
        let z = k.lu().solve(&b).unwrap();

        let blocks = vec![BlockKkt {
            hessian: sc.hessian().clone(),
            q: a,
        }];
        let rhs = vec![BlockRhs {
            r: &res.r_dual - sc.f_solve(&res.r_cent),
            r_primal: res.r_primal.clone(),
        }];
        let sol = solve_directions_central(&coords, &blocks, &rhs).unwrap();
        let dv_ref = z.rows(0, m);
        let dx_ref = z.rows(m, d);
        assert!((&sol.dv[0] - dv_ref).amax() < 1e-11 * (1.0 + dv_ref.amax()));
        assert!((&sol.dx - dx_ref).amax() < 1e-11 * (1.0 + dx_ref.amax()));
    }

    #[test]
    fn step_size_examples() {
        let x = sym(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let s = SymMatrix::identity(2);
        let mut st = IterateState {
            n: 2,
            pairs: vec![],
            x: DVector::zeros(0),
            xbar: vec![x.clone()],
            s: vec![s.clone()],
            v: vec![DVector::zeros(0)],
            vbar: vec![DVector::zeros(3)],
            k: 0,
            mu: 1.0,
        };
        let dirs = DirectionSet {
            kind: DirectionKind::Predictor,
            dx: DVector::zeros(0),
            dxbar: vec![x.scale(-1.0)],
            ds: vec![SymMatrix::from_diagonal(&[0.5, 0.1])],
            dv: vec![DVector::zeros(0)],
            dvbar: vec![DVector::zeros(3)],
        };
        let (ap, ad) = step_sizes(&st, &dirs, 0.98).unwrap();
        assert!((ap - 0.98).abs() < 1e-14);
        assert_eq!(ad, 1.0);

        // Boundary probe: steps stay interior, a slightly longer one does not.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            st.xbar[0] = random_spd(&mut rng, 2);
            let dir = random_sym(&mut rng, 2).scale(10.0);
            let dirs = DirectionSet {
                dxbar: vec![dir.clone()],
                ..dirs.clone()
            };
            let (ap, _) = step_sizes(&st, &dirs, 0.98).unwrap();
            assert!(st.xbar[0].axpy(ap, &dir).is_positive_definite());
            if ap < 1.0 {
                assert!(!st.xbar[0]
                    .axpy(ap / (0.98 * 0.999_999), &dir)
                    .is_positive_definite());
            }
        }
    }

    #[test]
    fn sigma_examples() {
        let p = chain_problem(5);
        let coords = p.coordinates();
        let st = IterateState::initial(&p, &coords, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dirs = DirectionSet {
            kind: DirectionKind::Predictor,
            dx: DVector::zeros(coords.len()),
            dxbar: p
                .subproblems
                .iter()
                .map(|s| random_sym(&mut rng, s.order()).scale(0.1))
                .collect(),
            ds: p
                .subproblems
                .iter()
                .map(|s| random_sym(&mut rng, s.order()).scale(0.1))
                .collect(),
            dv: vec![],
            dvbar: vec![],
        };
        assert_eq!(sigma_update(&st, &dirs, 0.0, 0.0, 1), 1.0);
        let s1 = sigma_update(&st, &dirs, 0.7, 0.4, 1);
        let s2 = sigma_update(&st, &dirs, 0.7, 0.4, 2);
        assert!((s2 - s1 * s1).abs() < 1e-15);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..p.subproblems.len() {
            let x = st.xbar[i].as_matrix() + dirs.dxbar[i].as_matrix() * 0.7;
            let s = st.s[i].as_matrix() + dirs.ds[i].as_matrix() * 0.4;
            num += (x.transpose() * s).trace();
            den += (st.xbar[i].as_matrix() * st.s[i].as_matrix()).trace();
        }
        assert!((s1 - (num / den).clamp(0.0, 1.0)).abs() < 1e-13);
        assert_eq!(sigma_from_parts(1.0, 0.0, 1), 0.0);
        assert_eq!(sigma_from_parts(3.0, 1.0, 1), 1.0);
    }

    #[test]
    fn one_by_one_problem() {
        let p = CoupledSdp {
            n: 1,
            subproblems: vec![Subproblem {
                j: vec![0],
                w: SymMatrix::identity(1),
                q: vec![SymMatrix::identity(1)],
                b: vec![1.0],
            }],
        };
        let sol = pdipm_solve(&p, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.state.x[0] - 1.0).abs() < 1e-8);
        assert!(sol.state.mu <= 1e-9);
        assert!((sol.primal_objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn solves_coupled_problem_with_exact_diagnostics() {
        for seed in 0..4 {
            let p = chain_problem(10 + seed);
            let sol = pdipm_solve(&p, &SolverConfig::default(), None).unwrap();
            assert_eq!(
                sol.status,
                Status::Optimal,
                "seed {seed}: {:?}",
                sol.message
            );
            let coords = p.coordinates();
            assert_eq!(sol.state.consensus_error(&p, &coords), 0.0);
            for r in &sol.trace {
                assert!(r.kkt_residual < 1e-9, "{r:?}");
                assert!(r.direction_null_sum < 1e-9, "{r:?}");
                assert!(r.iterate_null_sum < 1e-8, "{r:?}");
                assert_eq!(r.ledger.passes, 6);
                assert_eq!(r.ledger.factorizations, 1);
            }
            // Strong duality at the solution.
            let gap = (sol.primal_objective - sol.dual_objective).abs();
            assert!(gap < 1e-6 * (1.0 + sol.primal_objective.abs()), "gap {gap}");
            assert!(sol.state.xbar.iter().all(SymMatrix::is_positive_definite));
        }
    }

    fn iterate_distance(a: &IterateState, b: &IterateState) -> f64 {
        let mut num = (&a.x - &b.x).norm_squared();
        let mut den = a.x.norm_squared();
        for i in 0..a.s.len() {
            num += (a.s[i].as_matrix() - b.s[i].as_matrix()).norm_squared();
            num += (&a.v[i] - &b.v[i]).norm_squared();
            den += a.s[i].as_matrix().norm_squared() + a.v[i].norm_squared();
        }
        (num / den).sqrt()
    }

    #[test]
    fn distributed_mode_reproduces_central_iterates() {
        for seed in 0..3 {
            let p = chain_problem(40 + seed);
            let cfg = SolverConfig::default();
            let mut c_states = Vec::new();
            let c = solve_observed(&p, &cfg, &mut CentralBackend::new(1200), &mut |s| {
                c_states.push(s.clone())
            })
            .unwrap();
            let (t, a) = crate::model::tree_for(&p).unwrap();
            let mut net = Network::new(&p, &t, &a).unwrap();
            let mut d_states = Vec::new();
            let d = solve_observed(&p, &cfg, &mut net, &mut |s| d_states.push(s.clone())).unwrap();
            assert_eq!(c.status, d.status);
            assert_eq!(c_states.len(), d_states.len());
            assert!(
                (c.primal_objective - d.primal_objective).abs()
                    <= 1e-8 * c.primal_objective.abs().max(1.0)
            );
            for (a, b) in c_states.iter().zip(&d_states) {
                // Near the solution the reduced system's conditioning grows like
                // 1/μ and the two elimination orders part at roundoff level.
                if a.mu >= 1e-8 {
                    assert!(iterate_distance(a, b) < 1e-8, "seed {seed} iter {}", a.k);
                }
            }
            for r in &d.trace {
                assert_eq!(r.ledger.passes, 6);
                assert_eq!(r.ledger.factorizations, t.len());
                assert_eq!(r.ledger.messages, 6 * 2 * (t.len() - 1));
            }
        }
    }

    #[test]
    fn matches_single_block_formulation() {
        // A coupled problem and its merged single-block equivalent share
        // their optimal value.
        let p = chain_problem(21);
        let sol = pdipm_solve(&p, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        let x = sol.state.global_x();
        for sp in &p.subproblems {
            let xb = x.principal(&sp.j);
            assert!(xb.min_eigenvalue() > -1e-9);
            for (q, b) in sp.q.iter().zip(&sp.b) {
                assert!((q.dot(&xb) - b).abs() < 1e-4);
            }
        }
        let _ = svec(&x);
    }

    #[test]
    fn infeasible_problem_diverges() {
        // I • X = −1 with X ⪰ 0 has no solution; the dual is unbounded.
        let p = CoupledSdp {
            n: 2,
            subproblems: vec![Subproblem {
                j: vec![0, 1],
                w: SymMatrix::identity(2),
                q: vec![SymMatrix::identity(2)],
                b: vec![-1.0],
            }],
        };
        let sol = pdipm_solve(&p, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.status, Status::DivergingDual, "{:?}", sol.message);
    }

    #[test]
    fn monitor_examples() {
        let p = chain_problem(6);
        let coords = p.coordinates();
        let mut st = IterateState::initial(&p, &coords, 0);
        assert_eq!(infeasibility_monitor(&st, 1e8), Divergence::Ok);
        assert_eq!(infeasibility_monitor(&st, f64::INFINITY), Divergence::Ok);
        st.s[1] = st.s[1].scale(1e9);
        assert_eq!(infeasibility_monitor(&st, 1e8), Divergence::Dual);
        st.xbar[0] = st.xbar[0].scale(1e9);
        assert_eq!(infeasibility_monitor(&st, 1e8), Divergence::Primal);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.check().is_ok());
        c.tau = 1.0;
        assert!(c.check().is_err());
        c.tau = 0.5;
        c.sigma_exp = 4;
        assert!(c.check().is_err());
    }
}
