//! IQC robustness analysis of interconnected uncertain systems at gridded
//! frequencies.
//!
//! Each subsystem `i` is given by its frequency response
//!
//! ```text
//! pⁱ = G_pq qⁱ + G_pw wⁱ,   zⁱ = G_zq qⁱ + G_zw wⁱ,   qⁱ = Δⁱ(pⁱ),
//! ```
//!
//! and the subsystems are wired by a 0–1 matrix `Γ` with `w = Γz`. Every
//! uncertainty channel is a scalar gain in `[−1, 1]`, described by the
//! multiplier `diag(r, −r)` with `r ≥ 0`. A certificate is a set of channel
//! weights `r` and a positive diagonal `X` (one entry per interconnection
//! input) making
//!
//! ```text
//! [G_pq G_pw; I 0]* Π̄ [G_pq G_pw; I 0] − [−ΓG_zq  I−ΓG_zw]* X [−ΓG_zq  I−ΓG_zw]
//! ```
//!
//! negative definite (with margin `ε`) at every grid frequency. This is a
//! sufficient condition for robust stability only.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{pdipm_solve, Solution, SolverConfig, Status};
use crate::model::{domain_space_decompose, Decomposition, SparseInequalitySdp, Term};
use crate::symcone::SymMatrix;

pub type CMatrix = DMatrix<Complex64>;

/// Default strict-feasibility margin folded into the LMI.
pub const DEFAULT_MARGIN: f64 = 1e-6;

/// Frequency response of one subsystem at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemFR {
    pub gpq: CMatrix,
    pub gpw: CMatrix,
    pub gzq: CMatrix,
    pub gzw: CMatrix,
}

impl SubsystemFR {
    /// Uncertainty channels.
    pub fn d(&self) -> usize {
        self.gpq.nrows()
    }

    /// Interconnection inputs.
    pub fn m(&self) -> usize {
        self.gpw.ncols()
    }

    /// Interconnection outputs.
    pub fn l(&self) -> usize {
        self.gzq.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let (d, m, l) = (self.d(), self.m(), self.l());
        let ok = self.gpq.shape() == (d, d)
            && self.gpw.shape() == (d, m)
            && self.gzq.shape() == (l, d)
            && self.gzw.shape() == (l, m);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDimension(format!(
                "blocks G_pq {:?}, G_pw {:?}, G_zq {:?}, G_zw {:?} are inconsistent",
                self.gpq.shape(),
                self.gpw.shape(),
                self.gzq.shape(),
                self.gzw.shape()
            )))
        }
    }
}

/// `N` subsystems, their responses at each grid frequency, and `Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterconnectedSystem {
    pub frequencies: Vec<f64>,
    /// `responses[f][i]`: subsystem `i` at frequency `f`.
    pub responses: Vec<Vec<SubsystemFR>>,
    /// Nonzero entries `(row, col)` of `Γ`: input `row` of the stacked `w`
    /// is driven by output `col` of the stacked `z`.
    pub gamma: Vec<(usize, usize)>,
    pub seed: Option<u64>,
}

impl InterconnectedSystem {
    pub fn len(&self) -> usize {
        self.responses.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subsystems(&self) -> &[SubsystemFR] {
        &self.responses[0]
    }

    /// `(Σd, Σm, Σl)`.
    pub fn totals(&self) -> (usize, usize, usize) {
        self.subsystems()
            .iter()
            .fold((0, 0, 0), |(d, m, l), s| (d + s.d(), m + s.m(), l + s.l()))
    }

    /// Offsets of each subsystem's `w` within the stacked `w`.
    pub fn w_offsets(&self) -> Vec<usize> {
        offsets(self.subsystems().iter().map(SubsystemFR::m))
    }

    /// Offsets of each subsystem's `z` within the stacked `z`.
    pub fn z_offsets(&self) -> Vec<usize> {
        offsets(self.subsystems().iter().map(SubsystemFR::l))
    }

    /// Dense `Γ`.
    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        let (_, m, l) = self.totals();
        let mut g = DMatrix::zeros(m, l);
        for &(r, c) in &self.gamma {
            g[(r, c)] = 1.0;
        }
        g
    }

    pub fn check(&self) -> Result<()> {
        if self.responses.is_empty() || self.responses.len() != self.frequencies.len() {
            return Err(Error::InvalidDimension(format!(
                "{} response sets for {} frequencies",
                self.responses.len(),
                self.frequencies.len()
            )));
        }
        if self.is_empty() {
            return Err(Error::InvalidDimension("system has no subsystems".into()));
        }
        for (f, set) in self.responses.iter().enumerate() {
            if set.len() != self.len() {
                return Err(Error::InvalidDimension(format!(
                    "frequency {} has {} subsystems, expected {}",
                    f + 1,
                    set.len(),
                    self.len()
                )));
            }
            for (i, (s, s0)) in set.iter().zip(self.subsystems()).enumerate() {
                s.check().map_err(|e| {
                    Error::InvalidDimension(format!(
                        "subsystem {} at frequency {}: {e}",
                        i + 1,
                        f + 1
                    ))
                })?;
                if (s.d(), s.m(), s.l()) != (s0.d(), s0.m(), s0.l()) {
                    return Err(Error::InvalidDimension(format!(
                        "subsystem {} changes dimensions across frequencies",
                        i + 1
                    )));
                }
            }
        }
        let (_, m, l) = self.totals();
        let mut seen = std::collections::HashSet::new();
        for &(r, c) in &self.gamma {
            if r >= m || c >= l {
                return Err(Error::InvalidDimension(format!(
                    "Γ entry ({}, {}) outside {m}×{l}",
                    r + 1,
                    c + 1
                )));
            }
            if !seen.insert((r, c)) {
                return Err(Error::Malformed(format!(
                    "duplicate Γ entry ({}, {})",
                    r + 1,
                    c + 1
                )));
            }
        }
        Ok(())
    }

    /// Stacked block-diagonal `G_zw` at frequency `f`.
    fn stacked(&self, f: usize, pick: impl Fn(&SubsystemFR) -> &CMatrix) -> CMatrix {
        let blocks: Vec<&CMatrix> = self.responses[f].iter().map(pick).collect();
        block_diag(&blocks)
    }

    /// `√(‖Γ‖₁‖Γ‖∞)`, an upper bound on the spectral norm of `Γ`.
    pub fn gamma_norm_bound(&self) -> f64 {
        let (_, m, l) = self.totals();
        let mut rows = vec![0usize; m];
        let mut cols = vec![0usize; l];
        for &(r, c) in &self.gamma {
            rows[r] += 1;
            cols[c] += 1;
        }
        let r = rows.into_iter().max().unwrap_or(0) as f64;
        let c = cols.into_iter().max().unwrap_or(0) as f64;
        (r * c).sqrt()
    }

    fn gamma_c(&self) -> CMatrix {
        self.gamma_matrix().map(|x| Complex64::new(x, 0.0))
    }

    /// Spectral radius of `ΓG_zw` at frequency `f` (nominal stability proxy:
    /// below one).
    pub fn loop_spectral_radius(&self, f: usize) -> f64 {
        let g = self.gamma_c() * self.stacked(f, |s| &s.gzw);
        spectral_radius(&g)
    }

    /// Nominal map from `q` to `p` with the loop closed,
    /// `G_pq + G_pw (I − ΓG_zw)⁻¹ Γ G_zq`.
    pub fn closed_loop(&self, f: usize) -> Result<CMatrix> {
        let gam = self.gamma_c();
        let (_, m, _) = self.totals();
        let lhs = CMatrix::identity(m, m) - &gam * self.stacked(f, |s| &s.gzw);
        let rhs = &gam * self.stacked(f, |s| &s.gzq);
        let sol = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("I − ΓG_zw is singular".into()))?;
        Ok(self.stacked(f, |s| &s.gpq) + self.stacked(f, |s| &s.gpw) * sol)
    }
}

fn offsets(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut acc = 0;
    for s in sizes {
        out.push(acc);
        acc += s;
    }
    out
}

fn block_diag(blocks: &[&CMatrix]) -> CMatrix {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut m = CMatrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        m.view_mut((i, j), b.shape()).copy_from(b);
        i += b.nrows();
        j += b.ncols();
    }
    m
}

fn spectral_radius(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .schur()
        .eigenvalues()
        .map(|e| e.iter().map(|z| z.norm()).fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY)
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn hermitian_max_eigenvalue(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigenvalues().max()
}

/// What a standard-form variable stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierVar {
    /// Weight of uncertainty channel `channel` of subsystem `subsystem`.
    R { subsystem: usize, channel: usize },
    /// Diagonal entry of `X` for stacked interconnection input `input`.
    X { input: usize },
}

/// Variable layout of the multiplier class: one `r` per uncertainty
/// channel, one diagonal `X` entry per interconnection input.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierStructure {
    pub vars: Vec<MultiplierVar>,
}

impl MultiplierStructure {
    pub fn scalar_gain(sys: &InterconnectedSystem) -> Self {
        let mut vars = Vec::new();
        for (i, s) in sys.subsystems().iter().enumerate() {
            for c in 0..s.d() {
                vars.push(MultiplierVar::R {
                    subsystem: i,
                    channel: c,
                });
            }
        }
        let (_, m, _) = sys.totals();
        vars.extend((0..m).map(|k| MultiplierVar::X { input: k }));
        MultiplierStructure { vars }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// One Hermitian term `y_k E_Jᵀ Q E_J` of a complex LMI.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTerm {
    pub j: Vec<usize>,
    pub mat: CMatrix,
}

/// `Σ y_k Q̄ᵏ + εI ⪯ 0`, all `y_k ≥ 0`.
///
/// Indices are grouped by subsystem: `(qⁱ, wⁱ)` for `i = 1, …, N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLmi {
    pub order: usize,
    pub terms: Vec<ComplexTerm>,
    pub margin: f64,
    pub vars: Vec<MultiplierVar>,
}

impl ComplexLmi {
    pub fn variable_count(&self) -> usize {
        self.terms.len()
    }

    /// `Σ y_k Q̄ᵏ` (without the margin).
    pub fn value(&self, y: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(self.order, self.order);
        for (t, &yk) in self.terms.iter().zip(y) {
            for (a, &ga) in t.j.iter().enumerate() {
                for (b, &gb) in t.j.iter().enumerate() {
                    m[(ga, gb)] += t.mat[(a, b)] * yk;
                }
            }
        }
        m
    }
}

/// Position of `(q, w)` of each subsystem in the LMI ordering.
fn lmi_offsets(subs: &[SubsystemFR]) -> Vec<usize> {
    offsets(subs.iter().map(|s| s.d() + s.m()))
}

/// Builds the standard-form LMI at grid frequency `f`.
pub fn assemble_lmi(
    sys: &InterconnectedSystem,
    mult: &MultiplierStructure,
    f: usize,
    margin: f64,
) -> Result<ComplexLmi> {
    sys.check()?;
    if !(margin > 0.0) {
        return Err(Error::Malformed(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let subs = &sys.responses[f];
    let base = lmi_offsets(subs);
    let order = base.last().map_or(0, |&b| b) + subs.last().map_or(0, |s| s.d() + s.m());
    // Stacked input/output index → (subsystem, local index).
    let w_owner = owners(subs.iter().map(SubsystemFR::m));
    let z_owner = owners(subs.iter().map(SubsystemFR::l));
    let mut drivers: Vec<Vec<usize>> = vec![Vec::new(); w_owner.len()];
    for &(r, c) in &sys.gamma {
        drivers[r].push(c);
    }

    let one = Complex64::new(1.0, 0.0);
    let mut terms = Vec::with_capacity(mult.len());
    for var in &mult.vars {
        match *var {
            MultiplierVar::R {
                subsystem: i,
                channel: c,
            } => {
                let s = subs.get(i).ok_or_else(|| {
                    Error::InvalidDimension(format!("multiplier refers to subsystem {}", i + 1))
                })?;
                if c >= s.d() {
                    return Err(Error::InvalidDimension(format!(
                        "subsystem {} has no channel {}",
                        i + 1,
                        c + 1
                    )));
                }
                let n = s.d() + s.m();
                // pᶜ = row c of [G_pq G_pw]; the channel contributes |pᶜ|² − |qᶜ|².
                let mut p = CMatrix::zeros(1, n);
                p.view_mut((0, 0), (1, s.d())).copy_from(&s.gpq.row(c));
                p.view_mut((0, s.d()), (1, s.m())).copy_from(&s.gpw.row(c));
                let mut mat = p.adjoint() * p;
                mat[(c, c)] -= one;
                terms.push(ComplexTerm {
                    j: (base[i]..base[i] + n).collect(),
                    mat,
                });
            }
            MultiplierVar::X { input: k } => {
                let &(i, kl) = w_owner.get(k).ok_or_else(|| {
                    Error::InvalidDimension(format!("multiplier refers to input {}", k + 1))
                })?;
                // Row k of [−ΓG_zq, I − ΓG_zw] as a sparse row.
                let mut row: std::collections::BTreeMap<usize, Complex64> = Default::default();
                *row.entry(base[i] + subs[i].d() + kl).or_default() += one;
                for &zc in &drivers[k] {
                    let (j, zl) = z_owner[zc];
                    let sj = &subs[j];
                    for a in 0..sj.d() {
                        *row.entry(base[j] + a).or_default() -= sj.gzq[(zl, a)];
                    }
                    for a in 0..sj.m() {
                        *row.entry(base[j] + sj.d() + a).or_default() -= sj.gzw[(zl, a)];
                    }
                }
                let j: Vec<usize> = row.keys().copied().collect();
                let v = CMatrix::from_iterator(1, j.len(), row.values().copied());
                terms.push(ComplexTerm {
                    j,
                    mat: -(v.adjoint() * v),
                });
            }
        }
    }
    Ok(ComplexLmi {
        order,
        terms,
        margin,
        vars: mult.vars.clone(),
    })
}

fn owners(sizes: impl Iterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, s) in sizes.enumerate() {
        out.extend((0..s).map(|a| (i, a)));
    }
    out
}

/// Directly evaluates the analysis expression for multipliers `y` (laid out
/// as in `mult`) at frequency `f`, in the stacked `(q, w)` ordering.
///
/// Both congruences are accumulated row by row: row `c` of
/// `[G_pq G_pw]` contributes `r_c·pᶜ*pᶜ` (and `−r_c` at `q_c`), row `k` of
/// `[−ΓG_zq  I−ΓG_zw]` contributes `−x_k·ℓᵏ*ℓᵏ`.
pub fn analysis_expression(
    sys: &InterconnectedSystem,
    mult: &MultiplierStructure,
    f: usize,
    y: &[f64],
) -> CMatrix {
    let subs = &sys.responses[f];
    let (d, m, _) = sys.totals();
    let d_off = offsets(subs.iter().map(SubsystemFR::d));
    let w_off = sys.w_offsets();
    let z_owner = owners(subs.iter().map(SubsystemFR::l));
    let mut r = vec![0.0; d];
    let mut x = vec![0.0; m];
    for (var, &v) in mult.vars.iter().zip(y) {
        match *var {
            MultiplierVar::R { subsystem, channel } => r[d_off[subsystem] + channel] = v,
            MultiplierVar::X { input } => x[input] = v,
        }
    }
    let n = d + m;
    let mut out = CMatrix::zeros(n, n);
    let mut add_outer = |row: &[(usize, Complex64)], a: f64| {
        for &(i, u) in row {
            for &(j, v) in row {
                out[(i, j)] += u.conj() * v * a;
            }
        }
    };
    for (i, s) in subs.iter().enumerate() {
        for c in 0..s.d() {
            let mut row: Vec<(usize, Complex64)> =
                (0..s.d()).map(|a| (d_off[i] + a, s.gpq[(c, a)])).collect();
            row.extend((0..s.m()).map(|a| (d + w_off[i] + a, s.gpw[(c, a)])));
            add_outer(&row, r[d_off[i] + c]);
        }
    }
    let mut rows: Vec<Vec<(usize, Complex64)>> = (0..m)
        .map(|k| vec![(d + k, Complex64::new(1.0, 0.0))])
        .collect();
    for &(k, zc) in &sys.gamma {
        let (j, zl) = z_owner[zc];
        let s = &subs[j];
        rows[k].extend((0..s.d()).map(|a| (d_off[j] + a, -s.gzq[(zl, a)])));
        rows[k].extend((0..s.m()).map(|a| (d + w_off[j] + a, -s.gzw[(zl, a)])));
    }
    for (k, row) in rows.iter().enumerate() {
        add_outer(row, -x[k]);
    }
    for (k, &rk) in r.iter().enumerate() {
        out[(k, k)] -= Complex64::new(rk, 0.0);
    }
    out
}

/// Permutation from the LMI ordering (grouped by subsystem) to the stacked
/// `(q, w)` ordering: `perm[lmi] = stacked`.
pub fn lmi_to_stacked(sys: &InterconnectedSystem) -> Vec<usize> {
    let subs = sys.subsystems();
    let (d_tot, _, _) = sys.totals();
    let d_off = offsets(subs.iter().map(SubsystemFR::d));
    let w_off = sys.w_offsets();
    let mut perm = Vec::new();
    for (i, s) in subs.iter().enumerate() {
        perm.extend((0..s.d()).map(|a| d_off[i] + a));
        perm.extend((0..s.m()).map(|a| d_tot + w_off[i] + a));
    }
    perm
}

/// Real embedding `H ↦ [Re −Im; Im Re]` of a Hermitian LMI: complex index
/// `a` becomes real indices `a` and `order + a`. The margin becomes `εI` of
/// doubled order and every variable is sign constrained.
pub fn realify(lmi: &ComplexLmi) -> Result<SparseInequalitySdp> {
    let n = lmi.order;
    let mut terms = Vec::with_capacity(lmi.terms.len());
    for (k, t) in lmi.terms.iter().enumerate() {
        let herm_err = (&t.mat - t.mat.adjoint()).camax();
        if herm_err > 1e-12 * t.mat.camax().max(1.0) {
            return Err(Error::Malformed(format!(
                "term {} is not Hermitian (deviation {herm_err:e})",
                k + 1
            )));
        }
        terms.push(Term {
            j: t.j
                .iter()
                .copied()
                .chain(t.j.iter().map(|a| a + n))
                .collect(),
            mat: SymMatrix::symmetrize(&realify_matrix(&t.mat))?,
        });
    }
    let constants = (0..2 * n)
        .map(|a| Term {
            j: vec![a],
            mat: SymMatrix::from_diagonal(&[lmi.margin]),
        })
        .collect();
    Ok(SparseInequalitySdp {
        n: 2 * n,
        c: vec![0.0; terms.len()],
        nonneg: vec![true; terms.len()],
        terms,
        constants,
    })
}

/// `[Re −Im; Im Re]`.
pub fn realify_matrix(h: &CMatrix) -> DMatrix<f64> {
    let (r, c) = h.shape();
    let mut m = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = h[(i, j)];
            m[(i, j)] = z.re;
            m[(r + i, c + j)] = z.re;
            m[(i, c + j)] = -z.im;
            m[(r + i, j)] = z.im;
        }
    }
    m
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        Complex64::new(a, b) / 2f64.sqrt()
    })
}

fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.singular_values().max()
    }
}

/// Draws the subsystem responses for a given wiring.
///
/// All blocks are complex Gaussian. Then `G_pq` is scaled per subsystem to
/// spectral norm at most 0.5, `G_zw` uniformly so that `‖ΓG_zw‖ ≤ 0.5` (hence
/// `ρ(ΓG_zw) ≤ 0.5`), and `G_pw`, `G_zq` uniformly so that the closed-loop
/// map from `q` to `p` has norm at most 0.9. The last step makes uniform `r` with `X = I` a valid
/// certificate, so generated instances are always feasible.
fn draw_system(
    dims: &[(usize, usize, usize)],
    gamma: Vec<(usize, usize)>,
    seed: u64,
    frequencies: &[f64],
) -> Result<InterconnectedSystem> {
    let mut responses = Vec::with_capacity(frequencies.len());
    for f in 0..frequencies.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(f as u64);
        let subs: Vec<SubsystemFR> = dims
            .iter()
            .map(|&(d, m, l)| {
                let mut gpq = gaussian(&mut rng, d, d);
                let n = spectral_norm(&gpq);
                if n > 0.5 {
                    gpq *= Complex64::new(0.5 / n, 0.0);
                }
                SubsystemFR {
                    gpq,
                    gpw: gaussian(&mut rng, d, m),
                    gzq: gaussian(&mut rng, l, d),
                    gzw: gaussian(&mut rng, l, m),
                }
            })
            .collect();
        responses.push(subs);
    }
    let mut sys = InterconnectedSystem {
        frequencies: frequencies.to_vec(),
        responses,
        gamma,
        seed: Some(seed),
    };
    sys.check()?;
    // Blockwise bounds keep this linear in N: ‖ΓG_zw‖ ≤ ‖Γ‖·maxᵢ‖G_zwⁱ‖ and
    // ‖G_pw(I − ΓG_zw)⁻¹ΓG_zq‖ ≤ maxᵢ‖G_pwⁱ‖ · 2 · ‖Γ‖ · maxᵢ‖G_zqⁱ‖ once the
    // loop gain is at most one half.
    let gamma_norm = sys.gamma_norm_bound();
    for f in 0..frequencies.len() {
        let max_norm = |subs: &[SubsystemFR], pick: &dyn Fn(&SubsystemFR) -> &CMatrix| {
            subs.iter()
                .map(|s| spectral_norm(pick(s)))
                .fold(0.0, f64::max)
        };
        let loop_gain = gamma_norm * max_norm(&sys.responses[f], &|s| &s.gzw);
        if loop_gain > 0.5 {
            let s = Complex64::new(0.5 / loop_gain, 0.0);
            for sub in &mut sys.responses[f] {
                sub.gzw *= s;
            }
        }
        let coupling = 2.0
            * gamma_norm
            * max_norm(&sys.responses[f], &|s| &s.gpw)
            * max_norm(&sys.responses[f], &|s| &s.gzq);
        if coupling > 0.4 {
            let s = Complex64::new((0.4 / coupling).sqrt(), 0.0);
            for sub in &mut sys.responses[f] {
                sub.gpw *= s;
                sub.gzq *= s;
            }
        }
    }
    Ok(sys)
}

/// Chain of `n` subsystems with one uncertainty channel each. Interior
/// subsystems have two interconnection inputs and outputs (left, right), the
/// ends one.
pub fn gen_chain(n: usize, seed: u64, frequencies: &[f64]) -> Result<InterconnectedSystem> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "a chain needs at least 2 subsystems, got {n}"
        )));
    }
    if frequencies.is_empty() {
        return Err(Error::InvalidDimension("no frequencies given".into()));
    }
    let io = |i: usize| if i == 0 || i == n - 1 { 1 } else { 2 };
    let dims: Vec<(usize, usize, usize)> = (0..n).map(|i| (1, io(i), io(i))).collect();
    let off = offsets((0..n).map(io));
    // Local port towards the left / right neighbour.
    let left = |_i: usize| 0;
    let right = |i: usize| if i == 0 { 0 } else { 1 };
    let mut gamma = Vec::new();
    for i in 1..n {
        // wⁱ (left port) ← z^{i−1} (right port), and vice versa.
        gamma.push((off[i] + left(i), off[i - 1] + right(i - 1)));
        gamma.push((off[i - 1] + right(i - 1), off[i] + left(i)));
    }
    gamma.sort_unstable();
    draw_system(&dims, gamma, seed, frequencies)
}

/// Preferential-attachment network: subsystem `t` links to `attach`
/// distinct earlier subsystems drawn proportionally to degree, skipping any
/// whose degree has reached `max_degree`. Every link is bidirectional and
/// gets its own interconnection input and output at both ends; every
/// subsystem has one uncertainty channel.
pub fn gen_scalefree(
    n: usize,
    seed: u64,
    frequencies: &[f64],
    attach: usize,
    max_degree: usize,
) -> Result<InterconnectedSystem> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "need at least 2 subsystems, got {n}"
        )));
    }
    if attach == 0 || max_degree < attach + 1 {
        return Err(Error::Malformed(format!(
            "attachment {attach} with degree cap {max_degree} is not usable"
        )));
    }
    if frequencies.is_empty() {
        return Err(Error::InvalidDimension("no frequencies given".into()));
    }
    let edges = preferential_attachment(n, attach, max_degree, seed);
    let mut ports: Vec<usize> = vec![0; n];
    // (a, port at a, b, port at b)
    let mut links = Vec::with_capacity(edges.len());
    for &(a, b) in &edges {
        links.push((a, ports[a], b, ports[b]));
        ports[a] += 1;
        ports[b] += 1;
    }
    let dims: Vec<(usize, usize, usize)> = ports.iter().map(|&p| (1, p, p)).collect();
    let off = offsets(ports.iter().copied());
    let mut gamma = Vec::new();
    for &(a, pa, b, pb) in &links {
        gamma.push((off[a] + pa, off[b] + pb));
        gamma.push((off[b] + pb, off[a] + pa));
    }
    gamma.sort_unstable();
    draw_system(&dims, gamma, seed, frequencies)
}

/// Undirected edge list of a capped preferential-attachment graph.
pub fn preferential_attachment(
    n: usize,
    attach: usize,
    max_degree: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ca1_ef4e_e000);
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    for t in 1..n {
        let mut chosen: Vec<usize> = Vec::new();
        let want = attach.min(t);
        while chosen.len() < want {
            let pool: Vec<usize> = (0..t)
                .filter(|&u| degree[u] < max_degree && !chosen.contains(&u))
                .collect();
            let Ok(&u) = pool.choose_weighted(&mut rng, |&u| degree[u] as f64 + 1.0) else {
                break;
            };
            chosen.push(u);
        }
        for u in chosen {
            degree[u] += 1;
            degree[t] += 1;
            edges.push((u, t));
        }
    }
    edges
}

/// The real inequality-form SDP analysed at grid frequency `f`, with the
/// scalar-gain multiplier structure.
pub fn frequency_problem(
    sys: &InterconnectedSystem,
    f: usize,
    margin: f64,
) -> Result<SparseInequalitySdp> {
    let mult = MultiplierStructure::scalar_gain(sys);
    realify(&assemble_lmi(sys, &mult, f, margin)?)
}

/// Result of analysing one grid frequency.
#[derive(Debug, Clone)]
pub struct FrequencyAnalysis {
    pub omega: f64,
    /// Standard-form variables and order of the complex LMI.
    pub variables: usize,
    pub order: usize,
    pub cliques: usize,
    pub max_clique: usize,
    pub tree_height: usize,
    pub fill_percent: f64,
    pub solution: Solution,
    /// Multipliers recovered from the solver, in `MultiplierStructure` order.
    pub y: Vec<f64>,
    pub check: CertificateCheck,
}

/// Independent evaluation of a candidate certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    /// Largest eigenvalue of the analysis expression.
    pub max_eigenvalue: f64,
    pub min_r: f64,
    pub min_x: f64,
    pub margin: f64,
}

impl CertificateCheck {
    pub fn holds(&self) -> bool {
        self.max_eigenvalue <= -self.margin / 2.0 && self.min_r >= 0.0 && self.min_x > 0.0
    }
}

/// Verdict over the whole frequency grid. Finding a multiplier is a
/// sufficient condition for robust stability at the gridded frequencies;
/// not finding one proves nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    FeasibleMultiplier,
    NoCertificate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::FeasibleMultiplier => {
                "feasible-multiplier (sufficient condition at gridded frequencies)"
            }
            Verdict::NoCertificate => {
                "no-certificate (sufficient condition not established at gridded frequencies)"
            }
        })
    }
}

/// Checks `y` against the analysis expression at frequency `f`.
pub fn check_certificate(
    sys: &InterconnectedSystem,
    mult: &MultiplierStructure,
    f: usize,
    y: &[f64],
    margin: f64,
) -> CertificateCheck {
    let mut min_r = f64::INFINITY;
    let mut min_x = f64::INFINITY;
    for (var, &v) in mult.vars.iter().zip(y) {
        match var {
            MultiplierVar::R { .. } => min_r = min_r.min(v),
            MultiplierVar::X { .. } => min_x = min_x.min(v),
        }
    }
    let ok_len = y.len() == mult.len() && y.iter().all(|v| v.is_finite());
    CertificateCheck {
        max_eigenvalue: if ok_len {
            hermitian_max_eigenvalue(&analysis_expression(sys, mult, f, y))
        } else {
            f64::INFINITY
        },
        min_r,
        min_x,
        margin,
    }
}

/// Assemble, realify, decompose and solve at grid frequency `f`.
pub fn analyze_frequency(
    sys: &InterconnectedSystem,
    f: usize,
    cfg: &SolverConfig,
    margin: f64,
) -> Result<FrequencyAnalysis> {
    let mult = MultiplierStructure::scalar_gain(sys);
    let lmi = assemble_lmi(sys, &mult, f, margin)?;
    let real = realify(&lmi)?;
    let dec: Decomposition = domain_space_decompose(&real)?;
    let solution = pdipm_solve(&dec.problem, cfg, Some((&dec.tree, &dec.assignment)))?;
    let v: Vec<Vec<f64>> = solution
        .state
        .v
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    let y = dec.recover_y(&v);
    let check = check_certificate(sys, &mult, f, &y, margin);
    // Clique sizes are reported without the private sign slacks.
    let n_lmi = real.n;
    Ok(FrequencyAnalysis {
        omega: sys.frequencies[f],
        variables: lmi.variable_count(),
        order: lmi.order,
        cliques: dec.tree.len(),
        max_clique: dec
            .tree
            .cliques
            .iter()
            .map(|c| c.iter().filter(|&&v| v < n_lmi).count())
            .max()
            .unwrap_or(0),
        tree_height: dec.tree.height,
        fill_percent: dec.fill_percent,
        solution,
        y,
        check,
    })
}

/// Verdict over all analysed frequencies: a certificate must have been
/// found and verified at every one.
pub fn robustness_verdict(results: &[FrequencyAnalysis]) -> Verdict {
    if !results.is_empty() && results.iter().all(|r| r.check.holds()) {
        Verdict::FeasibleMultiplier
    } else {
        Verdict::NoCertificate
    }
}

/// Analyses every grid frequency independently.
pub fn analyze(
    sys: &InterconnectedSystem,
    cfg: &SolverConfig,
    margin: f64,
) -> Result<Vec<FrequencyAnalysis>> {
    let nf = sys.frequencies.len();
    if cfg.parallel {
        // Frequencies are independent; results come back in grid order.
        (0..nf)
            .into_par_iter()
            .map(|f| analyze_frequency(sys, f, cfg, margin))
            .collect()
    } else {
        (0..nf)
            .map(|f| analyze_frequency(sys, f, cfg, margin))
            .collect()
    }
}

/// Status of a frequency's solve, for reporting.
pub fn solved(r: &FrequencyAnalysis) -> bool {
    r.solution.status == Status::Optimal
}
