//! Symmetric indefinite solvers used for saddle-point (KKT) systems.
//!
//! [`BunchKaufman`] is a dense LDLᵀ with symmetric 1×1 / 2×2 pivoting.
//! [`SparseLdl`] factors a sparse symmetric matrix under a fixed ordering
//! without pivoting, which is adequate for KKT matrices `[H Bᵀ; B 0]` with
//! `H ≻ 0` when every multiplier is ordered after the coordinates it touches.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};

const BK_ALPHA: f64 = 0.640_388_203_202_208_4; // (1 + √17) / 8

#[derive(Debug, Clone)]
enum Pivot {
    One(f64),
    Two(Matrix2<f64>),
}

/// Dense symmetric-indefinite factorization `P A Pᵀ = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct BunchKaufman {
    n: usize,
    perm: Vec<usize>,
    l: DMatrix<f64>,
    lt: DMatrix<f64>,
    pivots: Vec<(usize, Pivot)>,
}

impl BunchKaufman {
    /// Factors a symmetric matrix; only the lower triangle is read.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidDimension(format!(
                "expected square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut w = a.clone();
        crate::symcone::mirror_lower(&mut w);
        let scale = w.amax().max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = DMatrix::<f64>::identity(n, n);
        let mut pivots = Vec::new();

        let swap = |w: &mut DMatrix<f64>,
                    l: &mut DMatrix<f64>,
                    perm: &mut Vec<usize>,
                    k: usize,
                    p: usize,
                    i: usize| {
            if i == p {
                return;
            }
            w.swap_rows(i, p);
            w.swap_columns(i, p);
            perm.swap(i, p);
            for c in 0..k {
                let t = l[(i, c)];
                l[(i, c)] = l[(p, c)];
                l[(p, c)] = t;
            }
        };

        let mut k = 0;
        while k < n {
            let absakk = w[(k, k)].abs();
            let (mut r, mut colmax) = (k, 0.0);
            for i in k + 1..n {
                if w[(i, k)].abs() > colmax {
                    colmax = w[(i, k)].abs();
                    r = i;
                }
            }
            if absakk.max(colmax) <= 1e-300 * scale {
                return Err(Error::Singular(format!("zero pivot at step {k}")));
            }
            let two = if absakk >= BK_ALPHA * colmax {
                false
            } else {
                let mut rowmax = 0.0_f64;
                for j in k..n {
                    if j != r {
                        rowmax = rowmax.max(w[(r, j)].abs());
                    }
                }
                if absakk >= BK_ALPHA * colmax * (colmax / rowmax) {
                    false
                } else if w[(r, r)].abs() >= BK_ALPHA * rowmax {
                    swap(&mut w, &mut l, &mut perm, k, r, k);
                    false
                } else {
                    swap(&mut w, &mut l, &mut perm, k, r, k + 1);
                    true
                }
            };

            if !two {
                let d = w[(k, k)];
                let m = n - k - 1;
                if m > 0 {
                    let col: DVector<f64> = w.view((k + 1, k), (m, 1)).column(0).into_owned();
                    let lcol = &col / d;
                    w.view_mut((k + 1, k + 1), (m, m))
                        .ger(-1.0, &lcol, &col, 1.0);
                    l.view_mut((k + 1, k), (m, 1)).copy_from(&lcol);
                }
                pivots.push((k, Pivot::One(d)));
                k += 1;
            } else {
                let e = Matrix2::new(w[(k, k)], w[(k, k + 1)], w[(k + 1, k)], w[(k + 1, k + 1)]);
                let e_inv = e
                    .try_inverse()
                    .ok_or_else(|| Error::Singular(format!("singular 2x2 pivot at step {k}")))?;
                let m = n - k - 2;
                if m > 0 {
                    let c: DMatrix<f64> = w.view((k + 2, k), (m, 2)).into_owned();
                    let lc = &c * e_inv;
                    let upd = &lc * c.transpose();
                    let mut sub = w.view_mut((k + 2, k + 2), (m, m));
                    sub -= upd;
                    l.view_mut((k + 2, k), (m, 2)).copy_from(&lc);
                }
                pivots.push((k, Pivot::Two(e)));
                k += 2;
            }
        }
        let lt = l.transpose();
        Ok(BunchKaufman {
            n,
            perm,
            l,
            lt,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of negative eigenvalues of the factored matrix.
    pub fn negative_inertia(&self) -> usize {
        self.pivots
            .iter()
            .map(|(_, p)| match p {
                Pivot::One(d) => usize::from(*d < 0.0),
                Pivot::Two(e) => {
                    if e.determinant() < 0.0 {
                        1
                    } else if e.trace() < 0.0 {
                        2
                    } else {
                        0
                    }
                }
            })
            .sum()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut y = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        self.l.solve_lower_triangular_with_diag_mut(&mut y, 1.0);
        for (k, p) in &self.pivots {
            match p {
                Pivot::One(d) => y[*k] /= d,
                Pivot::Two(e) => {
                    let v = e
                        .lu()
                        .solve(&nalgebra::Vector2::new(y[*k], y[*k + 1]))
                        .unwrap();
                    y[*k] = v[0];
                    y[*k + 1] = v[1];
                }
            }
        }
        self.lt.solve_upper_triangular_mut(&mut y);
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

/// Approximate-minimum-degree ordering of a symmetric pattern given as
/// adjacency lists. Returns `perm` with `perm[new] = old`.
pub fn amd_order(adj: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = adj.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a_p = Vec::with_capacity(n + 1);
    let mut a_i = Vec::new();
    a_p.push(0usize);
    for (j, nb) in adj.iter().enumerate() {
        let mut col: Vec<usize> = nb.iter().copied().filter(|&i| i != j).collect();
        col.push(j);
        col.sort_unstable();
        col.dedup();
        a_i.extend(col);
        a_p.push(a_i.len());
    }
    let (p, _, _) = amd::order(n, &a_p, &a_i, &amd::Control::default())
        .map_err(|s| Error::Singular(format!("ordering failed: {s:?}")))?;
    Ok(p)
}

/// Sparse symmetric `L D Lᵀ` under a fixed ordering, no pivoting.
#[derive(Debug, Clone)]
pub struct SparseLdl {
    n: usize,
    perm: Vec<usize>,
    // Permuted upper triangle, kept for refinement.
    a_p: Vec<usize>,
    a_i: Vec<usize>,
    a_x: Vec<f64>,
    l_p: Vec<usize>,
    l_i: Vec<usize>,
    l_x: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
}

impl SparseLdl {
    /// Factors the symmetric matrix given by `(row, col, value)` triplets
    /// from either triangle (duplicates are summed; mirrored pairs must be
    /// supplied only once). `perm[new] = old`.
    pub fn factor(n: usize, triplets: &[(usize, usize, f64)], perm: &[usize]) -> Result<Self> {
        if perm.len() != n {
            return Err(Error::InvalidDimension(format!(
                "ordering has length {}, matrix has order {n}",
                perm.len()
            )));
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(Error::Malformed("ordering is not a permutation".into()));
            }
            inv[old] = new;
        }
        let mut upper: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len() + n);
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidDimension(format!(
                    "entry ({i},{j}) outside order {n}"
                )));
            }
            let (a, b) = (inv[i], inv[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            upper.push((c, r, v));
        }
        // Explicit diagonal so that no column is empty.
        for c in 0..n {
            upper.push((c, c, 0.0));
        }
        upper.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut a_p = vec![0usize; n + 1];
        let mut a_i = Vec::with_capacity(upper.len());
        let mut a_x: Vec<f64> = Vec::with_capacity(upper.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in upper {
            if last == Some((c, r)) {
                *a_x.last_mut().unwrap() += v;
            } else {
                a_i.push(r);
                a_x.push(v);
                a_p[c + 1] = a_i.len();
                last = Some((c, r));
            }
        }
        for c in 0..n {
            a_p[c + 1] = a_p[c + 1].max(a_p[c]);
        }

        let mut work = vec![0usize; 3 * n];
        let mut l_nz = vec![0usize; n];
        let mut etree = vec![None; n];
        let total = ldl::etree(n, &a_p, &a_i, &mut work, &mut l_nz, &mut etree)
            .map_err(|_| Error::Malformed("sparse pattern rejected".into()))?;
        let mut l_p = vec![0usize; n + 1];
        let mut l_i = vec![0usize; total];
        let mut l_x = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut d_inv = vec![0.0; n];
        let mut bwork = vec![ldl::Marker::Unused; n];
        let mut fwork = vec![0.0; n];
        ldl::factor(
            n, &a_p, &a_i, &a_x, &mut l_p, &mut l_i, &mut l_x, &mut d, &mut d_inv, &l_nz, &etree,
            &mut bwork, &mut work, &mut fwork,
        )
        .map_err(|k| Error::Singular(format!("zero pivot in sparse LDL at position {k}")))?;
        // A pivot is judged against its own column: saddle-point pivots are
        // legitimately many orders smaller than the largest entry.
        let scale = a_x
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut colmax = vec![0.0_f64; n];
        for c in 0..n {
            for k in a_p[c]..a_p[c + 1] {
                let v = a_x[k].abs();
                colmax[c] = colmax[c].max(v);
                colmax[a_i[k]] = colmax[a_i[k]].max(v);
            }
        }
        if let Some(k) = d
            .iter()
            .zip(&colmax)
            .position(|(x, &cm)| !x.is_finite() || x.abs() <= 1e-14 * cm * cm / scale)
        {
            return Err(Error::Singular(format!(
                "pivot {k} of sparse LDL is numerically zero"
            )));
        }
        Ok(SparseLdl {
            n,
            perm: perm.to_vec(),
            a_p,
            a_i,
            a_x,
            l_p,
            l_i,
            l_x,
            d,
            d_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn negative_inertia(&self) -> usize {
        self.d.iter().filter(|x| **x < 0.0).count()
    }

    fn solve_permuted(&self, y: &mut [f64]) {
        ldl::solve(self.n, &self.l_p, &self.l_i, &self.l_x, &self.d_inv, y);
    }

    fn matvec_permuted(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for c in 0..self.n {
            for k in self.a_p[c]..self.a_p[c + 1] {
                let r = self.a_i[k];
                let v = self.a_x[k];
                out[r] += v * x[c];
                if r != c {
                    out[c] += v * x[r];
                }
            }
        }
        out
    }

    /// Solves `A x = b` with two steps of iterative refinement.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let bp: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        let mut x = bp.clone();
        self.solve_permuted(&mut x);
        for _ in 0..2 {
            let ax = self.matvec_permuted(&x);
            let mut r: Vec<f64> = bp.iter().zip(&ax).map(|(b, a)| b - a).collect();
            self.solve_permuted(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
        let mut out = DVector::zeros(self.n);
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kkt(rng: &mut impl Rng, nh: usize, nb: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(nh, nh, |_, _| rng.random_range(-1.0..1.0));
        let h = &a * a.transpose() + DMatrix::identity(nh, nh);
        let b = DMatrix::from_fn(nb, nh, |_, _| rng.random_range(-1.0..1.0));
        let mut k = DMatrix::zeros(nh + nb, nh + nb);
        k.view_mut((0, 0), (nh, nh)).copy_from(&h);
        k.view_mut((nh, 0), (nb, nh)).copy_from(&b);
        k.view_mut((0, nh), (nh, nb)).copy_from(&b.transpose());
        k
    }

    #[test]
    fn bunch_kaufman_solves_indefinite_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(nh, nb) in &[(1, 0), (3, 1), (8, 3), (20, 7)] {
            let k = random_kkt(&mut rng, nh, nb);
            let x = DVector::from_fn(nh + nb, |_, _| rng.random_range(-1.0..1.0));
            let b = &k * &x;
            let f = BunchKaufman::new(&k).unwrap();
            assert!((f.solve(&b) - &x).norm() <= 1e-10 * x.norm());
            assert_eq!(f.negative_inertia(), nb);
        }
    }

    #[test]
    fn bunch_kaufman_needs_two_by_two_pivots() {
        // Zero diagonal forces a 2x2 block.
        let k = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
        let f = BunchKaufman::new(&k).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert!((f.solve(&(&k * &x)) - x).norm() <= 1e-12);
    }

    #[test]
    fn bunch_kaufman_reports_singular() {
        let k = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(BunchKaufman::new(&k), Err(Error::Singular(_))));
    }

    #[test]
    fn sparse_ldl_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (nh, nb) = (15, 4);
        let k = random_kkt(&mut rng, nh, nb);
        let n = nh + nb;
        let mut trip = Vec::new();
        for j in 0..n {
            for i in j..n {
                if k[(i, j)] != 0.0 {
                    trip.push((i, j, k[(i, j)]));
                }
            }
        }
        // Coordinates first, multipliers last.
        let perm: Vec<usize> = (0..n).collect();
        let f = SparseLdl::factor(n, &trip, &perm).unwrap();
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        assert!((f.solve(&(&k * &x)) - &x).norm() <= 1e-11 * x.norm());
        assert_eq!(f.negative_inertia(), nb);
    }

    #[test]
    fn amd_ordering_is_a_permutation() {
        // Arrow pattern: hub 0 should not be eliminated first.
        let n = 12;
        let mut adj = vec![Vec::new(); n];
        for i in 1..n {
            adj[0].push(i);
            adj[i].push(0);
        }
        let p = amd_order(&adj).unwrap();
        let mut s = p.clone();
        s.sort_unstable();
        assert_eq!(s, (0..n).collect::<Vec<_>>());
        assert_ne!(p[0], 0);
    }

    #[test]
    fn sparse_ldl_rejects_zero_pivot() {
        let trip = vec![(1, 0, 1.0)];
        assert!(matches!(
            SparseLdl::factor(2, &trip, &[0, 1]),
            Err(Error::Singular(_))
        ));
    }
}
