//! Sparse symmetric matrices and solvers.
//!
//! All systems here are symmetric positive definite after constraint
//! elimination.  The workhorse is diagonally preconditioned conjugate
//! gradients; when it stagnates (no residual improvement over a hundred
//! iterations, typical for near-singular void regions) the solve falls back
//! to a sparse Cholesky factorization with reverse Cuthill-McKee ordering.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.  Column indices are strictly ascending
/// within each row and duplicates have been summed.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets.  Duplicates are summed in
    /// their insertion order, so identical triplet streams give bitwise
    /// identical matrices.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(u32, u32, f64)>) -> CsrMatrix {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val = Vec::with_capacity(triplets.len());
        let mut prev: Option<(u32, u32)> = None;
        for &(r, c, v) in triplets.iter() {
            if prev == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                prev = Some((r, c));
            }
            row_ptr[r as usize + 1] = col.len();
        }
        // Rows with no entries inherit the previous offset.
        for r in 1..=n {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        CsrMatrix { n, row_ptr, col, val }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col[a..b], &self.val[a..b])
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let mut s = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                s += v * x[c as usize];
            }
            y[r] = s;
        }
    }

    pub fn mul_vec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            if let Ok(k) = cols.binary_search(&(r as u32)) {
                d[r] = vals[k];
            }
        }
        d
    }

    /// Largest relative asymmetry; zero for exactly symmetric matrices.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let scale = self.val.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let (tc, tv) = self.row(c as usize);
                let mirror = match tc.binary_search(&(r as u32)) {
                    Ok(k) => tv[k],
                    Err(_) => 0.0,
                };
                worst = worst.max((v - mirror).abs() / scale);
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

enum CgOutcome {
    Converged(Vec<f64>),
    Stagnated,
    Indefinite,
    CapExceeded,
}

/// Diagonally preconditioned conjugate gradients.
fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, guess: Option<&[f64]>) -> Result<CgOutcome> {
    let n = a.n();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome::Converged(vec![0.0; n]));
    }
    let diag = a.diagonal();
    let mut inv_diag = vec![0.0; n];
    for (i, &d) in diag.iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::Assembly(format!(
                "non-positive diagonal entry {d} at equation {i}; system is not positive definite"
            )));
        }
        inv_diag[i] = 1.0 / d;
    }

    let mut x = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        _ => vec![0.0; n],
    };
    let mut r = b.to_vec();
    if guess.is_some() {
        let ax = a.mul_vec_alloc(&x);
        for i in 0..n {
            r[i] -= ax[i];
        }
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let cap = 20 * n;
    let mut best_res = norm(&r);
    let mut since_best = 0usize;
    if best_res <= tol * b_norm {
        return Ok(CgOutcome::Converged(x));
    }
    for _iter in 0..cap {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Ok(CgOutcome::Indefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r);
        if res <= tol * b_norm {
            return Ok(CgOutcome::Converged(x));
        }
        if res < best_res {
            best_res = res;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 100 {
                return Ok(CgOutcome::Stagnated);
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgOutcome::CapExceeded)
}

/// Reverse Cuthill-McKee ordering; `perm[new] = old`.
fn rcm_order(a: &CsrMatrix) -> Vec<u32> {
    let n = a.n();
    let degree = |v: usize| a.row(v).0.len();

    // Pseudo-peripheral start: begin at a minimum-degree node and hop to
    // the farthest BFS level twice.
    let mut start = (0..n).min_by_key(|&v| (degree(v), v)).unwrap_or(0);
    let mut level = vec![u32::MAX; n];
    for _ in 0..2 {
        level.iter_mut().for_each(|l| *l = u32::MAX);
        let mut queue = std::collections::VecDeque::from([start]);
        level[start] = 0;
        let mut last = start;
        while let Some(v) = queue.pop_front() {
            last = v;
            let mut nbrs: Vec<usize> =
                a.row(v).0.iter().map(|&c| c as usize).filter(|&c| level[c] == u32::MAX).collect();
            nbrs.sort_by_key(|&c| (degree(c), c));
            for c in nbrs {
                if level[c] == u32::MAX {
                    level[c] = level[v] + 1;
                    queue.push_back(c);
                }
            }
        }
        start = last;
    }

    let mut visited = vec![false; n];
    let mut order: Vec<u32> = Vec::with_capacity(n);
    let mut cursor = 0usize;
    let mut next_seed = start;
    loop {
        if !visited[next_seed] {
            visited[next_seed] = true;
            order.push(next_seed as u32);
        }
        while cursor < order.len() {
            let v = order[cursor] as usize;
            cursor += 1;
            let mut nbrs: Vec<usize> =
                a.row(v).0.iter().map(|&c| c as usize).filter(|&c| !visited[c]).collect();
            nbrs.sort_by_key(|&c| (degree(c), c));
            for c in nbrs {
                if !visited[c] {
                    visited[c] = true;
                    order.push(c as u32);
                }
            }
        }
        if order.len() == n {
            break;
        }
        // Disconnected component: restart from the lowest unvisited node.
        next_seed = (0..n).find(|&v| !visited[v]).unwrap();
    }
    order.reverse();
    order
}

/// Sparse Cholesky factor L (row-compressed, strictly lower plus diagonal)
/// of P A Pᵀ for an RCM permutation P.
struct Cholesky {
    /// perm[new] = old.
    perm: Vec<u32>,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    diag: Vec<f64>,
}

impl Cholesky {
    /// Up-looking factorization.  Row patterns are discovered through the
    /// elimination tree, so fill-in is never scanned for, only produced.
    fn factor(a: &CsrMatrix) -> Result<Cholesky> {
        let n = a.n();
        let perm = rcm_order(a);
        let mut inv_perm = vec![0u32; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old as usize] = new as u32;
        }

        let mut row_ptr = vec![0usize; n + 1];
        let mut col: Vec<u32> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        let mut diag = vec![0.0f64; n];
        let mut parent = vec![u32::MAX; n];

        // Scatter workspace for the current row.
        let mut mark = vec![u32::MAX; n];
        let mut work = vec![0.0f64; n];
        let mut pattern: Vec<u32> = Vec::new();

        for i in 0..n {
            // Load row i of the permuted matrix (lower triangle only).
            pattern.clear();
            let old_row = perm[i] as usize;
            let (cols, vals) = a.row(old_row);
            let mut aii = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv_perm[c as usize] as usize;
                match j.cmp(&i) {
                    std::cmp::Ordering::Less => {
                        // Walk up the elimination tree to collect the full
                        // row pattern of L.
                        let mut t = j;
                        while mark[t] != i as u32 {
                            mark[t] = i as u32;
                            work[t] = 0.0;
                            pattern.push(t as u32);
                            if parent[t] == u32::MAX {
                                parent[t] = i as u32;
                            }
                            if parent[t] == i as u32 {
                                break;
                            }
                            t = parent[t] as usize;
                        }
                        work[j] += v;
                    }
                    std::cmp::Ordering::Equal => aii = v,
                    std::cmp::Ordering::Greater => {}
                }
            }
            pattern.sort_unstable();

            // work[j] currently holds A(i, j); turn it into L(i, j).
            let mut dii = aii;
            for &ju in &pattern {
                let j = ju as usize;
                let mut s = work[j];
                let (jc, jv) = {
                    let (a0, b0) = (row_ptr[j], row_ptr[j + 1]);
                    (&col[a0..b0], &val[a0..b0])
                };
                for (&k, &lv) in jc.iter().zip(jv) {
                    if mark[k as usize] == i as u32 && (k as usize) < j {
                        s -= lv * work[k as usize];
                    }
                }
                let lij = s / diag[j];
                work[j] = lij;
                dii -= lij * lij;
            }
            if dii <= 0.0 {
                return Err(Error::Assembly(format!(
                    "Cholesky pivot {dii:.3e} at equation {i}; system is not positive definite"
                )));
            }
            diag[i] = dii.sqrt();
            for &ju in &pattern {
                col.push(ju);
                val.push(work[ju as usize]);
            }
            row_ptr[i + 1] = col.len();
        }
        Ok(Cholesky { perm, row_ptr, col, val, diag })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        // Forward: L y = P b.
        let mut y = vec![0.0f64; n];
        for i in 0..n {
            let mut s = b[self.perm[i] as usize];
            let (a0, b0) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for k in a0..b0 {
                s -= self.val[k] * y[self.col[k] as usize];
            }
            y[i] = s / self.diag[i];
        }
        // Backward: Lᵀ z = y, scattering row entries.
        for i in (0..n).rev() {
            y[i] /= self.diag[i];
            let (a0, b0) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for k in a0..b0 {
                y[self.col[k] as usize] -= self.val[k] * y[i];
            }
        }
        let mut x = vec![0.0f64; n];
        for i in 0..n {
            x[self.perm[i] as usize] = y[i];
        }
        x
    }
}

/// Solves A x = b for symmetric positive definite A to a relative residual
/// of `tol`.  `guess` warm-starts the iteration when shapes match.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64, guess: Option<&[f64]>) -> Result<Vec<f64>> {
    if b.len() != a.n() {
        return Err(Error::Assembly(format!(
            "right-hand side has {} entries for a {}-equation system",
            b.len(),
            a.n()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("solver tolerance must be positive, got {tol}")));
    }
    match pcg(a, b, tol, guess)? {
        CgOutcome::Converged(x) => Ok(x),
        CgOutcome::Indefinite => Err(Error::Assembly(
            "conjugate gradients found a direction of non-positive curvature".into(),
        )),
        CgOutcome::CapExceeded => Err(Error::ConvergenceFailure(format!(
            "conjugate gradients did not reach tolerance {tol} within {} iterations",
            20 * a.n()
        ))),
        CgOutcome::Stagnated => {
            let chol = Cholesky::factor(a)?;
            let x = chol.solve(b);
            // The factorization is exact up to roundoff; verify the residual
            // rather than trusting it blindly.
            let mut r = a.mul_vec_alloc(&x);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let rel = norm(&r) / norm(b);
            if rel > tol.max(1e-10) * 100.0 {
                return Err(Error::ConvergenceFailure(format!(
                    "direct fallback left relative residual {rel:.3e}"
                )));
            }
            Ok(x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// 1D Laplacian plus identity; SPD and well conditioned.
    fn laplacian_plus_identity(n: usize) -> CsrMatrix {
        let mut t: Vec<(u32, u32, f64)> = Vec::new();
        for i in 0..n {
            t.push((i as u32, i as u32, 3.0));
            if i + 1 < n {
                t.push((i as u32, i as u32 + 1, -1.0));
                t.push((i as u32 + 1, i as u32, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &mut t)
    }

    #[test]
    fn triplets_sum_duplicates_and_sort_columns() {
        let mut t = vec![
            (1u32, 2u32, 1.0),
            (0, 0, 2.0),
            (1, 0, 4.0),
            (1, 2, 0.5),
            (2, 2, 1.0),
            (0, 0, 3.0),
        ];
        let a = CsrMatrix::from_triplets(3, &mut t);
        assert_eq!(a.row(0), (&[0u32][..], &[5.0][..]));
        assert_eq!(a.row(1), (&[0u32, 2][..], &[4.0, 1.5][..]));
        assert_eq!(a.row(2), (&[2u32][..], &[1.0][..]));
        assert_eq!(a.nnz(), 4);
    }

    #[test]
    fn empty_rows_are_handled() {
        let mut t = vec![(3u32, 3u32, 1.0), (0, 0, 1.0)];
        let a = CsrMatrix::from_triplets(5, &mut t);
        assert_eq!(a.row(1).0.len(), 0);
        assert_eq!(a.row(4).0.len(), 0);
        let y = a.mul_vec_alloc(&[1.0, 1.0, 1.0, 2.0, 1.0]);
        assert_eq!(y, vec![1.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let n = 200;
        let a = laplacian_plus_identity(n);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let want: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.mul_vec_alloc(&want);
        let got = solve_spd(&a, &b, 1e-12, None).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = laplacian_plus_identity(10);
        let x = solve_spd(&a, &vec![0.0; 10], 1e-10, None).unwrap();
        assert_eq!(x, vec![0.0; 10]);
    }

    #[test]
    fn warm_start_converges_immediately_at_solution() {
        let a = laplacian_plus_identity(50);
        let want: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let b = a.mul_vec_alloc(&want);
        let x = solve_spd(&a, &b, 1e-10, Some(&want)).unwrap();
        for (g, w) in x.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let mut t = vec![(0u32, 0u32, 1.0), (1, 1, -1.0)];
        let a = CsrMatrix::from_triplets(2, &mut t);
        let err = solve_spd(&a, &[1.0, 1.0], 1e-10, None).unwrap_err();
        assert!(matches!(err, Error::Assembly(_)));
    }

    #[test]
    fn cholesky_fallback_matches_cg_on_spd_system() {
        let n = 120;
        let a = laplacian_plus_identity(n);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let chol = Cholesky::factor(&a).unwrap();
        let x = chol.solve(&b);
        let r = a.mul_vec_alloc(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_handles_random_spd_patterns() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let n = 30 + trial;
            // Random sparse symmetric pattern, made diagonally dominant.
            let mut t: Vec<(u32, u32, f64)> = Vec::new();
            let mut rowsum = vec![0.0f64; n];
            for i in 0..n {
                for _ in 0..3 {
                    let j = rng.gen_range(0..n);
                    if j == i {
                        continue;
                    }
                    let v = rng.gen_range(-1.0..1.0);
                    t.push((i as u32, j as u32, v));
                    t.push((j as u32, i as u32, v));
                    rowsum[i] += v.abs();
                    rowsum[j] += v.abs();
                }
            }
            for i in 0..n {
                t.push((i as u32, i as u32, rowsum[i] + 1.0));
            }
            let a = CsrMatrix::from_triplets(n, &mut t);
            assert_eq!(a.asymmetry(), 0.0);
            let want: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = a.mul_vec_alloc(&want);
            let chol = Cholesky::factor(&a).unwrap();
            let x = chol.solve(&b);
            for (g, w) in x.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8, "trial {trial}");
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut t = vec![(0u32, 0u32, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)];
        let a = CsrMatrix::from_triplets(2, &mut t);
        assert!(Cholesky::factor(&a).is_err());
    }

    #[test]
    fn rcm_orders_every_node_once() {
        let a = laplacian_plus_identity(37);
        let mut p = rcm_order(&a);
        p.sort_unstable();
        assert_eq!(p, (0..37u32).collect::<Vec<_>>());
    }
}
