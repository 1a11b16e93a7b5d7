//! Sparse symmetric positive definite solves.
//!
//! Matrices are stored as the upper triangle in compressed-column form. The
//! pattern is fixed at construction so that a solver can assemble new values
//! and refactor without repeating the symbolic analysis. The factorization is
//! an up-looking `LDLᵀ` on a reverse Cuthill–McKee permutation.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{PgoError, Result};

const NONE: usize = usize::MAX;

/// Symmetric matrix holding its upper triangle (row ≤ column) in CSC layout.
#[derive(Debug, Clone)]
pub struct SparseSymmetric {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds a zero-valued matrix whose pattern is the symmetric closure of `entries`
    /// plus the full diagonal.
    pub fn with_pattern(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut columns: Vec<Vec<usize>> = (0..n).map(|c| vec![c]).collect();
        for (r, c) in entries {
            assert!(r < n && c < n, "pattern entry ({r}, {c}) outside {n}x{n}");
            let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
            columns[hi].push(lo);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut col in columns {
            col.sort_unstable();
            col.dedup();
            row_idx.extend(col);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        SparseSymmetric {
            n,
            col_ptr,
            row_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored (upper-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn clear_values(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
        let rows = &self.row_idx[self.col_ptr[hi]..self.col_ptr[hi + 1]];
        match rows.binary_search(&lo) {
            Ok(k) => self.col_ptr[hi] + k,
            Err(_) => panic!("entry ({r}, {c}) is not in the sparsity pattern"),
        }
    }

    /// Adds `v` to entry `(r, c)` (and implicitly `(c, r)`).
    ///
    /// Off-diagonal contributions must be added once per symmetric pair.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let k = self.slot(r, c);
        self.values[k] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
        let rows = &self.row_idx[self.col_ptr[hi]..self.col_ptr[hi + 1]];
        rows.binary_search(&lo)
            .map(|k| self.values[self.col_ptr[hi] + k])
            .unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                m[(r, c)] = self.values[k];
                m[(c, r)] = self.values[k];
            }
        }
        m
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for c in 0..self.n {
            for &r in &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]] {
                if r != c {
                    adj[r].push(c);
                    adj[c].push(r);
                }
            }
        }
        adj
    }
}

/// Reverse Cuthill–McKee ordering; `perm[new] = old`.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, &degree, seed);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            next.dedup();
            for u in next {
                if !visited[u] {
                    visited[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut start = seed;
    let mut eccentricity = 0;
    for _ in 0..4 {
        let levels = bfs_levels(adj, start);
        let max_level = levels.iter().filter(|&&l| l != NONE).copied().max().unwrap_or(0);
        if max_level <= eccentricity && eccentricity > 0 {
            break;
        }
        eccentricity = max_level;
        start = (0..adj.len())
            .filter(|&v| levels[v] == max_level)
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(start);
    }
    start
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut level = vec![NONE; adj.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if level[u] == NONE {
                level[u] = level[v] + 1;
                queue.push_back(u);
            }
        }
    }
    level
}

/// Symbolic analysis: ordering, elimination tree and column structure of `L`.
#[derive(Debug, Clone)]
struct Symbolic {
    perm: Vec<usize>,
    pinv: Vec<usize>,
    /// Upper triangle of `P A Pᵀ`: for each permuted column, the permuted rows
    /// and the index of the value in the original matrix.
    pcol_ptr: Vec<usize>,
    prow: Vec<usize>,
    psrc: Vec<usize>,
    parent: Vec<usize>,
    lcol_ptr: Vec<usize>,
}

impl Symbolic {
    fn analyze(a: &SparseSymmetric) -> Self {
        let n = a.n;
        let perm = reverse_cuthill_mckee(&a.adjacency());
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }

        let mut columns: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for c in 0..n {
            for k in a.col_ptr[c]..a.col_ptr[c + 1] {
                let (pr, pc) = (pinv[a.row_idx[k]], pinv[c]);
                let (lo, hi) = if pr <= pc { (pr, pc) } else { (pc, pr) };
                columns[hi].push((lo, k));
            }
        }
        let mut pcol_ptr = vec![0];
        let mut prow = Vec::with_capacity(a.nnz());
        let mut psrc = Vec::with_capacity(a.nnz());
        for mut col in columns {
            col.sort_unstable();
            for (r, src) in col {
                prow.push(r);
                psrc.push(src);
            }
            pcol_ptr.push(prow.len());
        }

        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut counts = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &r in &prow[pcol_ptr[k]..pcol_ptr[k + 1]] {
                let mut i = r;
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    counts[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lcol_ptr = Vec::with_capacity(n + 1);
        lcol_ptr.push(0);
        for c in counts {
            lcol_ptr.push(lcol_ptr.last().unwrap() + c);
        }
        Symbolic {
            perm,
            pinv,
            pcol_ptr,
            prow,
            psrc,
            parent,
            lcol_ptr,
        }
    }
}

/// `LDLᵀ` factorization of a [`SparseSymmetric`] matrix with a reusable symbolic phase.
#[derive(Debug, Clone)]
pub struct SparseLdl {
    symbolic: Symbolic,
    l_rows: Vec<usize>,
    l_values: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseLdl {
    /// Analyzes and factors `a`, failing if it is not numerically positive definite.
    pub fn new(a: &SparseSymmetric) -> Result<Self> {
        let symbolic = Symbolic::analyze(a);
        let lnz = *symbolic.lcol_ptr.last().unwrap();
        let mut ldl = SparseLdl {
            symbolic,
            l_rows: vec![0; lnz],
            l_values: vec![0.0; lnz],
            diag: vec![0.0; a.n],
        };
        ldl.refactor(a)?;
        Ok(ldl)
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Nonzeros in the strictly lower factor.
    pub fn factor_nnz(&self) -> usize {
        self.l_values.len()
    }

    /// Numeric refactorization of a matrix with the same pattern as the analyzed one.
    pub fn refactor(&mut self, a: &SparseSymmetric) -> Result<()> {
        let sym = &self.symbolic;
        let n = self.diag.len();
        assert_eq!(a.n, n, "matrix dimension changed between factorizations");
        assert_eq!(a.nnz(), sym.psrc.len(), "matrix pattern changed between factorizations");

        let mut y = vec![0.0; n];
        let mut flag = vec![NONE; n];
        let mut pattern = vec![0usize; n];
        let mut lnz = vec![0usize; n];
        let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let pivot_floor = scale * f64::EPSILON * n as f64;

        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in sym.pcol_ptr[k]..sym.pcol_ptr[k + 1] {
                let mut i = sym.prow[p];
                y[i] += a.values[sym.psrc[p]];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = sym.parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            let mut d = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = sym.lcol_ptr[i];
                let end = start + lnz[i];
                for p in start..end {
                    y[self.l_rows[p]] -= self.l_values[p] * yi;
                }
                let l_ki = yi / self.diag[i];
                d -= l_ki * yi;
                self.l_rows[end] = k;
                self.l_values[end] = l_ki;
                lnz[i] += 1;
            }
            if !(d > pivot_floor) {
                return Err(PgoError::Conditioning(format!(
                    "non-positive pivot {d:e} at column {} of {n}",
                    sym.perm[k]
                )));
            }
            self.diag[k] = d;
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let sym = &self.symbolic;
        let n = self.diag.len();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = sym.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in sym.lcol_ptr[j]..sym.lcol_ptr[j + 1] {
                x[self.l_rows[p]] -= self.l_values[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.diag[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in sym.lcol_ptr[j]..sym.lcol_ptr[j + 1] {
                xj -= self.l_values[p] * x[self.l_rows[p]];
            }
            x[j] = xj;
        }
        for (new, v) in x.into_iter().enumerate() {
            b[sym.perm[new]] = v;
        }
        debug_assert!(sym.pinv.len() == n);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Factorization used by the solvers: sparse `LDLᵀ`, with a dense QR fallback
/// when the sparse factorization reports a non-positive pivot.
#[derive(Debug, Clone)]
pub enum SpdSolver {
    Sparse(SparseLdl),
    DenseQr(nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// Largest dimension for which the dense fallback is attempted.
const DENSE_FALLBACK_LIMIT: usize = 4000;

impl SpdSolver {
    pub fn new(a: &SparseSymmetric) -> Result<Self> {
        match SparseLdl::new(a) {
            Ok(ldl) => Ok(SpdSolver::Sparse(ldl)),
            Err(e) => Self::dense_fallback(a, e),
        }
    }

    fn dense_fallback(a: &SparseSymmetric, cause: PgoError) -> Result<Self> {
        if a.n > DENSE_FALLBACK_LIMIT {
            return Err(cause);
        }
        log::warn!("sparse LDLᵀ failed ({cause}); falling back to dense QR");
        let qr = a.to_dense().qr();
        let r_diag = qr.r().diagonal();
        let max = r_diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = r_diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(min > max * 1e-13) {
            return Err(PgoError::Conditioning(format!(
                "normal matrix is numerically singular (|r_min|/|r_max| = {:e})",
                min / max
            )));
        }
        Ok(SpdSolver::DenseQr(qr))
    }

    /// Refactors with new values on the same pattern.
    pub fn refactor(&mut self, a: &SparseSymmetric) -> Result<()> {
        if let SpdSolver::Sparse(ldl) = self {
            match ldl.refactor(a) {
                Ok(()) => return Ok(()),
                Err(e) => {
                    *self = Self::dense_fallback(a, e)?;
                    return Ok(());
                }
            }
        }
        *self = Self::new(a)?;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            SpdSolver::Sparse(ldl) => ldl.solve_in_place(b),
            SpdSolver::DenseQr(qr) => {
                let mut rhs = nalgebra::DVector::from_column_slice(b);
                qr.solve_mut(&mut rhs);
                b.copy_from_slice(rhs.as_slice());
            }
        }
    }
}
