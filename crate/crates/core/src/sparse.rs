//! Sparse symmetric storage and a natural-order sparse Cholesky.
//!
//! The factorization deliberately uses the given ordering with no
//! fill-reducing permutation; its cost profile on vertex-coupled meshes is
//! part of what the perf study measures.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix in CSR form storing both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates entries prior to compression; duplicate coordinates add up.
#[derive(Debug, Clone)]
pub struct SparseSymBuilder {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseSymBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            triplets: Vec::new(),
        }
    }

    /// Adds to entry (i, i).
    pub fn add_diag(&mut self, i: usize, v: f64) {
        debug_assert!(i < self.n);
        self.triplets.push((i, i, v));
    }

    /// Adds to entries (i, j) and (j, i), i != j.
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n && i != j);
        self.triplets.push((i, j, v));
        self.triplets.push((j, i, v));
    }

    pub fn build(mut self) -> SparseSym {
        self.triplets
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last = (usize::MAX, usize::MAX);
        for (i, j, v) in self.triplets {
            if (i, j) == last {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                last = (i, j);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        // Rows without entries inherit the previous offset.
        for i in 1..=self.n {
            if row_ptr[i] < row_ptr[i - 1] {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        SparseSym {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseSym {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| (self.col_idx[k], self.values[k]))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .find(|&(j, _)| j == i)
                    .map(|(_, v)| v)
                    .unwrap_or(0.0)
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            out[i] = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        out
    }

    /// x^T A x.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.values[k] * x[self.col_idx[k]];
            }
            s += x[i] * row;
        }
        s
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Lower-triangular Cholesky factor in CSC form, diagonal entry first in
/// every column.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCholesky {
    /// Up-looking factorization A = L L^T in the natural ordering.
    pub fn factor(a: &SparseSym) -> Result<SparseCholesky> {
        let n = a.n;
        let parent = elimination_tree(a);
        // Row patterns are produced twice: once to size the columns, once to
        // fill them.
        let mut col_count = vec![1usize; n];
        {
            let mut stamp = vec![usize::MAX; n];
            let mut stack = vec![0usize; n];
            for k in 0..n {
                let top = ereach(a, k, &parent, &mut stamp, &mut stack);
                for &j in &stack[top..n] {
                    col_count[j] += 1;
                }
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + col_count[j];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0f64; nnz];
        let mut fill: Vec<usize> = col_ptr[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut stamp = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        for k in 0..n {
            let top = ereach(a, k, &parent, &mut stamp, &mut stack);
            let mut d = 0.0;
            for (j, v) in a.row(k) {
                if j < k {
                    x[j] = v;
                } else if j == k {
                    d = v;
                }
            }
            for t in top..n {
                let j = stack[t];
                let ljj = values[col_ptr[j]];
                let lkj = x[j] / ljj;
                x[j] = 0.0;
                for p in (col_ptr[j] + 1)..fill[j] {
                    x[row_idx[p]] -= values[p] * lkj;
                }
                d -= lkj * lkj;
                row_idx[fill[j]] = k;
                values[fill[j]] = lkj;
                fill[j] += 1;
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { index: k, pivot: d });
            }
            row_idx[fill[k]] = k;
            values[fill[k]] = d.sqrt();
            fill[k] += 1;
        }
        Ok(SparseCholesky {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// L x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    out[self.row_idx[p]] += self.values[p] * xj;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                m[(self.row_idx[p], j)] = self.values[p];
            }
        }
        m
    }
}

fn elimination_tree(a: &SparseSym) -> Vec<usize> {
    let n = a.n;
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for (i, _) in a.row(k) {
            if i >= k {
                break;
            }
            let mut j = i;
            while ancestor[j] != usize::MAX && ancestor[j] != k {
                let next = ancestor[j];
                ancestor[j] = k;
                j = next;
            }
            if ancestor[j] == usize::MAX {
                ancestor[j] = k;
                parent[j] = k;
            }
        }
    }
    parent
}

/// Pattern of row k of L (excluding the diagonal) in topological order,
/// returned as `stack[top..n]`.
fn ereach(
    a: &SparseSym,
    k: usize,
    parent: &[usize],
    stamp: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = a.n;
    let mut top = n;
    stamp[k] = k;
    for (i, _) in a.row(k) {
        if i >= k {
            break;
        }
        let mut len = 0;
        let mut j = i;
        while stamp[j] != k {
            stack[len] = j;
            len += 1;
            stamp[j] = k;
            j = parent[j];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}
