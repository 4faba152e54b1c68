//! Compressed sparse row matrices and pattern-based finite element assembly.
//!
//! Assembly scatters element contributions in ascending element order, so
//! every stored entry is a sum taken in a fixed order and results are
//! reproducible bit for bit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fespace::{FunctionSpace, CONSTRAINED};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<CsrMatrix> {
        if indptr.len() != nrows + 1 || indptr[0] != 0 {
            return Err(Error::Format("row pointer has wrong length".into()));
        }
        if indices.len() != values.len() || *indptr.last().unwrap() != indices.len() {
            return Err(Error::Format("index and value arrays disagree".into()));
        }
        for r in 0..nrows {
            let row = &indices[indptr[r]..indptr[r + 1]];
            if indptr[r] > indptr[r + 1]
                || row.windows(2).any(|w| w[0] >= w[1])
                || row.iter().any(|&c| c >= ncols)
            {
                return Err(Error::Format(format!("row {r} is not sorted or out of range")));
            }
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> CsrMatrix {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> CsrMatrix {
        CsrMatrix::diagonal_matrix(&vec![1.0; n])
    }

    pub fn diagonal_matrix(diag: &[f64]) -> CsrMatrix {
        let n = diag.len();
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Sums duplicate entries in input order and drops exact zeros.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    indices.push(j);
                    values.push(sum);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                t.push((i, j, a[(i, j)]));
            }
        }
        CsrMatrix::from_triplets(a.nrows(), a.ncols(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            *yi = s;
        }
    }

    /// `y += alpha A x`
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            *yi += alpha * s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// `y += alpha Aᵀ x`
    pub fn transpose_matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            let s = alpha * xi;
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * s;
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut count = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            count[c + 1] += 1;
        }
        for j in 0..self.ncols {
            count[j + 1] += count[j];
        }
        let indptr = count.clone();
        let mut next = count;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let p = next[*c];
                indices[p] = i;
                values[p] = *v;
                next[*c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= alpha);
        m.prune();
        m
    }

    /// `Σ αₖ Aₖ` over matrices of equal shape; exact zeros are dropped.
    pub fn lincomb(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        assert!(!terms.is_empty());
        let (nrows, ncols) = (terms[0].1.nrows, terms[0].1.ncols);
        for (_, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "shape mismatch in lincomb");
        }
        let mut acc = vec![0.0; ncols];
        let mut mark = vec![usize::MAX; ncols];
        let mut cols = Vec::new();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..nrows {
            cols.clear();
            for (alpha, m) in terms {
                let (c, v) = m.row(i);
                for (&j, &x) in c.iter().zip(v) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += alpha * x;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                if acc[j] != 0.0 {
                    indices.push(j);
                    values.push(acc[j]);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Assembles a block matrix; `None` blocks are zero. Block row heights
    /// and column widths are taken from the present blocks.
    pub fn block(blocks: &[Vec<Option<&CsrMatrix>>]) -> Result<CsrMatrix> {
        let nbr = blocks.len();
        let nbc = blocks.first().map_or(0, |r| r.len());
        let mut heights = vec![None; nbr];
        let mut widths = vec![None; nbc];
        for (bi, row) in blocks.iter().enumerate() {
            if row.len() != nbc {
                return Err(Error::mismatch("block columns", nbc, row.len()));
            }
            for (bj, b) in row.iter().enumerate() {
                if let Some(m) = b {
                    for (slot, val, what) in [
                        (&mut heights[bi], m.nrows, "block row height"),
                        (&mut widths[bj], m.ncols, "block column width"),
                    ] {
                        match *slot {
                            Some(s) if s != val => return Err(Error::mismatch(what, s, val)),
                            _ => *slot = Some(val),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights
            .into_iter()
            .map(|h| h.ok_or_else(|| Error::Format("empty block row".into())))
            .collect::<Result<_>>()?;
        let widths: Vec<usize> = widths
            .into_iter()
            .map(|w| w.ok_or_else(|| Error::Format("empty block column".into())))
            .collect::<Result<_>>()?;
        let offsets: Vec<usize> = widths
            .iter()
            .scan(0, |s, w| {
                let o = *s;
                *s += w;
                Some(o)
            })
            .collect();
        let ncols = widths.iter().sum();
        let nrows = heights.iter().sum();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (bi, row) in blocks.iter().enumerate() {
            for i in 0..heights[bi] {
                for (bj, b) in row.iter().enumerate() {
                    if let Some(m) = b {
                        let (c, v) = m.row(i);
                        indices.extend(c.iter().map(|j| j + offsets[bj]));
                        values.extend_from_slice(v);
                    }
                }
                indptr.push(indices.len());
            }
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Rows `rows` and columns `cols` (both strictly increasing).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            map[c] = k;
        }
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for &r in rows {
            let (c, v) = self.row(r);
            for (&j, &x) in c.iter().zip(v) {
                if map[j] != usize::MAX {
                    indices.push(map[j]);
                    values.push(x);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: rows.len(),
            ncols: cols.len(),
            indptr,
            indices,
            values,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Removes explicitly stored zeros.
    pub fn prune(&mut self) {
        let mut w = 0;
        let mut start = 0;
        for i in 0..self.nrows {
            let end = self.indptr[i + 1];
            for k in start..end {
                if self.values[k] != 0.0 {
                    self.indices[w] = self.indices[k];
                    self.values[w] = self.values[k];
                    w += 1;
                }
            }
            start = end;
            self.indptr[i + 1] = w;
        }
        self.indices.truncate(w);
        self.values.truncate(w);
    }

    /// Bitwise symmetry of structure and values.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && *self == self.transpose()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                d[(i, j)] += x;
            }
        }
        d
    }

    pub fn to_faer(&self) -> faer::sparse::SparseColMat<usize, f64> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                t.push(faer::sparse::Triplet::new(i, j, x));
            }
        }
        faer::sparse::SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .expect("valid triplets")
    }
}

/// Global indices of the local unknowns of every element. Entries equal to
/// [`CONSTRAINED`] are skipped during assembly.
#[derive(Debug, Clone)]
pub struct ElementLayout {
    n_loc: usize,
    dim: usize,
    dofs: Vec<usize>,
}

impl ElementLayout {
    /// `components` copies of `space`, component-major: local index
    /// `c·n_loc + a` maps to global `c·dof_count + dof`.
    pub fn new(space: &FunctionSpace, components: usize) -> ElementLayout {
        let nl = space.local_count();
        let n = space.dof_count();
        let ne = space.mesh().num_elements();
        let mut dofs = Vec::with_capacity(ne * nl * components);
        for e in 0..ne {
            let ed = space.element_dofs(e);
            for c in 0..components {
                dofs.extend(ed.iter().map(|&d| if d == CONSTRAINED { CONSTRAINED } else { c * n + d }));
            }
        }
        ElementLayout {
            n_loc: nl * components,
            dim: n * components,
            dofs,
        }
    }

    /// Concatenation of layouts over the same elements; part `k` is offset by
    /// the dimensions of parts `0..k`.
    pub fn concat(parts: &[&ElementLayout]) -> ElementLayout {
        let ne = parts.first().map_or(0, |p| p.num_elements());
        assert!(parts.iter().all(|p| p.num_elements() == ne));
        let n_loc = parts.iter().map(|p| p.n_loc).sum();
        let mut dofs = Vec::with_capacity(ne * n_loc);
        for e in 0..ne {
            let mut offset = 0;
            for p in parts {
                dofs.extend(
                    p.element(e)
                        .iter()
                        .map(|&d| if d == CONSTRAINED { CONSTRAINED } else { d + offset }),
                );
                offset += p.dim;
            }
        }
        ElementLayout {
            n_loc,
            dim: parts.iter().map(|p| p.dim).sum(),
            dofs,
        }
    }

    pub fn local_len(&self) -> usize {
        self.n_loc
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.dofs.len() / self.n_loc.max(1)
    }

    #[inline]
    pub fn element(&self, e: usize) -> &[usize] {
        &self.dofs[e * self.n_loc..(e + 1) * self.n_loc]
    }

    /// Assembles a global vector from element vectors, in ascending element order.
    pub fn assemble_vector(&self, mut kernel: impl FnMut(usize, &mut [f64])) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.assemble_vector_into(self.num_elements(), |k| k, &mut kernel, &mut out);
        out
    }

    /// Like [`Self::assemble_vector`], over the element subset `elements`.
    pub fn assemble_vector_on(
        &self,
        elements: &[usize],
        mut kernel: impl FnMut(usize, &mut [f64]),
        out: &mut [f64],
    ) {
        self.assemble_vector_into(elements.len(), |k| elements[k], &mut kernel, out);
    }

    fn assemble_vector_into(
        &self,
        count: usize,
        elem: impl Fn(usize) -> usize,
        kernel: &mut impl FnMut(usize, &mut [f64]),
        out: &mut [f64],
    ) {
        let mut local = vec![0.0; self.n_loc];
        for k in 0..count {
            let e = elem(k);
            local.iter_mut().for_each(|v| *v = 0.0);
            kernel(e, &mut local);
            for (&d, &v) in self.element(e).iter().zip(&local) {
                if d != CONSTRAINED {
                    out[d] += v;
                }
            }
        }
    }
}

/// Sparsity pattern of an operator between two element layouts, with the
/// scatter position of every local entry.
#[derive(Debug, Clone)]
pub struct AssemblyPattern {
    nrows: usize,
    ncols: usize,
    rn: usize,
    cn: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    scatter: Vec<usize>,
}

impl AssemblyPattern {
    pub fn new(rows: &ElementLayout, cols: &ElementLayout) -> AssemblyPattern {
        assert_eq!(rows.num_elements(), cols.num_elements());
        let ne = rows.num_elements();
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); rows.dim];
        for e in 0..ne {
            for &i in rows.element(e) {
                if i == CONSTRAINED {
                    continue;
                }
                row_cols[i].extend(cols.element(e).iter().copied().filter(|&j| j != CONSTRAINED));
            }
        }
        let mut indptr = Vec::with_capacity(rows.dim + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for rc in &mut row_cols {
            rc.sort_unstable();
            rc.dedup();
            indices.extend_from_slice(rc);
            indptr.push(indices.len());
        }
        let (rn, cn) = (rows.n_loc, cols.n_loc);
        let mut scatter = Vec::with_capacity(ne * rn * cn);
        for e in 0..ne {
            for &i in rows.element(e) {
                for &j in cols.element(e) {
                    if i == CONSTRAINED || j == CONSTRAINED {
                        scatter.push(usize::MAX);
                    } else {
                        let row = &indices[indptr[i]..indptr[i + 1]];
                        scatter.push(indptr[i] + row.binary_search(&j).unwrap());
                    }
                }
            }
        }
        AssemblyPattern {
            nrows: rows.dim,
            ncols: cols.dim,
            rn,
            cn,
            indptr,
            indices,
            scatter,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Assembles from row-major `rn × cn` element matrices and drops exact zeros.
    pub fn assemble(&self, mut kernel: impl FnMut(usize, &mut [f64])) -> CsrMatrix {
        let mut values = vec![0.0; self.indices.len()];
        let block = self.rn * self.cn;
        let ne = if block == 0 { 0 } else { self.scatter.len() / block };
        let mut local = vec![0.0; block];
        for e in 0..ne {
            local.iter_mut().for_each(|v| *v = 0.0);
            kernel(e, &mut local);
            for (&p, &v) in self.scatter[e * block..(e + 1) * block].iter().zip(&local) {
                if p != usize::MAX {
                    values[p] += v;
                }
            }
        }
        let mut m = CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values,
        };
        m.prune();
        m
    }
}
