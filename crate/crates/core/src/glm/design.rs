use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::terms::Term;

/// Sparse row-major design with per-row offset and weight.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    names: Vec<String>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    offset: Vec<f64>,
    weight: Vec<f64>,
}

impl DesignMatrix {
    /// Build from sparse rows of `(column, value)` pairs.
    pub fn new(
        names: Vec<String>,
        rows: Vec<Vec<(usize, f64)>>,
        offset: Option<Vec<f64>>,
        weight: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for (j, v) in row {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self::from_parts(
            names,
            indptr,
            indices,
            values,
            offset.unwrap_or_else(|| vec![0.0; n]),
            weight.unwrap_or_else(|| vec![1.0; n]),
        )
    }

    /// Build from dense rows.
    pub fn from_dense(
        names: Vec<String>,
        rows: &[Vec<f64>],
        offset: Option<Vec<f64>>,
        weight: Option<Vec<f64>>,
    ) -> Result<Self> {
        let sparse = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        Self::new(names, sparse, offset, weight)
    }

    fn from_parts(
        names: Vec<String>,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
        offset: Vec<f64>,
        weight: Vec<f64>,
    ) -> Result<Self> {
        let n = indptr.len() - 1;
        if offset.len() != n || weight.len() != n {
            return Err(Error::invalid("offset and weight lengths must match the row count"));
        }
        if let Some(&j) = indices.iter().find(|&&j| j >= names.len()) {
            return Err(Error::invalid(format!("column index {j} out of range")));
        }
        if values.iter().chain(&offset).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design entries and offsets must be finite".into()));
        }
        if weight.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        Ok(Self {
            names,
            indptr,
            indices,
            values,
            offset,
            weight,
        })
    }

    pub fn nrows(&self) -> usize {
        self.offset.len()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    #[inline]
    pub fn offset(&self, i: usize) -> f64 {
        self.offset[i]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weight[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    /// Linear predictor including offsets.
    pub fn eta(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| {
                let (idx, val) = self.row(i);
                self.offset[i] + idx.iter().zip(val).map(|(&j, &v)| beta[j] * v).sum::<f64>()
            })
            .collect()
    }

    /// `X' v`.
    pub fn xt_vec(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols());
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let (idx, val) = self.row(i);
            for (&j, &x) in idx.iter().zip(val) {
                out[j] += x * vi;
            }
        }
        out
    }

    /// `X' diag(w) X`.
    pub fn gram(&self, w: &[f64]) -> DMatrix<f64> {
        let p = self.ncols();
        let mut out = DMatrix::zeros(p, p);
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let (idx, val) = self.row(i);
            for (a, (&j, &xj)) in idx.iter().zip(val).enumerate() {
                let s = wi * xj;
                for (&k, &xk) in idx[..=a].iter().zip(&val[..=a]) {
                    out[(j.max(k), j.min(k))] += s * xk;
                }
            }
        }
        out.fill_upper_triangle_with_lower_triangle();
        out
    }

    /// Keep the selected rows and columns; returns the reduced design.
    pub fn restrict(&self, keep_rows: &[bool], keep_cols: &[bool]) -> DesignMatrix {
        let mut map = vec![usize::MAX; self.ncols()];
        let mut names = Vec::new();
        for (j, &k) in keep_cols.iter().enumerate() {
            if k {
                map[j] = names.len();
                names.push(self.names[j].clone());
            }
        }
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut offset = Vec::new();
        let mut weight = Vec::new();
        for i in 0..self.nrows() {
            if !keep_rows[i] {
                continue;
            }
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                if map[j] != usize::MAX {
                    indices.push(map[j]);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
            offset.push(self.offset[i]);
            weight.push(self.weight[i]);
        }
        DesignMatrix {
            names,
            indptr,
            indices,
            values,
            offset,
            weight,
        }
    }
}

/// Incremental builder for indicator designs keyed by [`Term`].
///
/// Columns are created for every term that appears in a row with positive
/// weight and are ordered by term.
#[derive(Debug, Default)]
pub struct TermDesignBuilder {
    lookup: HashMap<Term, usize>,
    terms: Vec<Term>,
    supported: Vec<bool>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    offset: Vec<f64>,
    weight: Vec<f64>,
}

impl TermDesignBuilder {
    pub fn new() -> Self {
        Self {
            indptr: vec![0],
            ..Default::default()
        }
    }

    pub fn push(&mut self, terms: &[Term], offset: f64, weight: f64) {
        for t in terms {
            let next = self.terms.len();
            let j = *self.lookup.entry(*t).or_insert(next);
            if j == next {
                self.terms.push(*t);
                self.supported.push(false);
            }
            if weight > 0.0 {
                self.supported[j] = true;
            }
            self.indices.push(j);
        }
        self.indptr.push(self.indices.len());
        self.offset.push(offset);
        self.weight.push(weight);
    }

    pub fn nrows(&self) -> usize {
        self.offset.len()
    }

    pub fn finish(self) -> Result<(DesignMatrix, Vec<Term>)> {
        let mut order: Vec<usize> = (0..self.terms.len()).filter(|&j| self.supported[j]).collect();
        order.sort_by_key(|&j| self.terms[j]);
        let mut map = vec![usize::MAX; self.terms.len()];
        for (new, &old) in order.iter().enumerate() {
            map[old] = new;
        }
        let terms: Vec<Term> = order.iter().map(|&j| self.terms[j]).collect();
        let mut indptr = Vec::with_capacity(self.indptr.len());
        let mut indices = Vec::with_capacity(self.indices.len());
        indptr.push(0);
        for i in 0..self.offset.len() {
            let mut row: Vec<usize> = self.indices[self.indptr[i]..self.indptr[i + 1]]
                .iter()
                .map(|&j| map[j])
                .filter(|&j| j != usize::MAX)
                .collect();
            row.sort_unstable();
            row.dedup();
            indices.extend(row);
            indptr.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        let names = terms.iter().map(|t| t.to_string()).collect();
        let m = DesignMatrix::from_parts(names, indptr, indices, values, self.offset, self.weight)?;
        Ok((m, terms))
    }
}
