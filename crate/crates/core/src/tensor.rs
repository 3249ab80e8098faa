//! Dense order-K arrays stored row-major (last index fastest).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Result of contracting a tensor with one vector per mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Contraction {
    Scalar(f64),
    /// Every mode contracted except the skipped one.
    Vector(DVector<f64>),
}

impl Contraction {
    pub fn scalar(self) -> Option<f64> {
        match self {
            Contraction::Scalar(s) => Some(s),
            Contraction::Vector(_) => None,
        }
    }

    pub fn vector(self) -> Option<DVector<f64>> {
        match self {
            Contraction::Vector(v) => Some(v),
            Contraction::Scalar(_) => None,
        }
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Advances a row-major multi-index; returns false after the last position.
fn advance(index: &mut [usize], dims: &[usize]) -> bool {
    for k in (0..dims.len()).rev() {
        index[k] += 1;
        if index[k] < dims[k] {
            return true;
        }
        index[k] = 0;
    }
    false
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid tensor dims {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor { dims, data: vec![0.0; len] }
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0; dims.len()];
        loop {
            data.push(f(&idx));
            if !advance(&mut idx, &dims) {
                break;
            }
        }
        Tensor { dims, data }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Tensor { dims: vec![m.nrows(), m.ncols()], data }
    }

    /// Row-major reshape of an order-2 tensor.
    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        (self.dims.len() == 2).then(|| DMatrix::from_row_slice(self.dims[0], self.dims[1], &self.data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let s = strides(&self.dims);
        self.data[index.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.dims, other.dims);
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn inner(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Contracts mode `j` with `vectors[j]` for every `j` except `skip`.
    ///
    /// With no skip this is the scalar `X ×₁u₁ ⋯ ×_K u_K`; with `skip = k`
    /// it is the `d_k`-vector of contractions over all other modes.
    pub fn contract(&self, vectors: &[&DVector<f64>], skip: Option<usize>) -> Result<Contraction> {
        let k = self.dims.len();
        if vectors.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} vectors for an order-{k} tensor",
                vectors.len()
            )));
        }
        if let Some(s) = skip {
            if s >= k {
                return Err(Error::DimensionMismatch(format!("skip mode {s} out of range")));
            }
        }
        for (j, v) in vectors.iter().enumerate() {
            if Some(j) != skip && v.len() != self.dims[j] {
                return Err(Error::DimensionMismatch(format!(
                    "mode {j} has size {} but vector has length {}",
                    self.dims[j],
                    v.len()
                )));
            }
        }
        let out_len = skip.map_or(1, |s| self.dims[s]);
        let mut out = vec![0.0; out_len];
        let mut idx = vec![0; k];
        for &x in &self.data {
            let mut w = x;
            for j in 0..k {
                if Some(j) != skip {
                    w *= vectors[j][idx[j]];
                }
            }
            out[skip.map_or(0, |s| idx[s])] += w;
            advance(&mut idx, &self.dims);
        }
        Ok(match skip {
            None => Contraction::Scalar(out[0]),
            Some(_) => Contraction::Vector(DVector::from_vec(out)),
        })
    }

    /// Mode-k product `X ×_k M` (`M` has `d_k` columns; mode k becomes `M.nrows()`).
    pub fn mode_product(&self, mode: usize, m: &DMatrix<f64>) -> Result<Tensor> {
        if mode >= self.dims.len() || m.ncols() != self.dims[mode] {
            return Err(Error::DimensionMismatch(format!(
                "mode-{mode} product with a {}x{} matrix on dims {:?}",
                m.nrows(),
                m.ncols(),
                self.dims
            )));
        }
        let mut dims = self.dims.clone();
        dims[mode] = m.nrows();
        let out_strides = strides(&dims);
        let mut out = vec![0.0; dims.iter().product()];
        let mut idx = vec![0; self.dims.len()];
        for &x in &self.data {
            let base: usize = idx
                .iter()
                .zip(&out_strides)
                .enumerate()
                .filter(|(j, _)| *j != mode)
                .map(|(_, (i, s))| i * s)
                .sum();
            let col = idx[mode];
            for r in 0..m.nrows() {
                out[base + r * out_strides[mode]] += m[(r, col)] * x;
            }
            advance(&mut idx, &self.dims);
        }
        Ok(Tensor { dims, data: out })
    }

    /// Mode-k matricization: `d_k × (∏_{j≠k} d_j)`, columns ordered by the
    /// remaining indices in row-major order.
    pub fn unfold(&self, mode: usize) -> DMatrix<f64> {
        let dk = self.dims[mode];
        let cols = self.data.len() / dk;
        let mut out = DMatrix::zeros(dk, cols);
        let rest: Vec<usize> = self
            .dims
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != mode)
            .map(|(_, &d)| d)
            .collect();
        let rest_strides = strides(&rest);
        let mut idx = vec![0; self.dims.len()];
        for &x in &self.data {
            let col: usize = idx
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != mode)
                .zip(&rest_strides)
                .map(|((_, i), s)| i * s)
                .sum();
            out[(idx[mode], col)] = x;
            advance(&mut idx, &self.dims);
        }
        out
    }
}
